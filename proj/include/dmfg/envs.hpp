#ifndef DMFG_ENVS_HPP
#define DMFG_ENVS_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmfg/core.hpp"

namespace dmfg::envs {

enum class Kind { soldier, gatherer, tiger, melee, ranged };
enum class EnvName { battle, gather, tiger_deer, combined_arms };

std::string to_string(Kind k);
std::string to_string(EnvName e);
Kind parse_kind(std::string_view s);
EnvName parse_env_name(std::string_view s);

/**
 * Action layout. Kinds with 9 actions: 0 stay, 1-4 move up/down/left/right,
 * 5-8 attack up/down/left/right. Melee has 5: 0 stay, 1-4 move in that
 * direction, or attack if the adjacent cell holds an enemy.
 */
int action_count(Kind k);
inline constexpr int kMaxActionCount = 9;

struct KindParams {
  int view_radius = 3;
  int attack_radius = 1;
  double max_hp = 10.0;
  int speed = 1;
};

/// Reward table. Every value is added to the agent that triggers the event.
struct Rewards {
  double step = -0.005;
  double attack_penalty = -0.1;  ///< any attack action
  double attack_enemy = 5.0;     ///< hit on an opposing agent
  double kill = 10.0;            ///< the hit that brings an opponent to 0 HP
  double death = -0.1;
  double attack_food = 0.0;
  double capture_food = 0.0;
  double deer_pair = 0.0;   ///< deer hit by this tiger and at least one other
  double deer_solo = 0.0;   ///< deer hit by this tiger alone
};

struct TeamComposition {
  std::vector<std::pair<Kind, int>> members;
  int size() const;
};

struct GridConfig {
  int width = 12;
  int height = 12;
  int max_steps = 500;
  std::vector<TeamComposition> teams;
  /// Indexed by Kind.
  std::array<KindParams, 5> kinds{};
  Rewards rewards;
  double damage = 2.0;
  double recovery = 0.1;
  /// When true every agent is its own side (gather).
  bool free_for_all = false;
  int food_count = 0;
  double food_hp = 5.0;
  int deer_count = 0;
  double deer_hp = 5.0;
  double tiger_drain = 0.021;
  double tiger_feed = 8.0;

  const KindParams& params(Kind k) const { return kinds[static_cast<std::size_t>(k)]; }
  KindParams& params(Kind k) { return kinds[static_cast<std::size_t>(k)]; }
  int agent_count() const;
  /// Collects every violation; empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
};

/// Desk-scale defaults: 12x12, view radius 3, attack radius 1.
GridConfig default_config(EnvName name);

struct AgentSpec {
  int id = 0;
  int team = 0;
  Kind kind = Kind::soldier;
  int action_count = 9;
  int view_radius = 3;
  int attack_radius = 1;
  double max_hp = 10.0;
  int speed = 1;
};

struct AgentState {
  AgentSpec spec;
  int x = 0;
  int y = 0;
  double hp = 0.0;
  bool alive = true;
};

/// Food (gather) or deer (tiger_deer).
struct Resource {
  int x = 0;
  int y = 0;
  double hp = 0.0;
  double max_hp = 0.0;
  bool alive = true;
};

struct State {
  int width = 0;
  int height = 0;
  int tick = 0;
  std::vector<AgentState> agents;
  std::vector<Resource> resources;
};

enum class EventKind {
  step,
  attack,
  hit,
  kill,
  death,
  food_hit,
  food_capture,
  deer_pair,
  deer_solo,
};
std::string to_string(EventKind k);

struct Event {
  int tick = 0;
  int agent = 0;
  EventKind kind = EventKind::step;
};

double event_reward(EventKind k, const Rewards& table);

struct AgentOutcome {
  std::vector<double> observation;  ///< empty once the agent is dead
  double reward = 0.0;
  bool alive = false;
  bool died = false;  ///< died during this step
  /// One-hot mean of visible others' actions, width kMaxActionCount for
  /// combined_arms and the agent's action count otherwise. nullopt when no
  /// other agent is visible.
  std::optional<Distribution> observed_mean;
  int kills = 0;
};

struct StepOutcome {
  std::vector<AgentOutcome> agents;
  bool done = false;
  std::vector<int> team_kills;  ///< kills credited to each team this step
};

/**
 * Observation layout: a (2r+1)^2 window centred on the agent, row-major by
 * (dy, dx), five channels per cell (ally, other agent, food or deer, HP
 * fraction, wall), then own HP fraction, x / (width-1), y / (height-1).
 * Cells outside the circle dx^2 + dy^2 <= r^2 stay zero.
 */
int observation_size(int view_radius);
std::vector<double> observe(const State& state, int agent);
bool visible(const AgentState& viewer, int x, int y);

/// Width of the mean-field vectors an environment emits.
int mean_field_width(const GridConfig& config);

/// Observed local mean action for `agent` given everyone's actions this tick
/// (entries for agents that did not act are ignored; use -1).
std::optional<Distribution> observed_mean(const State& state, int agent,
                                          std::span<const int> actions, int width);

class Env {
 public:
  Env(EnvName name, GridConfig config, std::uint64_t seed);

  EnvName name() const { return name_; }
  const GridConfig& config() const { return config_; }
  const State& state() const { return state_; }
  const std::vector<AgentSpec>& specs() const { return specs_; }
  int agent_count() const { return static_cast<int>(specs_.size()); }
  int team_count() const;
  int mean_field_width() const { return mf_width_; }
  bool done() const { return done_; }

  std::vector<double> observation(int agent) const { return observe(state_, agent); }

  /// One action per agent; entries for dead agents are ignored.
  StepOutcome step(std::span<const int> actions);

  const std::vector<Event>& events() const { return events_; }
  /// Cumulative reward per agent.
  const std::vector<double>& returns() const { return returns_; }
  const std::vector<int>& kills() const { return kills_; }
  std::vector<int> team_kills() const;
  std::vector<double> team_returns() const;

 private:
  void place(Rng& rng);
  int occupant(int x, int y) const;  // agent index or -1
  int resource_at(int x, int y) const;
  bool is_enemy(int a, int b) const;
  void emit(int agent, EventKind kind, std::vector<double>& rewards);

  EnvName name_;
  GridConfig config_;
  std::vector<AgentSpec> specs_;
  State state_;
  Rng rng_;
  int mf_width_ = 0;
  bool done_ = false;
  std::vector<Event> events_;
  std::vector<double> returns_;
  std::vector<int> kills_;
};

Env make_env(EnvName name, const GridConfig& config, std::uint64_t seed);

/// Recomputes each agent's total reward from the event log.
std::vector<double> audit_rewards(const std::vector<Event>& events, const Rewards& table,
                                  int agent_count);

enum class WinMode { team_kills, individual_reward };

struct EpisodeStats {
  std::vector<int> kills;       ///< per side
  std::vector<double> rewards;  ///< per side
};

/// Side with the most kills, ties broken by cumulative reward (team_kills);
/// side with the highest reward (individual_reward). nullopt is a draw.
std::optional<int> winner(const EpisodeStats& stats, WinMode mode);

/**
 * Line-delimited JSON trace. The first line is a header
 * {"format":"dmfg-trace","version":1,"env":...,"width":...,"height":...};
 * each following line is one tick:
 * {"tick":t,"agents":[{"id","team","kind","x","y","hp","alive","action","reward"}],
 *  "resources":[{"x","y","hp","alive"}]}.
 */
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const Env& env);
  void record(const Env& env, std::span<const int> actions, const StepOutcome& outcome);

 private:
  std::ostream& out_;
};

}  // namespace dmfg::envs

#endif  // DMFG_ENVS_HPP
