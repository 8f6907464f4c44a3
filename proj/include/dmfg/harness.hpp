#ifndef DMFG_HARNESS_HPP
#define DMFG_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dmfg/config.hpp"

namespace dmfg::harness {

inline constexpr char kMetricsHeader[] =
    "run_id,phase,seed,episode,agent_id,algorithm,episode_return,kills,deaths,epsilon,q_loss,mf_loss,wall_ms";

struct MetricsRecord {
  std::string run_id;
  std::string phase;  ///< train | execute
  std::uint64_t seed = 0;
  int episode = 0;
  int agent_id = 0;
  std::string algorithm;
  double episode_return = 0.0;
  int kills = 0;
  int deaths = 0;
  double epsilon = 0.0;
  std::optional<double> q_loss;
  std::optional<double> mf_loss;  ///< sum of per-step estimator MSE
  double wall_ms = 0.0;
};

std::string format_record(const MetricsRecord& r);

/// CSV writer; flushes after every episode's rows.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const MetricsRecord& r);
  void flush();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

/// One-line progress sink (the CLI points it at stderr).
using ProgressFn = std::function<void(const std::string&)>;

struct SeedRun {
  std::string run_id;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  std::vector<std::vector<double>> returns;  ///< [episode][agent]
  std::optional<std::string> error;          ///< set when the seed aborted
  bool numerical_failure = false;            ///< the abort was a divergence
};

struct TrainResult {
  std::vector<SeedRun> runs;
  bool ok() const;
};

/// Self-play training; writes {out}/{name}-s{seed}/metrics.csv, agent
/// checkpoints and manifest.txt per seed.
TrainResult train_selfplay(const RunConfig& config, const std::filesystem::path& out,
                           const ProgressFn& progress = {});

/// A set of frozen agents: a training run directory or a scripted policy
/// ("scripted:<action>" or "scripted:random"). "<dir>@<team>" plays the
/// agents of that team of the run on whichever side the set is given.
struct CheckpointSet {
  std::string label;
  std::filesystem::path dir;
  std::optional<int> scripted_action;  ///< -1 random
  std::optional<int> source_team;
  static CheckpointSet parse(const std::string& spec);
};

struct SetScore {
  std::string label;
  std::string algorithm;
  int games = 0;
  int wins = 0;
  int draws = 0;
  int losses = 0;
  double mean_return = 0.0;  ///< per game, summed over the set's agents
  double win_rate() const;   ///< draws count half
};

struct GameRecord {
  int game = 0;
  std::uint64_t env_seed = 0;
  std::vector<int> slot_set;  ///< checkpoint set index per side or agent slot
  std::optional<int> winner;  ///< checkpoint set index, nullopt on a draw
  std::vector<int> set_kills;
  std::vector<double> set_returns;
};

struct TournamentResult {
  std::vector<SetScore> scores;
  std::vector<GameRecord> games;
  bool weights_unchanged = true;
};

/**
 * Frozen-policy games. Team environments take exactly two sets which swap
 * sides every game; gather takes per_set agents from each set. Writes
 * tournament.csv, games.csv and metrics.csv (phase execute) under `out`
 * when it is non-empty.
 */
TournamentResult tournament(const RunConfig& config, const std::vector<CheckpointSet>& sets,
                            const std::filesystem::path& out, const ProgressFn& progress = {});

struct ProbeResult {
  std::vector<double> mse;  ///< per episode, summed over steps, averaged over probe agents
  std::vector<int> steps;   ///< steps per episode
  int probe_agents = 0;
};

/// Trains the estimator-carrying agents of the config against scripted
/// opponents fixed at probe.opponent_action; uses the first seed.
ProbeResult run_estimator_probe(const RunConfig& config, const std::filesystem::path& out,
                                const ProgressFn& progress = {});

/// Mean of `series` over [begin, end).
double window_mean(const std::vector<double>& series, std::size_t begin, std::size_t end);

/// Reads a metrics file, dropping the wall_ms column.
std::string metrics_without_wall_time(const std::filesystem::path& path);

std::string code_version();

}  // namespace dmfg::harness

#endif  // DMFG_HARNESS_HPP
