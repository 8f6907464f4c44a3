#include "dmfg/envs.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <ostream>

namespace dmfg::envs {

namespace {

constexpr std::array<int, 5> kDx = {0, 0, 0, -1, 1};
constexpr std::array<int, 5> kDy = {0, -1, 1, 0, 0};

struct Intent {
  int move_dir = 0;    // 0 none, 1-4
  int attack_dir = 0;  // 0 none, 1-4
};

}  // namespace

std::string to_string(Kind k) {
  switch (k) {
    case Kind::soldier: return "soldier";
    case Kind::gatherer: return "gatherer";
    case Kind::tiger: return "tiger";
    case Kind::melee: return "melee";
    case Kind::ranged: return "ranged";
  }
  return "?";
}

std::string to_string(EnvName e) {
  switch (e) {
    case EnvName::battle: return "battle";
    case EnvName::gather: return "gather";
    case EnvName::tiger_deer: return "tiger_deer";
    case EnvName::combined_arms: return "combined_arms";
  }
  return "?";
}

Kind parse_kind(std::string_view s) {
  for (Kind k : {Kind::soldier, Kind::gatherer, Kind::tiger, Kind::melee, Kind::ranged}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidInput("unknown agent kind '" + std::string(s) + "'");
}

EnvName parse_env_name(std::string_view s) {
  for (EnvName e : {EnvName::battle, EnvName::gather, EnvName::tiger_deer, EnvName::combined_arms}) {
    if (s == to_string(e)) return e;
  }
  throw InvalidInput("unknown environment '" + std::string(s) +
                     "' (valid: battle, gather, tiger_deer, combined_arms)");
}

int action_count(Kind k) { return k == Kind::melee ? 5 : 9; }

std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::step: return "step";
    case EventKind::attack: return "attack";
    case EventKind::hit: return "hit";
    case EventKind::kill: return "kill";
    case EventKind::death: return "death";
    case EventKind::food_hit: return "food_hit";
    case EventKind::food_capture: return "food_capture";
    case EventKind::deer_pair: return "deer_pair";
    case EventKind::deer_solo: return "deer_solo";
  }
  return "?";
}

double event_reward(EventKind k, const Rewards& t) {
  switch (k) {
    case EventKind::step: return t.step;
    case EventKind::attack: return t.attack_penalty;
    case EventKind::hit: return t.attack_enemy;
    case EventKind::kill: return t.kill;
    case EventKind::death: return t.death;
    case EventKind::food_hit: return t.attack_food;
    case EventKind::food_capture: return t.capture_food;
    case EventKind::deer_pair: return t.deer_pair;
    case EventKind::deer_solo: return t.deer_solo;
  }
  return 0.0;
}

int TeamComposition::size() const {
  int n = 0;
  for (const auto& [kind, count] : members) n += count;
  return n;
}

int GridConfig::agent_count() const {
  int n = 0;
  for (const auto& t : teams) n += t.size();
  return n;
}

std::vector<std::string> GridConfig::problems() const {
  std::vector<std::string> out;
  if (width <= 0 || height <= 0) out.push_back("grid width and height must be positive");
  if (max_steps <= 0) out.push_back("max_steps must be positive");
  if (teams.empty()) out.push_back("at least one team is required");
  for (std::size_t t = 0; t < teams.size(); ++t) {
    for (const auto& [kind, count] : teams[t].members) {
      if (count <= 0) out.push_back("team " + std::to_string(t) + " has a non-positive " + to_string(kind) + " count");
    }
  }
  const int extent = std::max(width, height);
  std::vector<Kind> used;
  for (const auto& t : teams) {
    for (const auto& [kind, count] : t.members) {
      if (std::find(used.begin(), used.end(), kind) == used.end()) used.push_back(kind);
    }
  }
  for (Kind k : used) {
    const auto& p = params(k);
    if (p.view_radius < 0 || p.view_radius >= extent) out.push_back(to_string(k) + " view_radius must lie in [0, max(width, height))");
    if (p.attack_radius < 1 || p.attack_radius >= extent) out.push_back(to_string(k) + " attack_radius must lie in [1, max(width, height))");
    if (!(p.max_hp > 0.0)) out.push_back(to_string(k) + " max_hp must be positive");
    if (p.speed < 1) out.push_back(to_string(k) + " speed must be at least 1");
  }
  if (food_count < 0 || deer_count < 0) out.push_back("food_count and deer_count must be non-negative");
  if (width > 0 && height > 0 && agent_count() + food_count + deer_count > width * height) {
    out.push_back("grid too small: " + std::to_string(agent_count() + food_count + deer_count) +
                  " entities on " + std::to_string(width * height) + " cells");
  }
  return out;
}

void GridConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid grid config:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

GridConfig default_config(EnvName name) {
  GridConfig c;
  c.kinds[static_cast<std::size_t>(Kind::ranged)] = {3, 2, 3.0, 2};
  c.kinds[static_cast<std::size_t>(Kind::melee)] = {3, 1, 10.0, 1};
  switch (name) {
    case EnvName::battle:
      c.teams = {{{{Kind::soldier, 5}}}, {{{Kind::soldier, 5}}}};
      break;
    case EnvName::combined_arms:
      c.teams = {{{{Kind::ranged, 3}, {Kind::melee, 2}}}, {{{Kind::ranged, 3}, {Kind::melee, 2}}}};
      break;
    case EnvName::gather:
      c.teams = {{{{Kind::gatherer, 8}}}};
      c.free_for_all = true;
      c.food_count = 12;
      c.damage = 10.0;
      c.rewards.step = -0.01;
      c.rewards.attack_penalty = -2.0;
      c.rewards.death = -20.0;
      c.rewards.attack_food = 20.0;
      c.rewards.capture_food = 60.0;
      break;
    case EnvName::tiger_deer:
      c.teams = {{{{Kind::tiger, 6}}}};
      c.deer_count = 20;
      c.rewards.attack_enemy = 0.0;
      c.rewards.kill = 0.0;
      c.rewards.deer_pair = 1.0;
      c.rewards.deer_solo = 0.2;
      break;
  }
  return c;
}

int observation_size(int view_radius) {
  const int side = 2 * view_radius + 1;
  return side * side * 5 + 3;
}

bool visible(const AgentState& viewer, int x, int y) {
  const int dx = x - viewer.x;
  const int dy = y - viewer.y;
  const int r = viewer.spec.view_radius;
  return dx * dx + dy * dy <= r * r;
}

std::vector<double> observe(const State& state, int agent) {
  const AgentState& me = state.agents.at(static_cast<std::size_t>(agent));
  const int r = me.spec.view_radius;
  const int side = 2 * r + 1;
  std::vector<double> obs(static_cast<std::size_t>(observation_size(r)), 0.0);
  auto cell = [&](int dx, int dy) { return &obs[static_cast<std::size_t>(((dy + r) * side + (dx + r)) * 5)]; };
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      const int x = me.x + dx;
      const int y = me.y + dy;
      if (x < 0 || y < 0 || x >= state.width || y >= state.height) cell(dx, dy)[4] = 1.0;
    }
  }
  for (const auto& other : state.agents) {
    if (!other.alive || other.spec.id == agent || !visible(me, other.x, other.y)) continue;
    double* c = cell(other.x - me.x, other.y - me.y);
    c[other.spec.team == me.spec.team ? 0 : 1] = 1.0;
    c[3] = std::clamp(other.hp / other.spec.max_hp, 0.0, 1.0);
  }
  for (const auto& res : state.resources) {
    if (!res.alive || !visible(me, res.x, res.y)) continue;
    double* c = cell(res.x - me.x, res.y - me.y);
    c[2] = 1.0;
    c[3] = std::clamp(res.hp / res.max_hp, 0.0, 1.0);
  }
  const std::size_t tail = obs.size() - 3;
  obs[tail] = std::clamp(me.hp / me.spec.max_hp, 0.0, 1.0);
  obs[tail + 1] = state.width > 1 ? static_cast<double>(me.x) / (state.width - 1) : 0.0;
  obs[tail + 2] = state.height > 1 ? static_cast<double>(me.y) / (state.height - 1) : 0.0;
  return obs;
}

int mean_field_width(const GridConfig& config) {
  int w = 0;
  for (const auto& t : config.teams) {
    for (const auto& [kind, count] : t.members) w = std::max(w, action_count(kind));
  }
  return w;
}

std::optional<Distribution> observed_mean(const State& state, int agent, std::span<const int> actions,
                                          int width) {
  const AgentState& me = state.agents.at(static_cast<std::size_t>(agent));
  std::vector<int> seen;
  for (const auto& other : state.agents) {
    const int j = other.spec.id;
    if (j == agent || static_cast<std::size_t>(j) >= actions.size() || actions[static_cast<std::size_t>(j)] < 0) continue;
    if (visible(me, other.x, other.y)) seen.push_back(actions[static_cast<std::size_t>(j)]);
  }
  return one_hot_mean(seen, width);
}

Env::Env(EnvName name, GridConfig config, std::uint64_t seed)
    : name_(name), config_(std::move(config)), rng_(seed) {
  config_.validate();
  int id = 0;
  for (std::size_t t = 0; t < config_.teams.size(); ++t) {
    for (const auto& [kind, count] : config_.teams[t].members) {
      const auto& p = config_.params(kind);
      for (int i = 0; i < count; ++i, ++id) {
        AgentSpec s;
        s.id = id;
        s.team = config_.free_for_all ? id : static_cast<int>(t);
        s.kind = kind;
        s.action_count = action_count(kind);
        s.view_radius = p.view_radius;
        s.attack_radius = p.attack_radius;
        s.max_hp = p.max_hp;
        s.speed = p.speed;
        specs_.push_back(s);
      }
    }
  }
  mf_width_ = envs::mean_field_width(config_);
  state_.width = config_.width;
  state_.height = config_.height;
  returns_.assign(specs_.size(), 0.0);
  kills_.assign(specs_.size(), 0);
  place(rng_);
}

int Env::team_count() const {
  return config_.free_for_all ? agent_count() : static_cast<int>(config_.teams.size());
}

void Env::place(Rng& rng) {
  std::vector<int> cells(static_cast<std::size_t>(config_.width * config_.height));
  std::iota(cells.begin(), cells.end(), 0);
  // Partial Fisher-Yates with an explicit draw so placement does not depend
  // on the standard library's shuffle.
  const std::size_t needed = specs_.size() + static_cast<std::size_t>(config_.food_count + config_.deer_count);
  for (std::size_t i = 0; i < needed; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(rng)]);
  }
  std::size_t next = 0;
  auto take = [&](int& x, int& y) {
    const int c = cells[next++];
    x = c % config_.width;
    y = c / config_.width;
  };
  for (const auto& s : specs_) {
    AgentState a;
    a.spec = s;
    a.hp = s.max_hp;
    take(a.x, a.y);
    state_.agents.push_back(a);
  }
  for (int i = 0; i < config_.food_count; ++i) {
    Resource r{0, 0, config_.food_hp, config_.food_hp, true};
    take(r.x, r.y);
    state_.resources.push_back(r);
  }
  for (int i = 0; i < config_.deer_count; ++i) {
    Resource r{0, 0, config_.deer_hp, config_.deer_hp, true};
    take(r.x, r.y);
    state_.resources.push_back(r);
  }
}

int Env::occupant(int x, int y) const {
  for (const auto& a : state_.agents) {
    if (a.alive && a.x == x && a.y == y) return a.spec.id;
  }
  return -1;
}

int Env::resource_at(int x, int y) const {
  for (std::size_t i = 0; i < state_.resources.size(); ++i) {
    const auto& r = state_.resources[i];
    if (r.alive && r.x == x && r.y == y) return static_cast<int>(i);
  }
  return -1;
}

bool Env::is_enemy(int a, int b) const {
  return specs_[static_cast<std::size_t>(a)].team != specs_[static_cast<std::size_t>(b)].team;
}

void Env::emit(int agent, EventKind kind, std::vector<double>& rewards) {
  events_.push_back({state_.tick, agent, kind});
  rewards[static_cast<std::size_t>(agent)] += event_reward(kind, config_.rewards);
}

std::vector<int> Env::team_kills() const {
  std::vector<int> out(static_cast<std::size_t>(team_count()), 0);
  for (const auto& s : specs_) out[static_cast<std::size_t>(s.team)] += kills_[static_cast<std::size_t>(s.id)];
  return out;
}

std::vector<double> Env::team_returns() const {
  std::vector<double> out(static_cast<std::size_t>(team_count()), 0.0);
  for (const auto& s : specs_) out[static_cast<std::size_t>(s.team)] += returns_[static_cast<std::size_t>(s.id)];
  return out;
}

StepOutcome Env::step(std::span<const int> actions) {
  const std::size_t n = specs_.size();
  if (done_) throw InvalidInput("step called on a finished episode");
  if (actions.size() != n) {
    throw InvalidInput("expected " + std::to_string(n) + " actions, got " + std::to_string(actions.size()));
  }
  std::vector<int> acted(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!state_.agents[i].alive) continue;
    const int a = actions[i];
    if (a < 0 || a >= specs_[i].action_count) {
      throw InvalidInput("agent " + std::to_string(i) + ": action " + std::to_string(a) + " outside [0, " +
                         std::to_string(specs_[i].action_count) + ")");
    }
    acted[i] = a;
  }
  ++state_.tick;
  std::vector<double> rewards(n, 0.0);
  std::vector<int> step_kills(n, 0);
  std::vector<Intent> intents(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (acted[i] < 0) continue;
    emit(static_cast<int>(i), EventKind::step, rewards);
    const int a = acted[i];
    if (specs_[i].kind == Kind::melee) {
      if (a == 0) continue;
      const auto& me = state_.agents[i];
      const int target = occupant(me.x + kDx[static_cast<std::size_t>(a)], me.y + kDy[static_cast<std::size_t>(a)]);
      if (target >= 0 && is_enemy(static_cast<int>(i), target)) {
        intents[i].attack_dir = a;
      } else {
        intents[i].move_dir = a;
      }
    } else if (a >= 1 && a <= 4) {
      intents[i].move_dir = a;
    } else if (a >= 5) {
      intents[i].attack_dir = a - 4;
    }
  }

  // Moves, ascending id against current occupancy.
  auto free_cell = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < config_.width && y < config_.height && occupant(x, y) < 0 &&
           resource_at(x, y) < 0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const int d = intents[i].move_dir;
    if (d == 0) continue;
    auto& me = state_.agents[i];
    for (int k = 0; k < specs_[i].speed; ++k) {
      const int nx = me.x + kDx[static_cast<std::size_t>(d)];
      const int ny = me.y + kDy[static_cast<std::size_t>(d)];
      if (!free_cell(nx, ny)) break;
      me.x = nx;
      me.y = ny;
    }
  }
  if (name_ == EnvName::tiger_deer) {
    std::uniform_int_distribution<int> dir(0, 4);
    for (auto& deer : state_.resources) {
      if (!deer.alive) continue;
      const int d = dir(rng_);
      if (d == 0) continue;
      const int nx = deer.x + kDx[static_cast<std::size_t>(d)];
      const int ny = deer.y + kDy[static_cast<std::size_t>(d)];
      if (free_cell(nx, ny)) {
        deer.x = nx;
        deer.y = ny;
      }
    }
  }

  // Attacks, ascending id against post-move positions.
  std::vector<bool> attacked(n, false);
  std::vector<std::vector<int>> deer_attackers(state_.resources.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int d = intents[i].attack_dir;
    if (d == 0) continue;
    const int me_id = static_cast<int>(i);
    emit(me_id, EventKind::attack, rewards);
    const auto& me = state_.agents[i];
    for (int k = 1; k <= specs_[i].attack_radius; ++k) {
      const int x = me.x + k * kDx[static_cast<std::size_t>(d)];
      const int y = me.y + k * kDy[static_cast<std::size_t>(d)];
      if (x < 0 || y < 0 || x >= config_.width || y >= config_.height) break;
      const int target = occupant(x, y);
      if (target >= 0) {
        auto& victim = state_.agents[static_cast<std::size_t>(target)];
        if (is_enemy(me_id, target) && victim.hp > 0.0) {
          victim.hp -= config_.damage;
          attacked[static_cast<std::size_t>(target)] = true;
          emit(me_id, EventKind::hit, rewards);
          if (victim.hp <= 0.0) {
            emit(me_id, EventKind::kill, rewards);
            ++kills_[i];
            ++step_kills[i];
          }
        }
        break;
      }
      const int res = resource_at(x, y);
      if (res >= 0) {
        auto& r = state_.resources[static_cast<std::size_t>(res)];
        if (name_ == EnvName::gather && r.hp > 0.0) {
          r.hp -= 1.0;
          emit(me_id, EventKind::food_hit, rewards);
          if (r.hp <= 0.0) {
            r.alive = false;
            emit(me_id, EventKind::food_capture, rewards);
          }
        } else if (name_ == EnvName::tiger_deer && r.hp > 0.0) {
          r.hp -= 1.0;
          deer_attackers[static_cast<std::size_t>(res)].push_back(me_id);
        }
        break;
      }
    }
  }
  std::vector<bool> fed(n, false);
  for (std::size_t r = 0; r < deer_attackers.size(); ++r) {
    const auto& who = deer_attackers[r];
    if (who.empty()) continue;
    for (int t : who) emit(t, who.size() >= 2 ? EventKind::deer_pair : EventKind::deer_solo, rewards);
    auto& deer = state_.resources[r];
    if (deer.hp <= 0.0) {
      deer.alive = false;
      ++kills_[static_cast<std::size_t>(who.front())];
      ++step_kills[static_cast<std::size_t>(who.front())];
      for (int t : who) {
        auto& tiger = state_.agents[static_cast<std::size_t>(t)];
        tiger.hp = std::min(tiger.spec.max_hp, tiger.hp + config_.tiger_feed);
        fed[static_cast<std::size_t>(t)] = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (acted[i] >= 0 && specs_[i].kind == Kind::tiger && !fed[i]) state_.agents[i].hp -= config_.tiger_drain;
  }

  // Deaths, then recovery.
  std::vector<bool> died(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    auto& a = state_.agents[i];
    if (a.alive && a.hp <= 0.0) {
      a.alive = false;
      a.hp = 0.0;
      died[i] = true;
      emit(static_cast<int>(i), EventKind::death, rewards);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& a = state_.agents[i];
    if (a.alive && !attacked[i] && specs_[i].kind != Kind::tiger) {
      a.hp = std::min(a.spec.max_hp, a.hp + config_.recovery);
    }
  }

  StepOutcome out;
  out.agents.resize(n);
  out.team_kills.assign(static_cast<std::size_t>(team_count()), 0);
  for (std::size_t i = 0; i < n; ++i) {
    returns_[i] += rewards[i];
    out.team_kills[static_cast<std::size_t>(specs_[i].team)] += step_kills[i];
    if (acted[i] < 0) continue;
    auto& o = out.agents[i];
    o.reward = rewards[i];
    o.alive = state_.agents[i].alive;
    o.died = died[i];
    o.kills = step_kills[i];
    if (o.alive) o.observation = observe(state_, static_cast<int>(i));
    o.observed_mean = observed_mean(state_, static_cast<int>(i), acted, mf_width_);
  }

  bool finished = state_.tick >= config_.max_steps;
  switch (name_) {
    case EnvName::battle:
    case EnvName::combined_arms: {
      std::vector<int> alive(config_.teams.size(), 0);
      for (const auto& a : state_.agents) {
        if (a.alive) ++alive[static_cast<std::size_t>(a.spec.team)];
      }
      finished = finished || std::count(alive.begin(), alive.end(), 0) > 0;
      break;
    }
    case EnvName::gather: {
      const bool food_left = std::any_of(state_.resources.begin(), state_.resources.end(),
                                         [](const Resource& r) { return r.alive; });
      const auto alive = std::count_if(state_.agents.begin(), state_.agents.end(),
                                       [](const AgentState& a) { return a.alive; });
      finished = finished || !food_left || alive <= 1;
      break;
    }
    case EnvName::tiger_deer: {
      const bool deer_left = std::any_of(state_.resources.begin(), state_.resources.end(),
                                         [](const Resource& r) { return r.alive; });
      const bool tigers_left = std::any_of(state_.agents.begin(), state_.agents.end(),
                                           [](const AgentState& a) { return a.alive; });
      finished = finished || !deer_left || !tigers_left;
      break;
    }
  }
  done_ = finished;
  out.done = finished;
  return out;
}

Env make_env(EnvName name, const GridConfig& config, std::uint64_t seed) { return Env(name, config, seed); }

std::vector<double> audit_rewards(const std::vector<Event>& events, const Rewards& table, int agent_count) {
  std::vector<double> total(static_cast<std::size_t>(agent_count), 0.0);
  for (const auto& e : events) total.at(static_cast<std::size_t>(e.agent)) += event_reward(e.kind, table);
  return total;
}

std::optional<int> winner(const EpisodeStats& stats, WinMode mode) {
  const std::size_t sides = stats.rewards.size();
  if (sides == 0) return std::nullopt;
  if (mode == WinMode::team_kills && stats.kills.size() != sides) {
    throw InvalidInput("kills and rewards must cover the same sides");
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (mode == WinMode::team_kills && stats.kills[a] != stats.kills[b]) return stats.kills[a] > stats.kills[b];
    return stats.rewards[a] > stats.rewards[b];
  };
  auto same = [&](std::size_t a, std::size_t b) {
    return (mode != WinMode::team_kills || stats.kills[a] == stats.kills[b]) && stats.rewards[a] == stats.rewards[b];
  };
  std::size_t best = 0;
  for (std::size_t s = 1; s < sides; ++s) {
    if (better(s, best)) best = s;
  }
  for (std::size_t s = 0; s < sides; ++s) {
    if (s != best && same(s, best)) return std::nullopt;
  }
  return static_cast<int>(best);
}

TraceWriter::TraceWriter(std::ostream& out, const Env& env) : out_(out) {
  nlohmann::json h = {{"format", "dmfg-trace"},
                      {"version", 1},
                      {"env", to_string(env.name())},
                      {"width", env.config().width},
                      {"height", env.config().height}};
  out_ << h.dump() << '\n';
}

void TraceWriter::record(const Env& env, std::span<const int> actions, const StepOutcome& outcome) {
  nlohmann::json line;
  line["tick"] = env.state().tick;
  auto& agents = line["agents"] = nlohmann::json::array();
  for (const auto& a : env.state().agents) {
    const auto i = static_cast<std::size_t>(a.spec.id);
    agents.push_back({{"id", a.spec.id},
                      {"team", a.spec.team},
                      {"kind", to_string(a.spec.kind)},
                      {"x", a.x},
                      {"y", a.y},
                      {"hp", a.hp},
                      {"alive", a.alive},
                      {"action", i < actions.size() ? actions[i] : -1},
                      {"reward", i < outcome.agents.size() ? outcome.agents[i].reward : 0.0}});
  }
  auto& res = line["resources"] = nlohmann::json::array();
  for (const auto& r : env.state().resources) {
    res.push_back({{"x", r.x}, {"y", r.y}, {"hp", r.hp}, {"alive", r.alive}});
  }
  out_ << line.dump() << '\n';
}

}  // namespace dmfg::envs
