#include "dmfg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <ostream>
#include <set>

#include "dmfg/text.hpp"

namespace dmfg::harness {

namespace {

const char* const kKinds[] = {"soldier", "gatherer", "tiger", "melee", "ranged"};

std::string fmt(double v) { return text::format_double(v); }

std::string teams_string(const envs::GridConfig& g) {
  std::string out;
  for (std::size_t t = 0; t < g.teams.size(); ++t) {
    if (t) out += ';';
    for (std::size_t m = 0; m < g.teams[t].members.size(); ++m) {
      if (m) out += '+';
      out += envs::to_string(g.teams[t].members[m].first) + ":" + std::to_string(g.teams[t].members[m].second);
    }
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

class Reader {
 public:
  explicit Reader(const std::map<std::string, std::string>& values) : values_(values) {}

  const std::string& raw(const std::string& key) const { return values_.at(key); }

  double real(const std::string& key) {
    const auto v = text::parse_double(text::trim(raw(key)));
    if (!v) errors.push_back(key + ": expected a number, got '" + raw(key) + "'");
    return v.value_or(0.0);
  }
  long long integer(const std::string& key) {
    const auto v = text::parse_int(text::trim(raw(key)));
    if (!v) errors.push_back(key + ": expected an integer, got '" + raw(key) + "'");
    return v.value_or(0);
  }
  bool boolean(const std::string& key) {
    const auto s = text::trim(raw(key));
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    errors.push_back(key + ": expected true or false, got '" + raw(key) + "'");
    return false;
  }
  std::vector<int> ints(const std::string& key) {
    std::vector<int> out;
    const auto s = text::trim(raw(key));
    if (s.empty()) return out;
    for (auto part : text::split(s, ',')) {
      const auto v = text::parse_int(text::trim(part));
      if (!v) {
        errors.push_back(key + ": expected a comma-separated integer list, got '" + raw(key) + "'");
        return {};
      }
      out.push_back(static_cast<int>(*v));
    }
    return out;
  }
  void check(bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  }

  std::vector<std::string> errors;

 private:
  const std::map<std::string, std::string>& values_;
};

std::vector<envs::TeamComposition> parse_teams(const std::string& s, Reader& r) {
  std::vector<envs::TeamComposition> teams;
  for (auto team : text::split(s, ';')) {
    envs::TeamComposition comp;
    for (auto member : text::split(text::trim(team), '+')) {
      const auto parts = text::split(text::trim(member), ':');
      if (parts.size() != 2) {
        r.errors.push_back("grid.teams: expected kind:count, got '" + std::string(member) + "'");
        continue;
      }
      try {
        const auto kind = envs::parse_kind(text::trim(parts[0]));
        const auto count = text::parse_int(text::trim(parts[1]));
        if (!count) {
          r.errors.push_back("grid.teams: bad count in '" + std::string(member) + "'");
          continue;
        }
        comp.members.push_back({kind, static_cast<int>(*count)});
      } catch (const InvalidInput& e) {
        r.errors.push_back(std::string("grid.teams: ") + e.what());
      }
    }
    teams.push_back(comp);
  }
  return teams;
}

}  // namespace

learners::Algorithm RunConfig::algorithm_for(int agent_id) const {
  int id = 0;
  for (std::size_t t = 0; t < grid.teams.size(); ++t) {
    id += grid.teams[t].size();
    if (agent_id < id) return team_algorithms.at(t);
  }
  throw InvalidInput("agent id " + std::to_string(agent_id) + " outside the configured teams");
}

std::vector<Setting> default_settings(envs::EnvName env) {
  const envs::GridConfig g = envs::default_config(env);
  const learners::LearnerConfig l;
  std::vector<Setting> s = {
      {"run.name", "run", "run id prefix; each seed writes {name}-s{seed}/"},
      {"run.env", envs::to_string(env), "battle | gather | tiger_deer | combined_arms"},
      {"run.episodes", "300", "training episodes per seed"},
      {"run.seeds", "1", "comma-separated master seeds"},
      {"run.checkpoint_every", "0", "write checkpoints every K episodes (0: final only)"},
      {"run.threads", "1", "seeds trained concurrently"},
      {"run.trace", "false", "write a JSON-lines trace per episode"},
      {"grid.width", std::to_string(g.width), ""},
      {"grid.height", std::to_string(g.height), ""},
      {"grid.max_steps", std::to_string(g.max_steps), "episode step cap"},
      {"grid.teams", teams_string(g), "teams separated by ';', members kind:count joined by '+'"},
      {"grid.free_for_all", g.free_for_all ? "true" : "false", "every agent is its own side"},
      {"grid.damage", fmt(g.damage), "HP lost per hit"},
      {"grid.recovery", fmt(g.recovery), "HP regained per tick without being hit"},
      {"grid.food_count", std::to_string(g.food_count), ""},
      {"grid.food_hp", fmt(g.food_hp), "attacks needed to capture one food"},
      {"grid.deer_count", std::to_string(g.deer_count), ""},
      {"grid.deer_hp", fmt(g.deer_hp), ""},
      {"grid.tiger_drain", fmt(g.tiger_drain), "tiger HP lost per tick without feeding"},
      {"grid.tiger_feed", fmt(g.tiger_feed), "tiger HP gained per deer killed"},
  };
  for (const char* kind : kKinds) {
    const auto& p = g.params(envs::parse_kind(kind));
    const std::string k = kind;
    s.push_back({k + ".view_radius", std::to_string(p.view_radius), ""});
    s.push_back({k + ".attack_radius", std::to_string(p.attack_radius), ""});
    s.push_back({k + ".max_hp", fmt(p.max_hp), ""});
    s.push_back({k + ".speed", std::to_string(p.speed), "cells per move action"});
  }
  const auto& r = g.rewards;
  s.insert(s.end(), {
                        {"rewards.step", fmt(r.step), ""},
                        {"rewards.attack_penalty", fmt(r.attack_penalty), "any attack action"},
                        {"rewards.attack_enemy", fmt(r.attack_enemy), ""},
                        {"rewards.kill", fmt(r.kill), ""},
                        {"rewards.death", fmt(r.death), ""},
                        {"rewards.attack_food", fmt(r.attack_food), ""},
                        {"rewards.capture_food", fmt(r.capture_food), ""},
                        {"rewards.deer_pair", fmt(r.deer_pair), ""},
                        {"rewards.deer_solo", fmt(r.deer_solo), ""},
                        {"agents.algorithms", "dmfg-ql", "one tag per team separated by ';', or one for all"},
                        {"learner.learning_rate", fmt(l.learning_rate), "Q network"},
                        {"learner.actor_learning_rate", fmt(l.actor_learning_rate), ""},
                        {"learner.critic_learning_rate", fmt(l.critic_learning_rate), ""},
                        {"learner.mf_learning_rate", fmt(l.mf_learning_rate), "mean-field estimator"},
                        {"learner.gamma", fmt(l.gamma), ""},
                        {"learner.boltzmann_beta", fmt(l.boltzmann_beta), "policy is exp(beta * Q)"},
                        {"learner.epsilon_start", fmt(l.epsilon.start), ""},
                        {"learner.epsilon_end", fmt(l.epsilon.end), ""},
                        {"learner.epsilon_episodes", "0", "linear decay length (0: run.episodes)"},
                        {"learner.buffer_capacity", std::to_string(l.buffer_capacity), ""},
                        {"learner.batch_size", std::to_string(l.batch_size), ""},
                        {"learner.updates_per_episode", std::to_string(l.updates_per_episode), ""},
                        {"learner.tau", fmt(l.tau), "target blend at episode end"},
                        {"learner.max_grad_norm", fmt(l.max_grad_norm), "gradient L2 norm cap, 0 disables"},
                        {"learner.hidden", join_ints(l.hidden), "Q, actor and critic hidden widths"},
                        {"learner.mf_hidden", join_ints(l.mf_hidden), "estimator hidden widths"},
                        {"learner.optimizer", nn::to_string(l.optimizer), "sgd | adam"},
                        {"learner.scripted_action", std::to_string(l.scripted_action), "-1: uniform random"},
                        {"execute.games", "100", ""},
                        {"execute.seed_base", "31", "game g uses environment seed seed_base + g"},
                        {"execute.per_set", "2", "agents per checkpoint set in free-for-all games"},
                        {"probe.opponent_action", "0", "fixed action of the scripted opponents"},
                    });
  return s;
}

void dump_defaults(std::ostream& out, envs::EnvName env) {
  std::string section;
  for (const auto& s : default_settings(env)) {
    const auto dot = s.key.find('.');
    const std::string sec = s.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    if (!s.help.empty()) out << "; " << s.help << '\n';
    out << s.key.substr(dot + 1) << " = " << s.value << '\n';
  }
}

std::map<std::string, std::string> read_ini(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, std::string> out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      out[section] = body.data();
      continue;
    }
    for (const auto& [key, value] : body) out[section + "." + key] = value.data();
  }
  return out;
}

std::map<std::string, std::string> read_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return read_ini(in);
}

std::pair<std::string, std::string> parse_override(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || s.substr(0, eq).find('.') == std::string::npos) {
    throw ConfigError("override '" + s + "' is not of the form section.key=value");
  }
  return {std::string(text::trim(s.substr(0, eq))), std::string(text::trim(s.substr(eq + 1)))};
}

RunConfig resolve_config(const std::map<std::string, std::string>& file_values,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string env_name = "gather";
  if (auto it = file_values.find("run.env"); it != file_values.end()) env_name = it->second;
  for (const auto& [k, v] : overrides) {
    if (k == "run.env") env_name = v;
  }
  envs::EnvName env;
  try {
    env = envs::parse_env_name(text::trim(env_name));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("run.env: ") + e.what());
  }

  const auto defaults = default_settings(env);
  std::map<std::string, std::string> values;
  for (const auto& s : defaults) values[s.key] = s.value;
  std::vector<std::string> unknown;
  auto apply = [&](const std::string& key, const std::string& value, const char* origin) {
    if (!values.count(key)) {
      unknown.push_back(std::string(origin) + " key '" + key + "' is not recognised");
      return;
    }
    values[key] = value;
  };
  for (const auto& [k, v] : file_values) apply(k, v, "config");
  for (const auto& [k, v] : overrides) apply(k, v, "override");

  Reader r(values);
  r.errors = unknown;
  RunConfig c;
  c.env = env;
  c.name = values["run.name"];
  r.check(!c.name.empty() && c.name.find_first_of("/\\ ") == std::string::npos,
          "run.name must be non-empty without spaces or slashes");
  c.episodes = static_cast<int>(r.integer("run.episodes"));
  r.check(c.episodes >= 1, "run.episodes must be at least 1");
  c.seeds.clear();
  for (auto part : text::split(values["run.seeds"], ',')) {
    const auto v = text::parse_int(text::trim(part));
    if (!v || *v < 0) {
      r.errors.push_back("run.seeds: expected non-negative integers, got '" + values["run.seeds"] + "'");
      break;
    }
    c.seeds.push_back(static_cast<std::uint64_t>(*v));
  }
  r.check(!c.seeds.empty(), "run.seeds needs at least one seed");
  c.checkpoint_every = static_cast<int>(r.integer("run.checkpoint_every"));
  r.check(c.checkpoint_every >= 0, "run.checkpoint_every must be non-negative");
  c.threads = static_cast<int>(r.integer("run.threads"));
  r.check(c.threads >= 1, "run.threads must be at least 1");
  c.trace = r.boolean("run.trace");

  auto& g = c.grid;
  g = envs::default_config(env);
  g.width = static_cast<int>(r.integer("grid.width"));
  g.height = static_cast<int>(r.integer("grid.height"));
  g.max_steps = static_cast<int>(r.integer("grid.max_steps"));
  g.teams = parse_teams(values["grid.teams"], r);
  g.free_for_all = r.boolean("grid.free_for_all");
  g.damage = r.real("grid.damage");
  g.recovery = r.real("grid.recovery");
  g.food_count = static_cast<int>(r.integer("grid.food_count"));
  g.food_hp = r.real("grid.food_hp");
  g.deer_count = static_cast<int>(r.integer("grid.deer_count"));
  g.deer_hp = r.real("grid.deer_hp");
  g.tiger_drain = r.real("grid.tiger_drain");
  g.tiger_feed = r.real("grid.tiger_feed");
  for (const char* kind : kKinds) {
    auto& p = g.params(envs::parse_kind(kind));
    const std::string k = kind;
    p.view_radius = static_cast<int>(r.integer(k + ".view_radius"));
    p.attack_radius = static_cast<int>(r.integer(k + ".attack_radius"));
    p.max_hp = r.real(k + ".max_hp");
    p.speed = static_cast<int>(r.integer(k + ".speed"));
  }
  auto& rw = g.rewards;
  rw.step = r.real("rewards.step");
  rw.attack_penalty = r.real("rewards.attack_penalty");
  rw.attack_enemy = r.real("rewards.attack_enemy");
  rw.kill = r.real("rewards.kill");
  rw.death = r.real("rewards.death");
  rw.attack_food = r.real("rewards.attack_food");
  rw.capture_food = r.real("rewards.capture_food");
  rw.deer_pair = r.real("rewards.deer_pair");
  rw.deer_solo = r.real("rewards.deer_solo");
  for (const auto& p : g.problems()) r.errors.push_back("grid: " + p);
  if (env == envs::EnvName::gather && !g.free_for_all) r.errors.push_back("grid.free_for_all must be true for gather");

  const auto tags = text::split(values["agents.algorithms"], ';');
  for (auto tag : tags) {
    try {
      c.team_algorithms.push_back(learners::parse_algorithm(text::trim(tag)));
    } catch (const InvalidInput& e) {
      r.errors.push_back(std::string("agents.algorithms: ") + e.what());
    }
  }
  if (c.team_algorithms.size() == 1 && g.teams.size() > 1) {
    c.team_algorithms.assign(g.teams.size(), c.team_algorithms.front());
  }
  if (!c.team_algorithms.empty() && c.team_algorithms.size() != g.teams.size()) {
    r.errors.push_back("agents.algorithms: " + std::to_string(c.team_algorithms.size()) + " tags for " +
                       std::to_string(g.teams.size()) + " teams");
  }

  auto& l = c.learner;
  l.learning_rate = r.real("learner.learning_rate");
  l.actor_learning_rate = r.real("learner.actor_learning_rate");
  l.critic_learning_rate = r.real("learner.critic_learning_rate");
  l.mf_learning_rate = r.real("learner.mf_learning_rate");
  r.check(l.learning_rate >= 0.0 && l.actor_learning_rate >= 0.0 && l.critic_learning_rate >= 0.0 &&
              l.mf_learning_rate >= 0.0,
          "learner learning rates must be non-negative");
  l.gamma = r.real("learner.gamma");
  r.check(l.gamma >= 0.0 && l.gamma < 1.0, "learner.gamma must lie in [0, 1)");
  l.boltzmann_beta = r.real("learner.boltzmann_beta");
  r.check(l.boltzmann_beta > 0.0, "learner.boltzmann_beta must be positive");
  l.epsilon.start = r.real("learner.epsilon_start");
  l.epsilon.end = r.real("learner.epsilon_end");
  r.check(l.epsilon.start >= 0.0 && l.epsilon.start <= 1.0 && l.epsilon.end >= 0.0 && l.epsilon.end <= 1.0,
          "learner.epsilon_start and epsilon_end must lie in [0, 1]");
  const auto eps_episodes = static_cast<int>(r.integer("learner.epsilon_episodes"));
  r.check(eps_episodes >= 0, "learner.epsilon_episodes must be non-negative");
  l.epsilon.episodes = eps_episodes > 0 ? eps_episodes : c.episodes;
  const auto capacity = r.integer("learner.buffer_capacity");
  r.check(capacity >= 1, "learner.buffer_capacity must be positive");
  l.buffer_capacity = static_cast<std::size_t>(std::max<long long>(capacity, 1));
  l.batch_size = static_cast<int>(r.integer("learner.batch_size"));
  r.check(l.batch_size >= 1, "learner.batch_size must be positive");
  l.updates_per_episode = static_cast<int>(r.integer("learner.updates_per_episode"));
  r.check(l.updates_per_episode >= 0, "learner.updates_per_episode must be non-negative");
  l.tau = r.real("learner.tau");
  r.check(l.tau > 0.0 && l.tau <= 1.0, "learner.tau must lie in (0, 1]");
  l.max_grad_norm = r.real("learner.max_grad_norm");
  r.check(l.max_grad_norm >= 0.0, "learner.max_grad_norm must be non-negative");
  l.hidden = r.ints("learner.hidden");
  l.mf_hidden = r.ints("learner.mf_hidden");
  for (int h : l.hidden) r.check(h > 0, "learner.hidden widths must be positive");
  for (int h : l.mf_hidden) r.check(h > 0, "learner.mf_hidden widths must be positive");
  const auto opt = text::trim(values["learner.optimizer"]);
  if (opt == "sgd") {
    l.optimizer = nn::Optimizer::sgd;
  } else if (opt == "adam") {
    l.optimizer = nn::Optimizer::adam;
  } else {
    r.errors.push_back("learner.optimizer: expected sgd or adam, got '" + values["learner.optimizer"] + "'");
  }
  l.scripted_action = static_cast<int>(r.integer("learner.scripted_action"));
  r.check(l.scripted_action >= -1 && l.scripted_action < envs::kMaxActionCount,
          "learner.scripted_action must be -1 or a valid action");

  c.games = static_cast<int>(r.integer("execute.games"));
  r.check(c.games >= 1, "execute.games must be at least 1");
  c.exec_seed_base = static_cast<std::uint64_t>(std::max<long long>(0, r.integer("execute.seed_base")));
  c.per_set = static_cast<int>(r.integer("execute.per_set"));
  r.check(c.per_set >= 1, "execute.per_set must be at least 1");
  c.probe_opponent_action = static_cast<int>(r.integer("probe.opponent_action"));
  r.check(c.probe_opponent_action >= 0 && c.probe_opponent_action < envs::kMaxActionCount,
          "probe.opponent_action must be a valid action");

  if (!r.errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(r.errors.size()) + " problems):";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  for (const auto& s : defaults) c.settings.emplace_back(s.key, values[s.key]);
  return c;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  return resolve_config(read_ini(path), overrides);
}

RunConfig default_run_config(envs::EnvName env, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::pair<std::string, std::string>> all = {{"run.env", envs::to_string(env)}};
  all.insert(all.end(), overrides.begin(), overrides.end());
  return resolve_config({}, all);
}

}  // namespace dmfg::harness
