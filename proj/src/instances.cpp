#include "dmfg/instances.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>

#include "dmfg/text.hpp"

namespace dmfg::tabular {

namespace {

Distribution initial_or_uniform(const std::vector<double>& w, int states) {
  if (w.empty()) return Distribution::uniform(states);
  if (static_cast<int>(w.size()) != states) throw InvalidInput("initial mean field has the wrong size");
  return Distribution(w);
}

int neighbour(Topology topology, int states, int s, int action) {
  if (action == 0) return s;
  const int step = action == 1 ? -1 : 1;
  int t = s + step;
  if (topology == Topology::ring) return (t + states) % states;
  return std::clamp(t, 0, states - 1);
}

}  // namespace

TabularInstance make_congestion(const CongestionParams& p) {
  const int S = static_cast<int>(p.base.size());
  if (S < 1) throw InvalidInput(p.name + ": congestion needs at least one cell");
  for (double v : {p.aversion, p.move_cost, p.slip, p.crowd_slip, p.noise}) {
    if (!(v >= 0.0)) throw InvalidInput(p.name + ": congestion parameters must be non-negative");
  }
  if (p.slip + p.crowd_slip > 1.0) throw InvalidInput(p.name + ": slip + crowd_slip exceeds 1");
  if (p.noise > 1.0) throw InvalidInput(p.name + ": noise exceeds 1");
  for (double b : p.base) {
    if (b > p.reward_max || b - p.aversion - p.move_cost < 0.0) {
      throw InvalidInput(p.name + ": base rewards must keep rewards inside [0, reward_max]");
    }
  }
  auto shared = std::make_shared<const CongestionParams>(p);
  TabularInstance inst;
  inst.name = p.name;
  inst.state_count = S;
  inst.action_count = kCongestionActions;
  inst.discount = p.discount;
  inst.reward_max = p.reward_max;
  inst.initial_mean_field = initial_or_uniform(p.initial_mean_field, S);
  inst.reward = [shared](int s, int a, const Distribution& mu) {
    const double r = shared->base[static_cast<std::size_t>(s)] - shared->aversion * mu[s] -
                     (a != 0 ? shared->move_cost : 0.0);
    return std::max(0.0, r);
  };
  inst.transition = [shared, S](int s, int a, const Distribution& mu) {
    std::vector<double> w(static_cast<std::size_t>(S), 0.0);
    const int target = neighbour(shared->topology, S, s, a);
    if (target == s) {
      w[static_cast<std::size_t>(s)] = 1.0;
    } else {
      const double success = 1.0 - shared->slip - shared->crowd_slip * mu[target];
      w[static_cast<std::size_t>(target)] = success;
      w[static_cast<std::size_t>(s)] = 1.0 - success;
    }
    if (shared->noise > 0.0) {
      for (double& x : w) x = (1.0 - shared->noise) * x + shared->noise / S;
    }
    return Distribution(std::move(w));
  };
  inst.validate();
  return inst;
}

TabularInstance make_dense_mdp(std::string name, int state_count, int action_count,
                               double discount, double reward_max,
                               Distribution initial_mean_field,
                               std::vector<std::vector<double>> transitions,
                               std::vector<double> rewards) {
  const auto pairs = static_cast<std::size_t>(state_count * action_count);
  if (transitions.size() != pairs || rewards.size() != pairs) {
    throw InvalidInput(name + ": dense tables need one entry per (state, action)");
  }
  auto rows = std::make_shared<std::vector<Distribution>>();
  rows->reserve(pairs);
  for (auto& t : transitions) {
    if (static_cast<int>(t.size()) != state_count) throw InvalidInput(name + ": transition row has the wrong size");
    rows->emplace_back(std::move(t));
  }
  auto r = std::make_shared<const std::vector<double>>(std::move(rewards));
  TabularInstance inst;
  inst.name = std::move(name);
  inst.state_count = state_count;
  inst.action_count = action_count;
  inst.discount = discount;
  inst.reward_max = reward_max;
  inst.initial_mean_field = std::move(initial_mean_field);
  inst.transition = [rows, action_count](int s, int a, const Distribution&) {
    return (*rows)[static_cast<std::size_t>(s * action_count + a)];
  };
  inst.reward = [r, action_count](int s, int a, const Distribution&) {
    return (*r)[static_cast<std::size_t>(s * action_count + a)];
  };
  inst.validate();
  return inst;
}

TabularInstance make_random_mdp(int state_count, int action_count, double discount,
                                std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> p;
  std::vector<double> r;
  for (int k = 0; k < state_count * action_count; ++k) {
    const Distribution row = random_distribution(state_count, rng);
    p.emplace_back(row.weights().begin(), row.weights().end());
    r.push_back(unit(rng));
  }
  return make_dense_mdp("random-mdp-" + std::to_string(seed), state_count, action_count, discount,
                        1.0, Distribution::uniform(state_count), std::move(p), std::move(r));
}

namespace builtin {

CongestionParams congestion_ring4_params() {
  CongestionParams p;
  p.name = "congestion-ring4";
  p.topology = Topology::ring;
  p.base = {1.0, 0.8, 0.6, 0.9};
  p.aversion = 0.1;
  p.move_cost = 0.05;
  p.slip = 0.1;
  p.crowd_slip = 0.1;
  p.noise = 0.1;
  p.discount = 0.9;
  p.reward_max = 1.0;
  p.initial_mean_field = {0.7, 0.1, 0.1, 0.1};
  return p;
}

CongestionParams congestion_line6_params() {
  CongestionParams p;
  p.name = "congestion-line6";
  p.topology = Topology::line;
  p.base = {0.5, 0.7, 1.0, 0.9, 0.6, 0.4};
  p.aversion = 0.1;
  p.move_cost = 0.02;
  p.slip = 0.05;
  p.crowd_slip = 0.1;
  p.noise = 0.1;
  p.discount = 0.8;
  p.reward_max = 1.0;
  return p;
}

CongestionParams congestion_ring8_params() {
  CongestionParams p;
  p.name = "congestion-ring8";
  p.topology = Topology::ring;
  p.base = {0.9, 0.7, 0.5, 0.6, 1.0, 0.8, 0.55, 0.65};
  p.aversion = 0.2;
  p.move_cost = 0.05;
  p.slip = 0.1;
  p.crowd_slip = 0.1;
  p.noise = 0.08;
  p.discount = 0.85;
  p.reward_max = 1.0;
  p.initial_mean_field = {0.3, 0.2, 0.1, 0.1, 0.05, 0.05, 0.1, 0.1};
  return p;
}

std::vector<TabularInstance> congestion_instances() {
  return {make_congestion(congestion_ring4_params()), make_congestion(congestion_line6_params()),
          make_congestion(congestion_ring8_params())};
}

}  // namespace builtin

InstanceParseError::InstanceParseError(const std::string& source, int line, const std::string& what)
    : InvalidInput(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

struct Parser {
  std::string source;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& what) const { throw InstanceParseError(source, line_no, what); }

  double number(std::string_view t) const {
    auto v = text::parse_double(t);
    if (!v) fail("expected a number, got '" + std::string(t) + "'");
    return *v;
  }
  int integer(std::string_view t) const {
    auto v = text::parse_int(t);
    if (!v) fail("expected an integer, got '" + std::string(t) + "'");
    return static_cast<int>(*v);
  }
  std::vector<double> numbers(std::span<const std::string_view> tokens, std::size_t expected) const {
    if (tokens.size() != expected) {
      fail("expected " + std::to_string(expected) + " values, got " + std::to_string(tokens.size()));
    }
    std::vector<double> v;
    for (auto t : tokens) v.push_back(number(t));
    return v;
  }
};

}  // namespace

TabularInstance parse_instance(std::istream& in, const std::string& source) {
  Parser ps{source};
  std::optional<int> S, A;
  double beta = 0.0, r_max = 0.0;
  std::optional<std::vector<double>> mu0;
  std::string name = source;
  std::string family;
  CongestionParams cong;
  std::map<std::string, bool> cong_seen;
  std::map<std::pair<int, int>, std::vector<double>> p_rows;
  std::map<std::pair<int, int>, double> r_vals;

  std::string line;
  while (std::getline(in, line)) {
    ++ps.line_no;
    const auto hash = line.find('#');
    const std::string_view body = std::string_view(line).substr(0, hash);
    const auto tok = text::split_whitespace(body);
    if (tok.empty()) continue;
    const auto args = std::span(tok).subspan(1);
    if (!S) {
      if (tok.size() != 4) ps.fail("header must be 'S A beta R_max'");
      S = ps.integer(tok[0]);
      A = ps.integer(tok[1]);
      beta = ps.number(tok[2]);
      r_max = ps.number(tok[3]);
      if (*S <= 0 || *A <= 0) ps.fail("S and A must be positive");
      if (!(beta >= 0.0 && beta < 1.0)) ps.fail("beta must lie in [0, 1)");
      if (!(r_max >= 0.0)) ps.fail("R_max must be non-negative");
      continue;
    }
    const std::string key(tok[0]);
    const auto sz = static_cast<std::size_t>(*S);
    if (key == "mu0") {
      mu0 = ps.numbers(args, sz);
    } else if (key == "name") {
      if (args.size() != 1) ps.fail("name takes one token");
      name = std::string(args[0]);
    } else if (key == "family") {
      if (args.size() != 1 || (args[0] != "congestion" && args[0] != "mdp")) {
        ps.fail("family must be 'congestion' or 'mdp'");
      }
      family = std::string(args[0]);
    } else if (key == "topology") {
      if (args.size() != 1 || (args[0] != "ring" && args[0] != "line")) ps.fail("topology must be 'ring' or 'line'");
      cong.topology = args[0] == "ring" ? Topology::ring : Topology::line;
      cong_seen[key] = true;
    } else if (key == "base") {
      cong.base = ps.numbers(args, sz);
      cong_seen[key] = true;
    } else if (key == "aversion" || key == "move_cost" || key == "slip" || key == "crowd_slip" ||
               key == "noise") {
      const double v = ps.numbers(args, 1)[0];
      if (key == "aversion") cong.aversion = v;
      if (key == "move_cost") cong.move_cost = v;
      if (key == "slip") cong.slip = v;
      if (key == "crowd_slip") cong.crowd_slip = v;
      if (key == "noise") cong.noise = v;
      cong_seen[key] = true;
    } else if (key == "p" || key == "r") {
      if (args.size() < 2) ps.fail(key + " needs a state and an action index");
      const int s = ps.integer(args[0]);
      const int a = ps.integer(args[1]);
      if (s < 0 || s >= *S || a < 0 || a >= *A) ps.fail("state or action index out of range");
      const auto k = std::make_pair(s, a);
      if (key == "p") {
        if (p_rows.contains(k)) ps.fail("duplicate transition row");
        p_rows[k] = ps.numbers(args.subspan(2), sz);
      } else {
        if (r_vals.contains(k)) ps.fail("duplicate reward entry");
        r_vals[k] = ps.numbers(args.subspan(2), 1)[0];
      }
    } else {
      ps.fail("unknown directive '" + key + "'");
    }
  }
  ps.line_no = std::max(ps.line_no, 1);
  if (!S) ps.fail("missing header line");
  if (family.empty()) ps.fail("missing 'family' directive");
  std::vector<double> mu = mu0.value_or(std::vector<double>{});
  try {
    if (family == "congestion") {
      if (*A != kCongestionActions) ps.fail("congestion instances have exactly 3 actions");
      if (!cong_seen["base"]) ps.fail("congestion instance needs a 'base' line");
      cong.name = name;
      cong.discount = beta;
      cong.reward_max = r_max;
      cong.initial_mean_field = mu;
      return make_congestion(cong);
    }
    std::vector<std::vector<double>> p;
    std::vector<double> r;
    for (int s = 0; s < *S; ++s) {
      for (int a = 0; a < *A; ++a) {
        const auto k = std::make_pair(s, a);
        if (!p_rows.contains(k) || !r_vals.contains(k)) {
          ps.fail("missing p or r entry for state " + std::to_string(s) + " action " + std::to_string(a));
        }
        p.push_back(p_rows[k]);
        r.push_back(r_vals[k]);
      }
    }
    Distribution init = mu.empty() ? Distribution::uniform(*S) : Distribution(mu);
    return make_dense_mdp(name, *S, *A, beta, r_max, std::move(init), std::move(p), std::move(r));
  } catch (const InstanceParseError&) {
    throw;
  } catch (const InvalidInput& e) {
    ps.fail(e.what());
  }
}

TabularInstance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open instance file " + path.string());
  return parse_instance(in, path.string());
}

void write_congestion(std::ostream& out, const CongestionParams& p) {
  const int S = static_cast<int>(p.base.size());
  out << "# congestion instance\n";
  out << S << ' ' << kCongestionActions << ' ' << text::format_double(p.discount) << ' '
      << text::format_double(p.reward_max) << '\n';
  out << "name " << p.name << '\n';
  const Distribution mu = initial_or_uniform(p.initial_mean_field, S);
  out << "mu0";
  for (double w : mu.weights()) out << ' ' << text::format_double(w);
  out << "\nfamily congestion\n";
  out << "topology " << (p.topology == Topology::ring ? "ring" : "line") << '\n';
  out << "base";
  for (double b : p.base) out << ' ' << text::format_double(b);
  out << '\n';
  out << "aversion " << text::format_double(p.aversion) << '\n';
  out << "move_cost " << text::format_double(p.move_cost) << '\n';
  out << "slip " << text::format_double(p.slip) << '\n';
  out << "crowd_slip " << text::format_double(p.crowd_slip) << '\n';
  out << "noise " << text::format_double(p.noise) << '\n';
}

}  // namespace dmfg::tabular
