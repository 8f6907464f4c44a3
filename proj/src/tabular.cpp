#include "dmfg/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "dmfg/text.hpp"

namespace dmfg::tabular {

StateActionTable::StateActionTable(int state_count, int action_count, double fill)
    : states_(state_count), actions_(action_count) {
  if (state_count <= 0 || action_count <= 0) {
    throw InvalidInput("state-action table needs positive dimensions");
  }
  data_.assign(static_cast<std::size_t>(state_count) * static_cast<std::size_t>(action_count),
               fill);
}

double StateActionTable::row_max(int s) const {
  const auto r = row(s);
  return *std::max_element(r.begin(), r.end());
}

int StateActionTable::row_argmax(int s) const {
  const auto r = row(s);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

double StateActionTable::total() const {
  double t = 0.0;
  for (double v : data_) t += v;
  return t;
}

double sup_distance(const StateActionTable& a, const StateActionTable& b) {
  if (a.states_ != b.states_ || a.actions_ != b.actions_) {
    throw InvalidInput("sup distance between tables of different shape");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < a.data_.size(); ++i) d = std::max(d, std::abs(a.data_[i] - b.data_[i]));
  return d;
}

namespace {

/// Rewards and transition rows of an instance evaluated at one mean field.
struct FrozenModel {
  int states;
  int actions;
  std::vector<double> reward;             // S*A
  std::vector<std::vector<double>> next;  // S*A rows of length S

  FrozenModel(const TabularInstance& inst, const Distribution& mu)
      : states(inst.state_count), actions(inst.action_count) {
    if (mu.size() != states) throw InvalidInput("mean field size does not match the state count");
    reward.resize(static_cast<std::size_t>(states * actions));
    next.resize(static_cast<std::size_t>(states * actions));
    for (int s = 0; s < states; ++s) {
      for (int a = 0; a < actions; ++a) {
        const auto k = static_cast<std::size_t>(s * actions + a);
        reward[k] = inst.reward(s, a, mu);
        const Distribution p = inst.transition(s, a, mu);
        if (p.size() != states) throw InvalidInput("transition output has the wrong support size");
        next[k].assign(p.weights().begin(), p.weights().end());
      }
    }
  }

  const std::vector<double>& row(int s, int a) const {
    return next[static_cast<std::size_t>(s * actions + a)];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s * actions + a)]; }

  /// r + discount * sum_s' value(s') p(s'|s,a)
  double backup(int s, int a, double discount, const std::vector<double>& value) const {
    const auto& p = row(s, a);
    double cont = 0.0;
    for (int sp = 0; sp < states; ++sp) cont += p[static_cast<std::size_t>(sp)] * value[static_cast<std::size_t>(sp)];
    return r(s, a) + discount * cont;
  }
};

std::vector<double> greedy_values(const QMatrix& q) {
  std::vector<double> v(static_cast<std::size_t>(q.state_count()));
  for (int s = 0; s < q.state_count(); ++s) v[static_cast<std::size_t>(s)] = q.row_max(s);
  return v;
}

void check_shapes(const QMatrix& q, const Distribution& mu, const TabularInstance& inst) {
  if (q.state_count() != inst.state_count || q.action_count() != inst.action_count) {
    throw InvalidInput("Q table shape does not match the instance");
  }
  if (mu.size() != inst.state_count) throw InvalidInput("mean field size does not match the instance");
}

QMatrix h1_table(const QMatrix& q, const FrozenModel& model, double discount) {
  const auto v = greedy_values(q);
  QMatrix out(model.states, model.actions);
  for (int s = 0; s < model.states; ++s) {
    for (int a = 0; a < model.actions; ++a) out(s, a) = model.backup(s, a, discount, v);
  }
  return out;
}

Distribution push_forward(const FrozenModel& model, const std::vector<int>& actions,
                          const Distribution& mu) {
  std::vector<double> out(static_cast<std::size_t>(model.states), 0.0);
  for (int s = 0; s < model.states; ++s) {
    if (mu[s] == 0.0) continue;
    const auto& p = model.row(s, actions[static_cast<std::size_t>(s)]);
    for (int sp = 0; sp < model.states; ++sp) out[static_cast<std::size_t>(sp)] += p[static_cast<std::size_t>(sp)] * mu[s];
  }
  return Distribution(std::move(out));
}

std::vector<int> row_argmaxes(const QMatrix& table) {
  std::vector<int> best(static_cast<std::size_t>(table.state_count()));
  for (int s = 0; s < table.state_count(); ++s) best[static_cast<std::size_t>(s)] = table.row_argmax(s);
  return best;
}

}  // namespace

void TabularInstance::validate(int samples, std::uint64_t seed) const {
  if (state_count <= 0 || action_count <= 0) throw InvalidInput(name + ": empty state or action set");
  if (!(discount >= 0.0 && discount < 1.0)) throw InvalidInput(name + ": discount must lie in [0, 1)");
  if (!(reward_max >= 0.0) || !std::isfinite(reward_max)) throw InvalidInput(name + ": bad reward bound");
  if (initial_mean_field.size() != state_count) {
    throw InvalidInput(name + ": initial mean field has the wrong size");
  }
  if (!transition || !reward) throw InvalidInput(name + ": missing transition or reward");
  Rng rng(seed);
  std::vector<Distribution> probes{initial_mean_field};
  for (int i = 0; i < samples; ++i) probes.push_back(random_distribution(state_count, rng));
  for (const auto& mu : probes) {
    for (int s = 0; s < state_count; ++s) {
      for (int a = 0; a < action_count; ++a) {
        const double r = reward(s, a, mu);
        if (!(r >= 0.0 && r <= reward_max)) {
          throw InvalidInput(name + ": reward " + std::to_string(r) + " at (" + std::to_string(s) +
                             "," + std::to_string(a) + ") outside [0, reward_max]");
        }
        if (transition(s, a, mu).size() != state_count) {
          throw InvalidInput(name + ": transition support size mismatch");
        }
      }
    }
  }
}

QMatrix apply_h1(const QMatrix& q, const Distribution& mu, const TabularInstance& inst) {
  check_shapes(q, mu, inst);
  return h1_table(q, FrozenModel(inst, mu), inst.discount);
}

std::vector<int> h1_maximizer(const QMatrix& q, const Distribution& mu, const TabularInstance& inst) {
  return row_argmaxes(apply_h1(q, mu, inst));
}

Distribution apply_h2(const QMatrix& q, const Distribution& mu, const TabularInstance& inst) {
  check_shapes(q, mu, inst);
  const FrozenModel model(inst, mu);
  return push_forward(model, row_argmaxes(h1_table(q, model, inst.discount)), mu);
}

Distribution propagate(const TabularInstance& inst, const DiscretePolicy& pi,
                       const Distribution& transition_mu, const Distribution& state) {
  if (pi.state_count() != inst.state_count || pi.action_count() != inst.action_count) {
    throw InvalidInput("policy shape does not match the instance");
  }
  const FrozenModel model(inst, transition_mu);
  std::vector<double> out(static_cast<std::size_t>(inst.state_count), 0.0);
  for (int s = 0; s < inst.state_count; ++s) {
    if (state[s] == 0.0) continue;
    for (int a = 0; a < inst.action_count; ++a) {
      const double w = state[s] * pi.probability(s, a);
      if (w == 0.0) continue;
      const auto& p = model.row(s, a);
      for (int sp = 0; sp < inst.state_count; ++sp) out[static_cast<std::size_t>(sp)] += w * p[static_cast<std::size_t>(sp)];
    }
  }
  return Distribution(std::move(out));
}

FixedPointResult solve_fixed_point(const TabularInstance& inst, double tol, int max_iters) {
  if (!(tol > 0.0)) throw InvalidInput("solver tolerance must be positive");
  if (max_iters < 1) throw InvalidInput("solver needs at least one iteration");
  QMatrix q(inst.state_count, inst.action_count, 0.0);
  Distribution mu = inst.initial_mean_field;
  std::vector<Residual> history;
  SolveStatus status = SolveStatus::max_iterations;
  int n = 0;
  while (n < max_iters) {
    ++n;
    const FrozenModel model(inst, mu);
    QMatrix q_next = h1_table(q, model, inst.discount);
    Distribution mu_next = push_forward(model, row_argmaxes(q_next), mu);
    const Residual res{sup_distance(q_next, q), l1_distance(mu_next, mu)};
    history.push_back(res);
    q = std::move(q_next);
    mu = std::move(mu_next);
    if (res.joint() < tol) {
      status = SolveStatus::converged;
      break;
    }
  }
  const auto greedy = row_argmaxes(q);
  return FixedPointResult{std::move(q), std::move(mu),
                          DiscretePolicy::deterministic(greedy, inst.action_count), n,
                          std::move(history), status};
}

QMatrix evaluate_policy(const TabularInstance& inst, const DiscretePolicy& pi,
                        const Distribution& mu, double tol) {
  const FrozenModel model(inst, mu);
  const int S = inst.state_count;
  const int A = inst.action_count;
  QMatrix q(S, A, 0.0);
  std::vector<double> v(static_cast<std::size_t>(S), 0.0);
  // Contraction at rate `discount`; the cap only guards against tol below
  // what floating point can deliver.
  for (int iter = 0; iter < 100000; ++iter) {
    QMatrix q_next(S, A);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) q_next(s, a) = model.backup(s, a, inst.discount, v);
    }
    const double delta = sup_distance(q_next, q);
    q = std::move(q_next);
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int a = 0; a < A; ++a) acc += pi.probability(s, a) * q(s, a);
      v[static_cast<std::size_t>(s)] = acc;
    }
    if (delta < tol) break;
  }
  return q;
}

DmfeReport verify_dmfe(const TabularInstance& inst, const DiscretePolicy& pi,
                       const Distribution& mu, double tol) {
  const QMatrix q_pi = evaluate_policy(inst, pi, mu, 1e-12);
  const FrozenModel model(inst, mu);
  const auto greedy = greedy_values(q_pi);
  double br = 0.0;
  for (int s = 0; s < inst.state_count; ++s) {
    double v_pi = 0.0;
    for (int a = 0; a < inst.action_count; ++a) v_pi += pi.probability(s, a) * q_pi(s, a);
    for (int a = 0; a < inst.action_count; ++a) {
      br = std::max(br, model.backup(s, a, inst.discount, greedy) - v_pi);
    }
  }
  DmfeReport report;
  report.best_response_residual = br;
  report.consistency_residual = l1_distance(mu, propagate(inst, pi, mu, mu));
  report.tolerance = tol;
  report.best_response_ok = report.best_response_residual < tol;
  report.consistency_ok = report.consistency_residual < tol;
  return report;
}

OccupancyTable occupancy_measure(const TabularInstance& inst, const DiscretePolicy& pi,
                                 const Distribution& mu, double truncation_tol) {
  if (!(truncation_tol > 0.0)) throw InvalidInput("truncation tolerance must be positive");
  const double cutoff = truncation_tol * (1.0 - inst.discount);
  OccupancyTable nu(inst.state_count, inst.action_count, 0.0);
  Distribution state = inst.initial_mean_field;
  double weight = 1.0;
  while (weight >= cutoff) {
    for (int s = 0; s < inst.state_count; ++s) {
      for (int a = 0; a < inst.action_count; ++a) nu(s, a) += weight * state[s] * pi.probability(s, a);
    }
    weight *= inst.discount;
    if (weight < cutoff) break;
    state = propagate(inst, pi, mu, state);
  }
  return nu;
}

DiscretePolicy markovize(const TabularInstance& inst, const OccupancyTable& nu,
                         const DiscretePolicy& fallback) {
  if (nu.state_count() != inst.state_count || nu.action_count() != inst.action_count) {
    throw InvalidInput("occupancy table shape does not match the instance");
  }
  if (fallback.state_count() != inst.state_count || fallback.action_count() != inst.action_count) {
    throw InvalidInput("fallback policy shape does not match the instance");
  }
  std::vector<Distribution> rows;
  rows.reserve(static_cast<std::size_t>(inst.state_count));
  for (int s = 0; s < inst.state_count; ++s) {
    double marginal = 0.0;
    for (int a = 0; a < inst.action_count; ++a) {
      if (nu(s, a) < 0.0) throw InvalidInput("occupancy entries must be non-negative");
      marginal += nu(s, a);
    }
    if (marginal > 0.0) {
      std::vector<double> w(static_cast<std::size_t>(inst.action_count));
      for (int a = 0; a < inst.action_count; ++a) w[static_cast<std::size_t>(a)] = nu(s, a) / marginal;
      rows.emplace_back(std::move(w));
    } else {
      rows.push_back(fallback.row(s));
    }
  }
  return DiscretePolicy(std::move(rows));
}

ContractionWitness contraction_witness(const FixedPointResult& result, int from_iteration) {
  ContractionWitness w;
  const auto& h = result.residual_history;
  for (std::size_t i = 0; i + 1 < h.size(); ++i) {
    const double prev = h[i].joint();
    w.ratios.push_back(prev > 0.0 ? h[i + 1].joint() / prev : 0.0);
  }
  const std::size_t start = static_cast<std::size_t>(std::max(from_iteration, 1) - 1);
  w.non_increasing = true;
  for (std::size_t i = start; i + 1 < h.size(); ++i) {
    if (h[i + 1].joint() > h[i].joint()) w.non_increasing = false;
  }
  if (h.size() > start + 1 && h[start].joint() > 0.0) {
    const double steps = static_cast<double>(h.size() - 1 - start);
    w.geometric_mean_ratio = std::pow(h.back().joint() / h[start].joint(), 1.0 / steps);
    w.contracting = w.geometric_mean_ratio < 1.0;
  }
  return w;
}

Distribution random_distribution(int size, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(static_cast<std::size_t>(size));
  double total = 0.0;
  for (double& x : w) {
    x = expo(rng);
    total += x;
  }
  for (double& x : w) x /= total;
  return Distribution(std::move(w));
}

DiagnosticsReport estimate_lipschitz(const TabularInstance& inst, int samples, std::uint64_t seed) {
  if (samples < 2) throw InvalidInput("lipschitz estimate needs at least two samples");
  Rng rng(seed);
  DiagnosticsReport report;
  report.samples = samples;
  for (int i = 0; i < samples; ++i) {
    const Distribution mu = random_distribution(inst.state_count, rng);
    const Distribution nu = random_distribution(inst.state_count, rng);
    const double w1 = 0.5 * l1_distance(mu, nu);
    if (w1 < 1e-12) continue;
    for (int s = 0; s < inst.state_count; ++s) {
      for (int a = 0; a < inst.action_count; ++a) {
        const double dr = std::abs(inst.reward(s, a, mu) - inst.reward(s, a, nu));
        const double dp = 0.5 * l1_distance(inst.transition(s, a, mu), inst.transition(s, a, nu));
        report.reward_lipschitz = std::max(report.reward_lipschitz, dr / w1);
        report.transition_lipschitz = std::max(report.transition_lipschitz, dp / w1);
      }
    }
  }
  report.mean_field_independent = report.reward_lipschitz == 0.0 && report.transition_lipschitz == 0.0;
  return report;
}

namespace {

void write_row(std::ostream& out, std::string_view tag, int index, std::span<const double> values) {
  out << tag << ' ' << index;
  for (double v : values) out << ' ' << text::format_double(v);
  out << '\n';
}

}  // namespace

void write_report(std::ostream& out, const TabularInstance& inst, const FixedPointResult& result,
                  const DmfeReport& check) {
  out << "# dmfg fixed-point report v1\n";
  out << "instance " << (inst.name.empty() ? "unnamed" : inst.name) << '\n';
  out << "status " << (result.converged() ? "converged" : "max_iterations") << '\n';
  out << "iterations " << result.iterations << '\n';
  const Residual last = result.residual_history.empty() ? Residual{} : result.residual_history.back();
  out << "final_q_delta " << text::format_double(last.q_delta) << '\n';
  out << "final_mu_delta " << text::format_double(last.mu_delta) << '\n';
  out << "best_response_residual " << text::format_double(check.best_response_residual) << '\n';
  out << "consistency_residual " << text::format_double(check.consistency_residual) << '\n';
  out << "dmfe " << (check.passed() ? "passed" : "failed") << '\n';
  out << "states " << inst.state_count << '\n';
  out << "actions " << inst.action_count << '\n';
  out << "mu";
  for (double w : result.mu_star.weights()) out << ' ' << text::format_double(w);
  out << '\n';
  for (int s = 0; s < inst.state_count; ++s) write_row(out, "policy", s, result.policy_star.row(s).weights());
  for (int s = 0; s < inst.state_count; ++s) write_row(out, "q", s, result.q_star.row(s));
  for (std::size_t i = 0; i < result.residual_history.size(); ++i) {
    const auto& r = result.residual_history[i];
    out << "residual " << (i + 1) << ' ' << text::format_double(r.q_delta) << ' '
        << text::format_double(r.mu_delta) << '\n';
  }
}

SolutionReport read_report(std::istream& in) {
  std::string name = "unnamed";
  std::optional<Distribution> mu;
  std::vector<std::pair<int, Distribution>> rows;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw InvalidInput("report line " + std::to_string(line_no) + ": " + what);
  };
  auto parse_values = [&](std::span<const std::string_view> tokens) {
    std::vector<double> v;
    for (auto t : tokens) {
      auto d = text::parse_double(t);
      if (!d) fail("bad number '" + std::string(t) + "'");
      v.push_back(*d);
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = text::split_whitespace(line);
    if (tokens.empty() || tokens[0].starts_with('#')) continue;
    if (tokens[0] == "instance" && tokens.size() >= 2) {
      name = std::string(tokens[1]);
    } else if (tokens[0] == "mu") {
      mu.emplace(parse_values(std::span(tokens).subspan(1)));
    } else if (tokens[0] == "policy") {
      if (tokens.size() < 3) fail("policy row needs a state index and probabilities");
      auto s = text::parse_int(tokens[1]);
      if (!s) fail("bad state index");
      rows.emplace_back(static_cast<int>(*s), Distribution(parse_values(std::span(tokens).subspan(2))));
    }
  }
  if (!mu) throw InvalidInput("report has no mu line");
  if (rows.empty()) throw InvalidInput("report has no policy rows");
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Distribution> policy_rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i)) throw InvalidInput("report policy rows are not contiguous");
    policy_rows.push_back(rows[i].second);
  }
  return SolutionReport{name, DiscretePolicy(std::move(policy_rows)), std::move(*mu)};
}

}  // namespace dmfg::tabular
