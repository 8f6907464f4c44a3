#ifndef DMFG_TABULAR_HPP
#define DMFG_TABULAR_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dmfg/core.hpp"

namespace dmfg::tabular {

/// Dense (state, action) table of reals. Row-major.
class StateActionTable {
 public:
  StateActionTable(int state_count, int action_count, double fill = 0.0);

  int state_count() const { return states_; }
  int action_count() const { return actions_; }

  double& operator()(int s, int a) { return data_[index(s, a)]; }
  double operator()(int s, int a) const { return data_[index(s, a)]; }
  std::span<const double> row(int s) const {
    return {data_.data() + index(s, 0), static_cast<std::size_t>(actions_)};
  }

  double row_max(int s) const;
  /// Lowest action index attaining the row maximum.
  int row_argmax(int s) const;
  double total() const;

  /// max |a - b| over all entries.
  friend double sup_distance(const StateActionTable& a, const StateActionTable& b);

 private:
  std::size_t index(int s, int a) const {
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(actions_) +
           static_cast<std::size_t>(a);
  }

  int states_;
  int actions_;
  std::vector<double> data_;
};

using QMatrix = StateActionTable;
using OccupancyTable = StateActionTable;

using TransitionFn = std::function<Distribution(int s, int a, const Distribution& mu)>;
using RewardFn = std::function<double(int s, int a, const Distribution& mu)>;

/**
 * A finite decentralized mean field game seen from one agent: state and
 * action sets, mean-field dependent dynamics and reward, discount and the
 * initial state mean field.
 */
struct TabularInstance {
  std::string name;
  int state_count = 0;
  int action_count = 0;
  double discount = 0.0;
  /// Declared upper bound on the reward; rewards live in [0, reward_max].
  double reward_max = 0.0;
  Distribution initial_mean_field = Distribution::uniform(1);
  TransitionFn transition;
  RewardFn reward;

  /// Structural checks plus spot checks of transition validity and reward
  /// bounds on `samples` random mean fields. Throws InvalidInput.
  void validate(int samples = 8, std::uint64_t seed = 0) const;
};

/// One Bellman-optimality sweep at a fixed mean field:
/// (H1 Q)(s,a) = r(s,a,mu) + discount * sum_s' max_a' Q(s',a') p(s'|s,a,mu).
QMatrix apply_h1(const QMatrix& q, const Distribution& mu, const TabularInstance& inst);

/// Greedy maximizer of the H1 objective, lowest index on ties.
std::vector<int> h1_maximizer(const QMatrix& q, const Distribution& mu,
                              const TabularInstance& inst);

/// Mean field propagated one step under the H1 maximizer.
Distribution apply_h2(const QMatrix& q, const Distribution& mu, const TabularInstance& inst);

/// One step of the mean-field flow: sum_s sum_a p(.|s,a,transition_mu) pi(a|s) state(s).
Distribution propagate(const TabularInstance& inst, const DiscretePolicy& pi,
                       const Distribution& transition_mu, const Distribution& state);

struct Residual {
  double q_delta = 0.0;   ///< sup-norm change of Q
  double mu_delta = 0.0;  ///< L1 change of mu
  double joint() const { return q_delta + mu_delta; }
};

enum class SolveStatus { converged, max_iterations };

struct FixedPointResult {
  QMatrix q_star;
  Distribution mu_star;
  DiscretePolicy policy_star;
  int iterations = 0;
  std::vector<Residual> residual_history;
  SolveStatus status = SolveStatus::max_iterations;

  bool converged() const { return status == SolveStatus::converged; }
};

/**
 * Joint fixed-point iteration (Q, mu) <- (H1(Q, mu), H2(Q, mu)) from Q = 0
 * and the instance's initial mean field. Stops once the sum of the sup-norm
 * Q change and the L1 mu change falls below `tol` (so each of them does too);
 * otherwise returns after
 * `max_iters` with status max_iterations. The returned policy is greedy in
 * q_star.
 */
FixedPointResult solve_fixed_point(const TabularInstance& inst, double tol, int max_iters);

/// Action values of `pi` with the mean field frozen at `mu`, by iterative
/// policy evaluation until the sup-norm change is below `tol`.
QMatrix evaluate_policy(const TabularInstance& inst, const DiscretePolicy& pi,
                        const Distribution& mu, double tol = 1e-12);

struct DmfeReport {
  /// sup_{s,a} [r + discount * sum max Q_pi * p] - V_pi(s); zero iff pi is
  /// a best response to mu.
  double best_response_residual = 0.0;
  /// L1 distance between mu and its one-step image under pi.
  double consistency_residual = 0.0;
  double tolerance = 0.0;
  bool best_response_ok = false;
  bool consistency_ok = false;
  bool passed() const { return best_response_ok && consistency_ok; }
};

DmfeReport verify_dmfe(const TabularInstance& inst, const DiscretePolicy& pi,
                       const Distribution& mu, double tol);

/**
 * Discounted state-action occupancy nu(s,a) = sum_t discount^t P(s_t=s, a_t=a)
 * starting from the initial mean field with transitions evaluated at the
 * frozen mean field `mu`. Truncated at the first t with
 * discount^t < truncation_tol * (1 - discount).
 */
OccupancyTable occupancy_measure(const TabularInstance& inst, const DiscretePolicy& pi,
                                 const Distribution& mu, double truncation_tol);

/// Markov policy with pi(a|s) = nu(s,a) / sum_a nu(s,a); rows with zero
/// state mass take the fallback row.
DiscretePolicy markovize(const TabularInstance& inst, const OccupancyTable& nu,
                         const DiscretePolicy& fallback);

struct ContractionWitness {
  std::vector<double> ratios;  ///< joint[i+1] / joint[i]
  double geometric_mean_ratio = 0.0;
  bool non_increasing = false;  ///< from the configured start iteration on
  bool contracting = false;     ///< geometric_mean_ratio < 1
};

/// Residual ratios of a solve, checked from 1-based iteration `from_iteration`.
ContractionWitness contraction_witness(const FixedPointResult& result, int from_iteration = 2);

struct DiagnosticsReport {
  /// Empirical sup of |r(s,a,mu) - r(s,a,mu')| / W1(mu, mu').
  double reward_lipschitz = 0.0;
  /// Empirical sup of W1(p(.|s,a,mu), p(.|s,a,mu')) / W1(mu, mu').
  double transition_lipschitz = 0.0;
  int samples = 0;
  bool mean_field_independent = false;
  ContractionWitness contraction;
};

/**
 * Random-pair estimate of the reward and transition Lipschitz constants in
 * the mean field. Distances are W1 under the unit discrete metric, which is
 * half the L1 distance. Deterministic given the seed.
 */
DiagnosticsReport estimate_lipschitz(const TabularInstance& inst, int samples, std::uint64_t seed);

/// Uniform draw from the probability simplex.
Distribution random_distribution(int size, Rng& rng);

/// Plain text report of a solve and its verification.
void write_report(std::ostream& out, const TabularInstance& inst, const FixedPointResult& result,
                  const DmfeReport& check);

struct SolutionReport {
  std::string instance_name;
  DiscretePolicy policy;
  Distribution mean_field;
};

/// Reads back the policy and mean field written by write_report.
SolutionReport read_report(std::istream& in);

}  // namespace dmfg::tabular

#endif  // DMFG_TABULAR_HPP
