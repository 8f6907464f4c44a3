#ifndef DMFG_CORE_HPP
#define DMFG_CORE_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmfg {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation diverged (non-finite values during training).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tolerance on the total mass of a Distribution after construction.
inline constexpr double kMassTolerance = 1e-9;
/// Inputs whose mass is further than this from 1 are rejected instead of
/// renormalized.
inline constexpr double kRenormalizeTolerance = 1e-6;

/**
 * Probability vector on {0, ..., size-1}.
 *
 * Used both for state mean fields and for mean actions over one-hot encoded
 * action sets. Immutable after construction.
 */
class Distribution {
 public:
  /// Validates and renormalizes. Throws InvalidInput on negative or
  /// non-finite weights, on an empty vector, or when the mass is more than
  /// kRenormalizeTolerance away from 1.
  explicit Distribution(std::vector<double> weights);

  static Distribution uniform(int size);
  static Distribution point_mass(int size, int index);

  int size() const { return static_cast<int>(weights_.size()); }
  double operator[](int i) const { return weights_[static_cast<std::size_t>(i)]; }
  std::span<const double> weights() const { return weights_; }

  /// Lowest index among the maximal weights.
  int argmax() const;

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  std::vector<double> weights_;
};

/// Per-state action distributions.
class DiscretePolicy {
 public:
  explicit DiscretePolicy(std::vector<Distribution> rows);

  static DiscretePolicy uniform(int state_count, int action_count);
  static DiscretePolicy deterministic(std::span<const int> actions, int action_count);

  int state_count() const { return static_cast<int>(rows_.size()); }
  int action_count() const { return rows_.front().size(); }
  const Distribution& row(int state) const { return rows_[static_cast<std::size_t>(state)]; }
  double probability(int state, int action) const { return row(state)[action]; }

 private:
  std::vector<Distribution> rows_;
};

/**
 * Boltzmann (softmax) policy over action values.
 *
 * The exponent is +inverse_temperature * q, so large inverse temperatures
 * concentrate mass on argmax(q) and small ones approach uniform. Computed
 * with max-subtraction, which makes the result invariant to adding a
 * constant to every entry of q.
 */
Distribution boltzmann_policy(std::span<const double> q, double inverse_temperature);

/// Sum of absolute differences. Throws InvalidInput on mismatched supports.
double l1_distance(const Distribution& a, const Distribution& b);

/// Empirical mean of one-hot encoded actions. Returns nullopt for an empty
/// list (empty neighbourhood); throws InvalidInput on out-of-range indices.
std::optional<Distribution> one_hot_mean(std::span<const int> actions, int action_count);

/// Deterministic stream derivation: splitmix64 of (master, stream).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

using Rng = std::mt19937_64;

/// Draws an index from a distribution.
int sample_index(const Distribution& d, Rng& rng);

}  // namespace dmfg

#endif  // DMFG_CORE_HPP
