#include "dmfg/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dmfg {

Distribution::Distribution(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw InvalidInput("distribution needs a non-empty support");
  double total = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const double w = weights_[i];
    if (!std::isfinite(w) || w < 0.0) {
      throw InvalidInput("distribution weight " + std::to_string(i) + " is negative or non-finite");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > kRenormalizeTolerance) {
    throw InvalidInput("distribution mass " + std::to_string(total) + " is not 1");
  }
  if (total != 1.0) {
    for (double& w : weights_) w /= total;
  }
}

Distribution Distribution::uniform(int size) {
  if (size <= 0) throw InvalidInput("uniform distribution needs a positive size");
  return Distribution(std::vector<double>(static_cast<std::size_t>(size), 1.0 / size));
}

Distribution Distribution::point_mass(int size, int index) {
  if (index < 0 || index >= size) throw InvalidInput("point mass index out of range");
  std::vector<double> w(static_cast<std::size_t>(size), 0.0);
  w[static_cast<std::size_t>(index)] = 1.0;
  return Distribution(std::move(w));
}

int Distribution::argmax() const {
  return static_cast<int>(std::max_element(weights_.begin(), weights_.end()) - weights_.begin());
}

DiscretePolicy::DiscretePolicy(std::vector<Distribution> rows) : rows_(std::move(rows)) {
  if (rows_.empty()) throw InvalidInput("policy needs at least one state");
  const int width = rows_.front().size();
  for (const auto& r : rows_) {
    if (r.size() != width) throw InvalidInput("policy rows have different action counts");
  }
}

DiscretePolicy DiscretePolicy::uniform(int state_count, int action_count) {
  return DiscretePolicy(std::vector<Distribution>(static_cast<std::size_t>(state_count),
                                                  Distribution::uniform(action_count)));
}

DiscretePolicy DiscretePolicy::deterministic(std::span<const int> actions, int action_count) {
  std::vector<Distribution> rows;
  rows.reserve(actions.size());
  for (int a : actions) rows.push_back(Distribution::point_mass(action_count, a));
  return DiscretePolicy(std::move(rows));
}

Distribution boltzmann_policy(std::span<const double> q, double inverse_temperature) {
  if (q.empty()) throw InvalidInput("boltzmann policy over an empty action set");
  if (!(inverse_temperature > 0.0) || !std::isfinite(inverse_temperature)) {
    throw InvalidInput("boltzmann inverse temperature must be positive and finite");
  }
  for (double v : q) {
    if (!std::isfinite(v)) throw InvalidInput("boltzmann policy got a non-finite action value");
  }
  const double top = *std::max_element(q.begin(), q.end());
  std::vector<double> w(q.size());
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    w[i] = std::exp(inverse_temperature * (q[i] - top));
    total += w[i];
  }
  for (double& x : w) x /= total;
  return Distribution(std::move(w));
}

double l1_distance(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw InvalidInput("l1 distance between different supports");
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

std::optional<Distribution> one_hot_mean(std::span<const int> actions, int action_count) {
  if (action_count <= 0) throw InvalidInput("action count must be positive");
  if (actions.empty()) return std::nullopt;
  std::vector<double> counts(static_cast<std::size_t>(action_count), 0.0);
  for (int a : actions) {
    if (a < 0 || a >= action_count) {
      throw InvalidInput("action " + std::to_string(a) + " outside [0, " +
                         std::to_string(action_count) + ")");
    }
    counts[static_cast<std::size_t>(a)] += 1.0;
  }
  const double n = static_cast<double>(actions.size());
  for (double& c : counts) c /= n;
  return Distribution(std::move(counts));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int sample_index(const Distribution& d, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (int i = 0; i < d.size(); ++i) {
    acc += d[i];
    if (u < acc) return i;
  }
  // Float drift can leave u above the final partial sum.
  for (int i = d.size() - 1; i >= 0; --i) {
    if (d[i] > 0.0) return i;
  }
  return d.size() - 1;
}

}  // namespace dmfg
