#ifndef DMFG_LEARNERS_HPP
#define DMFG_LEARNERS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmfg/core.hpp"
#include "dmfg/nn.hpp"

namespace dmfg::learners {

enum class Algorithm { dmfg_ql, dmfg_ac, il, mfq, mfac, scripted };

std::string to_string(Algorithm a);
/// Accepts the tags printed by to_string; the error lists the valid ones.
Algorithm parse_algorithm(std::string_view tag);
bool uses_estimator(Algorithm a);
bool is_actor_critic(Algorithm a);
/// Q or critic input includes a mean-field vector.
bool conditions_on_mean_field(Algorithm a);

struct Experience {
  std::vector<double> obs;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_obs;  ///< empty when terminal
  Distribution mf_est = Distribution::uniform(1);
  Distribution next_mf_est = Distribution::uniform(1);
  bool terminal = false;
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  void push(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Experience& at(std::size_t i) const { return items_.at(i); }
  /// k distinct indices, uniform without replacement.
  std::vector<std::size_t> sample_indices(std::size_t k);

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Experience> items_;
  Rng rng_;
};

/// f(obs, previous observed mean) -> estimated current mean action.
class MeanFieldEstimator {
 public:
  MeanFieldEstimator(int obs_size, int width, const std::vector<int>& hidden, double learning_rate,
                     std::uint64_t seed, nn::Optimizer optimizer = nn::Optimizer::sgd);
  explicit MeanFieldEstimator(nn::DenseNet net);

  int width() const { return net_.output_size(); }
  Distribution estimate(std::span<const double> obs, const Distribution& prev_observed) const;
  /// One mse step toward `observed`; returns the pre-step loss.
  double train(std::span<const double> obs, const Distribution& prev_observed, const Distribution& observed);

  nn::DenseNet& net() { return net_; }
  const nn::DenseNet& net() const { return net_; }

 private:
  std::vector<double> input(std::span<const double> obs, const Distribution& prev) const;
  nn::DenseNet net_;
};

/// Linear from `start` to `end` over `episodes` episodes, then flat.
struct EpsilonSchedule {
  double start = 0.2;
  double end = 0.01;
  int episodes = 300;
  double value(int episode) const;
};

struct LearnerConfig {
  double learning_rate = 1e-2;  ///< Q networks
  double actor_learning_rate = 1e-4;
  double critic_learning_rate = 1e-2;
  double mf_learning_rate = 1e-2;
  double gamma = 0.9;
  double boltzmann_beta = 0.1;  ///< multiplies Q inside exp
  EpsilonSchedule epsilon;
  std::size_t buffer_capacity = 200000;
  int batch_size = 64;
  int updates_per_episode = 1;
  double tau = 1.0;
  /// Global gradient-norm cap for every network of the agent; 0 disables.
  double max_grad_norm = 10.0;
  std::vector<int> hidden = {32, 32};
  std::vector<int> mf_hidden = {50, 50};
  nn::Optimizer optimizer = nn::Optimizer::sgd;
  /// Scripted agents: fixed action, or -1 for uniform random.
  int scripted_action = 0;
};

struct StepReport {
  std::optional<double> mf_loss;
  std::optional<double> critic_loss;
};

struct EpisodeReport {
  std::optional<double> q_loss;  ///< mean over this episode's updates
  double epsilon = 0.0;          ///< value used during the episode
};

/**
 * One decentralized agent. It only ever sees its own observation, reward and
 * observed local mean action.
 *
 * Q variants (dmfg-ql, mfq, il) store experience and train from the replay
 * buffer at end_episode. Actor-critic variants (dmfg-ac, mfac) update on
 * every step from the current transition. dmfg-* act on the estimator's
 * current estimate; mfq and mfac act on the previous observed mean.
 */
class AgentLearner {
 public:
  AgentLearner(Algorithm algorithm, const LearnerConfig& config, int obs_size, int action_count,
               int mf_width, std::uint64_t seed);

  Algorithm algorithm() const { return algorithm_; }
  const LearnerConfig& config() const { return config_; }
  int action_count() const { return action_count_; }
  int obs_size() const { return obs_size_; }
  int mf_width() const { return mf_width_; }
  std::uint64_t seed() const { return seed_; }
  int episodes_done() const { return episodes_done_; }
  double epsilon() const;

  /// Resets the per-episode mean-field state to uniform.
  void begin_episode();
  /// Mean field fed to the Q network or critic on the next decision.
  const Distribution& policy_mean_field() const { return current_mf_; }
  const Distribution& previous_observed() const { return prev_observed_; }

  /// Exploring action (training phase).
  int act(std::span<const double> obs);
  /// Frozen action: argmax of Q or of the actor, lowest index on ties.
  int act_greedy(std::span<const double> obs) const;
  /// Training-phase action probabilities.
  Distribution action_distribution(std::span<const double> obs) const;

  /// Records the transition that followed the last act. `next_obs` is empty
  /// when the agent died. `observed` is nullopt when nobody was visible, in
  /// which case the previous observation is reused.
  StepReport observe(std::span<const double> obs, int action, double reward, std::span<const double> next_obs,
                     const std::optional<Distribution>& observed, bool terminal);

  /// Frozen-phase bookkeeping: moves the mean-field state forward exactly as
  /// observe does, without training or storing anything.
  void advance(std::span<const double> next_obs, const std::optional<Distribution>& observed);

  /// One minibatch Q update; nullopt when the buffer holds fewer than
  /// batch_size items or the agent has no Q network.
  std::optional<double> learn();
  /// Runs updates_per_episode learn calls, soft-updates the target and
  /// advances epsilon.
  EpisodeReport end_episode();

  std::vector<double> q_values(std::span<const double> obs, const Distribution& mf) const;
  /// TD target r + gamma * max_a Q_target(s', a, mu') (0 continuation when terminal).
  double td_target(const Experience& e) const;

  const std::optional<nn::DenseNet>& qnet() const { return qnet_; }
  const std::optional<nn::DenseNet>& target() const { return target_; }
  const std::optional<nn::DenseNet>& actor() const { return actor_; }
  const std::optional<nn::DenseNet>& critic() const { return critic_; }
  const std::optional<MeanFieldEstimator>& estimator() const { return estimator_; }
  std::optional<nn::DenseNet>& qnet() { return qnet_; }
  std::optional<nn::DenseNet>& target() { return target_; }
  std::optional<MeanFieldEstimator>& estimator() { return estimator_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;

  /// Writes agent{NNN}.{qnet|target|actor|critic|mf}.txt and agent{NNN}.manifest.txt.
  void save(const std::filesystem::path& dir, int agent_id) const;
  static AgentLearner load(const std::filesystem::path& dir, int agent_id, const LearnerConfig& config);

 private:
  std::vector<double> net_input(std::span<const double> obs, const Distribution& mf) const;
  double critic_value(std::span<const double> obs, const Distribution& mf) const;

  Algorithm algorithm_;
  LearnerConfig config_;
  int obs_size_;
  int action_count_;
  int mf_width_;
  std::uint64_t seed_;
  Rng rng_;
  int episodes_done_ = 0;
  std::optional<nn::DenseNet> qnet_, target_, actor_, critic_;
  std::optional<MeanFieldEstimator> estimator_;
  ReplayBuffer buffer_;
  Distribution current_mf_;
  Distribution prev_observed_;
  std::vector<double> episode_losses_;
};

std::string agent_file(int agent_id, std::string_view role);

}  // namespace dmfg::learners

#endif  // DMFG_LEARNERS_HPP
