#include "dmfg/learners.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "dmfg/text.hpp"

namespace dmfg::learners {

namespace {

constexpr char kManifestMagic[] = "dmfg-agent";

std::vector<nn::LayerSpec> stack(const std::vector<int>& hidden, int out, nn::Activation last) {
  std::vector<nn::LayerSpec> layers;
  for (int h : hidden) layers.push_back({h, nn::Activation::relu});
  layers.push_back({out, last});
  return layers;
}

nn::DenseNet load_net(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return nn::DenseNet::load(in);
}

void save_net(const nn::DenseNet& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  net.save(out);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::dmfg_ql: return "dmfg-ql";
    case Algorithm::dmfg_ac: return "dmfg-ac";
    case Algorithm::il: return "il";
    case Algorithm::mfq: return "mfq";
    case Algorithm::mfac: return "mfac";
    case Algorithm::scripted: return "scripted";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view tag) {
  for (Algorithm a : {Algorithm::dmfg_ql, Algorithm::dmfg_ac, Algorithm::il, Algorithm::mfq, Algorithm::mfac,
                      Algorithm::scripted}) {
    if (tag == to_string(a)) return a;
  }
  throw InvalidInput("unknown algorithm '" + std::string(tag) +
                     "' (valid: dmfg-ql, dmfg-ac, il, mfq, mfac, scripted)");
}

bool uses_estimator(Algorithm a) { return a == Algorithm::dmfg_ql || a == Algorithm::dmfg_ac; }
bool is_actor_critic(Algorithm a) { return a == Algorithm::dmfg_ac || a == Algorithm::mfac; }
bool conditions_on_mean_field(Algorithm a) { return a != Algorithm::il && a != Algorithm::scripted; }

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw InvalidInput("replay capacity must be positive");
}

void ReplayBuffer::push(Experience e) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
  } else {
    items_[next_] = std::move(e);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t k) {
  const std::size_t n = items_.size();
  if (k > n) throw InvalidInput("cannot sample " + std::to_string(k) + " items from " + std::to_string(n));
  // Floyd's algorithm: k distinct uniform indices in O(k) draws.
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng_);
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
  return out;
}

MeanFieldEstimator::MeanFieldEstimator(int obs_size, int width, const std::vector<int>& hidden,
                                       double learning_rate, std::uint64_t seed, nn::Optimizer optimizer)
    : net_(obs_size + width, stack(hidden, width, nn::Activation::softmax), learning_rate, seed, optimizer) {}

MeanFieldEstimator::MeanFieldEstimator(nn::DenseNet net) : net_(std::move(net)) {
  if (net_.layers().back().activation != nn::Activation::softmax) {
    throw InvalidInput("estimator network must end in softmax");
  }
}

std::vector<double> MeanFieldEstimator::input(std::span<const double> obs, const Distribution& prev) const {
  if (prev.size() != width()) throw InvalidInput("previous mean field has the wrong width");
  std::vector<double> x(obs.begin(), obs.end());
  x.insert(x.end(), prev.weights().begin(), prev.weights().end());
  return x;
}

Distribution MeanFieldEstimator::estimate(std::span<const double> obs, const Distribution& prev_observed) const {
  return Distribution(net_.forward(input(obs, prev_observed)));
}

double MeanFieldEstimator::train(std::span<const double> obs, const Distribution& prev_observed,
                                 const Distribution& observed) {
  if (observed.size() != width()) throw InvalidInput("observed mean field has the wrong width");
  const auto x = input(obs, prev_observed);
  nn::Batch b;
  b.inputs = Eigen::Map<const nn::Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  b.targets = Eigen::Map<const nn::Matrix>(observed.weights().data(), 1, observed.size());
  return net_.train_step(b, nn::Loss::mse);
}

double EpsilonSchedule::value(int episode) const {
  if (episodes <= 1) return episode <= 0 ? start : end;
  if (episode >= episodes - 1) return end;
  const double frac = std::max(0.0, static_cast<double>(episode) / (episodes - 1));
  return start + (end - start) * frac;
}

AgentLearner::AgentLearner(Algorithm algorithm, const LearnerConfig& config, int obs_size, int action_count,
                           int mf_width, std::uint64_t seed)
    : algorithm_(algorithm),
      config_(config),
      obs_size_(obs_size),
      action_count_(action_count),
      mf_width_(mf_width),
      seed_(seed),
      rng_(derive_seed(seed, 0)),
      buffer_(config.buffer_capacity, derive_seed(seed, 6)),
      current_mf_(Distribution::uniform(mf_width)),
      prev_observed_(Distribution::uniform(mf_width)) {
  if (obs_size <= 0 || action_count <= 0 || mf_width <= 0) throw InvalidInput("learner sizes must be positive");
  if (action_count > mf_width) throw InvalidInput("mean-field width narrower than the action set");
  const int q_in = obs_size + (conditions_on_mean_field(algorithm) ? mf_width : 0);
  switch (algorithm) {
    case Algorithm::dmfg_ql:
    case Algorithm::mfq:
    case Algorithm::il:
      qnet_.emplace(q_in, stack(config.hidden, action_count, nn::Activation::linear), config.learning_rate,
                    derive_seed(seed, 1), config.optimizer);
      target_ = qnet_;
      break;
    case Algorithm::dmfg_ac:
    case Algorithm::mfac:
      actor_.emplace(obs_size, stack(config.hidden, action_count, nn::Activation::softmax),
                     config.actor_learning_rate, derive_seed(seed, 3), config.optimizer);
      critic_.emplace(q_in, stack(config.hidden, 1, nn::Activation::linear), config.critic_learning_rate,
                      derive_seed(seed, 4), config.optimizer);
      break;
    case Algorithm::scripted:
      if (config.scripted_action >= action_count) throw InvalidInput("scripted action outside the action set");
      break;
  }
  if (uses_estimator(algorithm)) {
    estimator_.emplace(obs_size, mf_width, config.mf_hidden, config.mf_learning_rate, derive_seed(seed, 5),
                       config.optimizer);
  }
  for (auto* net : {&qnet_, &target_, &actor_, &critic_}) {
    if (*net) (*net)->set_max_grad_norm(config.max_grad_norm);
  }
  if (estimator_) estimator_->net().set_max_grad_norm(config.max_grad_norm);
}

double AgentLearner::epsilon() const { return config_.epsilon.value(episodes_done_); }

void AgentLearner::begin_episode() {
  current_mf_ = Distribution::uniform(mf_width_);
  prev_observed_ = Distribution::uniform(mf_width_);
  episode_losses_.clear();
}

std::vector<double> AgentLearner::net_input(std::span<const double> obs, const Distribution& mf) const {
  if (static_cast<int>(obs.size()) != obs_size_) {
    throw InvalidInput("observation has " + std::to_string(obs.size()) + " entries, expected " +
                       std::to_string(obs_size_));
  }
  std::vector<double> x(obs.begin(), obs.end());
  if (conditions_on_mean_field(algorithm_)) x.insert(x.end(), mf.weights().begin(), mf.weights().end());
  return x;
}

std::vector<double> AgentLearner::q_values(std::span<const double> obs, const Distribution& mf) const {
  if (!qnet_) throw InvalidInput(to_string(algorithm_) + " has no Q network");
  return qnet_->forward(net_input(obs, mf));
}

double AgentLearner::critic_value(std::span<const double> obs, const Distribution& mf) const {
  return critic_->forward(net_input(obs, mf)).front();
}

Distribution AgentLearner::action_distribution(std::span<const double> obs) const {
  if (algorithm_ == Algorithm::scripted) {
    if (config_.scripted_action < 0) return Distribution::uniform(action_count_);
    return Distribution::point_mass(action_count_, config_.scripted_action);
  }
  if (actor_) return Distribution(actor_->forward(std::vector<double>(obs.begin(), obs.end())));
  const auto q = q_values(obs, current_mf_);
  const Distribution soft = boltzmann_policy(q, config_.boltzmann_beta);
  const double eps = epsilon();
  std::vector<double> p(static_cast<std::size_t>(action_count_));
  for (int a = 0; a < action_count_; ++a) {
    p[static_cast<std::size_t>(a)] = eps / action_count_ + (1.0 - eps) * soft[a];
  }
  return Distribution(std::move(p));
}

int AgentLearner::act(std::span<const double> obs) {
  if (algorithm_ == Algorithm::scripted) {
    if (config_.scripted_action >= 0) return config_.scripted_action;
    std::uniform_int_distribution<int> pick(0, action_count_ - 1);
    return pick(rng_);
  }
  if (actor_) {
    if (static_cast<int>(obs.size()) != obs_size_) throw InvalidInput("observation has the wrong size");
    return sample_index(Distribution(actor_->forward(obs)), rng_);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng_) < epsilon()) {
    std::uniform_int_distribution<int> pick(0, action_count_ - 1);
    return pick(rng_);
  }
  return sample_index(boltzmann_policy(q_values(obs, current_mf_), config_.boltzmann_beta), rng_);
}

int AgentLearner::act_greedy(std::span<const double> obs) const {
  if (algorithm_ == Algorithm::scripted) {
    return config_.scripted_action >= 0 ? config_.scripted_action : 0;
  }
  std::vector<double> v;
  if (actor_) {
    if (static_cast<int>(obs.size()) != obs_size_) throw InvalidInput("observation has the wrong size");
    v = actor_->forward(obs);
  } else {
    v = q_values(obs, current_mf_);
  }
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

StepReport AgentLearner::observe(std::span<const double> obs, int action, double reward,
                                 std::span<const double> next_obs, const std::optional<Distribution>& observed,
                                 bool terminal) {
  StepReport report;
  if (action < 0 || action >= action_count_) throw InvalidInput("action outside the agent's action set");
  if (observed && observed->size() != mf_width_) throw InvalidInput("observed mean field has the wrong width");
  const Distribution seen = observed ? *observed : prev_observed_;
  const bool has_next = !terminal && !next_obs.empty();

  Distribution next_mf = current_mf_;
  if (estimator_) {
    if (observed) report.mf_loss = estimator_->train(obs, prev_observed_, *observed);
    if (has_next) next_mf = estimator_->estimate(next_obs, seen);
  } else if (conditions_on_mean_field(algorithm_)) {
    next_mf = seen;
  }

  if (qnet_) {
    Experience e;
    e.obs.assign(obs.begin(), obs.end());
    e.action = action;
    e.reward = reward;
    if (has_next) e.next_obs.assign(next_obs.begin(), next_obs.end());
    e.mf_est = current_mf_;
    e.next_mf_est = next_mf;
    e.terminal = !has_next;
    buffer_.push(std::move(e));
  } else if (critic_) {
    const double y = reward + (has_next ? config_.gamma * critic_value(next_obs, next_mf) : 0.0);
    const auto x = net_input(obs, current_mf_);
    const double delta = y - critic_->forward(x).front();
    nn::Batch cb;
    cb.inputs = Eigen::Map<const nn::Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    cb.targets = nn::Matrix::Constant(1, 1, y);
    report.critic_loss = critic_->train_step(cb, nn::Loss::mse);
    nn::Batch ab;
    ab.inputs = Eigen::Map<const nn::Matrix>(obs.data(), 1, static_cast<Eigen::Index>(obs.size()));
    ab.targets = nn::Matrix::Zero(1, action_count_);
    ab.targets(0, action) = delta;
    actor_->train_step(ab, nn::Loss::weighted_log_prob);
    episode_losses_.push_back(*report.critic_loss);
  }

  current_mf_ = std::move(next_mf);
  prev_observed_ = seen;
  return report;
}

void AgentLearner::advance(std::span<const double> next_obs, const std::optional<Distribution>& observed) {
  const Distribution seen = observed ? *observed : prev_observed_;
  if (estimator_) {
    if (!next_obs.empty()) current_mf_ = estimator_->estimate(next_obs, seen);
  } else if (conditions_on_mean_field(algorithm_)) {
    current_mf_ = seen;
  }
  prev_observed_ = seen;
}

double AgentLearner::td_target(const Experience& e) const {
  if (e.terminal || e.next_obs.empty()) return e.reward;
  const auto q = target_->forward(net_input(e.next_obs, e.next_mf_est));
  return e.reward + config_.gamma * *std::max_element(q.begin(), q.end());
}

std::optional<double> AgentLearner::learn() {
  if (!qnet_) return std::nullopt;
  const auto k = static_cast<std::size_t>(config_.batch_size);
  if (k == 0 || buffer_.size() < k) return std::nullopt;
  const auto idx = buffer_.sample_indices(k);
  const int in = qnet_->input_size();
  nn::Batch b;
  b.inputs.resize(static_cast<Eigen::Index>(k), in);
  b.targets = nn::Matrix::Zero(static_cast<Eigen::Index>(k), action_count_);
  b.mask = nn::Matrix::Zero(static_cast<Eigen::Index>(k), action_count_);
  for (std::size_t r = 0; r < k; ++r) {
    const Experience& e = buffer_.at(idx[r]);
    const auto x = net_input(e.obs, e.mf_est);
    const auto row = static_cast<Eigen::Index>(r);
    for (int c = 0; c < in; ++c) b.inputs(row, c) = x[static_cast<std::size_t>(c)];
    b.targets(row, e.action) = td_target(e);
    b.mask(row, e.action) = 1.0;
  }
  const double loss = qnet_->train_step(b, nn::Loss::mse);
  episode_losses_.push_back(loss);
  return loss;
}

EpisodeReport AgentLearner::end_episode() {
  EpisodeReport report;
  report.epsilon = epsilon();
  if (qnet_) {
    for (int i = 0; i < config_.updates_per_episode; ++i) learn();
    nn::soft_update(*target_, *qnet_, config_.tau);
  }
  if (!episode_losses_.empty()) {
    double s = 0.0;
    for (double l : episode_losses_) s += l;
    report.q_loss = s / static_cast<double>(episode_losses_.size());
  }
  episode_losses_.clear();
  ++episodes_done_;
  return report;
}

std::size_t AgentLearner::parameter_count() const {
  std::size_t n = 0;
  for (const auto* net : {&qnet_, &target_, &actor_, &critic_}) {
    if (*net) n += (*net)->parameter_count();
  }
  if (estimator_) n += estimator_->net().parameter_count();
  return n;
}

std::uint64_t AgentLearner::checksum() const {
  std::uint64_t h = 0;
  std::uint64_t k = 1;
  for (const auto* net : {&qnet_, &target_, &actor_, &critic_}) {
    if (*net) h ^= derive_seed((*net)->checksum(), k);
    ++k;
  }
  if (estimator_) h ^= derive_seed(estimator_->net().checksum(), k);
  return h;
}

std::string agent_file(int agent_id, std::string_view role) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", agent_id);
  return "agent" + std::string(buf) + "." + std::string(role) + ".txt";
}

void AgentLearner::save(const std::filesystem::path& dir, int agent_id) const {
  std::filesystem::create_directories(dir);
  if (qnet_) save_net(*qnet_, dir / agent_file(agent_id, "qnet"));
  if (target_) save_net(*target_, dir / agent_file(agent_id, "target"));
  if (actor_) save_net(*actor_, dir / agent_file(agent_id, "actor"));
  if (critic_) save_net(*critic_, dir / agent_file(agent_id, "critic"));
  if (estimator_) save_net(estimator_->net(), dir / agent_file(agent_id, "mf"));
  std::ofstream out(dir / agent_file(agent_id, "manifest"));
  out << kManifestMagic << " v1\n"
      << "algorithm " << to_string(algorithm_) << '\n'
      << "seed " << seed_ << '\n'
      << "obs_size " << obs_size_ << '\n'
      << "action_count " << action_count_ << '\n'
      << "mf_width " << mf_width_ << '\n'
      << "episodes_done " << episodes_done_ << '\n'
      << "epsilon " << text::format_double(epsilon()) << '\n'
      << "scripted_action " << config_.scripted_action << '\n';
  if (!out) throw std::runtime_error("cannot write agent manifest in " + dir.string());
}

AgentLearner AgentLearner::load(const std::filesystem::path& dir, int agent_id, const LearnerConfig& config) {
  const auto manifest = dir / agent_file(agent_id, "manifest");
  std::ifstream in(manifest);
  if (!in) throw ConfigError("missing agent manifest " + manifest.string());
  std::map<std::string, std::string, std::less<>> kv;
  std::string line;
  std::getline(in, line);
  if (!line.starts_with(kManifestMagic)) throw ConfigError(manifest.string() + " is not an agent manifest");
  while (std::getline(in, line)) {
    const auto tok = text::split_whitespace(line);
    if (tok.size() >= 2) kv[std::string(tok[0])] = std::string(tok[1]);
  }
  auto integer = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(manifest.string() + " lacks '" + key + "'");
    const auto v = text::parse_int(it->second);
    if (!v) throw ConfigError(manifest.string() + ": bad value for '" + key + "'");
    return *v;
  };
  const Algorithm algorithm = parse_algorithm(kv.count("algorithm") ? kv["algorithm"] : "");
  LearnerConfig cfg = config;
  if (kv.count("scripted_action")) cfg.scripted_action = static_cast<int>(integer("scripted_action"));
  const auto seed_it = kv.find("seed");
  const std::uint64_t seed = seed_it == kv.end() ? 0 : std::stoull(seed_it->second);
  AgentLearner agent(algorithm, cfg, static_cast<int>(integer("obs_size")), static_cast<int>(integer("action_count")),
                     static_cast<int>(integer("mf_width")), seed);
  agent.episodes_done_ = static_cast<int>(integer("episodes_done"));
  if (agent.qnet_) agent.qnet_ = load_net(dir / agent_file(agent_id, "qnet"));
  if (agent.target_) agent.target_ = load_net(dir / agent_file(agent_id, "target"));
  if (agent.actor_) agent.actor_ = load_net(dir / agent_file(agent_id, "actor"));
  if (agent.critic_) agent.critic_ = load_net(dir / agent_file(agent_id, "critic"));
  if (agent.estimator_) agent.estimator_.emplace(load_net(dir / agent_file(agent_id, "mf")));
  return agent;
}

}  // namespace dmfg::learners
