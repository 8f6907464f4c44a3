#include "dmfg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "dmfg/text.hpp"

#ifndef DMFG_VERSION
#define DMFG_VERSION "unknown"
#endif

namespace dmfg::harness {

namespace fs = std::filesystem;
using learners::AgentLearner;
using learners::Algorithm;

namespace {

constexpr std::uint64_t kEpisodeStream = 0x5eed0001;

std::string opt(const std::optional<double>& v) { return v ? text::format_double(*v) : ""; }

struct EpisodeTotals {
  std::vector<double> mf_loss;
  std::vector<int> mf_count;
  std::vector<int> deaths;
  int steps = 0;
};

/// Runs one episode. In the training phase agents explore and learn; in the
/// frozen phase they act greedily and only track their mean-field state.
EpisodeTotals play(envs::Env& env, std::vector<AgentLearner*>& agents, bool training, std::ostream* trace) {
  const int n = env.agent_count();
  EpisodeTotals t;
  t.mf_loss.assign(static_cast<std::size_t>(n), 0.0);
  t.mf_count.assign(static_cast<std::size_t>(n), 0);
  t.deaths.assign(static_cast<std::size_t>(n), 0);
  std::optional<envs::TraceWriter> tracer;
  if (trace) tracer.emplace(*trace, env);
  for (auto* a : agents) a->begin_episode();
  std::vector<std::vector<double>> obs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) obs[static_cast<std::size_t>(i)] = env.observation(i);
  std::vector<int> actions(static_cast<std::size_t>(n), 0);
  while (!env.done()) {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!env.state().agents[k].alive) {
        actions[k] = 0;
        continue;
      }
      actions[k] = training ? agents[k]->act(obs[k]) : agents[k]->act_greedy(obs[k]);
    }
    std::vector<bool> was_alive(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) was_alive[static_cast<std::size_t>(i)] = env.state().agents[static_cast<std::size_t>(i)].alive;
    const envs::StepOutcome out = env.step(actions);
    ++t.steps;
    if (tracer) tracer->record(env, actions, out);
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!was_alive[k]) continue;
      const auto& o = out.agents[k];
      if (o.died) t.deaths[k] = 1;
      if (training) {
        const auto report = agents[k]->observe(obs[k], actions[k], o.reward, o.observation, o.observed_mean, o.died);
        if (report.mf_loss) {
          t.mf_loss[k] += *report.mf_loss;
          ++t.mf_count[k];
        }
      } else {
        agents[k]->advance(o.observation, o.observed_mean);
      }
      obs[k] = o.observation;
    }
  }
  return t;
}

std::vector<AgentLearner> make_agents(const RunConfig& config, const envs::Env& env, std::uint64_t seed,
                                      bool probe) {
  std::vector<AgentLearner> agents;
  for (const auto& spec : env.specs()) {
    Algorithm alg = config.algorithm_for(spec.id);
    learners::LearnerConfig lc = config.learner;
    if (probe && !learners::uses_estimator(alg)) {
      alg = Algorithm::scripted;
      lc.scripted_action = config.probe_opponent_action;
    }
    if (alg == Algorithm::scripted && lc.scripted_action >= spec.action_count) {
      throw ConfigError("scripted action " + std::to_string(lc.scripted_action) + " is outside agent " +
                        std::to_string(spec.id) + "'s " + std::to_string(spec.action_count) + " actions");
    }
    agents.emplace_back(alg, lc, envs::observation_size(spec.view_radius), spec.action_count,
                        env.mean_field_width(), derive_seed(seed, static_cast<std::uint64_t>(spec.id)));
  }
  return agents;
}

void write_manifest(const fs::path& path, const RunConfig& config, const std::string& run_id, std::uint64_t seed,
                    int episodes_completed, const std::optional<std::string>& error) {
  std::ofstream out(path);
  out << "# dmfg run manifest v1\n"
      << "code_version " << code_version() << '\n'
      << "run_id " << run_id << '\n'
      << "seed " << seed << '\n'
      << "episodes_completed " << episodes_completed << '\n'
      << "status " << (error ? "failed" : "complete") << '\n';
  if (error) {
    std::string one_line = *error;
    std::replace(one_line.begin(), one_line.end(), '\n', ' ');
    out << "error " << one_line << '\n';
  }
  out << "[settings]\n";
  for (const auto& [k, v] : config.settings) out << k << " = " << v << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

SeedRun train_seed(const RunConfig& config, std::uint64_t seed, const fs::path& out, bool probe,
                   const ProgressFn& progress, std::vector<double>* probe_series, std::vector<int>* probe_steps,
                   int* probe_agents) {
  SeedRun run;
  run.seed = seed;
  run.run_id = config.name + "-s" + std::to_string(seed);
  run.dir = out / run.run_id;
  fs::create_directories(run.dir);
  MetricsWriter metrics(run.dir / "metrics.csv");
  int completed = 0;
  std::vector<AgentLearner> agents;
  try {
    const envs::Env prototype(config.env, config.grid, derive_seed(seed, kEpisodeStream));
    agents = make_agents(config, prototype, seed, probe);
    std::vector<AgentLearner*> ptrs;
    for (auto& a : agents) ptrs.push_back(&a);
    if (probe_agents) {
      *probe_agents = static_cast<int>(std::count_if(agents.begin(), agents.end(), [](const AgentLearner& a) {
        return learners::uses_estimator(a.algorithm());
      }));
      if (*probe_agents == 0) throw ConfigError("the probe needs at least one dmfg-ql or dmfg-ac agent");
    }
    if (config.trace) fs::create_directories(run.dir / "trace");
    for (int ep = 0; ep < config.episodes; ++ep) {
      const auto start = std::chrono::steady_clock::now();
      envs::Env env(config.env, config.grid, derive_seed(derive_seed(seed, kEpisodeStream), static_cast<std::uint64_t>(ep)));
      std::optional<std::ofstream> trace;
      if (config.trace) trace.emplace(run.dir / "trace" / ("episode" + std::to_string(ep) + ".jsonl"));
      const EpisodeTotals totals = play(env, ptrs, true, trace ? &*trace : nullptr);
      std::vector<learners::EpisodeReport> reports;
      for (auto& a : agents) reports.push_back(a.end_episode());
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      run.returns.push_back(env.returns());
      double probe_sum = 0.0;
      for (int i = 0; i < env.agent_count(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        MetricsRecord r;
        r.run_id = run.run_id;
        r.phase = "train";
        r.seed = seed;
        r.episode = ep;
        r.agent_id = i;
        r.algorithm = learners::to_string(agents[k].algorithm());
        r.episode_return = env.returns()[k];
        r.kills = env.kills()[k];
        r.deaths = totals.deaths[k];
        r.epsilon = reports[k].epsilon;
        r.q_loss = reports[k].q_loss;
        if (learners::uses_estimator(agents[k].algorithm())) {
          r.mf_loss = totals.mf_loss[k];
          probe_sum += totals.mf_loss[k];
        }
        r.wall_ms = wall;
        metrics.write(r);
      }
      metrics.flush();
      if (probe_series) {
        probe_series->push_back(probe_sum / std::max(1, probe_agents ? *probe_agents : 1));
        probe_steps->push_back(totals.steps);
      }
      completed = ep + 1;
      if (config.checkpoint_every > 0 && completed % config.checkpoint_every == 0) {
        for (std::size_t i = 0; i < agents.size(); ++i) agents[i].save(run.dir, static_cast<int>(i));
      }
      if (progress) {
        double mean = 0.0;
        for (double v : env.returns()) mean += v;
        mean /= std::max(1, env.agent_count());
        std::ostringstream line;
        line << run.run_id << " episode " << completed << "/" << config.episodes << " steps " << totals.steps
             << " mean_return " << text::format_double(std::round(mean * 1000.0) / 1000.0);
        progress(line.str());
      }
    }
    for (std::size_t i = 0; i < agents.size(); ++i) agents[i].save(run.dir, static_cast<int>(i));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    run.error = e.what();
    run.numerical_failure = dynamic_cast<const NumericalError*>(&e) != nullptr;
    // Keep the last completed state of every agent that exists.
    for (std::size_t i = 0; i < agents.size(); ++i) {
      try {
        agents[i].save(run.dir, static_cast<int>(i));
      } catch (const std::exception&) {
      }
    }
  }
  write_manifest(run.dir / "manifest.txt", config, run.run_id, seed, completed, run.error);
  return run;
}

}  // namespace

std::string code_version() { return DMFG_VERSION; }

std::string format_record(const MetricsRecord& r) {
  std::ostringstream s;
  s << r.run_id << ',' << r.phase << ',' << r.seed << ',' << r.episode << ',' << r.agent_id << ',' << r.algorithm
    << ',' << text::format_double(r.episode_return) << ',' << r.kills << ',' << r.deaths << ','
    << text::format_double(r.epsilon) << ',' << opt(r.q_loss) << ',' << opt(r.mf_loss) << ','
    << text::format_double(std::round(r.wall_ms * 1000.0) / 1000.0);
  return s.str();
}

MetricsWriter::MetricsWriter(const fs::path& path) : out_(path, std::ios::binary), path_(path) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << kMetricsHeader << '\n';
}

void MetricsWriter::write(const MetricsRecord& r) { out_ << format_record(r) << '\n'; }

void MetricsWriter::flush() {
  out_.flush();
  if (!out_) throw std::runtime_error("write failed for " + path_.string());
}

bool TrainResult::ok() const {
  return std::none_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.error.has_value(); });
}

TrainResult train_selfplay(const RunConfig& config, const fs::path& out, const ProgressFn& progress) {
  TrainResult result;
  result.runs.resize(config.seeds.size());
  std::mutex progress_mutex;
  ProgressFn guarded;
  if (progress) {
    guarded = [&](const std::string& line) {
      std::lock_guard lock(progress_mutex);
      progress(line);
    };
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < config.seeds.size(); i = next++) {
      try {
        result.runs[i] = train_seed(config, config.seeds[i], out, false, guarded, nullptr, nullptr, nullptr);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, config.threads));
  if (workers == 1 || config.seeds.size() == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, config.seeds.size()); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return result;
}

CheckpointSet CheckpointSet::parse(const std::string& spec) {
  CheckpointSet s;
  s.label = spec;
  if (spec.starts_with("scripted:")) {
    const std::string what = spec.substr(9);
    if (what == "random") {
      s.scripted_action = -1;
    } else {
      const auto v = text::parse_int(what);
      if (!v || *v < 0 || *v >= envs::kMaxActionCount) {
        throw ConfigError("bad scripted checkpoint '" + spec + "' (use scripted:<action> or scripted:random)");
      }
      s.scripted_action = static_cast<int>(*v);
    }
    return s;
  }
  std::string path = spec;
  if (const auto at = spec.rfind('@'); at != std::string::npos) {
    const auto team = text::parse_int(std::string_view(spec).substr(at + 1));
    if (!team || *team < 0) throw ConfigError("bad team suffix in checkpoint '" + spec + "' (use <dir>@<team>)");
    s.source_team = static_cast<int>(*team);
    path = spec.substr(0, at);
  }
  s.dir = path;
  if (!fs::is_directory(s.dir)) throw ConfigError("checkpoint directory " + path + " does not exist");
  s.label = s.dir.filename().string();
  if (s.label.empty()) s.label = s.dir.parent_path().filename().string();
  if (s.source_team) s.label += "@" + std::to_string(*s.source_team);
  return s;
}

double SetScore::win_rate() const { return games ? (wins + 0.5 * draws) / games : 0.0; }

namespace {

AgentLearner load_for_slot(const RunConfig& config, const CheckpointSet& set, int source_id,
                           const envs::AgentSpec& spec, int mf_width, std::uint64_t seed) {
  if (set.scripted_action) {
    learners::LearnerConfig lc = config.learner;
    lc.scripted_action = *set.scripted_action;
    if (lc.scripted_action >= spec.action_count) {
      throw ConfigError(set.label + ": action outside agent " + std::to_string(spec.id) + "'s action set");
    }
    return AgentLearner(Algorithm::scripted, lc, envs::observation_size(spec.view_radius), spec.action_count,
                        mf_width, seed);
  }
  AgentLearner a = AgentLearner::load(set.dir, source_id, config.learner);
  if (a.obs_size() != envs::observation_size(spec.view_radius) || a.action_count() != spec.action_count ||
      a.mf_width() != mf_width) {
    throw ConfigError(set.label + ": agent " + std::to_string(source_id) +
                      " does not match the environment (observation, action or mean-field width)");
  }
  return a;
}

}  // namespace

TournamentResult tournament(const RunConfig& config, const std::vector<CheckpointSet>& sets, const fs::path& out,
                            const ProgressFn& progress) {
  TournamentResult result;
  const bool ffa = config.grid.free_for_all;
  if (!ffa && sets.size() != 2) throw ConfigError("team tournaments take exactly two checkpoint sets");
  if (!ffa && config.grid.teams.size() != 2) throw ConfigError("team tournaments need a two-team grid");
  if (ffa && sets.empty()) throw ConfigError("no checkpoint sets given");
  RunConfig cfg = config;
  if (ffa) {
    const auto kind = cfg.grid.teams.front().members.front().first;
    cfg.grid.teams = {{{{kind, static_cast<int>(sets.size()) * cfg.per_set}}}};
    cfg.team_algorithms.assign(1, cfg.team_algorithms.front());
  }
  result.scores.resize(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) result.scores[s].label = sets[s].label;

  std::optional<MetricsWriter> metrics;
  if (!out.empty()) {
    fs::create_directories(out);
    metrics.emplace(out / "metrics.csv");
  }

  const envs::Env shape(cfg.env, cfg.grid, cfg.exec_seed_base);
  const int n = shape.agent_count();
  // Agent ids per team and each agent's index within its team.
  std::vector<std::vector<int>> team_members(static_cast<std::size_t>(shape.team_count()));
  std::vector<int> position(static_cast<std::size_t>(n));
  for (const auto& spec : shape.specs()) {
    auto& members = team_members[static_cast<std::size_t>(spec.team)];
    position[static_cast<std::size_t>(spec.id)] = static_cast<int>(members.size());
    members.push_back(spec.id);
  }
  for (const auto& set : sets) {
    if (!set.source_team) continue;
    if (ffa) throw ConfigError(set.label + ": a team suffix needs a team environment");
    if (*set.source_team >= shape.team_count()) throw ConfigError(set.label + ": no such team");
  }
  if (!ffa && std::any_of(sets.begin(), sets.end(), [](const CheckpointSet& s) { return s.source_team.has_value(); })) {
    const auto& a = cfg.grid.teams[0].members;
    const auto& b = cfg.grid.teams[1].members;
    if (a != b) throw ConfigError("a team suffix needs identical team compositions");
  }
  std::map<std::pair<int, int>, AgentLearner> loaded;  // (set, source agent id)
  for (int g = 0; g < cfg.games; ++g) {
    const std::uint64_t env_seed = cfg.exec_seed_base + static_cast<std::uint64_t>(g);
    envs::Env env(cfg.env, cfg.grid, env_seed);
    std::vector<int> slot_set(static_cast<std::size_t>(n));
    std::vector<int> source(static_cast<std::size_t>(n));
    GameRecord rec;
    rec.game = g;
    rec.env_seed = env_seed;
    if (ffa) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
      Rng rng(derive_seed(env_seed, 77));
      for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
      }
      for (int i = 0; i < n; ++i) {
        slot_set[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)] / cfg.per_set;
        source[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)] % cfg.per_set;
      }
      rec.slot_set = slot_set;
    } else {
      const int side0 = g % 2;  // team controlled by set 0
      for (const auto& spec : env.specs()) {
        const int set = spec.team == side0 ? 0 : 1;
        slot_set[static_cast<std::size_t>(spec.id)] = set;
        const auto& from = sets[static_cast<std::size_t>(set)].source_team;
        source[static_cast<std::size_t>(spec.id)] =
            from ? team_members[static_cast<std::size_t>(*from)][static_cast<std::size_t>(position[static_cast<std::size_t>(spec.id)])]
                 : spec.id;
      }
      rec.slot_set = side0 == 0 ? std::vector<int>{0, 1} : std::vector<int>{1, 0};
    }
    std::vector<AgentLearner> agents;
    agents.reserve(static_cast<std::size_t>(n));
    for (const auto& spec : env.specs()) {
      const auto k = static_cast<std::size_t>(spec.id);
      const auto key = std::make_pair(slot_set[k], source[k]);
      auto it = loaded.find(key);
      if (it == loaded.end()) {
        it = loaded
                 .emplace(key, load_for_slot(cfg, sets[static_cast<std::size_t>(slot_set[k])], source[k], spec,
                                             env.mean_field_width(), derive_seed(cfg.exec_seed_base, k)))
                 .first;
      }
      agents.push_back(it->second);
    }
    std::vector<std::uint64_t> before;
    for (const auto& a : agents) before.push_back(a.checksum());
    std::vector<AgentLearner*> ptrs;
    for (auto& a : agents) ptrs.push_back(&a);
    const auto start = std::chrono::steady_clock::now();
    const EpisodeTotals totals = play(env, ptrs, false, nullptr);
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (agents[i].checksum() != before[i]) result.weights_unchanged = false;
    }

    rec.set_kills.assign(sets.size(), 0);
    rec.set_returns.assign(sets.size(), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const auto s = static_cast<std::size_t>(slot_set[k]);
      rec.set_kills[s] += env.kills()[k];
      rec.set_returns[s] += env.returns()[k];
    }
    if (ffa) {
      envs::EpisodeStats stats;
      stats.rewards = env.returns();
      const auto w = envs::winner(stats, envs::WinMode::individual_reward);
      if (w) rec.winner = slot_set[static_cast<std::size_t>(*w)];
    } else {
      envs::EpisodeStats stats;
      stats.kills = env.team_kills();
      stats.rewards = env.team_returns();
      const auto w = envs::winner(stats, envs::WinMode::team_kills);
      if (w) rec.winner = *w == rec.slot_set[0] ? 0 : 1;
    }
    for (std::size_t s = 0; s < sets.size(); ++s) {
      auto& sc = result.scores[s];
      ++sc.games;
      sc.mean_return += rec.set_returns[s];
      if (!rec.winner) {
        ++sc.draws;
      } else if (static_cast<std::size_t>(*rec.winner) == s) {
        ++sc.wins;
      } else {
        ++sc.losses;
      }
    }
    if (metrics) {
      for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        MetricsRecord r;
        r.run_id = sets[static_cast<std::size_t>(slot_set[k])].label;
        r.phase = "execute";
        r.seed = env_seed;
        r.episode = g;
        r.agent_id = source[k];
        r.algorithm = learners::to_string(agents[k].algorithm());
        r.episode_return = env.returns()[k];
        r.kills = env.kills()[k];
        r.deaths = totals.deaths[k];
        r.wall_ms = wall;
        metrics->write(r);
      }
      metrics->flush();
    }
    if (progress) {
      std::ostringstream line;
      line << "game " << g + 1 << "/" << cfg.games << " winner "
           << (rec.winner ? sets[static_cast<std::size_t>(*rec.winner)].label : std::string("draw"));
      progress(line.str());
    }
    result.games.push_back(std::move(rec));
  }
  for (std::size_t s = 0; s < sets.size(); ++s) {
    auto& sc = result.scores[s];
    if (sc.games) sc.mean_return /= sc.games;
    if (sets[s].scripted_action) {
      sc.algorithm = "scripted";
    } else {
      sc.algorithm = learners::to_string(AgentLearner::load(sets[s].dir, 0, config.learner).algorithm());
    }
  }
  if (!out.empty()) {
    std::ofstream table(out / "tournament.csv", std::ios::binary);
    table << "label,algorithm,games,wins,draws,losses,win_rate,mean_return\n";
    for (const auto& sc : result.scores) {
      table << sc.label << ',' << sc.algorithm << ',' << sc.games << ',' << sc.wins << ',' << sc.draws << ','
            << sc.losses << ',' << text::format_double(sc.win_rate()) << ',' << text::format_double(sc.mean_return)
            << '\n';
    }
    std::ofstream games(out / "games.csv", std::ios::binary);
    games << "game,env_seed,winner";
    for (std::size_t s = 0; s < sets.size(); ++s) games << ",kills_" << s << ",return_" << s;
    games << '\n';
    for (const auto& rec : result.games) {
      games << rec.game << ',' << rec.env_seed << ','
            << (rec.winner ? sets[static_cast<std::size_t>(*rec.winner)].label : std::string("draw"));
      for (std::size_t s = 0; s < sets.size(); ++s) {
        games << ',' << rec.set_kills[s] << ',' << text::format_double(rec.set_returns[s]);
      }
      games << '\n';
    }
    if (!table || !games) throw std::runtime_error("cannot write tournament tables under " + out.string());
  }
  return result;
}

ProbeResult run_estimator_probe(const RunConfig& config, const fs::path& out, const ProgressFn& progress) {
  ProbeResult result;
  RunConfig cfg = config;
  cfg.name = config.name + "-probe";
  const SeedRun run = train_seed(cfg, cfg.seeds.front(), out, true, progress, &result.mse, &result.steps,
                                 &result.probe_agents);
  if (run.error) throw std::runtime_error("probe failed: " + *run.error);
  std::ofstream csv(run.dir / "probe.csv", std::ios::binary);
  csv << "episode,mse_sum,steps\n";
  for (std::size_t e = 0; e < result.mse.size(); ++e) {
    csv << e << ',' << text::format_double(result.mse[e]) << ',' << result.steps[e] << '\n';
  }
  return result;
}

double window_mean(const std::vector<double>& series, std::size_t begin, std::size_t end) {
  end = std::min(end, series.size());
  if (begin >= end) throw InvalidInput("empty window");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += series[i];
  return s / static_cast<double>(end - begin);
}

std::string metrics_without_wall_time(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line, out;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out += line.substr(0, comma);
    out += '\n';
  }
  return out;
}

}  // namespace dmfg::harness
