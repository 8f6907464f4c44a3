#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include "dmfg/harness.hpp"

using namespace dmfg;
using namespace dmfg::harness;
namespace fs = std::filesystem;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(DMFG_SCRATCH) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Every regular file under `dir` with its contents, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

RunConfig battle_lite(Overrides extra = {}) {
  Overrides o = {{"run.episodes", "2"}, {"grid.max_steps", "30"}};
  o.insert(o.end(), extra.begin(), extra.end());
  return default_run_config(envs::EnvName::battle, o);
}

RunConfig probe_config(Overrides extra = {}) {
  Overrides o = {{"grid.width", "8"},          {"grid.height", "8"},
                 {"grid.teams", "soldier:1;soldier:4"}, {"agents.algorithms", "dmfg-ql;scripted"},
                 {"soldier.view_radius", "7"}, {"run.episodes", "40"},
                 {"grid.max_steps", "50"}};
  o.insert(o.end(), extra.begin(), extra.end());
  return default_run_config(envs::EnvName::battle, o);
}

}  // namespace

TEST(Train, OneEpisodeWritesOneRowPerAgent) {
  const auto out = scratch("one_episode");
  const auto cfg = battle_lite({{"run.episodes", "1"}});
  const auto result = train_selfplay(cfg, out);
  ASSERT_TRUE(result.ok());
  ASSERT_EQ(result.runs.size(), 1u);
  const auto rows = lines(out / "run-s1" / "metrics.csv");
  ASSERT_EQ(rows.size(), 11u);
  EXPECT_EQ(rows[0], kMetricsHeader);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 12) << rows[i];
    EXPECT_TRUE(rows[i].starts_with("run-s1,train,1,0," + std::to_string(i - 1) + ",dmfg-ql,")) << rows[i];
  }
  for (int a = 0; a < 10; ++a) {
    EXPECT_TRUE(fs::exists(out / "run-s1" / learners::agent_file(a, "qnet")));
    EXPECT_TRUE(fs::exists(out / "run-s1" / learners::agent_file(a, "mf")));
  }
  const auto manifest = slurp(out / "run-s1" / "manifest.txt");
  EXPECT_NE(manifest.find("status complete"), std::string::npos);
  EXPECT_NE(manifest.find("grid.teams = soldier:5;soldier:5"), std::string::npos);
}

TEST(Train, SameConfigAndSeedAreByteIdentical) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto cfg = battle_lite({{"run.episodes", "3"}, {"agents.algorithms", "dmfg-ql;dmfg-ac"}});
  train_selfplay(cfg, a);
  train_selfplay(cfg, b);
  EXPECT_EQ(metrics_without_wall_time(a / "run-s1" / "metrics.csv"),
            metrics_without_wall_time(b / "run-s1" / "metrics.csv"));
  auto sa = snapshot(a / "run-s1");
  auto sb = snapshot(b / "run-s1");
  sa.erase("metrics.csv");
  sb.erase("metrics.csv");
  EXPECT_EQ(sa, sb);
}

TEST(Train, PermutingSeedsPermutesRuns) {
  const auto a = scratch("seeds_a");
  const auto b = scratch("seeds_b");
  auto cfg = battle_lite();
  cfg.seeds = {3, 4};
  const auto ra = train_selfplay(cfg, a);
  cfg.seeds = {4, 3};
  const auto rb = train_selfplay(cfg, b);
  EXPECT_EQ(ra.runs[0].run_id, "run-s3");
  EXPECT_EQ(rb.runs[0].run_id, "run-s4");
  for (const char* id : {"run-s3", "run-s4"}) {
    EXPECT_EQ(metrics_without_wall_time(a / id / "metrics.csv"), metrics_without_wall_time(b / id / "metrics.csv"));
  }
  EXPECT_NE(metrics_without_wall_time(a / "run-s3" / "metrics.csv"),
            metrics_without_wall_time(a / "run-s4" / "metrics.csv"));
}

TEST(Train, ParallelSeedsMatchSerial) {
  const auto a = scratch("threads_a");
  const auto b = scratch("threads_b");
  auto cfg = battle_lite();
  cfg.seeds = {5, 6};
  train_selfplay(cfg, a);
  cfg.threads = 2;
  train_selfplay(cfg, b);
  for (const char* id : {"run-s5", "run-s6"}) {
    EXPECT_EQ(metrics_without_wall_time(a / id / "metrics.csv"), metrics_without_wall_time(b / id / "metrics.csv"));
  }
}

TEST(Train, LearnerFailureAbortsTheSeedNotTheCall) {
  const auto out = scratch("failing");
  const auto cfg = battle_lite({{"learner.learning_rate", "1e12"},
                                {"learner.max_grad_norm", "0"},
                                {"learner.batch_size", "4"},
                                {"learner.updates_per_episode", "5"},
                                {"run.episodes", "20"},
                                {"agents.algorithms", "il"}});
  const auto result = train_selfplay(cfg, out);
  ASSERT_FALSE(result.ok());
  EXPECT_TRUE(result.runs[0].error.has_value());
  EXPECT_TRUE(result.runs[0].numerical_failure) << *result.runs[0].error;
  const auto manifest = slurp(out / "run-s1" / "manifest.txt");
  EXPECT_NE(manifest.find("status failed"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "run-s1" / learners::agent_file(0, "qnet")));
}

TEST(Tournament, FrozenPhaseLeavesWeightsAlone) {
  const auto run = scratch("frozen");
  train_selfplay(battle_lite({{"run.episodes", "3"}}), run);
  const auto before = snapshot(run / "run-s1");
  auto cfg = battle_lite({{"grid.max_steps", "60"}});
  cfg.games = 10;
  const auto result = tournament(cfg, {CheckpointSet::parse((run / "run-s1").string()), CheckpointSet::parse("scripted:0")},
                                 run / "exec");
  EXPECT_TRUE(result.weights_unchanged);
  EXPECT_EQ(snapshot(run / "run-s1"), before);
}

TEST(Tournament, IdenticalPoliciesSplitEvenly) {
  const auto run = scratch("symmetry");
  train_selfplay(battle_lite({{"run.episodes", "4"}, {"grid.max_steps", "60"}}), run);
  auto cfg = battle_lite({{"grid.max_steps", "100"}});
  cfg.games = 200;
  const std::string dir = (run / "run-s1").string() + "@0";
  const auto result = tournament(cfg, {CheckpointSet::parse(dir), CheckpointSet::parse(dir)}, run / "exec");
  ASSERT_EQ(result.games.size(), 200u);
  const double sigma = std::sqrt(0.25 / 200);
  EXPECT_NEAR(result.scores[0].win_rate(), 0.5, 3 * sigma);
  EXPECT_NEAR(result.scores[0].win_rate() + result.scores[1].win_rate(), 1.0, 1e-12);
}

TEST(Tournament, HundredGamesHundredRecords) {
  const auto out = scratch("hundred");
  auto cfg = battle_lite({{"grid.max_steps", "20"}});
  const auto result =
      tournament(cfg, {CheckpointSet::parse("scripted:random"), CheckpointSet::parse("scripted:0")}, out);
  EXPECT_EQ(result.games.size(), 100u);
  EXPECT_EQ(lines(out / "games.csv").size(), 101u);
  EXPECT_EQ(lines(out / "tournament.csv").size(), 3u);
  EXPECT_EQ(lines(out / "metrics.csv").size(), 1u + 100u * 10u);
  for (int g = 0; g < 100; ++g) EXPECT_EQ(result.games[static_cast<std::size_t>(g)].env_seed, 31u + static_cast<std::uint64_t>(g));
  const auto& s = result.scores[0];
  EXPECT_EQ(s.wins + s.draws + s.losses, 100);
}

TEST(Tournament, TrainedTeamBeatsAStayTeam) {
  const auto run = scratch("stay");
  auto train = default_run_config(envs::EnvName::battle, {{"agents.algorithms", "dmfg-ql;scripted"},
                                                          {"learner.updates_per_episode", "20"},
                                                          {"run.episodes", "200"},
                                                          {"grid.max_steps", "100"}});
  ASSERT_TRUE(train_selfplay(train, run).ok());
  auto cfg = default_run_config(envs::EnvName::battle);
  cfg.games = 50;
  const auto result = tournament(
      cfg, {CheckpointSet::parse((run / "run-s1").string() + "@0"), CheckpointSet::parse("scripted:0")}, run / "exec");
  EXPECT_GT(result.scores[0].win_rate(), 0.9);
  EXPECT_EQ(result.scores[0].algorithm, "dmfg-ql");
}

TEST(Tournament, MismatchedCheckpointsAreConfigErrors) {
  const auto run = scratch("mismatch");
  train_selfplay(battle_lite({{"run.episodes", "1"}}), run);
  const std::string dir = (run / "run-s1").string();
  auto ca = default_run_config(envs::EnvName::combined_arms, {{"grid.max_steps", "10"}});
  ca.games = 2;
  EXPECT_THROW(tournament(ca, {CheckpointSet::parse(dir), CheckpointSet::parse(dir)}, {}), ConfigError);
  auto battle = battle_lite();
  battle.games = 2;
  EXPECT_THROW(tournament(battle, {CheckpointSet::parse(dir + "@2"), CheckpointSet::parse(dir)}, {}), ConfigError);
  EXPECT_THROW(tournament(battle, {CheckpointSet::parse(dir)}, {}), ConfigError);
  EXPECT_THROW(CheckpointSet::parse((run / "missing").string()), ConfigError);
  EXPECT_THROW(CheckpointSet::parse("scripted:9"), ConfigError);
}

TEST(Tournament, GatherSamplesAgentsPerSet) {
  const auto run = scratch("gather_exec");
  train_selfplay(default_run_config(envs::EnvName::gather, {{"run.episodes", "1"}, {"grid.max_steps", "20"}}), run);
  auto cfg = default_run_config(envs::EnvName::gather, {{"grid.max_steps", "40"}});
  cfg.games = 6;
  const auto result = tournament(
      cfg, {CheckpointSet::parse((run / "run-s1").string()), CheckpointSet::parse("scripted:random"),
            CheckpointSet::parse("scripted:0")},
      {});
  ASSERT_EQ(result.games.size(), 6u);
  for (const auto& g : result.games) {
    EXPECT_EQ(g.slot_set.size(), 6u);
    for (int s = 0; s < 3; ++s) EXPECT_EQ(std::count(g.slot_set.begin(), g.slot_set.end(), s), 2);
  }
}

TEST(Probe, ConstantOpponentsDriveTheErrorDown) {
  const auto out = scratch("probe");
  const auto r = run_estimator_probe(probe_config(), out);
  ASSERT_EQ(r.mse.size(), 40u);
  ASSERT_EQ(r.steps.size(), 40u);
  EXPECT_EQ(r.probe_agents, 1);
  EXPECT_LT(window_mean(r.mse, 35, 40), 0.1 * window_mean(r.mse, 0, 5));
  EXPECT_EQ(lines(out / "run-probe-s1" / "probe.csv").size(), 41u);
}

TEST(Probe, ZeroLearningRateKeepsTheEstimatorFixed) {
  const auto out = scratch("probe_lr0");
  const auto cfg = probe_config({{"learner.mf_learning_rate", "0"}, {"run.episodes", "20"}});
  const auto r = run_estimator_probe(cfg, out);
  ASSERT_EQ(r.mse.size(), 20u);
  // The network is untouched, so the per-step error shows no trend.
  std::vector<double> per_step;
  for (std::size_t e = 0; e < r.mse.size(); ++e) per_step.push_back(r.mse[e] / r.steps[e]);
  const double first = window_mean(per_step, 0, 5);
  const double last = window_mean(per_step, 15, 20);
  EXPECT_NEAR(last / first, 1.0, 0.25);
  const auto saved = learners::AgentLearner::load(out / "run-probe-s1", 0, cfg.learner);
  const learners::AgentLearner fresh(learners::Algorithm::dmfg_ql, cfg.learner, saved.obs_size(),
                                     saved.action_count(), saved.mf_width(), derive_seed(1, 0));
  EXPECT_EQ(saved.estimator()->net().checksum(), fresh.estimator()->net().checksum());
}

TEST(Probe, NeedsAnEstimatorAgent) {
  const auto out = scratch("probe_none");
  EXPECT_THROW(run_estimator_probe(probe_config({{"agents.algorithms", "mfq;scripted"}}), out), ConfigError);
}

TEST(Scaling, PerAgentTimeRoughlyConstant) {
  auto per_agent_step = [](int team) {
    const auto out = scratch("scaling" + std::to_string(team));
    const auto cfg = default_run_config(
        envs::EnvName::battle, {{"grid.teams", "soldier:" + std::to_string(team) + ";soldier:" + std::to_string(team)},
                                {"run.episodes", "2"},
                                {"grid.max_steps", "40"},
                                {"soldier.max_hp", "1000"}});
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      train_selfplay(cfg, out);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      best = std::min(best, ms / (2.0 * team * 2 * 40));
    }
    return best;
  };
  const double small = per_agent_step(5);
  const double large = per_agent_step(10);
  EXPECT_LT(large, 2.0 * small) << small << " vs " << large << " ms per agent-step";
}
