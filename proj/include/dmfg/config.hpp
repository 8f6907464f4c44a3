#ifndef DMFG_CONFIG_HPP
#define DMFG_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dmfg/envs.hpp"
#include "dmfg/learners.hpp"

namespace dmfg::harness {

/**
 * Run configuration. On disk it is an INI file with sections [run], [grid],
 * [soldier] [gatherer] [tiger] [melee] [ranged], [rewards], [agents],
 * [learner], [execute] and [probe]; `info --dump-defaults` prints every key
 * with its default. Overrides use the dotted form section.key=value.
 */
struct RunConfig {
  std::string name = "run";
  envs::EnvName env = envs::EnvName::gather;
  envs::GridConfig grid;
  /// One algorithm per team in composition order (one entry for gather).
  std::vector<learners::Algorithm> team_algorithms;
  learners::LearnerConfig learner;
  int episodes = 300;
  std::vector<std::uint64_t> seeds = {1};
  int checkpoint_every = 0;  ///< 0 writes only the final checkpoint
  int threads = 1;
  bool trace = false;

  int games = 100;
  std::uint64_t exec_seed_base = 31;
  int per_set = 2;  ///< agents per checkpoint set in free-for-all tournaments

  int probe_opponent_action = 0;

  /// Fully resolved key -> value map, in dump order.
  std::vector<std::pair<std::string, std::string>> settings;

  learners::Algorithm algorithm_for(int agent_id) const;
};

struct Setting {
  std::string key;  ///< section.key
  std::string value;
  std::string help;
};

/// Every key with its default for the given environment, in dump order.
std::vector<Setting> default_settings(envs::EnvName env);
void dump_defaults(std::ostream& out, envs::EnvName env);

/// Reads an INI file into dotted keys.
std::map<std::string, std::string> read_ini(const std::filesystem::path& path);
std::map<std::string, std::string> read_ini(std::istream& in);

/// Splits "section.key=value"; throws ConfigError when malformed.
std::pair<std::string, std::string> parse_override(const std::string& text);

/**
 * Resolves defaults (chosen by run.env), then `file_values`, then
 * `overrides`. Unknown keys and invalid values are collected and reported
 * together in one ConfigError.
 */
RunConfig resolve_config(const std::map<std::string, std::string>& file_values,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Defaults for an environment, optionally adjusted by overrides.
RunConfig default_run_config(envs::EnvName env,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace dmfg::harness

#endif  // DMFG_CONFIG_HPP
