#ifndef DMFG_INSTANCES_HPP
#define DMFG_INSTANCES_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmfg/tabular.hpp"

namespace dmfg::tabular {

enum class Topology { line, ring };

/**
 * Crowd-averse movement on a line or ring of cells.
 *
 * Actions: 0 stay, 1 step left, 2 step right. Reward in cell s is
 * base[s] - aversion * mu(s) - move_cost * [a != stay]. A move succeeds with
 * probability 1 - slip - crowd_slip * mu(target) and otherwise leaves the
 * agent in place; finally every row is mixed with `noise` of the uniform
 * distribution.
 */
struct CongestionParams {
  std::string name = "congestion";
  Topology topology = Topology::ring;
  std::vector<double> base;
  double aversion = 0.0;
  double move_cost = 0.0;
  double slip = 0.0;
  double crowd_slip = 0.0;
  double noise = 0.0;
  double discount = 0.9;
  double reward_max = 1.0;
  std::vector<double> initial_mean_field;  ///< empty means uniform
};

inline constexpr int kCongestionActions = 3;

TabularInstance make_congestion(const CongestionParams& params);

/// Mean-field independent instance from dense tables; `transitions` holds
/// one row per (s, a) in row-major order, `rewards` one value per (s, a).
TabularInstance make_dense_mdp(std::string name, int state_count, int action_count,
                               double discount, double reward_max,
                               Distribution initial_mean_field,
                               std::vector<std::vector<double>> transitions,
                               std::vector<double> rewards);

/// Seeded random dense instance with rewards in [0, 1].
TabularInstance make_random_mdp(int state_count, int action_count, double discount,
                                std::uint64_t seed);

namespace builtin {
CongestionParams congestion_ring4_params();
CongestionParams congestion_line6_params();
CongestionParams congestion_ring8_params();
/// The three bundled congestion instances.
std::vector<TabularInstance> congestion_instances();
}  // namespace builtin

/// Parse failure carrying the 1-based line number.
class InstanceParseError : public InvalidInput {
 public:
  InstanceParseError(const std::string& source, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/**
 * Instance file grammar (one directive per line, '#' starts a comment):
 *
 *   S A beta R_max                      header, first directive
 *   mu0 w_0 ... w_{S-1}                 initial mean field
 *   name NAME                           optional
 *   family congestion | mdp
 *
 * congestion block (A must be 3):
 *   topology ring | line
 *   base b_0 ... b_{S-1}
 *   aversion c      move_cost m      slip x      crowd_slip k      noise e
 *
 * mdp block, every (s, a) exactly once:
 *   p s a w_0 ... w_{S-1}
 *   r s a value
 */
TabularInstance parse_instance(std::istream& in, const std::string& source = "<stream>");
TabularInstance load_instance(const std::filesystem::path& path);

/// Writes a congestion instance in the grammar above.
void write_congestion(std::ostream& out, const CongestionParams& params);

}  // namespace dmfg::tabular

#endif  // DMFG_INSTANCES_HPP
