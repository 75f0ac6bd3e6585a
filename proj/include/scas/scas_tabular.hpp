#pragma once
// Closed-form value-aware objects on tabular MDPs and brute-force oracles for
// the support/argmax properties of the in-distribution regularizers.

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "scas/rng.hpp"
#include "scas/tabular.hpp"

namespace scas::tabular {

// N*(s'|s) = exp(alpha V(s')) N(s'|s) / Z(s), defined on visited rows only.
struct ValueAwareTransition {
  std::size_t n_states = 0;
  double alpha = 0.0;
  std::vector<double> probs;  // [s][s'], zero rows for unvisited s
  std::vector<double> z;      // Z(s); may overflow to inf for extreme alpha * V
  std::vector<double> log_z;  // log Z(s), always finite on visited rows
  std::vector<bool> defined;

  std::span<const double> row(std::size_t s) const {
    return {probs.data() + s * n_states, n_states};
  }
};

ValueAwareTransition value_aware_transition(const EmpiricalModels& models,
                                            const ValueTable& values, double alpha);

// pi*(a|s) proportional to exp(alpha V(M(s,a))) beta(a|s). Requires every
// observed M(.|s,a) to be one-hot. Rows of unvisited states are uniform.
TabularPolicy closed_form_policy(const EmpiricalModels& models,
                                 const ValueTable& values, double alpha);

// M(.|s, pi(.|s)) = sum_a pi(a|s) M(.|s,a)
std::vector<double> induced_next_state(const EmpiricalModels& models,
                                       const TabularPolicy& pi, std::size_t s);

enum class RegularizerVariant {
  kRbar,   // weight exp(alpha V(s')) / Z(s)
  kRbar1,  // weight exp(alpha V(s')) / exp(alpha V(s))
};

struct RegularizerSpec {
  RegularizerVariant variant = RegularizerVariant::kRbar;
  double alpha = 0.0;
  ValueTable values;
};

// Exact dataset average of weight(s,s') * log M(s'|s,pi). -infinity when any
// dataset pair has zero likelihood under pi.
double regularizer_value(const RegularizerSpec& spec, const TabularPolicy& pi,
                         const EmpiricalModels& models, const TabularDataset& data);

inline constexpr std::size_t kDefaultGrid = 50;
inline constexpr int kRefineSteps = 200;

// Per-state simplex grid search at resolution 1/grid, refined with pairwise
// coordinate ascent. Throws kInstanceTooLarge beyond 4 actions, 8 visited
// states or grid 100.
TabularPolicy brute_force_maximizer(const RegularizerSpec& spec,
                                    const EmpiricalModels& models,
                                    const TabularDataset& data,
                                    std::size_t grid = kDefaultGrid);

// max over visited s of the probability pi puts on actions with beta(a|s) = 0.
double support_violation(const TabularPolicy& pi, const EmpiricalModels& models);

// ---------------------------------------------------------------------------
// Random instances for the proposition checks.

struct TabularInstance {
  TabularMdp mdp;
  TabularDataset data;
  EmpiricalModels models;
  ValueTable values;  // optimal values of mdp
};

// Random MDP plus a dataset that enumerates a random subset of (s,a) pairs.
// Every visited state leaves at least one action unobserved when
// n_actions >= 2. In the deterministic case the observed actions of a state
// lead to distinct successors, which makes the regularizer maximizer unique.
TabularInstance random_instance(std::size_t n_states, std::size_t n_actions,
                                bool stochastic, Rng& rng);

struct VerifyOptions {
  std::size_t instances = 100;
  std::size_t states = 5;
  std::size_t actions = 4;
  std::size_t grid = kDefaultGrid;
  std::vector<double> alphas = {0.0, 1.0, 5.0};
  bool stochastic = false;
  std::uint64_t seed = 0;
};

struct InstanceReport {
  std::size_t index = 0;
  double alpha = 0.0;
  std::size_t visited = 0;
  double support_violation = 0.0;
  std::optional<double> alignment_kl;   // deterministic only
  std::optional<double> argmax_gap;     // deterministic only
  double alpha0_deviation = 0.0;        // max |N* - N| at alpha = 0
};

struct VerifySummary {
  std::size_t instances = 0;
  double max_support_violation = 0.0;
  std::optional<double> max_alignment_kl;
  std::optional<double> max_argmax_gap;
  double max_alpha0_deviation = 0.0;
  bool passed = true;
};

inline constexpr double kSupportTol = 1e-6;
inline constexpr double kAlignmentTol = 1e-10;
inline constexpr double kAlpha0Tol = 1e-14;

// Runs the oracle suite over random instances; on_instance sees every
// (instance, alpha) report as it completes.
VerifySummary verify_propositions(
    const VerifyOptions& opts,
    const std::function<void(const InstanceReport&)>& on_instance = {});

}  // namespace scas::tabular
