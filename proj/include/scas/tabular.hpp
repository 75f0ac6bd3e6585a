#pragma once
// Exact finite MDPs, value solvers, and empirical models counted from a
// transition dataset.

#include <cstddef>
#include <span>
#include <vector>

namespace scas::tabular {

inline constexpr double kDefaultTol = 1e-10;

struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // [s][a][s'] flattened
  std::vector<double> reward;      // [s][a]
  double discount = 0.0;
  std::vector<double> initial;     // d0[s]

  double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  double& p(std::size_t s, std::size_t a, std::size_t s2) {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  // Throws kInvalidInput if shapes, distributions or the discount are off.
  void validate() const;
};

struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;  // [s][a]

  double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }
  double& operator()(std::size_t s, std::size_t a) { return probs[s * n_actions + a]; }
  std::span<const double> row(std::size_t s) const {
    return {probs.data() + s * n_actions, n_actions};
  }
  std::span<double> row(std::size_t s) { return {probs.data() + s * n_actions, n_actions}; }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);
  void validate() const;
};

struct TabularTransition {
  std::size_t s = 0;
  std::size_t a = 0;
  double r = 0.0;
  std::size_t s2 = 0;

  bool operator==(const TabularTransition&) const = default;
};

struct TabularDataset {
  std::vector<TabularTransition> transitions;

  void validate(std::size_t n_states, std::size_t n_actions) const;
};

// beta, M and N estimated by normalized counts. Rows belonging to states that
// never appear as a source in the dataset are undefined: the accessors throw
// kPrecondition when asked for them.
class EmpiricalModels {
 public:
  EmpiricalModels(std::size_t n_states, std::size_t n_actions);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }

  bool visited(std::size_t s) const { return visited_[s]; }
  bool pair_observed(std::size_t s, std::size_t a) const { return pair_seen_[s * n_actions_ + a]; }
  const std::vector<std::size_t>& visited_states() const { return visited_list_; }

  // beta(.|s)
  std::span<const double> beta(std::size_t s) const;
  // M(.|s,a); all zeros for an unobserved action at a visited state.
  std::span<const double> dyn(std::size_t s, std::size_t a) const;
  // N(.|s)
  std::span<const double> state_trans(std::size_t s) const;

  // True when every observed M(.|s,a) row is one-hot.
  bool deterministic() const;

 private:
  friend EmpiricalModels empirical_models(std::size_t, std::size_t, const TabularDataset&);

  void require_visited(std::size_t s) const;

  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> beta_;
  std::vector<double> dyn_;
  std::vector<double> state_trans_;
  std::vector<bool> visited_;
  std::vector<bool> pair_seen_;
  std::vector<std::size_t> visited_list_;
};

struct ValueTable {
  std::vector<double> v;
};

// Exact linear solve for up to 512 states, iterative sweeps above that.
ValueTable policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi,
                             double tol = kDefaultTol);

// Value iteration to within tol of the optimal fixed point.
ValueTable optimal_values(const TabularMdp& mdp, double tol = kDefaultTol);

// Max-norm of V - T_pi V.
double policy_bellman_residual(const TabularMdp& mdp, const TabularPolicy& pi,
                               const ValueTable& v);
// Max-norm of V - T* V.
double optimal_bellman_residual(const TabularMdp& mdp, const ValueTable& v);

EmpiricalModels empirical_models(std::size_t n_states, std::size_t n_actions,
                                 const TabularDataset& data);

// KL(p || q) in nats. +infinity when supp(p) is not inside supp(q).
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace scas::tabular
