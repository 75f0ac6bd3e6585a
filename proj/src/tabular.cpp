#include "scas/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "scas/error.hpp"

namespace scas::tabular {
namespace {

constexpr double kStochasticTol = 1e-12;
constexpr std::size_t kLinearSolveMaxStates = 512;

void check_distribution(std::span<const double> row, double tol, const std::string& what) {
  double sum = 0.0;
  for (double x : row) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      fail(ErrorKind::kInvalidInput, what + ": negative or non-finite probability");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > tol) {
    fail(ErrorKind::kInvalidInput, what + ": probabilities sum to " + std::to_string(sum));
  }
}

// r_pi[s] + gamma * sum_s' P_pi[s][s'] v[s']
double policy_backup(const TabularMdp& mdp, const TabularPolicy& pi,
                     std::span<const double> v, std::size_t s) {
  double total = 0.0;
  for (std::size_t a = 0; a < mdp.n_actions; ++a) {
    const double w = pi(s, a);
    if (w == 0.0) continue;
    double next = 0.0;
    for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) next += mdp.p(s, a, s2) * v[s2];
    total += w * (mdp.r(s, a) + mdp.discount * next);
  }
  return total;
}

double optimal_backup(const TabularMdp& mdp, std::span<const double> v, std::size_t s) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < mdp.n_actions; ++a) {
    double next = 0.0;
    for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) next += mdp.p(s, a, s2) * v[s2];
    best = std::max(best, mdp.r(s, a) + mdp.discount * next);
  }
  return best;
}

void check_compatible(const TabularMdp& mdp, const TabularPolicy& pi) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions) {
    fail(ErrorKind::kInvalidInput, "policy shape does not match MDP");
  }
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states == 0 || n_actions == 0) {
    fail(ErrorKind::kInvalidInput, "MDP needs at least one state and one action");
  }
  if (transition.size() != n_states * n_actions * n_states ||
      reward.size() != n_states * n_actions || initial.size() != n_states) {
    fail(ErrorKind::kInvalidInput, "MDP tensor shapes are inconsistent");
  }
  if (!(discount >= 0.0 && discount < 1.0)) {
    fail(ErrorKind::kInvalidInput, "discount must lie in [0, 1)");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      check_distribution({transition.data() + (s * n_actions + a) * n_states, n_states},
                         kStochasticTol, "transition row");
      if (!std::isfinite(r(s, a))) fail(ErrorKind::kInvalidInput, "non-finite reward");
    }
  }
  check_distribution(initial, kStochasticTol, "initial distribution");
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  TabularPolicy pi{n_states, n_actions, {}};
  pi.probs.assign(n_states * n_actions, 1.0 / static_cast<double>(n_actions));
  return pi;
}

void TabularPolicy::validate() const {
  if (probs.size() != n_states * n_actions) {
    fail(ErrorKind::kInvalidInput, "policy table has wrong size");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    check_distribution(row(s), kStochasticTol, "policy row " + std::to_string(s));
  }
}

void TabularDataset::validate(std::size_t n_states, std::size_t n_actions) const {
  if (transitions.empty()) fail(ErrorKind::kInvalidInput, "dataset is empty");
  for (const auto& t : transitions) {
    if (t.s >= n_states || t.s2 >= n_states || t.a >= n_actions) {
      fail(ErrorKind::kInvalidInput, "dataset index out of MDP bounds");
    }
  }
}

EmpiricalModels::EmpiricalModels(std::size_t n_states, std::size_t n_actions)
    : n_states_(n_states),
      n_actions_(n_actions),
      beta_(n_states * n_actions, 0.0),
      dyn_(n_states * n_actions * n_states, 0.0),
      state_trans_(n_states * n_states, 0.0),
      visited_(n_states, false),
      pair_seen_(n_states * n_actions, false) {}

void EmpiricalModels::require_visited(std::size_t s) const {
  if (s >= n_states_ || !visited_[s]) {
    fail(ErrorKind::kPrecondition,
         "empirical model row for unvisited state " + std::to_string(s) + " is undefined");
  }
}

std::span<const double> EmpiricalModels::beta(std::size_t s) const {
  require_visited(s);
  return {beta_.data() + s * n_actions_, n_actions_};
}

std::span<const double> EmpiricalModels::dyn(std::size_t s, std::size_t a) const {
  require_visited(s);
  return {dyn_.data() + (s * n_actions_ + a) * n_states_, n_states_};
}

std::span<const double> EmpiricalModels::state_trans(std::size_t s) const {
  require_visited(s);
  return {state_trans_.data() + s * n_states_, n_states_};
}

bool EmpiricalModels::deterministic() const {
  for (std::size_t s : visited_list_) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      if (!pair_observed(s, a)) continue;
      for (double x : dyn(s, a)) {
        if (x != 0.0 && x != 1.0) return false;
      }
    }
  }
  return true;
}

EmpiricalModels empirical_models(std::size_t n_states, std::size_t n_actions,
                                 const TabularDataset& data) {
  data.validate(n_states, n_actions);
  EmpiricalModels m(n_states, n_actions);
  std::vector<double> state_count(n_states, 0.0);
  std::vector<double> pair_count(n_states * n_actions, 0.0);
  for (const auto& t : data.transitions) {
    state_count[t.s] += 1.0;
    pair_count[t.s * n_actions + t.a] += 1.0;
    m.dyn_[(t.s * n_actions + t.a) * n_states + t.s2] += 1.0;
    m.state_trans_[t.s * n_states + t.s2] += 1.0;
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    if (state_count[s] == 0.0) continue;
    m.visited_[s] = true;
    m.visited_list_.push_back(s);
    for (std::size_t a = 0; a < n_actions; ++a) {
      const double c = pair_count[s * n_actions + a];
      m.beta_[s * n_actions + a] = c / state_count[s];
      if (c == 0.0) continue;
      m.pair_seen_[s * n_actions + a] = true;
      for (std::size_t s2 = 0; s2 < n_states; ++s2) {
        m.dyn_[(s * n_actions + a) * n_states + s2] /= c;
      }
    }
    for (std::size_t s2 = 0; s2 < n_states; ++s2) {
      m.state_trans_[s * n_states + s2] /= state_count[s];
    }
  }
  return m;
}

double policy_bellman_residual(const TabularMdp& mdp, const TabularPolicy& pi,
                               const ValueTable& v) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    worst = std::max(worst, std::abs(v.v[s] - policy_backup(mdp, pi, v.v, s)));
  }
  return worst;
}

double optimal_bellman_residual(const TabularMdp& mdp, const ValueTable& v) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    worst = std::max(worst, std::abs(v.v[s] - optimal_backup(mdp, v.v, s)));
  }
  return worst;
}

ValueTable policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi, double tol) {
  if (!(tol > 0.0)) fail(ErrorKind::kInvalidInput, "tolerance must be positive");
  mdp.validate();
  check_compatible(mdp, pi);
  pi.validate();
  const std::size_t n = mdp.n_states;

  if (n <= kLinearSolveMaxStates) {
    // (I - gamma P_pi) V = r_pi
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        const double w = pi(s, a);
        if (w == 0.0) continue;
        rhs[s] += w * mdp.r(s, a);
        for (std::size_t s2 = 0; s2 < n; ++s2) {
          lhs(s, s2) -= mdp.discount * w * mdp.p(s, a, s2);
        }
      }
    }
    Eigen::VectorXd sol = lhs.partialPivLu().solve(rhs);
    ValueTable v{std::vector<double>(sol.data(), sol.data() + n)};
    // Fall through to sweeps if the direct solve misses the tolerance.
    if (policy_bellman_residual(mdp, pi, v) <= tol) return v;
  }

  ValueTable v{std::vector<double>(n, 0.0)};
  std::vector<double> next(n);
  for (;;) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      next[s] = policy_backup(mdp, pi, v.v, s);
      delta = std::max(delta, std::abs(next[s] - v.v[s]));
    }
    v.v.swap(next);
    // ||V_{k+1} - T V_{k+1}|| <= gamma * ||V_{k+1} - V_k||
    if (mdp.discount * delta <= tol) break;
  }
  return v;
}

ValueTable optimal_values(const TabularMdp& mdp, double tol) {
  if (!(tol > 0.0)) fail(ErrorKind::kInvalidInput, "tolerance must be positive");
  mdp.validate();
  const std::size_t n = mdp.n_states;
  ValueTable v{std::vector<double>(n, 0.0)};
  std::vector<double> next(n);
  const double gamma = mdp.discount;
  for (;;) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      next[s] = optimal_backup(mdp, v.v, s);
      delta = std::max(delta, std::abs(next[s] - v.v[s]));
    }
    v.v.swap(next);
    // ||V_{k+1} - V*|| <= gamma / (1 - gamma) * ||V_{k+1} - V_k||
    if (gamma * delta <= tol * (1.0 - gamma)) break;
  }
  return v;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) fail(ErrorKind::kInvalidInput, "kl: length mismatch");
  check_distribution(p, 1e-9, "kl: p");
  check_distribution(q, 1e-9, "kl: q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * std::log(p[i] / q[i]);
  }
  // Round-off can leave tiny negatives when p == q.
  return std::max(total, 0.0);
}

}  // namespace scas::tabular
