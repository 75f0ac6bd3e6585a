#include "scas/scas_tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "scas/error.hpp"

namespace scas::tabular {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// The regularizer restricted to one source state: sum over observed
// successors s' of coef(s') * log(sum_a pi(a) M(s'|s,a)).
struct StateObjective {
  std::size_t n_actions = 0;
  std::vector<double> coef;
  std::vector<double> dyn;  // [successor][a]

  double operator()(std::span<const double> pi) const {
    double total = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k) {
      double lik = 0.0;
      for (std::size_t a = 0; a < n_actions; ++a) lik += pi[a] * dyn[k * n_actions + a];
      if (!(lik > 0.0)) return kNegInf;
      total += coef[k] * std::log(lik);
    }
    return total;
  }
};

std::vector<StateObjective> build_objectives(const RegularizerSpec& spec,
                                             const EmpiricalModels& models,
                                             const TabularDataset& data) {
  const std::size_t ns = models.n_states();
  const std::size_t na = models.n_actions();
  data.validate(ns, na);
  if (spec.values.v.size() != ns) {
    fail(ErrorKind::kInvalidInput, "value table size does not match the state count");
  }
  if (!(spec.alpha >= 0.0)) fail(ErrorKind::kInvalidInput, "alpha must be non-negative");

  std::vector<double> pair_count(ns * ns, 0.0);
  for (const auto& t : data.transitions) pair_count[t.s * ns + t.s2] += 1.0;
  const double total = static_cast<double>(data.transitions.size());

  ValueAwareTransition nstar;
  if (spec.variant == RegularizerVariant::kRbar) {
    nstar = value_aware_transition(models, spec.values, spec.alpha);
  }
  const auto& v = spec.values.v;

  std::vector<StateObjective> out(ns);
  for (std::size_t s : models.visited_states()) {
    auto& obj = out[s];
    obj.n_actions = na;
    for (std::size_t s2 = 0; s2 < ns; ++s2) {
      const double c = pair_count[s * ns + s2];
      if (c == 0.0) continue;
      const double log_norm = spec.variant == RegularizerVariant::kRbar
                                  ? nstar.log_z[s]
                                  : spec.alpha * v[s];
      obj.coef.push_back(c / total * std::exp(spec.alpha * v[s2] - log_norm));
      for (std::size_t a = 0; a < na; ++a) obj.dyn.push_back(models.dyn(s, a)[s2]);
    }
  }
  return out;
}

void enumerate_simplex(std::size_t n, std::size_t grid,
                       const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> parts(n, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t idx, std::size_t left) {
    if (idx + 1 == n) {
      parts[idx] = left;
      visit(parts);
      return;
    }
    for (std::size_t k = 0; k <= left; ++k) {
      parts[idx] = k;
      rec(idx + 1, left - k);
    }
  };
  rec(0, grid);
}

// Maximize f(pi + t (e_i - e_j)) over t in [-pi_i, pi_j]; f is concave in t.
void pair_line_search(const StateObjective& f, std::vector<double>& pi, std::size_t i,
                      std::size_t j) {
  const double lo = -pi[i];
  const double hi = pi[j];
  if (hi - lo <= 0.0) return;
  std::vector<double> trial = pi;
  auto eval = [&](double t) {
    trial[i] = pi[i] + t;
    trial[j] = pi[j] - t;
    if (t == lo) trial[i] = 0.0;
    if (t == hi) trial[j] = 0.0;
    return f(trial);
  };
  double best_t = 0.0;
  double best_f = eval(0.0);
  auto consider = [&](double t) {
    const double ft = eval(t);
    if (ft > best_f) {
      best_f = ft;
      best_t = t;
    }
  };
  consider(lo);
  consider(hi);

  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = eval(c), fd = eval(d);
  for (int it = 0; it < 100 && b - a > 1e-15; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = eval(d);
    }
  }
  consider(0.5 * (a + b));

  const double pi_i = pi[i], pi_j = pi[j];
  pi[i] = best_t == lo ? 0.0 : pi_i + best_t;
  pi[j] = best_t == hi ? 0.0 : pi_j - best_t;
}

}  // namespace

ValueAwareTransition value_aware_transition(const EmpiricalModels& models,
                                            const ValueTable& values, double alpha) {
  const std::size_t ns = models.n_states();
  if (values.v.size() != ns) {
    fail(ErrorKind::kInvalidInput, "value table size does not match the state count");
  }
  if (!(alpha >= 0.0)) fail(ErrorKind::kInvalidInput, "alpha must be non-negative");
  for (double x : values.v) {
    if (!std::isfinite(x)) fail(ErrorKind::kInvalidInput, "values must be finite");
  }
  ValueAwareTransition out;
  out.n_states = ns;
  out.alpha = alpha;
  out.probs.assign(ns * ns, 0.0);
  out.z.assign(ns, 0.0);
  out.log_z.assign(ns, 0.0);
  out.defined.assign(ns, false);

  for (std::size_t s : models.visited_states()) {
    const auto n_row = models.state_trans(s);
    double shift = kNegInf;
    for (std::size_t s2 = 0; s2 < ns; ++s2) {
      if (n_row[s2] > 0.0) shift = std::max(shift, alpha * values.v[s2]);
    }
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < ns; ++s2) {
      if (n_row[s2] == 0.0) continue;
      const double w = std::exp(alpha * values.v[s2] - shift) * n_row[s2];
      out.probs[s * ns + s2] = w;
      sum += w;
    }
    for (std::size_t s2 = 0; s2 < ns; ++s2) out.probs[s * ns + s2] /= sum;
    out.log_z[s] = shift + std::log(sum);
    out.z[s] = std::exp(out.log_z[s]);
    out.defined[s] = true;
  }
  return out;
}

TabularPolicy closed_form_policy(const EmpiricalModels& models, const ValueTable& values,
                                 double alpha) {
  const std::size_t ns = models.n_states();
  const std::size_t na = models.n_actions();
  if (values.v.size() != ns) {
    fail(ErrorKind::kInvalidInput, "value table size does not match the state count");
  }
  if (!(alpha >= 0.0)) fail(ErrorKind::kInvalidInput, "alpha must be non-negative");
  if (!models.deterministic()) {
    fail(ErrorKind::kPrecondition, "closed-form policy requires deterministic dynamics");
  }
  TabularPolicy pi = TabularPolicy::uniform(ns, na);
  std::vector<double> logits(na);
  for (std::size_t s : models.visited_states()) {
    const auto beta = models.beta(s);
    double shift = kNegInf;
    for (std::size_t a = 0; a < na; ++a) {
      if (beta[a] == 0.0) continue;
      const auto row = models.dyn(s, a);
      const auto next = static_cast<std::size_t>(
          std::distance(row.begin(), std::max_element(row.begin(), row.end())));
      logits[a] = alpha * values.v[next];
      shift = std::max(shift, logits[a]);
    }
    double sum = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      const double w = beta[a] == 0.0 ? 0.0 : std::exp(logits[a] - shift) * beta[a];
      pi(s, a) = w;
      sum += w;
    }
    for (std::size_t a = 0; a < na; ++a) pi(s, a) /= sum;
  }
  return pi;
}

std::vector<double> induced_next_state(const EmpiricalModels& models, const TabularPolicy& pi,
                                       std::size_t s) {
  std::vector<double> out(models.n_states(), 0.0);
  for (std::size_t a = 0; a < models.n_actions(); ++a) {
    const double w = pi(s, a);
    if (w == 0.0) continue;
    const auto row = models.dyn(s, a);
    for (std::size_t s2 = 0; s2 < out.size(); ++s2) out[s2] += w * row[s2];
  }
  return out;
}

double regularizer_value(const RegularizerSpec& spec, const TabularPolicy& pi,
                         const EmpiricalModels& models, const TabularDataset& data) {
  const auto objectives = build_objectives(spec, models, data);
  double total = 0.0;
  for (std::size_t s : models.visited_states()) {
    const double v = objectives[s](pi.row(s));
    if (v == kNegInf) return kNegInf;
    total += v;
  }
  return total;
}

TabularPolicy brute_force_maximizer(const RegularizerSpec& spec, const EmpiricalModels& models,
                                    const TabularDataset& data, std::size_t grid) {
  const std::size_t na = models.n_actions();
  if (na > 4 || models.visited_states().size() > 8 || grid > 100 || grid == 0) {
    fail(ErrorKind::kInstanceTooLarge,
         "brute force supports at most 4 actions, 8 visited states and grid 100");
  }
  const auto objectives = build_objectives(spec, models, data);
  TabularPolicy pi = TabularPolicy::uniform(models.n_states(), na);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = i + 1; j < na; ++j) pairs.emplace_back(i, j);
  }

  std::vector<double> cand(na);
  for (std::size_t s : models.visited_states()) {
    const auto& f = objectives[s];
    std::vector<double> best(na, 0.0);
    double best_f = kNegInf;
    bool have = false;
    enumerate_simplex(na, grid, [&](const std::vector<std::size_t>& parts) {
      for (std::size_t a = 0; a < na; ++a) {
        cand[a] = static_cast<double>(parts[a]) / static_cast<double>(grid);
      }
      const double v = f(cand);
      if (!have || v > best_f) {
        best = cand;
        best_f = v;
        have = true;
      }
    });
    if (!pairs.empty()) {
      for (int step = 0; step < kRefineSteps; ++step) {
        const auto [i, j] = pairs[static_cast<std::size_t>(step) % pairs.size()];
        pair_line_search(f, best, i, j);
      }
    }
    std::copy(best.begin(), best.end(), pi.row(s).begin());
  }
  return pi;
}

double support_violation(const TabularPolicy& pi, const EmpiricalModels& models) {
  double worst = 0.0;
  for (std::size_t s : models.visited_states()) {
    const auto beta = models.beta(s);
    double mass = 0.0;
    for (std::size_t a = 0; a < models.n_actions(); ++a) {
      if (beta[a] == 0.0) mass += pi(s, a);
    }
    worst = std::max(worst, mass);
  }
  return worst;
}

TabularInstance random_instance(std::size_t n_states, std::size_t n_actions, bool stochastic,
                                Rng& rng) {
  if (n_states == 0 || n_actions == 0) {
    fail(ErrorKind::kInvalidInput, "instance needs states and actions");
  }
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.discount = 0.9;
  mdp.transition.assign(n_states * n_actions * n_states, 0.0);
  mdp.reward.resize(n_states * n_actions);
  mdp.initial.assign(n_states, 1.0 / static_cast<double>(n_states));
  for (auto& r : mdp.reward) r = rng.uniform();

  std::vector<std::size_t> order(n_states);
  std::vector<std::vector<std::size_t>> observed(n_states);
  for (std::size_t s = 0; s < n_states; ++s) {
    std::vector<std::size_t> acts(n_actions);
    std::iota(acts.begin(), acts.end(), 0);
    std::shuffle(acts.begin(), acts.end(), rng.engine());
    std::size_t max_obs = n_actions >= 2 ? n_actions - 1 : 1;
    if (!stochastic) max_obs = std::min(max_obs, n_states);
    const std::size_t k = 1 + rng.index(max_obs);
    observed[s].assign(acts.begin(), acts.begin() + static_cast<std::ptrdiff_t>(k));

    if (stochastic) {
      for (std::size_t a = 0; a < n_actions; ++a) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        const std::size_t support = std::min<std::size_t>(n_states, 2 + rng.index(2));
        double sum = 0.0;
        for (std::size_t i = 0; i < support; ++i) {
          const double w = 0.2 + rng.uniform();
          mdp.p(s, a, order[i]) = w;
          sum += w;
        }
        for (std::size_t i = 0; i < support; ++i) mdp.p(s, a, order[i]) /= sum;
      }
    } else {
      // Observed actions get pairwise distinct successors.
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t i = 0; i < k; ++i) mdp.p(s, observed[s][i], order[i]) = 1.0;
      for (std::size_t i = k; i < n_actions; ++i) {
        mdp.p(s, acts[i], rng.index(n_states)) = 1.0;
      }
    }
  }

  TabularDataset data;
  std::vector<bool> visit(n_states, false);
  for (std::size_t s = 0; s < n_states; ++s) visit[s] = rng.uniform() < 0.8;
  visit[rng.index(n_states)] = true;
  for (std::size_t s = 0; s < n_states; ++s) {
    if (!visit[s]) continue;
    for (std::size_t a : observed[s]) {
      const std::size_t count = stochastic ? 2 + rng.index(5) : 1 + rng.index(4);
      for (std::size_t c = 0; c < count; ++c) {
        double u = rng.uniform();
        std::size_t next = n_states - 1;
        for (std::size_t s2 = 0; s2 < n_states; ++s2) {
          u -= mdp.p(s, a, s2);
          if (u < 0.0 && mdp.p(s, a, s2) > 0.0) {
            next = s2;
            break;
          }
        }
        while (mdp.p(s, a, next) == 0.0) --next;
        data.transitions.push_back({s, a, mdp.r(s, a), next});
      }
    }
  }
  auto models = empirical_models(n_states, n_actions, data);
  auto values = optimal_values(mdp);
  return {std::move(mdp), std::move(data), std::move(models), std::move(values)};
}

VerifySummary verify_propositions(const VerifyOptions& opts,
                                  const std::function<void(const InstanceReport&)>& on_instance) {
  if (opts.states > 8 || opts.actions > 4 || opts.grid > 100) {
    fail(ErrorKind::kInstanceTooLarge,
         "verify supports at most 8 states, 4 actions and grid 100 (got states=" +
             std::to_string(opts.states) + ", actions=" + std::to_string(opts.actions) +
             ", grid=" + std::to_string(opts.grid) + ")");
  }
  if (opts.states == 0 || opts.actions == 0 || opts.grid == 0) {
    fail(ErrorKind::kInvalidInput, "verify needs positive states, actions and grid");
  }
  if (opts.alphas.empty()) fail(ErrorKind::kInvalidInput, "alpha list is empty");

  VerifySummary summary;
  summary.instances = opts.instances;
  if (!opts.stochastic) {
    summary.max_alignment_kl = 0.0;
    summary.max_argmax_gap = 0.0;
  }
  const double gap_tol = 2.0 / static_cast<double>(opts.grid);

  for (std::size_t i = 0; i < opts.instances; ++i) {
    Rng rng = Rng::stream(opts.seed, i);
    const auto inst = random_instance(opts.states, opts.actions, opts.stochastic, rng);
    const auto& models = inst.models;

    double alpha0_dev = 0.0;
    const auto n0 = value_aware_transition(models, inst.values, 0.0);
    for (std::size_t s : models.visited_states()) {
      const auto n_row = models.state_trans(s);
      for (std::size_t s2 = 0; s2 < models.n_states(); ++s2) {
        alpha0_dev = std::max(alpha0_dev, std::abs(n0.row(s)[s2] - n_row[s2]));
      }
    }

    for (double alpha : opts.alphas) {
      InstanceReport rep;
      rep.index = i;
      rep.alpha = alpha;
      rep.visited = models.visited_states().size();
      rep.alpha0_deviation = alpha0_dev;

      const RegularizerSpec rbar{RegularizerVariant::kRbar, alpha, inst.values};
      const RegularizerSpec rbar1{RegularizerVariant::kRbar1, alpha, inst.values};
      const auto max_r = brute_force_maximizer(rbar, models, inst.data, opts.grid);
      const auto max_r1 = brute_force_maximizer(rbar1, models, inst.data, opts.grid);
      rep.support_violation =
          std::max(support_violation(max_r, models), support_violation(max_r1, models));

      if (!opts.stochastic) {
        const auto pi_star = closed_form_policy(models, inst.values, alpha);
        const auto nstar = value_aware_transition(models, inst.values, alpha);
        double kl = 0.0, gap = 0.0;
        for (std::size_t s : models.visited_states()) {
          kl = std::max(kl, kl_divergence(nstar.row(s), induced_next_state(models, pi_star, s)));
          for (std::size_t a = 0; a < models.n_actions(); ++a) {
            gap = std::max({gap, std::abs(max_r(s, a) - pi_star(s, a)),
                            std::abs(max_r1(s, a) - pi_star(s, a))});
          }
        }
        rep.support_violation =
            std::max(rep.support_violation, support_violation(pi_star, models));
        rep.alignment_kl = kl;
        rep.argmax_gap = gap;
        summary.max_alignment_kl = std::max(*summary.max_alignment_kl, kl);
        summary.max_argmax_gap = std::max(*summary.max_argmax_gap, gap);
        if (kl > kAlignmentTol || gap > gap_tol) summary.passed = false;
      }
      summary.max_support_violation = std::max(summary.max_support_violation, rep.support_violation);
      summary.max_alpha0_deviation = std::max(summary.max_alpha0_deviation, alpha0_dev);
      if (rep.support_violation > kSupportTol || alpha0_dev > kAlpha0Tol) summary.passed = false;
      if (on_instance) on_instance(rep);
    }
  }
  return summary;
}

}  // namespace scas::tabular
