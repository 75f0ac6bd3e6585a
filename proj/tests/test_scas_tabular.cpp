#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "scas/error.hpp"
#include "scas/scas_tabular.hpp"

using namespace scas;
using namespace scas::tabular;

namespace {

const double kE = std::exp(1.0);

// Objective of the value-aware transition problem at one state:
// alpha * E_{s'~cand} V(s') - KL(cand || N).
double nstar_objective(std::span<const double> cand, std::span<const double> n,
                       const ValueTable& v, double alpha) {
  double value = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) value += cand[i] * v.v[i];
  return alpha * value - kl_divergence(cand, n);
}

// Direct transcription of the regularizer sum over dataset transitions.
double regularizer_by_transitions(const RegularizerSpec& spec, const TabularPolicy& pi,
                                  const EmpiricalModels& models, const TabularDataset& data) {
  const auto nstar = value_aware_transition(models, spec.values, spec.alpha);
  double total = 0.0;
  for (const auto& t : data.transitions) {
    double lik = 0.0;
    for (std::size_t a = 0; a < models.n_actions(); ++a) lik += pi(t.s, a) * models.dyn(t.s, a)[t.s2];
    const double norm = spec.variant == RegularizerVariant::kRbar
                            ? nstar.z[t.s]
                            : std::exp(spec.alpha * spec.values.v[t.s]);
    total += std::exp(spec.alpha * spec.values.v[t.s2]) / norm * std::log(lik);
  }
  return total / static_cast<double>(data.transitions.size());
}

}  // namespace

TEST_CASE("value-aware transition: alpha zero reproduces N") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto inst = random_instance(2 + rng.index(5), 1 + rng.index(4), i % 2 == 0, rng);
    const auto nstar = value_aware_transition(inst.models, inst.values, 0.0);
    for (std::size_t s : inst.models.visited_states()) {
      for (std::size_t s2 = 0; s2 < inst.mdp.n_states; ++s2) {
        CHECK(std::abs(nstar.row(s)[s2] - inst.models.state_trans(s)[s2]) <= 1e-14);
      }
    }
  }
}

TEST_CASE("value-aware transition: two-successor closed form") {
  TabularDataset d{{{0, 0, 0.0, 1}, {0, 1, 0.0, 2}}};
  const auto em = empirical_models(3, 2, d);
  const ValueTable v{{0.0, 0.0, 1.0}};
  const auto nstar = value_aware_transition(em, v, 1.0);
  CHECK(nstar.row(0)[0] == 0.0);
  CHECK(nstar.row(0)[1] == doctest::Approx(1.0 / (1.0 + kE)).epsilon(1e-14));
  CHECK(nstar.row(0)[2] == doctest::Approx(kE / (1.0 + kE)).epsilon(1e-14));
  CHECK(nstar.row(0)[1] == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(nstar.z[0] == doctest::Approx(0.5 + 0.5 * kE).epsilon(1e-12));
}

TEST_CASE("value-aware transition maximizes the KL-regularized value objective") {
  Rng rng(17);
  std::gamma_distribution<double> gamma1(1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const auto inst = random_instance(5, 3, true, rng);
    for (double alpha : {0.0, 1.0, 5.0}) {
      const auto nstar = value_aware_transition(inst.models, inst.values, alpha);
      for (std::size_t s : inst.models.visited_states()) {
        const auto n = inst.models.state_trans(s);
        const double best = nstar_objective(nstar.row(s), n, inst.values, alpha);
        std::vector<double> cand(n.size());
        for (int k = 0; k < 2000; ++k) {
          // Dirichlet samples over supp(N), plus local perturbations of N*.
          double sum = 0.0;
          for (std::size_t j = 0; j < n.size(); ++j) {
            if (n[j] == 0.0) {
              cand[j] = 0.0;
            } else if (k % 2 == 0) {
              cand[j] = gamma1(rng.engine());
            } else {
              cand[j] = nstar.row(s)[j] * (1.0 + 0.01 * rng.normal());
              cand[j] = std::max(cand[j], 0.0);
            }
            sum += cand[j];
          }
          for (auto& c : cand) c /= sum;
          CHECK(nstar_objective(cand, n, inst.values, alpha) <= best + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("value-aware transition: support preservation and alpha monotonicity") {
  Rng rng(23);
  for (int i = 0; i < 40; ++i) {
    const auto inst = random_instance(6, 3, i % 2 == 1, rng);
    std::vector<double> prev(inst.mdp.n_states, -std::numeric_limits<double>::infinity());
    for (double alpha : {0.0, 1.0, 2.0, 5.0, 10.0}) {
      const auto nstar = value_aware_transition(inst.models, inst.values, alpha);
      for (std::size_t s : inst.models.visited_states()) {
        double z = 0.0, mean_v = 0.0;
        for (std::size_t s2 = 0; s2 < inst.mdp.n_states; ++s2) {
          const double n = inst.models.state_trans(s)[s2];
          CHECK((nstar.row(s)[s2] > 0.0) == (n > 0.0));
          z += std::exp(alpha * inst.values.v[s2]) * n;
          mean_v += nstar.row(s)[s2] * inst.values.v[s2];
        }
        CHECK(nstar.z[s] == doctest::Approx(z).epsilon(1e-12));
        CHECK(mean_v >= prev[s] - 1e-12);
        prev[s] = mean_v;
      }
    }
  }
}

TEST_CASE("closed-form policy examples") {
  TabularDataset d{{{0, 0, 0.0, 1}, {0, 1, 0.0, 2}}};
  const auto em = empirical_models(3, 2, d);
  const ValueTable v{{0.0, 0.0, 1.0}};
  const auto pi0 = closed_form_policy(em, v, 0.0);
  CHECK(pi0(0, 0) == em.beta(0)[0]);
  CHECK(pi0(0, 1) == em.beta(0)[1]);
  const auto pi1 = closed_form_policy(em, v, 1.0);
  CHECK(pi1(0, 0) == doctest::Approx(1.0 / (1.0 + kE)).epsilon(1e-14));
  CHECK(pi1(0, 1) == doctest::Approx(kE / (1.0 + kE)).epsilon(1e-14));

  TabularDataset stoch{{{0, 0, 0.0, 1}, {0, 0, 0.0, 2}}};
  CHECK_THROWS_AS(closed_form_policy(empirical_models(3, 2, stoch), v, 1.0), Error);
}

TEST_CASE("closed-form policy aligns M(.|s,pi*) with N* and stays in the behavior support") {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_instance(2 + rng.index(5), 1 + rng.index(4), false, rng);
    for (double alpha : {0.0, 1.0, 5.0, 10.0}) {
      const auto pi = closed_form_policy(inst.models, inst.values, alpha);
      const auto nstar = value_aware_transition(inst.models, inst.values, alpha);
      CHECK(support_violation(pi, inst.models) == 0.0);
      for (std::size_t s : inst.models.visited_states()) {
        const auto induced = induced_next_state(inst.models, pi, s);
        for (std::size_t s2 = 0; s2 < induced.size(); ++s2) {
          CHECK(std::abs(induced[s2] - nstar.row(s)[s2]) <= 1e-10);
        }
        CHECK(kl_divergence(nstar.row(s), induced) <= 1e-10);
      }
    }
  }
}

TEST_CASE("regularizer value: zero likelihood gives -infinity") {
  TabularDataset d{{{0, 0, 0.0, 1}}};
  const auto em = empirical_models(2, 2, d);
  TabularPolicy pi{2, 2, {0.0, 1.0, 0.5, 0.5}};
  const RegularizerSpec spec{RegularizerVariant::kRbar, 1.0, ValueTable{{0.0, 1.0}}};
  CHECK(regularizer_value(spec, pi, em, d) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("regularizer value: alpha zero RBAR is the plain log-likelihood") {
  // Three states, hand-expanded: s0 -a0-> s1 twice, s0 -a1-> s2 once, s1 -a0-> s0 once.
  TabularDataset d{{{0, 0, 0.0, 1}, {0, 0, 0.0, 1}, {0, 1, 0.0, 2}, {1, 0, 0.0, 0}}};
  const auto em = empirical_models(3, 2, d);
  TabularPolicy pi{3, 2, {0.3, 0.7, 0.9, 0.1, 0.5, 0.5}};
  const RegularizerSpec spec{RegularizerVariant::kRbar, 0.0, ValueTable{{1.0, -2.0, 3.0}}};
  const double expected = (2.0 * std::log(0.3) + std::log(0.7) + std::log(0.9)) / 4.0;
  CHECK(regularizer_value(spec, pi, em, d) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(regularizer_by_transitions(spec, pi, em, d) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("regularizer value agrees with the per-transition sum on random instances") {
  Rng rng(41);
  for (int i = 0; i < 30; ++i) {
    const auto inst = random_instance(5, 3, i % 2 == 0, rng);
    const auto pi = TabularPolicy::uniform(5, 3);
    for (auto variant : {RegularizerVariant::kRbar, RegularizerVariant::kRbar1}) {
      const RegularizerSpec spec{variant, 2.0, inst.values};
      CHECK(regularizer_value(spec, pi, inst.models, inst.data) ==
            doctest::Approx(regularizer_by_transitions(spec, pi, inst.models, inst.data))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("brute-force maximizer recovers the closed form under deterministic dynamics") {
  Rng rng(51);
  for (int i = 0; i < 20; ++i) {
    const auto inst = random_instance(4, 3, false, rng);
    for (double alpha : {0.0, 1.0, 5.0}) {
      const auto pi_star = closed_form_policy(inst.models, inst.values, alpha);
      for (auto variant : {RegularizerVariant::kRbar, RegularizerVariant::kRbar1}) {
        const RegularizerSpec spec{variant, alpha, inst.values};
        const auto found = brute_force_maximizer(spec, inst.models, inst.data);
        for (std::size_t s : inst.models.visited_states()) {
          for (std::size_t a = 0; a < 3; ++a) {
            CHECK(std::abs(found(s, a) - pi_star(s, a)) <= 2.0 / 50.0);
          }
        }
        const double at_star = regularizer_value(spec, pi_star, inst.models, inst.data);
        const double at_found = regularizer_value(spec, found, inst.models, inst.data);
        CHECK(at_star >= at_found - 1e-9);
        CHECK(std::abs(at_star - at_found) <= 1e-9);
      }
    }
  }
}

TEST_CASE("brute-force maximizers of RBAR and RBAR1 coincide under deterministic dynamics") {
  Rng rng(53);
  for (int i = 0; i < 20; ++i) {
    const auto inst = random_instance(5, 4, false, rng);
    const RegularizerSpec r{RegularizerVariant::kRbar, 5.0, inst.values};
    const RegularizerSpec r1{RegularizerVariant::kRbar1, 5.0, inst.values};
    const auto a = brute_force_maximizer(r, inst.models, inst.data);
    const auto b = brute_force_maximizer(r1, inst.models, inst.data);
    for (std::size_t s : inst.models.visited_states()) {
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(a(s, k) - b(s, k)) <= 2.0 / 50.0);
    }
  }
}

TEST_CASE("brute-force maximizer stays inside the behavior support under stochastic dynamics") {
  Rng rng(57);
  for (int i = 0; i < 20; ++i) {
    const auto inst = random_instance(5, 4, true, rng);
    for (auto variant : {RegularizerVariant::kRbar, RegularizerVariant::kRbar1}) {
      const RegularizerSpec spec{variant, 1.0, inst.values};
      const auto found = brute_force_maximizer(spec, inst.models, inst.data);
      CHECK(support_violation(found, inst.models) <= 1e-6);
    }
  }
}

TEST_CASE("brute-force maximizer rejects oversized instances") {
  Rng rng(2);
  const auto inst = random_instance(3, 2, false, rng);
  const RegularizerSpec spec{RegularizerVariant::kRbar, 1.0, inst.values};
  CHECK_THROWS_AS(brute_force_maximizer(spec, inst.models, inst.data, 101), Error);
  const auto wide = random_instance(3, 5, false, rng);
  const RegularizerSpec wspec{RegularizerVariant::kRbar, 1.0, wide.values};
  CHECK_THROWS_AS(brute_force_maximizer(wspec, wide.models, wide.data), Error);
}

TEST_CASE("support violation examples") {
  TabularDataset d{{{0, 0, 0.0, 0}, {0, 1, 0.0, 0}}};
  const auto em = empirical_models(1, 4, d);
  TabularPolicy beta{1, 4, {0.5, 0.5, 0.0, 0.0}};
  CHECK(support_violation(beta, em) == 0.0);
  CHECK(support_violation(TabularPolicy::uniform(1, 4), em) == 0.5);
}

TEST_CASE("random instances leave genuine out-of-support actions") {
  Rng rng(61);
  for (int i = 0; i < 50; ++i) {
    const auto inst = random_instance(6, 4, i % 2 == 0, rng);
    for (std::size_t s : inst.models.visited_states()) {
      const auto beta = inst.models.beta(s);
      CHECK(std::count(beta.begin(), beta.end(), 0.0) >= 1);
    }
    if (i % 2 == 1) CHECK(inst.models.deterministic());
  }
}

TEST_CASE("verify_propositions passes on deterministic and stochastic instances") {
  VerifyOptions opts;
  opts.instances = 10;
  opts.states = 5;
  opts.actions = 4;
  auto det = verify_propositions(opts);
  CHECK(det.passed);
  CHECK(*det.max_argmax_gap <= 2.0 / 50.0);
  CHECK(*det.max_alignment_kl <= 1e-10);
  opts.stochastic = true;
  auto sto = verify_propositions(opts);
  CHECK(sto.passed);
  CHECK(sto.max_support_violation <= 1e-6);
  CHECK_FALSE(sto.max_argmax_gap.has_value());

  opts.states = 20;
  CHECK_THROWS_AS(verify_propositions(opts), Error);
}
