#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "scas/checkpoint.hpp"
#include "scas/dynamics.hpp"
#include "scas/error.hpp"

using namespace scas;
using namespace scas::dyn;

namespace {

// s' = s on random states and actions.
env::ContinuousDataset identity_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  env::ContinuousDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s{rng.uniform(0.0, 3.0), rng.uniform(0.0, 5.0)};
    std::vector<double> a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    ds.transitions.push_back({s, a, 0.0, s, false});
  }
  ds.compute_statistics();
  return ds;
}

env::ContinuousDataset pointnav_data(std::size_t n, std::uint64_t seed) {
  env::PointNavConfig cfg;
  Rng rng(seed);
  return env::collect_dataset(cfg, {env::BehaviorKind::kRandom, 0.0}, n, false, rng);
}

// Evaluate a held-out set under the training set's normalization.
env::ContinuousDataset restat(env::ContinuousDataset held, const env::ContinuousDataset& train) {
  held.state_mean = train.state_mean;
  held.state_std = train.state_std;
  return held;
}

// Per-coordinate RMSE in raw state units.
std::vector<double> raw_rmse(const DynamicsModel& m, const env::ContinuousDataset& ds) {
  std::vector<double> acc(2, 0.0), s(2);
  for (const auto& t : ds.transitions) {
    normalize_rows(t.s, m.state_mean, m.state_std, s);
    const auto p = predict(m, s, t.a);
    for (std::size_t i = 0; i < 2; ++i) {
      const double e = p[i] * m.state_std[i] + m.state_mean[i] - t.s2[i];
      acc[i] += e * e;
    }
  }
  for (auto& v : acc) v = std::sqrt(v / ds.transitions.size());
  return acc;
}

}  // namespace

TEST_CASE("identity dynamics are learned") {
  const auto train = identity_data(4000, 1);
  const auto held = restat(identity_data(1000, 2), train);
  DynamicsConfig cfg;
  cfg.steps = 20000;
  Rng rng(3);
  const auto models = train_dynamics(train, cfg, {0}, rng);
  REQUIRE(models.size() == 2);
  const auto& m = models.back();
  CHECK(m.trained_steps == 20000);
  const double held_mse = mse(m, held);
  MESSAGE("identity held-out mse " << held_mse);
  CHECK(held_mse < 1e-4);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& t = held.transitions[i];
    std::vector<double> s(2);
    normalize_rows(t.s, m.state_mean, m.state_std, s);
    const auto p = predict(m, s, t.a);
    CHECK(std::abs(p[0] - s[0]) < 1e-2);
    CHECK(std::abs(p[1] - s[1]) < 1e-2);
  }
  // The untrained checkpoint is worse on the same held-out set.
  CHECK(models.front().trained_steps == 0);
  CHECK(mse(models.front(), held) > held_mse);
}

TEST_CASE("noiseless point-nav dynamics: held-out RMSE below 2% of a step") {
  const auto train = pointnav_data(20000, 4);
  const auto held = pointnav_data(2000, 5);
  DynamicsConfig cfg;  // default schedule and horizon
  Rng rng(6);
  const auto models = train_dynamics(train, cfg, {0, 25000, 50000, 75000}, rng);
  REQUIRE(models.size() == 5);
  const auto rmse = raw_rmse(models.back(), held);
  MESSAGE("point-nav held-out rmse " << rmse[0] << " " << rmse[1]);
  const double tol = 0.02 * env::PointNavConfig{}.action_scale;
  CHECK(rmse[0] < tol);
  CHECK(rmse[1] < tol);

  // Checkpoint ordering on the held-out set, with minibatch jitter allowance.
  const auto h = restat(held, train);
  double prev = mse(models.front(), h);
  for (std::size_t i = 1; i < models.size(); ++i) {
    const double cur = mse(models[i], h);
    CHECK(models[i].trained_steps > models[i - 1].trained_steps);
    CHECK(cur <= prev * 1.1);
    prev = cur;
  }
  CHECK(mse(models.back(), h) < mse(models.front(), h));
}

TEST_CASE("checkpoint list is sorted and deduplicated") {
  const auto train = identity_data(300, 7);
  DynamicsConfig cfg;
  cfg.steps = 40;
  cfg.hidden = 8;
  cfg.depth = 2;
  Rng rng(8);
  const auto models = train_dynamics(train, cfg, {30, 10, 30, 40}, rng);
  REQUIRE(models.size() == 3);
  CHECK(models[0].trained_steps == 10);
  CHECK(models[1].trained_steps == 30);
  CHECK(models[2].trained_steps == 40);
}

TEST_CASE("action gradient of the squared prediction error matches finite differences") {
  const auto train = pointnav_data(1000, 9);
  DynamicsConfig cfg;
  cfg.steps = 200;
  Rng rng(10);
  const auto m = train_dynamics(train, cfg, {}, rng).back();
  Rng gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> s{gen.normal(), gen.normal()};
    std::vector<double> a{gen.uniform(-1, 1), gen.uniform(-1, 1)};
    const std::vector<double> target{gen.normal(), gen.normal()};
    auto loss = [&](const std::vector<double>& act) {
      const auto p = predict(m, s, act);
      return (p[0] - target[0]) * (p[0] - target[0]) + (p[1] - target[1]) * (p[1] - target[1]);
    };
    const auto p = predict(m, s, a);
    const std::vector<double> up{2 * (p[0] - target[0]), 2 * (p[1] - target[1])};
    const auto g = predict_grad(m, s, a, up);
    for (std::size_t j = 0; j < 2; ++j) {
      const double h = 1e-6;
      auto ap = a, am = a;
      ap[j] += h;
      am[j] -= h;
      const double fd = (loss(ap) - loss(am)) / (2 * h);
      const double rel = std::abs(fd - g.action[j]) / std::max(std::abs(fd), 1e-6);
      CHECK(rel < 1e-3);
    }
  }
}

TEST_CASE("prediction and training are deterministic") {
  const auto train = identity_data(500, 12);
  DynamicsConfig cfg;
  cfg.steps = 100;
  Rng r1(13), r2(13);
  const auto m1 = train_dynamics(train, cfg, {}, r1).back();
  const auto m2 = train_dynamics(train, cfg, {}, r2).back();
  CHECK(m1.params == m2.params);
  const std::vector<double> s{0.1, -0.2}, a{0.3, 0.4};
  CHECK(predict(m1, s, a) == predict(m1, s, a));
}

TEST_CASE("shape checks") {
  const auto train = identity_data(100, 14);
  DynamicsConfig cfg;
  cfg.steps = 1;
  Rng rng(15);
  const auto m = train_dynamics(train, cfg, {}, rng).back();
  CHECK(m.state_dim() == 2);
  CHECK(m.action_dim() == 2);
  const std::vector<double> s{0.0, 0.0}, a3{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(predict(m, s, a3), Error);
  env::ContinuousDataset empty;
  CHECK_THROWS_AS(train_dynamics(empty, cfg, {}, rng), Error);
}

TEST_CASE("flatten normalizes states with the dataset statistics") {
  env::ContinuousDataset ds;
  ds.transitions = {{{1.0, 0.0}, {0.5, -0.5}, -2.0, {2.0, 0.0}, true},
                    {{3.0, 0.0}, {0.0, 0.0}, -1.0, {3.0, 0.0}, false}};
  ds.compute_statistics();
  const auto f = flatten(ds);
  CHECK(f.n == 2);
  CHECK(f.s[0] == doctest::Approx(-1.0));
  CHECK(f.s2[0] == doctest::Approx(0.0));
  CHECK(f.s[2] == doctest::Approx(1.0));
  CHECK(f.s[1] == doctest::Approx(0.0));
  CHECK(f.a[1] == -0.5);
  CHECK(f.done[0] == 1.0);
  CHECK(f.done[1] == 0.0);
}

TEST_CASE("dynamics checkpoint round trip") {
  const auto train = identity_data(100, 16);
  DynamicsConfig cfg;
  cfg.steps = 5;
  Rng rng(17);
  const auto m = train_dynamics(train, cfg, {}, rng).back();
  const auto path = std::filesystem::temp_directory_path() / "scas_dyn_rt.ckpt";
  save_dynamics(path, m, 99);
  const auto back = load_dynamics(path);
  CHECK(back.params == m.params);
  CHECK(back.spec == m.spec);
  CHECK(back.trained_steps == 5);
  CHECK(back.state_mean == m.state_mean);
  CHECK(back.state_std == m.state_std);
  CHECK(load_checkpoint(path).header.step == 5);
  std::filesystem::remove(path);
}
