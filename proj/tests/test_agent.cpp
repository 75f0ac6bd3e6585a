#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "scas/agent.hpp"
#include "scas/error.hpp"

using namespace scas;
using namespace scas::agent;

namespace {

AgentConfig small_config() {
  AgentConfig c;
  c.hidden = 16;
  c.batch = 32;
  c.gradient_steps = 200;
  return c;
}

const env::ContinuousDataset& small_data() {
  static const env::ContinuousDataset ds = [] {
    env::PointNavConfig cfg;
    Rng rng(1);
    return env::collect_dataset(cfg, {env::BehaviorKind::kScriptedPd, 0.3}, 2000, true, rng);
  }();
  return ds;
}

const dyn::DynamicsModel& small_dynamics() {
  static const dyn::DynamicsModel m = [] {
    dyn::DynamicsConfig c;
    c.steps = 300;
    c.hidden = 16;
    c.depth = 2;
    Rng rng(2);
    return dyn::train_dynamics(small_data(), c, {}, rng).back();
  }();
  return m;
}

AgentState fresh_agent(const AgentConfig& cfg, std::uint64_t seed = 3) {
  Rng rng(seed);
  const auto& d = small_data();
  auto st = init_agent(cfg, 2, 2, d.state_mean, d.state_std, rng);
  st.dynamics = small_dynamics();
  return st;
}

Batch fixed_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_batch(dyn::flatten(small_data()), n, rng);
}

// Last-layer weight block of a network.
std::span<double> last_weights(const nn::MlpSpec& spec, nn::MlpParams& p) {
  const std::size_t l = spec.num_layers() - 1;
  return {p.flat.data() + spec.weight_offset(l), spec.widths[l] * spec.widths[l + 1]};
}

std::vector<double> row(std::span<const double> v, std::size_t b, std::size_t w) {
  return {v.begin() + b * w, v.begin() + (b + 1) * w};
}

std::vector<double> cat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Mean-over-critics value at (s, pi(s)), straight from single-sample passes.
double value_at(const AgentState& st, const std::vector<double>& s) {
  const auto a = nn::forward(st.actor_spec, st.actor, s);
  double v = 0.0;
  for (const auto& c : st.critics) v += nn::forward(st.critic_spec, c, cat(s, a))[0];
  return v / st.critics.size();
}

// Actor loss with the normalizer and the weights frozen (sigma = 0).
double frozen_loss(const AgentState& st, const Batch& b, double lambda, double norm,
                   const std::vector<double>& w) {
  double q = 0.0, reg = 0.0;
  for (std::size_t k = 0; k < b.size; ++k) {
    const auto s = row(b.s, k, 2);
    q += value_at(st, s);
    const auto a = nn::forward(st.actor_spec, st.actor, s);
    const auto p = nn::forward(st.dynamics->spec, st.dynamics->params, cat(s, a));
    const auto s2 = row(b.s2, k, 2);
    reg += w[k] * ((p[0] - s2[0]) * (p[0] - s2[0]) + (p[1] - s2[1]) * (p[1] - s2[1]));
  }
  const double n = static_cast<double>(b.size);
  return -(1.0 - lambda) * (q / n) / norm + lambda * reg / n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config validation") {
  AgentConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.weight_clip = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("config JSON round trip rejects unknown keys") {
  AgentConfig c;
  c.alpha = 2.5;
  c.value_aggregate = ValueAggregate::kMin;
  c.mode = Mode::kBehaviorCloning;
  nlohmann::json j;
  to_json(j, c);
  AgentConfig back;
  from_json(j, back);
  CHECK(back.alpha == 2.5);
  CHECK(back.value_aggregate == ValueAggregate::kMin);
  CHECK(back.mode == Mode::kBehaviorCloning);
  j["alhpa"] = 1;
  CHECK_THROWS_AS(from_json(j, back), Error);
}

TEST_CASE("untrained actor acts near zero, deterministically and inside the box") {
  const auto st = fresh_agent(AgentConfig{});
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> s{rng.uniform(0, 3), rng.uniform(0, 5)};
    const auto a = act(st, s);
    CHECK(std::abs(a[0]) < 0.05);
    CHECK(std::abs(a[1]) < 0.05);
    CHECK(act(st, s) == a);
  }
  for (double x : {-1e6, 1e6}) {
    const auto a = act(st, std::vector<double>{x, -x});
    CHECK(std::abs(a[0]) <= 1.0);
    CHECK(std::abs(a[1]) <= 1.0);
  }
  CHECK(st.targets == st.critics);
}

TEST_CASE("gamma = 0: critics regress the reward") {
  auto cfg = small_config();
  cfg.gamma = 0.0;
  cfg.critic_lr = 1e-3;
  auto st = fresh_agent(cfg);
  const auto b = fixed_batch(16, 5);
  for (int i = 0; i < 4000; ++i) critic_update(st, b, cfg);
  for (const auto& c : st.critics) {
    for (std::size_t k = 0; k < b.size; ++k) {
      const auto q = nn::forward(st.critic_spec, c, cat(row(b.s, k, 2), row(b.a, k, 2)))[0];
      CHECK(std::abs(q - b.r[k]) < 1e-2);
    }
  }
}

TEST_CASE("terminal samples ignore the target critics") {
  auto cfg = small_config();
  auto b = fixed_batch(32, 6);
  std::fill(b.done.begin(), b.done.end(), 1.0);
  auto st1 = fresh_agent(cfg);
  auto st2 = st1;
  Rng rng(7);
  for (auto& t : st2.targets) t = nn::init_params(st2.critic_spec, rng);
  const auto c1 = critic_update(st1, b, cfg);
  const auto c2 = critic_update(st2, b, cfg);
  CHECK(c1.loss == c2.loss);
  CHECK(st1.critics == st2.critics);
}

TEST_CASE("five-transition chain reaches the exact fixed point") {
  // s0 -> s1 -> ... -> s4 -> terminal, every dataset action 0.
  env::ContinuousDataset ds;
  const double r[5] = {-1.0, 0.5, -0.25, 2.0, 1.0};
  for (int i = 0; i < 5; ++i) {
    std::vector<double> s{0.5 * i, 1.0 + 0.3 * i}, s2{0.5 * (i + 1), 1.0 + 0.3 * (i + 1)};
    ds.transitions.push_back({s, {0.0, 0.0}, r[i], s2, i == 4});
  }
  ds.compute_statistics();
  AgentConfig cfg;
  cfg.gamma = 0.9;
  cfg.hidden = 32;
  cfg.critic_lr = 1e-3;
  Rng rng(8);
  auto st = init_agent(cfg, 2, 2, ds.state_mean, ds.state_std, rng);
  std::fill(st.actor.flat.begin(), st.actor.flat.end(), 0.0);  // pi == 0 == dataset action

  const auto flat = dyn::flatten(ds);
  Batch b{5, flat.s, flat.a, flat.r, flat.s2, flat.done};
  for (int i = 0; i < 20000; ++i) {
    critic_update(st, b, cfg);
    update_targets(st, cfg.tau);
  }
  double q_exact[5];
  q_exact[4] = r[4];
  for (int i = 3; i >= 0; --i) q_exact[i] = r[i] + 0.9 * q_exact[i + 1];
  for (const auto& c : st.critics) {
    for (std::size_t k = 0; k < 5; ++k) {
      const double q = nn::forward(st.critic_spec, c, cat(row(b.s, k, 2), row(b.a, k, 2)))[0];
      CHECK(std::abs(q - q_exact[k]) < 5e-2);
    }
  }
}

TEST_CASE("alpha = 0 gives unit weights and the plain alignment error") {
  auto cfg = small_config();
  cfg.alpha = 0.0;
  cfg.sigma = 0.0;
  auto st = fresh_agent(cfg);
  const auto b = fixed_batch(32, 9);
  Rng rng(10);
  const auto reg = scas_regularizer(st, b, cfg, rng);
  double plain = 0.0;
  for (std::size_t k = 0; k < b.size; ++k) {
    CHECK(reg.weights[k] == 1.0);
    const auto s = row(b.s, k, 2);
    const auto p = nn::forward(st.dynamics->spec, st.dynamics->params,
                               cat(s, nn::forward(st.actor_spec, st.actor, s)));
    plain += (p[0] - b.s2[2 * k]) * (p[0] - b.s2[2 * k]) +
             (p[1] - b.s2[2 * k + 1]) * (p[1] - b.s2[2 * k + 1]);
  }
  CHECK(reg.value == doctest::Approx(plain / b.size).epsilon(1e-12));
}

TEST_CASE("large value gaps saturate the weight at exactly the clip") {
  auto cfg = small_config();
  auto st = fresh_agent(cfg);
  for (auto& c : st.critics) {
    for (auto& w : last_weights(st.critic_spec, c)) w *= 1000.0;
  }
  const auto b = fixed_batch(64, 11);
  Rng rng(12);
  const auto reg = scas_regularizer(st, b, cfg, rng);
  CHECK(reg.max_weight == 50.0);
  CHECK(reg.max_raw_weight > 50.0);
  for (std::size_t k = 0; k < b.size; ++k) {
    const double raw = std::exp(cfg.alpha * (value_at(st, row(b.s2, k, 2)) - value_at(st, row(b.s, k, 2))));
    CHECK(reg.weights[k] == doctest::Approx(std::min(raw, 50.0)).epsilon(1e-9));
    CHECK(reg.weights[k] <= 50.0);
  }
}

TEST_CASE("exact reconstruction gives a zero regularizer") {
  // Stationary data, a zero actor and an identity model on the state input.
  env::ContinuousDataset ds;
  Rng gen(13);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s{gen.uniform(0, 3), gen.uniform(0, 5)};
    ds.transitions.push_back({s, {0.0, 0.0}, -1.0, s, false});
  }
  ds.compute_statistics();
  auto cfg = small_config();
  cfg.sigma = 0.0;
  Rng rng(14);
  auto st = init_agent(cfg, 2, 2, ds.state_mean, ds.state_std, rng);
  std::fill(st.actor.flat.begin(), st.actor.flat.end(), 0.0);
  dyn::DynamicsModel m;
  m.spec = nn::make_spec({4, 2});
  m.params.flat.assign(m.spec.param_count(), 0.0);
  m.params.flat[0 * 2 + 0] = 1.0;
  m.params.flat[1 * 2 + 1] = 1.0;
  m.trained_steps = 1;
  m.state_mean = ds.state_mean;
  m.state_std = ds.state_std;
  st.dynamics = m;
  Rng brng(15);
  const auto b = sample_batch(dyn::flatten(ds), 32, brng);
  const auto reg = scas_regularizer(st, b, cfg, rng);
  CHECK(reg.value == 0.0);
}

TEST_CASE("missing or untrained dynamics is refused") {
  auto cfg = small_config();
  auto st = fresh_agent(cfg);
  const auto b = fixed_batch(8, 16);
  Rng rng(17);
  st.dynamics->trained_steps = 0;
  try {
    scas_regularizer(st, b, cfg, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUntrainedModel);
  }
  st.dynamics.reset();
  CHECK_THROWS_AS(policy_update(st, b, cfg, rng), Error);
}

TEST_CASE("policy gradient matches finite differences of the frozen objective") {
  for (double lambda : {0.0, 0.25, 1.0}) {
    CAPTURE(lambda);
    auto cfg = small_config();
    cfg.lambda = lambda;
    cfg.alpha = 1.0;
    cfg.sigma = 0.0;
    auto st = fresh_agent(cfg, 20);
    // A visibly non-trivial actor so both terms have curvature.
    Rng prng(21);
    st.actor = nn::init_params(st.actor_spec, prng);
    const auto b = fixed_batch(8, 22);

    double norm = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) norm += std::abs(value_at(st, row(b.s, k, 2)));
    norm = std::max(norm / b.size, 1e-6);
    std::vector<double> w(b.size, 1.0);
    Rng rrng(23);
    if (lambda > 0.0) w = scas_regularizer(st, b, cfg, rrng).weights;

    Rng grng(24);
    const auto pg = policy_gradient(st, b, cfg, grng);
    Rng pick(25);
    for (int t = 0; t < 40; ++t) {
      const std::size_t i = pick.index(st.actor.size());
      const double h = 1e-6;
      auto plus = st, minus = st;
      plus.actor.flat[i] += h;
      minus.actor.flat[i] -= h;
      const double fd = (frozen_loss(plus, b, lambda, norm, w) - frozen_loss(minus, b, lambda, norm, w)) / (2 * h);
      CHECK(std::abs(fd - pg.grad[i]) <= 1e-5 * std::abs(fd) + 1e-8);
    }
  }
}

TEST_CASE("lambda = 1 steps along the pure regularizer gradient") {
  auto cfg = small_config();
  cfg.lambda = 1.0;
  auto st = fresh_agent(cfg);
  st.step = 10;
  auto ref = st;
  const auto b = fixed_batch(32, 26);
  Rng r1(27), r2(27);
  policy_update(st, b, cfg, r1);
  const auto reg = scas_regularizer(ref, b, cfg, r2);
  nn::adam_step(ref.actor_opt, ref.actor, reg.actor_grad, nn::cosine_multiplier(10, cfg.gradient_steps));
  for (std::size_t i = 0; i < st.actor.size(); ++i) {
    CHECK(st.actor.flat[i] == doctest::Approx(ref.actor.flat[i]).epsilon(1e-12));
  }
  CHECK(st.policy_updates == 1);
}

TEST_CASE("a constant critic gives no normalized-Q gradient") {
  auto cfg = small_config();
  cfg.lambda = 0.0;
  auto st = fresh_agent(cfg);
  for (auto& c : st.critics) {
    for (auto& w : last_weights(st.critic_spec, c)) w = 0.0;
  }
  Rng rng(28);
  const auto pg = policy_gradient(st, fixed_batch(32, 29), cfg, rng);
  for (double g : pg.grad) CHECK(g == 0.0);
}

TEST_CASE("policy update refreshes the targets by Polyak averaging") {
  auto cfg = small_config();
  auto st = fresh_agent(cfg);
  const auto b = fixed_batch(32, 30);
  critic_update(st, b, cfg);
  const auto before = st.targets;
  Rng rng(31);
  policy_update(st, b, cfg, rng);
  for (std::size_t i = 0; i < st.critics.size(); ++i) {
    for (std::size_t j = 0; j < st.critics[i].size(); j += 97) {
      const double expect = (1 - cfg.tau) * before[i].flat[j] + cfg.tau * st.critics[i].flat[j];
      CHECK(st.targets[i].flat[j] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("zero gradient steps return the initialization") {
  auto cfg = small_config();
  cfg.gradient_steps = 0;
  Rng r1(32), r2(32);
  const auto& d = small_data();
  const auto res = train(d, small_dynamics(), cfg, r1);
  const auto init = init_agent(cfg, 2, 2, d.state_mean, d.state_std, r2);
  CHECK(res.state.actor == init.actor);
  CHECK(res.state.critics == init.critics);
  CHECK(res.state.targets == init.targets);
  CHECK(res.metrics.empty());
}

TEST_CASE("training is deterministic, clipped and target-bounded") {
  auto cfg = small_config();
  TrainHooks hooks;
  hooks.log_every = 50;
  Rng r1(33), r2(33);
  const auto a = train(small_data(), small_dynamics(), cfg, r1, hooks);
  const auto b = train(small_data(), small_dynamics(), cfg, r2, hooks);
  CHECK(a.state.actor == b.state.actor);
  CHECK(a.state.critics == b.state.critics);
  CHECK(a.state.targets == b.state.targets);
  REQUIRE(a.metrics.size() == 4);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].critic_loss == b.metrics[i].critic_loss);
    CHECK(a.metrics[i].mean_q == b.metrics[i].mean_q);
    CHECK(a.metrics[i].max_weight.value() <= 50.0);
  }
  CHECK(a.max_weight <= 50.0);
  CHECK(a.max_weight == std::min(a.max_raw_weight, 50.0));
  CHECK(a.max_target_bound_excess <= 1e-12);
  CHECK(a.state.step == 200);
  CHECK(a.state.policy_updates == 100);
}

TEST_CASE("early stop from the log hook") {
  auto cfg = small_config();
  TrainHooks hooks;
  hooks.log_every = 20;
  hooks.on_log = [](MetricsRow& r, const AgentState&) { return r.step < 60; };
  Rng rng(34);
  const auto res = train(small_data(), small_dynamics(), cfg, rng, hooks);
  CHECK(res.stopped_early);
  CHECK(res.state.step == 60);
  CHECK(res.metrics.size() == 3);
}

TEST_CASE("normalization mismatch is refused") {
  auto m = small_dynamics();
  m.state_mean[0] += 0.1;
  Rng rng(35);
  try {
    train(small_data(), m, small_config(), rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMismatch);
  }
}

TEST_CASE("behavior cloning leaves critics alone and fits the data actions") {
  auto cfg = small_config();
  cfg.mode = Mode::kBehaviorCloning;
  cfg.gradient_steps = 600;
  cfg.actor_lr = 1e-3;
  TrainHooks hooks;
  hooks.log_every = 100;
  Rng r1(36), r2(36);
  const auto res = train(small_data(), std::nullopt, cfg, r1, hooks);
  const auto init = init_agent(cfg, 2, 2, small_data().state_mean, small_data().state_std, r2);
  CHECK(res.state.critics == init.critics);
  CHECK(res.state.targets == init.targets);
  CHECK(res.metrics.back().policy_objective.value() > res.metrics.front().policy_objective.value());
  CHECK_FALSE(res.metrics.back().mean_q.has_value());
  CHECK_FALSE(res.metrics.back().critic_loss.has_value());
}

TEST_CASE("evaluation report aggregates are recomputable") {
  auto st = fresh_agent(AgentConfig{});
  env::PointNavConfig env_cfg;
  EvalOptions opts{env::ResetMode::kOodHole, 12, env::PerturbProtocol{0.5, 5}, 3};
  const auto rep = evaluate(st, env_cfg, opts);
  REQUIRE(rep.episodes.size() == 12);
  double m = 0.0, s = 0.0;
  for (const auto& e : rep.episodes) {
    m += e.ret;
    s += e.steps_out_of_ood;
    CHECK(e.perturb_steps <= 5);
  }
  m /= 12;
  s /= 12;
  double v = 0.0;
  for (const auto& e : rep.episodes) v += (e.ret - m) * (e.ret - m);
  CHECK(std::abs(rep.mean_return - m) < 1e-9);
  CHECK(std::abs(rep.mean_steps_out_of_ood - s) < 1e-9);
  CHECK(std::abs(rep.std_return - std::sqrt(v / 12)) < 1e-9);

  opts.episodes = 0;
  const auto empty = evaluate(st, env_cfg, opts);
  CHECK(empty.episodes.empty());
  CHECK(empty.mean_return == 0.0);

  EvalOptions a{env::ResetMode::kInDist, 5, std::nullopt, 9};
  EvalOptions b{env::ResetMode::kInDist, 5, env::PerturbProtocol{0.5, 0}, 9};
  const auto ra = evaluate(st, env_cfg, a), rb = evaluate(st, env_cfg, b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(ra.episodes[i].ret == rb.episodes[i].ret);
}

TEST_CASE("bundle round trip") {
  auto cfg = small_config();
  cfg.gradient_steps = 20;
  Rng rng(37);
  const auto res = train(small_data(), small_dynamics(), cfg, rng);
  const auto dir = std::filesystem::temp_directory_path() / "scas_bundle_rt";
  std::filesystem::remove_all(dir);
  nlohmann::json cj;
  to_json(cj, cfg);
  save_bundle(dir, res.state, {cj, 37, "abc"});
  const auto back = load_bundle(dir);
  CHECK(back.state.actor == res.state.actor);
  CHECK(back.state.critics == res.state.critics);
  CHECK(back.state.targets == res.state.targets);
  REQUIRE(back.state.dynamics.has_value());
  CHECK(back.state.dynamics->params == small_dynamics().params);
  CHECK(back.state.step == 20);
  CHECK(back.manifest["dataset_hash"] == "abc");
  const std::vector<double> s{1.0, 4.0};
  CHECK(act(back.state, s) == act(res.state, s));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_bundle(dir), Error);
}

TEST_CASE("metrics CSV layout") {
  const auto path = std::filesystem::temp_directory_path() / "scas_metrics.csv";
  MetricsRow r;
  r.step = 5;
  r.critic_loss = 0.5;
  r.eval_return = -2.0;
  write_metrics_csv(path, {r});
  CHECK(slurp(path) ==
        "step,critic_loss,policy_objective,mean_q,max_weight,eval_return,eval_steps_out_of_ood\n"
        "5,0.5,,,,-2,\n");
  write_metrics_csv(path, {});
  CHECK(slurp(path) ==
        "step,critic_loss,policy_objective,mean_q,max_weight,eval_return,eval_steps_out_of_ood\n");
  std::filesystem::remove(path);
}
