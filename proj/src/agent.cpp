#include "scas/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "scas/checkpoint.hpp"
#include "scas/error.hpp"
#include "scas/json_util.hpp"

namespace scas::agent {
namespace {

constexpr double kQNormFloor = 1e-6;

// Per-thread scratch so the hot loop does not reallocate.
struct Scratch {
  nn::Workspace actor, actor_hat, actor_next, critic_tmp, dynamics;
  std::vector<nn::Workspace> critics;
  std::vector<double> x, x2, xd, a_pi, a_hat, y, up, grad, q, v_s, v_s2, gx, g_a, g_ahat;
};

Scratch& scratch(std::size_t n_critics) {
  thread_local Scratch sc;
  if (sc.critics.size() < n_critics) sc.critics.resize(n_critics);
  return sc;
}

// out[b] = [left[b], right[b]]
void concat_rows(std::span<const double> left, std::size_t lw, std::span<const double> right,
                 std::size_t rw, std::size_t rows, std::vector<double>& out) {
  out.resize(rows * (lw + rw));
  for (std::size_t b = 0; b < rows; ++b) {
    std::copy_n(left.data() + b * lw, lw, out.data() + b * (lw + rw));
    std::copy_n(right.data() + b * rw, rw, out.data() + b * (lw + rw) + lw);
  }
}

// Aggregated online-critic value at (states, actor(states)); actor_ws keeps
// the actor forward state and per-critic outputs land in q[i * rows + b].
void critic_values(const AgentState& st, const AgentConfig& cfg, std::span<const double> states,
                   std::size_t rows, nn::Workspace& actor_ws, std::vector<nn::Workspace>* critic_ws,
                   nn::Workspace& tmp_ws, std::vector<double>& actions, std::vector<double>& x,
                   std::vector<double>& q, std::vector<double>& value) {
  const auto a = nn::forward_batch(st.actor_spec, st.actor, states, rows, actor_ws);
  actions.assign(a.begin(), a.end());
  concat_rows(states, st.state_dim, actions, st.action_dim, rows, x);
  const std::size_t n = st.critics.size();
  q.resize(n * rows);
  for (std::size_t i = 0; i < n; ++i) {
    auto& ws = critic_ws ? (*critic_ws)[i] : tmp_ws;
    const auto qi = nn::forward_batch(st.critic_spec, st.critics[i], x, rows, ws);
    std::copy(qi.begin(), qi.end(), q.begin() + i * rows);
  }
  value.assign(rows, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    if (cfg.value_aggregate == ValueAggregate::kMin) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) m = std::min(m, q[i * rows + b]);
      value[b] = m;
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += q[i * rows + b];
      value[b] = s / static_cast<double>(n);
    }
  }
}

void require_dynamics(const AgentState& st) {
  if (!st.dynamics || st.dynamics->trained_steps == 0) {
    fail(ErrorKind::kUntrainedModel, "SCAS regularizer needs a trained dynamics model");
  }
  if (st.dynamics->state_dim() != st.state_dim || st.dynamics->action_dim() != st.action_dim) {
    fail(ErrorKind::kShapeMismatch, "dynamics model dimensions do not match the agent");
  }
}

// Regularizer with V(s) supplied by the caller. Gradient (w.r.t. the actor)
// of scale * value is accumulated into grad.
RegularizerResult regularizer_impl(AgentState& st, const Batch& batch, const AgentConfig& cfg,
                                   Rng& rng, std::span<const double> v_s, double scale,
                                   std::span<double> grad) {
  require_dynamics(st);
  auto& sc = scratch(st.critics.size());
  const std::size_t B = batch.size, sd = st.state_dim, ad = st.action_dim;
  const auto& dm = *st.dynamics;

  // V(s') with the current actor; nothing here feeds back into the actor.
  critic_values(st, cfg, batch.s2, B, sc.actor_next, nullptr, sc.critic_tmp, sc.a_hat, sc.x2,
                sc.q, sc.v_s2);

  RegularizerResult res;
  res.weights.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double raw = std::exp(cfg.alpha * (sc.v_s2[b] - v_s[b]));
    res.weights[b] = std::min(raw, cfg.weight_clip);
    res.max_weight = std::max(res.max_weight, res.weights[b]);
    res.max_raw_weight = std::max(res.max_raw_weight, raw);
  }

  // s_hat = s + sigma * eps, in normalized coordinates.
  std::vector<double>& s_hat = sc.x2;
  s_hat.assign(batch.s.begin(), batch.s.end());
  if (cfg.sigma > 0.0) {
    for (auto& v : s_hat) v += cfg.sigma * rng.normal();
  }
  const auto a_hat = nn::forward_batch(st.actor_spec, st.actor, s_hat, B, sc.actor_hat);
  concat_rows(s_hat, sd, a_hat, ad, B, sc.xd);
  const auto pred = nn::forward_batch(dm.spec, dm.params, sc.xd, B, sc.dynamics);

  sc.up.resize(B * sd);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double se = 0.0;
    for (std::size_t j = 0; j < sd; ++j) {
      const double e = pred[b * sd + j] - batch.s2[b * sd + j];
      se += e * e;
      sc.up[b * sd + j] = scale * 2.0 * res.weights[b] * e / static_cast<double>(B);
    }
    total += res.weights[b] * se;
  }
  res.value = total / static_cast<double>(B);

  if (!grad.empty()) {
    sc.gx.resize(B * (sd + ad));
    nn::backward_batch(dm.spec, dm.params, sc.dynamics, sc.up, {}, sc.gx);
    sc.g_ahat.resize(B * ad);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(sc.gx.data() + b * (sd + ad) + sd, ad, sc.g_ahat.data() + b * ad);
    }
    nn::backward_batch(st.actor_spec, st.actor, sc.actor_hat, sc.g_ahat, grad, {});
  }
  return res;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt::format("{:.17g}", *v) : std::string();
}

}  // namespace

void AgentConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, "agent: " + m); };
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) bad("alpha must be finite and >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) bad("lambda must lie in [0, 1]");
  if (!(sigma >= 0.0)) bad("sigma must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) bad("gamma must lie in [0, 1)");
  if (!(tau >= 0.0 && tau <= 1.0)) bad("tau must lie in [0, 1]");
  if (!(critic_lr > 0.0) || !(actor_lr > 0.0)) bad("learning rates must be positive");
  if (batch == 0) bad("batch must be positive");
  if (policy_freq == 0) bad("policy_freq must be positive");
  if (n_critics == 0) bad("n_critics must be positive");
  if (!(weight_clip > 0.0)) bad("weight_clip must be positive");
  if (hidden == 0) bad("hidden must be positive");
}

AgentState init_agent(const AgentConfig& cfg, std::size_t state_dim, std::size_t action_dim,
                      std::span<const double> state_mean, std::span<const double> state_std,
                      Rng& rng) {
  cfg.validate();
  AgentState st;
  st.state_dim = state_dim;
  st.action_dim = action_dim;
  st.state_mean.assign(state_mean.begin(), state_mean.end());
  st.state_std.assign(state_std.begin(), state_std.end());
  st.actor_spec = nn::make_spec({state_dim, cfg.hidden, cfg.hidden, action_dim},
                                nn::OutputActivation::kTanhScaled,
                                std::vector<double>(action_dim, 1.0));
  st.actor = nn::init_params(st.actor_spec, rng, 0.01);
  st.critic_spec = nn::make_spec({state_dim + action_dim, cfg.hidden, cfg.hidden, 1});
  for (std::size_t i = 0; i < cfg.n_critics; ++i) {
    st.critics.push_back(nn::init_params(st.critic_spec, rng));
    st.critic_opts.push_back(nn::AdamState::for_params(st.critics.back().size(), cfg.critic_lr));
  }
  st.targets = st.critics;
  st.actor_opt = nn::AdamState::for_params(st.actor.size(), cfg.actor_lr);
  return st;
}

Batch sample_batch(const dyn::FlatData& data, std::size_t size, Rng& rng) {
  const std::size_t sd = data.state_dim, ad = data.action_dim;
  Batch b;
  b.size = size;
  b.s.resize(size * sd);
  b.s2.resize(size * sd);
  b.a.resize(size * ad);
  b.r.resize(size);
  b.done.resize(size);
  for (std::size_t k = 0; k < size; ++k) {
    const std::size_t i = rng.index(data.n);
    std::copy_n(data.s.data() + i * sd, sd, b.s.data() + k * sd);
    std::copy_n(data.s2.data() + i * sd, sd, b.s2.data() + k * sd);
    std::copy_n(data.a.data() + i * ad, ad, b.a.data() + k * ad);
    b.r[k] = data.r[i];
    b.done[k] = data.done[i];
  }
  return b;
}

CriticStats critic_update(AgentState& st, const Batch& batch, const AgentConfig& cfg) {
  auto& sc = scratch(st.critics.size());
  const std::size_t B = batch.size, sd = st.state_dim, ad = st.action_dim;

  const auto a2 = nn::forward_batch(st.actor_spec, st.actor, batch.s2, B, sc.actor_next);
  concat_rows(batch.s2, sd, a2, ad, B, sc.x2);
  sc.q.assign(B, std::numeric_limits<double>::infinity());
  for (const auto& target : st.targets) {
    const auto qt = nn::forward_batch(st.critic_spec, target, sc.x2, B, sc.critic_tmp);
    for (std::size_t b = 0; b < B; ++b) sc.q[b] = std::min(sc.q[b], qt[b]);
  }
  CriticStats stats;
  sc.y.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    sc.y[b] = batch.r[b] + cfg.gamma * (1.0 - batch.done[b]) * sc.q[b];
    stats.max_abs_target = std::max(stats.max_abs_target, std::abs(sc.y[b]));
    stats.max_target_q = std::max(stats.max_target_q, std::abs(sc.q[b]));
  }

  concat_rows(batch.s, sd, batch.a, ad, B, sc.x);
  sc.up.resize(B);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < st.critics.size(); ++i) {
    auto& ws = sc.critics[i];
    const auto q = nn::forward_batch(st.critic_spec, st.critics[i], sc.x, B, ws);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double e = q[b] - sc.y[b];
      loss += e * e;
      sc.up[b] = 2.0 * e / static_cast<double>(B);
    }
    loss_sum += loss / static_cast<double>(B);
    sc.grad.assign(st.critics[i].size(), 0.0);
    nn::backward_batch(st.critic_spec, st.critics[i], ws, sc.up, sc.grad, {});
    nn::adam_step(st.critic_opts[i], st.critics[i], sc.grad);
  }
  stats.loss = loss_sum / static_cast<double>(st.critics.size());
  return stats;
}

RegularizerResult scas_regularizer(AgentState& st, const Batch& batch, const AgentConfig& cfg,
                                   Rng& rng) {
  require_dynamics(st);
  auto& sc = scratch(st.critics.size());
  std::vector<double> v_s;
  critic_values(st, cfg, batch.s, batch.size, sc.actor, nullptr, sc.critic_tmp, sc.a_pi, sc.x,
                sc.q, v_s);
  std::vector<double> grad(st.actor.size(), 0.0);
  auto res = regularizer_impl(st, batch, cfg, rng, v_s, 1.0, grad);
  res.actor_grad = std::move(grad);
  return res;
}

PolicyGradient policy_gradient(AgentState& st, const Batch& batch, const AgentConfig& cfg,
                               Rng& rng) {
  auto& sc = scratch(st.critics.size());
  const std::size_t B = batch.size, sd = st.state_dim, ad = st.action_dim;
  PolicyGradient pg;
  pg.grad.assign(st.actor.size(), 0.0);
  auto& out = pg.stats;

  if (cfg.mode == Mode::kBehaviorCloning) {
    const auto a = nn::forward_batch(st.actor_spec, st.actor, batch.s, B, sc.actor);
    sc.up.resize(B * ad);
    double loss = 0.0;
    for (std::size_t j = 0; j < B * ad; ++j) {
      const double e = a[j] - batch.a[j];
      loss += e * e;
      sc.up[j] = 2.0 * e / static_cast<double>(B);
    }
    nn::backward_batch(st.actor_spec, st.actor, sc.actor, sc.up, pg.grad, {});
    out.regularizer = loss / static_cast<double>(B);
    out.objective = -out.regularizer;
    return pg;
  }

  // Q(s, pi(s)) for every critic; the same pass gives the detached V(s).
  critic_values(st, cfg, batch.s, B, sc.actor, &sc.critics, sc.critic_tmp, sc.a_pi, sc.x, sc.q,
                sc.v_s);
  const std::size_t n = st.critics.size();
  double mean_q = 0.0, mean_abs = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double qb = 0.0;
    for (std::size_t i = 0; i < n; ++i) qb += sc.q[i * B + b];
    qb /= static_cast<double>(n);
    mean_q += qb;
    mean_abs += std::abs(qb);
  }
  mean_q /= static_cast<double>(B);
  const double norm = std::max(mean_abs / static_cast<double>(B), kQNormFloor);
  out.mean_q = mean_q;

  if (cfg.lambda > 0.0) {
    const auto reg = regularizer_impl(st, batch, cfg, rng, sc.v_s, cfg.lambda, pg.grad);
    out.regularizer = reg.value;
    out.max_weight = reg.max_weight;
    out.max_raw_weight = reg.max_raw_weight;
  }
  out.objective = (1.0 - cfg.lambda) * mean_q / norm - cfg.lambda * out.regularizer;

  if (cfg.lambda < 1.0) {
    // d(-(1 - lambda) mean_b mean_i Q_i / norm) / d Q_i(b)
    const double coeff = -(1.0 - cfg.lambda) / (norm * static_cast<double>(B * n));
    sc.up.assign(B, coeff);
    sc.g_a.assign(B * ad, 0.0);
    sc.gx.resize(B * (sd + ad));
    for (std::size_t i = 0; i < n; ++i) {
      nn::backward_batch(st.critic_spec, st.critics[i], sc.critics[i], sc.up, {}, sc.gx);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < ad; ++j) sc.g_a[b * ad + j] += sc.gx[b * (sd + ad) + sd + j];
      }
    }
    nn::backward_batch(st.actor_spec, st.actor, sc.actor, sc.g_a, pg.grad, {});
  }
  return pg;
}

PolicyStats policy_update(AgentState& st, const Batch& batch, const AgentConfig& cfg, Rng& rng) {
  const auto pg = policy_gradient(st, batch, cfg, rng);
  nn::adam_step(st.actor_opt, st.actor, pg.grad, nn::cosine_multiplier(st.step, cfg.gradient_steps));
  ++st.policy_updates;
  if (cfg.mode == Mode::kScas) update_targets(st, cfg.tau);
  return pg.stats;
}

void update_targets(AgentState& st, double tau) {
  for (std::size_t i = 0; i < st.critics.size(); ++i) nn::polyak_update(st.targets[i], st.critics[i], tau);
}

std::vector<double> act(const AgentState& st, std::span<const double> raw_state) {
  if (raw_state.size() != st.state_dim) fail(ErrorKind::kShapeMismatch, "act: state width");
  std::vector<double> s(st.state_dim);
  dyn::normalize_rows(raw_state, st.state_mean, st.state_std, s);
  return nn::forward(st.actor_spec, st.actor, s);
}

TrainResult train(const env::ContinuousDataset& data,
                  const std::optional<dyn::DynamicsModel>& dynamics, const AgentConfig& cfg,
                  Rng& rng, const TrainHooks& hooks) {
  cfg.validate();
  data.validate();
  if (dynamics) {
    if (dynamics->state_mean != data.state_mean || dynamics->state_std != data.state_std) {
      fail(ErrorKind::kMismatch,
           "dynamics model was trained with different state normalization statistics");
    }
  }
  const auto flat = dyn::flatten(data);
  const double r_max = data.max_abs_reward();

  TrainResult res;
  res.state = init_agent(cfg, data.state_dim, data.action_dim, data.state_mean, data.state_std, rng);
  res.state.dynamics = dynamics;
  auto& st = res.state;

  struct Window {
    double critic_loss = 0.0, objective = 0.0, mean_q = 0.0, max_weight = 0.0;
    std::size_t critic_n = 0, policy_n = 0;
  } win;

  for (std::uint64_t step = 1; step <= cfg.gradient_steps; ++step) {
    const Batch batch = sample_batch(flat, cfg.batch, rng);
    if (cfg.mode == Mode::kScas) {
      const auto cs = critic_update(st, batch, cfg);
      win.critic_loss += cs.loss;
      ++win.critic_n;
      res.max_abs_target = std::max(res.max_abs_target, cs.max_abs_target);
      res.max_target_bound_excess = std::max(
          res.max_target_bound_excess, cs.max_abs_target - (r_max + cfg.gamma * cs.max_target_q));
    }
    st.step = step;
    if (step % cfg.policy_freq == 0) {
      const auto ps = policy_update(st, batch, cfg, rng);
      win.objective += ps.objective;
      win.mean_q += ps.mean_q;
      win.max_weight = std::max(win.max_weight, ps.max_weight);
      ++win.policy_n;
      res.max_weight = std::max(res.max_weight, ps.max_weight);
      res.max_raw_weight = std::max(res.max_raw_weight, ps.max_raw_weight);
    }

    const bool log_now =
        hooks.log_every > 0 && (step % hooks.log_every == 0 || step == cfg.gradient_steps);
    if (log_now) {
      MetricsRow row;
      row.step = step;
      const bool scas = cfg.mode == Mode::kScas;
      if (scas && win.critic_n > 0) row.critic_loss = win.critic_loss / win.critic_n;
      if (win.policy_n > 0) {
        row.policy_objective = win.objective / win.policy_n;
        if (scas) row.mean_q = win.mean_q / win.policy_n;
        if (scas && cfg.lambda > 0.0) row.max_weight = win.max_weight;
      }
      win = Window{};
      bool keep_going = true;
      if (hooks.on_log) keep_going = hooks.on_log(row, st);
      res.metrics.push_back(row);
      if (!keep_going) {
        res.stopped_early = true;
        break;
      }
    }
  }
  return res;
}

void EvalReport::recompute() {
  const double n = static_cast<double>(episodes.size());
  mean_return = std_return = mean_steps_out_of_ood = std_steps_out_of_ood = exited_fraction = 0.0;
  if (episodes.empty()) return;
  for (const auto& e : episodes) {
    mean_return += e.ret;
    mean_steps_out_of_ood += static_cast<double>(e.steps_out_of_ood);
    exited_fraction += e.exited_hole ? 1.0 : 0.0;
  }
  mean_return /= n;
  mean_steps_out_of_ood /= n;
  exited_fraction /= n;
  for (const auto& e : episodes) {
    std_return += (e.ret - mean_return) * (e.ret - mean_return);
    const double d = static_cast<double>(e.steps_out_of_ood) - mean_steps_out_of_ood;
    std_steps_out_of_ood += d * d;
  }
  std_return = std::sqrt(std_return / n);
  std_steps_out_of_ood = std::sqrt(std_steps_out_of_ood / n);
}

EvalReport evaluate(const AgentState& st, const env::PointNavConfig& env_cfg,
                    const EvalOptions& opts) {
  EvalReport rep;
  const env::PolicyFn policy = [&st](const env::Vec2& s) {
    const auto a = act(st, s);
    return env::Vec2{a[0], a[1]};
  };
  for (std::size_t i = 0; i < opts.episodes; ++i) {
    Rng rng = Rng::stream(opts.seed, i);
    const auto tr = env::run_episode(env_cfg, policy, opts.protocol, opts.mode, rng);
    rep.episodes.push_back({tr.ret, tr.length, tr.steps_out_of_ood, tr.exited_hole, tr.perturb_steps});
  }
  rep.recompute();
  return rep;
}

void to_json(nlohmann::json& j, const AgentConfig& cfg) {
  j = {{"alpha", cfg.alpha},
       {"lambda", cfg.lambda},
       {"sigma", cfg.sigma},
       {"gamma", cfg.gamma},
       {"tau", cfg.tau},
       {"critic_lr", cfg.critic_lr},
       {"actor_lr", cfg.actor_lr},
       {"batch", cfg.batch},
       {"policy_freq", cfg.policy_freq},
       {"n_critics", cfg.n_critics},
       {"weight_clip", cfg.weight_clip},
       {"gradient_steps", cfg.gradient_steps},
       {"hidden", cfg.hidden},
       {"value_aggregate", cfg.value_aggregate == ValueAggregate::kMin ? "min" : "mean"},
       {"mode", cfg.mode == Mode::kBehaviorCloning ? "bc" : "scas"}};
}

void from_json(const nlohmann::json& j, AgentConfig& cfg) {
  const std::string ctx = "agent";
  require_keys(j, {"alpha", "lambda", "sigma", "gamma", "tau", "critic_lr", "actor_lr", "batch",
                   "policy_freq", "n_critics", "weight_clip", "gradient_steps", "hidden",
                   "value_aggregate", "mode"},
               ctx);
  read_opt(j, "alpha", cfg.alpha, ctx);
  read_opt(j, "lambda", cfg.lambda, ctx);
  read_opt(j, "sigma", cfg.sigma, ctx);
  read_opt(j, "gamma", cfg.gamma, ctx);
  read_opt(j, "tau", cfg.tau, ctx);
  read_opt(j, "critic_lr", cfg.critic_lr, ctx);
  read_opt(j, "actor_lr", cfg.actor_lr, ctx);
  read_opt(j, "batch", cfg.batch, ctx);
  read_opt(j, "policy_freq", cfg.policy_freq, ctx);
  read_opt(j, "n_critics", cfg.n_critics, ctx);
  read_opt(j, "weight_clip", cfg.weight_clip, ctx);
  read_opt(j, "gradient_steps", cfg.gradient_steps, ctx);
  read_opt(j, "hidden", cfg.hidden, ctx);
  std::string agg = cfg.value_aggregate == ValueAggregate::kMin ? "min" : "mean";
  read_opt(j, "value_aggregate", agg, ctx);
  if (agg == "mean") {
    cfg.value_aggregate = ValueAggregate::kMean;
  } else if (agg == "min") {
    cfg.value_aggregate = ValueAggregate::kMin;
  } else {
    fail(ErrorKind::kConfig, "agent.value_aggregate must be 'mean' or 'min'");
  }
  std::string mode = cfg.mode == Mode::kBehaviorCloning ? "bc" : "scas";
  read_opt(j, "mode", mode, ctx);
  if (mode == "scas") {
    cfg.mode = Mode::kScas;
  } else if (mode == "bc") {
    cfg.mode = Mode::kBehaviorCloning;
  } else {
    fail(ErrorKind::kConfig, "agent.mode must be 'scas' or 'bc'");
  }
  cfg.validate();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << "step,critic_loss,policy_objective,mean_q,max_weight,eval_return,eval_steps_out_of_ood\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt_opt(r.critic_loss) << ',' << fmt_opt(r.policy_objective) << ','
        << fmt_opt(r.mean_q) << ',' << fmt_opt(r.max_weight) << ',' << fmt_opt(r.eval_return)
        << ',' << fmt_opt(r.eval_steps_out_of_ood) << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void save_bundle(const std::filesystem::path& dir, const AgentState& st, const BundleInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json files = nlohmann::json::object();
  save_checkpoint(dir / "actor.ckpt", {st.actor_spec, info.seed, st.step, {}}, st.actor);
  files["actor"] = "actor.ckpt";
  files["critics"] = nlohmann::json::array();
  files["targets"] = nlohmann::json::array();
  for (std::size_t i = 0; i < st.critics.size(); ++i) {
    const auto c = fmt::format("critic_{}.ckpt", i);
    const auto t = fmt::format("target_{}.ckpt", i);
    save_checkpoint(dir / c, {st.critic_spec, info.seed, st.step, {}}, st.critics[i]);
    save_checkpoint(dir / t, {st.critic_spec, info.seed, st.step, {}}, st.targets[i]);
    files["critics"].push_back(c);
    files["targets"].push_back(t);
  }
  if (st.dynamics) {
    dyn::save_dynamics(dir / "dynamics.ckpt", *st.dynamics, info.seed);
    files["dynamics"] = "dynamics.ckpt";
  }
  nlohmann::json manifest = {{"config", info.config},
                             {"seed", info.seed},
                             {"step", st.step},
                             {"policy_updates", st.policy_updates},
                             {"dataset_hash", info.dataset_hash},
                             {"state_dim", st.state_dim},
                             {"action_dim", st.action_dim},
                             {"state_mean", st.state_mean},
                             {"state_std", st.state_std},
                             {"files", files}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LoadedBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::kIo, "no manifest.json in " + dir.string());
  LoadedBundle lb;
  auto& st = lb.state;
  try {
    lb.manifest = nlohmann::json::parse(in);
    const auto& m = lb.manifest;
    st.state_dim = m.at("state_dim").get<std::size_t>();
    st.action_dim = m.at("action_dim").get<std::size_t>();
    st.state_mean = m.at("state_mean").get<std::vector<double>>();
    st.state_std = m.at("state_std").get<std::vector<double>>();
    st.step = m.at("step").get<std::uint64_t>();
    st.policy_updates = m.value("policy_updates", std::uint64_t{0});
    const auto& files = m.at("files");
    auto actor = load_checkpoint(dir / files.at("actor").get<std::string>());
    st.actor_spec = actor.header.spec;
    st.actor = std::move(actor.params);
    for (const auto& f : files.at("critics")) {
      auto c = load_checkpoint(dir / f.get<std::string>());
      st.critic_spec = c.header.spec;
      st.critics.push_back(std::move(c.params));
    }
    for (const auto& f : files.at("targets")) {
      st.targets.push_back(load_checkpoint(dir / f.get<std::string>()).params);
    }
    if (files.contains("dynamics")) {
      st.dynamics = dyn::load_dynamics(dir / files.at("dynamics").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, dir.string() + ": malformed manifest: " + e.what());
  }
  if (st.actor_spec.input_dim() != st.state_dim || st.actor_spec.output_dim() != st.action_dim ||
      st.critics.size() != st.targets.size()) {
    fail(ErrorKind::kIo, dir.string() + ": bundle files do not match the manifest");
  }
  return lb;
}

}  // namespace scas::agent
