#include "scas/dynamics.hpp"

#include <algorithm>

#include "scas/checkpoint.hpp"
#include "scas/error.hpp"

namespace scas::dyn {

void normalize_rows(std::span<const double> raw, std::span<const double> mean,
                    std::span<const double> std, std::span<double> out) {
  const std::size_t d = mean.size();
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mean[i % d]) / std[i % d];
}

FlatData flatten(const env::ContinuousDataset& data) {
  data.validate();
  FlatData f;
  f.n = data.transitions.size();
  f.state_dim = data.state_dim;
  f.action_dim = data.action_dim;
  f.s.resize(f.n * f.state_dim);
  f.s2.resize(f.n * f.state_dim);
  f.a.resize(f.n * f.action_dim);
  f.r.resize(f.n);
  f.done.resize(f.n);
  for (std::size_t i = 0; i < f.n; ++i) {
    const auto& t = data.transitions[i];
    normalize_rows(t.s, data.state_mean, data.state_std, {f.s.data() + i * f.state_dim, f.state_dim});
    normalize_rows(t.s2, data.state_mean, data.state_std,
                   {f.s2.data() + i * f.state_dim, f.state_dim});
    std::copy(t.a.begin(), t.a.end(), f.a.begin() + i * f.action_dim);
    f.r[i] = t.r;
    f.done[i] = t.done ? 1.0 : 0.0;
  }
  return f;
}

std::vector<DynamicsModel> train_dynamics(const env::ContinuousDataset& data,
                                          const DynamicsConfig& config,
                                          std::vector<std::uint64_t> checkpoints, Rng& rng,
                                          const DynamicsProgress& progress,
                                          std::uint64_t progress_every) {
  if (config.batch == 0 || config.hidden == 0 || config.depth == 0 || !(config.lr > 0.0)) {
    fail(ErrorKind::kConfig, "dynamics: batch, hidden, depth and lr must be positive");
  }
  if (data.transitions.empty()) fail(ErrorKind::kInvalidInput, "dynamics: empty dataset");
  const FlatData f = flatten(data);
  const std::size_t sd = f.state_dim, ad = f.action_dim, in = sd + ad;

  std::vector<std::size_t> widths{in};
  for (std::size_t i = 0; i < config.depth; ++i) widths.push_back(config.hidden);
  widths.push_back(sd);

  DynamicsModel model;
  model.spec = nn::make_spec(widths);
  model.params = nn::init_params(model.spec, rng);
  model.state_mean = data.state_mean;
  model.state_std = data.state_std;

  std::sort(checkpoints.begin(), checkpoints.end());
  checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
  if (!checkpoints.empty() && checkpoints.back() > config.steps) {
    fail(ErrorKind::kConfig, "dynamics checkpoint beyond the training horizon");
  }
  if (checkpoints.empty() || checkpoints.back() != config.steps) checkpoints.push_back(config.steps);

  auto adam = nn::AdamState::for_params(model.params.size(), config.lr);
  nn::Workspace ws;
  const std::size_t b = config.batch;
  std::vector<double> x(b * in), target(b * sd), up(b * sd), grad(model.params.size());

  std::vector<DynamicsModel> out;
  std::size_t next_ck = 0;
  auto emit = [&](std::uint64_t step) {
    while (next_ck < checkpoints.size() && checkpoints[next_ck] == step) {
      model.trained_steps = step;
      out.push_back(model);
      ++next_ck;
    }
  };
  emit(0);
  for (std::uint64_t step = 1; step <= config.steps; ++step) {
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t i = rng.index(f.n);
      std::copy_n(f.s.data() + i * sd, sd, x.data() + k * in);
      std::copy_n(f.a.data() + i * ad, ad, x.data() + k * in + sd);
      std::copy_n(f.s2.data() + i * sd, sd, target.data() + k * sd);
    }
    const auto pred = nn::forward_batch(model.spec, model.params, x, b, ws);
    double loss = 0.0;
    for (std::size_t j = 0; j < b * sd; ++j) {
      const double e = pred[j] - target[j];
      loss += e * e;
      up[j] = 2.0 * e / static_cast<double>(b);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    nn::backward_batch(model.spec, model.params, ws, up, grad, {});
    nn::adam_step(adam, model.params, grad,
                  config.cosine_lr ? nn::cosine_multiplier(step - 1, config.steps) : 1.0);
    if (progress && progress_every > 0 && step % progress_every == 0) {
      progress(step, loss / static_cast<double>(b));
    }
    emit(step);
  }
  return out;
}

std::vector<double> predict(const DynamicsModel& model, std::span<const double> s_norm,
                            std::span<const double> a) {
  if (s_norm.size() != model.state_dim() || a.size() != model.action_dim()) {
    fail(ErrorKind::kShapeMismatch, "predict: state/action width mismatch");
  }
  std::vector<double> x(s_norm.begin(), s_norm.end());
  x.insert(x.end(), a.begin(), a.end());
  return nn::forward(model.spec, model.params, x);
}

PredictionGrad predict_grad(const DynamicsModel& model, std::span<const double> s_norm,
                            std::span<const double> a, std::span<const double> upstream) {
  if (s_norm.size() != model.state_dim() || a.size() != model.action_dim()) {
    fail(ErrorKind::kShapeMismatch, "predict_grad: state/action width mismatch");
  }
  std::vector<double> x(s_norm.begin(), s_norm.end());
  x.insert(x.end(), a.begin(), a.end());
  const auto g = nn::grad(model.spec, model.params, x, upstream);
  const auto sd = static_cast<std::ptrdiff_t>(model.state_dim());
  return {{g.input.begin(), g.input.begin() + sd}, {g.input.begin() + sd, g.input.end()}};
}

double mse(const DynamicsModel& model, const env::ContinuousDataset& data) {
  if (data.state_dim != model.state_dim() || data.action_dim != model.action_dim()) {
    fail(ErrorKind::kShapeMismatch, "mse: dataset dimensions do not match the model");
  }
  const std::size_t sd = data.state_dim, ad = data.action_dim, in = sd + ad;
  const std::size_t chunk = 1024;
  nn::Workspace ws;
  std::vector<double> x, target;
  double total = 0.0;
  for (std::size_t start = 0; start < data.transitions.size(); start += chunk) {
    const std::size_t m = std::min(chunk, data.transitions.size() - start);
    x.resize(m * in);
    target.resize(m * sd);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& t = data.transitions[start + k];
      normalize_rows(t.s, model.state_mean, model.state_std, {x.data() + k * in, sd});
      std::copy(t.a.begin(), t.a.end(), x.begin() + k * in + sd);
      normalize_rows(t.s2, model.state_mean, model.state_std, {target.data() + k * sd, sd});
    }
    const auto pred = nn::forward_batch(model.spec, model.params, x, m, ws);
    for (std::size_t j = 0; j < m * sd; ++j) {
      const double e = pred[j] - target[j];
      total += e * e;
    }
  }
  return total / static_cast<double>(data.transitions.size());
}

void save_dynamics(const std::filesystem::path& path, const DynamicsModel& model,
                   std::uint64_t seed) {
  CheckpointHeader h{model.spec, seed, model.trained_steps,
                     {{"state_mean", model.state_mean}, {"state_std", model.state_std}}};
  save_checkpoint(path, h, model.params);
}

DynamicsModel load_dynamics(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  DynamicsModel m;
  m.spec = ck.header.spec;
  m.params = std::move(ck.params);
  m.trained_steps = ck.header.step;
  try {
    m.state_mean = ck.header.extra.at("state_mean").get<std::vector<double>>();
    m.state_std = ck.header.extra.at("state_std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": missing normalization statistics");
  }
  if (m.state_mean.size() != m.state_dim() || m.state_std.size() != m.state_dim()) {
    fail(ErrorKind::kIo, path.string() + ": statistics do not match the model width");
  }
  return m;
}

}  // namespace scas::dyn
