#include "scas/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "scas/error.hpp"
#include "scas/kernels.hpp"

namespace scas::nn {
namespace {

void transpose(const double* src, std::size_t rows, std::size_t cols,
               std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return n;
}

std::size_t MlpSpec::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return off;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    fail(ErrorKind::kInvalidInput, "mlp spec needs at least two layer widths");
  }
  for (auto w : widths) {
    if (w == 0) fail(ErrorKind::kInvalidInput, "mlp layer width must be positive");
  }
  if (output == OutputActivation::kTanhScaled) {
    if (scale.size() != output_dim()) {
      fail(ErrorKind::kInvalidInput, "tanh scale length must equal output width");
    }
    for (double s : scale) {
      if (!(s > 0.0)) fail(ErrorKind::kInvalidInput, "tanh scale must be positive");
    }
  }
}

MlpSpec make_spec(std::vector<std::size_t> widths, OutputActivation output,
                  std::vector<double> scale) {
  MlpSpec spec{std::move(widths), output, std::move(scale)};
  spec.validate();
  return spec;
}

MlpParams init_params(const MlpSpec& spec, Rng& rng, double final_layer_scale) {
  spec.validate();
  MlpParams p;
  p.flat.resize(spec.param_count());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.widths[l];
    const std::size_t out = spec.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double mult = (l + 1 == spec.num_layers()) ? final_layer_scale : 1.0;
    for (std::size_t i = 0; i < in * out + out; ++i) {
      p.flat[off + i] = mult * rng.uniform(-bound, bound);
    }
    off += in * out + out;
  }
  return p;
}

std::span<const double> forward_batch(const MlpSpec& spec,
                                      const MlpParams& params,
                                      std::span<const double> inputs,
                                      std::size_t batch, Workspace& ws) {
  if (inputs.size() != batch * spec.input_dim()) {
    fail(ErrorKind::kShapeMismatch,
         "forward: expected " + std::to_string(batch * spec.input_dim()) +
             " inputs, got " + std::to_string(inputs.size()));
  }
  if (params.size() != spec.param_count()) {
    fail(ErrorKind::kShapeMismatch, "forward: parameter count does not match spec");
  }
  const auto& k = kernels::active();
  const std::size_t layers = spec.num_layers();
  ws.batch_ = batch;
  ws.acts_.resize(layers + 1);
  ws.acts_[0].assign(inputs.begin(), inputs.end());

  const double* p = params.flat.data();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = spec.widths[l];
    const std::size_t out = spec.widths[l + 1];
    const double* w = p + spec.weight_offset(l);
    const double* b = w + in * out;
    auto& y = ws.acts_[l + 1];
    y.resize(batch * out);
    for (std::size_t r = 0; r < batch; ++r) std::copy(b, b + out, y.data() + r * out);
    k.gemm(batch, out, in, ws.acts_[l].data(), in, w, out, y.data(), out, true);
    if (l + 1 < layers) {
      k.relu(y.data(), y.size());
    } else if (spec.output == OutputActivation::kTanhScaled) {
      ws.pre_out_ = y;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < out; ++j) {
          y[r * out + j] = spec.scale[j] * std::tanh(y[r * out + j]);
        }
      }
    }
  }
  return {ws.acts_[layers].data(), batch * spec.output_dim()};
}

void backward_batch(const MlpSpec& spec, const MlpParams& params,
                    Workspace& ws, std::span<const double> upstream,
                    std::span<double> param_grad, std::span<double> input_grad) {
  const std::size_t batch = ws.batch_;
  const std::size_t layers = spec.num_layers();
  if (ws.acts_.size() != layers + 1) {
    fail(ErrorKind::kPrecondition, "backward called before forward");
  }
  if (upstream.size() != batch * spec.output_dim()) {
    fail(ErrorKind::kShapeMismatch, "backward: upstream length does not match output");
  }
  if (!param_grad.empty() && param_grad.size() != spec.param_count()) {
    fail(ErrorKind::kShapeMismatch, "backward: parameter gradient length mismatch");
  }
  if (!input_grad.empty() && input_grad.size() != batch * spec.input_dim()) {
    fail(ErrorKind::kShapeMismatch, "backward: input gradient length mismatch");
  }
  const auto& k = kernels::active();
  const double* p = params.flat.data();

  auto& dz = ws.grad_a_;
  dz.assign(upstream.begin(), upstream.end());
  if (spec.output == OutputActivation::kTanhScaled) {
    const std::size_t out = spec.output_dim();
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t j = 0; j < out; ++j) {
        const double t = std::tanh(ws.pre_out_[r * out + j]);
        dz[r * out + j] *= spec.scale[j] * (1.0 - t * t);
      }
    }
  }
  if (!param_grad.empty()) ws.ones_.assign(batch, 1.0);

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = spec.widths[l];
    const std::size_t out = spec.widths[l + 1];
    const std::size_t woff = spec.weight_offset(l);
    const double* h = ws.acts_[l].data();
    if (!param_grad.empty()) {
      transpose(h, batch, in, ws.transpose_);
      k.gemm(in, out, batch, ws.transpose_.data(), batch, ws.grad_a_.data(),
             out, param_grad.data() + woff, out, true);
      k.gemm(1, out, batch, ws.ones_.data(), batch, ws.grad_a_.data(), out,
             param_grad.data() + woff + in * out, out, true);
    }
    if (l == 0 && input_grad.empty()) break;
    transpose(p + woff, in, out, ws.transpose_);
    ws.grad_b_.resize(batch * in);
    k.gemm(batch, in, out, ws.grad_a_.data(), out, ws.transpose_.data(), in,
           ws.grad_b_.data(), in, false);
    if (l == 0) {
      std::copy(ws.grad_b_.begin(), ws.grad_b_.end(), input_grad.begin());
    } else {
      k.relu_backward(h, ws.grad_b_.data(), batch * in);
      std::swap(ws.grad_a_, ws.grad_b_);
    }
  }
}

std::vector<double> forward(const MlpSpec& spec, const MlpParams& params,
                            std::span<const double> input) {
  Workspace ws;
  auto out = forward_batch(spec, params, input, 1, ws);
  return {out.begin(), out.end()};
}

Gradients grad(const MlpSpec& spec, const MlpParams& params,
               std::span<const double> input, std::span<const double> upstream) {
  Workspace ws;
  forward_batch(spec, params, input, 1, ws);
  Gradients g;
  g.params.assign(spec.param_count(), 0.0);
  g.input.assign(spec.input_dim(), 0.0);
  backward_batch(spec, params, ws, upstream, g.params, g.input);
  return g;
}

AdamState AdamState::for_params(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, MlpParams& params, std::span<const double> grad,
               double lr_multiplier) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    fail(ErrorKind::kShapeMismatch, "adam: gradient and state lengths must match params");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const double step_size = state.lr * lr_multiplier * std::sqrt(bc2) / bc1;
  const double eps_hat = state.eps * std::sqrt(bc2);
  kernels::active().adam(params.flat.data(), state.m.data(), state.v.data(),
                         grad.data(), params.size(), state.beta1, state.beta2,
                         step_size, eps_hat);
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
  if (target.size() != online.size()) {
    fail(ErrorKind::kShapeMismatch, "polyak: target and online shapes differ");
  }
  if (!(tau >= 0.0 && tau <= 1.0)) {
    fail(ErrorKind::kInvalidInput, "polyak: tau must lie in [0, 1]");
  }
  kernels::active().lerp(target.flat.data(), online.flat.data(), target.size(), tau);
}

double cosine_multiplier(std::uint64_t step, std::uint64_t total) {
  if (total == 0) return 1.0;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace scas::nn
