#pragma once
// Feedforward networks with analytic reverse-mode gradients.
//
// Parameters are one flat vector. Layer l stores its weight matrix as
// [fan_in x fan_out] row-major followed by its bias vector, so a batch of
// inputs X [batch x fan_in] maps to X * W + b.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "scas/rng.hpp"

namespace scas::nn {

enum class OutputActivation { kIdentity, kTanhScaled };

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  OutputActivation output = OutputActivation::kIdentity;
  std::vector<double> scale;  // per-output bound for kTanhScaled

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t param_count() const;

  // Offset of layer l's weight block inside the flat parameter vector; the
  // bias follows at weight_offset(l) + fan_in * fan_out.
  std::size_t weight_offset(std::size_t layer) const;

  // Throws kInvalidInput when the spec is malformed.
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

// ReLU hidden layers, given output activation.
MlpSpec make_spec(std::vector<std::size_t> widths,
                  OutputActivation output = OutputActivation::kIdentity,
                  std::vector<double> scale = {});

struct MlpParams {
  std::vector<double> flat;

  std::size_t size() const { return flat.size(); }
  bool operator==(const MlpParams&) const = default;
};

// Uniform(+-1/sqrt(fan_in)) for weights and biases; the last layer is further
// multiplied by final_layer_scale.
MlpParams init_params(const MlpSpec& spec, Rng& rng,
                      double final_layer_scale = 1.0);

// Scratch buffers for one batched pass. Reusable across calls; resizes as
// needed.
class Workspace {
 public:
  std::size_t batch() const { return batch_; }

 private:
  friend std::span<const double> forward_batch(const MlpSpec&,
                                               const MlpParams&,
                                               std::span<const double>,
                                               std::size_t, Workspace&);
  friend void backward_batch(const MlpSpec&, const MlpParams&, Workspace&,
                             std::span<const double>, std::span<double>,
                             std::span<double>);

  std::size_t batch_ = 0;
  // acts_[0] is the input, acts_[l] the post-activation of layer l.
  std::vector<std::vector<double>> acts_;
  std::vector<double> pre_out_;  // pre-activation of the output layer
  std::vector<double> grad_a_, grad_b_, transpose_, ones_;
};

// Forward pass over `batch` row-major inputs. The returned view points into
// the workspace and stays valid until the next call with the same workspace.
std::span<const double> forward_batch(const MlpSpec& spec,
                                      const MlpParams& params,
                                      std::span<const double> inputs,
                                      std::size_t batch, Workspace& ws);

// Vector-Jacobian product for the batch last seen by forward_batch.
// Parameter gradients are summed over the batch and added into param_grad
// (skipped when empty). input_grad [batch x input_dim] is overwritten
// (skipped when empty).
void backward_batch(const MlpSpec& spec, const MlpParams& params,
                    Workspace& ws, std::span<const double> upstream,
                    std::span<double> param_grad, std::span<double> input_grad);

std::vector<double> forward(const MlpSpec& spec, const MlpParams& params,
                            std::span<const double> input);

struct Gradients {
  std::vector<double> params;
  std::vector<double> input;
};

Gradients grad(const MlpSpec& spec, const MlpParams& params,
               std::span<const double> input, std::span<const double> upstream);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(std::size_t n, double lr);
};

// One bias-corrected Adam step; the effective rate is lr * lr_multiplier.
void adam_step(AdamState& state, MlpParams& params,
               std::span<const double> grad, double lr_multiplier = 1.0);

// target <- (1 - tau) * target + tau * online
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

// 0.5 * (1 + cos(pi * step / total)); 1 when total is 0.
double cosine_multiplier(std::uint64_t step, std::uint64_t total);

}  // namespace scas::nn
