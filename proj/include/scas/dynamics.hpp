#pragma once
// Deterministic one-step dynamics model trained on squared next-state error.
// Inputs are the normalized state concatenated with the action; the output
// is the absolute next state in normalized coordinates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "scas/env.hpp"
#include "scas/nn.hpp"
#include "scas/rng.hpp"

namespace scas::dyn {

// (x - mean) / std, elementwise over rows of width mean.size().
void normalize_rows(std::span<const double> raw, std::span<const double> mean,
                    std::span<const double> std, std::span<double> out);

// Dataset flattened into normalized row-major arrays.
struct FlatData {
  std::size_t n = 0;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> s, a, r, s2, done;
};

FlatData flatten(const env::ContinuousDataset& data);

struct DynamicsConfig {
  double lr = 1e-3;
  std::size_t batch = 256;
  std::uint64_t steps = 100000;
  std::size_t hidden = 64;
  std::size_t depth = 4;  // hidden layers
  bool cosine_lr = true;  // constant-rate Adam plateaus on a jitter floor
};

struct DynamicsModel {
  nn::MlpSpec spec;
  nn::MlpParams params;
  std::uint64_t trained_steps = 0;
  std::vector<double> state_mean;
  std::vector<double> state_std;

  std::size_t state_dim() const { return spec.output_dim(); }
  std::size_t action_dim() const { return spec.input_dim() - spec.output_dim(); }
};

using DynamicsProgress = std::function<void(std::uint64_t step, double batch_loss)>;

// Returns one model per requested checkpoint step (sorted, deduplicated),
// plus the final model when config.steps is not among them.
std::vector<DynamicsModel> train_dynamics(const env::ContinuousDataset& data,
                                          const DynamicsConfig& config,
                                          std::vector<std::uint64_t> checkpoints, Rng& rng,
                                          const DynamicsProgress& progress = {},
                                          std::uint64_t progress_every = 10000);

// One-step prediction in normalized state space.
std::vector<double> predict(const DynamicsModel& model, std::span<const double> s_norm,
                            std::span<const double> a);

struct PredictionGrad {
  std::vector<double> state;
  std::vector<double> action;
};

// Vector-Jacobian product of predict with respect to both inputs.
PredictionGrad predict_grad(const DynamicsModel& model, std::span<const double> s_norm,
                            std::span<const double> a, std::span<const double> upstream);

// Mean over transitions of the squared next-state error, in normalized space.
double mse(const DynamicsModel& model, const env::ContinuousDataset& data);

void save_dynamics(const std::filesystem::path& path, const DynamicsModel& model,
                   std::uint64_t seed);
DynamicsModel load_dynamics(const std::filesystem::path& path);

}  // namespace scas::dyn
