#pragma once
// Offline actor-critic with value-aware OOD state correction: an ensemble of
// critics trained on clipped double-Q targets, and a deterministic actor
// trained on normalized Q plus a value-weighted dynamics-alignment penalty.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scas/dynamics.hpp"
#include "scas/env.hpp"
#include "scas/nn.hpp"
#include "scas/rng.hpp"

namespace scas::agent {

enum class Mode {
  kScas,
  kBehaviorCloning,  // actor regresses dataset actions; critics untouched
};

enum class ValueAggregate { kMean, kMin };

struct AgentConfig {
  double alpha = 5.0;
  double lambda = 0.25;
  double sigma = 0.003;
  double gamma = 0.99;
  double tau = 0.005;
  double critic_lr = 3e-4;
  double actor_lr = 2e-4;
  std::size_t batch = 256;
  std::size_t policy_freq = 2;
  std::size_t n_critics = 4;
  double weight_clip = 50.0;
  std::uint64_t gradient_steps = 100000;
  std::size_t hidden = 64;
  ValueAggregate value_aggregate = ValueAggregate::kMean;
  Mode mode = Mode::kScas;

  void validate() const;
};

struct AgentState {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> state_mean;
  std::vector<double> state_std;

  nn::MlpSpec actor_spec;
  nn::MlpParams actor;
  nn::MlpSpec critic_spec;
  std::vector<nn::MlpParams> critics;
  std::vector<nn::MlpParams> targets;
  std::optional<dyn::DynamicsModel> dynamics;

  nn::AdamState actor_opt;
  std::vector<nn::AdamState> critic_opts;
  std::uint64_t step = 0;
  std::uint64_t policy_updates = 0;
};

// Fresh networks for the dataset's dimensions and statistics.
AgentState init_agent(const AgentConfig& cfg, std::size_t state_dim, std::size_t action_dim,
                      std::span<const double> state_mean, std::span<const double> state_std,
                      Rng& rng);

// Row-major minibatch in normalized state space.
struct Batch {
  std::size_t size = 0;
  std::vector<double> s, a, r, s2, done;
};

Batch sample_batch(const dyn::FlatData& data, std::size_t size, Rng& rng);

struct CriticStats {
  double loss = 0.0;       // mean over critics of the batch MSE
  double max_abs_target = 0.0;
  double max_target_q = 0.0;  // max |min_k Q'_k(s', pi(s'))|
};

CriticStats critic_update(AgentState& st, const Batch& batch, const AgentConfig& cfg);

struct RegularizerResult {
  double value = 0.0;  // weighted mean squared alignment error
  std::vector<double> actor_grad;  // gradient of value w.r.t. actor params
  std::vector<double> weights;     // per-sample clipped weights
  double max_weight = 0.0;
  double max_raw_weight = 0.0;     // before clipping (may be +inf)
};

// Throws kUntrainedModel when the dynamics model is missing or untrained.
RegularizerResult scas_regularizer(AgentState& st, const Batch& batch, const AgentConfig& cfg,
                                   Rng& rng);

struct PolicyStats {
  double objective = 0.0;  // J = (1 - lambda) Q / |Q| - lambda R
  double mean_q = 0.0;     // batch mean of the critic value at (s, pi(s))
  double regularizer = 0.0;
  double max_weight = 0.0;
  double max_raw_weight = 0.0;
};

struct PolicyGradient {
  PolicyStats stats;
  std::vector<double> grad;  // gradient of the actor loss -J (BC: the MSE)
};

// Actor loss gradient with the Q normalizer and the weights held constant.
PolicyGradient policy_gradient(AgentState& st, const Batch& batch, const AgentConfig& cfg,
                               Rng& rng);

// One actor step (cosine-scheduled) followed by the Polyak target update.
PolicyStats policy_update(AgentState& st, const Batch& batch, const AgentConfig& cfg, Rng& rng);

void update_targets(AgentState& st, double tau);

// Deterministic action for a raw environment state.
std::vector<double> act(const AgentState& st, std::span<const double> raw_state);

struct MetricsRow {
  std::uint64_t step = 0;
  std::optional<double> critic_loss;
  std::optional<double> policy_objective;
  std::optional<double> mean_q;
  std::optional<double> max_weight;
  std::optional<double> eval_return;
  std::optional<double> eval_steps_out_of_ood;
};

struct TrainHooks {
  std::uint64_t log_every = 1000;
  // Invoked every log_every steps with the aggregated window; may fill the
  // eval fields. Returning false stops training early.
  std::function<bool(MetricsRow&, const AgentState&)> on_log;
};

struct TrainResult {
  AgentState state;
  std::vector<MetricsRow> metrics;
  double max_weight = 0.0;        // over the whole run
  double max_raw_weight = 0.0;
  double max_abs_target = 0.0;
  double max_target_bound_excess = -1e300;  // max of |y| - (R_max + gamma max|Q'|)
  bool stopped_early = false;
};

TrainResult train(const env::ContinuousDataset& data,
                  const std::optional<dyn::DynamicsModel>& dynamics, const AgentConfig& cfg,
                  Rng& rng, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodeRow {
  double ret = 0.0;
  std::size_t length = 0;
  std::size_t steps_out_of_ood = 0;
  bool exited_hole = true;
  std::size_t perturb_steps = 0;
};

struct EvalReport {
  std::vector<EpisodeRow> episodes;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_steps_out_of_ood = 0.0;
  double std_steps_out_of_ood = 0.0;
  double exited_fraction = 0.0;

  void recompute();
};

struct EvalOptions {
  env::ResetMode mode = env::ResetMode::kInDist;
  std::size_t episodes = 10;
  std::optional<env::PerturbProtocol> protocol;
  std::uint64_t seed = 0;
};

// Episode i uses the RNG stream (seed, i).
EvalReport evaluate(const AgentState& st, const env::PointNavConfig& env_cfg,
                    const EvalOptions& opts);

// ---------------------------------------------------------------------------
// Persistence

void to_json(nlohmann::json& j, const AgentConfig& cfg);
void from_json(const nlohmann::json& j, AgentConfig& cfg);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

struct BundleInfo {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string dataset_hash;
};

void save_bundle(const std::filesystem::path& dir, const AgentState& st, const BundleInfo& info);

struct LoadedBundle {
  AgentState state;
  nlohmann::json manifest;
};

LoadedBundle load_bundle(const std::filesystem::path& dir);

}  // namespace scas::agent
