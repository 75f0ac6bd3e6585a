#pragma once
// Run configuration and the dataset -> dynamics -> agent pipeline shared by
// the command-line tool and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scas/agent.hpp"
#include "scas/dynamics.hpp"
#include "scas/env.hpp"

namespace scas {

struct DatasetConfig {
  std::size_t n_transitions = 50000;
  // The transition budget is split evenly across behaviors.
  std::vector<env::Behavior> behaviors{{env::BehaviorKind::kScriptedPd, 0.5}};
  bool exclude_hole = true;
};

struct EvalConfig {
  std::uint64_t every = 10000;  // 0 disables periodic evaluation
  std::size_t episodes = 20;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string dataset_path;
  env::PointNavConfig env;
  DatasetConfig dataset;
  dyn::DynamicsConfig dynamics;
  std::vector<std::uint64_t> dynamics_checkpoints;
  agent::AgentConfig agent;
  EvalConfig eval;
  std::uint64_t log_every = 1000;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

env::ContinuousDataset generate_dataset(const RunConfig& cfg, std::uint64_t seed,
                                        env::CollectStats* stats = nullptr);

// Dynamics model for the agent phase: trained with stream (seed, 1).
std::vector<dyn::DynamicsModel> train_dynamics_for(const RunConfig& cfg,
                                                   const env::ContinuousDataset& data,
                                                   std::uint64_t seed);

struct PipelineResult {
  agent::TrainResult train;
  std::vector<dyn::DynamicsModel> dynamics_checkpoints;
};

using StepHook = std::function<bool(const agent::MetricsRow&, const agent::AgentState&)>;

// Trains dynamics (unless supplied, or in behavior-cloning mode) and then the
// agent with stream (seed, 2). Periodic evaluation fills the eval columns;
// extra_hook runs after it and may stop training.
PipelineResult run_pipeline(const RunConfig& cfg, const env::ContinuousDataset& data,
                            std::uint64_t seed,
                            const std::optional<dyn::DynamicsModel>& dynamics = std::nullopt,
                            const StepHook& extra_hook = {});

// Bundle plus metrics.csv into out_dir.
void write_run(const std::filesystem::path& out_dir, const RunConfig& cfg, std::uint64_t seed,
               const std::string& dataset_hash, const PipelineResult& result);

}  // namespace scas
