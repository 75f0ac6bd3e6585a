#include "scas/pipeline.hpp"

#include <fstream>

#include "scas/error.hpp"
#include "scas/json_util.hpp"
#include "scas/log.hpp"

namespace scas {
namespace {

nlohmann::json behavior_json(const env::Behavior& b) {
  return {{"kind", env::behavior_name(b.kind)}, {"noise_std", b.noise_std}};
}

env::Behavior behavior_from(const nlohmann::json& j) {
  require_keys(j, {"kind", "noise_std"}, "dataset.behaviors[]");
  env::Behavior b;
  std::string kind = env::behavior_name(b.kind);
  read_opt(j, "kind", kind, "dataset.behaviors[]");
  b.kind = env::behavior_from_name(kind);
  read_opt(j, "noise_std", b.noise_std, "dataset.behaviors[]");
  if (!(b.noise_std >= 0.0)) fail(ErrorKind::kConfig, "behavior noise_std must be >= 0");
  return b;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_keys(j, {"seed", "dataset_path", "env", "dataset", "dynamics", "agent", "eval",
                   "log_every"},
               "config");
  RunConfig cfg;
  if (j.contains("seed") && !j["seed"].is_null()) {
    std::uint64_t seed = 0;
    read_opt(j, "seed", seed, "config");
    cfg.seed = seed;
  }
  read_opt(j, "dataset_path", cfg.dataset_path, "config");
  read_opt(j, "log_every", cfg.log_every, "config");
  if (j.contains("env")) env::from_json(j["env"], cfg.env);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    require_keys(d, {"n_transitions", "behaviors", "exclude_hole"}, "dataset");
    read_opt(d, "n_transitions", cfg.dataset.n_transitions, "dataset");
    read_opt(d, "exclude_hole", cfg.dataset.exclude_hole, "dataset");
    if (d.contains("behaviors")) {
      if (!d["behaviors"].is_array() || d["behaviors"].empty()) {
        fail(ErrorKind::kConfig, "dataset.behaviors must be a nonempty array");
      }
      cfg.dataset.behaviors.clear();
      for (const auto& b : d["behaviors"]) cfg.dataset.behaviors.push_back(behavior_from(b));
    }
    if (cfg.dataset.n_transitions == 0) fail(ErrorKind::kConfig, "dataset.n_transitions must be positive");
  }
  if (j.contains("dynamics")) {
    const auto& d = j["dynamics"];
    require_keys(d, {"lr", "batch", "steps", "hidden", "depth", "cosine_lr", "checkpoints"},
                 "dynamics");
    read_opt(d, "lr", cfg.dynamics.lr, "dynamics");
    read_opt(d, "batch", cfg.dynamics.batch, "dynamics");
    read_opt(d, "steps", cfg.dynamics.steps, "dynamics");
    read_opt(d, "hidden", cfg.dynamics.hidden, "dynamics");
    read_opt(d, "depth", cfg.dynamics.depth, "dynamics");
    read_opt(d, "cosine_lr", cfg.dynamics.cosine_lr, "dynamics");
    read_opt(d, "checkpoints", cfg.dynamics_checkpoints, "dynamics");
  }
  if (j.contains("agent")) agent::from_json(j["agent"], cfg.agent);
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    require_keys(e, {"every", "episodes"}, "eval");
    read_opt(e, "every", cfg.eval.every, "eval");
    read_opt(e, "episodes", cfg.eval.episodes, "eval");
  }
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr);
  j["dataset_path"] = cfg.dataset_path;
  j["log_every"] = cfg.log_every;
  env::to_json(j["env"], cfg.env);
  auto& d = j["dataset"];
  d["n_transitions"] = cfg.dataset.n_transitions;
  d["exclude_hole"] = cfg.dataset.exclude_hole;
  d["behaviors"] = nlohmann::json::array();
  for (const auto& b : cfg.dataset.behaviors) d["behaviors"].push_back(behavior_json(b));
  j["dynamics"] = {{"lr", cfg.dynamics.lr},
                   {"batch", cfg.dynamics.batch},
                   {"steps", cfg.dynamics.steps},
                   {"hidden", cfg.dynamics.hidden},
                   {"depth", cfg.dynamics.depth},
                   {"cosine_lr", cfg.dynamics.cosine_lr},
                   {"checkpoints", cfg.dynamics_checkpoints}};
  agent::to_json(j["agent"], cfg.agent);
  j["eval"] = {{"every", cfg.eval.every}, {"episodes", cfg.eval.episodes}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

env::ContinuousDataset generate_dataset(const RunConfig& cfg, std::uint64_t seed,
                                        env::CollectStats* stats) {
  const auto& bs = cfg.dataset.behaviors;
  const std::size_t k = bs.size();
  std::vector<env::ContinuousDataset> parts;
  env::CollectStats total;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t n = cfg.dataset.n_transitions / k;
    if (i == 0) n += cfg.dataset.n_transitions % k;
    if (n == 0) continue;
    Rng rng = Rng::stream(seed, 100 + i);
    env::CollectStats st;
    parts.push_back(env::collect_dataset(cfg.env, bs[i], n, cfg.dataset.exclude_hole, rng, &st));
    total.episodes += st.episodes;
    total.generated += st.generated;
    total.dropped_in_hole += st.dropped_in_hole;
  }
  auto ds = parts.size() == 1 ? std::move(parts.front()) : env::merge_datasets(parts);
  nlohmann::json env_json;
  env::to_json(env_json, cfg.env);
  ds.metadata = {{"seed", seed},
                 {"env", env_json},
                 {"exclude_hole", cfg.dataset.exclude_hole},
                 {"behaviors", nlohmann::json::array()},
                 {"episodes", total.episodes},
                 {"dropped_in_hole", total.dropped_in_hole}};
  for (const auto& b : bs) ds.metadata["behaviors"].push_back(behavior_json(b));
  if (stats) *stats = total;
  return ds;
}

std::vector<dyn::DynamicsModel> train_dynamics_for(const RunConfig& cfg,
                                                   const env::ContinuousDataset& data,
                                                   std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 1);
  const auto every = std::max<std::uint64_t>(1, cfg.dynamics.steps / 10);
  return dyn::train_dynamics(
      data, cfg.dynamics, cfg.dynamics_checkpoints, rng,
      [](std::uint64_t step, double loss) {
        logger()->debug("dynamics step {} batch loss {:.6g}", step, loss);
      },
      every);
}

PipelineResult run_pipeline(const RunConfig& cfg, const env::ContinuousDataset& data,
                            std::uint64_t seed, const std::optional<dyn::DynamicsModel>& dynamics,
                            const StepHook& extra_hook) {
  PipelineResult out;
  std::optional<dyn::DynamicsModel> model = dynamics;
  if (!model && cfg.agent.mode == agent::Mode::kScas) {
    out.dynamics_checkpoints = train_dynamics_for(cfg, data, seed);
    model = out.dynamics_checkpoints.back();
    logger()->info("dynamics trained for {} steps", model->trained_steps);
  }

  agent::TrainHooks hooks;
  hooks.log_every = cfg.log_every;
  hooks.on_log = [&](agent::MetricsRow& row, const agent::AgentState& st) {
    const bool eval_now = cfg.eval.every > 0 && cfg.eval.episodes > 0 &&
                          (row.step % cfg.eval.every == 0 || row.step == cfg.agent.gradient_steps);
    if (eval_now) {
      agent::EvalOptions in_dist{env::ResetMode::kInDist, cfg.eval.episodes, std::nullopt, seed};
      row.eval_return = agent::evaluate(st, cfg.env, in_dist).mean_return;
      if (cfg.env.ood_hole) {
        agent::EvalOptions ood{env::ResetMode::kOodHole, cfg.eval.episodes, std::nullopt, seed};
        row.eval_steps_out_of_ood = agent::evaluate(st, cfg.env, ood).mean_steps_out_of_ood;
      }
    }
    logger()->debug("step {} critic_loss {} mean_q {} objective {}", row.step,
                    row.critic_loss.value_or(0.0), row.mean_q.value_or(0.0),
                    row.policy_objective.value_or(0.0));
    return extra_hook ? extra_hook(row, st) : true;
  };
  Rng rng = Rng::stream(seed, 2);
  out.train = agent::train(data, model, cfg.agent, rng, hooks);
  return out;
}

void write_run(const std::filesystem::path& out_dir, const RunConfig& cfg, std::uint64_t seed,
               const std::string& dataset_hash, const PipelineResult& result) {
  agent::BundleInfo info{run_config_to_json(cfg), seed, dataset_hash};
  info.config["seed"] = seed;
  agent::save_bundle(out_dir, result.train.state, info);
  agent::write_metrics_csv(out_dir / "metrics.csv", result.train.metrics);
  for (const auto& m : result.dynamics_checkpoints) {
    const auto& used = result.train.state.dynamics;
    if (used && m.trained_steps == used->trained_steps) continue;
    dyn::save_dynamics(out_dir / ("dynamics_step_" + std::to_string(m.trained_steps) + ".ckpt"), m,
                       seed);
  }
}

}  // namespace scas
