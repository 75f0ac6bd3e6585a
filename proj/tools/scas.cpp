#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "scas/agent.hpp"
#include "scas/checkpoint.hpp"
#include "scas/error.hpp"
#include "scas/log.hpp"
#include "scas/pipeline.hpp"
#include "scas/scas_tabular.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scas;

namespace {

enum Exit { kOk = 0, kUsage = 1, kVerifyFailed = 2, kIoError = 3 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Overrides {
  std::optional<double> alpha, lambda, sigma;
  std::optional<std::uint64_t> steps, dynamics_steps;
  std::optional<std::string> mode;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.seed = g.seed;
  return cfg;
}

void apply(const Overrides& o, RunConfig& cfg) {
  if (o.alpha) cfg.agent.alpha = *o.alpha;
  if (o.lambda) cfg.agent.lambda = *o.lambda;
  if (o.sigma) cfg.agent.sigma = *o.sigma;
  if (o.steps) cfg.agent.gradient_steps = *o.steps;
  if (o.dynamics_steps) cfg.dynamics.steps = *o.dynamics_steps;
  if (o.mode) {
    if (*o.mode == "scas") {
      cfg.agent.mode = agent::Mode::kScas;
    } else if (*o.mode == "bc") {
      cfg.agent.mode = agent::Mode::kBehaviorCloning;
    } else {
      fail(ErrorKind::kConfig, "--mode must be 'scas' or 'bc'");
    }
  }
  cfg.agent.validate();
}

std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed) fail(ErrorKind::kConfig, "a seed is required (--seed or \"seed\" in the config)");
  return *cfg.seed;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, "not a number: '" + item + "'");
    }
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_gen_data(const Globals& g) {
  RunConfig cfg = load_config(g);
  const auto seed = require_seed(cfg);
  if (g.out.empty()) fail(ErrorKind::kConfig, "gen-data needs --out FILE");
  env::CollectStats stats;
  const auto ds = generate_dataset(cfg, seed, &stats);
  env::save_dataset(g.out, ds);

  std::size_t in_hole = 0;
  if (cfg.env.ood_hole) {
    for (const auto& t : ds.transitions) {
      in_hole += cfg.env.ood_hole->contains(t.s) || cfg.env.ood_hole->contains(t.s2);
    }
  }
  fmt::print("wrote {} transitions to {}\n", ds.transitions.size(), g.out);
  fmt::print("episodes {}  generated {}  dropped (hole) {}  retained in-hole states {}\n",
             stats.episodes, stats.generated, stats.dropped_in_hole, in_hole);
  fmt::print("state mean [{:.6g}, {:.6g}]  std [{:.6g}, {:.6g}]  max |r| {:.6g}\n",
             ds.state_mean[0], ds.state_mean[1], ds.state_std[0], ds.state_std[1],
             ds.max_abs_reward());
  return kOk;
}

env::ContinuousDataset dataset_for(const RunConfig& cfg, const std::string& flag, fs::path* used) {
  const std::string path = flag.empty() ? cfg.dataset_path : flag;
  if (path.empty()) fail(ErrorKind::kConfig, "no dataset: pass --dataset or set dataset_path");
  *used = path;
  return env::load_dataset(path);
}

int cmd_train(const Globals& g, const std::string& dataset_flag, const Overrides& o) {
  RunConfig cfg = load_config(g);
  apply(o, cfg);
  const auto seed = require_seed(cfg);
  if (g.out.empty()) fail(ErrorKind::kConfig, "train needs --out DIR");
  fs::path ds_path;
  const auto data = dataset_for(cfg, dataset_flag, &ds_path);
  const auto hash = file_hash(ds_path);
  logger()->info("training seed {} on {} transitions", seed, data.transitions.size());
  const auto result = run_pipeline(cfg, data, seed);
  write_run(g.out, cfg, seed, hash, result);
  const auto& m = result.train.metrics;
  fmt::print("trained {} steps; bundle in {}\n", result.train.state.step, g.out);
  if (!m.empty() && m.back().eval_return) {
    fmt::print("final eval return {:.4f}, OOD steps out {:.2f}\n", *m.back().eval_return,
               m.back().eval_steps_out_of_ood.value_or(0.0));
  }
  return kOk;
}

json report_json(const agent::EvalReport& r) {
  json eps = json::array();
  for (const auto& e : r.episodes) {
    eps.push_back({{"return", e.ret},
                   {"length", e.length},
                   {"steps_out_of_ood", e.steps_out_of_ood},
                   {"exited_hole", e.exited_hole},
                   {"perturb_steps", e.perturb_steps}});
  }
  return {{"episodes", eps},
          {"mean_return", r.mean_return},
          {"std_return", r.std_return},
          {"mean_steps_out_of_ood", r.mean_steps_out_of_ood},
          {"std_steps_out_of_ood", r.std_steps_out_of_ood},
          {"exited_fraction", r.exited_fraction}};
}

int cmd_eval(const Globals& g, const std::string& bundle, const std::string& mode,
             std::optional<std::size_t> perturb, std::size_t episodes, std::size_t seeds) {
  auto lb = agent::load_bundle(bundle);
  RunConfig cfg = run_config_from_json(lb.manifest.at("config"));
  const std::uint64_t base = g.seed.value_or(0);

  agent::EvalOptions opts;
  if (mode == "in_dist") {
    opts.mode = env::ResetMode::kInDist;
  } else if (mode == "ood_hole") {
    opts.mode = env::ResetMode::kOodHole;
  } else {
    fail(ErrorKind::kConfig, "--mode must be in_dist or ood_hole");
  }
  opts.episodes = episodes;
  if (perturb) opts.protocol = env::PerturbProtocol{0.5, *perturb};

  json per_seed = json::array();
  agent::EvalReport all;
  for (std::size_t k = 0; k < seeds; ++k) {
    opts.seed = base + k;
    const auto rep = agent::evaluate(lb.state, cfg.env, opts);
    all.episodes.insert(all.episodes.end(), rep.episodes.begin(), rep.episodes.end());
    auto j = report_json(rep);
    j["seed"] = opts.seed;
    per_seed.push_back(j);
  }
  all.recompute();
  json out = {{"bundle", bundle},
              {"mode", mode},
              {"perturb_steps", perturb ? json(*perturb) : json(nullptr)},
              {"episodes_per_seed", episodes},
              {"seeds", per_seed},
              {"aggregate", {{"mean_return", all.mean_return},
                             {"std_return", all.std_return},
                             {"mean_steps_out_of_ood", all.mean_steps_out_of_ood},
                             {"std_steps_out_of_ood", all.std_steps_out_of_ood},
                             {"exited_fraction", all.exited_fraction},
                             {"episodes", all.episodes.size()}}}};

  fmt::print("{:>6} {:>10} {:>14} {:>14} {:>8}\n", "seed", "episodes", "return", "steps_out_ood",
             "exited");
  for (const auto& s : per_seed) {
    fmt::print("{:>6} {:>10} {:>8.3f}±{:<5.2f} {:>8.2f}±{:<5.2f} {:>8.3f}\n",
               s["seed"].get<std::uint64_t>(), s["episodes"].size(), s["mean_return"].get<double>(),
               s["std_return"].get<double>(), s["mean_steps_out_of_ood"].get<double>(),
               s["std_steps_out_of_ood"].get<double>(), s["exited_fraction"].get<double>());
  }
  fmt::print("{:>6} {:>10} {:>8.3f}±{:<5.2f} {:>8.2f}±{:<5.2f} {:>8.3f}\n", "all",
             all.episodes.size(), all.mean_return, all.std_return, all.mean_steps_out_of_ood,
             all.std_steps_out_of_ood, all.exited_fraction);
  const fs::path report = g.out.empty() ? fs::path(bundle) / "eval_report.json" : fs::path(g.out);
  write_json(report, out);
  return kOk;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int cmd_verify(const Globals& g, tabular::VerifyOptions opts, const std::string& alphas) {
  opts.alphas = parse_list(alphas);
  opts.seed = g.seed.value_or(0);
  const auto summary = tabular::verify_propositions(opts, [](const tabular::InstanceReport& r) {
    fmt::print("instance {:>3} alpha {:<5g} visited {} support {:.3g} kl {} gap {} a0 {:.3g}\n",
               r.index, r.alpha, r.visited, r.support_violation,
               r.alignment_kl ? fmt::format("{:.3g}", *r.alignment_kl) : "-",
               r.argmax_gap ? fmt::format("{:.3g}", *r.argmax_gap) : "-", r.alpha0_deviation);
  });
  json out = {{"instances", summary.instances},
              {"stochastic", opts.stochastic},
              {"max_support_violation", summary.max_support_violation},
              {"max_alignment_kl", opt_json(summary.max_alignment_kl)},
              {"max_argmax_gap", opt_json(summary.max_argmax_gap)},
              {"max_alpha0_deviation", summary.max_alpha0_deviation},
              {"passed", summary.passed}};
  std::cout << out.dump() << std::endl;
  if (!g.out.empty()) write_json(g.out, out);
  return summary.passed ? kOk : kVerifyFailed;
}

int cmd_sweep(const Globals& g, const std::string& dataset_flag, const std::string& param,
              const std::string& values_text, std::size_t seeds, const Overrides& o) {
  RunConfig cfg = load_config(g);
  apply(o, cfg);
  const auto base = require_seed(cfg);
  if (g.out.empty()) fail(ErrorKind::kConfig, "sweep needs --out DIR");
  const auto values = parse_list(values_text);
  if (values.empty()) fail(ErrorKind::kConfig, "sweep needs a nonempty --values list");
  if (param != "alpha" && param != "lambda" && param != "sigma") {
    fail(ErrorKind::kConfig, "--param must be alpha, lambda or sigma");
  }
  if (seeds == 0) fail(ErrorKind::kConfig, "--seeds must be positive");
  fs::path ds_path;
  const auto data = dataset_for(cfg, dataset_flag, &ds_path);
  const auto hash = file_hash(ds_path);

  fs::create_directories(g.out);
  std::ofstream combined(fs::path(g.out) / "combined.csv", std::ios::trunc);
  if (!combined) fail(ErrorKind::kIo, "cannot write combined.csv in " + g.out);
  combined << "param,value,seed,step,critic_loss,policy_objective,mean_q,max_weight,eval_return,"
              "eval_steps_out_of_ood\n";
  for (double v : values) {
    RunConfig run = cfg;
    (param == "alpha" ? run.agent.alpha : param == "lambda" ? run.agent.lambda : run.agent.sigma) = v;
    run.agent.validate();
    for (std::size_t k = 0; k < seeds; ++k) {
      const std::uint64_t seed = base + k;
      const fs::path dir = fs::path(g.out) / fmt::format("{}_{:g}", param, v) / fmt::format("seed_{}", seed);
      logger()->info("sweep {}={:g} seed {}", param, v, seed);
      const auto result = run_pipeline(run, data, seed);
      write_run(dir, run, seed, hash, result);
      std::ifstream metrics(dir / "metrics.csv");
      std::string line;
      std::getline(metrics, line);
      while (std::getline(metrics, line)) {
        combined << param << ',' << fmt::format("{:g}", v) << ',' << seed << ',' << line << '\n';
      }
    }
  }
  fmt::print("sweep over {} values x {} seeds written to {}\n", values.size(), seeds, g.out);
  return kOk;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kIo:
      return kIoError;
    default:
      return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL laboratory: value-aware OOD state correction"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Base seed");
  app.add_option("--out", g.out, "Output file or directory");

  Overrides o;
  auto add_overrides = [&o](CLI::App* cmd) {
    cmd->add_option("--alpha", o.alpha, "Inverse temperature");
    cmd->add_option("--lambda", o.lambda, "Balance coefficient (0 = off-policy ablation)");
    cmd->add_option("--sigma", o.sigma, "State perturbation scale");
    cmd->add_option("--steps", o.steps, "Agent gradient steps");
    cmd->add_option("--dynamics-steps", o.dynamics_steps, "Dynamics gradient steps");
    cmd->add_option("--mode", o.mode, "scas or bc");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");

  std::string dataset;
  auto* train = app.add_subcommand("train", "Train dynamics model and agent");
  train->add_option("--dataset", dataset, "Dataset JSONL");
  add_overrides(train);

  std::string bundle, mode = "in_dist";
  std::optional<std::size_t> perturb;
  std::size_t episodes = 100, eval_seeds = 1;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained bundle");
  eval->add_option("bundle", bundle, "Bundle directory")->required();
  eval->add_option("--mode", mode, "in_dist or ood_hole");
  eval->add_option("--perturb-steps", perturb, "Perturbed steps per episode");
  eval->add_option("--episodes", episodes, "Episodes per seed");
  eval->add_option("--seeds", eval_seeds, "Number of seeds (base + index)");

  tabular::VerifyOptions vopts;
  std::string alphas = "0,1,5";
  auto* verify = app.add_subcommand("verify", "Check the tabular propositions on random instances");
  verify->add_option("--instances", vopts.instances, "Random instances");
  verify->add_option("--states", vopts.states, "States per instance (<= 8)");
  verify->add_option("--actions", vopts.actions, "Actions per state (<= 4)");
  verify->add_option("--grid", vopts.grid, "Simplex grid resolution (<= 100)");
  verify->add_option("--alphas", alphas, "Comma-separated alpha list");
  verify->add_flag("--stochastic", vopts.stochastic, "Stochastic dynamics");

  std::string param, values;
  std::size_t sweep_seeds = 1;
  auto* sweep = app.add_subcommand("sweep", "Train one agent per parameter value and seed");
  sweep->add_option("--dataset", dataset, "Dataset JSONL");
  sweep->add_option("--param", param, "alpha, lambda or sigma")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--seeds", sweep_seeds, "Seeds per value");
  add_overrides(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(g);
    if (*train) return cmd_train(g, dataset, o);
    if (*eval) return cmd_eval(g, bundle, mode, perturb, episodes, eval_seeds);
    if (*verify) return cmd_verify(g, vopts, alphas);
    if (*sweep) return cmd_sweep(g, dataset, param, values, sweep_seeds, o);
  } catch (const Error& e) {
    logger()->error("{}", e.what());
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    logger()->error("{}", e.what());
    return kIoError;
  } catch (const nlohmann::json::exception& e) {
    logger()->error("{}", e.what());
    return kUsage;
  }
  return kUsage;
}
