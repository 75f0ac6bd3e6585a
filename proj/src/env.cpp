#include "scas/env.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>

#include "scas/error.hpp"
#include "scas/json_util.hpp"
#include "scas/log.hpp"

namespace scas::env {
namespace {

double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void warn_clipped_action() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true)) {
    logger()->warn("env_step: action outside [-1, 1] clipped (further warnings suppressed)");
  }
}

Vec2 uniform_in(const Rect& r, Rng& rng) {
  return {rng.uniform(r.low[0], r.high[0]), rng.uniform(r.low[1], r.high[1])};
}

nlohmann::json rect_json(const Rect& r) {
  return {{"low", r.low}, {"high", r.high}};
}

Rect rect_from(const nlohmann::json& j, const std::string& ctx) {
  require_keys(j, {"low", "high"}, ctx);
  Rect r;
  read_opt(j, "low", r.low, ctx);
  read_opt(j, "high", r.high, ctx);
  return r;
}

}  // namespace

void PointNavConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, "env: " + m); };
  if (arena.low[0] > arena.high[0] || arena.low[1] > arena.high[1]) bad("arena corners reversed");
  if (!arena.contains(goal)) bad("goal must lie inside the arena");
  if (!(action_scale > 0.0)) bad("action_scale must be positive");
  if (!(goal_radius >= 0.0)) bad("goal_radius must be non-negative");
  if (!(dynamics_noise_std >= 0.0)) bad("dynamics_noise_std must be non-negative");
  if (max_steps == 0) bad("max_steps must be positive");
  if (ood_hole) {
    const auto& h = *ood_hole;
    if (h.low[0] > h.high[0] || h.low[1] > h.high[1]) bad("hole corners reversed");
    if (!arena.contains(h.low) || !arena.contains(h.high)) bad("hole must lie inside the arena");
  }
}

double PointNavConfig::diagonal() const { return dist(arena.low, arena.high); }

Vec2 env_reset(const PointNavConfig& cfg, ResetMode mode, Rng& rng) {
  if (mode == ResetMode::kOodHole) {
    if (!cfg.ood_hole) fail(ErrorKind::kConfig, "OOD_HOLE reset needs an ood_hole");
    return uniform_in(*cfg.ood_hole, rng);
  }
  if (cfg.ood_hole && cfg.ood_hole->area() >= cfg.arena.area() && cfg.arena.area() > 0.0) {
    fail(ErrorKind::kConfig, "hole covers the whole arena; no in-distribution starts");
  }
  for (;;) {
    Vec2 s = uniform_in(cfg.arena, rng);
    // Degenerate arenas have no interior to reject against.
    if (!cfg.ood_hole || cfg.arena.area() == 0.0 || !cfg.ood_hole->contains(s)) return s;
  }
}

StepResult env_step(const PointNavConfig& cfg, const Vec2& state, const Vec2& action, Rng& rng) {
  Vec2 a = action;
  if (std::abs(a[0]) > 1.0 || std::abs(a[1]) > 1.0) {
    warn_clipped_action();
    a = {clamp_unit(a[0]), clamp_unit(a[1])};
  }
  StepResult out;
  for (int i = 0; i < 2; ++i) {
    double x = state[i] + cfg.action_scale * a[i];
    if (cfg.dynamics_noise_std > 0.0) x += rng.normal(0.0, cfg.dynamics_noise_std);
    out.next[i] = std::clamp(x, cfg.arena.low[i], cfg.arena.high[i]);
  }
  const double d = dist(out.next, cfg.goal);
  out.reward = -d;
  if (d <= cfg.goal_radius) {
    out.reward += kGoalBonus;
    out.done = true;
  }
  return out;
}

Vec2 scripted_action(const PointNavConfig& cfg, const Vec2& state) {
  const Vec2 d{cfg.goal[0] - state[0], cfg.goal[1] - state[1]};
  const double norm = std::max(std::hypot(d[0], d[1]), cfg.action_scale);
  return {d[0] / norm, d[1] / norm};
}

Vec2 behavior_action(const PointNavConfig& cfg, const Behavior& behavior, const Vec2& state,
                     Rng& rng) {
  if (behavior.kind == BehaviorKind::kRandom) {
    // Draw order is fixed so datasets are reproducible.
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    return {x, y};
  }
  Vec2 a = scripted_action(cfg, state);
  if (behavior.noise_std > 0.0) {
    for (auto& x : a) x = clamp_unit(x + rng.normal(0.0, behavior.noise_std));
  }
  return a;
}

void ContinuousDataset::compute_statistics() {
  state_mean.assign(state_dim, 0.0);
  state_std.assign(state_dim, kStdFloor);
  if (transitions.empty()) return;
  const double n = static_cast<double>(transitions.size());
  for (const auto& t : transitions) {
    for (std::size_t i = 0; i < state_dim; ++i) state_mean[i] += t.s[i];
  }
  for (auto& m : state_mean) m /= n;
  std::vector<double> var(state_dim, 0.0);
  for (const auto& t : transitions) {
    for (std::size_t i = 0; i < state_dim; ++i) {
      const double d = t.s[i] - state_mean[i];
      var[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < state_dim; ++i) {
    state_std[i] = std::max(std::sqrt(var[i] / n), kStdFloor);
  }
}

void ContinuousDataset::validate() const {
  if (transitions.empty()) fail(ErrorKind::kInvalidInput, "dataset is empty");
  if (state_mean.size() != state_dim || state_std.size() != state_dim) {
    fail(ErrorKind::kInvalidInput, "dataset statistics have the wrong length");
  }
  for (double s : state_std) {
    if (!(s >= kStdFloor)) fail(ErrorKind::kInvalidInput, "state_std below floor");
  }
  for (const auto& t : transitions) {
    if (t.s.size() != state_dim || t.s2.size() != state_dim || t.a.size() != action_dim) {
      fail(ErrorKind::kShapeMismatch, "transition has the wrong dimensions");
    }
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(t.s) || !finite(t.s2) || !finite(t.a) || !std::isfinite(t.r)) {
      fail(ErrorKind::kInvalidInput, "transition has non-finite entries");
    }
  }
}

double ContinuousDataset::max_abs_reward() const {
  double m = 0.0;
  for (const auto& t : transitions) m = std::max(m, std::abs(t.r));
  return m;
}

ContinuousDataset collect_dataset(const PointNavConfig& cfg, const Behavior& behavior,
                                  std::size_t n_transitions, bool exclude_hole, Rng& rng,
                                  CollectStats* stats) {
  cfg.validate();
  if (n_transitions == 0) fail(ErrorKind::kInvalidInput, "n_transitions must be positive");
  if (exclude_hole && !cfg.ood_hole) fail(ErrorKind::kConfig, "exclude_hole needs an ood_hole");

  ContinuousDataset ds;
  ds.transitions.reserve(n_transitions);
  CollectStats st;
  while (ds.transitions.size() < n_transitions) {
    Vec2 s = env_reset(cfg, ResetMode::kInDist, rng);
    ++st.episodes;
    for (std::size_t t = 0; t < cfg.max_steps && ds.transitions.size() < n_transitions; ++t) {
      const Vec2 a = behavior_action(cfg, behavior, s, rng);
      const auto step = env_step(cfg, s, a, rng);
      ++st.generated;
      if (exclude_hole && (cfg.ood_hole->contains(s) || cfg.ood_hole->contains(step.next))) {
        ++st.dropped_in_hole;
      } else {
        ds.transitions.push_back({{s[0], s[1]}, {a[0], a[1]}, step.reward,
                                  {step.next[0], step.next[1]}, step.done});
      }
      s = step.next;
      if (step.done) break;
    }
  }
  ds.compute_statistics();
  nlohmann::json env_json;
  to_json(env_json, cfg);
  ds.metadata = {{"env", env_json},
                 {"behavior", behavior_name(behavior.kind)},
                 {"noise_std", behavior.noise_std},
                 {"exclude_hole", exclude_hole},
                 {"episodes", st.episodes},
                 {"dropped_in_hole", st.dropped_in_hole}};
  if (stats) *stats = st;
  return ds;
}

ContinuousDataset merge_datasets(const std::vector<ContinuousDataset>& parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidInput, "nothing to merge");
  ContinuousDataset out;
  out.state_dim = parts.front().state_dim;
  out.action_dim = parts.front().action_dim;
  out.metadata["parts"] = nlohmann::json::array();
  for (const auto& p : parts) {
    if (p.state_dim != out.state_dim || p.action_dim != out.action_dim) {
      fail(ErrorKind::kShapeMismatch, "cannot merge datasets of different dimensions");
    }
    out.transitions.insert(out.transitions.end(), p.transitions.begin(), p.transitions.end());
    out.metadata["parts"].push_back(p.metadata);
  }
  out.compute_statistics();
  return out;
}

EpisodeTrace run_episode(const PointNavConfig& cfg, const PolicyFn& policy,
                         const std::optional<PerturbProtocol>& protocol, ResetMode mode,
                         Rng& rng) {
  cfg.validate();
  EpisodeTrace tr;
  Vec2 s = env_reset(cfg, mode, rng);
  tr.states.push_back(s);

  std::vector<bool> perturb(cfg.max_steps, false);
  if (protocol && protocol->perturb_steps > 0) {
    if (protocol->perturb_steps > cfg.max_steps) {
      fail(ErrorKind::kConfig, "perturb_steps exceeds max_steps");
    }
    std::vector<std::size_t> idx(cfg.max_steps);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first perturb_steps entries are a uniform
    // sample without replacement.
    for (std::size_t i = 0; i < protocol->perturb_steps; ++i) {
      std::swap(idx[i], idx[i + rng.index(cfg.max_steps - i)]);
      perturb[idx[i]] = true;
    }
  }

  const bool in_hole_start = cfg.ood_hole && cfg.ood_hole->contains(s);
  bool still_inside = in_hole_start;
  for (std::size_t t = 0; t < cfg.max_steps; ++t) {
    const Vec2 a = policy(s);
    Vec2 exec = a;
    if (perturb[t]) {
      for (auto& x : exec) x += rng.normal(0.0, protocol->noise_magnitude);
      exec = {clamp_unit(exec[0]), clamp_unit(exec[1])};
      ++tr.perturb_steps;
    }
    const auto step = env_step(cfg, s, exec, rng);
    tr.policy_actions.push_back(a);
    tr.executed_actions.push_back(exec);
    tr.rewards.push_back(step.reward);
    tr.ret += step.reward;
    tr.states.push_back(step.next);
    s = step.next;
    ++tr.length;
    if (still_inside) {
      ++tr.steps_out_of_ood;
      still_inside = cfg.ood_hole->contains(s);
    }
    if (step.done) {
      tr.reached_goal = true;
      break;
    }
  }
  tr.exited_hole = !still_inside;
  return tr;
}

void to_json(nlohmann::json& j, const PointNavConfig& cfg) {
  j = {{"arena", rect_json(cfg.arena)},
       {"goal", cfg.goal},
       {"goal_radius", cfg.goal_radius},
       {"max_steps", cfg.max_steps},
       {"action_scale", cfg.action_scale},
       {"dynamics_noise_std", cfg.dynamics_noise_std},
       {"ood_hole", cfg.ood_hole ? rect_json(*cfg.ood_hole) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, PointNavConfig& cfg) {
  const std::string ctx = "env";
  require_keys(j, {"arena", "goal", "goal_radius", "max_steps", "action_scale",
                   "dynamics_noise_std", "ood_hole"},
               ctx);
  if (j.contains("arena")) cfg.arena = rect_from(j["arena"], ctx + ".arena");
  read_opt(j, "goal", cfg.goal, ctx);
  read_opt(j, "goal_radius", cfg.goal_radius, ctx);
  read_opt(j, "max_steps", cfg.max_steps, ctx);
  read_opt(j, "action_scale", cfg.action_scale, ctx);
  read_opt(j, "dynamics_noise_std", cfg.dynamics_noise_std, ctx);
  if (j.contains("ood_hole")) {
    if (j["ood_hole"].is_null()) {
      cfg.ood_hole.reset();
    } else {
      cfg.ood_hole = rect_from(j["ood_hole"], ctx + ".ood_hole");
    }
  }
  cfg.validate();
}

const char* behavior_name(BehaviorKind kind) {
  return kind == BehaviorKind::kRandom ? "random" : "scripted_pd";
}

BehaviorKind behavior_from_name(const std::string& name) {
  if (name == "scripted_pd") return BehaviorKind::kScriptedPd;
  if (name == "random") return BehaviorKind::kRandom;
  fail(ErrorKind::kConfig, "unknown behavior '" + name + "'");
}

void save_dataset(const std::filesystem::path& path, const ContinuousDataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  nlohmann::json head = {{"metadata", data.metadata},
                         {"state_dim", data.state_dim},
                         {"action_dim", data.action_dim},
                         {"count", data.transitions.size()},
                         {"state_mean", data.state_mean},
                         {"state_std", data.state_std}};
  out << head.dump() << '\n';
  for (const auto& t : data.transitions) {
    nlohmann::json line = {{"s", t.s}, {"a", t.a}, {"r", t.r}, {"s2", t.s2}, {"done", t.done}};
    out << line.dump() << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

ContinuousDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open dataset " + path.string());
  ContinuousDataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::size_t count = 0;
  try {
    if (!std::getline(in, line)) fail(ErrorKind::kIo, path.string() + ": empty file");
    ++lineno;
    const auto head = nlohmann::json::parse(line);
    ds.metadata = head.at("metadata");
    ds.state_dim = head.at("state_dim").get<std::size_t>();
    ds.action_dim = head.at("action_dim").get<std::size_t>();
    count = head.at("count").get<std::size_t>();
    ds.state_mean = head.at("state_mean").get<std::vector<double>>();
    ds.state_std = head.at("state_std").get<std::vector<double>>();
    ds.transitions.reserve(count);
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      ds.transitions.push_back({j.at("s").get<std::vector<double>>(),
                                j.at("a").get<std::vector<double>>(), j.at("r").get<double>(),
                                j.at("s2").get<std::vector<double>>(), j.at("done").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (ds.transitions.size() != count) {
    fail(ErrorKind::kIo, path.string() + ": header count does not match transitions");
  }
  ds.validate();
  return ds;
}

}  // namespace scas::env
