#pragma once
// Point-mass navigation in a rectangle with an optional excluded "hole"
// region, plus behavior policies, dataset collection and the episode runner
// used for OOD-start and action-perturbation evaluation.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scas/rng.hpp"

namespace scas::env {

using Vec2 = std::array<double, 2>;

struct Rect {
  Vec2 low{0.0, 0.0};
  Vec2 high{0.0, 0.0};

  // Closed rectangle.
  bool contains(std::span<const double> p) const {
    return p[0] >= low[0] && p[0] <= high[0] && p[1] >= low[1] && p[1] <= high[1];
  }
  double area() const { return (high[0] - low[0]) * (high[1] - low[1]); }
};

struct PointNavConfig {
  Rect arena{{0.0, 0.0}, {3.0, 5.0}};
  Vec2 goal{2.0, 3.0};
  double goal_radius = 0.2;
  std::size_t max_steps = 120;
  double action_scale = 0.15;
  double dynamics_noise_std = 0.0;
  std::optional<Rect> ood_hole = Rect{{0.0, 0.0}, {1.5, 2.5}};

  void validate() const;
  double diagonal() const;
};

inline constexpr std::size_t kStateDim = 2;
inline constexpr std::size_t kActionDim = 2;
inline constexpr double kGoalBonus = 10.0;

enum class ResetMode { kInDist, kOodHole };

Vec2 env_reset(const PointNavConfig& cfg, ResetMode mode, Rng& rng);

struct StepResult {
  Vec2 next;
  double reward = 0.0;
  bool done = false;  // reached the goal; the time limit is the caller's job
};

// Actions outside [-1, 1] are clipped.
StepResult env_step(const PointNavConfig& cfg, const Vec2& state, const Vec2& action, Rng& rng);

enum class BehaviorKind { kScriptedPd, kRandom };

struct Behavior {
  BehaviorKind kind = BehaviorKind::kScriptedPd;
  double noise_std = 0.0;  // Gaussian action noise of the scripted controller
};

// Noiseless scripted controller: full speed toward the goal, proportional
// inside one step of it so the last move lands on the goal.
Vec2 scripted_action(const PointNavConfig& cfg, const Vec2& state);

Vec2 behavior_action(const PointNavConfig& cfg, const Behavior& behavior, const Vec2& state,
                     Rng& rng);

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s2;
  bool done = false;
};

struct ContinuousDataset {
  std::size_t state_dim = kStateDim;
  std::size_t action_dim = kActionDim;
  std::vector<Transition> transitions;
  std::vector<double> state_mean;
  std::vector<double> state_std;
  nlohmann::json metadata = nlohmann::json::object();

  // Recomputes state_mean/state_std from the s field of every transition.
  void compute_statistics();
  void validate() const;
  double max_abs_reward() const;
};

inline constexpr double kStdFloor = 1e-3;

struct CollectStats {
  std::size_t episodes = 0;
  std::size_t generated = 0;
  std::size_t dropped_in_hole = 0;
};

// Rolls episodes from IN_DIST resets until n_transitions are retained. With
// exclude_hole, transitions whose s or s2 lies in the hole are dropped.
ContinuousDataset collect_dataset(const PointNavConfig& cfg, const Behavior& behavior,
                                  std::size_t n_transitions, bool exclude_hole, Rng& rng,
                                  CollectStats* stats = nullptr);

// Concatenates datasets and recomputes statistics.
ContinuousDataset merge_datasets(const std::vector<ContinuousDataset>& parts);

struct PerturbProtocol {
  double noise_magnitude = 0.5;
  std::size_t perturb_steps = 0;
};

struct EpisodeTrace {
  std::vector<Vec2> states;            // length + 1 entries
  std::vector<Vec2> policy_actions;
  std::vector<Vec2> executed_actions;
  std::vector<double> rewards;
  double ret = 0.0;
  std::size_t length = 0;
  bool reached_goal = false;
  // Steps taken before the first state outside the hole (0 for starts
  // outside it). When the episode never leaves, this is length and
  // exited_hole is false.
  std::size_t steps_out_of_ood = 0;
  bool exited_hole = true;
  std::size_t perturb_steps = 0;
};

using PolicyFn = std::function<Vec2(const Vec2&)>;

EpisodeTrace run_episode(const PointNavConfig& cfg, const PolicyFn& policy,
                         const std::optional<PerturbProtocol>& protocol, ResetMode mode,
                         Rng& rng);

void to_json(nlohmann::json& j, const PointNavConfig& cfg);
// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, PointNavConfig& cfg);

// JSON-Lines: a metadata line, then one {s, a, r, s2, done} object per line.
void save_dataset(const std::filesystem::path& path, const ContinuousDataset& data);
ContinuousDataset load_dataset(const std::filesystem::path& path);

const char* behavior_name(BehaviorKind kind);
BehaviorKind behavior_from_name(const std::string& name);

}  // namespace scas::env
