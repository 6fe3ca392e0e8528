#ifndef T2M_REWARDS_HPP_
#define T2M_REWARDS_HPP_

#include "json.hpp"
#include "t2m/scene.hpp"

namespace t2m::rewards {

struct RewardConfig {
  double lambda_id = 0.5;
  double lambda_bg = 0.5;
  double move_threshold = 0.05;    // delta_move
  double identity_tol = 0.1;       // tau_id
  double background_tol = 0.2;     // tau_bg
  double rotation_tol_deg = 20.0;
  double resize_tol = 0.10;
  double canonical_shift = scene::kCanonicalShift;
};

struct RewardBreakdown {
  double task_score = 0.0;           // [0, 1]
  double identity_penalty = 0.0;     // clamped to [0, 1] for the total
  double consistency_penalty = 0.0;  // mean L1 over non-target channels
  double total = 0.0;
  bool success = false;

  // criteria (only the active task's entries are meaningful)
  bool movement_ok = false;
  bool identity_ok = false;
  bool preservation_ok = false;
  bool angle_ok = false;
  bool ratio_ok = false;
  bool no_duplication_ok = true;  // not representable in fixed-slot scenes; always passes

  // diagnostics
  double along = 0.0;
  double orth = 0.0;
  double displacement = 0.0;        // achieved displacement magnitude
  double angle_delta_deg = 0.0;     // achieved signed angle delta
  double rotation_err = 0.0;        // normalized by 180 deg
  double achieved_ratio = 1.0;
  double ratio_err = 0.0;           // normalized by the target ratio
  double abs_ratio_err = 0.0;       // |rho - ratio|, unnormalized
  double identity_penalty_raw = 0.0;
};

RewardBreakdown translation_reward(const scene::SceneSpec& ref, const scene::SceneSpec& edited,
                                   const scene::Instruction& instr, const RewardConfig& cfg = {});
RewardBreakdown rotation_reward(const scene::SceneSpec& ref, const scene::SceneSpec& edited,
                                const scene::Instruction& instr, const RewardConfig& cfg = {});
RewardBreakdown resize_reward(const scene::SceneSpec& ref, const scene::SceneSpec& edited,
                              const scene::Instruction& instr, const RewardConfig& cfg = {});
RewardBreakdown compute_reward(const scene::SceneSpec& ref, const scene::SceneSpec& edited,
                               const scene::Instruction& instr, const RewardConfig& cfg = {});

nlohmann::json breakdown_to_json(const RewardBreakdown& b);

}  // namespace t2m::rewards

#endif  // T2M_REWARDS_HPP_
