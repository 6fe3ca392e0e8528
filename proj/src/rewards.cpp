#include "t2m/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace t2m::rewards {

namespace {

using scene::Direction;
using scene::Instruction;
using scene::SceneSpec;
using scene::Task;

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

// Per-slot channel layout: 0..2 position/depth, 3..8 orientation pairs, 9 scale.
double slot_l1(const scene::Latent& a, const scene::Latent& b, int slot, int ch_begin,
               int ch_end) {
  double l1 = 0.0;
  int base = slot * scene::kChannelsPerObject;
  for (int ch = ch_begin; ch < ch_end; ++ch) l1 += std::abs(a[base + ch] - b[base + ch]);
  return l1;
}

// Mean absolute difference over every encoded channel outside the target slot.
double consistency_l1(const scene::Latent& a, const scene::Latent& b, int target) {
  double l1 = 0.0;
  int count = 0;
  for (int slot = 0; slot < scene::kMaxObjects; ++slot) {
    if (slot == target) continue;
    l1 += slot_l1(a, b, slot, 0, scene::kChannelsPerObject);
    count += scene::kChannelsPerObject;
  }
  int bg_base = scene::kMaxObjects * scene::kChannelsPerObject;
  for (int ch = 0; ch < scene::kBackgroundDim; ++ch) {
    l1 += std::abs(a[bg_base + ch] - b[bg_base + ch]);
    ++count;
  }
  return l1 / count;
}

void finalize(RewardBreakdown* b, const RewardConfig& cfg) {
  b->identity_penalty_raw = b->identity_penalty;
  b->identity_penalty = std::min(1.0, b->identity_penalty);
  b->consistency_penalty = std::min(1.0, b->consistency_penalty);
  b->total = b->task_score - cfg.lambda_id * b->identity_penalty -
             cfg.lambda_bg * b->consistency_penalty;
}

}  // namespace

RewardBreakdown translation_reward(const SceneSpec& ref, const SceneSpec& edited,
                                   const Instruction& instr, const RewardConfig& cfg) {
  if (instr.task != Task::Translate) {
    throw std::invalid_argument("translation_reward: task mismatch");
  }
  RewardBreakdown b;
  const auto& r = ref.objects[instr.target];
  const auto& e = edited.objects[instr.target];
  double du = e.u - r.u, dv = e.v - r.v, dd = e.depth - r.depth;
  switch (instr.direction) {
    case Direction::Left: b.along = -du; b.orth = std::abs(dv); break;
    case Direction::Right: b.along = du; b.orth = std::abs(dv); break;
    case Direction::Up: b.along = -dv; b.orth = std::abs(du); break;
    case Direction::Down: b.along = dv; b.orth = std::abs(du); break;
    case Direction::Forward: b.along = -dd; b.orth = 0.0; break;
    case Direction::Backward: b.along = dd; b.orth = 0.0; break;
  }
  bool depth_dir =
      instr.direction == Direction::Forward || instr.direction == Direction::Backward;
  b.displacement = depth_dir ? std::abs(dd) : std::sqrt(du * du + dv * dv);
  b.task_score = clamp01(clamp01(b.along / cfg.canonical_shift) -
                         0.5 * clamp01(b.orth / cfg.canonical_shift));

  auto enc_ref = scene::encode_scene(ref);
  auto enc_edit = scene::encode_scene(edited);
  b.identity_penalty = slot_l1(enc_ref, enc_edit, instr.target, 3, 10);
  b.consistency_penalty = consistency_l1(enc_ref, enc_edit, instr.target);

  b.movement_ok = b.along > cfg.move_threshold && b.along > b.orth;
  b.identity_ok = b.identity_penalty < cfg.identity_tol;
  b.preservation_ok = b.consistency_penalty <= cfg.background_tol;
  b.success = b.movement_ok && b.identity_ok && b.preservation_ok && b.no_duplication_ok;
  finalize(&b, cfg);
  return b;
}

RewardBreakdown rotation_reward(const SceneSpec& ref, const SceneSpec& edited,
                                const Instruction& instr, const RewardConfig& cfg) {
  if (instr.task != Task::Rotate) {
    throw std::invalid_argument("rotation_reward: task mismatch");
  }
  RewardBreakdown b;
  int axis = static_cast<int>(instr.axis);
  double target_delta =
      instr.rot_dir == scene::RotDir::CounterClockwise ? instr.angle_deg : -instr.angle_deg;
  double achieved = scene::wrap_angle(edited.objects[instr.target].orientation[axis] -
                                      ref.objects[instr.target].orientation[axis]);
  b.angle_delta_deg = achieved;
  double err_deg = std::abs(scene::wrap_angle(achieved - target_delta));
  b.rotation_err = err_deg / 180.0;
  b.task_score = 1.0 - b.rotation_err;

  auto enc_ref = scene::encode_scene(ref);
  auto enc_edit = scene::encode_scene(edited);
  b.identity_penalty = slot_l1(enc_ref, enc_edit, instr.target, 0, 3) +
                       slot_l1(enc_ref, enc_edit, instr.target, 9, 10);
  b.consistency_penalty = consistency_l1(enc_ref, enc_edit, instr.target);

  b.angle_ok = err_deg <= cfg.rotation_tol_deg;
  b.preservation_ok = b.consistency_penalty <= cfg.background_tol;
  b.success = b.angle_ok && b.preservation_ok;
  finalize(&b, cfg);
  return b;
}

RewardBreakdown resize_reward(const SceneSpec& ref, const SceneSpec& edited,
                              const Instruction& instr, const RewardConfig& cfg) {
  if (instr.task != Task::Resize) {
    throw std::invalid_argument("resize_reward: task mismatch");
  }
  if (ref.objects[instr.target].scale <= 0.0) {
    throw std::invalid_argument("resize_reward: reference scale must be positive");
  }
  RewardBreakdown b;
  b.achieved_ratio = edited.objects[instr.target].scale / ref.objects[instr.target].scale;
  b.abs_ratio_err = std::abs(b.achieved_ratio - instr.ratio);
  b.ratio_err = b.abs_ratio_err / instr.ratio;
  b.task_score = 1.0 - std::min(b.ratio_err, 1.0);

  auto enc_ref = scene::encode_scene(ref);
  auto enc_edit = scene::encode_scene(edited);
  b.identity_penalty = slot_l1(enc_ref, enc_edit, instr.target, 0, 9);
  b.consistency_penalty = consistency_l1(enc_ref, enc_edit, instr.target);

  b.ratio_ok = b.ratio_err <= cfg.resize_tol;
  b.preservation_ok = b.consistency_penalty <= cfg.background_tol;
  b.success = b.ratio_ok && b.preservation_ok;
  finalize(&b, cfg);
  return b;
}

RewardBreakdown compute_reward(const SceneSpec& ref, const SceneSpec& edited,
                               const Instruction& instr, const RewardConfig& cfg) {
  switch (instr.task) {
    case Task::Translate: return translation_reward(ref, edited, instr, cfg);
    case Task::Rotate: return rotation_reward(ref, edited, instr, cfg);
    case Task::Resize: return resize_reward(ref, edited, instr, cfg);
  }
  throw std::invalid_argument("compute_reward: unknown task");
}

nlohmann::json breakdown_to_json(const RewardBreakdown& b) {
  return {{"task_score", b.task_score},
          {"identity_penalty", b.identity_penalty},
          {"consistency_penalty", b.consistency_penalty},
          {"total", b.total},
          {"success", b.success},
          {"criteria",
           {{"movement", b.movement_ok},
            {"identity", b.identity_ok},
            {"preservation", b.preservation_ok},
            {"angle", b.angle_ok},
            {"ratio", b.ratio_ok},
            {"no_duplication", b.no_duplication_ok}}},
          {"diagnostics",
           {{"along", b.along},
            {"orth", b.orth},
            {"displacement", b.displacement},
            {"angle_delta_deg", b.angle_delta_deg},
            {"rotation_err", b.rotation_err},
            {"achieved_ratio", b.achieved_ratio},
            {"ratio_err", b.ratio_err},
            {"abs_ratio_err", b.abs_ratio_err},
            {"identity_penalty_raw", b.identity_penalty_raw}}}};
}

}  // namespace t2m::rewards
