#ifndef T2M_GRPO_HPP_
#define T2M_GRPO_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2m/flow.hpp"
#include "t2m/rewards.hpp"

namespace t2m::grpo {

using flow::FlowPolicy;
using flow::SamplerConfig;
using flow::Trajectory;
using flow::Vec;

struct ConditionItem {
  uint64_t seed = 0;
  scene::SceneSpec scene;
  scene::Instruction instruction;
};

struct RolloutGroup {
  Vec condition;
  Vec initial_noise;
  std::vector<Trajectory> trajectories;
  std::vector<rewards::RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
  scene::SceneSpec reference;
  scene::Instruction instruction;
};

// One shared initial noise draw per group; each trajectory gets its own
// per-step noise stream derived from the group seed.
RolloutGroup generate_group(const FlowPolicy& old_policy, const ConditionItem& item, int group_size,
                            const SamplerConfig& sampler, uint64_t seed,
                            const rewards::RewardConfig& reward_cfg = {});

// Group-relative normalization: (r - mean) / (std_pop + 1e-8).
std::vector<double> compute_advantages(const std::vector<double>& rewards);

// Clipped surrogate of the grouped trajectories. Only transitions that are
// perturbed and inside the sampler's optimized set contribute. Gradients
// (exact, via reverse mode) accumulate into *grads when non-null; *nfe counts
// the velocity re-evaluations.
double grpo_objective(const nn::MlpParams& params, const RolloutGroup& group,
                      const SamplerConfig& sampler, double clip_eps,
                      nn::GradientBuffer* grads = nullptr, long* nfe = nullptr);

struct TrainConfig {
  int group_size = 16;       // G
  double clip_eps = 2e-4;
  int inner_epochs = 1;      // E
  int iterations = 300;
  int batch_conditions = 4;
  double learning_rate = 1e-4;
  double grad_clip_norm = 1.0;
};

struct IterationMetrics {
  int iteration = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double accuracy = 0.0;
  double trans_dist_or_err = 0.0;
  long nfe_old = 0;
  long nfe_train = 0;
  double wall_ms = 0.0;
  bool skipped = false;  // non-finite loss
};

struct TrainState {
  FlowPolicy policy;
  nn::AdamState adam;
  SamplerConfig sampler;
  TrainConfig config;
  rewards::RewardConfig reward_cfg;
  uint64_t root_seed = 0;
  int iteration = 0;
  std::vector<IterationMetrics> log;
};

TrainState make_train_state(FlowPolicy policy, SamplerConfig sampler, TrainConfig config,
                            rewards::RewardConfig reward_cfg, uint64_t root_seed);

// One sampling + optimization iteration over a batch of conditions.
IterationMetrics train_iteration(TrainState& state, std::span<const ConditionItem> batch);

struct StepImportanceProfile {
  std::string task;
  int probe_count = 0;
  int steps = 0;        // T
  double noise_level = 0.0;
  int group_size = 0;
  std::vector<double> means;      // index k = 0..T
  std::vector<double> variances;  // index k = 0..T
  int selected_exit_step = 0;
};

using TrajectoryReward = std::function<double(const ConditionItem&, const Trajectory&)>;

// Reward of the decoded scene against the oracle criteria; the default
// reward used for calibration and training.
TrajectoryReward scene_reward(const rewards::RewardConfig& cfg = {});

// For each prefix size k = 0..T, perturb steps 1..k and integrate the rest
// deterministically, recording the reward variance across group_size rollouts
// per probe (averaged over probes).
StepImportanceProfile off_policy_step_eval(const FlowPolicy& policy,
                                           std::span<const ConditionItem> probes, int group_size,
                                           double noise_level, uint64_t seed,
                                           const TrajectoryReward& reward,
                                           bool enforce_probe_range = true);

// Largest k in 1..T attaining the maximum averaged variance.
int select_exit_step(const StepImportanceProfile& profile);

struct NfeCosts {
  long nfe_old = 0;    // sampling evaluations
  long nfe_train = 0;  // optimization evaluations
};

// Per-rollout counts; multiply by G for group totals.
NfeCosts nfe_accounting(const SamplerConfig& sampler, int inner_epochs);

nlohmann::json profile_to_json(const StepImportanceProfile& profile);
StepImportanceProfile profile_from_json(const nlohmann::json& j);

nlohmann::json trajectory_to_json(const Trajectory& traj);

}  // namespace t2m::grpo

#endif  // T2M_GRPO_HPP_
