#include "t2m/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace t2m::grpo {

RolloutGroup generate_group(const FlowPolicy& old_policy, const ConditionItem& item, int group_size,
                            const SamplerConfig& sampler, uint64_t seed,
                            const rewards::RewardConfig& reward_cfg) {
  if (group_size < 2) throw std::invalid_argument("generate_group: G must be >= 2");
  RolloutGroup group;
  group.reference = item.scene;
  group.instruction = item.instruction;
  group.condition = scene::encode_condition(item.scene, item.instruction);

  RngStream init_rng(mix_seed(seed, 0));
  group.initial_noise.resize(old_policy.params.arch.output);
  for (double& z : group.initial_noise) z = init_rng.normal();

  flow::RolloutPlan plan = flow::make_plan(sampler);
  group.trajectories.reserve(group_size);
  for (int g = 0; g < group_size; ++g) {
    RngStream rng(mix_seed(seed, g + 1));
    group.trajectories.push_back(flow::rollout(old_policy, group.condition, item.scene, plan, rng,
                                               &group.initial_noise));
    const Trajectory& traj = group.trajectories.back();
    group.breakdowns.push_back(
        rewards::compute_reward(item.scene, traj.decoded, item.instruction, reward_cfg));
    group.rewards.push_back(group.breakdowns.back().total);
  }
  group.advantages = compute_advantages(group.rewards);
  return group;
}

std::vector<double> compute_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: need G >= 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= rewards.size();
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= rewards.size();  // population variance
  double denom = std::sqrt(var) + 1e-8;
  std::vector<double> adv(rewards.size());
  for (size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

double grpo_objective(const nn::MlpParams& params, const RolloutGroup& group,
                      const SamplerConfig& sampler, double clip_eps, nn::GradientBuffer* grads,
                      long* nfe) {
  const int G = static_cast<int>(group.trajectories.size());
  if (G < 2 || group.advantages.size() != static_cast<size_t>(G)) {
    throw std::invalid_argument("grpo_objective: group incomplete");
  }
  int contributing = 0;
  for (const flow::StepTransition& tr : group.trajectories.front().transitions) {
    if (tr.perturbed && sampler.step_optimized(tr.index)) ++contributing;
  }
  if (contributing == 0) {
    throw std::invalid_argument("grpo_objective: no contributing steps (check sampler config)");
  }

  const double dt = 1.0 / sampler.steps;
  const double cap = flow::sigma_time_cap(sampler.steps);
  const double inv_norm = 1.0 / (static_cast<double>(G) * contributing);

  nn::GradientBuffer step_grads;
  if (grads) step_grads = nn::GradientBuffer::zeros_like(params);

  double loss = 0.0;
  for (int i = 0; i < G; ++i) {
    const Trajectory& traj = group.trajectories[i];
    const double adv = group.advantages[i];
    for (size_t s = 0; s < traj.transitions.size(); ++s) {
      const flow::StepTransition& tr = traj.transitions[s];
      if (!tr.perturbed || !sampler.step_optimized(tr.index)) continue;
      const Vec& x_from = s == 0 ? traj.initial_noise : traj.transitions[s - 1].next;
      if (grads) step_grads.scale(0.0);
      double lp = flow::transition_logprob(params, x_from, tr.next, tr.t, dt,
                                           sampler.noise_level, group.condition, cap,
                                           grads ? &step_grads : nullptr, nfe);
      double ratio = std::exp(lp - tr.log_prob);
      double unclipped = ratio * adv;
      double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv;
      loss -= inv_norm * std::min(unclipped, clipped);
      // The clipped branch is constant in theta; only the unclipped branch
      // carries gradient.
      if (grads && unclipped <= clipped) {
        grads->add_scaled(step_grads, -inv_norm * adv * ratio);
      }
    }
  }
  return loss;
}

TrainState make_train_state(FlowPolicy policy, SamplerConfig sampler, TrainConfig config,
                            rewards::RewardConfig reward_cfg, uint64_t root_seed) {
  TrainState state;
  state.adam = nn::AdamState::create(policy.params, config.learning_rate);
  state.policy = std::move(policy);
  state.sampler = sampler;
  state.config = config;
  state.reward_cfg = reward_cfg;
  state.root_seed = root_seed;
  return state;
}

IterationMetrics train_iteration(TrainState& state, std::span<const ConditionItem> batch) {
  auto t_start = std::chrono::steady_clock::now();
  IterationMetrics m;
  m.iteration = state.iteration;

  // Frozen snapshot for this sampling phase.
  FlowPolicy old_policy = state.policy;

  uint64_t iter_seed = mix_seed(state.root_seed, static_cast<uint64_t>(state.iteration));
  std::vector<RolloutGroup> groups;
  groups.reserve(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    groups.push_back(generate_group(old_policy, batch[b], state.config.group_size, state.sampler,
                                    mix_seed(iter_seed, b), state.reward_cfg));
  }

  // Metrics over all rollouts of the iteration.
  double sum_r = 0.0, sum_r2 = 0.0, sum_acc = 0.0, sum_err = 0.0;
  long n = 0;
  for (const RolloutGroup& g : groups) {
    for (size_t i = 0; i < g.rewards.size(); ++i) {
      sum_r += g.rewards[i];
      sum_r2 += g.rewards[i] * g.rewards[i];
      sum_acc += g.breakdowns[i].success ? 1.0 : 0.0;
      switch (g.instruction.task) {
        case scene::Task::Translate: sum_err += g.breakdowns[i].displacement; break;
        case scene::Task::Rotate: sum_err += g.breakdowns[i].rotation_err; break;
        case scene::Task::Resize: sum_err += g.breakdowns[i].ratio_err; break;
      }
      ++n;
    }
    for (const Trajectory& traj : g.trajectories) m.nfe_old += traj.nfe_sample;
  }
  m.mean_reward = sum_r / n;
  m.reward_std = std::sqrt(std::max(0.0, sum_r2 / n - m.mean_reward * m.mean_reward));
  m.accuracy = sum_acc / n;
  m.trans_dist_or_err = sum_err / n;

  if (state.sampler.noise_level > 0.0) {
    double inv_b = 1.0 / static_cast<double>(groups.size());
    for (int e = 0; e < state.config.inner_epochs; ++e) {
      nn::GradientBuffer grads = nn::GradientBuffer::zeros_like(state.policy.params);
      nn::GradientBuffer group_grads = nn::GradientBuffer::zeros_like(state.policy.params);
      double loss = 0.0;
      for (const RolloutGroup& g : groups) {
        group_grads.scale(0.0);
        loss += inv_b * grpo_objective(state.policy.params, g, state.sampler,
                                       state.config.clip_eps, &group_grads, &m.nfe_train);
        grads.add_scaled(group_grads, inv_b);
      }
      if (!std::isfinite(loss) || !grads.finite()) {
        m.skipped = true;
        break;
      }
      nn::clip_global_norm(&grads, state.config.grad_clip_norm);
      if (!nn::adam_step(&state.policy.params, grads, &state.adam)) {
        m.skipped = true;
        break;
      }
    }
  }

  // Sliding window advances front-to-back, holding at the last position.
  state.iteration += 1;
  if (state.sampler.mode == SamplerConfig::Mode::SlidingWindow &&
      state.iteration % state.sampler.shift_period == 0) {
    state.sampler.window_start = std::min(state.sampler.window_start + 1,
                                          state.sampler.steps - state.sampler.window);
  }

  auto t_end = std::chrono::steady_clock::now();
  m.wall_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
  state.log.push_back(m);
  return m;
}

TrajectoryReward scene_reward(const rewards::RewardConfig& cfg) {
  return [cfg](const ConditionItem& item, const Trajectory& traj) {
    return rewards::compute_reward(item.scene, traj.decoded, item.instruction, cfg).total;
  };
}

StepImportanceProfile off_policy_step_eval(const FlowPolicy& policy,
                                           std::span<const ConditionItem> probes, int group_size,
                                           double noise_level, uint64_t seed,
                                           const TrajectoryReward& reward,
                                           bool enforce_probe_range) {
  if (enforce_probe_range && (probes.size() < 2 || probes.size() > 4)) {
    throw std::invalid_argument("off_policy_step_eval: expected 2-4 probe conditions");
  }
  if (probes.empty()) throw std::invalid_argument("off_policy_step_eval: no probes");

  const int T = policy.steps;
  StepImportanceProfile profile;
  profile.probe_count = static_cast<int>(probes.size());
  profile.steps = T;
  profile.noise_level = noise_level;
  profile.group_size = group_size;
  profile.means.assign(T + 1, 0.0);
  profile.variances.assign(T + 1, 0.0);

  for (int k = 0; k <= T; ++k) {
    flow::RolloutPlan plan = flow::prefix_plan(T, k, noise_level);
    double mean_acc = 0.0, var_acc = 0.0;
    for (size_t p = 0; p < probes.size(); ++p) {
      uint64_t probe_seed = mix_seed(mix_seed(seed, k), p);
      Vec condition = scene::encode_condition(probes[p].scene, probes[p].instruction);
      RngStream init_rng(mix_seed(probe_seed, 0));
      Vec init(policy.params.arch.output);
      for (double& z : init) z = init_rng.normal();

      double sum = 0.0, sum2 = 0.0;
      for (int g = 0; g < group_size; ++g) {
        RngStream rng(mix_seed(probe_seed, g + 1));
        Trajectory traj = flow::rollout(policy, condition, probes[p].scene, plan, rng, &init);
        double r = reward(probes[p], traj);
        sum += r;
        sum2 += r * r;
      }
      double mean = sum / group_size;
      mean_acc += mean;
      var_acc += std::max(0.0, sum2 / group_size - mean * mean);
    }
    profile.means[k] = mean_acc / probes.size();
    profile.variances[k] = var_acc / probes.size();
  }

  double max_var = 0.0;
  for (int k = 1; k <= T; ++k) max_var = std::max(max_var, profile.variances[k]);
  profile.selected_exit_step = max_var > 0.0 ? select_exit_step(profile) : 0;
  return profile;
}

int select_exit_step(const StepImportanceProfile& profile) {
  const int T = profile.steps;
  int best = 0;
  double best_var = 0.0;
  for (int k = 1; k <= T; ++k) {
    if (profile.variances[k] >= best_var) {  // ties break toward larger k
      best_var = profile.variances[k];
      best = k;
    }
  }
  if (best_var <= 0.0) {
    throw std::runtime_error("select_exit_step: all-zero variance profile (calibration ran without noise)");
  }
  return best;
}

NfeCosts nfe_accounting(const SamplerConfig& sampler, int inner_epochs) {
  NfeCosts c;
  switch (sampler.mode) {
    case SamplerConfig::Mode::Full:
      c.nfe_old = sampler.steps;
      c.nfe_train = static_cast<long>(sampler.steps) * inner_epochs;
      break;
    case SamplerConfig::Mode::SlidingWindow:
      c.nfe_old = sampler.steps;
      c.nfe_train = static_cast<long>(sampler.window) * inner_epochs;
      break;
    case SamplerConfig::Mode::Active:
      // perturbed prefix + shortcut evaluation; K = T runs the whole grid
      // and needs no shortcut
      c.nfe_old = sampler.exit_step < sampler.steps ? sampler.exit_step + 1 : sampler.steps;
      c.nfe_train = static_cast<long>(sampler.exit_step) * inner_epochs;
      break;
  }
  return c;
}

nlohmann::json profile_to_json(const StepImportanceProfile& profile) {
  return {{"task", profile.task},
          {"probes", profile.probe_count},
          {"T", profile.steps},
          {"a", profile.noise_level},
          {"G", profile.group_size},
          {"means", profile.means},
          {"variances", profile.variances},
          {"selected_K", profile.selected_exit_step}};
}

StepImportanceProfile profile_from_json(const nlohmann::json& j) {
  StepImportanceProfile profile;
  profile.task = j.at("task").get<std::string>();
  profile.probe_count = j.at("probes").get<int>();
  profile.steps = j.at("T").get<int>();
  profile.noise_level = j.at("a").get<double>();
  profile.group_size = j.at("G").get<int>();
  profile.means = j.at("means").get<std::vector<double>>();
  profile.variances = j.at("variances").get<std::vector<double>>();
  profile.selected_exit_step = j.at("selected_K").get<int>();
  return profile;
}

nlohmann::json trajectory_to_json(const Trajectory& traj) {
  nlohmann::json steps = nlohmann::json::array();
  for (const flow::StepTransition& tr : traj.transitions) {
    steps.push_back({{"index", tr.index},
                     {"t", tr.t},
                     {"mean", tr.mean},
                     {"std", tr.std},
                     {"next", tr.next},
                     {"log_prob", tr.log_prob},
                     {"perturbed", tr.perturbed}});
  }
  return {{"initial_noise", traj.initial_noise},
          {"transitions", steps},
          {"shortcut_used", traj.shortcut_used},
          {"final_latent", traj.final_latent},
          {"decoded", scene::scene_to_json(traj.decoded)},
          {"nfe_sample", traj.nfe_sample}};
}

}  // namespace t2m::grpo
