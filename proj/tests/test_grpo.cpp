#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "t2m/grpo.hpp"

using namespace t2m;
using namespace t2m::grpo;

namespace {

flow::FlowPolicy small_policy(uint64_t seed, int steps = 10) {
  nn::Architecture arch;
  arch.input = scene::kLatentDim + flow::kTimeFeatures + scene::kConditionDim;
  arch.hidden = {8};
  arch.output = scene::kLatentDim;
  flow::FlowPolicy policy;
  policy.params = nn::init_params(seed, arch);
  policy.steps = steps;
  return policy;
}

ConditionItem make_item(uint64_t seed, scene::Task task) {
  ConditionItem item;
  item.seed = seed;
  item.scene = scene::sample_scene(seed);
  item.instruction = scene::sample_instruction(mix_seed(seed, 1), item.scene, task);
  return item;
}

bool params_equal(const nn::MlpParams& a, const nn::MlpParams& b) {
  for (size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weights != b.layers[l].weights || a.layers[l].bias != b.layers[l].bias) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("advantages: two-point group maps to -1/+1") {
  std::vector<double> adv = compute_advantages({0.0, 1.0, 0.0, 1.0});
  CHECK(adv[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(adv[1] == doctest::Approx(1.0).epsilon(1e-6));
  double sum = 0.0;
  for (double a : adv) sum += a;
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("advantages: invariant to affine reward transforms") {
  std::vector<double> r = {0.1, -0.4, 0.7, 0.3, 0.0};
  std::vector<double> r2(r.size());
  for (size_t i = 0; i < r.size(); ++i) r2[i] = 3.0 * r[i] - 5.0;
  std::vector<double> a1 = compute_advantages(r);
  std::vector<double> a2 = compute_advantages(r2);
  for (size_t i = 0; i < r.size(); ++i) CHECK(a1[i] == doctest::Approx(a2[i]).epsilon(1e-6));

  // degenerate group: identical rewards give zero advantages, no division blowup
  std::vector<double> flat = compute_advantages({0.5, 0.5, 0.5});
  for (double a : flat) CHECK(a == 0.0);

  CHECK_THROWS(compute_advantages({1.0}));
}

TEST_CASE("generate_group shares initial noise and is deterministic") {
  flow::FlowPolicy policy = small_policy(1);
  ConditionItem item = make_item(10, scene::Task::Translate);
  SamplerConfig sampler;
  RolloutGroup a = generate_group(policy, item, 4, sampler, 99);
  RolloutGroup b = generate_group(policy, item, 4, sampler, 99);
  CHECK(a.rewards == b.rewards);
  CHECK(a.trajectories[0].final_latent == b.trajectories[0].final_latent);
  for (const flow::Trajectory& t : a.trajectories) {
    CHECK(t.initial_noise == a.initial_noise);
    CHECK(static_cast<int>(t.transitions.size()) == sampler.steps);
  }
  // distinct per-rollout noise: trajectories diverge after step 1
  CHECK(a.trajectories[0].transitions[0].next != a.trajectories[1].transitions[0].next);

  RolloutGroup c = generate_group(policy, item, 4, sampler, 100);
  CHECK(a.rewards != c.rewards);

  CHECK_THROWS(generate_group(policy, item, 1, sampler, 0));
}

TEST_CASE("objective is zero at the sampling snapshot") {
  flow::FlowPolicy policy = small_policy(2);
  ConditionItem item = make_item(11, scene::Task::Rotate);
  SamplerConfig sampler;
  RolloutGroup group = generate_group(policy, item, 4, sampler, 7);
  double loss = grpo_objective(policy.params, group, sampler, 2e-4);
  // every ratio is exactly 1, so the loss reduces to -mean(advantages) = 0
  CHECK(std::abs(loss) < 1e-9);
}

TEST_CASE("objective gradient matches finite differences") {
  flow::FlowPolicy old_policy = small_policy(3);
  ConditionItem item = make_item(12, scene::Task::Resize);
  SamplerConfig sampler;
  RolloutGroup group = generate_group(old_policy, item, 4, sampler, 13);

  // evaluate away from the snapshot so ratios differ from 1
  nn::MlpParams params = old_policy.params;
  RngStream jitter(5);
  for (nn::Layer& l : params.layers) {
    for (double& w : l.weights) w += 1e-3 * jitter.normal();
  }

  for (double clip_eps : {0.5, 1e-6}) {
    nn::GradientBuffer grads = nn::GradientBuffer::zeros_like(params);
    grpo_objective(params, group, sampler, clip_eps, &grads);

    const double h = 1e-6;
    RngStream pick(17);
    int checked = 0;
    double max_err = 0.0;
    for (size_t l = 0; l < params.layers.size(); ++l) {
      for (size_t i = 0; i < params.layers[l].weights.size(); ++i) {
        if (pick.uniform() > 0.03) continue;
        double orig = params.layers[l].weights[i];
        params.layers[l].weights[i] = orig + h;
        double lp = grpo_objective(params, group, sampler, clip_eps);
        params.layers[l].weights[i] = orig - h;
        double lm = grpo_objective(params, group, sampler, clip_eps);
        params.layers[l].weights[i] = orig;
        double fd = (lp - lm) / (2.0 * h);
        double g = grads.layers[l].weights[i];
        double denom = std::max({std::abs(fd), std::abs(g), 1e-5});
        max_err = std::max(max_err, std::abs(fd - g) / denom);
        ++checked;
      }
    }
    CHECK(checked > 20);
    CHECK(max_err < 1e-3);
  }
}

TEST_CASE("tight clipping freezes the loss away from the snapshot") {
  flow::FlowPolicy old_policy = small_policy(4);
  ConditionItem item = make_item(14, scene::Task::Translate);
  SamplerConfig sampler;
  RolloutGroup group = generate_group(old_policy, item, 4, sampler, 21);

  nn::MlpParams params = old_policy.params;
  RngStream jitter(6);
  for (nn::Layer& l : params.layers) {
    for (double& w : l.weights) w += 1e-2 * jitter.normal();
  }

  // independent oracle: rebuild the loss from raw transition log-probs
  const double clip_eps = 1e-5;
  const double dt = 1.0 / sampler.steps;
  const double cap = flow::sigma_time_cap(sampler.steps);
  double oracle = 0.0;
  int terms = 0;
  for (size_t g = 0; g < group.trajectories.size(); ++g) {
    const flow::Trajectory& traj = group.trajectories[g];
    for (size_t s = 0; s < traj.transitions.size(); ++s) {
      const flow::StepTransition& tr = traj.transitions[s];
      const flow::Vec& x_from = s == 0 ? traj.initial_noise : traj.transitions[s - 1].next;
      double lp = flow::transition_logprob(params, x_from, tr.next, tr.t, dt,
                                           sampler.noise_level, group.condition, cap);
      double ratio = std::exp(lp - tr.log_prob);
      double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      oracle -= std::min(ratio * group.advantages[g], clipped * group.advantages[g]);
      ++terms;
    }
  }
  oracle /= terms;
  double loss = grpo_objective(params, group, sampler, clip_eps);
  CHECK(loss == doctest::Approx(oracle).epsilon(1e-10));
  // the clipped bound actually binds somewhere at this distance from the snapshot
  double loose = grpo_objective(params, group, sampler, 10.0);
  CHECK(loss != doctest::Approx(loose).epsilon(1e-12));
}

TEST_CASE("sliding window restricts contributing steps") {
  flow::FlowPolicy policy = small_policy(5);
  ConditionItem item = make_item(15, scene::Task::Rotate);
  SamplerConfig sampler;
  sampler.mode = SamplerConfig::Mode::SlidingWindow;
  sampler.window = 4;
  sampler.window_start = 3;
  RolloutGroup group = generate_group(policy, item, 4, sampler, 31);
  long nfe = 0;
  grpo_objective(policy.params, group, sampler, 2e-4, nullptr, &nfe);
  CHECK(nfe == 4 * 4);  // G * window

  // a window past the grid contributes nothing
  sampler.window_start = 10;
  CHECK_THROWS(grpo_objective(policy.params, group, sampler, 2e-4));
}

TEST_CASE("noise level zero degenerates the group to identical rollouts") {
  flow::FlowPolicy policy = small_policy(6);
  ConditionItem item = make_item(16, scene::Task::Resize);
  SamplerConfig sampler;
  sampler.noise_level = 0.0;
  RolloutGroup group = generate_group(policy, item, 4, sampler, 41);
  for (int g = 1; g < 4; ++g) {
    CHECK(group.trajectories[g].final_latent == group.trajectories[0].final_latent);
  }
  for (double a : group.advantages) CHECK(a == 0.0);
  for (const flow::Trajectory& t : group.trajectories) {
    for (const flow::StepTransition& tr : t.transitions) CHECK_FALSE(tr.perturbed);
  }
  CHECK_THROWS(grpo_objective(policy.params, group, sampler, 2e-4));
}

TEST_CASE("train_iteration is deterministic and advances the window") {
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.iterations = 4;
  SamplerConfig sampler;
  sampler.mode = SamplerConfig::Mode::SlidingWindow;
  sampler.window = 4;
  sampler.shift_period = 2;

  std::vector<ConditionItem> batch = {make_item(20, scene::Task::Translate),
                                      make_item(21, scene::Task::Rotate)};

  TrainState a = make_train_state(small_policy(7), sampler, cfg, {}, 123);
  TrainState b = make_train_state(small_policy(7), sampler, cfg, {}, 123);
  for (int it = 0; it < 4; ++it) {
    IterationMetrics ma = train_iteration(a, batch);
    IterationMetrics mb = train_iteration(b, batch);
    CHECK(ma.mean_reward == mb.mean_reward);
    CHECK(ma.nfe_old == mb.nfe_old);
    CHECK_FALSE(ma.skipped);
  }
  CHECK(params_equal(a.policy.params, b.policy.params));
  CHECK(a.sampler.window_start == 2);  // shifted at iterations 2 and 4
  CHECK(a.iteration == 4);
  CHECK(a.log.size() == 4);

  // the window holds at the last valid position
  TrainState c = make_train_state(small_policy(7), sampler, cfg, {}, 123);
  c.sampler.window_start = 6;
  train_iteration(c, batch);
  train_iteration(c, batch);
  CHECK(c.sampler.window_start == 6);

  // per-rollout NFE bookkeeping: B * G rollouts of T evaluations each
  CHECK(a.log[0].nfe_old == 2 * 4 * 10);
  CHECK(a.log[0].nfe_train == 2 * 4 * 4);  // window of 4 optimized steps
}

TEST_CASE("train_iteration with zero noise leaves parameters unchanged") {
  TrainConfig cfg;
  cfg.group_size = 4;
  SamplerConfig sampler;
  sampler.noise_level = 0.0;
  std::vector<ConditionItem> batch = {make_item(22, scene::Task::Resize)};
  TrainState state = make_train_state(small_policy(8), sampler, cfg, {}, 5);
  nn::MlpParams before = state.policy.params;
  IterationMetrics m = train_iteration(state, batch);
  CHECK(params_equal(state.policy.params, before));
  CHECK(m.nfe_train == 0);
  CHECK_FALSE(m.skipped);
}

TEST_CASE("off-policy step eval: zero prefix has zero variance") {
  flow::FlowPolicy policy = small_policy(9);
  std::vector<ConditionItem> probes = {make_item(30, scene::Task::Translate),
                                       make_item(31, scene::Task::Translate)};
  StepImportanceProfile p = off_policy_step_eval(policy, probes, 6, 1.0, 77, scene_reward());
  REQUIRE(static_cast<int>(p.variances.size()) == policy.steps + 1);
  CHECK(p.variances[0] == 0.0);
  bool any_positive = false;
  for (int k = 1; k <= policy.steps; ++k) any_positive = any_positive || p.variances[k] > 0.0;
  CHECK(any_positive);
  CHECK(p.selected_exit_step >= 1);
  CHECK(p.selected_exit_step <= policy.steps);

  StepImportanceProfile q = off_policy_step_eval(policy, probes, 6, 1.0, 77, scene_reward());
  CHECK(p.variances == q.variances);
  CHECK(p.selected_exit_step == q.selected_exit_step);
}

TEST_CASE("off-policy step eval validates the probe count") {
  flow::FlowPolicy policy = small_policy(10);
  std::vector<ConditionItem> one = {make_item(32, scene::Task::Rotate)};
  CHECK_THROWS(off_policy_step_eval(policy, one, 4, 1.0, 1, scene_reward()));
  std::vector<ConditionItem> five;
  for (int i = 0; i < 5; ++i) five.push_back(make_item(40 + i, scene::Task::Rotate));
  CHECK_THROWS(off_policy_step_eval(policy, five, 4, 1.0, 1, scene_reward()));
  // the range check can be lifted for diagnostics
  StepImportanceProfile p = off_policy_step_eval(policy, one, 4, 1.0, 1, scene_reward(), false);
  CHECK(p.probe_count == 1);
}

TEST_CASE("off-policy step eval without noise yields an unusable profile") {
  flow::FlowPolicy policy = small_policy(11);
  std::vector<ConditionItem> probes = {make_item(50, scene::Task::Resize),
                                       make_item(51, scene::Task::Resize)};
  StepImportanceProfile p = off_policy_step_eval(policy, probes, 4, 0.0, 3, scene_reward());
  for (double v : p.variances) CHECK(v == 0.0);
  CHECK(p.selected_exit_step == 0);
  CHECK_THROWS(select_exit_step(p));
}

TEST_CASE("exit step selection breaks ties toward the larger step") {
  StepImportanceProfile p;
  p.steps = 10;
  p.variances = {0.0, 0.1, 0.3, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.0, 0.0};
  p.means.assign(11, 0.0);
  CHECK(select_exit_step(p) == 3);

  StepImportanceProfile inc;
  inc.steps = 10;
  inc.variances.assign(11, 0.0);
  for (int k = 1; k <= 10; ++k) inc.variances[k] = 0.01 * k;
  inc.means.assign(11, 0.0);
  CHECK(select_exit_step(inc) == 10);
}

TEST_CASE("nfe accounting per strategy") {
  SamplerConfig full;
  NfeCosts f = nfe_accounting(full, 1);
  CHECK(f.nfe_old == 10);
  CHECK(f.nfe_train == 10);

  SamplerConfig win;
  win.mode = SamplerConfig::Mode::SlidingWindow;
  win.window = 4;
  NfeCosts w = nfe_accounting(win, 1);
  CHECK(w.nfe_old == 10);
  CHECK(w.nfe_train == 4);

  SamplerConfig act;
  act.mode = SamplerConfig::Mode::Active;
  act.exit_step = 4;
  NfeCosts a = nfe_accounting(act, 1);
  CHECK(a.nfe_old == 5);  // 4 perturbed steps + the exit shortcut
  CHECK(a.nfe_train == 4);

  NfeCosts a2 = nfe_accounting(act, 3);
  CHECK(a2.nfe_train == 12);

  // accounting matches the measured rollout cost
  flow::FlowPolicy policy = small_policy(12);
  ConditionItem item = make_item(60, scene::Task::Translate);
  for (const SamplerConfig& cfg : {full, win, act}) {
    RolloutGroup g = generate_group(policy, item, 2, cfg, 9);
    for (const flow::Trajectory& t : g.trajectories) {
      CHECK(t.nfe_sample == nfe_accounting(cfg, 1).nfe_old);
    }
  }
}

TEST_CASE("profile json round trip") {
  flow::FlowPolicy policy = small_policy(13);
  std::vector<ConditionItem> probes = {make_item(70, scene::Task::Rotate),
                                       make_item(71, scene::Task::Rotate)};
  StepImportanceProfile p = off_policy_step_eval(policy, probes, 4, 1.0, 2, scene_reward());
  p.task = "rotate";
  StepImportanceProfile q = profile_from_json(profile_to_json(p));
  CHECK(q.task == p.task);
  CHECK(q.means == p.means);
  CHECK(q.variances == p.variances);
  CHECK(q.selected_exit_step == p.selected_exit_step);
  CHECK(q.steps == p.steps);
  CHECK(q.group_size == p.group_size);
}
