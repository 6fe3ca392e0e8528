#include "t2m/eval.hpp"

#include <chrono>
#include <cmath>

namespace t2m::eval {

std::vector<ConditionItem> build_test_set(scene::Task task, int n, uint64_t seed) {
  std::vector<ConditionItem> items;
  items.reserve(n);
  for (int i = 0; i < n; ++i) {
    ConditionItem item;
    item.seed = ns_seed("test", seed, static_cast<uint64_t>(i));
    item.scene = scene::sample_scene(item.seed);
    item.instruction = scene::sample_instruction(mix_seed(item.seed, 1), item.scene, task);
    items.push_back(std::move(item));
  }
  return items;
}

MetricsReport evaluate_editor(const Editor& editor, std::span<const ConditionItem> test_set,
                              scene::Task task, const rewards::RewardConfig& cfg) {
  MetricsReport report;
  report.task = scene::task_name(task);
  report.n_samples = static_cast<int>(test_set.size());
  for (const ConditionItem& item : test_set) {
    scene::SceneSpec edited = editor(item);
    rewards::RewardBreakdown b = rewards::compute_reward(item.scene, edited, item.instruction, cfg);
    report.accuracy += b.success ? 1.0 : 0.0;
    report.trans_dist += b.displacement;
    report.rot_err += b.rotation_err;
    report.scale_err += b.ratio_err;
    report.consistency_l1 += b.consistency_penalty;
    report.samples.push_back(std::move(b));
  }
  double inv_n = 1.0 / std::max(1, report.n_samples);
  report.accuracy *= inv_n;
  report.trans_dist *= inv_n;
  report.rot_err *= inv_n;
  report.scale_err *= inv_n;
  report.consistency_l1 *= inv_n;
  return report;
}

Editor policy_editor(const FlowPolicy& policy, uint64_t eval_seed) {
  return [&policy, eval_seed](const ConditionItem& item) {
    flow::RolloutPlan plan;
    plan.perturb.assign(policy.steps, 0);
    plan.exit_step = policy.steps;
    plan.noise_level = 0.0;
    RngStream rng(ns_seed("eval", eval_seed, item.seed));
    flow::Vec condition = scene::encode_condition(item.scene, item.instruction);
    return flow::rollout(policy, condition, item.scene, plan, rng).decoded;
  };
}

Editor oracle_editor() {
  return [](const ConditionItem& item) {
    return scene::apply_oracle_edit(item.scene, item.instruction);
  };
}

MetricsReport evaluate_policy(const FlowPolicy& policy, std::span<const ConditionItem> test_set,
                              scene::Task task, uint64_t eval_seed,
                              const rewards::RewardConfig& cfg) {
  return evaluate_editor(policy_editor(policy, eval_seed), test_set, task, cfg);
}

nlohmann::json report_to_json(const MetricsReport& report, bool include_samples) {
  nlohmann::json j = {{"task", report.task},
                      {"n_samples", report.n_samples},
                      {"trans_dist", report.trans_dist},
                      {"accuracy", report.accuracy},
                      {"rot_err", report.rot_err},
                      {"scale_err", report.scale_err},
                      {"consistency_l1", report.consistency_l1}};
  if (include_samples) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& b : report.samples) samples.push_back(rewards::breakdown_to_json(b));
    j["samples"] = std::move(samples);
  }
  return j;
}

std::vector<ConditionItem> draw_batch(std::span<const ConditionItem> pool, int batch_conditions,
                                      uint64_t train_seed, int iteration) {
  RngStream rng(ns_seed("batch", train_seed, static_cast<uint64_t>(iteration)));
  std::vector<ConditionItem> batch;
  batch.reserve(batch_conditions);
  for (int b = 0; b < batch_conditions; ++b) {
    batch.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
  }
  return batch;
}

uint64_t condition_stream_hash(std::span<const ConditionItem> pool, int iterations,
                               int batch_conditions, uint64_t train_seed) {
  uint64_t h = 0x9E3779B97F4A7C15ULL;
  for (int it = 0; it < iterations; ++it) {
    for (const ConditionItem& item : draw_batch(pool, batch_conditions, train_seed, it)) {
      h = mix_seed(h, item.seed);
      h = mix_seed(h, static_cast<uint64_t>(item.instruction.target));
    }
  }
  return h;
}

SamplerComparison compare_samplers(const FlowPolicy& pretrained, const CompareSpec& spec) {
  SamplerComparison cmp;
  for (const auto& [name, sampler] : spec.strategies) {
    StrategyResult result;
    result.name = name;
    result.nfe_per_rollout = grpo::nfe_accounting(sampler, spec.train.inner_epochs);
    result.condition_stream_hash = condition_stream_hash(
        spec.conditions, spec.train.iterations, spec.train.batch_conditions, spec.train_seed);

    grpo::TrainState state = grpo::make_train_state(pretrained, sampler, spec.train,
                                                    spec.reward_cfg, spec.train_seed);
    result.initial_metrics =
        evaluate_policy(state.policy, spec.test_set, spec.task, spec.eval_seed, spec.reward_cfg);

    auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < spec.train.iterations; ++it) {
      auto batch = draw_batch(spec.conditions, spec.train.batch_conditions, spec.train_seed, it);
      grpo::IterationMetrics m = grpo::train_iteration(state, batch);
      result.reward_curve.push_back(m.mean_reward);
      result.nfe_old_total += m.nfe_old;
      result.nfe_train_total += m.nfe_train;
    }
    auto t1 = std::chrono::steady_clock::now();
    result.total_wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    // Split by the NFE ratio; sampling and optimization share the same
    // network evaluation cost per call.
    long total_nfe = result.nfe_old_total + result.nfe_train_total;
    if (total_nfe > 0) {
      result.sample_wall_ms = result.total_wall_ms * result.nfe_old_total / total_nfe;
      result.train_wall_ms = result.total_wall_ms * result.nfe_train_total / total_nfe;
    }
    result.final_metrics =
        evaluate_policy(state.policy, spec.test_set, spec.task, spec.eval_seed, spec.reward_cfg);
    cmp.strategies.push_back(std::move(result));
  }
  return cmp;
}

}  // namespace t2m::eval
