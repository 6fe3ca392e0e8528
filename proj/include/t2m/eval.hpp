#ifndef T2M_EVAL_HPP_
#define T2M_EVAL_HPP_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "t2m/grpo.hpp"

namespace t2m::eval {

using grpo::ConditionItem;
using grpo::FlowPolicy;

struct MetricsReport {
  std::string task;
  int n_samples = 0;
  double trans_dist = 0.0;       // mean displacement magnitude (Translate)
  double accuracy = 0.0;         // success fraction
  double rot_err = 0.0;          // mean normalized rotation error (Rotate)
  double scale_err = 0.0;        // mean normalized ratio error (Resize)
  double consistency_l1 = 0.0;   // mean non-target L1
  std::vector<rewards::RewardBreakdown> samples;
};

// Seeded test set in the "test" seed namespace, disjoint from training data.
std::vector<ConditionItem> build_test_set(scene::Task task, int n, uint64_t seed);

// An editor maps a condition to an edited scene; policies and the oracle
// plug into the same metric path.
using Editor = std::function<scene::SceneSpec(const ConditionItem&)>;

MetricsReport evaluate_editor(const Editor& editor, std::span<const ConditionItem> test_set,
                              scene::Task task, const rewards::RewardConfig& cfg = {});

// Deterministic ODE sampling (a = 0), one rollout per item; never mutates
// the policy.
MetricsReport evaluate_policy(const FlowPolicy& policy, std::span<const ConditionItem> test_set,
                              scene::Task task, uint64_t eval_seed,
                              const rewards::RewardConfig& cfg = {});

Editor policy_editor(const FlowPolicy& policy, uint64_t eval_seed);
Editor oracle_editor();

nlohmann::json report_to_json(const MetricsReport& report, bool include_samples = false);

struct StrategyResult {
  std::string name;
  grpo::NfeCosts nfe_per_rollout;
  long nfe_old_total = 0;
  long nfe_train_total = 0;
  double sample_wall_ms = 0.0;  // approximated by iteration wall time split
  double train_wall_ms = 0.0;
  double total_wall_ms = 0.0;
  MetricsReport initial_metrics;
  MetricsReport final_metrics;
  std::vector<double> reward_curve;  // mean group reward per iteration
  uint64_t condition_stream_hash = 0;
};

struct SamplerComparison {
  std::vector<StrategyResult> strategies;
};

struct CompareSpec {
  std::vector<std::pair<std::string, grpo::SamplerConfig>> strategies;
  grpo::TrainConfig train;
  rewards::RewardConfig reward_cfg;
  scene::Task task = scene::Task::Translate;
  uint64_t train_seed = 0;
  uint64_t eval_seed = 0;
  std::vector<ConditionItem> conditions;  // shared training pool
  std::vector<ConditionItem> test_set;
};

// Trains one policy per strategy from the same initial checkpoint on an
// identical condition stream.
SamplerComparison compare_samplers(const FlowPolicy& pretrained, const CompareSpec& spec);

// Deterministic digest of the condition stream a training run will consume;
// used to assert comparison fairness.
uint64_t condition_stream_hash(std::span<const ConditionItem> pool, int iterations,
                               int batch_conditions, uint64_t train_seed);

// The per-iteration batch is drawn from the pool by seeded choice; shared by
// training commands and the stream hash.
std::vector<ConditionItem> draw_batch(std::span<const ConditionItem> pool, int batch_conditions,
                                      uint64_t train_seed, int iteration);

}  // namespace t2m::eval

#endif  // T2M_EVAL_HPP_
