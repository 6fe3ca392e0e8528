#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "t2m/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace t2m;

namespace {

constexpr const char* kVersion = "1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PrereqError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string task = "translate";
  uint64_t data_seed = 0;
  uint64_t train_seed = 0;
  uint64_t eval_seed = 0;
  std::string out = "runs/default";
  std::string checkpoint;  // empty: derived from out

  // data
  int scenes = 800;
  int instructions_per_scene = 4;
  double data_fraction = 1.0;  // 0.1 = low-data corpus
  int pretrain_pairs = 2000;
  int test_samples = 100;

  // network / flow
  std::vector<int> hidden = {64, 64};
  int flow_steps = 10;
  double noise_level = 1.0;

  // sampler
  std::string sampler = "full";  // full | window | active | auto
  int window = 4;
  int shift_period = 25;
  int exit_step = 4;

  // grpo
  int group_size = 16;
  double clip_eps = 2e-4;
  int inner_epochs = 1;
  int iterations = 300;
  int batch_conditions = 4;
  double learning_rate = 1e-4;
  double grad_clip_norm = 1.0;
  int checkpoint_every = 100;

  // pretrain
  int pretrain_iterations = 4000;
  int pretrain_batch = 32;
  double pretrain_lr = 1e-3;

  // calibration
  int probes = 2;
  int probe_group_size = 16;

  int workers = 1;
  rewards::RewardConfig reward;
};

json reward_to_json(const rewards::RewardConfig& r) {
  return {{"lambda_id", r.lambda_id},
          {"lambda_bg", r.lambda_bg},
          {"move_threshold", r.move_threshold},
          {"identity_tol", r.identity_tol},
          {"background_tol", r.background_tol},
          {"rotation_tol_deg", r.rotation_tol_deg},
          {"resize_tol", r.resize_tol}};
}

json config_to_json(const RunConfig& c) {
  return {{"task", c.task},
          {"data_seed", c.data_seed},
          {"train_seed", c.train_seed},
          {"eval_seed", c.eval_seed},
          {"out", c.out},
          {"checkpoint", c.checkpoint},
          {"scenes", c.scenes},
          {"instructions_per_scene", c.instructions_per_scene},
          {"data_fraction", c.data_fraction},
          {"pretrain_pairs", c.pretrain_pairs},
          {"test_samples", c.test_samples},
          {"hidden", c.hidden},
          {"flow_steps", c.flow_steps},
          {"noise_level", c.noise_level},
          {"sampler", c.sampler},
          {"window", c.window},
          {"shift_period", c.shift_period},
          {"exit_step", c.exit_step},
          {"group_size", c.group_size},
          {"clip_eps", c.clip_eps},
          {"inner_epochs", c.inner_epochs},
          {"iterations", c.iterations},
          {"batch_conditions", c.batch_conditions},
          {"learning_rate", c.learning_rate},
          {"grad_clip_norm", c.grad_clip_norm},
          {"checkpoint_every", c.checkpoint_every},
          {"pretrain_iterations", c.pretrain_iterations},
          {"pretrain_batch", c.pretrain_batch},
          {"pretrain_lr", c.pretrain_lr},
          {"probes", c.probes},
          {"probe_group_size", c.probe_group_size},
          {"workers", c.workers},
          {"reward", reward_to_json(c.reward)}};
}

void merge_config(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "task") c.task = value.get<std::string>();
      else if (key == "data_seed") c.data_seed = value.get<uint64_t>();
      else if (key == "train_seed") c.train_seed = value.get<uint64_t>();
      else if (key == "eval_seed") c.eval_seed = value.get<uint64_t>();
      else if (key == "out") c.out = value.get<std::string>();
      else if (key == "checkpoint") c.checkpoint = value.get<std::string>();
      else if (key == "scenes") c.scenes = value.get<int>();
      else if (key == "instructions_per_scene") c.instructions_per_scene = value.get<int>();
      else if (key == "data_fraction") c.data_fraction = value.get<double>();
      else if (key == "pretrain_pairs") c.pretrain_pairs = value.get<int>();
      else if (key == "test_samples") c.test_samples = value.get<int>();
      else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
      else if (key == "flow_steps") c.flow_steps = value.get<int>();
      else if (key == "noise_level") c.noise_level = value.get<double>();
      else if (key == "sampler") c.sampler = value.get<std::string>();
      else if (key == "window") c.window = value.get<int>();
      else if (key == "shift_period") c.shift_period = value.get<int>();
      else if (key == "exit_step") c.exit_step = value.get<int>();
      else if (key == "group_size") c.group_size = value.get<int>();
      else if (key == "clip_eps") c.clip_eps = value.get<double>();
      else if (key == "inner_epochs") c.inner_epochs = value.get<int>();
      else if (key == "iterations") c.iterations = value.get<int>();
      else if (key == "batch_conditions") c.batch_conditions = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "grad_clip_norm") c.grad_clip_norm = value.get<double>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
      else if (key == "pretrain_iterations") c.pretrain_iterations = value.get<int>();
      else if (key == "pretrain_batch") c.pretrain_batch = value.get<int>();
      else if (key == "pretrain_lr") c.pretrain_lr = value.get<double>();
      else if (key == "probes") c.probes = value.get<int>();
      else if (key == "probe_group_size") c.probe_group_size = value.get<int>();
      else if (key == "workers") c.workers = value.get<int>();
      else if (key == "reward") {
        if (!value.is_object()) throw ConfigError("reward must be an object");
        for (const auto& [rk, rv] : value.items()) {
          if (rk == "lambda_id") c.reward.lambda_id = rv.get<double>();
          else if (rk == "lambda_bg") c.reward.lambda_bg = rv.get<double>();
          else if (rk == "move_threshold") c.reward.move_threshold = rv.get<double>();
          else if (rk == "identity_tol") c.reward.identity_tol = rv.get<double>();
          else if (rk == "background_tol") c.reward.background_tol = rv.get<double>();
          else if (rk == "rotation_tol_deg") c.reward.rotation_tol_deg = rv.get<double>();
          else if (rk == "resize_tol") c.reward.resize_tol = rv.get<double>();
          else throw ConfigError("unknown reward field: " + rk);
        }
      } else if (key == "command" || key == "version") {
        // tolerated so a manifest can be passed back in as --config
      } else {
        throw ConfigError("unknown config field: " + key);
      }
    } catch (const json::exception& e) {
      throw ConfigError("bad value for \"" + key + "\": " + e.what());
    }
  }
}

void validate(const RunConfig& c) {
  scene::task_from_name(c.task);  // throws on unknown names
  if (c.sampler != "full" && c.sampler != "window" && c.sampler != "active" &&
      c.sampler != "auto") {
    throw ConfigError("sampler must be one of full|window|active|auto");
  }
  if (c.flow_steps < 1) throw ConfigError("flow_steps must be >= 1");
  if (c.noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (c.group_size < 2) throw ConfigError("group_size must be >= 2");
  if (c.window < 1 || c.window > c.flow_steps) throw ConfigError("window out of range");
  if (c.exit_step < 1 || c.exit_step > c.flow_steps) throw ConfigError("exit_step out of range");
  if (c.inner_epochs < 1 || c.inner_epochs > 4) throw ConfigError("inner_epochs must be 1-4");
  if (c.data_fraction <= 0.0 || c.data_fraction > 1.0) {
    throw ConfigError("data_fraction must be in (0, 1]");
  }
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.probes < 2 || c.probes > 4) throw ConfigError("probes must be 2-4");
}

// ---- formatting helpers -------------------------------------------------

// Shortest round-trip representation; keeps CSV artifacts byte-stable.
std::string num(double x) { return json(x).dump(); }

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

void write_manifest(const RunConfig& c, const std::string& command) {
  json m = config_to_json(c);
  m["command"] = command;
  m["version"] = kVersion;
  std::ofstream f = open_out(fs::path(c.out) / ("manifest_" + command + ".json"));
  f << m.dump(2) << "\n";
}

fs::path default_checkpoint(const RunConfig& c, const char* name) {
  return c.checkpoint.empty() ? fs::path(c.out) / name : fs::path(c.checkpoint);
}

flow::FlowPolicy load_policy(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) {
    throw PrereqError("checkpoint " + path.string() + " not found; run `t2m " +
                      producer + "` first");
  }
  flow::FlowPolicy policy;
  policy.params = nn::load_checkpoint(path.string(), &policy.steps);
  return policy;
}

nn::Architecture make_arch(const RunConfig& c) {
  nn::Architecture arch;
  arch.input = scene::kLatentDim + flow::kTimeFeatures + scene::kConditionDim;
  arch.hidden = c.hidden;
  arch.output = scene::kLatentDim;
  return arch;
}

grpo::SamplerConfig make_sampler(const RunConfig& c, std::optional<int> auto_k) {
  grpo::SamplerConfig s;
  s.steps = c.flow_steps;
  s.noise_level = c.noise_level;
  s.window = c.window;
  s.shift_period = c.shift_period;
  s.exit_step = c.exit_step;
  if (c.sampler == "full") {
    s.mode = grpo::SamplerConfig::Mode::Full;
  } else if (c.sampler == "window") {
    s.mode = grpo::SamplerConfig::Mode::SlidingWindow;
  } else {
    s.mode = grpo::SamplerConfig::Mode::Active;
    if (c.sampler == "auto") {
      if (!auto_k) {
        throw PrereqError("sampler \"auto\" needs a calibration profile; run `t2m calibrate`");
      }
      s.exit_step = *auto_k;
    }
  }
  return s;
}

// ---- datasets -----------------------------------------------------------

std::vector<grpo::ConditionItem> load_condition_jsonl(const fs::path& path,
                                                      const char* producer) {
  if (!fs::exists(path)) {
    throw PrereqError(path.string() + " not found; run `t2m " + producer + "` first");
  }
  std::vector<grpo::ConditionItem> items;
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    grpo::ConditionItem item;
    item.seed = j.at("seed").get<uint64_t>();
    item.scene = scene::scene_from_json(j.at("scene"));
    item.instruction = scene::instruction_from_json(j.at("instruction"));
    items.push_back(std::move(item));
  }
  if (items.empty()) throw PrereqError(path.string() + " is empty");
  return items;
}

int cmd_gen_data(const RunConfig& cfg) {
  scene::Task task = scene::task_from_name(cfg.task);
  fs::path out(cfg.out);
  write_manifest(cfg, "gen-data");

  long total = std::lround(cfg.scenes * cfg.instructions_per_scene * cfg.data_fraction);
  std::ofstream train = open_out(out / "train.jsonl");
  long written = 0;
  for (int s = 0; s < cfg.scenes && written < total; ++s) {
    uint64_t scene_seed = ns_seed("data", cfg.data_seed, static_cast<uint64_t>(s));
    scene::SceneSpec sc = scene::sample_scene(scene_seed);
    for (int j = 0; j < cfg.instructions_per_scene && written < total; ++j) {
      uint64_t item_seed = mix_seed(scene_seed, static_cast<uint64_t>(j + 1));
      scene::Instruction instr = scene::sample_instruction(item_seed, sc, task);
      train << json{{"seed", item_seed},
                    {"scene", scene::scene_to_json(sc)},
                    {"instruction", scene::instruction_to_json(instr)}}
                   .dump()
            << "\n";
      ++written;
    }
  }

  std::ofstream pre = open_out(out / "pretrain.jsonl");
  for (int i = 0; i < cfg.pretrain_pairs; ++i) {
    uint64_t seed = ns_seed("pretrain", cfg.data_seed, static_cast<uint64_t>(i));
    scene::SceneSpec sc = scene::sample_scene(seed);
    scene::Instruction instr = scene::sample_instruction(mix_seed(seed, 1), sc, task);
    scene::SceneSpec edited = scene::apply_oracle_edit(sc, instr);
    pre << json{{"seed", seed},
                {"scene", scene::scene_to_json(sc)},
                {"instruction", scene::instruction_to_json(instr)},
                {"edited", scene::scene_to_json(edited)}}
               .dump()
        << "\n";
  }

  std::ofstream test = open_out(out / "test.jsonl");
  for (const auto& item : eval::build_test_set(task, cfg.test_samples, cfg.data_seed)) {
    test << json{{"seed", item.seed},
                 {"scene", scene::scene_to_json(item.scene)},
                 {"instruction", scene::instruction_to_json(item.instruction)}}
                .dump()
         << "\n";
  }

  std::cout << "wrote " << written << " train, " << cfg.pretrain_pairs << " pretrain, "
            << cfg.test_samples << " test items to " << cfg.out << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  fs::path out(cfg.out);
  if (!fs::exists(out / "pretrain.jsonl")) {
    throw PrereqError((out / "pretrain.jsonl").string() + " not found; run `t2m gen-data` first");
  }
  write_manifest(cfg, "pretrain");

  std::vector<flow::PretrainItem> pool;
  {
    std::ifstream f(out / "pretrain.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      flow::PretrainItem item;
      item.reference = scene::scene_from_json(j.at("scene"));
      item.instruction = scene::instruction_from_json(j.at("instruction"));
      item.edited = scene::scene_from_json(j.at("edited"));
      pool.push_back(std::move(item));
    }
  }
  if (pool.empty()) throw PrereqError("pretrain.jsonl is empty");

  nn::MlpParams params = nn::init_params(ns_seed("train", cfg.train_seed, 0), make_arch(cfg));
  nn::AdamState adam = nn::AdamState::create(params, cfg.pretrain_lr);
  std::ofstream log = open_out(out / "pretrain_loss.csv");
  log << "iteration,loss\n";
  for (int it = 0; it < cfg.pretrain_iterations; ++it) {
    // cosine decay to zero; the tail precision matters for the cold start
    adam.lr = cfg.pretrain_lr * 0.5 * (1.0 + std::cos(M_PI * it / cfg.pretrain_iterations));
    RngStream rng(ns_seed("train", cfg.train_seed, static_cast<uint64_t>(it + 1)));
    std::vector<flow::PretrainItem> batch;
    batch.reserve(cfg.pretrain_batch);
    for (int b = 0; b < cfg.pretrain_batch; ++b) {
      batch.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
    }
    nn::GradientBuffer grads = nn::GradientBuffer::zeros_like(params);
    double loss = flow::pretrain_loss(params, batch, rng, &grads);
    if (!std::isfinite(loss)) {
      throw NumericalError("pretraining diverged at iteration " + std::to_string(it) +
                           " (non-finite loss)");
    }
    nn::clip_global_norm(&grads, cfg.grad_clip_norm);
    if (!nn::adam_step(&params, grads, &adam)) {
      throw NumericalError("pretraining produced non-finite gradients at iteration " +
                           std::to_string(it));
    }
    log << it << "," << num(loss) << "\n";
    if ((it + 1) % 500 == 0) std::cout << "pretrain iter " << it + 1 << " loss " << loss << "\n";
  }
  fs::path ckpt = default_checkpoint(cfg, "pretrain_ckpt.json");
  fs::create_directories(ckpt.parent_path());
  nn::save_checkpoint(params, ckpt.string(), cfg.flow_steps);
  std::cout << "saved " << ckpt.string() << "\n";
  return 0;
}

int cmd_calibrate(const RunConfig& cfg) {
  if (cfg.noise_level <= 0.0) throw ConfigError("calibration without noise (set noise_level > 0)");
  fs::path out(cfg.out);
  write_manifest(cfg, "calibrate");
  flow::FlowPolicy policy = load_policy(default_checkpoint(cfg, "pretrain_ckpt.json"), "pretrain");
  auto pool = load_condition_jsonl(out / "train.jsonl", "gen-data");

  std::vector<grpo::ConditionItem> probes;
  RngStream rng(ns_seed("eval", cfg.eval_seed, 0));
  for (int p = 0; p < cfg.probes; ++p) {
    probes.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
  }
  grpo::StepImportanceProfile profile = grpo::off_policy_step_eval(
      policy, probes, cfg.probe_group_size, cfg.noise_level, ns_seed("eval", cfg.eval_seed, 1),
      grpo::scene_reward(cfg.reward));
  profile.task = cfg.task;
  std::ofstream f = open_out(out / "calibration.json");
  f << grpo::profile_to_json(profile).dump(2) << "\n";
  std::cout << "selected exit step K=" << profile.selected_exit_step << "\n";
  return 0;
}

std::optional<int> load_auto_k(const RunConfig& cfg) {
  fs::path path = fs::path(cfg.out) / "calibration.json";
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream f(path);
  json j = json::parse(f);
  return grpo::profile_from_json(j).selected_exit_step;
}

void write_train_log(std::ofstream& log, const grpo::IterationMetrics& m) {
  log << m.iteration << "," << num(m.mean_reward) << "," << num(m.reward_std) << ","
      << num(m.accuracy) << "," << num(m.trans_dist_or_err) << "," << m.nfe_old << ","
      << m.nfe_train << "," << num(m.wall_ms) << "\n";
}

int cmd_train(const RunConfig& cfg) {
  fs::path out(cfg.out);
  write_manifest(cfg, "train");
  flow::FlowPolicy policy = load_policy(default_checkpoint(cfg, "pretrain_ckpt.json"), "pretrain");
  auto pool = load_condition_jsonl(out / "train.jsonl", "gen-data");
  grpo::SamplerConfig sampler = make_sampler(cfg, load_auto_k(cfg));

  grpo::TrainConfig train_cfg;
  train_cfg.group_size = cfg.group_size;
  train_cfg.clip_eps = cfg.clip_eps;
  train_cfg.inner_epochs = cfg.inner_epochs;
  train_cfg.iterations = cfg.iterations;
  train_cfg.batch_conditions = cfg.batch_conditions;
  train_cfg.learning_rate = cfg.learning_rate;
  train_cfg.grad_clip_norm = cfg.grad_clip_norm;

  grpo::TrainState state =
      grpo::make_train_state(policy, sampler, train_cfg, cfg.reward, cfg.train_seed);
  std::ofstream log = open_out(out / "train_log.csv");
  log << "iteration,mean_reward,reward_std,accuracy,trans_dist_or_err,nfe_old,nfe_train,wall_ms\n";
  int skipped = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    auto batch = eval::draw_batch(pool, cfg.batch_conditions, cfg.train_seed, it);
    grpo::IterationMetrics m = grpo::train_iteration(state, batch);
    write_train_log(log, m);
    skipped += m.skipped ? 1 : 0;
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06d.json", it + 1);
      nn::save_checkpoint(state.policy.params, (out / name).string(), cfg.flow_steps);
    }
    if ((it + 1) % 25 == 0) {
      std::cout << "iter " << it + 1 << " mean_reward " << m.mean_reward << " accuracy "
                << m.accuracy << "\n";
    }
  }
  if (skipped > cfg.iterations / 2) {
    throw NumericalError("training skipped " + std::to_string(skipped) +
                         " iterations on non-finite losses");
  }
  nn::save_checkpoint(state.policy.params, (out / "train_ckpt.json").string(), cfg.flow_steps);
  std::cout << "saved " << (out / "train_ckpt.json").string() << " (skipped " << skipped
            << " iterations)\n";
  return 0;
}

std::vector<grpo::ConditionItem> load_test_set(const RunConfig& cfg) {
  fs::path path = fs::path(cfg.out) / "test.jsonl";
  if (fs::exists(path)) return load_condition_jsonl(path, "gen-data");
  return eval::build_test_set(scene::task_from_name(cfg.task), cfg.test_samples, cfg.data_seed);
}

int cmd_eval(const RunConfig& cfg) {
  fs::path out(cfg.out);
  write_manifest(cfg, "eval");
  flow::FlowPolicy policy = load_policy(default_checkpoint(cfg, "train_ckpt.json"), "train");
  auto test_set = load_test_set(cfg);
  eval::MetricsReport report = eval::evaluate_policy(policy, test_set, scene::task_from_name(cfg.task),
                                                     cfg.eval_seed, cfg.reward);
  std::ofstream f = open_out(out / "eval_report.json");
  f << eval::report_to_json(report, true).dump(2) << "\n";
  std::cout << "task " << report.task << "  n " << report.n_samples << "\n"
            << "Trans. Dist. " << report.trans_dist << "  Acc. " << report.accuracy
            << "  RotErr " << report.rot_err << "  ScaleErr " << report.scale_err
            << "  Consistency " << report.consistency_l1 << "\n";
  return 0;
}

int cmd_compare(const RunConfig& cfg) {
  fs::path out(cfg.out);
  write_manifest(cfg, "compare");
  flow::FlowPolicy pretrained =
      load_policy(default_checkpoint(cfg, "pretrain_ckpt.json"), "pretrain");

  eval::CompareSpec spec;
  spec.task = scene::task_from_name(cfg.task);
  spec.train_seed = cfg.train_seed;
  spec.eval_seed = cfg.eval_seed;
  spec.reward_cfg = cfg.reward;
  spec.conditions = load_condition_jsonl(out / "train.jsonl", "gen-data");
  spec.test_set = load_test_set(cfg);
  spec.train.group_size = cfg.group_size;
  spec.train.clip_eps = cfg.clip_eps;
  spec.train.inner_epochs = cfg.inner_epochs;
  spec.train.iterations = cfg.iterations;
  spec.train.batch_conditions = cfg.batch_conditions;
  spec.train.learning_rate = cfg.learning_rate;
  spec.train.grad_clip_norm = cfg.grad_clip_norm;

  int active_k = load_auto_k(cfg).value_or(cfg.exit_step);
  grpo::SamplerConfig full;
  full.steps = cfg.flow_steps;
  full.noise_level = cfg.noise_level;
  grpo::SamplerConfig window = full;
  window.mode = grpo::SamplerConfig::Mode::SlidingWindow;
  window.window = cfg.window;
  window.shift_period = cfg.shift_period;
  grpo::SamplerConfig active = full;
  active.mode = grpo::SamplerConfig::Mode::Active;
  active.exit_step = active_k;
  spec.strategies = {{"full", full}, {"window", window}, {"active", active}};

  eval::SamplerComparison cmp = eval::compare_samplers(pretrained, spec);

  std::ofstream table = open_out(out / "comparison.csv");
  table << "strategy,nfe_old,nfe_train,nfe_old_total,nfe_train_total,sample_wall_ms,"
           "train_wall_ms,total_wall_ms,init_accuracy,final_accuracy,init_err,final_err\n";
  for (const eval::StrategyResult& r : cmp.strategies) {
    auto err = [&](const eval::MetricsReport& m) {
      switch (spec.task) {
        case scene::Task::Translate: return m.trans_dist;
        case scene::Task::Rotate: return m.rot_err;
        case scene::Task::Resize: return m.scale_err;
      }
      return 0.0;
    };
    table << r.name << "," << r.nfe_per_rollout.nfe_old << "," << r.nfe_per_rollout.nfe_train
          << "," << r.nfe_old_total << "," << r.nfe_train_total << "," << num(r.sample_wall_ms)
          << "," << num(r.train_wall_ms) << "," << num(r.total_wall_ms) << ","
          << num(r.initial_metrics.accuracy) << "," << num(r.final_metrics.accuracy) << ","
          << num(err(r.initial_metrics)) << "," << num(err(r.final_metrics)) << "\n";
    std::ofstream curve = open_out(out / ("curve_" + r.name + ".csv"));
    curve << "iteration,mean_reward\n";
    for (size_t i = 0; i < r.reward_curve.size(); ++i) {
      curve << i << "," << num(r.reward_curve[i]) << "\n";
    }
    std::cout << r.name << ": NFE " << r.nfe_old_total + r.nfe_train_total << " final accuracy "
              << r.final_metrics.accuracy << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parametric scene-editing RL pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_flag, task_flag, sampler_flag;
  std::optional<uint64_t> seed_flag;
  std::optional<int> workers_flag;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--seed", seed_flag, "seed for data/train/eval namespaces");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--task", task_flag, "translate|rotate|resize");
  app.add_option("--sampler", sampler_flag, "full|window|active|auto");
  app.add_option("--workers", workers_flag, "rollout parallelism cap");

  auto* gen = app.add_subcommand("gen-data", "write train/pretrain/test JSONL");
  auto* pre = app.add_subcommand("pretrain", "flow-matching pretraining");
  auto* cal = app.add_subcommand("calibrate", "off-policy step evaluation");
  auto* train = app.add_subcommand("train", "GRPO training");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* cmp = app.add_subcommand("compare", "train all sampler strategies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot read config " + config_path);
      json j;
      try {
        j = json::parse(f);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
      }
      merge_config(cfg, j);
    }
    if (seed_flag) cfg.data_seed = cfg.train_seed = cfg.eval_seed = *seed_flag;
    if (!out_flag.empty()) cfg.out = out_flag;
    if (!task_flag.empty()) cfg.task = task_flag;
    if (!sampler_flag.empty()) cfg.sampler = sampler_flag;
    if (workers_flag) cfg.workers = *workers_flag;
    try {
      validate(cfg);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }

    if (gen->parsed()) return cmd_gen_data(cfg);
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (cal->parsed()) return cmd_calibrate(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (ev->parsed()) return cmd_eval(cfg);
    if (cmp->parsed()) return cmd_compare(cfg);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PrereqError& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
