#include "t2m/flow.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace t2m::flow {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Vec network_input(const Vec& x, double t, const Vec& c) {
  Vec in;
  in.reserve(x.size() + kTimeFeatures + c.size());
  in.insert(in.end(), x.begin(), x.end());
  in.push_back(t);
  in.push_back(std::sin(2.0 * M_PI * t));
  in.push_back(std::cos(2.0 * M_PI * t));
  in.insert(in.end(), c.begin(), c.end());
  return in;
}

double sigma_at(double t, double noise_level, double t_sigma_cap) {
  double ts = std::min(t, t_sigma_cap);
  return noise_level * std::sqrt(ts / (1.0 - ts));
}

}  // namespace

double sigma_time_cap(int steps) { return 1.0 - 1.0 / steps; }

bool SamplerConfig::step_optimized(int index) const {
  switch (mode) {
    case Mode::Full:
      return true;
    case Mode::SlidingWindow:
      return index >= window_start && index < window_start + window;
    case Mode::Active:
      return index < exit_step;
  }
  return false;
}

RolloutPlan make_plan(const SamplerConfig& cfg) {
  RolloutPlan plan;
  plan.noise_level = cfg.noise_level;
  plan.perturb.assign(cfg.steps, 1);
  plan.exit_step = cfg.steps;
  if (cfg.mode == SamplerConfig::Mode::Active) {
    if (cfg.exit_step < 1 || cfg.exit_step > cfg.steps) {
      throw std::invalid_argument("make_plan: exit step out of range");
    }
    for (int i = cfg.exit_step; i < cfg.steps; ++i) plan.perturb[i] = 0;
    plan.exit_step = cfg.exit_step;
  }
  return plan;
}

RolloutPlan prefix_plan(int steps, int k, double noise_level) {
  if (k < 0 || k > steps) throw std::invalid_argument("prefix_plan: k out of range");
  RolloutPlan plan;
  plan.noise_level = noise_level;
  plan.perturb.assign(steps, 0);
  for (int i = 0; i < k; ++i) plan.perturb[i] = 1;
  plan.exit_step = steps;  // no shortcut
  return plan;
}

Vec velocity(const nn::MlpParams& params, const Vec& x, double t, const Vec& c, long* nfe) {
  if (nfe) ++*nfe;
  return nn::forward(params, network_input(x, t, c));
}

Vec ode_step(const Vec& x, const Vec& v, double dt) {
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - dt * v[i];
  return out;
}

void sde_moments(const Vec& x, const Vec& v, double t, double dt, double noise_level,
                 double t_sigma_cap, Vec* mean, double* std_out) {
  if (t <= 0.0) throw std::invalid_argument("sde step: t must be positive");
  double sigma = sigma_at(t, noise_level, t_sigma_cap);
  double drift_coeff = sigma * sigma / (2.0 * t);
  mean->resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    (*mean)[i] = x[i] - dt * (v[i] + drift_coeff * (x[i] + (1.0 - t) * v[i]));
  }
  *std_out = sigma * std::sqrt(dt);
}

double gaussian_logprob(const Vec& x, const Vec& mean, double std) {
  double lp = 0.0;
  double inv2var = 1.0 / (2.0 * std * std);
  double log_norm = -0.5 * std::log(2.0 * M_PI) - std::log(std);
  for (size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - mean[i];
    lp += log_norm - d * d * inv2var;
  }
  return lp;
}

StepTransition sde_step(const Vec& x, const Vec& v, double t, double dt, double noise_level,
                        RngStream& rng, double t_sigma_cap) {
  StepTransition tr;
  tr.t = t;
  if (noise_level == 0.0) {
    tr.next = ode_step(x, v, dt);
    tr.mean = tr.next;
    tr.std = 0.0;
    tr.log_prob = kNan;
    tr.perturbed = false;
    return tr;
  }
  sde_moments(x, v, t, dt, noise_level, t_sigma_cap, &tr.mean, &tr.std);
  tr.next.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) tr.next[i] = tr.mean[i] + tr.std * rng.normal();
  tr.log_prob = gaussian_logprob(tr.next, tr.mean, tr.std);
  tr.perturbed = true;
  return tr;
}

double transition_logprob(const nn::MlpParams& params, const Vec& x_from, const Vec& x_to,
                          double t, double dt, double noise_level, const Vec& c,
                          double t_sigma_cap, nn::GradientBuffer* grads, long* nfe) {
  if (noise_level <= 0.0) {
    throw std::invalid_argument("transition_logprob: degenerate density at a = 0");
  }
  if (nfe) ++*nfe;
  nn::Tape tape;
  Vec v = nn::forward(params, network_input(x_from, t, c), &tape);
  Vec mean;
  double std = 0.0;
  sde_moments(x_from, v, t, dt, noise_level, t_sigma_cap, &mean, &std);
  double lp = gaussian_logprob(x_to, mean, std);
  if (grads) {
    // std does not depend on params; the gradient flows through the mean only.
    // d mean_i / d v_i = -dt * (1 + sigma^2 (1-t) / (2t)).
    double sigma = sigma_at(t, noise_level, t_sigma_cap);
    double coeff = -dt * (1.0 + sigma * sigma * (1.0 - t) / (2.0 * t));
    double inv_var = 1.0 / (std * std);
    Vec cot(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      cot[i] = coeff * (x_to[i] - mean[i]) * inv_var;
    }
    nn::backward(params, tape, cot, grads);
  }
  return lp;
}

Vec shortcut_to_x0(const nn::MlpParams& params, const Vec& x, double t, const Vec& c, long* nfe) {
  Vec v = velocity(params, x, t, c, nfe);
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - t * v[i];
  return out;
}

Trajectory rollout(const FlowPolicy& policy, const Vec& condition, const scene::SceneSpec& tmpl,
                   const RolloutPlan& plan, RngStream& rng, const Vec* shared_init) {
  const int T = policy.steps;
  const int D = policy.params.arch.output;
  if (static_cast<int>(plan.perturb.size()) != T) {
    throw std::invalid_argument("rollout: plan does not match policy steps");
  }
  double cap = sigma_time_cap(T);
  long nfe = 0;

  Trajectory traj;
  traj.condition = condition;
  if (shared_init) {
    traj.initial_noise = *shared_init;
  } else {
    traj.initial_noise.resize(D);
    for (double& z : traj.initial_noise) z = rng.normal();
  }

  Vec x = traj.initial_noise;
  double dt = policy.dt();
  for (int i = 0; i < plan.exit_step; ++i) {
    double t = policy.time_at(i);
    Vec v = velocity(policy.params, x, t, condition, &nfe);
    StepTransition tr;
    if (plan.perturb[i] && plan.noise_level > 0.0) {
      tr = sde_step(x, v, t, dt, plan.noise_level, rng, cap);
    } else {
      tr.t = t;
      tr.next = ode_step(x, v, dt);
      tr.mean = tr.next;
      tr.std = 0.0;
      tr.log_prob = kNan;
      tr.perturbed = false;
    }
    tr.index = i;
    traj.transitions.push_back(std::move(tr));
    x = traj.transitions.back().next;
  }
  if (plan.exit_step < T) {
    x = shortcut_to_x0(policy.params, x, policy.time_at(plan.exit_step), condition, &nfe);
    traj.shortcut_used = true;
  }
  traj.final_latent = x;
  traj.decoded = scene::decode_latent(x, tmpl);
  traj.nfe_sample = static_cast<int>(nfe);
  return traj;
}

double pretrain_loss(const nn::MlpParams& params, std::span<const PretrainItem> batch,
                     RngStream& rng, nn::GradientBuffer* grads) {
  if (batch.empty()) throw std::invalid_argument("pretrain_loss: empty batch");
  const int D = params.arch.output;
  double loss = 0.0;
  double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const PretrainItem& item : batch) {
    Vec x0 = scene::encode_scene(item.edited);
    Vec c = scene::encode_condition(item.reference, item.instruction);
    double t = rng.uniform();
    Vec eps(D), xt(D), target(D);
    for (int i = 0; i < D; ++i) {
      eps[i] = rng.normal();
      xt[i] = (1.0 - t) * x0[i] + t * eps[i];
      target[i] = eps[i] - x0[i];
    }
    nn::Tape tape;
    Vec v = nn::forward(params, network_input(xt, t, c), grads ? &tape : nullptr);
    Vec cot(D);
    for (int i = 0; i < D; ++i) {
      double d = v[i] - target[i];
      loss += inv_b * d * d;
      cot[i] = 2.0 * inv_b * d;
    }
    if (grads) nn::backward(params, tape, cot, grads);
  }
  return loss;
}

}  // namespace t2m::flow
