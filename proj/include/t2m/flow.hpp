#ifndef T2M_FLOW_HPP_
#define T2M_FLOW_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "t2m/nn.hpp"
#include "t2m/rng.hpp"
#include "t2m/scene.hpp"

namespace t2m::flow {

using Vec = nn::Vec;

// Time features fed to the network alongside the latent and condition.
inline constexpr int kTimeFeatures = 3;  // (t, sin 2*pi*t, cos 2*pi*t)

// Sigma evaluation time is capped below 1 (sigma diverges at t=1). The cap
// is the second grid time 1 - 1/T; with T=10 the first perturbed step then
// uses sigma = a*3 instead of a*sqrt(999), which keeps the SDE marginals
// close to the ODE ones at the default noise level.
double sigma_time_cap(int steps);

struct SamplerConfig {
  enum class Mode { Full, SlidingWindow, Active };
  Mode mode = Mode::Full;
  int steps = 10;           // T
  double noise_level = 1.0;  // a
  int window = 4;            // SlidingWindow
  int shift_period = 25;     // SlidingWindow: shift window every s iterations
  int window_start = 0;      // SlidingWindow: first optimized step
  int exit_step = 4;         // Active: K

  bool step_optimized(int index) const;
};

struct StepTransition {
  int index = 0;
  double t = 0.0;
  Vec mean;
  double std = 0.0;  // 0 when not perturbed
  Vec next;
  double log_prob = 0.0;  // NaN when not perturbed
  bool perturbed = false;
};

struct Trajectory {
  Vec condition;
  Vec initial_noise;
  std::vector<StepTransition> transitions;
  bool shortcut_used = false;
  Vec final_latent;
  scene::SceneSpec decoded;
  int nfe_sample = 0;
};

struct FlowPolicy {
  nn::MlpParams params;
  int steps = 10;

  double time_at(int i) const { return 1.0 - static_cast<double>(i) / steps; }
  double dt() const { return 1.0 / steps; }
};

// Which steps are SDE-perturbed, and where (if anywhere) the rollout exits
// through the one-step shortcut. exit_step == steps means no shortcut.
struct RolloutPlan {
  std::vector<char> perturb;
  int exit_step = 0;
  double noise_level = 0.0;
};

RolloutPlan make_plan(const SamplerConfig& cfg);
// Prefix-perturbation plan used by off-policy step evaluation: steps 1..k
// perturbed, the rest deterministic, no shortcut.
RolloutPlan prefix_plan(int steps, int k, double noise_level);

Vec velocity(const nn::MlpParams& params, const Vec& x, double t, const Vec& c,
             long* nfe = nullptr);

Vec ode_step(const Vec& x, const Vec& v, double dt);

StepTransition sde_step(const Vec& x, const Vec& v, double t, double dt, double noise_level,
                        RngStream& rng, double t_sigma_cap);

// Gaussian transition (mean, std) implied by one SDE step; shared between
// sde_step and transition_logprob.
void sde_moments(const Vec& x, const Vec& v, double t, double dt, double noise_level,
                 double t_sigma_cap, Vec* mean, double* std_out);

double gaussian_logprob(const Vec& x, const Vec& mean, double std);

// Recomputes the transition density of x_to from a fresh velocity evaluation;
// when grads is non-null, accumulates d log p / d params into it.
double transition_logprob(const nn::MlpParams& params, const Vec& x_from, const Vec& x_to,
                          double t, double dt, double noise_level, const Vec& c,
                          double t_sigma_cap, nn::GradientBuffer* grads = nullptr,
                          long* nfe = nullptr);

Vec shortcut_to_x0(const nn::MlpParams& params, const Vec& x, double t, const Vec& c,
                   long* nfe = nullptr);

// One rollout from shared or freshly drawn initial noise. tmpl supplies the
// active_count for decoding.
Trajectory rollout(const FlowPolicy& policy, const Vec& condition, const scene::SceneSpec& tmpl,
                   const RolloutPlan& plan, RngStream& rng, const Vec* shared_init = nullptr);

struct PretrainItem {
  scene::SceneSpec reference;
  scene::Instruction instruction;
  scene::SceneSpec edited;
};

// Conditional flow matching: t ~ U(0,1), eps ~ N(0,I), x_t = (1-t) x0 + t eps,
// target velocity eps - x0. Per-sample loss is the squared error summed over
// dims, averaged over the batch. Gradients accumulate into *grads if non-null.
double pretrain_loss(const nn::MlpParams& params, std::span<const PretrainItem> batch,
                     RngStream& rng, nn::GradientBuffer* grads = nullptr);

}  // namespace t2m::flow

#endif  // T2M_FLOW_HPP_
