#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "t2m/nn.hpp"

using namespace t2m;
using namespace t2m::nn;

namespace {

// Central finite differences over every parameter; the independent oracle
// for backward.
double max_relative_grad_error(const Architecture& arch, uint64_t seed) {
  MlpParams params = init_params(seed, arch);
  RngStream rng(mix_seed(seed, 99));
  Vec input(arch.input);
  for (double& x : input) x = rng.normal();
  Vec cot(arch.output);
  for (double& g : cot) g = rng.normal();

  Tape tape;
  Vec out = forward(params, input, &tape);
  GradientBuffer grads = GradientBuffer::zeros_like(params);
  backward(params, tape, cot, &grads);

  auto loss = [&](const MlpParams& p) {
    Vec y = forward(p, input);
    double l = 0.0;
    for (size_t i = 0; i < y.size(); ++i) l += cot[i] * y[i];
    return l;
  };

  const double h = 1e-5;
  double max_rel = 0.0;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto probe = [&](Vec& p, const Vec& g) {
      for (size_t i = 0; i < p.size(); ++i) {
        double orig = p[i];
        p[i] = orig + h;
        double lp = loss(params);
        p[i] = orig - h;
        double lm = loss(params);
        p[i] = orig;
        double fd = (lp - lm) / (2.0 * h);
        double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - g[i]) / denom);
      }
    };
    probe(params.layers[l].weights, grads.layers[l].weights);
    probe(params.layers[l].bias, grads.layers[l].bias);
  }
  return max_rel;
}

bool params_equal(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weights != b.layers[l].weights || a.layers[l].bias != b.layers[l].bias) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("init is deterministic with zero biases and fan-in variance") {
  Architecture arch{200, {64}, 32};
  MlpParams a = init_params(5, arch);
  MlpParams b = init_params(5, arch);
  CHECK(params_equal(a, b));
  for (const Layer& l : a.layers) {
    for (double bias : l.bias) CHECK(bias == 0.0);
    double var = 0.0;
    for (double w : l.weights) var += w * w;
    var /= l.weights.size();
    double expected = 2.0 / l.in;
    CHECK(var > 0.8 * expected);
    CHECK(var < 1.2 * expected);
  }
}

TEST_CASE("forward basics") {
  Architecture arch{3, {4}, 2};
  MlpParams params = init_params(0, arch);
  for (Layer& l : params.layers) std::fill(l.weights.begin(), l.weights.end(), 0.0);
  Vec out = forward(params, {1.0, -2.0, 3.0});
  for (double o : out) CHECK(o == 0.0);

  // identity single linear layer
  Architecture id_arch{3, {}, 3};
  MlpParams id = init_params(0, id_arch);
  std::fill(id.layers[0].weights.begin(), id.layers[0].weights.end(), 0.0);
  for (int i = 0; i < 3; ++i) id.layers[0].weights[i * 3 + i] = 1.0;
  Vec in = {0.5, -1.5, 2.0};
  CHECK(forward(id, in) == in);

  CHECK_THROWS(forward(id, {1.0, 2.0}));
}

TEST_CASE("forward matches straight-line re-evaluation") {
  Architecture arch{5, {7, 6}, 4};
  MlpParams params = init_params(21, arch);
  RngStream rng(77);
  Vec in(5);
  for (double& x : in) x = rng.normal();
  Vec out = forward(params, in);

  // independent re-evaluation without the tape machinery
  auto silu = [](double x) { return x / (1.0 + std::exp(-x)); };
  Vec x = in;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    Vec y(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      y[o] = layer.bias[o];
      for (int i = 0; i < layer.in; ++i) y[o] += layer.weights[o * layer.in + i] * x[i];
      if (l + 1 < params.layers.size()) y[o] = silu(y[o]);
    }
    x = y;
  }
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("linear layer VJP is exact") {
  Architecture arch{3, {}, 2};
  MlpParams params = init_params(4, arch);
  Vec in = {1.0, 2.0, -1.0};
  Vec cot = {0.5, -2.0};
  Tape tape;
  forward(params, in, &tape);
  GradientBuffer grads = GradientBuffer::zeros_like(params);
  Vec in_cot = backward(params, tape, cot, &grads);
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 3; ++i) {
      CHECK(grads.layers[0].weights[o * 3 + i] == doctest::Approx(cot[o] * in[i]));
    }
    CHECK(grads.layers[0].bias[o] == cot[o]);
  }
  for (int i = 0; i < 3; ++i) {
    double expect = 0.0;
    for (int o = 0; o < 2; ++o) expect += params.layers[0].weights[o * 3 + i] * cot[o];
    CHECK(in_cot[i] == doctest::Approx(expect));
  }

  GradientBuffer zero_grads = GradientBuffer::zeros_like(params);
  Vec zcot = backward(params, tape, {0.0, 0.0}, &zero_grads);
  CHECK(zero_grads.global_norm() == 0.0);
  for (double z : zcot) CHECK(z == 0.0);
}

TEST_CASE("backward matches finite differences over random architectures") {
  RngStream arch_rng(321);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch;
    arch.input = 1 + arch_rng.uniform_int(8);
    arch.output = 1 + arch_rng.uniform_int(8);
    int depth = arch_rng.uniform_int(3);
    for (int d = 0; d < depth; ++d) arch.hidden.push_back(1 + arch_rng.uniform_int(16));
    CHECK(max_relative_grad_error(arch, 1000 + trial) < 1e-4);
  }
}

TEST_CASE("adam zero gradient is a fixed point") {
  Architecture arch{4, {5}, 3};
  MlpParams params = init_params(8, arch);
  MlpParams before = params;
  AdamState state = AdamState::create(params);
  GradientBuffer zeros = GradientBuffer::zeros_like(params);
  CHECK(adam_step(&params, zeros, &state));
  CHECK(params_equal(params, before));
  CHECK(state.step == 1);
  CHECK(state.m.global_norm() == 0.0);
}

TEST_CASE("adam first step direction") {
  Architecture arch{2, {}, 1};
  MlpParams params = init_params(2, arch);
  MlpParams before = params;
  AdamState state = AdamState::create(params, 1e-3);
  GradientBuffer grads = GradientBuffer::zeros_like(params);
  grads.layers[0].weights = {0.3, -0.7};
  grads.layers[0].bias = {0.1};
  CHECK(adam_step(&params, grads, &state));
  // step 1 with bias correction: update = -lr * g / (|g| + eps')
  for (int i = 0; i < 2; ++i) {
    double g = grads.layers[0].weights[i];
    double m_hat = g;                      // m / (1 - beta1)
    double v_hat = g * g;                  // v / (1 - beta2)
    double expected = before.layers[0].weights[i] - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(params.layers[0].weights[i] == doctest::Approx(expected).epsilon(1e-10));
  }

  // determinism: same inputs from the same state give identical results
  MlpParams p2 = before;
  AdamState s2 = AdamState::create(p2, 1e-3);
  CHECK(adam_step(&p2, grads, &s2));
  CHECK(params_equal(params, p2));
}

TEST_CASE("adam rejects non-finite gradients") {
  Architecture arch{2, {}, 1};
  MlpParams params = init_params(2, arch);
  MlpParams before = params;
  AdamState state = AdamState::create(params);
  GradientBuffer grads = GradientBuffer::zeros_like(params);
  grads.layers[0].weights[0] = std::nan("");
  CHECK_FALSE(adam_step(&params, grads, &state));
  CHECK(params_equal(params, before));
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping by global norm") {
  Architecture arch{2, {}, 2};
  MlpParams params = init_params(3, arch);
  GradientBuffer grads = GradientBuffer::zeros_like(params);
  grads.layers[0].weights = {3.0, 4.0, 0.0, 0.0};
  clip_global_norm(&grads, 1.0);
  CHECK(grads.global_norm() == doctest::Approx(1.0));
  grads.layers[0].weights = {0.3, 0.4, 0.0, 0.0};
  clip_global_norm(&grads, 1.0);
  CHECK(grads.layers[0].weights[0] == 0.3);  // under the cap: untouched
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Architecture arch{6, {5, 4}, 3};
  MlpParams params = init_params(17, arch);
  std::string path = "ckpt_test.json";
  save_checkpoint(params, path, 10);
  int steps = 0;
  MlpParams loaded = load_checkpoint(path, &steps);
  CHECK(steps == 10);
  CHECK(params_equal(params, loaded));
  CHECK(loaded.arch.hidden == arch.hidden);
  std::remove(path.c_str());
}
