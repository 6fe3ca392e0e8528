#ifndef T2M_NN_HPP_
#define T2M_NN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "t2m/rng.hpp"

namespace t2m::nn {

using Vec = std::vector<double>;

struct Architecture {
  int input = 1;
  std::vector<int> hidden;
  int output = 1;
  std::string activation = "silu";

  std::vector<int> layer_dims() const;  // [input, hidden..., output]
};

struct Layer {
  int in = 0;
  int out = 0;
  Vec weights;  // row-major, out x in
  Vec bias;     // out
};

struct MlpParams {
  Architecture arch;
  std::vector<Layer> layers;

  size_t num_params() const;
};

// Shape-congruent gradient (or moment) accumulator.
struct GradientBuffer {
  std::vector<Layer> layers;

  static GradientBuffer zeros_like(const MlpParams& params);
  void add_scaled(const GradientBuffer& other, double scale);
  void scale(double s);
  double global_norm() const;
  bool finite() const;
};

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  GradientBuffer m;
  GradientBuffer v;

  static AdamState create(const MlpParams& params, double lr = 1e-4);
};

// Cached per-layer inputs and pre-activations from a forward pass.
struct Tape {
  std::vector<Vec> inputs;          // input to each layer
  std::vector<Vec> preactivations;  // affine outputs of hidden layers
};

MlpParams init_params(uint64_t seed, const Architecture& arch);

Vec forward(const MlpParams& params, const Vec& input, Tape* tape = nullptr);

// Exact vector-Jacobian product. Returns the input cotangent; parameter
// gradients are accumulated into *grads (which must be shape-congruent).
Vec backward(const MlpParams& params, const Tape& tape, const Vec& output_cotangent,
             GradientBuffer* grads);

// Scales gradients so the global L2 norm is at most max_norm.
void clip_global_norm(GradientBuffer* grads, double max_norm);

// Standard Adam with bias correction. Returns false (leaving params and
// moments untouched) when the gradient contains non-finite entries.
bool adam_step(MlpParams* params, const GradientBuffer& grads, AdamState* state);

// Versioned JSON checkpoint; round trip is bit-exact.
void save_checkpoint(const MlpParams& params, const std::string& path, int flow_steps);
MlpParams load_checkpoint(const std::string& path, int* flow_steps = nullptr);

}  // namespace t2m::nn

#endif  // T2M_NN_HPP_
