#include "t2m/nn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace t2m::nn {

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::vector<int> Architecture::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(input);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(output);
  return dims;
}

size_t MlpParams::num_params() const {
  size_t n = 0;
  for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

GradientBuffer GradientBuffer::zeros_like(const MlpParams& params) {
  GradientBuffer g;
  g.layers.reserve(params.layers.size());
  for (const Layer& l : params.layers) {
    Layer z;
    z.in = l.in;
    z.out = l.out;
    z.weights.assign(l.weights.size(), 0.0);
    z.bias.assign(l.bias.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  return g;
}

void GradientBuffer::add_scaled(const GradientBuffer& other, double scale) {
  check(layers.size() == other.layers.size(), "GradientBuffer: layer count mismatch");
  for (size_t l = 0; l < layers.size(); ++l) {
    for (size_t i = 0; i < layers[l].weights.size(); ++i) {
      layers[l].weights[i] += scale * other.layers[l].weights[i];
    }
    for (size_t i = 0; i < layers[l].bias.size(); ++i) {
      layers[l].bias[i] += scale * other.layers[l].bias[i];
    }
  }
}

void GradientBuffer::scale(double s) {
  for (Layer& l : layers) {
    for (double& w : l.weights) w *= s;
    for (double& b : l.bias) b *= s;
  }
}

double GradientBuffer::global_norm() const {
  double sq = 0.0;
  for (const Layer& l : layers) {
    for (double w : l.weights) sq += w * w;
    for (double b : l.bias) sq += b * b;
  }
  return std::sqrt(sq);
}

bool GradientBuffer::finite() const {
  for (const Layer& l : layers) {
    for (double w : l.weights) {
      if (!std::isfinite(w)) return false;
    }
    for (double b : l.bias) {
      if (!std::isfinite(b)) return false;
    }
  }
  return true;
}

AdamState AdamState::create(const MlpParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = GradientBuffer::zeros_like(params);
  s.v = GradientBuffer::zeros_like(params);
  return s;
}

MlpParams init_params(uint64_t seed, const Architecture& arch) {
  check(arch.input >= 1 && arch.output >= 1, "init_params: dims must be >= 1");
  for (int h : arch.hidden) check(h >= 1, "init_params: dims must be >= 1");
  RngStream rng(seed);
  MlpParams params;
  params.arch = arch;
  auto dims = arch.layer_dims();
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.weights.resize(static_cast<size_t>(layer.out) * layer.in);
    layer.bias.assign(layer.out, 0.0);
    double std = std::sqrt(2.0 / layer.in);  // Kaiming
    for (double& w : layer.weights) w = std * rng.normal();
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Vec forward(const MlpParams& params, const Vec& input, Tape* tape) {
  check(static_cast<int>(input.size()) == params.arch.input, "forward: input dim mismatch");
  if (tape) {
    tape->inputs.clear();
    tape->preactivations.clear();
  }
  Vec x = input;
  size_t n_layers = params.layers.size();
  for (size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = params.layers[l];
    if (tape) tape->inputs.push_back(x);
    Vec y(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      const double* row = layer.weights.data() + static_cast<size_t>(o) * layer.in;
      double acc = layer.bias[o];
      for (int i = 0; i < layer.in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    bool is_last = (l + 1 == n_layers);
    if (!is_last) {
      if (tape) tape->preactivations.push_back(y);
      for (double& v : y) v = silu(v);
    }
    x = std::move(y);
  }
  return x;
}

Vec backward(const MlpParams& params, const Tape& tape, const Vec& output_cotangent,
             GradientBuffer* grads) {
  size_t n_layers = params.layers.size();
  check(tape.inputs.size() == n_layers, "backward: tape/layer mismatch");
  check(output_cotangent.size() == static_cast<size_t>(params.arch.output),
        "backward: cotangent dim mismatch");
  check(grads && grads->layers.size() == n_layers, "backward: grads shape mismatch");

  Vec cot = output_cotangent;
  for (size_t li = n_layers; li-- > 0;) {
    const Layer& layer = params.layers[li];
    Layer& g = grads->layers[li];
    const Vec& in = tape.inputs[li];
    bool is_last = (li + 1 == n_layers);
    Vec delta = cot;  // cotangent at the affine output
    if (!is_last) {
      const Vec& pre = tape.preactivations[li];
      for (int o = 0; o < layer.out; ++o) delta[o] *= silu_grad(pre[o]);
    }
    for (int o = 0; o < layer.out; ++o) {
      double d = delta[o];
      g.bias[o] += d;
      double* grow = g.weights.data() + static_cast<size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) grow[i] += d * in[i];
    }
    Vec next(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double d = delta[o];
      const double* row = layer.weights.data() + static_cast<size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) next[i] += d * row[i];
    }
    cot = std::move(next);
  }
  return cot;
}

void clip_global_norm(GradientBuffer* grads, double max_norm) {
  double norm = grads->global_norm();
  if (norm > max_norm && norm > 0.0) grads->scale(max_norm / norm);
}

bool adam_step(MlpParams* params, const GradientBuffer& grads, AdamState* state) {
  if (!grads.finite()) return false;
  state->step += 1;
  double bc1 = 1.0 - std::pow(state->beta1, static_cast<double>(state->step));
  double bc2 = 1.0 - std::pow(state->beta2, static_cast<double>(state->step));
  for (size_t l = 0; l < params->layers.size(); ++l) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                      std::vector<double>& m, std::vector<double>& v) {
      for (size_t i = 0; i < p.size(); ++i) {
        m[i] = state->beta1 * m[i] + (1.0 - state->beta1) * g[i];
        v[i] = state->beta2 * v[i] + (1.0 - state->beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] -= state->lr * mhat / (std::sqrt(vhat) + state->eps);
      }
    };
    update(params->layers[l].weights, grads.layers[l].weights, state->m.layers[l].weights,
           state->v.layers[l].weights);
    update(params->layers[l].bias, grads.layers[l].bias, state->m.layers[l].bias,
           state->v.layers[l].bias);
  }
  return true;
}

void save_checkpoint(const MlpParams& params, const std::string& path, int flow_steps) {
  nlohmann::json j;
  j["format"] = "t2m-checkpoint";
  j["version"] = 1;
  j["architecture"] = {{"input", params.arch.input},
                       {"hidden", params.arch.hidden},
                       {"output", params.arch.output},
                       {"activation", params.arch.activation}};
  j["flow_steps"] = flow_steps;
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : params.layers) {
    layers.push_back({{"weights", l.weights}, {"bias", l.bias}});
  }
  j["layers"] = std::move(layers);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump() << "\n";
}

MlpParams load_checkpoint(const std::string& path, int* flow_steps) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("format") != "t2m-checkpoint" || j.at("version") != 1) {
    throw std::runtime_error("load_checkpoint: unsupported format in " + path);
  }
  MlpParams params;
  params.arch.input = j.at("architecture").at("input").get<int>();
  params.arch.hidden = j.at("architecture").at("hidden").get<std::vector<int>>();
  params.arch.output = j.at("architecture").at("output").get<int>();
  params.arch.activation = j.at("architecture").at("activation").get<std::string>();
  auto dims = params.arch.layer_dims();
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.weights = j.at("layers").at(l).at("weights").get<Vec>();
    layer.bias = j.at("layers").at(l).at("bias").get<Vec>();
    if (layer.weights.size() != static_cast<size_t>(layer.in) * layer.out ||
        layer.bias.size() != static_cast<size_t>(layer.out)) {
      throw std::runtime_error("load_checkpoint: shape mismatch in " + path);
    }
    params.layers.push_back(std::move(layer));
  }
  if (flow_steps) *flow_steps = j.at("flow_steps").get<int>();
  return params;
}

}  // namespace t2m::nn
