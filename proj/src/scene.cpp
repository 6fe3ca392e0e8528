#include "t2m/scene.hpp"

#include <cmath>
#include <stdexcept>

namespace t2m::scene {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }
double clamp11(double x) { return std::min(1.0, std::max(-1.0, x)); }

double scale_to_raw(double s) {
  double lo = std::log(kScaleMin), hi = std::log(kScaleMax);
  return 2.0 * (std::log(s) - lo) / (hi - lo) - 1.0;
}

double raw_to_scale(double raw) {
  double lo = std::log(kScaleMin), hi = std::log(kScaleMax);
  double s = std::exp(lo + (clamp11(raw) + 1.0) * 0.5 * (hi - lo));
  return std::min(kScaleMax, std::max(kScaleMin, s));
}

}  // namespace

double wrap_angle(double deg) {
  double w = std::fmod(deg + 180.0, 360.0);
  if (w < 0) w += 360.0;
  return w - 180.0;
}

SceneSpec sample_scene(uint64_t seed, const GenConfig& cfg) {
  RngStream rng(seed);
  SceneSpec scene;
  scene.active_count = 2 + rng.uniform_int(4);
  for (int i = 0; i < kMaxObjects; ++i) scene.objects[i].index = i;

  for (int i = 0; i < scene.active_count; ++i) {
    ObjectState& obj = scene.objects[i];
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      double u = rng.uniform(cfg.pos_min, cfg.pos_max);
      double v = rng.uniform(cfg.pos_min, cfg.pos_max);
      placed = true;
      for (int j = 0; j < i; ++j) {
        double du = u - scene.objects[j].u, dv = v - scene.objects[j].v;
        if (std::sqrt(du * du + dv * dv) < cfg.min_separation) {
          placed = false;
          break;
        }
      }
      if (placed) {
        obj.u = u;
        obj.v = v;
      }
    }
    if (!placed) {
      throw std::runtime_error("sample_scene: could not satisfy min_separation");
    }
    obj.depth = rng.uniform(cfg.pos_min, cfg.pos_max);
    for (int a = 0; a < 3; ++a) obj.orientation[a] = wrap_angle(rng.uniform(-180.0, 180.0));
    obj.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  }
  for (double& b : scene.background) b = rng.uniform();
  return scene;
}

std::vector<Direction> allowed_directions(const ObjectState& obj, const GenConfig& cfg) {
  std::vector<Direction> out;
  auto inside = [&](double x) { return x >= cfg.pos_min && x <= cfg.pos_max; };
  if (inside(obj.u - kCanonicalShift)) out.push_back(Direction::Left);
  if (inside(obj.u + kCanonicalShift)) out.push_back(Direction::Right);
  if (inside(obj.v - kCanonicalShift)) out.push_back(Direction::Up);
  if (inside(obj.v + kCanonicalShift)) out.push_back(Direction::Down);
  if (inside(obj.depth - kCanonicalShift)) out.push_back(Direction::Forward);
  if (inside(obj.depth + kCanonicalShift)) out.push_back(Direction::Backward);
  return out;
}

Instruction sample_instruction(uint64_t seed, const SceneSpec& scene,
                               std::optional<Task> task_filter) {
  RngStream rng(seed);
  Instruction instr;
  instr.task = task_filter ? *task_filter : static_cast<Task>(rng.uniform_int(3));
  instr.target = rng.uniform_int(scene.active_count);
  switch (instr.task) {
    case Task::Translate: {
      auto dirs = allowed_directions(scene.objects[instr.target]);
      instr.direction = dirs[rng.uniform_int(static_cast<int>(dirs.size()))];
      break;
    }
    case Task::Rotate:
      instr.axis = static_cast<Axis>(rng.uniform_int(3));
      instr.rot_dir = static_cast<RotDir>(rng.uniform_int(2));
      instr.angle_deg = kAngleChoices[rng.uniform_int(4)];
      break;
    case Task::Resize:
      instr.ratio = kRatioChoices[rng.uniform_int(5)];
      break;
  }
  return instr;
}

SceneSpec apply_oracle_edit(const SceneSpec& scene, const Instruction& instr) {
  SceneSpec out = scene;
  ObjectState& obj = out.objects[instr.target];
  switch (instr.task) {
    case Task::Translate:
      switch (instr.direction) {
        case Direction::Left: obj.u = clamp01(obj.u - kCanonicalShift); break;
        case Direction::Right: obj.u = clamp01(obj.u + kCanonicalShift); break;
        case Direction::Up: obj.v = clamp01(obj.v - kCanonicalShift); break;
        case Direction::Down: obj.v = clamp01(obj.v + kCanonicalShift); break;
        case Direction::Forward: obj.depth = clamp01(obj.depth - kCanonicalShift); break;
        case Direction::Backward: obj.depth = clamp01(obj.depth + kCanonicalShift); break;
      }
      break;
    case Task::Rotate: {
      double signed_angle =
          instr.rot_dir == RotDir::CounterClockwise ? instr.angle_deg : -instr.angle_deg;
      int a = static_cast<int>(instr.axis);
      obj.orientation[a] = wrap_angle(obj.orientation[a] + signed_angle);
      break;
    }
    case Task::Resize:
      obj.scale = std::min(kScaleMax, obj.scale * instr.ratio);
      break;
  }
  return out;
}

Latent encode_scene(const SceneSpec& scene) {
  Latent x(kLatentDim, 0.0);
  for (int i = 0; i < scene.active_count; ++i) {
    const ObjectState& obj = scene.objects[i];
    double* ch = x.data() + i * kChannelsPerObject;
    ch[0] = 2.0 * obj.u - 1.0;
    ch[1] = 2.0 * obj.v - 1.0;
    ch[2] = 2.0 * obj.depth - 1.0;
    for (int a = 0; a < 3; ++a) {
      ch[3 + 2 * a] = std::cos(obj.orientation[a] * kDegToRad);
      ch[4 + 2 * a] = std::sin(obj.orientation[a] * kDegToRad);
    }
    ch[9] = scale_to_raw(obj.scale);
  }
  for (int b = 0; b < kBackgroundDim; ++b) {
    x[kMaxObjects * kChannelsPerObject + b] = 2.0 * scene.background[b] - 1.0;
  }
  return x;
}

SceneSpec decode_latent(const Latent& x, const SceneSpec& tmpl) {
  SceneSpec out = tmpl;
  for (int i = 0; i < tmpl.active_count; ++i) {
    ObjectState& obj = out.objects[i];
    const double* ch = x.data() + i * kChannelsPerObject;
    obj.u = (clamp11(ch[0]) + 1.0) * 0.5;
    obj.v = (clamp11(ch[1]) + 1.0) * 0.5;
    obj.depth = (clamp11(ch[2]) + 1.0) * 0.5;
    for (int a = 0; a < 3; ++a) {
      double c = ch[3 + 2 * a], s = ch[4 + 2 * a];
      if (std::sqrt(c * c + s * s) < 1e-6) {
        obj.orientation[a] = 0.0;  // degenerate-pair rule
      } else {
        obj.orientation[a] = wrap_angle(std::atan2(s, c) * kRadToDeg);
      }
    }
    obj.scale = raw_to_scale(ch[9]);
  }
  for (int b = 0; b < kBackgroundDim; ++b) {
    out.background[b] = (clamp11(x[kMaxObjects * kChannelsPerObject + b]) + 1.0) * 0.5;
  }
  return out;
}

std::vector<double> encode_condition(const SceneSpec& scene, const Instruction& instr) {
  std::vector<double> c = encode_scene(scene);
  c.resize(kConditionDim, 0.0);
  double* one_hot = c.data() + kLatentDim;
  // layout: task 3 | target 5 | direction 6 | axis 3 | rot_dir 2 | angle 4 | ratio 5
  one_hot[static_cast<int>(instr.task)] = 1.0;
  one_hot[3 + instr.target] = 1.0;
  switch (instr.task) {
    case Task::Translate:
      one_hot[8 + static_cast<int>(instr.direction)] = 1.0;
      break;
    case Task::Rotate: {
      one_hot[14 + static_cast<int>(instr.axis)] = 1.0;
      one_hot[17 + static_cast<int>(instr.rot_dir)] = 1.0;
      for (int k = 0; k < 4; ++k) {
        if (kAngleChoices[k] == instr.angle_deg) one_hot[19 + k] = 1.0;
      }
      break;
    }
    case Task::Resize:
      for (int k = 0; k < 5; ++k) {
        if (kRatioChoices[k] == instr.ratio) one_hot[23 + k] = 1.0;
      }
      break;
  }
  return c;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Translate: return "translate";
    case Task::Rotate: return "rotate";
    case Task::Resize: return "resize";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  if (s == "translate") return Task::Translate;
  if (s == "rotate") return Task::Rotate;
  if (s == "resize") return Task::Resize;
  throw std::invalid_argument("unknown task: " + s);
}

namespace {

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::Left: return "left";
    case Direction::Right: return "right";
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Forward: return "forward";
    case Direction::Backward: return "backward";
  }
  return "?";
}

Direction direction_from_name(const std::string& s) {
  for (int i = 0; i < 6; ++i) {
    auto d = static_cast<Direction>(i);
    if (s == direction_name(d)) return d;
  }
  throw std::invalid_argument("unknown direction: " + s);
}

}  // namespace

nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const ObjectState& o : scene.objects) {
    objs.push_back({{"index", o.index},
                    {"position", {o.u, o.v}},
                    {"depth", o.depth},
                    {"orientation", o.orientation},
                    {"scale", o.scale}});
  }
  return {{"objects", objs},
          {"active_count", scene.active_count},
          {"background", scene.background}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  scene.active_count = j.at("active_count").get<int>();
  const auto& objs = j.at("objects");
  for (int i = 0; i < kMaxObjects; ++i) {
    const auto& o = objs.at(i);
    ObjectState& obj = scene.objects[i];
    obj.index = o.at("index").get<int>();
    obj.u = o.at("position").at(0).get<double>();
    obj.v = o.at("position").at(1).get<double>();
    obj.depth = o.at("depth").get<double>();
    for (int a = 0; a < 3; ++a) obj.orientation[a] = o.at("orientation").at(a).get<double>();
    obj.scale = o.at("scale").get<double>();
  }
  for (int b = 0; b < kBackgroundDim; ++b) {
    scene.background[b] = j.at("background").at(b).get<double>();
  }
  return scene;
}

nlohmann::json instruction_to_json(const Instruction& instr) {
  nlohmann::json j = {{"task", task_name(instr.task)}, {"target", instr.target}};
  switch (instr.task) {
    case Task::Translate:
      j["direction"] = direction_name(instr.direction);
      break;
    case Task::Rotate:
      j["axis"] = std::string(1, "xyz"[static_cast<int>(instr.axis)]);
      j["rot_dir"] = instr.rot_dir == RotDir::Clockwise ? "clockwise" : "counterclockwise";
      j["angle_deg"] = instr.angle_deg;
      break;
    case Task::Resize:
      j["ratio"] = instr.ratio;
      break;
  }
  return j;
}

Instruction instruction_from_json(const nlohmann::json& j) {
  Instruction instr;
  instr.task = task_from_name(j.at("task").get<std::string>());
  instr.target = j.at("target").get<int>();
  switch (instr.task) {
    case Task::Translate:
      instr.direction = direction_from_name(j.at("direction").get<std::string>());
      break;
    case Task::Rotate: {
      std::string axis = j.at("axis").get<std::string>();
      instr.axis = axis == "x" ? Axis::X : axis == "y" ? Axis::Y : Axis::Z;
      instr.rot_dir = j.at("rot_dir").get<std::string>() == "clockwise"
                          ? RotDir::Clockwise
                          : RotDir::CounterClockwise;
      instr.angle_deg = j.at("angle_deg").get<int>();
      break;
    }
    case Task::Resize:
      instr.ratio = j.at("ratio").get<double>();
      break;
  }
  return instr;
}

}  // namespace t2m::scene
