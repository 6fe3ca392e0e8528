#ifndef T2M_SCENE_HPP_
#define T2M_SCENE_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "t2m/rng.hpp"

namespace t2m::scene {

inline constexpr int kMaxObjects = 5;
inline constexpr int kChannelsPerObject = 10;
inline constexpr int kBackgroundDim = 4;
// 5 slots x 10 channels + 4 background channels.
inline constexpr int kLatentDim = kMaxObjects * kChannelsPerObject + kBackgroundDim;
// task 3 + target 5 + direction 6 + axis 3 + rot_dir 2 + angle 4 + ratio 5.
inline constexpr int kInstructionDim = 28;
inline constexpr int kConditionDim = kLatentDim + kInstructionDim;

inline constexpr double kScaleMin = 0.02;
inline constexpr double kScaleMax = 0.8;
inline constexpr double kCanonicalShift = 0.25;

inline constexpr std::array<int, 4> kAngleChoices = {45, 90, 135, 180};
inline constexpr std::array<double, 5> kRatioChoices = {1.25, 1.5, 2.0, 3.0, 4.0};

using Latent = std::vector<double>;

// Wraps an angle in degrees to [-180, 180).
double wrap_angle(double deg);

struct ObjectState {
  int index = 0;
  double u = 0.5;
  double v = 0.5;
  double depth = 0.5;                        // 0 = nearest to camera
  std::array<double, 3> orientation = {0, 0, 0};  // degrees, wrapped
  double scale = kScaleMin;
};

struct SceneSpec {
  std::array<ObjectState, kMaxObjects> objects;
  int active_count = 2;
  std::array<double, kBackgroundDim> background = {0.5, 0.5, 0.5, 0.5};
};

enum class Task { Translate, Rotate, Resize };
enum class Direction { Left, Right, Up, Down, Forward, Backward };
enum class Axis { X, Y, Z };
enum class RotDir { Clockwise, CounterClockwise };

struct Instruction {
  Task task = Task::Translate;
  int target = 0;
  Direction direction = Direction::Left;  // Translate only
  Axis axis = Axis::X;                    // Rotate only
  RotDir rot_dir = RotDir::Clockwise;     // Rotate only
  int angle_deg = 0;                      // Rotate only
  double ratio = 0.0;                     // Resize only
};

struct GenConfig {
  double pos_min = 0.05;
  double pos_max = 0.95;
  double min_separation = 0.15;
  double scale_min = 0.02;
  double scale_max = 0.2;  // keeps every resize ratio within kScaleMax
  int max_attempts = 1000;
};

SceneSpec sample_scene(uint64_t seed, const GenConfig& cfg = {});
Instruction sample_instruction(uint64_t seed, const SceneSpec& scene,
                               std::optional<Task> task_filter = std::nullopt);

// Directions whose canonical shift keeps the target center inside
// [pos_min, pos_max]; used by sample_instruction.
std::vector<Direction> allowed_directions(const ObjectState& obj, const GenConfig& cfg = {});

SceneSpec apply_oracle_edit(const SceneSpec& scene, const Instruction& instr);

Latent encode_scene(const SceneSpec& scene);
SceneSpec decode_latent(const Latent& x, const SceneSpec& tmpl);
std::vector<double> encode_condition(const SceneSpec& scene, const Instruction& instr);

// JSON (de)serialization; field names follow the type definitions.
nlohmann::json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json instruction_to_json(const Instruction& instr);
Instruction instruction_from_json(const nlohmann::json& j);

const char* task_name(Task t);
Task task_from_name(const std::string& s);

}  // namespace t2m::scene

#endif  // T2M_SCENE_HPP_
