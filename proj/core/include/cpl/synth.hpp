#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cpl/tensor.hpp"

namespace cpl {

enum class Task { kNoise, kRain, kHaze, kBlur, kLowlight };

inline constexpr std::array<Task, 5> kAllTasks = {Task::kNoise, Task::kRain, Task::kHaze,
                                                  Task::kBlur, Task::kLowlight};

std::string_view task_name(Task task);
/// Throws ConfigError for unknown names.
Task parse_task(std::string_view name);

struct NoiseParams {
  double sigma = 25.0 / 255.0;  // standard deviation in [0,1] intensity units
};

struct RainParams {
  int streaks = 20;
  double angle_deg = 90.0;  // streak direction against the image x-axis; 90 is vertical
  double length_px = 8.0;
  double intensity = 0.5;
};

struct HazeParams {
  double transmission = 0.5;
  double airlight = 0.85;
};

enum class BlurKind { kBox, kMotion };

struct BlurParams {
  int kernel_size = 5;
  BlurKind kind = BlurKind::kBox;
  double angle_deg = 0.0;  // motion direction; ignored for box
};

struct LowlightParams {
  double gamma = 2.5;
  double scale = 0.3;
};

using DegradationParams =
    std::variant<NoiseParams, RainParams, HazeParams, BlurParams, LowlightParams>;

struct DegradationSpec {
  DegradationParams params;
  std::uint64_t seed = 0;

  Task task() const;
};

/// Sampling ranges for each degradation family.
struct DegradationRanges {
  std::vector<double> noise_sigmas_255 = {15.0, 25.0, 50.0};
  int rain_streaks_min = 8, rain_streaks_max = 24;
  double rain_angle_min = 60.0, rain_angle_max = 120.0;
  double rain_length_min = 4.0, rain_length_max = 12.0;
  double rain_intensity_min = 0.3, rain_intensity_max = 0.8;
  double haze_t_min = 0.3, haze_t_max = 0.8;
  double haze_airlight_min = 0.7, haze_airlight_max = 1.0;
  std::vector<int> blur_sizes = {3, 5, 7};
  std::vector<BlurKind> blur_kinds = {BlurKind::kBox, BlurKind::kMotion};
  double lowlight_gamma_min = 2.0, lowlight_gamma_max = 3.0;
  double lowlight_scale_min = 0.1, lowlight_scale_max = 0.5;

  /// Throws ConfigError if any range leaves the admissible parameter domain.
  void validate() const;
};

/// Throws ConfigError if the parameters are outside their admissible domain.
void validate_spec(const DegradationSpec& spec);

DegradationSpec sample_spec(Task task, const DegradationRanges& ranges, std::uint64_t seed);

struct SampleTriple {
  Tensor degraded;
  Tensor clean;
  Task task = Task::kNoise;
  DegradationSpec spec;
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kMinCleanSize = 16;

/// Procedural 3×size×size image in [0,1]: blurred random field over a color
/// gradient with a few painted shapes. Deterministic per seed.
Tensor gen_clean(std::uint64_t seed, std::size_t size);

/// Degradation before the final clamp to [0,1].
Tensor apply_degradation_unclipped(const Tensor& clean, const DegradationSpec& spec);
Tensor apply_degradation(const Tensor& clean, const DegradationSpec& spec);

/// Normalized blur kernel (kernel_size × kernel_size) for a blur spec.
Tensor blur_kernel(const BlurParams& params);

/// Dihedral augmentation of a square C×H×W image.
struct Augmentation {
  bool flip_h = false;
  bool flip_v = false;
  int rot90 = 0;  // quarter turns counter-clockwise, 0..3
};
Tensor augment(const Tensor& image, const Augmentation& aug);

struct BatchOptions {
  std::size_t image_size = 48;  // generated clean size before cropping
  bool augment = true;
  DegradationRanges ranges;
};

/// Task-balanced batch: sample i has task task_mix[i % |task_mix|] and its own
/// derived seed; crops and augmentations are shared by degraded and clean.
std::vector<SampleTriple> make_batch(std::span<const Task> task_mix, std::size_t batch_size,
                                     std::size_t crop, std::uint64_t seed,
                                     const BatchOptions& options = {});

void to_json(nlohmann::json& j, const DegradationSpec& spec);
void from_json(const nlohmann::json& j, DegradationSpec& spec);

}  // namespace cpl
