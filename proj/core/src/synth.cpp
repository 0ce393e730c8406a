#include "cpl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpl/error.hpp"
#include "cpl/rng.hpp"

namespace cpl {

namespace {

constexpr std::array<std::string_view, 5> kTaskNames = {"noise", "rain", "haze", "blur",
                                                        "lowlight"};

// Stream identifiers for derive_seed.
constexpr std::uint64_t kStreamSample = 0x5a17;
constexpr std::uint64_t kStreamClean = 1;
constexpr std::uint64_t kStreamSpec = 2;
constexpr std::uint64_t kStreamCrop = 3;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

// Separable box blur with wrap-around, radius r, in place on one plane.
void box_blur_wrap(std::vector<double>& plane, std::size_t size, std::size_t radius) {
  std::vector<double> tmp(plane.size());
  const double norm = 1.0 / static_cast<double>(2 * radius + 1);
  const auto n = static_cast<std::ptrdiff_t>(size);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t y = 0; y < n; ++y)
    for (std::ptrdiff_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) acc += plane[y * n + ((x + d) % n + n) % n];
      tmp[y * n + x] = acc * norm;
    }
  for (std::ptrdiff_t y = 0; y < n; ++y)
    for (std::ptrdiff_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) acc += tmp[((y + d) % n + n) % n * n + x];
      plane[y * n + x] = acc * norm;
    }
}

Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t size) {
  Tensor out({image.dim(0), size, size});
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
  return out;
}

}  // namespace

std::string_view task_name(Task task) { return kTaskNames[static_cast<std::size_t>(task)]; }

Task parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == name) return static_cast<Task>(i);
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

Task DegradationSpec::task() const { return static_cast<Task>(params.index()); }

void validate_spec(const DegradationSpec& spec) {
  std::visit(
      [](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, NoiseParams>) {
          const double level = p.sigma * 255.0;
          const bool allowed = std::abs(level - 15.0) < 1e-9 || std::abs(level - 25.0) < 1e-9 ||
                               std::abs(level - 50.0) < 1e-9;
          require(allowed, "noise sigma must be 15, 25 or 50 (/255), got " +
                               std::to_string(level) + "/255");
        } else if constexpr (std::is_same_v<P, RainParams>) {
          require(p.streaks >= 1 && p.streaks <= 4096, "rain streak count out of range");
          require(in_range(p.angle_deg, 60.0, 120.0), "rain angle must lie in [60, 120] degrees");
          require(p.length_px >= 1.0 && p.length_px <= 256.0, "rain length out of range");
          require(p.intensity > 0.0 && p.intensity <= 1.0, "rain intensity must lie in (0, 1]");
        } else if constexpr (std::is_same_v<P, HazeParams>) {
          require(in_range(p.transmission, 0.0, 1.0), "haze transmission must lie in [0, 1]");
          require(in_range(p.airlight, 0.7, 1.0), "haze airlight must lie in [0.7, 1.0]");
        } else if constexpr (std::is_same_v<P, BlurParams>) {
          require(p.kernel_size == 3 || p.kernel_size == 5 || p.kernel_size == 7,
                  "blur kernel size must be 3, 5 or 7");
        } else {
          require(in_range(p.gamma, 2.0, 3.0), "lowlight gamma must lie in [2, 3]");
          require(in_range(p.scale, 0.1, 0.5), "lowlight scale must lie in [0.1, 0.5]");
        }
      },
      spec.params);
}

void DegradationRanges::validate() const {
  require(!noise_sigmas_255.empty(), "noise sigma list is empty");
  for (double s : noise_sigmas_255) {
    DegradationSpec probe{NoiseParams{s / 255.0}, 0};
    validate_spec(probe);
  }
  require(rain_streaks_min >= 1 && rain_streaks_min <= rain_streaks_max,
          "rain streak range invalid");
  require(rain_angle_min >= 60.0 && rain_angle_min <= rain_angle_max && rain_angle_max <= 120.0,
          "rain angle range must lie within [60, 120]");
  require(rain_length_min >= 1.0 && rain_length_min <= rain_length_max,
          "rain length range invalid");
  require(rain_intensity_min > 0.0 && rain_intensity_min <= rain_intensity_max &&
              rain_intensity_max <= 1.0,
          "rain intensity range must lie within (0, 1]");
  require(haze_t_min > 0.0 && haze_t_min <= haze_t_max && haze_t_max <= 1.0,
          "haze transmission range must lie within (0, 1]");
  require(haze_airlight_min >= 0.7 && haze_airlight_min <= haze_airlight_max &&
              haze_airlight_max <= 1.0,
          "haze airlight range must lie within [0.7, 1.0]");
  require(!blur_sizes.empty() && !blur_kinds.empty(), "blur size/kind lists must be non-empty");
  for (int s : blur_sizes) require(s == 3 || s == 5 || s == 7, "blur sizes must be 3, 5 or 7");
  require(lowlight_gamma_min >= 2.0 && lowlight_gamma_min <= lowlight_gamma_max &&
              lowlight_gamma_max <= 3.0,
          "lowlight gamma range must lie within [2, 3]");
  require(lowlight_scale_min >= 0.1 && lowlight_scale_min <= lowlight_scale_max &&
              lowlight_scale_max <= 0.5,
          "lowlight scale range must lie within [0.1, 0.5]");
}

DegradationSpec sample_spec(Task task, const DegradationRanges& ranges, std::uint64_t seed) {
  Rng rng(seed);
  DegradationSpec spec;
  spec.seed = mix64(seed);
  switch (task) {
    case Task::kNoise: {
      const auto i = rng.below(ranges.noise_sigmas_255.size());
      spec.params = NoiseParams{ranges.noise_sigmas_255[i] / 255.0};
      break;
    }
    case Task::kRain: {
      RainParams p;
      p.streaks = ranges.rain_streaks_min +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(
                      ranges.rain_streaks_max - ranges.rain_streaks_min + 1)));
      p.angle_deg = rng.uniform(ranges.rain_angle_min, ranges.rain_angle_max);
      p.length_px = rng.uniform(ranges.rain_length_min, ranges.rain_length_max);
      p.intensity = rng.uniform(ranges.rain_intensity_min, ranges.rain_intensity_max);
      spec.params = p;
      break;
    }
    case Task::kHaze:
      spec.params = HazeParams{rng.uniform(ranges.haze_t_min, ranges.haze_t_max),
                               rng.uniform(ranges.haze_airlight_min, ranges.haze_airlight_max)};
      break;
    case Task::kBlur: {
      BlurParams p;
      p.kernel_size = ranges.blur_sizes[rng.below(ranges.blur_sizes.size())];
      p.kind = ranges.blur_kinds[rng.below(ranges.blur_kinds.size())];
      p.angle_deg = rng.uniform(0.0, 180.0);
      spec.params = p;
      break;
    }
    case Task::kLowlight:
      spec.params = LowlightParams{
          rng.uniform(ranges.lowlight_gamma_min, ranges.lowlight_gamma_max),
          rng.uniform(ranges.lowlight_scale_min, ranges.lowlight_scale_max)};
      break;
  }
  return spec;
}

Tensor gen_clean(std::uint64_t seed, std::size_t size) {
  if (size < kMinCleanSize) {
    throw ConfigError("gen_clean: size must be at least " + std::to_string(kMinCleanSize) +
                      ", got " + std::to_string(size));
  }
  Rng rng(seed);
  const std::size_t plane_size = size * size;
  Tensor image({kImageChannels, size, size});

  // Color ramp along a random direction.
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dir_x = std::cos(theta), dir_y = std::sin(theta);
  std::array<double, kImageChannels> from{}, to{};
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    from[c] = rng.uniform(0.1, 0.9);
    to[c] = rng.uniform(0.1, 0.9);
  }
  const double half = 0.5 * static_cast<double>(size - 1);
  const double reach = half * std::numbers::sqrt2;

  // Smooth random texture.
  const std::size_t radius = std::max<std::size_t>(1, size / 10);
  const double texture_amp = rng.uniform(0.2, 0.5);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    std::vector<double> field(plane_size);
    for (auto& v : field) v = rng.normal();
    for (int pass = 0; pass < 3; ++pass) box_blur_wrap(field, size, radius);
    const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
    const double span = std::max(*hi - *lo, 1e-12);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) - half, py = static_cast<double>(y) - half;
        const double t = 0.5 + 0.5 * (px * dir_x + py * dir_y) / reach;
        const double ramp = from[c] + (to[c] - from[c]) * t;
        const double tex = (field[y * size + x] - *lo) / span - 0.5;
        image.at(c, y, x) = ramp + texture_amp * tex;
      }
  }

  // Shapes: rectangles and discs with random colors.
  const std::size_t shapes = 2 + rng.below(4);
  const double sz = static_cast<double>(size);
  for (std::size_t s = 0; s < shapes; ++s) {
    const bool disc = rng.below(2) == 0;
    const double cx = rng.uniform(0.0, sz), cy = rng.uniform(0.0, sz);
    const double rx = rng.uniform(0.08, 0.3) * sz, ry = rng.uniform(0.08, 0.3) * sz;
    const double alpha = rng.uniform(0.6, 1.0);
    std::array<double, kImageChannels> color{};
    for (auto& v : color) v = rng.uniform(0.0, 1.0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < kImageChannels; ++c) {
          image.at(c, y, x) = (1.0 - alpha) * image.at(c, y, x) + alpha * color[c];
        }
      }
  }

  // Fine luminance grain so that every image carries high-frequency detail.
  const double grain_amp = rng.uniform(0.05, 0.09);
  std::vector<double> grain(plane_size);
  for (auto& v : grain) v = rng.normal();
  box_blur_wrap(grain, size, 1);
  for (std::size_t c = 0; c < kImageChannels; ++c)
    for (std::size_t i = 0; i < plane_size; ++i) image.raw()[c * plane_size + i] += grain_amp * grain[i];

  for (auto& v : image.data()) v = std::clamp(v, 0.0, 1.0) + 0.0;
  return image;
}

Tensor blur_kernel(const BlurParams& params) {
  const auto k = static_cast<std::size_t>(params.kernel_size);
  Tensor kernel({k, k}, 0.0);
  if (params.kind == BlurKind::kBox) {
    kernel.fill(1.0 / static_cast<double>(k * k));
    return kernel;
  }
  // Rasterized line through the center.
  const double angle = params.angle_deg * std::numbers::pi / 180.0;
  const double c = 0.5 * static_cast<double>(k - 1);
  const int samples = 8 * params.kernel_size;
  for (int i = 0; i <= samples; ++i) {
    const double t = (static_cast<double>(i) / samples - 0.5) * static_cast<double>(k - 1);
    const auto x = static_cast<std::size_t>(std::lround(c + t * std::cos(angle)));
    const auto y = static_cast<std::size_t>(std::lround(c + t * std::sin(angle)));
    kernel[y * k + x] = 1.0;
  }
  double total = 0.0;
  for (double v : kernel.data()) total += v;
  for (auto& v : kernel.data()) v /= total;
  return kernel;
}

Tensor apply_degradation_unclipped(const Tensor& clean, const DegradationSpec& spec) {
  validate_spec(spec);
  if (clean.rank() != 3) throw ConfigError("apply_degradation: image must be C×H×W");
  for (double v : clean.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("apply_degradation: clean image outside [0,1]");
  }
  const std::size_t channels = clean.dim(0), height = clean.dim(1), width = clean.dim(2);
  Tensor out = clean;
  Rng rng(spec.seed);

  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, NoiseParams>) {
          for (auto& v : out.data()) v += rng.normal(0.0, p.sigma);
        } else if constexpr (std::is_same_v<P, RainParams>) {
          std::vector<double> mask(height * width, 0.0);
          const double angle = p.angle_deg * std::numbers::pi / 180.0;
          const double dx = std::cos(angle), dy = std::sin(angle);
          const double margin = p.length_px;
          for (int s = 0; s < p.streaks; ++s) {
            const double x0 = rng.uniform(-margin, static_cast<double>(width) + margin);
            const double y0 = rng.uniform(-margin, static_cast<double>(height) + margin);
            const double strength = p.intensity * rng.uniform(0.75, 1.0);
            const int steps = static_cast<int>(std::ceil(p.length_px));
            for (int i = 0; i <= steps; ++i) {
              const double t = static_cast<double>(i) / steps * p.length_px;
              const long x = std::lround(x0 + t * dx), y = std::lround(y0 + t * dy);
              if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height))
                continue;
              double& m = mask[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
              m = std::max(m, strength);
            }
          }
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < height * width; ++i) out[c * height * width + i] += mask[i];
        } else if constexpr (std::is_same_v<P, HazeParams>) {
          for (auto& v : out.data()) v = v * p.transmission + p.airlight * (1.0 - p.transmission);
        } else if constexpr (std::is_same_v<P, BlurParams>) {
          const Tensor kernel = blur_kernel(p);
          const auto k = static_cast<std::ptrdiff_t>(p.kernel_size);
          const std::ptrdiff_t r = k / 2;
          const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);
          for (std::size_t c = 0; c < channels; ++c)
            for (std::ptrdiff_t y = 0; y < h; ++y)
              for (std::ptrdiff_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t ky = 0; ky < k; ++ky)
                  for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                    const std::ptrdiff_t sy = std::clamp(y + ky - r, std::ptrdiff_t{0}, h - 1);
                    const std::ptrdiff_t sx = std::clamp(x + kx - r, std::ptrdiff_t{0}, w - 1);
                    acc += kernel[static_cast<std::size_t>(ky * k + kx)] *
                           clean.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                  }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
              }
        } else {
          for (auto& v : out.data()) v = std::pow(v, p.gamma) * p.scale;
        }
      },
      spec.params);
  return out;
}

Tensor apply_degradation(const Tensor& clean, const DegradationSpec& spec) {
  Tensor out = apply_degradation_unclipped(clean, spec);
  // "+ 0.0" folds -0.0 into +0.0 so clamped images have a canonical byte form.
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0) + 0.0;
  return out;
}

Tensor augment(const Tensor& image, const Augmentation& aug) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw ConfigError("augment: need a square C×H×W image");
  }
  const std::size_t channels = image.dim(0), n = image.dim(1);
  Tensor out({channels, n, n});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        // Map output coordinate back to the source through inverse transforms.
        std::size_t sy = y, sx = x;
        for (int r = 0; r < aug.rot90 % 4; ++r) {
          const std::size_t ty = sx, tx = n - 1 - sy;
          sy = ty;
          sx = tx;
        }
        if (aug.flip_v) sy = n - 1 - sy;
        if (aug.flip_h) sx = n - 1 - sx;
        out.at(c, y, x) = image.at(c, sy, sx);
      }
  return out;
}

std::vector<SampleTriple> make_batch(std::span<const Task> task_mix, std::size_t batch_size,
                                     std::size_t crop_size, std::uint64_t seed,
                                     const BatchOptions& options) {
  if (task_mix.empty()) throw ConfigError("make_batch: task mix is empty");
  if (batch_size == 0) throw ConfigError("make_batch: batch size must be at least 1");
  if (crop_size == 0 || crop_size > options.image_size) {
    throw ConfigError("make_batch: crop " + std::to_string(crop_size) +
                      " exceeds generated size " + std::to_string(options.image_size));
  }
  std::vector<SampleTriple> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t sample_seed = derive_seed(seed, kStreamSample, i);
    const Task task = task_mix[i % task_mix.size()];
    const Tensor full = gen_clean(derive_seed(sample_seed, kStreamClean), options.image_size);

    Rng rng(derive_seed(sample_seed, kStreamCrop));
    const std::size_t slack = options.image_size - crop_size + 1;
    const std::size_t top = rng.below(slack), left = rng.below(slack);
    Augmentation aug;
    if (options.augment) {
      aug.flip_h = rng.below(2) == 1;
      aug.flip_v = rng.below(2) == 1;
      aug.rot90 = static_cast<int>(rng.below(4));
    }

    SampleTriple triple;
    triple.task = task;
    triple.spec = sample_spec(task, options.ranges, derive_seed(sample_seed, kStreamSpec));
    const Tensor clean = crop(full, top, left, crop_size);
    const Tensor degraded = apply_degradation(clean, triple.spec);
    triple.clean = augment(clean, aug);
    triple.degraded = augment(degraded, aug);
    batch.push_back(std::move(triple));
  }
  return batch;
}

void to_json(nlohmann::json& j, const DegradationSpec& spec) {
  j = nlohmann::json{{"task", std::string(task_name(spec.task()))}, {"seed", spec.seed}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, NoiseParams>) {
          j["sigma"] = p.sigma;
        } else if constexpr (std::is_same_v<P, RainParams>) {
          j["streaks"] = p.streaks;
          j["angle_deg"] = p.angle_deg;
          j["length_px"] = p.length_px;
          j["intensity"] = p.intensity;
        } else if constexpr (std::is_same_v<P, HazeParams>) {
          j["transmission"] = p.transmission;
          j["airlight"] = p.airlight;
        } else if constexpr (std::is_same_v<P, BlurParams>) {
          j["kernel_size"] = p.kernel_size;
          j["kind"] = p.kind == BlurKind::kBox ? "box" : "motion";
          j["angle_deg"] = p.angle_deg;
        } else {
          j["gamma"] = p.gamma;
          j["scale"] = p.scale;
        }
      },
      spec.params);
}

void from_json(const nlohmann::json& j, DegradationSpec& spec) {
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    switch (parse_task(j.at("task").get<std::string>())) {
      case Task::kNoise:
        spec.params = NoiseParams{j.at("sigma").get<double>()};
        break;
      case Task::kRain:
        spec.params = RainParams{j.at("streaks").get<int>(), j.at("angle_deg").get<double>(),
                                 j.at("length_px").get<double>(), j.at("intensity").get<double>()};
        break;
      case Task::kHaze:
        spec.params =
            HazeParams{j.at("transmission").get<double>(), j.at("airlight").get<double>()};
        break;
      case Task::kBlur: {
        const auto kind = j.at("kind").get<std::string>();
        if (kind != "box" && kind != "motion") throw ConfigError("unknown blur kind " + kind);
        spec.params = BlurParams{j.at("kernel_size").get<int>(),
                                 kind == "box" ? BlurKind::kBox : BlurKind::kMotion,
                                 j.at("angle_deg").get<double>()};
        break;
      }
      case Task::kLowlight:
        spec.params = LowlightParams{j.at("gamma").get<double>(), j.at("scale").get<double>()};
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("degradation spec: ") + e.what());
  }
}

}  // namespace cpl
