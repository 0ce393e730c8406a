#include "cpl/config.hpp"

#include <cstdint>
#include <fstream>
#include <set>

#include "cpl/error.hpp"

namespace cpl {

namespace {

using nlohmann::json;

std::string blur_kind_name(BlurKind kind) { return kind == BlurKind::kBox ? "box" : "motion"; }

BlurKind parse_blur_kind(const std::string& name, const std::string& path) {
  if (name == "box") return BlurKind::kBox;
  if (name == "motion") return BlurKind::kMotion;
  throw ConfigError(path + ": unknown blur kind '" + name + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

// Reads j[key] into out when present; type errors name the key.
template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string path = where.empty() ? key : where + "." + key;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
        throw ConfigError(path + ": expected a non-negative integer");
      }
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) throw ConfigError(path + ": expected an integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(path + ": expected a boolean");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(path + ": expected a number");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <typename T>
void read_range(const json& j, const char* key, T& lo, T& hi, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string path = where + "." + key;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
    throw ConfigError(path + ": expected [min, max]");
  }
  if constexpr (std::is_integral_v<T>) {
    if (!(*it)[0].is_number_integer() || !(*it)[1].is_number_integer()) {
      throw ConfigError(path + ": expected integer bounds");
    }
  }
  lo = (*it)[0].get<T>();
  hi = (*it)[1].get<T>();
}

json ranges_json(const DegradationRanges& r) {
  json kinds = json::array();
  for (BlurKind k : r.blur_kinds) kinds.push_back(blur_kind_name(k));
  return json{{"noise_sigmas", r.noise_sigmas_255},
              {"rain_streaks", {r.rain_streaks_min, r.rain_streaks_max}},
              {"rain_angle_deg", {r.rain_angle_min, r.rain_angle_max}},
              {"rain_length_px", {r.rain_length_min, r.rain_length_max}},
              {"rain_intensity", {r.rain_intensity_min, r.rain_intensity_max}},
              {"haze_transmission", {r.haze_t_min, r.haze_t_max}},
              {"haze_airlight", {r.haze_airlight_min, r.haze_airlight_max}},
              {"blur_sizes", r.blur_sizes},
              {"blur_kinds", kinds},
              {"lowlight_gamma", {r.lowlight_gamma_min, r.lowlight_gamma_max}},
              {"lowlight_scale", {r.lowlight_scale_min, r.lowlight_scale_max}}};
}

DegradationRanges parse_ranges(const json& j) {
  const std::string w = "degradations";
  reject_unknown(j,
                 {"noise_sigmas", "rain_streaks", "rain_angle_deg", "rain_length_px",
                  "rain_intensity", "haze_transmission", "haze_airlight", "blur_sizes",
                  "blur_kinds", "lowlight_gamma", "lowlight_scale"},
                 w);
  DegradationRanges r;
  if (j.contains("noise_sigmas")) {
    const json& s = j["noise_sigmas"];
    if (!s.is_array()) throw ConfigError(w + ".noise_sigmas: expected an array");
    r.noise_sigmas_255.clear();
    for (const json& v : s) {
      if (!v.is_number()) throw ConfigError(w + ".noise_sigmas: expected numbers");
      r.noise_sigmas_255.push_back(v.get<double>());
    }
  }
  read_range(j, "rain_streaks", r.rain_streaks_min, r.rain_streaks_max, w);
  read_range(j, "rain_angle_deg", r.rain_angle_min, r.rain_angle_max, w);
  read_range(j, "rain_length_px", r.rain_length_min, r.rain_length_max, w);
  read_range(j, "rain_intensity", r.rain_intensity_min, r.rain_intensity_max, w);
  read_range(j, "haze_transmission", r.haze_t_min, r.haze_t_max, w);
  read_range(j, "haze_airlight", r.haze_airlight_min, r.haze_airlight_max, w);
  if (j.contains("blur_sizes")) {
    const json& s = j["blur_sizes"];
    if (!s.is_array()) throw ConfigError(w + ".blur_sizes: expected an array");
    r.blur_sizes.clear();
    for (const json& v : s) {
      if (!v.is_number_integer()) throw ConfigError(w + ".blur_sizes: expected integers");
      r.blur_sizes.push_back(v.get<int>());
    }
  }
  if (j.contains("blur_kinds")) {
    const json& s = j["blur_kinds"];
    if (!s.is_array()) throw ConfigError(w + ".blur_kinds: expected an array");
    r.blur_kinds.clear();
    for (const json& v : s) {
      if (!v.is_string()) throw ConfigError(w + ".blur_kinds: expected strings");
      r.blur_kinds.push_back(parse_blur_kind(v.get<std::string>(), w + ".blur_kinds"));
    }
  }
  read_range(j, "lowlight_gamma", r.lowlight_gamma_min, r.lowlight_gamma_max, w);
  read_range(j, "lowlight_scale", r.lowlight_scale_min, r.lowlight_scale_max, w);
  return r;
}

}  // namespace

std::string gate_gradient_name(GateGradient mode) {
  return mode == GateGradient::kRenormalized ? "renormalized" : "straight_through";
}

GateGradient parse_gate_gradient(const std::string& name) {
  if (name == "renormalized") return GateGradient::kRenormalized;
  if (name == "straight_through") return GateGradient::kStraightThrough;
  throw ConfigError("gate_gradient: unknown mode '" + name + "'");
}

json to_json(const TrainConfig& c) {
  json tasks = json::array();
  for (Task t : c.tasks) tasks.push_back(std::string(task_name(t)));
  return json{{"tasks", tasks},
              {"steps", c.steps},
              {"batch_size", c.batch_size},
              {"crop", c.crop},
              {"image_size", c.image_size},
              {"lr", c.lr},
              {"lr_schedule", c.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant"},
              {"alpha", c.alpha},
              {"experts", c.experts},
              {"top_k", c.top_k},
              {"negatives", c.negatives},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"log_every", c.log_every},
              {"augment", c.augment},
              {"stop_positive_in_neg", c.stop_positive_in_neg},
              {"neg_margin", c.neg_margin},
              {"gate_gradient", gate_gradient_name(c.gate_gradient)},
              {"backbone",
               {{"base_channels", c.backbone.base_channels},
                {"depth", c.backbone.depth},
                {"prompt_dim", c.backbone.prompt_dim},
                {"image_channels", c.backbone.image_channels}}},
              {"degradations", ranges_json(c.ranges)}};
}

json to_json(const RunConfig& c) {
  json j = to_json(c.train);
  j["output_dir"] = c.output_dir;
  return j;
}

namespace {

TrainConfig parse_train_fields(const json& j) {
  TrainConfig c;
  const std::string w;
  if (j.contains("tasks")) {
    const json& t = j["tasks"];
    if (!t.is_array()) throw ConfigError("tasks: expected an array of task names");
    c.tasks.clear();
    for (const json& v : t) {
      if (!v.is_string()) throw ConfigError("tasks: expected task names");
      c.tasks.push_back(parse_task(v.get<std::string>()));
    }
  }
  read(j, "steps", c.steps, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "crop", c.crop, w);
  read(j, "image_size", c.image_size, w);
  read(j, "lr", c.lr, w);
  if (j.contains("lr_schedule")) {
    const json& s = j["lr_schedule"];
    if (s == "constant") {
      c.lr_schedule = LrSchedule::kConstant;
    } else if (s == "cosine") {
      c.lr_schedule = LrSchedule::kCosine;
    } else {
      throw ConfigError("lr_schedule: expected \"constant\" or \"cosine\"");
    }
  }
  read(j, "alpha", c.alpha, w);
  read(j, "experts", c.experts, w);
  read(j, "top_k", c.top_k, w);
  read(j, "negatives", c.negatives, w);
  read(j, "seed", c.seed, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  read(j, "log_every", c.log_every, w);
  read(j, "augment", c.augment, w);
  read(j, "stop_positive_in_neg", c.stop_positive_in_neg, w);
  read(j, "neg_margin", c.neg_margin, w);
  if (j.contains("gate_gradient")) {
    if (!j["gate_gradient"].is_string()) throw ConfigError("gate_gradient: expected a string");
    c.gate_gradient = parse_gate_gradient(j["gate_gradient"].get<std::string>());
  }
  if (j.contains("backbone")) {
    const json& b = j["backbone"];
    reject_unknown(b, {"base_channels", "depth", "prompt_dim", "image_channels"}, "backbone");
    read(b, "base_channels", c.backbone.base_channels, "backbone");
    read(b, "depth", c.backbone.depth, "backbone");
    read(b, "prompt_dim", c.backbone.prompt_dim, "backbone");
    read(b, "image_channels", c.backbone.image_channels, "backbone");
  }
  if (j.contains("degradations")) c.ranges = parse_ranges(j["degradations"]);
  return c;
}

const std::set<std::string> kTrainKeys = {
    "tasks",      "steps",          "batch_size", "crop",         "image_size",
    "lr",         "lr_schedule",    "alpha",      "experts",      "top_k",
    "negatives",  "seed",           "checkpoint_every",           "log_every",
    "augment",    "stop_positive_in_neg",         "neg_margin",   "gate_gradient",
    "backbone",   "degradations"};

}  // namespace

TrainConfig parse_train_config(const json& j) {
  reject_unknown(j, kTrainKeys, "");
  TrainConfig c = parse_train_fields(j);
  c.validate();
  return c;
}

RunConfig parse_run_config(const json& j) {
  std::set<std::string> keys = kTrainKeys;
  keys.insert("output_dir");
  reject_unknown(j, keys, "");
  RunConfig c;
  c.train = parse_train_fields(j);
  read(j, "output_dir", c.output_dir, "");
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace cpl
