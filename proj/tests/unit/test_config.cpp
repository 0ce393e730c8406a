#include <gtest/gtest.h>

#include <fstream>

#include "cpl/config.hpp"
#include "cpl/error.hpp"
#include "support.hpp"

namespace cpl {
namespace {

using nlohmann::json;

std::string config_error(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(Config, DefaultsMatchTrainConfig) {
  const RunConfig c = parse_run_config(json::object());
  EXPECT_EQ(to_json(c.train), to_json(TrainConfig{}));
  EXPECT_EQ(c.output_dir, "run");
  EXPECT_EQ(c.train.lr, 2e-4);
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.negatives, 4u);
}

TEST(Config, EffectiveConfigRoundTrips) {
  TrainConfig t;
  t.tasks = {Task::kHaze, Task::kBlur};
  t.alpha = 0.5;
  t.lr_schedule = LrSchedule::kCosine;
  t.gate_gradient = GateGradient::kRenormalized;
  t.backbone.base_channels = 8;
  t.ranges.blur_kinds = {BlurKind::kMotion};
  t.ranges.haze_t_min = 0.4;
  const RunConfig r{t, "out/dir"};
  const json j = to_json(r);
  const RunConfig back = parse_run_config(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.output_dir, "out/dir");
}

TEST(Config, UnknownKeysAreNamed) {
  EXPECT_NE(config_error({{"stepz", 3}}).find("'stepz'"), std::string::npos);
  EXPECT_NE(config_error({{"backbone", {{"width", 3}}}}).find("'backbone.width'"),
            std::string::npos);
  EXPECT_NE(config_error({{"degradations", {{"snow", 1}}}}).find("'degradations.snow'"),
            std::string::npos);
}

TEST(Config, TypeErrorsNameTheKey) {
  EXPECT_NE(config_error({{"steps", "ten"}}).find("steps"), std::string::npos);
  EXPECT_NE(config_error({{"steps", -1}}).find("steps"), std::string::npos);
  EXPECT_NE(config_error({{"augment", 1}}).find("augment"), std::string::npos);
  EXPECT_NE(config_error({{"tasks", {"fog"}}}).find("fog"), std::string::npos);
  EXPECT_NE(config_error({{"degradations", {{"haze_transmission", {0.1}}}}})
                .find("haze_transmission"),
            std::string::npos);
  EXPECT_NE(config_error({{"gate_gradient", "soft"}}).find("gate_gradient"), std::string::npos);
}

TEST(Config, ValidationRunsAfterParsing) {
  EXPECT_NE(config_error({{"experts", 3}, {"negatives", 4}}).find("negatives"),
            std::string::npos);
  EXPECT_NE(config_error({{"degradations", {{"noise_sigmas", {30}}}}}).find("sigma"),
            std::string::npos);
}

TEST(Config, LoadFromFile) {
  const auto dir = test::scratch_dir("config_load");
  std::ofstream(dir / "ok.json") << R"({"steps": 7, "seed": 9})";
  const RunConfig c = load_run_config(dir / "ok.json");
  EXPECT_EQ(c.train.steps, 7u);
  EXPECT_EQ(c.train.seed, 9u);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), IoError);
}

TEST(Config, GateGradientNames) {
  for (GateGradient g : {GateGradient::kRenormalized, GateGradient::kStraightThrough})
    EXPECT_EQ(parse_gate_gradient(gate_gradient_name(g)), g);
}

}  // namespace
}  // namespace cpl
