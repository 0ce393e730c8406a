#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cpl/checkpoint.hpp"
#include "cpl/error.hpp"
#include "cpl/trainer.hpp"
#include "support.hpp"

namespace cpl {
namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.backbone.base_channels = 4;
  c.backbone.prompt_dim = 8;
  c.crop = 16;
  c.image_size = 16;
  c.batch_size = 3;
  c.steps = 4;
  c.seed = 3;
  return c;
}

std::vector<Tensor> snapshot(const TrainState& s) {
  std::vector<Tensor> out;
  for (const Parameter* p : s.model.parameters()) out.push_back(p->value);
  return out;
}

bool same_params(const TrainState& a, const TrainState& b) {
  const auto pa = snapshot(a), pb = snapshot(b);
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bitwise_equal(pa[i], pb[i])) return false;
  return true;
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.negatives = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.top_k = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.crop = 12;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.tasks.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, CosineSchedule) {
  TrainConfig c = tiny_config();
  EXPECT_EQ(c.lr_scale(2), 1.0);
  c.lr_schedule = LrSchedule::kCosine;
  EXPECT_DOUBLE_EQ(c.lr_scale(0), 1.0);
  EXPECT_NEAR(c.lr_scale(2), 0.5, 1e-15);
  EXPECT_NEAR(c.lr_scale(4), 0.0, 1e-15);
}

TEST(Trainer, PlainL1ReductionIsBitIdentical) {
  TrainConfig c = tiny_config();
  c.alpha = 0.0;
  c.negatives = 0;
  TrainState a(c), b(c);
  for (int step = 0; step < 3; ++step) {
    const auto batch = make_batch(c.tasks, c.batch_size, c.crop, 100 + step, c.batch_options());
    train_step(a, batch, 7);
    l1_train_step(b, batch);
    ASSERT_TRUE(same_params(a, b)) << step;
  }
}

TEST(Trainer, StepIsDeterministic) {
  const TrainConfig c = tiny_config();
  TrainState a(c), b(c);
  const auto batch = make_batch(c.tasks, c.batch_size, c.crop, 5, c.batch_options());
  const auto ra = train_step(a, batch, 9);
  const auto rb = train_step(b, batch, 9);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_EQ(ra.terms.total, rb.terms.total);
  EXPECT_EQ(a.step, 1u);
}

TEST(Trainer, LossTermsDecompose) {
  const TrainConfig c = tiny_config();
  TrainState s(c);
  for (int step = 0; step < 3; ++step) {
    const auto seeds = next_step_seeds(s);
    const auto batch = make_batch(c.tasks, c.batch_size, c.crop, seeds.batch, c.batch_options());
    const auto r = train_step(s, batch, seeds.negatives);
    EXPECT_NEAR(r.terms.l_cpr, r.terms.l_pos - r.terms.l_neg, 1e-9);
    EXPECT_NEAR(r.terms.total, r.terms.l_pixel + c.alpha * r.terms.l_cpr, 1e-9);
    EXPECT_EQ(r.decisions.size(), c.batch_size);
    if (step == 0) EXPECT_EQ(r.terms.l_neg, 0.0);
  }
}

TEST(Trainer, FrozenExtractorAndParametersMove) {
  const TrainConfig c = tiny_config();
  TrainState s(c);
  const auto before = snapshot(s);
  const auto phi = s.model.phi().weights();
  const auto batch = make_batch(c.tasks, c.batch_size, c.crop, 1, c.batch_options());
  train_step(s, batch, 2);
  EXPECT_EQ(s.model.phi().weights(), phi);
  EXPECT_EQ(s.model.phi_fingerprint(), s.phi_fingerprint);
  const auto after = snapshot(s);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) moved += !(before[i] == after[i]);
  EXPECT_GT(moved, 0u);
}

TEST(Trainer, NonFiniteParametersAbortTheStep) {
  const TrainConfig c = tiny_config();
  TrainState s(c);
  for (Parameter* p : s.model.parameters())
    if (p->name == "head.bias") p->value[0] = std::nan("");
  const auto batch = make_batch(c.tasks, c.batch_size, c.crop, 1, c.batch_options());
  EXPECT_THROW(train_step(s, batch, 2), NumericError);
  EXPECT_EQ(s.step, 0u);
}

TEST(Trainer, EmptyBatchIsRejected) {
  TrainState s(tiny_config());
  EXPECT_THROW(train_step(s, std::vector<SampleTriple>{}, 0), ConfigError);
}

TEST(Trainer, ZeroStepsKeepsInitialization) {
  TrainConfig c = tiny_config();
  c.steps = 0;
  TrainState s(c);
  const auto dir = test::scratch_dir("trainer_zero");
  train_loop(s, {nullptr, nullptr, dir});
  const auto loaded = load_checkpoint(dir / "final.ckpt");
  EXPECT_TRUE(same_params(*loaded, TrainState(c)));
  EXPECT_EQ(loaded->step, 0u);
}

TEST(Trainer, LoopLogsAndIsReproducible) {
  const TrainConfig c = tiny_config();
  std::ostringstream m1, g1, m2, g2;
  TrainState a(c), b(c);
  train_loop(a, {&m1, &g1, {}});
  train_loop(b, {&m2, &g2, {}});
  EXPECT_EQ(m1.str(), m2.str());
  EXPECT_EQ(g1.str(), g2.str());
  std::istringstream lines(m1.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"].get<std::size_t>(), count);
    for (const char* key : {"l_pixel", "l_pos", "l_neg", "l_cpr", "total", "mean_entropy_bits",
                            "gate_argmax_histogram"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++count;
  }
  EXPECT_EQ(count, c.steps);
  EXPECT_TRUE(same_params(a, b));
}

TEST(Trainer, InterruptAndResumeMatchesUninterrupted) {
  TrainConfig c = tiny_config();
  c.steps = 5;
  TrainState full(c);
  std::ostringstream full_log;
  train_loop(full, {&full_log, nullptr, {}});

  const auto dir = test::scratch_dir("trainer_resume");
  std::ostringstream part_log;
  TrainState first(c);
  train_loop(first, {&part_log, nullptr, dir, 2});
  EXPECT_EQ(first.step, 2u);
  auto resumed = load_checkpoint(dir / "final.ckpt");
  train_loop(*resumed, {&part_log, nullptr, {}});
  EXPECT_TRUE(same_params(full, *resumed));
  EXPECT_EQ(part_log.str(), full_log.str());
  EXPECT_EQ(serialize_checkpoint(full), serialize_checkpoint(*resumed));
}

TEST(Trainer, LoopSurfacesWriteFailuresWithStep) {
  const TrainConfig c = tiny_config();
  TrainState s(c);
  try {
    train_loop(s, {nullptr, nullptr, "/proc/definitely/not/writable"});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("step 4"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace cpl
