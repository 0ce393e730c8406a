#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cpl/analysis.hpp"
#include "cpl/checkpoint.hpp"
#include "cpl/error.hpp"
#include "cpl/tensor_io.hpp"
#include "cpl_cli/commands.hpp"
#include "support.hpp"

namespace cpl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result cpl(std::vector<std::string> args) {
  args.insert(args.begin(), "cpl");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_bytes(p);
  return {bytes.begin(), bytes.end()};
}

fs::path write_config(const fs::path& dir, const json& extra = json::object()) {
  json j = {{"backbone", {{"base_channels", 4}, {"prompt_dim", 8}}},
            {"crop", 16},
            {"image_size", 16},
            {"batch_size", 3},
            {"steps", 3}};
  j.update(extra);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump();
  return p;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// Scoped CPL_SEED value.
struct EnvSeed {
  explicit EnvSeed(const char* v) { ::setenv("CPL_SEED", v, 1); }
  ~EnvSeed() { ::unsetenv("CPL_SEED"); }
};

// Subset of JSON Schema: type, const, enum, minimum, maximum, required,
// properties, items. Returns the first violation or an empty string.
bool has_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "null") return v.is_null();
  if (type == "boolean") return v.is_boolean();
  return false;
}

std::string schema_violation(const json& v, const json& schema, const std::string& at) {
  if (schema.contains("type")) {
    const json& t = schema["type"];
    bool ok = false;
    if (t.is_string()) ok = has_type(v, t);
    for (const json& alt : t.is_array() ? t : json::array()) ok = ok || has_type(v, alt);
    if (!ok) return at + ": wrong type";
  }
  if (schema.contains("const") && v != schema["const"]) return at + ": const mismatch";
  if (schema.contains("enum") &&
      std::find(schema["enum"].begin(), schema["enum"].end(), v) == schema["enum"].end()) {
    return at + ": not in enum";
  }
  if (v.is_number()) {
    if (schema.contains("minimum") && v.get<double>() < schema["minimum"].get<double>()) return at + ": below minimum";
    if (schema.contains("maximum") && v.get<double>() > schema["maximum"].get<double>()) return at + ": above maximum";
  }
  if (v.is_object()) {
    const json required = schema.value("required", json::array());
    const json properties = schema.value("properties", json::object());
    for (const json& key : required)
      if (!v.contains(key.get<std::string>())) return at + ": missing " + key.get<std::string>();
    for (const auto& [key, sub] : properties.items())
      if (v.contains(key))
        if (auto e = schema_violation(v[key], sub, at + "." + key); !e.empty()) return e;
  }
  if (v.is_array() && schema.contains("items"))
    for (std::size_t i = 0; i < v.size(); ++i)
      if (auto e = schema_violation(v[i], schema["items"], at + "[" + std::to_string(i) + "]"); !e.empty()) return e;
  return "";
}

TEST(Cli, GenDataEmptyCount) {
  const auto dir = test::scratch_dir("cli_gen_empty");
  const auto r = cpl({"gen-data", "--config", write_config(dir).string(), "--out",
                      (dir / "data").string(), "--count", "0"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(dir / "data" / "manifest.jsonl"), "");
}

TEST(Cli, GenDataRoundRobinAndIdempotent) {
  const auto dir = test::scratch_dir("cli_gen");
  const auto cfg = write_config(
      dir, {{"tasks", {"noise", "rain", "haze", "blur", "lowlight"}}, {"seed", 4}});
  ASSERT_EQ(cpl({"gen-data", "--config", cfg.string(), "--out", (dir / "a").string(), "--count",
                 "10"})
                .code,
            0);
  ASSERT_EQ(cpl({"gen-data", "--config", cfg.string(), "--out", (dir / "b").string(), "--count",
                 "10"})
                .code,
            0);
  EXPECT_EQ(read_text(dir / "a" / "manifest.jsonl"), read_text(dir / "b" / "manifest.jsonl"));
  const auto lines = read_jsonl(dir / "a" / "manifest.jsonl");
  ASSERT_EQ(lines.size(), 10u);
  std::map<std::string, int> per_task;
  for (const json& j : lines) {
    ++per_task[j["task"].get<std::string>()];
    const Tensor d = load_tensor(dir / "a" / j["degraded"].get<std::string>());
    const Tensor c = load_tensor(dir / "a" / j["clean"].get<std::string>());
    EXPECT_EQ(d.shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(read_bytes(dir / "a" / j["degraded"].get<std::string>()),
              read_bytes(dir / "b" / j["degraded"].get<std::string>()));
    EXPECT_EQ(c.shape(), d.shape());
  }
  for (const auto& [task, n] : per_task) EXPECT_EQ(n, 2) << task;
  EXPECT_EQ(per_task.size(), 5u);
  const auto other = cpl({"gen-data", "--config", cfg.string(), "--out", (dir / "c").string(),
                          "--count", "10", "--seed", "5"});
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(read_text(dir / "a" / "manifest.jsonl"), read_text(dir / "c" / "manifest.jsonl"));
}

TEST(Cli, ConfigErrorsExitTwoAndNameTheKey) {
  const auto dir = test::scratch_dir("cli_badkey");
  const auto r = cpl({"train", "--config", write_config(dir, {{"alpah", 0.1}}).string(), "--out",
                      (dir / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'alpah'"), std::string::npos) << r.err;
  EXPECT_EQ(cpl({"train"}).code, 2);
  EXPECT_EQ(cpl({"frobnicate"}).code, 2);
  EXPECT_EQ(cpl({"grad-check", "--scope", "everything"}).code, 2);
}

TEST(Cli, MissingFilesExitFour) {
  const auto dir = test::scratch_dir("cli_missing");
  EXPECT_EQ(cpl({"eval", "--checkpoint", (dir / "nope.ckpt").string()}).code, 4);
  EXPECT_EQ(cpl({"train", "--config", (dir / "nope.json").string()}).code, 4);
  EXPECT_EQ(cpl({"gate-report", "--log", (dir / "nope.jsonl").string()}).code, 4);
}

TEST(Cli, TrainZeroStepsWritesInitCheckpointOnly) {
  const auto dir = test::scratch_dir("cli_zero");
  const auto run = dir / "run";
  const auto r = cpl({"train", "--config", write_config(dir).string(), "--steps", "0", "--out",
                      run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> files;
  for (const auto& f : fs::directory_iterator(run / "checkpoints"))
    files.push_back(f.path().filename().string());
  EXPECT_EQ(files, std::vector<std::string>{"final.ckpt"});
  EXPECT_EQ(read_text(run / "metrics.jsonl"), "");
  const auto state = load_checkpoint(run / "checkpoints" / "final.ckpt");
  EXPECT_EQ(state->step, 0u);
  const json effective = json::parse(read_text(run / "effective_config.json"));
  EXPECT_EQ(effective["steps"], 0);
  EXPECT_EQ(effective["lr"], 2e-4);
  EXPECT_EQ(effective["output_dir"], "run");

  // Evaluating the identity network reproduces its input exactly.
  const auto e = cpl({"eval", "--checkpoint", (run / "checkpoints" / "final.ckpt").string(),
                      "--synthetic", "3", "--mismatch", "--out", (dir / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const json report = json::parse(read_text(dir / "eval" / "report.json"));
  EXPECT_EQ(report["report_version"], 1);
  EXPECT_EQ(report["tasks"].size(), 3u);
  for (const json& t : report["tasks"]) {
    EXPECT_EQ(t["psnr_vs_input"], kPsnrCap);
    EXPECT_EQ(t["max_residual"], 0.0);
    EXPECT_EQ(t["samples"], 3);
    for (const char* key : {"task", "psnr_degraded", "psnr_matched", "ssim_matched", "l1_matched",
                            "psnr_forced", "min_mismatch_gap_db", "entropy_bits_mean",
                            "entropy_bits_std", "assignment"})
      EXPECT_TRUE(t.contains(key)) << key;
  }
  for (const char* key : {"experts", "top_k", "param_count", "step", "mean_l1", "config"})
    EXPECT_TRUE(report.contains(key)) << key;
  const json schema = json::parse(read_text(CPL_REPORT_SCHEMA));
  EXPECT_EQ(schema_violation(report, schema, "report"), "");
  json broken = report;
  broken["tasks"][0].erase("assignment");
  EXPECT_NE(schema_violation(broken, schema, "report"), "");
  EXPECT_TRUE(fs::exists(dir / "eval" / "residuals"));
}

TEST(Cli, TrainEvalFromGeneratedData) {
  const auto dir = test::scratch_dir("cli_data");
  const auto cfg = write_config(dir);
  ASSERT_EQ(cpl({"gen-data", "--config", cfg.string(), "--out", (dir / "data").string(),
                 "--count", "4"})
                .code,
            0);
  ASSERT_EQ(cpl({"train", "--config", cfg.string(), "--out", (dir / "run").string()}).code, 0);
  EXPECT_EQ(read_jsonl(dir / "run" / "metrics.jsonl").size(), 3u);
  EXPECT_EQ(read_jsonl(dir / "run" / "gates.jsonl").size(), 9u);
  const auto r = cpl({"eval", "--checkpoint", (dir / "run" / "checkpoints" / "final.ckpt").string(),
                      "--data", (dir / "data").string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = json::parse(read_text(dir / "eval" / "report.json"));
  EXPECT_EQ(report["step"], 3);
  std::size_t samples = 0;
  for (const json& t : report["tasks"]) samples += t["samples"].get<std::size_t>();
  EXPECT_EQ(samples, 4u);
}

TEST(Cli, ResumeReproducesUninterruptedRun) {
  const auto dir = test::scratch_dir("cli_resume");
  const auto cfg = write_config(dir, {{"steps", 4}, {"checkpoint_every", 2}});
  ASSERT_EQ(cpl({"train", "--config", cfg.string(), "--out", (dir / "full").string()}).code, 0);
  ASSERT_EQ(cpl({"train", "--config", cfg.string(), "--out", (dir / "part").string(),
                 "--stop-after", "2"})
                .code,
            0);
  const auto r = cpl({"train", "--config", cfg.string(), "--out", (dir / "part").string(),
                      "--resume", (dir / "part" / "checkpoints" / "step_2.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_bytes(dir / "full" / "checkpoints" / "final.ckpt"),
            read_bytes(dir / "part" / "checkpoints" / "final.ckpt"));
  EXPECT_EQ(read_text(dir / "full" / "metrics.jsonl"), read_text(dir / "part" / "metrics.jsonl"));
  EXPECT_EQ(read_text(dir / "full" / "gates.jsonl"), read_text(dir / "part" / "gates.jsonl"));

  const auto other = write_config(dir, {{"steps", 4}, {"alpha", 0.5}});
  EXPECT_EQ(cpl({"train", "--config", other.string(), "--out", (dir / "x").string(), "--resume",
                 (dir / "part" / "checkpoints" / "step_2.ckpt").string()})
                .code,
            2);
}

TEST(Cli, SeedPrecedence) {
  const auto dir = test::scratch_dir("cli_seed");
  std::ofstream(dir / "plain.json") << "{}";
  std::ofstream(dir / "seeded.json") << R"({"seed": 11})";
  EXPECT_EQ(cli::resolve_config(dir / "plain.json", std::nullopt).train.seed, 0u);
  {
    const EnvSeed env("23");
    EXPECT_EQ(cli::resolve_config(dir / "plain.json", std::nullopt).train.seed, 23u);
    EXPECT_EQ(cli::resolve_config(dir / "seeded.json", std::nullopt).train.seed, 11u);
    EXPECT_EQ(cli::resolve_config(dir / "seeded.json", 5).train.seed, 5u);
  }
  {
    const EnvSeed env("abc");
    EXPECT_THROW(cli::resolve_config(dir / "plain.json", std::nullopt), ConfigError);
  }
}

void write_log(const fs::path& p, const std::vector<double>& probs, int per_task) {
  std::ofstream out(p);
  const GateDecision d = decide(Tensor::vector({0, 0, 0, 0, 0}), 1);
  for (int i = 0; i < per_task; ++i)
    for (const char* task : {"noise", "rain"}) {
      json j = d;
      j["dense_probs"] = probs;
      j["entropy_bits"] = entropy_bits(probs);
      j["task"] = task;
      out << j.dump() << '\n';
    }
}

TEST(Cli, GateReportTables) {
  const auto dir = test::scratch_dir("cli_gate");
  write_log(dir / "onehot.jsonl", {0, 0, 1, 0, 0}, 100);
  write_log(dir / "uniform.jsonl", {0.2, 0.2, 0.2, 0.2, 0.2}, 100);
  ASSERT_EQ(cpl({"gate-report", "--log", (dir / "onehot.jsonl").string(), "--out",
                 (dir / "a").string()})
                .code,
            0);
  ASSERT_EQ(cpl({"gate-report", "--log", (dir / "uniform.jsonl").string(), "--out",
                 (dir / "b").string()})
                .code,
            0);
  EXPECT_EQ(read_text(dir / "a" / "entropy.csv"),
            "task,count,mean_bits,stddev_bits\nnoise,100,0,0\nrain,100,0,0\n");
  std::istringstream csv(read_text(dir / "b" / "entropy.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    const double mean = std::stod(line.substr(line.find(',', line.find(',') + 1) + 1));
    EXPECT_NEAR(mean, 2.3219, 5e-5);
  }
  const json assignment = json::parse(read_text(dir / "a" / "assignment.json"));
  EXPECT_EQ(assignment["noise"]["dominant_expert"], 2);
  EXPECT_EQ(assignment["noise"]["dominant_frequency"], 1.0);
  const Tensor map = load_pixmap(dir / "a" / "selection_noise.pgm");
  EXPECT_EQ(map.shape(), (Shape{1, 100, 20}));

  std::ofstream(dir / "empty.jsonl") << "";
  EXPECT_EQ(cpl({"gate-report", "--log", (dir / "empty.jsonl").string()}).code, 2);
}

TEST(Cli, GradCheckExitCodes) {
  const auto ok = cpl({"grad-check", "--scope", "linear"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const auto bad = cpl({"grad-check", "--scope", "linear", "--inject-fault"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace cpl
