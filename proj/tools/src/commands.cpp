#include "cpl_cli/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "cpl/analysis.hpp"
#include "cpl/checkpoint.hpp"
#include "cpl/error.hpp"
#include "cpl/tensor_io.hpp"
#include "cpl_cli/gradcheck_suite.hpp"

namespace cpl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamGenData = 41;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("CPL_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError("CPL_SEED must be a non-negative integer");
  return s;
}

std::ofstream open_log(const fs::path& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  return out;
}

// Config keys compared on resume; steps may be extended.
json resume_key(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("steps");
  j.erase("checkpoint_every");
  j.erase("log_every");
  return j;
}

}  // namespace

RunConfig resolve_config(const fs::path& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (seed) {
    j["seed"] = *seed;
  } else if (!j.contains("seed")) {
    if (auto s = env_seed()) j["seed"] = *s;
  }
  return parse_run_config(j);
}

void gen_data(const GenDataArgs& args, std::ostream& log) {
  const RunConfig rc = resolve_config(args.config, args.seed);
  const TrainConfig& c = rc.train;
  ensure_dir(args.out);
  std::ostringstream manifest;
  if (args.count > 0) {
    const auto batch = make_batch(c.tasks, args.count, c.crop, derive_seed(c.seed, kStreamGenData),
                                  c.batch_options());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const SampleTriple& s = batch[i];
      std::ostringstream stem;
      stem << std::setw(6) << std::setfill('0') << i << '_' << task_name(s.task);
      const std::string degraded = stem.str() + "_degraded.tensor";
      const std::string clean = stem.str() + "_clean.tensor";
      save_tensor(s.degraded, args.out / degraded);
      save_tensor(s.clean, args.out / clean);
      manifest << json{{"index", i},
                       {"task", std::string(task_name(s.task))},
                       {"degraded", degraded},
                       {"clean", clean},
                       {"spec", s.spec},
                       {"seed", s.spec.seed}}
                      .dump()
               << '\n';
    }
  }
  write_text(args.out / "manifest.jsonl", manifest.str());
  log << "wrote " << args.count << " samples to " << args.out.string() << '\n';
}

void train(const TrainArgs& args, std::ostream& log) {
  RunConfig rc = resolve_config(args.config, args.seed);
  if (args.steps) rc.train.steps = *args.steps;
  rc.train.validate();
  const fs::path out = args.out ? *args.out : fs::path(rc.output_dir);
  ensure_dir(out);
  ensure_dir(out / "checkpoints");

  std::unique_ptr<TrainState> state;
  if (args.resume) {
    state = load_checkpoint(*args.resume);
    if (resume_key(state->config) != resume_key(rc.train)) {
      throw ConfigError("resume: checkpoint config differs from " + args.config.string());
    }
    state->config.steps = rc.train.steps;
    state->config.checkpoint_every = rc.train.checkpoint_every;
    state->config.log_every = rc.train.log_every;
  } else {
    state = std::make_unique<TrainState>(rc.train);
  }
  write_text(out / "effective_config.json", to_json(rc).dump(2) + "\n");

  std::ofstream metrics = open_log(out / "metrics.jsonl", args.resume.has_value());
  std::ofstream gates = open_log(out / "gates.jsonl", args.resume.has_value());
  LoopOutputs outputs;
  outputs.metrics = &metrics;
  outputs.gate_log = &gates;
  outputs.checkpoint_dir = out / "checkpoints";
  outputs.stop_after = args.stop_after;
  log << "training from step " << state->step << " to " << state->config.steps << " ("
      << state->model.param_count() << " parameters)\n";
  train_loop(*state, outputs);
  log << "finished at step " << state->step << "; checkpoint "
      << (outputs.checkpoint_dir / "final.ckpt").string() << '\n';
}

void eval(const EvalArgs& args, std::ostream& log) {
  if (!fs::exists(args.checkpoint)) throw IoError("missing checkpoint " + args.checkpoint.string());
  const auto state = load_checkpoint(args.checkpoint);
  const TrainConfig& c = state->config;

  std::vector<EvalSample> samples;
  if (args.data) {
    std::ifstream manifest(*args.data / "manifest.jsonl");
    if (!manifest) throw IoError("cannot read manifest in " + args.data->string());
    std::string line;
    while (std::getline(manifest, line)) {
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        samples.push_back({load_tensor(*args.data / j.at("degraded").get<std::string>()),
                           load_tensor(*args.data / j.at("clean").get<std::string>()),
                           parse_task(j.at("task").get<std::string>())});
      } catch (const json::exception& e) {
        throw IoError(std::string("malformed manifest line: ") + e.what());
      }
    }
  } else {
    const std::size_t per_task = args.synthetic > 0 ? args.synthetic : 100;
    const std::uint64_t seed = args.seed ? *args.seed : env_seed().value_or(c.seed);
    samples = heldout_set(c.tasks, per_task, c.crop, seed, c.batch_options());
  }
  if (samples.empty()) throw ConfigError("eval: no samples");

  ensure_dir(args.out);
  EvalOptions options;
  options.mismatch = args.mismatch;
  if (args.mismatch) options.residual_dir = args.out / "residuals";
  EvalReport report = evaluate(state->model, samples, options);
  report.step = state->step;
  report.config = to_json(c);
  write_text(args.out / "report.json", to_json(report).dump(2) + "\n");
  for (const TaskEval& t : report.tasks) {
    log << task_name(t.task) << ": psnr " << t.psnr_matched << " dB (input " << t.psnr_degraded
        << "), ssim " << t.ssim_matched << ", entropy " << t.entropy_mean << " bits";
    if (args.mismatch) log << ", mismatch gap " << t.min_gap << " dB";
    log << '\n';
  }
}

void gate_report(const GateReportArgs& args, std::ostream& log) {
  const std::vector<GateLogEntry> entries = read_gate_log(args.log);
  if (entries.empty()) throw ConfigError("gate report: empty log " + args.log.string());
  const auto stats = entropy_report(entries);
  const SelectionMap map = selection_map(entries, args.samples_per_task);
  ensure_dir(args.out);
  write_text(args.out / "entropy.csv", entropy_csv(stats));
  json assignment = json::object();
  for (std::size_t t = 0; t < map.tasks.size(); ++t) {
    const std::string name(task_name(map.tasks[t]));
    assignment[name] = {{"frequencies", map.assignment[t]},
                        {"dominant_expert", map.dominant_expert(t)},
                        {"dominant_frequency", map.dominant_frequency(t)}};
    save_pixmap(render_selection(map.choices[t], map.experts), args.out / ("selection_" + name + ".pgm"));
  }
  write_text(args.out / "assignment.json", assignment.dump(2) + "\n");
  for (const EntropyStats& s : stats) {
    log << task_name(s.task) << ": " << s.count << " samples, entropy " << s.mean_bits << " ± "
        << s.stddev_bits << " bits\n";
  }
}

bool grad_check(const GradCheckArgs& args, std::ostream& log) {
  std::vector<CheckResult> results;
  if (args.scope == "linear") {
    results = linear_checks(args.seed);
  } else if (args.scope == "op") {
    results = op_checks(args.seed);
  } else if (args.scope == "end2end") {
    results = end2end_checks(args.seed, args.trials);
  } else {
    throw ConfigError("grad-check: unknown scope '" + args.scope + "'");
  }
  if (args.inject_fault) results.push_back(corrupted_fixture_check(args.seed));

  bool ok = true;
  const auto flags = log.flags();
  log << std::scientific << std::setprecision(3);
  for (const CheckResult& r : results) {
    const bool pass = r.report.max_rel_error <= kGradcheckTolerance;
    ok = ok && pass;
    log << (pass ? "ok   " : "FAIL ") << r.name << " worst_rel_error=" << r.report.max_rel_error
        << " checked=" << r.report.checked << " skipped=" << r.report.skipped << '\n';
  }
  log << "worst " << worst_error(results) << " over " << results.size() << " checks: "
      << (ok ? "PASS" : "FAIL") << '\n';
  log.flags(flags);
  return ok;
}

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive prompt learning for all-in-one image restoration", "cpl"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic degraded/clean pairs");
  gen_cmd->add_option("--config", gen.config, "Run config JSON")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();
  gen_cmd->add_option("--seed", seed, "Seed override");

  TrainArgs tr;
  std::string resume, train_out;
  std::optional<std::size_t> steps;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Run config JSON")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_option("--steps", steps, "Override the number of steps");
  train_cmd->add_option("--out", train_out, "Output directory (default: config output_dir)");
  train_cmd->add_option("--seed", seed, "Seed override");
  train_cmd->add_option("--stop-after", tr.stop_after, "Stop after this many total steps")
      ->group("");

  EvalArgs ev;
  std::string data;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  auto* data_opt = eval_cmd->add_option("--data", data, "Directory written by gen-data");
  eval_cmd->add_option("--synthetic", ev.synthetic, "Held-out samples per task")
      ->excludes(data_opt);
  eval_cmd->add_flag("--mismatch", ev.mismatch, "Also evaluate forced-mismatch prompts");
  eval_cmd->add_option("--out", ev.out, "Output directory");
  eval_cmd->add_option("--seed", seed, "Held-out seed override");

  GateReportArgs gr;
  auto* gate_cmd = app.add_subcommand("gate-report", "Entropy tables and selection maps");
  gate_cmd->add_option("--log", gr.log, "Gate log (JSON lines)")->required();
  gate_cmd->add_option("--out", gr.out, "Output directory");
  gate_cmd->add_option("--samples-per-task", gr.samples_per_task, "Samples per selection map");

  GradCheckArgs gc;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient verification");
  grad_cmd->add_option("--scope", gc.scope, "linear | op | end2end")
      ->check(CLI::IsMember({"linear", "op", "end2end"}));
  grad_cmd->add_option("--trials", gc.trials, "End-to-end trials");
  grad_cmd->add_option("--seed", seed, "Seed");
  grad_cmd->add_flag("--inject-fault", gc.inject_fault, "Add a deliberately wrong rule")->group("");

  std::vector<std::string> args(argv.rbegin(), argv.rend() - 1);
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) {
      gen.seed = seed;
      gen_data(gen, out);
    } else if (*train_cmd) {
      if (!resume.empty()) tr.resume = resume;
      if (!train_out.empty()) tr.out = train_out;
      tr.steps = steps;
      tr.seed = seed;
      train(tr, out);
    } else if (*eval_cmd) {
      if (!data.empty()) ev.data = data;
      ev.seed = seed;
      eval(ev, out);
    } else if (*gate_cmd) {
      gate_report(gr, out);
    } else if (*grad_cmd) {
      gc.seed = seed ? *seed : env_seed().value_or(0);
      if (!grad_check(gc, out)) return 3;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cpl::cli
