#include "cpl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cpl/error.hpp"
#include "cpl/rng.hpp"
#include "cpl/tensor_io.hpp"

namespace cpl {

namespace {

constexpr std::uint64_t kStreamHeldout = 31;
constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow * kSsimWindow);
  const double c = (kSsimWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t y = 0; y < kSsimWindow; ++y) {
    for (std::size_t x = 0; x < kSsimWindow; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
      w[y * kSsimWindow + x] = v;
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return w;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Tensor to_gray(const Tensor& image) {
  if (image.rank() != 3) throw NumericError("to_gray: expected C×H×W, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({1, h, w}, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += image.at(ch, y, x);
      out.at(0, y, x) = s / static_cast<double>(c);
    }
  }
  return out;
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const Tensor ga = to_gray(a), gb = to_gray(b);
  const std::size_t h = ga.dim(1), w = ga.dim(2);
  if (h < kSsimWindow || w < kSsimWindow) throw ConfigError("ssim: image smaller than 11×11 window");
  static const std::vector<double> window = gaussian_window();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + kSsimWindow <= h; ++y0) {
    for (std::size_t x0 = 0; x0 + kSsimWindow <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = 0; y < kSsimWindow; ++y) {
        for (std::size_t x = 0; x < kSsimWindow; ++x) {
          const double wt = window[y * kSsimWindow + x];
          const double va = ga.at(0, y0 + y, x0 + x), vb = gb.at(0, y0 + y, x0 + x);
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ConfigError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

GateLogEntry gate_log_entry(Task task, const GateDecision& decision, std::uint64_t step,
                            std::size_t sample) {
  GateLogEntry e;
  e.step = step;
  e.sample = sample;
  e.task = task;
  e.dense_probs.assign(decision.dense_probs.data().begin(), decision.dense_probs.data().end());
  e.retained = decision.retained;
  e.entropy_bits = decision.entropy_bits;
  return e;
}

std::vector<GateLogEntry> read_gate_log(std::istream& in) {
  std::vector<GateLogEntry> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GateLogEntry e;
      e.step = j.value("step", std::uint64_t{0});
      e.sample = j.value("sample", std::size_t{0});
      e.task = parse_task(j.at("task").get<std::string>());
      e.dense_probs = j.at("dense_probs").get<std::vector<double>>();
      e.retained = j.value("retained", std::vector<std::size_t>{});
      e.entropy_bits = j.contains("entropy_bits") ? j["entropy_bits"].get<double>()
                                                  : entropy_bits(e.dense_probs);
      if (e.dense_probs.empty()) throw IoError("empty dense_probs");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("gate log line " + std::to_string(number) + ": " + ex.what());
    } catch (const Error& ex) {
      throw IoError("gate log line " + std::to_string(number) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<GateLogEntry> read_gate_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read gate log " + path.string());
  return read_gate_log(in);
}

std::vector<EntropyStats> entropy_report(std::span<const GateLogEntry> log) {
  if (log.empty()) throw ConfigError("entropy report: empty gate log");
  std::map<Task, std::vector<double>> by_task;
  for (const GateLogEntry& e : log) by_task[e.task].push_back(e.entropy_bits);
  std::vector<EntropyStats> out;
  for (const auto& [task, values] : by_task) {
    out.push_back({task, values.size(), mean_of(values), stddev_of(values)});
  }
  return out;
}

std::string entropy_csv(std::span<const EntropyStats> stats) {
  std::ostringstream os;
  os.precision(17);
  os << "task,count,mean_bits,stddev_bits\n";
  for (const EntropyStats& s : stats) {
    os << task_name(s.task) << ',' << s.count << ',' << s.mean_bits << ',' << s.stddev_bits << '\n';
  }
  return os.str();
}

std::size_t SelectionMap::dominant_expert(std::size_t row) const {
  return argmax(assignment.at(row));
}

double SelectionMap::dominant_frequency(std::size_t row) const {
  return assignment.at(row)[dominant_expert(row)];
}

SelectionMap selection_map(std::span<const GateLogEntry> log, std::size_t samples_per_task) {
  if (log.empty()) throw ConfigError("selection map: empty gate log");
  if (samples_per_task == 0) throw ConfigError("selection map: samples_per_task must be positive");
  SelectionMap map;
  map.experts = log.front().dense_probs.size();
  std::map<Task, std::vector<std::size_t>> by_task;
  for (const GateLogEntry& e : log) {
    if (e.dense_probs.size() != map.experts) throw ConfigError("selection map: expert count varies");
    by_task[e.task].push_back(argmax(e.dense_probs));
  }
  for (auto& [task, choices] : by_task) {
    if (choices.size() < samples_per_task) {
      throw ConfigError("selection map: task " + std::string(task_name(task)) + " has " +
                        std::to_string(choices.size()) + " samples, need " +
                        std::to_string(samples_per_task));
    }
    std::vector<std::size_t> last(choices.end() - static_cast<std::ptrdiff_t>(samples_per_task),
                                  choices.end());
    std::vector<double> row(map.experts, 0.0);
    for (std::size_t c : last) row[c] += 1.0;
    for (double& v : row) v /= static_cast<double>(samples_per_task);
    map.tasks.push_back(task);
    map.choices.push_back(std::move(last));
    map.assignment.push_back(std::move(row));
  }
  return map;
}

Tensor render_selection(std::span<const std::size_t> choices, std::size_t experts,
                        std::size_t cell) {
  if (choices.empty() || experts == 0 || cell == 0) throw ConfigError("render_selection: empty map");
  Tensor img({1, choices.size(), experts * cell}, 0.0);
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (choices[i] >= experts) throw ConfigError("render_selection: expert index out of range");
    for (std::size_t x = 0; x < cell; ++x) img.at(0, i, choices[i] * cell + x) = 1.0;
  }
  return img;
}

std::vector<EvalSample> heldout_set(std::span<const Task> tasks, std::size_t per_task,
                                    std::size_t crop, std::uint64_t seed,
                                    const BatchOptions& options) {
  BatchOptions opts = options;
  opts.augment = false;
  std::vector<EvalSample> out;
  if (per_task == 0 || tasks.empty()) return out;
  const auto batch = make_batch(tasks, per_task * tasks.size(), crop,
                                derive_seed(seed, kStreamHeldout), opts);
  for (const SampleTriple& s : batch) out.push_back({s.degraded, s.clean, s.task});
  return out;
}

EvalReport evaluate(const CplModel& model, std::span<const EvalSample> samples,
                    const EvalOptions& options) {
  const std::size_t n = model.config().experts;
  EvalReport report;
  report.experts = n;
  report.top_k = model.config().top_k;
  report.param_count = model.param_count();

  struct Acc {
    std::vector<double> psnr_deg, psnr, psnr_input, ssim, l1, entropy;
    std::vector<double> forced_sum;
    std::vector<std::size_t> forced_count;
    std::vector<double> picks;
    double max_residual = 0.0;
    std::size_t written = 0;
  };
  std::map<Task, Acc> acc;
  if (options.residual_dir) std::filesystem::create_directories(*options.residual_dir);

  double l1_total = 0.0;
  for (const EvalSample& s : samples) {
    Acc& a = acc[s.task];
    if (a.forced_sum.empty()) {
      a.forced_sum.assign(n, 0.0);
      a.forced_count.assign(n, 0);
      a.picks.assign(n, 0.0);
    }
    CplModel::Overrides out;
    if (options.mismatch) {
      out = model.restore_with_overrides(s.degraded);
    } else {
      out.matched = model.restore(s.degraded);
    }
    const Tensor& restored = out.matched.restored;
    const std::size_t own = out.matched.decision.argmax();
    a.psnr_deg.push_back(psnr(s.degraded, s.clean));
    a.psnr.push_back(psnr(restored, s.clean));
    a.psnr_input.push_back(psnr(restored, s.degraded));
    a.ssim.push_back(ssim(restored, s.clean));
    a.l1.push_back(mean_abs_diff(restored, s.clean));
    a.entropy.push_back(out.matched.decision.entropy_bits);
    a.picks[own] += 1.0;
    l1_total += a.l1.back();

    const bool write = options.residual_dir && a.written < options.residual_samples;
    for (std::size_t e = 0; e < out.forced.size(); ++e) {
      if (e == own) continue;
      a.forced_sum[e] += psnr(out.forced[e], s.clean);
      ++a.forced_count[e];
      Tensor residual(restored.shape(), 0.0);
      for (std::size_t i = 0; i < residual.size(); ++i) {
        residual[i] = std::abs(restored[i] - out.forced[e][i]);
      }
      for (double v : residual.data()) a.max_residual = std::max(a.max_residual, v);
      if (write) {
        const std::string name = std::string(task_name(s.task)) + "_" +
                                 std::to_string(a.written) + "_expert" + std::to_string(e) + ".ppm";
        save_pixmap(residual, *options.residual_dir / name);
      }
    }
    if (write) ++a.written;
  }

  for (auto& [task, a] : acc) {
    TaskEval t;
    t.task = task;
    t.samples = a.psnr.size();
    t.psnr_degraded = mean_of(a.psnr_deg);
    t.psnr_matched = mean_of(a.psnr);
    t.psnr_vs_input = mean_of(a.psnr_input);
    t.ssim_matched = mean_of(a.ssim);
    t.l1_matched = mean_of(a.l1);
    t.entropy_mean = mean_of(a.entropy);
    t.entropy_std = stddev_of(a.entropy);
    t.max_residual = a.max_residual;
    t.psnr_forced.resize(n);
    std::optional<double> best;
    for (std::size_t e = 0; e < n; ++e) {
      if (a.forced_count[e] == 0) continue;
      const double m = a.forced_sum[e] / static_cast<double>(a.forced_count[e]);
      t.psnr_forced[e] = m;
      best = best ? std::max(*best, m) : m;
    }
    t.min_gap = best ? t.psnr_matched - *best : 0.0;
    for (double& p : a.picks) p /= static_cast<double>(t.samples);
    t.assignment = a.picks;
    report.tasks.push_back(std::move(t));
  }
  if (!samples.empty()) report.mean_l1 = l1_total / static_cast<double>(samples.size());
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const TaskEval& t : r.tasks) {
    nlohmann::json forced = nlohmann::json::array();
    for (const auto& f : t.psnr_forced) forced.push_back(f ? nlohmann::json(*f) : nlohmann::json());
    tasks.push_back({{"task", std::string(task_name(t.task))},
                     {"samples", t.samples},
                     {"psnr_degraded", t.psnr_degraded},
                     {"psnr_matched", t.psnr_matched},
                     {"psnr_vs_input", t.psnr_vs_input},
                     {"ssim_matched", t.ssim_matched},
                     {"l1_matched", t.l1_matched},
                     {"psnr_forced", forced},
                     {"min_mismatch_gap_db", t.min_gap},
                     {"max_residual", t.max_residual},
                     {"entropy_bits_mean", t.entropy_mean},
                     {"entropy_bits_std", t.entropy_std},
                     {"assignment", t.assignment}});
  }
  return {{"report_version", 1},
          {"experts", r.experts},
          {"top_k", r.top_k},
          {"param_count", r.param_count},
          {"step", r.step},
          {"mean_l1", r.mean_l1},
          {"tasks", tasks},
          {"config", r.config}};
}

std::vector<ScalingRow> scaling_table(const ModelConfig& base, std::span<const std::size_t> experts) {
  std::vector<ScalingRow> rows;
  for (std::size_t n : experts) {
    ModelConfig c = base;
    c.experts = n;
    c.top_k = std::min(base.top_k, n);
    rows.push_back({n, CplModel(c).param_count(), c.top_k});
  }
  return rows;
}

}  // namespace cpl
