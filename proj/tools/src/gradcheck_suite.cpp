#include "cpl_cli/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "cpl/cpr.hpp"
#include "cpl/model.hpp"
#include "cpl/rng.hpp"
#include "cpl/synth.hpp"

namespace cpl::cli {

namespace {

constexpr std::uint64_t kStreamOps = 61;
constexpr std::uint64_t kStreamEnd2End = 62;
constexpr std::size_t kCoordsPerTensor = 6;

// Larger step with extrapolation keeps round-off below 1e-6 relative even for
// gradients near 1e-8; the D(h)/D(h/2) test rejects probes that straddle a
// relu or top-k kink.
GradcheckOptions end2end_options() {
  GradcheckOptions o;
  o.h = 1e-4;
  o.richardson = true;
  o.skip_kinks = true;
  o.kink_ratio = 1e-6;
  return o;
}
const GradcheckOptions kEnd2EndOptions = end2end_options();

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Values kept away from zero so relu/clip kinks are not straddled.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) {
    const double m = rng.uniform(0.2, 1.5);
    v = rng.below(2) == 0 ? m : -m;
  }
  return t;
}

// Reduces an op output to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = y.tape().constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

CheckResult run(const std::string& name, const ScalarFn& f, const Tensor& point,
                GradcheckOptions options = {}) {
  return {name, fd_gradcheck(f, point, options)};
}

std::vector<std::size_t> sample_coords(std::size_t size, Rng& rng) {
  if (size <= kCoordsPerTensor) {
    std::vector<std::size_t> all(size);
    for (std::size_t i = 0; i < size; ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> out;
  while (out.size() < kCoordsPerTensor) {
    const std::size_t c = rng.below(size);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<CheckResult> linear_checks(std::uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamOps, 0));
  const std::uint64_t ws = rng.next_u64();
  GradcheckOptions opt;
  opt.h = 1.0;  // exact for linear maps up to round-off
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const Tensor img = random_tensor({2, 8, 8}, rng);
  const Tensor kern = random_tensor({3, 2, 3, 3}, rng);
  const Tensor bias = random_tensor({3}, rng);
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor scale = random_tensor({2}, rng, 0.5);
  const Tensor shift = random_tensor({2}, rng, 0.5);

  std::vector<CheckResult> out;
  out.push_back(run("add", [&](Tape& t, Var x) { return weighted_sum(add(x, t.constant(other)), ws); }, a, opt));
  out.push_back(run("sub", [&](Tape& t, Var x) { return weighted_sum(sub(t.constant(other), x), ws); }, a, opt));
  out.push_back(run("mul_const", [&](Tape& t, Var x) { return weighted_sum(mul(x, t.constant(other)), ws); }, a, opt));
  out.push_back(run("scale", [&](Tape&, Var x) { return weighted_sum(mul(add(x, 0.5), -1.7), ws); }, a, opt));
  out.push_back(run("matmul_lhs", [&](Tape& t, Var x) { return weighted_sum(matmul(x, t.constant(b)), ws); }, a, opt));
  out.push_back(run("matmul_rhs", [&](Tape& t, Var x) { return weighted_sum(matmul(t.constant(a), x), ws); }, b, opt));
  out.push_back(run("sum", [&](Tape&, Var x) { return sum(x); }, a, opt));
  out.push_back(run("mean", [&](Tape&, Var x) { return mean(x); }, a, opt));
  out.push_back(run("reshape", [&](Tape&, Var x) { return weighted_sum(reshape(x, {2, 6}), ws); }, a, opt));
  out.push_back(run("slice", [&](Tape&, Var x) { return weighted_sum(slice(x, 3, 5), ws); }, a, opt));
  out.push_back(run("conv2d_input", [&](Tape& t, Var x) {
    return weighted_sum(conv2d(x, t.constant(kern), t.constant(bias)), ws); }, img, opt));
  out.push_back(run("conv2d_kernel", [&](Tape& t, Var k) {
    return weighted_sum(conv2d(t.constant(img), k, t.constant(bias)), ws); }, kern, opt));
  out.push_back(run("conv2d_bias", [&](Tape& t, Var bb) {
    return weighted_sum(conv2d(t.constant(img), t.constant(kern), bb), ws); }, bias, opt));
  out.push_back(run("conv2d_stride2_valid", [&](Tape& t, Var x) {
    return weighted_sum(conv2d(x, t.constant(kern), 2, kernels::Padding::kValid), ws); }, img, opt));
  out.push_back(run("avg_pool2", [&](Tape&, Var x) { return weighted_sum(avg_pool2(x), ws); }, img, opt));
  out.push_back(run("upsample2", [&](Tape&, Var x) { return weighted_sum(upsample2(x), ws); }, img, opt));
  out.push_back(run("global_avg_pool", [&](Tape&, Var x) { return weighted_sum(global_avg_pool(x), ws); }, img, opt));
  out.push_back(run("modulate_shift", [&](Tape& t, Var s) {
    return weighted_sum(modulate(t.constant(img), t.constant(scale), s), ws); }, shift, opt));
  return out;
}

std::vector<CheckResult> op_checks(std::uint64_t seed) {
  std::vector<CheckResult> out = linear_checks(seed);
  Rng rng(derive_seed(seed, kStreamOps, 1));
  const std::uint64_t ws = rng.next_u64();
  GradcheckOptions opt;
  opt.skip_kinks = true;

  const Tensor a = away_from_zero({3, 4}, rng);
  const Tensor positive = [&] {
    Tensor t({3, 4}, 0.0);
    for (double& v : t.data()) v = rng.uniform(0.3, 2.0);
    return t;
  }();
  const Tensor img = random_tensor({2, 8, 8}, rng);
  const Tensor scale = random_tensor({2}, rng, 0.5);
  const Tensor shift = random_tensor({2}, rng, 0.5);
  const Tensor logits = random_tensor({6}, rng);
  const Tensor target = random_tensor({3, 4}, rng);

  out.push_back(run("mul", [&](Tape&, Var x) { return weighted_sum(mul(x, x), ws); }, a, opt));
  out.push_back(run("mul_broadcast", [&](Tape& t, Var x) {
    return weighted_sum(mul(t.constant(a), slice(x, 2, 1)), ws); }, a, opt));
  out.push_back(run("relu", [&](Tape&, Var x) { return weighted_sum(relu(x), ws); }, a, opt));
  out.push_back(run("power", [&](Tape&, Var x) { return weighted_sum(power(x, 1.5), ws); }, positive, opt));
  out.push_back(run("clip", [&](Tape&, Var x) { return weighted_sum(clip(x, -0.9, 0.9), ws); }, a, opt));
  out.push_back(run("min_with", [&](Tape&, Var x) { return weighted_sum(min_with(x, 0.7), ws); }, a, opt));
  out.push_back(run("softmax", [&](Tape&, Var x) { return weighted_sum(softmax(x), ws); }, logits, opt));
  out.push_back(run("l1_mean", [&](Tape& t, Var x) { return l1_mean(sub(x, t.constant(target))); }, a, opt));
  out.push_back(run("l2_sq_mean", [&](Tape& t, Var x) { return l2_sq_mean(sub(x, t.constant(target))); }, a, opt));
  out.push_back(run("modulate_input", [&](Tape& t, Var x) {
    return weighted_sum(modulate(x, t.constant(scale), t.constant(shift)), ws); }, img, opt));
  out.push_back(run("modulate_scale", [&](Tape& t, Var s) {
    return weighted_sum(modulate(t.constant(img), s, t.constant(shift)), ws); }, scale, opt));

  // Sparse gate with the exact renormalized rule, k = 2 of 4.
  {
    SpmConfig cfg;
    cfg.experts = 4;
    cfg.top_k = 2;
    cfg.prompt_dim = 5;
    cfg.feature_dim = 6;
    cfg.gate_gradient = GateGradient::kRenormalized;
    const PromptBank bank(cfg, derive_seed(seed, kStreamOps, 2));
    const Tensor features = random_tensor({6}, rng);
    out.push_back(run("sparse_gate_features", [&](Tape& t, Var x) {
      const auto vars = bank.params().bind(t, false);
      const auto routed = bank.gate(vars, x);
      return weighted_sum(bank.compose_prompt(vars, routed.weights), ws);
    }, features, opt));
    const Tensor experts = bank.params()[PromptBank::kExperts].value;
    out.push_back(run("compose_prompt_experts", [&](Tape& t, Var e) {
      auto vars = bank.params().bind(t, false);
      vars[PromptBank::kExperts] = e;
      const auto routed = bank.gate(vars, t.constant(features));
      return weighted_sum(bank.compose_prompt(vars, routed.weights), ws);
    }, experts, opt));
  }

  // Perceptual loss terms on 3×16×16 images.
  {
    const PerceptualExtractor phi(derive_seed(seed, kStreamOps, 3));
    Tensor image({3, 16, 16}, 0.0), gt({3, 16, 16}, 0.0), other({3, 16, 16}, 0.0);
    for (double& v : image.data()) v = rng.uniform();
    for (double& v : gt.data()) v = rng.uniform();
    for (double& v : other.data()) v = rng.uniform();
    out.push_back(run("loss_pos", [&](Tape& t, Var x) {
      return loss_pos(phi, x, t.constant(gt)); }, image, opt));
    CprConfig both;
    both.stop_positive_in_neg = false;
    out.push_back(run("loss_neg", [&](Tape& t, Var x) {
      const std::vector<Var> negs{t.constant(other), mul(x, 0.5)};
      return loss_neg(phi, negs, x, both); }, image, opt));
  }
  return out;
}

std::vector<CheckResult> end2end_checks(std::uint64_t seed, std::size_t trials) {
  std::vector<CheckResult> out;
  constexpr Task kTasks[] = {Task::kNoise, Task::kRain, Task::kLowlight};
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed = derive_seed(seed, kStreamEnd2End, trial);
    ModelConfig mc;
    mc.backbone.base_channels = 4;
    mc.backbone.depth = 2;
    mc.backbone.prompt_dim = 8;
    mc.experts = 3;
    mc.top_k = 1;
    mc.gate_gradient = GateGradient::kRenormalized;
    mc.seed = trial_seed;
    CplModel model(mc);
    Rng rng(derive_seed(trial_seed, 1));
    // Move off the identity initialization so every path carries gradient.
    for (Parameter* p : model.parameters()) {
      for (double& v : p->value.data()) v += 0.1 * rng.normal();
    }
    BatchOptions bo;
    bo.image_size = 16;
    const Task task = kTasks[trial % 3];
    const SampleTriple sample = make_batch(std::span(&task, 1), 1, 16, rng.next_u64(), bo).front();
    const std::uint64_t neg_seed = rng.next_u64();
    // The stop-gradient variant is a surrogate, not a function gradient.
    CprConfig cpr;
    cpr.alpha = 0.5;
    cpr.stop_positive_in_neg = false;

    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ScalarFn f = [&, i](Tape& t, Var x) {
        CplModel::Bound bound = model.bind(t, false);
        const std::size_t nb = bound.backbone.size();
        (i < nb ? bound.backbone[i] : bound.bank[i - nb]) = x;
        const CplModel::Forward fw = model.forward(bound, t.constant(sample.degraded));
        const Negatives negs = build_negatives(model.backbone(), bound.backbone, model.bank(),
                                               bound.bank, fw.encoded, fw.routed.decision, 2,
                                               neg_seed);
        return total_loss(model.phi(), fw.restored, t.constant(sample.clean), negs.images, cpr)
            .total;
      };
      GradcheckOptions opt = kEnd2EndOptions;
      opt.coordinates = sample_coords(params[i]->value.size(), rng);
      out.push_back({"trial" + std::to_string(trial) + "/" + params[i]->name,
                     fd_gradcheck(f, params[i]->value, opt)});
    }
  }
  return out;
}

CheckResult corrupted_fixture_check(std::uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamOps, 9));
  const Tensor a = random_tensor({4}, rng);
  const ScalarFn f = [](Tape& t, Var x) {
    Tensor y = x.value();
    for (double& v : y.data()) v *= 3.0;
    // d(3x)/dx recorded as 2: the deliberate fault.
    Var out = t.record("corrupted_scale", std::move(y), {x}, [x](Tape& tape, const Tensor& g) {
      Tensor* gx = tape.grad_slot(x);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * g[i];
    });
    return sum(out);
  };
  return run("corrupted_fixture", f, a);
}

double worst_error(const std::vector<CheckResult>& results) {
  double worst = 0.0;
  for (const CheckResult& r : results) worst = std::max(worst, r.report.max_rel_error);
  return worst;
}

}  // namespace cpl::cli
