#include "cpl/spm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cpl/error.hpp"
#include "cpl/kernels.hpp"
#include "cpl/rng.hpp"

namespace cpl {

void SpmConfig::validate() const {
  if (experts < 1) throw ConfigError("spm.experts must be at least 1");
  if (top_k < 1 || top_k > experts) {
    throw ConfigError("spm.top_k must lie in [1, experts], got " + std::to_string(top_k));
  }
  if (prompt_dim < 1 || feature_dim < 1) throw ConfigError("spm dimensions must be positive");
  if (!(expert_init_std > 0.0)) throw ConfigError("spm.expert_init_std must be positive");
}

std::size_t GateDecision::argmax() const {
  const auto probs = dense_probs.data();
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double entropy_bits(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return std::max(h, 0.0);
}

std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) throw ConfigError("top-k: k out of range");
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Softmax over `retained` logits, scattered into an n-vector.
Tensor renormalized(const Tensor& logits, const std::vector<std::size_t>& retained) {
  Tensor weights(logits.shape(), 0.0);
  double peak = logits[retained.front()];
  for (std::size_t i : retained) peak = std::max(peak, logits[i]);
  double total = 0.0;
  for (std::size_t i : retained) {
    weights[i] = std::exp(logits[i] - peak);
    total += weights[i];
  }
  for (std::size_t i : retained) weights[i] /= total;
  return weights;
}

GateDecision decision_from(const Tensor& logits, std::size_t k) {
  GateDecision d;
  d.dense_probs = kernels::softmax(logits);
  d.retained = top_k_indices(logits.data(), k);
  d.sparse_weights = renormalized(logits, d.retained);
  d.entropy_bits = entropy_bits(d.dense_probs.data());
  return d;
}

}  // namespace

GateDecision decide(const Tensor& logits, std::size_t k) {
  if (!logits.all_finite()) throw NumericError("gate: non-finite logits");
  return decision_from(logits.reshaped({logits.size()}), k);
}

GateDecision override_gate(const GateDecision& decision, std::size_t index) {
  const std::size_t n = decision.dense_probs.size();
  if (index >= n) {
    throw ConfigError("override_gate: index " + std::to_string(index) + " out of range for " +
                      std::to_string(n) + " experts");
  }
  if (index == decision.argmax()) {
    throw ConfigError("override_gate: index " + std::to_string(index) +
                      " is the positive selection");
  }
  GateDecision forced = decision;
  forced.retained = {index};
  forced.sparse_weights = Tensor(decision.dense_probs.shape(), 0.0);
  forced.sparse_weights[index] = 1.0;
  forced.forced = index;
  return forced;
}

std::vector<std::size_t> sample_negative_indices(std::size_t positive, std::size_t n,
                                                 std::size_t m, std::uint64_t seed) {
  if (positive >= n) throw ConfigError("sample_negative_indices: positive index out of range");
  if (m + 1 > n) {
    throw ConfigError("sample_negative_indices: m = " + std::to_string(m) + " exceeds n - 1 = " +
                      std::to_string(n - 1));
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != positive) pool.push_back(i);
  }
  // Partial Fisher–Yates.
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  return pool;
}

PromptBank::PromptBank(SpmConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t n = config_.experts;
  params_.add("spm.experts", gaussian({n, config_.prompt_dim}, config_.expert_init_std, rng));
  params_.add("spm.gate.weight",
              gaussian({n, config_.feature_dim},
                       1.0 / std::sqrt(static_cast<double>(config_.feature_dim)), rng));
  params_.add("spm.gate.bias", Tensor({n}, 0.0));
}

PromptBank::Routed PromptBank::gate(std::span<const Var> vars, Var features) const {
  const std::size_t n = config_.experts;
  if (features.value().size() != config_.feature_dim) {
    throw NumericError("gate: feature vector has " + std::to_string(features.value().size()) +
                       " entries, expected " + std::to_string(config_.feature_dim));
  }
  Var x = reshape(features, {config_.feature_dim, 1});
  Var logits = add(reshape(matmul(vars[kGateWeight], x), {n}), vars[kGateBias]);

  Routed routed;
  routed.decision = decision_from(logits.value(), config_.top_k);
  const std::vector<std::size_t> retained = routed.decision.retained;
  const Tensor weights = routed.decision.sparse_weights;
  const Tensor dense = routed.decision.dense_probs;
  const GateGradient mode = config_.gate_gradient;

  Var sparse = logits.tape().record(
      "sparse_gate", weights, {logits},
      [logits, retained, weights, dense, mode](Tape& t, const Tensor& g) {
        Tensor* gl = t.grad_slot(logits);
        if (mode == GateGradient::kRenormalized) {
          double dot = 0.0;
          for (std::size_t i : retained) dot += weights[i] * g[i];
          for (std::size_t i : retained) (*gl)[i] += weights[i] * (g[i] - dot);
        } else {
          double dot = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) dot += dense[i] * g[i];
          for (std::size_t i = 0; i < g.size(); ++i) (*gl)[i] += dense[i] * (g[i] - dot);
        }
      });
  routed.weights = reshape(sparse, {1, n});
  return routed;
}

Var PromptBank::compose_prompt(std::span<const Var> vars, Var weights) const {
  const std::size_t n = config_.experts;
  if (weights.value().size() != n) {
    throw NumericError("compose_prompt: expected " + std::to_string(n) + " weights");
  }
  Var row = reshape(weights, {1, n});
  return reshape(matmul(row, vars[kExperts]), {config_.prompt_dim});
}

Var PromptBank::compose_prompt(std::span<const Var> vars, const GateDecision& decision) const {
  Tape& tape = vars[kExperts].tape();
  return compose_prompt(vars, tape.constant(decision.sparse_weights));
}

void to_json(nlohmann::json& j, const GateDecision& d) {
  j = nlohmann::json{{"dense_probs", std::vector<double>(d.dense_probs.data().begin(),
                                                         d.dense_probs.data().end())},
                     {"retained", d.retained},
                     {"entropy_bits", d.entropy_bits},
                     {"argmax", d.argmax()}};
  if (d.forced) j["forced"] = *d.forced;
}

}  // namespace cpl
