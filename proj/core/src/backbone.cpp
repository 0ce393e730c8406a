#include "cpl/backbone.hpp"

#include <cmath>
#include <string>

#include "cpl/error.hpp"

namespace cpl {

std::size_t BackboneConfig::modulation_dim() const {
  std::size_t total = 0;
  for (std::size_t s = 0; s <= depth; ++s) total += 2 * stage_channels(s);
  return total;
}

void BackboneConfig::validate(std::size_t experts) const {
  if (base_channels < 4) throw ConfigError("backbone.base_channels must be at least 4");
  if (depth < 1) throw ConfigError("backbone.depth must be at least 1");
  if (depth > 6) throw ConfigError("backbone.depth must be at most 6");
  if (image_channels < 1) throw ConfigError("backbone.image_channels must be positive");
  if (prompt_dim < experts) {
    throw ConfigError("backbone.prompt_dim (" + std::to_string(prompt_dim) +
                      ") must be at least the number of experts (" + std::to_string(experts) + ")");
  }
}

Backbone::Backbone(BackboneConfig config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, bool zero) {
    ConvIndex idx;
    idx.weight = params_.add(name + ".weight",
                             zero ? Tensor({out, in, 3, 3}, 0.0) : he_conv(out, in, 3, rng));
    idx.bias = params_.add(name + ".bias", Tensor({out}, 0.0));
    return idx;
  };

  const std::size_t d = config_.depth;
  encoder_.push_back(conv("enc0", config_.stage_channels(0), config_.image_channels, false));
  for (std::size_t s = 1; s <= d; ++s) {
    encoder_.push_back(conv("enc" + std::to_string(s), config_.stage_channels(s),
                            config_.stage_channels(s - 1), false));
  }
  decoder_.push_back(conv("dec" + std::to_string(d), config_.stage_channels(d),
                          config_.stage_channels(d), false));
  for (std::size_t s = d; s-- > 0;) {
    decoder_.push_back(conv("dec" + std::to_string(s), config_.stage_channels(s),
                            config_.stage_channels(s + 1), false));
  }
  head_ = conv("head", config_.image_channels, config_.stage_channels(0), true);

  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config_.prompt_dim));
  proj_weight_ = params_.add("prompt_proj.weight",
                             gaussian({config_.prompt_dim, config_.modulation_dim()}, proj_std, rng));
  proj_bias_ = params_.add("prompt_proj.bias", Tensor({1, config_.modulation_dim()}, 0.0));
}

void Backbone::check_image(const Shape& shape) const {
  const std::size_t factor = std::size_t{1} << config_.depth;
  if (shape.size() != 3 || shape[0] != config_.image_channels) {
    throw NumericError("backbone: expected " + std::to_string(config_.image_channels) +
                       "×H×W image, got " + shape_str(shape));
  }
  if (shape[1] % factor != 0 || shape[2] % factor != 0) {
    throw NumericError("backbone: spatial size " + shape_str(shape) + " not divisible by " +
                       std::to_string(factor));
  }
}

Encoded Backbone::encode(std::span<const Var> vars, Var image) const {
  check_image(image.shape());
  Encoded out;
  out.input = image;
  Var h = image;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    if (s > 0) h = avg_pool2(h);
    h = relu(conv2d(h, vars[encoder_[s].weight], vars[encoder_[s].bias]));
    out.skips.push_back(h);
  }
  out.features = global_avg_pool(h);
  return out;
}

Var Backbone::decode(std::span<const Var> vars, const Encoded& encoded, Var prompt) const {
  if (prompt.value().size() != config_.prompt_dim) {
    throw NumericError("backbone: prompt has " + std::to_string(prompt.value().size()) +
                       " entries, expected " + std::to_string(config_.prompt_dim));
  }
  Var p = reshape(prompt, {1, config_.prompt_dim});
  Var modulation = add(matmul(p, vars[proj_weight_]), vars[proj_bias_]);

  const std::size_t d = config_.depth;
  std::size_t offset = 0;
  Var h = encoded.skips[d];
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::size_t stage = d - i;
    const std::size_t channels = config_.stage_channels(stage);
    if (i > 0) h = upsample2(h);
    h = conv2d(h, vars[decoder_[i].weight], vars[decoder_[i].bias]);
    if (i > 0) h = add(h, encoded.skips[stage]);
    Var scale = slice(modulation, offset, channels);
    Var shift = slice(modulation, offset + channels, channels);
    offset += 2 * channels;
    h = relu(modulate(h, scale, shift));
  }
  Var residual = conv2d(h, vars[head_.weight], vars[head_.bias]);
  return add(encoded.input, residual);
}

Var Backbone::restore(std::span<const Var> vars, Var image, Var prompt) const {
  return decode(vars, encode(vars, image), prompt);
}

}  // namespace cpl
