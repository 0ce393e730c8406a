#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "cpl/trainer.hpp"

namespace cpl {

inline constexpr int kCheckpointVersion = 1;

/// Layout: magic "CPLCKPT1", u64 header length, JSON header
/// {format_version, config, step, rng_state, adam_step, tensors:[{name,
/// shape, dtype, offset, nbytes}]}, little-endian f64 blob. Tensor entries
/// are the model parameters followed by "adam.m/<name>" and "adam.v/<name>".
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
/// IoError on version mismatch, corrupted header, truncated blob or shape
/// disagreement with the configured model.
std::unique_ptr<TrainState> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path);

}  // namespace cpl
