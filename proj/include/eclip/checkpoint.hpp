// SPDX-License-Identifier: Apache-2.0
//
// Training checkpoints. Layout (little endian):
//   "ECLP" | u32 version | string config JSON | progress fields | string RNG
//   state | u64 count | count x (string name, tensor)
// Tensor names: base/<param>, mom/<param>, opt/{m,v,t}/<param>, queue,
// query_ema. Files are written to a temporary path and renamed into place.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "eclip/pretrain.hpp"

namespace eclip {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
/// Parses a whole checkpoint; any inconsistency raises FormatError and no
/// partially built state escapes.
TrainState deserialize_checkpoint(std::span<const std::uint8_t> data);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace eclip
