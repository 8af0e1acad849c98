#pragma once

// Stage snapshot: everything frozen at the start of a training stage plus the
// model and optimizer state needed to resume from it.
//
// Layout (little-endian):
//   "CAGS", version u16, stage u32, iteration u64
//   anchors: C u32, F u32, C*F f64, C x u8 valid, C x u64 pixel counts
//   grid count u32, then per grid:
//     pixel count u32
//     anchor-based:      ceil(P/8) bytes active bitmap (LSB first), P x u16 labels
//     probability-based: ceil(P/8) bytes active bitmap (LSB first), P x u16 labels
//     (label 0xFFFF marks an inactive pixel)
//   model checkpoint block (see model.hpp)
//   momentum: tensor count u32, then per tensor: length u64, f64 x length

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cag/trainer.hpp"

namespace cag {

inline constexpr std::uint16_t kSnapshotFormatVersion = 1;

std::vector<std::uint8_t> encode_stage(const StageState& state);
StageState decode_stage(std::span<const std::uint8_t> bytes);

void save_stage(const StageState& state, const std::string& path);
StageState load_stage(const std::string& path);

}  // namespace cag
