#pragma once

#include <string>

#include "evformer/spikeformer.hpp"

namespace evf {

// Weight snapshot, little-endian: u32 param count, then per parameter a
// header (u32 name length, name bytes, u32 rank, u32 dims), then all f32
// values in header order.
void save_checkpoint(const std::string& path, const ParamList<float>& params);

// Restores in place. Parameter names, order and shapes must match what the
// file holds; mismatches raise FormatError naming the parameter.
void load_checkpoint(const std::string& path, ParamList<float>& params);

}  // namespace evf
