#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "drst/nn.hpp"
#include "drst/tensor.hpp"

namespace drst {

// Binary container: magic "DRST", version byte 1, then one record per tensor:
//   u32 name length, UTF-8 name, u32 rank, u32 per extent, raw LE float32.
// Round trips are bit-exact.

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params);

// Loads into the registry's existing tensors. Every stored record must match a
// registered name and shape, and every registered tensor must be present.
void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params);

// Names and shapes only, e.g. to check head extents before building a model.
std::vector<std::pair<std::string, Shape>> peek_checkpoint(const std::filesystem::path& path);

}  // namespace drst
