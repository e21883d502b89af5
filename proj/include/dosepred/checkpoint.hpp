#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dosepred/tensor.hpp"

namespace dosepred {

/// Checkpoint layout: <stem>.json manifest listing parameter names, shapes
/// and flat offsets in registration order; <stem>.bin holds the values as
/// little-endian 64-bit floats in the same order.
void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& params,
                     const std::filesystem::path& stem);
void load_checkpoint(std::vector<std::pair<std::string, Tensor>>& params,
                     const std::filesystem::path& stem);

}  // namespace dosepred
