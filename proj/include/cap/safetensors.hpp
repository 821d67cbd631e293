#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cap/tensor.hpp"

namespace cap {

using TensorMap = std::map<std::string, Tensor>;

/// Reads every tensor of a safetensors container. F32, F16 and BF16 payloads
/// are widened to float32. Throws LoadError on malformed files.
TensorMap read_safetensors(const std::filesystem::path& path);

/// Writes float32 tensors in safetensors layout (names sorted, little endian).
void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {});

}  // namespace cap
