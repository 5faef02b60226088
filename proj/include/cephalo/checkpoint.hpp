#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cephalo/nn.hpp"
#include "cephalo/tensor.hpp"

namespace cephalo {

// Flat binary weight container, little-endian throughout:
//   "CEPW"  u32 version  u32 param_count
//   per parameter: u32 name_len, name bytes, u32 rank, u64 dims..., f64 values...
// Round-trips byte-exactly. Writes go to <path>.tmp and are renamed into
// place so a crash never leaves a torn checkpoint behind.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_weights(const std::filesystem::path& path, const NamedTensors& params);
NamedTensors load_weights(const std::filesystem::path& path);

void save_model_weights(const std::filesystem::path& path, const Model& model);
// Verifies name/shape agreement with the model's layer list before swapping
// the parameters in.
void load_model_weights(const std::filesystem::path& path, Model& model);

}  // namespace cephalo
