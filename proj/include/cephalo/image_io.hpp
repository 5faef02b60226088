#pragma once

#include <filesystem>

#include "cephalo/tensor.hpp"

namespace cephalo {

// Grayscale loader for PGM (P5, 8/16-bit) and PNG (gray, 8/16-bit) files.
// Returns a (1, H, W) tensor scaled by 1/max-code-value into [0, 1].
// Decode failures raise IoError with the byte offset where parsing stopped.
Tensor load_image(const std::filesystem::path& path);

// 8-bit binary PGM writer; values are clamped to [0, 1] and scaled to 255.
void save_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace cephalo
