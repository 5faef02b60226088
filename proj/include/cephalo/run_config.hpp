#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "cephalo/eval.hpp"
#include "cephalo/nn.hpp"
#include "cephalo/optim.hpp"

namespace cephalo {

// Declarative run description, loaded from a key = value file (see
// docs/config.md). Command-line flags override individual fields.
struct RunConfig {
    std::filesystem::path images_dir;
    std::filesystem::path annotations_csv;
    std::filesystem::path out_dir = "out";

    ModelConfig model{Arch::unet, 64, 64, 1, 5, 4, 2, 3, 0};
    int landmarks = 5;  // channels of the model head, first n canonical names

    int epochs = 30;
    int batch_size = 2;
    AdamHyper adam;
    double sigma = 2.5;
    std::uint64_t seed = 0;

    PixelSpacing spacing{1.0, 1.0};
    std::string reference_annotator;

    int folds = 5;
    int jobs = 1;

    // Stable textual form of every effective field; hashed into manifests.
    std::string canonical_string() const;
    std::string hash() const;  // FNV-1a 64 of canonical_string, hex
};

RunConfig parse_run_config(const std::filesystem::path& path);

// Apply one key = value assignment (file line or flag override). Throws
// ConfigError mentioning the key for unknown keys or malformed values.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// The protocol preset: epochs 80, lr 0.001, 5 folds, 432x512 input, 27
// landmarks, base 64, depth 4.
void apply_paper_protocol(RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace cephalo
