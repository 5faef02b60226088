#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cephalo/checkpoint.hpp"
#include "cephalo/data.hpp"
#include "cephalo/eval.hpp"
#include "cephalo/nn.hpp"
#include "cephalo/optim.hpp"

namespace cephalo {

struct TrainConfig {
    int epochs = 80;
    int batch_size = 2;
    ModelConfig model;
    AdamHyper adam;
    double sigma = 5.0;
    std::filesystem::path checkpoint_dir;
    std::uint64_t seed = 0;
    std::string config_hash;  // recorded in checkpoint sidecars
    bool verbose = false;     // per-epoch progress on stderr
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;  // pixel_accuracy proxy, not a published metric
    double seconds = 0.0;       // wall clock, in-memory diagnostic only
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

// History CSV: epoch,train_loss,val_loss,val_accuracy_proxy,seconds.
// Artifacts must be byte-identical across reruns, so persisted timing is
// zeroed unless include_timing is set; wall clock stays in TrainHistory.
std::string history_csv(const TrainHistory& history, bool include_timing = false);

struct TrainSample {
    Tensor image;   // resized (1, H, W)
    Tensor target;  // (C, H, W) heatmap stack
    LandmarkAnnotation annotation;  // original-space truth
};

struct TrainDataset {
    std::vector<TrainSample> samples;
    int n_landmarks = 0;
    int input_h = 0;
    int input_w = 0;
};

// Resize images to (h, w) and encode heatmap targets. Images and
// annotations are matched positionally and must agree on image ids.
TrainDataset prepare_dataset(const std::vector<Tensor>& images,
                             const std::vector<LandmarkAnnotation>& annotations, int h, int w,
                             double sigma, int n_landmarks);

// Test-visible sample access, used to assert fold isolation.
struct TrainHooks {
    std::function<void(int epoch, std::size_t sample_index)> on_train_sample;
    std::function<void(int epoch, std::size_t sample_index)> on_val_sample;
};

struct FoldResult {
    int fold_id = 0;
    Model model;  // best weights
    TrainHistory history;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::filesystem::path checkpoint_path;
    // landmark -> per-test-image radial error (cm); the fold's table fragment
    std::map<std::string, std::vector<double>> test_errors_cm;
};

// One fold of the protocol: train on fold.train for config.epochs epochs,
// score fold.test after each epoch, checkpoint whenever validation improves
// (superseded checkpoints are removed), return the best weights.
FoldResult train_fold(const TrainDataset& dataset, const FoldPlan::Fold& fold,
                      const TrainConfig& config, const TrainHooks* hooks = nullptr);

// K contiguous unshuffled folds; fold f trains with model seed
// config.seed + f under checkpoint_dir/fold_<f>. jobs > 1 trains folds in
// parallel threads; results are identical either way.
std::vector<FoldResult> run_cross_validation(const TrainDataset& dataset,
                                             const TrainConfig& config, int k,
                                             const PixelSpacing& spacing, int jobs = 1,
                                             const TrainHooks* hooks = nullptr);

struct CheckpointRef {
    int epoch = 0;
    std::filesystem::path path;
};

// Checkpoint with minimal validation loss; ties break to the earliest epoch.
NamedTensors select_best_weights(const TrainHistory& history,
                                 const std::vector<CheckpointRef>& checkpoints);

// Per-landmark radial errors (cm) of the model over the given test indices.
std::map<std::string, std::vector<double>> eval_fold_errors(
    const Model& model, const TrainDataset& dataset, const std::vector<std::size_t>& test_indices,
    const PixelSpacing& spacing);

}  // namespace cephalo
