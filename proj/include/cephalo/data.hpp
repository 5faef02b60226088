#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cephalo/tensor.hpp"

namespace cephalo {

// Canonical landmark inventory, fixed order. Every heatmap stack and report
// row follows this order; synthetic datasets use the first n names.
inline constexpr std::array<std::string_view, 27> kLandmarkNames = {
    "A",  "Ar", "B",   "Ba",     "C",  "DT pog", "EN pn", "Gn",  "Go",
    "LL", "Me", "N",   "Or",     "Po", "Pog",    "Pt",    "S",   "SNA",
    "SNP pm", "Se",    "Sn",     "UL", "aii",    "ais",   "ii",  "is", "n"};

int landmark_index(std::string_view name);  // -1 if unknown

struct PointD {
    double x = 0.0;
    double y = 0.0;
};

struct PointI {
    int x = 0;
    int y = 0;
};

// One annotator's points for one image, in original-resolution pixels.
struct LandmarkAnnotation {
    std::string image_id;
    std::string annotator_id;
    std::map<std::string, PointD, std::less<>> points;
    int orig_h = 0;
    int orig_w = 0;
};

// Throws ValidationError if a point is out of bounds or a name is unknown.
void validate(const LandmarkAnnotation& ann);

// One target volume: a truncated Gaussian per landmark channel.
struct HeatmapStack {
    Tensor data;                     // (C, H, W)
    std::vector<PointI> peak_coords; // per channel, resized coordinates
    double sigma = 0.0;
};

struct FoldPlan {
    struct Fold {
        std::vector<std::size_t> train;
        std::vector<std::size_t> test;
    };
    std::size_t n_items = 0;
    int k = 0;
    std::vector<Fold> folds;
};

// Contiguous unshuffled splits: fold i tests on [i*n/k, (i+1)*n/k).
// Requires k >= 2 and k | n.
FoldPlan make_folds(std::size_t n_items, int k);
std::string fold_plan_json(const FoldPlan& plan);

// align-corners-false bilinear resize of a (C, H, W) tensor; source
// coordinate of output cell i is (i + 0.5) * in/out - 0.5, edge-clamped.
// Matches the convention of upsample2x so coordinate math stays consistent.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Nearest-integer coordinate rescaling, round half away from zero, clamped
// into the target bounds. Throws if the input lies outside the source frame.
PointI scale_landmark(PointD p, int from_h, int from_w, int to_h, int to_w);

// Peak-1 Gaussian bump truncated to a square window of half-width 3*sigma
// around the (integer) center; exactly zero outside the window.
Tensor gaussian_heatmap(PointI center, int h, int w, double sigma);

// One channel per requested landmark, in canonical order. Landmarks are
// scaled from the annotation's original frame to (h, w) first.
HeatmapStack encode_targets(const LandmarkAnnotation& ann, int h, int w, double sigma,
                            int n_landmarks = 27);

// Annotation CSV: image_id,annotator_id,landmark,x,y,orig_w,orig_h. UTF-8,
// LF, one row per point; rows for one (image, annotator) pair are grouped.
void write_annotations_csv(const std::filesystem::path& path,
                           const std::vector<LandmarkAnnotation>& annotations);
std::vector<LandmarkAnnotation> read_annotations_csv(const std::filesystem::path& path);

struct SynthDataset {
    std::vector<Tensor> images;  // (1, H, W) each, values in [0, 1]
    std::vector<LandmarkAnnotation> annotations;
};

// Deterministic synthetic data: each landmark is a small, visually distinct
// textured stamp placed at a random non-overlapping position over a smooth
// background; the annotation records the stamp centers exactly.
SynthDataset synth_generate(std::uint64_t seed, int n_images, int h, int w, int n_landmarks);

// The exact stamp synth_generate uses for one landmark index, for
// template-matching baselines.
Tensor synth_template(std::uint64_t seed, int landmark_index);
inline constexpr int kSynthTemplateSize = 9;

}  // namespace cephalo
