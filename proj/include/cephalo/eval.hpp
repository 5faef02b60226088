#pragma once

#include <map>
#include <string>
#include <vector>

#include "cephalo/data.hpp"
#include "cephalo/tensor.hpp"

namespace cephalo {

struct PixelSpacing {
    double cm_per_px_x = 0.0;
    double cm_per_px_y = 0.0;
};

void validate(const PixelSpacing& s);

enum class ComparisonKind { model_vs_annotator, annotator_pairwise };

struct EvalRow {
    std::string landmark;
    std::vector<double> values_cm;  // one per split (or annotator pair)
    double mean_cm = 0.0;
};

struct EvalReport {
    ComparisonKind kind = ComparisonKind::model_vs_annotator;
    std::vector<std::string> column_labels;  // "split1".. or "pair_a_b"..
    std::vector<EvalRow> rows;               // canonical landmark order
    double overall_mean_cm = 0.0;            // mean of row means
    PixelSpacing spacing;
};

enum class ReportFormat { csv, markdown };

// Coordinates of the channel's maximum; ties go to the smallest row-major
// index, so results are deterministic.
PointI decode_heatmap(const Tensor& channel);

// Anisotropic Euclidean distance in cm between two original-space points.
double distance_cm(PointD a, PointD b, const PixelSpacing& spacing);

// Prediction in resized space, truth in original space. The prediction is
// mapped back through the (real-valued) axis ratios before measuring, so no
// rounding error enters here.
double radial_error_cm(PointD pred_resized, PointD truth_original, int resized_h, int resized_w,
                       int original_h, int original_w, const PixelSpacing& spacing);

// per_fold_errors[f][landmark] = all per-image distances (cm) of fold f's
// test images. Rows carry the per-fold means plus their arithmetic mean;
// overall is the mean of the row means.
EvalReport build_table(const std::vector<std::map<std::string, std::vector<double>>>& per_fold_errors,
                       const PixelSpacing& spacing);

// Pairwise annotator agreement over identical image/landmark coverage:
// one column per unordered annotator pair (mean over images), mean column
// across the three pairs.
EvalReport interobserver_table(const std::vector<LandmarkAnnotation>& annotations,
                               const PixelSpacing& spacing);

// Deterministic serialization; numbers printed with two decimals, rounded
// half away from zero. CSV layout: landmark,<columns...>,mean + OVERALL row.
std::string emit_report(const EvalReport& report, ReportFormat format);

// Parse back a CSV produced by emit_report (used by the report command and
// the fixture path). Values carry print precision only.
EvalReport parse_report_csv(const std::string& text);

std::string format_cm(double v);  // two decimals, half away from zero

}  // namespace cephalo
