#include "cephalo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "cephalo/error.hpp"

namespace cephalo {

void validate(const PixelSpacing& s) {
    if (!(s.cm_per_px_x > 0.0) || !(s.cm_per_px_y > 0.0)) {
        throw ValidationError("pixel spacing must be positive, got (" +
                              std::to_string(s.cm_per_px_x) + ", " +
                              std::to_string(s.cm_per_px_y) + ")");
    }
}

PointI decode_heatmap(const Tensor& channel) {
    if (channel.rank() != 2 || channel.size() == 0) {
        throw ShapeError("decode_heatmap: channel must be a non-empty (H, W) tensor, got " +
                         shape_str(channel.shape()));
    }
    const std::size_t w = channel.dim(1);
    std::size_t best = 0;
    double best_v = channel[0];
    for (std::size_t i = 1; i < channel.size(); ++i) {
        if (channel[i] > best_v) {
            best_v = channel[i];
            best = i;
        }
    }
    return {static_cast<int>(best % w), static_cast<int>(best / w)};
}

double distance_cm(PointD a, PointD b, const PixelSpacing& spacing) {
    validate(spacing);
    const double dx = (a.x - b.x) * spacing.cm_per_px_x;
    const double dy = (a.y - b.y) * spacing.cm_per_px_y;
    return std::sqrt(dx * dx + dy * dy);
}

double radial_error_cm(PointD pred_resized, PointD truth_original, int resized_h, int resized_w,
                       int original_h, int original_w, const PixelSpacing& spacing) {
    if (resized_h < 1 || resized_w < 1 || original_h < 1 || original_w < 1) {
        throw ValidationError("radial_error_cm: frame dims must be positive");
    }
    const PointD pred_original{pred_resized.x * static_cast<double>(original_w) / resized_w,
                               pred_resized.y * static_cast<double>(original_h) / resized_h};
    return distance_cm(pred_original, truth_original, spacing);
}

namespace {

// Canonical landmark order first, anything else alphabetically after.
std::vector<std::string> ordered_landmarks(const std::set<std::string>& names) {
    std::vector<std::string> out;
    for (std::string_view name : kLandmarkNames) {
        if (names.count(std::string(name))) out.emplace_back(name);
    }
    for (const std::string& name : names) {
        if (landmark_index(name) < 0) out.push_back(name);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

EvalReport build_table(
    const std::vector<std::map<std::string, std::vector<double>>>& per_fold_errors,
    const PixelSpacing& spacing) {
    validate(spacing);
    if (per_fold_errors.empty()) throw ValidationError("build_table: no folds given");

    std::set<std::string> names;
    for (const auto& fold : per_fold_errors) {
        for (const auto& [name, _] : fold) names.insert(name);
    }
    for (std::size_t f = 0; f < per_fold_errors.size(); ++f) {
        for (const std::string& name : names) {
            if (!per_fold_errors[f].count(name)) {
                throw ValidationError("build_table: fold " + std::to_string(f) +
                                      " is missing landmark '" + name + "'");
            }
        }
    }

    EvalReport report;
    report.kind = ComparisonKind::model_vs_annotator;
    report.spacing = spacing;
    for (std::size_t f = 0; f < per_fold_errors.size(); ++f) {
        report.column_labels.push_back("split" + std::to_string(f + 1));
    }
    double total = 0.0;
    for (const std::string& name : ordered_landmarks(names)) {
        EvalRow row;
        row.landmark = name;
        for (const auto& fold : per_fold_errors) {
            for (double v : fold.at(name)) {
                if (v < 0.0) throw ValidationError("build_table: negative distance for '" + name + "'");
            }
            row.values_cm.push_back(mean_of(fold.at(name)));
        }
        row.mean_cm = mean_of(row.values_cm);
        total += row.mean_cm;
        report.rows.push_back(std::move(row));
    }
    report.overall_mean_cm = report.rows.empty() ? 0.0 : total / static_cast<double>(report.rows.size());
    return report;
}

EvalReport interobserver_table(const std::vector<LandmarkAnnotation>& annotations,
                               const PixelSpacing& spacing) {
    validate(spacing);

    std::set<std::string> annotators;
    std::set<std::string> images;
    for (const LandmarkAnnotation& ann : annotations) {
        annotators.insert(ann.annotator_id);
        images.insert(ann.image_id);
    }
    if (annotators.size() != 3) {
        throw ValidationError("interobserver_table: expected exactly 3 annotators, got " +
                              std::to_string(annotators.size()));
    }
    const std::vector<std::string> who(annotators.begin(), annotators.end());

    std::map<std::pair<std::string, std::string>, const LandmarkAnnotation*> by_key;
    for (const LandmarkAnnotation& ann : annotations) {
        by_key[{ann.image_id, ann.annotator_id}] = &ann;
    }

    std::set<std::string> names;
    for (const LandmarkAnnotation& ann : annotations) {
        for (const auto& [name, _] : ann.points) names.insert(name);
    }

    for (const std::string& img : images) {
        for (const std::string& a : who) {
            auto it = by_key.find({img, a});
            if (it == by_key.end()) {
                throw ValidationError("interobserver_table: image " + img +
                                      " has no annotation from annotator " + a);
            }
            for (const std::string& name : names) {
                if (!it->second->points.count(name)) {
                    throw ValidationError("interobserver_table: image " + img + ", annotator " +
                                          a + " is missing landmark '" + name + "'");
                }
            }
        }
    }

    EvalReport report;
    report.kind = ComparisonKind::annotator_pairwise;
    report.spacing = spacing;
    const std::pair<int, int> pairs[3] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& [i, j] : pairs) {
        report.column_labels.push_back("pair_" + who[static_cast<std::size_t>(i)] + "_" +
                                       who[static_cast<std::size_t>(j)]);
    }

    double total = 0.0;
    for (const std::string& name : ordered_landmarks(names)) {
        EvalRow row;
        row.landmark = name;
        for (const auto& [i, j] : pairs) {
            double acc = 0.0;
            for (const std::string& img : images) {
                const LandmarkAnnotation* a = by_key.at({img, who[static_cast<std::size_t>(i)]});
                const LandmarkAnnotation* b = by_key.at({img, who[static_cast<std::size_t>(j)]});
                acc += distance_cm(a->points.at(name), b->points.at(name), spacing);
            }
            row.values_cm.push_back(acc / static_cast<double>(images.size()));
        }
        row.mean_cm = mean_of(row.values_cm);
        total += row.mean_cm;
        report.rows.push_back(std::move(row));
    }
    report.overall_mean_cm =
        report.rows.empty() ? 0.0 : total / static_cast<double>(report.rows.size());
    return report;
}

std::string format_cm(double v) {
    const long long cents = std::llround(v * 100.0);  // half away from zero
    const long long whole = std::abs(cents) / 100;
    const long long frac = std::abs(cents) % 100;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%lld.%02lld", cents < 0 ? "-" : "", whole, frac);
    return buf;
}

std::string emit_report(const EvalReport& report, ReportFormat format) {
    std::ostringstream os;
    if (format == ReportFormat::csv) {
        os << "landmark";
        for (const std::string& c : report.column_labels) os << ',' << c;
        os << ",mean\n";
        for (const EvalRow& row : report.rows) {
            os << row.landmark;
            for (double v : row.values_cm) os << ',' << format_cm(v);
            os << ',' << format_cm(row.mean_cm) << '\n';
        }
        if (!report.rows.empty()) {
            os << "OVERALL";
            for (std::size_t i = 0; i < report.column_labels.size() + 1; ++i) os << ',';
            os << format_cm(report.overall_mean_cm) << '\n';
        }
        return os.str();
    }

    const char* title = report.kind == ComparisonKind::annotator_pairwise
                            ? "Pairwise annotator distance, cm"
                            : "Mean distance, cm";
    os << "| Reference type |";
    for (const std::string& c : report.column_labels) os << ' ' << c << " |";
    os << " Mean |\n";
    os << "|---|";
    for (std::size_t i = 0; i < report.column_labels.size(); ++i) os << "---|";
    os << "---|\n";
    for (const EvalRow& row : report.rows) {
        os << "| " << row.landmark << " |";
        for (double v : row.values_cm) os << ' ' << format_cm(v) << " |";
        os << ' ' << format_cm(row.mean_cm) << " |\n";
    }
    if (!report.rows.empty()) {
        os << "| **Mean** (" << title << ") |";
        for (std::size_t i = 0; i < report.column_labels.size(); ++i) os << " |";
        os << ' ' << format_cm(report.overall_mean_cm) << " |\n";
    }
    return os.str();
}

EvalReport parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("report csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                header.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        header.push_back(cur);
    }
    if (header.size() < 3 || header.front() != "landmark" || header.back() != "mean") {
        throw ValidationError("report csv: unexpected header '" + line + "'");
    }

    EvalReport report;
    report.column_labels.assign(header.begin() + 1, header.end() - 1);
    report.kind = !report.column_labels.empty() &&
                          report.column_labels.front().rfind("pair_", 0) == 0
                      ? ComparisonKind::annotator_pairwise
                      : ComparisonKind::model_vs_annotator;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        fields.push_back(cur);
        if (fields.size() != header.size()) {
            throw ValidationError("report csv: row '" + line + "' has " +
                                  std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(header.size()));
        }
        if (fields[0] == "OVERALL") {
            report.overall_mean_cm = std::stod(fields.back());
            continue;
        }
        EvalRow row;
        row.landmark = fields[0];
        for (std::size_t i = 1; i + 1 < fields.size(); ++i) {
            row.values_cm.push_back(std::stod(fields[i]));
        }
        row.mean_cm = std::stod(fields.back());
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace cephalo
