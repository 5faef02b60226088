#include "cephalo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cephalo/error.hpp"
#include "cephalo/rng.hpp"

namespace cephalo {

int landmark_index(std::string_view name) {
    for (std::size_t i = 0; i < kLandmarkNames.size(); ++i) {
        if (kLandmarkNames[i] == name) return static_cast<int>(i);
    }
    return -1;
}

void validate(const LandmarkAnnotation& ann) {
    if (ann.orig_h <= 0 || ann.orig_w <= 0) {
        throw ValidationError("annotation " + ann.image_id + ": original size " +
                              std::to_string(ann.orig_w) + "x" + std::to_string(ann.orig_h) +
                              " is not positive");
    }
    for (const auto& [name, p] : ann.points) {
        if (landmark_index(name) < 0) {
            throw ValidationError("annotation " + ann.image_id + ": unknown landmark '" + name +
                                  "'");
        }
        if (p.x < 0.0 || p.x >= ann.orig_w || p.y < 0.0 || p.y >= ann.orig_h) {
            throw ValidationError("annotation " + ann.image_id + ": landmark '" + name +
                                  "' at (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                  ") lies outside " + std::to_string(ann.orig_w) + "x" +
                                  std::to_string(ann.orig_h));
        }
    }
}

FoldPlan make_folds(std::size_t n_items, int k) {
    if (k < 2) throw ValidationError("make_folds: k must be >= 2, got " + std::to_string(k));
    if (n_items == 0 || n_items % static_cast<std::size_t>(k) != 0) {
        throw ValidationError("make_folds: n_items (" + std::to_string(n_items) +
                              ") must be a positive multiple of k (" + std::to_string(k) + ")");
    }
    FoldPlan plan;
    plan.n_items = n_items;
    plan.k = k;
    const std::size_t per = n_items / static_cast<std::size_t>(k);
    for (int f = 0; f < k; ++f) {
        FoldPlan::Fold fold;
        const std::size_t lo = static_cast<std::size_t>(f) * per;
        const std::size_t hi = lo + per;
        for (std::size_t i = 0; i < n_items; ++i) {
            (i >= lo && i < hi ? fold.test : fold.train).push_back(i);
        }
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

std::string fold_plan_json(const FoldPlan& plan) {
    nlohmann::json j;
    j["n_items"] = plan.n_items;
    j["k"] = plan.k;
    j["folds"] = nlohmann::json::array();
    for (const auto& fold : plan.folds) {
        j["folds"].push_back({{"train", fold.train}, {"test", fold.test}});
    }
    return j.dump(2) + "\n";
}

namespace {

struct Tap {
    int i0, i1;
    double w0, w1;
};

std::vector<Tap> resize_taps(int in_extent, int out_extent) {
    std::vector<Tap> taps(static_cast<std::size_t>(out_extent));
    const double scale = static_cast<double>(in_extent) / out_extent;
    const int last = in_extent - 1;
    for (int i = 0; i < out_extent; ++i) {
        const double src = (i + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(src));
        const double frac = src - lo;
        taps[static_cast<std::size_t>(i)] = {std::clamp(lo, 0, last), std::clamp(lo + 1, 0, last),
                                             1.0 - frac, frac};
    }
    return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) {
        throw ShapeError("resize_bilinear: image must be (C, H, W), got " +
                         shape_str(image.shape()));
    }
    if (out_h < 1 || out_w < 1) {
        throw ValidationError("resize_bilinear: target " + std::to_string(out_w) + "x" +
                              std::to_string(out_h) + " must be at least 1x1");
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const auto ytaps = resize_taps(static_cast<int>(h), out_h);
    const auto xtaps = resize_taps(static_cast<int>(w), out_w);
    Tensor out = Tensor::zeros({c, static_cast<std::size_t>(out_h),
                                static_cast<std::size_t>(out_w)});
    const double* in = image.values().data();
    double* o = out.mutable_data().data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = in + ch * h * w;
        double* oplane = o + ch * static_cast<std::size_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const Tap& ty = ytaps[static_cast<std::size_t>(oy)];
            const double* r0 = plane + static_cast<std::size_t>(ty.i0) * w;
            const double* r1 = plane + static_cast<std::size_t>(ty.i1) * w;
            double* orow = oplane + static_cast<std::size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
                const Tap& tx = xtaps[static_cast<std::size_t>(ox)];
                orow[ox] = ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                           ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]);
            }
        }
    }
    return out;
}

PointI scale_landmark(PointD p, int from_h, int from_w, int to_h, int to_w) {
    if (p.x < 0.0 || p.x >= from_w || p.y < 0.0 || p.y >= from_h) {
        throw ValidationError("scale_landmark: point (" + std::to_string(p.x) + ", " +
                              std::to_string(p.y) + ") outside source frame " +
                              std::to_string(from_w) + "x" + std::to_string(from_h));
    }
    // std::round is round-half-away-from-zero.
    const double sx = static_cast<double>(to_w) / from_w;
    const double sy = static_cast<double>(to_h) / from_h;
    PointI out;
    out.x = std::clamp(static_cast<int>(std::round(p.x * sx)), 0, to_w - 1);
    out.y = std::clamp(static_cast<int>(std::round(p.y * sy)), 0, to_h - 1);
    return out;
}

Tensor gaussian_heatmap(PointI center, int h, int w, double sigma) {
    if (center.x < 0 || center.x >= w || center.y < 0 || center.y >= h) {
        throw ValidationError("gaussian_heatmap: center (" + std::to_string(center.x) + ", " +
                              std::to_string(center.y) + ") outside " + std::to_string(w) + "x" +
                              std::to_string(h));
    }
    if (!(sigma > 0.0)) throw ValidationError("gaussian_heatmap: sigma must be > 0");
    Tensor out = Tensor::zeros({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    double* o = out.mutable_data().data();
    const int r = static_cast<int>(std::floor(3.0 * sigma));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const int y_lo = std::max(0, center.y - r), y_hi = std::min(h - 1, center.y + r);
    const int x_lo = std::max(0, center.x - r), x_hi = std::min(w - 1, center.x + r);
    for (int y = y_lo; y <= y_hi; ++y) {
        const double dy = y - center.y;
        double* row = o + static_cast<std::size_t>(y) * w;
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - center.x;
            row[x] = std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
    return out;
}

HeatmapStack encode_targets(const LandmarkAnnotation& ann, int h, int w, double sigma,
                            int n_landmarks) {
    if (n_landmarks < 1 || n_landmarks > static_cast<int>(kLandmarkNames.size())) {
        throw ValidationError("encode_targets: n_landmarks must be in [1, 27], got " +
                              std::to_string(n_landmarks));
    }
    HeatmapStack stack;
    stack.sigma = sigma;
    stack.data = Tensor::zeros({static_cast<std::size_t>(n_landmarks),
                                static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    double* dst = stack.data.mutable_data().data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < n_landmarks; ++c) {
        const std::string name(kLandmarkNames[static_cast<std::size_t>(c)]);
        auto it = ann.points.find(name);
        if (it == ann.points.end()) {
            throw ValidationError("encode_targets: annotation " + ann.image_id +
                                  " is missing landmark '" + name + "'");
        }
        const PointI at = scale_landmark(it->second, ann.orig_h, ann.orig_w, h, w);
        const Tensor channel = gaussian_heatmap(at, h, w, sigma);
        std::copy(channel.values().begin(), channel.values().end(),
                  dst + static_cast<std::size_t>(c) * plane);
        stack.peak_coords.push_back(at);
    }
    return stack;
}

// ---------------------------------------------------------------------------
// Annotation CSV

namespace {

std::string format_coord(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

void write_annotations_csv(const std::filesystem::path& path,
                           const std::vector<LandmarkAnnotation>& annotations) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "image_id,annotator_id,landmark,x,y,orig_w,orig_h\n";
    for (const LandmarkAnnotation& ann : annotations) {
        for (const auto& [name, p] : ann.points) {
            out << ann.image_id << ',' << ann.annotator_id << ',' << name << ','
                << format_coord(p.x) << ',' << format_coord(p.y) << ',' << ann.orig_w << ','
                << ann.orig_h << '\n';
        }
    }
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<LandmarkAnnotation> read_annotations_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "image_id,annotator_id,landmark,x,y,orig_w,orig_h") {
        throw ValidationError(path.string() + ": unexpected header '" + line + "'");
    }

    std::vector<LandmarkAnnotation> annotations;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 7) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 7 fields, got " +
                                  std::to_string(fields.size()));
        }
        try {
            const std::pair<std::string, std::string> key{fields[0], fields[1]};
            auto it = index.find(key);
            if (it == index.end()) {
                LandmarkAnnotation ann;
                ann.image_id = fields[0];
                ann.annotator_id = fields[1];
                ann.orig_w = std::stoi(fields[5]);
                ann.orig_h = std::stoi(fields[6]);
                annotations.push_back(std::move(ann));
                it = index.emplace(key, annotations.size() - 1).first;
            }
            LandmarkAnnotation& ann = annotations[it->second];
            if (std::stoi(fields[5]) != ann.orig_w || std::stoi(fields[6]) != ann.orig_h) {
                throw ValidationError("inconsistent original size for image " + fields[0]);
            }
            if (landmark_index(fields[2]) < 0) {
                throw ValidationError("unknown landmark '" + fields[2] + "'");
            }
            if (ann.points.count(fields[2])) {
                throw ValidationError("duplicate landmark '" + fields[2] + "' for image " +
                                      fields[0] + " annotator " + fields[1]);
            }
            ann.points[fields[2]] = {std::stod(fields[3]), std::stod(fields[4])};
        } catch (const std::invalid_argument&) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": malformed numeric field");
        }
    }
    for (const LandmarkAnnotation& ann : annotations) validate(ann);
    return annotations;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

namespace {

constexpr int kTemplateHalf = kSynthTemplateSize / 2;
constexpr int kPlacementMargin = kTemplateHalf + 2;
constexpr int kMinSeparation = kSynthTemplateSize + 3;

std::string synth_image_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "img%04d", i);
    return buf;
}

}  // namespace

namespace {

// Coarse 3x3 on/off layout per landmark, chosen so any two landmarks differ
// in at least 3 blocks. Coarse blocks survive pooling, which is what makes
// the stamps tellable-apart by a small network (and by template matching).
std::array<bool, 9> synth_block_pattern(std::uint64_t seed, int landmark_index) {
    std::vector<std::array<bool, 9>> chosen;
    for (int l = 0; l <= landmark_index; ++l) {
        Rng rng(derive_seed(seed, 0x7e00 + static_cast<std::uint64_t>(l)));
        std::array<bool, 9> pattern{};
        for (int attempt = 0; attempt < 4096; ++attempt) {
            int on = 0;
            for (bool& b : pattern) {
                b = rng.uniform() < 0.5;
                on += b;
            }
            if (on < 4 || on > 7) continue;
            bool distinct = true;
            for (const auto& prev : chosen) {
                int hamming = 0;
                for (int i = 0; i < 9; ++i) hamming += pattern[static_cast<std::size_t>(i)] != prev[static_cast<std::size_t>(i)];
                if (hamming < 3) {
                    distinct = false;
                    break;
                }
            }
            if (distinct) break;
        }
        chosen.push_back(pattern);
    }
    return chosen.back();
}

}  // namespace

Tensor synth_template(std::uint64_t seed, int landmark_index) {
    const auto pattern = synth_block_pattern(seed, landmark_index);
    Rng rng(derive_seed(seed, 0x8e00 + static_cast<std::uint64_t>(landmark_index)));
    const int s = kSynthTemplateSize;  // 9 = 3 blocks of 3 px
    Tensor t = Tensor::zeros({static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
    double* d = t.mutable_data().data();
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            if (pattern[static_cast<std::size_t>((y / 3) * 3 + x / 3)]) {
                d[y * s + x] = 0.7 + 0.3 * rng.uniform();
            }
        }
    }
    d[(s / 2) * s + s / 2] = 1.0;  // bright center marks the annotated point
    return t;
}

SynthDataset synth_generate(std::uint64_t seed, int n_images, int h, int w, int n_landmarks) {
    if (n_landmarks < 0 || n_landmarks > static_cast<int>(kLandmarkNames.size())) {
        throw ValidationError("synth_generate: n_landmarks must be in [0, 27], got " +
                              std::to_string(n_landmarks));
    }
    if (n_images > 0 && (h < 32 || w < 32)) {
        throw ValidationError("synth_generate: image dims must be >= 32, got " +
                              std::to_string(w) + "x" + std::to_string(h));
    }
    if (n_images < 0) throw ValidationError("synth_generate: n_images must be >= 0");

    std::vector<Tensor> templates;
    templates.reserve(static_cast<std::size_t>(n_landmarks));
    for (int l = 0; l < n_landmarks; ++l) templates.push_back(synth_template(seed, l));

    SynthDataset ds;
    for (int img = 0; img < n_images; ++img) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(img)));
        Tensor image = Tensor::zeros({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
        double* px = image.mutable_data().data();

        // Smooth low-amplitude background so images are not trivially blank.
        const double gx = rng.uniform(-0.08, 0.08);
        const double gy = rng.uniform(-0.08, 0.08);
        const double base = rng.uniform(0.05, 0.15);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                px[y * w + x] = base + gx * (static_cast<double>(x) / w) +
                                gy * (static_cast<double>(y) / h);
            }
        }

        LandmarkAnnotation ann;
        ann.image_id = synth_image_id(img);
        ann.annotator_id = "synthetic";
        ann.orig_h = h;
        ann.orig_w = w;

        std::vector<PointI> placed;
        for (int l = 0; l < n_landmarks; ++l) {
            PointI pos{};
            bool ok = false;
            // Rejection sampling keeps stamps apart; after enough failures
            // the last candidate is accepted so dense configs still generate.
            for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
                pos.x = kPlacementMargin +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(w - 2 * kPlacementMargin)));
                pos.y = kPlacementMargin +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(h - 2 * kPlacementMargin)));
                ok = true;
                for (const PointI& q : placed) {
                    if (std::abs(q.x - pos.x) < kMinSeparation &&
                        std::abs(q.y - pos.y) < kMinSeparation) {
                        ok = false;
                        break;
                    }
                }
            }
            placed.push_back(pos);

            const Tensor& tmpl = templates[static_cast<std::size_t>(l)];
            for (int dy = -kTemplateHalf; dy <= kTemplateHalf; ++dy) {
                for (int dx = -kTemplateHalf; dx <= kTemplateHalf; ++dx) {
                    const double v =
                        tmpl[static_cast<std::size_t>((dy + kTemplateHalf) * kSynthTemplateSize +
                                                      dx + kTemplateHalf)];
                    double& cell = px[(pos.y + dy) * w + pos.x + dx];
                    cell = std::max(cell, v);
                }
            }
            ann.points[std::string(kLandmarkNames[static_cast<std::size_t>(l)])] = {
                static_cast<double>(pos.x), static_cast<double>(pos.y)};
        }
        ds.images.push_back(std::move(image));
        ds.annotations.push_back(std::move(ann));
    }
    return ds;
}

}  // namespace cephalo
