#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cephalo/checkpoint.hpp"
#include "cephalo/data.hpp"
#include "cephalo/error.hpp"
#include "cephalo/eval.hpp"
#include "cephalo/gradcheck.hpp"
#include "cephalo/image_io.hpp"
#include "cephalo/run_config.hpp"
#include "cephalo/tensor.hpp"
#include "cephalo/train.hpp"
#include "cephalo/version.hpp"

namespace fs = std::filesystem;
using namespace cephalo;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// key=value overrides collected from the command line, applied on top of the
// config file.
struct Overrides {
    std::vector<std::pair<std::string, std::string>> entries;

    void maybe(const std::string& key, const std::string& value) {
        if (!value.empty()) entries.emplace_back(key, value);
    }
};

RunConfig effective_config(const std::string& config_path, const Overrides& ov,
                           bool paper_protocol) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_run_config(config_path);
    if (paper_protocol) apply_paper_protocol(cfg);
    for (const auto& [k, v] : ov.entries) apply_config_entry(cfg, k, v);
    return cfg;
}

struct LoadedDataset {
    TrainDataset train;                                // reference-annotator truth
    std::vector<LandmarkAnnotation> all_annotations;   // every annotator
    std::string reference_annotator;
    std::vector<std::string> image_files;
};

LoadedDataset load_dataset(const RunConfig& cfg) {
    if (cfg.images_dir.empty() || cfg.annotations_csv.empty()) {
        throw ConfigError("config must set images_dir and annotations");
    }
    if (!fs::is_directory(cfg.images_dir)) {
        throw ConfigError("images_dir does not exist: " + cfg.images_dir.string());
    }

    LoadedDataset ds;
    ds.all_annotations = read_annotations_csv(cfg.annotations_csv);

    std::set<std::string> annotators;
    for (const auto& ann : ds.all_annotations) annotators.insert(ann.annotator_id);
    ds.reference_annotator = cfg.reference_annotator;
    if (ds.reference_annotator.empty()) {
        if (annotators.size() != 1) {
            throw ConfigError("annotations carry " + std::to_string(annotators.size()) +
                              " annotators; set reference_annotator to pick the training truth");
        }
        ds.reference_annotator = *annotators.begin();
    } else if (!annotators.count(ds.reference_annotator)) {
        throw ConfigError("reference_annotator '" + ds.reference_annotator +
                          "' not present in annotations");
    }

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(cfg.images_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
    }
    // File order defines dataset order; folds are never shuffled.
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .pgm/.png images in " + cfg.images_dir.string());

    std::map<std::string, const LandmarkAnnotation*> by_image;
    for (const auto& ann : ds.all_annotations) {
        if (ann.annotator_id == ds.reference_annotator) by_image[ann.image_id] = &ann;
    }

    std::vector<Tensor> images;
    std::vector<LandmarkAnnotation> annotations;
    for (const fs::path& f : files) {
        const std::string id = f.stem().string();
        auto it = by_image.find(id);
        if (it == by_image.end()) {
            throw ValidationError("image " + f.filename().string() +
                                  " has no annotation from annotator '" +
                                  ds.reference_annotator + "'");
        }
        images.push_back(load_image(f));
        annotations.push_back(*it->second);
        ds.image_files.push_back(f.filename().string());
    }

    ds.train = prepare_dataset(images, annotations, cfg.model.input_h, cfg.model.input_w,
                               cfg.sigma, cfg.landmarks);
    return ds;
}

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

fs::path find_fold_checkpoint(const fs::path& fold_dir, int fold) {
    if (!fs::is_directory(fold_dir)) {
        throw RuntimeError("missing checkpoint directory for fold " + std::to_string(fold) +
                           ": " + fold_dir.string());
    }
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(fold_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ckpt_epoch_", 0) == 0 && entry.path().extension() == ".bin") {
            found.push_back(entry.path());
        }
    }
    if (found.empty()) {
        throw RuntimeError("no checkpoint found for fold " + std::to_string(fold) + " under " +
                           fold_dir.string());
    }
    std::sort(found.begin(), found.end());
    return found.back();
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(std::uint64_t seed, int n, const std::string& hw, int landmarks,
              const fs::path& out_dir) {
    int h = 0, w = 0;
    if (std::sscanf(hw.c_str(), "%dx%d", &h, &w) != 2 || h < 1 || w < 1) {
        throw ConfigError("--hw expects HxW (e.g. 64x64), got '" + hw + "'");
    }
    const SynthDataset ds = synth_generate(seed, n, h, w, landmarks);

    fs::create_directories(out_dir / "images");
    std::uint64_t digest = fnv1a64("cephalo-synth");
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const fs::path file = out_dir / "images" / (ds.annotations[i].image_id + ".pgm");
        save_pgm(file, ds.images[i]);
        digest = fnv1a64(read_text(file), digest);
    }
    write_annotations_csv(out_dir / "annotations.csv", ds.annotations);
    digest = fnv1a64(read_text(out_dir / "annotations.csv"), digest);

    std::printf("wrote %d images to %s\n", n, (out_dir / "images").string().c_str());
    std::printf("digest %016llx\n", static_cast<unsigned long long>(digest));
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, bool quiet) {
    const LoadedDataset ds = load_dataset(cfg);
    const std::size_t n = ds.train.samples.size();
    if (cfg.folds < 2 || n % static_cast<std::size_t>(cfg.folds) != 0) {
        throw ConfigError("folds (" + std::to_string(cfg.folds) +
                          ") must be >= 2 and divide the dataset size (" + std::to_string(n) +
                          ")");
    }

    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.model = cfg.model;
    tc.adam = cfg.adam;
    tc.sigma = cfg.sigma;
    tc.checkpoint_dir = cfg.out_dir;
    tc.seed = cfg.seed;
    tc.config_hash = cfg.hash();
    tc.verbose = !quiet;

    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "folds.json", fold_plan_json(make_folds(n, cfg.folds)));

    const auto results = run_cross_validation(ds.train, tc, cfg.folds, cfg.spacing, cfg.jobs);

    double mean_best_val = 0.0;
    for (const FoldResult& r : results) {
        write_text(cfg.out_dir / ("fold_" + std::to_string(r.fold_id)) / "history.csv",
                   history_csv(r.history));
        mean_best_val += r.best_val_loss / static_cast<double>(results.size());
    }

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config_hash"] = cfg.hash();
    manifest["arch"] = arch_name(cfg.model.arch);
    manifest["param_count"] = param_count(cfg.model);
    manifest["epochs"] = cfg.epochs;
    manifest["folds"] = cfg.folds;
    manifest["landmarks"] = cfg.landmarks;
    manifest["input"] = {{"h", cfg.model.input_h}, {"w", cfg.model.input_w}};
    manifest["images"] = ds.image_files;
    manifest["reference_annotator"] = ds.reference_annotator;
    std::vector<std::uint64_t> seeds;
    for (int f = 0; f < cfg.folds; ++f) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(f));
    manifest["fold_seeds"] = seeds;
    manifest["mean_best_val_loss"] = mean_best_val;
    manifest["written_at"] = timestamp_utc();
    write_text(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::printf("trained %d folds (%s, %zu params), mean best val loss %.6g\n", cfg.folds,
                arch_name(cfg.model.arch), param_count(cfg.model), mean_best_val);
    std::printf("artifacts under %s\n", cfg.out_dir.string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval_fixture(const fs::path& fixture, const fs::path& out_dir) {
    std::istringstream in(read_text(fixture));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        lines.push_back(line);
    }
    if (lines.empty()) throw ValidationError(fixture.string() + ": no data rows");
    std::ostringstream joined;
    for (const std::string& l : lines) joined << l << '\n';
    const EvalReport parsed = parse_report_csv(joined.str());

    // Re-aggregate the split values through build_table; the mean column of
    // the fixture is the published number and is not fed back in.
    std::vector<std::map<std::string, std::vector<double>>> per_fold(
        parsed.rows.empty() ? 0 : parsed.rows.front().values_cm.size());
    for (const EvalRow& row : parsed.rows) {
        for (std::size_t f = 0; f < row.values_cm.size(); ++f) {
            per_fold[f][row.landmark] = {row.values_cm[f]};
        }
    }
    const EvalReport report = build_table(per_fold, {1.0, 1.0});

    fs::create_directories(out_dir);
    write_text(out_dir / "fixture-report.csv", emit_report(report, ReportFormat::csv));
    write_text(out_dir / "fixture-report.md", emit_report(report, ReportFormat::markdown));

    double max_dev = 0.0;
    for (const EvalRow& row : report.rows) {
        for (const EvalRow& ref : parsed.rows) {
            if (ref.landmark == row.landmark) {
                max_dev = std::max(max_dev, std::abs(row.mean_cm - ref.mean_cm));
            }
        }
    }
    std::printf("re-aggregated %zu landmarks; overall mean %s cm; max |mean - published| %.4f\n",
                report.rows.size(), format_cm(report.overall_mean_cm).c_str(), max_dev);
    return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& run_dir_in, const fs::path& out_dir_in) {
    const fs::path run_dir = run_dir_in.empty() ? cfg.out_dir : run_dir_in;
    const fs::path out_dir = out_dir_in.empty() ? run_dir : out_dir_in;

    const LoadedDataset ds = load_dataset(cfg);
    const std::size_t n = ds.train.samples.size();
    if (cfg.folds < 2 || n % static_cast<std::size_t>(cfg.folds) != 0) {
        throw ConfigError("folds (" + std::to_string(cfg.folds) +
                          ") must be >= 2 and divide the dataset size (" + std::to_string(n) +
                          ")");
    }
    const FoldPlan plan = make_folds(n, cfg.folds);

    std::vector<std::map<std::string, std::vector<double>>> per_fold;
    for (int f = 0; f < cfg.folds; ++f) {
        const fs::path ckpt = find_fold_checkpoint(run_dir / ("fold_" + std::to_string(f)), f);
        ModelConfig mc = cfg.model;
        mc.seed = cfg.seed + static_cast<std::uint64_t>(f);
        Model model = build_model(mc);
        load_model_weights(ckpt, model);
        per_fold.push_back(eval_fold_errors(model, ds.train,
                                            plan.folds[static_cast<std::size_t>(f)].test,
                                            cfg.spacing));
    }
    const EvalReport report = build_table(per_fold, cfg.spacing);
    fs::create_directories(out_dir);
    write_text(out_dir / "report.csv", emit_report(report, ReportFormat::csv));
    write_text(out_dir / "report.md", emit_report(report, ReportFormat::markdown));
    std::printf("evaluated %d folds; overall mean radial error %s cm\n", cfg.folds,
                format_cm(report.overall_mean_cm).c_str());

    std::set<std::string> annotators;
    for (const auto& ann : ds.all_annotations) annotators.insert(ann.annotator_id);
    if (annotators.size() == 3) {
        const EvalReport observers = interobserver_table(ds.all_annotations, cfg.spacing);
        write_text(out_dir / "observers.csv", emit_report(observers, ReportFormat::csv));
        write_text(out_dir / "observers.md", emit_report(observers, ReportFormat::markdown));

        // Side-by-side model/observer means in the published comparison shape.
        std::ostringstream cmp;
        cmp << "landmark,model_vs_" << ds.reference_annotator << ",three_annotators\n";
        for (const EvalRow& row : report.rows) {
            for (const EvalRow& orow : observers.rows) {
                if (orow.landmark == row.landmark) {
                    cmp << row.landmark << ',' << format_cm(row.mean_cm) << ','
                        << format_cm(orow.mean_cm) << '\n';
                }
            }
        }
        cmp << "OVERALL," << format_cm(report.overall_mean_cm) << ','
            << format_cm(observers.overall_mean_cm) << '\n';
        write_text(out_dir / "comparison.csv", cmp.str());
        std::printf("three annotators present; wrote observers.csv and comparison.csv\n");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// compare-observers

int cmd_compare_observers(const fs::path& annotations, const PixelSpacing& spacing,
                          const fs::path& out_dir) {
    const auto all = read_annotations_csv(annotations);
    const EvalReport report = interobserver_table(all, spacing);
    fs::create_directories(out_dir);
    write_text(out_dir / "observers.csv", emit_report(report, ReportFormat::csv));
    write_text(out_dir / "observers.md", emit_report(report, ReportFormat::markdown));
    std::printf("%zu landmarks, overall mean pairwise distance %s cm\n", report.rows.size(),
                format_cm(report.overall_mean_cm).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(double h, double tol, bool inject_fault) {
    if (inject_fault) testing::set_conv_backward_sign_fault(true);
    ModelConfig cfg;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.in_channels = 1;
    cfg.out_channels = 3;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.kernel_size = 3;

    bool all_pass = true;
    for (Arch arch : {Arch::fcn, Arch::unet}) {
        cfg.arch = arch;
        cfg.seed = arch == Arch::fcn ? 11 : 12;
        const GradCheckResult r = gradcheck_model(cfg, h, tol, /*data_seed=*/99);
        std::printf("gradcheck %-4s  max_rel %.3e  max_abs %.3e  worst %-18s  %s\n",
                    arch_name(arch), r.max_rel_error, r.max_abs_error, r.worst_param.c_str(),
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) throw NumericError("gradient check failed");
    return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const fs::path& in_path, const std::string& format, const fs::path& out_path) {
    const EvalReport report = parse_report_csv(read_text(in_path));
    const std::string rendered = emit_report(
        report, format == "markdown" ? ReportFormat::markdown : ReportFormat::csv);
    if (out_path.empty()) {
        std::fputs(rendered.c_str(), stdout);
    } else {
        write_text(out_path, rendered);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Landmark heatmap pipeline: synthesize, train, evaluate, compare"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::uint64_t synth_seed = 0;
    int synth_n = 10;
    std::string synth_hw = "64x64";
    int synth_landmarks = 5;
    std::string synth_out = "synth";
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--n", synth_n, "number of images")->check(CLI::NonNegativeNumber);
    synth->add_option("--hw", synth_hw, "image size HxW (default 64x64)");
    synth->add_option("--landmarks", synth_landmarks, "landmarks per image (<= 27)");
    synth->add_option("--out", synth_out, "output directory");

    // shared config/override options for train + eval
    auto add_run_options = [](CLI::App* cmd, std::string& config_path, Overrides& ov,
                              bool& paper) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_flag("--paper-protocol", paper,
                      "preset: epochs 80, lr 0.001, 5 folds, 432x512 input, 27 landmarks");
        static const char* keys[] = {"arch",   "epochs", "seed",  "jobs",   "out_dir",
                                     "folds",  "lr",     "sigma", "images_dir", "annotations",
                                     "batch_size", "landmarks", "base_channels", "depth",
                                     "input_h", "input_w", "reference_annotator",
                                     "cm_per_px_x", "cm_per_px_y"};
        for (const char* key : keys) {
            auto holder = std::make_shared<std::string>();
            cmd->add_option_function<std::string>(
                   std::string("--") + key,
                   [&ov, key](const std::string& v) { ov.entries.emplace_back(key, v); },
                   "override config key " + std::string(key))
                ->type_name("VALUE");
            (void)holder;
        }
    };

    auto* train = app.add_subcommand("train", "Run k-fold cross-validation training");
    std::string train_config;
    Overrides train_ov;
    bool train_paper = false;
    bool train_quiet = false;
    add_run_options(train, train_config, train_ov, train_paper);
    train->add_flag("--quiet", train_quiet, "suppress per-epoch progress");

    auto* eval = app.add_subcommand("eval", "Evaluate fold checkpoints into report tables");
    std::string eval_config;
    Overrides eval_ov;
    bool eval_paper = false;
    std::string eval_run, eval_out, eval_fixture;
    add_run_options(eval, eval_config, eval_ov, eval_paper);
    eval->add_option("--run", eval_run, "run directory with fold_<k> checkpoints");
    eval->add_option("--out", eval_out, "report output directory");
    eval->add_option("--from-fixture", eval_fixture,
                     "re-aggregate a published-results fixture CSV instead of checkpoints");

    auto* cmp = app.add_subcommand("compare-observers", "Pairwise annotator agreement table");
    std::string cmp_annotations;
    double cmp_sx = 0.0, cmp_sy = 0.0;
    std::string cmp_out = ".";
    cmp->add_option("--annotations", cmp_annotations, "annotation CSV with three annotators")
        ->required();
    cmp->add_option("--cm-per-px-x", cmp_sx, "pixel spacing, x")->required();
    cmp->add_option("--cm-per-px-y", cmp_sy, "pixel spacing, y")->required();
    cmp->add_option("--out", cmp_out, "output directory");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of both architectures");
    double grad_h = 1e-4, grad_tol = 1e-4;
    bool grad_fault = false;
    grad->add_option("--step", grad_h, "finite-difference step");
    grad->add_option("--tol", grad_tol, "max relative error");
    grad->add_flag("--inject-fault", grad_fault)->group("");  // test hook, hidden

    auto* rep = app.add_subcommand("report", "Re-render a report CSV");
    std::string rep_in, rep_format = "markdown", rep_out;
    rep->add_option("--in", rep_in, "report.csv produced by eval")->required();
    rep->add_option("--format", rep_format, "csv or markdown")
        ->check(CLI::IsMember({"csv", "markdown"}));
    rep->add_option("--out", rep_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
        if (synth->parsed()) {
            return cmd_synth(synth_seed, synth_n, synth_hw, synth_landmarks, synth_out);
        }
        if (train->parsed()) {
            return cmd_train(effective_config(train_config, train_ov, train_paper), train_quiet);
        }
        if (eval->parsed()) {
            if (!eval_fixture.empty()) {
                return cmd_eval_fixture(eval_fixture, eval_out.empty() ? "." : eval_out);
            }
            return cmd_eval(effective_config(eval_config, eval_ov, eval_paper), eval_run,
                            eval_out);
        }
        if (cmp->parsed()) {
            return cmd_compare_observers(cmp_annotations, {cmp_sx, cmp_sy}, cmp_out);
        }
        if (grad->parsed()) return cmd_gradcheck(grad_h, grad_tol, grad_fault);
        if (rep->parsed()) return cmd_report(rep_in, rep_format, rep_out);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0;  // --help / --version
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
