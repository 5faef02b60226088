#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "cephalo/data.hpp"

using namespace cephalo;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
};

std::string cli_path() {
    const char* p = std::getenv("CEPHALO_CLI");
    REQUIRE_MESSAGE(p != nullptr, "CEPHALO_CLI must point at the built binary");
    return p;
}

CliResult run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "cephalo_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string digest_line(const std::string& out) {
    const auto pos = out.find("digest ");
    REQUIRE(pos != std::string::npos);
    return out.substr(pos, 23);
}

void write_config(const fs::path& path, const fs::path& data_dir, const fs::path& out_dir,
                  const std::string& extra = "") {
    std::ofstream cfg(path);
    cfg << "images_dir = " << (data_dir / "images").string() << "\n"
        << "annotations = " << (data_dir / "annotations.csv").string() << "\n"
        << "out_dir = " << out_dir.string() << "\n"
        << "arch = unet\n"
        << "input_h = 32\ninput_w = 32\n"
        << "base_channels = 4\ndepth = 2\n"
        << "landmarks = 3\n"
        << "epochs = 2\nbatch_size = 2\n"
        << "lr = 0.002\nsigma = 1.5\nseed = 9\nfolds = 5\n"
        << "cm_per_px_x = 1.0\ncm_per_px_y = 1.0\n"
        << extra;
}

}  // namespace

TEST_CASE("synth is deterministic and round-trips through the loader") {
    const fs::path d1 = fresh_dir("synth1");
    const fs::path d2 = fresh_dir("synth2");
    const auto r1 = run_cli("synth --seed 7 --n 10 --hw 64x64 --landmarks 5 --out " + d1.string());
    const auto r2 = run_cli("synth --seed 7 --n 10 --hw 64x64 --landmarks 5 --out " + d2.string());
    CHECK(r1.exit_code == 0);
    CHECK(r2.exit_code == 0);
    CHECK(digest_line(r1.out) == digest_line(r2.out));

    const auto r3 = run_cli("synth --seed 8 --n 10 --hw 64x64 --landmarks 5 --out " + d2.string());
    CHECK(digest_line(r3.out) != digest_line(r1.out));

    const auto anns = read_annotations_csv(d1 / "annotations.csv");
    CHECK(anns.size() == 10);
    for (const auto& ann : anns) CHECK(ann.points.size() == 5);

    int images = 0;
    for (const auto& e : fs::directory_iterator(d1 / "images")) {
        if (e.path().extension() == ".pgm") ++images;
    }
    CHECK(images == 10);
}

TEST_CASE("synth with n=0 writes a header-only annotation file and succeeds") {
    const fs::path dir = fresh_dir("synth_empty");
    const auto r = run_cli("synth --seed 1 --n 0 --hw 64x64 --out " + dir.string());
    CHECK(r.exit_code == 0);
    CHECK(slurp(dir / "annotations.csv") == "image_id,annotator_id,landmark,x,y,orig_w,orig_h\n");
}

TEST_CASE("train writes five fold checkpoints, histories and a manifest; reruns are identical") {
    const fs::path data = fresh_dir("train_data");
    REQUIRE(run_cli("synth --seed 3 --n 10 --hw 32x32 --landmarks 3 --out " + data.string())
                .exit_code == 0);

    const fs::path out1 = fresh_dir("train_out1");
    const fs::path out2 = fresh_dir("train_out2");
    const fs::path cfg = data / "run.cfg";
    write_config(cfg, data, out1);

    const auto r1 = run_cli("train --quiet --config " + cfg.string());
    INFO(r1.out);
    CHECK(r1.exit_code == 0);
    for (int f = 0; f < 5; ++f) {
        const fs::path fold = out1 / ("fold_" + std::to_string(f));
        CHECK(fs::exists(fold / "history.csv"));
        CHECK(fs::exists(fold / "best.json"));
        bool has_ckpt = false;
        for (const auto& e : fs::directory_iterator(fold)) {
            has_ckpt = has_ckpt || e.path().extension() == ".bin";
        }
        CHECK(has_ckpt);
    }
    CHECK(fs::exists(out1 / "manifest.json"));
    CHECK(fs::exists(out1 / "folds.json"));

    const auto r2 = run_cli("train --quiet --config " + cfg.string() + " --out_dir " +
                            out2.string());
    INFO(r2.out);
    CHECK(r2.exit_code == 0);
    for (int f = 0; f < 5; ++f) {
        const std::string rel = "fold_" + std::to_string(f);
        CHECK(slurp(out1 / rel / "history.csv") == slurp(out2 / rel / "history.csv"));
    }
}

TEST_CASE("unet and fcn manifests record param counts with unet strictly larger") {
    const fs::path data = fresh_dir("arch_data");
    REQUIRE(run_cli("synth --seed 4 --n 5 --hw 32x32 --landmarks 3 --out " + data.string())
                .exit_code == 0);
    const fs::path cfg = data / "run.cfg";
    const fs::path out_unet = fresh_dir("arch_unet");
    const fs::path out_fcn = fresh_dir("arch_fcn");
    write_config(cfg, data, out_unet, "folds = 5\nepochs = 1\n");

    // 5 images train fine with folds=5: each fold trains on 4, validates on 1.
    const auto ru = run_cli("train --quiet --config " + cfg.string());
    INFO(ru.out);
    CHECK(ru.exit_code == 0);
    const auto rf = run_cli("train --quiet --config " + cfg.string() + " --arch fcn --out_dir " +
                            out_fcn.string());
    INFO(rf.out);
    CHECK(rf.exit_code == 0);

    auto param_count_of = [](const fs::path& manifest) {
        const std::string text = slurp(manifest);
        const auto pos = text.find("\"param_count\": ");
        REQUIRE(pos != std::string::npos);
        return std::stoll(text.substr(pos + 15));
    };
    const long long unet = param_count_of(out_unet / "manifest.json");
    const long long fcn = param_count_of(out_fcn / "manifest.json");
    CHECK(unet > fcn);

    const std::string mu = slurp(out_unet / "manifest.json");
    CHECK(mu.find("\"arch\": \"unet\"") != std::string::npos);
    CHECK(slurp(out_fcn / "manifest.json").find("\"arch\": \"fcn\"") != std::string::npos);
}

TEST_CASE("eval writes reports for a trained run; oracle fixture mode re-aggregates") {
    const fs::path data = fresh_dir("eval_data");
    REQUIRE(run_cli("synth --seed 5 --n 10 --hw 32x32 --landmarks 3 --out " + data.string())
                .exit_code == 0);
    const fs::path out = fresh_dir("eval_out");
    const fs::path cfg = data / "run.cfg";
    write_config(cfg, data, out);
    REQUIRE(run_cli("train --quiet --config " + cfg.string()).exit_code == 0);

    const auto re = run_cli("eval --config " + cfg.string());
    INFO(re.out);
    CHECK(re.exit_code == 0);
    const std::string report = slurp(out / "report.csv");
    CHECK(report.rfind("landmark,split1,split2,split3,split4,split5,mean\n", 0) == 0);
    // 3 landmark rows + header + OVERALL
    CHECK(std::count(report.begin(), report.end(), '\n') == 5);
    CHECK(fs::exists(out / "report.md"));

    // missing checkpoint is reported with the fold id
    fs::remove_all(out / "fold_3");
    const auto rmiss = run_cli("eval --config " + cfg.string());
    CHECK(rmiss.exit_code == 2);
    CHECK(rmiss.out.find("error:") != std::string::npos);
    CHECK(rmiss.out.find("fold 3") != std::string::npos);
}

TEST_CASE("compare-observers emits a symmetric report") {
    const fs::path dir = fresh_dir("observers");
    // three identical annotators over two images
    std::vector<LandmarkAnnotation> anns;
    for (const char* who : {"d1", "d2", "d3"}) {
        for (int img = 0; img < 2; ++img) {
            LandmarkAnnotation ann;
            ann.image_id = "img" + std::to_string(img);
            ann.annotator_id = who;
            ann.orig_h = 100;
            ann.orig_w = 100;
            int i = 0;
            for (std::string_view name : kLandmarkNames) {
                ann.points[std::string(name)] = {static_cast<double>(10 + i), 50.0};
                ++i;
            }
            anns.push_back(std::move(ann));
        }
    }
    const fs::path csv = dir / "anns.csv";
    write_annotations_csv(csv, anns);

    const auto r = run_cli("compare-observers --annotations " + csv.string() +
                           " --cm-per-px-x 1 --cm-per-px-y 1 --out " + dir.string());
    INFO(r.out);
    CHECK(r.exit_code == 0);
    const std::string report = slurp(dir / "observers.csv");
    CHECK(std::count(report.begin(), report.end(), '\n') == 29);  // header + 27 + OVERALL
    CHECK(report.find("A,0.00,0.00,0.00,0.00") != std::string::npos);
}

TEST_CASE("gradcheck covers both architectures and honors the fault hook") {
    const auto ok = run_cli("gradcheck");
    INFO(ok.out);
    CHECK(ok.exit_code == 0);
    CHECK(ok.out.find("fcn") != std::string::npos);
    CHECK(ok.out.find("unet") != std::string::npos);
    CHECK(ok.out.find("PASS") != std::string::npos);

    const auto bad = run_cli("gradcheck --inject-fault");
    CHECK(bad.exit_code == 2);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("report re-renders a CSV as markdown") {
    const fs::path dir = fresh_dir("report");
    const fs::path in = dir / "r.csv";
    std::ofstream(in) << "landmark,split1,split2,mean\nA,1.00,2.00,1.50\nOVERALL,,,1.50\n";
    const auto r = run_cli("report --in " + in.string() + " --format markdown");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("| A | 1.00 | 2.00 | 1.50 |") != std::string::npos);
}

TEST_CASE("exit codes: 1 for validation problems, 2 for runtime failures") {
    const auto bad_key = run_cli("train --config /nonexistent/config.cfg");
    CHECK(bad_key.exit_code == 2);  // missing file is an I/O failure
    CHECK(bad_key.out.find("error:") != std::string::npos);

    const fs::path dir = fresh_dir("badcfg");
    const fs::path cfg = dir / "bad.cfg";
    std::ofstream(cfg) << "not_a_key = 1\n";
    const auto unknown = run_cli("train --config " + cfg.string());
    CHECK(unknown.exit_code == 1);
    CHECK(unknown.out.find("error: unknown config key 'not_a_key'") != std::string::npos);

    const auto bad_hw = run_cli("synth --hw banana --out " + dir.string());
    CHECK(bad_hw.exit_code == 1);
    CHECK(bad_hw.out.find("error:") != std::string::npos);
}
