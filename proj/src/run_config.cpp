#include "cephalo/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cephalo/error.hpp"

namespace cephalo {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& value, long long lo,
                    long long hi) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        if (v < lo || v > hi) {
            throw ConfigError("config key '" + key + "': value " + value + " out of range [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
    }
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "images_dir") {
        cfg.images_dir = value;
    } else if (key == "annotations") {
        cfg.annotations_csv = value;
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "arch") {
        cfg.model.arch = arch_from_name(value);
    } else if (key == "input_h") {
        cfg.model.input_h = static_cast<int>(parse_int(key, value, 1, 1 << 20));
    } else if (key == "input_w") {
        cfg.model.input_w = static_cast<int>(parse_int(key, value, 1, 1 << 20));
    } else if (key == "base_channels") {
        cfg.model.base_channels = static_cast<int>(parse_int(key, value, 1, 4096));
    } else if (key == "depth") {
        cfg.model.depth = static_cast<int>(parse_int(key, value, 1, 16));
    } else if (key == "kernel_size") {
        cfg.model.kernel_size = static_cast<int>(parse_int(key, value, 1, 31));
    } else if (key == "landmarks") {
        cfg.landmarks = static_cast<int>(parse_int(key, value, 1, 27));
        cfg.model.out_channels = cfg.landmarks;
    } else if (key == "epochs") {
        cfg.epochs = static_cast<int>(parse_int(key, value, 1, 1000000));
    } else if (key == "batch_size") {
        cfg.batch_size = static_cast<int>(parse_int(key, value, 1, 1 << 16));
    } else if (key == "lr") {
        cfg.adam.alpha = parse_double(key, value);
    } else if (key == "sigma") {
        cfg.sigma = parse_double(key, value);
    } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value, 0, INT64_MAX));
        cfg.model.seed = cfg.seed;
    } else if (key == "folds") {
        cfg.folds = static_cast<int>(parse_int(key, value, 2, 1 << 16));
    } else if (key == "jobs") {
        cfg.jobs = static_cast<int>(parse_int(key, value, 1, 256));
    } else if (key == "cm_per_px_x") {
        cfg.spacing.cm_per_px_x = parse_double(key, value);
    } else if (key == "cm_per_px_y") {
        cfg.spacing.cm_per_px_y = parse_double(key, value);
    } else if (key == "reference_annotator") {
        cfg.reference_annotator = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string entry = trim(line);
        if (entry.empty()) continue;
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected key = value, got '" + entry + "'");
        }
        apply_config_entry(cfg, trim(entry.substr(0, eq)), trim(entry.substr(eq + 1)));
    }
    return cfg;
}

// The architecture itself stays caller-chosen.
void apply_paper_protocol(RunConfig& cfg) {
    cfg.model.input_h = 512;
    cfg.model.input_w = 432;
    cfg.model.base_channels = 64;
    cfg.model.depth = 4;
    cfg.model.kernel_size = 3;
    cfg.model.out_channels = 27;
    cfg.landmarks = 27;
    cfg.epochs = 80;
    cfg.adam.alpha = 1e-3;
    cfg.sigma = 5.0;
    cfg.folds = 5;
}

// out_dir is deliberately absent: the hash identifies the experiment
// (inputs and hyperparameters), not where its artifacts land.
std::string RunConfig::canonical_string() const {
    std::ostringstream os;
    os << "images_dir=" << images_dir.string() << '\n'
       << "annotations=" << annotations_csv.string() << '\n'
       << "arch=" << arch_name(model.arch) << '\n'
       << "input_h=" << model.input_h << '\n'
       << "input_w=" << model.input_w << '\n'
       << "base_channels=" << model.base_channels << '\n'
       << "depth=" << model.depth << '\n'
       << "kernel_size=" << model.kernel_size << '\n'
       << "landmarks=" << landmarks << '\n'
       << "epochs=" << epochs << '\n'
       << "batch_size=" << batch_size << '\n';
    char buf[128];
    std::snprintf(buf, sizeof(buf), "lr=%.12g\nsigma=%.12g\n", adam.alpha, sigma);
    os << buf << "seed=" << seed << '\n'
       << "folds=" << folds << '\n';
    std::snprintf(buf, sizeof(buf), "cm_per_px_x=%.12g\ncm_per_px_y=%.12g\n", spacing.cm_per_px_x,
                  spacing.cm_per_px_y);
    os << buf << "reference_annotator=" << reference_annotator << '\n';
    return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string RunConfig::hash() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_string())));
    return buf;
}

}  // namespace cephalo
