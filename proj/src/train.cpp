#include "cephalo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cephalo/error.hpp"

namespace cephalo {

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train.epochs must be >= 1, got " + std::to_string(cfg.epochs));
    if (cfg.batch_size < 1) {
        throw ConfigError("train.batch_size must be >= 1, got " + std::to_string(cfg.batch_size));
    }
    if (!(cfg.sigma > 0.0)) throw ConfigError("train.sigma must be > 0");
    validate(cfg.model);
}

std::string history_csv(const TrainHistory& history, bool include_timing) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_accuracy_proxy,seconds\n";
    char buf[160];
    for (const EpochRecord& r : history.records) {
        std::snprintf(buf, sizeof(buf), "%d,%.9e,%.9e,%.6f,%.3f\n", r.epoch, r.train_loss,
                      r.val_loss, r.val_accuracy, include_timing ? r.seconds : 0.0);
        os << buf;
    }
    return os.str();
}

TrainDataset prepare_dataset(const std::vector<Tensor>& images,
                             const std::vector<LandmarkAnnotation>& annotations, int h, int w,
                             double sigma, int n_landmarks) {
    if (images.size() != annotations.size()) {
        throw ValidationError("prepare_dataset: " + std::to_string(images.size()) +
                              " images vs " + std::to_string(annotations.size()) +
                              " annotations");
    }
    TrainDataset ds;
    ds.n_landmarks = n_landmarks;
    ds.input_h = h;
    ds.input_w = w;
    for (std::size_t i = 0; i < images.size(); ++i) {
        TrainSample s;
        s.image = resize_bilinear(images[i], h, w);
        HeatmapStack stack = encode_targets(annotations[i], h, w, sigma, n_landmarks);
        s.target = stack.data;
        s.annotation = annotations[i];
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {

Tensor stack_images(const TrainDataset& ds, const std::vector<std::size_t>& idx, bool targets) {
    const std::size_t b = idx.size();
    const Tensor& first = targets ? ds.samples[idx[0]].target : ds.samples[idx[0]].image;
    const std::size_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor out = Tensor::zeros({b, c, h, w});
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < b; ++i) {
        const Tensor& t = targets ? ds.samples[idx[i]].target : ds.samples[idx[i]].image;
        std::copy(t.values().begin(), t.values().end(), o + i * c * h * w);
    }
    return out;
}

struct ValScore {
    double loss = 0.0;
    double accuracy = 0.0;
};

ValScore validate_on(const Model& model, const TrainDataset& ds,
                     const std::vector<std::size_t>& test_idx, int batch_size, int epoch,
                     const TrainHooks* hooks) {
    ValScore score;
    std::size_t done = 0;
    while (done < test_idx.size()) {
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                       test_idx.size() - done);
        std::vector<std::size_t> chunk(test_idx.begin() + static_cast<std::ptrdiff_t>(done),
                                       test_idx.begin() + static_cast<std::ptrdiff_t>(done + take));
        if (hooks && hooks->on_val_sample) {
            for (std::size_t i : chunk) hooks->on_val_sample(epoch, i);
        }
        const Tensor batch = stack_images(ds, chunk, false);
        const Tensor target = stack_images(ds, chunk, true);
        const Tensor pred = model.forward(batch);
        score.loss += mse_loss(pred, target)[0] * static_cast<double>(take);
        score.accuracy += pixel_accuracy(pred, target) * static_cast<double>(take);
        done += take;
    }
    score.loss /= static_cast<double>(test_idx.size());
    score.accuracy /= static_cast<double>(test_idx.size());
    return score;
}

void write_sidecar(const std::filesystem::path& path, int epoch, double val_loss,
                   const std::string& config_hash) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["val_loss"] = val_loss;
    j["config_hash"] = config_hash;
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << j.dump(2) << "\n";
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

FoldResult train_fold(const TrainDataset& dataset, const FoldPlan::Fold& fold,
                      const TrainConfig& config, const TrainHooks* hooks) {
    validate(config);
    if (dataset.samples.empty()) throw ValidationError("train_fold: empty dataset");
    for (std::size_t i : fold.train) {
        if (i >= dataset.samples.size()) {
            throw ValidationError("train_fold: train index " + std::to_string(i) +
                                  " out of range");
        }
    }
    for (std::size_t i : fold.test) {
        if (i >= dataset.samples.size()) {
            throw ValidationError("train_fold: test index " + std::to_string(i) + " out of range");
        }
    }
    if (fold.train.empty() || fold.test.empty()) {
        throw ValidationError("train_fold: empty train or test split");
    }
    if (dataset.input_h != config.model.input_h || dataset.input_w != config.model.input_w) {
        throw ShapeError("train_fold: dataset is " + std::to_string(dataset.input_w) + "x" +
                         std::to_string(dataset.input_h) + ", model expects " +
                         std::to_string(config.model.input_w) + "x" +
                         std::to_string(config.model.input_h));
    }

    std::filesystem::create_directories(config.checkpoint_dir);

    FoldResult result;
    result.model = build_model(config.model);
    AdamState adam(config.adam);

    double best_val = std::numeric_limits<double>::infinity();
    std::filesystem::path retained;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double train_loss_acc = 0.0;
        std::size_t seen = 0;
        std::size_t batch_no = 0;
        std::size_t done = 0;
        while (done < fold.train.size()) {
            const std::size_t take = std::min<std::size_t>(
                static_cast<std::size_t>(config.batch_size), fold.train.size() - done);
            std::vector<std::size_t> chunk(
                fold.train.begin() + static_cast<std::ptrdiff_t>(done),
                fold.train.begin() + static_cast<std::ptrdiff_t>(done + take));
            if (hooks && hooks->on_train_sample) {
                for (std::size_t i : chunk) hooks->on_train_sample(epoch, i);
            }
            const Tensor batch = stack_images(dataset, chunk, false);
            const Tensor target = stack_images(dataset, chunk, true);

            Graph g;
            const Tensor pred = result.model.forward(batch, &g);
            const Tensor loss = mse_loss(pred, target, &g);
            if (!std::isfinite(loss[0])) {
                throw NumericError("train_fold: loss diverged at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no));
            }
            g.backward(g.node_of(loss));
            auto params = result.model.params();
            adam_step(params, adam);

            train_loss_acc += loss[0] * static_cast<double>(take);
            seen += take;
            done += take;
            ++batch_no;
        }

        const ValScore val =
            validate_on(result.model, dataset, fold.test, config.batch_size, epoch, hooks);
        if (!std::isfinite(val.loss)) {
            throw NumericError("train_fold: validation loss diverged at epoch " +
                               std::to_string(epoch));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss_acc / static_cast<double>(seen);
        rec.val_loss = val.loss;
        rec.val_accuracy = val.accuracy;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.records.push_back(rec);

        if (val.loss < best_val) {
            best_val = val.loss;
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.bin", epoch);
            const std::filesystem::path path = config.checkpoint_dir / name;
            save_model_weights(path, result.model);
            write_sidecar(config.checkpoint_dir / "best.json", epoch, val.loss,
                          config.config_hash);
            if (!retained.empty() && retained != path) {
                std::error_code ec;
                std::filesystem::remove(retained, ec);
            }
            retained = path;
            result.best_epoch = epoch;
            result.best_val_loss = val.loss;
        }
        if (config.verbose) {
            std::fprintf(stderr, "epoch %3d  train %.6f  val %.6f  acc %.4f  (%.2fs)\n", epoch,
                         rec.train_loss, rec.val_loss, rec.val_accuracy, rec.seconds);
        }
    }

    result.checkpoint_path = retained;
    load_model_weights(retained, result.model);
    return result;
}

std::vector<FoldResult> run_cross_validation(const TrainDataset& dataset,
                                             const TrainConfig& config, int k,
                                             const PixelSpacing& spacing, int jobs,
                                             const TrainHooks* hooks) {
    validate(config);
    validate(spacing);
    const FoldPlan plan = make_folds(dataset.samples.size(), k);

    std::vector<FoldResult> results(static_cast<std::size_t>(k));
    std::vector<std::string> errors(static_cast<std::size_t>(k));

    auto run_one = [&](int f) {
        try {
            TrainConfig fold_cfg = config;
            fold_cfg.model.seed = config.seed + static_cast<std::uint64_t>(f);
            fold_cfg.checkpoint_dir = config.checkpoint_dir / ("fold_" + std::to_string(f));
            FoldResult r = train_fold(dataset, plan.folds[static_cast<std::size_t>(f)], fold_cfg,
                                      hooks);
            r.fold_id = f;
            r.test_errors_cm = eval_fold_errors(r.model, dataset,
                                                plan.folds[static_cast<std::size_t>(f)].test,
                                                spacing);
            results[static_cast<std::size_t>(f)] = std::move(r);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(f)] = e.what();
        }
    };

    if (jobs <= 1) {
        for (int f = 0; f < k; ++f) run_one(f);
    } else {
        std::vector<std::thread> pool;
        std::mutex mu;
        int next = 0;
        for (int j = 0; j < std::min(jobs, k); ++j) {
            pool.emplace_back([&] {
                for (;;) {
                    int f;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= k) return;
                        f = next++;
                    }
                    run_one(f);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    for (int f = 0; f < k; ++f) {
        if (!errors[static_cast<std::size_t>(f)].empty()) {
            throw RuntimeError("fold " + std::to_string(f) + ": " +
                               errors[static_cast<std::size_t>(f)]);
        }
    }
    return results;
}

NamedTensors select_best_weights(const TrainHistory& history,
                                 const std::vector<CheckpointRef>& checkpoints) {
    if (checkpoints.empty()) throw RuntimeError("select_best_weights: no checkpoints available");
    auto val_of = [&](int epoch) {
        for (const EpochRecord& r : history.records) {
            if (r.epoch == epoch) return r.val_loss;
        }
        throw ValidationError("select_best_weights: checkpoint epoch " + std::to_string(epoch) +
                              " not present in history");
    };
    const CheckpointRef* best = nullptr;
    double best_loss = 0.0;
    for (const CheckpointRef& ref : checkpoints) {
        const double loss = val_of(ref.epoch);
        if (!best || loss < best_loss || (loss == best_loss && ref.epoch < best->epoch)) {
            best = &ref;
            best_loss = loss;
        }
    }
    return load_weights(best->path);
}

std::map<std::string, std::vector<double>> eval_fold_errors(
    const Model& model, const TrainDataset& dataset, const std::vector<std::size_t>& test_indices,
    const PixelSpacing& spacing) {
    validate(spacing);
    std::map<std::string, std::vector<double>> errors;
    const int h = dataset.input_h, w = dataset.input_w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t idx : test_indices) {
        const TrainSample& sample = dataset.samples[idx];
        Tensor batch = Tensor::zeros({1, 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
        std::copy(sample.image.values().begin(), sample.image.values().end(),
                  batch.mutable_data().data());
        const Tensor pred = model.forward(batch);
        for (int c = 0; c < dataset.n_landmarks; ++c) {
            const std::string name(kLandmarkNames[static_cast<std::size_t>(c)]);
            std::vector<double> channel(pred.values().begin() + static_cast<std::ptrdiff_t>(c * plane),
                                        pred.values().begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
            const PointI at = decode_heatmap(Tensor::from(
                {static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(channel)));
            const PointD truth = sample.annotation.points.at(name);
            errors[name].push_back(radial_error_cm({static_cast<double>(at.x),
                                                    static_cast<double>(at.y)},
                                                   truth, h, w, sample.annotation.orig_h,
                                                   sample.annotation.orig_w, spacing));
        }
    }
    return errors;
}

}  // namespace cephalo
