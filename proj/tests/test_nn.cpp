#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <vector>

#include "cephalo/checkpoint.hpp"
#include "cephalo/gradcheck.hpp"
#include "cephalo/nn.hpp"
#include "cephalo/optim.hpp"
#include "cephalo/rng.hpp"

using namespace cephalo;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(Arch arch, int out_channels = 27) {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.in_channels = 1;
    cfg.out_channels = out_channels;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.kernel_size = 3;
    cfg.seed = 7;
    return cfg;
}

Tensor random_batch(Rng& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<double> v(n * c * h * w);
    for (double& x : v) x = rng.uniform();
    return Tensor::from({n, c, h, w}, std::move(v));
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "cephalo_nn_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("forward satisfies the shape contract for both architectures") {
    Rng rng(1);
    const Tensor batch = random_batch(rng, 1, 1, 16, 16);
    for (Arch arch : {Arch::fcn, Arch::unet}) {
        const Model model = build_model(tiny_config(arch));
        const Tensor out = model.forward(batch);
        CHECK(out.shape() == Shape{1, 27, 16, 16});
    }
}

TEST_CASE("same config and seed give bitwise-identical parameters and outputs") {
    const Model a = build_model(tiny_config(Arch::unet));
    const Model b = build_model(tiny_config(Arch::unet));
    const auto pa = a.named_params();
    const auto pb = b.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second->size() == pb[i].second->size());
        for (std::size_t j = 0; j < pa[i].second->size(); ++j) {
            CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);
        }
    }
    Rng rng(2);
    const Tensor batch = random_batch(rng, 1, 1, 16, 16);
    const Tensor oa = a.forward(batch);
    const Tensor ob = b.forward(batch);
    for (std::size_t i = 0; i < oa.size(); ++i) CHECK(oa[i] == ob[i]);
}

TEST_CASE("parameter names are unique and stable") {
    const Model model = build_model(tiny_config(Arch::unet));
    std::vector<std::string> names;
    for (const auto& [name, _] : model.named_params()) names.push_back(name);
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(names.front() == "enc0.conv1.weight");
    CHECK(names.back() == "head.bias");
}

TEST_CASE("param_count matches the hand-computed layer sum for a depth-1 FCN") {
    ModelConfig cfg;
    cfg.arch = Arch::fcn;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.in_channels = 1;
    cfg.out_channels = 3;
    cfg.base_channels = 2;
    cfg.depth = 1;
    cfg.kernel_size = 3;
    const Model model = build_model(cfg);
    // enc0: 1->2 and 2->2; bottleneck: 2->4 and 4->4; dec0: 4->2 and 2->2;
    // head: 2->3 1x1. Each conv contributes Cin*Cout*k^2 + Cout.
    const std::size_t expected = (1 * 2 * 9 + 2) + (2 * 2 * 9 + 2) + (2 * 4 * 9 + 4) +
                                 (4 * 4 * 9 + 4) + (4 * 2 * 9 + 2) + (2 * 2 * 9 + 2) +
                                 (2 * 3 * 1 + 3);
    CHECK(param_count(model) == expected);
    CHECK(param_count(cfg) == expected);
}

TEST_CASE("a single conv layer with Cin=1, Cout=8, k=3 holds 80 parameters") {
    ModelConfig cfg = tiny_config(Arch::fcn);
    cfg.base_channels = 8;
    const Model model = build_model(cfg);
    const ConvLayer& first = model.layers().front();
    CHECK(first.weight.size() + first.bias.size() == 80);
}

TEST_CASE("an empty model counts zero parameters") {
    const Model model;
    CHECK(param_count(model) == 0);
}

TEST_CASE("U-Net has strictly more parameters than the FCN at equal base/depth") {
    const ModelConfig fcn = tiny_config(Arch::fcn);
    const ModelConfig unet = tiny_config(Arch::unet);
    CHECK(param_count(build_model(unet)) > param_count(build_model(fcn)));
    CHECK(param_count(unet) > param_count(fcn));
}

TEST_CASE("paper-scale configs land near the published parameter counts") {
    // Plausibility only; the exact figure depends on layer details that are
    // not recoverable, so equality is deliberately not asserted.
    ModelConfig cfg;
    cfg.input_h = 512;
    cfg.input_w = 432;
    cfg.base_channels = 64;
    cfg.depth = 4;
    cfg.out_channels = 27;
    cfg.arch = Arch::fcn;
    const double fcn = static_cast<double>(param_count(cfg));
    cfg.arch = Arch::unet;
    const double unet = static_cast<double>(param_count(cfg));
    CHECK(fcn / 28953355.0 == doctest::Approx(1.0).epsilon(0.15));
    CHECK(unet / 29146251.0 == doctest::Approx(1.0).epsilon(0.15));
    CHECK(unet > fcn);
}

TEST_CASE("zeroing a skip connection changes the U-Net output") {
    Rng rng(3);
    const Model model = build_model(tiny_config(Arch::unet, 3));
    const Tensor batch = random_batch(rng, 1, 1, 16, 16);
    const Tensor base = model.forward(batch);
    for (int level = 0; level < 2; ++level) {
        const Tensor ablated = model.forward(batch, nullptr, level);
        double diff = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - ablated[i]);
        CHECK(diff > 1e-6);
    }
}

TEST_CASE("zero final layer yields all-zero output") {
    Model model = build_model(tiny_config(Arch::unet, 5));
    auto params = model.params();
    // head weight and bias are the last two parameters
    *params[params.size() - 2] = Tensor::zeros(params[params.size() - 2]->shape());
    *params[params.size() - 1] = Tensor::zeros(params[params.size() - 1]->shape());
    Rng rng(4);
    const Tensor out = model.forward(random_batch(rng, 1, 1, 16, 16));
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("batch of two equals two independent batches of one") {
    Rng rng(5);
    for (Arch arch : {Arch::fcn, Arch::unet}) {
        const Model model = build_model(tiny_config(arch, 4));
        const Tensor x0 = random_batch(rng, 1, 1, 16, 16);
        const Tensor x1 = random_batch(rng, 1, 1, 16, 16);
        std::vector<double> both(x0.values().begin(), x0.values().end());
        both.insert(both.end(), x1.values().begin(), x1.values().end());
        const Tensor batch = Tensor::from({2, 1, 16, 16}, std::move(both));

        const Tensor o0 = model.forward(x0);
        const Tensor o1 = model.forward(x1);
        const Tensor ob = model.forward(batch);
        REQUIRE(ob.size() == o0.size() + o1.size());
        for (std::size_t i = 0; i < o0.size(); ++i) {
            CHECK(std::abs(ob[i] - o0[i]) <= 1e-12);
            CHECK(std::abs(ob[o0.size() + i] - o1[i]) <= 1e-12);
        }
    }
}

TEST_CASE("output shape contract fuzz over random valid configs") {
    Rng rng(6);
    for (int c = 0; c < 50; ++c) {
        ModelConfig cfg;
        cfg.arch = rng.below(2) ? Arch::unet : Arch::fcn;
        cfg.depth = 1 + static_cast<int>(rng.below(2));
        cfg.base_channels = 1 + static_cast<int>(rng.below(4));
        cfg.out_channels = 1 + static_cast<int>(rng.below(6));
        cfg.kernel_size = rng.below(2) ? 3 : 1;
        const int div = 1 << cfg.depth;
        cfg.input_h = div * (1 + static_cast<int>(rng.below(3)));
        cfg.input_w = div * (1 + static_cast<int>(rng.below(3)));
        cfg.seed = rng.next_u64();
        const Model model = build_model(cfg);
        Rng drng(c);
        const Tensor out = model.forward(random_batch(drng, 1, 1,
                                                      static_cast<std::size_t>(cfg.input_h),
                                                      static_cast<std::size_t>(cfg.input_w)));
        CHECK(out.shape() == Shape{1, static_cast<std::size_t>(cfg.out_channels),
                                   static_cast<std::size_t>(cfg.input_h),
                                   static_cast<std::size_t>(cfg.input_w)});
    }
}

TEST_CASE("every layer receives gradient after one backward pass") {
    Rng rng(7);
    for (Arch arch : {Arch::fcn, Arch::unet}) {
        Model model = build_model(tiny_config(arch, 3));
        const Tensor batch = random_batch(rng, 1, 1, 16, 16);
        const Tensor target = random_batch(rng, 1, 3, 16, 16);
        Graph g;
        const Tensor loss = mse_loss(model.forward(batch, &g), target, &g);
        g.backward(g.node_of(loss));
        for (const auto& [name, p] : model.named_params()) {
            INFO(name);
            REQUIRE(p->has_grad());
            bool any = false;
            for (double v : p->grad()) any = any || v != 0.0;
            CHECK(any);
        }
    }
}

TEST_CASE("invalid configs are rejected with the violated constraint") {
    ModelConfig cfg = tiny_config(Arch::unet);
    cfg.input_h = 15;  // not divisible by 2^depth
    CHECK_THROWS_WITH_AS(build_model(cfg), doctest::Contains("input_h"), ConfigError);
    cfg = tiny_config(Arch::unet);
    cfg.depth = 0;
    CHECK_THROWS_WITH_AS(build_model(cfg), doctest::Contains("depth"), ConfigError);
    cfg = tiny_config(Arch::unet);
    cfg.base_channels = 0;
    CHECK_THROWS_AS(build_model(cfg), ConfigError);
    cfg = tiny_config(Arch::unet);
    cfg.kernel_size = 4;
    CHECK_THROWS_AS(build_model(cfg), ConfigError);
    cfg = tiny_config(Arch::unet);
    cfg.out_channels = 0;
    CHECK_THROWS_AS(build_model(cfg), ConfigError);
}

TEST_CASE("weight checkpoints round-trip byte-exactly") {
    const fs::path dir = temp_dir();
    const fs::path p1 = dir / "a.bin";
    const fs::path p2 = dir / "b.bin";

    Model model = build_model(tiny_config(Arch::unet, 3));
    save_model_weights(p1, model);
    const NamedTensors loaded = load_weights(p1);
    save_weights(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());

    // save -> load -> forward reproduces the original forward bitwise
    Rng rng(8);
    const Tensor batch = random_batch(rng, 1, 1, 16, 16);
    const Tensor before = model.forward(batch);
    Model other = build_model(tiny_config(Arch::unet, 3));
    load_model_weights(p1, other);
    const Tensor after = other.forward(batch);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("weight loader rejects mismatched models and corrupt files") {
    const fs::path dir = temp_dir();
    const fs::path path = dir / "c.bin";
    Model model = build_model(tiny_config(Arch::unet, 3));
    save_model_weights(path, model);

    Model wrong = build_model(tiny_config(Arch::fcn, 3));
    CHECK_THROWS_AS(load_model_weights(path, wrong), IoError);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    const fs::path truncated = dir / "d.bin";
    std::ofstream(truncated, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_WITH_AS(load_weights(truncated), doctest::Contains("byte"), IoError);
}

TEST_CASE("gradcheck passes on a small U-Net and fails with an injected fault") {
    ModelConfig cfg;
    cfg.arch = Arch::unet;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.out_channels = 2;
    cfg.base_channels = 2;
    cfg.depth = 1;
    cfg.seed = 3;
    const GradCheckResult ok = gradcheck_model(cfg, 1e-4, 1e-4, 42);
    INFO("max_rel=", ok.max_rel_error, " worst=", ok.worst_param);
    CHECK(ok.pass);

    testing::set_conv_backward_sign_fault(true);
    const GradCheckResult bad = gradcheck_model(cfg, 1e-4, 1e-4, 42);
    testing::set_conv_backward_sign_fault(false);
    CHECK_FALSE(bad.pass);
}
