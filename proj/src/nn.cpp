#include "cephalo/nn.hpp"

#include <cmath>
#include <string>

#include "cephalo/error.hpp"
#include "cephalo/rng.hpp"

namespace cephalo {

const char* arch_name(Arch a) { return a == Arch::fcn ? "fcn" : "unet"; }

Arch arch_from_name(const std::string& name) {
    if (name == "fcn") return Arch::fcn;
    if (name == "unet") return Arch::unet;
    throw ConfigError("unknown architecture '" + name + "' (expected fcn or unet)");
}

void validate(const ModelConfig& cfg) {
    if (cfg.depth < 1) throw ConfigError("model.depth must be >= 1, got " + std::to_string(cfg.depth));
    if (cfg.base_channels < 1) {
        throw ConfigError("model.base_channels must be >= 1, got " +
                          std::to_string(cfg.base_channels));
    }
    if (cfg.out_channels < 1) {
        throw ConfigError("model.out_channels must be >= 1, got " +
                          std::to_string(cfg.out_channels));
    }
    if (cfg.in_channels < 1) {
        throw ConfigError("model.in_channels must be >= 1, got " +
                          std::to_string(cfg.in_channels));
    }
    if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0) {
        throw ConfigError("model.kernel_size must be odd and >= 1, got " +
                          std::to_string(cfg.kernel_size) +
                          " (odd kernels keep output dims equal to input dims)");
    }
    if (cfg.depth > 20) throw ConfigError("model.depth too large: " + std::to_string(cfg.depth));
    const int div = 1 << cfg.depth;
    if (cfg.input_h <= 0 || cfg.input_h % div != 0) {
        throw ConfigError("model.input_h (" + std::to_string(cfg.input_h) +
                          ") must be a positive multiple of 2^depth = " + std::to_string(div));
    }
    if (cfg.input_w <= 0 || cfg.input_w % div != 0) {
        throw ConfigError("model.input_w (" + std::to_string(cfg.input_w) +
                          ") must be a positive multiple of 2^depth = " + std::to_string(div));
    }
}

namespace {

ConvLayer make_conv(Rng& rng, std::string name, int in_ch, int out_ch, int k) {
    ConvLayer layer;
    layer.name = std::move(name);
    layer.in_ch = in_ch;
    layer.out_ch = out_ch;
    layer.kernel = k;
    const std::size_t n = static_cast<std::size_t>(out_ch) * in_ch * k * k;
    std::vector<double> w(n);
    // Kaiming fan-in scaling keeps ReLU activations at unit variance.
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (double& v : w) v = rng.normal(0.0, stddev);
    layer.weight = Tensor::from({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                                 static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                                std::move(w));
    layer.bias = Tensor::zeros({static_cast<std::size_t>(out_ch)});
    return layer;
}

int level_channels(const ModelConfig& cfg, int level) {
    return cfg.base_channels * (1 << level);
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
    validate(cfg);
    Model model;
    model.config_ = cfg;
    Rng rng(cfg.seed);
    const int k = cfg.kernel_size;
    const bool unet = cfg.arch == Arch::unet;

    int ch = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
        const int c = level_channels(cfg, i);
        model.layers_.push_back(make_conv(rng, "enc" + std::to_string(i) + ".conv1", ch, c, k));
        model.layers_.push_back(make_conv(rng, "enc" + std::to_string(i) + ".conv2", c, c, k));
        ch = c;
    }
    const int cb = level_channels(cfg, cfg.depth);
    model.layers_.push_back(make_conv(rng, "bottleneck.conv1", ch, cb, k));
    model.layers_.push_back(make_conv(rng, "bottleneck.conv2", cb, cb, k));
    ch = cb;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int c = level_channels(cfg, i);
        const int in1 = unet ? ch + c : ch;
        model.layers_.push_back(make_conv(rng, "dec" + std::to_string(i) + ".conv1", in1, c, k));
        model.layers_.push_back(make_conv(rng, "dec" + std::to_string(i) + ".conv2", c, c, k));
        ch = c;
    }
    // The head starts at zero so the initial prediction equals the heatmap
    // background. Gradient then enters only through target bumps, which keeps
    // the mostly-zero regression targets from driving the ReLU stack into a
    // dead all-negative regime during the first optimizer steps.
    ConvLayer head = make_conv(rng, "head", ch, cfg.out_channels, 1);
    head.weight = Tensor::zeros(head.weight.shape());
    model.layers_.push_back(std::move(head));
    return model;
}

Model build_fcn(const ModelConfig& cfg) {
    ModelConfig c = cfg;
    c.arch = Arch::fcn;
    return build_model(c);
}

Model build_unet(const ModelConfig& cfg) {
    ModelConfig c = cfg;
    c.arch = Arch::unet;
    return build_model(c);
}

Tensor Model::forward(const Tensor& batch, Graph* g, int ablate_skip_level) const {
    if (batch.rank() != 4) {
        throw ShapeError("forward: batch must be (N, C, H, W), got " + shape_str(batch.shape()));
    }
    if (static_cast<int>(batch.dim(1)) != config_.in_channels ||
        static_cast<int>(batch.dim(2)) != config_.input_h ||
        static_cast<int>(batch.dim(3)) != config_.input_w) {
        throw ShapeError("forward: batch " + shape_str(batch.shape()) + " does not match config (" +
                         std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.input_h) + ", " + std::to_string(config_.input_w) +
                         ")");
    }
    const bool unet = config_.arch == Arch::unet;
    const int pad = config_.kernel_size / 2;
    std::size_t li = 0;
    auto conv_block = [&](const Tensor& x) {
        const ConvLayer& l = layers_[li++];
        return relu(conv2d(x, l.weight, l.bias, 1, l.kernel == 1 ? 0 : pad, g), g);
    };

    Tensor x = batch;
    std::vector<Tensor> skips;
    for (int i = 0; i < config_.depth; ++i) {
        x = conv_block(x);
        x = conv_block(x);
        skips.push_back(x);
        x = maxpool2d(x, 2, g).output;
    }
    x = conv_block(x);
    x = conv_block(x);
    for (int i = config_.depth - 1; i >= 0; --i) {
        x = upsample2x(x, UpsampleMode::nearest, g);
        if (unet) {
            const Tensor& skip = skips[static_cast<std::size_t>(i)];
            x = concat_channels(x, i == ablate_skip_level ? Tensor::zeros(skip.shape()) : skip,
                                g);
        }
        x = conv_block(x);
        x = conv_block(x);
    }
    const ConvLayer& head = layers_[li++];
    return conv2d(x, head.weight, head.bias, 1, 0, g);
}

std::vector<Tensor*> Model::params() {
    std::vector<Tensor*> out;
    out.reserve(layers_.size() * 2);
    for (ConvLayer& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(layers_.size() * 2);
    for (const ConvLayer& l : layers_) {
        out.emplace_back(l.name + ".weight", &l.weight);
        out.emplace_back(l.name + ".bias", &l.bias);
    }
    return out;
}

std::size_t param_count(const Model& model) {
    std::size_t n = 0;
    for (const ConvLayer& l : model.layers()) n += l.weight.size() + l.bias.size();
    return n;
}

std::size_t param_count(const ModelConfig& cfg) {
    validate(cfg);
    const bool unet = cfg.arch == Arch::unet;
    const std::size_t k2 = static_cast<std::size_t>(cfg.kernel_size) * cfg.kernel_size;
    auto conv = [k2](std::size_t in, std::size_t out) { return in * out * k2 + out; };
    std::size_t n = 0;
    std::size_t ch = static_cast<std::size_t>(cfg.in_channels);
    for (int i = 0; i < cfg.depth; ++i) {
        const std::size_t c = static_cast<std::size_t>(level_channels(cfg, i));
        n += conv(ch, c) + conv(c, c);
        ch = c;
    }
    const std::size_t cb = static_cast<std::size_t>(level_channels(cfg, cfg.depth));
    n += conv(ch, cb) + conv(cb, cb);
    ch = cb;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const std::size_t c = static_cast<std::size_t>(level_channels(cfg, i));
        n += conv(unet ? ch + c : ch, c) + conv(c, c);
        ch = c;
    }
    n += ch * static_cast<std::size_t>(cfg.out_channels) + static_cast<std::size_t>(cfg.out_channels);
    return n;
}

}  // namespace cephalo
