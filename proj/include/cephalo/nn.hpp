#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cephalo/tensor.hpp"

namespace cephalo {

enum class Arch { fcn, unet };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ModelConfig {
    Arch arch = Arch::unet;
    int input_h = 512;
    int input_w = 432;
    int in_channels = 1;
    int out_channels = 27;
    int base_channels = 64;
    int depth = 4;
    int kernel_size = 3;
    std::uint64_t seed = 0;
};

// Throws ConfigError naming the violated constraint.
void validate(const ModelConfig& cfg);

struct ConvLayer {
    std::string name;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    Tensor weight;  // (out_ch, in_ch, k, k)
    Tensor bias;    // (out_ch)
};

// Encoder/decoder convolutional stack. Both architectures share the layout
//   enc_i:  conv conv pool          (channels base * 2^i)
//   bottleneck: conv conv           (channels base * 2^depth)
//   dec_i:  upsample [concat skip] conv conv
//   head:   1x1 conv to out_channels, no activation
// and differ only in whether the decoder concatenates the matching encoder
// activation before its convolutions.
class Model {
public:
    const ModelConfig& config() const { return config_; }
    const std::vector<ConvLayer>& layers() const { return layers_; }

    // ablate_skip_level >= 0 feeds zeros instead of that encoder activation
    // into the decoder concat (U-Net only); used to probe skip liveness.
    Tensor forward(const Tensor& batch, Graph* g = nullptr, int ablate_skip_level = -1) const;

    std::vector<Tensor*> params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    friend Model build_model(const ModelConfig& cfg);

private:
    ModelConfig config_;
    std::vector<ConvLayer> layers_;
};

Model build_fcn(const ModelConfig& cfg);
Model build_unet(const ModelConfig& cfg);
Model build_model(const ModelConfig& cfg);

std::size_t param_count(const Model& model);

// Same number, computed from the layer plan without allocating tensors.
std::size_t param_count(const ModelConfig& cfg);

}  // namespace cephalo
