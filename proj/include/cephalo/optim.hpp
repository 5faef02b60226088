#pragma once

#include <cstdint>
#include <vector>

#include "cephalo/tensor.hpp"

namespace cephalo {

struct AdamHyper {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment accumulators plus the shared step count.
struct AdamState {
    explicit AdamState(AdamHyper hyper = {}) : hyper(hyper) {}

    AdamHyper hyper;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// (1/n) * sum((pred_i - target_i)^2) over all elements, as a scalar tensor.
// d(loss)/d(pred) = (2/n)(pred - target).
Tensor mse_loss(const Tensor& pred, const Tensor& target, Graph* g = nullptr);

// Bias-corrected Adam. Increments state.t, then for each parameter:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - alpha * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Parameters are replaced with freshly allocated tensors; buffers captured by
// an earlier graph stay valid. Throws NumericError on non-finite gradients.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state);

// Convenience: pull gradients from each parameter's grad slot.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

// Fraction of elements with |pred - target| <= tau. The "accuracy" of the
// history logs; a stand-in metric, documented as such wherever printed.
double pixel_accuracy(const Tensor& pred, const Tensor& target, double tau = 0.5);

}  // namespace cephalo
