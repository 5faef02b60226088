#pragma once

#include <cstdint>
#include <string>

#include "cephalo/nn.hpp"

namespace cephalo {

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_param;
    int kink_straddles = 0;  // elements whose h-probe straddled a ReLU kink
    bool pass = false;
};

// Compares every parameter gradient of an MSE loss on random data against
// central finite differences. Per-element relative error is floored by the
// parameter tensor's gradient scale:
//   rel_i = |bp_i - fd_i| / max(|bp_i|, |fd_i|, max_j |fd_j|)
// Elements that miss the tolerance are re-probed at h/10 to separate ReLU
// kink straddles (noise localized to the probe window) from genuine
// gradient defects (h-independent).
GradCheckResult gradcheck_model(const ModelConfig& cfg, double h, double tol,
                                std::uint64_t data_seed);

}  // namespace cephalo
