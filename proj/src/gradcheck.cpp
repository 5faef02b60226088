#include "cephalo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cephalo/optim.hpp"
#include "cephalo/rng.hpp"
#include "cephalo/tensor.hpp"

namespace cephalo {

GradCheckResult gradcheck_model(const ModelConfig& cfg, double h, double tol,
                                std::uint64_t data_seed) {
    Model model = build_model(cfg);

    // Zero-initialized biases park every dead-region preactivation exactly on
    // the ReLU kink, where two-sided differences disagree with any
    // subgradient choice. Move the model to a generic point first; params()
    // alternates weight, bias per layer.
    {
        Rng jitter(derive_seed(data_seed, 1));
        auto tensors = model.params();
        for (std::size_t i = 1; i < tensors.size(); i += 2) {
            std::vector<double> b(tensors[i]->values().begin(), tensors[i]->values().end());
            for (double& v : b) v += jitter.normal(0.0, 0.05);
            *tensors[i] = Tensor::from(tensors[i]->shape(), std::move(b));
        }
    }

    Rng rng(data_seed);
    const std::size_t in_n = static_cast<std::size_t>(cfg.in_channels) * cfg.input_h * cfg.input_w;
    const std::size_t out_n =
        static_cast<std::size_t>(cfg.out_channels) * cfg.input_h * cfg.input_w;
    std::vector<double> in_values(in_n), target_values(out_n);
    for (double& v : in_values) v = rng.uniform();
    for (double& v : target_values) v = rng.uniform();
    const Tensor input = Tensor::from({1, static_cast<std::size_t>(cfg.in_channels),
                                       static_cast<std::size_t>(cfg.input_h),
                                       static_cast<std::size_t>(cfg.input_w)},
                                      std::move(in_values));
    const Tensor target = Tensor::from({1, static_cast<std::size_t>(cfg.out_channels),
                                        static_cast<std::size_t>(cfg.input_h),
                                        static_cast<std::size_t>(cfg.input_w)},
                                       std::move(target_values));

    Graph g;
    const Tensor loss = mse_loss(model.forward(input, &g), target, &g);
    g.backward(g.node_of(loss));

    auto params = model.params();
    std::vector<std::vector<double>> backprop;
    backprop.reserve(params.size());
    for (const Tensor* p : params) backprop.emplace_back(p->grad().begin(), p->grad().end());

    const auto names = model.named_params();
    GradCheckResult result;
    // A ReLU kink inside [x-h, x+h] injects O(h)-localized noise into the
    // two-sided difference even though the gradient is exact on both sides.
    // Elements that miss the tolerance at h are re-probed at h/10: straddle
    // noise collapses, a genuine backward defect does not. Give up on the
    // re-probes once it is clearly not noise.
    int reprobes_left = 64;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        const Tensor original = *p;
        auto f = [&](const Tensor& candidate) {
            *p = candidate;
            return mse_loss(model.forward(input), target)[0];
        };
        const Tensor fd = finite_diff_grad(f, original, h);
        *p = original;

        // Per-element error relative to the element or its tensor's scale.
        double scale = 1e-8;
        for (std::size_t i = 0; i < fd.size(); ++i) scale = std::max(scale, std::abs(fd[i]));
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double bp = backprop[pi][i];
            double fdv = fd[i];
            double abs_err = std::abs(bp - fdv);
            double rel = abs_err / std::max({std::abs(bp), std::abs(fdv), scale});
            if (rel > tol && reprobes_left > 0) {
                --reprobes_left;
                std::vector<double> probe(original.values().begin(), original.values().end());
                const double h2 = h / 10.0;
                probe[i] = original[i] + h2;
                const double fp = f(Tensor::from(original.shape(), probe));
                probe[i] = original[i] - h2;
                const double fm = f(Tensor::from(original.shape(), probe));
                *p = original;
                const double fdv2 = (fp - fm) / (2.0 * h2);
                const double abs2 = std::abs(bp - fdv2);
                const double rel2 = abs2 / std::max({std::abs(bp), std::abs(fdv2), scale});
                if (rel2 < rel) {
                    ++result.kink_straddles;
                    rel = rel2;
                    abs_err = abs2;
                }
            }
            result.max_abs_error = std::max(result.max_abs_error, abs_err);
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = names[pi].first;
            }
        }
    }
    result.pass = result.max_rel_error <= tol;
    return result;
}

}  // namespace cephalo
