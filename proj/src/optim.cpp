#include "cephalo/optim.hpp"

#include <cmath>
#include <string>

#include "cephalo/error.hpp"

namespace cephalo {

Tensor mse_loss(const Tensor& pred, const Tensor& target, Graph* g) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    const std::size_t n = pred.size();
    if (n == 0) throw ShapeError("mse_loss: empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    Tensor out = Tensor::from({1}, {acc / static_cast<double>(n)});
    if (g) {
        g->add_op(OpKind::mse_loss, {g->node_of(pred), g->node_of(target)}, out,
                  [pred, target, n](std::span<const double> dout,
                                    std::span<std::span<double>> dins) {
                      const double c = dout[0] * 2.0 / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i) {
                          const double d = c * (pred[i] - target[i]);
                          dins[0][i] += d;
                          dins[1][i] -= d;
                      }
                  });
    }
    return out;
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw ValidationError("adam_step: " + std::to_string(params.size()) + " params vs " +
                              std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p]->size(), 0.0);
            state.v[p].assign(params[p]->size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ValidationError("adam_step: state tracks " + std::to_string(state.m.size()) +
                              " params, got " + std::to_string(params.size()));
    }

    state.t += 1;
    const AdamHyper& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        std::span<const double> grad = grads[p];
        if (grad.size() != param.size()) {
            throw ValidationError("adam_step: param " + std::to_string(p) + " has " +
                                  std::to_string(param.size()) + " elements, grad has " +
                                  std::to_string(grad.size()));
        }
        std::vector<double>& m = state.m[p];
        std::vector<double>& v = state.v[p];
        std::vector<double> next(param.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double gi = grad[i];
            if (!std::isfinite(gi)) {
                throw NumericError("adam_step: non-finite gradient at param " +
                                   std::to_string(p) + " element " + std::to_string(i));
            }
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            next[i] = param[i] - h.alpha * mhat / (std::sqrt(vhat) + h.eps);
        }
        param = Tensor::from(param.shape(), std::move(next));
    }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
    std::vector<std::span<const double>> grads;
    grads.reserve(params.size());
    for (const Tensor* p : params) {
        if (!p->has_grad()) {
            throw ValidationError("adam_step: parameter has no gradient; run backward first");
        }
        grads.push_back(p->grad());
    }
    adam_step(params, grads, state);
}

double pixel_accuracy(const Tensor& pred, const Tensor& target, double tau) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("pixel_accuracy: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    if (!(tau > 0.0)) throw ValidationError("pixel_accuracy: tau must be > 0");
    if (pred.size() == 0) return 1.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::abs(pred[i] - target[i]) <= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace cephalo
