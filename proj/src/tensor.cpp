#include "cephalo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <utility>

namespace cephalo {

namespace {

std::size_t shape_product(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

bool g_conv_backward_sign_fault = false;

}  // namespace

namespace testing {
void set_conv_backward_sign_fault(bool enabled) { g_conv_backward_sign_fault = enabled; }
bool conv_backward_sign_fault() { return g_conv_backward_sign_fault; }
}  // namespace testing

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ')';
    return os.str();
}

Tensor Tensor::zeros(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_->assign(shape_product(t.shape_), 0.0);
    return t;
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_->assign(shape_product(t.shape_), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape_product(shape) != values.size()) {
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " implies " +
                         std::to_string(shape_product(shape)) + " elements, got " +
                         std::to_string(values.size()));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    *t.data_ = std::move(values);
    return t;
}

int Graph::node_of(const Tensor& t) {
    auto it = by_buffer_.find(t.buffer_id());
    if (it != by_buffer_.end()) return it->second;
    Node node;
    node.kind = OpKind::leaf;
    node.size = t.size();
    node.leaf_sink = t.grad_handle();
    node.pin = t.data_handle();
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    by_buffer_.emplace(t.buffer_id(), id);
    return id;
}

int Graph::add_op(OpKind kind, std::vector<int> inputs, const Tensor& output, BackwardFn fn) {
    Node node;
    node.kind = kind;
    node.inputs = std::move(inputs);
    node.size = output.size();
    node.fn = std::move(fn);
    node.pin = output.data_handle();
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    by_buffer_.emplace(output.buffer_id(), id);
    return id;
}

void Graph::backward(int loss_node) {
    if (loss_node < 0 || static_cast<std::size_t>(loss_node) >= nodes_.size()) {
        throw ValidationError("backward: dangling node id " + std::to_string(loss_node));
    }
    const std::size_t loss = static_cast<std::size_t>(loss_node);
    if (nodes_[loss].size != 1) {
        throw ValidationError("backward: loss node must be scalar, has " +
                              std::to_string(nodes_[loss].size) + " elements");
    }

    std::vector<char> reached(nodes_.size(), 0);
    reached[loss] = 1;
    for (std::size_t i = loss + 1; i-- > 0;) {
        if (!reached[i]) continue;
        for (int j : nodes_[i].inputs) reached[static_cast<std::size_t>(j)] = 1;
    }

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[loss].assign(1, 1.0);

    std::vector<std::span<double>> dins;
    for (std::size_t i = loss + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!reached[i] || node.kind == OpKind::leaf) continue;
        dins.clear();
        for (int j : node.inputs) {
            auto& gj = grads[static_cast<std::size_t>(j)];
            if (gj.size() != nodes_[static_cast<std::size_t>(j)].size) {
                gj.assign(nodes_[static_cast<std::size_t>(j)].size, 0.0);
            }
            dins.emplace_back(gj.data(), gj.size());
        }
        node.fn(std::span<const double>(grads[i].data(), grads[i].size()),
                std::span<std::span<double>>(dins.data(), dins.size()));
        grads[i] = std::vector<double>();  // consumed; free early
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind != OpKind::leaf) continue;
        std::vector<double>& sink = *nodes_[i].leaf_sink;
        if (reached[i] && grads[i].size() == nodes_[i].size) {
            sink = std::move(grads[i]);
        } else {
            sink.assign(nodes_[i].size, 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int hout, wout;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                   int padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    require_rank(bias, 1, "conv2d", "bias");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) {
        throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    }
    ConvDims d;
    d.n = static_cast<int>(input.dim(0));
    d.cin = static_cast<int>(input.dim(1));
    d.h = static_cast<int>(input.dim(2));
    d.w = static_cast<int>(input.dim(3));
    d.cout = static_cast<int>(kernel.dim(0));
    d.kh = static_cast<int>(kernel.dim(2));
    d.kw = static_cast<int>(kernel.dim(3));
    d.stride = stride;
    d.pad = padding;
    if (static_cast<int>(kernel.dim(1)) != d.cin) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(d.cin));
    }
    if (static_cast<int>(bias.dim(0)) != d.cout) {
        throw ShapeError("conv2d: bias has " + std::to_string(bias.dim(0)) +
                         " channels, kernel produces " + std::to_string(d.cout));
    }
    if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " exceeds padded input " + std::to_string(d.h + 2 * padding) + "x" +
                         std::to_string(d.w + 2 * padding));
    }
    d.hout = (d.h + 2 * padding - d.kh) / stride + 1;
    d.wout = (d.w + 2 * padding - d.kw) / stride + 1;
    if (d.hout < 1 || d.wout < 1) {
        throw ShapeError("conv2d: output would be " + std::to_string(d.hout) + "x" +
                         std::to_string(d.wout));
    }
    return d;
}

// Range of output positions whose source index o*stride + k - pad lies in
// [0, extent). Empty range when lo > hi.
inline void valid_out_range(int k, int pad, int stride, int extent, int out_extent, int& lo,
                            int& hi) {
    const int shift = pad - k;
    lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    const int top = extent - 1 + shift;
    hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
}

void conv2d_forward(const ConvDims& d, const double* in, const double* ker, const double* bias,
                    double* out) {
    const std::size_t in_chan_sz = static_cast<std::size_t>(d.h) * d.w;
    const std::size_t out_chan_sz = static_cast<std::size_t>(d.hout) * d.wout;
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < d.cout; ++co) {
            double* out_plane = out + (static_cast<std::size_t>(n) * d.cout + co) * out_chan_sz;
            std::fill(out_plane, out_plane + out_chan_sz, bias[co]);
            for (int ci = 0; ci < d.cin; ++ci) {
                const double* in_plane =
                    in + (static_cast<std::size_t>(n) * d.cin + ci) * in_chan_sz;
                const double* kplane =
                    ker + (static_cast<std::size_t>(co) * d.cin + ci) *
                              (static_cast<std::size_t>(d.kh) * d.kw);
                for (int ky = 0; ky < d.kh; ++ky) {
                    int oy_lo, oy_hi;
                    valid_out_range(ky, d.pad, d.stride, d.h, d.hout, oy_lo, oy_hi);
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const double wv = kplane[ky * d.kw + kx];
                        int ox_lo, ox_hi;
                        valid_out_range(kx, d.pad, d.stride, d.w, d.wout, ox_lo, ox_hi);
                        if (ox_lo > ox_hi) continue;
                        const int count = ox_hi - ox_lo + 1;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * d.stride + ky - d.pad;
                            const double* in_row =
                                in_plane + static_cast<std::size_t>(iy) * d.w +
                                (ox_lo * d.stride + kx - d.pad);
                            double* out_row = out_plane + static_cast<std::size_t>(oy) * d.wout +
                                              ox_lo;
                            if (d.stride == 1) {
                                for (int i = 0; i < count; ++i) out_row[i] += wv * in_row[i];
                            } else {
                                for (int i = 0; i < count; ++i) {
                                    out_row[i] += wv * in_row[static_cast<std::size_t>(i) *
                                                             d.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward(const ConvDims& d, const double* in, const double* ker, const double* dout,
                     std::span<double> din, std::span<double> dker, std::span<double> dbias) {
    const std::size_t in_chan_sz = static_cast<std::size_t>(d.h) * d.w;
    const std::size_t out_chan_sz = static_cast<std::size_t>(d.hout) * d.wout;
    const double wsign = testing::conv_backward_sign_fault() ? -1.0 : 1.0;

    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < d.cout; ++co) {
            const double* dout_plane =
                dout + (static_cast<std::size_t>(n) * d.cout + co) * out_chan_sz;
            double bsum = 0.0;
            for (std::size_t i = 0; i < out_chan_sz; ++i) bsum += dout_plane[i];
            dbias[static_cast<std::size_t>(co)] += bsum;

            for (int ci = 0; ci < d.cin; ++ci) {
                const double* in_plane =
                    in + (static_cast<std::size_t>(n) * d.cin + ci) * in_chan_sz;
                double* din_plane =
                    din.data() + (static_cast<std::size_t>(n) * d.cin + ci) * in_chan_sz;
                const std::size_t kbase = (static_cast<std::size_t>(co) * d.cin + ci) *
                                          (static_cast<std::size_t>(d.kh) * d.kw);
                for (int ky = 0; ky < d.kh; ++ky) {
                    int oy_lo, oy_hi;
                    valid_out_range(ky, d.pad, d.stride, d.h, d.hout, oy_lo, oy_hi);
                    for (int kx = 0; kx < d.kw; ++kx) {
                        int ox_lo, ox_hi;
                        valid_out_range(kx, d.pad, d.stride, d.w, d.wout, ox_lo, ox_hi);
                        if (ox_lo > ox_hi) continue;
                        const int count = ox_hi - ox_lo + 1;
                        const double wv = ker[kbase + static_cast<std::size_t>(ky) * d.kw + kx];
                        double wgrad = 0.0;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * d.stride + ky - d.pad;
                            const double* in_row =
                                in_plane + static_cast<std::size_t>(iy) * d.w +
                                (ox_lo * d.stride + kx - d.pad);
                            double* din_row =
                                din_plane + static_cast<std::size_t>(iy) * d.w +
                                (ox_lo * d.stride + kx - d.pad);
                            const double* dout_row =
                                dout_plane + static_cast<std::size_t>(oy) * d.wout + ox_lo;
                            if (d.stride == 1) {
                                for (int i = 0; i < count; ++i) {
                                    wgrad += dout_row[i] * in_row[i];
                                    din_row[i] += wv * dout_row[i];
                                }
                            } else {
                                for (int i = 0; i < count; ++i) {
                                    const std::size_t ix = static_cast<std::size_t>(i) * d.stride;
                                    wgrad += dout_row[i] * in_row[ix];
                                    din_row[ix] += wv * dout_row[i];
                                }
                            }
                        }
                        dker[kbase + static_cast<std::size_t>(ky) * d.kw + kx] += wsign * wgrad;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding, Graph* g) {
    const ConvDims d = conv_dims(input, kernel, bias, stride, padding);
    Tensor out = Tensor::zeros({input.dim(0), kernel.dim(0), static_cast<std::size_t>(d.hout),
                                static_cast<std::size_t>(d.wout)});
    conv2d_forward(d, input.values().data(), kernel.values().data(), bias.values().data(),
                   out.mutable_data().data());
    debug_check_finite(out, "conv2d");
    if (g) {
        std::vector<int> in_ids = {g->node_of(input), g->node_of(kernel), g->node_of(bias)};
        g->add_op(OpKind::conv2d, std::move(in_ids), out,
                  [d, input, kernel](std::span<const double> dout,
                                     std::span<std::span<double>> dins) {
                      conv2d_backward(d, input.values().data(), kernel.values().data(),
                                      dout.data(), dins[0], dins[1], dins[2]);
                  });
    }
    return out;
}

PoolResult maxpool2d(const Tensor& input, int size, Graph* g) {
    require_rank(input, 4, "maxpool2d", "input");
    if (size < 1) throw ShapeError("maxpool2d: size must be >= 1, got " + std::to_string(size));
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t s = static_cast<std::size_t>(size);
    if (h % s != 0 || w % s != 0) {
        throw ShapeError("maxpool2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by pool size " + std::to_string(size));
    }
    const std::size_t ho = h / s, wo = w / s;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(n * c * ho * wo);
    const double* in = input.values().data();
    double* o = out.mutable_data().data();
    std::size_t oi = 0;
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const double* plane = in + nc * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox, ++oi) {
                std::size_t best = nc * h * w + (oy * s) * w + ox * s;
                double best_v = in[best];
                for (std::size_t dy = 0; dy < s; ++dy) {
                    const double* row = plane + (oy * s + dy) * w + ox * s;
                    for (std::size_t dx = 0; dx < s; ++dx) {
                        if (row[dx] > best_v) {
                            best_v = row[dx];
                            best = nc * h * w + (oy * s + dy) * w + ox * s + dx;
                        }
                    }
                }
                o[oi] = best_v;
                (*argmax)[oi] = best;
            }
        }
    }
    debug_check_finite(out, "maxpool2d");
    if (g) {
        g->add_op(OpKind::maxpool2d, {g->node_of(input)}, out,
                  [argmax](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                          dins[0][(*argmax)[i]] += dout[i];
                      }
                  });
    }
    return {out, argmax};
}

namespace {

struct LinearTap {
    int i0, i1;
    double w0, w1;
};

// align-corners-false sample positions for a 2x upscale, edge-clamped.
std::vector<LinearTap> bilinear_taps_2x(std::size_t in_extent) {
    std::vector<LinearTap> taps(in_extent * 2);
    const int last = static_cast<int>(in_extent) - 1;
    for (std::size_t i = 0; i < in_extent * 2; ++i) {
        const double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
        const int lo = static_cast<int>(std::floor(src));
        const double frac = src - lo;
        taps[i] = {std::clamp(lo, 0, last), std::clamp(lo + 1, 0, last), 1.0 - frac, frac};
    }
    return taps;
}

}  // namespace

Tensor upsample2x(const Tensor& input, UpsampleMode mode, Graph* g) {
    require_rank(input, 4, "upsample2x", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t ho = 2 * h, wo = 2 * w;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    const double* in = input.values().data();
    double* o = out.mutable_data().data();

    if (mode == UpsampleMode::nearest) {
        for (std::size_t nc = 0; nc < n * c; ++nc) {
            const double* plane = in + nc * h * w;
            double* oplane = o + nc * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const double* row = plane + (oy / 2) * w;
                double* orow = oplane + oy * wo;
                for (std::size_t ox = 0; ox < wo; ++ox) orow[ox] = row[ox / 2];
            }
        }
        debug_check_finite(out, "upsample2x");
        if (g) {
            g->add_op(OpKind::upsample2x, {g->node_of(input)}, out,
                      [n, c, h, w, ho, wo](std::span<const double> dout,
                                           std::span<std::span<double>> dins) {
                          for (std::size_t nc = 0; nc < n * c; ++nc) {
                              double* dplane = dins[0].data() + nc * h * w;
                              const double* doplane = dout.data() + nc * ho * wo;
                              for (std::size_t oy = 0; oy < ho; ++oy) {
                                  double* drow = dplane + (oy / 2) * w;
                                  const double* dorow = doplane + oy * wo;
                                  for (std::size_t ox = 0; ox < wo; ++ox) {
                                      drow[ox / 2] += dorow[ox];
                                  }
                              }
                          }
                      });
        }
        return out;
    }

    auto ytaps = std::make_shared<std::vector<LinearTap>>(bilinear_taps_2x(h));
    auto xtaps = std::make_shared<std::vector<LinearTap>>(bilinear_taps_2x(w));
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const double* plane = in + nc * h * w;
        double* oplane = o + nc * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const LinearTap& ty = (*ytaps)[oy];
            const double* r0 = plane + static_cast<std::size_t>(ty.i0) * w;
            const double* r1 = plane + static_cast<std::size_t>(ty.i1) * w;
            double* orow = oplane + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const LinearTap& tx = (*xtaps)[ox];
                orow[ox] = ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                           ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]);
            }
        }
    }
    debug_check_finite(out, "upsample2x");
    if (g) {
        g->add_op(OpKind::upsample2x, {g->node_of(input)}, out,
                  [n, c, h, w, ho, wo, ytaps, xtaps](std::span<const double> dout,
                                                     std::span<std::span<double>> dins) {
                      for (std::size_t nc = 0; nc < n * c; ++nc) {
                          double* dplane = dins[0].data() + nc * h * w;
                          const double* doplane = dout.data() + nc * ho * wo;
                          for (std::size_t oy = 0; oy < ho; ++oy) {
                              const LinearTap& ty = (*ytaps)[oy];
                              double* d0 = dplane + static_cast<std::size_t>(ty.i0) * w;
                              double* d1 = dplane + static_cast<std::size_t>(ty.i1) * w;
                              const double* dorow = doplane + oy * wo;
                              for (std::size_t ox = 0; ox < wo; ++ox) {
                                  const LinearTap& tx = (*xtaps)[ox];
                                  const double gv = dorow[ox];
                                  d0[tx.i0] += ty.w0 * tx.w0 * gv;
                                  d0[tx.i1] += ty.w0 * tx.w1 * gv;
                                  d1[tx.i0] += ty.w1 * tx.w0 * gv;
                                  d1[tx.i1] += ty.w1 * tx.w1 * gv;
                              }
                          }
                      }
                  });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b, Graph* g) {
    require_rank(a, 4, "concat_channels", "a");
    require_rank(b, 4, "concat_channels", "b");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("concat_channels: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = h * w;
    Tensor out = Tensor::zeros({n, ca + cb, h, w});
    double* o = out.mutable_data().data();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(pa + i * ca * plane, pa + (i + 1) * ca * plane,
                  o + i * (ca + cb) * plane);
        std::copy(pb + i * cb * plane, pb + (i + 1) * cb * plane,
                  o + i * (ca + cb) * plane + ca * plane);
    }
    debug_check_finite(out, "concat_channels");
    if (g) {
        g->add_op(OpKind::concat_channels, {g->node_of(a), g->node_of(b)}, out,
                  [n, ca, cb, plane](std::span<const double> dout,
                                     std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < n; ++i) {
                          const double* src = dout.data() + i * (ca + cb) * plane;
                          double* da = dins[0].data() + i * ca * plane;
                          double* db = dins[1].data() + i * cb * plane;
                          for (std::size_t j = 0; j < ca * plane; ++j) da[j] += src[j];
                          for (std::size_t j = 0; j < cb * plane; ++j) {
                              db[j] += src[ca * plane + j];
                          }
                      }
                  });
    }
    return out;
}

Tensor relu(const Tensor& input, Graph* g) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.values().data();
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    debug_check_finite(out, "relu");
    if (g) {
        g->add_op(OpKind::relu, {g->node_of(input)}, out,
                  [input](std::span<const double> dout, std::span<std::span<double>> dins) {
                      const double* x = input.values().data();
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                          if (x[i] > 0.0) dins[0][i] += dout[i];
                      }
                  });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Graph* g) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] + b[i];
    debug_check_finite(out, "add");
    if (g) {
        g->add_op(OpKind::add, {g->node_of(a), g->node_of(b)}, out,
                  [](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                          dins[0][i] += dout[i];
                          dins[1][i] += dout[i];
                      }
                  });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Graph* g) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] - b[i];
    debug_check_finite(out, "sub");
    if (g) {
        g->add_op(OpKind::sub, {g->node_of(a), g->node_of(b)}, out,
                  [](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                          dins[0][i] += dout[i];
                          dins[1][i] -= dout[i];
                      }
                  });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Graph* g) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] * b[i];
    debug_check_finite(out, "mul");
    if (g) {
        g->add_op(OpKind::mul, {g->node_of(a), g->node_of(b)}, out,
                  [a, b](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                          dins[0][i] += dout[i] * b[i];
                          dins[1][i] += dout[i] * a[i];
                      }
                  });
    }
    return out;
}

Tensor scale(const Tensor& a, double s, Graph* g) {
    Tensor out = Tensor::zeros(a.shape());
    double* o = out.mutable_data().data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = s * a[i];
    debug_check_finite(out, "scale");
    if (g) {
        g->add_op(OpKind::scale, {g->node_of(a)}, out,
                  [s](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dout.size(); ++i) dins[0][i] += s * dout[i];
                  });
    }
    return out;
}

Tensor sum(const Tensor& a, Graph* g) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    Tensor out = Tensor::from({1}, {total});
    debug_check_finite(out, "sum");
    if (g) {
        g->add_op(OpKind::sum, {g->node_of(a)}, out,
                  [](std::span<const double> dout, std::span<std::span<double>> dins) {
                      for (std::size_t i = 0; i < dins[0].size(); ++i) dins[0][i] += dout[0];
                  });
    }
    return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
    if (!(h > 0.0)) throw ValidationError("finite_diff_grad: step must be > 0");
    Tensor g = Tensor::zeros(x.shape());
    std::vector<double> base(x.values().begin(), x.values().end());
    double* go = g.mutable_data().data();
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base;
        std::vector<double> minus = base;
        plus[i] += h;
        minus[i] -= h;
        const double fp = f(Tensor::from(x.shape(), std::move(plus)));
        const double fm = f(Tensor::from(x.shape(), std::move(minus)));
        go[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace cephalo
