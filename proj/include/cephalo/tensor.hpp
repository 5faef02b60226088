#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cephalo/error.hpp"

namespace cephalo {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Data is immutable once the tensor has
// been handed out; copies share the buffer. The grad buffer is shared across
// copies as well, so a parameter held by a model sees gradients filled in by
// Graph::backward on whichever handle was used in the forward pass.
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()),
               grad_(std::make_shared<std::vector<double>>()) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_->size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    std::span<const double> values() const { return {data_->data(), data_->size()}; }
    double operator[](std::size_t i) const { return (*data_)[i]; }

    // Gradient slot. Empty until a backward pass fills it.
    bool has_grad() const { return !grad_->empty(); }
    std::span<const double> grad() const { return {grad_->data(), grad_->size()}; }

    // 4-D convenience accessor (N, C, H, W).
    double at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return (*data_)[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    // Identity of the underlying buffer; the graph uses it to dedupe fan-out.
    const void* buffer_id() const { return data_.get(); }

    // Construction-time mutable access. Ops fill the buffer before the
    // tensor escapes; afterwards treat the data as frozen.
    std::vector<double>& mutable_data() { return *data_; }
    std::vector<double>& grad_sink() const { return *grad_; }
    std::shared_ptr<std::vector<double>> grad_handle() const { return grad_; }
    std::shared_ptr<const std::vector<double>> data_handle() const { return data_; }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
};

enum class OpKind {
    leaf,
    conv2d,
    maxpool2d,
    upsample2x,
    concat_channels,
    relu,
    add,
    sub,
    mul,
    scale,
    sum,
    mse_loss,
};

// Reverse-mode tape. Nodes are appended in execution order, which is a valid
// topological order by construction (an op's inputs exist before the op
// runs). One graph belongs to one training step; it is rebuilt every forward
// pass and must not be shared across threads.
class Graph {
public:
    // fn(dout, dins): accumulate into dins[i], aligned with the node's inputs.
    using BackwardFn =
        std::function<void(std::span<const double> dout, std::span<std::span<double>> dins)>;

    // Node id of the tensor inside this graph, registering it as a leaf if
    // it has not been seen before. Repeated uses of one buffer map to one
    // node, which is what makes fan-out gradients accumulate.
    int node_of(const Tensor& t);

    int add_op(OpKind kind, std::vector<int> inputs, const Tensor& output, BackwardFn fn);

    // Reverse sweep from loss_node. Every reachable node is visited exactly
    // once; leaf tensors get their grad slots filled (zeros if unreachable).
    void backward(int loss_node);

    std::size_t node_count() const { return nodes_.size(); }
    OpKind node_kind(int id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }

private:
    struct Node {
        OpKind kind;
        std::vector<int> inputs;
        std::size_t size;
        BackwardFn fn;                                   // empty for leaves
        std::shared_ptr<std::vector<double>> leaf_sink;  // leaf grad destination
        // Keeps the node's buffer alive for the graph's lifetime. Buffer
        // addresses key the fan-out dedup map, so letting one die would let
        // a later allocation alias its node.
        std::shared_ptr<const std::vector<double>> pin;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> by_buffer_;
};

struct PoolResult {
    Tensor output;
    // Flat index into the input buffer of each output cell's max.
    std::shared_ptr<std::vector<std::size_t>> argmax;
};

enum class UpsampleMode { nearest, bilinear };

// All ops are pure: inputs untouched, fresh output. Passing a graph records
// the op for backward; passing nullptr runs inference-only.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, Graph* g = nullptr);
PoolResult maxpool2d(const Tensor& input, int size, Graph* g = nullptr);
Tensor upsample2x(const Tensor& input, UpsampleMode mode, Graph* g = nullptr);
Tensor concat_channels(const Tensor& a, const Tensor& b, Graph* g = nullptr);
Tensor relu(const Tensor& input, Graph* g = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Graph* g = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Graph* g = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Graph* g = nullptr);
Tensor scale(const Tensor& a, double s, Graph* g = nullptr);
Tensor sum(const Tensor& a, Graph* g = nullptr);  // scalar, shape {1}

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per element. The
// independent oracle used by gradcheck and the test suite.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

namespace testing {
// Fault hook: flips the sign of conv2d's kernel-gradient accumulation so
// gradcheck's failure path can be exercised end to end.
void set_conv_backward_sign_fault(bool enabled);
bool conv_backward_sign_fault();
}  // namespace testing

}  // namespace cephalo
