#pragma once

// Dense 64-bit tensors with graph-based reverse-mode differentiation.
//
// Every differentiable primitive creates a node that remembers its parents and
// a closure propagating the output gradient back to them. backward() walks the
// graph in reverse topological order.
//
// Gradient semantics: gradients on leaf tensors ACCUMULATE. Calling backward()
// twice (on the same or different graphs) without zero_grad() in between adds
// the second gradient onto the first. Interior nodes are reset at the start of
// each backward() call, so a second call on the same graph yields exactly
// twice the leaf gradient of the first.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mplbench/numerics/matrix.hpp"

namespace mplbench::numerics {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a backward pass reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    // Returns the gradient buffer, allocating zeros on first use.
    std::vector<double>& grad_buffer();
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const double> data() const;
    // Writable view of the values; allowed on leaves only (parameters and
    // constants), never on computed nodes.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    Matrix to_matrix() const;

    // Internal: used by the primitive implementations.
    static Tensor make_result(Shape shape, std::vector<double> data,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward_fn);
    detail::Node& node() const { return *node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Propagates dLoss/dTensor to every reachable tensor that requires a
// gradient. `loss` must hold exactly one element.
void backward(const Tensor& loss);

// While alive, primitives on this thread do not record graph edges.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

// A named trainable tensor. Names are stable path strings used as checkpoint
// keys ("blocks.0.attn.wq").
struct Parameter {
    std::string name;
    Tensor tensor;
};

} // namespace mplbench::numerics
