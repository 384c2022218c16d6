#include "mplbench/numerics/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mplbench::numerics {

namespace {

thread_local bool g_grad_mode = true;

} // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << 'x';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    for (const auto extent : shape) {
        if (extent == 0) {
            throw std::invalid_argument("Tensor: zero extent in shape " + shape_string(shape));
        }
    }
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
    return from_data({m.rows, m.cols}, m.data, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw std::out_of_range("Tensor::dim: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_string(node_->shape));
    }
    return node_->shape[axis];
}

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
    if (!node_->is_leaf()) {
        throw std::logic_error("Tensor::mutable_data: computed tensors are immutable");
    }
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("Tensor::item: expected one element, shape is " +
                                    shape_string(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return node_->data[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) {
        throw std::logic_error("Tensor::grad: no gradient populated");
    }
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Matrix Tensor::to_matrix() const {
    if (rank() == 2) {
        return Matrix(dim(0), dim(1), node_->data);
    }
    if (rank() == 1) {
        return Matrix(1, dim(0), node_->data);
    }
    return Matrix(1, 1, node_->data);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs_grad = false;
    if (g_grad_mode) {
        for (const auto& p : parents) {
            needs_grad = needs_grad || p.requires_grad();
        }
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            node->parents.push_back(p.node_);
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    (loss.defined() ? shape_string(loss.shape()) : "<undefined>"));
    }
    detail::Node* root = &loss.node();
    if (!root->requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            detail::Node* parent = node->parents[next_parent++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (node->is_leaf()) {
            node->grad_buffer();
        } else {
            node->grad.assign(node->data.size(), 0.0);
        }
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->is_leaf()) {
            node->backward_fn(*node);
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }

NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

} // namespace mplbench::numerics
