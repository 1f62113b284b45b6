#include "pxseg/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "pxseg/errors.hpp"

namespace pxseg {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("tensor shape has negative dimension " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    const std::int64_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(static_cast<std::size_t>(n), 0.0);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data_mut()) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape product " + std::to_string(n));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() called on tensor of size " + std::to_string(size()));
    return node_->data[0];
}

void check_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by ") + what);
    }
}

namespace {

// Post-order over parents, iterative. Deterministic: parent vectors are
// traversed in stored order.
void topo_sort(const NodePtr& root, std::vector<TensorNode*>& order) {
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            TensorNode* p = top.node->parents[top.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ShapeError("backward() on undefined tensor");
    if (loss.size() != 1)
        throw ShapeError("backward() requires a scalar loss, got size " +
                         std::to_string(loss.size()));

    std::vector<TensorNode*> order;
    topo_sort(loss.node(), order);

    // Intermediate grads are scratch for this pass; leaf grads persist so
    // repeated calls accumulate into parameters.
    for (TensorNode* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->data.size(), 0.0);
        } else if (n->requires_grad) {
            n->ensure_grad();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }

    for (TensorNode* n : order) {
        if (!n->grad.empty()) check_finite(n->grad, "backward pass");
    }
}

} // namespace pxseg
