#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pxseg {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the implicit autodiff graph. Leaves (parameters, inputs) have
// no backward_fn; op outputs keep shared ownership of their parents so the
// graph lives exactly as long as some result tensor does.
struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until needed; same length as data when present
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void()> backward_fn; // empty for leaves
    std::string name;                  // set for named parameters

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle to a shared node. Copying a Tensor aliases storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return node_->size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> data_mut() { return node_->data; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (on) node_->ensure_grad();
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->grad.size(), 0.0);
    }

    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    // Scalar (size-1) value.
    double item() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Number of elements implied by a shape; validates positivity.
std::int64_t shape_numel(const std::vector<int>& shape);

// Reverse-mode pass from a scalar loss. Gradients of leaf tensors accumulate
// across calls; gradients of intermediate nodes are scratch and reset each
// pass. Throws ShapeError on a non-scalar loss, NumericError on NaN/Inf.
void backward(const Tensor& loss);

// Throws NumericError if any value is NaN/Inf. `what` names the producer.
void check_finite(std::span<const double> values, const char* what);

} // namespace pxseg
