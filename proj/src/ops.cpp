#include "pxseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pxseg/errors.hpp"
#include "pxseg/kernels.hpp"

namespace pxseg {

int LayerSpec::fan_in() const {
    if (kind == LayerKind::conv2d) return in_channels * kernel * kernel;
    if (kind == LayerKind::linear) return in_channels;
    return 0;
}

LayerSpec conv2d_spec(int in_channels, int out_channels) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    return s;
}

LayerSpec linear_spec(int fan_in, int fan_out) {
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.in_channels = fan_in;
    s.out_channels = fan_out;
    s.kernel = 0;
    s.stride = 0;
    s.padding = 0;
    return s;
}

Tensor init_weights(const LayerSpec& spec, Rng& rng) {
    std::vector<int> shape;
    if (spec.kind == LayerKind::conv2d)
        shape = {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    else if (spec.kind == LayerKind::linear)
        shape = {spec.out_channels, spec.in_channels};
    else
        throw ShapeError("init_weights: layer kind has no weights");
    const double bound = std::sqrt(6.0 / spec.fan_in());
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.data_mut()) v = rng.next_uniform(-bound, bound);
    return t;
}

Tensor init_bias(const LayerSpec& spec) {
    if (spec.kind != LayerKind::conv2d && spec.kind != LayerKind::linear)
        throw ShapeError("init_bias: layer kind has no bias");
    return Tensor::zeros({spec.out_channels}, true);
}

namespace {

Tensor make_op_output(std::vector<int> shape, std::vector<Tensor> inputs) {
    auto node = std::make_shared<TensorNode>();
    const std::int64_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(static_cast<std::size_t>(n), 0.0);
    for (const Tensor& t : inputs) {
        node->requires_grad = node->requires_grad || t.requires_grad();
        node->parents.push_back(t.node());
    }
    return Tensor(std::move(node));
}

void expect_rank(const Tensor& t, int rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " + std::to_string(t.rank()));
}

} // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    expect_rank(input, 3, "conv2d", "input");
    expect_rank(weights, 4, "conv2d", "weights");
    expect_rank(bias, 1, "conv2d", "bias");
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = weights.dim(0);
    if (weights.dim(1) != cin)
        throw ShapeError("conv2d: weights expect in_channels " + std::to_string(weights.dim(1)) +
                         " but input has " + std::to_string(cin));
    if (weights.dim(2) != 3 || weights.dim(3) != 3)
        throw ShapeError("conv2d: kernel must be 3x3, got " + std::to_string(weights.dim(2)) +
                         "x" + std::to_string(weights.dim(3)));
    if (bias.dim(0) != cout)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                         " does not match out_channels " + std::to_string(cout));
    if (h < 1 || w < 1) throw ShapeError("conv2d: input spatial dims must be >= 1");

    Tensor out = make_op_output({cout, h, w}, {input, weights, bias});
    kernels::conv2d_forward(input.data().data(), cin, h, w, weights.data().data(), cout,
                            bias.data().data(), out.data_mut().data());
    check_finite(out.data(), "conv2d_forward");

    if (out.requires_grad()) {
        auto xn = input.node();
        auto wn = weights.node();
        auto bn = bias.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, wn, bn, on, cin, h, w, cout]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                kernels::conv2d_backward_input(wn->data.data(), cout, cin, h, w, on->grad.data(),
                                               xn->grad.data());
            }
            if (wn->requires_grad || bn->requires_grad) {
                wn->ensure_grad();
                bn->ensure_grad();
                kernels::conv2d_backward_params(xn->data.data(), cin, h, w, on->grad.data(), cout,
                                                wn->grad.data(), bn->grad.data());
            }
        };
    }
    return out;
}

Tensor relu_forward(const Tensor& input) {
    Tensor out = make_op_output(input.shape(), {input});
    kernels::relu_forward(input.data().data(), input.size(), out.data_mut().data());
    check_finite(out.data(), "relu_forward");
    if (out.requires_grad()) {
        auto xn = input.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, on]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            kernels::relu_backward(xn->data.data(), on->grad.data(),
                                   static_cast<std::int64_t>(xn->data.size()), xn->grad.data());
        };
    }
    return out;
}

Tensor maxpool2x2_forward(const Tensor& input) {
    expect_rank(input, 3, "maxpool2x2", "input");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h < 2 || w < 2)
        throw ShapeError("maxpool2x2: spatial dims must be >= 2, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    const int oh = h / 2, ow = w / 2;
    Tensor out = make_op_output({c, oh, ow}, {input});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(
        static_cast<std::size_t>(c) * oh * ow, 0);
    kernels::maxpool2x2_forward(input.data().data(), c, h, w, out.data_mut().data(),
                                argmax->data());
    check_finite(out.data(), "maxpool2x2_forward");
    if (out.requires_grad()) {
        auto xn = input.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, on, argmax]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            kernels::maxpool2x2_backward(on->grad.data(),
                                         static_cast<std::int64_t>(argmax->size()),
                                         argmax->data(), xn->grad.data());
        };
    }
    return out;
}

Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    expect_rank(input, 2, "linear", "input");
    expect_rank(weights, 2, "linear", "weights");
    expect_rank(bias, 1, "linear", "bias");
    const int b = input.dim(0), fin = input.dim(1);
    const int fout = weights.dim(0);
    if (weights.dim(1) != fin)
        throw ShapeError("linear: weights expect fan_in " + std::to_string(weights.dim(1)) +
                         " but input has " + std::to_string(fin));
    if (bias.dim(0) != fout)
        throw ShapeError("linear: bias length " + std::to_string(bias.dim(0)) +
                         " does not match fan_out " + std::to_string(fout));

    Tensor out = make_op_output({b, fout}, {input, weights, bias});
    kernels::linear_forward(input.data().data(), b, fin, weights.data().data(), fout,
                            bias.data().data(), out.data_mut().data());
    check_finite(out.data(), "linear_forward");
    if (out.requires_grad()) {
        auto xn = input.node();
        auto wn = weights.node();
        auto bn = bias.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, wn, bn, on, b, fin, fout]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                kernels::linear_backward_input(on->grad.data(), b, fout, wn->data.data(), fin,
                                               xn->grad.data());
            }
            if (wn->requires_grad || bn->requires_grad) {
                wn->ensure_grad();
                bn->ensure_grad();
                kernels::linear_backward_params(xn->data.data(), b, fin, on->grad.data(), fout,
                                                wn->grad.data(), bn->grad.data());
            }
        };
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    expect_rank(logits, 2, "softmax_cross_entropy", "logits");
    const int b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(targets.size()) != b)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(b));
    for (int t : targets)
        if (t < 0 || t >= k)
            throw DataError("softmax_cross_entropy: target " + std::to_string(t) +
                            " outside [0," + std::to_string(k) + ")");

    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k, 0.0);
    kernels::softmax_rows(logits.data().data(), b, k, probs->data());

    double loss = 0.0;
    for (int row = 0; row < b; ++row) {
        // -log softmax via the stabilized probabilities
        loss += -std::log((*probs)[static_cast<std::size_t>(row) * k + targets[row]]);
    }
    loss /= b;

    Tensor out = make_op_output({}, {logits});
    out.data_mut()[0] = loss;
    check_finite(out.data(), "softmax_cross_entropy");
    if (out.requires_grad()) {
        auto ln = logits.node();
        TensorNode* on = out.node().get();
        std::vector<int> tgt(targets.begin(), targets.end());
        out.node()->backward_fn = [ln, on, probs, tgt, b, k]() {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const double g = on->grad[0] / b;
            for (int row = 0; row < b; ++row) {
                for (int j = 0; j < k; ++j) {
                    const double soft = (*probs)[static_cast<std::size_t>(row) * k + j];
                    const double onehot = (j == tgt[static_cast<std::size_t>(row)]) ? 1.0 : 0.0;
                    ln->grad[static_cast<std::size_t>(row) * k + j] += g * (soft - onehot);
                }
            }
        };
    }
    return out;
}

Tensor sum(const Tensor& input) {
    Tensor out = make_op_output({}, {input});
    double acc = 0.0;
    for (double v : input.data()) acc += v;
    out.data_mut()[0] = acc;
    check_finite(out.data(), "sum");
    if (out.requires_grad()) {
        auto xn = input.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, on]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const double g = on->grad[0];
            for (double& v : xn->grad) v += g;
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    Tensor out = make_op_output(a.shape(), {a, b});
    auto o = out.data_mut();
    for (std::int64_t i = 0; i < a.size(); ++i)
        o[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i)] *
                                         b.data()[static_cast<std::size_t>(i)];
    check_finite(out.data(), "mul");
    if (out.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->data[i];
            }
        };
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    Tensor out = make_op_output(a.shape(), {a, b});
    auto o = out.data_mut();
    for (std::int64_t i = 0; i < a.size(); ++i)
        o[static_cast<std::size_t>(i)] = a.data()[static_cast<std::size_t>(i)] +
                                         b.data()[static_cast<std::size_t>(i)];
    check_finite(out.data(), "add");
    if (out.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [an, bn, on]() {
            for (const auto& n : {an, bn}) {
                if (!n->requires_grad) continue;
                n->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) n->grad[i] += on->grad[i];
            }
        };
    }
    return out;
}

Tensor reshape(const Tensor& input, std::vector<int> shape) {
    if (shape_numel(shape) != input.size())
        throw ShapeError("reshape: target shape holds " + std::to_string(shape_numel(shape)) +
                         " elements, input holds " + std::to_string(input.size()));
    Tensor out = make_op_output(shape, {input});
    auto o = out.data_mut();
    std::copy(input.data().begin(), input.data().end(), o.begin());
    if (out.requires_grad()) {
        auto xn = input.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [xn, on]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        };
    }
    return out;
}

void SgdOptimizer::step(std::vector<Tensor>& params) {
    if (velocity_.size() != params.size()) {
        velocity_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            velocity_[i].assign(params[i].data().size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.has_grad()) continue;
        auto data = p.data_mut();
        auto grad = p.grad();
        auto& vel = velocity_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            vel[j] = config_.momentum * vel[j] + grad[j] + config_.weight_decay * data[j];
            data[j] -= config_.learning_rate * vel[j];
        }
    }
}

} // namespace pxseg
