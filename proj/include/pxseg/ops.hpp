#pragma once

#include <span>
#include <vector>

#include "pxseg/rng.hpp"
#include "pxseg/tensor.hpp"

namespace pxseg {

// Layer descriptors. conv2d is fixed at kernel 3 / stride 1 / padding 1 so a
// stage preserves spatial size; maxpool2x2 floor-halves it. dropout_off is an
// identity placeholder kept so configs listing it stay loadable.
enum class LayerKind { conv2d, relu, maxpool2x2, linear, dropout_off };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in_channels = 0;  // conv2d / linear fan-in
    int out_channels = 0; // conv2d / linear fan-out
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int fan_in() const;
};

LayerSpec conv2d_spec(int in_channels, int out_channels);
LayerSpec linear_spec(int fan_in, int fan_out);

// Scaled-uniform weight init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor init_weights(const LayerSpec& spec, Rng& rng);
Tensor init_bias(const LayerSpec& spec);

// ---- differentiable ops ----

// input [cin,h,w], weights [cout,cin,3,3], bias [cout] -> [cout,h,w]
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu_forward(const Tensor& input);

// [c,h,w] -> [c,h/2,w/2]; gradient routes to the first window max in scan order
Tensor maxpool2x2_forward(const Tensor& input);

// input [b,fin], weights [fout,fin], bias [fout] -> [b,fout]
Tensor linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

// mean over rows of -log softmax(logits)[target]; max-subtraction stabilized
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

// ---- small utility ops (tests, composition) ----
Tensor sum(const Tensor& input);              // scalar
Tensor mul(const Tensor& a, const Tensor& b); // elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& input, std::vector<int> shape); // same numel

// ---- SGD with classical momentum and weight decay ----

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0x1234;
};

class SgdOptimizer {
public:
    explicit SgdOptimizer(SgdConfig config) : config_(config) {}

    // v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
    // Gradients are left untouched; the caller zeroes them.
    void step(std::vector<Tensor>& params);

    const SgdConfig& config() const { return config_; }

private:
    SgdConfig config_;
    std::vector<std::vector<double>> velocity_;
};

} // namespace pxseg
