#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pxseg/hypercolumn.hpp"
#include "pxseg/ops.hpp"
#include "pxseg/sampling.hpp"
#include "pxseg/tensor.hpp"

namespace pxseg {

struct StageConfig {
    int n_convs = 2;
    int width = 16;
};

// Full run configuration. JSON mirror uses the same snake_case field names;
// unknown keys are rejected.
struct ModelConfig {
    int in_channels = 3;
    std::vector<StageConfig> stages = {{2, 16}, {2, 32}, {2, 64}};
    std::vector<int> tap_stages = {0, 1, 2};
    std::vector<int> mlp_widths = {64, 64};
    int n_classes = 4;
    int n_sample_pixels = 256;
    SampleStrategy sampler = SampleStrategy::class_balanced;
    SkewFallback skew_fallback = SkewFallback::with_replacement;
    SgdConfig sgd;
    int iterations = 2000;

    void validate() const;
    int hypercolumn_width() const; // sum of tapped stage widths

    static ModelConfig from_json_text(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);
    std::string to_json_text() const;
};

struct LabeledSlice {
    Tensor image;                    // [C,H,W], normalized intensities
    std::vector<int> mask;           // H*W row-major labels in [0, n_classes)
    std::vector<std::uint8_t> valid; // H*W, or empty for all-valid

    int height() const { return image.node()->shape.at(1); }
    int width() const { return image.node()->shape.at(2); }
};

struct PredictOptions {
    int tile_rows = 16; // row-block height for dense inference
};

struct DensePrediction {
    int n_classes = 0;
    int height = 0;
    int width = 0;
    std::vector<int> labels;    // H*W argmax labels
    std::vector<double> probs;  // [K,H,W] softmax probabilities
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
        return named_params_;
    }
    std::int64_t step_count() const { return step_; }

    // Runs the conv stages over one image and taps the configured pre-pool
    // feature maps into a pyramid (stride doubles per stage).
    FeaturePyramid forward_backbone(const Tensor& image);

    // Backbone once, hypercolumns at the given pixels, MLP rowwise.
    Tensor forward_sparse(const Tensor& image, const std::vector<std::pair<int, int>>& pixels);

    // MLP head over rows of a [P,F] feature matrix -> [P,n_classes] logits.
    Tensor mlp_forward(const Tensor& features);

    // Sample -> forward_sparse -> cross-entropy -> backward -> SGD -> zero
    // grads. Returns the pre-step loss.
    double train_step(const LabeledSlice& slice);

    // Hypercolumns for every pixel, evaluated in row tiles; probabilities and
    // argmax labels per pixel. Tile size must not affect the result.
    DensePrediction predict_dense(const Tensor& image, const PredictOptions& options = {});

    void save_checkpoint(const std::string& path) const;
    static Model load_checkpoint(const std::string& path);

private:
    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> named_params_;
    std::vector<Tensor> params_;
    // Structured views over the same tensors, in forward order.
    std::vector<std::vector<std::pair<Tensor, Tensor>>> stage_convs_; // [stage][conv] -> (W,b)
    std::vector<std::pair<Tensor, Tensor>> mlp_layers_;               // hidden layers + head
    SgdOptimizer optimizer_;
    std::int64_t step_ = 0;
};

} // namespace pxseg
