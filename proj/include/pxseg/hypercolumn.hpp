#pragma once

#include <utility>
#include <vector>

#include "pxseg/tensor.hpp"

namespace pxseg {

// One tapped feature map and its downsampling factor relative to the input.
struct PyramidLevel {
    Tensor map; // [C_i, H_i, W_i]
    int stride = 1;
};

struct FeaturePyramid {
    std::vector<PyramidLevel> levels;
    int input_height = 0;
    int input_width = 0;

    // Total hypercolumn width, sum of tapped channel counts.
    int feature_width() const {
        int f = 0;
        for (const auto& lv : levels) f += lv.map.dim(0);
        return f;
    }
};

// Center-aligned input->map coordinate mapping, clamped to the map bounds.
std::pair<double, double> map_coordinate(std::pair<int, int> pixel, int stride, int map_h,
                                         int map_w);

// Differentiable 4-tap interpolation of one coordinate; returns [C].
// Coordinates must already lie within [0,H-1]x[0,W-1].
Tensor bilinear_sample(const Tensor& feature_map, double row_f, double col_f);

// Rows are level-major concatenations of interpolated per-level responses;
// returns [P, F]. An empty pixel list yields a (0,F) tensor.
Tensor extract_hypercolumns(const FeaturePyramid& pyramid,
                            const std::vector<std::pair<int, int>>& pixels);

} // namespace pxseg
