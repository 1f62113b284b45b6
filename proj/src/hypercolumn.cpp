#include "pxseg/hypercolumn.hpp"

#include <string>

#include "pxseg/errors.hpp"
#include "pxseg/kernels.hpp"

namespace pxseg {

std::pair<double, double> map_coordinate(std::pair<int, int> pixel, int stride, int map_h,
                                         int map_w) {
    return kernels::map_coordinate(pixel.first, pixel.second, stride, map_h, map_w);
}

Tensor bilinear_sample(const Tensor& feature_map, double row_f, double col_f) {
    if (feature_map.rank() != 3) throw ShapeError("bilinear_sample: feature map must be [C,H,W]");
    const int c = feature_map.dim(0), h = feature_map.dim(1), w = feature_map.dim(2);
    if (row_f < 0.0 || row_f > h - 1 || col_f < 0.0 || col_f > w - 1)
        throw ShapeError("bilinear_sample: coordinate (" + std::to_string(row_f) + "," +
                         std::to_string(col_f) + ") outside [0," + std::to_string(h - 1) +
                         "]x[0," + std::to_string(w - 1) + "]");

    const kernels::BilinearTaps t = kernels::bilinear_taps(row_f, col_f, h, w);

    auto node = std::make_shared<TensorNode>();
    node->shape = {c};
    node->data.assign(static_cast<std::size_t>(c), 0.0);
    node->requires_grad = feature_map.requires_grad();
    node->parents.push_back(feature_map.node());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* m = feature_map.data().data() + ch * plane;
        node->data[static_cast<std::size_t>(ch)] =
            t.w00 * m[t.r0 * w + t.c0] + t.w01 * m[t.r0 * w + t.c1] +
            t.w10 * m[t.r1 * w + t.c0] + t.w11 * m[t.r1 * w + t.c1];
    }
    Tensor out(node);
    check_finite(out.data(), "bilinear_sample");
    if (out.requires_grad()) {
        auto mn = feature_map.node();
        TensorNode* on = out.node().get();
        out.node()->backward_fn = [mn, on, t, c, w, plane]() {
            if (!mn->requires_grad) return;
            mn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double* g = mn->grad.data() + ch * plane;
                const double d = on->grad[static_cast<std::size_t>(ch)];
                g[t.r0 * w + t.c0] += t.w00 * d;
                g[t.r0 * w + t.c1] += t.w01 * d;
                g[t.r1 * w + t.c0] += t.w10 * d;
                g[t.r1 * w + t.c1] += t.w11 * d;
            }
        };
    }
    return out;
}

Tensor extract_hypercolumns(const FeaturePyramid& pyramid,
                            const std::vector<std::pair<int, int>>& pixels) {
    if (pyramid.levels.empty()) throw ShapeError("extract_hypercolumns: empty pyramid");
    for (const auto& [r, ccol] : pixels) {
        if (r < 0 || r >= pyramid.input_height || ccol < 0 || ccol >= pyramid.input_width)
            throw ShapeError("extract_hypercolumns: pixel (" + std::to_string(r) + "," +
                             std::to_string(ccol) + ") outside " +
                             std::to_string(pyramid.input_height) + "x" +
                             std::to_string(pyramid.input_width));
    }

    std::vector<kernels::LevelView> views;
    views.reserve(pyramid.levels.size());
    bool any_grad = false;
    for (const auto& lv : pyramid.levels) {
        views.push_back({lv.map.data().data(), lv.map.dim(0), lv.map.dim(1), lv.map.dim(2),
                         lv.stride});
        any_grad = any_grad || lv.map.requires_grad();
    }
    const int f = pyramid.feature_width();
    const auto p = static_cast<std::int64_t>(pixels.size());

    auto node = std::make_shared<TensorNode>();
    node->shape = {static_cast<int>(p), f};
    node->data.assign(static_cast<std::size_t>(p * f), 0.0);
    node->requires_grad = any_grad;
    for (const auto& lv : pyramid.levels) node->parents.push_back(lv.map.node());
    if (p > 0)
        kernels::hypercolumn_gather(views, pixels.data(), p, node->data.data());
    Tensor out(node);
    check_finite(out.data(), "extract_hypercolumns");

    if (any_grad && p > 0) {
        std::vector<NodePtr> level_nodes;
        for (const auto& lv : pyramid.levels) level_nodes.push_back(lv.map.node());
        TensorNode* on = out.node().get();
        auto pix = std::make_shared<std::vector<std::pair<int, int>>>(pixels);
        out.node()->backward_fn = [views, level_nodes, on, pix, p]() {
            std::vector<double*> d_levels(level_nodes.size(), nullptr);
            for (std::size_t i = 0; i < level_nodes.size(); ++i) {
                if (level_nodes[i]->requires_grad) {
                    level_nodes[i]->ensure_grad();
                    d_levels[i] = level_nodes[i]->grad.data();
                }
            }
            kernels::hypercolumn_scatter(views, pix->data(), p, on->grad.data(), d_levels);
        };
    }
    return out;
}

} // namespace pxseg
