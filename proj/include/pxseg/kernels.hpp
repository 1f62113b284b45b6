#pragma once

#include <cstdint>
#include <utility>
#include <vector>

// Raw-buffer compute kernels. The heavy loops carry OpenMP pragmas; every
// parallel iteration owns a disjoint output slice and accumulates in a fixed
// serial order, so results are bit-identical for any thread count.
namespace pxseg::kernels {

// 3x3 convolution, stride 1, zero padding 1. x: [cin,h,w], w: [cout,cin,3,3],
// bias: [cout], y: [cout,h,w].
void conv2d_forward(const double* x, int cin, int h, int w, const double* wgt, int cout,
                    const double* bias, double* y);

// Accumulates (+=) into dx [cin,h,w].
void conv2d_backward_input(const double* wgt, int cout, int cin, int h, int w, const double* dy,
                           double* dx);

// Accumulates (+=) into dwgt [cout,cin,3,3] and dbias [cout].
void conv2d_backward_params(const double* x, int cin, int h, int w, const double* dy, int cout,
                            double* dwgt, double* dbias);

void relu_forward(const double* x, std::int64_t n, double* y);
// dx += dy * (x > 0)
void relu_backward(const double* x, const double* dy, std::int64_t n, double* dx);

// y: [c, h/2, w/2], argmax: flat input index of the window max per output cell
// (first maximum in scan order).
void maxpool2x2_forward(const double* x, int c, int h, int w, double* y, std::int32_t* argmax);
void maxpool2x2_backward(const double* dy, std::int64_t n_out, const std::int32_t* argmax,
                         double* dx);

// x: [b,fin], wgt: [fout,fin], bias: [fout], y: [b,fout].
void linear_forward(const double* x, int b, int fin, const double* wgt, int fout,
                    const double* bias, double* y);
void linear_backward_input(const double* dy, int b, int fout, const double* wgt, int fin,
                           double* dx);
void linear_backward_params(const double* x, int b, int fin, const double* dy, int fout,
                            double* dwgt, double* dbias);

// Row-wise stabilized softmax. probs may alias logits.
void softmax_rows(const double* logits, int b, int k, double* probs);

// One pyramid level as seen by the gather kernels.
struct LevelView {
    const double* data; // [c,h,w]
    int channels;
    int height;
    int width;
    int stride;
};

// Center-aligned mapping of an input pixel into a strided map, clamped to the
// map's valid coordinate range.
std::pair<double, double> map_coordinate(int row, int col, int stride, int map_h, int map_w);

// Bilinear weights/corners for one already-mapped coordinate.
struct BilinearTaps {
    int r0, r1, c0, c1;
    double w00, w01, w10, w11;
};
BilinearTaps bilinear_taps(double row_f, double col_f, int h, int w);

// out: [n_pixels, sum(level channels)], level-major per row. Pixels are input
// coordinates; mapping + interpolation happen per level.
void hypercolumn_gather(const std::vector<LevelView>& levels,
                        const std::pair<int, int>* pixels, std::int64_t n_pixels, double* out);

// Backward of the gather: scatters d_out into per-level gradient buffers
// (same shapes as the level data). Serial per level, fixed pixel order.
void hypercolumn_scatter(const std::vector<LevelView>& levels, const std::pair<int, int>* pixels,
                         std::int64_t n_pixels, const double* d_out,
                         const std::vector<double*>& d_levels);

} // namespace pxseg::kernels
