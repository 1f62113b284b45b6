#pragma once

#include <cstdint>
#include <utility>
#include <vector>

// Straight-line serial reference kernels, written from the definitions.
// They back the unit-test oracles and the benchmark baseline; nothing in the
// production path calls them.
namespace pxseg::ref {

// Per-output-cell tap sum over the padded input.
void conv2d_forward(const double* x, int cin, int h, int w, const double* wgt, int cout,
                    const double* bias, double* y);

// Triple loop.
void linear_forward(const double* x, int b, int fin, const double* wgt, int fout,
                    const double* bias, double* y);

// Nested window max, values only.
void maxpool2x2_forward(const double* x, int c, int h, int w, double* y);

void relu_forward(const double* x, std::int64_t n, double* y);

// Mean of -log softmax(logits)[target], accumulated in long double.
double softmax_cross_entropy(const double* logits, int b, int k, const int* targets);

// Per-pixel, per-level straight-line hypercolumn extraction.
struct RefLevel {
    const double* data;
    int channels, height, width, stride;
};
std::vector<double> hypercolumn_gather(const std::vector<RefLevel>& levels,
                                       const std::vector<std::pair<int, int>>& pixels,
                                       int input_h, int input_w);

// Full-scan label histogram: (label, count) ascending.
std::vector<std::pair<int, std::int64_t>> label_histogram(const int* labels,
                                                          const std::uint8_t* valid,
                                                          std::int64_t n, bool has_ignore,
                                                          int ignore_label);

// ---- metric oracles (2D/3D, brute force) ----

struct RefMask {
    std::vector<int> dims; // {h,w} or {d,h,w}
    std::vector<std::uint8_t> grid;
    std::vector<double> spacing;
};

void confusion(const RefMask& pred, const RefMask& gt, std::int64_t& tp, std::int64_t& fp,
               std::int64_t& fn, std::int64_t& tn);

double dice(const RefMask& pred, const RefMask& gt);

// Foreground voxels with a face-adjacent background-or-border neighbour.
std::vector<std::int64_t> surface_voxels(const RefMask& mask);

// All directed surface distances a->b, one per surface voxel of a,
// each the min over every surface voxel of b (all-pairs scan).
std::vector<double> directed_surface_distances(const RefMask& a, const RefMask& b);

// max over directions of the nearest-rank 95th percentile. Returns false when
// either mask is empty.
bool hausdorff95(const RefMask& a, const RefMask& b, double& out);

bool average_surface_distance(const RefMask& a, const RefMask& b, double& out);

} // namespace pxseg::ref
