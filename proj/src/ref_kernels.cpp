#include "pxseg/ref_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace pxseg::ref {

void conv2d_forward(const double* x, int cin, int h, int w, const double* wgt, int cout,
                    const double* bias, double* y) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < h; ++oy) {
            for (int ox = 0; ox < w; ++ox) {
                double acc = bias[co];
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy + ky - 1;
                            const int ix = ox + kx - 1;
                            const double xv = (iy < 0 || iy >= h || ix < 0 || ix >= w)
                                                  ? 0.0
                                                  : x[ci * plane + static_cast<std::int64_t>(iy) * w + ix];
                            acc += wgt[((static_cast<std::int64_t>(co) * cin + ci) * 9) +
                                       ky * 3 + kx] *
                                   xv;
                        }
                    }
                }
                y[co * plane + static_cast<std::int64_t>(oy) * w + ox] = acc;
            }
        }
    }
}

void linear_forward(const double* x, int b, int fin, const double* wgt, int fout,
                    const double* bias, double* y) {
    for (int row = 0; row < b; ++row) {
        for (int o = 0; o < fout; ++o) {
            double acc = bias[o];
            for (int i = 0; i < fin; ++i)
                acc += x[static_cast<std::int64_t>(row) * fin + i] *
                       wgt[static_cast<std::int64_t>(o) * fin + i];
            y[static_cast<std::int64_t>(row) * fout + o] = acc;
        }
    }
}

void maxpool2x2_forward(const double* x, int c, int h, int w, double* y) {
    const int oh = h / 2;
    const int ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double best = x[ch * static_cast<std::int64_t>(h) * w +
                                static_cast<std::int64_t>(2 * oy) * w + 2 * ox];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        best = std::max(best, x[ch * static_cast<std::int64_t>(h) * w +
                                                static_cast<std::int64_t>(2 * oy + dy) * w +
                                                (2 * ox + dx)]);
                y[ch * static_cast<std::int64_t>(oh) * ow + static_cast<std::int64_t>(oy) * ow +
                  ox] = best;
            }
        }
    }
}

void relu_forward(const double* x, std::int64_t n, double* y) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = std::max(0.0, x[i]);
}

double softmax_cross_entropy(const double* logits, int b, int k, const int* targets) {
    long double total = 0.0L;
    for (int row = 0; row < b; ++row) {
        const double* lr = logits + static_cast<std::int64_t>(row) * k;
        long double mx = lr[0];
        for (int j = 1; j < k; ++j) mx = std::max<long double>(mx, lr[j]);
        long double denom = 0.0L;
        for (int j = 0; j < k; ++j) denom += expl(static_cast<long double>(lr[j]) - mx);
        const long double logp = static_cast<long double>(lr[targets[row]]) - mx - logl(denom);
        total += -logp;
    }
    return static_cast<double>(total / b);
}

std::vector<double> hypercolumn_gather(const std::vector<RefLevel>& levels,
                                       const std::vector<std::pair<int, int>>& pixels, int,
                                       int) {
    int total_c = 0;
    for (const auto& lv : levels) total_c += lv.channels;
    std::vector<double> out(pixels.size() * static_cast<std::size_t>(total_c), 0.0);
    for (std::size_t p = 0; p < pixels.size(); ++p) {
        int off = 0;
        for (const auto& lv : levels) {
            double rf = (pixels[p].first + 0.5) / lv.stride - 0.5;
            double cf = (pixels[p].second + 0.5) / lv.stride - 0.5;
            rf = std::clamp(rf, 0.0, static_cast<double>(lv.height - 1));
            cf = std::clamp(cf, 0.0, static_cast<double>(lv.width - 1));
            int r0 = std::min(static_cast<int>(std::floor(rf)), lv.height - 1);
            int c0 = std::min(static_cast<int>(std::floor(cf)), lv.width - 1);
            const int r1 = std::min(r0 + 1, lv.height - 1);
            const int c1 = std::min(c0 + 1, lv.width - 1);
            const double fr = rf - r0;
            const double fc = cf - c0;
            for (int c = 0; c < lv.channels; ++c) {
                const double* m = lv.data + static_cast<std::int64_t>(c) * lv.height * lv.width;
                const double v = (1.0 - fr) * (1.0 - fc) * m[r0 * lv.width + c0] +
                                 (1.0 - fr) * fc * m[r0 * lv.width + c1] +
                                 fr * (1.0 - fc) * m[r1 * lv.width + c0] +
                                 fr * fc * m[r1 * lv.width + c1];
                out[p * total_c + off + c] = v;
            }
            off += lv.channels;
        }
    }
    return out;
}

std::vector<std::pair<int, std::int64_t>> label_histogram(const int* labels,
                                                          const std::uint8_t* valid,
                                                          std::int64_t n, bool has_ignore,
                                                          int ignore_label) {
    std::map<int, std::int64_t> counts;
    for (std::int64_t i = 0; i < n; ++i) {
        if (valid != nullptr && valid[i] == 0) continue;
        if (has_ignore && labels[i] == ignore_label) continue;
        ++counts[labels[i]];
    }
    return {counts.begin(), counts.end()};
}

namespace {

std::int64_t numel(const RefMask& m) {
    std::int64_t n = 1;
    for (int d : m.dims) n *= d;
    return n;
}

// coords per axis for a flat index (row-major)
std::vector<int> unflatten(const RefMask& m, std::int64_t idx) {
    std::vector<int> c(m.dims.size());
    for (int a = static_cast<int>(m.dims.size()) - 1; a >= 0; --a) {
        c[static_cast<std::size_t>(a)] = static_cast<int>(idx % m.dims[static_cast<std::size_t>(a)]);
        idx /= m.dims[static_cast<std::size_t>(a)];
    }
    return c;
}

} // namespace

void confusion(const RefMask& pred, const RefMask& gt, std::int64_t& tp, std::int64_t& fp,
               std::int64_t& fn, std::int64_t& tn) {
    tp = fp = fn = tn = 0;
    const std::int64_t n = numel(pred);
    for (std::int64_t i = 0; i < n; ++i) {
        const bool p = pred.grid[static_cast<std::size_t>(i)] != 0;
        const bool g = gt.grid[static_cast<std::size_t>(i)] != 0;
        if (p && g)
            ++tp;
        else if (p && !g)
            ++fp;
        else if (!p && g)
            ++fn;
        else
            ++tn;
    }
}

double dice(const RefMask& pred, const RefMask& gt) {
    std::int64_t tp, fp, fn, tn;
    confusion(pred, gt, tp, fp, fn, tn);
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<std::int64_t> surface_voxels(const RefMask& mask) {
    std::vector<std::int64_t> out;
    const std::int64_t n = numel(mask);
    const int rank = static_cast<int>(mask.dims.size());
    for (std::int64_t i = 0; i < n; ++i) {
        if (mask.grid[static_cast<std::size_t>(i)] == 0) continue;
        const std::vector<int> c = unflatten(mask, i);
        bool border = false;
        for (int a = 0; a < rank && !border; ++a) {
            for (int d = -1; d <= 1 && !border; d += 2) {
                std::vector<int> nb = c;
                nb[static_cast<std::size_t>(a)] += d;
                if (nb[static_cast<std::size_t>(a)] < 0 ||
                    nb[static_cast<std::size_t>(a)] >= mask.dims[static_cast<std::size_t>(a)]) {
                    border = true;
                    break;
                }
                std::int64_t idx = 0;
                for (int b = 0; b < rank; ++b)
                    idx = idx * mask.dims[static_cast<std::size_t>(b)] + nb[static_cast<std::size_t>(b)];
                if (mask.grid[static_cast<std::size_t>(idx)] == 0) border = true;
            }
        }
        if (border) out.push_back(i);
    }
    return out;
}

std::vector<double> directed_surface_distances(const RefMask& a, const RefMask& b) {
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    std::vector<double> out;
    out.reserve(sa.size());
    for (std::int64_t ia : sa) {
        const std::vector<int> ca = unflatten(a, ia);
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t ib : sb) {
            const std::vector<int> cb = unflatten(b, ib);
            double d2 = 0.0;
            for (std::size_t ax = 0; ax < ca.size(); ++ax) {
                const double d = (ca[ax] - cb[ax]) * a.spacing[ax];
                d2 += d * d;
            }
            best = std::min(best, std::sqrt(d2));
        }
        out.push_back(best);
    }
    return out;
}

namespace {
double percentile95_nearest_rank(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    return v[rank - 1];
}
} // namespace

bool hausdorff95(const RefMask& a, const RefMask& b, double& out) {
    const auto da = directed_surface_distances(a, b);
    const auto db = directed_surface_distances(b, a);
    if (da.empty() || db.empty()) return false;
    out = std::max(percentile95_nearest_rank(da), percentile95_nearest_rank(db));
    return true;
}

bool average_surface_distance(const RefMask& a, const RefMask& b, double& out) {
    auto da = directed_surface_distances(a, b);
    const auto db = directed_surface_distances(b, a);
    if (da.empty() || db.empty()) return false;
    da.insert(da.end(), db.begin(), db.end());
    long double sum = 0.0L;
    for (double d : da) sum += d;
    out = static_cast<double>(sum / da.size());
    return true;
}

} // namespace pxseg::ref
