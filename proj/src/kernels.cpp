#include "pxseg/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace pxseg::kernels {

void conv2d_forward(const double* x, int cin, int h, int w, const double* wgt, int cout,
                    const double* bias, double* y) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double* out = y + co * plane;
        std::fill(out, out + plane, bias[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* in = x + ci * plane;
            const double* wk = wgt + ((static_cast<std::int64_t>(co) * cin + ci) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wk[ky * 3 + kx];
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    for (int yy = y0; yy < y1; ++yy) {
                        const double* in_row = in + static_cast<std::int64_t>(yy + ky - 1) * w;
                        double* out_row = out + static_cast<std::int64_t>(yy) * w;
                        for (int xx = x0; xx < x1; ++xx)
                            out_row[xx] += wv * in_row[xx + kx - 1];
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* wgt, int cout, int cin, int h, int w, const double* dy,
                           double* dx) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        double* dxp = dx + ci * plane;
        for (int co = 0; co < cout; ++co) {
            const double* dyp = dy + co * plane;
            const double* wk = wgt + ((static_cast<std::int64_t>(co) * cin + ci) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wk[ky * 3 + kx];
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    // input cell (yy+ky-1, xx+kx-1) received wv from output (yy, xx)
                    for (int yy = y0; yy < y1; ++yy) {
                        const double* dy_row = dyp + static_cast<std::int64_t>(yy) * w;
                        double* dx_row = dxp + static_cast<std::int64_t>(yy + ky - 1) * w;
                        for (int xx = x0; xx < x1; ++xx)
                            dx_row[xx + kx - 1] += wv * dy_row[xx];
                    }
                }
            }
        }
    }
}

void conv2d_backward_params(const double* x, int cin, int h, int w, const double* dy, int cout,
                            double* dwgt, double* dbias) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        const double* dyp = dy + co * plane;
        double bsum = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) bsum += dyp[i];
        dbias[co] += bsum;
        for (int ci = 0; ci < cin; ++ci) {
            const double* in = x + ci * plane;
            double* dwk = dwgt + ((static_cast<std::int64_t>(co) * cin + ci) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    double acc = 0.0;
                    for (int yy = y0; yy < y1; ++yy) {
                        const double* dy_row = dyp + static_cast<std::int64_t>(yy) * w;
                        const double* in_row = in + static_cast<std::int64_t>(yy + ky - 1) * w;
                        for (int xx = x0; xx < x1; ++xx)
                            acc += dy_row[xx] * in_row[xx + kx - 1];
                    }
                    dwk[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

void relu_forward(const double* x, std::int64_t n, double* y) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, std::int64_t n, double* dx) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

void maxpool2x2_forward(const double* x, int c, int h, int w, double* y, std::int32_t* argmax) {
    const int oh = h / 2;
    const int ow = w / 2;
    const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* in = x + ch * in_plane;
        double* out = y + ch * out_plane;
        std::int32_t* arg = argmax + ch * out_plane;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double best = -1.0;
                std::int64_t best_idx = -1;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::int64_t idx =
                            static_cast<std::int64_t>(2 * oy + dy) * w + (2 * ox + dx);
                        // strict > keeps the first maximum in scan order
                        if (best_idx < 0 || in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[oy * ow + ox] = best;
                arg[oy * ow + ox] = static_cast<std::int32_t>(ch * in_plane + best_idx);
            }
        }
    }
}

void maxpool2x2_backward(const double* dy, std::int64_t n_out, const std::int32_t* argmax,
                         double* dx) {
    // windows are disjoint, so argmax targets never collide
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n_out; ++i) dx[argmax[i]] += dy[i];
}

void linear_forward(const double* x, int b, int fin, const double* wgt, int fout,
                    const double* bias, double* y) {
#pragma omp parallel for schedule(static)
    for (int row = 0; row < b; ++row) {
        const double* xr = x + static_cast<std::int64_t>(row) * fin;
        double* yr = y + static_cast<std::int64_t>(row) * fout;
        for (int o = 0; o < fout; ++o) {
            const double* wr = wgt + static_cast<std::int64_t>(o) * fin;
            double acc = bias[o];
            for (int i = 0; i < fin; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
}

void linear_backward_input(const double* dy, int b, int fout, const double* wgt, int fin,
                           double* dx) {
#pragma omp parallel for schedule(static)
    for (int row = 0; row < b; ++row) {
        const double* dyr = dy + static_cast<std::int64_t>(row) * fout;
        double* dxr = dx + static_cast<std::int64_t>(row) * fin;
        for (int o = 0; o < fout; ++o) {
            const double g = dyr[o];
            const double* wr = wgt + static_cast<std::int64_t>(o) * fin;
            for (int i = 0; i < fin; ++i) dxr[i] += g * wr[i];
        }
    }
}

void linear_backward_params(const double* x, int b, int fin, const double* dy, int fout,
                            double* dwgt, double* dbias) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < fout; ++o) {
        double* dwr = dwgt + static_cast<std::int64_t>(o) * fin;
        double bacc = 0.0;
        for (int row = 0; row < b; ++row) {
            const double g = dy[static_cast<std::int64_t>(row) * fout + o];
            bacc += g;
            const double* xr = x + static_cast<std::int64_t>(row) * fin;
            for (int i = 0; i < fin; ++i) dwr[i] += g * xr[i];
        }
        dbias[o] += bacc;
    }
}

void softmax_rows(const double* logits, int b, int k, double* probs) {
#pragma omp parallel for schedule(static)
    for (int row = 0; row < b; ++row) {
        const double* lr = logits + static_cast<std::int64_t>(row) * k;
        double* pr = probs + static_cast<std::int64_t>(row) * k;
        double mx = lr[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, lr[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            pr[j] = std::exp(lr[j] - mx);
            denom += pr[j];
        }
        for (int j = 0; j < k; ++j) pr[j] /= denom;
    }
}

std::pair<double, double> map_coordinate(int row, int col, int stride, int map_h, int map_w) {
    const double s = static_cast<double>(stride);
    double rf = (row + 0.5) / s - 0.5;
    double cf = (col + 0.5) / s - 0.5;
    rf = std::clamp(rf, 0.0, static_cast<double>(map_h - 1));
    cf = std::clamp(cf, 0.0, static_cast<double>(map_w - 1));
    return {rf, cf};
}

BilinearTaps bilinear_taps(double row_f, double col_f, int h, int w) {
    BilinearTaps t{};
    t.r0 = static_cast<int>(std::floor(row_f));
    t.c0 = static_cast<int>(std::floor(col_f));
    if (t.r0 >= h - 1) t.r0 = h - 1;
    if (t.c0 >= w - 1) t.c0 = w - 1;
    t.r1 = std::min(t.r0 + 1, h - 1);
    t.c1 = std::min(t.c0 + 1, w - 1);
    const double fr = row_f - t.r0;
    const double fc = col_f - t.c0;
    t.w00 = (1.0 - fr) * (1.0 - fc);
    t.w01 = (1.0 - fr) * fc;
    t.w10 = fr * (1.0 - fc);
    t.w11 = fr * fc;
    return t;
}

void hypercolumn_gather(const std::vector<LevelView>& levels,
                        const std::pair<int, int>* pixels, std::int64_t n_pixels, double* out) {
    int total_c = 0;
    for (const auto& lv : levels) total_c += lv.channels;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < n_pixels; ++p) {
        double* row = out + p * total_c;
        int off = 0;
        for (const auto& lv : levels) {
            const auto [rf, cf] =
                map_coordinate(pixels[p].first, pixels[p].second, lv.stride, lv.height, lv.width);
            const BilinearTaps t = bilinear_taps(rf, cf, lv.height, lv.width);
            const std::int64_t plane = static_cast<std::int64_t>(lv.height) * lv.width;
            for (int c = 0; c < lv.channels; ++c) {
                const double* m = lv.data + c * plane;
                row[off + c] = t.w00 * m[t.r0 * lv.width + t.c0] + t.w01 * m[t.r0 * lv.width + t.c1] +
                               t.w10 * m[t.r1 * lv.width + t.c0] + t.w11 * m[t.r1 * lv.width + t.c1];
            }
            off += lv.channels;
        }
    }
}

void hypercolumn_scatter(const std::vector<LevelView>& levels, const std::pair<int, int>* pixels,
                         std::int64_t n_pixels, const double* d_out,
                         const std::vector<double*>& d_levels) {
    int total_c = 0;
    for (const auto& lv : levels) total_c += lv.channels;
    // pixels may share interpolation corners, so each level is walked serially
    int off = 0;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const LevelView& lv = levels[li];
        double* dmap = d_levels[li];
        if (dmap != nullptr) {
            const std::int64_t plane = static_cast<std::int64_t>(lv.height) * lv.width;
            for (std::int64_t p = 0; p < n_pixels; ++p) {
                const auto [rf, cf] = map_coordinate(pixels[p].first, pixels[p].second, lv.stride,
                                                     lv.height, lv.width);
                const BilinearTaps t = bilinear_taps(rf, cf, lv.height, lv.width);
                const double* drow = d_out + p * total_c + off;
                for (int c = 0; c < lv.channels; ++c) {
                    double* m = dmap + c * plane;
                    const double g = drow[c];
                    m[t.r0 * lv.width + t.c0] += t.w00 * g;
                    m[t.r0 * lv.width + t.c1] += t.w01 * g;
                    m[t.r1 * lv.width + t.c0] += t.w10 * g;
                    m[t.r1 * lv.width + t.c1] += t.w11 * g;
                }
            }
        }
        off += lv.channels;
    }
}

} // namespace pxseg::kernels
