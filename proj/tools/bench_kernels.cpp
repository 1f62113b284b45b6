// Benchmark of the OpenMP kernels against the serial reference
// implementations. Prints wall-clock times, speedup, and the max absolute
// difference (expected 0: both sides accumulate in the same order).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "pxseg/kernels.hpp"
#include "pxseg/metrics.hpp"
#include "pxseg/ref_kernels.hpp"
#include "pxseg/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> random_vec(std::size_t n, pxseg::Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.next_uniform(-1.0, 1.0);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   max|diff| %g\n",
                name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

void bench_conv(int reps) {
    const int cin = 16, cout = 32, h = 64, w = 64;
    pxseg::Rng rng(11);
    const auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
    const auto wgt = random_vec(static_cast<std::size_t>(cout) * cin * 9, rng);
    const auto bias = random_vec(static_cast<std::size_t>(cout), rng);
    std::vector<double> y_ref(static_cast<std::size_t>(cout) * h * w);
    std::vector<double> y_par(y_ref.size());

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        pxseg::ref::conv2d_forward(x.data(), cin, h, w, wgt.data(), cout, bias.data(),
                                   y_ref.data());
    const double serial = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        pxseg::kernels::conv2d_forward(x.data(), cin, h, w, wgt.data(), cout, bias.data(),
                                       y_par.data());
    const double parallel = ms_since(t0) / reps;

    report("conv2d 16->32 64x64", serial, parallel, max_abs_diff(y_ref, y_par));
}

void bench_linear(int reps) {
    const int b = 4096, fin = 112, fout = 64;
    pxseg::Rng rng(13);
    const auto x = random_vec(static_cast<std::size_t>(b) * fin, rng);
    const auto wgt = random_vec(static_cast<std::size_t>(fout) * fin, rng);
    const auto bias = random_vec(static_cast<std::size_t>(fout), rng);
    std::vector<double> y_ref(static_cast<std::size_t>(b) * fout);
    std::vector<double> y_par(y_ref.size());

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        pxseg::ref::linear_forward(x.data(), b, fin, wgt.data(), fout, bias.data(),
                                   y_ref.data());
    const double serial = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        pxseg::kernels::linear_forward(x.data(), b, fin, wgt.data(), fout, bias.data(),
                                       y_par.data());
    const double parallel = ms_since(t0) / reps;

    report("linear 4096x112->64", serial, parallel, max_abs_diff(y_ref, y_par));
}

void bench_gather(int reps) {
    pxseg::Rng rng(17);
    const int h = 64, w = 64;
    const auto l0 = random_vec(static_cast<std::size_t>(16) * 64 * 64, rng);
    const auto l1 = random_vec(static_cast<std::size_t>(32) * 32 * 32, rng);
    const auto l2 = random_vec(static_cast<std::size_t>(64) * 16 * 16, rng);
    std::vector<std::pair<int, int>> pixels;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) pixels.emplace_back(r, c);

    const std::vector<pxseg::kernels::LevelView> views = {{l0.data(), 16, 64, 64, 1},
                                                          {l1.data(), 32, 32, 32, 2},
                                                          {l2.data(), 64, 16, 16, 4}};
    const std::vector<pxseg::ref::RefLevel> ref_levels = {{l0.data(), 16, 64, 64, 1},
                                                          {l1.data(), 32, 32, 32, 2},
                                                          {l2.data(), 64, 16, 16, 4}};

    std::vector<double> out_par(pixels.size() * (16 + 32 + 64));
    std::vector<double> out_ref;

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        out_ref = pxseg::ref::hypercolumn_gather(ref_levels, pixels, h, w);
    const double serial = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        pxseg::kernels::hypercolumn_gather(views, pixels.data(),
                                           static_cast<std::int64_t>(pixels.size()),
                                           out_par.data());
    const double parallel = ms_since(t0) / reps;

    report("hypercolumn 4096px", serial, parallel, max_abs_diff(out_ref, out_par));
}

void bench_distances(int reps) {
    // Two seeded blobs on a 96x96 grid.
    const int h = 96, w = 96;
    pxseg::Rng rng(23);
    pxseg::BinaryMask a = pxseg::BinaryMask::make({h, w});
    pxseg::BinaryMask b = pxseg::BinaryMask::make({h, w});
    pxseg::ref::RefMask ra{{h, w}, {}, {1.0, 1.0}};
    pxseg::ref::RefMask rb = ra;
    ra.grid.assign(static_cast<std::size_t>(h) * w, 0);
    rb.grid.assign(static_cast<std::size_t>(h) * w, 0);
    const double cy1 = rng.next_uniform(30, 60), cx1 = rng.next_uniform(30, 60);
    const double cy2 = rng.next_uniform(30, 60), cx2 = rng.next_uniform(30, 60);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const bool in_a = (r - cy1) * (r - cy1) + (c - cx1) * (c - cx1) < 28 * 28;
            const bool in_b = (r - cy2) * (r - cy2) + (c - cx2) * (c - cx2) < 24 * 24;
            a.grid[static_cast<std::size_t>(r) * w + c] = in_a;
            b.grid[static_cast<std::size_t>(r) * w + c] = in_b;
            ra.grid[static_cast<std::size_t>(r) * w + c] = in_a;
            rb.grid[static_cast<std::size_t>(r) * w + c] = in_b;
        }

    std::vector<double> d_ref, d_par;
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) d_ref = pxseg::ref::directed_surface_distances(ra, rb);
    const double serial = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r) d_par = pxseg::directed_distances(a, b);
    const double parallel = ms_since(t0) / reps;

    report("surface dist 96x96", serial, parallel, max_abs_diff(d_ref, d_par));
}

} // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 10;
    if (reps < 1) {
        std::fprintf(stderr, "usage: %s [reps>=1]\n", argv[0]);
        return 1;
    }
    std::printf("kernel benchmark, %d rep(s) per case\n", reps);
    bench_conv(reps);
    bench_linear(reps);
    bench_gather(reps);
    bench_distances(reps);
    return 0;
}
