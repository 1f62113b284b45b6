#include <cmath>
#include <vector>

#include "doctest.h"

#include "pxseg/errors.hpp"
#include "pxseg/ops.hpp"
#include "pxseg/ref_kernels.hpp"
#include "pxseg/rng.hpp"
#include "pxseg/tensor.hpp"
#include "test_util.hpp"

using namespace pxseg;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

Tensor ref_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
    Tensor y = Tensor::zeros({cout, h, wd});
    ref::conv2d_forward(x.data().data(), cin, h, wd, w.data().data(), cout, b.data().data(),
                        y.data_mut().data());
    return y;
}

} // namespace

TEST_SUITE("nn_core") {

TEST_CASE("conv2d: single-tap center kernel") {
    const Tensor x = Tensor::from_data({1, 1, 1}, {2.0});
    Tensor w = Tensor::zeros({1, 1, 3, 3});
    w.data_mut()[4] = 3.0; // center tap
    const Tensor b = Tensor::from_data({1}, {1.0});
    const Tensor y = conv2d_forward(x, w, b);
    CHECK(y.shape() == std::vector<int>{1, 1, 1});
    CHECK(y.data()[0] == 7.0);
}

TEST_CASE("conv2d: all-zero weights annihilate any input") {
    Rng rng(101);
    const Tensor x = random_tensor({3, 5, 4}, rng);
    const Tensor w = Tensor::zeros({2, 3, 3, 3});
    const Tensor b = Tensor::zeros({2});
    const Tensor y = conv2d_forward(x, w, b);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: box kernel on 2x2 equals the per-cell definition oracle") {
    const Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    const Tensor b = Tensor::zeros({1});
    const Tensor y = conv2d_forward(x, w, b);
    const Tensor want = ref_conv(x, w, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == want.data()[i]);
    // with zero padding every output cell sees the whole 2x2 input
    for (double v : y.data()) CHECK(v == 10.0);
}

TEST_CASE("conv2d: random seeded inputs match the definition oracle exactly") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        const Tensor x = random_tensor({4, 7, 6}, rng);
        const Tensor w = random_tensor({5, 4, 3, 3}, rng);
        const Tensor b = random_tensor({5}, rng);
        const Tensor y = conv2d_forward(x, w, b);
        const Tensor want = ref_conv(x, w, b);
        REQUIRE(y.size() == want.size());
        for (std::int64_t i = 0; i < y.size(); ++i)
            CHECK(y.data()[static_cast<std::size_t>(i)] ==
                  want.data()[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("conv2d: shape mismatch errors name the offending dimension") {
    Rng rng(7);
    const Tensor x = random_tensor({3, 4, 4}, rng);
    const Tensor w = random_tensor({2, 5, 3, 3}, rng); // cin 5 != 3
    const Tensor b = Tensor::zeros({2});
    CHECK_THROWS_AS(conv2d_forward(x, w, b), ShapeError);
    try {
        conv2d_forward(x, w, b);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('3') != std::string::npos);
        CHECK(msg.find('5') != std::string::npos);
    }
    const Tensor bad_bias = Tensor::zeros({3});
    const Tensor w_ok = random_tensor({2, 3, 3, 3}, rng);
    CHECK_THROWS_AS(conv2d_forward(x, w_ok, bad_bias), ShapeError);
}

TEST_CASE("conv2d: linearity in the input with zero bias (1e-12)") {
    Rng rng(21);
    const Tensor x1 = random_tensor({2, 6, 5}, rng);
    const Tensor x2 = random_tensor({2, 6, 5}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = Tensor::zeros({3});
    const double a = 1.7, c = -0.4;
    Tensor mix = Tensor::zeros({2, 6, 5});
    for (std::int64_t i = 0; i < mix.size(); ++i)
        mix.data_mut()[static_cast<std::size_t>(i)] =
            a * x1.data()[static_cast<std::size_t>(i)] +
            c * x2.data()[static_cast<std::size_t>(i)];
    const Tensor y_mix = conv2d_forward(mix, w, b);
    const Tensor y1 = conv2d_forward(x1, w, b);
    const Tensor y2 = conv2d_forward(x2, w, b);
    for (std::int64_t i = 0; i < y_mix.size(); ++i) {
        const double want = a * y1.data()[static_cast<std::size_t>(i)] +
                            c * y2.data()[static_cast<std::size_t>(i)];
        CHECK(y_mix.data()[static_cast<std::size_t>(i)] ==
              doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("relu: definition, annihilation, and indicator gradient") {
    const Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.5});
    const Tensor y = relu_forward(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.5);

    const Tensor neg = Tensor::from_data({4}, {-3, -2, -1, -0.5});
    const Tensor neg_out = relu_forward(neg);
    for (double v : neg_out.data()) CHECK(v == 0.0);

    Tensor leaf = Tensor::from_data({2}, {-1.0, 2.0}, true);
    backward(sum(relu_forward(leaf)));
    CHECK(leaf.grad()[0] == 0.0);
    CHECK(leaf.grad()[1] == 1.0);
}

TEST_CASE("maxpool2x2: window max, tie-break, oracle, and floor halving") {
    const Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    const Tensor y = maxpool2x2_forward(x);
    CHECK(y.shape() == std::vector<int>{1, 1, 1});
    CHECK(y.data()[0] == 4.0);

    // constant input: value preserved, gradient to the first cell of each window
    Tensor flat = Tensor::full({1, 2, 4}, 5.0, true);
    const Tensor pooled = maxpool2x2_forward(flat);
    for (double v : pooled.data()) CHECK(v == 5.0);
    backward(sum(pooled));
    const std::vector<double> want_grad = {1, 0, 1, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < want_grad.size(); ++i) CHECK(flat.grad()[i] == want_grad[i]);

    Rng rng(33);
    const Tensor r = random_tensor({1, 4, 4}, rng);
    const Tensor pr = maxpool2x2_forward(r);
    Tensor want = Tensor::zeros({1, 2, 2});
    ref::maxpool2x2_forward(r.data().data(), 1, 4, 4, want.data_mut().data());
    for (std::int64_t i = 0; i < pr.size(); ++i)
        CHECK(pr.data()[static_cast<std::size_t>(i)] ==
              want.data()[static_cast<std::size_t>(i)]);

    const Tensor odd = random_tensor({2, 5, 7}, rng);
    CHECK(maxpool2x2_forward(odd).shape() == std::vector<int>{2, 2, 3});

    CHECK_THROWS_AS(maxpool2x2_forward(Tensor::zeros({1, 1, 4})), ShapeError);
}

TEST_CASE("linear: identity, hand case, oracle, shape errors") {
    const Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const Tensor zb = Tensor::zeros({2});
    const Tensor y = linear_forward(x, eye, zb);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == x.data()[i]);

    const Tensor one_row = Tensor::from_data({1, 2}, {1, 2});
    const Tensor w = Tensor::from_data({2, 2}, {1, 1, 1, -1});
    const Tensor h = linear_forward(one_row, w, zb);
    CHECK(h.data()[0] == 3.0);
    CHECK(h.data()[1] == -1.0);

    Rng rng(55);
    const Tensor rx = random_tensor({3, 4}, rng);
    const Tensor rw = random_tensor({5, 4}, rng);
    const Tensor rb = random_tensor({5}, rng);
    const Tensor ry = linear_forward(rx, rw, rb);
    Tensor want = Tensor::zeros({3, 5});
    ref::linear_forward(rx.data().data(), 3, 4, rw.data().data(), 5, rb.data().data(),
                        want.data_mut().data());
    for (std::int64_t i = 0; i < ry.size(); ++i)
        CHECK(ry.data()[static_cast<std::size_t>(i)] ==
              want.data()[static_cast<std::size_t>(i)]);

    CHECK_THROWS_AS(linear_forward(rx, random_tensor({5, 3}, rng), rb), ShapeError);
    CHECK_THROWS_AS(linear_forward(rx, rw, Tensor::zeros({4})), ShapeError);
}

TEST_CASE("softmax_cross_entropy: uniform logits, stabilization, oracle, bad target") {
    const Tensor uniform = Tensor::zeros({1, 2});
    const std::vector<int> t0 = {0};
    CHECK(softmax_cross_entropy(uniform, t0).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const Tensor extreme = Tensor::from_data({1, 2}, {1000.0, 0.0});
    const double loss = softmax_cross_entropy(extreme, t0).item();
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(77);
    const Tensor logits = random_tensor({2, 3}, rng, -2.0, 2.0);
    const std::vector<int> targets = {2, 0};
    const double got = softmax_cross_entropy(logits, targets).item();
    const double want =
        ref::softmax_cross_entropy(logits.data().data(), 2, 3, targets.data());
    CHECK(got == doctest::Approx(want).epsilon(1e-14));

    const std::vector<int> bad = {3, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), DataError);
    const std::vector<int> neg = {-1, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, neg), DataError);
    const std::vector<int> wrong_len = {0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, wrong_len), ShapeError);
}

TEST_CASE("softmax_cross_entropy: gradient equals (softmax - onehot)/B") {
    Rng rng(78);
    Tensor logits = random_tensor({3, 4}, rng, -2.0, 2.0, true);
    const std::vector<int> targets = {1, 3, 0};
    backward(softmax_cross_entropy(logits, targets));
    for (int r = 0; r < 3; ++r) {
        double denom = 0.0, row_max = -1e300;
        for (int k = 0; k < 4; ++k)
            row_max = std::max(row_max, logits.data()[static_cast<std::size_t>(r * 4 + k)]);
        for (int k = 0; k < 4; ++k)
            denom += std::exp(logits.data()[static_cast<std::size_t>(r * 4 + k)] - row_max);
        for (int k = 0; k < 4; ++k) {
            const double p =
                std::exp(logits.data()[static_cast<std::size_t>(r * 4 + k)] - row_max) / denom;
            const double want = (p - (targets[static_cast<std::size_t>(r)] == k ? 1.0 : 0.0)) / 3.0;
            CHECK(logits.grad()[static_cast<std::size_t>(r * 4 + k)] ==
                  doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward: sum gives ones; sum of squares gives 2x; errors and accumulation") {
    Rng rng(91);
    Tensor x = random_tensor({2, 3}, rng, -1, 1, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    Tensor x2 = Tensor::from_data({2}, {1.0, 2.0}, true);
    backward(sum(mul(x2, x2)));
    CHECK(x2.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x2.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));

    // repeated backward without zero_grad accumulates
    backward(sum(mul(x2, x2)));
    CHECK(x2.grad()[0] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(x2.grad()[1] == doctest::Approx(8.0).epsilon(1e-14));

    CHECK_THROWS_AS(backward(mul(x2, x2)), ShapeError); // non-scalar loss
}

TEST_CASE("gradcheck: every layer against central finite differences") {
    // conv2d (input, weights, bias)
    {
        Rng rng(1001);
        Tensor x = random_tensor({2, 5, 4}, rng, -1, 1, true);
        Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.7, 0.7, true);
        Tensor b = random_tensor({3}, rng, -0.3, 0.3, true);
        std::vector<Tensor> leaves = {x, w, b};
        const double err = gradcheck([&] { return sum(conv2d_forward(x, w, b)); }, leaves);
        CHECK(err < 1e-4);
    }
    // relu stacked on conv output to exercise nonzero upstream grads
    {
        Rng rng(1002);
        Tensor x = random_tensor({6}, rng, -1, 1, true);
        Tensor s = random_tensor({6}, rng, 0.5, 1.5, true);
        std::vector<Tensor> leaves = {x, s};
        const double err = gradcheck([&] { return sum(relu_forward(mul(x, s))); }, leaves);
        CHECK(err < 1e-4);
    }
    // maxpool
    {
        Rng rng(1003);
        Tensor x = random_tensor({2, 4, 6}, rng, -1, 1, true);
        std::vector<Tensor> leaves = {x};
        const double err = gradcheck([&] { return sum(maxpool2x2_forward(x)); }, leaves);
        CHECK(err < 1e-4);
    }
    // linear
    {
        Rng rng(1004);
        Tensor x = random_tensor({3, 4}, rng, -1, 1, true);
        Tensor w = random_tensor({5, 4}, rng, -0.7, 0.7, true);
        Tensor b = random_tensor({5}, rng, -0.3, 0.3, true);
        std::vector<Tensor> leaves = {x, w, b};
        const double err = gradcheck([&] { return sum(linear_forward(x, w, b)); }, leaves);
        CHECK(err < 1e-4);
    }
    // softmax cross entropy
    {
        Rng rng(1005);
        Tensor logits = random_tensor({4, 3}, rng, -2, 2, true);
        const std::vector<int> targets = {0, 2, 1, 1};
        std::vector<Tensor> leaves = {logits};
        const double err =
            gradcheck([&] { return softmax_cross_entropy(logits, targets); }, leaves);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradcheck: composed conv-relu-pool-linear stack on multiple seeds") {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 6, 6}, rng, -1, 1, true);
        Tensor cw = random_tensor({3, 2, 3, 3}, rng, -0.6, 0.6, true);
        Tensor cb = random_tensor({3}, rng, -0.2, 0.2, true);
        Tensor lw = random_tensor({2, 27}, rng, -0.5, 0.5, true);
        Tensor lb = random_tensor({2}, rng, -0.2, 0.2, true);
        const std::vector<int> targets = {1};
        const auto forward = [&] {
            Tensor h = maxpool2x2_forward(relu_forward(conv2d_forward(x, cw, cb)));
            return softmax_cross_entropy(linear_forward(reshape(h, {1, 27}), lw, lb), targets);
        };
        std::vector<Tensor> leaves = {x, cw, cb, lw, lb};
        const double err = gradcheck(forward, leaves);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("sgd: fixed point, single step, momentum recurrence, determinism") {
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;

    // param 1.0, grad 2.0, lr 0.1 -> 0.8
    {
        Tensor p = Tensor::from_data({1}, {1.0}, true);
        p.grad_mut()[0] = 2.0;
        std::vector<Tensor> params = {p};
        SgdOptimizer opt(cfg);
        opt.step(params);
        CHECK(p.data()[0] == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(p.grad()[0] == 2.0); // grads untouched
    }
    // zero grad, zero momentum state -> unchanged
    {
        Tensor p = Tensor::from_data({2}, {0.5, -0.25}, true);
        p.grad_mut();
        std::vector<Tensor> params = {p};
        SgdOptimizer opt(cfg);
        opt.step(params);
        CHECK(p.data()[0] == 0.5);
        CHECK(p.data()[1] == -0.25);
    }
    // momentum 0.9, fixed grad 1.0, lr 0.1, from 0: -0.1 then -0.29
    {
        SgdConfig mcfg = cfg;
        mcfg.momentum = 0.9;
        Tensor p = Tensor::from_data({1}, {0.0}, true);
        std::vector<Tensor> params = {p};
        SgdOptimizer opt(mcfg);
        p.grad_mut()[0] = 1.0;
        opt.step(params);
        CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-15));
        p.grad_mut()[0] = 1.0;
        opt.step(params);
        CHECK(p.data()[0] == doctest::Approx(-0.29).epsilon(1e-15));
    }
    // weight decay enters the velocity: v = g + wd*p
    {
        SgdConfig wcfg = cfg;
        wcfg.weight_decay = 0.5;
        Tensor p = Tensor::from_data({1}, {2.0}, true);
        p.grad_mut()[0] = 1.0;
        std::vector<Tensor> params = {p};
        SgdOptimizer opt(wcfg);
        opt.step(params);
        // v = 1 + 0.5*2 = 2; p = 2 - 0.1*2 = 1.8
        CHECK(p.data()[0] == doctest::Approx(1.8).epsilon(1e-15));
    }
    // determinism: identical seeded histories produce bit-identical params
    {
        const auto run = [] {
            Rng rng(4242);
            Tensor p = testutil::random_tensor({8}, rng, -1, 1, true);
            SgdConfig scfg;
            scfg.learning_rate = 0.05;
            scfg.momentum = 0.9;
            scfg.weight_decay = 1e-3;
            SgdOptimizer opt(scfg);
            std::vector<Tensor> params = {p};
            Rng grng(17);
            for (int i = 0; i < 25; ++i) {
                for (double& g : p.grad_mut()) g = grng.next_uniform(-1, 1);
                opt.step(params);
            }
            return std::vector<double>(p.data().begin(), p.data().end());
        };
        const auto a = run();
        const auto b = run();
        CHECK(a == b);
    }
}

TEST_CASE("tensor plumbing: shape/data invariants and finiteness checks") {
    CHECK_THROWS_AS(Tensor::zeros({-1, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
    // zero extents are legal: the empty hypercolumn batch is a (0,F) tensor
    CHECK(Tensor::zeros({0, 3}).size() == 0);

    Tensor x = Tensor::from_data({2}, {1.0, std::nan("")}, true);
    CHECK_THROWS_AS(mul(x, x), NumericError);

    // reshape round-trips data and routes gradients through
    Tensor r = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor v = reshape(r, {3, 2});
    CHECK(v.shape() == std::vector<int>{3, 2});
    for (std::size_t i = 0; i < 6; ++i) CHECK(v.data()[i] == r.data()[i]);
    backward(sum(mul(v, v)));
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(r.grad()[i] == doctest::Approx(2.0 * r.data()[i]).epsilon(1e-14));
    CHECK_THROWS_AS(reshape(r, {4, 2}), ShapeError);
}

} // TEST_SUITE
