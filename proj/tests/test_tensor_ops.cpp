#include <doctest.h>

#include <cmath>
#include <cstring>

#include "xseg/error.hpp"
#include "xseg/graph.hpp"
#include "xseg/kernels.hpp"
#include "xseg/rng.hpp"

using namespace xseg;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("conv2d matches hand cross-correlation with zero padding") {
    Graph g;
    ValueId x = g.input(Tensor({1, 1, 3, 3}, 1.0));
    ValueId k = g.input(Tensor({1, 1, 3, 3}, 1.0));
    ValueId b = g.input(Tensor({1}, 0.0));
    ValueId y = g.conv2d(x, k, b);
    const std::vector<double> expect = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(g.value(y).data[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(7);
    Tensor in = rand_tensor(rng, {2, 1, 4, 4});
    Tensor k({1, 1, 3, 3}, 0.0);
    k.data[4] = 1.0;  // center tap
    Graph g;
    ValueId y = g.conv2d(g.input(in), g.input(k), g.input(Tensor({1}, 0.0)));
    CHECK(bits_equal(g.value(y).data, in.data));
}

TEST_CASE("conv2d zero kernel and bias annihilates") {
    Rng rng(8);
    Tensor in = rand_tensor(rng, {1, 3, 5, 5});
    Graph g;
    ValueId y = g.conv2d(g.input(in), g.input(Tensor({2, 3, 3, 3}, 0.0)), g.input(Tensor({2}, 0.0)));
    for (double v : g.value(y).data) CHECK(v == 0.0);
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
    Graph g;
    ValueId x = g.input(Tensor({1, 2, 4, 4}, 0.0));
    ValueId k = g.input(Tensor({1, 3, 3, 3}, 0.0));
    ValueId b = g.input(Tensor({1}, 0.0));
    CHECK_THROWS_WITH_AS(g.conv2d(x, k, b),
                         doctest::Contains("[1,2,4,4]"), ConfigError);
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(9);
    Tensor x = rand_tensor(rng, {1, 2, 6, 6});
    Tensor y = rand_tensor(rng, {1, 2, 6, 6});
    Tensor k = rand_tensor(rng, {3, 2, 3, 3});
    Tensor zero_bias({3}, 0.0);
    const double a = 1.37, c = -0.61;

    Tensor combo(x.shape);
    for (std::size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = a * x.data[i] + c * y.data[i];

    Graph g;
    const Tensor& out_combo = g.value(g.conv2d(g.input(combo), g.input(k), g.input(zero_bias)));
    const Tensor& out_x = g.value(g.conv2d(g.input(x), g.input(k), g.input(zero_bias)));
    const Tensor& out_y = g.value(g.conv2d(g.input(y), g.input(k), g.input(zero_bias)));
    for (std::size_t i = 0; i < out_combo.data.size(); ++i)
        CHECK(out_combo.data[i] ==
              doctest::Approx(a * out_x.data[i] + c * out_y.data[i]).epsilon(1e-10));
}

TEST_CASE("conv_transpose2d scalar tile and placement examples") {
    SUBCASE("scalar times kernel") {
        Graph g;
        Tensor k({1, 1, 2, 2}, {1, 2, 3, 4});
        ValueId y = g.conv_transpose2d(g.input(Tensor({1, 1, 1, 1}, 3.0)), g.input(k));
        const std::vector<double> expect = {3, 6, 9, 12};
        CHECK(g.value(y).data == expect);
    }
    SUBCASE("zero input gives zero output") {
        Graph g;
        ValueId y = g.conv_transpose2d(g.input(Tensor({1, 2, 3, 3}, 0.0)),
                                       g.input(Tensor({2, 1, 2, 2}, 0.5)));
        for (double v : g.value(y).data) CHECK(v == 0.0);
    }
    SUBCASE("non-overlapping stride-2 placement tiles ones") {
        Graph g;
        ValueId y = g.conv_transpose2d(g.input(Tensor({1, 1, 2, 2}, 1.0)),
                                       g.input(Tensor({1, 1, 2, 2}, 1.0)));
        CHECK(g.value(y).shape == std::vector<int>{1, 1, 4, 4});
        for (double v : g.value(y).data) CHECK(v == 1.0);
    }
    SUBCASE("channel mismatch rejected") {
        Graph g;
        CHECK_THROWS_AS(g.conv_transpose2d(g.input(Tensor({1, 3, 2, 2}, 0.0)),
                                           g.input(Tensor({2, 1, 2, 2}, 0.0))),
                        ConfigError);
    }
}

TEST_CASE("maxpool2d block maxima and argmax routing") {
    SUBCASE("max of single block") {
        Graph g;
        ValueId y = g.maxpool2d(g.input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})));
        CHECK(g.value(y).data == std::vector<double>{4});
    }
    SUBCASE("constant input stays constant") {
        Graph g;
        ValueId y = g.maxpool2d(g.input(Tensor({1, 1, 4, 4}, 2.5)));
        for (double v : g.value(y).data) CHECK(v == 2.5);
    }
    SUBCASE("blockwise max of 1..16") {
        std::vector<double> vals(16);
        for (int i = 0; i < 16; ++i) vals[static_cast<std::size_t>(i)] = i + 1;
        Graph g;
        ValueId y = g.maxpool2d(g.input(Tensor({1, 1, 4, 4}, vals)));
        CHECK(g.value(y).data == std::vector<double>{6, 8, 14, 16});
    }
    SUBCASE("odd extent rejected") {
        Graph g;
        CHECK_THROWS_AS(g.maxpool2d(g.input(Tensor({1, 1, 3, 4}, 0.0))), ConfigError);
    }
    SUBCASE("output bounded by input max, equals per-block max") {
        Rng rng(11);
        Tensor in = rand_tensor(rng, {2, 3, 8, 8});
        double in_max = in.data[0];
        for (double v : in.data) in_max = std::max(in_max, v);
        Graph g;
        const Tensor& out = g.value(g.maxpool2d(g.input(in)));
        for (double v : out.data) CHECK(v <= in_max);
    }
    SUBCASE("gradient goes to first occurrence on ties") {
        Graph g;
        ValueId x = g.input(Tensor({1, 1, 2, 2}, {5, 5, 5, 5}));
        ValueId y = g.maxpool2d(x);
        g.backward(y, Tensor({1, 1, 1, 1}, 1.0));
        CHECK(g.grad(x) == std::vector<double>{1, 0, 0, 0});
    }
}

TEST_CASE("batchnorm2d normalization examples") {
    SUBCASE("constant input maps to zero in train mode") {
        Graph g;
        BatchNormState st(1);
        ValueId y = g.batchnorm2d(g.input(Tensor({2, 1, 2, 2}, 3.7)), g.input(Tensor({1}, 1.0)),
                                  g.input(Tensor({1}, 0.0)), st, 0.1, 1e-5);
        for (double v : g.value(y).data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("two-value channel standardizes to -1 and +1") {
        Graph g;
        BatchNormState st(1);
        ValueId y = g.batchnorm2d(g.input(Tensor({1, 1, 1, 2}, {1, 3})), g.input(Tensor({1}, 1.0)),
                                  g.input(Tensor({1}, 0.0)), st, 0.1, 1e-12);
        CHECK(g.value(y).data[0] == doctest::Approx(-1.0).epsilon(1e-9));
        CHECK(g.value(y).data[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("gamma zero collapses to beta") {
        Rng rng(3);
        Graph g;
        BatchNormState st(2);
        ValueId y = g.batchnorm2d(g.input(rand_tensor(rng, {2, 2, 2, 2})), g.input(Tensor({2}, 0.0)),
                                  g.input(Tensor({2}, 5.0)), st, 0.1, 1e-5);
        for (double v : g.value(y).data) CHECK(v == 5.0);
    }
    SUBCASE("eval with uninitialized running stats rejected") {
        BatchNormState st(1);
        CHECK_THROWS_AS(
            batchnorm_eval(Tensor({1, 1, 2, 2}, 0.0), Tensor({1}, 1.0), Tensor({1}, 0.0), st, 1e-5),
            ConfigError);
    }
    SUBCASE("train mode with a single value per channel rejected") {
        Graph g;
        BatchNormState st(1);
        CHECK_THROWS_AS(g.batchnorm2d(g.input(Tensor({1, 1, 1, 1}, 1.0)), g.input(Tensor({1}, 1.0)),
                                      g.input(Tensor({1}, 0.0)), st, 0.1, 1e-5),
                        ConfigError);
    }
}

TEST_CASE("relu and sigmoid elementwise behavior") {
    Graph g;
    ValueId r = g.relu(g.input(Tensor({1, 1, 1, 3}, {-1, 0, 2})));
    CHECK(g.value(r).data == std::vector<double>{0, 0, 2});

    ValueId s0 = g.sigmoid(g.input(Tensor({1}, 0.0)));
    CHECK(g.value(s0).data[0] == 0.5);

    ValueId sbig = g.sigmoid(g.input(Tensor({2}, {50.0, -50.0})));
    CHECK(std::abs(g.value(sbig).data[0] - 1.0) < 1e-9);
    CHECK(std::abs(g.value(sbig).data[1] - 0.0) < 1e-9);
    CHECK(std::isfinite(g.value(sbig).data[0]));

    Rng rng(5);
    Tensor in = rand_tensor(rng, {1, 2, 4, 4}, -30.0, 30.0);
    ValueId sr = g.sigmoid(g.input(in));
    for (double v : g.value(sr).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    ValueId rr = g.relu(g.input(in));
    for (double v : g.value(rr).data) CHECK(v >= 0.0);
}

TEST_CASE("concat_channels stacks a then b and splits gradient exactly") {
    Rng rng(6);
    Tensor a(Tensor({2, 2, 3, 3}, 1.0));
    Tensor b(Tensor({2, 3, 3, 3}, 2.0));
    Graph g;
    ValueId ai = g.input(a);
    ValueId bi = g.input(b);
    ValueId y = g.concat_channels(ai, bi);
    CHECK(g.value(y).shape == std::vector<int>{2, 5, 3, 3});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 5; ++c)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 3; ++w)
                    CHECK(g.value(y).at(n, c, h, w) == (c < 2 ? 1.0 : 2.0));

    Tensor seed = rand_tensor(rng, {2, 5, 3, 3});
    g.backward(y, seed);
    for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) {
                for (int c = 0; c < 2; ++c)
                    CHECK(g.grad(ai)[static_cast<std::size_t>(((n * 2 + c) * 3 + h) * 3 + w)] ==
                          seed.at(n, c, h, w));
                for (int c = 0; c < 3; ++c)
                    CHECK(g.grad(bi)[static_cast<std::size_t>(((n * 3 + c) * 3 + h) * 3 + w)] ==
                          seed.at(n, c + 2, h, w));
            }

    CHECK_THROWS_AS(g.concat_channels(g.input(Tensor({1, 1, 2, 2}, 0.0)),
                                      g.input(Tensor({1, 1, 3, 3}, 0.0))),
                    ConfigError);
}

TEST_CASE("backward seeds, accumulation and leaf handling") {
    SUBCASE("sigmoid at zero has slope 1/4") {
        Graph g;
        Tensor x({1}, 0.0);
        ValueId xi = g.param(&x);
        ValueId y = g.sigmoid(xi);
        g.backward(y);
        REQUIRE(x.has_grad());
        CHECK(x.grad[0] == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("unused parameter gets a zero grad") {
        Graph g;
        Tensor used({1}, 0.3), unused({4}, 1.0);
        ValueId ui = g.param(&used);
        g.param(&unused);
        g.backward(g.sigmoid(ui));
        REQUIRE(unused.has_grad());
        for (double v : unused.grad) CHECK(v == 0.0);
    }
    SUBCASE("parameter used twice accumulates both branch grads") {
        Graph g;
        Tensor x({3}, {0.1, -0.4, 0.7});
        ValueId xi = g.param(&x);
        ValueId y = g.add(xi, xi);
        Tensor w({3}, {1.0, 2.0, 3.0});
        g.backward(g.weighted_sum(y, w));
        REQUIRE(x.has_grad());
        CHECK(x.grad == std::vector<double>{2.0, 4.0, 6.0});
    }
    SUBCASE("backward before any forward rejected") {
        Graph g;
        CHECK_THROWS_AS(g.backward(0), ConfigError);
    }
    SUBCASE("seed shape must match output") {
        Graph g;
        ValueId y = g.relu(g.input(Tensor({1, 1, 2, 2}, 1.0)));
        CHECK_THROWS_AS(g.backward(y, Tensor({1}, 1.0)), ConfigError);
    }
}

TEST_CASE("two forward+backward passes are bit-identical") {
    auto run = [](std::vector<double>& out_value, std::vector<double>& out_grad) {
        Rng rng(1234);
        Tensor x = rand_tensor(rng, {2, 2, 8, 8});
        Tensor k = rand_tensor(rng, {4, 2, 3, 3});
        Tensor b = rand_tensor(rng, {4});
        Tensor gmm = rand_tensor(rng, {4}, 0.5, 1.5);
        Tensor beta = rand_tensor(rng, {4}, -0.5, 0.5);
        Tensor proj = rand_tensor(rng, {2, 4, 4, 4});
        Graph g;
        BatchNormState st(4);
        ValueId xi = g.param(&x);
        ValueId c = g.conv2d(xi, g.input(k), g.input(b));
        ValueId bn = g.batchnorm2d(c, g.input(gmm), g.input(beta), st, 0.1, 1e-5);
        ValueId r = g.relu(bn);
        ValueId p = g.maxpool2d(r);
        ValueId obj = g.weighted_sum(p, proj);
        g.backward(obj);
        out_value = g.value(obj).data;
        out_grad = x.grad;
    };
    std::vector<double> v1, g1, v2, g2;
    run(v1, g1);
    run(v2, g2);
    CHECK(bits_equal(v1, v2));
    CHECK(bits_equal(g1, g2));
}

TEST_CASE("parallel kernels agree bit-for-bit with the serial reference") {
    Rng rng(77);
    namespace ks = kernels::serial;
    namespace kp = kernels::par;

    SUBCASE("conv2d forward/backward") {
        Tensor x = rand_tensor(rng, {2, 3, 9, 9});
        Tensor k = rand_tensor(rng, {4, 3, 3, 3});
        Tensor b = rand_tensor(rng, {4});
        Tensor gout = rand_tensor(rng, {2, 4, 9, 9});
        Tensor o1({2, 4, 9, 9}), o2({2, 4, 9, 9});
        ks::conv2d_forward(x, k, b, o1);
        kp::conv2d_forward(x, k, b, o2);
        CHECK(bits_equal(o1.data, o2.data));

        Tensor gx1(x.shape), gx2(x.shape), gk1(k.shape), gk2(k.shape), gb1(b.shape), gb2(b.shape);
        ks::conv2d_backward_input(gout, k, gx1);
        kp::conv2d_backward_input(gout, k, gx2);
        ks::conv2d_backward_kernel(gout, x, gk1);
        kp::conv2d_backward_kernel(gout, x, gk2);
        ks::conv2d_backward_bias(gout, gb1);
        kp::conv2d_backward_bias(gout, gb2);
        CHECK(bits_equal(gx1.data, gx2.data));
        CHECK(bits_equal(gk1.data, gk2.data));
        CHECK(bits_equal(gb1.data, gb2.data));
    }

    SUBCASE("conv_transpose2d forward/backward") {
        Tensor x = rand_tensor(rng, {2, 3, 5, 5});
        Tensor k = rand_tensor(rng, {3, 2, 2, 2});
        Tensor gout = rand_tensor(rng, {2, 2, 10, 10});
        Tensor o1({2, 2, 10, 10}), o2({2, 2, 10, 10});
        ks::convt2d_forward(x, k, o1);
        kp::convt2d_forward(x, k, o2);
        CHECK(bits_equal(o1.data, o2.data));

        Tensor gx1(x.shape), gx2(x.shape), gk1(k.shape), gk2(k.shape);
        ks::convt2d_backward_input(gout, k, gx1);
        kp::convt2d_backward_input(gout, k, gx2);
        ks::convt2d_backward_kernel(gout, x, gk1);
        kp::convt2d_backward_kernel(gout, x, gk2);
        CHECK(bits_equal(gx1.data, gx2.data));
        CHECK(bits_equal(gk1.data, gk2.data));
    }

    SUBCASE("maxpool, batchnorm, elementwise, concat") {
        Tensor x = rand_tensor(rng, {2, 4, 6, 6});
        Tensor o1({2, 4, 3, 3}), o2({2, 4, 3, 3});
        std::vector<int> a1(o1.numel()), a2(o2.numel());
        ks::maxpool2d_forward(x, o1, a1);
        kp::maxpool2d_forward(x, o2, a2);
        CHECK(bits_equal(o1.data, o2.data));
        CHECK(a1 == a2);

        Tensor gout = rand_tensor(rng, {2, 4, 3, 3});
        Tensor gi1(x.shape), gi2(x.shape);
        ks::maxpool2d_backward(gout, a1, gi1);
        kp::maxpool2d_backward(gout, a2, gi2);
        CHECK(bits_equal(gi1.data, gi2.data));

        std::vector<double> m1(4), v1(4), m2(4), v2(4);
        ks::batchnorm_stats(x, m1, v1);
        kp::batchnorm_stats(x, m2, v2);
        CHECK(bits_equal(m1, m2));
        CHECK(bits_equal(v1, v2));

        Tensor gmm = rand_tensor(rng, {4});
        Tensor beta = rand_tensor(rng, {4});
        std::vector<double> invstd = {1.1, 0.9, 1.3, 0.7};
        Tensor n1(x.shape), n2(x.shape);
        std::vector<double> xh1(x.numel()), xh2(x.numel());
        ks::batchnorm_normalize(x, m1, invstd, gmm, beta, n1, &xh1);
        kp::batchnorm_normalize(x, m2, invstd, gmm, beta, n2, &xh2);
        CHECK(bits_equal(n1.data, n2.data));
        CHECK(bits_equal(xh1, xh2));

        Tensor go = rand_tensor(rng, {2, 4, 6, 6});
        Tensor bx1(x.shape), bx2(x.shape), bg1({4}), bg2({4}), bb1({4}), bb2({4});
        ks::batchnorm_backward(go, xh1, invstd, gmm, bx1, bg1, bb1);
        kp::batchnorm_backward(go, xh2, invstd, gmm, bx2, bg2, bb2);
        CHECK(bits_equal(bx1.data, bx2.data));
        CHECK(bits_equal(bg1.data, bg2.data));
        CHECK(bits_equal(bb1.data, bb2.data));

        Tensor r1(x.shape), r2(x.shape);
        ks::relu_forward(x, r1);
        kp::relu_forward(x, r2);
        CHECK(bits_equal(r1.data, r2.data));
        Tensor s1(x.shape), s2(x.shape);
        ks::sigmoid_forward(x, s1);
        kp::sigmoid_forward(x, s2);
        CHECK(bits_equal(s1.data, s2.data));

        Tensor cb = rand_tensor(rng, {2, 2, 6, 6});
        Tensor c1({2, 6, 6, 6}), c2({2, 6, 6, 6});
        ks::concat_forward(x, cb, c1);
        kp::concat_forward(x, cb, c2);
        CHECK(bits_equal(c1.data, c2.data));
    }
}
