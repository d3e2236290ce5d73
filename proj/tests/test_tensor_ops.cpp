#include <catch2/catch_amalgamated.hpp>

#include "cdnas/conv.hpp"
#include "cdnas/grad_check.hpp"
#include "cdnas/layers.hpp"
#include "cdnas/optim.hpp"
#include "oracles.hpp"

using namespace cdnas;

namespace {

// Random +-1 weighting turns a tensor-valued op into a scalar objective whose
// gradient w.r.t. the op's output is exactly the sign tensor.
Tensor signs_for(const std::vector<int>& shape, uint64_t seed) {
    Tensor s(shape);
    Rng r(seed);
    for (auto& v : s.data) v = (r.uniform() < 0.5) ? -1.0f : 1.0f;
    return s;
}

double weighted_sum(const Tensor& y, const Tensor& s) {
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(y.data[i]) * s.data[i];
    return acc;
}

// Distinct, well-separated values (gap 0.1) in random order, so +-1e-2
// finite-difference probes never flip a max-pooling argmax.
Tensor separated_values(const std::vector<int>& shape, uint64_t seed) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = 0.1f * static_cast<float>(i);
    Rng r(seed);
    for (int64_t i = t.numel() - 1; i > 0; --i)
        std::swap(t.data[i], t.data[r.uniform_int(static_cast<uint64_t>(i + 1))]);
    return t;
}

constexpr double kTolConv = 1e-3;   // conv / batchnorm gradient checks
constexpr double kTolDense = 1e-4;  // dense / loss gradient checks

}  // namespace

// ---------------------------------------------------------------- shapes

TEST_CASE("conv output size follows the floor formula") {
    REQUIRE(conv_out_size(224, 7, 2, 0) == 109);
    REQUIRE(conv_out_size(224, 3, 1, 1) == 224);
    REQUIRE(conv_out_size(32, 5, 1, 0) == 28);
    REQUIRE(conv_out_size(7, 3, 2, 0) == 3);
    REQUIRE(conv_out_size(8, 3, 2, 0) == 3);  // floor division discards the ragged edge
    REQUIRE_THROWS(conv_out_size(4, 7, 1, 0));
}

// ---------------------------------------------------------------- conv2d

TEST_CASE("conv2d matches the definitional nested-loop reference") {
    Rng rng(1001);
    struct Cfg {
        int N, C, H, W, F, k, s, p;
    };
    const Cfg cfgs[] = {
        {2, 3, 8, 8, 4, 3, 1, 1},   // padded same-size
        {1, 3, 11, 9, 5, 5, 2, 0},  // strided, rectangular, no pad
        {2, 4, 7, 7, 3, 7, 2, 3},   // kernel as big as the input, heavy pad
        {1, 6, 5, 5, 8, 1, 1, 0},   // pointwise fast path
        {1, 1, 16, 16, 2, 11, 2, 1},
    };
    for (const auto& c : cfgs) {
        Tensor x({c.N, c.C, c.H, c.W});
        Tensor w({c.F, c.C, c.k, c.k});
        Tensor b({c.F});
        oracle::fill_uniform(x, rng);
        oracle::fill_uniform(w, rng);
        oracle::fill_uniform(b, rng);
        const Tensor got = conv2d_forward(x, w, b, c.s, c.p);
        const Tensor want = oracle::conv2d_reference(x, w, b, c.s, c.p);
        REQUIRE(got.shape == want.shape);
        REQUIRE(oracle::max_abs_diff(got, want) < 2e-4);
    }
}

TEST_CASE("conv2d reproduces a hand-worked 3x3 case") {
    // Input 1..9 in a 3x3 grid, 2x2 kernel of ones, stride 1, no padding:
    // each output is the sum of a 2x2 window.
    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
    const Tensor y = conv2d_forward(x, w, Tensor(), 1, 0);
    REQUIRE(y.shape == std::vector<int>({1, 1, 2, 2}));
    REQUIRE(y.at(0, 0, 0, 0) == Catch::Approx(12.0));  // 1+2+4+5
    REQUIRE(y.at(0, 0, 0, 1) == Catch::Approx(16.0));
    REQUIRE(y.at(0, 0, 1, 0) == Catch::Approx(24.0));
    REQUIRE(y.at(0, 0, 1, 1) == Catch::Approx(28.0));
}

TEST_CASE("conv2d rejects mismatched channels and non-finite output") {
    Tensor x({1, 3, 4, 4});
    Tensor w({2, 4, 3, 3});
    REQUIRE_THROWS(conv2d_forward(x, w, Tensor(), 1, 1));
    Tensor x2 = Tensor::full({1, 1, 3, 3}, std::numeric_limits<float>::infinity());
    Tensor w2 = Tensor::full({1, 1, 1, 1}, 1.0f);
    REQUIRE_THROWS(conv2d_forward(x2, w2, Tensor(), 1, 0));
}

TEST_CASE("conv2d gradients agree with finite differences") {
    Rng rng(2002);
    Tensor x({2, 3, 6, 6}), w({4, 3, 3, 3}), b({4});
    oracle::fill_uniform(x, rng, -0.5f, 0.5f);
    oracle::fill_uniform(w, rng, -0.5f, 0.5f);
    oracle::fill_uniform(b, rng, -0.5f, 0.5f);
    const int stride = 2, pad = 1;
    const Tensor y0 = conv2d_forward(x, w, b, stride, pad);
    const Tensor s = signs_for(y0.shape, 7);
    const GradBundle g = conv2d_backward(x, w, true, stride, pad, s);
    auto obj = [&] { return weighted_sum(conv2d_forward(x, w, b, stride, pad), s); };

    auto rw = grad_check(obj, w, g.d_weights, 1e-2, 48);
    CAPTURE(rw.worst_analytic, rw.worst_numeric);
    REQUIRE(rw.max_rel_err < kTolConv);
    auto rx = grad_check(obj, x, g.d_input, 1e-2, 48);
    REQUIRE(rx.max_rel_err < kTolConv);
    auto rb = grad_check(obj, b, g.d_bias, 1e-2, 4);
    REQUIRE(rb.max_rel_err < kTolConv);
}

// ---------------------------------------------------------------- sepconv

TEST_CASE("separable conv equals depthwise-then-pointwise composition") {
    Rng rng(3003);
    const int N = 2, C = 3, H = 7, W = 7, F = 5, k = 3, stride = 1, pad = 1;
    Tensor x({N, C, H, W}), dw({C, k, k}), pw({F, C}), b({F});
    oracle::fill_uniform(x, rng);
    oracle::fill_uniform(dw, rng);
    oracle::fill_uniform(pw, rng);
    oracle::fill_uniform(b, rng);

    const Tensor got = sepconv2d_forward(x, dw, pw, b, stride, pad, nullptr);

    // Reference: per-channel single-channel convolutions, then a 1x1 mix.
    const int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
    Tensor mid({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            Tensor xc({1, 1, H, W});
            for (int i = 0; i < H * W; ++i)
                xc.data[static_cast<size_t>(i)] = x.data[(static_cast<size_t>(n) * C + c) * H * W + i];
            Tensor wc({1, 1, k, k});
            for (int i = 0; i < k * k; ++i)
                wc.data[static_cast<size_t>(i)] = dw.data[static_cast<size_t>(c) * k * k + i];
            const Tensor yc = oracle::conv2d_reference(xc, wc, Tensor(), stride, pad);
            for (int i = 0; i < OH * OW; ++i)
                mid.data[(static_cast<size_t>(n) * C + c) * OH * OW + i] = yc.data[static_cast<size_t>(i)];
        }
    Tensor want({N, F, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int i = 0; i < OH * OW; ++i) {
                double acc = b.at(f);
                for (int c = 0; c < C; ++c)
                    acc += static_cast<double>(pw.at(f, c)) *
                           mid.data[(static_cast<size_t>(n) * C + c) * OH * OW + i];
                want.data[(static_cast<size_t>(n) * F + f) * OH * OW + i] = static_cast<float>(acc);
            }
    REQUIRE(oracle::max_abs_diff(got, want) < 2e-5);
}

TEST_CASE("separable conv gradients agree with finite differences") {
    Rng rng(4004);
    const int stride = 2, pad = 1;
    Tensor x({2, 3, 6, 6}), dw({3, 3, 3}), pw({4, 3}), b({4});
    oracle::fill_uniform(x, rng, -0.5f, 0.5f);
    oracle::fill_uniform(dw, rng, -0.5f, 0.5f);
    oracle::fill_uniform(pw, rng, -0.5f, 0.5f);
    oracle::fill_uniform(b, rng, -0.5f, 0.5f);

    Tensor mid;
    const Tensor y0 = sepconv2d_forward(x, dw, pw, b, stride, pad, &mid);
    const Tensor s = signs_for(y0.shape, 11);
    const GradBundle g = sepconv2d_backward(x, dw, pw, true, stride, pad, mid, s);
    auto obj = [&] { return weighted_sum(sepconv2d_forward(x, dw, pw, b, stride, pad, nullptr), s); };

    REQUIRE(grad_check(obj, dw, g.d_weights, 1e-2, 27).max_rel_err < kTolConv);
    REQUIRE(grad_check(obj, pw, g.d_pointwise, 1e-2, 12).max_rel_err < kTolConv);
    REQUIRE(grad_check(obj, x, g.d_input, 1e-2, 48).max_rel_err < kTolConv);
    REQUIRE(grad_check(obj, b, g.d_bias, 1e-2, 4).max_rel_err < kTolConv);
}

// ---------------------------------------------------------------- batchnorm

TEST_CASE("batchnorm normalizes with biased variance, tracks unbiased EMA") {
    Rng rng(5005);
    const int N = 4, C = 3, H = 5, W = 5;
    Tensor x({N, C, H, W});
    oracle::fill_uniform(x, rng, -3.0f, 5.0f);
    Tensor gamma = Tensor::full({C}, 1.0f), beta({C});
    Tensor rm({C}), rv = Tensor::full({C}, 1.0f);
    BnCache cache;
    const Tensor y = batchnorm_forward_train(x, gamma, beta, rm, rv, cache);

    const int64_t m = static_cast<int64_t>(N) * H * W;
    for (int c = 0; c < C; ++c) {
        double mean, var;
        oracle::batch_stats_reference(x, c, &mean, &var);
        REQUIRE(cache.mean.at(c) == Catch::Approx(mean).margin(1e-4));
        REQUIRE(cache.inv_std.at(c) ==
                Catch::Approx(1.0 / std::sqrt(var + 1e-4)).epsilon(1e-4));
        // EMA with momentum 0.1 from (0, 1) initial state; variance stored unbiased.
        REQUIRE(rm.at(c) == Catch::Approx(0.1 * mean).margin(1e-4));
        REQUIRE(rv.at(c) ==
                Catch::Approx(0.9 + 0.1 * var * static_cast<double>(m) / (m - 1)).margin(1e-4));
        // Output per channel: ~zero mean, ~unit variance.
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    s += y.at(n, c, h, w);
                    s2 += static_cast<double>(y.at(n, c, h, w)) * y.at(n, c, h, w);
                }
        REQUIRE(s / static_cast<double>(m) == Catch::Approx(0.0).margin(1e-4));
        REQUIRE(s2 / static_cast<double>(m) == Catch::Approx(1.0).epsilon(1e-2));
    }
}

TEST_CASE("batchnorm inference uses running statistics, not batch ones") {
    Tensor x({1, 1, 1, 2}, {3.0f, 7.0f});
    Tensor gamma = Tensor::full({1}, 2.0f);
    Tensor beta = Tensor::full({1}, 0.5f);
    Tensor rm = Tensor::full({1}, 1.0f);
    Tensor rv = Tensor::full({1}, 4.0f);
    const Tensor y = batchnorm_forward_infer(x, gamma, beta, rm, rv, 0.0f);
    REQUIRE(y.at(0, 0, 0, 0) == Catch::Approx(2.0 * (3.0 - 1.0) / 2.0 + 0.5));
    REQUIRE(y.at(0, 0, 0, 1) == Catch::Approx(2.0 * (7.0 - 1.0) / 2.0 + 0.5));
}

TEST_CASE("batchnorm requires at least two values per channel in training") {
    Tensor x({1, 2, 1, 1});
    Tensor gamma = Tensor::full({2}, 1.0f), beta({2});
    Tensor rm({2}), rv = Tensor::full({2}, 1.0f);
    BnCache cache;
    REQUIRE_THROWS(batchnorm_forward_train(x, gamma, beta, rm, rv, cache));
}

TEST_CASE("batchnorm gradients agree with finite differences") {
    Rng rng(6006);
    const int N = 3, C = 2, H = 4, W = 4;
    Tensor x({N, C, H, W});
    oracle::fill_uniform(x, rng, -2.0f, 2.0f);
    Tensor gamma({C}), beta({C});
    oracle::fill_uniform(gamma, rng, 0.5f, 1.5f);
    oracle::fill_uniform(beta, rng, -0.5f, 0.5f);

    const Tensor s = signs_for({N, C, H, W}, 13);
    auto obj = [&] {
        Tensor rm({C}), rv = Tensor::full({C}, 1.0f);
        BnCache c2;
        return weighted_sum(batchnorm_forward_train(x, gamma, beta, rm, rv, c2), s);
    };
    Tensor rm({C}), rv = Tensor::full({C}, 1.0f);
    BnCache cache;
    batchnorm_forward_train(x, gamma, beta, rm, rv, cache);
    const GradBundle g = batchnorm_backward(gamma, cache, s);

    REQUIRE(grad_check(obj, x, g.d_input, 1e-2, 48).max_rel_err < kTolConv);
    REQUIRE(grad_check(obj, gamma, g.d_gamma, 1e-2, 2).max_rel_err < kTolConv);
    REQUIRE(grad_check(obj, beta, g.d_beta, 1e-2, 2).max_rel_err < kTolConv);
}

// ---------------------------------------------------------------- pooling

TEST_CASE("maxpool picks window maxima and routes gradient to them") {
    Tensor x({1, 1, 4, 4}, {1, 2, 3, 4,
                            5, 6, 7, 8,
                            9, 10, 11, 12,
                            13, 14, 15, 16});
    std::vector<int> argmax;
    const Tensor y = maxpool_forward(x, 2, 2, 0, argmax);
    REQUIRE(y.shape == std::vector<int>({1, 1, 2, 2}));
    REQUIRE(y.at(0, 0, 0, 0) == 6.0f);
    REQUIRE(y.at(0, 0, 0, 1) == 8.0f);
    REQUIRE(y.at(0, 0, 1, 0) == 14.0f);
    REQUIRE(y.at(0, 0, 1, 1) == 16.0f);

    Tensor d({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor dx = maxpool_backward(argmax, x.shape, d);
    REQUIRE(dx.at(0, 0, 1, 1) == 1.0f);
    REQUIRE(dx.at(0, 0, 1, 3) == 2.0f);
    REQUIRE(dx.at(0, 0, 3, 1) == 3.0f);
    REQUIRE(dx.at(0, 0, 3, 3) == 4.0f);
    REQUIRE(dx.at(0, 0, 0, 0) == 0.0f);
}

TEST_CASE("maxpool gradient agrees with finite differences") {
    Tensor x = separated_values({2, 2, 5, 5}, 21);
    std::vector<int> argmax;
    const Tensor y0 = maxpool_forward(x, 3, 2, 1, argmax);
    const Tensor s = signs_for(y0.shape, 23);
    auto obj = [&] {
        std::vector<int> am;
        return weighted_sum(maxpool_forward(x, 3, 2, 1, am), s);
    };
    const Tensor dx = maxpool_backward(argmax, x.shape, s);
    REQUIRE(grad_check(obj, x, dx, 1e-2, 64).max_rel_err < kTolConv);
}

TEST_CASE("avgpool averages over the full kernel area including padding") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 4.0f);
    const Tensor y = avgpool_forward(x, 2, 2, 0);
    REQUIRE(y.at(0, 0, 0, 0) == Catch::Approx(4.0));
    // With padding the divisor stays k*k, so border cells shrink.
    const Tensor yp = avgpool_forward(x, 2, 2, 1);
    REQUIRE(yp.shape == std::vector<int>({1, 1, 2, 2}));
    REQUIRE(yp.at(0, 0, 0, 0) == Catch::Approx(1.0));  // one real cell of 4 / 4
}

TEST_CASE("avgpool gradient agrees with finite differences") {
    Rng rng(7007);
    Tensor x({2, 2, 6, 6});
    oracle::fill_uniform(x, rng);
    const Tensor y0 = avgpool_forward(x, 3, 1, 1);
    const Tensor s = signs_for(y0.shape, 29);
    auto obj = [&] { return weighted_sum(avgpool_forward(x, 3, 1, 1), s); };
    const Tensor dx = avgpool_backward(x.shape, 3, 1, 1, s);
    REQUIRE(grad_check(obj, x, dx, 1e-2, 64).max_rel_err < kTolConv);
}

// ---------------------------------------------------------------- pyramid pool

TEST_CASE("pyramid pooling output width is channels times sum of squared grids") {
    Rng rng(8008);
    std::vector<int> argmax;
    Tensor a({1, 256, 13, 13});
    oracle::fill_uniform(a, rng);
    REQUIRE(spp_forward(a, 4, argmax).shape == std::vector<int>({1, 30 * 256}));
    REQUIRE(spp_forward(a, 4, argmax).dim(1) == 7680);
    Tensor b({1, 128, 7, 9});
    oracle::fill_uniform(b, rng);
    REQUIRE(spp_forward(b, 3, argmax).dim(1) == 1792);  // 14 * 128
    Tensor c({1, 32, 6, 6});
    oracle::fill_uniform(c, rng);
    REQUIRE(spp_forward(c, 5, argmax).dim(1) == 55 * 32);
    REQUIRE(spp_forward(c, 3, argmax).dim(1) == 14 * 32);
}

TEST_CASE("pyramid pooling takes the global max at scale 1 and bin maxima above") {
    // 4x4 single-channel plane with values 0..15 laid out in order.
    Tensor x({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x.data[static_cast<size_t>(i)] = static_cast<float>(i);
    std::vector<int> argmax;
    const Tensor y = spp_forward(x, 2, argmax);
    REQUIRE(y.numel() == 5);
    REQUIRE(y.at(0) == 15.0f);  // scale 1: global max
    REQUIRE(y.at(1) == 5.0f);   // scale 2 bins: max of each quadrant
    REQUIRE(y.at(2) == 7.0f);
    REQUIRE(y.at(3) == 13.0f);
    REQUIRE(y.at(4) == 15.0f);
}

TEST_CASE("pyramid pooling gradient agrees with finite differences") {
    Tensor x = separated_values({2, 3, 6, 6}, 31);
    std::vector<int> argmax;
    const Tensor y0 = spp_forward(x, 3, argmax);
    const Tensor s = signs_for(y0.shape, 37);
    auto obj = [&] {
        std::vector<int> am;
        return weighted_sum(spp_forward(x, 3, am), s);
    };
    const Tensor dx = spp_backward(x.shape, 3, argmax, s);
    REQUIRE(grad_check(obj, x, dx, 1e-2, 64).max_rel_err < kTolConv);
}

TEST_CASE("pyramid pooling rejects inputs smaller than the coarsest grid") {
    Tensor x({1, 2, 2, 2});
    std::vector<int> argmax;
    REQUIRE_THROWS(spp_forward(x, 3, argmax));
}

// ---------------------------------------------------------------- adaptive avg

TEST_CASE("adaptive average pooling handles uneven extents") {
    // H=W=3 onto a 2x2 grid: bins are [0,2) and [1,3) per axis (they overlap).
    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor y = adaptive_avg_forward(x, 2);
    REQUIRE(y.at(0, 0, 0, 0) == Catch::Approx((1 + 2 + 4 + 5) / 4.0));
    REQUIRE(y.at(0, 0, 1, 1) == Catch::Approx((5 + 6 + 8 + 9) / 4.0));
    const Tensor g = adaptive_avg_forward(x, 1);
    REQUIRE(g.at(0, 0, 0, 0) == Catch::Approx(5.0));
}

TEST_CASE("adaptive average gradient agrees with finite differences") {
    Rng rng(9009);
    Tensor x({2, 2, 5, 5});
    oracle::fill_uniform(x, rng);
    const Tensor y0 = adaptive_avg_forward(x, 2);
    const Tensor s = signs_for(y0.shape, 41);
    auto obj = [&] { return weighted_sum(adaptive_avg_forward(x, 2), s); };
    const Tensor dx = adaptive_avg_backward(x.shape, 2, s);
    REQUIRE(grad_check(obj, x, dx, 1e-2, 64).max_rel_err < kTolConv);
}

// ---------------------------------------------------------------- dense

TEST_CASE("dense matches the double-accumulated reference") {
    Rng rng(1010);
    Tensor x({3, 17}), w({5, 17}), b({5});
    oracle::fill_uniform(x, rng);
    oracle::fill_uniform(w, rng);
    oracle::fill_uniform(b, rng);
    const Tensor got = dense_forward(x, w, b);
    const Tensor want = oracle::dense_reference(x, w, b);
    REQUIRE(oracle::max_abs_diff(got, want) < 1e-5);
    REQUIRE_THROWS(dense_forward(Tensor({3, 16}), w, b));
}

TEST_CASE("dense gradients agree with finite differences") {
    Rng rng(1111);
    Tensor x({4, 9}), w({6, 9}), b({6});
    oracle::fill_uniform(x, rng, -0.5f, 0.5f);
    oracle::fill_uniform(w, rng, -0.5f, 0.5f);
    oracle::fill_uniform(b, rng, -0.5f, 0.5f);
    const Tensor s = signs_for({4, 6}, 43);
    const GradBundle g = dense_backward(x, w, true, s);
    auto obj = [&] { return weighted_sum(dense_forward(x, w, b), s); };
    REQUIRE(grad_check(obj, w, g.d_weights, 1e-2, 54).max_rel_err < kTolDense);
    REQUIRE(grad_check(obj, x, g.d_input, 1e-2, 36).max_rel_err < kTolDense);
    REQUIRE(grad_check(obj, b, g.d_bias, 1e-2, 6).max_rel_err < kTolDense);
}

// ---------------------------------------------------------------- dropout

TEST_CASE("inverted dropout keeps expectation and scales survivors") {
    Rng rng(1212);
    Tensor x = Tensor::full({1, 10000}, 1.0f);
    Tensor mask;
    const float p = 0.5f;
    const Tensor y = dropout_forward(x, p, rng, mask);
    int kept = 0;
    double sum = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        REQUIRE((y.data[i] == 0.0f || y.data[i] == Catch::Approx(2.0f)));
        if (y.data[i] != 0.0f) ++kept;
        sum += y.data[i];
    }
    REQUIRE(kept == Catch::Approx(5000).margin(200));
    REQUIRE(sum / static_cast<double>(y.numel()) == Catch::Approx(1.0).margin(0.05));

    // Backward multiplies by the same mask.
    Tensor d = Tensor::full(x.shape, 3.0f);
    const Tensor dx = dropout_backward(mask, d);
    for (int64_t i = 0; i < dx.numel(); ++i)
        REQUIRE(dx.data[i] == Catch::Approx(3.0f * mask.data[i]));

    // p = 0 is the identity.
    Tensor mask0;
    const Tensor y0 = dropout_forward(x, 0.0f, rng, mask0);
    REQUIRE(oracle::max_abs_diff(y0, x) == 0.0);
}

// ---------------------------------------------------------------- loss

TEST_CASE("sigmoid cross-entropy matches the long-double reference") {
    Rng rng(1313);
    Tensor z({8, 6}), t({8, 6});
    oracle::fill_uniform(z, rng, -4.0f, 4.0f);
    for (auto& v : t.data) v = (rng.uniform() < 0.5) ? 0.0f : 1.0f;
    const double got = sigmoid_bce_loss(z, t, nullptr);
    const double want = oracle::sigmoid_bce_reference(z, t);
    REQUIRE(got == Catch::Approx(want).epsilon(1e-6));
}

TEST_CASE("sigmoid cross-entropy hand values") {
    // z=0 gives loss ln 2 for either target; sigma(ln 3) = 0.75.
    Tensor z0({1, 2}, {0.0f, 0.0f});
    Tensor t0({1, 2}, {0.0f, 1.0f});
    REQUIRE(sigmoid_bce_loss(z0, t0, nullptr) == Catch::Approx(std::log(2.0)).epsilon(1e-6));
    Tensor z1({1, 1}, {static_cast<float>(std::log(3.0))});
    Tensor t1({1, 1}, {1.0f});
    REQUIRE(sigmoid_bce_loss(z1, t1, nullptr) == Catch::Approx(-std::log(0.75)).epsilon(1e-5));
}

TEST_CASE("sigmoid cross-entropy gradient is (sigma - t) / count") {
    Tensor z({2, 3}, {0.5f, -1.0f, 2.0f, 0.0f, -3.0f, 1.5f});
    Tensor t({2, 3}, {1, 0, 1, 0, 1, 0});
    Tensor d;
    sigmoid_bce_loss(z, t, &d);
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double want = (1.0 / (1.0 + std::exp(-z.data[i])) - t.data[i]) / 6.0;
        REQUIRE(d.data[i] == Catch::Approx(want).margin(1e-7));
    }
    // And numerically.
    auto obj = [&] { return sigmoid_bce_loss(z, t, nullptr); };
    REQUIRE(grad_check(obj, z, d, 1e-2, 6).max_rel_err < kTolDense);
}

TEST_CASE("extreme logits stay finite through the clamp") {
    Tensor z({1, 2}, {1000.0f, -1000.0f});
    Tensor t({1, 2}, {0.0f, 1.0f});
    Tensor d;
    const double loss = sigmoid_bce_loss(z, t, &d);
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss == Catch::Approx(50.0).epsilon(1e-6));  // clamped magnitude
    REQUIRE(std::isfinite(d.data[0]));
}

// ---------------------------------------------------------------- relu

TEST_CASE("relu clips negatives and gates the gradient") {
    Tensor x({1, 4}, {-2.0f, -0.0f, 0.5f, 3.0f});
    const Tensor y = relu_forward(x);
    REQUIRE(y.data == std::vector<float>({0.0f, 0.0f, 0.5f, 3.0f}));
    Tensor d = Tensor::full({1, 4}, 1.0f);
    const Tensor dx = relu_backward(x, d);
    REQUIRE(dx.data == std::vector<float>({0.0f, 0.0f, 1.0f, 1.0f}));
}

// ---------------------------------------------------------------- optimizers

TEST_CASE("heavy-ball sgd compounds velocity across steps") {
    Param p(Tensor({1}, {1.0f}));
    Tensor g({1}, {0.5f});
    const float lr = 0.1f, mu = 0.9f;
    sgd_momentum_step(p, g, lr, mu);
    REQUIRE(p.value.at(0) == Catch::Approx(1.0 - 0.1 * 0.5));  // first step: v = g
    const float after_first = p.value.at(0);
    sgd_momentum_step(p, g, lr, mu);
    // second step: v = mu*g + g, so the delta is lr*(1+mu)*g
    REQUIRE(after_first - p.value.at(0) == Catch::Approx(lr * (1 + mu) * 0.5).epsilon(1e-5));
}

TEST_CASE("adam first step moves by roughly lr in the gradient direction") {
    Param p(Tensor({2}, {1.0f, -1.0f}));
    Tensor g({2}, {0.3f, -0.2f});
    adam_step(p, g, 0.001f, 1);
    // mhat = g, vhat = g*g, so the step is lr * g / (|g| + eps) ~ lr * sign(g)
    REQUIRE(p.value.at(0) == Catch::Approx(1.0 - 0.001).epsilon(1e-4));
    REQUIRE(p.value.at(1) == Catch::Approx(-1.0 + 0.001).epsilon(1e-4));
}

TEST_CASE("adam converges on a quadratic bowl") {
    Param p(Tensor({1}, {5.0f}));
    for (int t = 1; t <= 2000; ++t) {
        Tensor g({1}, {2.0f * p.value.at(0)});  // d/dx of x^2
        adam_step(p, g, 0.01f, t);
    }
    REQUIRE(std::abs(p.value.at(0)) < 1e-2);
}

// ---------------------------------------------------------------- init

TEST_CASE("kaiming initialization has the right spread") {
    Rng rng(1414);
    Tensor w({64, 32, 3, 3});
    const int fan_in = 32 * 3 * 3;
    init::kaiming_normal(w, fan_in, rng);
    double s = 0.0, s2 = 0.0;
    for (float v : w.data) {
        s += v;
        s2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(w.numel());
    const double want_sd = std::sqrt(2.0 / fan_in);
    REQUIRE(s / n == Catch::Approx(0.0).margin(want_sd * 0.05));
    REQUIRE(std::sqrt(s2 / n) == Catch::Approx(want_sd).epsilon(0.05));
}
