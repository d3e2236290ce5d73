#pragma once

// Independent reference implementations used only by tests. These are written
// as direct definitional loops with double accumulation so that a bug in the
// library's optimized path cannot hide in a shared helper.

#include <cmath>
#include <vector>

#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace oracle {

using cdnas::Tensor;

// Definitional 2-d cross-correlation: for every output element walk the
// kernel window, skipping out-of-bounds (zero-padded) taps.
inline Tensor conv2d_reference(const Tensor& input, const Tensor& weights, const Tensor& bias,
                               int stride, int pad) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = weights.dim(0), k = weights.dim(2);
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    Tensor out({N, F, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias.empty() ? 0.0 : static_cast<double>(bias.at(f));
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < k; ++ki)
                            for (int kj = 0; kj < k; ++kj) {
                                const int ih = oh * stride - pad + ki;
                                const int iw = ow * stride - pad + kj;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(input.at(n, c, ih, iw)) *
                                       static_cast<double>(weights.at(f, c, ki, kj));
                            }
                    out.at(n, f, oh, ow) = static_cast<float>(acc);
                }
    return out;
}

// y[n,f] = sum_i x[n,i] * w[f,i] + b[f], accumulated in double.
inline Tensor dense_reference(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int N = x.dim(0), Fin = x.dim(1), Fout = w.dim(0);
    Tensor y({N, Fout});
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < Fout; ++f) {
            double acc = b.empty() ? 0.0 : static_cast<double>(b.at(f));
            for (int i = 0; i < Fin; ++i)
                acc += static_cast<double>(x.at(n, i)) * static_cast<double>(w.at(f, i));
            y.at(n, f) = static_cast<float>(acc);
        }
    return y;
}

// Binary cross-entropy after a sigmoid, computed the direct long-double way:
// -(t*log(s) + (1-t)*log(1-s)) averaged over all entries.
inline double sigmoid_bce_reference(const Tensor& logits, const Tensor& targets) {
    long double total = 0.0L;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        const long double z = logits.data[i];
        const long double t = targets.data[i];
        const long double s = 1.0L / (1.0L + std::exp(-z));
        total += -(t * std::log(s) + (1.0L - t) * std::log(1.0L - s));
    }
    return static_cast<double>(total / static_cast<long double>(logits.numel()));
}

// Two-pass per-channel batch statistics in double: mean, then biased variance.
inline void batch_stats_reference(const Tensor& x, int c, double* mean, double* var_biased) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t m = static_cast<int64_t>(N) * H * W;
    double s = 0.0;
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) s += x.at(n, c, h, w);
    *mean = s / static_cast<double>(m);
    double v = 0.0;
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const double d = x.at(n, c, h, w) - *mean;
                v += d * d;
            }
    *var_biased = v / static_cast<double>(m);
    (void)C;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return worst;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = std::abs(static_cast<double>(a.data[i]) - b.data[i]);
        const double s = std::max({std::abs(static_cast<double>(a.data[i])),
                                   std::abs(static_cast<double>(b.data[i])), 1e-8});
        worst = std::max(worst, d / s);
    }
    return worst;
}

inline void fill_uniform(Tensor& t, cdnas::Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    for (float& v : t.data) v = static_cast<float>(rng.uniform_range(lo, hi));
}

}  // namespace oracle
