#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

namespace init {

// He/Kaiming normal: std = sqrt(2 / fan_in). Used for every conv and dense
// weight; biases and batch-norm offsets start at zero, scales at one.
inline void kaiming_normal(Tensor& t, int fan_in, Rng& rng) {
    const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (float& v : t.data) v = static_cast<float>(rng.normal()) * sd;
}

}  // namespace init

// ---------------------------------------------------------------- relu

inline Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& d_out) {
    require(x.same_shape(d_out), "relu backward: shape mismatch");
    Tensor dx(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) dx.data[i] = x.data[i] > 0.0f ? d_out.data[i] : 0.0f;
    return dx;
}

// ---------------------------------------------------------------- batchnorm

// Values saved by the training-mode forward pass that the backward pass needs.
struct BnCache {
    Tensor x_hat;     // normalized activations, same shape as input
    Tensor inv_std;   // [C]
    Tensor mean;      // [C]
};

constexpr float kBnEpsilon = 1e-4f;
constexpr float kBnMomentum = 0.1f;

// Training-mode batch normalization over N,H,W per channel. Normalization
// uses the biased batch variance; the running-variance EMA stores the
// unbiased estimate. Requires more than one sample per channel.
inline Tensor batchnorm_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                      Tensor& running_mean, Tensor& running_var, BnCache& cache,
                                      float eps = kBnEpsilon, float momentum = kBnMomentum) {
    require(x.rank() == 4, "batchnorm: input must be NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t m = static_cast<int64_t>(N) * H * W;
    require(m >= 2, "batchnorm: training mode needs at least 2 values per channel");
    require(gamma.numel() == C && beta.numel() == C, "batchnorm: scale/offset size mismatch");

    cache.mean = Tensor({C});
    cache.inv_std = Tensor({C});
    cache.x_hat = Tensor(x.shape);
    Tensor y(x.shape);

    const size_t hw = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        double sum = 0.0, sum2 = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
                sum += p[i];
                sum2 += static_cast<double>(p[i]) * p[i];
            }
        }
        const double mean = sum / static_cast<double>(m);
        const double var = std::max(0.0, sum2 / static_cast<double>(m) - mean * mean);
        const double var_unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
        const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        cache.mean.at(c) = static_cast<float>(mean);
        cache.inv_std.at(c) = istd;
        running_mean.at(c) = (1.0f - momentum) * running_mean.at(c) +
                             momentum * static_cast<float>(mean);
        running_var.at(c) = (1.0f - momentum) * running_var.at(c) +
                            momentum * static_cast<float>(var_unbiased);

        const float g = gamma.at(c), b = beta.at(c), mu = static_cast<float>(mean);
        for (int n = 0; n < N; ++n) {
            const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            float* xh = cache.x_hat.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            float* o = y.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - mu) * istd;
                o[i] = g * xh[i] + b;
            }
        }
    }
    ensure_finite(y, "batchnorm");
    return y;
}

inline Tensor batchnorm_forward_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                      const Tensor& running_mean, const Tensor& running_var,
                                      float eps = kBnEpsilon) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y(x.shape);
    const size_t hw = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const float istd = 1.0f / std::sqrt(running_var.at(c) + eps);
        const float g = gamma.at(c), b = beta.at(c), mu = running_mean.at(c);
        for (int n = 0; n < N; ++n) {
            const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            float* o = y.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) o[i] = g * (p[i] - mu) * istd + b;
        }
    }
    ensure_finite(y, "batchnorm (inference)");
    return y;
}

inline GradBundle batchnorm_backward(const Tensor& gamma, const BnCache& cache,
                                     const Tensor& d_out) {
    const int N = d_out.dim(0), C = d_out.dim(1), H = d_out.dim(2), W = d_out.dim(3);
    const double m = static_cast<double>(N) * H * W;
    const size_t hw = static_cast<size_t>(H) * W;

    GradBundle g;
    g.d_input = Tensor(d_out.shape);
    g.d_gamma = Tensor({C});
    g.d_beta = Tensor({C});

    for (int c = 0; c < C; ++c) {
        double s_d = 0.0, s_dx = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* d = d_out.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            const float* xh = cache.x_hat.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
                s_d += d[i];
                s_dx += static_cast<double>(d[i]) * xh[i];
            }
        }
        g.d_beta.at(c) = static_cast<float>(s_d);
        g.d_gamma.at(c) = static_cast<float>(s_dx);

        const float k = gamma.at(c) * cache.inv_std.at(c) / static_cast<float>(m);
        const float mean_d = static_cast<float>(s_d);
        const float mean_dx = static_cast<float>(s_dx);
        for (int n = 0; n < N; ++n) {
            const float* d = d_out.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            const float* xh = cache.x_hat.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            float* di = g.d_input.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i)
                di[i] = k * (static_cast<float>(m) * d[i] - mean_d - xh[i] * mean_dx);
        }
    }
    return g;
}

// ---------------------------------------------------------------- pooling

inline Tensor maxpool_forward(const Tensor& x, int k, int stride, int pad,
                              std::vector<int>& argmax) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    require(OH >= 1 && OW >= 1, "maxpool: window larger than input");
    Tensor y({N, C, OH, OW});
    argmax.assign(static_cast<size_t>(y.numel()), -1);
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw < 0 || iw >= W) continue;
                            const float v = plane[ih * W + iw];
                            if (v > best) {
                                best = v;
                                best_idx = ih * W + iw;
                            }
                        }
                    }
                    require(best_idx >= 0, "maxpool: empty window");
                    y.data[oi] = best;
                    argmax[oi] = best_idx;
                }
        }
    return y;
}

inline Tensor maxpool_backward(const std::vector<int>& argmax, const std::vector<int>& in_shape,
                               const Tensor& d_out) {
    const int N = d_out.dim(0), C = d_out.dim(1);
    const int H = in_shape[2], W = in_shape[3];
    Tensor dx({N, C, H, W});
    const size_t ohw = static_cast<size_t>(d_out.dim(2)) * d_out.dim(3);
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float* plane = dx.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            for (size_t i = 0; i < ohw; ++i, ++oi) plane[argmax[oi]] += d_out.data[oi];
        }
    return dx;
}

inline Tensor avgpool_forward(const Tensor& x, int k, int stride, int pad) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    require(OH >= 1 && OW >= 1, "avgpool: window larger than input");
    Tensor y({N, C, OH, OW});
    const float inv = 1.0f / static_cast<float>(k * k);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            float* o = y.ptr() + (static_cast<size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = 0.0f;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw < 0 || iw >= W) continue;
                            acc += plane[ih * W + iw];
                        }
                    }
                    o[oh * OW + ow] = acc * inv;
                }
        }
    return y;
}

inline Tensor avgpool_backward(const std::vector<int>& in_shape, int k, int stride, int pad,
                               const Tensor& d_out) {
    const int N = d_out.dim(0), C = d_out.dim(1), OH = d_out.dim(2), OW = d_out.dim(3);
    const int H = in_shape[2], W = in_shape[3];
    Tensor dx({N, C, H, W});
    const float inv = 1.0f / static_cast<float>(k * k);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* d = d_out.ptr() + (static_cast<size_t>(n) * C + c) * OH * OW;
            float* plane = dx.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const float dv = d[oh * OW + ow] * inv;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw >= 0 && iw < W) plane[ih * W + iw] += dv;
                        }
                    }
                }
        }
    return dx;
}

// Adaptive bin edges shared by the pyramid and adaptive average pools:
// bin i of n over extent e covers [floor(i*e/n), ceil((i+1)*e/n)).
inline int adaptive_start(int i, int n, int e) { return (i * e) / n; }
inline int adaptive_end(int i, int n, int e) { return ((i + 1) * e + n - 1) / n; }

// Spatial pyramid pooling: adaptive max pooling at grid sizes 1..scales,
// concatenated per channel into a flat [N, C * sum(i^2)] feature vector.
inline Tensor spp_forward(const Tensor& x, int scales, std::vector<int>& argmax) {
    require(scales >= 1, "spp: scales must be >= 1");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H >= scales && W >= scales, "spp: input smaller than coarsest grid");
    int bins = 0;
    for (int s = 1; s <= scales; ++s) bins += s * s;
    Tensor y({N, C * bins});
    argmax.assign(static_cast<size_t>(y.numel()), -1);

    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int s = 1; s <= scales; ++s)
            for (int c = 0; c < C; ++c) {
                const float* plane = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
                for (int gi = 0; gi < s; ++gi)
                    for (int gj = 0; gj < s; ++gj, ++oi) {
                        const int h0 = adaptive_start(gi, s, H), h1 = adaptive_end(gi, s, H);
                        const int w0 = adaptive_start(gj, s, W), w1 = adaptive_end(gj, s, W);
                        float best = -std::numeric_limits<float>::infinity();
                        int best_idx = -1;
                        for (int ih = h0; ih < h1; ++ih)
                            for (int iw = w0; iw < w1; ++iw) {
                                const float v = plane[ih * W + iw];
                                if (v > best) {
                                    best = v;
                                    best_idx = ih * W + iw;
                                }
                            }
                        y.data[oi] = best;
                        argmax[oi] = best_idx;
                    }
            }
    return y;
}

inline Tensor spp_backward(const std::vector<int>& in_shape, int scales,
                           const std::vector<int>& argmax, const Tensor& d_out) {
    const int N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    Tensor dx({N, C, H, W});
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int s = 1; s <= scales; ++s)
            for (int c = 0; c < C; ++c) {
                float* plane = dx.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
                for (int g = 0; g < s * s; ++g, ++oi) plane[argmax[oi]] += d_out.data[oi];
            }
    return dx;
}

// Adaptive average pooling to an n x n grid (n = 1 is global average).
inline Tensor adaptive_avg_forward(const Tensor& x, int grid) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(grid >= 1 && H >= grid && W >= grid, "adaptive avg: bad grid");
    Tensor y({N, C, grid, grid});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = x.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            float* o = y.ptr() + (static_cast<size_t>(n) * C + c) * grid * grid;
            for (int gi = 0; gi < grid; ++gi)
                for (int gj = 0; gj < grid; ++gj) {
                    const int h0 = adaptive_start(gi, grid, H), h1 = adaptive_end(gi, grid, H);
                    const int w0 = adaptive_start(gj, grid, W), w1 = adaptive_end(gj, grid, W);
                    double acc = 0.0;
                    for (int ih = h0; ih < h1; ++ih)
                        for (int iw = w0; iw < w1; ++iw) acc += plane[ih * W + iw];
                    o[gi * grid + gj] = static_cast<float>(acc / ((h1 - h0) * (w1 - w0)));
                }
        }
    return y;
}

inline Tensor adaptive_avg_backward(const std::vector<int>& in_shape, int grid,
                                    const Tensor& d_out) {
    const int N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    Tensor dx({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* d = d_out.ptr() + (static_cast<size_t>(n) * C + c) * grid * grid;
            float* plane = dx.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            for (int gi = 0; gi < grid; ++gi)
                for (int gj = 0; gj < grid; ++gj) {
                    const int h0 = adaptive_start(gi, grid, H), h1 = adaptive_end(gi, grid, H);
                    const int w0 = adaptive_start(gj, grid, W), w1 = adaptive_end(gj, grid, W);
                    const float dv = d[gi * grid + gj] / static_cast<float>((h1 - h0) * (w1 - w0));
                    for (int ih = h0; ih < h1; ++ih)
                        for (int iw = w0; iw < w1; ++iw) plane[ih * W + iw] += dv;
                }
        }
    return dx;
}

// ---------------------------------------------------------------- dense

// Fully connected: y = x * W^T + b with x [N,Fin], W [Fout,Fin].
inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2, "dense: input must be [N,features]");
    const int N = x.dim(0), Fin = x.dim(1), Fout = w.dim(0);
    require(w.dim(1) == Fin, "dense: input features " + std::to_string(Fin) +
                                 " do not match weight columns " + std::to_string(w.dim(1)));
    Tensor y({N, Fout});
    for (int n = 0; n < N; ++n) {
        const float* xr = x.ptr() + static_cast<size_t>(n) * Fin;
        float* yr = y.ptr() + static_cast<size_t>(n) * Fout;
        for (int f = 0; f < Fout; ++f) {
            const float* wr = w.ptr() + static_cast<size_t>(f) * Fin;
            float acc = b.empty() ? 0.0f : b.at(f);
            for (int i = 0; i < Fin; ++i) acc += xr[i] * wr[i];
            yr[f] = acc;
        }
    }
    ensure_finite(y, "dense");
    return y;
}

inline GradBundle dense_backward(const Tensor& x, const Tensor& w, bool has_bias,
                                 const Tensor& d_out) {
    const int N = x.dim(0), Fin = x.dim(1), Fout = w.dim(0);
    GradBundle g;
    g.d_input = Tensor({N, Fin});
    g.d_weights = Tensor(w.shape);
    if (has_bias) g.d_bias = Tensor({Fout});
    for (int n = 0; n < N; ++n) {
        const float* xr = x.ptr() + static_cast<size_t>(n) * Fin;
        const float* dr = d_out.ptr() + static_cast<size_t>(n) * Fout;
        float* dxr = g.d_input.ptr() + static_cast<size_t>(n) * Fin;
        for (int f = 0; f < Fout; ++f) {
            const float dv = dr[f];
            const float* wr = w.ptr() + static_cast<size_t>(f) * Fin;
            float* dwr = g.d_weights.ptr() + static_cast<size_t>(f) * Fin;
            for (int i = 0; i < Fin; ++i) {
                dwr[i] += dv * xr[i];
                dxr[i] += dv * wr[i];
            }
            if (has_bias) g.d_bias.at(f) += dv;
        }
    }
    return g;
}

// ---------------------------------------------------------------- dropout

// Inverted dropout: in training, kept units are scaled by 1/(1-p) so
// inference is the identity.
inline Tensor dropout_forward(const Tensor& x, float p, Rng& rng, Tensor& mask) {
    require(p >= 0.0f && p < 1.0f, "dropout: rate must be in [0,1)");
    mask = Tensor(x.shape);
    Tensor y(x.shape);
    const float scale = 1.0f / (1.0f - p);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float keep = (rng.uniform() >= p) ? scale : 0.0f;
        mask.data[i] = keep;
        y.data[i] = x.data[i] * keep;
    }
    return y;
}

inline Tensor dropout_backward(const Tensor& mask, const Tensor& d_out) {
    Tensor dx(d_out.shape);
    for (int64_t i = 0; i < d_out.numel(); ++i) dx.data[i] = d_out.data[i] * mask.data[i];
    return dx;
}

// ---------------------------------------------------------------- loss

inline float sigmoidf(float z) { return 1.0f / (1.0f + std::exp(-z)); }

// Fused sigmoid + binary cross-entropy over a multi-target batch.
// logits/targets are [N,K]; the mean runs over all N*K terms. Uses the
// stable softplus form max(z,0) - z*t + log(1+exp(-|z|)); logits are clamped
// to +-50 first (sigmoid saturates well before that).
inline double sigmoid_bce_loss(const Tensor& logits, const Tensor& targets, Tensor* d_logits) {
    require(logits.same_shape(targets), "loss: logits/targets shape mismatch");
    require(logits.rank() == 2, "loss: logits must be [N,K]");
    const int64_t total = logits.numel();
    const double inv = 1.0 / static_cast<double>(total);
    if (d_logits) *d_logits = Tensor(logits.shape);
    double loss = 0.0;
    for (int64_t i = 0; i < total; ++i) {
        const float z = std::clamp(logits.data[i], -50.0f, 50.0f);
        const float t = targets.data[i];
        loss += std::max(0.0f, z) - z * t + std::log1p(std::exp(-std::abs(z)));
        if (d_logits) d_logits->data[i] = static_cast<float>((sigmoidf(z) - t) * inv);
    }
    return loss * inv;
}

}  // namespace cdnas
