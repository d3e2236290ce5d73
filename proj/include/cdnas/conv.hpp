#pragma once

#include <vector>

#include "cdnas/tensor.hpp"

namespace cdnas {

// floor((in + 2p - k)/s) + 1; throws when the window does not fit.
inline int conv_out_size(int in, int k, int s, int p) {
    int out = (in + 2 * p - k) / s + 1;
    require(out >= 1, "conv: non-positive output size (input " + std::to_string(in) + ", kernel " +
                          std::to_string(k) + ", stride " + std::to_string(s) + ", pad " +
                          std::to_string(p) + ")");
    return out;
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n], all row-major dense.
inline void gemm_nn(int M, int K, int N, const float* __restrict__ a, const float* __restrict__ b,
                    float* __restrict__ c) {
    for (int i = 0; i < M; ++i) {
        float* __restrict__ crow = c + static_cast<size_t>(i) * N;
        const float* arow = a + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const float av = arow[k];
            const float* __restrict__ brow = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(int M, int K, int N, const float* __restrict__ a, const float* __restrict__ b,
                    float* __restrict__ c) {
    for (int i = 0; i < M; ++i) {
        const float* arow = a + static_cast<size_t>(i) * K;
        float* crow = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const float* brow = b + static_cast<size_t>(j) * K;
            float acc = 0.0f;
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(int M, int K, int N, const float* __restrict__ a, const float* __restrict__ b,
                    float* __restrict__ c) {
    for (int k = 0; k < K; ++k) {
        const float* arow = a + static_cast<size_t>(k) * M;
        const float* brow = b + static_cast<size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const float av = arow[i];
            float* crow = c + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// Patch-matrix expansion of one image: [C,H,W] -> [C*k*k, OH*OW].
inline void im2col(const float* img, int C, int H, int W, int k, int stride, int pad, int OH,
                   int OW, float* cols) {
    for (int c = 0; c < C; ++c) {
        const float* plane = img + static_cast<size_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* dst = cols + (static_cast<size_t>(c) * k * k + ki * k + kj) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = 0.0f;
                        continue;
                    }
                    const float* src = plane + static_cast<size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-accumulate the column matrix back into image layout.
inline void col2im_accum(const float* cols, int C, int H, int W, int k, int stride, int pad, int OH,
                         int OW, float* img) {
    for (int c = 0; c < C; ++c) {
        float* plane = img + static_cast<size_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* src = cols + (static_cast<size_t>(c) * k * k + ki * k + kj) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    float* dstrow = plane + static_cast<size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) dstrow[iw] += src[oh * OW + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-d convolution (cross-correlation), NCHW in, [F,C,k,k] weights.
// Implemented as im2col + inner products; the nested-loop reference that
// defines correctness lives with the tests.
inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                             int stride, int pad) {
    require(input.rank() == 4, "conv2d: input must be NCHW");
    require(weights.rank() == 4, "conv2d: weights must be [F,C,k,k]");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = weights.dim(0), k = weights.dim(2);
    require(weights.dim(1) == C, "conv2d: input channels " + std::to_string(C) +
                                     " do not match weight channels " + std::to_string(weights.dim(1)));
    require(weights.dim(3) == k, "conv2d: kernel must be square");
    const int OH = conv_out_size(H, k, stride, pad);
    const int OW = conv_out_size(W, k, stride, pad);

    Tensor out({N, F, OH, OW});
    const bool unit = (k == 1 && stride == 1 && pad == 0);
    std::vector<float> cols;
    if (!unit) cols.resize(static_cast<size_t>(C) * k * k * OH * OW);

    for (int n = 0; n < N; ++n) {
        const float* img = input.ptr() + static_cast<size_t>(n) * C * H * W;
        const float* b = unit ? img : cols.data();
        if (!unit) detail::im2col(img, C, H, W, k, stride, pad, OH, OW, cols.data());
        float* o = out.ptr() + static_cast<size_t>(n) * F * OH * OW;
        detail::gemm_nn(F, C * k * k, OH * OW, weights.ptr(), b, o);
    }
    if (!bias.empty()) {
        require(bias.numel() == F, "conv2d: bias size mismatch");
        for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f) {
                float* o = out.ptr() + (static_cast<size_t>(n) * F + f) * OH * OW;
                const float bv = bias.at(f);
                for (int i = 0; i < OH * OW; ++i) o[i] += bv;
            }
    }
    ensure_finite(out, "conv2d");
    return out;
}

inline GradBundle conv2d_backward(const Tensor& input, const Tensor& weights, bool has_bias,
                                  int stride, int pad, const Tensor& d_out) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = weights.dim(0), k = weights.dim(2);
    const int OH = d_out.dim(2), OW = d_out.dim(3);
    require(d_out.dim(0) == N && d_out.dim(1) == F, "conv2d backward: d_out shape mismatch");

    GradBundle g;
    g.d_input = Tensor({N, C, H, W});
    g.d_weights = Tensor(weights.shape);
    if (has_bias) g.d_bias = Tensor({F});

    const bool unit = (k == 1 && stride == 1 && pad == 0);
    std::vector<float> cols;
    std::vector<float> dcols(static_cast<size_t>(C) * k * k * OH * OW);
    if (!unit) cols.resize(dcols.size());

    for (int n = 0; n < N; ++n) {
        const float* img = input.ptr() + static_cast<size_t>(n) * C * H * W;
        const float* dout = d_out.ptr() + static_cast<size_t>(n) * F * OH * OW;
        const float* b = unit ? img : cols.data();
        if (!unit) detail::im2col(img, C, H, W, k, stride, pad, OH, OW, cols.data());

        // dW += dOut * cols^T
        detail::gemm_nt(F, OH * OW, C * k * k, dout, b, g.d_weights.ptr());

        // dcols = W^T * dOut
        std::fill(dcols.begin(), dcols.end(), 0.0f);
        detail::gemm_tn(C * k * k, F, OH * OW, weights.ptr(), dout, dcols.data());
        float* dimg = g.d_input.ptr() + static_cast<size_t>(n) * C * H * W;
        if (unit) {
            for (size_t i = 0; i < dcols.size(); ++i) dimg[i] += dcols[i];
        } else {
            detail::col2im_accum(dcols.data(), C, H, W, k, stride, pad, OH, OW, dimg);
        }

        if (has_bias)
            for (int f = 0; f < F; ++f) {
                double acc = 0.0;
                const float* row = dout + static_cast<size_t>(f) * OH * OW;
                for (int i = 0; i < OH * OW; ++i) acc += row[i];
                g.d_bias.at(f) += static_cast<float>(acc);
            }
    }
    return g;
}

// Depthwise-separable convolution: per-channel k x k depthwise pass (stride
// applies here) followed by a 1x1 pointwise mix. Weights: depthwise [C,k,k],
// pointwise [F,C]; bias attaches to the pointwise output.
inline Tensor sepconv2d_forward(const Tensor& input, const Tensor& dw, const Tensor& pw,
                                const Tensor& bias, int stride, int pad, Tensor* dw_out_cache) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    require(dw.rank() == 3 && dw.dim(0) == C, "sepconv: depthwise weights must be [C,k,k]");
    const int k = dw.dim(1);
    const int F = pw.dim(0);
    require(pw.rank() == 2 && pw.dim(1) == C, "sepconv: pointwise weights must be [F,C]");
    const int OH = conv_out_size(H, k, stride, pad);
    const int OW = conv_out_size(W, k, stride, pad);

    Tensor mid({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = input.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            const float* kern = dw.ptr() + static_cast<size_t>(c) * k * k;
            float* o = mid.ptr() + (static_cast<size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float acc = 0.0f;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw < 0 || iw >= W) continue;
                            acc += plane[ih * W + iw] * kern[ki * k + kj];
                        }
                    }
                    o[oh * OW + ow] = acc;
                }
        }

    Tensor out({N, F, OH, OW});
    for (int n = 0; n < N; ++n) {
        const float* m = mid.ptr() + static_cast<size_t>(n) * C * OH * OW;
        float* o = out.ptr() + static_cast<size_t>(n) * F * OH * OW;
        detail::gemm_nn(F, C, OH * OW, pw.ptr(), m, o);
    }
    if (!bias.empty())
        for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f) {
                float* o = out.ptr() + (static_cast<size_t>(n) * F + f) * OH * OW;
                const float bv = bias.at(f);
                for (int i = 0; i < OH * OW; ++i) o[i] += bv;
            }
    if (dw_out_cache) *dw_out_cache = std::move(mid);
    ensure_finite(out, "sepconv2d");
    return out;
}

// Backward for the separable pass. d_weights in the bundle holds the
// depthwise gradient, d_pointwise the 1x1 mixing gradient.
inline GradBundle sepconv2d_backward(const Tensor& input, const Tensor& dw, const Tensor& pw,
                                     bool has_bias, int stride, int pad, const Tensor& dw_out,
                                     const Tensor& d_out) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int k = dw.dim(1);
    const int F = pw.dim(0);
    const int OH = d_out.dim(2), OW = d_out.dim(3);

    GradBundle g;
    g.d_input = Tensor({N, C, H, W});
    g.d_weights = Tensor(dw.shape);
    g.d_pointwise = Tensor(pw.shape);
    if (has_bias) g.d_bias = Tensor({F});

    Tensor d_mid({N, C, OH, OW});
    for (int n = 0; n < N; ++n) {
        const float* dout = d_out.ptr() + static_cast<size_t>(n) * F * OH * OW;
        const float* m = dw_out.ptr() + static_cast<size_t>(n) * C * OH * OW;
        // d_pw += dOut * mid^T ; d_mid = pw^T * dOut
        detail::gemm_nt(F, OH * OW, C, dout, m, g.d_pointwise.ptr());
        detail::gemm_tn(C, F, OH * OW, pw.ptr(), dout, d_mid.ptr() + static_cast<size_t>(n) * C * OH * OW);
        if (has_bias)
            for (int f = 0; f < F; ++f) {
                double acc = 0.0;
                const float* row = dout + static_cast<size_t>(f) * OH * OW;
                for (int i = 0; i < OH * OW; ++i) acc += row[i];
                g.d_bias.at(f) += static_cast<float>(acc);
            }
    }

    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = input.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            const float* dmid = d_mid.ptr() + (static_cast<size_t>(n) * C + c) * OH * OW;
            const float* kern = dw.ptr() + static_cast<size_t>(c) * k * k;
            float* dkern = g.d_weights.ptr() + static_cast<size_t>(c) * k * k;
            float* dplane = g.d_input.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const float dv = dmid[oh * OW + ow];
                    if (dv == 0.0f) continue;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw < 0 || iw >= W) continue;
                            dkern[ki * k + kj] += plane[ih * W + iw] * dv;
                            dplane[ih * W + iw] += kern[ki * k + kj] * dv;
                        }
                    }
                }
        }
    return g;
}

}  // namespace cdnas
