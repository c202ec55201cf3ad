#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "skincnn/tensor.hpp"

namespace skincnn {

enum class Padding { same, valid };
enum class Act { relu, sigmoid };

namespace detail {

// C[M,N] += A[M,K] * B[K,N], all row-major. The ikj order keeps the inner
// loop contiguous in both B and C so it vectorizes; the accumulation order
// per output element is fixed, which keeps results bit-identical run to run.
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K,
              const T* A, const T* B, T* C)
{
    for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        const T* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[k];
            if (av == T(0))
                continue;
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j)
                c[j] += av * b[j];
        }
    }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst)
{
    constexpr std::size_t B = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += B)
        for (std::size_t j0 = 0; j0 < cols; j0 += B) {
            std::size_t i1 = std::min(rows, i0 + B);
            std::size_t j1 = std::min(cols, j0 + B);
            for (std::size_t i = i0; i < i1; ++i)
                for (std::size_t j = j0; j < j1; ++j)
                    dst[j * rows + i] = src[i * cols + j];
        }
}

// Reused im2col / transpose scratch, one set per thread.
template <typename T>
std::vector<T>& scratch(int which)
{
    static thread_local std::vector<T> bufs[3];
    return bufs[which];
}

// col has layout [C*Kh*Kw][Ho*Wo]; out-of-range taps are zero padding.
template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W,
            std::size_t Kh, std::size_t Kw, std::size_t ph, std::size_t pw,
            std::size_t stride, std::size_t Ho, std::size_t Wo, T* col)
{
    for (std::size_t c = 0; c < C; ++c) {
        const T* plane = img + c * H * W;
        for (std::size_t kh = 0; kh < Kh; ++kh)
            for (std::size_t kw = 0; kw < Kw; ++kw) {
                T* row = col + ((c * Kh + kh) * Kw + kw) * (Ho * Wo);
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + kh) - std::ptrdiff_t(ph);
                    T* dst = row + oy * Wo;
                    if (iy < 0 || iy >= std::ptrdiff_t(H)) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = plane + std::size_t(iy) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kw) - std::ptrdiff_t(pw);
                        dst[ox] = (ix < 0 || ix >= std::ptrdiff_t(W)) ? T(0) : src[ix];
                    }
                }
            }
    }
}

// Scatter of dcol back onto the input image, written as a gather per input
// element so the summation order is fixed.
template <typename T>
void col2im_acc(const T* dcol, std::size_t C, std::size_t H, std::size_t W,
                std::size_t Kh, std::size_t Kw, std::size_t ph, std::size_t pw,
                std::size_t stride, std::size_t Ho, std::size_t Wo, T* dimg)
{
    for (std::size_t c = 0; c < C; ++c) {
        T* plane = dimg + c * H * W;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                T acc = 0;
                for (std::size_t kh = 0; kh < Kh; ++kh) {
                    std::ptrdiff_t oy = std::ptrdiff_t(h + ph) - std::ptrdiff_t(kh);
                    if (oy < 0 || oy % std::ptrdiff_t(stride))
                        continue;
                    oy /= std::ptrdiff_t(stride);
                    if (oy >= std::ptrdiff_t(Ho))
                        continue;
                    for (std::size_t kw = 0; kw < Kw; ++kw) {
                        std::ptrdiff_t ox = std::ptrdiff_t(w + pw) - std::ptrdiff_t(kw);
                        if (ox < 0 || ox % std::ptrdiff_t(stride))
                            continue;
                        ox /= std::ptrdiff_t(stride);
                        if (ox >= std::ptrdiff_t(Wo))
                            continue;
                        acc += dcol[((c * Kh + kh) * Kw + kw) * (Ho * Wo)
                                    + std::size_t(oy) * Wo + std::size_t(ox)];
                    }
                }
                plane[h * W + w] += acc;
            }
    }
}

template <typename T>
T stable_sigmoid(T x)
{
    if (x >= T(0))
        return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace detail

// 2-D convolution, NCHW. Same padding is zero padding and requires odd
// kernels; valid requires the kernel to fit. Output H' = floor((H + 2p - Kh)
// / stride) + 1, so same with stride 1 preserves the spatial dims.
template <typename T>
Tensor<T> conv2d(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 Padding pad = Padding::same, std::size_t stride = 1)
{
    SKINCNN_CHECK(x.ndim() == 4, "conv2d input must be 4-D [N,C,H,W], got ", shape_str(x.shape()));
    SKINCNN_CHECK(w.ndim() == 4, "conv2d kernel must be 4-D [O,C,Kh,Kw], got ", shape_str(w.shape()));
    SKINCNN_CHECK(b.ndim() == 1, "conv2d bias must be 1-D, got ", shape_str(b.shape()));
    SKINCNN_CHECK(stride >= 1, "conv2d stride must be >= 1, got ", stride);
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
    SKINCNN_CHECK(w.dim(1) == C, "conv2d channel mismatch: input ", shape_str(x.shape()),
                  " vs kernel ", shape_str(w.shape()));
    SKINCNN_CHECK(b.dim(0) == O, "conv2d bias shape ", shape_str(b.shape()),
                  " does not match kernel ", shape_str(w.shape()));

    std::size_t ph = 0, pw = 0;
    if (pad == Padding::same) {
        SKINCNN_CHECK(Kh % 2 == 1 && Kw % 2 == 1,
                      "same padding needs odd kernel dims, got ", shape_str(w.shape()));
        ph = (Kh - 1) / 2;
        pw = (Kw - 1) / 2;
    } else {
        SKINCNN_CHECK(H >= Kh && W >= Kw, "valid conv kernel ", shape_str(w.shape()),
                      " does not fit input ", shape_str(x.shape()));
    }
    const std::size_t Ho = (H + 2 * ph - Kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pw - Kw) / stride + 1;
    const std::size_t K = C * Kh * Kw, M = Ho * Wo;

    Tensor<T> y({N, O, Ho, Wo});
    auto& col = detail::scratch<T>(0);
    col.resize(K * M);
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col(x.data() + n * C * H * W, C, H, W, Kh, Kw, ph, pw, stride, Ho, Wo, col.data());
        T* yn = y.data() + n * O * M;
        for (std::size_t o = 0; o < O; ++o)
            std::fill(yn + o * M, yn + (o + 1) * M, b.data()[o]);
        detail::gemm_acc(O, M, K, w.data(), col.data(), yn);
    }

    const bool rec = tape && (x.requires_grad() || w.requires_grad() || b.requires_grad());
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, w, b, N, C, H, W, O, Kh, Kw, ph, pw, stride, Ho, Wo,
                         K, M](const std::vector<T>& gy) {
            auto& col = detail::scratch<T>(0);
            auto& colT = detail::scratch<T>(1);
            auto& dcol = detail::scratch<T>(2);
            const bool need_x = x.requires_grad();
            const bool need_w = w.requires_grad();
            std::vector<T>* gx = need_x ? &tape->adjoint(x) : nullptr;
            std::vector<T>* gw = need_w ? &tape->adjoint(w) : nullptr;
            if (b.requires_grad()) {
                auto& gb = tape->adjoint(b);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < O; ++o) {
                        const T* g = gy.data() + (n * O + o) * M;
                        T acc = 0;
                        for (std::size_t m = 0; m < M; ++m)
                            acc += g[m];
                        gb[o] += acc;
                    }
            }
            if (!need_x && !need_w)
                return;
            if (need_w) {
                col.resize(K * M);
                colT.resize(M * K);
            }
            if (need_x)
                dcol.resize(K * M);
            // wT for dx = wT * gy, built once
            std::vector<T> wT;
            if (need_x) {
                wT.resize(K * O);
                detail::transpose(O, K, w.data(), wT.data());
            }
            for (std::size_t n = 0; n < N; ++n) {
                const T* g = gy.data() + n * O * M;
                if (need_w) {
                    detail::im2col(x.data() + n * C * H * W, C, H, W, Kh, Kw, ph, pw,
                                   stride, Ho, Wo, col.data());
                    detail::transpose(K, M, col.data(), colT.data());
                    detail::gemm_acc(O, K, M, g, colT.data(), gw->data());
                }
                if (need_x) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_acc(K, M, O, wT.data(), g, dcol.data());
                    detail::col2im_acc(dcol.data(), C, H, W, Kh, Kw, ph, pw, stride,
                                       Ho, Wo, gx->data() + n * C * H * W);
                }
            }
        });
    }
    return y;
}

// 2x2 max pooling with stride 2. On ties the gradient goes to the first
// maximum in linear index order.
template <typename T>
Tensor<T> max_pool2d(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    SKINCNN_CHECK(x.ndim() == 4, "max_pool2d input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    SKINCNN_CHECK(H % 2 == 0 && W % 2 == 0,
                  "max_pool2d needs even spatial dims, got ", shape_str(x.shape()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor<T> y({N, C, Ho, Wo});
    std::vector<std::uint32_t> argmax(y.size());
    SmoothnessProbe* probe = tape ? tape->probe : nullptr;
    const T* in = x.data();
    T* out = y.data();
    std::size_t oi = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* plane = in + nc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox, ++oi) {
                std::size_t base = (2 * oy) * W + 2 * ox;
                std::size_t idx = base;
                T best = plane[base];
                const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
                for (auto c : cand)
                    if (plane[c] > best) {
                        best = plane[c];
                        idx = c;
                    }
                out[oi] = best;
                argmax[oi] = std::uint32_t(nc * H * W + idx);
                if (probe) {
                    // Exact ties are structurally locked (e.g. relu-clamped
                    // zeros move together); only strict runners-up can flip.
                    const std::size_t all[4] = {base, base + 1, base + W, base + W + 1};
                    for (auto c : all)
                        if (plane[c] < best)
                            probe->min_pool_margin =
                                std::min(probe->min_pool_margin, double(best - plane[c]));
                }
            }
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, argmax = std::move(argmax)](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t i = 0; i < gy.size(); ++i)
                gx[argmax[i]] += gy[i];
        });
    }
    return y;
}

// 3x3 max pooling with stride 1 that preserves the spatial dims; windows are
// clipped at the borders. Used by the pooling branch of inception blocks.
template <typename T>
Tensor<T> max_pool2d_same3(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    SKINCNN_CHECK(x.ndim() == 4, "max_pool2d_same3 input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(x.shape());
    std::vector<std::uint32_t> argmax(y.size());
    SmoothnessProbe* probe = tape ? tape->probe : nullptr;
    const T* in = x.data();
    T* out = y.data();
    std::size_t oi = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* plane = in + nc * H * W;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w, ++oi) {
                std::size_t y0 = h > 0 ? h - 1 : 0, y1 = std::min(H - 1, h + 1);
                std::size_t x0 = w > 0 ? w - 1 : 0, x1 = std::min(W - 1, w + 1);
                std::size_t idx = y0 * W + x0;
                T best = plane[idx];
                for (std::size_t yy = y0; yy <= y1; ++yy)
                    for (std::size_t xx = x0; xx <= x1; ++xx) {
                        std::size_t i = yy * W + xx;
                        if (plane[i] > best) {
                            best = plane[i];
                            idx = i;
                        }
                    }
                out[oi] = best;
                argmax[oi] = std::uint32_t(nc * H * W + idx);
                if (probe)
                    for (std::size_t yy = y0; yy <= y1; ++yy)
                        for (std::size_t xx = x0; xx <= x1; ++xx) {
                            std::size_t i = yy * W + xx;
                            if (plane[i] < best)
                                probe->min_pool_margin =
                                    std::min(probe->min_pool_margin, double(best - plane[i]));
                        }
            }
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, argmax = std::move(argmax)](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t i = 0; i < gy.size(); ++i)
                gx[argmax[i]] += gy[i];
        });
    }
    return y;
}

// Nearest-neighbor 2x upsampling; each input value fills a 2x2 block.
template <typename T>
Tensor<T> upsample_nearest2x(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    SKINCNN_CHECK(x.ndim() == 4, "upsample_nearest2x input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, 2 * H, 2 * W});
    const T* in = x.data();
    T* out = y.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* sp = in + nc * H * W;
        T* dp = out + nc * 4 * H * W;
        for (std::size_t h = 0; h < H; ++h) {
            T* r0 = dp + (2 * h) * 2 * W;
            T* r1 = r0 + 2 * W;
            for (std::size_t w = 0; w < W; ++w) {
                T v = sp[h * W + w];
                r0[2 * w] = r0[2 * w + 1] = v;
                r1[2 * w] = r1[2 * w + 1] = v;
            }
        }
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, N, C, H, W](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                const T* dp = gy.data() + nc * 4 * H * W;
                T* sp = gx.data() + nc * H * W;
                for (std::size_t h = 0; h < H; ++h) {
                    const T* r0 = dp + (2 * h) * 2 * W;
                    const T* r1 = r0 + 2 * W;
                    for (std::size_t w = 0; w < W; ++w)
                        sp[h * W + w] += r0[2 * w] + r0[2 * w + 1] + r1[2 * w] + r1[2 * w + 1];
                }
            }
        });
    }
    return y;
}

// Concatenation along dim 1. Works for [N,C,H,W] feature maps and [N,F]
// feature vectors alike; a occupies the leading channels.
template <typename T>
Tensor<T> concat_channels(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& a, const Tensor<T>& b)
{
    SKINCNN_CHECK(a.ndim() == b.ndim() && a.ndim() >= 2,
                  "concat_channels needs matching ranks >= 2, got ", shape_str(a.shape()),
                  " and ", shape_str(b.shape()));
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (i != 1)
            SKINCNN_CHECK(a.dim(i) == b.dim(i), "concat_channels non-channel dims differ: ",
                          shape_str(a.shape()), " vs ", shape_str(b.shape()));
    const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    std::size_t inner = 1;
    for (std::size_t i = 2; i < a.ndim(); ++i)
        inner *= a.dim(i);
    Shape out_shape = a.shape();
    out_shape[1] = Ca + Cb;
    Tensor<T> y(out_shape);
    for (std::size_t n = 0; n < N; ++n) {
        T* dst = y.data() + n * (Ca + Cb) * inner;
        std::copy_n(a.data() + n * Ca * inner, Ca * inner, dst);
        std::copy_n(b.data() + n * Cb * inner, Cb * inner, dst + Ca * inner);
    }
    const bool rec = tape && (a.requires_grad() || b.requires_grad());
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, a, b, N, Ca, Cb, inner](const std::vector<T>& gy) {
            if (a.requires_grad()) {
                auto& ga = tape->adjoint(a);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t i = 0; i < Ca * inner; ++i)
                        ga[n * Ca * inner + i] += gy[n * (Ca + Cb) * inner + i];
            }
            if (b.requires_grad()) {
                auto& gb = tape->adjoint(b);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t i = 0; i < Cb * inner; ++i)
                        gb[n * Cb * inner + i] += gy[n * (Ca + Cb) * inner + Ca * inner + i];
            }
        });
    }
    return y;
}

// Affine map y = x w + b for [N,F] inputs.
template <typename T>
Tensor<T> dense(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b)
{
    SKINCNN_CHECK(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1,
                  "dense expects x [N,F], w [F,G], b [G], got ", shape_str(x.shape()), ", ",
                  shape_str(w.shape()), ", ", shape_str(b.shape()));
    const std::size_t N = x.dim(0), F = x.dim(1), G = w.dim(1);
    SKINCNN_CHECK(w.dim(0) == F, "dense inner dims differ: x ", shape_str(x.shape()),
                  " vs w ", shape_str(w.shape()));
    SKINCNN_CHECK(b.dim(0) == G, "dense bias shape ", shape_str(b.shape()),
                  " does not match w ", shape_str(w.shape()));
    Tensor<T> y({N, G});
    for (std::size_t n = 0; n < N; ++n)
        std::copy_n(b.data(), G, y.data() + n * G);
    detail::gemm_acc(N, G, F, x.data(), w.data(), y.data());
    const bool rec = tape && (x.requires_grad() || w.requires_grad() || b.requires_grad());
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, w, b, N, F, G](const std::vector<T>& gy) {
            if (x.requires_grad()) {
                auto& gx = tape->adjoint(x);
                std::vector<T> wT(G * F);
                detail::transpose(F, G, w.data(), wT.data());
                detail::gemm_acc(N, F, G, gy.data(), wT.data(), gx.data());
            }
            if (w.requires_grad()) {
                auto& gw = tape->adjoint(w);
                for (std::size_t n = 0; n < N; ++n) {
                    const T* xr = x.data() + n * F;
                    const T* gr = gy.data() + n * G;
                    for (std::size_t f = 0; f < F; ++f) {
                        const T xv = xr[f];
                        if (xv == T(0))
                            continue;
                        T* dst = gw.data() + f * G;
                        for (std::size_t g = 0; g < G; ++g)
                            dst[g] += xv * gr[g];
                    }
                }
            }
            if (b.requires_grad()) {
                auto& gb = tape->adjoint(b);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t g = 0; g < G; ++g)
                        gb[g] += gy[n * G + g];
            }
        });
    }
    return y;
}

// Elementwise activation. relu'(0) is defined as 0.
template <typename T>
Tensor<T> activation(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x, Act kind)
{
    Tensor<T> y(x.shape());
    const T* in = x.data();
    T* out = y.data();
    if (kind == Act::relu) {
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = in[i] > T(0) ? in[i] : T(0);
        if (tape && tape->probe) {
            double m = tape->probe->min_relu_margin;
            for (std::size_t i = 0; i < x.size(); ++i)
                m = std::min(m, std::abs(double(in[i])));
            tape->probe->min_relu_margin = m;
        }
    } else {
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = detail::stable_sigmoid(in[i]);
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        if (kind == Act::relu) {
            tape->record(y, [tape, x](const std::vector<T>& gy) {
                auto& gx = tape->adjoint(x);
                const T* in = x.data();
                for (std::size_t i = 0; i < gy.size(); ++i)
                    if (in[i] > T(0))
                        gx[i] += gy[i];
            });
        } else {
            tape->record(y, [tape, x, y](const std::vector<T>& gy) {
                auto& gx = tape->adjoint(x);
                const T* s = y.data();
                for (std::size_t i = 0; i < gy.size(); ++i)
                    gx[i] += gy[i] * s[i] * (T(1) - s[i]);
            });
        }
    }
    return y;
}

template <typename T>
Tensor<T> relu(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x) { return activation(tape, x, Act::relu); }

template <typename T>
Tensor<T> sigmoid(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x) { return activation(tape, x, Act::sigmoid); }

// Row softmax with max subtraction.
template <typename T>
Tensor<T> softmax(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    SKINCNN_CHECK(x.ndim() == 2 && x.dim(1) >= 1,
                  "softmax expects [N,C] with C >= 1, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1);
    Tensor<T> y({N, C});
    for (std::size_t n = 0; n < N; ++n) {
        const T* in = x.data() + n * C;
        T* out = y.data() + n * C;
        T m = in[0];
        for (std::size_t c = 1; c < C; ++c)
            m = std::max(m, in[c]);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            out[c] = std::exp(in[c] - m);
            sum += out[c];
        }
        for (std::size_t c = 0; c < C; ++c)
            out[c] /= sum;
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, y, N, C](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t n = 0; n < N; ++n) {
                const T* p = y.data() + n * C;
                const T* g = gy.data() + n * C;
                T dot = 0;
                for (std::size_t c = 0; c < C; ++c)
                    dot += g[c] * p[c];
                for (std::size_t c = 0; c < C; ++c)
                    gx[n * C + c] += p[c] * (g[c] - dot);
            }
        });
    }
    return y;
}

// Reflection padding (no edge repeat), NCHW. Pads must not exceed dim - 1.
template <typename T>
Tensor<T> reflect_pad2d(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x,
                        std::size_t top, std::size_t bottom, std::size_t left, std::size_t right)
{
    SKINCNN_CHECK(x.ndim() == 4, "reflect_pad2d input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    SKINCNN_CHECK(top < H && bottom < H && left < W && right < W,
                  "reflection pad (", top, ",", bottom, ",", left, ",", right,
                  ") too large for input ", shape_str(x.shape()));
    const std::size_t Ho = H + top + bottom, Wo = W + left + right;
    auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
        if (i < 0)
            i = -i;
        if (i >= n)
            i = 2 * n - 2 - i;
        return std::size_t(i);
    };
    Tensor<T> y({N, C, Ho, Wo});
    std::vector<std::size_t> src_y(Ho), src_x(Wo);
    for (std::size_t h = 0; h < Ho; ++h)
        src_y[h] = reflect(std::ptrdiff_t(h) - std::ptrdiff_t(top), std::ptrdiff_t(H));
    for (std::size_t w = 0; w < Wo; ++w)
        src_x[w] = reflect(std::ptrdiff_t(w) - std::ptrdiff_t(left), std::ptrdiff_t(W));
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* sp = x.data() + nc * H * W;
        T* dp = y.data() + nc * Ho * Wo;
        for (std::size_t h = 0; h < Ho; ++h)
            for (std::size_t w = 0; w < Wo; ++w)
                dp[h * Wo + w] = sp[src_y[h] * W + src_x[w]];
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, N, C, H, W, Ho, Wo, src_y, src_x](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                T* sp = gx.data() + nc * H * W;
                const T* dp = gy.data() + nc * Ho * Wo;
                for (std::size_t h = 0; h < Ho; ++h)
                    for (std::size_t w = 0; w < Wo; ++w)
                        sp[src_y[h] * W + src_x[w]] += dp[h * Wo + w];
            }
        });
    }
    return y;
}

// Spatial crop, NCHW.
template <typename T>
Tensor<T> crop2d(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x,
                 std::size_t top, std::size_t left, std::size_t oh, std::size_t ow)
{
    SKINCNN_CHECK(x.ndim() == 4, "crop2d input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    SKINCNN_CHECK(top + oh <= H && left + ow <= W, "crop (", top, ",", left, ",", oh, ",", ow,
                  ") out of bounds for ", shape_str(x.shape()));
    Tensor<T> y({N, C, oh, ow});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* sp = x.data() + nc * H * W;
        T* dp = y.data() + nc * oh * ow;
        for (std::size_t h = 0; h < oh; ++h)
            std::copy_n(sp + (top + h) * W + left, ow, dp + h * ow);
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, N, C, H, W, top, left, oh, ow](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                T* sp = gx.data() + nc * H * W;
                const T* dp = gy.data() + nc * oh * ow;
                for (std::size_t h = 0; h < oh; ++h)
                    for (std::size_t w = 0; w < ow; ++w)
                        sp[(top + h) * W + left + w] += dp[h * ow + w];
            }
        });
    }
    return y;
}

// Spatial mean per channel, [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    SKINCNN_CHECK(x.ndim() == 4, "global_avg_pool input must be 4-D, got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> y({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* sp = x.data() + nc * HW;
        T acc = 0;
        for (std::size_t i = 0; i < HW; ++i)
            acc += sp[i];
        y.data()[nc] = acc / T(HW);
    }
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x, N, C, HW](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                const T g = gy[nc] / T(HW);
                T* sp = gx.data() + nc * HW;
                for (std::size_t i = 0; i < HW; ++i)
                    sp[i] += g;
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> add(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& a, const Tensor<T>& b)
{
    SKINCNN_CHECK(a.shape() == b.shape(), "add shape mismatch: ", shape_str(a.shape()),
                  " vs ", shape_str(b.shape()));
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.data()[i] = a.data()[i] + b.data()[i];
    const bool rec = tape && (a.requires_grad() || b.requires_grad());
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, a, b](const std::vector<T>& gy) {
            if (a.requires_grad()) {
                auto& ga = tape->adjoint(a);
                for (std::size_t i = 0; i < gy.size(); ++i)
                    ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto& gb = tape->adjoint(b);
                for (std::size_t i = 0; i < gy.size(); ++i)
                    gb[i] += gy[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& a, const Tensor<T>& b)
{
    SKINCNN_CHECK(a.shape() == b.shape(), "mul shape mismatch: ", shape_str(a.shape()),
                  " vs ", shape_str(b.shape()));
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.data()[i] = a.data()[i] * b.data()[i];
    const bool rec = tape && (a.requires_grad() || b.requires_grad());
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, a, b](const std::vector<T>& gy) {
            if (a.requires_grad()) {
                auto& ga = tape->adjoint(a);
                for (std::size_t i = 0; i < gy.size(); ++i)
                    ga[i] += gy[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& gb = tape->adjoint(b);
                for (std::size_t i = 0; i < gy.size(); ++i)
                    gb[i] += gy[i] * a.data()[i];
            }
        });
    }
    return y;
}

// Sum of all elements, producing a shape [1] scalar.
template <typename T>
Tensor<T> sum(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    T acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += x.data()[i];
    Tensor<T> y = Tensor<T>::scalar(acc);
    const bool rec = tape && x.requires_grad();
    y.set_requires_grad(rec);
    if (rec) {
        tape->record(y, [tape, x](const std::vector<T>& gy) {
            auto& gx = tape->adjoint(x);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += gy[0];
        });
    }
    return y;
}

} // namespace skincnn
