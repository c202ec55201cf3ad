#pragma once

#include <cmath>
#include <vector>

#include "skincnn/ops.hpp"

namespace skincnn {

// Mean binary cross entropy on logits, computed in the stable form
// max(z,0) - z*y + log(1 + exp(-|z|)). Targets are 0/1 values of the same
// shape and are treated as constants.
template <typename T>
Tensor<T> bce_with_logits(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& logits, const Tensor<T>& target)
{
    SKINCNN_CHECK(logits.shape() == target.shape(), "bce shape mismatch: logits ",
                  shape_str(logits.shape()), " vs target ", shape_str(target.shape()));
    const std::size_t n = logits.size();
    SKINCNN_CHECK(n > 0, "bce on empty tensor");
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T z = logits.data()[i];
        const T y = target.data()[i];
        acc += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor<T> out = Tensor<T>::scalar(acc / T(n));
    const bool rec = tape && logits.requires_grad();
    out.set_requires_grad(rec);
    if (rec) {
        tape->record(out, [tape, logits, target, n](const std::vector<T>& gout) {
            auto& gz = tape->adjoint(logits);
            const T scale = gout[0] / T(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T p = detail::stable_sigmoid(logits.data()[i]);
                gz[i] += scale * (p - target.data()[i]);
            }
        });
    }
    return out;
}

// Soft dice loss on logits: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
// with p = sigmoid(z) and eps = 1 guarding the empty-empty case.
template <typename T>
Tensor<T> dice_with_logits(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& logits, const Tensor<T>& target)
{
    SKINCNN_CHECK(logits.shape() == target.shape(), "dice shape mismatch: logits ",
                  shape_str(logits.shape()), " vs target ", shape_str(target.shape()));
    const std::size_t n = logits.size();
    const T eps = T(1);
    std::vector<T> p(n);
    T inter = 0, psum = 0, ysum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = detail::stable_sigmoid(logits.data()[i]);
        inter += p[i] * target.data()[i];
        psum += p[i];
        ysum += target.data()[i];
    }
    const T denom = psum + ysum + eps;
    Tensor<T> out = Tensor<T>::scalar(T(1) - (2 * inter + eps) / denom);
    const bool rec = tape && logits.requires_grad();
    out.set_requires_grad(rec);
    if (rec) {
        tape->record(out, [tape, logits, target, p = std::move(p), inter, denom,
                           n](const std::vector<T>& gout) {
            auto& gz = tape->adjoint(logits);
            const T num = 2 * inter + T(1);
            for (std::size_t i = 0; i < n; ++i) {
                // d/dp of -(2A+eps)/(B+eps), then the sigmoid jacobian
                const T dp = -(2 * target.data()[i] * denom - num) / (denom * denom);
                gz[i] += gout[0] * dp * p[i] * (T(1) - p[i]);
            }
        });
    }
    return out;
}

// Weighted multiclass cross entropy fused with softmax:
// loss = (1/N) * sum_i w[y_i] * (logsumexp(z_i) - z_i[y_i]).
// With unit weights the logit gradient is (softmax(z) - onehot(y)) / N.
template <typename T>
Tensor<T> softmax_cross_entropy(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& logits,
                                const std::vector<int>& labels, const std::vector<T>& weights)
{
    SKINCNN_CHECK(logits.ndim() == 2, "cross entropy expects [N,C] logits, got ",
                  shape_str(logits.shape()));
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    SKINCNN_CHECK(labels.size() == N, "cross entropy got ", labels.size(), " labels for batch ", N);
    SKINCNN_CHECK(weights.size() == C, "cross entropy got ", weights.size(), " weights for ", C,
                  " classes");
    for (int y : labels)
        SKINCNN_CHECK(y >= 0 && std::size_t(y) < C, "label ", y, " out of range [0,", C, ")");
    T acc = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const T* z = logits.data() + i * C;
        T m = z[0];
        for (std::size_t c = 1; c < C; ++c)
            m = std::max(m, z[c]);
        T s = 0;
        for (std::size_t c = 0; c < C; ++c)
            s += std::exp(z[c] - m);
        const T lse = m + std::log(s);
        acc += weights[std::size_t(labels[i])] * (lse - z[labels[i]]);
    }
    Tensor<T> out = Tensor<T>::scalar(acc / T(N));
    const bool rec = tape && logits.requires_grad();
    out.set_requires_grad(rec);
    if (rec) {
        tape->record(out, [tape, logits, labels, weights, N, C](const std::vector<T>& gout) {
            auto& gz = tape->adjoint(logits);
            for (std::size_t i = 0; i < N; ++i) {
                const T* z = logits.data() + i * C;
                T m = z[0];
                for (std::size_t c = 1; c < C; ++c)
                    m = std::max(m, z[c]);
                T s = 0;
                for (std::size_t c = 0; c < C; ++c)
                    s += std::exp(z[c] - m);
                const T w = weights[std::size_t(labels[i])] * gout[0] / T(N);
                for (std::size_t c = 0; c < C; ++c) {
                    T p = std::exp(z[c] - m) / s;
                    gz[i * C + c] += w * (p - (std::ptrdiff_t(c) == labels[i] ? T(1) : T(0)));
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& logits,
                                const std::vector<int>& labels)
{
    return softmax_cross_entropy(tape, logits, labels,
                                 std::vector<T>(logits.dim(1), T(1)));
}

} // namespace skincnn
