#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "skincnn/tensor.hpp"

namespace skincnn {

// Central-difference gradient verification. Run with T = double; float has
// too little headroom between truncation and roundoff error.
//
// fn must rebuild the forward pass from the current tensor values on the
// given tape (or without recording when the tape is null) and return a
// scalar. Relative error per coordinate uses max(1, |analytic|, |numeric|)
// as the denominator.
template <typename T = double>
struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t coords = 0;
};

template <typename T>
GradCheck<T> grad_check_many(const std::function<Tensor<T>(Tape<T>*)>& fn,
                             const std::vector<Tensor<T>>& inputs, T eps = T(1e-5))
{
    GradCheck<T> result;
    std::vector<Tensor<T>> checked;
    for (const auto& x : inputs)
        if (x.requires_grad())
            checked.push_back(x);
    if (checked.empty())
        return result; // frozen inputs contribute no checked coordinates

    Tape<T> tape;
    Tensor<T> loss = fn(&tape);
    SKINCNN_CHECK(loss.size() == 1, "grad_check function must return a scalar, got shape ",
                  shape_str(loss.shape()));
    for (auto& x : checked)
        x.zero_grad();
    tape.backward(loss);

    for (auto& x : checked) {
        std::vector<T> analytic(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            analytic[i] = x.grad_at(i);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T saved = x.data()[i];
            x.data()[i] = saved + eps;
            const T fp = fn(nullptr).item();
            x.data()[i] = saved - eps;
            const T fm = fn(nullptr).item();
            x.data()[i] = saved;
            const T numeric = (fp - fm) / (2 * eps);
            const double denom = std::max({1.0, std::abs(double(analytic[i])), std::abs(double(numeric))});
            const double rel = std::abs(double(analytic[i]) - double(numeric)) / denom;
            result.max_rel_error = std::max(result.max_rel_error, rel);
            ++result.coords;
        }
        x.zero_grad();
    }
    return result;
}

template <typename T>
GradCheck<T> grad_check(const std::function<Tensor<T>(Tape<T>*, const Tensor<T>&)>& fn,
                        const Tensor<T>& x, T eps = T(1e-5))
{
    auto wrapped = [&](Tape<T>* tape) { return fn(tape, x); };
    return grad_check_many<T>(wrapped, {x}, eps);
}

// Redraws the checked point until a probed forward pass keeps every relu
// input and pool argmax at least 1e-3 from a decision flip, so central
// differences at eps=1e-5 never straddle a non-smooth point. draw() must
// refill the inputs (and may rebuild the model) before each probe.
template <typename ForwardFn, typename DrawFn>
void condition_smooth(const char* name, ForwardFn&& forward, DrawFn&& draw)
{
    SmoothnessProbe last;
    for (int attempt = 0; attempt < 500; ++attempt) {
        draw();
        Tape<double> tape;
        SmoothnessProbe probe;
        tape.probe = &probe;
        forward(&tape);
        if (probe.worst() > 1e-3)
            return;
        last = probe;
    }
    throw Error(cat(name, ": sampling could not clear relu/pool margins (last relu=",
                    last.min_relu_margin, " pool=", last.min_pool_margin, ")"));
}

} // namespace skincnn
