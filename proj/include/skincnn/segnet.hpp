#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skincnn/image.hpp"
#include "skincnn/ops.hpp"
#include "skincnn/param.hpp"
#include "skincnn/rng.hpp"

namespace skincnn {

struct SegConfig {
    std::size_t depth = 3;        // pool/upsample levels
    std::size_t base_filters = 32; // filters at level k = base_filters << k
    std::size_t in_channels = 3;
    std::size_t out_channels = 1;
};

namespace detail {

// He-normal weights drawn in double then cast, so float and double builds
// share the same construction stream.
template <typename T>
Tensor<T> he_tensor(const Shape& shape, std::size_t fan_in, Rng& rng)
{
    Tensor<T> t(shape);
    const double scale = std::sqrt(2.0 / double(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = T(rng.normal() * scale);
    return t;
}

template <typename T>
Tensor<T> add_conv_param(std::vector<Parameter<T>>& params, const std::string& name, Group group,
                         std::size_t out_c, std::size_t in_c, std::size_t k, Rng& rng)
{
    Tensor<T> w = he_tensor<T>({out_c, in_c, k, k}, in_c * k * k, rng);
    w.set_requires_grad(true);
    params.push_back({name + ".weight", w, group, true});
    Tensor<T> b = Tensor<T>::full({out_c}, T(0));
    b.set_requires_grad(true);
    params.push_back({name + ".bias", b, group, true});
    return w;
}

} // namespace detail

template <typename T>
struct SegModel {
    struct ConvPair {
        Tensor<T> w1, b1, w2, b2; // handles shared with params
    };

    SegConfig config;
    std::vector<Parameter<T>> params;
    std::vector<ConvPair> enc;
    ConvPair bottleneck;
    std::vector<ConvPair> dec; // dec[k] consumes the level-k skip
    Tensor<T> out_w, out_b;
};

template <typename T = float>
SegModel<T> build_segnet(const SegConfig& cfg, std::uint64_t seed)
{
    SKINCNN_CHECK(cfg.depth >= 1 && cfg.base_filters >= 1, "segnet config: depth ", cfg.depth,
                  ", base_filters ", cfg.base_filters, " (both must be >= 1)");
    SegModel<T> model;
    model.config = cfg;
    Rng rng(seed);

    auto conv_pair = [&](const std::string& prefix, std::size_t in_c, std::size_t out_c) {
        typename SegModel<T>::ConvPair pair;
        pair.w1 = detail::add_conv_param(model.params, prefix + ".conv1", Group::seg, out_c, in_c,
                                         3, rng);
        pair.b1 = model.params.back().tensor;
        pair.w2 = detail::add_conv_param(model.params, prefix + ".conv2", Group::seg, out_c, out_c,
                                         3, rng);
        pair.b2 = model.params.back().tensor;
        return pair;
    };

    std::size_t in_c = cfg.in_channels;
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        const std::size_t out_c = cfg.base_filters << k;
        model.enc.push_back(conv_pair("seg.enc" + std::to_string(k), in_c, out_c));
        in_c = out_c;
    }
    model.bottleneck = conv_pair("seg.bottleneck", in_c, cfg.base_filters << cfg.depth);

    model.dec.resize(cfg.depth);
    std::size_t below_c = cfg.base_filters << cfg.depth;
    for (std::size_t k = cfg.depth; k-- > 0;) {
        const std::size_t skip_c = cfg.base_filters << k;
        model.dec[k] = conv_pair("seg.dec" + std::to_string(k), below_c + skip_c, skip_c);
        below_c = skip_c;
    }

    model.out_w = detail::add_conv_param(model.params, "seg.out", Group::seg, cfg.out_channels,
                                         cfg.base_filters, 1, rng);
    model.out_b = model.params.back().tensor;
    check_unique_names(model.params);
    return model;
}

// Encoder/decoder pass with skip concats. Inputs whose spatial dims are not
// multiples of 2^depth are reflection-padded on the bottom/right and the
// logits cropped back, so output dims always equal input dims.
template <typename T>
Tensor<T> seg_forward(const SegModel<T>& model, std::type_identity_t<Tape<T>>* tape, const Tensor<T>& batch)
{
    SKINCNN_CHECK(batch.ndim() == 4 && batch.dim(1) == model.config.in_channels,
                  "seg_forward expects [N,", model.config.in_channels, ",H,W], got ",
                  shape_str(batch.shape()));
    const std::size_t H = batch.dim(2), W = batch.dim(3);
    const std::size_t unit = std::size_t(1) << model.config.depth;
    SKINCNN_CHECK(H >= unit && W >= unit, "seg_forward input ", H, "x", W,
                  " smaller than minimum ", unit, "x", unit);

    const std::size_t pad_h = (unit - H % unit) % unit;
    const std::size_t pad_w = (unit - W % unit) % unit;
    Tensor<T> x = batch;
    if (pad_h || pad_w)
        x = reflect_pad2d(tape, x, 0, pad_h, 0, pad_w);

    auto pair = [&](const typename SegModel<T>::ConvPair& p, const Tensor<T>& in) {
        Tensor<T> h = relu(tape, conv2d(tape, in, p.w1, p.b1, Padding::same));
        return relu(tape, conv2d(tape, h, p.w2, p.b2, Padding::same));
    };

    std::vector<Tensor<T>> skips;
    for (const auto& level : model.enc) {
        Tensor<T> feat = pair(level, x);
        skips.push_back(feat);
        x = max_pool2d(tape, feat);
    }
    x = pair(model.bottleneck, x);
    for (std::size_t k = model.config.depth; k-- > 0;) {
        x = upsample_nearest2x(tape, x);
        x = concat_channels(tape, x, skips[k]);
        x = pair(model.dec[k], x);
    }
    x = conv2d(tape, x, model.out_w, model.out_b, Padding::same);
    if (pad_h || pad_w)
        x = crop2d(tape, x, 0, 0, H, W);
    return x;
}

// Resize to the network's native 150x150, threshold sigmoid(logit) at 0.5,
// then map the mask back to the original image dims.
template <typename T>
BinaryMask predict_mask(const SegModel<T>& model, const RgbImage& image)
{
    const RgbImage resized = resize_bilinear(image, 150, 150);
    Tensor<T> input = to_tensor<T>(normalize(resized));
    Tensor<T> logits = seg_forward(model, static_cast<Tape<T>*>(nullptr), input);
    BinaryMask mask{150, 150, Bytes(150 * 150)};
    for (std::size_t i = 0; i < mask.on.size(); ++i)
        mask.on[i] = logits.data()[i] > T(0) ? 1 : 0; // sigmoid(z) > 0.5 iff z > 0
    if (image.height == 150 && image.width == 150)
        return mask;
    return resize_mask_nearest(mask, image.height, image.width);
}

} // namespace skincnn
