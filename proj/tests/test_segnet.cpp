#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "skincnn/grad_check.hpp"
#include "skincnn/segnet.hpp"

namespace skincnn {
namespace {

Tensor<float> random_input(Shape shape, std::uint64_t seed)
{
    Tensor<float> x(shape);
    Rng rng(seed);
    for (std::size_t i = 0; i < x.size(); ++i)
        x.data()[i] = float(rng.uniform(-1, 1));
    return x;
}

TEST(Segnet, TinyConfigNamesAndShapesEnumerable)
{
    SegConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 1;
    SegModel<float> model = build_segnet<float>(cfg, 0);

    const std::map<std::string, Shape> expected = {
        {"seg.enc0.conv1.weight", {1, 3, 3, 3}},  {"seg.enc0.conv1.bias", {1}},
        {"seg.enc0.conv2.weight", {1, 1, 3, 3}},  {"seg.enc0.conv2.bias", {1}},
        {"seg.bottleneck.conv1.weight", {2, 1, 3, 3}}, {"seg.bottleneck.conv1.bias", {2}},
        {"seg.bottleneck.conv2.weight", {2, 2, 3, 3}}, {"seg.bottleneck.conv2.bias", {2}},
        {"seg.dec0.conv1.weight", {1, 3, 3, 3}},  {"seg.dec0.conv1.bias", {1}},
        {"seg.dec0.conv2.weight", {1, 1, 3, 3}},  {"seg.dec0.conv2.bias", {1}},
        {"seg.out.weight", {1, 1, 1, 1}},         {"seg.out.bias", {1}},
    };
    ASSERT_EQ(model.params.size(), expected.size());
    for (const auto& p : model.params) {
        auto it = expected.find(p.name);
        ASSERT_NE(it, expected.end()) << "unexpected parameter " << p.name;
        EXPECT_EQ(p.tensor.shape(), it->second) << p.name;
        EXPECT_EQ(p.group, Group::seg) << p.name;
        EXPECT_TRUE(p.trainable) << p.name;
    }
}

TEST(Segnet, ParameterCountsHandDerived)
{
    SegConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 1;
    auto count = [](const SegModel<float>& m) {
        std::size_t n = 0;
        for (const auto& p : m.params)
            n += p.tensor.size();
        return n;
    };
    EXPECT_EQ(count(build_segnet<float>(cfg, 0)), 136u);
    cfg.base_filters = 2;
    EXPECT_EQ(count(build_segnet<float>(cfg, 0)), 469u);
}

TEST(Segnet, SameSeedBitIdentical)
{
    SegConfig cfg;
    cfg.depth = 2;
    cfg.base_filters = 4;
    SegModel<float> a = build_segnet<float>(cfg, 123);
    SegModel<float> b = build_segnet<float>(cfg, 123);
    ASSERT_EQ(a.params.size(), b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        ASSERT_EQ(a.params[i].name, b.params[i].name);
        for (std::size_t j = 0; j < a.params[i].tensor.size(); ++j)
            ASSERT_EQ(a.params[i].tensor.data()[j], b.params[i].tensor.data()[j]);
    }
    SegModel<float> c = build_segnet<float>(cfg, 124);
    bool any_diff = false;
    for (std::size_t j = 0; j < a.params[0].tensor.size(); ++j)
        any_diff = any_diff || a.params[0].tensor.data()[j] != c.params[0].tensor.data()[j];
    EXPECT_TRUE(any_diff);
}

TEST(Segnet, BiasesStartZeroWeightsDoNot)
{
    SegConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 2;
    SegModel<float> model = build_segnet<float>(cfg, 3);
    for (const auto& p : model.params) {
        const bool is_bias = p.name.size() > 5 && p.name.rfind(".bias") == p.name.size() - 5;
        double mag = 0;
        for (std::size_t j = 0; j < p.tensor.size(); ++j)
            mag += std::abs(double(p.tensor.data()[j]));
        if (is_bias)
            EXPECT_EQ(mag, 0.0) << p.name;
        else
            EXPECT_GT(mag, 0.0) << p.name;
    }
}

TEST(Segnet, ForwardPadsAndCropsTo150)
{
    SegConfig cfg;
    cfg.depth = 3;
    cfg.base_filters = 2;
    SegModel<float> model = build_segnet<float>(cfg, 9);
    Tensor<float> x = random_input({2, 3, 150, 150}, 40);
    const Tensor<float> y = seg_forward(model, nullptr, x);
    EXPECT_EQ(y.shape(), (Shape{2, 1, 150, 150}));
    for (std::size_t i = 0; i < y.size(); ++i)
        ASSERT_TRUE(std::isfinite(y.data()[i]));
}

TEST(Segnet, ForwardExactMultipleNeedsNoPad)
{
    SegConfig cfg;
    cfg.depth = 3;
    cfg.base_filters = 2;
    SegModel<float> model = build_segnet<float>(cfg, 9);
    Tensor<float> x = random_input({1, 3, 64, 64}, 41);
    EXPECT_EQ(seg_forward(model, nullptr, x).shape(), (Shape{1, 1, 64, 64}));
}

TEST(Segnet, TooSmallInputRejected)
{
    SegConfig cfg;
    cfg.depth = 3;
    cfg.base_filters = 1;
    SegModel<float> model = build_segnet<float>(cfg, 9);
    Tensor<float> x = random_input({1, 3, 7, 30}, 42);
    EXPECT_THROW(seg_forward(model, nullptr, x), Error);
}

TEST(Segnet, OutputDimsMatchInputDimsProperty)
{
    SegConfig cfg;
    cfg.depth = 3;
    cfg.base_filters = 1;
    SegModel<float> model = build_segnet<float>(cfg, 17);
    Rng rng(555);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 16 + rng.below(185), w = 16 + rng.below(185);
        Tensor<float> x = random_input({1, 3, h, w}, 1000 + std::uint64_t(trial));
        const Tensor<float> y = seg_forward(model, nullptr, x);
        ASSERT_EQ(y.shape(), (Shape{1, 1, h, w})) << h << "x" << w;
    }
}

TEST(Segnet, ForwardDeterministic)
{
    SegConfig cfg;
    cfg.depth = 2;
    cfg.base_filters = 4;
    SegModel<float> model = build_segnet<float>(cfg, 21);
    Tensor<float> x = random_input({1, 3, 30, 46}, 43);
    const Tensor<float> a = seg_forward(model, nullptr, x);
    const Tensor<float> b = seg_forward(model, nullptr, x);
    for (std::size_t i = 0; i < a.size(); ++i)
        ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Segnet, PredictMaskDimsMatchImage)
{
    SegConfig cfg;
    cfg.depth = 2;
    cfg.base_filters = 2;
    SegModel<float> model = build_segnet<float>(cfg, 31);
    RgbImage img;
    img.height = 97;
    img.width = 123;
    img.pixels.resize(97 * 123 * 3);
    Rng rng(8);
    for (auto& p : img.pixels)
        p = std::uint8_t(rng.below(256));
    const BinaryMask mask = predict_mask(model, img);
    EXPECT_EQ(mask.height, 97u);
    EXPECT_EQ(mask.width, 123u);
}

TEST(Segnet, SaturatedLogitBiasControlsMask)
{
    SegConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 1;
    SegModel<float> model = build_segnet<float>(cfg, 2);
    Parameter<float>* w = find_param(model.params, "seg.out.weight");
    Parameter<float>* b = find_param(model.params, "seg.out.bias");
    ASSERT_NE(w, nullptr);
    ASSERT_NE(b, nullptr);
    w->tensor.data()[0] = 0.0f;

    RgbImage img;
    img.height = 40;
    img.width = 40;
    img.pixels.assign(40 * 40 * 3, 120);
    img.pixels[0] = 10; // keep the image non-constant

    b->tensor.data()[0] = 50.0f;
    EXPECT_EQ(predict_mask(model, img).count(), 40u * 40u);
    b->tensor.data()[0] = -50.0f;
    EXPECT_EQ(predict_mask(model, img).count(), 0u);
}

TEST(Segnet, TinyEndToEndGradientCheck)
{
    SegConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 1;
    SegModel<double> model = build_segnet<double>(cfg, 11);
    Tensor<double> x({1, 3, 8, 8});
    x.set_requires_grad(true);
    Rng rng(12);
    condition_smooth(
        "segnet", [&](Tape<double>* t) { seg_forward(model, t, x); },
        [&] {
            model = build_segnet<double>(cfg, rng.next_u64());
            for (std::size_t i = 0; i < x.size(); ++i)
                x.data()[i] = rng.uniform(-1, 1);
        });
    std::vector<Tensor<double>> inputs;
    for (auto& p : model.params)
        inputs.push_back(p.tensor);
    inputs.push_back(x);
    const auto r = grad_check_many<double>(
        [&](Tape<double>* t) {
            Tensor<double> y = seg_forward(model, t, x);
            return sum(t, mul(t, y, y));
        },
        inputs);
    EXPECT_LE(r.max_rel_error, 1e-4);
    EXPECT_EQ(r.coords, 136u + 192u);
}

} // namespace
} // namespace skincnn
