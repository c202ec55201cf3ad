#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "skincnn/ops.hpp"
#include "skincnn/param.hpp"
#include "skincnn/segnet.hpp"

namespace skincnn {

struct RecConfig {
    std::size_t stem_filters = 8;
    std::size_t num_blocks = 4; // >= 2, the last two are the fine-tune set
    std::size_t block_width = 1;
    std::size_t head_units = 1024;
    std::size_t num_classes = 3;
    bool share_backbones = false;

    // branch unit width of block i; the block concat emits 4x this
    std::size_t units(std::size_t i) const { return stem_filters * block_width << i; }
    std::size_t feature_channels() const { return 4 * units(num_blocks - 1); }
};

enum class Phase {
    HeadOnly,        // only the head trains
    FineTuneLastTwo, // head plus the final two blocks of both backbones
};

template <typename T>
struct RecModel {
    struct Block {
        Tensor<T> b1_w, b1_b;                             // 1x1
        Tensor<T> b2a_w, b2a_b, b2b_w, b2b_b;             // 1x1 -> 3x3
        Tensor<T> b3a_w, b3a_b, b3b_w, b3b_b, b3c_w, b3c_b; // 1x1 -> 3x3 -> 3x3
        Tensor<T> b4_w, b4_b;                             // pool -> 1x1
    };
    struct Backbone {
        Tensor<T> stem_w, stem_b;
        std::vector<Block> blocks;
    };

    RecConfig config;
    std::vector<Parameter<T>> params;
    std::vector<int> block_of; // per params entry: block index, -1 for stem/head
    Backbone full, crop;
    Tensor<T> fc_full_w, fc_full_b, fc_crop_w, fc_crop_b, out_w, out_b;
    Phase phase = Phase::HeadOnly;
};

template <typename T>
void set_phase(RecModel<T>& model, Phase phase)
{
    const int cutoff = int(model.config.num_blocks) - 2;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i];
        bool on = p.group == Group::head;
        if (phase == Phase::FineTuneLastTwo && !on &&
            (p.group == Group::backbone_full || p.group == Group::backbone_crop))
            on = model.block_of[i] >= cutoff;
        set_trainable(p, on);
    }
    model.phase = phase;
}

template <typename T = float>
RecModel<T> build_recnet(const RecConfig& cfg, std::uint64_t seed)
{
    SKINCNN_CHECK(cfg.num_blocks >= 2, "recnet needs num_blocks >= 2, got ", cfg.num_blocks);
    SKINCNN_CHECK(cfg.stem_filters >= 1 && cfg.block_width >= 1 && cfg.head_units >= 1,
                  "recnet config fields must be >= 1");
    RecModel<T> model;
    model.config = cfg;
    Rng rng(seed);

    auto conv = [&](const std::string& name, Group group, int block, std::size_t out_c,
                    std::size_t in_c, std::size_t k) {
        Tensor<T> w = detail::add_conv_param(model.params, name, group, out_c, in_c, k, rng);
        model.block_of.push_back(block);
        model.block_of.push_back(block); // weight and bias entries
        return std::pair{w, model.params.back().tensor};
    };

    auto backbone = [&](const std::string& prefix, Group group) {
        typename RecModel<T>::Backbone bb;
        std::tie(bb.stem_w, bb.stem_b) = conv(prefix + "stem.conv", group, -1, cfg.stem_filters,
                                              3, 3);
        std::size_t in_c = cfg.stem_filters;
        for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
            const std::size_t u = cfg.units(i);
            const std::string bp = prefix + "block" + std::to_string(i) + ".";
            const int bi = int(i);
            typename RecModel<T>::Block blk;
            std::tie(blk.b1_w, blk.b1_b) = conv(bp + "b1.conv1", group, bi, u, in_c, 1);
            std::tie(blk.b2a_w, blk.b2a_b) = conv(bp + "b2.conv1", group, bi, u, in_c, 1);
            std::tie(blk.b2b_w, blk.b2b_b) = conv(bp + "b2.conv2", group, bi, u, u, 3);
            std::tie(blk.b3a_w, blk.b3a_b) = conv(bp + "b3.conv1", group, bi, u, in_c, 1);
            std::tie(blk.b3b_w, blk.b3b_b) = conv(bp + "b3.conv2", group, bi, u, u, 3);
            std::tie(blk.b3c_w, blk.b3c_b) = conv(bp + "b3.conv3", group, bi, u, u, 3);
            std::tie(blk.b4_w, blk.b4_b) = conv(bp + "b4.conv1", group, bi, u, in_c, 1);
            bb.blocks.push_back(blk);
            in_c = 4 * u;
        }
        return bb;
    };

    model.full = backbone("full.", Group::backbone_full);
    model.crop = cfg.share_backbones ? model.full : backbone("crop.", Group::backbone_crop);

    auto fc = [&](const std::string& name, std::size_t in_f, std::size_t out_f) {
        Tensor<T> w = detail::he_tensor<T>({in_f, out_f}, in_f, rng);
        w.set_requires_grad(true);
        model.params.push_back({name + ".weight", w, Group::head, true});
        Tensor<T> b = Tensor<T>::full({out_f}, T(0));
        b.set_requires_grad(true);
        model.params.push_back({name + ".bias", b, Group::head, true});
        model.block_of.push_back(-1);
        model.block_of.push_back(-1);
        return std::pair{w, b};
    };
    const std::size_t feat = cfg.feature_channels();
    std::tie(model.fc_full_w, model.fc_full_b) = fc("head.fc_full", feat, cfg.head_units);
    std::tie(model.fc_crop_w, model.fc_crop_b) = fc("head.fc_crop", feat, cfg.head_units);
    std::tie(model.out_w, model.out_b) = fc("head.out", 2 * cfg.head_units, cfg.num_classes);

    check_unique_names(model.params);
    set_phase(model, Phase::HeadOnly);
    return model;
}

namespace detail {

// 2x2 max pool that first reflection-pads odd spatial dims up to even.
template <typename T>
Tensor<T> pool_even(std::type_identity_t<Tape<T>>* tape, const Tensor<T>& x)
{
    Tensor<T> in = x;
    const std::size_t ph = x.dim(2) % 2, pw = x.dim(3) % 2;
    if (ph || pw)
        in = reflect_pad2d(tape, in, 0, ph, 0, pw);
    return max_pool2d(tape, in);
}

template <typename T>
Tensor<T> inception_block(std::type_identity_t<Tape<T>>* tape, const typename RecModel<T>::Block& blk,
                          const Tensor<T>& x)
{
    Tensor<T> p1 = relu(tape, conv2d(tape, x, blk.b1_w, blk.b1_b, Padding::same));
    Tensor<T> p2 = relu(tape, conv2d(tape, x, blk.b2a_w, blk.b2a_b, Padding::same));
    p2 = relu(tape, conv2d(tape, p2, blk.b2b_w, blk.b2b_b, Padding::same));
    Tensor<T> p3 = relu(tape, conv2d(tape, x, blk.b3a_w, blk.b3a_b, Padding::same));
    p3 = relu(tape, conv2d(tape, p3, blk.b3b_w, blk.b3b_b, Padding::same));
    p3 = relu(tape, conv2d(tape, p3, blk.b3c_w, blk.b3c_b, Padding::same));
    Tensor<T> p4 = max_pool2d_same3(tape, x);
    p4 = relu(tape, conv2d(tape, p4, blk.b4_w, blk.b4_b, Padding::same));
    return concat_channels(tape, concat_channels(tape, p1, p2), concat_channels(tape, p3, p4));
}

template <typename T>
Tensor<T> backbone_features(std::type_identity_t<Tape<T>>* tape, const typename RecModel<T>::Backbone& bb,
                            const Tensor<T>& x)
{
    Tensor<T> h = relu(tape, conv2d(tape, x, bb.stem_w, bb.stem_b, Padding::valid, 2));
    h = pool_even(tape, h);
    for (std::size_t i = 0; i < bb.blocks.size(); ++i) {
        h = inception_block<T>(tape, bb.blocks[i], h);
        if (i + 1 < bb.blocks.size())
            h = pool_even(tape, h);
    }
    return global_avg_pool(tape, h);
}

} // namespace detail

// Class logits [N, num_classes] from the two normalized input batches.
template <typename T>
Tensor<T> rec_logits(const RecModel<T>& model, std::type_identity_t<Tape<T>>* tape, const Tensor<T>& full,
                     const Tensor<T>& crop)
{
    SKINCNN_CHECK(full.ndim() == 4 && crop.ndim() == 4 && full.dim(1) == 3 && crop.dim(1) == 3,
                  "rec_forward expects [N,3,H,W] batches, got ", shape_str(full.shape()), " and ",
                  shape_str(crop.shape()));
    SKINCNN_CHECK(full.dim(0) == crop.dim(0), "rec_forward batch mismatch: full N=", full.dim(0),
                  " vs crop N=", crop.dim(0));
    SKINCNN_CHECK(full.dim(2) >= 3 && full.dim(3) >= 3 && crop.dim(2) >= 3 && crop.dim(3) >= 3,
                  "rec_forward inputs must be at least 3x3");
    Tensor<T> f = detail::backbone_features<T>(tape, model.full, full);
    Tensor<T> c = detail::backbone_features<T>(tape, model.crop, crop);
    f = dense(tape, f, model.fc_full_w, model.fc_full_b);
    c = dense(tape, c, model.fc_crop_w, model.fc_crop_b);
    return dense(tape, concat_channels(tape, f, c), model.out_w, model.out_b);
}

// Class probabilities; rows sum to 1. Order: melanoma, nevus, seborrheic_keratosis.
template <typename T>
Tensor<T> rec_forward(const RecModel<T>& model, std::type_identity_t<Tape<T>>* tape, const Tensor<T>& full,
                      const Tensor<T>& crop)
{
    return softmax(tape, rec_logits(model, tape, full, crop));
}

enum class BranchSelect { full, crop, both };

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> skipped;
};

// Copies checkpoint tensors into the selected backbone(s). An exact name
// match wins; otherwise names match with the branch prefix stripped, so a
// checkpoint saved from either branch loads into any branch. Head parameters
// are never touched.
template <typename T>
LoadReport load_backbone_checkpoint(RecModel<T>& model, const Checkpoint& ckpt,
                                    BranchSelect branch)
{
    auto suffix_of = [](const std::string& name) {
        for (const char* prefix : {"full.", "crop."})
            if (name.rfind(prefix, 0) == 0)
                return name.substr(5);
        return name;
    };
    std::unordered_map<std::string, const CheckpointTensor*> by_name, by_suffix;
    for (const auto& t : ckpt) {
        by_name[t.name] = &t;
        by_suffix[suffix_of(t.name)] = &t;
    }

    LoadReport report;
    std::unordered_set<const CheckpointTensor*> used;
    for (auto& p : model.params) {
        const bool want = (p.group == Group::backbone_full &&
                           (branch == BranchSelect::full || branch == BranchSelect::both)) ||
                          (p.group == Group::backbone_crop &&
                           (branch == BranchSelect::crop || branch == BranchSelect::both));
        if (!want)
            continue;
        const CheckpointTensor* t = nullptr;
        if (auto it = by_name.find(p.name); it != by_name.end())
            t = it->second;
        else if (auto it2 = by_suffix.find(suffix_of(p.name)); it2 != by_suffix.end())
            t = it2->second;
        if (!t) {
            report.skipped.push_back(p.name);
            continue;
        }
        SKINCNN_CHECK(t->shape == p.tensor.shape(), "backbone load shape mismatch for ", p.name,
                      ": file ", shape_str(t->shape), " vs model ", shape_str(p.tensor.shape()));
        for (std::size_t i = 0; i < t->values.size(); ++i)
            p.tensor.data()[i] = T(t->values[i]);
        report.loaded.push_back(p.name);
        used.insert(t);
    }
    for (const auto& t : ckpt)
        if (!used.count(&t))
            report.skipped.push_back(t.name);
    return report;
}

} // namespace skincnn
