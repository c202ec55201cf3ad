#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "skincnn/dataset.hpp"
#include "skincnn/losses.hpp"
#include "skincnn/metrics.hpp"
#include "skincnn/optim.hpp"
#include "skincnn/recnet.hpp"
#include "skincnn/segnet.hpp"

namespace skincnn {

enum class SegLossKind { bce, bce_plus_dice };

struct TrainConfig {
    double lr_head = 1e-2;
    double lr_finetune = 0; // 0 selects lr_head / 10
    double momentum = 0.9;
    std::size_t batch_size = 8;
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    bool class_weighting = true;
    SegLossKind seg_loss = SegLossKind::bce;

    double finetune_lr() const { return lr_finetune > 0 ? lr_finetune : lr_head / 10.0; }

    void validate() const
    {
        SKINCNN_CHECK(lr_head > 0 && finetune_lr() > 0, "learning rates must be positive");
        SKINCNN_CHECK(batch_size >= 1, "batch_size must be >= 1");
        SKINCNN_CHECK(momentum >= 0 && momentum < 1, "momentum must be in [0,1), got ", momentum);
    }
};

struct EpochStats {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0;
    double val_metric = 0; // mean Jaccard (seg) or accuracy (cls); NaN without a val split
};

struct History {
    std::vector<EpochStats> epochs;
};

namespace detail {

constexpr std::size_t kNetSize = 150;

inline RgbImage load_record_image(const Manifest& manifest, const DatasetRecord& rec)
{
    return decode_image(read_file(manifest.resolve(rec.image)));
}

inline BinaryMask load_record_mask(const Manifest& manifest, const DatasetRecord& rec)
{
    SKINCNN_CHECK(rec.mask, "record ", rec.image, " has no mask");
    BinaryMask mask = binarize_mask(decode_gray(read_file(manifest.resolve(*rec.mask))));
    return mask;
}

inline void emit_history_line(std::ostream* log, const EpochStats& stats, const char* metric_name)
{
    if (!log)
        return;
    nlohmann::ordered_json j;
    j["epoch"] = stats.epoch;
    j["loss"] = stats.train_loss;
    j[metric_name] = std::isnan(stats.val_metric) ? nlohmann::json(nullptr)
                                                  : nlohmann::json(stats.val_metric);
    (*log) << j.dump() << "\n";
    log->flush();
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Parameter<T>>& params)
{
    std::vector<std::vector<T>> snap;
    snap.reserve(params.size());
    for (const auto& p : params)
        snap.emplace_back(p.tensor.data(), p.tensor.data() + p.tensor.size());
    return snap;
}

template <typename T>
void restore_params(std::vector<Parameter<T>>& params, const std::vector<std::vector<T>>& snap)
{
    for (std::size_t i = 0; i < params.size(); ++i)
        std::copy(snap[i].begin(), snap[i].end(), params[i].tensor.data());
}

} // namespace detail

// Mini-batch SGD on the train split; per-epoch validation Jaccard; the
// best-validation parameters are restored into the model at the end.
template <typename T>
History train_seg(SegModel<T>& model, const Manifest& manifest, const TrainConfig& cfg,
                  std::ostream* log = nullptr)
{
    cfg.validate();
    const auto train_idx = manifest.indices_of(Split::train);
    const auto val_idx = manifest.indices_of(Split::val);
    SKINCNN_CHECK(!train_idx.empty(), "train split is empty");
    for (std::size_t i : train_idx)
        SKINCNN_CHECK(manifest.records[i].mask, "train record ", manifest.records[i].image,
                      " has no mask");

    constexpr std::size_t S = detail::kNetSize;
    struct Sample {
        std::vector<float> input;  // 3*S*S normalized
        std::vector<float> target; // S*S in {0,1}
    };
    std::vector<Sample> train_cache;
    train_cache.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
        const auto& rec = manifest.records[i];
        Sample s;
        s.input = normalize(resize_bilinear(detail::load_record_image(manifest, rec), S, S)).values;
        BinaryMask mask = detail::load_record_mask(manifest, rec);
        if (mask.height != S || mask.width != S)
            mask = resize_mask_nearest(mask, S, S);
        s.target.assign(mask.on.begin(), mask.on.end());
        train_cache.push_back(std::move(s));
    }
    struct ValSample {
        RgbImage image;
        BinaryMask truth;
    };
    std::vector<ValSample> val_cache;
    for (std::size_t i : val_idx) {
        const auto& rec = manifest.records[i];
        SKINCNN_CHECK(rec.mask, "val record ", rec.image, " has no mask");
        val_cache.push_back(
            {detail::load_record_image(manifest, rec), detail::load_record_mask(manifest, rec)});
    }

    History history;
    OptimizerState<T> opt;
    const std::map<Group, T> lr = {{Group::seg, T(cfg.lr_head)}};
    double best_metric = -1;
    std::vector<std::vector<T>> best_snap;

    std::vector<std::size_t> order(train_cache.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng(cfg.seed).derive(0x5e9, epoch);
        shuffle_rng.shuffle(order.begin(), order.end());

        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t B = std::min(cfg.batch_size, order.size() - start);
            Tensor<T> batch({B, 3, S, S});
            Tensor<T> target({B, 1, S, S});
            for (std::size_t b = 0; b < B; ++b) {
                const Sample& s = train_cache[order[start + b]];
                for (std::size_t j = 0; j < 3 * S * S; ++j)
                    batch.data()[b * 3 * S * S + j] = T(s.input[j]);
                for (std::size_t j = 0; j < S * S; ++j)
                    target.data()[b * S * S + j] = T(s.target[j]);
            }
            Tape<T> tape;
            Tensor<T> logits = seg_forward(model, &tape, batch);
            Tensor<T> loss = bce_with_logits(&tape, logits, target);
            if (cfg.seg_loss == SegLossKind::bce_plus_dice)
                loss = add(&tape, loss, dice_with_logits(&tape, logits, target));
            tape.backward(loss);
            sgd_step(model.params, opt, lr, T(cfg.momentum));
            loss_sum += double(loss.item()) * double(B);
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss_sum / double(train_cache.size());
        if (val_cache.empty()) {
            stats.val_metric = std::nan("");
        } else {
            double jac = 0;
            for (const auto& v : val_cache)
                jac += jaccard(predict_mask(model, v.image), v.truth);
            stats.val_metric = jac / double(val_cache.size());
            if (stats.val_metric > best_metric) {
                best_metric = stats.val_metric;
                best_snap = detail::snapshot_params(model.params);
            }
        }
        history.epochs.push_back(stats);
        detail::emit_history_line(log, stats, "val_jaccard");
    }
    if (!best_snap.empty())
        detail::restore_params(model.params, best_snap);
    return history;
}

// Normalized 150x150 input pair for one record. Training uses the ground
// truth mask for the crop when present; validation and inference always crop
// from the segmentation model's prediction.
template <typename T>
struct ClsSample {
    std::vector<T> full, crop;
    int label = 0;
};

template <typename T>
ClsSample<T> make_cls_sample(const SegModel<T>& seg, const Manifest& manifest,
                             const DatasetRecord& rec, bool use_truth_mask)
{
    constexpr std::size_t S = detail::kNetSize;
    SKINCNN_CHECK(rec.label, "record ", rec.image, " has no label");
    const RgbImage image = detail::load_record_image(manifest, rec);
    BinaryMask mask;
    if (use_truth_mask && rec.mask)
        mask = detail::load_record_mask(manifest, rec);
    else
        mask = predict_mask(seg, image);
    if (mask.height != image.height || mask.width != image.width)
        mask = resize_mask_nearest(mask, image.height, image.width);
    ClsSample<T> s;
    s.full = normalize(resize_bilinear(image, S, S)).values;
    s.crop = normalize(crop_from_mask(image, mask)).values;
    s.label = *rec.label;
    return s;
}

template <typename T>
double cls_accuracy(const RecModel<T>& model, const std::vector<ClsSample<T>>& samples,
                    std::size_t batch_size)
{
    constexpr std::size_t S = detail::kNetSize;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t B = std::min(batch_size, samples.size() - start);
        Tensor<T> full({B, 3, S, S}), crop({B, 3, S, S});
        for (std::size_t b = 0; b < B; ++b) {
            const auto& s = samples[start + b];
            for (std::size_t j = 0; j < 3 * S * S; ++j) {
                full.data()[b * 3 * S * S + j] = T(s.full[j]);
                crop.data()[b * 3 * S * S + j] = T(s.crop[j]);
            }
        }
        Tensor<T> logits = rec_logits(model, static_cast<Tape<T>*>(nullptr), full, crop);
        for (std::size_t b = 0; b < B; ++b) {
            const T* row = logits.data() + b * logits.dim(1);
            std::size_t arg = 0;
            for (std::size_t c = 1; c < logits.dim(1); ++c)
                if (row[c] > row[arg])
                    arg = c; // ties keep the lowest index
            correct += int(arg) == samples[start + b].label;
        }
    }
    return double(correct) / double(samples.size());
}

// Two-phase classifier training. Phase selects the trainable set before any
// step; the head group uses lr_head and unfrozen backbone blocks lr_finetune.
template <typename T>
History train_cls(RecModel<T>& rec, const SegModel<T>& seg, const Manifest& manifest,
                  const TrainConfig& cfg, Phase phase, std::ostream* log = nullptr)
{
    cfg.validate();
    set_phase(rec, phase);
    const auto train_idx = manifest.indices_of(Split::train);
    const auto val_idx = manifest.indices_of(Split::val);
    SKINCNN_CHECK(!train_idx.empty(), "train split is empty");

    constexpr std::size_t S = detail::kNetSize;
    std::vector<ClsSample<T>> train_cache, val_cache;
    train_cache.reserve(train_idx.size());
    for (std::size_t i : train_idx)
        train_cache.push_back(make_cls_sample(seg, manifest, manifest.records[i], true));
    for (std::size_t i : val_idx)
        val_cache.push_back(make_cls_sample(seg, manifest, manifest.records[i], false));

    std::vector<T> weights(3, T(1));
    if (cfg.class_weighting) {
        const auto w = class_weights(manifest);
        for (int k = 0; k < 3; ++k)
            weights[std::size_t(k)] = T(w[std::size_t(k)]);
    }

    History history;
    OptimizerState<T> opt;
    const std::map<Group, T> lr = {{Group::head, T(cfg.lr_head)},
                                   {Group::backbone_full, T(cfg.finetune_lr())},
                                   {Group::backbone_crop, T(cfg.finetune_lr())}};
    double best_metric = -1;
    std::vector<std::vector<T>> best_snap;

    std::vector<std::size_t> order(train_cache.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng(cfg.seed).derive(0xc15, epoch);
        shuffle_rng.shuffle(order.begin(), order.end());

        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t B = std::min(cfg.batch_size, order.size() - start);
            Tensor<T> full({B, 3, S, S}), crop({B, 3, S, S});
            std::vector<int> labels(B);
            for (std::size_t b = 0; b < B; ++b) {
                const auto& s = train_cache[order[start + b]];
                for (std::size_t j = 0; j < 3 * S * S; ++j) {
                    full.data()[b * 3 * S * S + j] = T(s.full[j]);
                    crop.data()[b * 3 * S * S + j] = T(s.crop[j]);
                }
                labels[b] = s.label;
            }
            Tape<T> tape;
            Tensor<T> logits = rec_logits(rec, &tape, full, crop);
            Tensor<T> loss = softmax_cross_entropy(&tape, logits, labels, weights);
            tape.backward(loss);
            sgd_step(rec.params, opt, lr, T(cfg.momentum));
            loss_sum += double(loss.item()) * double(B);
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss_sum / double(train_cache.size());
        if (val_cache.empty()) {
            stats.val_metric = std::nan("");
        } else {
            stats.val_metric = cls_accuracy(rec, val_cache, cfg.batch_size);
            if (stats.val_metric > best_metric) {
                best_metric = stats.val_metric;
                best_snap = detail::snapshot_params(rec.params);
            }
        }
        history.epochs.push_back(stats);
        detail::emit_history_line(log, stats, "val_accuracy");
    }
    if (!best_snap.empty())
        detail::restore_params(rec.params, best_snap);
    return history;
}

template <typename T>
SegReport evaluate_seg(const SegModel<T>& model, const Manifest& manifest, Split split)
{
    const auto idx = manifest.indices_of(split);
    SKINCNN_CHECK(!idx.empty(), "split \"", split_name(split), "\" is empty");
    std::vector<std::pair<BinaryMask, BinaryMask>> pairs;
    for (std::size_t i : idx) {
        const auto& rec = manifest.records[i];
        SKINCNN_CHECK(rec.mask, "record ", rec.image, " has no mask for evaluation");
        const RgbImage image = detail::load_record_image(manifest, rec);
        pairs.emplace_back(predict_mask(model, image), detail::load_record_mask(manifest, rec));
    }
    return seg_report(pairs);
}

template <typename T>
ClassificationReport evaluate_cls(const RecModel<T>& rec, const SegModel<T>& seg,
                                  const Manifest& manifest, Split split)
{
    const auto idx = manifest.indices_of(split);
    SKINCNN_CHECK(!idx.empty(), "split \"", split_name(split), "\" is empty");
    std::vector<ClsSample<T>> samples;
    std::vector<int> truths;
    for (std::size_t i : idx) {
        samples.push_back(make_cls_sample(seg, manifest, manifest.records[i], false));
        truths.push_back(samples.back().label);
    }
    constexpr std::size_t S = detail::kNetSize;
    std::vector<int> preds;
    for (std::size_t start = 0; start < samples.size(); start += 8) {
        const std::size_t B = std::min<std::size_t>(8, samples.size() - start);
        Tensor<T> full({B, 3, S, S}), crop({B, 3, S, S});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < 3 * S * S; ++j) {
                full.data()[b * 3 * S * S + j] = T(samples[start + b].full[j]);
                crop.data()[b * 3 * S * S + j] = T(samples[start + b].crop[j]);
            }
        }
        Tensor<T> logits = rec_logits(rec, static_cast<Tape<T>*>(nullptr), full, crop);
        for (std::size_t b = 0; b < B; ++b) {
            const T* row = logits.data() + b * logits.dim(1);
            std::size_t arg = 0;
            for (std::size_t c = 1; c < logits.dim(1); ++c)
                if (row[c] > row[arg])
                    arg = c;
            preds.push_back(int(arg));
        }
    }
    return classification_report(preds, truths);
}

} // namespace skincnn
