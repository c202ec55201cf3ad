#pragma once

#include <array>
#include <optional>
#include <vector>

#include "skincnn/image.hpp"

namespace skincnn {

inline double jaccard(const BinaryMask& pred, const BinaryMask& truth)
{
    SKINCNN_CHECK(pred.height == truth.height && pred.width == truth.width,
                  "jaccard dim mismatch: ", pred.height, "x", pred.width, " vs ", truth.height,
                  "x", truth.width);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.on.size(); ++i) {
        const bool p = pred.on[i] != 0, t = truth.on[i] != 0;
        inter += p && t;
        uni += p || t;
    }
    if (uni == 0)
        return 1.0; // both empty
    return double(inter) / double(uni);
}

inline double dice(const BinaryMask& pred, const BinaryMask& truth)
{
    SKINCNN_CHECK(pred.height == truth.height && pred.width == truth.width,
                  "dice dim mismatch: ", pred.height, "x", pred.width, " vs ", truth.height, "x",
                  truth.width);
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < pred.on.size(); ++i) {
        const bool p = pred.on[i] != 0, t = truth.on[i] != 0;
        inter += p && t;
        total += std::size_t(p) + std::size_t(t);
    }
    if (total == 0)
        return 1.0;
    return 2.0 * double(inter) / double(total);
}

struct ClassificationReport {
    double accuracy = 0;
    std::array<std::array<std::size_t, 3>, 3> confusion{}; // [truth][pred]
    std::array<std::optional<double>, 3> sensitivity;      // absent when no truth samples
    std::array<std::optional<double>, 3> specificity;      // absent when every sample is truth
    std::size_t total = 0;
};

inline ClassificationReport classification_report(const std::vector<int>& preds,
                                                  const std::vector<int>& truths)
{
    SKINCNN_CHECK(!truths.empty(), "classification report on empty input");
    SKINCNN_CHECK(preds.size() == truths.size(), "classification report got ", preds.size(),
                  " predictions for ", truths.size(), " truths");
    ClassificationReport rep;
    rep.total = truths.size();
    for (std::size_t i = 0; i < truths.size(); ++i) {
        SKINCNN_CHECK(truths[i] >= 0 && truths[i] < 3 && preds[i] >= 0 && preds[i] < 3,
                      "class index out of range at sample ", i);
        ++rep.confusion[std::size_t(truths[i])][std::size_t(preds[i])];
    }
    std::size_t correct = 0;
    for (int k = 0; k < 3; ++k)
        correct += rep.confusion[std::size_t(k)][std::size_t(k)];
    rep.accuracy = double(correct) / double(rep.total);
    for (int k = 0; k < 3; ++k) {
        std::size_t row = 0, col = 0;
        for (int j = 0; j < 3; ++j) {
            row += rep.confusion[std::size_t(k)][std::size_t(j)];
            col += rep.confusion[std::size_t(j)][std::size_t(k)];
        }
        const std::size_t tp = rep.confusion[std::size_t(k)][std::size_t(k)];
        if (row > 0)
            rep.sensitivity[std::size_t(k)] = double(tp) / double(row);
        if (rep.total > row)
            rep.specificity[std::size_t(k)] =
                double(rep.total - row - col + tp) / double(rep.total - row);
    }
    return rep;
}

struct SegReport {
    std::vector<double> per_image_jaccard;
    std::vector<double> per_image_dice;
    double mean_jaccard = 0;
    double mean_dice = 0;
};

inline SegReport seg_report(const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs)
{
    SKINCNN_CHECK(!pairs.empty(), "segmentation report on empty input");
    SegReport rep;
    for (const auto& [pred, truth] : pairs) {
        rep.per_image_jaccard.push_back(jaccard(pred, truth));
        rep.per_image_dice.push_back(dice(pred, truth));
        rep.mean_jaccard += rep.per_image_jaccard.back();
        rep.mean_dice += rep.per_image_dice.back();
    }
    rep.mean_jaccard /= double(pairs.size());
    rep.mean_dice /= double(pairs.size());
    return rep;
}

} // namespace skincnn
