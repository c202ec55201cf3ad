#pragma once

#include <array>
#include <fstream>
#include <string>

#include "json.hpp"

#include "skincnn/training.hpp"

namespace skincnn {

struct PipelineResult {
    BinaryMask mask;
    RgbImage crop;
    std::array<double, 3> probabilities{};
    std::string predicted_label;
    bool empty_mask_fallback = false;
};

// Two-stage inference: segment, crop from the predicted mask, classify from
// the (full, crop) pair. An empty predicted mask falls back to the whole
// image as the crop and flags the result.
template <typename T>
PipelineResult classify_image(const SegModel<T>& seg, const RecModel<T>& rec,
                              const RgbImage& image)
{
    constexpr std::size_t S = 150;
    PipelineResult result;
    result.mask = predict_mask(seg, image);
    result.empty_mask_fallback = result.mask.count() == 0;
    result.crop = crop_from_mask(image, result.mask);

    Tensor<T> full = to_tensor<T>(normalize(resize_bilinear(image, S, S)));
    Tensor<T> crop = to_tensor<T>(normalize(result.crop));
    Tensor<T> probs = rec_forward(rec, static_cast<Tape<T>*>(nullptr), full, crop);
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        result.probabilities[c] = double(probs.data()[c]);
        if (probs.data()[c] > probs.data()[arg])
            arg = c; // ties keep the lowest index
    }
    result.predicted_label = label_names()[arg];
    return result;
}

inline nlohmann::ordered_json classify_json(const PipelineResult& result)
{
    nlohmann::ordered_json j;
    j["probabilities"] = result.probabilities;
    j["label"] = result.predicted_label;
    j["empty_mask_fallback"] = result.empty_mask_fallback;
    return j;
}

struct Config {
    SegConfig seg;
    RecConfig rec;
    TrainConfig train;
};

namespace detail {

inline bool parse_bool(const std::string& v, std::size_t line_no)
{
    if (v == "true" || v == "1" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "off")
        return false;
    throw Error(cat("config line ", line_no, ": expected a boolean, got \"", v, "\""));
}

template <typename F>
F parse_num(const std::string& v, std::size_t line_no)
{
    try {
        std::size_t used = 0;
        if constexpr (std::is_floating_point_v<F>) {
            const double d = std::stod(v, &used);
            if (used == v.size())
                return F(d);
        } else {
            const long long n = std::stoll(v, &used);
            if (used == v.size() && n >= 0)
                return F(n);
        }
    } catch (const std::exception&) {
    }
    throw Error(cat("config line ", line_no, ": bad numeric value \"", v, "\""));
}

} // namespace detail

// Flat key=value lines; '#' starts a comment; blank lines ignored.
inline Config parse_config_file(const std::string& path)
{
    std::ifstream in(path);
    SKINCNN_CHECK(in, "cannot open config: ", path);
    Config cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        const std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos)
            continue;
        const std::size_t eq = line.find('=');
        SKINCNN_CHECK(eq != std::string::npos, "config line ", line_no, ": expected key=value");
        auto trim = [](std::string s) {
            const std::size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos)
                return std::string();
            const std::size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        SKINCNN_CHECK(!key.empty() && !value.empty(), "config line ", line_no,
                      ": expected key=value");

        using detail::parse_bool;
        using detail::parse_num;
        if (key == "seg.depth")
            cfg.seg.depth = parse_num<std::size_t>(value, line_no);
        else if (key == "seg.base_filters")
            cfg.seg.base_filters = parse_num<std::size_t>(value, line_no);
        else if (key == "rec.stem_filters")
            cfg.rec.stem_filters = parse_num<std::size_t>(value, line_no);
        else if (key == "rec.num_blocks")
            cfg.rec.num_blocks = parse_num<std::size_t>(value, line_no);
        else if (key == "rec.block_width")
            cfg.rec.block_width = parse_num<std::size_t>(value, line_no);
        else if (key == "rec.head_units")
            cfg.rec.head_units = parse_num<std::size_t>(value, line_no);
        else if (key == "rec.share_backbones")
            cfg.rec.share_backbones = parse_bool(value, line_no);
        else if (key == "train.lr_head")
            cfg.train.lr_head = parse_num<double>(value, line_no);
        else if (key == "train.lr_finetune")
            cfg.train.lr_finetune = parse_num<double>(value, line_no);
        else if (key == "train.momentum")
            cfg.train.momentum = parse_num<double>(value, line_no);
        else if (key == "train.batch_size")
            cfg.train.batch_size = parse_num<std::size_t>(value, line_no);
        else if (key == "train.epochs")
            cfg.train.epochs = parse_num<std::size_t>(value, line_no);
        else if (key == "train.class_weighting")
            cfg.train.class_weighting = parse_bool(value, line_no);
        else if (key == "train.seg_loss") {
            if (value == "bce")
                cfg.train.seg_loss = SegLossKind::bce;
            else if (value == "bce_plus_dice")
                cfg.train.seg_loss = SegLossKind::bce_plus_dice;
            else
                throw Error(cat("config line ", line_no, ": seg_loss must be bce or bce_plus_dice"));
        } else {
            throw Error(cat("config line ", line_no, ": unknown key \"", key, "\""));
        }
    }
    return cfg;
}

} // namespace skincnn
