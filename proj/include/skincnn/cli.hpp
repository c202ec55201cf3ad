#pragma once

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "skincnn/grad_check.hpp"
#include "skincnn/pipeline.hpp"

namespace skincnn {

namespace cli_detail {

inline Config load_config(const std::string& path)
{
    return path.empty() ? Config{} : parse_config_file(path);
}

inline Split parse_split(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "val")
        return Split::val;
    if (s == "test")
        return Split::test;
    throw Error(cat("unknown split \"", s, "\" (expected train, val, or test)"));
}

inline SegModel<float> load_seg_model(const Config& cfg, const std::string& path)
{
    SegModel<float> model = build_segnet<float>(cfg.seg, 0);
    assign_from_checkpoint(model.params, load_checkpoint(path));
    return model;
}

inline RecModel<float> load_rec_model(const Config& cfg, const std::string& path)
{
    RecModel<float> model = build_recnet<float>(cfg.rec, 0);
    assign_from_checkpoint(model.params, load_checkpoint(path));
    return model;
}

inline nlohmann::ordered_json report_json(const ClassificationReport& rep)
{
    nlohmann::ordered_json j;
    j["count"] = rep.total;
    j["accuracy"] = rep.accuracy;
    j["confusion"] = rep.confusion;
    auto optional_array = [](const std::array<std::optional<double>, 3>& vals) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& v : vals)
            arr.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
        return arr;
    };
    j["sensitivity"] = optional_array(rep.sensitivity);
    j["specificity"] = optional_array(rep.specificity);
    return j;
}

// Compact double-precision derivative audit used by the grad-check command.
struct GradCheckCase {
    std::string name;
    double max_rel_error;
    std::size_t coords;
};

inline std::vector<GradCheckCase> run_grad_checks(std::uint64_t seed)
{
    std::vector<GradCheckCase> results;
    Rng rng(seed);
    auto rand_t = [&](const Shape& shape, double lo = -1, double hi = 1) {
        Tensor<double> t(shape);
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data()[i] = rng.uniform(lo, hi);
        t.set_requires_grad(true);
        return t;
    };
    auto run = [&](const std::string& name, const std::function<Tensor<double>(Tape<double>*)>& fn,
                   const std::vector<Tensor<double>>& inputs) {
        const auto r = grad_check_many<double>(fn, inputs);
        results.push_back({name, r.max_rel_error, r.coords});
    };

    {
        auto x = rand_t({1, 2, 5, 5}), w = rand_t({3, 2, 3, 3}), b = rand_t({3});
        run("conv2d_same", [&](Tape<double>* t) {
            auto y = conv2d(t, x, w, b, Padding::same);
            return sum(t, mul(t, y, y));
        }, {x, w, b});
    }
    {
        auto x = rand_t({1, 2, 7, 7}), w = rand_t({2, 2, 3, 3}), b = rand_t({2});
        run("conv2d_valid_stride2", [&](Tape<double>* t) {
            auto y = conv2d(t, x, w, b, Padding::valid, 2);
            return sum(t, mul(t, y, y));
        }, {x, w, b});
    }
    auto refill = [&](Tensor<double>& t, double lo = -1, double hi = 1) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data()[i] = rng.uniform(lo, hi);
    };
    {
        auto x = rand_t({1, 2, 6, 6});
        condition_smooth("max_pool2d", [&](Tape<double>* t) { max_pool2d(t, x); }, [&] { refill(x); });
        run("max_pool2d", [&](Tape<double>* t) {
            auto y = max_pool2d(t, x);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto x = rand_t({1, 2, 5, 5});
        condition_smooth("max_pool2d_same3", [&](Tape<double>* t) { max_pool2d_same3(t, x); }, [&] { refill(x); });
        run("max_pool2d_same3", [&](Tape<double>* t) {
            auto y = max_pool2d_same3(t, x);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto x = rand_t({1, 2, 3, 4});
        run("upsample_nearest2x", [&](Tape<double>* t) {
            auto y = upsample_nearest2x(t, x);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto a = rand_t({1, 2, 4, 4}), b = rand_t({1, 3, 4, 4});
        run("concat_channels", [&](Tape<double>* t) {
            auto y = concat_channels(t, a, b);
            return sum(t, mul(t, y, y));
        }, {a, b});
    }
    {
        auto x = rand_t({3, 4}), w = rand_t({4, 2}), b = rand_t({2});
        run("dense", [&](Tape<double>* t) {
            auto y = dense(t, x, w, b);
            return sum(t, mul(t, y, y));
        }, {x, w, b});
    }
    {
        auto x = rand_t({2, 6}, 0.1, 1.0);
        run("relu", [&](Tape<double>* t) {
            return sum(t, relu(t, x));
        }, {x});
    }
    {
        auto x = rand_t({2, 6}, -3, 3);
        run("sigmoid", [&](Tape<double>* t) {
            auto y = sigmoid(t, x);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto x = rand_t({3, 3}, -2, 2);
        auto w = rand_t({3, 3});
        w.set_requires_grad(false);
        run("softmax", [&](Tape<double>* t) {
            return sum(t, mul(t, softmax(t, x), w));
        }, {x});
    }
    {
        auto x = rand_t({1, 2, 4, 5});
        run("reflect_pad2d", [&](Tape<double>* t) {
            auto y = reflect_pad2d(t, x, 1, 1, 2, 1);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto x = rand_t({1, 2, 5, 5});
        run("crop2d", [&](Tape<double>* t) {
            auto y = crop2d(t, x, 1, 1, 3, 3);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto x = rand_t({2, 3, 3, 4});
        run("global_avg_pool", [&](Tape<double>* t) {
            auto y = global_avg_pool(t, x);
            return sum(t, mul(t, y, y));
        }, {x});
    }
    {
        auto z = rand_t({1, 1, 4, 4}, -2, 2);
        Tensor<double> target({1, 1, 4, 4});
        for (std::size_t i = 0; i < target.size(); ++i)
            target.data()[i] = rng.below(2) ? 1.0 : 0.0;
        run("bce_with_logits", [&](Tape<double>* t) {
            return bce_with_logits(t, z, target);
        }, {z});
        run("dice_with_logits", [&](Tape<double>* t) {
            return dice_with_logits(t, z, target);
        }, {z});
    }
    {
        auto z = rand_t({4, 3}, -2, 2);
        std::vector<int> labels = {0, 1, 2, 1};
        std::vector<double> weights = {1.5, 0.5, 1.0};
        run("softmax_cross_entropy", [&](Tape<double>* t) {
            return softmax_cross_entropy(t, z, labels, weights);
        }, {z});
    }
    {
        SegConfig cfg;
        cfg.depth = 1;
        cfg.base_filters = 1;
        SegModel<double> model = build_segnet<double>(cfg, seed + 1);
        Tensor<double> x({1, 3, 8, 8});
        x.set_requires_grad(true);
        Tensor<double> target({1, 1, 8, 8});
        for (std::size_t i = 0; i < target.size(); ++i)
            target.data()[i] = rng.below(2) ? 1.0 : 0.0;
        condition_smooth("segnet_tiny", [&](Tape<double>* t) { seg_forward(model, t, x); },
                         [&] {
                             model = build_segnet<double>(cfg, rng.next_u64());
                             refill(x);
                         });
        std::vector<Tensor<double>> inputs;
        for (auto& p : model.params)
            inputs.push_back(p.tensor);
        inputs.push_back(x);
        run("segnet_tiny", [&](Tape<double>* t) {
            return bce_with_logits(t, seg_forward(model, t, x), target);
        }, inputs);
    }
    {
        RecConfig cfg;
        cfg.stem_filters = 2;
        cfg.num_blocks = 2;
        cfg.head_units = 8;
        RecModel<double> model = build_recnet<double>(cfg, seed + 2);
        Tensor<double> full({1, 3, 12, 12}), crop({1, 3, 12, 12});
        full.set_requires_grad(true);
        crop.set_requires_grad(true);
        std::vector<int> labels = {1};
        condition_smooth("recnet_tiny", [&](Tape<double>* t) { rec_logits(model, t, full, crop); },
                         [&] {
                             model = build_recnet<double>(cfg, rng.next_u64());
                             for (auto& p : model.params)
                                 set_trainable(p, true);
                             refill(full);
                             refill(crop);
                         });
        std::vector<Tensor<double>> inputs;
        for (auto& p : model.params)
            inputs.push_back(p.tensor);
        inputs.push_back(full);
        inputs.push_back(crop);
        run("recnet_tiny", [&](Tape<double>* t) {
            return softmax_cross_entropy(t, rec_logits(model, t, full, crop), labels);
        }, inputs);
    }
    return results;
}

} // namespace cli_detail

// Entry point shared by the binary and in-process tests. args excludes the
// program name. Exit codes: 0 success, 1 usage error, 2 data or model error.
inline int run_command(const std::vector<std::string>& args)
{
    CLI::App app{"skin lesion segmentation and classification"};
    app.name("skincnn");
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string config_path;
    app.add_option("--seed", seed, "root random seed")->capture_default_str();
    app.add_option("--config", config_path, "flat key=value config file");

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic lesion corpus");
    std::string gen_out;
    std::size_t gen_train = 0, gen_val = 0, gen_test = 0, gen_size = 150;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_train, "train image count")->required();
    gen->add_option("--val", gen_val, "val image count");
    gen->add_option("--test", gen_test, "test image count");
    gen->add_option("--size", gen_size, "image side length")->capture_default_str();

    auto* tseg = app.add_subcommand("train-seg", "train the segmentation model");
    std::string tseg_manifest, tseg_out;
    long long tseg_epochs = -1;
    tseg->add_option("--manifest", tseg_manifest, "manifest path")->required();
    tseg->add_option("--out", tseg_out, "output checkpoint path")->required();
    tseg->add_option("--epochs", tseg_epochs, "epoch count (overrides config)");

    auto* tcls = app.add_subcommand("train-cls", "train the classifier");
    std::string tcls_manifest, tcls_seg, tcls_out, tcls_init_backbone, tcls_init_model,
        tcls_save_backbone;
    int tcls_phase = 1;
    long long tcls_epochs = -1;
    tcls->add_option("--manifest", tcls_manifest, "manifest path")->required();
    tcls->add_option("--seg-model", tcls_seg, "segmentation checkpoint")->required();
    tcls->add_option("--out", tcls_out, "output checkpoint path")->required();
    tcls->add_option("--phase", tcls_phase, "1 = head only, 2 = fine-tune last two blocks")
        ->required()
        ->check(CLI::Range(1, 2));
    tcls->add_option("--init-backbone", tcls_init_backbone,
                     "checkpoint loaded into both backbones before training");
    tcls->add_option("--init-model", tcls_init_model,
                     "full classifier checkpoint to continue from");
    tcls->add_option("--save-backbone", tcls_save_backbone,
                     "also write the full-branch backbone tensors here");
    tcls->add_option("--epochs", tcls_epochs, "epoch count (overrides config)");

    auto* pmask = app.add_subcommand("predict-mask", "segment one image");
    std::string pmask_image, pmask_model, pmask_out;
    pmask->add_option("--image", pmask_image, "input image")->required();
    pmask->add_option("--model", pmask_model, "segmentation checkpoint")->required();
    pmask->add_option("--out", pmask_out, "output mask path")->required();

    auto* cls = app.add_subcommand("classify", "run the two-stage pipeline on one image");
    std::string cls_image, cls_seg, cls_rec;
    cls->add_option("--image", cls_image, "input image")->required();
    cls->add_option("--seg-model", cls_seg, "segmentation checkpoint")->required();
    cls->add_option("--rec-model", cls_rec, "classifier checkpoint")->required();

    auto* eseg = app.add_subcommand("eval-seg", "evaluate segmentation on a split");
    std::string eseg_manifest, eseg_model, eseg_split = "val";
    eseg->add_option("--manifest", eseg_manifest, "manifest path")->required();
    eseg->add_option("--model", eseg_model, "segmentation checkpoint")->required();
    eseg->add_option("--split", eseg_split, "train, val, or test")->capture_default_str();

    auto* ecls = app.add_subcommand("eval-cls", "evaluate classification on a split");
    std::string ecls_manifest, ecls_seg, ecls_rec, ecls_split = "val";
    ecls->add_option("--manifest", ecls_manifest, "manifest path")->required();
    ecls->add_option("--seg-model", ecls_seg, "segmentation checkpoint")->required();
    ecls->add_option("--rec-model", ecls_rec, "classifier checkpoint")->required();
    ecls->add_option("--split", ecls_split, "train, val, or test")->capture_default_str();

    auto* gc = app.add_subcommand("grad-check", "run the derivative audit suite");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        const Config base_cfg = cli_detail::load_config(config_path);

        if (gen->parsed()) {
            SynthSpec spec;
            spec.seed = seed;
            spec.train_count = gen_train;
            spec.val_count = gen_val;
            spec.test_count = gen_test;
            spec.size = gen_size;
            const Manifest manifest = gen_synthetic(spec, gen_out);
            nlohmann::ordered_json j;
            j["dir"] = gen_out;
            j["records"] = manifest.records.size();
            std::cout << j.dump() << "\n";
        } else if (tseg->parsed()) {
            Config cfg = base_cfg;
            cfg.train.seed = seed;
            if (tseg_epochs >= 0)
                cfg.train.epochs = std::size_t(tseg_epochs);
            SegModel<float> model = build_segnet<float>(cfg.seg, seed);
            const Manifest manifest = load_manifest(tseg_manifest);
            train_seg(model, manifest, cfg.train, &std::cout);
            save_checkpoint(tseg_out, model.params);
        } else if (tcls->parsed()) {
            Config cfg = base_cfg;
            cfg.train.seed = seed;
            if (tcls_epochs >= 0)
                cfg.train.epochs = std::size_t(tcls_epochs);
            const SegModel<float> seg = cli_detail::load_seg_model(cfg, tcls_seg);
            RecModel<float> rec = build_recnet<float>(cfg.rec, seed);
            if (!tcls_init_model.empty())
                assign_from_checkpoint(rec.params, load_checkpoint(tcls_init_model));
            if (!tcls_init_backbone.empty()) {
                const LoadReport report = load_backbone_checkpoint(
                    rec, load_checkpoint(tcls_init_backbone), BranchSelect::both);
                nlohmann::ordered_json j;
                j["backbone_loaded"] = report.loaded.size();
                j["backbone_skipped"] = report.skipped.size();
                std::cout << j.dump() << "\n";
            }
            const Manifest manifest = load_manifest(tcls_manifest);
            const Phase phase = tcls_phase == 1 ? Phase::HeadOnly : Phase::FineTuneLastTwo;
            train_cls(rec, seg, manifest, cfg.train, phase, &std::cout);
            save_checkpoint(tcls_out, rec.params);
            if (!tcls_save_backbone.empty()) {
                std::vector<Parameter<float>> backbone;
                for (const auto& p : rec.params)
                    if (p.group == Group::backbone_full)
                        backbone.push_back(p);
                save_checkpoint(tcls_save_backbone, backbone);
            }
        } else if (pmask->parsed()) {
            const SegModel<float> model = cli_detail::load_seg_model(base_cfg, pmask_model);
            const RgbImage image = decode_image(read_file(pmask_image));
            write_file(pmask_out, encode_mask_png(predict_mask(model, image)));
        } else if (cls->parsed()) {
            const SegModel<float> seg = cli_detail::load_seg_model(base_cfg, cls_seg);
            const RecModel<float> rec = cli_detail::load_rec_model(base_cfg, cls_rec);
            const RgbImage image = decode_image(read_file(cls_image));
            const PipelineResult result = classify_image(seg, rec, image);
            std::cout << classify_json(result).dump() << "\n";
        } else if (eseg->parsed()) {
            const SegModel<float> model = cli_detail::load_seg_model(base_cfg, eseg_model);
            const Manifest manifest = load_manifest(eseg_manifest);
            const SegReport rep =
                evaluate_seg(model, manifest, cli_detail::parse_split(eseg_split));
            nlohmann::ordered_json j;
            j["split"] = eseg_split;
            j["count"] = rep.per_image_jaccard.size();
            j["mean_jaccard"] = rep.mean_jaccard;
            j["mean_dice"] = rep.mean_dice;
            std::cout << j.dump() << "\n";
        } else if (ecls->parsed()) {
            const SegModel<float> seg = cli_detail::load_seg_model(base_cfg, ecls_seg);
            const RecModel<float> rec = cli_detail::load_rec_model(base_cfg, ecls_rec);
            const Manifest manifest = load_manifest(ecls_manifest);
            const ClassificationReport rep =
                evaluate_cls(rec, seg, manifest, cli_detail::parse_split(ecls_split));
            nlohmann::ordered_json j = cli_detail::report_json(rep);
            j["split"] = ecls_split;
            std::cout << j.dump() << "\n";
        } else if (gc->parsed()) {
            const auto results = cli_detail::run_grad_checks(seed ? seed : 1);
            bool ok = true;
            for (const auto& r : results) {
                std::cout << r.name << " max_rel_error=" << r.max_rel_error
                          << " coords=" << r.coords << "\n";
                ok = ok && r.max_rel_error <= 1e-4;
            }
            std::cout << (ok ? "all checks passed" : "CHECKS FAILED") << "\n";
            if (!ok)
                return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace skincnn
