#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "skincnn/common.hpp"
#include "skincnn/image.hpp"
#include "skincnn/rng.hpp"

namespace skincnn {

enum class Split { train, val, test };

inline const std::array<std::string, 3>& label_names()
{
    static const std::array<std::string, 3> names = {"melanoma", "nevus", "seborrheic_keratosis"};
    return names;
}

inline int label_index(const std::string& s)
{
    for (int i = 0; i < 3; ++i)
        if (label_names()[std::size_t(i)] == s)
            return i;
    return -1;
}

inline std::string split_name(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

struct DatasetRecord {
    std::string image;
    std::optional<std::string> mask;
    std::optional<int> label; // class index
    Split split = Split::train;
};

struct Manifest {
    std::vector<DatasetRecord> records;
    std::string base_dir; // directory the manifest was loaded from; "" if in-memory

    std::string resolve(const std::string& rel) const
    {
        if (base_dir.empty() || std::filesystem::path(rel).is_absolute())
            return rel;
        return (std::filesystem::path(base_dir) / rel).string();
    }

    std::vector<std::size_t> indices_of(Split split) const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].split == split)
                out.push_back(i);
        return out;
    }

    // labeled records only
    std::array<std::size_t, 3> class_counts(Split split) const
    {
        std::array<std::size_t, 3> counts{0, 0, 0};
        for (const auto& r : records)
            if (r.split == split && r.label)
                ++counts[std::size_t(*r.label)];
        return counts;
    }
};

inline Manifest load_manifest(const std::string& path)
{
    std::ifstream in(path);
    SKINCNN_CHECK(in, "cannot open manifest: ", path);
    Manifest manifest;
    manifest.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(cat("manifest line ", line_no, ": ", e.what()));
        }
        SKINCNN_CHECK(j.is_object(), "manifest line ", line_no, ": record must be an object");
        for (const auto& [key, value] : j.items()) {
            (void)value;
            SKINCNN_CHECK(key == "image" || key == "mask" || key == "label" || key == "split",
                          "manifest line ", line_no, ": unknown field \"", key, "\"");
        }
        SKINCNN_CHECK(j.contains("image") && j["image"].is_string(), "manifest line ", line_no,
                      ": \"image\" must be a string");
        SKINCNN_CHECK(j.contains("split") && j["split"].is_string(), "manifest line ", line_no,
                      ": \"split\" must be a string");
        DatasetRecord rec;
        rec.image = j["image"].get<std::string>();
        const std::string split = j["split"].get<std::string>();
        if (split == "train")
            rec.split = Split::train;
        else if (split == "val")
            rec.split = Split::val;
        else if (split == "test")
            rec.split = Split::test;
        else
            throw Error(cat("manifest line ", line_no, ": unknown split \"", split, "\""));
        if (j.contains("mask") && !j["mask"].is_null()) {
            SKINCNN_CHECK(j["mask"].is_string(), "manifest line ", line_no,
                          ": \"mask\" must be a string or null");
            rec.mask = j["mask"].get<std::string>();
        }
        if (j.contains("label") && !j["label"].is_null()) {
            SKINCNN_CHECK(j["label"].is_string(), "manifest line ", line_no,
                          ": \"label\" must be a string or null");
            const std::string label = j["label"].get<std::string>();
            const int idx = label_index(label);
            SKINCNN_CHECK(idx >= 0, "manifest line ", line_no, ": unknown label \"", label, "\"");
            rec.label = idx;
        }
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

inline void save_manifest(const std::string& path, const Manifest& manifest)
{
    std::ofstream out(path);
    SKINCNN_CHECK(out, "cannot open manifest for writing: ", path);
    for (const auto& r : manifest.records) {
        nlohmann::ordered_json j;
        j["image"] = r.image;
        j["mask"] = r.mask ? nlohmann::json(*r.mask) : nlohmann::json(nullptr);
        j["label"] = r.label ? nlohmann::json(label_names()[std::size_t(*r.label)])
                             : nlohmann::json(nullptr);
        j["split"] = split_name(r.split);
        out << j.dump() << "\n";
    }
    SKINCNN_CHECK(out, "manifest write failed: ", path);
}

// Inverse-frequency weights over the labeled train split, normalized so the
// weights of the present classes average to 1: w_k = T / (3 * n_k).
inline std::array<double, 3> class_weights(const Manifest& manifest)
{
    const auto counts = manifest.class_counts(Split::train);
    std::size_t total = 0;
    for (int k = 0; k < 3; ++k) {
        SKINCNN_CHECK(counts[std::size_t(k)] > 0, "class_weights: class \"",
                      label_names()[std::size_t(k)], "\" has no labeled train records");
        total += counts[std::size_t(k)];
    }
    std::array<double, 3> w;
    for (int k = 0; k < 3; ++k)
        w[std::size_t(k)] = double(total) / (3.0 * double(counts[std::size_t(k)]));
    return w;
}

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t train_count = 0;
    std::size_t val_count = 0;
    std::size_t test_count = 0;
    std::size_t size = 150;
    std::array<double, 3> class_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
};

namespace detail {

// Largest-remainder apportionment of n over the mix proportions.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& mix)
{
    double total = mix[0] + mix[1] + mix[2];
    SKINCNN_CHECK(total > 0, "class mix must have positive total");
    std::array<std::size_t, 3> counts;
    std::array<double, 3> frac;
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = double(n) * mix[std::size_t(k)] / total;
        counts[std::size_t(k)] = std::size_t(exact);
        frac[std::size_t(k)] = exact - double(counts[std::size_t(k)]);
        assigned += counts[std::size_t(k)];
    }
    while (assigned < n) {
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (frac[std::size_t(k)] > frac[std::size_t(best)])
                best = k;
        ++counts[std::size_t(best)];
        frac[std::size_t(best)] = -1;
        ++assigned;
    }
    return counts;
}

struct LesionShape {
    double cx, cy;     // center, pixel units
    double a, b;       // semi-axes before perturbation
    double angle;      // rotation
    std::array<double, 4> amp{};   // border harmonics 2..5
    std::array<double, 4> phase{};
};

// Signed radial coordinate: < 1 is inside. Star-shaped by construction.
inline double lesion_radius_coord(const LesionShape& s, double px, double py)
{
    const double dx = px - s.cx, dy = py - s.cy;
    const double ca = std::cos(s.angle), sa = std::sin(s.angle);
    const double ux = (dx * ca + dy * sa) / s.a;
    const double uy = (-dx * sa + dy * ca) / s.b;
    const double u = std::sqrt(ux * ux + uy * uy);
    const double theta = std::atan2(uy, ux);
    double boundary = 1.0;
    for (int h = 0; h < 4; ++h)
        boundary += s.amp[std::size_t(h)] * std::cos(double(h + 2) * theta + s.phase[std::size_t(h)]);
    return u / boundary;
}

struct SynthImage {
    RgbImage image;
    BinaryMask mask;
};

// One synthetic sample, fully determined by its rng stream. All shape and
// color scalars are drawn up front in a fixed order; the pixel loop itself
// draws nothing, so rendering order cannot perturb the stream.
inline SynthImage render_synthetic(Rng rng, int label, std::size_t size)
{
    const double S = double(size);

    // background: skin tone plus two low-frequency cosine fields
    const double bg_r = 202 + rng.uniform(-10, 10);
    const double bg_g = 160 + rng.uniform(-10, 10);
    const double bg_b = 140 + rng.uniform(-10, 10);
    const double f1 = rng.uniform(0.5, 1.5), f2 = rng.uniform(0.5, 1.5);
    const double dir1 = rng.uniform(0, 6.2831853), dir2 = rng.uniform(0, 6.2831853);
    const double ph1 = rng.uniform(0, 6.2831853), ph2 = rng.uniform(0, 6.2831853);
    const double bg_amp1 = rng.uniform(4, 10), bg_amp2 = rng.uniform(3, 8);

    LesionShape shape;
    const double area_frac = rng.uniform(0.08, 0.22);
    const double aspect = rng.uniform(0.6, 1.0);
    shape.a = std::sqrt(area_frac * S * S / (3.14159265358979 * aspect));
    shape.b = aspect * shape.a;
    shape.angle = rng.uniform(0, 3.14159265358979);
    if (label == 0) {
        // irregular border: harmonics 2..5 with bounded total amplitude
        double budget = rng.uniform(0.12, 0.22);
        double raw[4], total = 0;
        for (auto& v : raw)
            total += v = rng.uniform(0.1, 1.0);
        for (int h = 0; h < 4; ++h) {
            shape.amp[std::size_t(h)] = budget * raw[h] / total;
            shape.phase[std::size_t(h)] = rng.uniform(0, 6.2831853);
        }
    }
    const double margin = shape.a * 1.25 + 1;
    shape.cx = rng.uniform(margin, S - margin);
    shape.cy = rng.uniform(margin, S - margin);

    // class palettes: 0 dark, 1 medium brown, 2 light ochre with speckle
    double le_r, le_g, le_b, speckle_amp = 0;
    // class 0 carries multi-tone interior blotches. Absolute luminance does not
    // survive per-image normalization, so the 0-vs-1 cue must be structural.
    struct Blotch {
        double bx, by, rb, elong, cos_o, sin_o, tone;
    };
    std::array<Blotch, 5> blotches{};
    std::size_t n_blotches = 0;
    if (label == 0) {
        le_r = 62 + rng.uniform(-18, 18);
        le_g = 42 + rng.uniform(-12, 12);
        le_b = 38 + rng.uniform(-12, 12);
        n_blotches = 3 + rng.below(3);
        for (std::size_t i = 0; i < n_blotches; ++i) {
            auto& bl = blotches[i];
            const double rho = rng.uniform(0.08, 0.40);
            const double phi = rng.uniform(0, 6.2831853);
            bl.bx = rho * std::cos(phi);
            bl.by = rho * std::sin(phi);
            bl.rb = rng.uniform(0.16, 0.34); // rho + rb <= 0.74 < min boundary
            bl.elong = rng.uniform(0.6, 1.0);
            const double orient = rng.uniform(0, 3.14159265358979);
            bl.cos_o = std::cos(orient);
            bl.sin_o = std::sin(orient);
            bl.tone = rng.uniform(0.30, 0.50);
        }
    } else if (label == 1) {
        le_r = 132 + rng.uniform(-16, 16);
        le_g = 86 + rng.uniform(-12, 12);
        le_b = 70 + rng.uniform(-12, 12);
    } else {
        le_r = 196 + rng.uniform(-12, 12);
        le_g = 152 + rng.uniform(-12, 12);
        le_b = 112 + rng.uniform(-12, 12);
        speckle_amp = rng.uniform(34, 50);
    }
    const double shade = rng.uniform(0.10, 0.22); // radial darkening toward the rim
    const std::uint64_t speckle_salt = rng.next_u64();

    SynthImage out;
    out.image = RgbImage{size, size, Bytes(size * size * 3)};
    out.mask = BinaryMask{size, size, Bytes(size * size, 0)};
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            const double w1 = std::cos(6.2831853 * f1 * (px * std::cos(dir1) + py * std::sin(dir1)) / S + ph1);
            const double w2 = std::cos(6.2831853 * f2 * (px * std::cos(dir2) + py * std::sin(dir2)) / S + ph2);
            double r = bg_r + bg_amp1 * w1 + bg_amp2 * w2;
            double g = bg_g + bg_amp1 * 0.8 * w1 + bg_amp2 * 0.8 * w2;
            double b = bg_b + bg_amp1 * 0.7 * w1 + bg_amp2 * 0.7 * w2;
            const double rad = lesion_radius_coord(shape, px, py);
            if (rad <= 1.0) {
                double tone = 1.0 - shade * rad;
                if (n_blotches > 0) {
                    const double ca = std::cos(shape.angle), sa = std::sin(shape.angle);
                    const double dx = px - shape.cx, dy = py - shape.cy;
                    const double ux = (dx * ca + dy * sa) / shape.a;
                    const double uy = (-dx * sa + dy * ca) / shape.b;
                    double darkest = 1.0;
                    for (std::size_t i = 0; i < n_blotches; ++i) {
                        const auto& bl = blotches[i];
                        const double ox = ux - bl.bx, oy = uy - bl.by;
                        const double qx = (ox * bl.cos_o + oy * bl.sin_o) / bl.rb;
                        const double qy = (-ox * bl.sin_o + oy * bl.cos_o) / (bl.rb * bl.elong);
                        const double q = std::sqrt(qx * qx + qy * qy);
                        const double t = std::clamp((1.0 - q) / 0.25, 0.0, 1.0);
                        darkest = std::min(darkest, 1.0 - (1.0 - bl.tone) * t);
                    }
                    tone *= darkest;
                }
                r = le_r * tone;
                g = le_g * tone;
                b = le_b * tone;
                if (speckle_amp > 0) {
                    const double n = hash01(speckle_salt, std::uint64_t(x), std::uint64_t(y)) - 0.5;
                    r += speckle_amp * n;
                    g += speckle_amp * n;
                    b += speckle_amp * 0.8 * n;
                }
                out.mask.set(y, x, true);
            }
            auto q = [](double v) {
                return std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
            };
            out.image.at(y, x, 0) = q(r);
            out.image.at(y, x, 1) = q(g);
            out.image.at(y, x, 2) = q(b);
        }
    }
    return out;
}

} // namespace detail

// Writes images, masks, and a manifest.jsonl under out_dir. Each sample is a
// pure function of (seed, split, index), so regeneration is byte-identical.
inline Manifest gen_synthetic(const SynthSpec& spec, const std::string& out_dir)
{
    namespace fs = std::filesystem;
    SKINCNN_CHECK(spec.size >= 16, "synthetic image size must be >= 16, got ", spec.size);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    SKINCNN_CHECK(!ec, "cannot create output dir ", out_dir, ": ", ec.message());

    Manifest manifest;
    manifest.base_dir = out_dir;
    const std::array<std::pair<Split, std::size_t>, 3> splits = {
        std::pair{Split::train, spec.train_count},
        std::pair{Split::val, spec.val_count},
        std::pair{Split::test, spec.test_count},
    };
    Rng root(spec.seed);
    for (std::size_t si = 0; si < splits.size(); ++si) {
        const auto [split, count] = splits[si];
        if (count == 0)
            continue;
        const auto per_class = detail::apportion(count, spec.class_mix);
        std::vector<int> labels;
        for (int k = 0; k < 3; ++k)
            labels.insert(labels.end(), per_class[std::size_t(k)], k);
        Rng shuffle_rng = root.derive(std::uint64_t(si), 0xdeaf);
        shuffle_rng.shuffle(labels.begin(), labels.end());

        for (std::size_t i = 0; i < count; ++i) {
            const int label = labels[i];
            detail::SynthImage sample =
                detail::render_synthetic(root.derive(std::uint64_t(si), std::uint64_t(i)), label,
                                         spec.size);
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04zu", split_name(split).c_str(), i);
            const std::string img_rel = std::string("img_") + name + ".png";
            const std::string mask_rel = std::string("mask_") + name + ".png";
            write_file((fs::path(out_dir) / img_rel).string(), encode_png_rgb(sample.image));
            write_file((fs::path(out_dir) / mask_rel).string(), encode_mask_png(sample.mask));
            manifest.records.push_back({img_rel, mask_rel, label, split});
        }
    }
    save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
    return manifest;
}

} // namespace skincnn
