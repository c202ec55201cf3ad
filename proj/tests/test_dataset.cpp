#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "skincnn/dataset.hpp"

namespace skincnn {
namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir(const char* tag)
    {
        path = fs::temp_directory_path() / (std::string("skincnn_ds_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void expect_load_error(const std::string& path, const std::string& needle)
{
    try {
        load_manifest(path);
        FAIL() << "expected manifest error containing: " << needle;
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

TEST(Manifest, LoadsRecordsAndResolvesRelativePaths)
{
    TempDir dir("load");
    write_text(dir.file("m.jsonl"),
               "{\"image\":\"a.png\",\"mask\":\"am.png\",\"label\":\"melanoma\",\"split\":\"train\"}\n"
               "\n"
               "{\"image\":\"b.png\",\"mask\":null,\"label\":null,\"split\":\"val\"}\n");
    Manifest m = load_manifest(dir.file("m.jsonl"));
    ASSERT_EQ(m.records.size(), 2u);
    EXPECT_EQ(m.records[0].image, "a.png");
    ASSERT_TRUE(m.records[0].mask);
    EXPECT_EQ(*m.records[0].mask, "am.png");
    ASSERT_TRUE(m.records[0].label);
    EXPECT_EQ(*m.records[0].label, 0);
    EXPECT_EQ(m.records[0].split, Split::train);
    EXPECT_FALSE(m.records[1].mask);
    EXPECT_FALSE(m.records[1].label);
    EXPECT_EQ(m.records[1].split, Split::val);
    EXPECT_EQ(m.resolve("a.png"), (dir.path / "a.png").string());
    EXPECT_EQ(m.resolve("/abs/a.png"), "/abs/a.png");
}

TEST(Manifest, ErrorsNameTheOffendingLine)
{
    TempDir dir("err");
    const std::string good = "{\"image\":\"a.png\",\"split\":\"train\"}\n";

    write_text(dir.file("bad_json.jsonl"), good + "{not json\n");
    expect_load_error(dir.file("bad_json.jsonl"), "manifest line 2");

    write_text(dir.file("bad_field.jsonl"), good + good +
               "{\"image\":\"c.png\",\"split\":\"train\",\"extra\":1}\n");
    expect_load_error(dir.file("bad_field.jsonl"), "line 3: unknown field \"extra\"");

    write_text(dir.file("bad_split.jsonl"), "{\"image\":\"a.png\",\"split\":\"validation\"}\n");
    expect_load_error(dir.file("bad_split.jsonl"), "unknown split \"validation\"");

    write_text(dir.file("bad_label.jsonl"),
               "{\"image\":\"a.png\",\"split\":\"train\",\"label\":\"mole\"}\n");
    expect_load_error(dir.file("bad_label.jsonl"), "unknown label \"mole\"");

    write_text(dir.file("no_image.jsonl"), "{\"split\":\"train\"}\n");
    expect_load_error(dir.file("no_image.jsonl"), "\"image\" must be a string");

    write_text(dir.file("array.jsonl"), "[1,2]\n");
    expect_load_error(dir.file("array.jsonl"), "must be an object");

    EXPECT_THROW(load_manifest(dir.file("missing.jsonl")), Error);
}

TEST(Manifest, SaveLoadRoundTripIsByteStable)
{
    TempDir dir("rt");
    Manifest m;
    m.records.push_back({"a.png", std::string("am.png"), 0, Split::train});
    m.records.push_back({"b.png", std::nullopt, 2, Split::val});
    m.records.push_back({"c.png", std::string("cm.png"), std::nullopt, Split::test});
    save_manifest(dir.file("one.jsonl"), m);
    Manifest loaded = load_manifest(dir.file("one.jsonl"));
    save_manifest(dir.file("two.jsonl"), loaded);
    const std::string a = read_text(dir.file("one.jsonl"));
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, read_text(dir.file("two.jsonl")));
}

TEST(Manifest, SplitIndexAndClassCountHelpers)
{
    Manifest m;
    m.records.push_back({"a.png", std::nullopt, 1, Split::train});
    m.records.push_back({"b.png", std::nullopt, 1, Split::val});
    m.records.push_back({"c.png", std::nullopt, std::nullopt, Split::train});
    m.records.push_back({"d.png", std::nullopt, 2, Split::train});
    EXPECT_EQ(m.indices_of(Split::train), (std::vector<std::size_t>{0, 2, 3}));
    EXPECT_EQ(m.indices_of(Split::test), std::vector<std::size_t>{});
    const auto counts = m.class_counts(Split::train);
    EXPECT_EQ(counts, (std::array<std::size_t, 3>{0, 1, 1}));
}

Manifest manifest_with_counts(std::size_t mel, std::size_t nev, std::size_t sk)
{
    Manifest m;
    const std::array<std::size_t, 3> counts = {mel, nev, sk};
    for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[std::size_t(k)]; ++i)
            m.records.push_back({"x.png", std::nullopt, k, Split::train});
    return m;
}

TEST(Dataset, InverseFrequencyWeightsMatchReferenceCounts)
{
    // 374 / 1372 / 254 labeled train images
    const auto w = class_weights(manifest_with_counts(374, 1372, 254));
    EXPECT_NEAR(w[0], 1.7825, 1e-4);
    EXPECT_NEAR(w[1], 0.4859, 1e-4);
    EXPECT_NEAR(w[2], 2.6247, 1e-4);
    // exact closed form: total / (3 n_k)
    EXPECT_DOUBLE_EQ(w[0], 2000.0 / (3.0 * 374.0));
}

TEST(Dataset, BalancedCountsGiveUnitWeights)
{
    const auto w = class_weights(manifest_with_counts(7, 7, 7));
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    EXPECT_DOUBLE_EQ(w[1], 1.0);
    EXPECT_DOUBLE_EQ(w[2], 1.0);
}

TEST(Dataset, MissingClassRejectedByName)
{
    try {
        class_weights(manifest_with_counts(5, 0, 5));
        FAIL() << "expected missing class error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("nevus"), std::string::npos);
    }
}

SynthSpec small_spec()
{
    SynthSpec spec;
    spec.seed = 11;
    spec.train_count = 9;
    spec.val_count = 3;
    spec.test_count = 2;
    spec.size = 48;
    return spec;
}

TEST(Synth, RegenerationIsByteIdentical)
{
    TempDir a("synth_a"), b("synth_b");
    Manifest ma = gen_synthetic(small_spec(), a.path.string());
    Manifest mb = gen_synthetic(small_spec(), b.path.string());
    ASSERT_EQ(ma.records.size(), mb.records.size());
    ASSERT_EQ(ma.records.size(), 14u);
    for (std::size_t i = 0; i < ma.records.size(); ++i) {
        EXPECT_EQ(ma.records[i].image, mb.records[i].image);
        EXPECT_EQ(read_text(ma.resolve(ma.records[i].image)),
                  read_text(mb.resolve(mb.records[i].image)));
        EXPECT_EQ(read_text(ma.resolve(*ma.records[i].mask)),
                  read_text(mb.resolve(*mb.records[i].mask)));
    }
    EXPECT_EQ(read_text(a.file("manifest.jsonl")), read_text(b.file("manifest.jsonl")));
}

TEST(Synth, LesionsAreSingleComponentsOfPlausibleArea)
{
    TempDir dir("synth_c");
    Manifest m = gen_synthetic(small_spec(), dir.path.string());
    for (const auto& rec : m.records) {
        BinaryMask mask = binarize_mask(decode_gray(read_file(m.resolve(*rec.mask))));
        const std::size_t on = mask.count();
        const double frac = double(on) / double(mask.height * mask.width);
        EXPECT_GT(frac, 0.05) << rec.image;
        EXPECT_LT(frac, 0.40) << rec.image;
        // one lesion per image: the largest component is the whole mask
        EXPECT_EQ(largest_component(mask).count(), on) << rec.image;
    }
}

TEST(Synth, SplitSizesAndClassMixApportioned)
{
    TempDir dir("synth_d");
    Manifest m = gen_synthetic(small_spec(), dir.path.string());
    EXPECT_EQ(m.indices_of(Split::train).size(), 9u);
    EXPECT_EQ(m.indices_of(Split::val).size(), 3u);
    EXPECT_EQ(m.indices_of(Split::test).size(), 2u);
    const auto counts = m.class_counts(Split::train);
    EXPECT_EQ(counts[0] + counts[1] + counts[2], 9u);
    for (int k = 0; k < 3; ++k)
        EXPECT_EQ(counts[std::size_t(k)], 3u); // 9 splits evenly at the default mix

    // the manifest written to disk loads back to the same records
    Manifest loaded = load_manifest(dir.file("manifest.jsonl"));
    ASSERT_EQ(loaded.records.size(), m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        EXPECT_EQ(loaded.records[i].image, m.records[i].image);
        EXPECT_EQ(loaded.records[i].label, m.records[i].label);
        EXPECT_EQ(loaded.records[i].split, m.records[i].split);
    }
}

TEST(Synth, ClassPalettesAreOrdered)
{
    // melanoma lesions are darker than nevus, nevus darker than keratosis
    TempDir dir("synth_e");
    SynthSpec spec = small_spec();
    spec.train_count = 12;
    spec.val_count = 0;
    spec.test_count = 0;
    Manifest m = gen_synthetic(spec, dir.path.string());
    std::array<double, 3> mean_lum{0, 0, 0};
    std::array<std::size_t, 3> n{0, 0, 0};
    for (const auto& rec : m.records) {
        RgbImage img = decode_image(read_file(m.resolve(rec.image)));
        BinaryMask mask = binarize_mask(decode_gray(read_file(m.resolve(*rec.mask))));
        double lum = 0;
        std::size_t cnt = 0;
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                if (mask.at(y, x)) {
                    lum += img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2);
                    ++cnt;
                }
        mean_lum[std::size_t(*rec.label)] += lum / double(cnt);
        ++n[std::size_t(*rec.label)];
    }
    for (int k = 0; k < 3; ++k) {
        ASSERT_GT(n[std::size_t(k)], 0u);
        mean_lum[std::size_t(k)] /= double(n[std::size_t(k)]);
    }
    EXPECT_LT(mean_lum[0], mean_lum[1]);
    EXPECT_LT(mean_lum[1], mean_lum[2]);
}

TEST(Synth, TinySizeRejected)
{
    SynthSpec spec = small_spec();
    spec.size = 8;
    EXPECT_THROW(gen_synthetic(spec, (fs::temp_directory_path() / "skincnn_never").string()),
                 Error);
}

} // namespace
} // namespace skincnn
