#include <gtest/gtest.h>

#include <filesystem>
#include <queue>

#include "seqpatch/metrics.hpp"
#include "seqpatch/synth.hpp"
#include "seqpatch/volume_io.hpp"

using namespace seqpatch;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / ("seqpatch_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed())
                                            + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

Volume small_volume()
{
    Volume v;
    v.dims = {4, 8, 8};
    v.spacing = {2.5f, 0.75f, 0.75f};
    Rng rng(3);
    for (std::size_t i = 0; i < v.voxel_count(); ++i)
        v.intensities.push_back(static_cast<float>(rng.normal()));
    v.mask.emplace(v.voxel_count());
    for (auto& m : *v.mask)
        m = rng.uniform() < 0.3 ? 1 : 0;
    return v;
}

void write_png(const std::string& path, std::size_t w, std::size_t h, int depth, std::uint16_t value)
{
    GrayImage g;
    g.width = w;
    g.height = h;
    g.bit_depth = depth;
    g.samples.assign(w * h, value);
    write_file(path, encode_png_gray(g));
}

std::size_t components(const Mask& m)
{
    const std::size_t h = m.dim(0), w = m.dim(1);
    std::vector<bool> seen(m.size());
    std::size_t count = 0;
    for (std::size_t s = 0; s < m.size(); ++s) {
        if (!m[s] || seen[s])
            continue;
        ++count;
        std::queue<std::size_t> q;
        q.push(s);
        seen[s] = true;
        while (!q.empty()) {
            const std::size_t i = q.front();
            q.pop();
            const std::size_t y = i / w, x = i % w;
            auto visit = [&](std::size_t j) {
                if (m[j] && !seen[j]) {
                    seen[j] = true;
                    q.push(j);
                }
            };
            if (x > 0)
                visit(i - 1);
            if (x + 1 < w)
                visit(i + 1);
            if (y > 0)
                visit(i - w);
            if (y + 1 < h)
                visit(i + w);
        }
    }
    return count;
}

} // namespace

TEST(Segv1, RoundTripsIntensitiesAndMask)
{
    TempDir dir;
    const Volume v = small_volume();
    save_intensities(v, dir / "v.segv");
    save_mask(v, dir / "m.segv");
    const Volume w = load_volume(dir / "v.segv", dir / "m.segv");
    EXPECT_EQ(w.dims, v.dims);
    EXPECT_EQ(w.spacing, v.spacing);
    EXPECT_EQ(w.intensities, v.intensities);
    EXPECT_EQ(w.mask, v.mask);
    EXPECT_EQ(fs::file_size(dir / "v.segv"), kSegvHeaderBytes + 4 * 256);
    EXPECT_EQ(fs::file_size(dir / "m.segv"), kSegvHeaderBytes + 256);
}

TEST(Segv1, HeaderLayout)
{
    EXPECT_EQ(kSegvHeaderBytes, 30u);
    const std::vector<std::uint8_t> payload(40u * 296 * 296);
    const std::string bytes = encode_segv1({40, 296, 296}, {3.0f, 0.7f, 0.7f}, std::span<const std::uint8_t>(payload));
    EXPECT_EQ(bytes.size(), 30u + payload.size());
    EXPECT_EQ(bytes.substr(0, 4), "SGV1");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 1);
    const auto d = decode_segv1(bytes);
    EXPECT_EQ(d.dims, (std::array<std::uint32_t, 3>{40, 296, 296}));
    EXPECT_EQ(d.spacing[0], 3.0f);
    // Little-endian u32 depth right after the dtype byte.
    EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 40);
    EXPECT_EQ(bytes[7], 0);
}

TEST(Segv1, MalformedFilesRejected)
{
    const Volume v = small_volume();
    const std::string good = encode_segv1(v.dims, v.spacing, std::span<const float>(v.intensities));
    try {
        decode_segv1(good.substr(0, good.size() - 3));
        FAIL() << "truncated file accepted";
    } catch (const DataError& e) {
        ASSERT_TRUE(e.offset().has_value());
        EXPECT_GE(*e.offset(), kSegvHeaderBytes);
        EXPECT_LE(*e.offset(), good.size());
    }
    std::string bad = good;
    bad[0] = 'X';
    try {
        decode_segv1(bad);
        FAIL() << "bad magic accepted";
    } catch (const DataError& e) {
        EXPECT_EQ(e.offset(), std::optional<std::size_t>(0));
    }
    bad = good;
    bad[4] = 2;
    EXPECT_THROW(decode_segv1(bad), DataError);
    bad = good;
    bad[5] = 9;
    EXPECT_THROW(decode_segv1(bad), DataError);
    EXPECT_THROW(decode_segv1(good.substr(0, 10)), DataError);
    EXPECT_THROW(decode_segv1(good + "xx"), DataError);
    EXPECT_THROW(encode_segv1({1, 2, 2}, {1, 1, 1}, std::span<const float>(v.intensities)), ShapeError);
}

TEST(Segv1, WrongDtypeAndMaskValuesRejected)
{
    TempDir dir;
    Volume v = small_volume();
    save_intensities(v, dir / "v.segv");
    save_mask(v, dir / "m.segv");
    EXPECT_THROW(load_volume(dir / "m.segv"), DataError);
    EXPECT_THROW(load_volume(dir / "v.segv", dir / "v.segv"), DataError);
    (*v.mask)[5] = 7;
    save_mask(v, dir / "bad.segv");
    EXPECT_THROW(load_volume(dir / "v.segv", dir / "bad.segv"), DataError);
    EXPECT_THROW(load_volume(dir / "missing.segv"), DataError);
}

TEST(Volume, SliceAccess)
{
    const Volume v = small_volume();
    const Image s = v.slice(2);
    EXPECT_EQ(s.shape(), (Shape{8, 8}));
    EXPECT_EQ(s[0], v.intensities[128]);
    EXPECT_EQ(v.mask_slice(3)[63], (*v.mask)[255]);
    EXPECT_THROW(v.slice(4), std::out_of_range);
}

TEST(PngStack, IngestsSortedSlices)
{
    TempDir dir;
    write_png(dir / "b.png", 8, 8, 8, 255);
    write_png(dir / "a.png", 8, 8, 8, 0);
    const Volume v = ingest_png_stack(dir.path.string(), {2.0f, 1.0f, 1.0f});
    EXPECT_EQ(v.dims, (std::array<std::uint32_t, 3>{2, 8, 8}));
    EXPECT_EQ(v.intensities[0], 0.0f);
    EXPECT_EQ(v.intensities[64], 1.0f);
    EXPECT_EQ(v.spacing[0], 2.0f);
}

TEST(PngStack, SixteenBitScaling)
{
    TempDir dir;
    write_png(dir / "a.png", 4, 3, 16, 65535);
    write_png(dir / "b.png", 4, 3, 16, 0);
    const Volume v = ingest_png_stack(dir.path.string(), {1, 1, 1});
    EXPECT_EQ(v.dims, (std::array<std::uint32_t, 3>{2, 3, 4}));
    EXPECT_EQ(v.intensities[0], 1.0f);
    EXPECT_EQ(v.intensities[12], 0.0f);
}

TEST(PngStack, SizeMismatchAndEmptyDirectoryRejected)
{
    TempDir dir;
    EXPECT_THROW(ingest_png_stack(dir.path.string(), {1, 1, 1}), DataError);
    write_png(dir / "a.png", 8, 8, 8, 10);
    write_png(dir / "b.png", 8, 9, 8, 10);
    EXPECT_THROW(ingest_png_stack(dir.path.string(), {1, 1, 1}), DataError);
}

TEST(Resample, IdentityAndHalving)
{
    const Volume v = small_volume();
    const Volume same = resample_inplane(v, v.spacing[1], v.spacing[2]);
    EXPECT_EQ(same.dims, v.dims);
    EXPECT_EQ(same.intensities, v.intensities);
    EXPECT_EQ(same.mask, v.mask);
    const Volume coarse = resample_inplane(v, 1.5f, 1.5f);
    EXPECT_EQ(coarse.dims, (std::array<std::uint32_t, 3>{4, 4, 4}));
    EXPECT_EQ(coarse.spacing[1], 1.5f);
    // Every coarse sample lands on an original pixel.
    EXPECT_EQ(coarse.intensities[1], v.intensities[2]);
    EXPECT_EQ((*coarse.mask)[4 + 1], (*v.mask)[2 * 8 + 2]);
    EXPECT_THROW(resample_inplane(v, 0.0f, 1.0f), std::invalid_argument);
}

TEST(Resample, LinearRampStaysLinear)
{
    Volume v;
    v.dims = {1, 1, 5};
    v.intensities = {0, 1, 2, 3, 4};
    const Volume fine = resample_inplane(v, 1.0f, 0.5f);
    ASSERT_EQ(fine.width(), 10u);
    for (std::size_t x = 0; x < 9; ++x)
        EXPECT_FLOAT_EQ(fine.intensities[x], 0.5f * static_cast<float>(x));
    EXPECT_FLOAT_EQ(fine.intensities[9], 4.0f);
}

TEST(Manifest, RoundTripAndSplits)
{
    TempDir dir;
    const Volume v = small_volume();
    save_intensities(v, dir / "a.segv");
    save_mask(v, dir / "a_mask.segv");
    save_intensities(v, dir / "b.segv");
    Manifest m;
    m.entries.push_back({"a", dir / "a.segv", dir / "a_mask.segv", "train", {{2, {3, 4}}}});
    m.entries.push_back({"b", dir / "b.segv", std::nullopt, "test", {}});
    write_file(dir / "manifest.json", to_json(m, dir.path).dump(2));
    const Manifest back = load_manifest(dir / "manifest.json");
    ASSERT_EQ(back.entries.size(), 2u);
    EXPECT_EQ(back.find("a")->volume_path, fs::path(dir / "a.segv").lexically_normal().string());
    EXPECT_EQ(back.find("a")->center_overrides.at(2), (Point{3, 4}));
    EXPECT_EQ(back.split("test").size(), 1u);
    EXPECT_EQ(back.find("zzz"), nullptr);
    EXPECT_TRUE(back.load(*back.find("a")).mask.has_value());
    const auto raw = nlohmann::json::parse(read_file(dir / "manifest.json"));
    EXPECT_EQ(raw["volumes"][0]["volume_path"], "a.segv");
}

TEST(Manifest, InvalidManifestsRejected)
{
    TempDir dir;
    save_intensities(small_volume(), dir / "a.segv");
    using nlohmann::json;
    auto parse = [&](const json& j) { return parse_manifest(j, dir.path); };
    EXPECT_NO_THROW(parse({{"volumes", {{{"volume_path", "a.segv"}}}}}));
    EXPECT_EQ(parse({{"volumes", {{{"volume_path", "a.segv"}}}}}).entries[0].id, "a");
    EXPECT_THROW(parse({{"volumes", {{{"volume_path", "nope.segv"}}}}}), DataError);
    EXPECT_THROW(parse({{"volumes", {{{"volume_path", "a.segv"}, {"split", "val"}}}}}), DataError);
    EXPECT_THROW(parse({{"volumes", {{{"volume_path", "a.segv"}, {"id", "x"}}, {{"volume_path", "a.segv"}, {"id", "x"}}}}}),
                 DataError);
    EXPECT_THROW(parse({{"volumes",
                         {{{"volume_path", "a.segv"}, {"id", "x"}, {"split", "train"}},
                          {{"volume_path", "a.segv"}, {"id", "y"}, {"split", "test"}}}}}),
                 DataError);
    EXPECT_THROW(parse({{"volumes", {{{"volume_path", "a.segv"}, {"mask_path", "m.segv"}}}}}), DataError);
    EXPECT_THROW(parse(json::object()), DataError);
    write_file(dir / "broken.json", "{not json");
    EXPECT_THROW(load_manifest(dir / "broken.json"), DataError);
}

TEST(Synth, DegenerateSpecsRejected)
{
    SynthSpec s;
    s.radius_min = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = SynthSpec{};
    s.radius_max = 50; // does not fit in 96 px
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = SynthSpec{};
    s.radius_min = 30;
    s.radius_max = 20;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = SynthSpec{};
    s.noise_sigma = -1;
    EXPECT_THROW(generate_synthetic(s, 2), std::invalid_argument);
    EXPECT_THROW(generate_synthetic(SynthSpec{}, 0), std::invalid_argument);
    EXPECT_THROW(object_kind_from_string("cube"), std::invalid_argument);
}

TEST(Synth, SameSeedSameVolume)
{
    SynthSpec s;
    s.seed = 42;
    const Volume a = generate_synthetic(s, 5), b = generate_synthetic(s, 5);
    EXPECT_EQ(a.intensities, b.intensities);
    EXPECT_EQ(a.mask, b.mask);
    s.seed = 43;
    EXPECT_NE(generate_synthetic(s, 5).intensities, a.intensities);
    EXPECT_EQ(a.dims, (std::array<std::uint32_t, 3>{5, 96, 96}));
}

TEST(Synth, JsonRoundTrip)
{
    SynthSpec s;
    s.kind = ObjectKind::blob;
    s.seed = 99;
    s.centered = true;
    const auto t = synth_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(t), to_json(s));
    EXPECT_THROW(synth_spec_from_json({{"radius_max", 80}}), std::invalid_argument);
}

TEST(Synth, DiskCentroidMatchesObject)
{
    SynthSpec s;
    std::vector<SynthObject> objs;
    const Volume v = generate_synthetic(s, 20, &objs);
    for (std::size_t k = 0; k < 20; ++k) {
        const Mask m = v.mask_slice(k);
        const auto c = centroid_mm(std::vector<std::uint8_t>(m.values().begin(), m.values().end()), {1, 96, 96},
                                   {1, 1, 1});
        EXPECT_NEAR(c[0], objs[k].cx, 1.0);
        EXPECT_NEAR(c[1], objs[k].cy, 1.0);
        const auto area = static_cast<double>(std::count(m.values().begin(), m.values().end(), 1));
        EXPECT_NEAR(area, std::numbers::pi * objs[k].a * objs[k].a, 2.0 * std::numbers::pi * objs[k].a + 4.0);
    }
}

TEST(Synth, EveryKindGivesOneConnectedObjectInsideTheImage)
{
    for (ObjectKind kind : {ObjectKind::disk, ObjectKind::ellipse, ObjectKind::blob}) {
        SynthSpec s;
        s.kind = kind;
        s.radius_max = kind == ObjectKind::blob ? 20 : 24;
        const Volume v = generate_synthetic(s, 15);
        for (std::size_t k = 0; k < 15; ++k) {
            const Mask m = v.mask_slice(k);
            EXPECT_EQ(components(m), 1u) << to_string(kind) << " slice " << k;
            for (std::size_t i = 0; i < 96; ++i) {
                EXPECT_EQ(m[i], 0);             // top row
                EXPECT_EQ(m[95 * 96 + i], 0);   // bottom row
                EXPECT_EQ(m[i * 96], 0);        // left column
                EXPECT_EQ(m[i * 96 + 95], 0);   // right column
            }
        }
    }
}

TEST(Synth, BlurLadderSoftensBoundary)
{
    // Noise-free centered disks: a larger blur lowers the steepest edge step.
    double previous = 2.0;
    for (double sigma : {0.0, 1.0, 2.0, 4.0}) {
        SynthSpec s;
        s.centered = true;
        s.noise_sigma = 0;
        s.distractors = 0;
        s.blur_sigma = sigma;
        const Volume v = generate_synthetic(s, 1);
        double steepest = 0;
        for (std::size_t x = 0; x + 1 < 96; ++x)
            steepest = std::max(steepest, static_cast<double>(std::abs(v.intensities[48 * 96 + x + 1]
                                                                       - v.intensities[48 * 96 + x])));
        EXPECT_LT(steepest, previous) << "sigma " << sigma;
        previous = steepest;
    }
}

TEST(Synth, GaussianBlurPreservesConstantsAndMass)
{
    std::vector<double> flat(30, 2.5);
    for (double v : gaussian_blur(flat, 5, 6, 1.7))
        EXPECT_NEAR(v, 2.5, 1e-12);
    std::vector<double> spike(21 * 21, 0.0);
    spike[10 * 21 + 10] = 1.0;
    double mass = 0;
    for (double v : gaussian_blur(spike, 21, 21, 1.5))
        mass += v;
    EXPECT_NEAR(mass, 1.0, 1e-12);
    EXPECT_EQ(gaussian_blur(spike, 21, 21, 0.0), spike);
}
