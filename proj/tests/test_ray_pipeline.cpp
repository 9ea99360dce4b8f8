#include <gtest/gtest.h>

#include <set>

#include "seqpatch/random.hpp"
#include "seqpatch/ray_pipeline.hpp"

using namespace seqpatch;

namespace {

Mask disk_mask(std::size_t h, std::size_t w, double cx, double cy, double r)
{
    Mask m(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            m[y * w + x] = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 1 : 0;
    return m;
}

Image random_image(std::size_t h, std::size_t w, Rng& rng)
{
    Image img(Shape{h, w});
    for (auto& v : img.values())
        v = static_cast<float>(rng.uniform());
    return img;
}

// Per-pixel oracle: visit every patch of every ray for each pixel.
LikelihoodMap fuse_oracle(const std::vector<SequencePrediction>& preds, std::size_t h, std::size_t w)
{
    LikelihoodMap m(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (const auto& s : preds)
                for (std::size_t t = 0; t < s.patch_centers.size(); ++t) {
                    const std::size_t size = s.probabilities[t].dim(0);
                    const int r = static_cast<int>(y) - (s.patch_centers[t].y - static_cast<int>(size / 2));
                    const int c = static_cast<int>(x) - (s.patch_centers[t].x - static_cast<int>(size / 2));
                    if (r < 0 || c < 0 || r >= static_cast<int>(size) || c >= static_cast<int>(size))
                        continue;
                    m.prob_sum[y * w + x] += s.probabilities[t][static_cast<std::size_t>(r) * size + c];
                    ++m.coverage[y * w + x];
                }
    return m;
}

std::vector<SequencePrediction> label_predictions(const std::vector<PatchSequence>& seqs)
{
    std::vector<SequencePrediction> out;
    for (const auto& s : seqs)
        out.push_back({s.patch_centers, s.label_patches});
    return out;
}

ExtractionConfig random_config(Rng& rng, std::size_t h, std::size_t w)
{
    ExtractionConfig c;
    c.num_rays = 1 + rng.below(24);
    c.patch_size = 2 * (2 + rng.below(20));
    c.stride = 1 + rng.below(c.patch_size - 1);
    c.seq_len = 1 + rng.below(12);
    c.center = {static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h))};
    return c;
}

} // namespace

TEST(Extraction, AxisRayCentersAndOverlap)
{
    ExtractionConfig c;
    c.center = {100, 100};
    c.seq_len = 5;
    const auto centers = ray_patch_centers(c, 0);
    EXPECT_EQ(centers[0], (Point{100, 100}));
    EXPECT_EQ(centers[1], (Point{104, 100}));
    EXPECT_EQ(centers[2], (Point{108, 100}));
    // Column ranges [x-16, x+16) of neighbours share 32 - 4 columns.
    EXPECT_EQ(32 - (centers[1].x - centers[0].x), 28);
    EXPECT_EQ(ray_patch_centers(c, 4)[1], (Point{100, 104})); // quarter turn points toward +y
}

TEST(Extraction, PaperSettingsAreValid)
{
    ExtractionConfig kidney;
    kidney.seq_len = 15;
    kidney.stride = 4;
    ExtractionConfig prostate;
    prostate.seq_len = 12;
    prostate.stride = 6;
    Rng rng(1);
    const Image img = random_image(120, 120, rng);
    for (auto c : {kidney, prostate}) {
        c.center = {60, 60};
        const auto seqs = extract_sequences(img, nullptr, c);
        ASSERT_EQ(seqs.size(), 16u);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            EXPECT_EQ(seqs[i].patches.size(), c.seq_len);
            EXPECT_DOUBLE_EQ(seqs[i].angle, 2.0 * std::numbers::pi * i / 16.0);
            EXPECT_TRUE(seqs[i].label_patches.empty());
        }
    }
}

TEST(Extraction, DiskLabelsInsideThenOutside)
{
    ExtractionConfig c;
    c.center = {100, 100};
    c.seq_len = 15;
    c.stride = 4;
    const Mask m = disk_mask(200, 200, 100, 100, 30);
    Image img(Shape{200, 200});
    const auto seqs = extract_sequences(img, &m, c);
    for (const auto& s : seqs) {
        const Image& first = s.label_patches.front();
        for (std::size_t y = 8; y < 24; ++y)
            for (std::size_t x = 8; x < 24; ++x)
                EXPECT_EQ(first[y * 32 + x], 1.0f);
        for (float v : s.label_patches.back().values())
            EXPECT_EQ(v, 0.0f);
    }
}

TEST(Extraction, OutOfBoundsPixelsAreZeroFilled)
{
    Image img(Shape{10, 10});
    img.fill(3.0f);
    const Image p = crop_patch(img, {0, 0}, 8);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            EXPECT_EQ(p[y * 8 + x], (y >= 4 && x >= 4) ? 3.0f : 0.0f);
}

TEST(Extraction, InvalidInputsRejected)
{
    Image img(Shape{20, 20});
    ExtractionConfig c;
    c.center = {20, 5};
    EXPECT_THROW(extract_sequences(img, nullptr, c), std::out_of_range);
    c.center = {5, -1};
    EXPECT_THROW(extract_sequences(img, nullptr, c), std::out_of_range);
    c.center = {5, 5};
    c.stride = 32;
    EXPECT_THROW(extract_sequences(img, nullptr, c), std::invalid_argument);
    c.stride = 4;
    c.num_rays = 0;
    EXPECT_THROW(extract_sequences(img, nullptr, c), std::invalid_argument);
    c.num_rays = 16;
    Mask wrong(Shape{20, 21});
    EXPECT_THROW(extract_sequences(img, &wrong, c), ShapeError);
}

TEST(Extraction, FirstPatchContainsClick)
{
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 8 + rng.below(90), w = 8 + rng.below(90);
        const ExtractionConfig c = random_config(rng, h, w);
        Mask marker(Shape{h, w});
        marker[static_cast<std::size_t>(c.center.y) * w + c.center.x] = 1;
        const auto seqs = extract_sequences(Image(Shape{h, w}), &marker, c);
        for (const auto& s : seqs) {
            float total = 0.0f;
            for (float v : s.label_patches.front().values())
                total += v;
            ASSERT_EQ(total, 1.0f);
        }
    }
}

TEST(Extraction, ConsecutivePatchesOverlap)
{
    for (std::size_t stride : {4, 6}) {
        ExtractionConfig c;
        c.center = {50, 50};
        c.stride = stride;
        c.seq_len = 10;
        for (std::size_t r = 0; r < c.num_rays; ++r) {
            const auto centers = ray_patch_centers(c, r);
            for (std::size_t t = 1; t < centers.size(); ++t) {
                const int dx = std::abs(centers[t].x - centers[t - 1].x);
                const int dy = std::abs(centers[t].y - centers[t - 1].y);
                EXPECT_LE(std::max(dx, dy), static_cast<int>(stride) + 1);
                const int shared = (32 - dx) * (32 - dy);
                EXPECT_GT(shared, 0);
                if (r == 0)
                    EXPECT_EQ(shared, (32 - static_cast<int>(stride)) * 32);
            }
        }
    }
}

TEST(Extraction, CentersAreCollinearUpToRounding)
{
    ExtractionConfig c;
    c.center = {40, 60};
    c.seq_len = 12;
    c.stride = 6;
    for (std::size_t r = 0; r < c.num_rays; ++r) {
        const auto [dx, dy] = ray_direction(r, c.num_rays);
        for (const Point& p : ray_patch_centers(c, r)) {
            const double px = p.x - c.center.x, py = p.y - c.center.y;
            EXPECT_LE(std::abs(px * dy - py * dx), std::sqrt(0.5) + 1e-9); // distance from the ray line
        }
    }
}

TEST(Extraction, QuarterTurnRotatesGeometry)
{
    Rng rng(3);
    for (std::size_t rays : {4, 8, 16, 32})
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 64;
            ExtractionConfig c;
            c.num_rays = rays;
            c.stride = rng.uniform() < 0.5 ? 4 : 6;
            c.seq_len = 10;
            c.center = {static_cast<int>(rng.below(n)), static_cast<int>(rng.below(n))};
            // Image rotation (x, y) -> (n-1-y, x) maps the +x axis onto +y.
            auto rot = [n](Point p) { return Point{n - 1 - p.y, p.x}; };
            ExtractionConfig cr = c;
            cr.center = rot(c.center);
            std::set<Point> a, b;
            for (std::size_t r = 0; r < rays; ++r) {
                for (const Point& p : ray_patch_centers(c, r))
                    a.insert(rot(p));
                for (const Point& p : ray_patch_centers(cr, r))
                    b.insert(p);
            }
            EXPECT_EQ(a, b);
        }
}

TEST(TrainingCenter, Examples)
{
    Mask m(Shape{10, 10});
    m[3 * 10 + 7] = 1;
    EXPECT_EQ(training_center(m), (Point{7, 3}));
    Mask block(Shape{30, 30});
    for (std::size_t y : {10, 11})
        for (std::size_t x : {20, 21})
            block[y * 30 + x] = 1;
    EXPECT_EQ(training_center(block), (Point{21, 11}));
    EXPECT_THROW(training_center(Mask(Shape{4, 4})), std::invalid_argument);
}

TEST(TrainingCenter, EllipseMatchesPixelAverage)
{
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const double cx = rng.uniform(20, 44), cy = rng.uniform(20, 44);
        const double a = rng.uniform(3, 15), b = rng.uniform(3, 15);
        Mask m(Shape{64, 64});
        double sx = 0, sy = 0, n = 0;
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x)
                if ((x - cx) * (x - cx) / (a * a) + (y - cy) * (y - cy) / (b * b) <= 1.0) {
                    m[y * 64 + x] = 1;
                    sx += x;
                    sy += y;
                    ++n;
                }
        EXPECT_EQ(training_center(m), (Point{round_half_up(sx / n), round_half_up(sy / n)}));
    }
}

TEST(Fusion, ConstantPredictionsFuseToConstant)
{
    ExtractionConfig c;
    c.center = {30, 20};
    c.seq_len = 4;
    const auto seqs = extract_sequences(Image(Shape{50, 60}), nullptr, c);
    std::vector<SequencePrediction> preds;
    for (const auto& s : seqs) {
        Image p(Shape{32, 32});
        p.fill(0.8f);
        preds.push_back({s.patch_centers, std::vector<Image>(s.patch_centers.size(), p)});
    }
    const auto map = fuse(preds, 50, 60);
    for (std::size_t i = 0; i < map.coverage.size(); ++i) {
        if (map.covered(i))
            EXPECT_NEAR(map.fused(i), 0.8, 1e-6);
        else
            EXPECT_EQ(map.fused(i), 0.0);
        EXPECT_LE(map.prob_sum[i], static_cast<double>(map.coverage[i]));
    }
}

TEST(Fusion, TwoPatchTieGoesToForeground)
{
    Image lo(Shape{4, 4}), hi(Shape{4, 4});
    lo.fill(0.2f);
    hi.fill(0.8f);
    const std::vector<SequencePrediction> preds{{{Point{2, 2}, Point{3, 2}}, {lo, hi}}};
    const auto map = fuse(preds, 6, 6);
    // Pixel (2,1) lies in both crops: columns [0,4) and [1,5).
    const std::size_t i = 1 * 6 + 2;
    EXPECT_EQ(map.coverage[i], 2u);
    EXPECT_NEAR(map.fused(i), 0.5, 1e-7);
    EXPECT_EQ(threshold(map)[i], 1);
    Image half(Shape{4, 4});
    half.fill(0.5f);
    const auto exact = fuse({{{Point{2, 2}}, {half}}}, 6, 6);
    EXPECT_EQ(threshold(exact)[i], 1);
    EXPECT_EQ(threshold(exact)[5 * 6 + 5], 0); // uncovered
}

TEST(Fusion, MatchesPerPixelOracle)
{
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 20 + rng.below(40), w = 20 + rng.below(40);
        ExtractionConfig c = random_config(rng, h, w);
        const auto seqs = extract_sequences(Image(Shape{h, w}), nullptr, c);
        std::vector<SequencePrediction> preds;
        for (const auto& s : seqs) {
            SequencePrediction p{s.patch_centers, {}};
            for (std::size_t t = 0; t < s.patch_centers.size(); ++t)
                p.probabilities.push_back(random_image(c.patch_size, c.patch_size, rng));
            preds.push_back(p);
        }
        const auto a = fuse(preds, h, w);
        const auto b = fuse_oracle(preds, h, w);
        EXPECT_EQ(a.coverage, b.coverage);
        EXPECT_EQ(a.prob_sum, b.prob_sum);
    }
}

TEST(Fusion, LabelRoundTripReproducesMaskOnCoveredPixels)
{
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = 16 + rng.below(80), w = 16 + rng.below(80);
        Mask m(Shape{h, w});
        for (auto& v : m.values())
            v = rng.uniform() < 0.4 ? 1 : 0;
        const ExtractionConfig c = random_config(rng, h, w);
        const auto seqs = extract_sequences(Image(Shape{h, w}), &m, c);
        const auto map = fuse(label_predictions(seqs), h, w);
        const Mask out = threshold(map);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (map.covered(i))
                ASSERT_EQ(out[i], m[i]);
    }
}

TEST(Fusion, CoverageMonotoneInSequenceLength)
{
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        ExtractionConfig c = random_config(rng, 60, 60);
        c.seq_len = 1 + rng.below(6);
        auto cover = [&](const ExtractionConfig& cfg) {
            const auto seqs = extract_sequences(Image(Shape{60, 60}), nullptr, cfg);
            std::vector<SequencePrediction> preds;
            for (const auto& s : seqs)
                preds.push_back({s.patch_centers, s.patches});
            return fuse(preds, 60, 60).coverage;
        };
        const auto a = cover(c);
        ExtractionConfig longer = c;
        longer.seq_len += 1 + rng.below(4);
        const auto b = cover(longer);
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] > 0)
                ASSERT_GT(b[i], 0u);
    }
}

TEST(Normalization, ZeroMeanUnitStd)
{
    Rng rng(8);
    Image img = random_image(17, 23, rng);
    for (auto& v : img.values())
        v = 5.0f + 3.0f * v;
    const Image n = normalize_intensity(img);
    double mean = 0, var = 0;
    for (float v : n.values())
        mean += v;
    mean /= static_cast<double>(n.size());
    for (float v : n.values())
        var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var / static_cast<double>(n.size()), 1.0, 1e-4);
    Image flat(Shape{4, 4});
    flat.fill(2.0f);
    const Image zeros = normalize_intensity(flat);
    for (float v : zeros.values())
        EXPECT_EQ(v, 0.0f);
}

TEST(Batching, UnbatchInvertsBatch)
{
    Rng rng(9);
    ExtractionConfig c;
    c.center = {40, 40};
    c.seq_len = 3;
    c.num_rays = 5;
    const auto seqs = extract_sequences(random_image(80, 80, rng), nullptr, c);
    const Array<float> batch = batch_patches(seqs, false);
    EXPECT_EQ(batch.shape(), (Shape{15, 1, 32, 32}));
    const auto back = unbatch_predictions(batch, seqs);
    for (std::size_t r = 0; r < seqs.size(); ++r)
        for (std::size_t t = 0; t < 3; ++t)
            EXPECT_EQ(back[r].probabilities[t], seqs[r].patches[t]);
}
