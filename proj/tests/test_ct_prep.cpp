#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fibro/ct_prep.hpp"
#include "fibro/error.hpp"
#include "fibro/synth.hpp"
#include "test_util.hpp"

using namespace fibro;

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
        const double a = (y - cy) / ry, b = (x - cx) / rx;
        return a * a + b * b <= 1.0;
    }
};

IntRaster two_hole_slice(const std::vector<Ellipse>& holes, std::size_t size = 64) {
    IntRaster s(size, size, 1500);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c)
            for (const Ellipse& e : holes)
                if (e.contains(r + 0.5, c + 0.5)) s.at(r, c) = 100;
    return s;
}

double dice(const LungMask& m, const std::vector<Ellipse>& holes) {
    double inter = 0, a = 0, b = 0;
    for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c) {
            bool truth = false;
            for (const Ellipse& e : holes) truth = truth || e.contains(r + 0.5, c + 0.5);
            a += m.at(r, c);
            b += truth;
            inter += m.at(r, c) && truth;
        }
    return 2 * inter / (a + b);
}

LungMask ones(std::size_t h, std::size_t w) { return LungMask(h, w, 1); }

} // namespace

TEST(SliceSelection, BandForHundredSlices) {
    const SliceBand b = truncated_band(100);
    EXPECT_EQ(b.lo, 15u);
    EXPECT_EQ(b.hi, 85u);
    std::set<std::size_t> seen;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const SliceChoice c = select_slice(100, seed);
        EXPECT_GE(c.index, 15u);
        EXPECT_LT(c.index, 85u);
        EXPECT_FALSE(c.warning);
        seen.insert(c.index);
    }
    EXPECT_EQ(seen.size(), 70u);
}

TEST(SliceSelection, ThreeSlicesKeepsAll) {
    const SliceBand b = truncated_band(3);
    EXPECT_EQ(b.lo, 0u);
    EXPECT_EQ(b.hi, 3u);
    for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_LT(select_slice(3, seed).index, 3u);
}

TEST(SliceSelection, DeterministicPerSeed) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull, 123456789ull}) {
        EXPECT_EQ(select_slice(20, seed).index, select_slice(20, seed).index);
    }
    EXPECT_THROW(select_slice(0, 1), ValidationError);
}

TEST(Normalize, Anchors) {
    EXPECT_EQ(normalize_intensity(0), 0.0);
    EXPECT_EQ(normalize_intensity(1024), 0.5);
    EXPECT_EQ(normalize_intensity(2048), 1.0);
    EXPECT_EQ(normalize_intensity(-300), 0.0);
    EXPECT_EQ(normalize_intensity(3000), 1.0);
    double prev = -1;
    for (int v = -100; v <= 2200; ++v) {
        const double n = normalize_intensity(v);
        EXPECT_GE(n, prev);
        prev = n;
    }
}

TEST(Resize, ConstantStaysConstant) {
    RealRaster src(7, 5, 0.3);
    for (auto [h, w] : {std::pair{1, 1}, {3, 9}, {64, 64}, {2, 1}}) {
        const RealRaster out = resize_bilinear(src, h, w);
        for (double v : out.pixels) EXPECT_NEAR(v, 0.3, 1e-15);
    }
}

TEST(Resize, MonotoneRows) {
    RealRaster src(2, 2);
    src.pixels = {0, 1, 0, 1};
    const RealRaster out = resize_bilinear(src, 2, 4);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 1; c < 4; ++c) EXPECT_GE(out.at(r, c), out.at(r, c - 1));
    EXPECT_EQ(out.at(0, 0), 0.0);
    EXPECT_EQ(out.at(0, 3), 1.0);
}

TEST(Resize, MatchesDirectFormula) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 1);
    RealRaster src(8, 8);
    for (double& v : src.pixels) v = u(rng);
    const RealRaster out = resize_bilinear(src, 4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const double y = r * 7.0 / 3.0, x = c * 7.0 / 3.0;
            const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
            const int y1 = std::min(y0 + 1, 7), x1 = std::min(x0 + 1, 7);
            const double fy = y - y0, fx = x - x0;
            const double want = (1 - fy) * (1 - fx) * src.at(y0, x0) + (1 - fy) * fx * src.at(y0, x1) +
                                fy * (1 - fx) * src.at(y1, x0) + fy * fx * src.at(y1, x1);
            EXPECT_NEAR(out.at(r, c), want, 1e-12);
        }
}

TEST(Watershed, AirOnlySliceIsEmptyWithWarning) {
    const MaskResult m = watershed_lung_mask(IntRaster(32, 32, 0));
    for (auto v : m.mask.pixels) EXPECT_EQ(v, 0);
    EXPECT_TRUE(m.warning);
}

TEST(Watershed, TwoHolePhantomDice) {
    const std::vector<Ellipse> holes = {{32, 20, 14, 7.5}, {32, 44, 14, 7.5}};
    const MaskResult m = watershed_lung_mask(two_hole_slice(holes));
    EXPECT_FALSE(m.warning);
    EXPECT_GE(dice(m.mask, holes), 0.95);
    for (auto v : m.mask.pixels) EXPECT_TRUE(v == 0 || v == 1);
}

TEST(Watershed, BorderHoleExcluded) {
    const std::vector<Ellipse> inner = {{32, 20, 10, 6}};
    const std::vector<Ellipse> all = {{32, 20, 10, 6}, {32, 62, 10, 6}};
    const MaskResult m = watershed_lung_mask(two_hole_slice(all));
    for (std::size_t r = 0; r < 64; ++r) EXPECT_EQ(m.mask.at(r, 63), 0);
    EXPECT_GE(dice(m.mask, inner), 0.95);
}

TEST(Watershed, InvariantUnderShiftsThatKeepThresholdSides) {
    const std::vector<Ellipse> holes = {{30, 18, 12, 8}, {34, 44, 10, 9}};
    const IntRaster base = two_hole_slice(holes);
    const LungMask ref = watershed_lung_mask(base).mask;
    std::mt19937_64 rng(32);
    std::uniform_int_distribution<int> low(-100, 250), high(-350, 500);
    for (int trial = 0; trial < 20; ++trial) {
        IntRaster s = base;
        const int dl = low(rng), dh = high(rng);
        for (auto& v : s.pixels) v += (v < 400) ? dl : dh;
        EXPECT_EQ(watershed_lung_mask(s).mask.pixels, ref.pixels) << dl << " " << dh;
    }
}

TEST(Watershed, RejectsInvertedThresholds) {
    EXPECT_THROW(watershed_lung_mask(IntRaster(4, 4, 0), {1200, 400}), ValidationError);
}

TEST(Volume, AllOnesMasks) {
    const std::vector<LungMask> masks(10, ones(4, 4));
    EXPECT_EQ(volume_from_masks(masks, {1, 1, 5}), 800.0);
    EXPECT_EQ(volume_from_masks(masks, {1, 1, 10}), 1600.0);
}

TEST(Volume, AdditiveAndLinear) {
    std::mt19937_64 rng(33);
    std::vector<LungMask> masks;
    for (int i = 0; i < 9; ++i) {
        LungMask m(5, 6);
        for (auto& v : m.pixels) v = rng() & 1;
        masks.push_back(m);
    }
    const Spacing sp{0.7, 1.3, 2.5};
    const double total = volume_from_masks(masks, sp);
    const std::vector<LungMask> a(masks.begin(), masks.begin() + 4), b(masks.begin() + 4, masks.end());
    EXPECT_DOUBLE_EQ(volume_from_masks(a, sp) + volume_from_masks(b, sp), total);
    EXPECT_DOUBLE_EQ(volume_from_masks(masks, {1.4, 1.3, 2.5}), 2 * total);
    EXPECT_DOUBLE_EQ(volume_from_masks(masks, {0.7, 3.9, 2.5}), 3 * total);
}

TEST(Volume, EllipsoidPhantomWithinFivePercent) {
    const PhantomSpec spec = two_lung_phantom(64, 64, 32, {1, 1, 5}, 1.0);
    const CtVolume vol = render_phantom(spec, "P");
    const double v = spec.lung_volume_mm3();
    const VolumeEstimate est = estimate_volume(vol);
    EXPECT_NEAR(est.volume_mm3, v, 0.05 * v);
    CtVolume thick = vol;
    thick.spacing_mm.dz *= 2;
    EXPECT_EQ(estimate_volume(thick).volume_mm3, 2 * est.volume_mm3);
}

TEST(Container, RoundTripSortsByPosition) {
    fibro::testing::TempDir tmp("ct");
    CtVolume vol;
    vol.patient_id = "P1";
    vol.spacing_mm = {0.5, 0.5, 2};
    for (int i = 0; i < 3; ++i) vol.slices.push_back(IntRaster(2, 3, static_cast<std::int32_t>(100 * i - 50)));
    const std::vector<double> pos = {30.0, 10.0, 20.0};
    save_ct_volume(tmp.path() / "P1", vol, &pos);
    const CtVolume back = load_ct_volume(tmp.path() / "P1");
    EXPECT_EQ(back.patient_id, "P1");
    EXPECT_EQ(back.spacing_mm.dz, 2.0);
    ASSERT_EQ(back.slices.size(), 3u);
    EXPECT_EQ(back.slices[0].pixels[0], 50);
    EXPECT_EQ(back.slices[1].pixels[0], 150);
    EXPECT_EQ(back.slices[2].pixels[0], -50);
    EXPECT_THROW(load_ct_volume(tmp.path() / "missing"), DataError);
}

TEST(Container, ValidateRejectsBadVolumes) {
    CtVolume vol;
    vol.slices = {IntRaster(2, 2), IntRaster(2, 3)};
    EXPECT_THROW(vol.validate(), ValidationError);
    vol.slices = {IntRaster(2, 2)};
    vol.spacing_mm.dx = 0;
    EXPECT_THROW(vol.validate(), ValidationError);
}

TEST(PrepareSlice, DeterministicBytes) {
    const CtVolume vol = render_phantom(two_lung_phantom(48, 48, 20, {1, 1, 5}, 1.0), "P");
    const SliceChoice c = select_slice(vol, 77);
    const PreparedSlice a = prepare_slice(vol, c.index, 32, 32), b = prepare_slice(vol, c.index, 32, 32);
    EXPECT_EQ(a.pixels.pixels, b.pixels.pixels);
    EXPECT_EQ(a.source_index, c.index);
    EXPECT_EQ(a.pixels.height, 32u);
    for (double v : a.pixels.pixels) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}
