#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fibro/error.hpp"
#include "fibro/metrics.hpp"

using namespace fibro;

TEST(Lllm, AnalyticMaximum) {
    EXPECT_NEAR(lll_m_single(2500, {2500, 70}), -std::log(std::sqrt(2.0) * 70), 1e-12);
    EXPECT_NEAR(lll_m_upper_bound(), -4.5951, 1e-4);
}

TEST(Lllm, BothClips) {
    const double s = lll_m_single(7000, {2000, 100});
    EXPECT_NEAR(s, -std::sqrt(2.0) * 1000 / 100 - std::log(std::sqrt(2.0) * 100), 1e-12);
    EXPECT_NEAR(s, -19.0939, 1e-4);
}

TEST(Lllm, SigmaClip) {
    for (double delta : {0.0, 10.0, 250.0, 999.0, 5000.0}) {
        EXPECT_EQ(lll_m_single(delta, {0, 10}), lll_m_single(delta, {0, 70}));
        EXPECT_EQ(lll_m_single(delta, {0, 1e-6}), lll_m_single(delta, {0, 70}));
    }
}

TEST(Lllm, MonotoneAndFlatPastCap) {
    double prev = 0;
    for (double d = 0; d <= 1500; d += 5) {
        const double s = lll_m_single(d, {0, 120});
        if (d > 0) {
            EXPECT_LE(s, prev);
        }
        if (d >= 1000) {
            EXPECT_EQ(s, lll_m_single(1000, {0, 120}));
        }
        prev = s;
    }
}

TEST(Lllm, RejectsBadInput) {
    EXPECT_THROW(lll_m_single(1, {1, 0}), ValidationError);
    EXPECT_THROW(lll_m_single(std::numeric_limits<double>::quiet_NaN(), {1, 70}), ValidationError);
    EXPECT_THROW(lll_m_single(1, {std::numeric_limits<double>::infinity(), 70}), ValidationError);
    EXPECT_THROW(lll_m_aggregate({}), ValidationError);
    EXPECT_THROW(rmse(std::span<const ScoredRow>{}), ValidationError);
}

TEST(Lllm, Aggregate) {
    const ScoredRow a{2000, {1900, 80}}, b{2000, {2600, 200}};
    const std::vector<ScoredRow> same(5, a);
    EXPECT_NEAR(lll_m_aggregate(same), lll_m_single(2000, a.pred), 1e-14);
    const std::vector<ScoredRow> two = {a, b};
    EXPECT_NEAR(lll_m_aggregate(two), (lll_m_single(2000, a.pred) + lll_m_single(2000, b.pred)) / 2, 1e-14);

    std::mt19937_64 rng(51);
    std::normal_distribution<double> fvc(2500, 600);
    std::uniform_real_distribution<double> sig(1, 400);
    std::vector<ScoredRow> rows;
    double total = 0;
    for (int i = 0; i < 20; ++i) {
        rows.push_back({fvc(rng), {fvc(rng), sig(rng)}});
        const double sc = std::max(rows.back().pred.sigma_ml, 70.0);
        const double d = std::min(std::abs(rows.back().fvc_true_ml - rows.back().pred.fvc_pred_ml), 1000.0);
        total += -std::sqrt(2.0) * d / sc - std::log(std::sqrt(2.0) * sc);
    }
    EXPECT_NEAR(lll_m_aggregate(rows), total / 20, 1e-12);
}

TEST(Rmse, Values) {
    const std::vector<double> t = {1, 2, 3}, same = {1, 2, 3};
    EXPECT_EQ(rmse(t, same), 0.0);
    const std::vector<double> a = {0, 0}, b = {3, 4};
    EXPECT_NEAR(rmse(a, b), std::sqrt(12.5), 1e-15);
    const std::vector<ScoredRow> rows = {{10, {7, 70}}, {10, {14, 70}}};
    EXPECT_NEAR(rmse(rows), std::sqrt(12.5), 1e-15);
    const std::vector<double> big_t = {0}, big_p = {5000};
    EXPECT_EQ(rmse(big_t, big_p), 5000.0);
}

TEST(Lllm, UpperBoundOnRandomInputs) {
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> v(-5000, 5000), s(1e-3, 2000);
    const double bound = lll_m_upper_bound() + 1e-12;
    for (int i = 0; i < 100000; ++i) ASSERT_LE(lll_m_single(v(rng), {v(rng), s(rng)}), bound);
}
