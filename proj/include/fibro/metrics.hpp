#pragma once

#include <cmath>
#include <numbers>
#include <span>

namespace fibro {

struct Prediction {
    double fvc_pred_ml = 0.0;
    double sigma_ml = 70.0;
};

struct ScoredRow {
    double fvc_true_ml = 0.0;
    Prediction pred;
};

/// Higher (less negative) LLL_m is better.
struct ScorePair {
    double lll_m = 0.0;
    double rmse = 0.0;
};

inline constexpr double kSigmaFloorMl = 70.0;
inline constexpr double kErrorCapMl = 1000.0;

/// Best attainable score, -ln(sqrt(2) * 70).
inline double lll_m_upper_bound() { return -std::log(std::numbers::sqrt2 * kSigmaFloorMl); }

/// Modified Laplace log-likelihood of one measurement:
///   sigma_c = max(sigma, 70), delta = min(|true - pred|, 1000),
///   score = -sqrt(2) * delta / sigma_c - ln(sqrt(2) * sigma_c).
double lll_m_single(double fvc_true_ml, const Prediction& pred);

/// Arithmetic mean of per-row scores.
double lll_m_aggregate(std::span<const ScoredRow> rows);

/// Unclipped root mean squared error of fvc_pred_ml against fvc_true_ml.
double rmse(std::span<const ScoredRow> rows);
double rmse(std::span<const double> truth, std::span<const double> pred);

ScorePair score(std::span<const ScoredRow> rows);

} // namespace fibro
