#include "fibro/metrics.hpp"

#include <algorithm>

#include "fibro/error.hpp"

namespace fibro {

double lll_m_single(double fvc_true_ml, const Prediction& pred) {
    if (!std::isfinite(fvc_true_ml) || !std::isfinite(pred.fvc_pred_ml) || !std::isfinite(pred.sigma_ml)) {
        throw ValidationError("lll_m: non-finite input");
    }
    if (!(pred.sigma_ml > 0.0)) throw ValidationError("lll_m: sigma must be positive");
    const double sigma_c = std::max(pred.sigma_ml, kSigmaFloorMl);
    const double delta = std::min(std::abs(fvc_true_ml - pred.fvc_pred_ml), kErrorCapMl);
    return -std::numbers::sqrt2 * delta / sigma_c - std::log(std::numbers::sqrt2 * sigma_c);
}

double lll_m_aggregate(std::span<const ScoredRow> rows) {
    if (rows.empty()) throw ValidationError("lll_m_aggregate: no rows");
    double acc = 0.0;
    for (const ScoredRow& r : rows) acc += lll_m_single(r.fvc_true_ml, r.pred);
    return acc / static_cast<double>(rows.size());
}

double rmse(std::span<const ScoredRow> rows) {
    if (rows.empty()) throw ValidationError("rmse: no rows");
    double acc = 0.0;
    for (const ScoredRow& r : rows) {
        const double e = r.fvc_true_ml - r.pred.fvc_pred_ml;
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(rows.size()));
}

double rmse(std::span<const double> truth, std::span<const double> pred) {
    if (truth.empty()) throw ValidationError("rmse: no rows");
    if (truth.size() != pred.size()) throw ValidationError("rmse: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = truth[i] - pred[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(truth.size()));
}

ScorePair score(std::span<const ScoredRow> rows) { return {lll_m_aggregate(rows), rmse(rows)}; }

} // namespace fibro
