#include "fibro/features.hpp"

#include <cmath>

#include "fibro/error.hpp"

namespace fibro {

Sex parse_sex(std::string_view s) {
    if (s == "Male") return Sex::Male;
    if (s == "Female") return Sex::Female;
    throw ValidationError("unknown sex '" + std::string(s) + "' (valid: Male, Female)");
}

Smoking parse_smoking(std::string_view s) {
    if (s == "Currently smokes") return Smoking::CurrentlySmokes;
    if (s == "Ex-smoker") return Smoking::ExSmoker;
    if (s == "Never smoked") return Smoking::NeverSmoked;
    throw ValidationError("unknown smoking status '" + std::string(s) +
                          "' (valid: Currently smokes, Ex-smoker, Never smoked)");
}

std::string_view to_string(Sex s) { return s == Sex::Male ? "Male" : "Female"; }

std::string_view to_string(Smoking s) {
    switch (s) {
    case Smoking::CurrentlySmokes: return "Currently smokes";
    case Smoking::ExSmoker: return "Ex-smoker";
    case Smoking::NeverSmoked: return "Never smoked";
    }
    return "";
}

namespace {

template <class Get>
FeatureStats population_stats(std::span<const FeatureRow> rows, Get get, const char* name,
                              std::vector<std::string>& warnings) {
    double mean = 0.0;
    for (const FeatureRow& r : rows) mean += get(r);
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const FeatureRow& r : rows) {
        const double d = get(r) - mean;
        var += d * d;
    }
    var /= static_cast<double>(rows.size());
    FeatureStats s{mean, std::sqrt(var)};
    if (!(s.std > 0.0)) {
        s.std = 1.0;
        warnings.push_back(std::string(name) + ": zero standard deviation, using 1");
    }
    return s;
}

} // namespace

NormStats fit_norm_stats(std::span<const FeatureRow> rows, int fold_id) {
    if (rows.empty()) throw ValidationError("fit_norm_stats: no training rows");
    if (rows.size() < 2) throw ValidationError("fit_norm_stats: need at least 2 training rows");
    NormStats stats;
    stats.fold_id = fold_id;
    stats.age = population_stats(rows, [](const FeatureRow& r) { return r.demographics.age_years; },
                                 "age", stats.warnings);
    stats.volume = population_stats(rows, [](const FeatureRow& r) { return r.volume_mm3; }, "volume",
                                    stats.warnings);
    stats.baseline_fvc = population_stats(rows, [](const FeatureRow& r) { return r.baseline_fvc_ml; },
                                          "baseline_fvc", stats.warnings);
    return stats;
}

ShallowVector encode(const Demographics& demo, double volume_mm3, const NormStats& stats) {
    ShallowVector v;
    v.values = {
        (demo.age_years - stats.age.mean) / stats.age.std,
        demo.sex == Sex::Male ? 1.0 : 0.0,
        demo.smoking == Smoking::ExSmoker ? 1.0 : 0.0,
        demo.smoking == Smoking::CurrentlySmokes ? 1.0 : 0.0,
        (volume_mm3 - stats.volume.mean) / stats.volume.std,
    };
    return v;
}

ShallowVector encode(const FeatureRow& row, const NormStats& stats, bool include_baseline_fvc) {
    ShallowVector v = encode(row.demographics, row.volume_mm3, stats);
    if (include_baseline_fvc) {
        v.values.push_back((row.baseline_fvc_ml - stats.baseline_fvc.mean) / stats.baseline_fvc.std);
    }
    return v;
}

} // namespace fibro
