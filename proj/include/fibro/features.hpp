#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fibro {

enum class Sex { Male, Female };
enum class Smoking { CurrentlySmokes, ExSmoker, NeverSmoked };

/// Parse the clinical-file spellings ("Male"/"Female"; "Currently smokes",
/// "Ex-smoker", "Never smoked"). Unknown values throw ValidationError
/// listing the accepted ones.
Sex parse_sex(std::string_view s);
Smoking parse_smoking(std::string_view s);
std::string_view to_string(Sex s);
std::string_view to_string(Smoking s);

struct Demographics {
    double age_years = 0.0;
    Sex sex = Sex::Male;
    Smoking smoking = Smoking::NeverSmoked;
};

/// Raw inputs for one patient's shallow features.
struct FeatureRow {
    Demographics demographics;
    double volume_mm3 = 0.0;
    double baseline_fvc_ml = 0.0;
};

struct FeatureStats {
    double mean = 0.0;
    double std = 1.0;
};

/// Z-score statistics fit on one training fold. fold_id records which fold
/// produced them so evaluation code can assert there is no leakage.
struct NormStats {
    int fold_id = -1;
    FeatureStats age;
    FeatureStats volume;
    FeatureStats baseline_fvc;
    std::vector<std::string> warnings;
};

/// Mean and population (1/N) standard deviation of age, volume and baseline
/// FVC. A zero std is replaced by 1 and reported in `warnings`.
NormStats fit_norm_stats(std::span<const FeatureRow> rows, int fold_id);

/// Frozen feature order: [age_z, sex, smoke_ex, smoke_current, volume_z],
/// optionally followed by baseline_fvc_z.
inline constexpr std::size_t kShallowDim = 5;

struct ShallowVector {
    std::vector<double> values;
};

ShallowVector encode(const Demographics& demo, double volume_mm3, const NormStats& stats);
ShallowVector encode(const FeatureRow& row, const NormStats& stats, bool include_baseline_fvc);

} // namespace fibro
