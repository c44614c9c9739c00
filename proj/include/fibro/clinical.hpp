#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fibro/features.hpp"
#include "fibro/slope_fit.hpp"

namespace fibro {

inline constexpr const char* kClinicalHeader = "Patient,Weeks,FVC,Percent,Age,Sex,SmokingStatus";

struct PatientRecord {
    std::string patient_id;
    FvcSeries fvc_series;
    std::vector<double> percent;
    Demographics demographics;
    std::filesystem::path ct_ref;
};

/// Parses the clinical table. Rows are grouped by patient in order of first
/// appearance; visits keep file order, duplicates included. Demographics come
/// from a patient's first row. Each record's ct_ref is `ct_root / id`.
std::vector<PatientRecord> load_clinical_csv(const std::filesystem::path& path,
                                             const std::filesystem::path& ct_root = {});
void write_clinical_csv(const std::filesystem::path& path, const std::vector<PatientRecord>& records);

/// Index of the earliest-week visit (first in file order on ties).
std::size_t baseline_index(const FvcSeries& series);

/// Copy of `series` without negative weeks.
FvcSeries drop_negative_weeks(const FvcSeries& series);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

} // namespace fibro
