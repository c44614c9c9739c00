#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fibro/clinical.hpp"
#include "fibro/ct_prep.hpp"
#include "fibro/features.hpp"
#include "fibro/slope_fit.hpp"

namespace fibro {

/// Everything training and evaluation need about one patient, computed once
/// by `prepare`. Shallow features are stored raw because their
/// normalization depends on the training fold.
struct PreparedPatient {
    std::string patient_id;
    Demographics demographics;
    FvcSeries fvc_series;
    std::optional<SlopeLabel> label;
    double volume_mm3 = 0.0;
    std::vector<std::string> warnings;
    bool has_ct = false;
    std::size_t n_slices = 0;
    SliceBand band;
    /// Slice chosen with the prepare seed; used for evaluation.
    std::size_t eval_index = 0;
    /// Normalized, resized slices for indices band.lo .. band.hi-1.
    std::vector<RealRaster> band_slices;

    const RealRaster& slice_at(std::size_t source_index) const;
    const RealRaster& eval_slice() const { return slice_at(eval_index); }
    std::size_t baseline_row() const { return baseline_index(fvc_series); }
    FeatureRow feature_row() const;
};

struct PreparedDataset {
    std::uint64_t seed = 0;
    std::size_t height = 64, width = 64;
    bool include_negative_weeks = true;
    std::vector<PreparedPatient> patients;

    const PreparedPatient& find(const std::string& id) const;
    std::vector<std::string> patient_ids() const;
};

struct PrepareOptions {
    std::uint64_t seed = 0;
    std::size_t height = 64, width = 64;
    WatershedParams watershed;
    bool include_negative_weeks = true;
};

/// Slope pseudo-label for a series; nullopt with a reason when it cannot be
/// fit (fewer than two points or a single distinct week).
std::optional<SlopeLabel> pseudo_label(const FvcSeries& series, bool include_negative_weeks,
                                       std::string* reason = nullptr);

PreparedPatient prepare_patient(const PatientRecord& record, const PrepareOptions& options);

/// Reads `<data_dir>/train.csv` and `<data_dir>/ct/<id>/` containers.
PreparedDataset prepare_dataset(const std::filesystem::path& data_dir, const PrepareOptions& options);

/// Binary container, little-endian:
///   magic "FIBROPDS" | u32 version | u64 seed | u64 H | u64 W
///   | u32 include_negative_weeks | u64 patient count | patients...
/// Version 1 freezes the feature coding documented in FEATURES.md.
inline constexpr std::uint32_t kPreparedFormatVersion = 1;
void save_prepared(const std::filesystem::path& path, const PreparedDataset& dataset);
PreparedDataset load_prepared(const std::filesystem::path& path);

/// `patient_id,volume_mm3,n_slices,warnings` (warnings joined with ';').
void write_volumes_csv(const std::filesystem::path& path, const PreparedDataset& dataset);

/// `patient_id,slope,intercept,residual_norm,n_points`; patients whose
/// series cannot be fit are skipped.
void write_slopes_csv(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                      bool include_negative_weeks);

} // namespace fibro
