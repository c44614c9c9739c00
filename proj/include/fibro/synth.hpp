#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fibro/ct_prep.hpp"

namespace fibro {

struct Ellipsoid {
    double cx = 0.0, cy = 0.0, cz = 0.0;  // mm, volume frame
    double rx = 1.0, ry = 1.0, rz = 1.0;  // semi-axes, mm

    double volume_mm3() const;
};

/// Chest phantom: air outside an elliptic-cylinder body of soft tissue,
/// containing dark ellipsoidal lungs. Voxel centres sit at
/// ((c + 0.5) dx, (r + 0.5) dy, (k + 0.5) dz); in-plane partial volume is
/// rendered by 4x4 supersampling.
struct PhantomSpec {
    std::size_t height = 64, width = 64, n_slices = 32;
    Spacing spacing{1.0, 1.0, 5.0};
    double body_cx = 32.0, body_cy = 32.0;  // mm
    double body_rx = 30.0, body_ry = 28.0;  // mm
    std::vector<Ellipsoid> lungs;
    double air_value = 0.0;
    double tissue_value = 1250.0;
    double lung_value = 150.0;
    double noise_sd = 0.0;
    std::uint64_t noise_seed = 0;

    double lung_volume_mm3() const;
};

CtVolume render_phantom(const PhantomSpec& spec, const std::string& patient_id);

/// Default two-lung layout centred in the field of view, with semi-axes
/// scaled by `size_factor` (volume scales as size_factor^3).
PhantomSpec two_lung_phantom(std::size_t height, std::size_t width, std::size_t n_slices,
                             const Spacing& spacing, double size_factor);

struct SynthOptions {
    std::size_t n_patients = 40;
    double noise_ml = 40.0;
    std::uint64_t seed = 0;
    std::size_t height = 64, width = 64, n_slices = 32;
    Spacing spacing{5.0, 5.0, 10.0};
};

struct TruthRow {
    std::string patient_id;
    double true_slope = 0.0;
    double analytic_volume_mm3 = 0.0;
};

/// Writes `train.csv`, `truth.csv` and `ct/<id>/` containers under `out`.
/// Each patient gets a true slope a* ~ U(-14,-2) ml/week and a baseline;
/// 6-9 visits at distinct weeks carry a*·w + b + N(0, noise_ml). Lung size
/// grows monotonically with a* (milder decline, larger lungs) with a small
/// sex-dependent factor.
std::vector<TruthRow> generate_synthetic(const std::filesystem::path& out, const SynthOptions& options);

std::vector<TruthRow> load_truth_csv(const std::filesystem::path& path);

} // namespace fibro
