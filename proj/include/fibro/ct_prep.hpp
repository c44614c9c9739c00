#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fibro {

template <class T>
struct Raster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> pixels;  // row-major

    Raster() = default;
    Raster(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), pixels(h * w, fill) {}

    T& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    const T& at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    std::size_t size() const { return pixels.size(); }
};

using IntRaster = Raster<std::int32_t>;
using RealRaster = Raster<double>;

/// Binary lung mask, values exactly 0 or 1.
using LungMask = Raster<std::uint8_t>;

struct Spacing {
    double dx = 1.0;
    double dy = 1.0;
    double dz = 1.0;
};

struct CtVolume {
    std::string patient_id;
    std::vector<IntRaster> slices;  // anatomical order
    Spacing spacing_mm;

    /// Throws ValidationError when slices disagree in size or spacing is not
    /// strictly positive.
    void validate() const;
};

struct PreparedSlice {
    RealRaster pixels;  // values in [0,1]
    std::size_t source_index = 0;
};

// --- container I/O --------------------------------------------------------
//
// Per-patient directory:
//   meta.json        {"patient_id", "spacing_mm": [dx,dy,dz], "n_slices",
//                     "dims": [H,W], optional "slice_positions": [z...]}
//   slice_0000.raw   H*W signed 16-bit little-endian, row-major
//
// When slice_positions is present the slices are sorted by it on load.

CtVolume load_ct_volume(const std::filesystem::path& dir);
void save_ct_volume(const std::filesystem::path& dir, const CtVolume& volume,
                    const std::vector<double>* slice_positions = nullptr);

// --- slice selection ------------------------------------------------------

struct SliceBand {
    std::size_t lo = 0;  // inclusive
    std::size_t hi = 0;  // exclusive
};

/// Drops floor(15% of m) slices from each end.
SliceBand truncated_band(std::size_t n_slices);

struct SliceChoice {
    std::size_t index = 0;
    std::optional<std::string> warning;
};

/// Uniform draw from the truncated band with a seeded mt19937_64. Falls back
/// to the middle slice (with a warning) when the band is empty.
SliceChoice select_slice(std::size_t n_slices, std::uint64_t seed);
SliceChoice select_slice(const CtVolume& volume, std::uint64_t seed);

// --- intensity and geometry -----------------------------------------------

inline constexpr double kIntensityMax = 2048.0;  // lambda_a
inline constexpr double kIntensityMin = 0.0;     // lambda_b

/// (v - 0) / (2048 - 0), clamped to [0,1].
double normalize_intensity(std::int32_t value);
RealRaster normalize_intensity(const IntRaster& slice);

/// Corner-aligned bilinear resampling: output corners map onto input
/// corners. A single output row/column samples the input centre.
RealRaster resize_bilinear(const RealRaster& src, std::size_t height, std::size_t width);

PreparedSlice prepare_slice(const CtVolume& volume, std::size_t index, std::size_t height,
                            std::size_t width);

// --- segmentation and volume ----------------------------------------------

struct WatershedParams {
    /// Pixels strictly below t_low seed lung markers (components not
    /// touching the image border).
    std::int32_t t_low = 400;
    /// Pixels strictly above t_high seed the background marker, together
    /// with every below-t_low component that touches the border.
    std::int32_t t_high = 1100;
};

struct MaskResult {
    LungMask mask;
    std::optional<std::string> warning;
};

/// Sobel gradient magnitude with replicated borders.
RealRaster sobel_magnitude(const IntRaster& slice);

/// Marker-controlled watershed. Markers are flooded over the Sobel gradient
/// magnitude in priority order (ties broken by insertion order); the mask is
/// the union of basins grown from lung markers. Pixels between the two
/// thresholds are the only ones whose label depends on the flooding, so the
/// mask is unchanged by any intensity edit that keeps every pixel on the
/// same side of both thresholds and preserves gradient ordering.
MaskResult watershed_lung_mask(const IntRaster& slice, const WatershedParams& params = {});

/// Slice multiplied by its mask; debugging aid only.
IntRaster apply_mask(const IntRaster& slice, const LungMask& mask);

struct VolumeEstimate {
    double volume_mm3 = 0.0;
    std::vector<std::size_t> slices_without_marker;
};

/// Sum of mask pixel counts times dx*dy*dz.
double volume_from_masks(const std::vector<LungMask>& masks, const Spacing& spacing);
VolumeEstimate estimate_volume(const CtVolume& volume, const WatershedParams& params = {});

} // namespace fibro
