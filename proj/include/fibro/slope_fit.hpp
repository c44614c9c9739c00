#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace fibro {

/// A patient's FVC measurements. Weeks are relative to the baseline CT and
/// may be negative; duplicate weeks are kept as separate rows.
struct FvcSeries {
    std::vector<int> weeks;
    std::vector<double> fvc_ml;

    std::size_t size() const { return weeks.size(); }
};

struct SlopeLabel {
    double slope_ml_per_week = 0.0;
    double intercept_ml = 0.0;
    double residual_norm = 0.0;
};

/// Least-squares system A x = b with A = [weeks | 1] stored row-major.
struct DesignSystem {
    std::size_t rows = 0;
    std::vector<double> a;  // rows x 2
    std::vector<double> b;  // rows

    double at(std::size_t r, std::size_t c) const { return a[r * 2 + c]; }
};

/// Thin SVD of a j x 2 matrix: A = U diag(sigma) V^T, U is j x 2 with
/// orthonormal columns, sigma descending and nonnegative, V 2 x 2 orthogonal.
struct Svd2 {
    std::size_t rows = 0;
    std::vector<double> u;         // rows x 2, row-major
    std::array<double, 2> sigma{}; // descending
    std::array<double, 4> v{};     // 2 x 2, row-major; columns are right singular vectors
};

DesignSystem build_design_matrix(const FvcSeries& series);

/// SVD of a rows x 2 row-major matrix. A single Jacobi rotation diagonalizes
/// A^T A exactly; the singular values are taken as the norms of the rotated
/// columns, which keeps small singular values accurate.
Svd2 svd_2col(const std::vector<double>& a, std::size_t rows);

/// Moore-Penrose solution x = V S^+ U^T b. Singular values below
/// 1e-12 * sigma_max are treated as zero.
SlopeLabel fit_slope(const FvcSeries& series);

inline constexpr double kPinvRelativeTolerance = 1e-12;

} // namespace fibro
