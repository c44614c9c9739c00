#include "fibro/slope_fit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fibro/error.hpp"

namespace fibro {

DesignSystem build_design_matrix(const FvcSeries& series) {
    if (series.weeks.size() != series.fvc_ml.size()) {
        throw ValidationError("fvc series: weeks and fvc lengths differ");
    }
    if (series.size() < 2) {
        throw ValidationError("fvc series needs at least 2 points, got " + std::to_string(series.size()));
    }
    DesignSystem sys;
    sys.rows = series.size();
    sys.a.reserve(2 * sys.rows);
    for (std::size_t i = 0; i < sys.rows; ++i) {
        sys.a.push_back(static_cast<double>(series.weeks[i]));
        sys.a.push_back(1.0);
    }
    sys.b = series.fvc_ml;
    return sys;
}

Svd2 svd_2col(const std::vector<double>& a, std::size_t rows) {
    if (rows < 1 || a.size() != 2 * rows) throw ShapeError("svd_2col: expected a rows x 2 matrix");
    double alpha = 0.0, beta = 0.0, gamma = 0.0;  // |c0|^2, |c1|^2, c0.c1
    for (std::size_t r = 0; r < rows; ++r) {
        const double x = a[2 * r], y = a[2 * r + 1];
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }

    // Rotation [c s; -s c] zeroing the off-diagonal of A^T A.
    double c = 1.0, s = 0.0;
    if (gamma != 0.0) {
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        c = 1.0 / std::sqrt(1.0 + t * t);
        s = c * t;
    }
    // Rotated columns: q0 = c*a0 - s*a1, q1 = s*a0 + c*a1.
    std::vector<double> q(2 * rows);
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double x = a[2 * r], y = a[2 * r + 1];
        q[2 * r] = c * x - s * y;
        q[2 * r + 1] = s * x + c * y;
        n0 += q[2 * r] * q[2 * r];
        n1 += q[2 * r + 1] * q[2 * r + 1];
    }
    n0 = std::sqrt(n0);
    n1 = std::sqrt(n1);
    std::array<double, 4> v = {c, s, -s, c};  // columns: (c,-s), (s,c)
    if (n1 > n0) {
        std::swap(n0, n1);
        for (std::size_t r = 0; r < rows; ++r) std::swap(q[2 * r], q[2 * r + 1]);
        std::swap(v[0], v[1]);
        std::swap(v[2], v[3]);
    }

    Svd2 out;
    out.rows = rows;
    out.sigma = {n0, n1};
    out.v = v;
    out.u.assign(2 * rows, 0.0);
    for (int k = 0; k < 2; ++k) {
        const double sk = out.sigma[k];
        if (sk > 0.0) {
            for (std::size_t r = 0; r < rows; ++r) out.u[2 * r + k] = q[2 * r + k] / sk;
        }
    }
    // Complete U when a singular value is zero: Gram-Schmidt a unit basis
    // vector against the first column.
    if (out.sigma[1] == 0.0 && rows >= 2) {
        for (std::size_t e = 0; e < rows; ++e) {
            std::vector<double> w(rows, 0.0);
            w[e] = 1.0;
            double dot = 0.0;
            for (std::size_t r = 0; r < rows; ++r) dot += w[r] * out.u[2 * r];
            double nrm = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                w[r] -= dot * out.u[2 * r];
                nrm += w[r] * w[r];
            }
            nrm = std::sqrt(nrm);
            if (nrm > 1e-8) {
                for (std::size_t r = 0; r < rows; ++r) out.u[2 * r + 1] = w[r] / nrm;
                break;
            }
        }
    }
    return out;
}

SlopeLabel fit_slope(const FvcSeries& series) {
    const DesignSystem sys = build_design_matrix(series);
    const bool degenerate = std::all_of(series.weeks.begin(), series.weeks.end(),
                                        [&](int w) { return w == series.weeks.front(); });
    if (degenerate) throw ValidationError("degenerate time axis: all weeks identical");

    const Svd2 svd = svd_2col(sys.a, sys.rows);
    const double tol = kPinvRelativeTolerance * svd.sigma[0];
    // x = sum_k v_k * (u_k . b) / sigma_k over retained singular values.
    double x0 = 0.0, x1 = 0.0;
    for (int k = 0; k < 2; ++k) {
        if (!(svd.sigma[k] > tol)) continue;
        double ub = 0.0;
        for (std::size_t r = 0; r < sys.rows; ++r) ub += svd.u[2 * r + k] * sys.b[r];
        const double coef = ub / svd.sigma[k];
        x0 += svd.v[0 * 2 + k] * coef;
        x1 += svd.v[1 * 2 + k] * coef;
    }

    SlopeLabel label;
    label.slope_ml_per_week = x0;
    label.intercept_ml = x1;
    double rss = 0.0;
    for (std::size_t r = 0; r < sys.rows; ++r) {
        const double e = sys.at(r, 0) * x0 + sys.at(r, 1) * x1 - sys.b[r];
        rss += e * e;
    }
    label.residual_norm = std::sqrt(rss);
    return label;
}

} // namespace fibro
