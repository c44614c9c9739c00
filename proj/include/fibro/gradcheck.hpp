#pragma once

#include <cstdint>
#include <string>

#include "fibro/model.hpp"

namespace fibro {

struct GradCheckOptions {
    double step = 1e-5;
    /// Gradients are compared by |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences of the L1 loss against the tape gradient for every
/// scalar of every parameter. Input, shallow vector and target are drawn
/// from `seed`; the target sits 0.01 above the initial prediction so no
/// perturbation crosses the kink of |x|.
GradCheckResult gradient_check(const ModelConfig& config, const GradCheckOptions& options = {});

} // namespace fibro
