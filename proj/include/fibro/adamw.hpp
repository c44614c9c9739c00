#pragma once

#include <cstdint>
#include <vector>

#include "fibro/tensor.hpp"

namespace fibro {

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    /// Throws ValidationError for lr <= 0, betas outside (0,1), eps <= 0 or
    /// negative weight decay.
    void validate() const;
};

struct AdamWState {
    std::uint64_t step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/// One AdamW update over `params` using their accumulated gradients
/// (parameters without a gradient buffer are treated as having a zero
/// gradient). Weight decay is decoupled: p <- p * (1 - lr * wd) before the
/// bias-corrected Adam step, so it never enters the moment estimates.
void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWOptions& options);

/// Optimizer object owning its state; `learning_rate == 0` is accepted here
/// and leaves parameters untouched (useful for frozen runs).
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWOptions options);

    void step();
    void zero_grad();

    const AdamWState& state() const { return state_; }
    const AdamWOptions& options() const { return options_; }

private:
    std::vector<Tensor> params_;
    AdamWOptions options_;
    AdamWState state_;
};

} // namespace fibro
