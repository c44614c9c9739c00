#include "fibro/adamw.hpp"

#include <cmath>

#include "fibro/error.hpp"

namespace fibro {

void AdamWOptions::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("adamw: learning rate must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ValidationError("adamw: betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw ValidationError("adamw: epsilon must be > 0");
    if (weight_decay < 0.0) throw ValidationError("adamw: weight decay must be >= 0");
}

void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWOptions& options) {
    options.validate();
    if (state.first_moment.size() != params.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (const Tensor& p : params) {
            state.first_moment.emplace_back(p.numel(), 0.0);
            state.second_moment.emplace_back(p.numel(), 0.0);
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(options.beta1, t);
    const double bc2 = 1.0 - std::pow(options.beta2, t);
    const double decay = 1.0 - options.learning_rate * options.weight_decay;

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        auto values = p.mutable_data();
        const auto grad = p.grad();
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != values.size()) throw ShapeError("adamw: moment size does not match parameter");
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
            v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            values[i] *= decay;
            values[i] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
        }
    }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
    if (options_.learning_rate < 0.0) throw ValidationError("adamw: learning rate must be >= 0");
    if (options_.learning_rate > 0.0) options_.validate();
}

void AdamW::step() {
    if (options_.learning_rate == 0.0) {
        state_.step_count += 1;
        return;
    }
    adamw_step(params_, state_, options_);
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

} // namespace fibro
