#include "fibro/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fibro/hash.hpp"
#include "fibro/ops.hpp"

namespace fibro {

GradCheckResult gradient_check(const ModelConfig& config, const GradCheckOptions& options) {
    FibroModel model(config);
    std::mt19937_64 rng(derive_seed(options.seed, {0x67c}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> pixels(config.input_height * config.input_width);
    for (double& v : pixels) v = unit(rng);
    const Tensor slice = Tensor::from({1, 1, config.input_height, config.input_width}, pixels);
    ShallowVector shallow;
    for (std::size_t i = 0; i < config.shallow_dim; ++i) shallow.values.push_back(gauss(rng));

    const Tensor target = Tensor::scalar(model.predict(slice, shallow) + 0.01);
    auto loss_value = [&] {
        Tape tape(false);
        return ops::l1_loss(tape, model.forward(tape, slice, shallow), target).item();
    };

    {
        Tape tape;
        tape.backward(ops::l1_loss(tape, model.forward(tape, slice, shallow), target));
    }

    GradCheckResult result;
    for (const auto& [name, param] : model.named_parameters()) {
        Tensor p = param;
        const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                          : std::vector<double>(p.numel(), 0.0);
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = loss_value();
            values[i] = saved - options.step;
            const double down = loss_value();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++result.checked;
            if (rel > result.max_rel_error || result.worst_parameter.empty()) {
                result.max_rel_error = std::max(rel, result.max_rel_error);
                result.worst_parameter = name;
                result.worst_index = i;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace fibro
