#include <gtest/gtest.h>

#include <cmath>

#include "fibro/adamw.hpp"
#include "fibro/error.hpp"
#include "fibro/ops.hpp"

using namespace fibro;

namespace {

void set_grad(Tensor& p, std::vector<double> g) {
    // Accumulate g through a tape: d/dp sum(p * g) = g.
    Tape tape;
    tape.backward(ops::sum(tape, ops::mul(tape, p, Tensor::from(p.shape(), std::move(g)))));
}

} // namespace

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
    Tensor p = Tensor::from({3}, {1, -2, 3}, true);
    set_grad(p, {0, 0, 0});
    AdamWState st;
    AdamWOptions o;
    o.weight_decay = 0.0;
    std::vector<Tensor> ps{p};
    adamw_step(ps, st, o);
    EXPECT_EQ(p.at(0), 1.0);
    EXPECT_EQ(p.at(1), -2.0);
    EXPECT_EQ(p.at(2), 3.0);
}

TEST(AdamW, DecayOnlyStep) {
    Tensor p = Tensor::from({2}, {1, -4}, true);
    set_grad(p, {0, 0});
    AdamWState st;
    AdamWOptions o;
    o.learning_rate = 0.1;
    o.weight_decay = 0.01;
    std::vector<Tensor> ps{p};
    adamw_step(ps, st, o);
    EXPECT_DOUBLE_EQ(p.at(0), 1.0 * (1 - 0.001));
    EXPECT_DOUBLE_EQ(p.at(1), -4.0 * (1 - 0.001));
}

TEST(AdamW, FirstStepMatchesReferenceFormula) {
    Tensor p = Tensor::from({1}, {1.0}, true);
    set_grad(p, {1.0});
    AdamWState st;
    AdamWOptions o;
    o.weight_decay = 0.0;
    std::vector<Tensor> ps{p};
    adamw_step(ps, st, o);
    const double m = 0.1 * 1.0, v = 0.001 * 1.0;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    EXPECT_NEAR(p.at(0), 1.0 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
    EXPECT_EQ(st.step_count, 1u);
    ASSERT_EQ(st.first_moment.size(), 1u);
    EXPECT_EQ(st.first_moment[0].size(), 1u);
    EXPECT_EQ(st.second_moment[0].size(), 1u);
}

TEST(AdamW, NoDecayReproducesAdamOverSteps) {
    Tensor p = Tensor::from({2}, {0.5, -1.0}, true);
    AdamWState st;
    AdamWOptions o;
    o.learning_rate = 0.01;
    o.weight_decay = 0.0;
    double ref[2] = {0.5, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
    for (int t = 1; t <= 5; ++t) {
        const std::vector<double> g = {0.3 * t, -0.7 + 0.1 * t};
        p.zero_grad();
        set_grad(p, g);
        std::vector<Tensor> ps{p};
        adamw_step(ps, st, o);
        for (int i = 0; i < 2; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.at(i), ref[i], 1e-14);
        }
        EXPECT_EQ(st.step_count, static_cast<std::uint64_t>(t));
    }
}

TEST(AdamW, DecayIndependentOfGradient) {
    // The parameter change from decay is p * lr * wd whatever the gradient.
    for (double g : {-5.0, 0.0, 0.1, 30.0}) {
        Tensor with = Tensor::from({1}, {2.0}, true), without = Tensor::from({1}, {2.0}, true);
        set_grad(with, {g});
        set_grad(without, {g});
        AdamWState s1, s2;
        AdamWOptions o;
        o.learning_rate = 0.05;
        o.weight_decay = 0.2;
        std::vector<Tensor> a{with};
        adamw_step(a, s1, o);
        o.weight_decay = 0.0;
        std::vector<Tensor> b{without};
        adamw_step(b, s2, o);
        EXPECT_NEAR(without.at(0) - with.at(0), 2.0 * 0.05 * 0.2, 1e-15) << g;
    }
}

TEST(AdamW, RejectsBadOptions) {
    std::vector<Tensor> ps{Tensor::zeros({1}, true)};
    AdamWState st;
    for (auto mutate : std::vector<void (*)(AdamWOptions&)>{
             [](AdamWOptions& o) { o.learning_rate = 0.0; }, [](AdamWOptions& o) { o.learning_rate = -1.0; },
             [](AdamWOptions& o) { o.beta1 = 1.0; }, [](AdamWOptions& o) { o.beta2 = 0.0; },
             [](AdamWOptions& o) { o.epsilon = 0.0; }, [](AdamWOptions& o) { o.weight_decay = -0.1; }}) {
        AdamWOptions o;
        mutate(o);
        EXPECT_THROW(adamw_step(ps, st, o), ValidationError);
    }
}

TEST(AdamW, ZeroLearningRateOptimizerIsNoOp) {
    Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
    AdamWOptions o;
    o.learning_rate = 0.0;
    AdamW opt({p}, o);
    set_grad(p, {3.0, -1.0});
    opt.step();
    EXPECT_EQ(p.at(0), 1.0);
    EXPECT_EQ(p.at(1), 2.0);
    opt.zero_grad();
    EXPECT_EQ(p.grad()[0], 0.0);
}
