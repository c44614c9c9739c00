#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "fibro/error.hpp"
#include "fibro/gradcheck.hpp"
#include "fibro/model.hpp"
#include "fibro/ops.hpp"
#include "test_util.hpp"

using namespace fibro;
using fibro::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t layers = 1) {
    ModelConfig c;
    c.input_height = c.input_width = 16;
    c.backbone_channels = {4, 8, 16};
    c.attention_filter_size = 8;
    c.stacking_factor = layers;
    return c;
}

AttentionLayerParams attention_params(std::size_t c, std::size_t dk, double gamma, std::mt19937_64& rng) {
    return {random_tensor({c, dk}, rng), random_tensor({c, dk}, rng), random_tensor({c, c}, rng),
            Tensor::scalar(gamma, true)};
}

ShallowVector shallow5(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    ShallowVector s;
    for (int i = 0; i < 5; ++i) s.values.push_back(g(rng));
    return s;
}

Tensor random_slice(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    return random_tensor({1, 1, h, w}, rng, 0.0, 1.0, false);
}

void close_all_gates(FibroModel& m) {
    for (AttentionLayerParams& a : m.attention()) {
        Tensor g = a.gamma;
        g.mutable_data()[0] = 0.0;
    }
}

} // namespace

TEST(Backbone, DefaultOutputShape) {
    ModelConfig c;
    c.stacking_factor = 0;
    FibroModel m(c);
    std::mt19937_64 rng(61);
    Tape tape(false);
    const Tensor f = backbone_forward(tape, random_slice(64, 64, rng), m.backbone(), c.activation);
    EXPECT_EQ(f.shape(), (Shape{1, 32, 8, 8}));
    EXPECT_EQ(c.feature_size(), (std::pair<std::size_t, std::size_t>{8, 8}));
}

TEST(Backbone, ZeroInputZeroLastBlockIsFinite) {
    ModelConfig c = tiny_config();
    c.zero_init_last_block = true;
    FibroModel m(c);
    Tape tape(false);
    const Tensor f = backbone_forward(tape, Tensor::zeros({1, 1, 16, 16}), m.backbone(), c.activation);
    for (double v : f.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, ShapeIndependentOfSeed) {
    std::mt19937_64 rng(62);
    const Tensor x = random_slice(16, 16, rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ModelConfig c = tiny_config();
        c.seed = seed;
        FibroModel m(c);
        Tape tape(false);
        EXPECT_EQ(backbone_forward(tape, x, m.backbone(), c.activation).shape(), (Shape{1, 16, 2, 2}));
    }
}

TEST(Backbone, InputTooSmallRejected) {
    ModelConfig c = tiny_config();
    c.input_height = c.input_width = 2;
    EXPECT_THROW(FibroModel{c}, ValidationError);
}

TEST(Flatten, RoundTrip) {
    Tape tape;
    const Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor f = flatten_spatial(tape, x);
    EXPECT_EQ(f.shape(), (Shape{2, 4}));
    EXPECT_EQ(std::vector<double>(f.data().begin(), f.data().end()), (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
    const Tensor back = unflatten_spatial(tape, f, 2, 2);
    EXPECT_EQ(back.shape(), x.shape());
    std::mt19937_64 rng(63);
    const Tensor r = random_tensor({1, 5, 3, 4}, rng);
    const Tensor rr = unflatten_spatial(tape, flatten_spatial(tape, r), 3, 4);
    EXPECT_EQ(std::vector<double>(rr.data().begin(), rr.data().end()),
              std::vector<double>(r.data().begin(), r.data().end()));
    EXPECT_THROW(unflatten_spatial(tape, f, 3, 3), ShapeError);
}

TEST(Attention, ClosedGateIsIdentity) {
    std::mt19937_64 rng(64);
    const Tensor x = random_tensor({6, 10}, rng);
    Tape tape;
    const Tensor y = attention_layer(tape, x, attention_params(6, 4, 0.0, rng));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Attention, SinglePosition) {
    std::mt19937_64 rng(65);
    const Tensor x = random_tensor({3, 1}, rng);
    const AttentionLayerParams p = attention_params(3, 2, 0.37, rng);
    Tape tape;
    Tensor beta;
    const Tensor y = attention_layer(tape, x, p, &beta);
    EXPECT_EQ(beta.item(), 1.0);
    for (int c = 0; c < 3; ++c) {
        double v = 0;
        for (int k = 0; k < 3; ++k) v += p.w_h.at(c * 3 + k) * x.at(k);
        EXPECT_NEAR(y.at(c), 0.37 * v + x.at(c), 1e-15);
    }
}

TEST(Attention, MatchesDenseOracle) {
    // c' = 2, N = 3, d_k = 2.
    const Tensor x = Tensor::from({2, 3}, {0.5, -1.0, 2.0, 1.5, 0.25, -0.75}, true);
    const AttentionLayerParams p{Tensor::from({2, 2}, {0.1, -0.2, 0.3, 0.4}, true),
                                 Tensor::from({2, 2}, {-0.5, 0.2, 0.1, 0.6}, true),
                                 Tensor::from({2, 2}, {1.0, 0.5, -0.5, 2.0}, true), Tensor::scalar(0.8, true)};
    double q[2][3], k[2][3], v[2][3];
    for (int d = 0; d < 2; ++d)
        for (int n = 0; n < 3; ++n) {
            q[d][n] = k[d][n] = v[d][n] = 0;
            for (int c = 0; c < 2; ++c) {
                q[d][n] += p.w_f.at(c * 2 + d) * x.at(c * 3 + n);
                k[d][n] += p.w_g.at(c * 2 + d) * x.at(c * 3 + n);
                v[d][n] += p.w_h.at(d * 2 + c) * x.at(c * 3 + n);
            }
        }
    double beta[3][3];
    for (int i = 0; i < 3; ++i) {
        double e[3], z = 0;
        for (int j = 0; j < 3; ++j) {
            e[j] = std::exp(q[0][i] * k[0][j] + q[1][i] * k[1][j]);
            z += e[j];
        }
        for (int j = 0; j < 3; ++j) beta[i][j] = e[j] / z;
    }
    Tape tape;
    Tensor b;
    const Tensor y = attention_layer(tape, x, p, &b);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i) {
            double o = 0;
            for (int j = 0; j < 3; ++j) o += v[c][j] * beta[i][j];
            EXPECT_NEAR(y.at(c * 3 + i), 0.8 * o + x.at(c * 3 + i), 1e-14);
            EXPECT_NEAR(b.at(i * 3 + c), beta[i][c], 1e-15);
        }
}

TEST(Attention, BetaRowStochastic) {
    std::mt19937_64 rng(66);
    const Tensor x = random_tensor({8, 25}, rng, -2, 2);
    Tape tape;
    Tensor beta;
    attention_layer(tape, x, attention_params(8, 4, 0.05, rng), &beta);
    for (int r = 0; r < 25; ++r) {
        double s = 0;
        for (int c = 0; c < 25; ++c) s += beta.at(r * 25 + c);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attention, PositionPermutationEquivariance) {
    std::mt19937_64 rng(67);
    const std::size_t c = 5, n = 9;
    const Tensor x = random_tensor({c, n}, rng);
    const AttentionLayerParams p = attention_params(c, 3, 0.6, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 4 + 1) % n;
    std::vector<double> xp(c * n);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < n; ++i) xp[ch * n + i] = x.at(ch * n + perm[i]);
    Tape tape;
    const Tensor y = attention_layer(tape, x, p);
    const Tensor yp = attention_layer(tape, Tensor::from({c, n}, xp), p);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(yp.at(ch * n + i), y.at(ch * n + perm[i]), 1e-12);
}

TEST(Attention, RejectsNonFiniteOutput) {
    std::mt19937_64 rng(68);
    const Tensor x = random_tensor({2, 3}, rng);
    AttentionLayerParams p = attention_params(2, 2, 1.0, rng);
    p.w_h.mutable_data()[0] = std::numeric_limits<double>::infinity();
    Tape tape;
    EXPECT_THROW(attention_layer(tape, x, p), ValidationError);
}

TEST(StackedAttention, CompositionRules) {
    std::mt19937_64 rng(69);
    const Tensor x = random_tensor({4, 6}, rng);
    Tape tape;
    const Tensor id = stacked_attention(tape, x, {});
    EXPECT_EQ(id.impl(), x.impl());

    const std::vector<AttentionLayerParams> one = {attention_params(4, 3, 0.3, rng)};
    const Tensor a = stacked_attention(tape, x, one), b = attention_layer(tape, x, one[0]);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));

    const std::vector<AttentionLayerParams> closed = {attention_params(4, 3, 0, rng), attention_params(4, 3, 0, rng),
                                                      attention_params(4, 3, 0, rng)};
    const Tensor c = stacked_attention(tape, x, closed);
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c.at(i), x.at(i));

    const std::vector<AttentionLayerParams> mixed = {attention_params(4, 3, 0.1, rng), attention_params(5, 3, 0.1, rng)};
    EXPECT_THROW(stacked_attention(tape, x, mixed), ShapeError);
}

TEST(Fuse, ConstantChannelsAndZeroHead) {
    HeadParams h;
    h.out_w = Tensor::zeros({7, 1}, true);
    h.out_b = Tensor::from({1}, {-6.5}, true);
    const Tensor f = Tensor::from({2, 3}, {4, 4, 4, -1, -1, -1});
    Tape tape;
    const Tensor y = fuse_and_predict(tape, f, {{1, 2, 3, 4, 5}}, h);
    EXPECT_EQ(y.item(), -6.5);
    EXPECT_EQ(ops::row_mean(tape, f).at(0), 4.0);
    EXPECT_EQ(ops::row_mean(tape, f).at(1), -1.0);
}

TEST(Fuse, MatchesComposedOracle) {
    std::mt19937_64 rng(70);
    const std::size_t c = 4, n = 6;
    const Tensor f = random_tensor({c, n}, rng);
    HeadParams h{random_tensor({c, c}, rng), random_tensor({c}, rng), random_tensor({c + 5, 1}, rng),
                 random_tensor({1}, rng)};
    const ShallowVector s = shallow5(rng);
    std::vector<double> fd(c, 0.0), deep(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i) fd[ch] += f.at(ch * n + i);
        fd[ch] /= n;
    }
    for (std::size_t o = 0; o < c; ++o) {
        deep[o] = h.deep_b.at(o);
        for (std::size_t i = 0; i < c; ++i) deep[o] += fd[i] * h.deep_w.at(i * c + o);
    }
    double want = h.out_b.at(0);
    for (std::size_t i = 0; i < c; ++i) want += deep[i] * h.out_w.at(i);
    for (std::size_t i = 0; i < 5; ++i) want += s.values[i] * h.out_w.at(c + i);
    Tape tape;
    EXPECT_NEAR(fuse_and_predict(tape, f, s, h).item(), want, 1e-13);

    HeadParams shallow_only{Tensor(), Tensor(), h.out_w, h.out_b};
    double want2 = h.out_b.at(0);
    for (std::size_t i = 0; i < c; ++i) want2 += fd[i] * h.out_w.at(i);
    for (std::size_t i = 0; i < 5; ++i) want2 += s.values[i] * h.out_w.at(c + i);
    EXPECT_NEAR(fuse_and_predict(tape, f, s, shallow_only).item(), want2, 1e-13);
}

TEST(Reconstruct, Examples) {
    const std::vector<int> weeks = {-3, 0, 5, 10, 52};
    for (double v : reconstruct_fvc(0.0, 2750, 0, weeks)) EXPECT_EQ(v, 2750.0);
    const std::vector<int> w10 = {10}, w5 = {5};
    EXPECT_EQ(reconstruct_fvc(-10, 2500, 0, w10)[0], 2400.0);
    EXPECT_EQ(reconstruct_fvc(-10, 2500, 5, w5)[0], 2500.0);
}

TEST(FibroModel, ClosedGatesMatchAttentionFreePassBitwise) {
    std::mt19937_64 rng(71);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ModelConfig c = tiny_config(3);
        c.seed = seed;
        FibroModel m(c);
        close_all_gates(m);
        const Tensor x = random_slice(16, 16, rng);
        const ShallowVector s = shallow5(rng);
        Tape t1(false), t2(false);
        const double a = m.forward(t1, x, s).item(), b = m.forward_without_attention(t2, x, s).item();
        EXPECT_EQ(std::memcmp(&a, &b, sizeof(double)), 0);
    }
}

TEST(FibroModel, ParameterCountGolden) {
    ModelConfig c;
    c.stacking_factor = 1;
    const FibroModel m(c);
    // stem 80; stages 1168 + 3488 + 14592; attention 3073; deep 1056; out 38.
    EXPECT_EQ(m.parameter_count(), 23495u);
    EXPECT_EQ(FibroModel(c).parameter_count(), m.parameter_count());

    ModelConfig t = tiny_config(3);
    // stem 40; stage 4->4: 148+148+16; 4->8: 296+584+32; 8->16: 1168+2320+128;
    // attention 3 x (128+128+256+1); deep 272; out 22.
    EXPECT_EQ(FibroModel(t).parameter_count(), 40u + 312 + 912 + 3616 + 3 * 513 + 272 + 22);
    t.deep_linear = false;
    EXPECT_EQ(FibroModel(t).parameter_count(), 40u + 312 + 912 + 3616 + 3 * 513 + 22);
}

TEST(FibroModel, NamesUniqueAndGammaInRange) {
    const FibroModel m(tiny_config(3));
    std::set<std::string> names;
    for (const auto& [name, t] : m.named_parameters()) {
        EXPECT_TRUE(names.insert(name).second) << name;
        EXPECT_TRUE(t.requires_grad()) << name;
    }
    for (const AttentionLayerParams& a : m.attention()) {
        EXPECT_GE(a.gamma.item(), 0.0);
        EXPECT_LE(a.gamma.item(), 0.1);
    }
}

TEST(FibroModel, SeedDeterminesInit) {
    ModelConfig c = tiny_config();
    const FibroModel a(c), b(c);
    c.seed = 1;
    const FibroModel d(c);
    const auto& pa = a.named_parameters();
    const auto& pb = b.named_parameters();
    const auto& pd = d.named_parameters();
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto va = pa[i].second.data(), vb = pb[i].second.data(), vd = pd[i].second.data();
        EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
        differs = differs || !std::equal(va.begin(), va.end(), vd.begin());
    }
    EXPECT_TRUE(differs);
}

TEST(FibroModel, GradientCheckTinyConfig) {
    for (std::size_t layers : {1u, 3u}) {
        const GradCheckResult r = gradient_check(tiny_config(layers));
        EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "] analytic "
                                         << r.worst_analytic << " numeric " << r.worst_numeric;
        EXPECT_EQ(r.checked, FibroModel(tiny_config(layers)).parameter_count());
    }
}

TEST(FibroModel, GradientCheckRelu) {
    ModelConfig c = tiny_config(1);
    c.activation = Activation::ReLU;
    GradCheckOptions o;
    o.seed = 3;
    EXPECT_LT(gradient_check(c, o).max_rel_error, 1e-4);
}

TEST(FibroModel, SaveLoadRoundTrip) {
    fibro::testing::TempDir tmp("model");
    ModelConfig c = tiny_config(2);
    c.seed = 9;
    const FibroModel m(c);
    m.save(tmp.path() / "m.ckpt", {{"fold", 3}});
    nlohmann::json extra;
    const FibroModel back = FibroModel::load(tmp.path() / "m.ckpt", &extra);
    EXPECT_EQ(extra.at("fold"), 3);
    EXPECT_EQ(nlohmann::json(back.config()), nlohmann::json(c));
    std::mt19937_64 rng(72);
    const Tensor x = random_slice(16, 16, rng);
    const ShallowVector s = shallow5(rng);
    EXPECT_EQ(m.predict(x, s), back.predict(x, s));
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
    ModelConfig c = tiny_config(2);
    c.activation = Activation::ReLU;
    c.deep_linear = false;
    const nlohmann::json j = c;
    EXPECT_EQ(nlohmann::json(j.get<ModelConfig>()), j);
    EXPECT_THROW(nlohmann::json({{"activation", "tanh"}}).get<ModelConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json({{"backbone_channels", std::vector<int>{}}}).get<ModelConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json({{"gamma_init", {0.5, 0.1}}}).get<ModelConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json({{"input_height", 16}}).get<ModelConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json::parse(R"({"backbone_channels": [4, -8]})").get<ModelConfig>(), ValidationError);
    EXPECT_THROW(nlohmann::json::parse(R"({"input_size": [16, -16]})").get<ModelConfig>(), ValidationError);
}
