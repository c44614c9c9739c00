#include "fibro/model.hpp"

#include <cmath>
#include <random>
#include <set>

#include "fibro/checkpoint.hpp"
#include "fibro/error.hpp"
#include "fibro/json_util.hpp"
#include "fibro/ops.hpp"

namespace fibro {

using nlohmann::json;

namespace {

std::string_view activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "silu"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "silu") return Activation::SiLU;
    throw ValidationError("model config: unknown activation '" + s + "' (valid: relu, silu)");
}

Tensor activate(Tape& tape, const Tensor& x, Activation act) {
    return act == Activation::ReLU ? ops::relu(tape, x) : ops::silu(tape, x);
}

std::size_t conv_out(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
    return (n + 2 * pad - k) / stride + 1;
}

} // namespace

std::pair<std::size_t, std::size_t> ModelConfig::feature_size() const {
    std::size_t h = input_height, w = input_width;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
    }
    return {h, w};
}

void ModelConfig::validate() const {
    if (input_height == 0 || input_width == 0) throw ValidationError("model config: input size must be positive");
    if (backbone_channels.empty()) throw ValidationError("model config: backbone_channels is empty");
    for (std::size_t c : backbone_channels) {
        if (c == 0) throw ValidationError("model config: channel counts must be positive");
    }
    if (attention_filter_size == 0) throw ValidationError("model config: attention_filter_size must be positive");
    if (shallow_dim == 0) throw ValidationError("model config: shallow_dim must be positive");
    if (gamma_init_low > gamma_init_high) throw ValidationError("model config: gamma_init_low > gamma_init_high");
    // Each stride-2 stage needs at least 2 pixels to shrink the map.
    std::size_t h = input_height, w = input_width;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
        if (h < 2 || w < 2) {
            throw ValidationError("model config: input " + std::to_string(input_height) + "x" +
                                  std::to_string(input_width) + " too small for " +
                                  std::to_string(backbone_channels.size()) + " stride-2 stages");
        }
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
    }
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"input_size", {c.input_height, c.input_width}},
             {"backbone_channels", c.backbone_channels},
             {"attention_filter_size", c.attention_filter_size},
             {"stacking_factor", c.stacking_factor},
             {"shallow_dim", c.shallow_dim},
             {"deep_linear", c.deep_linear},
             {"activation", activation_name(c.activation)},
             {"gamma_init", {c.gamma_init_low, c.gamma_init_high}},
             {"zero_init_last_block", c.zero_init_last_block},
             {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
    static const std::set<std::string> known = {
        "input_size", "backbone_channels", "attention_filter_size", "stacking_factor", "shallow_dim",
        "deep_linear", "activation", "gamma_init", "zero_init_last_block", "seed"};
    if (!j.is_object()) throw ValidationError("model config: expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ValidationError("model config: unknown key '" + key + "'");
    ModelConfig d;
    try {
        if (j.contains("input_size")) {
            const json& s = j.at("input_size");
            if (!s.is_array() || s.size() != 2) throw ValidationError("model config: input_size must be [H, W]");
            d.input_height = json_unsigned<std::size_t>(s[0], "model config: input_size");
            d.input_width = json_unsigned<std::size_t>(s[1], "model config: input_size");
        }
        if (j.contains("backbone_channels")) {
            d.backbone_channels.clear();
            for (const json& v : j.at("backbone_channels"))
                d.backbone_channels.push_back(json_unsigned<std::size_t>(v, "model config: backbone_channels"));
        }
        d.attention_filter_size = json_unsigned(j, "attention_filter_size", d.attention_filter_size, "model config");
        d.stacking_factor = json_unsigned(j, "stacking_factor", d.stacking_factor, "model config");
        d.shallow_dim = json_unsigned(j, "shallow_dim", d.shallow_dim, "model config");
        d.deep_linear = j.value("deep_linear", d.deep_linear);
        d.activation = parse_activation(j.value("activation", std::string(activation_name(d.activation))));
        if (j.contains("gamma_init")) {
            const auto g = j.at("gamma_init").get<std::vector<double>>();
            if (g.size() != 2) throw ValidationError("model config: gamma_init must be [low, high]");
            d.gamma_init_low = g[0];
            d.gamma_init_high = g[1];
        }
        d.zero_init_last_block = j.value("zero_init_last_block", d.zero_init_last_block);
        d.seed = json_unsigned(j, "seed", d.seed, "model config");
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    d.validate();
    c = d;
}

Tensor backbone_forward(Tape& tape, const Tensor& slice, const BackboneParams& p, Activation act) {
    if (slice.rank() != 4 || slice.dim(0) != 1 || slice.dim(1) != 1) {
        throw ShapeError("backbone_forward: expected [1,1,H,W], got " + shape_str(slice.shape()));
    }
    Tensor x = ops::add_channel_bias(tape, ops::conv2d(tape, slice, p.stem_w, 1, 1), p.stem_b);
    x = activate(tape, x, act);
    for (const ResidualBlockParams& b : p.stages) {
        if (x.dim(2) < 2 || x.dim(3) < 2) {
            throw ShapeError("backbone_forward: feature map " + shape_str(x.shape()) +
                             " too small for another stride-2 stage");
        }
        Tensor h = ops::add_channel_bias(tape, ops::conv2d(tape, x, b.conv1_w, 2, 1), b.conv1_b);
        h = activate(tape, h, act);
        h = ops::add_channel_bias(tape, ops::conv2d(tape, h, b.conv2_w, 1, 1), b.conv2_b);
        const Tensor skip = ops::conv2d(tape, x, b.proj_w, 2, 0);
        x = activate(tape, ops::add(tape, h, skip), act);
    }
    return x;
}

Tensor flatten_spatial(Tape& tape, const Tensor& features) {
    if (features.rank() != 4 || features.dim(0) != 1) {
        throw ShapeError("flatten_spatial: expected [1,c,h,w], got " + shape_str(features.shape()));
    }
    return ops::reshape(tape, features, {features.dim(1), features.dim(2) * features.dim(3)});
}

Tensor unflatten_spatial(Tape& tape, const Tensor& flat, std::size_t height, std::size_t width) {
    if (flat.rank() != 2 || flat.dim(1) != height * width) {
        throw ShapeError("unflatten_spatial: " + shape_str(flat.shape()) + " is not [c, " +
                         std::to_string(height * width) + "]");
    }
    return ops::reshape(tape, flat, {1, flat.dim(0), height, width});
}

Tensor attention_layer(Tape& tape, const Tensor& x, const AttentionLayerParams& p, Tensor* beta_out) {
    if (x.rank() != 2) throw ShapeError("attention_layer: expected [c', N], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0);
    if (p.w_f.rank() != 2 || p.w_f.dim(0) != c || p.w_g.shape() != p.w_f.shape() ||
        p.w_h.shape() != Shape{c, c} || p.gamma.numel() != 1) {
        throw ShapeError("attention_layer: parameters do not match " + std::to_string(c) + " channels");
    }
    const Tensor q = ops::matmul(tape, ops::transpose(tape, p.w_f), x);  // [d_k, N]
    const Tensor k = ops::matmul(tape, ops::transpose(tape, p.w_g), x);  // [d_k, N]
    const Tensor v = ops::matmul(tape, p.w_h, x);                        // [c', N]
    const Tensor scores = ops::matmul(tape, ops::transpose(tape, q), k); // [N, N]
    const Tensor beta = ops::softmax_rows(tape, scores);
    const Tensor o = ops::matmul(tape, v, ops::transpose(tape, beta));   // [c', N]
    Tensor out = ops::add(tape, ops::scale(tape, o, p.gamma), x);
    for (double val : out.data()) {
        if (!std::isfinite(val)) throw ValidationError("attention_layer: non-finite output");
    }
    if (beta_out) *beta_out = beta;
    return out;
}

Tensor stacked_attention(Tape& tape, const Tensor& x, std::span<const AttentionLayerParams> layers) {
    Tensor y = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].w_h.rank() != 2 || layers[i].w_h.dim(0) != x.dim(0)) {
            throw ShapeError("stacked_attention: layer " + std::to_string(i) + " channel count differs");
        }
        y = attention_layer(tape, y, layers[i]);
    }
    return y;
}

Tensor fuse_and_predict(Tape& tape, const Tensor& f_a, const ShallowVector& shallow, const HeadParams& head) {
    Tensor f_d = ops::row_mean(tape, f_a);  // [c']
    if (head.deep_w.defined()) {
        const std::size_t c = f_d.dim(0);
        f_d = ops::reshape(tape, ops::linear(tape, ops::reshape(tape, f_d, {1, c}), head.deep_w, head.deep_b),
                           {c});
    }
    const Tensor s = Tensor::from({shallow.values.size()}, shallow.values);
    const Tensor parts[] = {f_d, s};
    const Tensor f_h = ops::concat(tape, parts);
    const Tensor row = ops::reshape(tape, f_h, {1, f_h.dim(0)});
    return ops::reshape(tape, ops::linear(tape, row, head.out_w, head.out_b), {1});
}

std::vector<double> reconstruct_fvc(double slope, double baseline_fvc_ml, int baseline_week,
                                    std::span<const int> weeks) {
    std::vector<double> out;
    out.reserve(weeks.size());
    for (int w : weeks) out.push_back(slope * static_cast<double>(w - baseline_week) + baseline_fvc_ml);
    return out;
}

FibroModel::FibroModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    auto normal = [&](Shape shape, double std_dev) {
        std::normal_distribution<double> dist(0.0, std_dev);
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = dist(rng);
        return Tensor::from(std::move(shape), std::move(v), true);
    };
    auto zeros = [](Shape shape) { return Tensor::zeros(std::move(shape), true); };
    auto conv = [&](std::size_t out, std::size_t in, std::size_t k) {
        return normal({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)));
    };

    const auto& ch = config_.backbone_channels;
    backbone_.stem_w = add_param("stem.weight", conv(ch[0], 1, 3));
    backbone_.stem_b = add_param("stem.bias", zeros({ch[0]}));
    std::size_t in = ch[0];
    for (std::size_t s = 0; s < ch.size(); ++s) {
        const std::string pre = "stage" + std::to_string(s) + ".";
        const std::size_t out = ch[s];
        ResidualBlockParams b;
        b.conv1_w = add_param(pre + "conv1.weight", conv(out, in, 3));
        b.conv1_b = add_param(pre + "conv1.bias", zeros({out}));
        Tensor w2 = conv(out, out, 3);
        if (config_.zero_init_last_block && s + 1 == ch.size()) w2 = zeros({out, out, 3, 3});
        b.conv2_w = add_param(pre + "conv2.weight", w2);
        b.conv2_b = add_param(pre + "conv2.bias", zeros({out}));
        b.proj_w = add_param(pre + "proj.weight", conv(out, in, 1));
        backbone_.stages.push_back(std::move(b));
        in = out;
    }

    const std::size_t c = config_.channels_out();
    const std::size_t dk = config_.attention_filter_size;
    const double proj_std = std::sqrt(1.0 / static_cast<double>(c));
    std::uniform_real_distribution<double> gamma_dist(config_.gamma_init_low, config_.gamma_init_high);
    for (std::size_t l = 0; l < config_.stacking_factor; ++l) {
        const std::string pre = "attn" + std::to_string(l) + ".";
        AttentionLayerParams a;
        a.w_f = add_param(pre + "w_f", normal({c, dk}, proj_std));
        a.w_g = add_param(pre + "w_g", normal({c, dk}, proj_std));
        a.w_h = add_param(pre + "w_h", normal({c, c}, proj_std));
        const double g0 = config_.gamma_init_low == config_.gamma_init_high ? config_.gamma_init_low
                                                                            : gamma_dist(rng);
        a.gamma = add_param(pre + "gamma", Tensor::scalar(g0, true));
        attention_.push_back(std::move(a));
    }

    if (config_.deep_linear) {
        head_.deep_w = add_param("head.deep.weight", normal({c, c}, proj_std));
        head_.deep_b = add_param("head.deep.bias", zeros({c}));
    }
    const std::size_t fused = c + config_.shallow_dim;
    head_.out_w = add_param("head.out.weight", normal({fused, 1}, std::sqrt(1.0 / static_cast<double>(fused))));
    head_.out_b = add_param("head.out.bias", zeros({1}));
}

Tensor FibroModel::add_param(const std::string& name, Tensor t) {
    params_.emplace_back(name, t);
    return t;
}

Tensor FibroModel::head_forward(Tape& tape, const Tensor& slice, const ShallowVector& shallow,
                                bool with_attention) const {
    if (shallow.values.size() != config_.shallow_dim) {
        throw ShapeError("model expects " + std::to_string(config_.shallow_dim) + " shallow features, got " +
                         std::to_string(shallow.values.size()));
    }
    Tensor input = slice;
    if (slice.rank() == 2) input = Tensor::from({1, 1, slice.dim(0), slice.dim(1)}, {slice.data().begin(), slice.data().end()});
    if (input.rank() != 4 || input.dim(2) != config_.input_height || input.dim(3) != config_.input_width) {
        throw ShapeError("model expects a " + std::to_string(config_.input_height) + "x" +
                         std::to_string(config_.input_width) + " slice, got " + shape_str(slice.shape()));
    }
    const Tensor fc = backbone_forward(tape, input, backbone_, config_.activation);
    Tensor f = flatten_spatial(tape, fc);
    if (with_attention) f = stacked_attention(tape, f, attention_);
    return fuse_and_predict(tape, f, shallow, head_);
}

Tensor FibroModel::forward(Tape& tape, const Tensor& slice, const ShallowVector& shallow) const {
    return head_forward(tape, slice, shallow, true);
}

Tensor FibroModel::forward_without_attention(Tape& tape, const Tensor& slice,
                                             const ShallowVector& shallow) const {
    return head_forward(tape, slice, shallow, false);
}

double FibroModel::predict(const Tensor& slice, const ShallowVector& shallow) const {
    Tape tape(false);
    return forward(tape, slice, shallow).item();
}

std::vector<Tensor> FibroModel::parameters() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

std::vector<Tensor> FibroModel::head_parameters() const {
    std::vector<Tensor> out;
    if (head_.deep_w.defined()) {
        out.push_back(head_.deep_w);
        out.push_back(head_.deep_b);
    }
    out.push_back(head_.out_w);
    out.push_back(head_.out_b);
    return out;
}

std::size_t FibroModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void FibroModel::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void FibroModel::save(const std::filesystem::path& path, const json& extra) const {
    ArrayArchive archive;
    for (const auto& [name, t] : params_) {
        archive.arrays.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
    }
    json meta{{"model_config", config_}, {"extra", extra}};
    archive.metadata = meta.dump();
    save_archive(path, archive);
}

FibroModel FibroModel::load(const std::filesystem::path& path, json* extra) {
    const ArrayArchive archive = load_archive(path);
    json meta;
    try {
        meta = json::parse(archive.metadata);
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": bad metadata: " + e.what());
    }
    if (!meta.contains("model_config")) throw DataError("checkpoint " + path.string() + ": no model_config");
    FibroModel model(meta.at("model_config").get<ModelConfig>());
    if (archive.arrays.size() != model.params_.size()) {
        throw DataError("checkpoint " + path.string() + ": parameter count differs from config");
    }
    for (std::size_t i = 0; i < archive.arrays.size(); ++i) {
        const NamedArray& a = archive.arrays[i];
        auto& [name, t] = model.params_[i];
        if (a.name != name || a.shape != t.shape()) {
            throw DataError("checkpoint " + path.string() + ": unexpected array '" + a.name + "' " +
                            shape_str(a.shape));
        }
        auto dst = t.mutable_data();
        std::copy(a.values.begin(), a.values.end(), dst.begin());
    }
    if (extra) *extra = meta.value("extra", json{});
    return model;
}

} // namespace fibro
