#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fibro/features.hpp"
#include "fibro/tensor.hpp"
#include "json.hpp"

namespace fibro {

enum class Activation { ReLU, SiLU };

struct ModelConfig {
    std::size_t input_height = 64;
    std::size_t input_width = 64;
    /// Stem width is the first entry; each entry then adds one stride-2
    /// residual stage. The last entry is the attention channel dim c'.
    std::vector<std::size_t> backbone_channels = {8, 16, 32};
    /// Inner dim d_k of the query/key projections.
    std::size_t attention_filter_size = 32;
    /// Number of stacked attention layers l (0 disables attention).
    std::size_t stacking_factor = 3;
    std::size_t shallow_dim = kShallowDim;
    /// Linear c' -> c' map applied after pooling, before fusion.
    bool deep_linear = true;
    Activation activation = Activation::SiLU;
    double gamma_init_low = 0.0;
    double gamma_init_high = 0.1;
    /// Zero the second convolution of the last residual block at init.
    bool zero_init_last_block = false;
    std::uint64_t seed = 0;

    std::size_t channels_out() const { return backbone_channels.back(); }
    /// Spatial size after the stem and every stride-2 stage.
    std::pair<std::size_t, std::size_t> feature_size() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ResidualBlockParams {
    Tensor conv1_w, conv1_b;  // stride 2, 3x3
    Tensor conv2_w, conv2_b;  // stride 1, 3x3
    Tensor proj_w;            // stride 2, 1x1 shortcut
};

struct BackboneParams {
    Tensor stem_w, stem_b;
    std::vector<ResidualBlockParams> stages;
};

struct AttentionLayerParams {
    Tensor w_f;    // [c', d_k] query projection
    Tensor w_g;    // [c', d_k] key projection
    Tensor w_h;    // [c', c'] value projection
    Tensor gamma;  // [1] residual gate
};

struct HeadParams {
    Tensor deep_w, deep_b;  // optional [c', c'] and [c']
    Tensor out_w, out_b;    // [(c' + shallow), 1] and [1]
};

/// Stem conv, then one stride-2 residual block per stage. Input
/// [1,1,H,W] with values in [0,1]; output [1,c',h',w'].
Tensor backbone_forward(Tape& tape, const Tensor& slice, const BackboneParams& params,
                        Activation act);

/// [1,c',h',w'] -> [c', h'*w'] and back; both alias storage.
Tensor flatten_spatial(Tape& tape, const Tensor& features);
Tensor unflatten_spatial(Tape& tape, const Tensor& flat, std::size_t height, std::size_t width);

/// Self-attention over spatial positions of x [c',N]:
///   Q = W_f^T x, K = W_g^T x, V = W_h x,
///   beta = softmax_rows(Q^T K)            (row i: query position i),
///   out = gamma * (V beta^T) + x.
/// If `beta_out` is non-null it receives the N x N attention weights.
Tensor attention_layer(Tape& tape, const Tensor& x, const AttentionLayerParams& params,
                       Tensor* beta_out = nullptr);

Tensor stacked_attention(Tape& tape, const Tensor& x, std::span<const AttentionLayerParams> layers);

/// Row-wise mean of f_a over positions (GAP), optional deep linear layer,
/// concat with the shallow vector, then the output affine map. Returns [1].
Tensor fuse_and_predict(Tape& tape, const Tensor& f_a, const ShallowVector& shallow,
                        const HeadParams& head);

/// slope * (week - baseline_week) + baseline_fvc for every week.
std::vector<double> reconstruct_fvc(double slope, double baseline_fvc_ml, int baseline_week,
                                    std::span<const int> weeks);

class FibroModel {
public:
    explicit FibroModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    const BackboneParams& backbone() const { return backbone_; }
    const std::vector<AttentionLayerParams>& attention() const { return attention_; }
    const HeadParams& head() const { return head_; }
    std::vector<AttentionLayerParams>& attention() { return attention_; }

    /// Predicted slope as a [1] tensor. `slice` is [1,1,H,W] (or [H,W]).
    Tensor forward(Tape& tape, const Tensor& slice, const ShallowVector& shallow) const;
    /// Same network with the attention stack skipped.
    Tensor forward_without_attention(Tape& tape, const Tensor& slice,
                                     const ShallowVector& shallow) const;
    double predict(const Tensor& slice, const ShallowVector& shallow) const;

    /// Stable registration order; names are unique.
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }
    std::vector<Tensor> parameters() const;
    /// Deep linear and output layers only.
    std::vector<Tensor> head_parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    /// Parameter archive with the config (plus `extra`) embedded as JSON
    /// metadata under keys "model_config" and "extra".
    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
    static FibroModel load(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

private:
    Tensor head_forward(Tape& tape, const Tensor& fc, const ShallowVector& shallow,
                        bool with_attention) const;
    Tensor add_param(const std::string& name, Tensor t);

    ModelConfig config_;
    BackboneParams backbone_;
    std::vector<AttentionLayerParams> attention_;
    HeadParams head_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

} // namespace fibro
