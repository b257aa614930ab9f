#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "tempcomm/fusion.hpp"
#include "tempcomm/graph_encoder.hpp"
#include "tempcomm/graphbuild.hpp"
#include "tempcomm/nn.hpp"
#include "tempcomm/rng.hpp"
#include "tempcomm/temporal_encoder.hpp"

namespace tempcomm {

struct ModelConfig {
    int n_assets = 0;
    int window_len = 89;
    int in_features = 7;
    int d_latent = 32;
    int hidden = 32;  // graph encoder width h
    int n_heads = 4;
    int inducing = 16;
    int reduction = 16;
    double dropout = 0.1;
    AttentionMode mode = AttentionMode::Full;
    std::uint64_t seed = 42;
};

struct ModelOutput {
    ad::Var z_final;  // {N, d_latent}
    ad::Var z_graph;  // {N, h}
    EncodedScales scales;
};

/// The full per-window network: dual-scale temporal encoding, graph
/// encoding, scale weighting, gated fusion.
class CommunityModel {
public:
    explicit CommunityModel(const ModelConfig& cfg);

    ModelOutput forward(const Tensor& x_standardized, const WindowGraph& g, bool train_mode,
                        Rng* dropout_rng = nullptr);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }
    const DualScaleEncoder& encoder() const { return *encoder_; }
    const GraphEncoder& graph_encoder() const { return *graph_encoder_; }
    int fusion_width() const { return fusion_->in_width(); }
    Tensor scale_weights() const;

private:
    ModelConfig cfg_;
    ParamStore params_;
    std::unique_ptr<DualScaleEncoder> encoder_;
    std::unique_ptr<GraphEncoder> graph_encoder_;
    std::unique_ptr<GatedFusion> fusion_;
};

}  // namespace tempcomm
