#pragma once

#include <string>
#include <vector>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/graphbuild.hpp"
#include "tempcomm/nn.hpp"

namespace tempcomm {

class Rng;

/// Progressive attention variants: fixed normalized correlation weights,
/// dot-product attention with static logit bias, multi-head attention with
/// sinusoidal query modulation and modularity edge features, and the fully
/// time-conditioned system with the dynamic dependency stage.
enum class AttentionMode { Static, Basic, Enhanced, Full };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& name);
/// Canonical ablation order: Static, Basic, Enhanced, Full.
const std::vector<AttentionMode>& all_attention_modes();

struct GraphEncoderConfig {
    int n_assets = 0;
    int in_features = 7;
    int hidden = 32;  // h
    int n_heads = 4;
    int d_time = 32;  // time-embedding width, defaults to h
    int inducing = 16;
    int window_len = 89;
    AttentionMode mode = AttentionMode::Full;

    void validate() const;
};

/// Per-window graph representation pipeline: BiLSTM stage 1, dynamic
/// dependency propagation (Full mode), BiLSTM stage 2, per-timestep
/// time-conditioned edge attention, Set Transformer aggregation over time.
class GraphEncoder {
public:
    GraphEncoder(const GraphEncoderConfig& cfg, ParamStore& store, Rng& rng);

    /// x [N, D, T] -> T tensors of [N, h].
    std::vector<ad::Var> bilstm_stage1(const ad::Var& x) const;
    /// ReLU(V V^T) with V = tanh(E_node . FC2(H_t)); nonnegative, symmetric.
    ad::Var dependency_matrix(const ad::Var& h1_t) const;
    /// Per t: H + D_t H (identity self-loops).
    std::vector<ad::Var> dynamic_dependency(const std::vector<ad::Var>& h1) const;
    std::vector<ad::Var> bilstm_stage2(const std::vector<ad::Var>& h) const;

    /// Learned table row (Full) or sinusoidal encoding (Enhanced); [1, d_time].
    ad::Var time_embedding(int t) const;
    /// H_t * sigmoid(W_g e_t + b) + W_b e_t, broadcast over nodes.
    ad::Var temporal_modulation(const ad::Var& h2_t, const ad::Var& e_t) const;
    ad::Var edge_attention(const ad::Var& h2_t, const WindowGraph& g, int t) const;
    /// T tensors of [N, h] -> [N, h] via ISAB (inducing points over the
    /// whole N*T set) followed by per-node seed pooling over T.
    ad::Var set_transformer_aggregate(const std::vector<ad::Var>& o_per_t) const;

    /// Full pipeline for one window: Z_graph [N, h].
    ad::Var forward(const ad::Var& x, const WindowGraph& g) const;

    const GraphEncoderConfig& config() const { return cfg_; }

private:
    std::vector<ad::Var> run_bilstm(const std::vector<ad::Var>& inputs,
                                    const std::string& prefix) const;
    std::vector<ad::Var> run_lstm_direction(const std::vector<ad::Var>& inputs,
                                            const std::string& prefix, bool reverse) const;

    GraphEncoderConfig cfg_;
    ParamStore* store_;
};

/// Sinusoidal position encoding of width d (constant, not learned).
Tensor sinusoidal_time_embedding(int t, int d);

}  // namespace tempcomm
