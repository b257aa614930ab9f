#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/nn.hpp"

namespace tempcomm {

class Rng;

struct ScaleEncoderConfig {
    int in_features = 7;
    int d_latent = 32;
    int d_short = 16;  // d_latent / 2
    int d_long = 16;
    int k_short = 5;
    int s_short = 3;
    int short_layers = 2;
    int k_long = 45;
    int s_long = 11;
    int reduction = 16;

    static ScaleEncoderConfig from_latent(int in_features, int d_latent, int reduction);

    static int conv_out_len(int len, int k, int s) { return (len - k) / s + 1; }
    int short_mid_len(int t) const { return conv_out_len(t, k_short, s_short); }
    int short_out_len(int t) const { return conv_out_len(short_mid_len(t), k_short, s_short); }
    int long_out_len(int t) const { return conv_out_len(t, k_long, s_long); }

    /// Minimum window length both pathways accept.
    int min_window_len() const;
    /// Shape feasibility plus the receptive-field separation advisory
    /// (kernel ratio below 8 produces a warning, not an error).
    void validate(int window_len, std::vector<std::string>* warnings = nullptr) const;
};

struct EncodedScales {
    ad::Var z_short;        // {N, d_short, Ts}
    ad::Var z_long;         // {N, d_long, Tl}
    ad::Var xhat_short;     // {N, D, T}
    ad::Var xhat_long;      // {N, D, T}
    ad::Var scale_weights;  // {2}, softmax, sums to 1
};

/// Short-term / long-term convolutional encoders with channel+temporal
/// gating, mirror transposed-conv decoders, and learned scale weights.
class DualScaleEncoder {
public:
    DualScaleEncoder(ScaleEncoderConfig cfg, int window_len, ParamStore& store, Rng& rng);

    /// H [N, C, L] * channel gate * temporal gate.
    ad::Var dual_attention(const ad::Var& h, const std::string& site) const;
    ad::Var short_term_encode(const ad::Var& x) const;
    ad::Var long_term_encode(const ad::Var& x) const;
    std::pair<ad::Var, ad::Var> decode_scales(const ad::Var& z_short, const ad::Var& z_long) const;
    ad::Var adaptive_scale_weights() const;

    EncodedScales forward(const ad::Var& x) const;

    const ScaleEncoderConfig& config() const { return cfg_; }
    int window_len() const { return window_len_; }

private:
    void register_dual_attention(const std::string& site, int channels, int len, Rng& rng);

    ScaleEncoderConfig cfg_;
    int window_len_;
    ParamStore* store_;
};

}  // namespace tempcomm
