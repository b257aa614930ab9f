#include "tempcomm/temporal_encoder.hpp"

#include <algorithm>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

using ad::Var;

ScaleEncoderConfig ScaleEncoderConfig::from_latent(int in_features, int d_latent, int reduction) {
    if (d_latent < 2 || d_latent % 2 != 0) throw ConfigError("d_latent must be a positive even number");
    ScaleEncoderConfig cfg;
    cfg.in_features = in_features;
    cfg.d_latent = d_latent;
    cfg.d_short = d_latent / 2;
    cfg.d_long = d_latent - cfg.d_short;
    cfg.reduction = reduction;
    return cfg;
}

int ScaleEncoderConfig::min_window_len() const {
    // Long pathway needs k_long; short pathway needs two stacked convs.
    int len = k_short;
    for (int l = 1; l < short_layers; ++l) len = (len - 1) * s_short + k_short;
    return std::max(len, k_long);
}

void ScaleEncoderConfig::validate(int window_len, std::vector<std::string>* warnings) const {
    if (window_len < k_long)
        throw ShapeError("window length " + std::to_string(window_len) +
                         " shorter than long-term kernel " + std::to_string(k_long));
    int len = window_len;
    for (int l = 0; l < short_layers; ++l) {
        if (len < k_short)
            throw ShapeError("short-term conv layer " + std::to_string(l + 1) +
                             ": input length " + std::to_string(len) + " shorter than kernel " +
                             std::to_string(k_short));
        len = conv_out_len(len, k_short, s_short);
    }
    if (warnings && k_long < 8 * k_short)
        warnings->push_back("receptive-field ratio " + std::to_string(k_long) + "/" +
                            std::to_string(k_short) + " below 8; scale separation degraded");
}

DualScaleEncoder::DualScaleEncoder(ScaleEncoderConfig cfg, int window_len, ParamStore& store,
                                   Rng& rng)
    : cfg_(cfg), window_len_(window_len), store_(&store) {
    cfg_.validate(window_len);
    const int d = cfg_.in_features;

    store.add("enc.short.conv1.w", init::xavier_uniform({cfg_.d_short, d, cfg_.k_short}, rng));
    store.add("enc.short.conv1.b", Tensor({cfg_.d_short}));
    store.add("enc.short.conv2.w",
              init::xavier_uniform({cfg_.d_short, cfg_.d_short, cfg_.k_short}, rng));
    store.add("enc.short.conv2.b", Tensor({cfg_.d_short}));
    register_dual_attention("enc.short.attn1", cfg_.d_short, cfg_.short_mid_len(window_len), rng);
    register_dual_attention("enc.short.attn2", cfg_.d_short, cfg_.short_out_len(window_len), rng);

    store.add("enc.long.conv1.w", init::xavier_uniform({cfg_.d_long, d, cfg_.k_long}, rng));
    store.add("enc.long.conv1.b", Tensor({cfg_.d_long}));
    register_dual_attention("enc.long.attn1", cfg_.d_long, cfg_.long_out_len(window_len), rng);

    store.add("dec.short.conv1.w",
              init::xavier_uniform({cfg_.d_short, cfg_.d_short, cfg_.k_short}, rng));
    store.add("dec.short.conv1.b", Tensor({cfg_.d_short}));
    store.add("dec.short.conv2.w", init::xavier_uniform({cfg_.d_short, d, cfg_.k_short}, rng));
    store.add("dec.short.conv2.b", Tensor({d}));
    store.add("dec.long.conv1.w", init::xavier_uniform({cfg_.d_long, d, cfg_.k_long}, rng));
    store.add("dec.long.conv1.b", Tensor({d}));

    store.add("enc.scale_logits", Tensor({2}));
}

void DualScaleEncoder::register_dual_attention(const std::string& site, int channels, int len,
                                               Rng& rng) {
    const int bneck = std::max(channels / cfg_.reduction, 1);
    store_->add(site + ".ch_fc1.w", init::xavier_uniform({bneck, channels}, rng));
    store_->add(site + ".ch_fc1.b", Tensor({bneck}));
    store_->add(site + ".ch_fc2.w", init::xavier_uniform({channels, bneck}, rng));
    store_->add(site + ".ch_fc2.b", Tensor({channels}));
    store_->add(site + ".t_fc1.w", init::xavier_uniform({bneck, len}, rng));
    store_->add(site + ".t_fc1.b", Tensor({bneck}));
    store_->add(site + ".t_fc2.w", init::xavier_uniform({len, bneck}, rng));
    store_->add(site + ".t_fc2.b", Tensor({len}));
}

Var DualScaleEncoder::dual_attention(const Var& h, const std::string& site) const {
    const auto& s = *store_;
    auto channel_mlp = [&](const Var& pooled) {
        Var hid = ad::relu(
            ad::add_bias(ad::matmul(pooled, s.get(site + ".ch_fc1.w"), false, true),
                         s.get(site + ".ch_fc1.b")));
        return ad::add_bias(ad::matmul(hid, s.get(site + ".ch_fc2.w"), false, true),
                            s.get(site + ".ch_fc2.b"));
    };
    Var ch_gate = ad::sigmoid(
        ad::add(channel_mlp(ad::avgpool_time(h)), channel_mlp(ad::maxpool_time(h))));
    Var tm = ad::mean_channels(h);
    Var t_hid = ad::gelu(ad::add_bias(ad::matmul(tm, s.get(site + ".t_fc1.w"), false, true),
                                      s.get(site + ".t_fc1.b")));
    Var t_gate = ad::sigmoid(ad::add_bias(ad::matmul(t_hid, s.get(site + ".t_fc2.w"), false, true),
                                          s.get(site + ".t_fc2.b")));
    return ad::mul_bcast_time(ad::mul_bcast_channel(h, ch_gate), t_gate);
}

Var DualScaleEncoder::short_term_encode(const Var& x) const {
    const auto& s = *store_;
    const int len = x.value().dim(2);
    if (len < cfg_.k_short)
        throw ShapeError("short-term conv layer 1: input length " + std::to_string(len) +
                         " shorter than kernel " + std::to_string(cfg_.k_short));
    Var h = ad::conv1d(x, s.get("enc.short.conv1.w"), s.get("enc.short.conv1.b"), cfg_.s_short);
    h = ad::gelu(dual_attention(h, "enc.short.attn1"));
    if (h.value().dim(2) < cfg_.k_short)
        throw ShapeError("short-term conv layer 2: input length " +
                         std::to_string(h.value().dim(2)) + " shorter than kernel " +
                         std::to_string(cfg_.k_short));
    h = ad::conv1d(h, s.get("enc.short.conv2.w"), s.get("enc.short.conv2.b"), cfg_.s_short);
    return ad::gelu(dual_attention(h, "enc.short.attn2"));
}

Var DualScaleEncoder::long_term_encode(const Var& x) const {
    const auto& s = *store_;
    if (x.value().dim(2) < cfg_.k_long)
        throw ShapeError("long-term conv layer 1: input length " +
                         std::to_string(x.value().dim(2)) + " shorter than kernel " +
                         std::to_string(cfg_.k_long));
    Var h = ad::conv1d(x, s.get("enc.long.conv1.w"), s.get("enc.long.conv1.b"), cfg_.s_long);
    return ad::gelu(dual_attention(h, "enc.long.attn1"));
}

std::pair<Var, Var> DualScaleEncoder::decode_scales(const Var& z_short, const Var& z_long) const {
    const auto& s = *store_;
    // Output padding recovers the exact pre-conv lengths when the strided
    // floor division was inexact.
    const int mid = cfg_.short_mid_len(window_len_);
    const int out = cfg_.short_out_len(window_len_);
    const int pad1 = mid - ((out - 1) * cfg_.s_short + cfg_.k_short);
    const int pad2 = window_len_ - ((mid - 1) * cfg_.s_short + cfg_.k_short);
    const int tl = cfg_.long_out_len(window_len_);
    const int pad_long = window_len_ - ((tl - 1) * cfg_.s_long + cfg_.k_long);

    Var h = ad::conv1d_transpose(z_short, s.get("dec.short.conv1.w"), s.get("dec.short.conv1.b"),
                                 cfg_.s_short, pad1);
    h = ad::gelu(h);
    Var xhat_short = ad::conv1d_transpose(h, s.get("dec.short.conv2.w"),
                                          s.get("dec.short.conv2.b"), cfg_.s_short, pad2);
    Var xhat_long = ad::conv1d_transpose(z_long, s.get("dec.long.conv1.w"),
                                         s.get("dec.long.conv1.b"), cfg_.s_long, pad_long);
    if (xhat_short.value().dim(2) != window_len_ || xhat_long.value().dim(2) != window_len_)
        throw ShapeError("decoder output length does not match window length");
    return {xhat_short, xhat_long};
}

Var DualScaleEncoder::adaptive_scale_weights() const {
    return ad::softmax_vec(store_->get("enc.scale_logits"));
}

EncodedScales DualScaleEncoder::forward(const Var& x) const {
    EncodedScales out;
    out.z_short = short_term_encode(x);
    out.z_long = long_term_encode(x);
    auto [xs, xl] = decode_scales(out.z_short, out.z_long);
    out.xhat_short = xs;
    out.xhat_long = xl;
    out.scale_weights = adaptive_scale_weights();
    return out;
}

}  // namespace tempcomm
