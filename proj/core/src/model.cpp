#include "tempcomm/model.hpp"

#include "tempcomm/errors.hpp"

namespace tempcomm {

using ad::Var;

CommunityModel::CommunityModel(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    auto enc_cfg = ScaleEncoderConfig::from_latent(cfg.in_features, cfg.d_latent, cfg.reduction);
    encoder_ = std::make_unique<DualScaleEncoder>(enc_cfg, cfg.window_len, params_, rng);

    GraphEncoderConfig gcfg;
    gcfg.n_assets = cfg.n_assets;
    gcfg.in_features = cfg.in_features;
    gcfg.hidden = cfg.hidden;
    gcfg.n_heads = cfg.n_heads;
    gcfg.d_time = cfg.hidden;
    gcfg.inducing = cfg.inducing;
    gcfg.window_len = cfg.window_len;
    gcfg.mode = cfg.mode;
    graph_encoder_ = std::make_unique<GraphEncoder>(gcfg, params_, rng);

    const int t_s = enc_cfg.short_out_len(cfg.window_len);
    const int t_l = enc_cfg.long_out_len(cfg.window_len);
    const int width = cfg.hidden + enc_cfg.d_short * t_s + enc_cfg.d_long * t_l;
    fusion_ = std::make_unique<GatedFusion>(width, cfg.d_latent, cfg.dropout, params_, rng);
}

ModelOutput CommunityModel::forward(const Tensor& x_standardized, const WindowGraph& g,
                                    bool train_mode, Rng* dropout_rng) {
    if (x_standardized.ndim() != 3 || x_standardized.dim(0) != cfg_.n_assets ||
        x_standardized.dim(1) != cfg_.in_features || x_standardized.dim(2) != cfg_.window_len)
        throw ShapeError("model input must be {N, D, T} = {" + std::to_string(cfg_.n_assets) +
                         ", " + std::to_string(cfg_.in_features) + ", " +
                         std::to_string(cfg_.window_len) + "}, got " + x_standardized.shape_str());

    Var x = Var::constant(x_standardized);
    ModelOutput out;
    out.scales = encoder_->forward(x);
    out.z_graph = graph_encoder_->forward(x, g);

    const int n = cfg_.n_assets;
    Var w = out.scales.scale_weights;
    Var zs = ad::scale_by(out.scales.z_short, ad::element(w, 0));
    Var zl = ad::scale_by(out.scales.z_long, ad::element(w, 1));
    const int ws = zs.value().dim(1) * zs.value().dim(2);
    const int wl = zl.value().dim(1) * zl.value().dim(2);
    Var z_concat =
        ad::concat_cols({out.z_graph, ad::reshape(zs, {n, ws}), ad::reshape(zl, {n, wl})});
    out.z_final = fusion_->forward(z_concat, train_mode, dropout_rng);
    if (!train_mode && !out.z_final.value().all_finite())
        throw CheckError("non-finite embedding produced in inference mode");
    return out;
}

Tensor CommunityModel::scale_weights() const {
    ad::NoGradGuard guard;
    return encoder_->adaptive_scale_weights().value();
}

}  // namespace tempcomm
