#include "tempcomm/fusion.hpp"

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

using ad::Var;

GatedFusion::GatedFusion(int in_width, int d_latent, double dropout_rate, ParamStore& store,
                         Rng& rng)
    : in_width_(in_width), d_latent_(d_latent), dropout_rate_(dropout_rate), store_(&store) {
    const int hidden = 2 * d_latent;
    store.add("fusion.W_3", init::xavier_uniform({hidden, in_width}, rng));
    store.add("fusion.b_3", Tensor({hidden}));
    store.add("fusion.ln1.gamma", Tensor::full({hidden}, 1.0));
    store.add("fusion.ln1.beta", Tensor({hidden}));
    store.add("fusion.W_4", init::xavier_uniform({d_latent, hidden}, rng));
    store.add("fusion.b_4", Tensor({d_latent}));
    store.add("fusion.ln2.gamma", Tensor::full({d_latent}, 1.0));
    store.add("fusion.ln2.beta", Tensor({d_latent}));
    store.add("fusion.W_g", init::xavier_uniform({d_latent, in_width}, rng));
    store.add("fusion.b_g", Tensor({d_latent}));
    store.add("fusion.W_r", init::xavier_uniform({d_latent, in_width}, rng));
}

Var GatedFusion::forward(const Var& z_concat, bool train_mode, Rng* dropout_rng) const {
    if (z_concat.value().ndim() != 2 || z_concat.value().dim(1) != in_width_)
        throw ShapeError("fusion input width mismatch: expected " + std::to_string(in_width_) +
                         ", got " + std::to_string(z_concat.value().dim(1)));
    const auto& s = *store_;
    Var hidden = ad::layer_norm(
        ad::add_bias(ad::matmul(z_concat, s.get("fusion.W_3"), false, true), s.get("fusion.b_3")),
        s.get("fusion.ln1.gamma"), s.get("fusion.ln1.beta"));
    Var act = ad::relu(hidden);
    if (train_mode && dropout_rate_ > 0.0) {
        if (!dropout_rng) throw std::logic_error("dropout requires an RNG in training mode");
        act = ad::dropout(act, dropout_rate_, *dropout_rng, true);
    }
    Var transform = ad::layer_norm(
        ad::add_bias(ad::matmul(act, s.get("fusion.W_4"), false, true), s.get("fusion.b_4")),
        s.get("fusion.ln2.gamma"), s.get("fusion.ln2.beta"));
    Var gate = ad::sigmoid(
        ad::add_bias(ad::matmul(z_concat, s.get("fusion.W_g"), false, true), s.get("fusion.b_g")));
    Var residual = ad::matmul(z_concat, s.get("fusion.W_r"), false, true);
    return ad::add(ad::mul(transform, gate), residual);
}

}  // namespace tempcomm
