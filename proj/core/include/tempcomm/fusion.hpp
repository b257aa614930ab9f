#pragma once

#include <string>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/nn.hpp"

namespace tempcomm {

class Rng;

/// Gated three-stream fusion head:
///   hidden    = LN(W_3 z + b_3)
///   transform = LN(W_4 Dropout(ReLU(hidden)) + b_4)
///   gate      = sigmoid(W_g z + b_g)
///   out       = transform * gate + W_r z
/// Input width is computed from the actual stream shapes, not assumed.
class GatedFusion {
public:
    GatedFusion(int in_width, int d_latent, double dropout_rate, ParamStore& store, Rng& rng);

    ad::Var forward(const ad::Var& z_concat, bool train_mode, Rng* dropout_rng) const;

    int in_width() const { return in_width_; }
    int d_latent() const { return d_latent_; }

private:
    int in_width_;
    int d_latent_;
    double dropout_rate_;
    ParamStore* store_;
};

}  // namespace tempcomm
