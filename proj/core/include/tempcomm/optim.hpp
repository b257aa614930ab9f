#pragma once

#include <vector>

#include "tempcomm/nn.hpp"
#include "tempcomm/tensor.hpp"

namespace tempcomm {

/// Adam with bias correction; moment buffers aligned with the store's
/// parameter order.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const ParamStore& store);
};

/// One update from the gradients currently held in the store. Throws
/// CheckError naming the parameter on a non-finite gradient.
void adam_step(ParamStore& store, AdamState& state, double lr);

}  // namespace tempcomm
