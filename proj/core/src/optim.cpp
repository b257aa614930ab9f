#include "tempcomm/optim.hpp"

#include <cmath>

#include "tempcomm/errors.hpp"

namespace tempcomm {

void AdamState::init(const ParamStore& store) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& [name, p] : store.items()) {
        m.push_back(Tensor::zeros(p.value().shape()));
        v.push_back(Tensor::zeros(p.value().shape()));
    }
}

void adam_step(ParamStore& store, AdamState& state, double lr) {
    if (state.m.size() != store.size()) state.init(store);
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::size_t pi = 0;
    for (const auto& [name, param] : store.items()) {
        ad::Var p = param;  // shares the node; gives mutable access
        Tensor& val = p.value();
        const Tensor& g = p.grad();
        if (g.numel() == 0) {
            ++pi;
            continue;  // parameter untouched this step
        }
        if (!g.all_finite()) throw CheckError("non-finite gradient for parameter " + name);
        Tensor& mm = state.m[pi];
        Tensor& vv = state.v[pi];
        for (std::size_t i = 0; i < val.numel(); ++i) {
            mm[i] = state.beta1 * mm[i] + (1.0 - state.beta1) * g[i];
            vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = mm[i] / bc1;
            const double vhat = vv[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        ++pi;
    }
}

}  // namespace tempcomm
