#include "tempcomm/graph_encoder.hpp"

#include <cmath>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

using ad::Var;

std::string to_string(AttentionMode mode) {
    switch (mode) {
        case AttentionMode::Static: return "static";
        case AttentionMode::Basic: return "basic";
        case AttentionMode::Enhanced: return "enhanced";
        case AttentionMode::Full: return "full";
    }
    return "full";
}

AttentionMode attention_mode_from_string(const std::string& name) {
    std::string s;
    for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "static") return AttentionMode::Static;
    if (s == "basic") return AttentionMode::Basic;
    if (s == "enhanced") return AttentionMode::Enhanced;
    if (s == "full") return AttentionMode::Full;
    throw ConfigError("unknown attention mode: " + name +
                      " (expected static|basic|enhanced|full)");
}

const std::vector<AttentionMode>& all_attention_modes() {
    static const std::vector<AttentionMode> modes = {AttentionMode::Static, AttentionMode::Basic,
                                                     AttentionMode::Enhanced, AttentionMode::Full};
    return modes;
}

void GraphEncoderConfig::validate() const {
    if (n_assets < 2) throw ConfigError("graph encoder needs at least 2 assets");
    if (hidden < 1) throw ConfigError("hidden width must be positive");
    if (n_heads < 1 || hidden % n_heads != 0)
        throw ConfigError("hidden width must be divisible by the head count");
    if (inducing < 1 || inducing > 64) throw ConfigError("inducing points must lie in [1, 64]");
    if (window_len < 1) throw ConfigError("window length must be positive");
}

Tensor sinusoidal_time_embedding(int t, int d) {
    Tensor e({1, d});
    for (int i = 0; i < d; ++i) {
        const double exponent = static_cast<double>(2 * (i / 2)) / d;
        const double rate = std::pow(10000.0, exponent);
        e.at(0, i) = (i % 2 == 0) ? std::sin(t / rate) : std::cos(t / rate);
    }
    return e;
}

GraphEncoder::GraphEncoder(const GraphEncoderConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg), store_(&store) {
    cfg_.validate();
    const int h = cfg_.hidden;
    const int d = cfg_.in_features;
    const int dt = cfg_.d_time;

    auto lstm = [&](const std::string& prefix, int in) {
        for (const char* dir : {"fwd", "bwd"}) {
            store.add(prefix + "." + dir + ".wx", init::xavier_uniform({4 * h, in}, rng));
            store.add(prefix + "." + dir + ".wh", init::orthogonal(4 * h, h, rng));
            store.add(prefix + "." + dir + ".b", Tensor({4 * h}));
        }
    };
    lstm("graph.lstm1", d);
    lstm("graph.lstm2", h);

    store.add("graph.E_node", init::xavier_uniform({cfg_.n_assets, h}, rng));
    store.add("graph.FC_2.w", init::xavier_uniform({h, h}, rng));
    store.add("graph.FC_2.b", Tensor({h}));

    store.add("graph.time.table", init::xavier_uniform({cfg_.window_len, dt}, rng));
    store.add("graph.time.W_g", init::xavier_uniform({h, dt}, rng));
    store.add("graph.time.b_g", Tensor({h}));
    store.add("graph.time.W_b", init::xavier_uniform({h, dt}, rng));
    store.add("graph.time.W_k", init::xavier_uniform({h, dt}, rng));
    store.add("graph.time.W_v", init::xavier_uniform({h, dt}, rng));

    store.add("graph.attn.W_Q", init::xavier_uniform({h, h}, rng));
    store.add("graph.attn.W_K", init::xavier_uniform({h, h}, rng));
    store.add("graph.attn.W_V", init::xavier_uniform({h, h}, rng));
    store.add("graph.attn.W_O", init::xavier_uniform({h, h}, rng));
    store.add("graph.attn.W_edge", init::xavier_uniform({h}, rng));
    store.add("graph.attn.W_edge_v", init::xavier_uniform({h}, rng));

    store.add("graph.st.inducing", init::xavier_uniform({cfg_.inducing, h}, rng));
    store.add("graph.st.seed", init::xavier_uniform({1, h}, rng));
    for (const char* mab : {"mab1", "mab2", "pma"}) {
        for (const char* w : {"wq", "wk", "wv", "wo"})
            store.add(std::string("graph.st.") + mab + "." + w, init::xavier_uniform({h, h}, rng));
    }
}

std::vector<Var> GraphEncoder::run_lstm_direction(const std::vector<Var>& inputs,
                                                  const std::string& prefix, bool reverse) const {
    const int t_len = static_cast<int>(inputs.size());
    const int n = inputs[0].value().dim(0);
    const Var wx = store_->get(prefix + ".wx");
    const Var wh = store_->get(prefix + ".wh");
    const Var b = store_->get(prefix + ".b");
    const int h = wh.value().dim(1);

    Var hs = Var::constant(Tensor({n, h}));
    Var cs = Var::constant(Tensor({n, h}));
    std::vector<Var> out(t_len);
    for (int step = 0; step < t_len; ++step) {
        const int t = reverse ? t_len - 1 - step : step;
        Var gates = ad::add_bias(
            ad::add(ad::matmul(inputs[t], wx, false, true), ad::matmul(hs, wh, false, true)), b);
        cs = ad::lstm_cell_c(gates, cs);
        hs = ad::lstm_cell_h(gates, cs);
        out[t] = hs;
    }
    return out;
}

std::vector<Var> GraphEncoder::run_bilstm(const std::vector<Var>& inputs,
                                          const std::string& prefix) const {
    auto fwd = run_lstm_direction(inputs, prefix + ".fwd", false);
    auto bwd = run_lstm_direction(inputs, prefix + ".bwd", true);
    std::vector<Var> out(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) out[t] = ad::add(fwd[t], bwd[t]);
    return out;
}

std::vector<Var> GraphEncoder::bilstm_stage1(const Var& x) const {
    const int t_len = x.value().dim(2);
    std::vector<Var> slices(t_len);
    for (int t = 0; t < t_len; ++t) slices[t] = ad::slice_time(x, t);
    return run_bilstm(slices, "graph.lstm1");
}

Var GraphEncoder::dependency_matrix(const Var& h1_t) const {
    Var filt = ad::add_bias(ad::matmul(h1_t, store_->get("graph.FC_2.w"), false, true),
                            store_->get("graph.FC_2.b"));
    Var v = ad::tanh_act(ad::mul(store_->get("graph.E_node"), filt));
    return ad::relu(ad::matmul(v, v, false, true));  // nonnegative, symmetric
}

std::vector<Var> GraphEncoder::dynamic_dependency(const std::vector<Var>& h1) const {
    std::vector<Var> out(h1.size());
    for (std::size_t t = 0; t < h1.size(); ++t) {
        Var dep = dependency_matrix(h1[t]);
        out[t] = ad::add(ad::matmul(dep, h1[t]), h1[t]);  // identity self-loops
    }
    return out;
}

std::vector<Var> GraphEncoder::bilstm_stage2(const std::vector<Var>& h) const {
    return run_bilstm(h, "graph.lstm2");
}

Var GraphEncoder::time_embedding(int t) const {
    if (cfg_.mode == AttentionMode::Full) {
        if (t < 0 || t >= cfg_.window_len) throw ShapeError("time index outside the learned table");
        return ad::reshape(ad::row(store_->get("graph.time.table"), t), {1, cfg_.d_time});
    }
    return Var::constant(sinusoidal_time_embedding(t, cfg_.d_time));
}

Var GraphEncoder::temporal_modulation(const Var& h2_t, const Var& e_t) const {
    const auto& s = *store_;
    Var gate = ad::sigmoid(
        ad::add(ad::reshape(ad::matmul(e_t, s.get("graph.time.W_g"), false, true),
                            {cfg_.hidden}),
                s.get("graph.time.b_g")));
    Var shift = ad::reshape(ad::matmul(e_t, s.get("graph.time.W_b"), false, true), {cfg_.hidden});
    return ad::add_bias(ad::mul_rowvec(h2_t, gate), shift);
}

Var GraphEncoder::edge_attention(const Var& h2_t, const WindowGraph& g, int t) const {
    const auto& s = *store_;
    if (g.n != cfg_.n_assets) throw ShapeError("edge_attention: graph size mismatch");

    if (cfg_.mode == AttentionMode::Static) {
        Var v = ad::matmul(h2_t, s.get("graph.attn.W_V"), false, true);
        return ad::const_matmul(g.static_weights, v);
    }
    if (cfg_.mode == AttentionMode::Basic) {
        Var q = ad::matmul(h2_t, s.get("graph.attn.W_Q"), false, true);
        Var k = ad::matmul(h2_t, s.get("graph.attn.W_K"), false, true);
        Var v = ad::matmul(h2_t, s.get("graph.attn.W_V"), false, true);
        ad::MaskedAttnOpts opts;
        opts.n_heads = 1;
        opts.logit_bias = &g.static_weights;
        return ad::masked_multihead_attention(q, k, v, g.neighbors, opts);
    }

    static const std::vector<double> kNoFeatures;
    const std::vector<double>* feats =
        g.has_edge_features ? &g.neighbor_features : &kNoFeatures;
    std::vector<double> zeros;
    if (!g.has_edge_features) {
        zeros.assign(g.neighbors.targets.size(), 0.0);
        feats = &zeros;
    }

    ad::MaskedAttnOpts opts;
    opts.n_heads = cfg_.n_heads;
    opts.edge_vals = feats;
    opts.w_edge_k = s.get("graph.attn.W_edge");
    opts.w_edge_v = s.get("graph.attn.W_edge_v");

    Var attn;
    if (cfg_.mode == AttentionMode::Enhanced) {
        Var e_t = time_embedding(t);
        Var q = ad::mul_rowvec(ad::matmul(h2_t, s.get("graph.attn.W_Q"), false, true),
                               ad::reshape(e_t, {cfg_.d_time}));
        Var k = ad::matmul(h2_t, s.get("graph.attn.W_K"), false, true);
        Var v = ad::matmul(h2_t, s.get("graph.attn.W_V"), false, true);
        attn = ad::masked_multihead_attention(q, k, v, g.neighbors, opts);
    } else {  // Full
        Var e_t = time_embedding(t);
        Var modulated = temporal_modulation(h2_t, e_t);
        Var q = ad::matmul(modulated, s.get("graph.attn.W_Q"), false, true);
        Var k = ad::add_bias(
            ad::matmul(h2_t, s.get("graph.attn.W_K"), false, true),
            ad::reshape(ad::matmul(e_t, s.get("graph.time.W_k"), false, true), {cfg_.hidden}));
        Var v = ad::add_bias(
            ad::matmul(h2_t, s.get("graph.attn.W_V"), false, true),
            ad::reshape(ad::matmul(e_t, s.get("graph.time.W_v"), false, true), {cfg_.hidden}));
        attn = ad::masked_multihead_attention(q, k, v, g.neighbors, opts);
    }
    return ad::matmul(attn, s.get("graph.attn.W_O"), false, true);
}

Var GraphEncoder::set_transformer_aggregate(const std::vector<Var>& o_per_t) const {
    const auto& s = *store_;
    const int t_len = static_cast<int>(o_per_t.size());
    const int n = o_per_t[0].value().dim(0);
    const int h = cfg_.hidden;
    const int nh = cfg_.n_heads;

    Var o3 = ad::stack_middle(o_per_t);            // {N, T, h}
    Var flat = ad::reshape(o3, {n * t_len, h});    // the whole set

    // ISAB: inducing points summarize the set, then each element attends back.
    Var hi = ad::dense_multihead_attention(
        ad::matmul(s.get("graph.st.inducing"), s.get("graph.st.mab1.wq"), false, true),
        ad::matmul(flat, s.get("graph.st.mab1.wk"), false, true),
        ad::matmul(flat, s.get("graph.st.mab1.wv"), false, true), nh);
    hi = ad::matmul(hi, s.get("graph.st.mab1.wo"), false, true);

    Var hout = ad::dense_multihead_attention(
        ad::matmul(flat, s.get("graph.st.mab2.wq"), false, true),
        ad::matmul(hi, s.get("graph.st.mab2.wk"), false, true),
        ad::matmul(hi, s.get("graph.st.mab2.wv"), false, true), nh);
    hout = ad::matmul(hout, s.get("graph.st.mab2.wo"), false, true);

    // PMA: a learned seed pools each node's T refined vectors.
    Var seed_q = ad::matmul(s.get("graph.st.seed"), s.get("graph.st.pma.wq"), false, true);
    Var k3 = ad::reshape(ad::matmul(hout, s.get("graph.st.pma.wk"), false, true), {n, t_len, h});
    Var v3 = ad::reshape(ad::matmul(hout, s.get("graph.st.pma.wv"), false, true), {n, t_len, h});
    Var pooled = ad::pooled_seed_attention(seed_q, k3, v3, nh);
    return ad::matmul(pooled, s.get("graph.st.pma.wo"), false, true);
}

Var GraphEncoder::forward(const Var& x, const WindowGraph& g) const {
    auto h1 = bilstm_stage1(x);
    if (cfg_.mode == AttentionMode::Full) h1 = dynamic_dependency(h1);
    auto h2 = bilstm_stage2(h1);
    std::vector<Var> o(h2.size());
    for (std::size_t t = 0; t < h2.size(); ++t)
        o[t] = edge_attention(h2[t], g, static_cast<int>(t));
    return set_transformer_aggregate(o);
}

}  // namespace tempcomm
