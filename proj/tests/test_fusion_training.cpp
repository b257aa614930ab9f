#include <doctest.h>

#include <cmath>

#include "tempcomm/errors.hpp"
#include "tempcomm/fusion.hpp"
#include "tempcomm/model.hpp"
#include "tempcomm/pipeline.hpp"
#include "tempcomm/rng.hpp"
#include "tempcomm/synthetic.hpp"
#include "tempcomm/train.hpp"

using namespace tempcomm;
using ad::Var;

namespace {

void set_param(ParamStore& store, const std::string& name, double v) {
    ad::Var p = store.get(name);
    p.value().fill(v);
}

}  // namespace

TEST_CASE("gated fusion: saturated gates select the residual or the transform path") {
    ParamStore store;
    Rng rng(3);
    GatedFusion fusion(10, 4, 0.0, store, rng);
    Tensor zc = Tensor::randn({3, 10}, rng);

    set_param(store, "fusion.W_g", 0.0);
    set_param(store, "fusion.b_g", -50.0);  // gate -> 0: residual only
    Tensor out = fusion.forward(Var::constant(zc), false, nullptr).value();
    Var residual = ad::matmul(Var::constant(zc), store.get("fusion.W_r"), false, true);
    for (std::size_t i = 0; i < out.numel(); ++i)
        CHECK(out[i] == doctest::Approx(residual.value()[i]).epsilon(1e-12));

    set_param(store, "fusion.b_g", 50.0);  // gate -> 1
    set_param(store, "fusion.W_r", 0.0);   // residual off: transform only
    Tensor out2 = fusion.forward(Var::constant(zc), false, nullptr).value();
    Var hidden = ad::layer_norm(
        ad::add_bias(ad::matmul(Var::constant(zc), store.get("fusion.W_3"), false, true),
                     store.get("fusion.b_3")),
        store.get("fusion.ln1.gamma"), store.get("fusion.ln1.beta"));
    Var transform = ad::layer_norm(
        ad::add_bias(ad::matmul(ad::relu(hidden), store.get("fusion.W_4"), false, true),
                     store.get("fusion.b_4")),
        store.get("fusion.ln2.gamma"), store.get("fusion.ln2.beta"));
    for (std::size_t i = 0; i < out2.numel(); ++i)
        CHECK(out2[i] == doctest::Approx(transform.value()[i]).epsilon(1e-12));
}

TEST_CASE("fusion input width follows the computed stream shapes") {
    ModelConfig cfg;
    cfg.n_assets = 4;
    cfg.window_len = 89;
    cfg.d_latent = 32;
    cfg.hidden = 32;
    cfg.n_heads = 4;
    cfg.inducing = 4;
    cfg.seed = 5;
    CommunityModel model(cfg);
    // h + 9*d_latent/2 + 5*d_latent/2 = 8*d_latent at the published defaults
    CHECK(model.fusion_width() == 8 * 32);
}

TEST_CASE("fusion rejects a width mismatch naming expected and actual") {
    ParamStore store;
    Rng rng(7);
    GatedFusion fusion(12, 4, 0.0, store, rng);
    try {
        fusion.forward(Var::constant(Tensor({2, 9})), false, nullptr);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("12") != std::string::npos);
        CHECK(msg.find("9") != std::string::npos);
    }
}

TEST_CASE("graph loss: zero embeddings give ln 2 per term") {
    Tensor z({4, 2});
    std::vector<std::pair<int, int>> pos = {{0, 1}, {2, 3}};
    std::vector<std::pair<int, int>> neg = {{0, 2}, {1, 3}};
    Var loss = ad::graph_bce_loss(Var::constant(z), pos, neg);
    CHECK(loss.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("graph loss vanishes for perfectly separated embeddings") {
    Tensor z({4, 2});
    z.at(0, 0) = 30.0;
    z.at(1, 0) = 30.0;
    z.at(2, 0) = -30.0;
    z.at(3, 0) = -30.0;
    std::vector<std::pair<int, int>> pos = {{0, 1}, {2, 3}};   // dot = +900
    std::vector<std::pair<int, int>> neg = {{0, 2}, {1, 3}};   // dot = -900
    Var loss = ad::graph_bce_loss(Var::constant(z), pos, neg);
    CHECK(loss.value()[0] < 1e-12);
}

TEST_CASE("graph loss matches a scalar oracle on a fixed 4-node case") {
    Tensor z({4, 2}, {0.5, -0.2, 0.1, 0.9, -0.7, 0.3, 0.4, 0.4});
    std::vector<std::pair<int, int>> pos = {{0, 1}, {1, 2}};
    std::vector<std::pair<int, int>> neg = {{0, 3}};
    Var loss = ad::graph_bce_loss(Var::constant(z), pos, neg);

    auto dot = [&](int i, int j) { return z.at(i, 0) * z.at(j, 0) + z.at(i, 1) * z.at(j, 1); };
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double expect =
        (-std::log(sig(dot(0, 1))) - std::log(sig(dot(1, 2))) - std::log(1.0 - sig(dot(0, 3)))) /
        3.0;
    CHECK(std::abs(loss.value()[0] - expect) < 1e-12);
}

TEST_CASE("graph loss requires edges") {
    Tensor z({3, 2});
    CHECK_THROWS_AS(ad::graph_bce_loss(Var::constant(z), {}, {}), DataError);
}

TEST_CASE("temporal loss: exact reconstruction 0, unit offset 1, scalar oracle") {
    Rng rng(11);
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    auto temporal = [&](const Tensor& xs, const Tensor& xl) {
        return ad::scale(ad::add(ad::mse_loss(Var::constant(xs), x),
                                 ad::mse_loss(Var::constant(xl), x)),
                         0.5)
            .value()[0];
    };
    CHECK(temporal(x, x) == 0.0);

    Tensor plus1 = x;
    for (std::size_t i = 0; i < plus1.numel(); ++i) plus1[i] += 1.0;
    CHECK(temporal(plus1, plus1) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor xs = Tensor::randn({2, 3, 4}, rng);
    Tensor xl = Tensor::randn({2, 3, 4}, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i)
        acc += 0.5 * ((xs[i] - x[i]) * (xs[i] - x[i]) + (xl[i] - x[i]) * (xl[i] - x[i]));
    CHECK(std::abs(temporal(xs, xl) - acc / x.numel()) < 1e-12);
}

TEST_CASE("early stopper follows the scripted plateau rule") {
    EarlyStopper s(2, 1e-4);
    CHECK_FALSE(s.update(0.5));
    CHECK_FALSE(s.update(0.50005));
    CHECK(s.update(0.50009));  // second consecutive sub-tolerance delta

    EarlyStopper s2(2, 1e-4);
    CHECK_FALSE(s2.update(0.5));
    CHECK_FALSE(s2.update(0.7));      // big jump resets nothing yet
    CHECK_FALSE(s2.update(0.70005));  // strike 1
    CHECK_FALSE(s2.update(0.8));      // improvement clears the strikes
    CHECK_FALSE(s2.update(0.80001));  // strike 1
    CHECK(s2.update(0.80002));        // strike 2

    EarlyStopper s3(3, 1e-4);
    CHECK_FALSE(s3.update(1.0));
    CHECK_FALSE(s3.update(1.0));
    CHECK_FALSE(s3.update(1.0));
    CHECK(s3.update(1.0));  // three consecutive flat deltas with patience 3
}

TEST_CASE("loss breakdown additivity is exact") {
    SyntheticSpec spec;
    spec.n_assets = 6;
    spec.t_total = kFeatureWarmup + 48;
    spec.community_sizes = {3, 3};
    spec.seed = 13;
    SyntheticData data = generate_synthetic(spec);

    PipelineConfig cfg;
    cfg.T = 48;
    cfg.d_latent = 8;
    cfg.h = 8;
    cfg.n_h = 2;
    cfg.K = 4;
    cfg.r = 4;
    cfg.tau = 0.5;
    cfg.train.lambda_graph = 0.7;
    cfg.train.lambda_temporal = 1.3;
    auto windows = prepare_windows(cfg, data.prices, nullptr);
    REQUIRE(!windows.empty());

    ModelConfig mcfg;
    mcfg.n_assets = 6;
    mcfg.window_len = 48;
    mcfg.d_latent = 8;
    mcfg.hidden = 8;
    mcfg.n_heads = 2;
    mcfg.inducing = 4;
    mcfg.reduction = 4;
    mcfg.dropout = 0.0;
    mcfg.seed = 17;
    CommunityModel model(mcfg);

    LossBreakdown lb;
    window_loss(model, windows[0], cfg.train, 23, true, &lb);
    CHECK(lb.total ==
          doctest::Approx(0.7 * lb.graph_loss + 1.3 * lb.temporal_loss).epsilon(1e-12));
}

TEST_CASE("train: max_epochs=1 runs exactly one epoch without early stop") {
    SyntheticSpec spec;
    spec.n_assets = 6;
    spec.t_total = kFeatureWarmup + 60;
    spec.community_sizes = {3, 3};
    spec.seed = 19;
    SyntheticData data = generate_synthetic(spec);

    PipelineConfig cfg;
    cfg.T = 48;
    cfg.stride = 6;
    cfg.d_latent = 8;
    cfg.h = 8;
    cfg.n_h = 2;
    cfg.K = 4;
    cfg.r = 4;
    cfg.tau = 0.5;
    cfg.dropout = 0.0;
    auto windows = prepare_windows(cfg, data.prices, nullptr);
    REQUIRE(windows.size() >= 2);

    ModelConfig mcfg;
    mcfg.n_assets = 6;
    mcfg.window_len = 48;
    mcfg.d_latent = 8;
    mcfg.hidden = 8;
    mcfg.n_heads = 2;
    mcfg.inducing = 4;
    mcfg.reduction = 4;
    mcfg.dropout = 0.0;
    mcfg.seed = 23;
    CommunityModel model(mcfg);

    TrainConfig tc;
    tc.max_epochs = 1;
    EvalConfig ec{2, 4, 0.1, 0.9};
    TrainResult tr = train_model(model, windows, {0}, {1}, tc, ec, 29);
    CHECK(tr.log.size() == 1);
    CHECK_FALSE(tr.stopped_early);
}

TEST_CASE("training is deterministic: identical config and seed, identical log") {
    SyntheticSpec spec;
    spec.n_assets = 6;
    spec.t_total = kFeatureWarmup + 60;
    spec.community_sizes = {3, 3};
    spec.seed = 31;
    SyntheticData data = generate_synthetic(spec);

    PipelineConfig cfg;
    cfg.T = 48;
    cfg.stride = 6;
    cfg.d_latent = 8;
    cfg.h = 8;
    cfg.n_h = 2;
    cfg.K = 4;
    cfg.r = 4;
    cfg.tau = 0.5;
    cfg.dropout = 0.1;
    auto windows = prepare_windows(cfg, data.prices, nullptr);

    auto run_once = [&]() {
        ModelConfig mcfg;
        mcfg.n_assets = 6;
        mcfg.window_len = 48;
        mcfg.d_latent = 8;
        mcfg.hidden = 8;
        mcfg.n_heads = 2;
        mcfg.inducing = 4;
        mcfg.reduction = 4;
        mcfg.dropout = 0.1;
        mcfg.seed = 37;
        CommunityModel model(mcfg);
        TrainConfig tc;
        tc.max_epochs = 3;
        EvalConfig ec{2, 4, 0.1, 0.9};
        return train_model(model, windows, {0}, {1}, tc, ec, 41);
    };
    TrainResult a = run_once(), b = run_once();
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) {
        CHECK(a.log[e].graph_loss == b.log[e].graph_loss);
        CHECK(a.log[e].temporal_loss == b.log[e].temporal_loss);
        CHECK(a.log[e].val_score == b.log[e].val_score);
    }
}

TEST_CASE("training loss falls by at least half on planted communities (median of 5 seeds)") {
    std::vector<double> ratios;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        SyntheticSpec spec;  // N = 30, 3 communities, idio = 0.5 * factor vol
        spec.factor_vol = 0.02;
        spec.idio_vol = 0.01;
        spec.seed = seed;
        SyntheticData data = generate_synthetic(spec);

        PipelineConfig cfg;
        cfg.T = 89;
        cfg.stride = 10;
        cfg.d_latent = 16;
        cfg.h = 16;
        cfg.n_h = 2;
        cfg.K = 8;
        cfg.r = 8;
        cfg.dropout = 0.0;
        auto windows = prepare_windows(cfg, data.prices, nullptr);
        REQUIRE(windows.size() >= 2);

        ModelConfig mcfg;
        mcfg.n_assets = 30;
        mcfg.window_len = 89;
        mcfg.d_latent = 16;
        mcfg.hidden = 16;
        mcfg.n_heads = 2;
        mcfg.inducing = 8;
        mcfg.reduction = 8;
        mcfg.dropout = 0.0;
        mcfg.mode = AttentionMode::Full;
        mcfg.seed = seed + 100;
        CommunityModel model(mcfg);

        TrainConfig tc;
        tc.max_epochs = 20;
        tc.lr = 3e-3;
        EvalConfig ec{2, 8, 0.1, 0.9};
        std::vector<int> train_idx, val_idx;
        const int n_train = static_cast<int>(windows.size() * 0.7);
        for (int i = 0; i < n_train; ++i) train_idx.push_back(i);
        for (int i = n_train; i < static_cast<int>(windows.size()); ++i) val_idx.push_back(i);
        TrainResult tr = train_model(model, windows, train_idx, val_idx, tc, ec, seed);
        REQUIRE(!tr.log.empty());
        ratios.push_back(tr.log.back().total / tr.log.front().total);
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[2] <= 0.5);  // median over the 5 seeds
}
