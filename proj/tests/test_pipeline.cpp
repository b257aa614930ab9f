#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tempcomm/errors.hpp"
#include "tempcomm/io.hpp"
#include "tempcomm/pipeline.hpp"
#include "tempcomm/rng.hpp"

using namespace tempcomm;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.T = 48;
    cfg.stride = 8;
    cfg.tau = 0.5;
    cfg.d_latent = 8;
    cfg.h = 8;
    cfg.n_h = 2;
    cfg.K = 4;
    cfg.r = 4;
    cfg.k_range = {2, 5};
    cfg.train.max_epochs = 2;
    cfg.seed = 7;
    return cfg;
}

SyntheticData small_data(std::uint64_t seed = 5) {
    SyntheticSpec spec;
    spec.n_assets = 10;
    spec.t_total = kFeatureWarmup + 70;
    spec.community_sizes = {5, 5};
    spec.factor_vol = 0.02;
    spec.idio_vol = 0.008;
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("published defaults are wired into the default config") {
    PipelineConfig cfg;
    CHECK(cfg.matches_published_defaults());
    CHECK(cfg.T == 89);
    CHECK(cfg.stride == 1);
    CHECK(cfg.tau == 0.75);
    CHECK(cfg.delta == 0.1);
    CHECK(cfg.K == 16);
    CHECK(cfg.dropout == 0.1);
    CHECK(cfg.r == 16);
    CHECK(cfg.w_intra == 0.1);
    CHECK(cfg.w_inter == 0.9);
    CHECK(cfg.train.patience == 2);
    CHECK(cfg.train.tol == 1e-4);
    CHECK(cfg.k_range.lo == 2);
    CHECK(cfg.k_range.hi == 15);

    PipelineConfig changed;
    changed.tau = 0.6;
    CHECK_FALSE(changed.matches_published_defaults());
}

TEST_CASE("config JSON round trip preserves every field") {
    PipelineConfig cfg = small_config();
    cfg.mode = AttentionMode::Enhanced;
    cfg.train.lr = 0.0042;
    PipelineConfig back = PipelineConfig::from_json_string(cfg.to_json_string());
    CHECK(back.T == cfg.T);
    CHECK(back.stride == cfg.stride);
    CHECK(back.tau == cfg.tau);
    CHECK(back.mode == AttentionMode::Enhanced);
    CHECK(back.train.lr == cfg.train.lr);
    CHECK(back.k_range.lo == cfg.k_range.lo);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("config validation rejects bad values") {
    PipelineConfig cfg;
    cfg.T = 30;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PipelineConfig{};
    cfg.tau = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PipelineConfig{};
    cfg.h = 30;  // not divisible by n_h = 4
    cfg.n_h = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json_string("{"), ConfigError);
}

TEST_CASE("synthetic generator validates community sizes") {
    SyntheticSpec spec;
    spec.n_assets = 10;
    spec.community_sizes = {4, 4};  // sums to 8
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("synthetic: vanishing idiosyncratic noise drives within-community NAV corr to 1") {
    SyntheticSpec spec;
    spec.n_assets = 8;
    spec.t_total = 120;
    spec.community_sizes = {4, 4};
    spec.factor_vol = 0.02;
    spec.idio_vol = 1e-9;
    spec.seed = 11;
    SyntheticData d = generate_synthetic(spec);
    NAVMatrix nav = compute_nav(d.prices, 0);
    // correlation of NAV columns for assets 0 and 1 (same community)
    const int t_len = spec.t_total;
    double m0 = 0, m1 = 0;
    for (int t = 0; t < t_len; ++t) {
        m0 += nav.values.at(t, 0);
        m1 += nav.values.at(t, 1);
    }
    m0 /= t_len;
    m1 /= t_len;
    double s00 = 0, s11 = 0, s01 = 0;
    for (int t = 0; t < t_len; ++t) {
        s00 += (nav.values.at(t, 0) - m0) * (nav.values.at(t, 0) - m0);
        s11 += (nav.values.at(t, 1) - m1) * (nav.values.at(t, 1) - m1);
        s01 += (nav.values.at(t, 0) - m0) * (nav.values.at(t, 1) - m1);
    }
    CHECK(s01 / std::sqrt(s00 * s11) > 0.999);
}

TEST_CASE("synthetic default spec separates within/across NAV correlations over 5 seeds") {
    double within_acc = 0.0, across_acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SyntheticSpec spec;  // N=30, 3 communities, idio = 0.5 * factor vol
        spec.factor_vol = 0.02;
        spec.idio_vol = 0.01;
        spec.seed = seed;
        SyntheticData d = generate_synthetic(spec);
        NAVMatrix nav = compute_nav(d.prices, 0);
        const int n = spec.n_assets, t_len = spec.t_total;
        auto corr = [&](int i, int j) {
            double mi = 0, mj = 0;
            for (int t = 0; t < t_len; ++t) {
                mi += nav.values.at(t, i);
                mj += nav.values.at(t, j);
            }
            mi /= t_len;
            mj /= t_len;
            double sii = 0, sjj = 0, sij = 0;
            for (int t = 0; t < t_len; ++t) {
                sii += (nav.values.at(t, i) - mi) * (nav.values.at(t, i) - mi);
                sjj += (nav.values.at(t, j) - mj) * (nav.values.at(t, j) - mj);
                sij += (nav.values.at(t, i) - mi) * (nav.values.at(t, j) - mj);
            }
            return sij / std::sqrt(sii * sjj);
        };
        double within = 0, across = 0;
        int nw = 0, na = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                if (d.labels[i] == d.labels[j]) {
                    within += corr(i, j);
                    ++nw;
                } else {
                    across += corr(i, j);
                    ++na;
                }
            }
        within_acc += within / nw;
        across_acc += across / na;
    }
    CHECK(within_acc / 5.0 >= 0.6);
    CHECK(across_acc / 5.0 <= 0.2);
}

TEST_CASE("pipeline runs end to end and reports every window") {
    SyntheticData data = small_data();
    PipelineConfig cfg = small_config();
    PipelineResult r = run_pipeline(cfg, data.prices);
    const int feature_len = data.prices.rows() - kFeatureWarmup;
    const std::size_t expect_windows = make_window_starts(feature_len, cfg.T, cfg.stride).size();
    CHECK(r.assignments.size() == expect_windows);
    CHECK(r.report.windows.size() == expect_windows);
    CHECK(!r.train_log.empty());
    CHECK(!r.eval_window_indices.empty());
    CHECK(r.scale_weights.numel() == 2);
    CHECK(r.scale_weights[0] + r.scale_weights[1] == doctest::Approx(1.0));
    for (const auto& a : r.assignments) CHECK(a.labels.size() == 10);
}

TEST_CASE("pipeline reruns reproduce the assignment CSV bitwise") {
    namespace fs = std::filesystem;
    SyntheticData data = small_data(23);
    PipelineConfig cfg = small_config();
    const fs::path dir1 = fs::temp_directory_path() / "tempcomm_test_run1";
    const fs::path dir2 = fs::temp_directory_path() / "tempcomm_test_run2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    RunOptions o1, o2;
    o1.out_dir = dir1.string();
    o2.out_dir = dir2.string();
    run_pipeline(cfg, data.prices, nullptr, o1);
    run_pipeline(cfg, data.prices, nullptr, o2);
    CHECK(slurp((dir1 / "assignments.csv").string()) == slurp((dir2 / "assignments.csv").string()));
    CHECK(slurp((dir1 / "metrics.csv").string()) == slurp((dir2 / "metrics.csv").string()));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("assignments CSV round-trips through the reader") {
    namespace fs = std::filesystem;
    SyntheticData data = small_data(29);
    PipelineConfig cfg = small_config();
    const fs::path dir = fs::temp_directory_path() / "tempcomm_test_roundtrip";
    fs::remove_all(dir);
    RunOptions opts;
    opts.out_dir = dir.string();
    PipelineResult r = run_pipeline(cfg, data.prices, nullptr, opts);
    auto back = read_assignments_csv((dir / "assignments.csv").string(), data.prices.asset_ids);
    REQUIRE(back.size() == r.assignments.size());
    for (std::size_t w = 0; w < back.size(); ++w) {
        CHECK(back[w].window_start == r.assignments[w].window_start);
        CHECK(back[w].labels == r.assignments[w].labels);
    }
    fs::remove_all(dir);
}

TEST_CASE("window length 45 degenerates the long pathway to one step but completes") {
    SyntheticData data = small_data(31);
    PipelineConfig cfg = small_config();
    cfg.T = 45;
    cfg.stride = 12;
    PipelineResult r = run_pipeline(cfg, data.prices);
    CHECK(!r.assignments.empty());
}

TEST_CASE("window sweep validates lengths before any run") {
    SyntheticData data = small_data(37);
    PipelineConfig cfg = small_config();
    CHECK_THROWS_AS(run_window_sweep(cfg, data.prices, nullptr, {48, 44}), ConfigError);
    CHECK_THROWS_AS(run_window_sweep(cfg, data.prices, nullptr, {48, 10000}), ConfigError);
}

TEST_CASE("ablation requires two modes and emits rows in canonical order") {
    SyntheticData data = small_data(41);
    PipelineConfig cfg = small_config();
    CHECK_THROWS_AS(run_ablation(cfg, data.prices, nullptr, {AttentionMode::Full}), ConfigError);

    auto rows = run_ablation(cfg, data.prices, nullptr,
                             {AttentionMode::Full, AttentionMode::Static});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mode == AttentionMode::Static);
    CHECK(rows[1].mode == AttentionMode::Full);
    CHECK(rows[0].delta_composite == 0.0);
}

TEST_CASE("gradcheck entry point passes at reduced dims and reports dropout skips") {
    GradReport rep = run_gradcheck(AttentionMode::Full, 6, 53, 8, 2, 0.1);
    CHECK(rep.pass());
    bool has_skip = false;
    for (const auto& e : rep.entries)
        if (e.skipped && e.note.find("stochastic") != std::string::npos) has_skip = true;
    CHECK(has_skip);
}

TEST_CASE("graph dumps are versioned JSON with edges and features") {
    namespace fs = std::filesystem;
    SyntheticData data = small_data(43);
    PipelineConfig cfg = small_config();
    const fs::path dir = fs::temp_directory_path() / "tempcomm_test_dump";
    fs::remove_all(dir);
    RunOptions opts;
    opts.out_dir = dir.string();
    opts.dump_graphs = true;
    run_pipeline(cfg, data.prices, nullptr, opts);
    bool found = false;
    for (const auto& entry : fs::directory_iterator(dir / "graphs")) {
        const std::string text = slurp(entry.path().string());
        CHECK(text.find("tempcomm-window-graph") != std::string::npos);
        CHECK(text.find("\"version\":1") != std::string::npos);
        found = true;
    }
    CHECK(found);
    fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip parameters exactly") {
    namespace fs = std::filesystem;
    ParamStore store;
    Rng rng(47);
    store.add("a", Tensor::randn({3, 4}, rng));
    store.add("b", Tensor::randn({7}, rng, 0.001));
    const std::string path = (fs::temp_directory_path() / "tempcomm_ckpt.json").string();
    store.save_checkpoint(path);

    ParamStore loaded;
    Rng rng2(48);
    loaded.add("a", Tensor::randn({3, 4}, rng2));
    loaded.add("b", Tensor::randn({7}, rng2));
    loaded.load_checkpoint(path);
    for (std::size_t p = 0; p < store.size(); ++p) {
        const Tensor& x = store.items()[p].second.value();
        const Tensor& y = loaded.items()[p].second.value();
        REQUIRE(x.numel() == y.numel());
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
    }
    fs::remove(path);
}
