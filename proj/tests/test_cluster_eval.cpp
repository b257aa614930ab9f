#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tempcomm/cluster.hpp"
#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"
#include "tempcomm/synthetic.hpp"

using namespace tempcomm;

namespace {

Tensor blobs(const std::vector<int>& sizes, double sep, double sigma, std::uint64_t seed,
             std::vector<int>* labels = nullptr) {
    Rng rng(seed);
    int n = 0;
    for (int s : sizes) n += s;
    Tensor z({n, 3});
    int row = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        for (int s = 0; s < sizes[c]; ++s) {
            for (int d = 0; d < 3; ++d)
                z.at(row, d) = (d == static_cast<int>(c % 3) ? sep * (1.0 + c / 3) : 0.0) +
                               sigma * rng.normal();
            if (labels) labels->push_back(static_cast<int>(c));
            ++row;
        }
    }
    return z;
}

}  // namespace

TEST_CASE("spectral clustering splits two well-separated clouds with K=2") {
    std::vector<int> truth;
    Tensor z = blobs({6, 6}, 5.0, 0.05, 3, &truth);
    ClusterAssignment a = spectral_cluster(z, 2, 5, 7);
    CHECK(a.k == 2);
    CHECK(adjusted_rand_index(a.labels, truth) == doctest::Approx(1.0));
}

TEST_CASE("identical embeddings collapse to one cluster with a warning") {
    Tensor z = Tensor::full({8, 4}, 1.5);
    bool degenerate = false;
    ClusterAssignment a = spectral_cluster(z, 2, 5, 11, &degenerate);
    CHECK(degenerate);
    CHECK(a.k == 1);
    for (int l : a.labels) CHECK(l == 0);
}

TEST_CASE("three tight Gaussian blobs recover the generating labels (median of 10 seeds)") {
    std::vector<double> aris;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::vector<int> truth;
        Tensor z = blobs({10, 10, 10}, 1.0, 0.1, 100 + seed, &truth);
        ClusterAssignment a = spectral_cluster(z, 2, 5, seed);
        aris.push_back(adjusted_rand_index(a.labels, truth));
    }
    std::sort(aris.begin(), aris.end());
    const double median = 0.5 * (aris[4] + aris[5]);
    CHECK(median == doctest::Approx(1.0));
}

TEST_CASE("spectral clustering is deterministic under a fixed seed") {
    Tensor z = blobs({5, 5, 5}, 1.0, 0.3, 17);
    ClusterAssignment a = spectral_cluster(z, 2, 6, 23);
    ClusterAssignment b = spectral_cluster(z, 2, 6, 23);
    CHECK(a.k == b.k);
    CHECK(a.labels == b.labels);
}

TEST_CASE("multi_feature_rho: identical and negated blocks give 1") {
    Rng rng(19);
    Tensor xi({9, 3});
    for (std::size_t i = 0; i < xi.numel(); ++i) xi[i] = rng.normal();
    Tensor xj = xi;
    CHECK(multi_feature_rho(xi, xj) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < xj.numel(); ++i) xj[i] = -xj[i];
    CHECK(multi_feature_rho(xi, xj) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("multi_feature_rho averages per-feature absolute correlations: (0.6, -0.2) -> 0.4") {
    // x = (-1, 0, 1); w1 = (1, -2, 1) is orthogonal to x and mean-free.
    // y = rho*x + s*w with s chosen so Corr(x, y) = rho exactly.
    auto make_pair = [](double rho, Tensor& xi, Tensor& xj, int d) {
        const double x[3] = {-1.0, 0.0, 1.0};
        const double w[3] = {1.0, -2.0, 1.0};
        const double s = std::sqrt(2.0 * (1.0 - rho * rho) / 6.0);
        for (int t = 0; t < 3; ++t) {
            xi.at(t, d) = x[t];
            xj.at(t, d) = rho * x[t] + s * w[t];
        }
    };
    Tensor xi({3, 2}), xj({3, 2});
    make_pair(0.6, xi, xj, 0);
    make_pair(-0.2, xi, xj, 1);
    CHECK(multi_feature_rho(xi, xj) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("clustering metrics: clusters of identical series have IntraCorr 1") {
    Rng rng(23);
    FeatureTensor f;
    const int n = 6, t_len = 12;
    f.values = Tensor({n, 7, t_len});
    for (int c = 0; c < 2; ++c) {
        std::vector<double> base(7 * t_len);
        for (auto& v : base) v = rng.normal();
        for (int m = 0; m < 3; ++m)
            for (int d = 0; d < 7; ++d)
                for (int t = 0; t < t_len; ++t)
                    f.values.at(c * 3 + m, d, t) = base[d * t_len + t];
    }
    ClusterAssignment a;
    a.k = 2;
    a.labels = {0, 0, 0, 1, 1, 1};
    MetricsEntry e = clustering_metrics(a, f);
    CHECK(e.intra_corr == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(e.inter_dissim.has_value());
    CHECK(*e.inter_dissim == 1.0 - *e.inter_corr);
}

TEST_CASE("metrics stay in [0,1] on fuzzed inputs and are relabel-invariant") {
    Rng rng(29);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 4 + rng.uniform_int(5);
        const int t_len = 8 + rng.uniform_int(10);
        FeatureTensor f;
        f.values = Tensor({n, 7, t_len});
        for (std::size_t i = 0; i < f.values.numel(); ++i) f.values[i] = rng.normal();
        ClusterAssignment a;
        a.k = 2 + rng.uniform_int(2);
        a.labels.resize(n);
        for (int i = 0; i < n; ++i) a.labels[i] = i % a.k;
        MetricsEntry e = clustering_metrics(a, f);
        CHECK(e.intra_corr >= 0.0);
        CHECK(e.intra_corr <= 1.0);
        REQUIRE(e.inter_corr.has_value());
        CHECK(*e.inter_corr >= 0.0);
        CHECK(*e.inter_corr <= 1.0);
        CHECK(*e.inter_dissim == 1.0 - *e.inter_corr);

        // relabeling clusters leaves every metric unchanged
        ClusterAssignment b = a;
        for (int& l : b.labels) l = (l + 1) % a.k;
        MetricsEntry e2 = clustering_metrics(b, f);
        CHECK(e2.intra_corr == doctest::Approx(e.intra_corr).epsilon(1e-15));
        CHECK(*e2.inter_corr == doctest::Approx(*e.inter_corr).epsilon(1e-14));
    }
}

TEST_CASE("single cluster reports InterCorr/InterDissim as absent, not zero") {
    Rng rng(31);
    FeatureTensor f;
    f.values = Tensor({4, 7, 10});
    for (std::size_t i = 0; i < f.values.numel(); ++i) f.values[i] = rng.normal();
    ClusterAssignment a;
    a.k = 1;
    a.labels = {0, 0, 0, 0};
    MetricsEntry e = clustering_metrics(a, f);
    CHECK_FALSE(e.inter_corr.has_value());
    CHECK_FALSE(e.inter_dissim.has_value());
}

TEST_CASE("independent random walks across clusters: InterCorr small, InterDissim near 1") {
    // Monte-Carlo oracle, 100 trials at T=89 on engineered features of
    // independent geometric random walks.
    Rng rng(37);
    double acc = 0.0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = 6, t_total = kFeatureWarmup + 89;
        PriceMatrix p;
        p.values = Tensor({t_total, n});
        for (int i = 0; i < n; ++i) {
            double lp = 0.0;
            for (int t = 0; t < t_total; ++t) {
                lp += 0.02 * rng.normal();
                p.values.at(t, i) = 100.0 * std::exp(lp);
            }
            p.asset_ids.push_back("A" + std::to_string(i));
        }
        FeatureTensor f = compute_features(p);
        ClusterAssignment a;
        a.k = 2;
        a.labels = {0, 0, 0, 1, 1, 1};
        MetricsEntry e = clustering_metrics(a, f);
        REQUIRE(e.inter_corr.has_value());
        acc += *e.inter_corr;
    }
    // The autocorrelated indicator features (RSI, MACD) inflate spurious
    // |corr| between independent walks; the Monte-Carlo level at T=89 sits
    // near 0.25, far below the ~1.0 of genuinely co-moving series.
    const double mean_inter = acc / trials;
    CHECK(mean_inter < 0.30);
    CHECK(1.0 - mean_inter > 0.70);  // InterDissim near 1
}

TEST_CASE("NAV composite: exact weight arithmetic on constructed correlations") {
    // Within-cluster NAV patterns identical; across clusters exactly
    // uncorrelated (x = (-1,0,1) vs w = (1,-2,1)).
    PriceMatrix p;
    p.values = Tensor({3, 4});
    const double x[3] = {-1.0, 0.0, 1.0};
    const double w[3] = {1.0, -2.0, 1.0};
    for (int t = 0; t < 3; ++t) {
        p.values.at(t, 0) = 100.0 * (1.0 + 0.01 * x[t]);
        p.values.at(t, 1) = 200.0 * (1.0 + 0.01 * x[t]);
        p.values.at(t, 2) = 50.0 * (1.0 + 0.01 * w[t]);
        p.values.at(t, 3) = 75.0 * (1.0 + 0.01 * w[t]);
    }
    for (int i = 0; i < 4; ++i) p.asset_ids.push_back("A" + std::to_string(i));
    ClusterAssignment a;
    a.k = 2;
    a.labels = {0, 0, 1, 1};

    NavScore s = nav_composite_score(a, p, 0.1, 0.9);
    CHECK(s.s_intra == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(s.s_inter.has_value());
    CHECK(*s.s_inter == doctest::Approx(1.0).epsilon(1e-9));
    REQUIRE(s.composite.has_value());
    CHECK(*s.composite == doctest::Approx(1.0).epsilon(1e-9));

    // all four assets identical: S_intra = 1, cross-correlation 1, S = 0.1
    PriceMatrix q;
    q.values = Tensor({3, 4});
    for (int t = 0; t < 3; ++t)
        for (int i = 0; i < 4; ++i) q.values.at(t, i) = 100.0 * (1.0 + 0.01 * x[t]);
    q.asset_ids = p.asset_ids;
    NavScore s2 = nav_composite_score(a, q, 0.1, 0.9);
    CHECK(*s2.composite == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("NAV composite matches a scalar oracle on a 4-asset hand case") {
    Rng rng(41);
    PriceMatrix p;
    const int t_len = 12, n = 4;
    p.values = Tensor({t_len, n});
    for (int i = 0; i < n; ++i) {
        double lp = 0.0;
        for (int t = 0; t < t_len; ++t) {
            lp += 0.05 * rng.normal();
            p.values.at(t, i) = 80.0 * std::exp(lp);
        }
        p.asset_ids.push_back("A" + std::to_string(i));
    }
    ClusterAssignment a;
    a.k = 2;
    a.labels = {0, 1, 0, 1};
    NavScore s = nav_composite_score(a, p, 0.1, 0.9);

    // scalar recomputation
    std::vector<std::vector<double>> nav(n, std::vector<double>(t_len));
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < t_len; ++t) nav[i][t] = p.values.at(t, i) / p.values.at(0, i);
    auto corr = [&](int i, int j) {
        double mi = 0, mj = 0;
        for (int t = 0; t < t_len; ++t) {
            mi += nav[i][t];
            mj += nav[j][t];
        }
        mi /= t_len;
        mj /= t_len;
        double sii = 0, sjj = 0, sij = 0;
        for (int t = 0; t < t_len; ++t) {
            sii += (nav[i][t] - mi) * (nav[i][t] - mi);
            sjj += (nav[j][t] - mj) * (nav[j][t] - mj);
            sij += (nav[i][t] - mi) * (nav[j][t] - mj);
        }
        return sij / std::sqrt(sii * sjj);
    };
    const double s_intra = 0.5 * (corr(0, 2) + corr(1, 3));
    const double s_inter =
        1.0 - (corr(0, 1) + corr(0, 3) + corr(2, 1) + corr(2, 3)) / 4.0;
    CHECK(std::abs(s.s_intra - s_intra) < 1e-12);
    CHECK(std::abs(*s.s_inter - s_inter) < 1e-12);
    CHECK(std::abs(*s.composite - (0.1 * s_intra + 0.9 * s_inter)) < 1e-12);
}

TEST_CASE("adjusted rand index basics and hand contingency case") {
    std::vector<int> a = {0, 0, 1, 1, 2};
    CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));

    std::vector<int> relabeled = {2, 2, 0, 0, 1};
    CHECK(adjusted_rand_index(a, relabeled) == doctest::Approx(1.0));

    // two clusters of 2 vs a 3/1 split on 4 items: pair counting gives 0
    std::vector<int> u = {0, 0, 1, 1};
    std::vector<int> v = {0, 0, 0, 1};
    CHECK(adjusted_rand_index(u, v) == doctest::Approx(0.0));

    CHECK_THROWS_AS(adjusted_rand_index(u, a), DataError);
}

TEST_CASE("stability profile: constant counts and the (2,2,6,2) spike pattern") {
    auto assignment = [](int start, int k) {
        ClusterAssignment a;
        a.window_start = start;
        a.k = k;
        a.labels.assign(8, 0);
        for (int i = 0; i < 8; ++i) a.labels[i] = i % k;
        return a;
    };
    std::vector<ClusterAssignment> flat;
    for (int w = 0; w < 10; ++w) flat.push_back(assignment(w, 2));
    StabilityProfile p = stability_profile(flat);
    CHECK(p.mean_count == doctest::Approx(2.0));
    CHECK(p.spike_transitions.empty());

    std::vector<ClusterAssignment> spiky = {assignment(0, 2), assignment(1, 2), assignment(2, 6),
                                            assignment(3, 2)};
    StabilityProfile q = stability_profile(spiky);
    REQUIRE(q.spike_transitions.size() == 2);
    CHECK(q.spike_transitions[0] == 1);  // entering window 2 (index 2)
    CHECK(q.spike_transitions[1] == 2);  // leaving it
}

TEST_CASE("regime switch produces a cluster-count spike near the switch (median of 5 seeds)") {
    // Oracle without the neural pipeline: cluster each window's z-scored
    // return profiles; the community count jumps when the factor structure
    // changes from 2 to 6 groups.
    std::vector<double> distances;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SyntheticSpec spec;
        spec.n_assets = 18;
        spec.t_total = 260;
        spec.community_sizes = {9, 9};
        spec.factor_vol = 0.03;
        spec.idio_vol = 0.003;
        spec.regime_switch = 150;
        spec.post_community_sizes = {3, 3, 3, 3, 3, 3};  // 2 -> 6 communities
        spec.seed = seed * 1000 + 7;
        SyntheticData data = generate_synthetic(spec);

        const int t_win = 60, stride = 60;  // non-overlapping: the count jumps
        auto starts = make_window_starts(spec.t_total, t_win, stride);
        std::vector<ClusterAssignment> assignments;
        for (int s : starts) {
            PriceMatrix w = data.prices.slice_rows(s, t_win);
            Tensor emb({spec.n_assets, t_win - 1});
            for (int i = 0; i < spec.n_assets; ++i) {
                double m = 0.0;
                for (int t = 1; t < t_win; ++t) {
                    emb.at(i, t - 1) = std::log(w.values.at(t, i) / w.values.at(t - 1, i));
                    m += emb.at(i, t - 1);
                }
                m /= (t_win - 1);
                double v = 0.0;
                for (int t = 0; t < t_win - 1; ++t)
                    v += (emb.at(i, t) - m) * (emb.at(i, t) - m);
                v = std::sqrt(v / (t_win - 1)) + 1e-12;
                for (int t = 0; t < t_win - 1; ++t) emb.at(i, t) = (emb.at(i, t) - m) / v;
            }
            ClusterAssignment a = spectral_cluster(emb, 2, 8, 77);
            a.window_start = s;
            assignments.push_back(std::move(a));
        }
        StabilityProfile p = stability_profile(assignments);

        // window index whose range first contains the switch
        int switch_window = 0;
        for (std::size_t w = 0; w < starts.size(); ++w)
            if (starts[w] + t_win > spec.regime_switch && starts[w] <= spec.regime_switch) {
                switch_window = static_cast<int>(w);
                break;
            }
        double best = 1e9;
        for (int t : p.spike_transitions) best = std::min(best, std::abs(double(t) - switch_window));
        distances.push_back(best);
    }
    std::sort(distances.begin(), distances.end());
    CHECK(distances[2] <= 2.0);  // median within +-2 windows of the switch
}
