#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tempcomm/errors.hpp"
#include "tempcomm/marketdata.hpp"
#include "tempcomm/rng.hpp"

using namespace tempcomm;

namespace {

PriceMatrix from_rows(const std::vector<std::vector<double>>& rows,
                      std::vector<std::string> ids = {}) {
    PriceMatrix p;
    const int t = static_cast<int>(rows.size());
    const int n = static_cast<int>(rows[0].size());
    p.values = Tensor({t, n});
    for (int r = 0; r < t; ++r)
        for (int c = 0; c < n; ++c) p.values.at(r, c) = rows[r][c];
    for (int c = 0; c < n; ++c)
        p.asset_ids.push_back(ids.empty() ? "A" + std::to_string(c) : ids[c]);
    for (int r = 0; r < t; ++r) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "2021-%02d-%02d", 1 + r / 28, 1 + r % 28);
        p.dates.push_back(buf);
    }
    return p;
}

PriceMatrix geometric_ramp(int t_total, int n, double rate, double base = 100.0) {
    std::vector<std::vector<double>> rows(t_total, std::vector<double>(n));
    for (int t = 0; t < t_total; ++t)
        for (int c = 0; c < n; ++c) rows[t][c] = base * std::pow(rate, t);
    return from_rows(rows);
}

}  // namespace

TEST_CASE("load_prices parses a well-formed 3-asset 10-day file") {
    std::istringstream csv(
        "date,AAA,BBB,CCC\n"
        "2021-01-01,10,20,30\n2021-01-02,11,21,31\n2021-01-03,12,22,32\n"
        "2021-01-04,13,23,33\n2021-01-05,14,24,34\n2021-01-06,15,25,35\n"
        "2021-01-07,16,26,36\n2021-01-08,17,27,37\n2021-01-09,18,28,38\n"
        "2021-01-10,19,29,39\n");
    PriceMatrix p = load_prices(csv);
    CHECK(p.rows() == 10);
    CHECK(p.cols() == 3);
    CHECK(p.asset_ids[1] == "BBB");
    CHECK(p.values.at(9, 2) == doctest::Approx(39.0));
}

TEST_CASE("load_prices rejects a negative price naming the cell") {
    std::istringstream csv("date,AAA,BBB\n2021-01-01,10,20\n2021-01-02,-3,21\n");
    try {
        load_prices(csv);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 3") != std::string::npos);
        CHECK(msg.find("AAA") != std::string::npos);
    }
}

TEST_CASE("load_prices drops an asset with half its rows missing and warns") {
    std::ostringstream csv;
    csv << "date,GOOD,BAD\n";
    for (int t = 0; t < 10; ++t) {
        csv << "2021-01-" << (t < 9 ? "0" : "") << (t + 1) << "," << (100 + t) << ",";
        if (t % 2 == 0) csv << (200 + t);
        csv << "\n";
    }
    std::istringstream in(csv.str());
    std::vector<std::string> warnings;
    PriceMatrix p = load_prices(in, &warnings);
    CHECK(p.cols() == 1);
    CHECK(p.asset_ids[0] == "GOOD");
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("BAD") != std::string::npos);
}

TEST_CASE("load_prices forward-fills small gaps") {
    std::ostringstream csv;
    csv << "date,AAA\n";
    for (int t = 0; t < 21; ++t) {
        csv << "2021-01-" << (t < 9 ? "0" : "") << (t + 1) << ",";
        if (t != 1) csv << (10 + t);
        csv << "\n";
    }
    std::istringstream in(csv.str());
    PriceMatrix p = load_prices(in);
    CHECK(p.values.at(1, 0) == doctest::Approx(10.0));  // carried forward
}

TEST_CASE("load_prices fails when no assets survive cleaning") {
    std::istringstream csv("date,BAD\n2021-01-01,\n2021-01-02,\n2021-01-03,3\n");
    CHECK_THROWS_AS(load_prices(csv), DataError);
}

TEST_CASE("compute_nav: constant series gives all ones") {
    PriceMatrix p = geometric_ramp(6, 2, 1.0);
    NAVMatrix nav = compute_nav(p, 0);
    for (std::size_t i = 0; i < nav.values.numel(); ++i) CHECK(nav.values[i] == 1.0);
}

TEST_CASE("compute_nav: direct division example") {
    PriceMatrix p = from_rows({{100.0}, {110.0}, {121.0}});
    NAVMatrix nav = compute_nav(p, 0);
    CHECK(nav.values.at(0, 0) == 1.0);
    CHECK(nav.values.at(1, 0) == doctest::Approx(1.1));
    CHECK(nav.values.at(2, 0) == doctest::Approx(1.21));
}

TEST_CASE("compute_nav is invariant to positive per-asset scalings") {
    Rng rng(5);
    std::vector<std::vector<double>> rows(30, std::vector<double>(3));
    for (auto& r : rows)
        for (auto& v : r) v = 50.0 + 50.0 * rng.uniform();
    PriceMatrix p = from_rows(rows);
    PriceMatrix scaled = p;
    const double alpha[3] = {3.7, 0.2, 1234.5};
    for (int t = 0; t < 30; ++t)
        for (int c = 0; c < 3; ++c) scaled.values.at(t, c) *= alpha[c];
    NAVMatrix a = compute_nav(p, 0), b = compute_nav(scaled, 0);
    for (std::size_t i = 0; i < a.values.numel(); ++i)
        CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-12 * std::abs(a.values[i]));
}

TEST_CASE("compute_features: one-day doubling gives log return ln 2") {
    std::vector<std::vector<double>> rows(47, std::vector<double>(1, 100.0));
    rows[46][0] = 200.0;  // doubles on the last day
    PriceMatrix p = from_rows(rows);
    FeatureTensor f = compute_features(p);
    REQUIRE(f.length() == 2);
    CHECK(f.values.at(0, 0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("compute_features: constant series degenerates to 0 returns, RSI 50, MACD 0") {
    PriceMatrix p = geometric_ramp(50, 1, 1.0);
    FeatureTensor f = compute_features(p);
    for (int t = 0; t < f.length(); ++t) {
        for (int d = 0; d < 5; ++d) CHECK(f.values.at(0, d, t) == doctest::Approx(0.0));
        CHECK(f.values.at(0, 5, t) == doctest::Approx(50.0));
        CHECK(f.values.at(0, 6, t) == doctest::Approx(0.0));
    }
}

TEST_CASE("compute_features RSI matches a direct per-day Wilder recursion on a ramp") {
    const int t_total = 60;
    PriceMatrix p = geometric_ramp(t_total, 1, 1.01);
    FeatureTensor f = compute_features(p);

    // independent scalar recursion
    std::vector<double> rsi(t_total, 50.0);
    double ag = 0.0, al = 0.0;
    for (int t = 1; t < t_total; ++t) {
        const double ch = p.values.at(t, 0) - p.values.at(t - 1, 0);
        const double g = std::max(ch, 0.0), l = std::max(-ch, 0.0);
        if (t < 14) {
            ag += g;
            al += l;
            continue;
        }
        if (t == 14) {
            ag = (ag + g) / 14.0;
            al = (al + l) / 14.0;
        } else {
            ag = (ag * 13.0 + g) / 14.0;
            al = (al * 13.0 + l) / 14.0;
        }
        rsi[t] = (ag == 0.0 && al == 0.0) ? 50.0
                 : al == 0.0              ? 100.0
                                          : 100.0 - 100.0 / (1.0 + ag / al);
    }
    for (int s = 0; s < f.length(); ++s)
        CHECK(f.values.at(0, 5, s) == doctest::Approx(rsi[s + kFeatureWarmup]).epsilon(1e-12));
    // strictly rising prices: RSI pegged at the top of the range
    CHECK(f.values.at(0, 5, f.length() - 1) == doctest::Approx(100.0));
}

TEST_CASE("compute_features requires the warm-up history") {
    PriceMatrix p = geometric_ramp(45, 1, 1.0);
    try {
        compute_features(p);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("46") != std::string::npos);
    }
}

TEST_CASE("feature finiteness on random positive prices") {
    Rng rng(17);
    std::vector<std::vector<double>> rows(160, std::vector<double>(4));
    for (auto& r : rows)
        for (auto& v : r) v = std::exp(rng.normal() * 2.0);  // wildly varying but positive
    PriceMatrix p = from_rows(rows);
    FeatureTensor f = compute_features(p);
    CHECK(f.values.all_finite());
}

TEST_CASE("make_window_starts arithmetic") {
    CHECK(make_window_starts(100, 89, 1).size() == 12);
    CHECK(make_window_starts(89, 89, 1).size() == 1);
    CHECK(make_window_starts(300, 89, 10).size() == 22);
    CHECK_THROWS_AS(make_window_starts(50, 89, 1), DataError);
}

TEST_CASE("window tiling with stride 1 covers the feature axis exactly") {
    const int total = 120, t_len = 89;
    auto starts = make_window_starts(total, t_len, 1);
    std::vector<int> covered(total, 0);
    for (int s : starts) {
        CHECK(s + t_len <= total);
        for (int i = s; i < s + t_len; ++i) ++covered[i];
    }
    for (int i = 0; i < total; ++i) CHECK(covered[i] > 0);
}

TEST_CASE("make_windows aligns prices with the feature axis") {
    PriceMatrix p = geometric_ramp(140, 2, 1.001);
    FeatureTensor f = compute_features(p);
    auto windows = make_windows(p, f, 89, 3);
    REQUIRE(!windows.empty());
    const auto& w = windows.back();
    CHECK(w.prices.rows() == 89);
    CHECK(w.prices.values.at(0, 0) ==
          doctest::Approx(p.values.at(w.start + kFeatureWarmup, 0)));
    CHECK(w.features.values.at(0, 0, 0) == doctest::Approx(f.values.at(0, 0, w.start)));
}

TEST_CASE("standardize_window: zero-variance feature becomes all zeros") {
    FeatureTensor f;
    f.values = Tensor::full({2, 7, 5}, 3.0);
    FeatureTensor s = standardize_window(f);
    for (std::size_t i = 0; i < s.values.numel(); ++i) CHECK(s.values[i] == doctest::Approx(0.0));
}

TEST_CASE("standardize_window: pooled mean 0 and std 1") {
    Rng rng(23);
    FeatureTensor f;
    f.values = Tensor({3, 7, 11});
    for (std::size_t i = 0; i < f.values.numel(); ++i) f.values[i] = rng.normal() * 4.0 + 2.0;
    FeatureTensor s = standardize_window(f);
    for (int d = 0; d < 7; ++d) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int t = 0; t < 11; ++t) mean += s.values.at(i, d, t);
        mean /= 33.0;
        for (int i = 0; i < 3; ++i)
            for (int t = 0; t < 11; ++t) {
                const double dv = s.values.at(i, d, t) - mean;
                var += dv * dv;
            }
        var /= 33.0;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-7);
    }
}

TEST_CASE("standardize_window: two-value feature maps to +-1") {
    FeatureTensor f;
    f.values = Tensor({2, 7, 2});
    for (int d = 0; d < 7; ++d) {
        f.values.at(0, d, 0) = 1.0;
        f.values.at(0, d, 1) = 3.0;
        f.values.at(1, d, 0) = 1.0;
        f.values.at(1, d, 1) = 3.0;
    }
    FeatureTensor s = standardize_window(f);
    for (int d = 0; d < 7; ++d) {
        CHECK(s.values.at(0, d, 0) == doctest::Approx(-1.0).epsilon(1e-7));
        CHECK(s.values.at(0, d, 1) == doctest::Approx(1.0).epsilon(1e-7));
    }
}

TEST_CASE("standardization is idempotent up to epsilon effects") {
    Rng rng(29);
    FeatureTensor f;
    f.values = Tensor({4, 7, 20});
    for (std::size_t i = 0; i < f.values.numel(); ++i) f.values[i] = rng.normal() * 7.0 - 3.0;
    FeatureTensor once = standardize_window(f);
    FeatureTensor twice = standardize_window(once);
    for (std::size_t i = 0; i < once.values.numel(); ++i)
        CHECK(std::abs(once.values[i] - twice.values[i]) < 1e-6);
}
