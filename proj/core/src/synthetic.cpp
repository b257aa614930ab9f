#include "tempcomm/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static const int d[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return m == 2 && is_leap(y) ? 29 : d[m - 1];
}

std::string make_date(int y, int m, int d) {
    char buf[11];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
    return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_assets < 2) throw ConfigError("synthetic: need at least 2 assets");
    if (t_total < 2) throw ConfigError("synthetic: need at least 2 days");
    if (community_sizes.empty()) throw ConfigError("synthetic: no communities");
    int total = 0;
    for (int s : community_sizes) {
        if (s < 1) throw ConfigError("synthetic: community sizes must be positive");
        total += s;
    }
    if (total != n_assets)
        throw ConfigError("synthetic: community sizes sum to " + std::to_string(total) +
                          ", expected " + std::to_string(n_assets));
    if (!(idio_vol > 0.0) || !(factor_vol > 0.0))
        throw ConfigError("synthetic: volatilities must be positive");
    if (regime_switch >= t_total) throw ConfigError("synthetic: regime switch beyond series end");
    if (!post_community_sizes.empty()) {
        int post_total = 0;
        for (int s : post_community_sizes) {
            if (s < 1) throw ConfigError("synthetic: post community sizes must be positive");
            post_total += s;
        }
        if (post_total != n_assets)
            throw ConfigError("synthetic: post community sizes sum to " +
                              std::to_string(post_total) + ", expected " +
                              std::to_string(n_assets));
    }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const int n = spec.n_assets, t_total = spec.t_total;
    const int k = static_cast<int>(spec.community_sizes.size());
    Rng rng(spec.seed);

    SyntheticData out;
    out.spec = spec;
    out.labels.reserve(n);
    for (int c = 0; c < k; ++c)
        for (int s = 0; s < spec.community_sizes[c]; ++s) out.labels.push_back(c);

    out.labels_post = out.labels;
    int k_post = k;
    if (spec.regime_switch >= 0) {
        if (!spec.post_community_sizes.empty()) {
            k_post = static_cast<int>(spec.post_community_sizes.size());
            out.labels_post.clear();
            for (int c = 0; c < k_post; ++c)
                for (int s = 0; s < spec.post_community_sizes[c]; ++s)
                    out.labels_post.push_back(c);
        } else if (k > 1) {
            Rng reshuffle(Rng::derive(spec.seed, 0x5157));
            for (int i = 0; i < n; ++i) out.labels_post[i] = reshuffle.uniform_int(k);
            // every community must stay non-empty
            for (int c = 0; c < k; ++c) {
                bool seen = false;
                for (int i = 0; i < n && !seen; ++i) seen = out.labels_post[i] == c;
                if (!seen) out.labels_post[reshuffle.uniform_int(n)] = c;
            }
        }
    }

    std::vector<double> beta(n);
    for (int i = 0; i < n; ++i) beta[i] = rng.uniform(spec.beta_lo, spec.beta_hi);

    out.prices.values = Tensor({t_total, n});
    std::vector<double> log_price(n, 0.0);
    std::vector<double> factors(std::max(k, k_post));
    for (int t = 0; t < t_total; ++t) {
        for (auto& f : factors) f = rng.normal() * spec.factor_vol;
        const bool post = spec.regime_switch >= 0 && t >= spec.regime_switch;
        for (int i = 0; i < n; ++i) {
            const int c = post ? out.labels_post[i] : out.labels[i];
            const double r = beta[i] * factors[c] + rng.normal() * spec.idio_vol;
            log_price[i] += r;
            out.prices.values.at(t, i) = 100.0 * std::exp(log_price[i]);
        }
    }

    char id[16];
    for (int i = 0; i < n; ++i) {
        std::snprintf(id, sizeof id, "A%03d", i);
        out.prices.asset_ids.push_back(id);
    }
    int y = 2020, m = 1, d = 1;
    for (int t = 0; t < t_total; ++t) {
        out.prices.dates.push_back(make_date(y, m, d));
        if (++d > days_in_month(y, m)) {
            d = 1;
            if (++m > 12) {
                m = 1;
                ++y;
            }
        }
    }
    return out;
}

void write_labels_csv(const std::vector<std::string>& asset_ids, const std::vector<int>& labels,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "asset,community\n";
    for (std::size_t i = 0; i < asset_ids.size(); ++i)
        out << asset_ids[i] << "," << labels[i] << "\n";
}

}  // namespace tempcomm
