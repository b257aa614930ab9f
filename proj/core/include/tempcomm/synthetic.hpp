#pragma once

#include <cstdint>
#include <vector>

#include "tempcomm/marketdata.hpp"

namespace tempcomm {

/// Planted-community factor model: log return of asset i in community c is
/// beta_i * f_c(t) + eps_i(t); prices are 100 * exp(cumsum of returns).
struct SyntheticSpec {
    int n_assets = 30;
    int t_total = 300;
    std::vector<int> community_sizes = {10, 10, 10};
    double factor_vol = 0.02;
    double idio_vol = 0.01;  // sigma of eps
    double beta_lo = 0.8;
    double beta_hi = 1.2;
    int regime_switch = -1;  // time index of the membership change, -1 = none
    /// Community sizes after the switch. Empty: memberships reshuffle among
    /// the existing factors. Non-empty: the factor structure itself changes
    /// (block assignment over the new sizes).
    std::vector<int> post_community_sizes;
    std::uint64_t seed = 42;

    void validate() const;
};

struct SyntheticData {
    PriceMatrix prices;
    std::vector<int> labels;       // community per asset before any switch
    std::vector<int> labels_post;  // after the switch (equal to labels if none)
    SyntheticSpec spec;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

void write_labels_csv(const std::vector<std::string>& asset_ids, const std::vector<int>& labels,
                      const std::string& path);

}  // namespace tempcomm
