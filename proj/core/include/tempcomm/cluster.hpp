#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tempcomm/graphbuild.hpp"
#include "tempcomm/marketdata.hpp"
#include "tempcomm/tensor.hpp"

namespace tempcomm {

struct ClusterAssignment {
    int window_start = 0;
    int k = 1;
    std::vector<int> labels;  // values in [0, k), every cluster non-empty
};

/// Per-window evaluation row. InterCorr/InterDissim are absent (not zero)
/// when a single cluster makes them undefined.
struct MetricsEntry {
    int window_start = 0;
    int k = 1;
    double intra_corr = 0.0;  // |.|-based multi-feature correlation
    std::optional<double> inter_corr;
    std::optional<double> inter_dissim;  // 1 - inter_corr exactly
    double nav_s_intra = 0.0;            // signed NAV correlations
    std::optional<double> nav_s_inter;
    std::optional<double> composite;  // w_intra * S_intra + w_inter * S_inter
};

struct MetricsReport {
    double w_intra = 0.1;
    double w_inter = 0.9;
    std::vector<MetricsEntry> windows;
    // Aggregates over the evaluation windows.
    double mean_intra = 0.0;
    std::optional<double> mean_inter;
    std::optional<double> mean_dissim;
    std::optional<double> mean_composite;
};

struct StabilityProfile {
    std::vector<int> counts;  // K per window
    double mean_count = 0.0;
    /// Transition indices t with |K[t+1] - K[t]| >= 2.
    std::vector<int> spike_transitions;
};

/// Gaussian-similarity spectral clustering with median-heuristic bandwidth,
/// symmetric-normalized Laplacian, eigengap model selection in
/// [k_min, k_max] (ties to the smaller K) and seeded k-means++ with 10
/// restarts. Identical embeddings collapse to one cluster with a warning.
ClusterAssignment spectral_cluster(const Tensor& embeddings, int k_min, int k_max,
                                   std::uint64_t seed, bool* degenerate = nullptr);

/// Mean over features of |Pearson| between two {T, D} blocks; zero-variance
/// features contribute 0.
double multi_feature_rho(const Tensor& xi, const Tensor& xj);

/// IntraCorr / InterCorr / InterDissim on the window's feature tensor.
MetricsEntry clustering_metrics(const ClusterAssignment& assignment,
                                const FeatureTensor& window_features);

struct NavScore {
    double s_intra = 0.0;
    std::optional<double> s_inter;
    std::optional<double> composite;
};

/// Signed NAV-correlation composite S = w_intra*S_intra + w_inter*S_inter
/// used as the training/validation signal.
NavScore nav_composite_score(const ClusterAssignment& assignment,
                             const PriceMatrix& window_prices, double w_intra, double w_inter);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

StabilityProfile stability_profile(const std::vector<ClusterAssignment>& assignments);

/// Seeded k-means++ on row vectors; exposed for the spectral embedding and
/// for tests.
std::vector<int> kmeans(const Tensor& points, int k, std::uint64_t seed, int restarts = 10,
                        int max_iters = 100);

}  // namespace tempcomm
