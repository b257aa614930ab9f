#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/marketdata.hpp"
#include "tempcomm/tensor.hpp"

namespace tempcomm {

/// Symmetric, diagonal-one, clamped to [-1, 1].
struct CorrelationMatrix {
    Tensor values;  // {N, N}
    int size() const { return values.ndim() ? values.dim(0) : 0; }
};

/// asset_id -> sector code. When present it must cover every asset.
using SectorMap = std::map<std::string, std::string>;

SectorMap load_sectors(const std::string& path);

/// Per-window static graph. Adjacency values are in {0, delta, 1, 1+delta};
/// edges hold (i, j) with i < j and weight > 0. `static_weights` carries the
/// max-normalized thresholded correlations used by the Static/Basic
/// attention modes.
struct WindowGraph {
    int n = 0;
    double tau = 0.0;
    double delta = 0.0;
    Tensor adjacency;       // {N, N}
    Tensor static_weights;  // {N, N}
    std::vector<std::pair<int, int>> edges;
    std::vector<double> edge_weights;
    std::vector<double> edge_features;  // B^NAV per edge, empty until attached
    bool has_edge_features = false;

    ad::NeighborLists neighbors;           // CSR over both directions
    std::vector<double> neighbor_features;  // B^NAV per CSR slot

    /// Symmetric access to the per-edge modularity feature.
    double feature(int i, int j) const;
};

/// Modularity matrix B = A - d d^T / (2m) of the zero-diagonal NAV
/// correlation graph; every row sums to zero.
struct ModularityMatrix {
    Tensor values;  // {N, N}
    std::vector<double> degrees;
    double total_weight = 0.0;  // m
    bool degenerate = false;    // |2m| below tolerance, B zeroed
};

/// Mean over the D features of per-feature Pearson correlation between asset
/// pairs, signed. Zero-variance features contribute 0.
CorrelationMatrix correlation_matrix(const FeatureTensor& standardized_window);

/// Threshold + optional sector bonus + isolated-node floor rule.
/// `sector_codes`, when non-null, is aligned with asset indices.
WindowGraph build_adjacency(const CorrelationMatrix& c, double tau,
                            const std::vector<std::string>* sector_codes, double delta);

/// B = A - d d^T / (2m) for a given symmetric zero-diagonal adjacency.
ModularityMatrix modularity_from_adjacency(const Tensor& a,
                                           std::vector<std::string>* warnings = nullptr);

/// NAV correlation modularity of the window's price rows.
ModularityMatrix nav_modularity(const PriceMatrix& window_prices,
                                std::vector<std::string>* warnings = nullptr);

/// Returns the graph with the per-edge scalar feature B^NAV attached.
WindowGraph edge_features(WindowGraph graph, const ModularityMatrix& b);

/// Resolve a sector map against asset ids; throws if partially covering.
std::vector<std::string> resolve_sectors(const SectorMap& sectors,
                                         const std::vector<std::string>& asset_ids);

/// Optional per-window cache: versioned JSON with edge list, weights and
/// edge features.
void dump_graph_json(const WindowGraph& g, int window_start, const std::string& path);

}  // namespace tempcomm
