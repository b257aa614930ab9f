#include "tempcomm/graphbuild.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tempcomm/errors.hpp"

namespace tempcomm {

namespace {

/// Two-pass Pearson correlation of two length-T series; 0 when either has
/// zero variance.
double pearson(const double* x, const double* y, int t_len, int stride_x = 1, int stride_y = 1) {
    double mx = 0.0, my = 0.0;
    for (int t = 0; t < t_len; ++t) {
        mx += x[t * stride_x];
        my += y[t * stride_y];
    }
    mx /= t_len;
    my /= t_len;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int t = 0; t < t_len; ++t) {
        const double dx = x[t * stride_x] - mx;
        const double dy = y[t * stride_y] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

void build_neighbor_lists(WindowGraph& g) {
    std::vector<std::vector<int>> adj(g.n);
    for (const auto& [i, j] : g.edges) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    g.neighbors.offsets.assign(g.n + 1, 0);
    g.neighbors.targets.clear();
    for (int i = 0; i < g.n; ++i) {
        std::sort(adj[i].begin(), adj[i].end());
        g.neighbors.offsets[i + 1] = g.neighbors.offsets[i] + static_cast<int>(adj[i].size());
        for (int j : adj[i]) g.neighbors.targets.push_back(j);
    }
}

}  // namespace

double WindowGraph::feature(int i, int j) const {
    if (!has_edge_features) return 0.0;
    const auto key = std::make_pair(std::min(i, j), std::max(i, j));
    for (std::size_t e = 0; e < edges.size(); ++e)
        if (edges[e] == key) return edge_features[e];
    return 0.0;
}

SectorMap load_sectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open sector file: " + path);
    SectorMap out;
    std::string line;
    int row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("sector file row " + std::to_string(row_no) + ": expected `asset,sector`");
        std::string asset = line.substr(0, comma);
        std::string sector = line.substr(comma + 1);
        if (!sector.empty() && sector.back() == '\r') sector.pop_back();
        if (row_no == 1 && asset == "asset") continue;  // optional header
        out[asset] = sector;
    }
    return out;
}

std::vector<std::string> resolve_sectors(const SectorMap& sectors,
                                         const std::vector<std::string>& asset_ids) {
    std::vector<std::string> out;
    out.reserve(asset_ids.size());
    for (const auto& id : asset_ids) {
        auto it = sectors.find(id);
        if (it == sectors.end())
            throw DataError("sector map does not cover asset " + id +
                            " (the map must be total or absent)");
        out.push_back(it->second);
    }
    return out;
}

CorrelationMatrix correlation_matrix(const FeatureTensor& window) {
    const int n = window.assets(), t_len = window.length();
    const int d_count = window.values.dim(1);
    if (n < 2) throw DataError("correlation_matrix: need at least 2 assets");
    if (t_len < 3) throw DataError("correlation_matrix: need at least 3 timesteps");
    CorrelationMatrix c;
    c.values = Tensor({n, n});
    for (int i = 0; i < n; ++i) {
        c.values.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int d = 0; d < d_count; ++d) {
                const double* xi = window.values.data() +
                                   (static_cast<std::size_t>(i) * d_count + d) * t_len;
                const double* xj = window.values.data() +
                                   (static_cast<std::size_t>(j) * d_count + d) * t_len;
                acc += pearson(xi, xj, t_len);
            }
            double v = acc / d_count;
            v = std::clamp(v, -1.0, 1.0);
            c.values.at(i, j) = v;
            c.values.at(j, i) = v;
        }
    }
    return c;
}

WindowGraph build_adjacency(const CorrelationMatrix& c, double tau,
                            const std::vector<std::string>* sector_codes, double delta) {
    const int n = c.size();
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
    if (delta < 0.0) throw ConfigError("delta must be >= 0");
    if (sector_codes && static_cast<int>(sector_codes->size()) != n)
        throw DataError("sector codes not aligned with asset count");

    WindowGraph g;
    g.n = n;
    g.tau = tau;
    g.delta = delta;
    g.adjacency = Tensor({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double a = c.values.at(i, j) >= tau ? 1.0 : 0.0;
            if (sector_codes && (*sector_codes)[i] == (*sector_codes)[j]) a += delta;
            g.adjacency.at(i, j) = a;
        }

    // Isolated nodes (w.r.t. the pre-floor adjacency) each get one edge to
    // their best-correlated neighbor.
    std::vector<int> isolated;
    for (int i = 0; i < n; ++i) {
        bool iso = true;
        for (int j = 0; j < n && iso; ++j)
            if (j != i && g.adjacency.at(i, j) > 0.0) iso = false;
        if (iso) isolated.push_back(i);
    }
    for (int i : isolated) {
        int best = -1;
        double best_corr = -2.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            if (c.values.at(i, j) > best_corr) {
                best_corr = c.values.at(i, j);
                best = j;
            }
        }
        if (best >= 0) {
            g.adjacency.at(i, best) = delta;
            g.adjacency.at(best, i) = delta;
        }
    }

    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (g.adjacency.at(i, j) > 0.0) {
                g.edges.emplace_back(i, j);
                g.edge_weights.push_back(g.adjacency.at(i, j));
            }

    // Static attention weights: thresholded correlations normalized by the
    // global max above threshold.
    g.static_weights = Tensor({n, n});
    double max_corr = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && c.values.at(i, j) > tau) max_corr = std::max(max_corr, c.values.at(i, j));
    if (max_corr > 0.0) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j && c.values.at(i, j) > tau)
                    g.static_weights.at(i, j) = c.values.at(i, j) / max_corr;
    }

    build_neighbor_lists(g);
    return g;
}

ModularityMatrix modularity_from_adjacency(const Tensor& a, std::vector<std::string>* warnings) {
    const int n = a.dim(0);
    ModularityMatrix b;
    b.values = Tensor({n, n});
    b.degrees.assign(n, 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) d += a.at(i, j);
        b.degrees[i] = d;
        total += d;
    }
    const double two_m = total;  // sum_ij A_ij = 2m
    b.total_weight = two_m / 2.0;
    if (std::abs(two_m) < 1e-12) {
        b.degenerate = true;
        if (warnings) warnings->push_back("modularity: degenerate null model (2m ~ 0), B zeroed");
        return b;
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            b.values.at(i, j) = a.at(i, j) - b.degrees[i] * b.degrees[j] / two_m;
    return b;
}

ModularityMatrix nav_modularity(const PriceMatrix& window_prices, std::vector<std::string>* warnings) {
    const int t_len = window_prices.rows(), n = window_prices.cols();
    if (t_len < 3) throw DataError("nav_modularity: window shorter than 3 rows");
    const NAVMatrix nav = compute_nav(window_prices, 0);

    Tensor a({n, n});  // NAV correlations, diagonal zeroed
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double corr = pearson(nav.values.data() + i, nav.values.data() + j, t_len, n, n);
            a.at(i, j) = corr;
            a.at(j, i) = corr;
        }
    return modularity_from_adjacency(a, warnings);
}

WindowGraph edge_features(WindowGraph graph, const ModularityMatrix& b) {
    if (b.values.dim(0) != graph.n) throw ShapeError("edge_features: size mismatch");
    graph.edge_features.clear();
    graph.edge_features.reserve(graph.edges.size());
    for (const auto& [i, j] : graph.edges) graph.edge_features.push_back(b.values.at(i, j));
    graph.neighbor_features.assign(graph.neighbors.targets.size(), 0.0);
    for (int i = 0; i < graph.n; ++i)
        for (int s = graph.neighbors.offsets[i]; s < graph.neighbors.offsets[i + 1]; ++s)
            graph.neighbor_features[s] = b.values.at(i, graph.neighbors.targets[s]);
    graph.has_edge_features = true;
    return graph;
}

void dump_graph_json(const WindowGraph& g, int window_start, const std::string& path) {
    nlohmann::json j;
    j["format"] = "tempcomm-window-graph";
    j["version"] = 1;
    j["window_start"] = window_start;
    j["n"] = g.n;
    j["tau"] = g.tau;
    j["delta"] = g.delta;
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        edges.push_back({{"i", g.edges[e].first},
                         {"j", g.edges[e].second},
                         {"w", g.edge_weights[e]},
                         {"b", g.has_edge_features ? g.edge_features[e] : 0.0}});
    }
    j["edges"] = std::move(edges);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open graph dump for writing: " + path);
    out << j.dump();
}

}  // namespace tempcomm
