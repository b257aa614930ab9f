#include "tempcomm/cluster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

namespace {

double pearson_abs_safe(const double* x, const double* y, int t_len, int sx, int sy) {
    double mx = 0.0, my = 0.0;
    for (int t = 0; t < t_len; ++t) {
        mx += x[t * sx];
        my += y[t * sy];
    }
    mx /= t_len;
    my /= t_len;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int t = 0; t < t_len; ++t) {
        const double dx = x[t * sx] - mx;
        const double dy = y[t * sy] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// Relabel so cluster ids appear in order of first occurrence; guarantees
/// every id in [0, k) is used.
void canonicalize(std::vector<int>& labels, int& k) {
    std::vector<int> remap(static_cast<std::size_t>(k), -1);
    int next = 0;
    for (int& l : labels) {
        if (remap[l] < 0) remap[l] = next++;
        l = remap[l];
    }
    k = next;
}

double kmeans_inertia(const Tensor& pts, const std::vector<int>& labels,
                      const std::vector<std::vector<double>>& centers) {
    const int n = pts.dim(0), d = pts.dim(1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& c = centers[labels[i]];
        for (int j = 0; j < d; ++j) {
            const double dv = pts.at(i, j) - c[j];
            acc += dv * dv;
        }
    }
    return acc;
}

}  // namespace

std::vector<int> kmeans(const Tensor& points, int k, std::uint64_t seed, int restarts,
                        int max_iters) {
    const int n = points.dim(0), d = points.dim(1);
    if (k < 1 || k > n) throw DataError("kmeans: k out of range");
    std::vector<int> best_labels(n, 0);
    double best_inertia = std::numeric_limits<double>::infinity();

    for (int run = 0; run < restarts; ++run) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(run)));
        // k-means++ seeding
        std::vector<std::vector<double>> centers;
        centers.reserve(k);
        {
            const int first = rng.uniform_int(n);
            centers.push_back(std::vector<double>(points.data() + static_cast<std::size_t>(first) * d,
                                                  points.data() + static_cast<std::size_t>(first + 1) * d));
            std::vector<double> dist2(n);
            while (static_cast<int>(centers.size()) < k) {
                double total = 0.0;
                for (int i = 0; i < n; ++i) {
                    double best = std::numeric_limits<double>::infinity();
                    for (const auto& c : centers) {
                        double acc = 0.0;
                        for (int j = 0; j < d; ++j) {
                            const double dv = points.at(i, j) - c[j];
                            acc += dv * dv;
                        }
                        best = std::min(best, acc);
                    }
                    dist2[i] = best;
                    total += best;
                }
                int pick = 0;
                if (total > 0.0) {
                    double r = rng.uniform() * total;
                    for (int i = 0; i < n; ++i) {
                        r -= dist2[i];
                        if (r <= 0.0) {
                            pick = i;
                            break;
                        }
                        pick = i;
                    }
                } else {
                    pick = rng.uniform_int(n);
                }
                centers.push_back(
                    std::vector<double>(points.data() + static_cast<std::size_t>(pick) * d,
                                        points.data() + static_cast<std::size_t>(pick + 1) * d));
            }
        }

        std::vector<int> labels(n, 0);
        for (int iter = 0; iter < max_iters; ++iter) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                int bl = 0;
                for (int c = 0; c < k; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dv = points.at(i, j) - centers[c][j];
                        acc += dv * dv;
                    }
                    if (acc < best) {
                        best = acc;
                        bl = c;
                    }
                }
                if (labels[i] != bl) {
                    labels[i] = bl;
                    changed = true;
                }
            }
            // recompute centers
            std::vector<int> sizes(k, 0);
            for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
            for (int i = 0; i < n; ++i) {
                ++sizes[labels[i]];
                for (int j = 0; j < d; ++j) centers[labels[i]][j] += points.at(i, j);
            }
            for (int c = 0; c < k; ++c)
                if (sizes[c] > 0)
                    for (int j = 0; j < d; ++j) centers[c][j] /= sizes[c];
            // re-seed empty clusters with the point farthest from its centroid,
            // taken from a cluster that can spare it
            for (int c = 0; c < k; ++c) {
                if (sizes[c] != 0) continue;
                int far = -1;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    if (sizes[labels[i]] < 2) continue;
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dv = points.at(i, j) - centers[labels[i]][j];
                        acc += dv * dv;
                    }
                    if (acc > far_d) {
                        far_d = acc;
                        far = i;
                    }
                }
                if (far < 0) continue;  // nothing to spare; leave empty for canonicalize
                --sizes[labels[far]];
                labels[far] = c;
                sizes[c] = 1;
                for (int j = 0; j < d; ++j) centers[c][j] = points.at(far, j);
                changed = true;
            }
            if (!changed) break;
        }
        const double inertia = kmeans_inertia(points, labels, centers);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    return best_labels;
}

ClusterAssignment spectral_cluster(const Tensor& embeddings, int k_min, int k_max,
                                   std::uint64_t seed, bool* degenerate) {
    if (embeddings.ndim() != 2) throw DataError("spectral_cluster: rank-2 embeddings required");
    const int n = embeddings.dim(0), d = embeddings.dim(1);
    if (k_min < 2) throw ConfigError("spectral_cluster: k_min must be >= 2");
    if (n < k_min) throw DataError("spectral_cluster: fewer points than k_min");
    if (degenerate) *degenerate = false;

    // Pairwise squared distances and the median-heuristic bandwidth.
    std::vector<double> d2(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> offdiag;
    offdiag.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    double max_d2 = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const double dv = embeddings.at(i, c) - embeddings.at(j, c);
                acc += dv * dv;
            }
            d2[static_cast<std::size_t>(i) * n + j] = acc;
            d2[static_cast<std::size_t>(j) * n + i] = acc;
            offdiag.push_back(acc);
            max_d2 = std::max(max_d2, acc);
        }

    ClusterAssignment out;
    if (max_d2 < 1e-24) {  // all embeddings identical
        if (degenerate) *degenerate = true;
        out.k = 1;
        out.labels.assign(n, 0);
        return out;
    }

    std::nth_element(offdiag.begin(), offdiag.begin() + offdiag.size() / 2, offdiag.end());
    double sigma2 = offdiag[offdiag.size() / 2];
    if (sigma2 <= 0.0) sigma2 = max_d2 / 2.0;

    Eigen::MatrixXd w(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            w(i, j) = i == j ? 0.0 : std::exp(-d2[static_cast<std::size_t>(i) * n + j] / sigma2);

    Eigen::VectorXd deg = w.rowwise().sum();
    Eigen::VectorXd dinv_sqrt(n);
    for (int i = 0; i < n; ++i) dinv_sqrt(i) = 1.0 / std::sqrt(std::max(deg(i), 1e-12));
    Eigen::MatrixXd lsym = Eigen::MatrixXd::Identity(n, n) -
                           dinv_sqrt.asDiagonal() * w * dinv_sqrt.asDiagonal();
    // enforce exact symmetry before the eigensolver
    lsym = 0.5 * (lsym + lsym.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lsym);
    const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
    const Eigen::MatrixXd& evecs = es.eigenvectors();

    const int hi = std::min(k_max, n - 1);
    int best_k = k_min;
    double best_gap = -1.0;
    for (int k = k_min; k <= hi; ++k) {
        const double gap = evals(k) - evals(k - 1);
        if (gap > best_gap + 1e-15) {  // ties resolve to the smaller k
            best_gap = gap;
            best_k = k;
        }
    }

    Tensor u({n, best_k});
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int c = 0; c < best_k; ++c) norm += evecs(i, c) * evecs(i, c);
        norm = std::sqrt(norm);
        for (int c = 0; c < best_k; ++c)
            u.at(i, c) = norm > 1e-12 ? evecs(i, c) / norm : evecs(i, c);
    }

    out.k = best_k;
    out.labels = kmeans(u, best_k, seed);
    canonicalize(out.labels, out.k);
    return out;
}

double multi_feature_rho(const Tensor& xi, const Tensor& xj) {
    if (xi.ndim() != 2 || !xi.same_shape(xj)) throw DataError("multi_feature_rho: {T,D} blocks required");
    const int t_len = xi.dim(0), d_count = xi.dim(1);
    if (t_len < 3) throw DataError("multi_feature_rho: need at least 3 timesteps");
    double acc = 0.0;
    for (int d = 0; d < d_count; ++d)
        acc += std::abs(pearson_abs_safe(xi.data() + d, xj.data() + d, t_len, d_count, d_count));
    return acc / d_count;
}

namespace {

/// rho for all pairs from an {N, D, T} feature tensor (contiguous per-series).
Tensor pairwise_rho(const FeatureTensor& f, bool absolute) {
    const int n = f.assets(), t_len = f.length();
    const int d_count = f.values.dim(1);
    Tensor rho({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int d = 0; d < d_count; ++d) {
                const double* xi =
                    f.values.data() + (static_cast<std::size_t>(i) * d_count + d) * t_len;
                const double* xj =
                    f.values.data() + (static_cast<std::size_t>(j) * d_count + d) * t_len;
                const double c = pearson_abs_safe(xi, xj, t_len, 1, 1);
                acc += absolute ? std::abs(c) : c;
            }
            rho.at(i, j) = acc / d_count;
            rho.at(j, i) = rho.at(i, j);
        }
    return rho;
}

struct GroupedPairs {
    double intra_mean = 0.0;   // mean over clusters of mean pairwise value
    bool intra_defined = false;
    double inter_mean = 0.0;   // mean over cluster pairs of mean cross value
    bool inter_defined = false;
};

GroupedPairs grouped_pair_means(const std::vector<int>& labels, int k, const Tensor& rho) {
    const int n = static_cast<int>(labels.size());
    std::vector<std::vector<int>> members(k);
    for (int i = 0; i < n; ++i) members[labels[i]].push_back(i);

    GroupedPairs out;
    double intra_acc = 0.0;
    int intra_clusters = 0;
    for (int c = 0; c < k; ++c) {
        const auto& m = members[c];
        if (m.size() < 2) continue;  // singletons contribute no intra terms
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t a = 0; a < m.size(); ++a)
            for (std::size_t b = a + 1; b < m.size(); ++b) {
                acc += rho.at(m[a], m[b]);
                ++cnt;
            }
        intra_acc += acc / cnt;
        ++intra_clusters;
    }
    if (intra_clusters > 0) {
        out.intra_mean = intra_acc / intra_clusters;
        out.intra_defined = true;
    }

    if (k >= 2) {
        double inter_acc = 0.0;
        int pair_cnt = 0;
        for (int c1 = 0; c1 < k; ++c1)
            for (int c2 = c1 + 1; c2 < k; ++c2) {
                double acc = 0.0;
                int cnt = 0;
                for (int a : members[c1])
                    for (int b : members[c2]) {
                        acc += rho.at(a, b);
                        ++cnt;
                    }
                if (cnt > 0) {
                    inter_acc += acc / cnt;
                    ++pair_cnt;
                }
            }
        if (pair_cnt > 0) {
            out.inter_mean = inter_acc / pair_cnt;
            out.inter_defined = true;
        }
    }
    return out;
}

}  // namespace

MetricsEntry clustering_metrics(const ClusterAssignment& assignment,
                                const FeatureTensor& window_features) {
    if (static_cast<int>(assignment.labels.size()) != window_features.assets())
        throw DataError("clustering_metrics: label/asset count mismatch");
    MetricsEntry e;
    e.window_start = assignment.window_start;
    e.k = assignment.k;
    const Tensor rho = pairwise_rho(window_features, /*absolute=*/true);
    const GroupedPairs g = grouped_pair_means(assignment.labels, assignment.k, rho);
    e.intra_corr = g.intra_defined ? g.intra_mean : 0.0;
    if (g.inter_defined) {
        e.inter_corr = g.inter_mean;
        e.inter_dissim = 1.0 - g.inter_mean;
    }
    return e;
}

NavScore nav_composite_score(const ClusterAssignment& assignment,
                             const PriceMatrix& window_prices, double w_intra, double w_inter) {
    const int n = window_prices.cols();
    if (static_cast<int>(assignment.labels.size()) != n)
        throw DataError("nav_composite_score: label/asset count mismatch");
    const NAVMatrix nav = compute_nav(window_prices, 0);
    const int t_len = window_prices.rows();
    Tensor rho({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double c =
                pearson_abs_safe(nav.values.data() + i, nav.values.data() + j, t_len, n, n);
            rho.at(i, j) = c;  // signed
            rho.at(j, i) = c;
        }
    const GroupedPairs g = grouped_pair_means(assignment.labels, assignment.k, rho);
    NavScore s;
    s.s_intra = g.intra_defined ? g.intra_mean : 0.0;
    if (g.inter_defined) {
        s.s_inter = 1.0 - g.inter_mean;
        s.composite = w_intra * s.s_intra + w_inter * *s.s_inter;
    }
    return s;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DataError("adjusted_rand_index: length mismatch");
    const int n = static_cast<int>(a.size());
    if (n == 0) throw DataError("adjusted_rand_index: empty labelings");
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<std::vector<long long>> cont(ka, std::vector<long long>(kb, 0));
    for (int i = 0; i < n; ++i) ++cont[a[i]][b[i]];

    auto comb2 = [](long long x) { return x * (x - 1) / 2; };
    long long sum_ij = 0;
    std::vector<long long> arow(ka, 0), bcol(kb, 0);
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) {
            sum_ij += comb2(cont[i][j]);
            arow[i] += cont[i][j];
            bcol[j] += cont[i][j];
        }
    long long sum_a = 0, sum_b = 0;
    for (int i = 0; i < ka; ++i) sum_a += comb2(arow[i]);
    for (int j = 0; j < kb; ++j) sum_b += comb2(bcol[j]);
    const double total = static_cast<double>(comb2(n));
    const double expected = static_cast<double>(sum_a) * static_cast<double>(sum_b) / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    const double denom = max_index - expected;
    if (std::abs(denom) < 1e-15) return sum_ij == sum_a && sum_a == sum_b ? 1.0 : 0.0;
    return (static_cast<double>(sum_ij) - expected) / denom;
}

StabilityProfile stability_profile(const std::vector<ClusterAssignment>& assignments) {
    if (assignments.empty()) throw DataError("stability_profile: no windows");
    StabilityProfile p;
    double acc = 0.0;
    for (const auto& a : assignments) {
        p.counts.push_back(a.k);
        acc += a.k;
    }
    p.mean_count = acc / static_cast<double>(p.counts.size());
    for (std::size_t t = 0; t + 1 < p.counts.size(); ++t)
        if (std::abs(p.counts[t + 1] - p.counts[t]) >= 2)
            p.spike_transitions.push_back(static_cast<int>(t));
    return p;
}

}  // namespace tempcomm
