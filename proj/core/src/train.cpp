#include "tempcomm/train.hpp"

#include <algorithm>
#include <cmath>

#include "tempcomm/errors.hpp"
#include "tempcomm/optim.hpp"

namespace tempcomm {

using ad::Var;

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (tol <= 0.0) throw ConfigError("tolerance must be positive");
    if (negatives_per_edge < 1) throw ConfigError("negatives_per_edge must be >= 1");
}

bool EarlyStopper::update(double score) {
    if (has_prev_ && std::abs(score - prev_) < tol_)
        ++strikes_;
    else
        strikes_ = 0;
    has_prev_ = true;
    prev_ = score;
    return strikes_ >= patience_;
}

std::vector<std::pair<int, int>> sample_negative_pairs(const WindowGraph& g, int count, Rng& rng) {
    const int n = g.n;
    const long long all_pairs = static_cast<long long>(n) * (n - 1) / 2;
    const long long non_edges = all_pairs - static_cast<long long>(g.edges.size());
    std::vector<std::pair<int, int>> out;
    if (non_edges <= 0 || count <= 0) return out;

    std::vector<bool> is_edge(static_cast<std::size_t>(n) * n, false);
    for (const auto& [i, j] : g.edges) {
        is_edge[static_cast<std::size_t>(i) * n + j] = true;
        is_edge[static_cast<std::size_t>(j) * n + i] = true;
    }
    out.reserve(count);
    while (static_cast<int>(out.size()) < count) {
        const int i = rng.uniform_int(n);
        const int j = rng.uniform_int(n);
        if (i == j) continue;
        const int a = std::min(i, j), b = std::max(i, j);
        if (is_edge[static_cast<std::size_t>(a) * n + b]) continue;
        out.emplace_back(a, b);
    }
    return out;
}

Var window_loss(CommunityModel& model, const WindowData& w, const TrainConfig& cfg,
                std::uint64_t noise_seed, bool train_mode, LossBreakdown* breakdown) {
    Rng dropout_rng(Rng::derive(noise_seed, 0xd0));
    ModelOutput out = model.forward(w.x_standardized, w.graph, train_mode, &dropout_rng);

    Rng neg_rng(Rng::derive(noise_seed, 0x9e));
    const int neg_count = cfg.negatives_per_edge * static_cast<int>(w.graph.edges.size());
    const auto negatives = sample_negative_pairs(w.graph, neg_count, neg_rng);
    Var graph_loss = ad::graph_bce_loss(out.z_final, w.graph.edges, negatives);

    Var temporal_loss = ad::scale(ad::add(ad::mse_loss(out.scales.xhat_short, w.x_standardized),
                                          ad::mse_loss(out.scales.xhat_long, w.x_standardized)),
                                  0.5);
    Var total = ad::add(ad::scale(graph_loss, cfg.lambda_graph),
                        ad::scale(temporal_loss, cfg.lambda_temporal));
    if (breakdown) {
        breakdown->graph_loss = graph_loss.value()[0];
        breakdown->temporal_loss = temporal_loss.value()[0];
        breakdown->total = total.value()[0];
        breakdown->lambda_graph = cfg.lambda_graph;
        breakdown->lambda_temporal = cfg.lambda_temporal;
    }
    return total;
}

double validation_score(CommunityModel& model, const std::vector<WindowData>& windows,
                        const std::vector<int>& val_idx, const EvalConfig& eval_cfg,
                        std::uint64_t seed) {
    double acc = 0.0;
    int defined = 0;
    for (int idx : val_idx) {
        const WindowData& w = windows[idx];
        ad::NoGradGuard guard;
        ModelOutput out = model.forward(w.x_standardized, w.graph, /*train_mode=*/false);
        ClusterAssignment a = spectral_cluster(out.z_final.value(), eval_cfg.k_min, eval_cfg.k_max,
                                               Rng::derive(seed, 0xc1, w.start));
        a.window_start = w.start;
        const NavScore s = nav_composite_score(a, w.prices, eval_cfg.w_intra, eval_cfg.w_inter);
        if (s.composite) {
            acc += *s.composite;
            ++defined;
        }
    }
    return defined > 0 ? acc / defined : 0.0;
}

TrainResult train_model(CommunityModel& model, const std::vector<WindowData>& windows,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                        const TrainConfig& cfg, const EvalConfig& eval_cfg, std::uint64_t seed) {
    cfg.validate();
    if (train_idx.empty()) throw DataError("training requires at least one window");

    TrainResult result;
    AdamState adam;
    adam.init(model.params());
    EarlyStopper stopper(cfg.patience, cfg.tol);
    std::vector<Tensor> best_params = model.params().snapshot();
    result.best_score = -std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double graph_acc = 0.0, temporal_acc = 0.0, total_acc = 0.0;
        for (int idx : train_idx) {
            const WindowData& w = windows[idx];
            LossBreakdown lb;
            model.params().zero_grad();
            Var loss = window_loss(model, w, cfg,
                                   Rng::derive(seed, static_cast<std::uint64_t>(epoch), w.start),
                                   /*train_mode=*/true, &lb);
            if (!std::isfinite(lb.total))
                throw CheckError("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", window " + std::to_string(w.start));
            ad::backward(loss);
            adam_step(model.params(), adam, cfg.lr);
            graph_acc += lb.graph_loss;
            temporal_acc += lb.temporal_loss;
            total_acc += lb.total;
        }
        const double inv = 1.0 / static_cast<double>(train_idx.size());

        const double score = validation_score(model, windows, val_idx, eval_cfg, seed);
        const bool stop = stopper.update(score);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.graph_loss = graph_acc * inv;
        rec.temporal_loss = temporal_acc * inv;
        rec.total = total_acc * inv;
        rec.val_score = score;
        rec.stopped_early = stop;
        result.log.push_back(rec);

        if (score > result.best_score) {
            result.best_score = score;
            result.best_epoch = epoch;
            best_params = model.params().snapshot();
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    model.params().restore(best_params);
    return result;
}

}  // namespace tempcomm
