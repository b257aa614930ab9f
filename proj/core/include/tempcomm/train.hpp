#pragma once

#include <cstdint>
#include <vector>

#include "tempcomm/cluster.hpp"
#include "tempcomm/graphbuild.hpp"
#include "tempcomm/marketdata.hpp"
#include "tempcomm/model.hpp"

namespace tempcomm {

struct TrainConfig {
    double lr = 1e-3;
    int max_epochs = 200;
    int patience = 2;
    double tol = 1e-4;
    double lambda_graph = 1.0;
    double lambda_temporal = 1.0;
    int negatives_per_edge = 1;

    void validate() const;
};

/// Loss components; total == lambda_graph*graph + lambda_temporal*temporal
/// exactly (one fused add).
struct LossBreakdown {
    double graph_loss = 0.0;
    double temporal_loss = 0.0;
    double total = 0.0;
    double lambda_graph = 1.0;
    double lambda_temporal = 1.0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double graph_loss = 0.0;
    double temporal_loss = 0.0;
    double total = 0.0;
    double val_score = 0.0;
    bool stopped_early = false;
};

/// Plateau rule: stop after `patience` consecutive epochs with
/// |S_t - S_{t-1}| < tol. Pure function of the score sequence.
class EarlyStopper {
public:
    EarlyStopper(int patience, double tol) : patience_(patience), tol_(tol) {}
    /// Feed the epoch score; returns true when training should stop now.
    bool update(double score);
    int strikes() const { return strikes_; }

private:
    int patience_;
    double tol_;
    int strikes_ = 0;
    bool has_prev_ = false;
    double prev_ = 0.0;
};

/// Everything one window contributes to training and evaluation.
struct WindowData {
    int start = 0;  // feature-axis index
    Tensor x_standardized;  // {N, D, T}
    WindowGraph graph;
    PriceMatrix prices;      // aligned window rows
    FeatureTensor features;  // raw window features (metric evaluation)
};

struct EvalConfig {
    int k_min = 2;
    int k_max = 15;
    double w_intra = 0.1;
    double w_inter = 0.9;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    double best_score = 0.0;
    int best_epoch = 0;
    bool stopped_early = false;
};

/// Scalar training loss for one window (graph BCE on the fused embedding
/// plus the two-scale reconstruction error). Exposed for gradient checks.
ad::Var window_loss(CommunityModel& model, const WindowData& w, const TrainConfig& cfg,
                    std::uint64_t noise_seed, bool train_mode, LossBreakdown* breakdown = nullptr);

/// Uniform non-edge pairs (i<j), seeded; fewer when the graph is near-complete.
std::vector<std::pair<int, int>> sample_negative_pairs(const WindowGraph& g, int count, Rng& rng);

/// Per-window Adam steps over the training range; per-epoch validation via
/// spectral clustering + NAV composite score on the validation windows;
/// plateau early stopping; restores the best-scoring parameters.
TrainResult train_model(CommunityModel& model, const std::vector<WindowData>& windows,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                        const TrainConfig& cfg, const EvalConfig& eval_cfg, std::uint64_t seed);

/// Validation score: mean NAV composite over windows where it is defined.
double validation_score(CommunityModel& model, const std::vector<WindowData>& windows,
                        const std::vector<int>& val_idx, const EvalConfig& eval_cfg,
                        std::uint64_t seed);

}  // namespace tempcomm
