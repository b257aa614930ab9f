#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tempcomm/cluster.hpp"
#include "tempcomm/gradcheck.hpp"
#include "tempcomm/graph_encoder.hpp"
#include "tempcomm/synthetic.hpp"
#include "tempcomm/train.hpp"

namespace tempcomm {

struct KRange {
    int lo = 2;
    int hi = 15;
};

/// End-to-end run configuration. JSON keys mirror the field names exactly.
struct PipelineConfig {
    int T = 89;
    int stride = 1;
    double tau = 0.75;
    double delta = 0.1;
    int K = 16;  // inducing points
    int d_latent = 32;
    int h = 32;
    int n_h = 4;
    double dropout = 0.1;
    int r = 16;
    AttentionMode mode = AttentionMode::Full;
    KRange k_range;
    TrainConfig train;
    std::uint64_t seed = 42;
    double w_intra = 0.1;
    double w_inter = 0.9;
    double train_fraction = 0.7;

    void validate() const;
    /// True when every paper-sourced default is untouched.
    bool matches_published_defaults() const;

    static PipelineConfig from_json_string(const std::string& text);
    static PipelineConfig from_json_file(const std::string& path);
    std::string to_json_string(int indent = 2) const;
};

struct RunManifest {
    std::string config_json;
    std::uint64_t seed = 0;
    std::string input_hash;
    std::vector<std::string> outputs;
    std::string version;
};

struct PipelineResult {
    std::vector<ClusterAssignment> assignments;  // every window
    MetricsReport report;                        // per window; summary over eval windows
    std::vector<EpochRecord> train_log;
    bool stopped_early = false;
    StabilityProfile stability;
    Tensor scale_weights;  // {2}
    std::vector<int> eval_window_indices;
    RunManifest manifest;
};

struct RunOptions {
    std::string out_dir;       // empty: nothing written
    bool dump_graphs = false;  // per-window graph JSON cache
    std::string input_hash;    // recorded in the manifest
};

/// Assemble per-window data (standardize, correlation graph, NAV modularity).
std::vector<WindowData> prepare_windows(const PipelineConfig& cfg, const PriceMatrix& prices,
                                        const std::vector<std::string>* sector_codes);

PipelineResult run_pipeline(const PipelineConfig& cfg, const PriceMatrix& prices,
                            const SectorMap* sectors = nullptr, const RunOptions& opts = {});

struct AblationRow {
    AttentionMode mode;
    double mean_composite = 0.0;
    double mean_intra = 0.0;
    std::optional<double> mean_dissim;
    double delta_composite = 0.0;  // vs the first row
};

/// Runs the pipeline once per mode (canonical order, shared seed and data).
std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const PriceMatrix& prices,
                                      const SectorMap* sectors,
                                      std::vector<AttentionMode> modes);

struct SweepRow {
    int T = 0;
    double mean_composite = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    double relative_range = 0.0;  // (max - min) / mean
};

/// Runs the pipeline once per window length; lengths are validated before
/// any run starts.
SweepResult run_window_sweep(const PipelineConfig& cfg, const PriceMatrix& prices,
                             const SectorMap* sectors, const std::vector<int>& t_list);

/// Finite-difference check of the composed model at toy dimensions.
/// A positive dropout is reported as a skipped "stochastic op" entry and the
/// check runs with dropout disabled.
GradReport run_gradcheck(AttentionMode mode = AttentionMode::Full, int n_assets = 6,
                         int window_len = 89, int d_latent = 8, int n_heads = 2,
                         double dropout = 0.0);

}  // namespace tempcomm
