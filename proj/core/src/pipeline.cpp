#include "tempcomm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tempcomm/errors.hpp"
#include "tempcomm/io.hpp"
#include "tempcomm/version.hpp"

namespace tempcomm {

void PipelineConfig::validate() const {
    if (T < 45) throw ConfigError("window length T must be >= 45 (long-term kernel)");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
    if (delta < 0.0) throw ConfigError("delta must be >= 0");
    if (K < 1 || K > 64) throw ConfigError("inducing point count K must lie in [1,64]");
    if (d_latent < 2 || d_latent % 2 != 0) throw ConfigError("d_latent must be even and >= 2");
    if (h < 1) throw ConfigError("h must be positive");
    if (n_h < 1 || h % n_h != 0) throw ConfigError("h must be divisible by n_h");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
    if (r < 1) throw ConfigError("reduction ratio r must be >= 1");
    if (k_range.lo < 2 || k_range.hi < k_range.lo) throw ConfigError("invalid k_range");
    if (w_intra < 0.0 || w_inter < 0.0) throw ConfigError("score weights must be nonnegative");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("train_fraction must lie in (0,1)");
    train.validate();
}

bool PipelineConfig::matches_published_defaults() const {
    return T == 89 && tau == 0.75 && delta == 0.1 && K == 16 && dropout == 0.1 && r == 16 &&
           w_intra == 0.1 && w_inter == 0.9 && train.patience == 2 && train.tol == 1e-4 &&
           k_range.lo == 2 && k_range.hi == 15;
}

namespace {

void apply_json(PipelineConfig& cfg, const nlohmann::json& j) {
    if (j.contains("T")) cfg.T = j.at("T").get<int>();
    if (j.contains("stride")) cfg.stride = j.at("stride").get<int>();
    if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
    if (j.contains("delta")) cfg.delta = j.at("delta").get<double>();
    if (j.contains("K")) cfg.K = j.at("K").get<int>();
    if (j.contains("d_latent")) cfg.d_latent = j.at("d_latent").get<int>();
    if (j.contains("h")) cfg.h = j.at("h").get<int>();
    if (j.contains("n_h")) cfg.n_h = j.at("n_h").get<int>();
    if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
    if (j.contains("r")) cfg.r = j.at("r").get<int>();
    if (j.contains("mode")) cfg.mode = attention_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("k_range")) {
        const auto& kr = j.at("k_range");
        if (!kr.is_array() || kr.size() != 2) throw ConfigError("k_range must be [lo, hi]");
        cfg.k_range.lo = kr[0].get<int>();
        cfg.k_range.hi = kr[1].get<int>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("w_intra")) cfg.w_intra = j.at("w_intra").get<double>();
    if (j.contains("w_inter")) cfg.w_inter = j.at("w_inter").get<double>();
    if (j.contains("train_fraction")) cfg.train_fraction = j.at("train_fraction").get<double>();
    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("lr")) cfg.train.lr = t.at("lr").get<double>();
        if (t.contains("max_epochs")) cfg.train.max_epochs = t.at("max_epochs").get<int>();
        if (t.contains("patience")) cfg.train.patience = t.at("patience").get<int>();
        if (t.contains("tol")) cfg.train.tol = t.at("tol").get<double>();
        if (t.contains("lambda_graph")) cfg.train.lambda_graph = t.at("lambda_graph").get<double>();
        if (t.contains("lambda_temporal"))
            cfg.train.lambda_temporal = t.at("lambda_temporal").get<double>();
        if (t.contains("negatives_per_edge"))
            cfg.train.negatives_per_edge = t.at("negatives_per_edge").get<int>();
    }
}

}  // namespace

PipelineConfig PipelineConfig::from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
    PipelineConfig cfg;
    try {
        apply_json(cfg, j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

std::string PipelineConfig::to_json_string(int indent) const {
    nlohmann::json j;
    j["T"] = T;
    j["stride"] = stride;
    j["tau"] = tau;
    j["delta"] = delta;
    j["K"] = K;
    j["d_latent"] = d_latent;
    j["h"] = h;
    j["n_h"] = n_h;
    j["dropout"] = dropout;
    j["r"] = r;
    j["mode"] = to_string(mode);
    j["k_range"] = {k_range.lo, k_range.hi};
    j["seed"] = seed;
    j["w_intra"] = w_intra;
    j["w_inter"] = w_inter;
    j["train_fraction"] = train_fraction;
    j["train"] = {{"lr", train.lr},
                  {"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"tol", train.tol},
                  {"lambda_graph", train.lambda_graph},
                  {"lambda_temporal", train.lambda_temporal},
                  {"negatives_per_edge", train.negatives_per_edge}};
    return j.dump(indent);
}

std::vector<WindowData> prepare_windows(const PipelineConfig& cfg, const PriceMatrix& prices,
                                        const std::vector<std::string>* sector_codes) {
    const FeatureTensor features = compute_features(prices);
    const auto slices = make_windows(prices, features, cfg.T, cfg.stride);
    std::vector<WindowData> out;
    out.reserve(slices.size());
    for (const auto& s : slices) {
        WindowData w;
        w.start = s.start;
        w.features = s.features;
        w.prices = s.prices;
        const FeatureTensor std_features = standardize_window(s.features);
        w.x_standardized = std_features.values;
        const CorrelationMatrix c = correlation_matrix(std_features);
        WindowGraph g = build_adjacency(c, cfg.tau, sector_codes, cfg.delta);
        const ModularityMatrix b = nav_modularity(s.prices);
        w.graph = edge_features(std::move(g), b);
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

void split_windows(int count, double train_fraction, std::vector<int>& train_idx,
                   std::vector<int>& val_idx) {
    if (count == 1) {
        // a single window trains and validates itself; no disjoint split exists
        train_idx = {0};
        val_idx = {0};
        return;
    }
    int n_train = static_cast<int>(std::floor(count * train_fraction));
    n_train = std::clamp(n_train, 1, count - 1);
    for (int i = 0; i < n_train; ++i) train_idx.push_back(i);
    for (int i = n_train; i < count; ++i) val_idx.push_back(i);
}

MetricsReport evaluate_windows(const std::vector<WindowData>& windows,
                               const std::vector<ClusterAssignment>& assignments,
                               const std::vector<int>& eval_idx, double w_intra, double w_inter) {
    MetricsReport report;
    report.w_intra = w_intra;
    report.w_inter = w_inter;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        MetricsEntry e = clustering_metrics(assignments[i], windows[i].features);
        const NavScore s = nav_composite_score(assignments[i], windows[i].prices, w_intra, w_inter);
        e.nav_s_intra = s.s_intra;
        e.nav_s_inter = s.s_inter;
        e.composite = s.composite;
        report.windows.push_back(std::move(e));
    }
    double intra = 0.0, inter = 0.0, comp = 0.0;
    int n_inter = 0, n_comp = 0, n = 0;
    for (int idx : eval_idx) {
        const auto& e = report.windows[idx];
        intra += e.intra_corr;
        ++n;
        if (e.inter_corr) {
            inter += *e.inter_corr;
            ++n_inter;
        }
        if (e.composite) {
            comp += *e.composite;
            ++n_comp;
        }
    }
    if (n > 0) report.mean_intra = intra / n;
    if (n_inter > 0) {
        report.mean_inter = inter / n_inter;
        report.mean_dissim = 1.0 - *report.mean_inter;
    }
    if (n_comp > 0) report.mean_composite = comp / n_comp;
    return report;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const PriceMatrix& prices,
                            const SectorMap* sectors, const RunOptions& opts) {
    cfg.validate();
    if (prices.cols() < 2) throw DataError("pipeline needs at least 2 assets");

    std::vector<std::string> sector_codes;
    const std::vector<std::string>* sector_ptr = nullptr;
    if (sectors && !sectors->empty()) {
        sector_codes = resolve_sectors(*sectors, prices.asset_ids);
        sector_ptr = &sector_codes;
    }

    std::vector<WindowData> windows = prepare_windows(cfg, prices, sector_ptr);
    std::vector<int> train_idx, val_idx;
    split_windows(static_cast<int>(windows.size()), cfg.train_fraction, train_idx, val_idx);

    ModelConfig mcfg;
    mcfg.n_assets = prices.cols();
    mcfg.window_len = cfg.T;
    mcfg.d_latent = cfg.d_latent;
    mcfg.hidden = cfg.h;
    mcfg.n_heads = cfg.n_h;
    mcfg.inducing = cfg.K;
    mcfg.reduction = cfg.r;
    mcfg.dropout = cfg.dropout;
    mcfg.mode = cfg.mode;
    mcfg.seed = cfg.seed;
    CommunityModel model(mcfg);

    EvalConfig eval_cfg{cfg.k_range.lo, cfg.k_range.hi, cfg.w_intra, cfg.w_inter};
    TrainResult tr = train_model(model, windows, train_idx, val_idx, cfg.train, eval_cfg, cfg.seed);

    PipelineResult result;
    result.train_log = tr.log;
    result.stopped_early = tr.stopped_early;

    for (const auto& w : windows) {
        ad::NoGradGuard guard;
        ModelOutput out = model.forward(w.x_standardized, w.graph, /*train_mode=*/false);
        ClusterAssignment a = spectral_cluster(out.z_final.value(), cfg.k_range.lo, cfg.k_range.hi,
                                               Rng::derive(cfg.seed, 0xc1, w.start));
        a.window_start = w.start;
        result.assignments.push_back(std::move(a));
    }

    result.eval_window_indices = val_idx;
    result.report =
        evaluate_windows(windows, result.assignments, val_idx, cfg.w_intra, cfg.w_inter);
    result.stability = stability_profile(result.assignments);
    result.scale_weights = model.scale_weights();

    result.manifest.config_json = cfg.to_json_string(0);
    result.manifest.seed = cfg.seed;
    result.manifest.input_hash = opts.input_hash.empty() ? hash_prices(prices) : opts.input_hash;
    result.manifest.version = kVersion;

    if (!opts.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(opts.out_dir);
        const std::string a_path = (fs::path(opts.out_dir) / "assignments.csv").string();
        const std::string mc_path = (fs::path(opts.out_dir) / "metrics.csv").string();
        const std::string mj_path = (fs::path(opts.out_dir) / "metrics.json").string();
        const std::string tl_path = (fs::path(opts.out_dir) / "train_log.jsonl").string();
        const std::string ck_path = (fs::path(opts.out_dir) / "checkpoint.json").string();
        const std::string mf_path = (fs::path(opts.out_dir) / "manifest.json").string();
        write_assignments_csv(a_path, result.assignments, prices.asset_ids);
        write_metrics_csv(mc_path, result.report);
        write_text_file(mj_path,
                        metrics_json(result.report, result.stability, result.scale_weights));
        write_train_log_jsonl(tl_path, result.train_log);
        model.params().save_checkpoint(ck_path);
        result.manifest.outputs = {a_path, mc_path, mj_path, tl_path, ck_path};
        if (opts.dump_graphs) {
            const fs::path gdir = fs::path(opts.out_dir) / "graphs";
            fs::create_directories(gdir);
            for (const auto& w : windows) {
                const std::string gp =
                    (gdir / ("window_" + std::to_string(w.start) + ".json")).string();
                dump_graph_json(w.graph, w.start, gp);
                result.manifest.outputs.push_back(gp);
            }
        }
        write_text_file(mf_path, manifest_json(result.manifest));
    }
    return result;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const PriceMatrix& prices,
                                      const SectorMap* sectors,
                                      std::vector<AttentionMode> modes) {
    std::sort(modes.begin(), modes.end());
    modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
    if (modes.size() < 2) throw ConfigError("ablation requires at least 2 modes");

    std::vector<AblationRow> rows;
    for (AttentionMode mode : modes) {
        PipelineConfig c = cfg;
        c.mode = mode;
        PipelineResult r = run_pipeline(c, prices, sectors);
        AblationRow row;
        row.mode = mode;
        row.mean_composite = r.report.mean_composite.value_or(0.0);
        row.mean_intra = r.report.mean_intra;
        row.mean_dissim = r.report.mean_dissim;
        row.delta_composite = rows.empty() ? 0.0 : row.mean_composite - rows[0].mean_composite;
        rows.push_back(row);
    }
    return rows;
}

SweepResult run_window_sweep(const PipelineConfig& cfg, const PriceMatrix& prices,
                             const SectorMap* sectors, const std::vector<int>& t_list) {
    if (t_list.empty()) throw ConfigError("sweep requires at least one window length");
    const int feature_len = prices.rows() - kFeatureWarmup;
    for (int t : t_list) {
        if (t < 45)
            throw ConfigError("window length " + std::to_string(t) +
                              " below the long-term kernel length 45");
        if (t > feature_len)
            throw ConfigError("window length " + std::to_string(t) +
                              " exceeds available feature length " + std::to_string(feature_len));
    }
    SweepResult result;
    for (int t : t_list) {
        PipelineConfig c = cfg;
        c.T = t;
        PipelineResult r = run_pipeline(c, prices, sectors);
        result.rows.push_back({t, r.report.mean_composite.value_or(0.0)});
    }
    double lo = result.rows[0].mean_composite, hi = lo, acc = 0.0;
    for (const auto& row : result.rows) {
        lo = std::min(lo, row.mean_composite);
        hi = std::max(hi, row.mean_composite);
        acc += row.mean_composite;
    }
    const double mean = acc / static_cast<double>(result.rows.size());
    result.relative_range = (hi - lo) / std::max(std::abs(mean), 1e-12);
    return result;
}

GradReport run_gradcheck(AttentionMode mode, int n_assets, int window_len, int d_latent,
                         int n_heads, double dropout) {
    SyntheticSpec spec;
    spec.n_assets = n_assets;
    spec.t_total = kFeatureWarmup + window_len;
    spec.community_sizes = {n_assets / 2, n_assets - n_assets / 2};
    spec.seed = 7;
    const SyntheticData data = generate_synthetic(spec);

    PipelineConfig cfg;
    cfg.T = window_len;
    cfg.d_latent = d_latent;
    cfg.h = d_latent;
    cfg.n_h = n_heads;
    cfg.K = 4;
    cfg.r = 4;
    cfg.dropout = 0.0;  // stochastic op excluded from the deterministic check
    cfg.mode = mode;
    cfg.tau = 0.5;
    cfg.seed = 11;

    auto windows = prepare_windows(cfg, data.prices, nullptr);

    ModelConfig mcfg;
    mcfg.n_assets = n_assets;
    mcfg.window_len = window_len;
    mcfg.d_latent = d_latent;
    mcfg.hidden = d_latent;
    mcfg.n_heads = n_heads;
    mcfg.inducing = 4;
    mcfg.reduction = 4;
    mcfg.dropout = 0.0;
    mcfg.mode = mode;
    mcfg.seed = 11;
    CommunityModel model(mcfg);

    TrainConfig tcfg;
    const WindowData& w = windows.front();
    auto loss_builder = [&]() {
        return window_loss(model, w, tcfg, /*noise_seed=*/99, /*train_mode=*/true);
    };
    GradReport report = grad_check(model.params(), loss_builder);
    if (dropout > 0.0) {
        GradCheckEntry skip;
        skip.name = "fusion.dropout";
        skip.skipped = true;
        skip.note = "stochastic op; checked with dropout disabled";
        report.entries.push_back(std::move(skip));
    }
    return report;
}

}  // namespace tempcomm
