#include "tempcomm/io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tempcomm/errors.hpp"

namespace tempcomm {

std::string fnv1a_hex(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for hashing: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a_hex(bytes.data(), bytes.size());
}

std::string hash_prices(const PriceMatrix& prices) {
    std::ostringstream ss;
    for (const auto& a : prices.asset_ids) ss << a << ';';
    for (const auto& d : prices.dates) ss << d << ';';
    ss.precision(17);
    for (std::size_t i = 0; i < prices.values.numel(); ++i) ss << prices.values[i] << ';';
    const std::string bytes = ss.str();
    return fnv1a_hex(bytes.data(), bytes.size());
}

void write_assignments_csv(const std::string& path,
                           const std::vector<ClusterAssignment>& assignments,
                           const std::vector<std::string>& asset_ids) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "window_start,asset_id,label\n";
    for (const auto& a : assignments)
        for (std::size_t i = 0; i < a.labels.size(); ++i)
            out << a.window_start << "," << asset_ids[i] << "," << a.labels[i] << "\n";
}

std::vector<ClusterAssignment> read_assignments_csv(const std::string& path,
                                                    const std::vector<std::string>& asset_ids) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open assignments file: " + path);
    std::map<std::string, int> asset_index;
    for (std::size_t i = 0; i < asset_ids.size(); ++i)
        asset_index[asset_ids[i]] = static_cast<int>(i);

    std::vector<ClusterAssignment> out;
    std::string line;
    std::getline(in, line);  // header
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string ws, asset, label;
        if (!std::getline(ss, ws, ',') || !std::getline(ss, asset, ',') ||
            !std::getline(ss, label))
            throw DataError("assignments row " + std::to_string(row_no) + ": malformed");
        const int start = std::stoi(ws);
        auto it = asset_index.find(asset);
        if (it == asset_index.end())
            throw DataError("assignments row " + std::to_string(row_no) + ": unknown asset " + asset);
        if (out.empty() || out.back().window_start != start) {
            ClusterAssignment a;
            a.window_start = start;
            a.labels.assign(asset_ids.size(), 0);
            out.push_back(std::move(a));
        }
        out.back().labels[it->second] = std::stoi(label);
    }
    for (auto& a : out) a.k = *std::max_element(a.labels.begin(), a.labels.end()) + 1;
    return out;
}

namespace {
nlohmann::json optional_to_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}
}  // namespace

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "window_start,K_comm,IntraCorr,InterCorr,InterDissim,S\n";
    out.precision(12);
    for (const auto& e : report.windows) {
        out << e.window_start << "," << e.k << "," << e.intra_corr << ",";
        if (e.inter_corr) out << *e.inter_corr;
        out << ",";
        if (e.inter_dissim) out << *e.inter_dissim;
        out << ",";
        if (e.composite) out << *e.composite;
        out << "\n";
    }
}

std::string metrics_json(const MetricsReport& report, const StabilityProfile& stability,
                         const Tensor& scale_weights) {
    nlohmann::json j;
    j["w_intra"] = report.w_intra;
    j["w_inter"] = report.w_inter;
    j["summary"] = {{"IntraCorr", report.mean_intra},
                    {"InterCorr", optional_to_json(report.mean_inter)},
                    {"InterDissim", optional_to_json(report.mean_dissim)},
                    {"S", optional_to_json(report.mean_composite)}};
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& e : report.windows) {
        windows.push_back({{"window_start", e.window_start},
                           {"K_comm", e.k},
                           {"IntraCorr", e.intra_corr},
                           {"InterCorr", optional_to_json(e.inter_corr)},
                           {"InterDissim", optional_to_json(e.inter_dissim)},
                           {"S_intra_nav", e.nav_s_intra},
                           {"S_inter_nav", optional_to_json(e.nav_s_inter)},
                           {"S", optional_to_json(e.composite)}});
    }
    j["windows"] = std::move(windows);
    j["stability"] = {{"counts", stability.counts},
                      {"mean_count", stability.mean_count},
                      {"spike_transitions", stability.spike_transitions}};
    if (scale_weights.numel() == 2)
        j["scale_weights"] = {{"short", scale_weights[0]}, {"long", scale_weights[1]}};
    return j.dump(2);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << text;
}

void write_train_log_jsonl(const std::string& path, const std::vector<EpochRecord>& log) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    for (const auto& r : log) {
        nlohmann::json j = {{"epoch", r.epoch},
                            {"graph_loss", r.graph_loss},
                            {"temporal_loss", r.temporal_loss},
                            {"total", r.total},
                            {"val_score", r.val_score},
                            {"stopped_early", r.stopped_early}};
        out << j.dump() << "\n";
    }
}

std::string manifest_json(const RunManifest& manifest) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(manifest.config_json);
    j["seed"] = manifest.seed;
    j["input_hash"] = manifest.input_hash;
    j["outputs"] = manifest.outputs;
    j["version"] = manifest.version;
    return j.dump(2);
}

}  // namespace tempcomm
