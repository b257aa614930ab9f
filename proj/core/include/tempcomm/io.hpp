#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tempcomm/pipeline.hpp"

namespace tempcomm {

/// FNV-1a 64-bit, hex string.
std::string fnv1a_hex(const void* data, std::size_t len);
std::string hash_file(const std::string& path);
std::string hash_prices(const PriceMatrix& prices);

void write_assignments_csv(const std::string& path,
                           const std::vector<ClusterAssignment>& assignments,
                           const std::vector<std::string>& asset_ids);

void write_metrics_csv(const std::string& path, const MetricsReport& report);
std::string metrics_json(const MetricsReport& report, const StabilityProfile& stability,
                         const Tensor& scale_weights);
void write_text_file(const std::string& path, const std::string& text);

void write_train_log_jsonl(const std::string& path, const std::vector<EpochRecord>& log);

std::string manifest_json(const RunManifest& manifest);

/// Read an assignments CSV (window_start, asset_id, label) back, grouped per
/// window in file order. Asset ids must match the given universe.
std::vector<ClusterAssignment> read_assignments_csv(const std::string& path,
                                                    const std::vector<std::string>& asset_ids);

}  // namespace tempcomm
