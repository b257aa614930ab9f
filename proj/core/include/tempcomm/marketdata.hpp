#pragma once

#include <istream>
#include <string>
#include <vector>

#include "tempcomm/tensor.hpp"

namespace tempcomm {

/// Cleaned positive price grid, rows = dates, columns = assets.
struct PriceMatrix {
    Tensor values;  // {T, N}
    std::vector<std::string> asset_ids;
    std::vector<std::string> dates;

    int rows() const { return values.ndim() ? values.dim(0) : 0; }
    int cols() const { return values.ndim() ? values.dim(1) : 0; }
    /// Rows [start, start+len) as a new PriceMatrix.
    PriceMatrix slice_rows(int start, int len) const;
};

/// Prices normalized by the window-start value; the base row is exactly 1.
struct NAVMatrix {
    Tensor values;  // {T, N}
    int base_index = 0;
};

/// N x D x T block of engineered features. Fixed feature order:
///   0 daily log return
///   1 cumulative log return, 1 week  (5 trading days)
///   2 cumulative log return, 2 weeks (10)
///   3 cumulative log return, 1 month (21)
///   4 cumulative log return, 2 months (42)
///   5 RSI (14-day Wilder smoothing, range [0,100], 50 when flat)
///   6 MACD (EMA12 - EMA26 of log price)
struct FeatureTensor {
    static constexpr int kFeatureCount = 7;
    static const char* feature_name(int d);

    Tensor values;  // {N, 7, T}

    int assets() const { return values.ndim() ? values.dim(0) : 0; }
    int length() const { return values.ndim() ? values.dim(2) : 0; }
};

/// Days of history consumed before the first emitted feature row.
constexpr int kFeatureWarmup = 45;

/// One sliding window: features on the feature time axis plus the aligned
/// price rows (used for NAV evaluation).
struct WindowSlice {
    int start = 0;   // index on the feature time axis
    int length = 0;  // T
    FeatureTensor features;
    PriceMatrix prices;
};

/// Load and clean a CSV of form `date,ASSET1,ASSET2,...` (ISO-8601 dates,
/// positive decimal prices). Assets with more than 5% missing rows are
/// dropped with a warning; remaining gaps are forward-filled (leading gaps
/// backfilled from the first observation).
PriceMatrix load_prices(const std::string& path, std::vector<std::string>* warnings = nullptr);
PriceMatrix load_prices(std::istream& in, std::vector<std::string>* warnings = nullptr);

void write_prices_csv(const PriceMatrix& prices, const std::string& path);

NAVMatrix compute_nav(const PriceMatrix& prices, int t0);

FeatureTensor compute_features(const PriceMatrix& prices);

/// Window start indices 0, stride, 2*stride, ...; count
/// floor((total_len - window_len)/stride) + 1.
std::vector<int> make_window_starts(int total_len, int window_len, int stride);

/// Materialize sliding windows over the feature axis. Price rows are aligned
/// through the warm-up offset. window_len must be at least kFeatureWarmup.
std::vector<WindowSlice> make_windows(const PriceMatrix& prices, const FeatureTensor& features,
                                      int window_len, int stride);

/// Per-feature standardization pooled over all nodes and timesteps:
/// (x - mu_d) / (sigma_d + 1e-8).
FeatureTensor standardize_window(const FeatureTensor& window);

}  // namespace tempcomm
