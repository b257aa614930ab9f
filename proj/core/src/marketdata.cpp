#include "tempcomm/marketdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tempcomm/errors.hpp"

namespace tempcomm {

namespace {

const char* kFeatureNames[FeatureTensor::kFeatureCount] = {
    "log_return_1d", "cum_log_return_1w", "cum_log_return_2w", "cum_log_return_1m",
    "cum_log_return_2m", "rsi_14", "macd_12_26",
};

constexpr int kCumHorizons[4] = {5, 10, 21, 42};
constexpr double kMaxMissingFraction = 0.05;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

}  // namespace

const char* FeatureTensor::feature_name(int d) { return kFeatureNames[d]; }

PriceMatrix PriceMatrix::slice_rows(int start, int len) const {
    PriceMatrix out;
    out.asset_ids = asset_ids;
    const int n = cols();
    out.values = Tensor({len, n});
    for (int t = 0; t < len; ++t) {
        for (int i = 0; i < n; ++i) out.values.at(t, i) = values.at(start + t, i);
        out.dates.push_back(dates[start + t]);
    }
    return out;
}

PriceMatrix load_prices(const std::string& path, std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file: " + path);
    return load_prices(in, warnings);
}

PriceMatrix load_prices(std::istream& in, std::vector<std::string>* warnings) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty price file");
    auto header = split_csv_line(line);
    if (header.size() < 2 || trim(header[0]) != "date")
        throw DataError("price file header must be `date,ASSET1,ASSET2,...`");
    std::vector<std::string> assets;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string id = trim(header[c]);
        if (id.empty()) throw DataError("empty asset name in header column " + std::to_string(c + 1));
        assets.push_back(id);
    }
    const std::size_t n_raw = assets.size();

    std::vector<std::string> dates;
    std::vector<std::vector<double>> grid;  // per row, NaN = missing
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != n_raw + 1)
            throw DataError("row " + std::to_string(row_no) + ": expected " +
                            std::to_string(n_raw + 1) + " columns, got " +
                            std::to_string(cells.size()));
        const std::string date = trim(cells[0]);
        if (date.empty()) throw DataError("row " + std::to_string(row_no) + ": empty date");
        if (!dates.empty() && date <= dates.back())
            throw DataError("row " + std::to_string(row_no) + ": dates not strictly increasing (" +
                            date + " after " + dates.back() + ")");
        std::vector<double> prow(n_raw, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t c = 0; c < n_raw; ++c) {
            const std::string cell = trim(cells[c + 1]);
            if (is_missing_token(cell)) continue;
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw DataError("row " + std::to_string(row_no) + ", column " + assets[c] +
                                ": cannot parse price `" + cell + "`");
            }
            if (used != cell.size())
                throw DataError("row " + std::to_string(row_no) + ", column " + assets[c] +
                                ": cannot parse price `" + cell + "`");
            if (!(v > 0.0))
                throw DataError("row " + std::to_string(row_no) + ", column " + assets[c] +
                                ": non-positive price " + cell);
            prow[c] = v;
        }
        dates.push_back(date);
        grid.push_back(std::move(prow));
    }
    const int t_total = static_cast<int>(grid.size());
    if (t_total == 0) throw DataError("price file has no data rows");

    // Drop assets with too many gaps, forward-fill the rest.
    std::vector<int> keep;
    for (std::size_t c = 0; c < n_raw; ++c) {
        int missing = 0;
        for (int t = 0; t < t_total; ++t)
            if (std::isnan(grid[t][c])) ++missing;
        if (static_cast<double>(missing) / t_total > kMaxMissingFraction) {
            if (warnings)
                warnings->push_back("dropping asset " + assets[c] + ": " + std::to_string(missing) +
                                    "/" + std::to_string(t_total) + " rows missing");
        } else {
            keep.push_back(static_cast<int>(c));
        }
    }
    if (keep.empty()) throw DataError("no assets remain after cleaning");

    PriceMatrix out;
    out.dates = std::move(dates);
    out.values = Tensor({t_total, static_cast<int>(keep.size())});
    for (std::size_t cc = 0; cc < keep.size(); ++cc) {
        const int c = keep[cc];
        out.asset_ids.push_back(assets[c]);
        double last = std::numeric_limits<double>::quiet_NaN();
        for (int t = 0; t < t_total; ++t) {
            double v = grid[t][c];
            if (std::isnan(v))
                v = last;
            else
                last = v;
            out.values.at(t, static_cast<int>(cc)) = v;
        }
        // leading gaps: backfill from the first observation
        if (std::isnan(out.values.at(0, static_cast<int>(cc)))) {
            int first = 0;
            while (first < t_total && std::isnan(out.values.at(first, static_cast<int>(cc)))) ++first;
            for (int t = 0; t < first; ++t)
                out.values.at(t, static_cast<int>(cc)) = out.values.at(first, static_cast<int>(cc));
        }
    }
    return out;
}

void write_prices_csv(const PriceMatrix& prices, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "date";
    for (const auto& a : prices.asset_ids) out << "," << a;
    out << "\n";
    out.precision(17);
    for (int t = 0; t < prices.rows(); ++t) {
        out << prices.dates[t];
        for (int i = 0; i < prices.cols(); ++i) out << "," << prices.values.at(t, i);
        out << "\n";
    }
}

NAVMatrix compute_nav(const PriceMatrix& prices, int t0) {
    const int t_total = prices.rows(), n = prices.cols();
    if (t0 < 0 || t0 >= t_total) throw DataError("compute_nav: base index out of range");
    NAVMatrix nav;
    nav.base_index = t0;
    nav.values = Tensor({t_total, n});
    for (int i = 0; i < n; ++i) {
        const double base = prices.values.at(t0, i);
        if (!(base > 0.0))
            throw DataError("compute_nav: non-positive base price for asset " +
                            prices.asset_ids[i]);
        for (int t = 0; t < t_total; ++t) nav.values.at(t, i) = prices.values.at(t, i) / base;
    }
    return nav;
}

FeatureTensor compute_features(const PriceMatrix& prices) {
    const int t_total = prices.rows(), n = prices.cols();
    if (t_total < kFeatureWarmup + 1)
        throw DataError("compute_features: need at least " + std::to_string(kFeatureWarmup + 1) +
                        " rows (" + std::to_string(kFeatureWarmup) + " warm-up days plus one), got " +
                        std::to_string(t_total));
    const int t_out = t_total - kFeatureWarmup;
    FeatureTensor out;
    out.values = Tensor({n, FeatureTensor::kFeatureCount, t_out});

    std::vector<double> rsi(t_total, 50.0);
    std::vector<double> macd(t_total, 0.0);
    for (int i = 0; i < n; ++i) {
        // RSI, 14-day Wilder smoothing.
        const int period = 14;
        double avg_gain = 0.0, avg_loss = 0.0;
        for (int t = 1; t < t_total; ++t) {
            const double change = prices.values.at(t, i) - prices.values.at(t - 1, i);
            const double gain = change > 0.0 ? change : 0.0;
            const double loss = change < 0.0 ? -change : 0.0;
            if (t < period) {
                avg_gain += gain;
                avg_loss += loss;
                rsi[t] = 50.0;
                continue;
            }
            if (t == period) {
                avg_gain = (avg_gain + gain) / period;
                avg_loss = (avg_loss + loss) / period;
            } else {
                avg_gain = (avg_gain * (period - 1) + gain) / period;
                avg_loss = (avg_loss * (period - 1) + loss) / period;
            }
            if (avg_gain == 0.0 && avg_loss == 0.0)
                rsi[t] = 50.0;
            else if (avg_loss == 0.0)
                rsi[t] = 100.0;
            else
                rsi[t] = 100.0 - 100.0 / (1.0 + avg_gain / avg_loss);
        }

        // MACD on log price so the feature is invariant to per-asset scaling.
        const double a12 = 2.0 / 13.0, a26 = 2.0 / 27.0;
        double ema12 = std::log(prices.values.at(0, i));
        double ema26 = ema12;
        macd[0] = 0.0;
        for (int t = 1; t < t_total; ++t) {
            const double lp = std::log(prices.values.at(t, i));
            ema12 = a12 * lp + (1.0 - a12) * ema12;
            ema26 = a26 * lp + (1.0 - a26) * ema26;
            macd[t] = ema12 - ema26;
        }

        for (int s = 0; s < t_out; ++s) {
            const int t = s + kFeatureWarmup;
            out.values.at(i, 0, s) = std::log(prices.values.at(t, i) / prices.values.at(t - 1, i));
            for (int hz = 0; hz < 4; ++hz) {
                const int lb = kCumHorizons[hz];
                out.values.at(i, 1 + hz, s) =
                    std::log(prices.values.at(t, i) / prices.values.at(t - lb, i));
            }
            out.values.at(i, 5, s) = rsi[t];
            out.values.at(i, 6, s) = macd[t];
        }
    }
    return out;
}

std::vector<int> make_window_starts(int total_len, int window_len, int stride) {
    if (window_len > total_len)
        throw DataError("window length " + std::to_string(window_len) + " exceeds series length " +
                        std::to_string(total_len));
    if (stride < 1) throw ConfigError("stride must be >= 1");
    std::vector<int> starts;
    for (int s = 0; s + window_len <= total_len; s += stride) starts.push_back(s);
    return starts;
}

std::vector<WindowSlice> make_windows(const PriceMatrix& prices, const FeatureTensor& features,
                                      int window_len, int stride) {
    if (window_len < kFeatureWarmup)
        throw ConfigError("window length " + std::to_string(window_len) +
                          " shorter than the long-term kernel " + std::to_string(kFeatureWarmup));
    const int n = features.assets();
    const auto starts = make_window_starts(features.length(), window_len, stride);
    std::vector<WindowSlice> out;
    out.reserve(starts.size());
    for (int s : starts) {
        WindowSlice w;
        w.start = s;
        w.length = window_len;
        w.features.values = Tensor({n, FeatureTensor::kFeatureCount, window_len});
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < FeatureTensor::kFeatureCount; ++d)
                for (int t = 0; t < window_len; ++t)
                    w.features.values.at(i, d, t) = features.values.at(i, d, s + t);
        w.prices = prices.slice_rows(s + kFeatureWarmup, window_len);
        out.push_back(std::move(w));
    }
    return out;
}

FeatureTensor standardize_window(const FeatureTensor& window) {
    const int n = window.assets(), t_len = window.length();
    const int d_count = FeatureTensor::kFeatureCount;
    FeatureTensor out;
    out.values = Tensor({n, d_count, t_len});
    const double count = static_cast<double>(n) * t_len;
    for (int d = 0; d < d_count; ++d) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < t_len; ++t) mean += window.values.at(i, d, t);
        mean /= count;
        double var = 0.0;
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < t_len; ++t) {
                const double dv = window.values.at(i, d, t) - mean;
                var += dv * dv;
            }
        var /= count;
        const double denom = std::sqrt(var) + 1e-8;
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < t_len; ++t)
                out.values.at(i, d, t) = (window.values.at(i, d, t) - mean) / denom;
    }
    return out;
}

}  // namespace tempcomm
