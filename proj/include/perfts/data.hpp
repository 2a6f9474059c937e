#pragma once

// Dataset ingestion, scaling, windowing, chronological splits and the
// performative feedback-loop generator.
//
// Indexing is 0-based everywhere. A window anchored at t has lookback rows
// t-L+1..t, horizon t+1..t+H, and for performative feature d a delayed
// window ending at t+tau_d.

#include "perfts/error.hpp"
#include "perfts/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace perfts::data {

struct Dataset {
    std::vector<std::string> time_index;
    std::string target_name = "y";
    Vector target;                        // length T
    Matrix features;                      // T x D, performative columns first
    std::vector<std::string> feature_names;
    std::vector<bool> performative_mask;  // length D
    std::map<std::string, std::string> metadata;

    std::size_t length() const { return static_cast<std::size_t>(target.size()); }
    std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }
    std::size_t num_performative() const {
        return static_cast<std::size_t>(std::count(performative_mask.begin(), performative_mask.end(), true));
    }

    // Rows [0, n). The result cannot read anything at or beyond n.
    Dataset prefix(std::size_t n) const {
        if (n > length()) fail(ErrorKind::invariant, "prefix beyond dataset end");
        Dataset out;
        out.time_index.assign(time_index.begin(), time_index.begin() + static_cast<std::ptrdiff_t>(n));
        out.target_name = target_name;
        out.target = target.head(static_cast<Eigen::Index>(n));
        out.features = features.topRows(static_cast<Eigen::Index>(n));
        out.feature_names = feature_names;
        out.performative_mask = performative_mask;
        out.metadata = metadata;
        return out;
    }
};

struct WindowSample {
    std::size_t t = 0;
    Matrix x_look;                // L x D
    Vector y_look;                // L
    Vector y_hor;                 // H, empty for forecast-only samples
    std::optional<Matrix> x_dr;   // L x P ground-truth delayed windows
};

// ---------------------------------------------------------------------------
// Dataset config

struct DatasetConfig {
    std::string time_column;  // empty: first CSV column
    std::string target;
    std::vector<std::string> performative;
    std::vector<std::string> non_performative;
    std::vector<std::string> ignored;
    int lookback = 16;
    int horizon = 8;
    double train_ratio = 0.6;
    double val_ratio = 0.2;
};

inline void check_known_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                             const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; }))
            fail(ErrorKind::usage, "unknown key '" + key + "' in " + where);
    }
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"time_column", "target", "performative", "non_performative", "ignored", "L", "H",
                         "train_ratio", "val_ratio"},
                     "dataset config");
    DatasetConfig cfg;
    try {
        cfg.time_column = j.value("time_column", std::string{});
        cfg.target = j.at("target").get<std::string>();
        cfg.performative = j.value("performative", std::vector<std::string>{});
        cfg.non_performative = j.value("non_performative", std::vector<std::string>{});
        cfg.ignored = j.value("ignored", std::vector<std::string>{});
        cfg.lookback = j.value("L", cfg.lookback);
        cfg.horizon = j.value("H", cfg.horizon);
        cfg.train_ratio = j.value("train_ratio", cfg.train_ratio);
        cfg.val_ratio = j.value("val_ratio", cfg.val_ratio);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::usage, std::string("dataset config: ") + e.what());
    }
    if (cfg.lookback < 1 || cfg.horizon < 1) fail(ErrorKind::usage, "dataset config: L and H must be >= 1");
    if (cfg.train_ratio <= 0 || cfg.val_ratio < 0 || cfg.train_ratio + cfg.val_ratio >= 1)
        fail(ErrorKind::usage, "dataset config: split ratios must satisfy 0 < train, 0 <= val, train + val < 1");
    return cfg;
}

inline nlohmann::json dataset_config_to_json(const DatasetConfig& cfg) {
    nlohmann::json j;
    if (!cfg.time_column.empty()) j["time_column"] = cfg.time_column;
    j["target"] = cfg.target;
    j["performative"] = cfg.performative;
    j["non_performative"] = cfg.non_performative;
    j["ignored"] = cfg.ignored;
    j["L"] = cfg.lookback;
    j["H"] = cfg.horizon;
    j["train_ratio"] = cfg.train_ratio;
    j["val_ratio"] = cfg.val_ratio;
    return j;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::usage, path.string() + ": " + e.what());
    }
}

inline DatasetConfig load_dataset_config(const std::filesystem::path& path) {
    return dataset_config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline bool is_missing_token(const std::string& s) {
    std::string lower;
    for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return lower.empty() || lower == "nan" || lower == "na" || lower == "null" || lower == "none";
}

inline std::optional<long long> parse_integer(const std::string& s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

// Integer labels compare numerically; anything else (ISO dates) lexicographically.
inline bool time_index_increasing(const std::vector<std::string>& labels, std::size_t* bad_row = nullptr) {
    bool all_int = std::all_of(labels.begin(), labels.end(),
                               [](const std::string& s) { return detail::parse_integer(s).has_value(); });
    for (std::size_t i = 1; i < labels.size(); ++i) {
        bool ok = all_int ? *detail::parse_integer(labels[i - 1]) < *detail::parse_integer(labels[i])
                          : labels[i - 1] < labels[i];
        if (!ok) {
            if (bad_row) *bad_row = i;
            return false;
        }
    }
    return true;
}

inline Dataset load_csv(const std::filesystem::path& path, const DatasetConfig& cfg) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::data, path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    auto column_of = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::data, "missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };

    std::size_t time_col = cfg.time_column.empty() ? 0 : column_of(cfg.time_column);
    std::size_t target_col = column_of(cfg.target);
    std::vector<std::size_t> perf_cols, nonperf_cols;
    for (const auto& n : cfg.performative) perf_cols.push_back(column_of(n));
    for (const auto& n : cfg.non_performative) nonperf_cols.push_back(column_of(n));
    for (const auto& n : cfg.ignored) column_of(n);

    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == time_col || c == target_col) continue;
        const auto& name = header[c];
        auto listed = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), name) != v.end(); };
        int hits = listed(cfg.performative) + listed(cfg.non_performative) + listed(cfg.ignored);
        if (hits == 0) fail(ErrorKind::data, "column '" + name + "' is not classified in the dataset config");
        if (hits > 1) fail(ErrorKind::data, "column '" + name + "' is classified more than once");
    }

    std::vector<std::string> times;
    std::vector<std::vector<double>> rows;  // target, perf..., nonperf...
    std::vector<std::size_t> data_cols{target_col};
    data_cols.insert(data_cols.end(), perf_cols.begin(), perf_cols.end());
    data_cols.insert(data_cols.end(), nonperf_cols.begin(), nonperf_cols.end());

    std::size_t r = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            fail(ErrorKind::data, "row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                                      " cells, expected " + std::to_string(header.size()));
        times.push_back(detail::trim(cells[time_col]));
        std::vector<double> row;
        for (std::size_t c : data_cols) {
            std::string cell = detail::trim(cells[c]);
            if (detail::is_missing_token(cell))
                fail(ErrorKind::data, "missing value at row " + std::to_string(r) + ", column " + header[c]);
            auto v = detail::parse_double(cell);
            if (!v) fail(ErrorKind::data, "non-numeric cell '" + cell + "' at row " + std::to_string(r) + ", column " + header[c]);
            if (!std::isfinite(*v))
                fail(ErrorKind::data, "missing value at row " + std::to_string(r) + ", column " + header[c]);
            row.push_back(*v);
        }
        rows.push_back(std::move(row));
        ++r;
    }

    std::size_t bad = 0;
    if (!time_index_increasing(times, &bad))
        fail(ErrorKind::data, "time index not strictly increasing at row " + std::to_string(bad));

    std::size_t T = rows.size();
    std::size_t min_len = static_cast<std::size_t>(cfg.lookback + 2 * cfg.horizon);
    if (T < min_len)
        fail(ErrorKind::data, "series too short: T=" + std::to_string(T) + " < L+2H=" + std::to_string(min_len));

    Dataset ds;
    ds.time_index = std::move(times);
    ds.target_name = cfg.target;
    ds.target.resize(static_cast<Eigen::Index>(T));
    std::size_t D = perf_cols.size() + nonperf_cols.size();
    ds.features.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < T; ++i) {
        ds.target(static_cast<Eigen::Index>(i)) = rows[i][0];
        for (std::size_t d = 0; d < D; ++d)
            ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d + 1];
    }
    ds.feature_names = cfg.performative;
    ds.feature_names.insert(ds.feature_names.end(), cfg.non_performative.begin(), cfg.non_performative.end());
    ds.performative_mask.assign(D, false);
    std::fill(ds.performative_mask.begin(), ds.performative_mask.begin() + static_cast<std::ptrdiff_t>(perf_cols.size()), true);
    ds.metadata["source"] = path.string();
    return ds;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << "time," << ds.target_name;
    for (const auto& n : ds.feature_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < ds.length(); ++i) {
        auto row = static_cast<Eigen::Index>(i);
        out << ds.time_index[i] << ',' << format_double(ds.target(row));
        for (Eigen::Index d = 0; d < ds.features.cols(); ++d) out << ',' << format_double(ds.features(row, d));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Scaling

struct ColumnStats {
    double mean = 0.0;
    double std = 1.0;
    bool passthrough = false;  // constant column, left unscaled

    double apply(double v) const { return passthrough ? v : (v - mean) / std; }
    double invert(double v) const { return passthrough ? v : v * std + mean; }
};

struct Scaler {
    ColumnStats target;
    std::vector<ColumnStats> features;

    std::vector<std::string> flagged(const Dataset& ds) const {
        std::vector<std::string> out;
        if (target.passthrough) out.push_back(ds.target_name);
        for (std::size_t d = 0; d < features.size(); ++d)
            if (features[d].passthrough) out.push_back(ds.feature_names[d]);
        return out;
    }

    Dataset apply(const Dataset& ds) const {
        Dataset out = ds;
        out.target = ds.target.unaryExpr([&](double v) { return target.apply(v); });
        for (std::size_t d = 0; d < features.size(); ++d) {
            auto col = static_cast<Eigen::Index>(d);
            out.features.col(col) = ds.features.col(col).unaryExpr([&](double v) { return features[d].apply(v); });
        }
        return out;
    }

    Vector invert_target(const Vector& v) const {
        return v.unaryExpr([&](double x) { return target.invert(x); });
    }
};

inline ColumnStats fit_column(const Eigen::Ref<const Vector>& v) {
    ColumnStats s;
    const auto n = v.size();
    s.mean = v.mean();
    if (n < 2) {
        s.std = 1.0;
        s.passthrough = true;
        return s;
    }
    double ss = (v.array() - s.mean).square().sum();
    s.std = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(s.std > 1e-12 * std::max(1.0, std::abs(s.mean)))) {
        s.std = 1.0;
        s.passthrough = true;
    }
    return s;
}

// Z-scores every column with statistics from rows [0, train_end).
inline std::pair<Dataset, Scaler> fit_apply_scaler(const Dataset& ds, std::size_t train_end) {
    if (train_end == 0 || train_end > ds.length()) fail(ErrorKind::invariant, "scaler train_end out of range");
    const auto n = static_cast<Eigen::Index>(train_end);
    Scaler sc;
    sc.target = fit_column(ds.target.head(n));
    for (Eigen::Index d = 0; d < ds.features.cols(); ++d) sc.features.push_back(fit_column(ds.features.col(d).head(n)));
    return {sc.apply(ds), sc};
}

// ---------------------------------------------------------------------------
// Windows and splits

inline Matrix performative_columns(const Dataset& ds) {
    return ds.features.leftCols(static_cast<Eigen::Index>(ds.num_performative()));
}

inline void check_tau(const std::vector<int>& tau, std::size_t P, int H) {
    if (tau.size() != P)
        fail(ErrorKind::invariant, "tau has " + std::to_string(tau.size()) + " entries for " + std::to_string(P) +
                                       " performative features");
    for (int t : tau)
        if (t < 0 || t > H) fail(ErrorKind::invariant, "tau " + std::to_string(t) + " outside [0, H]");
}

// Lookback-only sample at anchor t (no horizon, no delayed windows).
inline WindowSample lookback_sample(const Dataset& ds, int L, std::size_t t) {
    if (L < 1 || t + 1 < static_cast<std::size_t>(L) || t >= ds.length())
        fail(ErrorKind::invariant, "lookback window out of range at anchor " + std::to_string(t));
    WindowSample s;
    s.t = t;
    auto start = static_cast<Eigen::Index>(t + 1 - static_cast<std::size_t>(L));
    s.x_look = ds.features.middleRows(start, L);
    s.y_look = ds.target.segment(start, L);
    return s;
}

// One sample per anchor t with t-L+1 >= lo and t+H < hi. x_dr is attached
// iff t + max(tau) < hi.
inline std::vector<WindowSample> make_windows(const Dataset& ds, int L, int H, const std::vector<int>& tau,
                                              Range range) {
    if (L < 1 || H < 1) fail(ErrorKind::invariant, "L and H must be >= 1");
    if (range.hi > ds.length() || range.lo > range.hi) fail(ErrorKind::invariant, "window range outside dataset");
    const std::size_t P = ds.num_performative();
    if (!tau.empty()) check_tau(tau, P, H);
    std::vector<WindowSample> out;
    const auto uL = static_cast<std::size_t>(L), uH = static_cast<std::size_t>(H);
    if (range.size() < uL + uH) return out;
    const int max_tau = tau.empty() ? 0 : *std::max_element(tau.begin(), tau.end());
    for (std::size_t t = range.lo + uL - 1; t + uH < range.hi; ++t) {
        WindowSample s = lookback_sample(ds, L, t);
        s.y_hor = ds.target.segment(static_cast<Eigen::Index>(t + 1), H);
        if (!tau.empty() && t + static_cast<std::size_t>(max_tau) < range.hi) {
            Matrix dr(L, static_cast<Eigen::Index>(P));
            for (std::size_t d = 0; d < P; ++d) {
                auto start = static_cast<Eigen::Index>(t + static_cast<std::size_t>(tau[d]) + 1 - uL);
                dr.col(static_cast<Eigen::Index>(d)) = ds.features.col(static_cast<Eigen::Index>(d)).segment(start, L);
            }
            s.x_dr = std::move(dr);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Windows whose horizons start inside [range.lo, range.hi); lookbacks may
// reach back before range.lo.
inline std::vector<WindowSample> make_eval_windows(const Dataset& ds, int L, int H, const std::vector<int>& tau,
                                                   Range range) {
    const auto uL = static_cast<std::size_t>(L);
    Range widened{range.lo >= uL ? range.lo - uL : 0, range.hi};
    auto all = make_windows(ds, L, H, tau, widened);
    std::erase_if(all, [&](const WindowSample& s) { return s.t + 1 < range.lo; });
    return all;
}

struct Split {
    Range train, val, test;
};

inline Split split_standard(std::size_t T, double train_ratio = 0.6, double val_ratio = 0.2) {
    auto floor_of = [&](double r) {
        return static_cast<std::size_t>(std::floor(r * static_cast<double>(T) + 1e-9));
    };
    std::size_t a = floor_of(train_ratio);
    std::size_t b = std::min(T, floor_of(train_ratio + val_ratio));
    return {{0, a}, {a, b}, {b, T}};
}

// ---------------------------------------------------------------------------
// Synthetic performative feedback loop
//
//   x_{t+1} = c x_t - g y_{t-d1} + sigma_x eta_t
//   y_{t+1} = a y_t + b x_{t+1-d2} + sigma_y eps_t
//
// x leads y by d2 steps. An optional flip negates one coupling from
// flip_step onwards (a mid-stream regime change).

struct SyntheticSpec {
    std::size_t T = 2000;
    int lag_response = 2;  // d1
    int lag_effect = 3;    // d2
    double a = 0.5;
    double b = 0.5;
    double c = 0.8;
    double g = 0.2;
    double sigma_y = 0.1;
    double sigma_x = 1.0;
    std::uint64_t seed = 0;
    std::size_t burn_in = 50;
    std::size_t flip_step = 0;     // 0: no regime flip
    std::string flip_coupling = "g";  // "b" or "g"
    int horizon = 8;               // alignment search range the loop must fit in
};

inline void validate(const SyntheticSpec& s) {
    if (s.lag_response < 0 || s.lag_effect < 0) fail(ErrorKind::usage, "synthetic lags must be >= 0");
    if (s.lag_response + s.lag_effect > s.horizon)
        fail(ErrorKind::usage, "synthetic d1 + d2 must not exceed H");
    if (s.T < 2) fail(ErrorKind::usage, "synthetic T must be >= 2");
    if (s.sigma_x < 0 || s.sigma_y < 0) fail(ErrorKind::usage, "synthetic noise levels must be >= 0");
    if (s.flip_coupling != "b" && s.flip_coupling != "g") fail(ErrorKind::usage, "flip_coupling must be 'b' or 'g'");
}

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
    return {{"T", s.T},           {"d1", s.lag_response}, {"d2", s.lag_effect},       {"a", s.a},
            {"b", s.b},           {"c", s.c},             {"g", s.g},                 {"sigma_y", s.sigma_y},
            {"sigma_x", s.sigma_x}, {"seed", s.seed},     {"burn_in", s.burn_in},     {"flip_step", s.flip_step},
            {"flip_coupling", s.flip_coupling},           {"H", s.horizon}};
}

inline SyntheticSpec with_target_snr(SyntheticSpec spec, double snr);

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    check_known_keys(j, {"T", "d1", "d2", "a", "b", "c", "g", "sigma_y", "sigma_x", "seed", "burn_in", "flip_step",
                         "flip_coupling", "H", "snr"},
                     "synthetic spec");
    SyntheticSpec s;
    s.T = j.value("T", s.T);
    s.lag_response = j.value("d1", s.lag_response);
    s.lag_effect = j.value("d2", s.lag_effect);
    s.a = j.value("a", s.a);
    s.b = j.value("b", s.b);
    s.c = j.value("c", s.c);
    s.g = j.value("g", s.g);
    s.sigma_y = j.value("sigma_y", s.sigma_y);
    s.sigma_x = j.value("sigma_x", s.sigma_x);
    s.seed = j.value("seed", s.seed);
    s.burn_in = j.value("burn_in", s.burn_in);
    s.flip_step = j.value("flip_step", s.flip_step);
    s.flip_coupling = j.value("flip_coupling", s.flip_coupling);
    s.horizon = j.value("H", s.horizon);
    if (j.contains("snr")) s = with_target_snr(s, j.at("snr").get<double>());
    return s;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    const std::size_t d1 = static_cast<std::size_t>(spec.lag_response);
    const std::size_t d2 = static_cast<std::size_t>(spec.lag_effect);
    const std::size_t n = spec.burn_in + spec.T;
    const std::size_t start = std::max(d1, d2) + 1;
    std::vector<double> x(std::max(n, start)), y(std::max(n, start));

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t t = 0; t < start; ++t) {
        x[t] = normal(rng);
        y[t] = normal(rng);
    }
    for (std::size_t t = start - 1; t + 1 < n; ++t) {
        const bool flipped = spec.flip_step > 0 && t + 1 >= spec.burn_in + spec.flip_step;
        const double b = (flipped && spec.flip_coupling == "b") ? -spec.b : spec.b;
        const double g = (flipped && spec.flip_coupling == "g") ? -spec.g : spec.g;
        const double eta = normal(rng);
        const double eps = normal(rng);
        x[t + 1] = spec.c * x[t] - g * y[t - d1] + spec.sigma_x * eta;
        y[t + 1] = spec.a * y[t] + b * x[t + 1 - d2] + spec.sigma_y * eps;
        if (!(std::abs(x[t + 1]) <= 1e9) || !(std::abs(y[t + 1]) <= 1e9)) fail(ErrorKind::numeric, "unstable spec");
    }

    Dataset ds;
    ds.target_name = "y";
    ds.target.resize(static_cast<Eigen::Index>(spec.T));
    ds.features.resize(static_cast<Eigen::Index>(spec.T), 1);
    for (std::size_t i = 0; i < spec.T; ++i) {
        ds.time_index.push_back(std::to_string(i));
        ds.target(static_cast<Eigen::Index>(i)) = y[spec.burn_in + i];
        ds.features(static_cast<Eigen::Index>(i), 0) = x[spec.burn_in + i];
    }
    ds.feature_names = {"x"};
    ds.performative_mask = {true};
    ds.metadata["generator"] = "performative_loop";
    ds.metadata["planted_lead"] = std::to_string(spec.lag_effect);
    ds.metadata["planted_tau"] = std::to_string(spec.horizon - spec.lag_effect);
    ds.metadata["seed"] = std::to_string(spec.seed);
    return ds;
}

// Sets sigma_y so that var(noise-free target) / sigma_y^2 == snr, with the
// noise-free target measured on the same seed.
inline SyntheticSpec with_target_snr(SyntheticSpec spec, double snr) {
    if (!(snr > 0)) fail(ErrorKind::usage, "snr must be > 0");
    SyntheticSpec clean = spec;
    clean.sigma_y = 0.0;
    Dataset ds = generate_synthetic(clean);
    double mean = ds.target.mean();
    double var = (ds.target.array() - mean).square().mean();
    spec.sigma_y = std::sqrt(var / snr);
    return spec;
}

inline DatasetConfig synthetic_dataset_config(const SyntheticSpec& spec, int L) {
    DatasetConfig cfg;
    cfg.time_column = "time";
    cfg.target = "y";
    cfg.performative = {"x"};
    cfg.lookback = L;
    cfg.horizon = spec.horizon;
    return cfg;
}

// Writes <dir>/data.csv, a sidecar <dir>/data.meta.json (spec and planted
// lag) and a ready-to-use <dir>/dataset.json.
inline void write_synthetic(const Dataset& ds, const SyntheticSpec& spec, int L, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_csv(ds, dir / "data.csv");
    nlohmann::json meta{{"spec", synthetic_spec_to_json(spec)},
                        {"planted_lead", spec.lag_effect},
                        {"planted_tau", spec.horizon - spec.lag_effect},
                        {"rows", ds.length()}};
    std::ofstream(dir / "data.meta.json") << meta.dump(2) << '\n';
    std::ofstream(dir / "dataset.json") << dataset_config_to_json(synthetic_dataset_config(spec, L)).dump(2) << '\n';
}

}  // namespace perfts::data
