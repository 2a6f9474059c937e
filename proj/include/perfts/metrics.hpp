#pragma once

// Evaluation metrics and report aggregation.
//
//   NMAE  = sum|y - yhat| / sum|y|
//   NRMSE = sqrt(mean (y - yhat)^2) / mean|y|
//   PC    = Pearson correlation over the horizon of one sequence,
//           averaged over sequences (constant sequences excluded, counted)

#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/types.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace perfts::metrics {

inline void check_pair(const Matrix& y, const Matrix& yhat) {
    if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) fail(ErrorKind::invariant, "metric shape mismatch");
    if (y.size() == 0) fail(ErrorKind::invariant, "metric on empty input");
}

inline double nmae(const Matrix& y, const Matrix& yhat) {
    check_pair(y, yhat);
    double den = y.cwiseAbs().sum();
    if (!(den > 0)) fail(ErrorKind::data, "undefined normalization");
    return (y - yhat).cwiseAbs().sum() / den;
}

inline double nrmse(const Matrix& y, const Matrix& yhat) {
    check_pair(y, yhat);
    const double n = static_cast<double>(y.size());
    double mean_abs = y.cwiseAbs().sum() / n;
    if (!(mean_abs > 0)) fail(ErrorKind::data, "undefined normalization");
    return std::sqrt((y - yhat).squaredNorm() / n) / mean_abs;
}

// nullopt when either sequence is constant.
inline std::optional<double> pc(const Vector& y, const Vector& yhat) {
    if (y.size() != yhat.size()) fail(ErrorKind::invariant, "pc shape mismatch");
    if (y.size() < 2) fail(ErrorKind::invariant, "pc needs H >= 2");
    Vector cy = y.array() - y.mean();
    Vector cp = yhat.array() - yhat.mean();
    double sy = cy.squaredNorm(), sp = cp.squaredNorm();
    if (!(sy > 0) || !(sp > 0)) return std::nullopt;
    return cy.dot(cp) / std::sqrt(sy * sp);
}

struct PcAggregate {
    double mean = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;
};

// Rows of y and yhat are sequences.
inline PcAggregate mean_pc(const Matrix& y, const Matrix& yhat) {
    check_pair(y, yhat);
    PcAggregate agg;
    double total = 0;
    for (Eigen::Index n = 0; n < y.rows(); ++n) {
        auto v = pc(y.row(n).transpose(), yhat.row(n).transpose());
        if (v) {
            total += *v;
            ++agg.used;
        } else {
            ++agg.excluded;
        }
    }
    agg.mean = agg.used ? total / static_cast<double>(agg.used) : std::nan("");
    return agg;
}

// ---------------------------------------------------------------------------
// Records and reports

struct Record {
    std::string protocol;  // standard | realtime | oracle
    std::string method;
    std::uint64_t seed = 0;
    std::string split;     // test | val
    std::size_t anchor = 0;
    std::string time;      // label of the forecast target time
    int h = 1;             // 1-based horizon step
    double y_true = 0.0;
    double y_pred = 0.0;
};

struct Aggregate {
    std::size_t sequences = 0;
    int horizon = 0;
    double nmae = 0.0;
    double nrmse = 0.0;
    double pc_mean = 0.0;
    std::size_t pc_excluded = 0;

    bool operator==(const Aggregate&) const = default;
};

// Aggregates per method over records whose split matches, in method-name
// order. Sequences are consecutive runs of records sharing an anchor.
inline std::map<std::string, Aggregate> aggregate(const std::vector<Record>& records, const std::string& split = "test") {
    std::map<std::string, std::vector<std::vector<const Record*>>> seqs;
    for (const auto& r : records) {
        if (r.split != split) continue;
        auto& list = seqs[r.method];
        if (list.empty() || list.back().front()->anchor != r.anchor) list.emplace_back();
        list.back().push_back(&r);
    }
    std::map<std::string, Aggregate> out;
    for (const auto& [method, list] : seqs) {
        const auto H = static_cast<Eigen::Index>(list.front().size());
        Matrix y(static_cast<Eigen::Index>(list.size()), H), p(static_cast<Eigen::Index>(list.size()), H);
        for (std::size_t n = 0; n < list.size(); ++n) {
            if (static_cast<Eigen::Index>(list[n].size()) != H)
                fail(ErrorKind::invariant, "sequences of unequal horizon for method " + method);
            for (Eigen::Index h = 0; h < H; ++h) {
                y(static_cast<Eigen::Index>(n), h) = list[n][static_cast<std::size_t>(h)]->y_true;
                p(static_cast<Eigen::Index>(n), h) = list[n][static_cast<std::size_t>(h)]->y_pred;
            }
        }
        Aggregate a;
        a.sequences = list.size();
        a.horizon = static_cast<int>(H);
        a.nmae = nmae(y, p);
        a.nrmse = nrmse(y, p);
        if (H >= 2) {
            auto pcs = mean_pc(y, p);
            a.pc_mean = pcs.mean;
            a.pc_excluded = pcs.excluded;
        } else {
            a.pc_mean = std::nan("");
        }
        out[method] = a;
    }
    return out;
}

inline const char* kRecordsHeader = "protocol,method,seed,split,anchor,time,h,y_true,y_pred";

inline void write_records_csv(const std::vector<Record>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << kRecordsHeader << '\n';
    for (const auto& r : records)
        out << r.protocol << ',' << r.method << ',' << r.seed << ',' << r.split << ',' << r.anchor << ',' << r.time << ','
            << r.h << ',' << data::format_double(r.y_true) << ',' << data::format_double(r.y_pred) << '\n';
}

inline std::vector<Record> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || data::detail::trim(line) != kRecordsHeader)
        fail(ErrorKind::data, "records CSV header mismatch");
    std::vector<Record> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (data::detail::trim(line).empty()) continue;
        auto c = data::detail::split_csv_line(line);
        if (c.size() != 9) fail(ErrorKind::data, "records CSV row " + std::to_string(row) + " malformed");
        Record r;
        r.protocol = c[0];
        r.method = c[1];
        auto seed = data::detail::parse_integer(c[2]);
        auto anchor = data::detail::parse_integer(c[4]);
        auto h = data::detail::parse_integer(c[6]);
        auto yt = data::detail::parse_double(c[7]);
        auto yp = data::detail::parse_double(c[8]);
        if (!seed || !anchor || !h || !yt || !yp)
            fail(ErrorKind::data, "records CSV row " + std::to_string(row) + " has a non-numeric field");
        r.seed = static_cast<std::uint64_t>(*seed);
        r.split = c[3];
        r.anchor = static_cast<std::size_t>(*anchor);
        r.time = c[5];
        r.h = static_cast<int>(*h);
        r.y_true = *yt;
        r.y_pred = *yp;
        out.push_back(std::move(r));
        ++row;
    }
    return out;
}

inline nlohmann::json to_json(const Aggregate& a) {
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"sequences", a.sequences}, {"horizon", a.horizon},       {"nmae", num(a.nmae)},
            {"nrmse", num(a.nrmse)},    {"pc_mean", num(a.pc_mean)}, {"pc_excluded", a.pc_excluded}};
}

inline Aggregate aggregate_from_json(const nlohmann::json& j) {
    auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
    Aggregate a;
    a.sequences = j.at("sequences").get<std::size_t>();
    a.horizon = j.at("horizon").get<int>();
    a.nmae = num(j.at("nmae"));
    a.nrmse = num(j.at("nrmse"));
    a.pc_mean = num(j.at("pc_mean"));
    a.pc_excluded = j.at("pc_excluded").get<std::size_t>();
    return a;
}

// NaN-aware exact equality.
inline bool same_aggregate(const Aggregate& a, const Aggregate& b) {
    auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.sequences == b.sequences && a.horizon == b.horizon && eq(a.nmae, b.nmae) && eq(a.nrmse, b.nrmse) &&
           eq(a.pc_mean, b.pc_mean) && a.pc_excluded == b.pc_excluded;
}

struct Summary {
    std::string protocol;
    std::map<std::string, Aggregate> test;
    std::map<std::string, Aggregate> validation;
};

inline Summary summarize(const std::vector<Record>& records, const std::string& protocol) {
    return {protocol, aggregate(records, "test"), aggregate(records, "val")};
}

inline nlohmann::json to_json(const Summary& s) {
    nlohmann::json test = nlohmann::json::object(), val = nlohmann::json::object();
    for (const auto& [m, a] : s.test) test[m] = to_json(a);
    for (const auto& [m, a] : s.validation) val[m] = to_json(a);
    return {{"protocol", s.protocol}, {"test", test}, {"validation", val}};
}

inline Summary summary_from_json(const nlohmann::json& j) {
    Summary s;
    try {
        s.protocol = j.at("protocol").get<std::string>();
        for (const auto& [m, a] : j.at("test").items()) s.test[m] = aggregate_from_json(a);
        if (j.contains("validation"))
            for (const auto& [m, a] : j.at("validation").items()) s.validation[m] = aggregate_from_json(a);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, std::string("summary file: ") + e.what());
    }
    return s;
}

// Empty when the summary matches a recomputation from the records exactly;
// otherwise a description of the first mismatch.
inline std::string verify_summary(const std::vector<Record>& records, const Summary& reported) {
    Summary again = summarize(records, reported.protocol);
    auto cmp = [](const std::map<std::string, Aggregate>& a, const std::map<std::string, Aggregate>& b,
                  const char* which) -> std::string {
        if (a.size() != b.size()) return std::string(which) + ": method sets differ";
        for (const auto& [m, agg] : a) {
            auto it = b.find(m);
            if (it == b.end()) return std::string(which) + ": method " + m + " missing";
            if (!same_aggregate(agg, it->second)) return std::string(which) + ": aggregates differ for " + m;
        }
        return {};
    };
    if (auto e = cmp(again.test, reported.test, "test"); !e.empty()) return e;
    return cmp(again.validation, reported.validation, "validation");
}

}  // namespace perfts::metrics
