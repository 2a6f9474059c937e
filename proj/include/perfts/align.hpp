#pragma once

// Lag alignment of performative features against the target.
//
// For shift i in [0, H] the feature window x[i, T-H+i) is compared with the
// target window y[H, T). tau = argmax_i |s_i|; the feature leads the target
// by H - tau steps, so tau == H means no lead.

#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/types.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace perfts::align {

enum class Metric { cosine, pearson, neg_euclidean };

inline std::string to_string(Metric m) {
    switch (m) {
        case Metric::cosine: return "cosine";
        case Metric::pearson: return "pearson";
        case Metric::neg_euclidean: return "neg-euclidean";
    }
    return "cosine";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "pearson") return Metric::pearson;
    if (s == "neg-euclidean" || s == "euclidean") return Metric::neg_euclidean;
    fail(ErrorKind::usage, "unknown alignment metric '" + s + "'");
}

inline constexpr double kWeakSignalThreshold = 0.05;

// Cosine of the mean-centered vectors.
inline double cosine_similarity(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    if (u.size() != v.size() || u.size() < 2) fail(ErrorKind::invariant, "cosine_similarity needs equal lengths >= 2");
    Vector cu = u.array() - u.mean();
    Vector cv = v.array() - v.mean();
    double nu = cu.norm(), nv = cv.norm();
    if (!(nu > 0) || !(nv > 0)) fail(ErrorKind::data, "degenerate window");
    double s = cu.dot(cv) / (nu * nv);
    return std::clamp(s, -1.0, 1.0);
}

// Textbook single-pass Pearson; kept separate from the centered cosine so the
// two can be checked against each other.
inline double pearson_correlation(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    if (u.size() != v.size() || u.size() < 2) fail(ErrorKind::invariant, "pearson needs equal lengths >= 2");
    const double n = static_cast<double>(u.size());
    double su = 0, sv = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        su += u(i);
        sv += v(i);
    }
    const double mu = su / n, mv = sv / n;
    double cov = 0, vu = 0, vv = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        cov += (u(i) - mu) * (v(i) - mv);
        vu += (u(i) - mu) * (u(i) - mu);
        vv += (v(i) - mv) * (v(i) - mv);
    }
    if (!(vu > 0) || !(vv > 0)) fail(ErrorKind::data, "degenerate window");
    return std::clamp(cov / std::sqrt(vu * vv), -1.0, 1.0);
}

// Negative RMS distance between the z-scored windows.
inline double neg_euclidean(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    if (u.size() != v.size() || u.size() < 2) fail(ErrorKind::invariant, "euclidean needs equal lengths >= 2");
    auto z = [](const Eigen::Ref<const Vector>& w) -> Vector {
        Vector c = w.array() - w.mean();
        double sd = std::sqrt(c.squaredNorm() / static_cast<double>(w.size()));
        if (!(sd > 0)) fail(ErrorKind::data, "degenerate window");
        return c / sd;
    };
    return -(z(u) - z(v)).norm() / std::sqrt(static_cast<double>(u.size()));
}

inline double similarity(Metric m, const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
    switch (m) {
        case Metric::cosine: return cosine_similarity(u, v);
        case Metric::pearson: return pearson_correlation(u, v);
        case Metric::neg_euclidean: return neg_euclidean(u, v);
    }
    return 0.0;
}

struct FeatureAlignment {
    std::string feature;
    int tau = 0;
    double score = 0.0;
    std::vector<double> scores;  // s_i for i = 0..H (0 where degenerate)
    std::vector<std::string> warnings;
};

struct AlignmentResult {
    std::vector<FeatureAlignment> features;
    Metric metric = Metric::cosine;
    Range search_range;
    int horizon = 0;

    std::vector<int> taus() const {
        std::vector<int> out;
        for (const auto& f : features) out.push_back(f.tau);
        return out;
    }
};

// Selection key: |s| for correlation metrics, s itself for the distance metric.
inline double selection_key(Metric m, double s) { return m == Metric::neg_euclidean ? s : std::abs(s); }

inline FeatureAlignment align_feature(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, int H,
                                      Metric metric = Metric::cosine) {
    const auto T = x.size();
    if (y.size() != T) fail(ErrorKind::invariant, "align_feature: x and y lengths differ");
    if (H < 0 || T <= H + 2) fail(ErrorKind::data, "align_feature: need T > H + 2");
    const Eigen::Index n = T - H;
    FeatureAlignment out;
    out.scores.assign(static_cast<std::size_t>(H) + 1, 0.0);
    const Vector target = y.tail(n);
    bool any_valid = false;
    double best_key = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= H; ++i) {
        double s = 0.0;
        try {
            s = similarity(metric, x.segment(i, n), target);
        } catch (const Error&) {
            out.warnings.push_back("degenerate window at shift " + std::to_string(i));
            continue;
        }
        out.scores[static_cast<std::size_t>(i)] = s;
        double key = selection_key(metric, s);
        if (!any_valid || key > best_key) {
            best_key = key;
            out.tau = i;
            out.score = s;
        }
        any_valid = true;
    }
    if (!any_valid) {
        out.tau = 0;
        out.score = 0.0;
        out.warnings.push_back("degenerate window: falling back to tau=0");
        return out;
    }
    if (metric != Metric::neg_euclidean) {
        bool weak = std::all_of(out.scores.begin(), out.scores.end(),
                                [](double s) { return std::abs(s) < kWeakSignalThreshold; });
        if (weak) out.warnings.push_back("weak performativity signal");
    }
    return out;
}

inline AlignmentResult align_all(const data::Dataset& ds, Range train_range, int H, Metric metric = Metric::cosine) {
    const std::size_t P = ds.num_performative();
    if (P == 0) fail(ErrorKind::data, "alignment requires at least one performative feature");
    if (train_range.hi > ds.length() || train_range.lo >= train_range.hi)
        fail(ErrorKind::invariant, "alignment range outside dataset");
    AlignmentResult out;
    out.metric = metric;
    out.search_range = train_range;
    out.horizon = H;
    const auto lo = static_cast<Eigen::Index>(train_range.lo);
    const auto n = static_cast<Eigen::Index>(train_range.size());
    const Vector y = ds.target.segment(lo, n);
    for (std::size_t d = 0; d < P; ++d) {
        const Vector x = ds.features.col(static_cast<Eigen::Index>(d)).segment(lo, n);
        try {
            FeatureAlignment fa = align_feature(x, y, H, metric);
            fa.feature = ds.feature_names[d];
            out.features.push_back(std::move(fa));
        } catch (const Error& e) {
            fail(e.kind(), "feature '" + ds.feature_names[d] + "': " + e.what());
        }
    }
    return out;
}

inline nlohmann::json to_json(const AlignmentResult& r) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : r.features)
        feats.push_back({{"feature", f.feature}, {"tau", f.tau}, {"score", f.score}, {"scores", f.scores},
                         {"warnings", f.warnings}});
    return {{"metric", to_string(r.metric)},
            {"horizon", r.horizon},
            {"search_range", {r.search_range.lo, r.search_range.hi}},
            {"index_convention", "x[i, T-H+i) vs y[H, T), 0-based half-open; lead = H - tau"},
            {"features", feats}};
}

inline AlignmentResult alignment_from_json(const nlohmann::json& j) {
    AlignmentResult r;
    try {
        r.metric = metric_from_string(j.at("metric").get<std::string>());
        r.horizon = j.at("horizon").get<int>();
        auto range = j.at("search_range");
        r.search_range = {range.at(0).get<std::size_t>(), range.at(1).get<std::size_t>()};
        for (const auto& f : j.at("features")) {
            FeatureAlignment fa;
            fa.feature = f.at("feature").get<std::string>();
            fa.tau = f.at("tau").get<int>();
            fa.score = f.at("score").get<double>();
            fa.scores = f.value("scores", std::vector<double>{});
            fa.warnings = f.value("warnings", std::vector<std::string>{});
            r.features.push_back(std::move(fa));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, std::string("alignment file: ") + e.what());
    }
    return r;
}

}  // namespace perfts::align
