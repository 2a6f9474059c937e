#pragma once

// Experiment orchestration: the standard chronological protocol, rolling
// real-time retraining, the oracle comparison and run persistence.

#include "perfts/align.hpp"
#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/fps.hpp"
#include "perfts/metrics.hpp"
#include "perfts/seqmodel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace perfts::harness {

// ---------------------------------------------------------------------------
// Configuration

struct Protocol {
    std::string kind = "standard";  // standard | realtime | oracle
    std::size_t start = 0;          // realtime: first forecast origin; 0 picks 60% of T
    std::size_t stride = 1;
    bool warm_start = true;
    int retrain_epochs = 10;
    double val_fraction = 0.2;
    bool reestimate_tau = true;

    void validate() const {
        if (kind != "standard" && kind != "realtime" && kind != "oracle")
            fail(ErrorKind::usage, "protocol kind must be standard, realtime or oracle");
        if (stride < 1) fail(ErrorKind::usage, "stride must be >= 1");
        if (retrain_epochs < 0) fail(ErrorKind::usage, "retrain_epochs must be >= 0");
        if (val_fraction < 0 || val_fraction >= 1) fail(ErrorKind::usage, "val_fraction must be in [0, 1)");
    }
};

// Hyperparameter grid; empty lists keep the base value.
struct Grid {
    std::vector<double> learning_rate;
    std::vector<int> f_hidden;
    std::vector<int> g_hidden;

    std::vector<fps::TrainConfig> expand(const fps::TrainConfig& base) const {
        auto lrs = learning_rate.empty() ? std::vector<double>{base.learning_rate} : learning_rate;
        auto fhs = f_hidden.empty() ? std::vector<int>{base.f_hidden} : f_hidden;
        auto ghs = g_hidden.empty() ? std::vector<int>{base.g_hidden} : g_hidden;
        std::vector<fps::TrainConfig> out;
        for (double lr : lrs)
            for (int fh : fhs)
                for (int gh : ghs) {
                    fps::TrainConfig c = base;
                    c.learning_rate = lr;
                    c.f_hidden = fh;
                    c.g_hidden = gh;
                    c.validate();
                    out.push_back(c);
                }
        return out;
    }
};

struct ExperimentConfig {
    int L = 16;
    int H = 8;
    double train_ratio = 0.6;
    double val_ratio = 0.2;
    std::vector<std::string> methods{"erm", "fps"};
    fps::TrainConfig train;
    Grid grid;
    align::Metric metric = align::Metric::cosine;
    Protocol protocol;
    std::size_t ensemble = 1;  // seeds train.seed, train.seed + 1, ...

    std::vector<std::uint64_t> seeds() const {
        std::vector<std::uint64_t> s;
        for (std::size_t i = 0; i < std::max<std::size_t>(1, ensemble); ++i) s.push_back(train.seed + i);
        return s;
    }

    void validate() const {
        if (L < 1 || H < 1) fail(ErrorKind::usage, "L and H must be >= 1");
        for (const auto& m : methods)
            if (m != "fps" && m != "erm") fail(ErrorKind::usage, "unknown method '" + m + "'");
        if (methods.empty()) fail(ErrorKind::usage, "no methods selected");
        train.validate();
        protocol.validate();
    }
};

inline nlohmann::json to_json(const Grid& g) {
    return {{"learning_rate", g.learning_rate}, {"f_hidden", g.f_hidden}, {"g_hidden", g.g_hidden}};
}

inline nlohmann::json to_json(const Protocol& p) {
    return {{"kind", p.kind},
            {"start", p.start},
            {"stride", p.stride},
            {"warm_start", p.warm_start},
            {"retrain_epochs", p.retrain_epochs},
            {"val_fraction", p.val_fraction},
            {"reestimate_tau", p.reestimate_tau}};
}

inline Protocol protocol_from_json(const nlohmann::json& j, Protocol p = {}) {
    data::check_known_keys(j, {"kind", "start", "stride", "warm_start", "retrain_epochs", "val_fraction", "reestimate_tau"},
                           "protocol");
    try {
        p.kind = j.value("kind", p.kind);
        p.start = j.value("start", p.start);
        p.stride = j.value("stride", p.stride);
        p.warm_start = j.value("warm_start", p.warm_start);
        p.retrain_epochs = j.value("retrain_epochs", p.retrain_epochs);
        p.val_fraction = j.value("val_fraction", p.val_fraction);
        p.reestimate_tau = j.value("reestimate_tau", p.reestimate_tau);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::usage, std::string("protocol: ") + e.what());
    }
    p.validate();
    return p;
}

inline Grid grid_from_json(const nlohmann::json& j) {
    data::check_known_keys(j, {"learning_rate", "f_hidden", "g_hidden"}, "grid");
    Grid g;
    try {
        g.learning_rate = j.value("learning_rate", g.learning_rate);
        g.f_hidden = j.value("f_hidden", g.f_hidden);
        g.g_hidden = j.value("g_hidden", g.g_hidden);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::usage, std::string("grid: ") + e.what());
    }
    return g;
}

// ---------------------------------------------------------------------------
// Data access with an audit trail

struct Revealed {
    Vector y;
    std::vector<std::string> time;
};

// Everything a protocol run reads goes through this interface. observe(n)
// hands the model rows [0, n); reveal_target(lo, hi) hands the scorer the
// true targets of rows [lo, hi) after a forecast has been made.
class DataAccess {
public:
    virtual ~DataAccess() = default;
    virtual std::size_t length() const = 0;
    virtual data::Dataset observe(std::size_t end) = 0;
    virtual Revealed reveal_target(std::size_t lo, std::size_t hi) = 0;
};

class FullAccess : public DataAccess {
public:
    explicit FullAccess(const data::Dataset& ds) : ds_(ds) {}
    std::size_t length() const override { return ds_.length(); }
    data::Dataset observe(std::size_t end) override { return ds_.prefix(end); }
    Revealed reveal_target(std::size_t lo, std::size_t hi) override {
        if (hi > ds_.length() || lo > hi) fail(ErrorKind::invariant, "reveal beyond dataset end");
        Revealed r;
        r.y = ds_.target.segment(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo));
        r.time.assign(ds_.time_index.begin() + static_cast<std::ptrdiff_t>(lo),
                      ds_.time_index.begin() + static_cast<std::ptrdiff_t>(hi));
        return r;
    }

private:
    const data::Dataset& ds_;
};

// Logs every access. A run is leak-free when, for every reveal starting at
// row lo, each observation since the previous reveal ended at or before lo.
class TrackedAccess : public FullAccess {
public:
    struct Event {
        bool reveal = false;
        std::size_t lo = 0;
        std::size_t hi = 0;  // observe: rows [0, hi)
    };

    using FullAccess::FullAccess;

    data::Dataset observe(std::size_t end) override {
        events_.push_back({false, 0, end});
        return FullAccess::observe(end);
    }
    Revealed reveal_target(std::size_t lo, std::size_t hi) override {
        events_.push_back({true, lo, hi});
        return FullAccess::reveal_target(lo, hi);
    }

    const std::vector<Event>& events() const { return events_; }

    // Number of observations that read at or beyond the origin of the
    // forecast they served.
    std::size_t violations() const {
        std::size_t bad = 0;
        std::vector<std::size_t> pending;
        for (const auto& e : events_) {
            if (!e.reveal) {
                pending.push_back(e.hi);
                continue;
            }
            for (std::size_t end : pending)
                if (end > e.lo) ++bad;
            pending.clear();
        }
        return bad;
    }

    std::size_t reveals() const {
        return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [](const Event& e) { return e.reveal; }));
    }

private:
    std::vector<Event> events_;
};

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    std::string protocol;
    std::vector<metrics::Record> records;
    metrics::Summary summary;
    nlohmann::json manifest = nlohmann::json::object();
    align::AlignmentResult alignment;   // final alignment (standard/oracle) or last step (realtime)
    std::map<std::string, std::size_t> param_counts;
};

// Optional checkpoint sink: called with a relative name and parameters.
class CheckpointSink {
public:
    explicit CheckpointSink(std::filesystem::path dir) : dir_(std::move(dir)) {}
    void save(const std::string& name, const seq::ParamSet& params) const {
        std::filesystem::create_directories(dir_);
        std::ofstream out(dir_ / (name + ".params"));
        if (!out) fail(ErrorKind::io, "cannot write checkpoint " + name);
        seq::save_params(out, params);
    }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

namespace detail {

inline bool has_method(const ExperimentConfig& cfg, const std::string& m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

inline nlohmann::json scaler_json(const data::Scaler& s, const data::Dataset& ds) {
    auto col = [](const data::ColumnStats& c) {
        return nlohmann::json{{"mean", c.mean}, {"std", c.std}, {"passthrough", c.passthrough}};
    };
    nlohmann::json j{{"target", col(s.target)}, {"features", nlohmann::json::object()}};
    for (std::size_t d = 0; d < s.features.size(); ++d) j["features"][ds.feature_names[d]] = col(s.features[d]);
    return j;
}

inline void append_records(std::vector<metrics::Record>& out, const std::string& protocol, const std::string& method,
                           std::uint64_t seed, const std::string& split, std::size_t anchor, const Revealed& truth,
                           const Vector& pred) {
    for (Eigen::Index h = 0; h < pred.size(); ++h) {
        metrics::Record r;
        r.protocol = protocol;
        r.method = method;
        r.seed = seed;
        r.split = split;
        r.anchor = anchor;
        r.time = truth.time[static_cast<std::size_t>(h)];
        r.h = static_cast<int>(h) + 1;
        r.y_true = truth.y(h);
        r.y_pred = pred(h);
        out.push_back(r);
    }
}

inline void sort_records(std::vector<metrics::Record>& records) {
    std::stable_sort(records.begin(), records.end(), [](const metrics::Record& a, const metrics::Record& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.anchor != b.anchor) return a.anchor < b.anchor;
        return a.h < b.h;
    });
}

struct Tuned {
    fps::TrainConfig cfg;
    int epochs = 1;
    double val_loss = 0.0;
    std::size_t grid_index = 0;
};

// Grid search on train -> validation; keeps the configuration with the
// lowest validation forecasting loss and the epoch at which it was reached.
template <class Fit>
Tuned tune(const std::vector<fps::TrainConfig>& grid, Fit&& fit) {
    Tuned best;
    best.val_loss = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        fps::LossReport rep = fit(grid[i]);
        double v = rep.val_ts.empty() ? std::numeric_limits<double>::infinity()
                                      : rep.val_ts[static_cast<std::size_t>(rep.chosen_epoch - 1)];
        if (i == 0 || v < best.val_loss) {
            best.cfg = grid[i];
            best.epochs = std::max(1, rep.chosen_epoch);
            best.val_loss = v;
            best.grid_index = i;
        }
    }
    return best;
}

inline fps::TrainConfig final_config(const Tuned& t, std::uint64_t seed) {
    fps::TrainConfig c = t.cfg;
    c.epochs = t.epochs;
    c.patience = 0;
    c.seed = seed;
    return c;
}

}  // namespace detail

// Standard protocol (and the oracle comparison when `with_oracle`): tune on
// train -> validation, retrain on train + validation with the tuned
// hyperparameters and epoch count, score on the test range.
inline EvalReport run_split_protocol(const data::Dataset& ds, const ExperimentConfig& cfg, bool with_oracle,
                                     const CheckpointSink* sink = nullptr) {
    cfg.validate();
    const std::string protocol = with_oracle ? "oracle" : "standard";
    const int L = cfg.L, H = cfg.H;
    const auto split = data::split_standard(ds.length(), cfg.train_ratio, cfg.val_ratio);
    if (split.train.size() < static_cast<std::size_t>(L + H) || split.val.size() == 0 || split.test.size() == 0)
        fail(ErrorKind::data, "insufficient data for the chronological split");
    const bool want_fps = with_oracle || detail::has_method(cfg, "fps");
    const bool want_erm = with_oracle || detail::has_method(cfg, "erm");
    if (want_fps && ds.num_performative() == 0) fail(ErrorKind::data, "FPS requires at least one performative feature");
    const auto grid = cfg.grid.expand(cfg.train);
    const auto seeds = cfg.seeds();

    EvalReport report;
    report.protocol = protocol;
    nlohmann::json& man = report.manifest;
    man["protocol"] = protocol;
    man["split"] = {{"train", {split.train.lo, split.train.hi}},
                    {"val", {split.val.lo, split.val.hi}},
                    {"test", {split.test.lo, split.test.hi}}};
    man["seeds"] = seeds;

    // Tuning stage: statistics and alignment from the training range.
    auto [tune_scaled, tune_scaler] = data::fit_apply_scaler(ds, split.train.hi);
    // Final stage: statistics and alignment from train + validation.
    const Range final_range{0, split.val.hi};
    auto [final_scaled, final_scaler] = data::fit_apply_scaler(ds, final_range.hi);
    man["scaler"] = detail::scaler_json(final_scaler, ds);
    man["scaler_flagged"] = final_scaler.flagged(ds);

    std::vector<int> tune_tau, final_tau;
    if (want_fps) {
        auto a_tune = align::align_all(tune_scaled, split.train, H, cfg.metric);
        tune_tau = a_tune.taus();
        report.alignment = align::align_all(final_scaled, final_range, H, cfg.metric);
        final_tau = report.alignment.taus();
        man["alignment_tuning"] = align::to_json(a_tune);
        man["alignment"] = align::to_json(report.alignment);
    }

    // Anchors: every test window; the oracle comparison keeps only anchors
    // whose ground-truth delayed windows exist.
    auto test = data::make_eval_windows(final_scaled, L, H, final_tau, split.test);
    if (with_oracle) std::erase_if(test, [](const data::WindowSample& s) { return !s.x_dr.has_value(); });
    if (test.empty()) fail(ErrorKind::data, with_oracle ? "no eligible anchors" : "no test windows");
    man["anchors"] = test.size();

    auto truth_of = [&](std::size_t t) {
        Revealed r;
        r.y = ds.target.segment(static_cast<Eigen::Index>(t + 1), H);
        r.time.assign(ds.time_index.begin() + static_cast<std::ptrdiff_t>(t + 1),
                      ds.time_index.begin() + static_cast<std::ptrdiff_t>(t + 1 + static_cast<std::size_t>(H)));
        return r;
    };
    auto emit = [&](const std::string& method, const Matrix& preds) {
        for (std::size_t i = 0; i < test.size(); ++i)
            detail::append_records(report.records, protocol, method, cfg.train.seed, "test", test[i].t,
                                   truth_of(test[i].t), preds.row(static_cast<Eigen::Index>(i)).transpose());
    };
    auto tuned_json = [](const detail::Tuned& t) {
        return nlohmann::json{{"config", fps::to_json(t.cfg)},
                              {"epochs", t.epochs},
                              {"val_loss", t.val_loss},
                              {"grid_index", t.grid_index}};
    };

    auto fps_like = [&](const std::string& name, bool oracle) {
        auto train_w = data::make_windows(tune_scaled, L, H, tune_tau, split.train);
        auto val_w = data::make_eval_windows(tune_scaled, L, H, tune_tau, split.val);
        auto fit = [&](const fps::TrainConfig& c) {
            auto m = fps::make_fps_model(L, H, ds.num_features(), ds.num_performative(), tune_tau, c);
            m.scaler = tune_scaler;
            return oracle ? fps::fit_oracle(std::move(m), train_w, val_w, c).second
                          : fps::fit_fps(std::move(m), train_w, val_w, c).second;
        };
        detail::Tuned t = detail::tune(grid, fit);
        auto final_w = data::make_windows(final_scaled, L, H, final_tau, final_range);
        std::vector<fps::FpsModel> members;
        for (auto seed : seeds) {
            auto c = detail::final_config(t, seed);
            auto m = fps::make_fps_model(L, H, ds.num_features(), ds.num_performative(), final_tau, c);
            m.scaler = final_scaler;
            auto fitted = oracle ? fps::fit_oracle(std::move(m), final_w, {}, c).first
                                 : fps::fit_fps(std::move(m), final_w, {}, c).first;
            if (sink) {
                sink->save(name + "_seed" + std::to_string(seed) + "_f", fitted.f_params);
                sink->save(name + "_seed" + std::to_string(seed) + "_g", fitted.g_params);
            }
            members.push_back(std::move(fitted));
        }
        Matrix preds(static_cast<Eigen::Index>(test.size()), H);
        preds.setZero();
        for (const auto& m : members)
            preds += oracle ? fps::predict_oracle_batch(m, test) : fps::predict_batch(m, test);
        preds /= static_cast<double>(members.size());
        report.param_counts[name] = members.front().param_count();
        man["methods"][name] = tuned_json(t);
        man["methods"][name]["tau"] = final_tau;
        man["methods"][name]["config_hash"] = members.front().config_hash;
        man["methods"][name]["param_count"] = members.front().param_count();
        emit(name, preds);
    };

    if (want_erm) {
        auto train_w = data::make_windows(tune_scaled, L, H, {}, split.train);
        auto val_w = data::make_eval_windows(tune_scaled, L, H, {}, split.val);
        auto fit = [&](const fps::TrainConfig& c) {
            auto m = fps::make_erm_model(L, H, ds.num_features(), c);
            m.scaler = tune_scaler;
            return fps::fit_erm(std::move(m), train_w, val_w, c).second;
        };
        detail::Tuned t = detail::tune(grid, fit);
        auto final_w = data::make_windows(final_scaled, L, H, {}, final_range);
        std::vector<fps::ErmModel> members;
        for (auto seed : seeds) {
            auto c = detail::final_config(t, seed);
            auto m = fps::make_erm_model(L, H, ds.num_features(), c);
            m.scaler = final_scaler;
            auto fitted = fps::fit_erm(std::move(m), final_w, {}, c).first;
            if (sink) sink->save("erm_seed" + std::to_string(seed) + "_g", fitted.g_params);
            members.push_back(std::move(fitted));
        }
        Matrix preds = fps::ensemble_predict_batch(std::span<const fps::ErmModel>(members), test);
        report.param_counts["erm"] = members.front().param_count();
        man["methods"]["erm"] = tuned_json(t);
        man["methods"]["erm"]["config_hash"] = members.front().config_hash;
        man["methods"]["erm"]["param_count"] = members.front().param_count();
        emit("erm", preds);
    }
    if (want_fps) fps_like("fps", false);
    if (with_oracle) fps_like("oracle", true);

    detail::sort_records(report.records);
    report.summary = metrics::summarize(report.records, protocol);
    return report;
}

inline EvalReport run_standard(const data::Dataset& ds, const ExperimentConfig& cfg,
                               const CheckpointSink* sink = nullptr) {
    return run_split_protocol(ds, cfg, false, sink);
}

inline EvalReport run_oracle(const data::Dataset& ds, const ExperimentConfig& cfg, const CheckpointSink* sink = nullptr) {
    return run_split_protocol(ds, cfg, true, sink);
}

// ---------------------------------------------------------------------------
// Real-time protocol

inline std::vector<std::size_t> realtime_schedule(std::size_t T, const ExperimentConfig& cfg) {
    const auto& p = cfg.protocol;
    std::size_t start = p.start > 0 ? p.start : static_cast<std::size_t>(0.6 * static_cast<double>(T));
    const std::size_t min_start = static_cast<std::size_t>(cfg.L + cfg.H);
    if (start < min_start)
        fail(ErrorKind::usage, "realtime start " + std::to_string(start) + " leaves less than L+H history");
    std::vector<std::size_t> out;
    for (std::size_t t0 = start; t0 + static_cast<std::size_t>(cfg.H) < T; t0 += p.stride) out.push_back(t0);
    if (out.empty()) fail(ErrorKind::data, "schedule empty");
    return out;
}

namespace detail {

struct RealtimePass {
    std::vector<metrics::Record> records;
    nlohmann::json steps = nlohmann::json::array();
    align::AlignmentResult last_alignment;
    std::map<std::string, std::size_t> param_counts;
};

inline RealtimePass realtime_pass(DataAccess& access, const ExperimentConfig& cfg, const fps::TrainConfig& base,
                                  const CheckpointSink* sink) {
    const int L = cfg.L, H = cfg.H;
    const auto schedule = realtime_schedule(access.length(), cfg);
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(cfg.protocol.val_fraction * static_cast<double>(schedule.size())));
    const auto seeds = cfg.seeds();
    const bool want_fps = has_method(cfg, "fps");
    const bool want_erm = has_method(cfg, "erm");

    RealtimePass pass;
    std::vector<std::optional<fps::FpsModel>> fps_prev(seeds.size());
    std::vector<std::optional<fps::ErmModel>> erm_prev(seeds.size());
    std::vector<int> frozen_tau;

    for (std::size_t step = 0; step < schedule.size(); ++step) {
        const std::size_t t0 = schedule[step];
        const std::string split = step < n_val ? "val" : "test";
        data::Dataset seen = access.observe(t0 + 1);
        auto [scaled, scaler] = data::fit_apply_scaler(seen, t0 + 1);
        nlohmann::json info{{"step", step}, {"t0", t0}, {"split", split}};

        Vector fps_pred, erm_pred;
        const data::WindowSample input = data::lookback_sample(scaled, L, t0);

        if (want_fps) {
            if (seen.num_performative() == 0) fail(ErrorKind::data, "FPS requires at least one performative feature");
            std::vector<int> tau;
            if (cfg.protocol.reestimate_tau || frozen_tau.empty()) {
                pass.last_alignment = align::align_all(scaled, {0, t0 + 1}, H, cfg.metric);
                tau = pass.last_alignment.taus();
                if (frozen_tau.empty()) frozen_tau = tau;
            }
            if (!cfg.protocol.reestimate_tau) tau = frozen_tau;
            auto windows = data::make_windows(scaled, L, H, tau, {0, t0 + 1});
            if (windows.empty()) fail(ErrorKind::data, "no training windows at step " + std::to_string(step));
            Vector acc = Vector::Zero(H);
            for (std::size_t si = 0; si < seeds.size(); ++si) {
                fps::TrainConfig c = base;
                c.seed = seeds[si];
                c.patience = 0;
                const bool warm = cfg.protocol.warm_start && fps_prev[si].has_value();
                c.epochs = warm ? cfg.protocol.retrain_epochs : base.epochs;
                fps::FpsModel m = warm ? *fps_prev[si]
                                       : fps::make_fps_model(L, H, seen.num_features(), seen.num_performative(), tau, c);
                m.tau = tau;
                m.f_arch.shift = tau;
                m.scaler = scaler;
                if (c.epochs > 0) m = fps::fit_fps(std::move(m), windows, {}, c).first;
                m.fitted = true;
                acc += fps::predict(m, input);
                if (sink) {
                    std::string stem = "step" + std::to_string(step) + "_fps_seed" + std::to_string(seeds[si]);
                    sink->save(stem + "_f", m.f_params);
                    sink->save(stem + "_g", m.g_params);
                }
                pass.param_counts["fps"] = m.param_count();
                fps_prev[si] = std::move(m);
            }
            fps_pred = acc / static_cast<double>(seeds.size());
            info["tau"] = tau;
        }
        if (want_erm) {
            auto windows = data::make_windows(scaled, L, H, {}, {0, t0 + 1});
            if (windows.empty()) fail(ErrorKind::data, "no training windows at step " + std::to_string(step));
            Vector acc = Vector::Zero(H);
            for (std::size_t si = 0; si < seeds.size(); ++si) {
                fps::TrainConfig c = base;
                c.seed = seeds[si];
                c.patience = 0;
                const bool warm = cfg.protocol.warm_start && erm_prev[si].has_value();
                c.epochs = warm ? cfg.protocol.retrain_epochs : base.epochs;
                fps::ErmModel m = warm ? *erm_prev[si] : fps::make_erm_model(L, H, seen.num_features(), c);
                m.scaler = scaler;
                if (c.epochs > 0) m = fps::fit_erm(std::move(m), windows, {}, c).first;
                m.fitted = true;
                acc += fps::predict(m, input);
                if (sink) sink->save("step" + std::to_string(step) + "_erm_seed" + std::to_string(seeds[si]) + "_g", m.g_params);
                pass.param_counts["erm"] = m.param_count();
                erm_prev[si] = std::move(m);
            }
            erm_pred = acc / static_cast<double>(seeds.size());
        }

        // Forecasts are fixed; only now is the truth revealed.
        Revealed truth = access.reveal_target(t0 + 1, t0 + 1 + static_cast<std::size_t>(H));
        if (want_erm) append_records(pass.records, "realtime", "erm", base.seed, split, t0, truth, erm_pred);
        if (want_fps) append_records(pass.records, "realtime", "fps", base.seed, split, t0, truth, fps_pred);
        info["scaler"] = scaler_json(scaler, seen);
        pass.steps.push_back(std::move(info));
    }
    sort_records(pass.records);
    return pass;
}

}  // namespace detail

// Rolling-origin retraining. With more than one grid point, each point runs
// the full schedule and the one with the lowest mean validation NMAE (over
// methods, on the validation steps) is reported.
inline EvalReport run_realtime(DataAccess& access, const ExperimentConfig& cfg, const CheckpointSink* sink = nullptr) {
    cfg.validate();
    const auto grid = cfg.grid.expand(cfg.train);
    std::optional<detail::RealtimePass> best;
    std::size_t best_index = 0;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<double> scores;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto pass = detail::realtime_pass(access, cfg, grid[i], grid.size() == 1 ? sink : nullptr);
        double score = 0;
        auto val = metrics::aggregate(pass.records, "val");
        for (const auto& [m, a] : val) score += a.nmae;
        score = val.empty() ? 0.0 : score / static_cast<double>(val.size());
        scores.push_back(score);
        if (!best || score < best_score) {
            best_score = score;
            best_index = i;
            best = std::move(pass);
        }
    }
    EvalReport report;
    report.protocol = "realtime";
    report.records = std::move(best->records);
    report.summary = metrics::summarize(report.records, "realtime");
    report.alignment = best->last_alignment;
    report.param_counts = best->param_counts;
    report.manifest["protocol"] = "realtime";
    report.manifest["schedule"] = realtime_schedule(access.length(), cfg);
    report.manifest["steps"] = best->steps;
    report.manifest["grid_index"] = best_index;
    report.manifest["grid_val_nmae"] = scores;
    report.manifest["chosen_config"] = fps::to_json(grid[best_index]);
    report.manifest["seeds"] = cfg.seeds();
    report.manifest["param_counts"] = best->param_counts;
    return report;
}

inline EvalReport run_realtime(const data::Dataset& ds, const ExperimentConfig& cfg, const CheckpointSink* sink = nullptr) {
    FullAccess access(ds);
    return run_realtime(access, cfg, sink);
}

// ---------------------------------------------------------------------------
// Persistence

// t, time, y_true and one prediction column per method, one row per
// (anchor, h).
inline void write_plot_csv(const std::vector<metrics::Record>& records, const std::filesystem::path& path) {
    std::vector<std::string> methods;
    std::map<std::tuple<std::size_t, int>, std::pair<const metrics::Record*, std::map<std::string, double>>> rows;
    for (const auto& r : records) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        auto& row = rows[{r.anchor, r.h}];
        row.first = &r;
        row.second[r.method] = r.y_pred;
    }
    std::sort(methods.begin(), methods.end());
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << "anchor,h,t,time,split,y_true";
    for (const auto& m : methods) out << ',' << m;
    out << '\n';
    for (const auto& [key, row] : rows) {
        const auto& [anchor, h] = key;
        out << anchor << ',' << h << ',' << anchor + static_cast<std::size_t>(h) << ',' << row.first->time << ','
            << row.first->split << ',' << data::format_double(row.first->y_true);
        for (const auto& m : methods) {
            auto it = row.second.find(m);
            out << ',' << (it == row.second.end() ? std::string{} : data::format_double(it->second));
        }
        out << '\n';
    }
}

// Run directory layout:
//   config.json      effective configuration (replayable)
//   manifest.json    provenance: seeds, hashes, tau, scaler stats, epochs
//   alignment.json   alignment used by the final models (when FPS ran)
//   records.csv      one row per (method, sequence, h)
//   summary.json     aggregates recomputable from records.csv
//   plot.csv         t, y_true and per-method predictions
//   checkpoints/     parameter files
inline void write_run(const std::filesystem::path& dir, const EvalReport& report, const nlohmann::json& config) {
    std::filesystem::create_directories(dir);
    auto dump = [&](const char* name, const nlohmann::json& j) {
        std::ofstream out(dir / name);
        if (!out) fail(ErrorKind::io, "cannot write " + (dir / name).string());
        out << j.dump(2) << '\n';
    };
    dump("config.json", config);
    nlohmann::json man = report.manifest;
    man["config_hash"] = fps::fnv1a_hex(config.dump());
    man["param_counts"] = report.param_counts;
    dump("manifest.json", man);
    if (!report.alignment.features.empty()) dump("alignment.json", align::to_json(report.alignment));
    metrics::write_records_csv(report.records, dir / "records.csv");
    dump("summary.json", metrics::to_json(report.summary));
    write_plot_csv(report.records, dir / "plot.csv");
}

}  // namespace perfts::harness
