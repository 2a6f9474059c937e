#pragma once

// Two-stage performative forecaster and the single-stage baseline.
//
//   xdr_hat = f(X^L_perf)                     delay translation, L x P
//   yhat    = g(xdr_hat, X^L_nonperf, Y^L)    forecaster, length H
//   loss    = lambda1 * MSE(xdr_hat, X^DR) + lambda2 * MSE(yhat, Y^H)
//
// The forecaster always consumes the estimated windows during training,
// validation and testing. Only the oracle path feeds it ground truth.

#include "perfts/align.hpp"
#include "perfts/autodiff.hpp"
#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/seqmodel.hpp"
#include "perfts/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace perfts::fps {

using data::WindowSample;

struct TrainConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    int epochs = 100;
    double learning_rate = 5e-3;
    int batch_size = 32;
    seq::OptimizerKind optimizer = seq::OptimizerKind::adam;
    double clip = 5.0;
    std::uint64_t seed = 0;
    int patience = 0;  // epochs without validation improvement before stopping; 0 disables
    int f_hidden = 16;
    int g_hidden = 16;
    bool two_phase = false;  // pretrain f on the translation loss, then fit g with f frozen
    int pretrain_epochs = 0; // two-phase only; 0 means `epochs`

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) fail(ErrorKind::usage, "lambda1 and lambda2 must be >= 0");
        if (epochs < 1) fail(ErrorKind::usage, "epochs must be >= 1");
        if (batch_size < 1) fail(ErrorKind::usage, "batch_size must be >= 1");
        if (!(learning_rate > 0)) fail(ErrorKind::usage, "learning_rate must be > 0");
        if (f_hidden < 1 || g_hidden < 1) fail(ErrorKind::usage, "hidden sizes must be >= 1");
        if (patience < 0 || pretrain_epochs < 0) fail(ErrorKind::usage, "patience and pretrain_epochs must be >= 0");
    }
};

inline std::string to_string(seq::OptimizerKind k) { return k == seq::OptimizerKind::sgd ? "sgd" : "adam"; }

inline seq::OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return seq::OptimizerKind::sgd;
    if (s == "adam") return seq::OptimizerKind::adam;
    fail(ErrorKind::usage, "unknown optimizer '" + s + "'");
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lambda1", c.lambda1},   {"lambda2", c.lambda2},
            {"epochs", c.epochs},     {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size}, {"optimizer", to_string(c.optimizer)},
            {"clip", c.clip},         {"seed", c.seed},
            {"patience", c.patience}, {"f_hidden", c.f_hidden},
            {"g_hidden", c.g_hidden}, {"two_phase", c.two_phase},
            {"pretrain_epochs", c.pretrain_epochs}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    data::check_known_keys(j, {"lambda1", "lambda2", "epochs", "learning_rate", "batch_size", "optimizer", "clip", "seed",
                               "patience", "f_hidden", "g_hidden", "two_phase", "pretrain_epochs"},
                           "train config");
    try {
        c.lambda1 = j.value("lambda1", c.lambda1);
        c.lambda2 = j.value("lambda2", c.lambda2);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
        c.clip = j.value("clip", c.clip);
        c.seed = j.value("seed", c.seed);
        c.patience = j.value("patience", c.patience);
        c.f_hidden = j.value("f_hidden", c.f_hidden);
        c.g_hidden = j.value("g_hidden", c.g_hidden);
        c.two_phase = j.value("two_phase", c.two_phase);
        c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::usage, std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// FNV-1a over a canonical text form.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Hash of everything that defines a model except the seed.
inline std::string config_hash(const TrainConfig& c, int L, int H, std::size_t D, std::size_t P, const std::string& kind) {
    nlohmann::json j = to_json(c);
    j.erase("seed");
    j["L"] = L;
    j["H"] = H;
    j["D"] = D;
    j["P"] = P;
    j["kind"] = kind;
    return fnv1a_hex(j.dump());
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Models

struct FpsModel {
    int L = 0;
    int H = 0;
    std::size_t D = 0;
    std::size_t P = 0;
    std::vector<int> tau;
    seq::Seq2SeqArch f_arch;
    seq::ParamSet f_params;
    seq::ForecasterArch g_arch;
    seq::ParamSet g_params;
    data::Scaler scaler;
    std::string config_hash;
    bool fitted = false;

    std::size_t param_count() const { return f_arch.param_count() + g_arch.param_count(); }
};

struct ErmModel {
    int L = 0;
    int H = 0;
    std::size_t D = 0;
    seq::ForecasterArch g_arch;
    seq::ParamSet g_params;
    data::Scaler scaler;
    std::string config_hash;
    bool fitted = false;

    std::size_t param_count() const { return g_arch.param_count(); }
};

// f: P performative columns in, P delayed columns out, each output decoding
// from its own column shifted by tau_d. g: P + (D - P) + 1 inputs.
inline FpsModel make_fps_model(int L, int H, std::size_t D, std::size_t P, std::vector<int> tau, const TrainConfig& cfg) {
    if (P == 0) fail(ErrorKind::data, "FPS requires at least one performative feature");
    if (P > D) fail(ErrorKind::invariant, "more performative features than features");
    data::check_tau(tau, P, H);
    FpsModel m;
    m.L = L;
    m.H = H;
    m.D = D;
    m.P = P;
    m.tau = std::move(tau);
    m.f_arch.input_dim = static_cast<int>(P);
    m.f_arch.hidden_dim = cfg.f_hidden;
    m.f_arch.output_dim = static_cast<int>(P);
    m.f_arch.shift = m.tau;
    m.f_arch.source.resize(P);
    std::iota(m.f_arch.source.begin(), m.f_arch.source.end(), 0);
    m.g_arch = {static_cast<int>(D) + 1, cfg.g_hidden, H};
    m.f_params = m.f_arch.init(derive_seed(cfg.seed, 1));
    m.g_params = m.g_arch.init(derive_seed(cfg.seed, 2));
    m.config_hash = config_hash(cfg, L, H, D, P, "fps");
    return m;
}

// Same forecaster architecture and initialization stream as the FPS g.
inline ErmModel make_erm_model(int L, int H, std::size_t D, const TrainConfig& cfg) {
    ErmModel m;
    m.L = L;
    m.H = H;
    m.D = D;
    m.g_arch = {static_cast<int>(D) + 1, cfg.g_hidden, H};
    m.g_params = m.g_arch.init(derive_seed(cfg.seed, 2));
    m.config_hash = config_hash(cfg, L, H, D, 0, "erm");
    return m;
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
    std::size_t size = 0;
    std::vector<Matrix> perf;     // L x (B x P)
    std::vector<Matrix> nonperf;  // L x (B x (D-P))
    std::vector<Matrix> features; // L x (B x D)
    std::vector<Matrix> y_look;   // L x (B x 1)
    Matrix x_dr;                  // B x (L*P), step-major blocks
    Matrix dr_mask;               // B x (L*P), 1 where the sample has x_dr
    std::size_t with_dr = 0;
    Matrix y_hor;                 // B x H, empty when samples lack horizons
};

inline Batch make_batch(std::span<const WindowSample* const> samples, std::size_t P) {
    if (samples.empty()) fail(ErrorKind::invariant, "empty batch");
    const auto B = static_cast<Eigen::Index>(samples.size());
    const Eigen::Index L = samples.front()->x_look.rows();
    const Eigen::Index D = samples.front()->x_look.cols();
    const Eigen::Index H = samples.front()->y_hor.size();
    const auto iP = static_cast<Eigen::Index>(P);
    Batch b;
    b.size = samples.size();
    b.x_dr = Matrix::Zero(B, L * iP);
    b.dr_mask = Matrix::Zero(B, L * iP);
    if (H > 0) b.y_hor.resize(B, H);
    for (Eigen::Index k = 0; k < L; ++k) {
        b.features.emplace_back(B, D);
        b.y_look.emplace_back(B, 1);
    }
    for (Eigen::Index i = 0; i < B; ++i) {
        const WindowSample& s = *samples[static_cast<std::size_t>(i)];
        if (s.x_look.rows() != L || s.x_look.cols() != D || s.y_hor.size() != H)
            fail(ErrorKind::invariant, "batch samples have inconsistent shapes");
        for (Eigen::Index k = 0; k < L; ++k) {
            b.features[static_cast<std::size_t>(k)].row(i) = s.x_look.row(k);
            b.y_look[static_cast<std::size_t>(k)](i, 0) = s.y_look(k);
        }
        if (H > 0) b.y_hor.row(i) = s.y_hor.transpose();
        if (s.x_dr && iP > 0) {
            if (s.x_dr->rows() != L || s.x_dr->cols() != iP) fail(ErrorKind::invariant, "x_dr has wrong shape");
            for (Eigen::Index k = 0; k < L; ++k) b.x_dr.block(i, k * iP, 1, iP) = s.x_dr->row(k);
            b.dr_mask.row(i).setOnes();
            ++b.with_dr;
        }
    }
    for (Eigen::Index k = 0; k < L; ++k) {
        const Matrix& f = b.features[static_cast<std::size_t>(k)];
        b.perf.push_back(f.leftCols(iP));
        b.nonperf.push_back(f.rightCols(D - iP));
    }
    return b;
}

inline std::vector<const WindowSample*> pointers(const std::vector<WindowSample>& v) {
    std::vector<const WindowSample*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

// ---------------------------------------------------------------------------
// Graphs

struct FpsGraph {
    std::vector<ad::Var> xdr_hat;  // L x (B x P)
    ad::Var yhat;                  // B x H
};

inline std::vector<ad::Var> constants(ad::Tape& tape, const std::vector<Matrix>& ms) {
    std::vector<ad::Var> out;
    for (const auto& m : ms) out.push_back(tape.constant(m));
    return out;
}

// Forecaster input rows: [delayed perf | non-perf | y].
inline std::vector<ad::Var> forecaster_inputs(ad::Tape& tape, const std::vector<ad::Var>& delayed, const Batch& b) {
    std::vector<ad::Var> steps;
    for (std::size_t k = 0; k < delayed.size(); ++k) {
        std::vector<ad::Var> parts{delayed[k]};
        if (b.nonperf[k].cols() > 0) parts.push_back(tape.constant(b.nonperf[k]));
        parts.push_back(tape.constant(b.y_look[k]));
        steps.push_back(ad::concat_cols(std::span<const ad::Var>(parts)));
    }
    return steps;
}

inline FpsGraph fps_forward(const FpsModel& m, const seq::BoundParams& fw, const seq::BoundParams& gw, const Batch& b) {
    ad::Tape& tape = *fw.tape;
    FpsGraph g;
    auto perf = constants(tape, b.perf);
    g.xdr_hat = seq::seq2seq_forward(m.f_arch, fw, perf);
    g.yhat = seq::forecaster_forward(m.g_arch, gw, forecaster_inputs(tape, g.xdr_hat, b));
    return g;
}

// Forecaster on the ground-truth delayed windows; every sample needs x_dr.
inline ad::Var oracle_forward(const FpsModel& m, const seq::BoundParams& gw, const Batch& b) {
    if (b.with_dr != b.size) fail(ErrorKind::data, "oracle prediction needs ground-truth x_dr for every sample");
    ad::Tape& tape = *gw.tape;
    const auto iP = static_cast<Eigen::Index>(m.P);
    std::vector<ad::Var> delayed;
    for (int k = 0; k < m.L; ++k) delayed.push_back(tape.constant(b.x_dr.middleCols(k * iP, iP)));
    return seq::forecaster_forward(m.g_arch, gw, forecaster_inputs(tape, delayed, b));
}

inline ad::Var erm_forward(const ErmModel& m, const seq::BoundParams& gw, const Batch& b) {
    ad::Tape& tape = *gw.tape;
    std::vector<ad::Var> steps;
    for (std::size_t k = 0; k < b.features.size(); ++k)
        steps.push_back(ad::concat_cols({tape.constant(b.features[k]), tape.constant(b.y_look[k])}));
    return seq::forecaster_forward(m.g_arch, gw, steps);
}

inline ad::Var translation_loss(const FpsGraph& g, const Batch& b, int L, std::size_t P) {
    ad::Var stacked = g.xdr_hat.size() == 1 ? g.xdr_hat.front() : ad::concat_cols(std::span<const ad::Var>(g.xdr_hat));
    ad::Tape& tape = *stacked.tape();
    return ad::weighted_sse(stacked, tape.constant(b.x_dr), b.dr_mask,
                            static_cast<double>(b.with_dr) * L * static_cast<double>(P));
}

// MSE between f(X^L_perf) and X^DR over batch, steps and features.
inline double loss_dt(const FpsModel& m, std::span<const WindowSample* const> samples) {
    Batch b = make_batch(samples, m.P);
    if (b.with_dr != b.size) fail(ErrorKind::data, "no translation targets");
    ad::Tape tape;
    auto fw = seq::bind(tape, m.f_params);
    auto perf = constants(tape, b.perf);
    FpsGraph g;
    g.xdr_hat = seq::seq2seq_forward(m.f_arch, fw, perf);
    return translation_loss(g, b, m.L, m.P).value()(0, 0);
}

// MSE between g(x_dr_hat, X^L_nonperf, Y^L) and Y^H, with x_dr_hat given
// per sample as an L x P matrix.
inline double loss_ts(const FpsModel& m, std::span<const WindowSample* const> samples,
                      std::span<const Matrix> x_dr_hat) {
    if (x_dr_hat.size() != samples.size()) fail(ErrorKind::invariant, "x_dr_hat count does not match batch");
    Batch b = make_batch(samples, m.P);
    if (b.y_hor.size() == 0) fail(ErrorKind::invariant, "loss_ts needs horizon targets");
    ad::Tape tape;
    auto gw = seq::bind(tape, m.g_params);
    std::vector<ad::Var> delayed;
    for (int k = 0; k < m.L; ++k) {
        Matrix step(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(m.P));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Matrix& xh = x_dr_hat[i];
            if (xh.rows() != m.L || xh.cols() != static_cast<Eigen::Index>(m.P))
                fail(ErrorKind::invariant, "x_dr_hat has wrong shape");
            step.row(static_cast<Eigen::Index>(i)) = xh.row(k);
        }
        delayed.push_back(tape.constant(step));
    }
    ad::Var yhat = seq::forecaster_forward(m.g_arch, gw, forecaster_inputs(tape, delayed, b));
    return ad::mse(yhat, tape.constant(b.y_hor)).value()(0, 0);
}

// ---------------------------------------------------------------------------
// Training

struct StepLog {
    double l_dt = 0.0;
    double l_ts = 0.0;
    double total = 0.0;
    bool has_dt = false;
};

struct LossReport {
    std::vector<double> train_dt;     // per epoch, mean over batches with targets
    std::vector<double> train_ts;
    std::vector<double> train_total;
    std::vector<double> val_ts;       // empty when no validation windows
    std::vector<StepLog> steps;
    int chosen_epoch = 0;             // 1-based; 0 when no epoch ran
    int epochs_run = 0;
};

template <class Tag>
seq::NamedTensors<Tag> join(const seq::NamedTensors<Tag>& f, const seq::NamedTensors<Tag>& g) {
    seq::NamedTensors<Tag> out;
    for (std::size_t i = 0; i < f.size(); ++i) out.add("f/" + f.name(i), f[i]);
    for (std::size_t i = 0; i < g.size(); ++i) out.add("g/" + g.name(i), g[i]);
    return out;
}

inline void split_into(const seq::ParamSet& joint, seq::ParamSet& f, seq::ParamSet& g) {
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = joint[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = joint[f.size() + i];
}

namespace detail {

inline std::vector<std::vector<const WindowSample*>> batches(const std::vector<const WindowSample*>& all,
                                                             std::size_t batch_size, std::mt19937_64& rng) {
    std::vector<const WindowSample*> order = all;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<const WindowSample*>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return out;
}

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Tracks the best validation score and decides when to stop.
template <class Snapshot>
struct Selector {
    int patience = 0;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    Snapshot snapshot;

    // Returns true when training should stop.
    bool observe(int epoch, double val, const Snapshot& current) {
        if (val < best) {
            best = val;
            best_epoch = epoch;
            snapshot = current;
        }
        return patience > 0 && epoch - best_epoch >= patience;
    }
};

}  // namespace detail

enum class ForecasterInput { estimated, ground_truth };

// Validation forecasting loss, with the forecaster reading the estimated
// delayed windows.
inline double fps_val_loss(const FpsModel& m, const std::vector<WindowSample>& val) {
    auto ptrs = pointers(val);
    Batch b = make_batch(ptrs, m.P);
    ad::Tape tape;
    auto fw = seq::bind(tape, m.f_params);
    auto gw = seq::bind(tape, m.g_params);
    FpsGraph g = fps_forward(m, fw, gw, b);
    return ad::mse(g.yhat, tape.constant(b.y_hor)).value()(0, 0);
}

inline double oracle_val_loss(const FpsModel& m, const std::vector<WindowSample>& val) {
    std::vector<const WindowSample*> ptrs;
    for (const auto& s : val)
        if (s.x_dr) ptrs.push_back(&s);
    if (ptrs.empty()) return std::numeric_limits<double>::infinity();
    Batch b = make_batch(ptrs, m.P);
    ad::Tape tape;
    auto gw = seq::bind(tape, m.g_params);
    return ad::mse(oracle_forward(m, gw, b), tape.constant(b.y_hor)).value()(0, 0);
}

namespace detail {

struct FpsSnapshot {
    seq::ParamSet f, g;
};

// One pass over the training batches. `update_f` / `update_g` select which
// parameter sets the optimizer moves; `lambda1` / `lambda2` weight the loss.
inline void fps_epoch(FpsModel& m, const std::vector<const WindowSample*>& train, const TrainConfig& cfg,
                      double lambda1, double lambda2, bool update_f, bool update_g, ForecasterInput input,
                      std::mt19937_64& rng, seq::OptimState& opt, LossReport& report, bool log_epoch) {
    std::vector<double> dts, tss, totals;
    for (const auto& batch : batches(train, static_cast<std::size_t>(cfg.batch_size), rng)) {
        Batch b = make_batch(batch, m.P);
        if (input == ForecasterInput::ground_truth && b.with_dr != b.size) {
            std::vector<const WindowSample*> kept;
            for (auto* s : batch)
                if (s->x_dr) kept.push_back(s);
            if (kept.empty()) continue;
            b = make_batch(kept, m.P);
        }
        ad::Tape tape;
        auto fw = seq::bind(tape, m.f_params);
        auto gw = seq::bind(tape, m.g_params);
        FpsGraph g = fps_forward(m, fw, gw, b);
        ad::Var yhat = input == ForecasterInput::estimated ? g.yhat : oracle_forward(m, gw, b);
        ad::Var l_ts = ad::mse(yhat, tape.constant(b.y_hor));
        StepLog log;
        log.l_ts = l_ts.value()(0, 0);
        ad::Var total;
        if (b.with_dr > 0) {
            ad::Var l_dt = translation_loss(g, b, m.L, m.P);
            log.l_dt = l_dt.value()(0, 0);
            log.has_dt = true;
            total = ad::combine(lambda1, l_dt, lambda2, l_ts);
        } else {
            total = ad::scale(l_ts, lambda2);
        }
        log.total = total.value()(0, 0);
        if (!std::isfinite(log.total)) fail(ErrorKind::numeric, "diverged");
        tape.backward(total);
        seq::Gradients gf = seq::collect_gradients(fw);
        seq::Gradients gg = seq::collect_gradients(gw);
        if (update_f && update_g) {
            seq::ParamSet joint = join(m.f_params, m.g_params);
            seq::step(joint, join(gf, gg), opt);
            split_into(joint, m.f_params, m.g_params);
        } else if (update_f) {
            seq::step(m.f_params, gf, opt);
        } else if (update_g) {
            seq::step(m.g_params, gg, opt);
        }
        if (log.has_dt) dts.push_back(log.l_dt);
        tss.push_back(log.l_ts);
        totals.push_back(log.total);
        report.steps.push_back(log);
    }
    if (log_epoch) {
        report.train_dt.push_back(mean_of(dts));
        report.train_ts.push_back(mean_of(tss));
        report.train_total.push_back(mean_of(totals));
    }
}

inline std::pair<FpsModel, LossReport> fit_fps_impl(FpsModel m, const std::vector<WindowSample>& train,
                                                    const std::vector<WindowSample>& val, const TrainConfig& cfg,
                                                    ForecasterInput input) {
    cfg.validate();
    if (train.empty()) fail(ErrorKind::data, "empty training set");
    auto ptrs = pointers(train);
    std::mt19937_64 rng(derive_seed(cfg.seed, 3));
    LossReport report;
    auto val_loss = [&](const FpsModel& mm) {
        return input == ForecasterInput::estimated ? fps_val_loss(mm, val) : oracle_val_loss(mm, val);
    };

    if (cfg.two_phase) {
        auto opt_f = seq::make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.clip);
        int pre = cfg.pretrain_epochs > 0 ? cfg.pretrain_epochs : cfg.epochs;
        for (int e = 0; e < pre; ++e)
            fps_epoch(m, ptrs, cfg, 1.0, 0.0, true, false, input, rng, opt_f, report, false);
    }

    auto opt = seq::make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.clip);
    Selector<FpsSnapshot> sel;
    sel.patience = cfg.patience;
    for (int e = 1; e <= cfg.epochs; ++e) {
        if (cfg.two_phase)
            fps_epoch(m, ptrs, cfg, 0.0, 1.0, false, true, input, rng, opt, report, true);
        else
            fps_epoch(m, ptrs, cfg, cfg.lambda1, cfg.lambda2, true, true, input, rng, opt, report, true);
        report.epochs_run = e;
        if (!val.empty()) {
            double v = val_loss(m);
            report.val_ts.push_back(v);
            if (sel.observe(e, v, {m.f_params, m.g_params})) break;
        }
    }
    if (!val.empty() && sel.best_epoch > 0) {
        m.f_params = sel.snapshot.f;
        m.g_params = sel.snapshot.g;
        report.chosen_epoch = sel.best_epoch;
    } else {
        report.chosen_epoch = report.epochs_run;
    }
    m.fitted = true;
    return {std::move(m), std::move(report)};
}

}  // namespace detail

// Joint (or two-phase) training of f and g; returns the best-validation
// snapshot when validation windows are given, else the final parameters.
inline std::pair<FpsModel, LossReport> fit_fps(FpsModel m, const std::vector<WindowSample>& train,
                                               const std::vector<WindowSample>& val, const TrainConfig& cfg) {
    return detail::fit_fps_impl(std::move(m), train, val, cfg, ForecasterInput::estimated);
}

// Oracle arm: g is trained on ground-truth delayed windows (samples without
// x_dr are skipped); f still learns the translation loss.
inline std::pair<FpsModel, LossReport> fit_oracle(FpsModel m, const std::vector<WindowSample>& train,
                                                  const std::vector<WindowSample>& val, const TrainConfig& cfg) {
    return detail::fit_fps_impl(std::move(m), train, val, cfg, ForecasterInput::ground_truth);
}

inline std::pair<ErmModel, LossReport> fit_erm(ErmModel m, const std::vector<WindowSample>& train,
                                               const std::vector<WindowSample>& val, const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) fail(ErrorKind::data, "empty training set");
    auto ptrs = pointers(train);
    std::mt19937_64 rng(derive_seed(cfg.seed, 3));
    auto opt = seq::make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.clip);
    LossReport report;
    auto val_loss = [&](const ErmModel& mm) {
        auto vp = pointers(val);
        Batch b = make_batch(vp, 0);
        ad::Tape tape;
        auto gw = seq::bind(tape, mm.g_params);
        return ad::mse(erm_forward(mm, gw, b), tape.constant(b.y_hor)).value()(0, 0);
    };
    detail::Selector<seq::ParamSet> sel;
    sel.patience = cfg.patience;
    for (int e = 1; e <= cfg.epochs; ++e) {
        std::vector<double> tss;
        for (const auto& batch : detail::batches(ptrs, static_cast<std::size_t>(cfg.batch_size), rng)) {
            Batch b = make_batch(batch, 0);
            ad::Tape tape;
            auto gw = seq::bind(tape, m.g_params);
            ad::Var loss = ad::mse(erm_forward(m, gw, b), tape.constant(b.y_hor));
            double l = loss.value()(0, 0);
            if (!std::isfinite(l)) fail(ErrorKind::numeric, "diverged");
            tape.backward(loss);
            seq::step(m.g_params, seq::collect_gradients(gw), opt);
            tss.push_back(l);
            report.steps.push_back({0.0, l, l, false});
        }
        report.train_ts.push_back(detail::mean_of(tss));
        report.train_total.push_back(report.train_ts.back());
        report.train_dt.push_back(0.0);
        report.epochs_run = e;
        if (!val.empty()) {
            double v = val_loss(m);
            report.val_ts.push_back(v);
            if (sel.observe(e, v, m.g_params)) break;
        }
    }
    if (!val.empty() && sel.best_epoch > 0) {
        m.g_params = sel.snapshot;
        report.chosen_epoch = sel.best_epoch;
    } else {
        report.chosen_epoch = report.epochs_run;
    }
    m.fitted = true;
    return {std::move(m), std::move(report)};
}

// Scales the data with statistics from train_range.lo..train_range.hi (the
// scaler always starts at row 0), builds windows and trains.
inline std::pair<FpsModel, LossReport> train_fps(const data::Dataset& ds, const align::AlignmentResult& alignment,
                                                 const TrainConfig& cfg, int L, int H, Range train_range,
                                                 Range val_range = {}) {
    if (ds.num_performative() == 0) fail(ErrorKind::data, "FPS requires at least one performative feature");
    auto [scaled, scaler] = data::fit_apply_scaler(ds, train_range.hi);
    auto tau = alignment.taus();
    auto train = data::make_windows(scaled, L, H, tau, train_range);
    auto val = val_range.size() ? data::make_eval_windows(scaled, L, H, tau, val_range) : std::vector<WindowSample>{};
    FpsModel m = make_fps_model(L, H, ds.num_features(), ds.num_performative(), tau, cfg);
    m.scaler = scaler;
    return fit_fps(std::move(m), train, val, cfg);
}

inline std::pair<ErmModel, LossReport> train_erm(const data::Dataset& ds, const TrainConfig& cfg, int L, int H,
                                                 Range train_range, Range val_range = {}) {
    auto [scaled, scaler] = data::fit_apply_scaler(ds, train_range.hi);
    auto train = data::make_windows(scaled, L, H, {}, train_range);
    auto val = val_range.size() ? data::make_eval_windows(scaled, L, H, {}, val_range) : std::vector<WindowSample>{};
    ErmModel m = make_erm_model(L, H, ds.num_features(), cfg);
    m.scaler = scaler;
    return fit_erm(std::move(m), train, val, cfg);
}

// ---------------------------------------------------------------------------
// Prediction. Samples are in the model's scaled space; outputs of the
// unsuffixed functions are in original units.

inline void require_fitted(bool fitted) {
    if (!fitted) fail(ErrorKind::invariant, "unfitted model");
}

inline Matrix predict_scaled(const FpsModel& m, std::span<const WindowSample* const> samples) {
    require_fitted(m.fitted);
    Batch b = make_batch(samples, m.P);
    ad::Tape tape;
    auto fw = seq::bind(tape, m.f_params);
    auto gw = seq::bind(tape, m.g_params);
    return fps_forward(m, fw, gw, b).yhat.value();
}

inline Matrix predict_oracle_scaled(const FpsModel& m, std::span<const WindowSample* const> samples) {
    require_fitted(m.fitted);
    Batch b = make_batch(samples, m.P);
    ad::Tape tape;
    auto gw = seq::bind(tape, m.g_params);
    return oracle_forward(m, gw, b).value();
}

inline Matrix predict_scaled(const ErmModel& m, std::span<const WindowSample* const> samples) {
    require_fitted(m.fitted);
    Batch b = make_batch(samples, 0);
    ad::Tape tape;
    auto gw = seq::bind(tape, m.g_params);
    return erm_forward(m, gw, b).value();
}

// Estimated delayed windows for one sample (L x P, scaled units).
inline Matrix translate(const FpsModel& m, const WindowSample& s) {
    return seq::forward_seq2seq(m.f_arch, m.f_params, s.x_look.leftCols(static_cast<Eigen::Index>(m.P)));
}

template <class Model>
Matrix descale(const Model& m, Matrix scaled) {
    for (Eigen::Index i = 0; i < scaled.rows(); ++i)
        scaled.row(i) = m.scaler.invert_target(scaled.row(i).transpose()).transpose();
    return scaled;
}

template <class Model>
Vector predict(const Model& m, const WindowSample& s) {
    const WindowSample* p = &s;
    return descale(m, predict_scaled(m, std::span<const WindowSample* const>(&p, 1))).row(0).transpose();
}

inline Vector predict_oracle(const FpsModel& m, const WindowSample& s) {
    if (!s.x_dr) fail(ErrorKind::data, "oracle prediction needs ground-truth x_dr");
    const WindowSample* p = &s;
    return descale(m, predict_oracle_scaled(m, std::span<const WindowSample* const>(&p, 1))).row(0).transpose();
}

template <class Model>
Matrix predict_batch(const Model& m, const std::vector<WindowSample>& samples) {
    auto ptrs = pointers(samples);
    return descale(m, predict_scaled(m, ptrs));
}

inline Matrix predict_oracle_batch(const FpsModel& m, const std::vector<WindowSample>& samples) {
    auto ptrs = pointers(samples);
    return descale(m, predict_oracle_scaled(m, ptrs));
}

// Element-wise mean over members that differ only by seed.
template <class Model>
void check_homogeneous(std::span<const Model> models) {
    if (models.empty()) fail(ErrorKind::invariant, "ensemble needs at least one model");
    for (const auto& m : models)
        if (m.config_hash != models.front().config_hash) fail(ErrorKind::invariant, "heterogeneous ensemble configs");
    if constexpr (std::is_same_v<Model, FpsModel>) {
        for (const auto& m : models)
            if (m.tau != models.front().tau) fail(ErrorKind::invariant, "heterogeneous ensemble tau");
    }
}

template <class Model>
Vector ensemble_predict(std::span<const Model> models, const WindowSample& s) {
    check_homogeneous(models);
    Vector acc = predict(models.front(), s);
    for (std::size_t i = 1; i < models.size(); ++i) acc += predict(models[i], s);
    return acc / static_cast<double>(models.size());
}

template <class Model>
Matrix ensemble_predict_batch(std::span<const Model> models, const std::vector<WindowSample>& samples) {
    check_homogeneous(models);
    Matrix acc = predict_batch(models.front(), samples);
    for (std::size_t i = 1; i < models.size(); ++i) acc += predict_batch(models[i], samples);
    return acc / static_cast<double>(models.size());
}

}  // namespace perfts::fps
