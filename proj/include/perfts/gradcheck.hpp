#pragma once

// Finite-difference verification of the reverse-mode gradients for every
// model graph used in training.

#include "perfts/autodiff.hpp"
#include "perfts/seqmodel.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace perfts::gradcheck {

struct CaseResult {
    std::string kind;        // seq2seq | seq2seq-shift | forecaster | composite
    std::string worst_param;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

struct SuiteResult {
    std::vector<CaseResult> cases;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is near zero from turning round-off into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// loss(tape, bound params) must build a scalar loss on the given tape.
using LossFn = std::function<ad::Var(ad::Tape&, const seq::BoundParams&)>;

inline CaseResult check(const std::string& kind, const seq::ParamSet& params, const LossFn& loss, double eps = 1e-5) {
    ad::Tape tape;
    auto bound = seq::bind(tape, params);
    ad::Var l = loss(tape, bound);
    tape.backward(l);
    seq::Gradients g = seq::collect_gradients(bound);

    auto value_at = [&](const seq::ParamSet& p) {
        ad::Tape t;
        auto b = seq::bind(t, p);
        return loss(t, b).value()(0, 0);
    };

    CaseResult res;
    res.kind = kind;
    seq::ParamSet probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (Eigen::Index k = 0; k < params[i].size(); ++k) {
            const double orig = params[i].data()[k];
            probe[i].data()[k] = orig + eps;
            const double up = value_at(probe);
            probe[i].data()[k] = orig - eps;
            const double down = value_at(probe);
            probe[i].data()[k] = orig;
            const double numeric = (up - down) / (2 * eps);
            const double err = relative_error(g[i].data()[k], numeric);
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = params.name(i);
            }
        }
    }
    return res;
}

namespace detail {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Random non-zero bias terms so every gate operates away from the origin.
inline void perturb_biases(seq::ParamSet& p, std::mt19937_64& rng) {
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.name(i).ends_with(".b")) p[i] = random_matrix(rng, p[i].rows(), p[i].cols(), 0.3);
}

inline std::vector<Matrix> random_steps(std::mt19937_64& rng, int L, Eigen::Index B, Eigen::Index K) {
    std::vector<Matrix> s;
    for (int k = 0; k < L; ++k) s.push_back(random_matrix(rng, B, K));
    return s;
}

inline std::vector<ad::Var> as_constants(ad::Tape& tape, const std::vector<Matrix>& ms) {
    std::vector<ad::Var> out;
    for (const auto& m : ms) out.push_back(tape.constant(m));
    return out;
}

// Weighted sum of all outputs: a generic scalar with dense upstream gradients.
inline ad::Var project(ad::Tape& tape, std::span<const ad::Var> outs, const std::vector<Matrix>& weights) {
    ad::Var total = ad::sum(ad::hadamard(outs[0], tape.constant(weights[0])));
    for (std::size_t k = 1; k < outs.size(); ++k)
        total = ad::add(total, ad::sum(ad::hadamard(outs[k], tape.constant(weights[k]))));
    return total;
}

}  // namespace detail

// One random configuration; `variant` selects the graph (mod 4).
inline CaseResult random_case(std::uint64_t seed, int variant) {
    std::mt19937_64 rng(seed);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const int L = pick(1, 6), K = pick(1, 3), h = pick(1, 4), B = pick(1, 3);

    switch (variant % 4) {
        case 0:
        case 1: {
            seq::Seq2SeqArch arch;
            arch.input_dim = K;
            arch.hidden_dim = h;
            arch.output_dim = variant % 4 == 0 ? pick(1, 3) : pick(1, K);
            if (variant % 4 == 1) {
                for (int p = 0; p < arch.output_dim; ++p) {
                    arch.shift.push_back(pick(0, L));
                    arch.source.push_back(pick(0, K - 1));
                }
            }
            auto params = arch.init(seed ^ 0x5bd1e995ULL);
            detail::perturb_biases(params, rng);
            auto inputs = detail::random_steps(rng, L, B, K);
            auto weights = detail::random_steps(rng, L, B, arch.output_dim);
            return check(variant % 4 == 0 ? "seq2seq" : "seq2seq-shift", params,
                         [&](ad::Tape& tape, const seq::BoundParams& w) {
                             auto out = seq::seq2seq_forward(arch, w, detail::as_constants(tape, inputs));
                             return detail::project(tape, out, weights);
                         });
        }
        case 2: {
            seq::ForecasterArch arch{K, h, pick(1, 4)};
            auto params = arch.init(seed ^ 0x5bd1e995ULL);
            detail::perturb_biases(params, rng);
            auto inputs = detail::random_steps(rng, L, B, K);
            Matrix target = detail::random_matrix(rng, B, arch.horizon);
            return check("forecaster", params, [&](ad::Tape& tape, const seq::BoundParams& w) {
                ad::Var yhat = seq::forecaster_forward(arch, w, detail::as_constants(tape, inputs));
                return ad::mse(yhat, tape.constant(target));
            });
        }
        default: {
            // Translation model feeding the forecaster, trained on the weighted
            // sum of both losses; parameters of both live in one set.
            const int P = pick(1, K), extra = pick(0, 2);
            seq::Seq2SeqArch f;
            f.input_dim = P;
            f.hidden_dim = h;
            f.output_dim = P;
            for (int p = 0; p < P; ++p) {
                f.shift.push_back(pick(0, L));
                f.source.push_back(p);
            }
            seq::ForecasterArch g{P + extra + 1, pick(1, 4), pick(1, 4)};
            auto fp = f.init(seed ^ 0x1234ULL);
            auto gp = g.init(seed ^ 0x4321ULL);
            detail::perturb_biases(fp, rng);
            detail::perturb_biases(gp, rng);
            seq::ParamSet joint;
            for (std::size_t i = 0; i < fp.size(); ++i) joint.add("f/" + fp.name(i), fp[i]);
            for (std::size_t i = 0; i < gp.size(); ++i) joint.add("g/" + gp.name(i), gp[i]);
            auto perf = detail::random_steps(rng, L, B, P);
            auto side = detail::random_steps(rng, L, B, extra + 1);
            auto dr = detail::random_steps(rng, L, B, P);
            Matrix target = detail::random_matrix(rng, B, g.horizon);
            std::uniform_real_distribution<double> u(0.1, 2.0);
            const double l1 = u(rng), l2 = u(rng);
            return check("composite", joint, [&](ad::Tape& tape, const seq::BoundParams& w) {
                seq::BoundParams fw{w.tape, {}, nullptr}, gw{w.tape, {}, nullptr};
                seq::ParamSet fnames, gnames;
                for (std::size_t i = 0; i < w.source->size(); ++i) {
                    const std::string& n = w.source->name(i);
                    (n.starts_with("f/") ? fnames : gnames).add(n.substr(2), (*w.source)[i]);
                    (n.starts_with("f/") ? fw : gw).vars.push_back(w.vars[i]);
                }
                fw.source = &fnames;
                gw.source = &gnames;
                auto xdr = seq::seq2seq_forward(f, fw, detail::as_constants(tape, perf));
                std::vector<ad::Var> steps;
                ad::Var dt;
                for (int k = 0; k < L; ++k) {
                    steps.push_back(ad::concat_cols({xdr[static_cast<std::size_t>(k)], tape.constant(side[static_cast<std::size_t>(k)])}));
                    ad::Var term = ad::mse(xdr[static_cast<std::size_t>(k)], tape.constant(dr[static_cast<std::size_t>(k)]));
                    dt = k == 0 ? term : ad::add(dt, term);
                }
                ad::Var ts = ad::mse(seq::forecaster_forward(g, gw, steps), tape.constant(target));
                return ad::combine(l1, ad::scale(dt, 1.0 / L), l2, ts);
            });
        }
    }
}

// `configs` random configurations cycling through all four graph kinds.
inline SuiteResult run_suite(std::size_t configs = 50, std::uint64_t seed = 0) {
    SuiteResult out;
    for (std::size_t i = 0; i < configs; ++i) {
        auto c = random_case(seed * 1000003ULL + i + 1, static_cast<int>(i));
        out.max_rel_error = std::max(out.max_rel_error, c.max_rel_error);
        out.checked += c.checked;
        out.cases.push_back(std::move(c));
    }
    return out;
}

}  // namespace perfts::gradcheck
