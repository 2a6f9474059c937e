#pragma once

// Recurrent building blocks for the translation and forecasting models:
// named parameter sets, a tanh encoder-decoder, a GRU forecaster head,
// first-order optimizers and a flat text checkpoint format.

#include "perfts/autodiff.hpp"
#include "perfts/error.hpp"
#include "perfts/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace perfts::seq {

template <class Tag>
class NamedTensors {
public:
    void add(std::string name, Matrix value) {
        if (find(name) >= 0) fail(ErrorKind::invariant, "duplicate tensor '" + name + "'");
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
    }

    std::size_t size() const { return names_.size(); }
    bool empty() const { return names_.empty(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Matrix& operator[](std::size_t i) { return values_[i]; }
    const Matrix& operator[](std::size_t i) const { return values_[i]; }

    Matrix& at(const std::string& name) { return values_[index_of(name)]; }
    const Matrix& at(const std::string& name) const { return values_[index_of(name)]; }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
        return n;
    }

    template <class Other>
    bool same_layout(const NamedTensors<Other>& o) const {
        if (o.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i)
            if (o.name(i) != names_[i] || o[i].rows() != values_[i].rows() || o[i].cols() != values_[i].cols())
                return false;
        return true;
    }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](const Matrix& m) { return m.allFinite(); });
    }

    // Zero tensors with this layout, possibly under another tag.
    template <class Other = Tag>
    NamedTensors<Other> zeros_like() const {
        NamedTensors<Other> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Matrix::Zero(values_[i].rows(), values_[i].cols()));
        return out;
    }

    bool operator==(const NamedTensors& o) const { return names_ == o.names_ && values_ == o.values_; }

private:
    std::ptrdiff_t find(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        return it == names_.end() ? -1 : it - names_.begin();
    }
    std::size_t index_of(const std::string& name) const {
        auto i = find(name);
        if (i < 0) fail(ErrorKind::invariant, "no tensor named '" + name + "'");
        return static_cast<std::size_t>(i);
    }

    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

struct ParamTag {};
struct GradTag {};
using ParamSet = NamedTensors<ParamTag>;
using Gradients = NamedTensors<GradTag>;

// Parameters registered as leaves on a tape, in ParamSet order.
struct BoundParams {
    ad::Tape* tape = nullptr;
    std::vector<ad::Var> vars;
    const ParamSet* source = nullptr;

    ad::Var operator[](const std::string& name) const {
        for (std::size_t i = 0; i < source->size(); ++i)
            if (source->name(i) == name) return vars[i];
        fail(ErrorKind::invariant, "unbound parameter '" + name + "'");
    }
};

inline BoundParams bind(ad::Tape& tape, const ParamSet& params) {
    BoundParams b{&tape, {}, &params};
    for (std::size_t i = 0; i < params.size(); ++i) b.vars.push_back(tape.leaf(params[i]));
    return b;
}

inline Gradients collect_gradients(const BoundParams& bound) {
    Gradients g;
    for (std::size_t i = 0; i < bound.vars.size(); ++i) g.add(bound.source->name(i), bound.tape->grad(bound.vars[i]));
    return g;
}

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight matrices (fan_in =
// rows), zeros for names ending in ".b".
inline void init_uniform(ParamSet& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& m = params[i];
        const std::string& n = params.name(i);
        if (n.size() >= 2 && n.ends_with(".b")) {
            m.setZero();
            continue;
        }
        double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, m.rows())));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    }
}

// Converts an L x K single-sample input into L tape constants of shape 1 x K.
inline std::vector<ad::Var> sequence_constants(ad::Tape& tape, const Matrix& input) {
    std::vector<ad::Var> steps;
    for (Eigen::Index k = 0; k < input.rows(); ++k) steps.push_back(tape.constant(input.row(k)));
    return steps;
}

// ---------------------------------------------------------------------------
// Encoder-decoder
//
//   encoder  h_k = tanh(x_k W_in + h_{k-1} W_rec + b),  h_0 = 0
//   decoder  s_k = tanh(u_k V_in + s_{k-1} V_rec + c),  s_0 = h_L
//   output   o_k = s_k W_out + b_out  (+ u_k when shift-aligned)
//
// Plain mode feeds u_k = x_k. Shift-aligned mode feeds, for output p,
// u_k[p] = x_{min(k + shift[p], L-1)}[source[p]] and adds u_k back to the
// readout, so the decoder learns a correction to the shifted lookback.

struct Seq2SeqArch {
    int input_dim = 1;
    int hidden_dim = 8;
    int output_dim = 1;
    std::vector<int> shift;   // per output, empty for plain mode
    std::vector<int> source;  // per output, input column feeding it

    bool shift_aligned() const { return !shift.empty(); }
    int decoder_input_dim() const { return shift_aligned() ? output_dim : input_dim; }

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) fail(ErrorKind::invariant, "seq2seq dims must be >= 1");
        if (shift_aligned()) {
            if (shift.size() != static_cast<std::size_t>(output_dim) || source.size() != shift.size())
                fail(ErrorKind::invariant, "seq2seq shift/source size must equal output_dim");
            for (std::size_t p = 0; p < shift.size(); ++p)
                if (shift[p] < 0 || source[p] < 0 || source[p] >= input_dim)
                    fail(ErrorKind::invariant, "seq2seq shift/source out of range");
        }
    }

    // K h + h^2 + h  +  K_dec h + h^2 + h  +  h P + P
    std::size_t param_count() const {
        const std::size_t K = static_cast<std::size_t>(input_dim), h = static_cast<std::size_t>(hidden_dim),
                          P = static_cast<std::size_t>(output_dim), Kd = static_cast<std::size_t>(decoder_input_dim());
        return K * h + h * h + h + Kd * h + h * h + h + h * P + P;
    }

    ParamSet init(std::uint64_t seed) const {
        validate();
        const Eigen::Index K = input_dim, h = hidden_dim, P = output_dim, Kd = decoder_input_dim();
        ParamSet p;
        p.add("enc.W_in", Matrix::Zero(K, h));
        p.add("enc.W_rec", Matrix::Zero(h, h));
        p.add("enc.b", Matrix::Zero(1, h));
        p.add("dec.W_in", Matrix::Zero(Kd, h));
        p.add("dec.W_rec", Matrix::Zero(h, h));
        p.add("dec.b", Matrix::Zero(1, h));
        p.add("out.W", Matrix::Zero(h, P));
        p.add("out.b", Matrix::Zero(1, P));
        init_uniform(p, seed);
        return p;
    }
};

// steps: L nodes of shape B x K. Returns L nodes of shape B x P.
inline std::vector<ad::Var> seq2seq_forward(const Seq2SeqArch& arch, const BoundParams& w,
                                            std::span<const ad::Var> steps) {
    arch.validate();
    if (steps.empty()) fail(ErrorKind::invariant, "seq2seq: empty input sequence");
    ad::Tape& tape = *w.tape;
    const Eigen::Index B = steps.front().rows();
    for (const auto& s : steps)
        if (s.rows() != B || s.cols() != arch.input_dim) fail(ErrorKind::invariant, "seq2seq: input shape mismatch");
    const ad::Var eWi = w["enc.W_in"], eWr = w["enc.W_rec"], eb = w["enc.b"];
    const ad::Var dWi = w["dec.W_in"], dWr = w["dec.W_rec"], db = w["dec.b"];
    const ad::Var oW = w["out.W"], ob = w["out.b"];
    const int L = static_cast<int>(steps.size());

    ad::Var h = tape.constant(Matrix::Zero(B, arch.hidden_dim));
    for (const ad::Var& x : steps) h = ad::tanh(ad::add_row(ad::add(ad::matmul(x, eWi), ad::matmul(h, eWr)), eb));

    std::vector<ad::Var> out;
    ad::Var s = h;
    for (int k = 0; k < L; ++k) {
        ad::Var u;
        if (arch.shift_aligned()) {
            std::vector<ad::Var> cols;
            for (std::size_t p = 0; p < arch.shift.size(); ++p) {
                int src_step = std::min(k + arch.shift[p], L - 1);
                cols.push_back(ad::slice_cols(steps[static_cast<std::size_t>(src_step)], arch.source[p], 1));
            }
            u = cols.size() == 1 ? cols.front() : ad::concat_cols(std::span<const ad::Var>(cols));
        } else {
            u = steps[static_cast<std::size_t>(k)];
        }
        s = ad::tanh(ad::add_row(ad::add(ad::matmul(u, dWi), ad::matmul(s, dWr)), db));
        ad::Var o = ad::add_row(ad::matmul(s, oW), ob);
        if (arch.shift_aligned()) o = ad::add(o, u);
        out.push_back(o);
    }
    return out;
}

// Single sample: L x K input, L x P output.
inline Matrix forward_seq2seq(const Seq2SeqArch& arch, const ParamSet& params, const Matrix& input) {
    if (input.cols() != arch.input_dim) fail(ErrorKind::invariant, "seq2seq: input has wrong width");
    if (!input.allFinite()) fail(ErrorKind::invariant, "seq2seq: non-finite input");
    ad::Tape tape;
    BoundParams w = bind(tape, params);
    auto steps = sequence_constants(tape, input);
    auto out = seq2seq_forward(arch, w, steps);
    Matrix m(input.rows(), arch.output_dim);
    for (std::size_t k = 0; k < out.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = out[k].value().row(0);
    return m;
}

// ---------------------------------------------------------------------------
// GRU forecaster
//
//   z = sigmoid(x W_z + h U_z + b_z)
//   r = sigmoid(x W_r + h U_r + b_r)
//   n = tanh(x W_n + (r .* h) U_n + b_n)
//   h' = (1 - z) .* n + z .* h
//   yhat = h_L W_out + b_out   (length H)

struct ForecasterArch {
    int input_dim = 2;
    int hidden_dim = 8;
    int horizon = 8;

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1 || horizon < 1) fail(ErrorKind::invariant, "forecaster dims must be >= 1");
    }

    // 3 (K h + h^2 + h) + h H + H
    std::size_t param_count() const {
        const std::size_t K = static_cast<std::size_t>(input_dim), h = static_cast<std::size_t>(hidden_dim),
                          H = static_cast<std::size_t>(horizon);
        return 3 * (K * h + h * h + h) + h * H + H;
    }

    ParamSet init(std::uint64_t seed) const {
        validate();
        const Eigen::Index K = input_dim, h = hidden_dim, H = horizon;
        ParamSet p;
        for (const char* gate : {"z", "r", "n"}) {
            p.add(std::string("gru.W_") + gate, Matrix::Zero(K, h));
            p.add(std::string("gru.U_") + gate, Matrix::Zero(h, h));
            p.add(std::string("gru.") + gate + ".b", Matrix::Zero(1, h));
        }
        p.add("out.W", Matrix::Zero(h, H));
        p.add("out.b", Matrix::Zero(1, H));
        init_uniform(p, seed);
        return p;
    }
};

// steps: L nodes of shape B x K. Returns B x H.
inline ad::Var forecaster_forward(const ForecasterArch& arch, const BoundParams& w, std::span<const ad::Var> steps) {
    arch.validate();
    if (steps.empty()) fail(ErrorKind::invariant, "forecaster: empty input sequence");
    ad::Tape& tape = *w.tape;
    const Eigen::Index B = steps.front().rows();
    for (const auto& s : steps)
        if (s.rows() != B || s.cols() != arch.input_dim) fail(ErrorKind::invariant, "forecaster: input shape mismatch");
    const ad::Var Wz = w["gru.W_z"], Uz = w["gru.U_z"], bz = w["gru.z.b"];
    const ad::Var Wr = w["gru.W_r"], Ur = w["gru.U_r"], br = w["gru.r.b"];
    const ad::Var Wn = w["gru.W_n"], Un = w["gru.U_n"], bn = w["gru.n.b"];
    const ad::Var oW = w["out.W"], ob = w["out.b"];

    ad::Var h = tape.constant(Matrix::Zero(B, arch.hidden_dim));
    for (const ad::Var& x : steps) {
        ad::Var z = ad::sigmoid(ad::add_row(ad::add(ad::matmul(x, Wz), ad::matmul(h, Uz)), bz));
        ad::Var r = ad::sigmoid(ad::add_row(ad::add(ad::matmul(x, Wr), ad::matmul(h, Ur)), br));
        ad::Var n = ad::tanh(ad::add_row(ad::add(ad::matmul(x, Wn), ad::matmul(ad::hadamard(r, h), Un)), bn));
        h = ad::add(ad::hadamard(ad::one_minus(z), n), ad::hadamard(z, h));
    }
    return ad::add_row(ad::matmul(h, oW), ob);
}

inline Vector forward_forecast(const ForecasterArch& arch, const ParamSet& params, const Matrix& input) {
    if (input.cols() != arch.input_dim) fail(ErrorKind::invariant, "forecaster: input has wrong width");
    if (!input.allFinite()) fail(ErrorKind::invariant, "forecaster: non-finite input");
    ad::Tape tape;
    BoundParams w = bind(tape, params);
    auto steps = sequence_constants(tape, input);
    return forecaster_forward(arch, w, steps).value().row(0).transpose();
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, adam };

struct OptimState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip = 5.0;  // global-norm threshold, <= 0 disables
    std::uint64_t steps = 0;
    Gradients m, v;
};

inline OptimState make_optimizer(OptimizerKind kind, double lr, double clip) {
    OptimState s;
    s.kind = kind;
    s.learning_rate = lr;
    s.clip = clip;
    return s;
}

inline double global_norm(const Gradients& g) {
    double ss = 0;
    for (std::size_t i = 0; i < g.size(); ++i) ss += g[i].squaredNorm();
    return std::sqrt(ss);
}

inline Gradients clip_global_norm(Gradients g, double threshold) {
    if (threshold <= 0) return g;
    double n = global_norm(g);
    if (n > threshold) {
        double k = threshold / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= k;
    }
    return g;
}

inline void step(ParamSet& params, const Gradients& grads, OptimState& opt) {
    if (!params.same_layout(grads)) fail(ErrorKind::invariant, "optimizer: gradient layout does not match parameters");
    Gradients g = clip_global_norm(grads, opt.clip);
    if (!g.all_finite()) fail(ErrorKind::numeric, "diverged");
    ++opt.steps;
    if (opt.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= opt.learning_rate * g[i];
        return;
    }
    if (opt.m.empty()) {
        opt.m = params.zeros_like<GradTag>();
        opt.v = params.zeros_like<GradTag>();
    }
    if (!params.same_layout(opt.m)) fail(ErrorKind::invariant, "optimizer: moment layout does not match parameters");
    const double t = static_cast<double>(opt.steps);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g[i];
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g[i].cwiseProduct(g[i]);
        params[i].array() -= opt.learning_rate * (opt.m[i].array() / c1) / ((opt.v[i].array() / c2).sqrt() + opt.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   perfts-params 1
//   <tensor count>
//   <name> <rows> <cols>
//   <rows*cols values, row-major, %.17g>
//   ...

inline void save_params(std::ostream& out, const ParamSet& params) {
    out << "perfts-params 1\n" << params.size() << '\n';
    char buf[32];
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& m = params[i];
        out << params.name(i) << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
                out << buf << ((r == m.rows() - 1 && c == m.cols() - 1) ? '\n' : ' ');
            }
        if (m.size() == 0) out << '\n';
    }
}

inline ParamSet load_params(std::istream& in) {
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    if (!(in >> magic >> version >> count) || magic != "perfts-params" || version != 1)
        fail(ErrorKind::data, "not a perfts-params v1 checkpoint");
    ParamSet p;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) fail(ErrorKind::data, "corrupt checkpoint header");
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                std::string tok;
                if (!(in >> tok)) fail(ErrorKind::data, "truncated checkpoint");
                m(r, c) = std::strtod(tok.c_str(), nullptr);
            }
        p.add(std::move(name), std::move(m));
    }
    return p;
}

}  // namespace perfts::seq
