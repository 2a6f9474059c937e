#pragma once

// Matrix-valued reverse-mode differentiation.
//
// A Tape records nodes in creation order, which is already a topological
// order: every node's inputs exist before it does. backward() walks the
// nodes in reverse and accumulates adjoints.

#include "perfts/error.hpp"
#include "perfts/types.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace perfts::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Var leaf(Matrix v) { return push(std::move(v), {}, true); }
    Var constant(Matrix v) { return push(std::move(v), {}, false); }

    Var push(Matrix v, Backward backward, bool requires_grad) {
        nodes_.push_back(Node{std::move(v), Matrix{}, std::move(backward), requires_grad});
        return Var(this, nodes_.size() - 1);
    }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Adjoint of a node; zero matrix if nothing flowed into it.
    Matrix grad(Var v) const {
        const Node& n = nodes_[v.id()];
        if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void accumulate(std::size_t id, const Matrix& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    const Matrix& adjoint(std::size_t id) const { return nodes_[id].grad; }

    void backward(Var loss) {
        if (loss.tape() != this) fail(ErrorKind::invariant, "backward: variable from a different tape");
        const Matrix& v = nodes_[loss.id()].value;
        if (v.rows() != 1 || v.cols() != 1) fail(ErrorKind::invariant, "backward: loss must be scalar");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        nodes_[loss.id()].grad = Matrix::Ones(1, 1);
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, id);
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) fail(ErrorKind::invariant, "operands on different tapes");
    return *a.tape();
}

inline void check_shape(bool ok, const char* op) {
    if (!ok) fail(ErrorKind::invariant, std::string("shape mismatch in ") + op);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(a.cols() == b.rows(), "matmul");
    bool rg = t.requires_grad(a.id()) || t.requires_grad(b.id());
    std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value() * b.value(),
                  [ia, ib](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.adjoint(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                      if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                  },
                  rg);
}

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(),
                  [ia, ib](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.adjoint(self));
                      tp.accumulate(ib, tp.adjoint(self));
                  },
                  t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(),
                  [ia, ib](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.adjoint(self));
                      tp.accumulate(ib, -tp.adjoint(self));
                  },
                  t.requires_grad(ia) || t.requires_grad(ib));
}

// a (n x m) + broadcast row vector b (1 x m)
inline Var add_row(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(b.rows() == 1 && a.cols() == b.cols(), "add_row");
    std::size_t ia = a.id(), ib = b.id();
    Matrix v = a.value().rowwise() + b.value().row(0);
    return t.push(std::move(v),
                  [ia, ib](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, tp.adjoint(self));
                      tp.accumulate(ib, tp.adjoint(self).colwise().sum());
                  },
                  t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var hadamard(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
    std::size_t ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()),
                  [ia, ib](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.adjoint(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                  },
                  t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var scale(Var a, double k) {
    Tape& t = *a.tape();
    std::size_t ia = a.id();
    return t.push(a.value() * k, [ia, k](Tape& tp, std::size_t self) { tp.accumulate(ia, tp.adjoint(self) * k); },
                  t.requires_grad(ia));
}

// 1 - a
inline Var one_minus(Var a) {
    Tape& t = *a.tape();
    std::size_t ia = a.id();
    Matrix v = (1.0 - a.value().array()).matrix();
    return t.push(std::move(v), [ia](Tape& tp, std::size_t self) { tp.accumulate(ia, -tp.adjoint(self)); },
                  t.requires_grad(ia));
}

inline Var tanh(Var a) {
    Tape& t = *a.tape();
    std::size_t ia = a.id();
    Matrix v = a.value().array().tanh().matrix();
    return t.push(std::move(v),
                  [ia](Tape& tp, std::size_t self) {
                      const Matrix& y = tp.value(self);
                      tp.accumulate(ia, tp.adjoint(self).cwiseProduct((1.0 - y.array().square()).matrix()));
                  },
                  t.requires_grad(ia));
}

inline Var sigmoid(Var a) {
    Tape& t = *a.tape();
    std::size_t ia = a.id();
    Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return t.push(std::move(v),
                  [ia](Tape& tp, std::size_t self) {
                      const Matrix& y = tp.value(self);
                      tp.accumulate(ia, tp.adjoint(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
                  },
                  t.requires_grad(ia));
}

// Horizontal concatenation of equal-height blocks.
inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) fail(ErrorKind::invariant, "concat_cols of nothing");
    Tape& t = *parts.front().tape();
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    bool rg = false;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        detail::check_shape(p.tape() == &t && p.rows() == rows, "concat_cols");
        cols += p.cols();
        rg = rg || t.requires_grad(p.id());
        ids.push_back(p.id());
    }
    Matrix v(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return t.push(std::move(v),
                  [ids](Tape& tp, std::size_t self) {
                      const Matrix& g = tp.adjoint(self);
                      Eigen::Index o = 0;
                      for (std::size_t id : ids) {
                          const Eigen::Index c = tp.value(id).cols();
                          if (tp.requires_grad(id)) tp.accumulate(id, g.middleCols(o, c));
                          o += c;
                      }
                  },
                  rg);
}

inline Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    Tape& t = *a.tape();
    detail::check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
    std::size_t ia = a.id();
    Eigen::Index rows = a.rows(), cols = a.cols();
    return t.push(a.value().middleCols(start, count),
                  [ia, start, count, rows, cols](Tape& tp, std::size_t self) {
                      Matrix g = Matrix::Zero(rows, cols);
                      g.middleCols(start, count) = tp.adjoint(self);
                      tp.accumulate(ia, g);
                  },
                  t.requires_grad(ia));
}

inline Var sum(Var a) {
    Tape& t = *a.tape();
    std::size_t ia = a.id();
    Eigen::Index rows = a.rows(), cols = a.cols();
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    return t.push(std::move(v),
                  [ia, rows, cols](Tape& tp, std::size_t self) {
                      tp.accumulate(ia, Matrix::Constant(rows, cols, tp.adjoint(self)(0, 0)));
                  },
                  t.requires_grad(ia));
}

// Sum over entries of w .* (a - b)^2 divided by `denom`. With w = 1 and
// denom = a.size() this is the mean squared error.
inline Var weighted_sse(Var a, Var b, const Matrix& w, double denom) {
    Tape& t = detail::same_tape(a, b);
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols() && w.rows() == a.rows() && w.cols() == a.cols(),
                        "weighted_sse");
    if (!(denom > 0)) fail(ErrorKind::invariant, "weighted_sse: non-positive normalizer");
    std::size_t ia = a.id(), ib = b.id();
    Matrix diff = a.value() - b.value();
    Matrix v(1, 1);
    v(0, 0) = (w.array() * diff.array().square()).sum() / denom;
    return t.push(std::move(v),
                  [ia, ib, diff = std::move(diff), w, denom](Tape& tp, std::size_t self) {
                      Matrix g = (2.0 * tp.adjoint(self)(0, 0) / denom) * w.cwiseProduct(diff);
                      tp.accumulate(ia, g);
                      tp.accumulate(ib, -g);
                  },
                  t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var mse(Var a, Var b) {
    return weighted_sse(a, b, Matrix::Ones(a.rows(), a.cols()), static_cast<double>(a.value().size()));
}

// Scalar combination k1 * a + k2 * b of two 1x1 nodes.
inline Var combine(double k1, Var a, double k2, Var b) { return add(scale(a, k1), scale(b, k2)); }

}  // namespace perfts::ad
