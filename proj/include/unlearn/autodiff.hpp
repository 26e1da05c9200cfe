#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "unlearn/errors.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// Reverse-mode autodiff on an eagerly evaluated tape. The op set is the
// closed collection needed by this artifact: matmul, add, sub, mul,
// scalar-scale, sum, mean, square, sqrt, exp, log, tanh, sigmoid, softplus,
// concat, slice, clamp, plus batch broadcasting for elementwise binaries.
//
// Nodes are created in topological order; backward() walks the tape in
// reverse. Construction and backward are single-threaded per graph.

class Graph;

struct Value {
    Graph* g = nullptr;
    int id = -1;

    const Tensor& val() const;
};

namespace detail {

enum class Op {
    Leaf, Matmul, Add, Sub, Mul, Scale, Sum, Mean,
    Square, Sqrt, Exp, Log, Tanh, Sigmoid, Softplus,
    Concat, Slice, Clamp,
};

// How an elementwise binary pairs up operand shapes.
enum class Bcast { Same, ScalarLhs, ScalarRhs, RowRhs };

struct Node {
    Op op;
    int in0 = -1, in1 = -1;
    Tensor value;
    Tensor grad;
    double a = 0.0, b = 0.0;  // op parameters (scale factor, slice/clamp bounds)
    Bcast bcast = Bcast::Same;
    bool requires_grad = false;  // leaf flag
    bool needs_grad = false;     // any upstream leaf requires grad
};

}  // namespace detail

class Graph {
public:
    Value leaf(Tensor t, bool requires_grad = false) {
        detail::Node n;
        n.op = detail::Op::Leaf;
        n.value = std::move(t);
        n.requires_grad = requires_grad;
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }

    Value constant(Tensor t) { return leaf(std::move(t), false); }
    Value constant(double v) { return leaf(Tensor::scalar(v), false); }

    Value matmul(Value a, Value b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw ContractViolation("matmul: incompatible shapes " + A.shape_str() +
                                    " @ " + B.shape_str());
        }
        detail::Node n = binary(detail::Op::Matmul, a, b);
        n.value = Tensor({A.rows(), B.cols()});
        matmul_into(n.value, A, B, false, false, false);
        return push(std::move(n));
    }

    Value add(Value a, Value b) { return elementwise(detail::Op::Add, a, b); }
    Value sub(Value a, Value b) { return elementwise(detail::Op::Sub, a, b); }
    Value mul(Value a, Value b) { return elementwise(detail::Op::Mul, a, b); }

    Value scale(Value a, double c) {
        detail::Node n = unary(detail::Op::Scale, a);
        n.a = c;
        n.value = node(a).value;
        for (double& v : n.value.vec()) v *= c;
        return push(std::move(n));
    }

    Value sum(Value a) {
        detail::Node n = unary(detail::Op::Sum, a);
        double s = 0.0;
        for (double v : node(a).value.vec()) s += v;
        n.value = Tensor::scalar(s);
        return push(std::move(n));
    }

    Value mean(Value a) {
        detail::Node n = unary(detail::Op::Mean, a);
        double s = 0.0;
        const Tensor& A = node(a).value;
        for (double v : A.vec()) s += v;
        n.value = Tensor::scalar(s / static_cast<double>(A.size()));
        return push(std::move(n));
    }

    Value square(Value a) { return map(detail::Op::Square, a, [](double x) { return x * x; }); }
    Value sqrt(Value a) { return map(detail::Op::Sqrt, a, [](double x) { return std::sqrt(x); }); }
    Value exp(Value a) { return map(detail::Op::Exp, a, [](double x) { return std::exp(x); }); }
    Value log(Value a) { return map(detail::Op::Log, a, [](double x) { return std::log(x); }); }
    Value tanh(Value a) { return map(detail::Op::Tanh, a, [](double x) { return std::tanh(x); }); }

    Value sigmoid(Value a) {
        return map(detail::Op::Sigmoid, a, [](double x) {
            return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
    }

    Value softplus(Value a) {
        // log(1 + e^x), overflow-safe.
        return map(detail::Op::Softplus, a, [](double x) {
            return x > 30.0 ? x : std::log1p(std::exp(x));
        });
    }

    Value clamp(Value a, double lo, double hi) {
        detail::Node n = unary(detail::Op::Clamp, a);
        n.a = lo;
        n.b = hi;
        n.value = node(a).value;
        for (double& v : n.value.vec()) v = std::min(hi, std::max(lo, v));
        return push(std::move(n));
    }

    // Concatenate along the last axis. Rank-1 vectors or rank-2 with equal
    // leading dimension.
    Value concat(Value a, Value b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        detail::Node n = binary(detail::Op::Concat, a, b);
        if (A.rank() == 1 && B.rank() == 1) {
            std::vector<double> d;
            d.reserve(A.size() + B.size());
            d.insert(d.end(), A.vec().begin(), A.vec().end());
            d.insert(d.end(), B.vec().begin(), B.vec().end());
            n.value = Tensor({A.size() + B.size()}, std::move(d));
        } else if (A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows()) {
            Tensor out({A.rows(), A.cols() + B.cols()});
            for (std::size_t r = 0; r < A.rows(); ++r) {
                for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c);
                for (std::size_t c = 0; c < B.cols(); ++c) out.at(r, A.cols() + c) = B.at(r, c);
            }
            n.value = std::move(out);
        } else {
            throw ContractViolation("concat: incompatible shapes " + A.shape_str() + ", " +
                                    B.shape_str());
        }
        return push(std::move(n));
    }

    // Columns [lo, hi) along the last axis.
    Value slice(Value a, std::size_t lo, std::size_t hi) {
        const Tensor& A = node(a).value;
        if (lo >= hi || hi > A.cols()) {
            throw ContractViolation("slice: range [" + std::to_string(lo) + "," +
                                    std::to_string(hi) + ") on " + A.shape_str());
        }
        detail::Node n = unary(detail::Op::Slice, a);
        n.a = static_cast<double>(lo);
        n.b = static_cast<double>(hi);
        if (A.rank() <= 1) {
            n.value = Tensor({hi - lo},
                             std::vector<double>(A.vec().begin() + static_cast<long>(lo),
                                                 A.vec().begin() + static_cast<long>(hi)));
        } else {
            Tensor out({A.rows(), hi - lo});
            for (std::size_t r = 0; r < A.rows(); ++r)
                for (std::size_t c = lo; c < hi; ++c) out.at(r, c - lo) = A.at(r, c);
            n.value = std::move(out);
        }
        return push(std::move(n));
    }

    // -- gradients ------------------------------------------------------

    void zero_grads() {
        for (auto& n : nodes_) {
            std::fill(n.grad.vec().begin(), n.grad.vec().end(), 0.0);
            if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
        }
    }

    // Reverse sweep from a scalar root; leaf gradients are then available
    // via grad(). Leaves not reachable from the root keep zero gradients.
    void backward(Value root) {
        detail::Node& r = node(root);
        if (!r.value.is_scalar()) {
            throw ContractViolation("backward: root must be scalar, got " + r.value.shape_str());
        }
        zero_grads();
        r.grad[0] = 1.0;
        for (int id = root.id; id >= 0; --id) {
            detail::Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.op == detail::Op::Leaf) continue;
            propagate(n);
        }
    }

    const Tensor& grad(Value v) const {
        const detail::Node& n = node(v);
        if (n.grad.size() != n.value.size()) {
            throw ContractViolation("grad: backward() has not been run");
        }
        return n.grad;
    }

    const Tensor& value(Value v) const { return node(v).value; }

    std::size_t size() const { return nodes_.size(); }

private:
    friend struct Value;

    detail::Node& node(Value v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const detail::Node& node(Value v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

    Value push(detail::Node n) {
        n.grad = Tensor(n.value.shape());
        nodes_.push_back(std::move(n));
        return Value{this, static_cast<int>(nodes_.size()) - 1};
    }

    detail::Node unary(detail::Op op, Value a) {
        check_owned(a);
        detail::Node n;
        n.op = op;
        n.in0 = a.id;
        n.needs_grad = node(a).needs_grad;
        return n;
    }

    detail::Node binary(detail::Op op, Value a, Value b) {
        check_owned(a);
        check_owned(b);
        detail::Node n;
        n.op = op;
        n.in0 = a.id;
        n.in1 = b.id;
        n.needs_grad = node(a).needs_grad || node(b).needs_grad;
        return n;
    }

    void check_owned(Value v) const {
        if (v.g != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
            throw ContractViolation("Value does not belong to this graph");
        }
    }

    template <class F>
    Value map(detail::Op op, Value a, F f) {
        detail::Node n = unary(op, a);
        n.value = node(a).value;
        for (double& v : n.value.vec()) v = f(v);
        return push(std::move(n));
    }

    static bool row_broadcastable(const Tensor& big, const Tensor& small) {
        if (big.rank() != 2) return false;
        if (small.rank() == 1) return small.size() == big.cols();
        return small.rank() == 2 && small.rows() == 1 && small.cols() == big.cols();
    }

    Value elementwise(detail::Op op, Value a, Value b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        detail::Node n = binary(op, a, b);
        if (A.same_shape(B)) {
            n.bcast = detail::Bcast::Same;
            n.value = Tensor(A.shape());
            combine(n.value.vec(), A.vec(), B.vec(), op);
        } else if (B.is_scalar()) {
            n.bcast = detail::Bcast::ScalarRhs;
            n.value = A;
            const double s = B[0];
            for (double& v : n.value.vec()) v = apply(op, v, s);
        } else if (A.is_scalar()) {
            n.bcast = detail::Bcast::ScalarLhs;
            n.value = B;
            const double s = A[0];
            for (double& v : n.value.vec()) v = apply(op, s, v);
        } else if (row_broadcastable(A, B)) {
            n.bcast = detail::Bcast::RowRhs;
            n.value = Tensor(A.shape());
            for (std::size_t r = 0; r < A.rows(); ++r)
                for (std::size_t c = 0; c < A.cols(); ++c)
                    n.value.at(r, c) = apply(op, A.at(r, c), B[c]);
        } else {
            throw ContractViolation("elementwise: incompatible shapes " + A.shape_str() + ", " +
                                    B.shape_str());
        }
        return push(std::move(n));
    }

    static double apply(detail::Op op, double x, double y) {
        switch (op) {
            case detail::Op::Add: return x + y;
            case detail::Op::Sub: return x - y;
            default: return x * y;
        }
    }

    static void combine(std::vector<double>& out, const std::vector<double>& x,
                        const std::vector<double>& y, detail::Op op) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(op, x[i], y[i]);
    }

    // C (+)= op(A, B) with optional transposes; used for matmul grads.
    static void matmul_into(Tensor& C, const Tensor& A, const Tensor& B, bool ta, bool tb,
                            bool accumulate) {
        const std::size_t m = ta ? A.cols() : A.rows();
        const std::size_t k = ta ? A.rows() : A.cols();
        const std::size_t n = tb ? B.rows() : B.cols();
        if (!accumulate) std::fill(C.vec().begin(), C.vec().end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = C.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta ? A.at(p, i) : A.at(i, p);
                if (av == 0.0) continue;
                if (!tb) {
                    const double* brow = B.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                } else {
                    for (std::size_t j = 0; j < n; ++j) crow[j] += av * B.at(j, p);
                }
            }
        }
    }

    // Accumulate g (shaped like the op output) into the gradient of an
    // operand, reducing over broadcast dimensions.
    static void accum_reduced(Tensor& dst, const Tensor& g, detail::Bcast bc, bool is_lhs) {
        const bool broadcasted = (bc == detail::Bcast::ScalarLhs && is_lhs) ||
                                 (bc == detail::Bcast::ScalarRhs && !is_lhs) ||
                                 (bc == detail::Bcast::RowRhs && !is_lhs);
        if (!broadcasted) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
            return;
        }
        if (dst.is_scalar()) {
            double s = 0.0;
            for (double v : g.vec()) s += v;
            dst[0] += s;
            return;
        }
        // Row vector vs batch: reduce over rows.
        const std::size_t n = dst.size();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i % n] += g[i];
    }

    void propagate(detail::Node& n) {
        using detail::Op;
        detail::Node* a = n.in0 >= 0 ? &nodes_[static_cast<std::size_t>(n.in0)] : nullptr;
        detail::Node* b = n.in1 >= 0 ? &nodes_[static_cast<std::size_t>(n.in1)] : nullptr;
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Matmul: {
                if (a->needs_grad) matmul_into(a->grad, g, b->value, false, true, true);
                if (b->needs_grad) matmul_into(b->grad, a->value, g, true, false, true);
                break;
            }
            case Op::Add: {
                if (a->needs_grad) accum_reduced(a->grad, g, n.bcast, true);
                if (b->needs_grad) accum_reduced(b->grad, g, n.bcast, false);
                break;
            }
            case Op::Sub: {
                if (a->needs_grad) accum_reduced(a->grad, g, n.bcast, true);
                if (b->needs_grad) {
                    Tensor neg = g;
                    for (double& v : neg.vec()) v = -v;
                    accum_reduced(b->grad, neg, n.bcast, false);
                }
                break;
            }
            case Op::Mul: {
                if (a->needs_grad) {
                    Tensor t(g.shape());
                    mul_operand(t, g, b->value, n.bcast, /*other_is_rhs=*/true);
                    accum_reduced(a->grad, t, n.bcast, true);
                }
                if (b->needs_grad) {
                    Tensor t(g.shape());
                    mul_operand(t, g, a->value, n.bcast, /*other_is_rhs=*/false);
                    accum_reduced(b->grad, t, n.bcast, false);
                }
                break;
            }
            case Op::Scale: {
                for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += n.a * g[i];
                break;
            }
            case Op::Sum: {
                for (double& v : a->grad.vec()) v += g[0];
                break;
            }
            case Op::Mean: {
                const double c = g[0] / static_cast<double>(a->value.size());
                for (double& v : a->grad.vec()) v += c;
                break;
            }
            case Op::Square: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    a->grad[i] += 2.0 * a->value[i] * g[i];
                break;
            }
            case Op::Sqrt: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    a->grad[i] += 0.5 / n.value[i] * g[i];
                break;
            }
            case Op::Exp: {
                for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += n.value[i] * g[i];
                break;
            }
            case Op::Log: {
                for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] / a->value[i];
                break;
            }
            case Op::Tanh: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    a->grad[i] += (1.0 - n.value[i] * n.value[i]) * g[i];
                break;
            }
            case Op::Sigmoid: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    a->grad[i] += n.value[i] * (1.0 - n.value[i]) * g[i];
                break;
            }
            case Op::Softplus: {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = a->value[i];
                    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x));
                    a->grad[i] += s * g[i];
                }
                break;
            }
            case Op::Clamp: {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = a->value[i];
                    if (x >= n.a && x <= n.b) a->grad[i] += g[i];
                }
                break;
            }
            case Op::Concat: {
                if (n.value.rank() <= 1) {
                    const std::size_t na = a->value.size();
                    if (a->needs_grad)
                        for (std::size_t i = 0; i < na; ++i) a->grad[i] += g[i];
                    if (b->needs_grad)
                        for (std::size_t i = 0; i < b->value.size(); ++i)
                            b->grad[i] += g[na + i];
                } else {
                    const std::size_t ca = a->value.cols(), cb = b->value.cols();
                    for (std::size_t r = 0; r < n.value.rows(); ++r) {
                        if (a->needs_grad)
                            for (std::size_t c = 0; c < ca; ++c) a->grad.at(r, c) += g.at(r, c);
                        if (b->needs_grad)
                            for (std::size_t c = 0; c < cb; ++c)
                                b->grad.at(r, c) += g.at(r, ca + c);
                    }
                }
                break;
            }
            case Op::Slice: {
                const std::size_t lo = static_cast<std::size_t>(n.a);
                if (a->value.rank() <= 1) {
                    for (std::size_t i = 0; i < g.size(); ++i) a->grad[lo + i] += g[i];
                } else {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c)
                            a->grad.at(r, lo + c) += g.at(r, c);
                }
                break;
            }
            case Op::Leaf: break;
        }
    }

    std::vector<detail::Node> nodes_;

    // grad-of-mul helper: t = g ⊙ other, with `other` possibly broadcast.
    static void mul_operand(Tensor& t, const Tensor& g, const Tensor& other, detail::Bcast bc,
                            bool other_is_rhs) {
        const bool other_broadcast = (bc == detail::Bcast::ScalarRhs && other_is_rhs) ||
                                     (bc == detail::Bcast::ScalarLhs && !other_is_rhs) ||
                                     (bc == detail::Bcast::RowRhs && other_is_rhs);
        if (!other_broadcast) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] * other[i];
        } else if (other.is_scalar()) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] * other[0];
        } else {
            const std::size_t n = other.size();
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] * other[i % n];
        }
    }
};

inline const Tensor& Value::val() const { return g->value(*this); }

// Operator sugar over graph values.
inline Value operator+(Value a, Value b) { return a.g->add(a, b); }
inline Value operator-(Value a, Value b) { return a.g->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.g->mul(a, b); }
inline Value operator*(double c, Value a) { return a.g->scale(a, c); }
inline Value operator*(Value a, double c) { return a.g->scale(a, c); }
inline Value operator-(Value a) { return a.g->scale(a, -1.0); }

}  // namespace unlearn
