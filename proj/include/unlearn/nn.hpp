#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/rng.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// Named parameter tensors with a stable order. Networks own one ParamSet;
// optimizers and checkpoints address parameters by index/name.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t add(std::string name, Tensor t) {
        names.push_back(std::move(name));
        values.push_back(std::move(t));
        return values.size() - 1;
    }

    std::size_t count() const { return values.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : values) n += t.size();
        return n;
    }
};

// Parameter leaves bound into one graph instance.
struct BoundParams {
    std::vector<Value> leaves;
};

inline BoundParams bind(Graph& g, const ParamSet& p) {
    BoundParams bp;
    bp.leaves.reserve(p.count());
    for (const Tensor& t : p.values) bp.leaves.push_back(g.leaf(t, /*requires_grad=*/true));
    return bp;
}

inline std::vector<Tensor> collect_grads(const Graph& g, const BoundParams& bp) {
    std::vector<Tensor> out;
    out.reserve(bp.leaves.size());
    for (Value v : bp.leaves) out.push_back(g.grad(v));
    return out;
}

inline double grad_norm(const std::vector<Tensor>& grads) {
    double s = 0.0;
    for (const Tensor& t : grads)
        for (double v : t.vec()) s += v * v;
    return std::sqrt(s);
}

inline void axpy_grads(std::vector<Tensor>& acc, const std::vector<Tensor>& g, double c) {
    if (acc.empty()) {
        acc = g;
        for (Tensor& t : acc)
            for (double& v : t.vec()) v *= c;
        return;
    }
    for (std::size_t i = 0; i < acc.size(); ++i)
        for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += c * g[i][j];
}

// Row-wise squared L2 norm: [B,n] -> [B,1], composed from square + matmul.
inline Value row_sq_norm(Graph& g, Value x) {
    const std::size_t n = x.val().cols();
    Value ones = g.constant(Tensor::ones({n, 1}));
    return g.matmul(g.square(x), ones);
}

// -- Adam -------------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Tensor> m, v;

    static AdamState make(const ParamSet& p, double lr) {
        AdamState s;
        s.lr = lr;
        s.m.reserve(p.count());
        s.v.reserve(p.count());
        for (const Tensor& t : p.values) {
            s.m.push_back(Tensor(t.shape()));
            s.v.push_back(Tensor(t.shape()));
        }
        return s;
    }
};

inline void apply_adam(ParamSet& params, const std::vector<Tensor>& grads, AdamState& st) {
    if (grads.size() != params.count() || st.m.size() != params.count()) {
        throw ContractViolation("apply_adam: parameter/gradient count mismatch");
    }
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.count(); ++i) {
        Tensor& p = params.values[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) {
            throw ContractViolation("apply_adam: shape mismatch on " + params.names[i]);
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            st.m[i][j] = st.beta1 * st.m[i][j] + (1.0 - st.beta1) * g[j];
            st.v[i][j] = st.beta2 * st.v[i][j] + (1.0 - st.beta2) * g[j] * g[j];
            const double mhat = st.m[i][j] / bc1;
            const double vhat = st.v[i][j] / bc2;
            p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// -- MLP ----------------------------------------------------------------------

// Plain fully connected net, tanh hidden activations, linear output head.
struct Mlp {
    std::vector<std::size_t> sizes;  // {in, hidden..., out}
    ParamSet params;

    static Mlp make(const std::vector<std::size_t>& sizes, Rng& rng,
                    const std::string& prefix = "mlp") {
        Mlp m;
        m.sizes = sizes;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::size_t fan_in = sizes[l], fan_out = sizes[l + 1];
            Tensor W({fan_in, fan_out});
            const double s = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
            for (double& v : W.vec()) v = s * rng.normal();
            m.params.add(prefix + ".W" + std::to_string(l), std::move(W));
            m.params.add(prefix + ".b" + std::to_string(l), Tensor({fan_out}));
        }
        return m;
    }

    std::size_t layer_count() const { return sizes.size() - 1; }

    // x: [B, in]. `extra_first_hidden` (optional) is added to the first
    // pre-activation, e.g. a projected class embedding.
    Value forward(Graph& g, const BoundParams& bp, Value x,
                  const Value* extra_first_hidden = nullptr) const {
        Value h = x;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            Value W = bp.leaves[2 * l];
            Value b = bp.leaves[2 * l + 1];
            Value pre = g.add(g.matmul(h, W), b);
            if (l == 0 && extra_first_hidden != nullptr) pre = g.add(pre, *extra_first_hidden);
            h = (l + 1 < layer_count()) ? g.tanh(pre) : pre;
        }
        return h;
    }

    // Forward pass on raw tensors, no graph bookkeeping. Used by samplers.
    Tensor forward_plain(const Tensor& x, const Tensor* extra_first_hidden = nullptr) const {
        Tensor h = x;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            const Tensor& W = params.values[2 * l];
            const Tensor& b = params.values[2 * l + 1];
            Tensor pre({h.rows(), W.cols()});
            for (std::size_t i = 0; i < h.rows(); ++i) {
                double* prow = pre.data() + i * W.cols();
                for (std::size_t c = 0; c < W.cols(); ++c) prow[c] = b[c];
                for (std::size_t p = 0; p < W.rows(); ++p) {
                    const double hv = h.at(i, p);
                    if (hv == 0.0) continue;
                    const double* wrow = W.data() + p * W.cols();
                    for (std::size_t c = 0; c < W.cols(); ++c) prow[c] += hv * wrow[c];
                }
            }
            if (l == 0 && extra_first_hidden != nullptr) {
                for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += (*extra_first_hidden)[i];
            }
            if (l + 1 < layer_count()) {
                for (double& v : pre.vec()) v = std::tanh(v);
            }
            h = std::move(pre);
        }
        return h;
    }
};

// -- finite-difference gradient checking -------------------------------------

// Builds the scalar graph twice per probed coordinate and compares backward()
// against central differences. `coords`, when given, restricts the probe to a
// subset of flattened parameter coordinates.
inline double grad_check(const std::function<Value(Graph&, const BoundParams&)>& build,
                         ParamSet& params, double h,
                         const std::vector<std::size_t>* coords = nullptr) {
    Graph g;
    BoundParams bp = bind(g, params);
    Value root = build(g, bp);
    g.backward(root);
    std::vector<Tensor> analytic = collect_grads(g, bp);

    auto eval = [&]() {
        Graph g2;
        BoundParams bp2 = bind(g2, params);
        return build(g2, bp2).val().scalar_value();
    };

    auto locate = [&](std::size_t flat, std::size_t& ti, std::size_t& tj) {
        for (ti = 0; ti < params.count(); ++ti) {
            if (flat < params.values[ti].size()) {
                tj = flat;
                return;
            }
            flat -= params.values[ti].size();
        }
        throw ContractViolation("grad_check: coordinate out of range");
    };

    std::vector<std::size_t> all;
    if (coords == nullptr) {
        all.resize(params.scalar_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        coords = &all;
    }

    double max_rel = 0.0;
    for (std::size_t flat : *coords) {
        std::size_t ti = 0, tj = 0;
        locate(flat, ti, tj);
        double& slot = params.values[ti][tj];
        const double orig = slot;
        slot = orig + h;
        const double fp = eval();
        slot = orig - h;
        const double fm = eval();
        slot = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double exact = analytic[ti][tj];
        const double denom = std::max(std::abs(numeric), std::abs(exact));
        const double err = std::abs(numeric - exact);
        // Absolute-error fallback for degenerate denominators.
        max_rel = std::max(max_rel, denom < 1e-8 ? err : err / denom);
    }
    return max_rel;
}

// Convenience overload: scalar function of a single tensor leaf.
inline double grad_check(const std::function<Value(Graph&, Value)>& build, const Tensor& x,
                         double h) {
    ParamSet p;
    p.add("x", x);
    return grad_check(
        [&](Graph& g, const BoundParams& bp) { return build(g, bp.leaves[0]); }, p, h);
}

}  // namespace unlearn
