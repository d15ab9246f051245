#pragma once

// Dense 2-D double tensors with reverse-mode automatic differentiation —
// just enough surface for a small decoder-only transformer. Values are
// row-major; Eigen maps back the inner GEMM loops. A Tensor is a cheap
// shared handle onto a node; ops record a tape of parent edges plus a
// backward closure, and backward() consumes that tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

// Small products must take Eigen's blocked GEMM path: the coefficient-based
// shortcut computes each output element with a vectorized reduction whose
// head/tail split — and therefore its rounding — depends on buffer
// alignment, breaking value determinism. The build defines this too; the
// fallback covers direct inclusion.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#endif
#include <Eigen/Dense>

#include "interlace/common.hpp"

namespace interlace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

//
// Autodiff toggle — a thread-local depth counter so guards nest.
//

class NoGradGuard {
public:
    NoGradGuard() { depth()++; }
    ~NoGradGuard() { depth()--; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled() { return depth() == 0; }

private:
    static int& depth() {
        thread_local int d = 0;
        return d;
    }
};

inline bool grad_enabled() { return NoGradGuard::grad_enabled(); }

//
// Node + handle
//

struct TensorNode {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, and only when requires_grad
    bool requires_grad = false;
    bool consumed = false;  // a backward pass already freed this node's tape

    // Tape edges. backward_fn reads this node's grad/value and accumulates
    // into parents' grads; it takes the node by reference so the closure
    // never owns its own node (no shared_ptr cycles).
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int64_t rows, int64_t cols, bool requires_grad = false) {
        if (rows <= 0 || cols <= 0)
            throw InvalidConfig("tensor extents must be positive, got " + std::to_string(rows) + "x" +
                                std::to_string(cols));
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->value.assign(static_cast<size_t>(rows * cols), 0.0);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(std::vector<double> data, int64_t rows, int64_t cols,
                            bool requires_grad = false) {
        Tensor t = zeros(rows, cols, requires_grad);
        if (static_cast<int64_t>(data.size()) != rows * cols)
            throw InvalidConfig("data length does not match extents");
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor row_vector(std::vector<double> data, bool requires_grad = false) {
        const int64_t n = static_cast<int64_t>(data.size());
        return from_data(std::move(data), 1, n, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    int64_t rows() const { return node_->rows; }
    int64_t cols() const { return node_->cols; }
    int64_t size() const { return node_->rows * node_->cols; }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }

    double at(int64_t r, int64_t c) const { return node_->value[static_cast<size_t>(r * cols() + c)]; }
    double& at(int64_t r, int64_t c) { return node_->value[static_cast<size_t>(r * cols() + c)]; }

    double scalar() const {
        if (size() != 1) throw InvalidConfig("scalar() on tensor of size " + std::to_string(size()));
        return node_->value[0];
    }

    MatMap map() { return MatMap(node_->value.data(), node_->rows, node_->cols); }
    ConstMatMap map() const { return ConstMatMap(node_->value.data(), node_->rows, node_->cols); }

    // Leaf-only toggle: lets a trainer freeze parameters so backward skips
    // them entirely (their grad is never allocated).
    void set_requires_grad(bool on) {
        if (node_->backward_fn) throw InvalidConfig("set_requires_grad on a non-leaf tensor");
        node_->requires_grad = on;
        if (!on) {
            node_->grad.clear();
            node_->grad.shrink_to_fit();
        }
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) throw GraphDetached("gradient was never populated for this tensor");
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Fresh leaf with copied values, no tape, no grad.
    Tensor clone() const {
        return from_data(node_->value, node_->rows, node_->cols, node_->requires_grad);
    }

    bool all_finite() const {
        for (double v : node_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

inline void assert_all_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NonFiniteValue("non-finite values in " + what);
}

//
// Op recording
//

namespace detail {

// Allocates the output node; caller fills the value, then calls record().
inline Tensor op_output(int64_t rows, int64_t cols) { return Tensor::zeros(rows, cols, false); }

inline void record(Tensor& out, std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backward_fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return;
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
}

inline void accumulate(const std::shared_ptr<TensorNode>& parent,
                       const std::function<void(MatMap)>& add_into) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    add_into(MatMap(parent->grad.data(), parent->rows, parent->cols));
}

inline ConstMatMap grad_map(TensorNode& n) { return ConstMatMap(n.grad.data(), n.rows, n.cols); }
inline ConstMatMap value_map(TensorNode& n) { return ConstMatMap(n.value.data(), n.rows, n.cols); }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InvalidConfig(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

}  // namespace detail

//
// backward — seeds d(loss)/d(loss)=1, walks the tape in reverse topological
// order, then frees every visited tape edge so the graph cannot be replayed.
//

inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw InvalidConfig("backward on an undefined tensor");
    if (loss.size() != 1) throw InvalidConfig("backward requires a scalar loss");
    TensorNode* root = loss.node().get();
    if (root->consumed)
        throw GraphDetached("computation graph was already consumed by a previous backward");
    if (!root->backward_fn) throw GraphDetached("scalar has no recorded computation graph");

    // Post-order DFS over parent edges: parents land before children, root last.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* n;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backward_fn) continue;  // leaf
        n->ensure_grad();
        n->backward_fn(*n);
    }

    // Consume the tape. Leaves keep their grads and stay reusable.
    for (TensorNode* n : order) {
        if (!n->backward_fn) continue;
        n->backward_fn = nullptr;
        n->parents.clear();
        n->parents.shrink_to_fit();
        n->consumed = true;
    }
}

//
// Ops
//

// C = A · B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw InvalidConfig("matmul: inner extents differ, " + std::to_string(a.cols()) + " vs " +
                            std::to_string(b.rows()));
    Tensor out = detail::op_output(a.rows(), b.cols());
    out.map().noalias() = a.map() * b.map();
    detail::record(out, {a, b}, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        ConstMatMap av(pa->value.data(), pa->rows, pa->cols);
        ConstMatMap bv(pb->value.data(), pb->rows, pb->cols);
        detail::accumulate(pa, [&](MatMap ga) { ga.noalias() += g * bv.transpose(); });
        detail::accumulate(pb, [&](MatMap gb) { gb.noalias() += av.transpose() * g; });
    });
    return out;
}

// C = A · Bᵀ  (B stored untransposed, n×k against A m×k)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw InvalidConfig("matmul_nt: inner extents differ, " + std::to_string(a.cols()) + " vs " +
                            std::to_string(b.cols()));
    Tensor out = detail::op_output(a.rows(), b.rows());
    out.map().noalias() = a.map() * b.map().transpose();
    detail::record(out, {a, b}, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        ConstMatMap av(pa->value.data(), pa->rows, pa->cols);
        ConstMatMap bv(pb->value.data(), pb->rows, pb->cols);
        detail::accumulate(pa, [&](MatMap ga) { ga.noalias() += g * bv; });
        detail::accumulate(pb, [&](MatMap gb) { gb.noalias() += g.transpose() * av; });
    });
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = detail::op_output(a.rows(), a.cols());
    out.map() = a.map() + b.map();
    detail::record(out, {a, b}, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0], [&](MatMap ga) { ga += g; });
        detail::accumulate(self.parents[1], [&](MatMap gb) { gb += g; });
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = detail::op_output(a.rows(), a.cols());
    out.map() = a.map() - b.map();
    detail::record(out, {a, b}, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0], [&](MatMap ga) { ga += g; });
        detail::accumulate(self.parents[1], [&](MatMap gb) { gb -= g; });
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = detail::op_output(a.rows(), a.cols());
    out.map() = a.map().cwiseProduct(b.map());
    detail::record(out, {a, b}, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        ConstMatMap av(pa->value.data(), pa->rows, pa->cols);
        ConstMatMap bv(pb->value.data(), pb->rows, pb->cols);
        detail::accumulate(pa, [&](MatMap ga) { ga += g.cwiseProduct(bv); });
        detail::accumulate(pb, [&](MatMap gb) { gb += g.cwiseProduct(av); });
    });
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = detail::op_output(a.rows(), a.cols());
    out.map() = a.map() * s;
    detail::record(out, {a}, [s](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0], [&](MatMap ga) { ga += g * s; });
    });
    return out;
}

// Strict left-to-right reduction; Eigen's vectorized redux would make the
// value depend on buffer alignment.
inline double sequential_sum(const double* p, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; i++) s += p[i];
    return s;
}

inline double sequential_dot(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; i++) s += a[i] * b[i];
    return s;
}

inline Tensor sum(const Tensor& a) {
    Tensor out = detail::op_output(1, 1);
    out.at(0, 0) = sequential_sum(a.data(), a.size());
    detail::record(out, {a}, [](TensorNode& self) {
        const double g0 = self.grad[0];
        detail::accumulate(self.parents[0], [&](MatMap ga) { ga.array() += g0; });
    });
    return out;
}

// Row gather from a table; the differentiable core of the token embedding.
inline Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
    const int64_t v = table.rows();
    const int64_t d = table.cols();
    if (ids.empty()) throw InvalidConfig("embedding: empty id list");
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw TokenOutOfRange("id " + std::to_string(id) + " outside table of " + std::to_string(v));
    Tensor out = detail::op_output(static_cast<int64_t>(ids.size()), d);
    for (size_t t = 0; t < ids.size(); t++)
        out.map().row(static_cast<int64_t>(t)) = table.map().row(ids[t]);
    detail::record(out, {table}, [ids](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0], [&](MatMap gt) {
            for (size_t t = 0; t < ids.size(); t++)
                gt.row(ids[t]) += g.row(static_cast<int64_t>(t));
        });
    });
    return out;
}

inline Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
    if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw InvalidConfig("slice_rows: bad range");
    Tensor out = detail::op_output(r1 - r0, a.cols());
    out.map() = a.map().middleRows(r0, r1 - r0);
    detail::record(out, {a}, [r0](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0],
                           [&](MatMap ga) { ga.middleRows(r0, self.rows) += g; });
    });
    return out;
}

inline Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw InvalidConfig("slice_cols: bad range");
    Tensor out = detail::op_output(a.rows(), c1 - c0);
    out.map() = a.map().middleCols(c0, c1 - c0);
    detail::record(out, {a}, [c0](TensorNode& self) {
        auto g = detail::grad_map(self);
        detail::accumulate(self.parents[0],
                           [&](MatMap ga) { ga.middleCols(c0, self.cols) += g; });
    });
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidConfig("concat_cols: empty input");
    const int64_t rows = parts[0].rows();
    int64_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw InvalidConfig("concat_cols: row mismatch");
        cols += p.cols();
    }
    Tensor out = detail::op_output(rows, cols);
    int64_t c = 0;
    for (const auto& p : parts) {
        out.map().middleCols(c, p.cols()) = p.map();
        c += p.cols();
    }
    detail::record(out, parts, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        int64_t c = 0;
        for (auto& parent : self.parents) {
            const int64_t w = parent->cols;
            detail::accumulate(parent, [&](MatMap gp) { gp += g.middleCols(c, w); });
            c += w;
        }
    });
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidConfig("concat_rows: empty input");
    const int64_t cols = parts[0].cols();
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw InvalidConfig("concat_rows: column mismatch");
        rows += p.rows();
    }
    Tensor out = detail::op_output(rows, cols);
    int64_t r = 0;
    for (const auto& p : parts) {
        out.map().middleRows(r, p.rows()) = p.map();
        r += p.rows();
    }
    detail::record(out, parts, [](TensorNode& self) {
        auto g = detail::grad_map(self);
        int64_t r = 0;
        for (auto& parent : self.parents) {
            const int64_t h = parent->rows;
            detail::accumulate(parent, [&](MatMap gp) { gp += g.middleRows(r, h); });
            r += h;
        }
    });
    return out;
}

// Row-wise RMS normalization with a learned per-column gain.
inline Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6) {
    if (gain.rows() != 1 || gain.cols() != x.cols())
        throw InvalidConfig("rms_norm: gain must be 1x" + std::to_string(x.cols()));
    const int64_t rows = x.rows();
    const int64_t d = x.cols();
    Tensor out = detail::op_output(rows, d);
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; r++) {
        const double* xr = x.data() + r * d;
        const double ms = sequential_dot(xr, xr, d) / static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(ms + eps);
        (*inv)[static_cast<size_t>(r)] = iv;
        for (int64_t c = 0; c < d; c++)
            out.data()[r * d + c] = xr[c] * iv * gain.data()[c];
    }
    detail::record(out, {x, gain}, [inv, d](TensorNode& self) {
        auto g = detail::grad_map(self);
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        ConstMatMap xv(px->value.data(), px->rows, px->cols);
        ConstMatMap gv(pg->value.data(), pg->rows, pg->cols);
        for (int64_t r = 0; r < self.rows; r++) {
            const double iv = (*inv)[static_cast<size_t>(r)];
            // h = upstream ⊙ gain; dx = iv·h − x·(iv³/d)·(h·x)
            Eigen::RowVectorXd h = g.row(r).cwiseProduct(gv.row(0));
            const double hx = sequential_dot(h.data(), px->value.data() + r * d, d);
            detail::accumulate(px, [&](MatMap gx) {
                gx.row(r) += iv * h - (iv * iv * iv / static_cast<double>(d)) * hx * xv.row(r);
            });
            detail::accumulate(pg, [&](MatMap gg) { gg.row(0) += g.row(r).cwiseProduct(xv.row(r) * iv); });
        }
    });
    return out;
}

inline Tensor silu(const Tensor& x) {
    Tensor out = detail::op_output(x.rows(), x.cols());
    auto sig = std::make_shared<std::vector<double>>(x.values().size());
    for (size_t i = 0; i < x.values().size(); i++) {
        const double s = 1.0 / (1.0 + std::exp(-x.values()[i]));
        (*sig)[i] = s;
        out.values()[i] = x.values()[i] * s;
    }
    detail::record(out, {x}, [sig](TensorNode& self) {
        auto& px = self.parents[0];
        detail::accumulate(px, [&](MatMap gx) {
            for (size_t i = 0; i < self.grad.size(); i++) {
                const double s = (*sig)[i];
                const double xv = px->value[i];
                gx.data()[i] += self.grad[i] * s * (1.0 + xv * (1.0 - s));
            }
        });
    });
    return out;
}

// Row-wise softmax over positions the mask allows (mask is row-major
// rows×cols, nonzero = allowed); disallowed entries get probability zero.
inline Tensor softmax_rows_masked(const Tensor& x, std::shared_ptr<const std::vector<uint8_t>> mask) {
    if (!mask || static_cast<int64_t>(mask->size()) != x.size())
        throw InvalidConfig("softmax_rows_masked: mask size mismatch");
    const int64_t rows = x.rows();
    const int64_t cols = x.cols();
    Tensor out = detail::op_output(rows, cols);
    for (int64_t r = 0; r < rows; r++) {
        const double* xr = x.data() + r * cols;
        const uint8_t* mr = mask->data() + r * cols;
        double hi = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < cols; c++)
            if (mr[c] && xr[c] > hi) hi = xr[c];
        if (!std::isfinite(hi)) throw InvalidConfig("softmax_rows_masked: row " + std::to_string(r) +
                                                    " allows no positions");
        double z = 0.0;
        double* pr = out.data() + r * cols;
        for (int64_t c = 0; c < cols; c++) {
            pr[c] = mr[c] ? std::exp(xr[c] - hi) : 0.0;
            z += pr[c];
        }
        for (int64_t c = 0; c < cols; c++) pr[c] /= z;
    }
    detail::record(out, {x}, [](TensorNode& self) {
        // dx = p ⊙ (g − Σ g⊙p); zero-probability entries stay zero.
        auto g = detail::grad_map(self);
        ConstMatMap p(self.value.data(), self.rows, self.cols);
        detail::accumulate(self.parents[0], [&](MatMap gx) {
            for (int64_t r = 0; r < self.rows; r++) {
                const double dot =
                    sequential_dot(self.grad.data() + r * self.cols, self.value.data() + r * self.cols, self.cols);
                gx.row(r) += p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
            }
        });
    });
    return out;
}

// Mean cross-entropy over mask-true rows of a logit matrix: the fused
// next-token loss. Backward recomputes row softmaxes from the saved logits.
inline Tensor cross_entropy_rows(const Tensor& logits, std::shared_ptr<const std::vector<int64_t>> targets,
                                 std::shared_ptr<const std::vector<uint8_t>> mask) {
    const int64_t rows = logits.rows();
    const int64_t v = logits.cols();
    if (!targets || static_cast<int64_t>(targets->size()) != rows)
        throw InvalidConfig("cross_entropy_rows: targets length mismatch");
    if (!mask || static_cast<int64_t>(mask->size()) != rows)
        throw InvalidConfig("cross_entropy_rows: mask length mismatch");
    int64_t count = 0;
    KahanSum total;
    for (int64_t r = 0; r < rows; r++) {
        if (!(*mask)[static_cast<size_t>(r)]) continue;
        const int64_t y = (*targets)[static_cast<size_t>(r)];
        if (y < 0 || y >= v)
            throw TokenOutOfRange("target " + std::to_string(y) + " outside vocab of " + std::to_string(v));
        const double* lr = logits.data() + r * v;
        double hi = lr[0];
        for (int64_t c = 1; c < v; c++) hi = std::max(hi, lr[c]);
        double z = 0.0;
        for (int64_t c = 0; c < v; c++) z += std::exp(lr[c] - hi);
        total.add(hi + std::log(z) - lr[y]);
        count++;
    }
    if (count == 0) throw AllMasked("no positions contribute to the loss");
    Tensor out = detail::op_output(1, 1);
    out.at(0, 0) = total.value() / static_cast<double>(count);
    detail::record(out, {logits}, [targets, mask, count](TensorNode& self) {
        const double g0 = self.grad[0] / static_cast<double>(count);
        auto& pl = self.parents[0];
        const int64_t v = pl->cols;
        detail::accumulate(pl, [&](MatMap gl) {
            for (int64_t r = 0; r < pl->rows; r++) {
                if (!(*mask)[static_cast<size_t>(r)]) continue;
                const double* lr = pl->value.data() + r * v;
                double hi = lr[0];
                for (int64_t c = 1; c < v; c++) hi = std::max(hi, lr[c]);
                double z = 0.0;
                for (int64_t c = 0; c < v; c++) z += std::exp(lr[c] - hi);
                for (int64_t c = 0; c < v; c++) gl(r, c) += g0 * std::exp(lr[c] - hi) / z;
                gl(r, (*targets)[static_cast<size_t>(r)]) -= g0;
            }
        });
    });
    return out;
}

//
// Cosine similarity kernel — a single left-to-right pass accumulating the
// dot product and both squared norms, so the result is bitwise reproducible
// and exactly symmetric in its arguments.
//

inline double cosine(const double* u, const double* v, int64_t n) {
    if (n < 1) throw InvalidConfig("cosine: vectors must have length >= 1");
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (int64_t i = 0; i < n; i++) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (!std::isfinite(dot) || !std::isfinite(uu) || !std::isfinite(vv))
        throw NonFiniteValue("cosine: non-finite accumulation");
    const double nu = std::sqrt(uu);
    const double nv = std::sqrt(vv);
    if (nu < 1e-12 || nv < 1e-12)
        throw ZeroNormVector("cosine: vector norm below 1e-12 (degenerate hidden state)");
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw InvalidConfig("cosine: length mismatch");
    return cosine(u.data(), v.data(), static_cast<int64_t>(u.size()));
}

//
// Finite-difference gradient checker. f rebuilds its graph from the given
// leaf parameters on every call; probes use central differences.
//

struct GradCheckOptions {
    double step = 1e-5;
    // < 0 probes every coordinate; otherwise this many per tensor, seeded.
    int64_t max_coords_per_tensor = -1;
    uint64_t seed = 0;
};

inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         GradCheckOptions opt = {}) {
    for (const auto& p : params)
        if (!p.requires_grad()) throw InvalidConfig("grad_check: all parameters must require grad");

    std::vector<Tensor> leaves = params;
    for (auto& p : leaves) p.zero_grad();
    Tensor loss = f();
    if (!std::isfinite(loss.scalar())) throw NonFiniteValue("grad_check: loss is not finite");
    backward(loss);

    std::vector<std::vector<double>> ad(leaves.size());
    for (size_t i = 0; i < leaves.size(); i++)
        ad[i] = leaves[i].has_grad() ? leaves[i].grad() : std::vector<double>(leaves[i].size(), 0.0);

    NoGradGuard guard;
    double worst = 0.0;
    for (size_t i = 0; i < leaves.size(); i++) {
        Tensor& p = leaves[i];
        std::vector<int64_t> coords;
        if (opt.max_coords_per_tensor < 0 || opt.max_coords_per_tensor >= p.size()) {
            coords.resize(static_cast<size_t>(p.size()));
            for (int64_t c = 0; c < p.size(); c++) coords[static_cast<size_t>(c)] = c;
        } else {
            coords = seeded_subset(p.size(), opt.max_coords_per_tensor,
                                   mix_seed(opt.seed, 0x67636b /* "gck" */, i));
        }
        for (int64_t c : coords) {
            double* slot = p.data() + c;
            const double saved = *slot;
            *slot = saved + opt.step;
            const double up = f().scalar();
            *slot = saved - opt.step;
            const double dn = f().scalar();
            *slot = saved;
            if (!std::isfinite(up) || !std::isfinite(dn))
                throw NonFiniteValue("grad_check: probe evaluation is not finite");
            const double fd = (up - dn) / (2.0 * opt.step);
            const double ga = ad[i][static_cast<size_t>(c)];
            const double err = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace interlace
