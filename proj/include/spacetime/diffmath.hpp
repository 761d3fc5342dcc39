#pragma once

// Differentiable numeric kernels and a reverse-mode tape over a fixed op set.
// There is no graph compiler: the training computation is a fixed pipeline,
// so the tape only knows the handful of ops that pipeline needs. Every op has
// a value path (free function) and a gradient path (Tape), and the two are
// cross-checked by central finite differences in grad_check.
//
// All math is double precision. Softmax subtracts the row max before
// exponentiating; logs are floored at 1e-12. Reductions run in fixed order so
// repeated runs are bitwise identical.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spacetime/tensor.hpp"

namespace spacetime {

constexpr double kLogFloor = 1e-12;

// ---------------------------------------------------------------------------
// Value-level kernels
// ---------------------------------------------------------------------------

// Row-wise softmax of logits/temperature. Masked entries are exactly 0 and a
// fully masked row is an error.
inline Tensor2 row_softmax(const Tensor2& logits, double temperature, const BoolMask* mask = nullptr) {
    if (!(temperature > 0.0)) throw std::invalid_argument("row_softmax: temperature must be positive");
    if (mask && (mask->rows != logits.rows || mask->cols != logits.cols))
        throw std::invalid_argument("row_softmax: mask shape mismatch");
    Tensor2 out(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < logits.cols; ++j) {
            if (mask && !mask->get(i, j)) continue;
            mx = std::max(mx, logits.at(i, j));
        }
        if (!std::isfinite(mx)) throw std::invalid_argument("row_softmax: empty softmax row");
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            if (mask && !mask->get(i, j)) continue;
            double e = std::exp((logits.at(i, j) - mx) / temperature);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < logits.cols; ++j) {
            if (mask && !mask->get(i, j)) {
                out.at(i, j) = 0.0;
            } else {
                out.at(i, j) /= sum;
            }
        }
    }
    return out;
}

inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
    Tensor2 c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            double* crow = &c.data[static_cast<size_t>(i) * c.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// a * b^T without materializing the transpose.
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: shape mismatch");
    Tensor2 c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = &b.data[static_cast<size_t>(j) * b.cols];
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.at(i, j) = s;
        }
    }
    return c;
}

inline Tensor2 transpose(const Tensor2& a) {
    Tensor2 t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// Rows scaled to unit Euclidean norm. Rows with norm below eps are scaled by
// 1/eps instead (degenerate path; keeps the zero row at zero).
inline Tensor2 l2_normalize_rows(const Tensor2& x, double eps = 1e-12) {
    Tensor2 out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += x.at(i, j) * x.at(i, j);
        double n = std::sqrt(s);
        double inv = 1.0 / std::max(n, eps);
        for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) * inv;
    }
    return out;
}

// Mean over rows of -log probs[i, targets[i]], probabilities floored at 1e-12.
inline double cross_entropy_rows(const Tensor2& probs, std::span<const int> targets) {
    if (static_cast<int>(targets.size()) != probs.rows)
        throw std::invalid_argument("cross_entropy_rows: one target per row required");
    double total = 0.0;
    for (int i = 0; i < probs.rows; ++i) {
        int t = targets[i];
        if (t < 0 || t >= probs.cols) throw std::out_of_range("cross_entropy_rows: target index out of range");
        total += -std::log(std::max(probs.at(i, t), kLogFloor));
    }
    return total / probs.rows;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

// Named parameter collection with a fixed iteration order.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor2>> items;

    Tensor2& add(const std::string& name, Tensor2 v) {
        items.emplace_back(name, std::move(v));
        return items.back().second;
    }
    Tensor2* find(const std::string& name) {
        for (auto& [k, v] : items)
            if (k == name) return &v;
        return nullptr;
    }
    const Tensor2* find(const std::string& name) const {
        for (auto& [k, v] : items)
            if (k == name) return &v;
        return nullptr;
    }
    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& [k, v] : items) n += v.size();
        return n;
    }
};

// Scalar forward value plus one gradient tensor per touched parameter.
struct GradRecord {
    double value = 0.0;
    std::map<std::string, Tensor2> partials;
};

class Tape {
  public:
    using Id = int;

    Id input(Tensor2 v) { return push(Op::Leaf, {}, std::move(v), false); }

    Id param(const std::string& name, Tensor2 v) {
        Id id = push(Op::Leaf, {}, std::move(v), true);
        nodes_[id].name = name;
        return id;
    }

    Id matmul(Id a, Id b) { return push(Op::MatMul, {a, b}, spacetime::matmul(val(a), val(b))); }

    Id matmul_nt(Id a, Id b) { return push(Op::MatMulNT, {a, b}, spacetime::matmul_nt(val(a), val(b))); }

    Id row_softmax(Id x, double tau) {
        Id id = push(Op::RowSoftmax, {x}, spacetime::row_softmax(val(x), tau));
        nodes_[id].tau = tau;
        return id;
    }

    Id row_softmax_masked(Id x, double tau, BoolMask mask) {
        Id id = push(Op::RowSoftmax, {x}, spacetime::row_softmax(val(x), tau, &mask));
        nodes_[id].tau = tau;
        nodes_[id].mask = std::make_shared<BoolMask>(std::move(mask));
        return id;
    }

    Id l2_normalize_rows(Id x, double eps = 1e-12) {
        Id id = push(Op::L2NormRows, {x}, spacetime::l2_normalize_rows(val(x), eps));
        nodes_[id].eps = eps;
        return id;
    }

    Id cross_entropy_rows(Id probs, std::vector<int> targets) {
        Tensor2 out(1, 1);
        out.at(0, 0) = spacetime::cross_entropy_rows(val(probs), targets);
        Id id = push(Op::CERows, {probs}, std::move(out));
        nodes_[id].indices = std::move(targets);
        return id;
    }

    Id tanh(Id x) {
        Tensor2 out(val(x).rows, val(x).cols);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] = std::tanh(val(x).data[i]);
        return push(Op::Tanh, {x}, std::move(out));
    }

    // x + bias with bias a 1xC row vector broadcast over rows.
    Id add_row_bias(Id x, Id bias) {
        const Tensor2& xv = val(x);
        const Tensor2& bv = val(bias);
        if (bv.rows != 1 || bv.cols != xv.cols) throw std::invalid_argument("add_row_bias: bias must be 1 x cols");
        Tensor2 out = xv;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out.at(i, j) += bv.at(0, j);
        return push(Op::AddRowBias, {x, bias}, std::move(out));
    }

    Id tile_rows(Id row_vec, int copies) {
        const Tensor2& v = val(row_vec);
        if (v.rows != 1) throw std::invalid_argument("tile_rows: expects a 1 x n row vector");
        Tensor2 out(copies, v.cols);
        for (int i = 0; i < copies; ++i)
            for (int j = 0; j < v.cols; ++j) out.at(i, j) = v.at(0, j);
        return push(Op::TileRows, {row_vec}, std::move(out));
    }

    // Spread per-slot weights (N x n) into a node-mixing matrix (N x N):
    // out[i, slots[i][j]] += w[i, j]. Slots < 0 are absent and skipped.
    Id slot_scatter(Id weights, const std::vector<std::vector<int>>& slots, int n_nodes) {
        const Tensor2& w = val(weights);
        if (static_cast<int>(slots.size()) != w.rows) throw std::invalid_argument("slot_scatter: one slot list per row");
        Tensor2 out(w.rows, n_nodes);
        for (int i = 0; i < w.rows; ++i) {
            if (static_cast<int>(slots[i].size()) != w.cols)
                throw std::invalid_argument("slot_scatter: slot count mismatch");
            for (int j = 0; j < w.cols; ++j) {
                int dst = slots[i][j];
                if (dst < 0) continue;
                out.at(i, dst) += w.at(i, j);
            }
        }
        Id id = push(Op::SlotScatter, {weights}, std::move(out));
        nodes_[id].slots = std::make_shared<std::vector<std::vector<int>>>(slots);
        return id;
    }

    Id gather_rows(Id x, std::vector<int> idx) {
        const Tensor2& xv = val(x);
        Tensor2 out(static_cast<int>(idx.size()), xv.cols);
        for (size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= xv.rows) throw std::out_of_range("gather_rows: index out of range");
            for (int j = 0; j < xv.cols; ++j) out.at(static_cast<int>(i), j) = xv.at(idx[i], j);
        }
        Id id = push(Op::GatherRows, {x}, std::move(out));
        nodes_[id].indices = std::move(idx);
        return id;
    }

    // Mean over consecutive groups of `group` rows; rows must divide evenly.
    Id group_mean_rows(Id x, int group) {
        const Tensor2& xv = val(x);
        if (group <= 0 || xv.rows % group != 0) throw std::invalid_argument("group_mean_rows: bad group size");
        Tensor2 out(xv.rows / group, xv.cols);
        for (int g = 0; g < out.rows; ++g)
            for (int r = 0; r < group; ++r)
                for (int j = 0; j < xv.cols; ++j) out.at(g, j) += xv.at(g * group + r, j) / group;
        Id id = push(Op::GroupMeanRows, {x}, std::move(out));
        nodes_[id].group = group;
        return id;
    }

    Id add(Id a, Id b) {
        if (!val(a).same_shape(val(b))) throw std::invalid_argument("add: shape mismatch");
        Tensor2 out = val(a);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] += val(b).data[i];
        return push(Op::Add, {a, b}, std::move(out));
    }

    Id scale(Id a, double c) {
        Tensor2 out = val(a);
        for (auto& x : out.data) x *= c;
        Id id = push(Op::Scale, {a}, std::move(out));
        nodes_[id].scalar = c;
        return id;
    }

    const Tensor2& val(Id id) const { return nodes_[id].value; }

    // Reverse accumulation from a 1x1 loss node. Returns the loss value and
    // one partial per named parameter reached by the forward pass.
    GradRecord backward(Id loss) const {
        const Tensor2& lv = val(loss);
        if (lv.rows != 1 || lv.cols != 1) throw std::invalid_argument("backward: loss must be 1x1");
        if (!std::isfinite(lv.at(0, 0))) throw std::runtime_error("backward: non-finite loss");

        std::vector<Tensor2> grads(nodes_.size());
        std::vector<uint8_t> has_grad(nodes_.size(), 0);
        auto accum = [&](Id id, const Tensor2& g) {
            if (!nodes_[id].needs_grad) return;
            if (!has_grad[id]) {
                grads[id] = g;
                has_grad[id] = 1;
            } else {
                for (size_t i = 0; i < g.size(); ++i) grads[id].data[i] += g.data[i];
            }
        };

        Tensor2 seed(1, 1);
        seed.at(0, 0) = 1.0;
        if (nodes_[loss].needs_grad) {
            grads[loss] = seed;
            has_grad[loss] = 1;
        }

        for (Id id = loss; id >= 0; --id) {
            const NodeRec& n = nodes_[id];
            if (!has_grad[id] || !n.needs_grad || n.op == Op::Leaf) continue;
            const Tensor2& g = grads[id];
            backprop_one(n, g, accum);
        }

        GradRecord rec;
        rec.value = lv.at(0, 0);
        for (size_t id = 0; id < nodes_.size(); ++id) {
            const NodeRec& n = nodes_[id];
            if (n.op == Op::Leaf && n.needs_grad && !n.name.empty()) {
                if (has_grad[id]) {
                    rec.partials[n.name] = grads[id];
                } else {
                    rec.partials[n.name] = Tensor2(n.value.rows, n.value.cols);
                }
            }
        }
        return rec;
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    enum class Op {
        Leaf,
        MatMul,
        MatMulNT,
        RowSoftmax,
        L2NormRows,
        CERows,
        Tanh,
        AddRowBias,
        TileRows,
        SlotScatter,
        GatherRows,
        GroupMeanRows,
        Add,
        Scale,
    };

    struct NodeRec {
        Op op = Op::Leaf;
        std::vector<Id> inputs;
        Tensor2 value;
        bool needs_grad = false;
        std::string name;
        double tau = 1.0;
        double eps = 1e-12;
        double scalar = 1.0;
        int group = 1;
        std::shared_ptr<BoolMask> mask;
        std::shared_ptr<std::vector<std::vector<int>>> slots;
        std::vector<int> indices;
    };

    Id push(Op op, std::vector<Id> inputs, Tensor2 value, bool needs_grad_leaf = false) {
        NodeRec n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.needs_grad = needs_grad_leaf;
        for (Id in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    template <class Accum>
    void backprop_one(const NodeRec& n, const Tensor2& g, Accum&& accum) const {
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Tensor2& a = val(n.inputs[0]);
                const Tensor2& b = val(n.inputs[1]);
                if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], spacetime::matmul_nt(g, b));
                if (nodes_[n.inputs[1]].needs_grad) accum(n.inputs[1], spacetime::matmul(spacetime::transpose(a), g));
                break;
            }
            case Op::MatMulNT: {
                const Tensor2& a = val(n.inputs[0]);
                const Tensor2& b = val(n.inputs[1]);
                if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], spacetime::matmul(g, b));
                if (nodes_[n.inputs[1]].needs_grad) accum(n.inputs[1], spacetime::matmul(spacetime::transpose(g), a));
                break;
            }
            case Op::RowSoftmax: {
                const Tensor2& y = n.value;
                Tensor2 gx(y.rows, y.cols);
                for (int i = 0; i < y.rows; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                    for (int j = 0; j < y.cols; ++j) {
                        if (n.mask && !n.mask->get(i, j)) continue;
                        gx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot) / n.tau;
                    }
                }
                accum(n.inputs[0], gx);
                break;
            }
            case Op::L2NormRows: {
                const Tensor2& x = val(n.inputs[0]);
                const Tensor2& y = n.value;
                Tensor2 gx(x.rows, x.cols);
                for (int i = 0; i < x.rows; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < x.cols; ++j) s += x.at(i, j) * x.at(i, j);
                    double norm = std::sqrt(s);
                    if (norm >= n.eps) {
                        double dot = 0.0;
                        for (int j = 0; j < x.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                        for (int j = 0; j < x.cols; ++j) gx.at(i, j) = (g.at(i, j) - y.at(i, j) * dot) / norm;
                    } else {
                        for (int j = 0; j < x.cols; ++j) gx.at(i, j) = g.at(i, j) / n.eps;
                    }
                }
                accum(n.inputs[0], gx);
                break;
            }
            case Op::CERows: {
                const Tensor2& p = val(n.inputs[0]);
                Tensor2 gp(p.rows, p.cols);
                double gscale = g.at(0, 0) / p.rows;
                for (int i = 0; i < p.rows; ++i) {
                    double pv = p.at(i, n.indices[i]);
                    if (pv >= kLogFloor) gp.at(i, n.indices[i]) = -gscale / pv;
                }
                accum(n.inputs[0], gp);
                break;
            }
            case Op::Tanh: {
                const Tensor2& y = n.value;
                Tensor2 gx(y.rows, y.cols);
                for (size_t i = 0; i < y.size(); ++i) gx.data[i] = g.data[i] * (1.0 - y.data[i] * y.data[i]);
                accum(n.inputs[0], gx);
                break;
            }
            case Op::AddRowBias: {
                if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], g);
                if (nodes_[n.inputs[1]].needs_grad) {
                    Tensor2 gb(1, g.cols);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
                    accum(n.inputs[1], gb);
                }
                break;
            }
            case Op::TileRows: {
                Tensor2 gv(1, g.cols);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gv.at(0, j) += g.at(i, j);
                accum(n.inputs[0], gv);
                break;
            }
            case Op::SlotScatter: {
                const auto& slots = *n.slots;
                const Tensor2& w = val(n.inputs[0]);
                Tensor2 gw(w.rows, w.cols);
                for (int i = 0; i < w.rows; ++i)
                    for (int j = 0; j < w.cols; ++j) {
                        int dst = slots[i][j];
                        if (dst >= 0) gw.at(i, j) = g.at(i, dst);
                    }
                accum(n.inputs[0], gw);
                break;
            }
            case Op::GatherRows: {
                const Tensor2& x = val(n.inputs[0]);
                Tensor2 gx(x.rows, x.cols);
                for (size_t i = 0; i < n.indices.size(); ++i)
                    for (int j = 0; j < x.cols; ++j) gx.at(n.indices[i], j) += g.at(static_cast<int>(i), j);
                accum(n.inputs[0], gx);
                break;
            }
            case Op::GroupMeanRows: {
                const Tensor2& x = val(n.inputs[0]);
                Tensor2 gx(x.rows, x.cols);
                for (int gi = 0; gi < g.rows; ++gi)
                    for (int r = 0; r < n.group; ++r)
                        for (int j = 0; j < g.cols; ++j) gx.at(gi * n.group + r, j) = g.at(gi, j) / n.group;
                accum(n.inputs[0], gx);
                break;
            }
            case Op::Add: {
                if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], g);
                if (nodes_[n.inputs[1]].needs_grad) accum(n.inputs[1], g);
                break;
            }
            case Op::Scale: {
                Tensor2 gx = g;
                for (auto& x : gx.data) x *= n.scalar;
                accum(n.inputs[0], gx);
                break;
            }
        }
    }

    std::vector<NodeRec> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference check
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Compares the analytic partials of `fn` against central differences over
// every scalar in `params`. Relative error is |analytic - cd| over
// max(|analytic|, |cd|, 1e-8).
inline GradCheckResult grad_check(const std::function<GradRecord(const ParamSet&)>& fn, const ParamSet& params,
                                  double step) {
    if (!(step >= 1e-6 && step <= 1e-4)) throw std::invalid_argument("grad_check: step must be in [1e-6, 1e-4]");
    GradRecord center = fn(params);
    if (!std::isfinite(center.value)) throw std::runtime_error("grad_check: non-finite loss");

    GradCheckResult res;
    ParamSet work = params;
    for (auto& [name, tensor] : work.items) {
        auto it = center.partials.find(name);
        for (size_t i = 0; i < tensor.size(); ++i) {
            double saved = tensor.data[i];
            tensor.data[i] = saved + step;
            double up = fn(work).value;
            tensor.data[i] = saved - step;
            double down = fn(work).value;
            tensor.data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) throw std::runtime_error("grad_check: non-finite loss");
            double cd = (up - down) / (2.0 * step);
            double analytic = (it != center.partials.end()) ? it->second.data[i] : 0.0;
            double denom = std::max({std::fabs(analytic), std::fabs(cd), 1e-8});
            double rel = std::fabs(analytic - cd) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

}  // namespace spacetime
