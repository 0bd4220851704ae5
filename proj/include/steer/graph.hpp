#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "steer/tensor.hpp"

namespace steer {

/// Handle to a node in a Graph. Plain index; cheap to copy.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode tape. Ops evaluate eagerly and record a
/// backward closure; creation order is a topological order, so backward()
/// is a single reverse sweep. A graph is confined to one thread.
template <typename T>
class Graph {
public:
    struct BackContext {
        std::vector<Tensor<T>> grads;
        std::vector<char> has;

        Tensor<T>& acc(int id, const Shape& shape) {
            if (!has[std::size_t(id)]) {
                grads[std::size_t(id)] = Tensor<T>::zeros(shape);
                has[std::size_t(id)] = 1;
            }
            return grads[std::size_t(id)];
        }
    };

    using BackwardFn = std::function<void(Graph&, int self, BackContext&)>;

    struct Node {
        Tensor<T> value;
        bool is_leaf = false;
        BackwardFn backward;
    };

    Var leaf(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), true, nullptr});
        leaves_.push_back(int(nodes_.size()) - 1);
        return Var{int(nodes_.size()) - 1};
    }

    /// Value that participates in the forward pass but receives no gradient.
    Var constant(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), false, nullptr});
        return Var{int(nodes_.size()) - 1};
    }

    const Tensor<T>& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<int>& leaves() const { return leaves_; }

    /// Reverse sweep from a rank-0 root. Returns leaf id -> gradient; leaves
    /// the root does not depend on get zero tensors. Stateless: calling twice
    /// gives identical results.
    std::map<int, Tensor<T>> backward(Var root) {
        const Node& r = nodes_.at(std::size_t(root.id));
        if (!r.value.is_scalar())
            throw std::invalid_argument("backward root must be rank-0, got " +
                                        shape_str(r.value.shape));
        BackContext ctx;
        ctx.grads.resize(nodes_.size());
        ctx.has.assign(nodes_.size(), 0);
        ctx.acc(root.id, Shape{}).data[0] = T(1);

        for (int id = root.id; id >= 0; --id) {
            if (!ctx.has[std::size_t(id)]) continue;
            if (nodes_[std::size_t(id)].backward)
                nodes_[std::size_t(id)].backward(*this, id, ctx);
        }

        std::map<int, Tensor<T>> out;
        for (int leaf_id : leaves_) {
            if (ctx.has[std::size_t(leaf_id)])
                out.emplace(leaf_id, std::move(ctx.grads[std::size_t(leaf_id)]));
            else
                out.emplace(leaf_id, Tensor<T>::zeros(nodes_[std::size_t(leaf_id)].value.shape));
        }
        return out;
    }

    // -- primitive ops ------------------------------------------------------

    Var add(Var a, Var b) {
        const auto &ta = val(a), &tb = val(b);
        require_same(ta, tb, "add");
        Tensor<T> out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
        return record(std::move(out), [ia = a.id, ib = b.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            accumulate_same(g, ctx, ia, gout, +1);
            accumulate_same(g, ctx, ib, gout, +1);
        });
    }

    Var sub(Var a, Var b) {
        const auto &ta = val(a), &tb = val(b);
        require_same(ta, tb, "sub");
        Tensor<T> out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= tb.data[i];
        return record(std::move(out), [ia = a.id, ib = b.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            accumulate_same(g, ctx, ia, gout, +1);
            accumulate_same(g, ctx, ib, gout, -1);
        });
    }

    Var mul(Var a, Var b) {
        const auto &ta = val(a), &tb = val(b);
        require_same(ta, tb, "mul");
        Tensor<T> out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= tb.data[i];
        return record(std::move(out), [ia = a.id, ib = b.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
            const Tensor<T>& vb = g.nodes_[std::size_t(ib)].value;
            Tensor<T>& ga = ctx.acc(ia, va.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i) ga.data[i] += gout.data[i] * vb.data[i];
            Tensor<T>& gb = ctx.acc(ib, vb.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i) gb.data[i] += gout.data[i] * va.data[i];
        });
    }

    Var negate(Var a) { return scale(a, T(-1)); }

    Var scale(Var a, T alpha) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v *= alpha;
        return record(std::move(out), [ia = a.id, alpha](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i) ga.data[i] += alpha * gout.data[i];
        });
    }

    Var relu(Var a) {
        Tensor<T> out = map_unary(val(a), Unary::Relu);
        return record(std::move(out), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
            Tensor<T>& ga = ctx.acc(ia, va.shape);
            // subgradient at exactly 0 is 0
            for (std::size_t i = 0; i < gout.numel(); ++i)
                if (va.data[i] > T(0)) ga.data[i] += gout.data[i];
        });
    }

    Var tanh_(Var a) {
        Tensor<T> out = map_unary(val(a), Unary::Tanh);
        return record(std::move(out), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& y = g.nodes_[std::size_t(self)].value;
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i)
                ga.data[i] += gout.data[i] * (T(1) - y.data[i] * y.data[i]);
        });
    }

    Var sigmoid(Var a) {
        Tensor<T> out = map_unary(val(a), Unary::Sigmoid);
        return record(std::move(out), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& y = g.nodes_[std::size_t(self)].value;
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i)
                ga.data[i] += gout.data[i] * y.data[i] * (T(1) - y.data[i]);
        });
    }

    Var matmul(Var a, Var b) {
        Tensor<T> out = steer::matmul(val(a), val(b));
        return record(std::move(out), [ia = a.id, ib = b.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
            const Tensor<T>& vb = g.nodes_[std::size_t(ib)].value;
            const std::size_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
            // dA = G * B^T
            Tensor<T>& ga = ctx.acc(ia, va.shape);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T s = 0;
                    const T* grow = gout.data.data() + i * n;
                    const T* brow = vb.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga.data[i * k + p] += s;
                }
            // dB = A^T * G
            Tensor<T>& gb = ctx.acc(ib, vb.shape);
            for (std::size_t i = 0; i < m; ++i) {
                const T* arow = va.data.data() + i * k;
                const T* grow = gout.data.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = arow[p];
                    if (av == T(0)) continue;
                    T* gbrow = gb.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        });
    }

    /// a[..., M] + v[M], v broadcast over all leading axes.
    Var add_rows(Var a, Var v) { return rows_op(a, v, RowsOp::Add); }
    /// a[..., M] - v[M]
    Var sub_rows(Var a, Var v) { return rows_op(a, v, RowsOp::Sub); }
    /// a[..., M] * v[M] elementwise per trailing axis
    Var mul_rows(Var a, Var v) { return rows_op(a, v, RowsOp::Mul); }

    /// Mean over all leading axes -> tensor of shape [last extent].
    Var last_axis_mean(Var a) {
        const auto& ta = val(a);
        if (ta.rank() < 1)
            throw std::invalid_argument("last_axis_mean needs rank >= 1");
        const std::size_t c = ta.shape.back();
        const std::size_t rows = c == 0 ? 0 : ta.numel() / c;
        if (rows == 0) throw std::invalid_argument("last_axis_mean over empty tensor");
        Tensor<T> out({c});
        for (std::size_t i = 0; i < ta.numel(); ++i) out.data[i % c] += ta.data[i];
        for (auto& x : out.data) x /= T(rows);
        return record(std::move(out), [ia = a.id, c, rows](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            const T inv = T(1) / T(rows);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += gout.data[i % c] * inv;
        });
    }

    /// Elementwise 1/sqrt(x + eps).
    Var rsqrt_shift(Var a, T eps) {
        Tensor<T> out = val(a);
        for (auto& v : out.data) v = T(1) / std::sqrt(v + eps);
        return record(std::move(out), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& y = g.nodes_[std::size_t(self)].value;
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            for (std::size_t i = 0; i < gout.numel(); ++i)
                ga.data[i] += gout.data[i] * T(-0.5) * y.data[i] * y.data[i] * y.data[i];
        });
    }

    Var sum_all(Var a) {
        const auto& ta = val(a);
        T s = 0;
        for (T v : ta.data) s += v;
        return record(Tensor<T>::scalar(s), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const T gout = ctx.grads[std::size_t(self)].data[0];
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            for (auto& v : ga.data) v += gout;
        });
    }

    Var mean_all(Var a) {
        const auto& ta = val(a);
        if (ta.numel() == 0) throw std::invalid_argument("mean_all over empty tensor");
        T s = 0;
        for (T v : ta.data) s += v;
        s /= T(ta.numel());
        return record(Tensor<T>::scalar(s), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const T gout = ctx.grads[std::size_t(self)].data[0];
            Tensor<T>& ga = ctx.acc(ia, g.nodes_[std::size_t(ia)].value.shape);
            const T inv = gout / T(ga.numel());
            for (auto& v : ga.data) v += inv;
        });
    }

    Var reshape(Var a, Shape s) {
        Tensor<T> out = val(a).reshaped(std::move(s));
        return record(std::move(out), [ia = a.id](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Shape& in_shape = g.nodes_[std::size_t(ia)].value.shape;
            Tensor<T>& ga = ctx.acc(ia, in_shape);
            for (std::size_t i = 0; i < gout.numel(); ++i) ga.data[i] += gout.data[i];
        });
    }

    Var slice(Var a, std::size_t axis, std::size_t from, std::size_t to) {
        const auto& ta = val(a);
        if (axis >= ta.rank() || from > to || to > ta.shape[axis])
            throw std::invalid_argument("slice [" + std::to_string(from) + "," +
                                        std::to_string(to) + ") on axis " + std::to_string(axis) +
                                        " invalid for " + shape_str(ta.shape));
        std::vector<AxisAmount> amounts(ta.rank());
        amounts[axis] = {from, ta.shape[axis] - to};
        Tensor<T> out = steer::crop(ta, amounts);
        return record(std::move(out),
                      [ia = a.id, axis, from](Graph& g, int self, BackContext& ctx) {
                          const Tensor<T>& gout = ctx.grads[std::size_t(self)];
                          const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
                          Tensor<T>& ga = ctx.acc(ia, va.shape);
                          // scatter the slice gradient back into place
                          const auto out_shape = gout.shape;
                          std::vector<std::size_t> idx(out_shape.size(), 0);
                          const auto in_strides = va.strides();
                          for (std::size_t flat = 0; flat < gout.numel(); ++flat) {
                              std::size_t in_flat = 0;
                              for (std::size_t ax = 0; ax < out_shape.size(); ++ax) {
                                  const std::size_t src = ax == axis ? idx[ax] + from : idx[ax];
                                  in_flat += src * in_strides[ax];
                              }
                              ga.data[in_flat] += gout.data[flat];
                              for (std::size_t ax = out_shape.size(); ax-- > 0;) {
                                  if (++idx[ax] < out_shape[ax]) break;
                                  idx[ax] = 0;
                              }
                          }
                      });
    }

    /// Crop leading/trailing elements per axis (differentiable pad_crop).
    Var crop_axes(Var a, std::vector<AxisAmount> amounts) {
        Tensor<T> out = steer::crop(val(a), amounts);
        return record(std::move(out), [ia = a.id, amounts](Graph& g, int self, BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
            Tensor<T>& ga = ctx.acc(ia, va.shape);
            std::vector<std::size_t> idx(gout.rank(), 0);
            const auto in_strides = va.strides();
            for (std::size_t flat = 0; flat < gout.numel(); ++flat) {
                std::size_t in_flat = 0;
                for (std::size_t ax = 0; ax < gout.rank(); ++ax)
                    in_flat += (idx[ax] + amounts[ax].lead) * in_strides[ax];
                ga.data[in_flat] += gout.data[flat];
                for (std::size_t ax = gout.rank(); ax-- > 0;) {
                    if (++idx[ax] < gout.shape[ax]) break;
                    idx[ax] = 0;
                }
            }
        });
    }

    Var concat(const std::vector<Var>& parts, std::size_t axis) {
        if (parts.empty()) throw std::invalid_argument("concat of zero parts");
        const auto& first = val(parts[0]);
        if (axis >= first.rank()) throw std::invalid_argument("concat axis out of range");
        Shape out_shape = first.shape;
        for (std::size_t p = 1; p < parts.size(); ++p) {
            const auto& tp = val(parts[p]);
            if (tp.rank() != first.rank())
                throw std::invalid_argument("concat rank mismatch");
            for (std::size_t ax = 0; ax < first.rank(); ++ax)
                if (ax != axis && tp.shape[ax] != first.shape[ax])
                    throw std::invalid_argument("concat extent mismatch on axis " +
                                                std::to_string(ax));
            out_shape[axis] += tp.shape[axis];
        }
        Tensor<T> out(out_shape);
        // outer = product of axes before `axis`; copy contiguous chunks
        std::size_t outer = 1;
        for (std::size_t ax = 0; ax < axis; ++ax) outer *= out_shape[ax];
        std::size_t tail = 1;
        for (std::size_t ax = axis + 1; ax < out_shape.size(); ++ax) tail *= out_shape[ax];
        const std::size_t out_chunk = out_shape[axis] * tail;
        std::vector<std::size_t> offsets(parts.size());
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const auto& tp = val(parts[p]);
            const std::size_t chunk = tp.shape[axis] * tail;
            offsets[p] = off;
            for (std::size_t o = 0; o < outer; ++o)
                std::copy(tp.data.begin() + long(o * chunk), tp.data.begin() + long((o + 1) * chunk),
                          out.data.begin() + long(o * out_chunk + off));
            off += chunk;
        }
        std::vector<int> ids(parts.size());
        for (std::size_t p = 0; p < parts.size(); ++p) ids[p] = parts[p].id;
        return record(std::move(out),
                      [ids, offsets, outer, tail, out_chunk](Graph& g, int self, BackContext& ctx) {
                          const Tensor<T>& gout = ctx.grads[std::size_t(self)];
                          for (std::size_t p = 0; p < ids.size(); ++p) {
                              const Tensor<T>& vp = g.nodes_[std::size_t(ids[p])].value;
                              Tensor<T>& gp = ctx.acc(ids[p], vp.shape);
                              const std::size_t chunk = vp.numel() / (outer == 0 ? 1 : outer);
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t i = 0; i < chunk; ++i)
                                      gp.data[o * chunk + i] +=
                                          gout.data[o * out_chunk + offsets[p] + i];
                          }
                          (void)tail;
                      });
    }

    /// Record a custom node; used by the layer ops (conv, pooling, ...).
    Var record(Tensor<T> value, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), false, std::move(fn)});
        return Var{int(nodes_.size()) - 1};
    }

    const Tensor<T>& val(Var v) const {
        if (!v.valid() || std::size_t(v.id) >= nodes_.size())
            throw std::invalid_argument("invalid graph variable");
        return nodes_[std::size_t(v.id)].value;
    }

private:
    enum class RowsOp { Add, Sub, Mul };

    Var rows_op(Var a, Var v, RowsOp op) {
        const auto &ta = val(a), &tv = val(v);
        if (tv.rank() != 1 || ta.rank() < 1 || ta.shape.back() != tv.shape[0])
            throw std::invalid_argument("broadcast op expects a[..., M] and v[M], got " +
                                        shape_str(ta.shape) + " and " + shape_str(tv.shape));
        const std::size_t m = tv.shape[0];
        Tensor<T> out = ta;
        switch (op) {
            case RowsOp::Add:
                for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += tv.data[i % m];
                break;
            case RowsOp::Sub:
                for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= tv.data[i % m];
                break;
            case RowsOp::Mul:
                for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= tv.data[i % m];
                break;
        }
        return record(std::move(out), [ia = a.id, iv = v.id, m, op](Graph& g, int self,
                                                                    BackContext& ctx) {
            const Tensor<T>& gout = ctx.grads[std::size_t(self)];
            const Tensor<T>& va = g.nodes_[std::size_t(ia)].value;
            const Tensor<T>& vv = g.nodes_[std::size_t(iv)].value;
            Tensor<T>& ga = ctx.acc(ia, va.shape);
            Tensor<T>& gv = ctx.acc(iv, vv.shape);
            switch (op) {
                case RowsOp::Add:
                    for (std::size_t i = 0; i < gout.numel(); ++i) {
                        ga.data[i] += gout.data[i];
                        gv.data[i % m] += gout.data[i];
                    }
                    break;
                case RowsOp::Sub:
                    for (std::size_t i = 0; i < gout.numel(); ++i) {
                        ga.data[i] += gout.data[i];
                        gv.data[i % m] -= gout.data[i];
                    }
                    break;
                case RowsOp::Mul:
                    for (std::size_t i = 0; i < gout.numel(); ++i) {
                        ga.data[i] += gout.data[i] * vv.data[i % m];
                        gv.data[i % m] += gout.data[i] * va.data[i];
                    }
                    break;
            }
        });
    }

    static void accumulate_same(Graph& g, BackContext& ctx, int id, const Tensor<T>& gout,
                                int sign) {
        Tensor<T>& acc = ctx.acc(id, g.nodes_[std::size_t(id)].value.shape);
        if (sign > 0)
            for (std::size_t i = 0; i < gout.numel(); ++i) acc.data[i] += gout.data[i];
        else
            for (std::size_t i = 0; i < gout.numel(); ++i) acc.data[i] -= gout.data[i];
    }

    static void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
        if (!a.same_shape(b))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                        " vs " + shape_str(b.shape));
    }

    std::vector<Node> nodes_;
    std::vector<int> leaves_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

struct GradientReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::vector<double> per_leaf_rel;
    std::vector<double> per_leaf_abs;
};

/// Central-difference check of backward(). `f` builds a fresh graph from the
/// given leaves and returns a rank-0 root. Double precision only; callers
/// keep inputs away from relu kinks.
template <typename F>
GradientReport finite_diff_check(F&& f, std::vector<Tensor<double>> inputs, double eps = 1e-5) {
    auto eval = [&](const std::vector<Tensor<double>>& xs) {
        Graph<double> g;
        std::vector<Var> leaves;
        leaves.reserve(xs.size());
        for (const auto& x : xs) leaves.push_back(g.leaf(x));
        Var root = f(g, leaves);
        return g.value(root).data[0];
    };

    // analytic gradients
    Graph<double> g;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(g.leaf(x));
    Var root = f(g, leaves);
    auto grads = g.backward(root);

    GradientReport report;
    for (std::size_t li = 0; li < inputs.size(); ++li) {
        const Tensor<double>& analytic = grads.at(leaves[li].id);
        double leaf_rel = 0.0, leaf_abs = 0.0;
        for (std::size_t e = 0; e < inputs[li].numel(); ++e) {
            std::vector<Tensor<double>> xs = inputs;
            const double orig = xs[li].data[e];
            xs[li].data[e] = orig + eps;
            const double fplus = eval(xs);
            xs[li].data[e] = orig - eps;
            const double fminus = eval(xs);
            const double numeric = (fplus - fminus) / (2.0 * eps);
            const double a = analytic.data[e];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
            leaf_abs = std::max(leaf_abs, abs_err);
            leaf_rel = std::max(leaf_rel, rel_err);
        }
        report.per_leaf_rel.push_back(leaf_rel);
        report.per_leaf_abs.push_back(leaf_abs);
        report.max_rel_error = std::max(report.max_rel_error, leaf_rel);
        report.max_abs_error = std::max(report.max_abs_error, leaf_abs);
    }
    return report;
}

}  // namespace steer
