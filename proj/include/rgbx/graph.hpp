#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgbx {

using Shape = std::vector<int>;
using Buffer = std::vector<double>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= size_t(d);
    return n;
}

class Graph;

// Lightweight handle: a node id bound to the graph that recorded it.
struct Tensor {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Shape& shape() const;
    const Buffer& value() const;
    const Buffer& grad() const;
    size_t size() const;
    double item() const;
};

// Reverse-mode tape over dense double tensors. Nodes are recorded in
// creation order, which is a topological order by construction; backward
// walks the tape in reverse. Leaf gradients accumulate across backward
// calls until zero_grad().
class Graph {
public:
    struct Node {
        Shape shape;
        std::shared_ptr<Buffer> value;
        Buffer grad;             // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Graph&, int)> forward;  // null for leaves
        std::function<void(Graph&, int)> backward; // null for leaves
    };

    Tensor leaf(Shape shape, Buffer data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("leaf: data length does not match shape");
        return push(std::move(shape), std::make_shared<Buffer>(std::move(data)), requires_grad);
    }

    // Shares the storage with the caller; used for network parameters so a
    // fresh per-sample graph does not copy weights.
    Tensor leaf_shared(Shape shape, std::shared_ptr<Buffer> data, bool requires_grad = true) {
        if (!data || shape_numel(shape) != data->size())
            throw std::invalid_argument("leaf_shared: data length does not match shape");
        return push(std::move(shape), std::move(data), requires_grad);
    }

    Tensor scalar(double v, bool requires_grad = false) {
        return leaf(Shape{1}, Buffer{v}, requires_grad);
    }

    Tensor make_node(Shape shape, bool requires_grad,
                     std::function<void(Graph&, int)> fwd,
                     std::function<void(Graph&, int)> bwd) {
        Tensor t = push(std::move(shape), std::make_shared<Buffer>(), requires_grad);
        Node& n = nodes_[t.id];
        n.value->assign(shape_numel(n.shape), 0.0);
        n.forward = std::move(fwd);
        n.backward = std::move(bwd);
        n.forward(*this, t.id);
        return t;
    }

    Node& node(int id) { return nodes_[size_t(id)]; }
    const Node& node(int id) const { return nodes_[size_t(id)]; }
    Buffer& val(int id) { return *nodes_[size_t(id)].value; }
    const Buffer& val(int id) const { return *nodes_[size_t(id)].value; }
    size_t node_count() const { return nodes_.size(); }

    // Accumulates `delta` into the grad buffer of `id` if that node wants
    // gradients; allocates the buffer on first touch.
    Buffer* grad_sink(int id) {
        Node& n = nodes_[size_t(id)];
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() != shape_numel(n.shape)) n.grad.assign(shape_numel(n.shape), 0.0);
        return &n.grad;
    }

    void backward(Tensor loss) {
        if (loss.graph != this) throw std::invalid_argument("backward: tensor from another graph");
        if (shape_numel(node(loss.id).shape) != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        // Fresh pass for interior nodes; leaves keep accumulating.
        for (auto& n : nodes_)
            if (n.forward) n.grad.clear();
        Node& ln = node(loss.id);
        if (!ln.requires_grad) return;
        if (ln.grad.size() != 1) ln.grad.assign(1, 0.0);
        ln.grad[0] += 1.0;
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (!n.backward || n.grad.empty() || !n.requires_grad) continue;
            n.backward(*this, id);
        }
    }

    void zero_grad() {
        for (auto& n : nodes_) n.grad.clear();
    }

    // Re-executes every recorded forward; reproduces outputs bit-for-bit
    // given unchanged leaf data.
    void replay() {
        for (int id = 0; id < int(nodes_.size()); ++id)
            if (nodes_[size_t(id)].forward) nodes_[size_t(id)].forward(*this, id);
    }

    void record_fault() { ++faults_; }
    int fault_count() const { return faults_; }
    void warn(std::string msg) { warnings_.push_back(std::move(msg)); }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    Tensor push(Shape shape, std::shared_ptr<Buffer> data, bool requires_grad) {
        Node n;
        n.shape = std::move(shape);
        n.value = std::move(data);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Tensor{this, int(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    int faults_ = 0;
    std::vector<std::string> warnings_;
};

inline const Shape& Tensor::shape() const { return graph->node(id).shape; }
inline const Buffer& Tensor::value() const { return graph->val(id); }
inline const Buffer& Tensor::grad() const { return graph->node(id).grad; }
inline size_t Tensor::size() const { return shape_numel(graph->node(id).shape); }
inline double Tensor::item() const {
    if (size() != 1) throw std::logic_error("item: tensor is not scalar");
    return value()[0];
}

namespace detail {

inline void check_same_graph(const Tensor& a, const Tensor& b) {
    if (a.graph != b.graph) throw std::invalid_argument("operands from different graphs");
}

// Binary elementwise with broadcasting limited to equal shapes or a
// size-1 operand on either side.
template <class Fwd, class BwdA, class BwdB>
Tensor binary_elementwise(Tensor a, Tensor b, Fwd f, BwdA dfa, BwdB dfb,
                          bool fault_small_divisor = false) {
    check_same_graph(a, b);
    Graph& g = *a.graph;
    const size_t na = a.size(), nb = b.size();
    if (na != nb && na != 1 && nb != 1)
        throw std::invalid_argument("elementwise: shape mismatch");
    Shape out_shape = na >= nb ? a.shape() : b.shape();
    const int ida = a.id, idb = b.id;
    bool rg = g.node(ida).requires_grad || g.node(idb).requires_grad;
    return g.make_node(
        out_shape, rg,
        [ida, idb, f, fault_small_divisor](Graph& g, int self) {
            const Buffer& va = g.val(ida);
            const Buffer& vb = g.val(idb);
            Buffer& out = g.val(self);
            const size_t n = out.size();
            const size_t sa = va.size() == 1 ? 0 : 1;
            const size_t sb = vb.size() == 1 ? 0 : 1;
            if (fault_small_divisor) {
                for (size_t i = 0; i < vb.size(); ++i)
                    if (std::fabs(vb[i]) < 1e-12) { g.record_fault(); break; }
            }
            for (size_t i = 0; i < n; ++i) out[i] = f(va[i * sa], vb[i * sb]);
        },
        [ida, idb, dfa, dfb](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            const Buffer& va = g.val(ida);
            const Buffer& vb = g.val(idb);
            const size_t n = go.size();
            const size_t sa = va.size() == 1 ? 0 : 1;
            const size_t sb = vb.size() == 1 ? 0 : 1;
            if (Buffer* ga = g.grad_sink(ida))
                for (size_t i = 0; i < n; ++i) (*ga)[i * sa] += dfa(va[i * sa], vb[i * sb]) * go[i];
            if (Buffer* gb = g.grad_sink(idb))
                for (size_t i = 0; i < n; ++i) (*gb)[i * sb] += dfb(va[i * sa], vb[i * sb]) * go[i];
        });
}

template <class Fwd, class Bwd>
Tensor unary_elementwise(Tensor a, Fwd f, Bwd df) {
    Graph& g = *a.graph;
    const int ida = a.id;
    return g.make_node(
        a.shape(), g.node(ida).requires_grad,
        [ida, f](Graph& g, int self) {
            const Buffer& va = g.val(ida);
            Buffer& out = g.val(self);
            for (size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
        },
        [ida, df](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            const Buffer& va = g.val(ida);
            if (Buffer* ga = g.grad_sink(ida))
                for (size_t i = 0; i < va.size(); ++i) (*ga)[i] += df(va[i]) * go[i];
        });
}

} // namespace detail

inline Tensor add(Tensor a, Tensor b) {
    return detail::binary_elementwise(a, b,
        [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}
inline Tensor sub(Tensor a, Tensor b) {
    return detail::binary_elementwise(a, b,
        [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}
inline Tensor mul(Tensor a, Tensor b) {
    return detail::binary_elementwise(a, b,
        [](double x, double y) { return x * y; },
        [](double, double y) { return y; },
        [](double x, double) { return x; });
}
// Records a graph fault when any divisor magnitude is below 1e-12; the
// division itself still proceeds with IEEE semantics.
inline Tensor div(Tensor a, Tensor b) {
    return detail::binary_elementwise(a, b,
        [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); },
        /*fault_small_divisor=*/true);
}

inline Tensor add(Tensor a, double c) { return add(a, a.graph->scalar(c)); }
inline Tensor sub(Tensor a, double c) { return sub(a, a.graph->scalar(c)); }
inline Tensor sub(double c, Tensor a) { return sub(a.graph->scalar(c), a); }
inline Tensor mul(Tensor a, double c) { return mul(a, a.graph->scalar(c)); }
inline Tensor div(Tensor a, double c) { return div(a, a.graph->scalar(c)); }

// abs uses subgradient 0 at exactly 0.
inline Tensor abs(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return std::fabs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
inline Tensor relu(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor log(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return std::log(x); },
        [](double x) { return 1.0 / x; });
}
inline Tensor square(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return x * x; },
        [](double x) { return 2.0 * x; });
}
inline Tensor exp(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return std::exp(x); },
        [](double x) { return std::exp(x); });
}
inline Tensor sqrt(Tensor a) {
    return detail::unary_elementwise(a,
        [](double x) { return std::sqrt(x); },
        [](double x) { return 0.5 / std::sqrt(x); });
}

// max(a, c) composed as relu(a - c) + c, with the usual relu subgradient.
inline Tensor clamp_min(Tensor a, double c) { return add(relu(sub(a, c)), c); }

namespace detail {

inline Tensor reduce_impl(Tensor a, const Tensor* mask, bool mean, double eps) {
    Graph& g = *a.graph;
    const int ida = a.id;
    const int idm = mask ? mask->id : -1;
    if (mask) {
        check_same_graph(a, *mask);
        if (mask->size() != a.size())
            throw std::invalid_argument("reduce: mask shape mismatch");
    }
    return g.make_node(
        Shape{1}, g.node(ida).requires_grad,
        [ida, idm, mean, eps](Graph& g, int self) {
            const Buffer& va = g.val(ida);
            double acc = 0.0, denom;
            if (idm >= 0) {
                const Buffer& vm = g.val(idm);
                double cnt = 0.0;
                for (size_t i = 0; i < va.size(); ++i) {
                    acc += va[i] * vm[i];
                    cnt += vm[i];
                }
                denom = mean ? cnt + eps : 1.0;
            } else {
                for (double v : va) acc += v;
                denom = mean ? double(va.size()) : 1.0;
            }
            g.val(self)[0] = acc / denom;
        },
        [ida, idm, mean, eps](Graph& g, int self) {
            const double go = g.node(self).grad[0];
            Buffer* ga = g.grad_sink(ida);
            if (!ga) return;
            const Buffer& va = g.val(ida);
            if (idm >= 0) {
                const Buffer& vm = g.val(idm);
                double cnt = 0.0;
                for (double m : vm) cnt += m;
                const double denom = mean ? cnt + eps : 1.0;
                for (size_t i = 0; i < va.size(); ++i) (*ga)[i] += vm[i] * go / denom;
            } else {
                const double denom = mean ? double(va.size()) : 1.0;
                for (size_t i = 0; i < va.size(); ++i) (*ga)[i] += go / denom;
            }
        });
}

} // namespace detail

inline Tensor reduce_sum(Tensor a) { return detail::reduce_impl(a, nullptr, false, 0.0); }
inline Tensor reduce_sum(Tensor a, Tensor mask) { return detail::reduce_impl(a, &mask, false, 0.0); }
inline Tensor reduce_mean(Tensor a) { return detail::reduce_impl(a, nullptr, true, 0.0); }
// Masked mean divides by (count of mask ones + eps); an all-zero mask
// therefore yields 0 instead of a division fault.
inline Tensor reduce_mean(Tensor a, Tensor mask, double eps = 1e-6) {
    return detail::reduce_impl(a, &mask, true, eps);
}

// Same data under a new shape (copying node; sizes must match).
inline Tensor reshape(Tensor a, Shape shape) {
    Graph& g = *a.graph;
    if (shape_numel(shape) != a.size()) throw std::invalid_argument("reshape: size mismatch");
    const int ida = a.id;
    return g.make_node(
        std::move(shape), g.node(ida).requires_grad,
        [ida](Graph& g, int self) { g.val(self) = g.val(ida); },
        [ida](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            if (Buffer* ga = g.grad_sink(ida))
                for (size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
        });
}

// Selects entries of a flattened tensor; backward scatter-adds.
inline Tensor gather(Tensor a, std::vector<size_t> indices) {
    Graph& g = *a.graph;
    const int ida = a.id;
    for (size_t idx : indices)
        if (idx >= a.size()) throw std::out_of_range("gather: index out of range");
    auto idx = std::make_shared<std::vector<size_t>>(std::move(indices));
    return g.make_node(
        Shape{int(idx->size())}, g.node(ida).requires_grad,
        [ida, idx](Graph& g, int self) {
            const Buffer& va = g.val(ida);
            Buffer& out = g.val(self);
            for (size_t i = 0; i < idx->size(); ++i) out[i] = va[(*idx)[i]];
        },
        [ida, idx](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            if (Buffer* ga = g.grad_sink(ida))
                for (size_t i = 0; i < idx->size(); ++i) (*ga)[(*idx)[i]] += go[i];
        });
}

} // namespace rgbx
