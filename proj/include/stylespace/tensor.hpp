#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Every op records its parents and a backward closure on the result node when
// at least one input requires a gradient. `backward()` on a scalar walks the
// recorded graph in reverse topological order. Leaf gradients accumulate
// across calls until `zero_grad()`; intermediate gradients are reset at the
// start of each backward pass.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stylespace/errors.hpp"

namespace stylespace {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }

    T* grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

template <typename T>
class BasicTensor {
   public:
    using Scalar = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    BasicTensor() = default;
    explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

    static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
        }
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return BasicTensor(std::move(node));
    }

    static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return from_data({}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    // In-place access for leaves owned by an optimizer or loader.
    std::span<T> mutable_data() { return node_->data; }
    std::vector<T> to_vector() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool is_leaf() const { return node_->is_leaf(); }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }
    void zero_grad() { node_->grad.clear(); }

    // New leaf holding a copy of the values, cut from any graph.
    BasicTensor detach(bool requires_grad = false) const {
        return from_data(shape(), node_->data, requires_grad);
    }

    template <typename U>
    BasicTensor<U> cast(bool requires_grad = false) const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return BasicTensor<U>::from_data(shape(), std::move(out), requires_grad);
    }

    void backward() const;

    const NodePtr& node() const { return node_; }

   private:
    NodePtr node_;
};

using Tensor = BasicTensor<float>;

template <typename T>
void BasicTensor<T>::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!requires_grad()) return;

    // Iterative post-order DFS over nodes that carry gradients.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (!node->is_leaf()) node->grad.clear();
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

namespace detail {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn, const char* op) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return BasicTensor<T>(std::move(node));
}

// True when `small` can be broadcast onto `big`: aligned from the trailing
// dimension, each dimension of `small` equals that of `big` or is 1.
inline bool trailing_compatible(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    std::size_t offset = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[i] != big[offset + i] && small[i] != 1) return false;
    }
    return true;
}

// For each flat index of `out`, the flat index of `in` under trailing broadcast.
inline std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
    std::size_t n = shape_numel(out);
    std::vector<std::size_t> map(n, 0);
    if (shape_numel(in) == 1) return map;
    std::size_t rank = out.size();
    std::size_t offset = rank - in.size();
    std::vector<std::size_t> in_stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        in_stride[offset + i] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t pos = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        map[flat] = pos;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            pos += in_stride[d];
            if (idx[d] < out[d]) break;
            pos -= in_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    return map;
}

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> map_a;  // empty means identity
    std::vector<std::size_t> map_b;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
    } else if (trailing_compatible(a, b)) {
        plan.out = a;
        plan.map_b = broadcast_map(a, b);
    } else if (trailing_compatible(b, a)) {
        plan.out = b;
        plan.map_a = broadcast_map(b, a);
    } else {
        throw DimensionError(std::string(op) + ": cannot broadcast shapes " + shape_str(a) + " and " +
                             shape_str(b));
    }
    return plan;
}

template <typename T, typename Forward, typename Backward>
BasicTensor<T> unary(const BasicTensor<T>& x, Forward f, Backward df, const char* op) {
    auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result<T>(
        x.shape(), std::move(out), {x},
        [df](Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * df(parent.data[i], self.data[i]);
            }
        },
        op);
}

}  // namespace detail

// ---- elementwise binary ops (trailing broadcast) -------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    auto plan = detail::plan_broadcast(a.shape(), b.shape(), "add");
    std::size_t n = shape_numel(plan.out);
    auto ad = a.data();
    auto bd = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = ad[plan.map_a.empty() ? i : plan.map_a[i]] + bd[plan.map_b.empty() ? i : plan.map_b[i]];
    }
    return detail::make_result<T>(
        plan.out, std::move(out), {a, b},
        [map_a = std::move(plan.map_a), map_b = std::move(plan.map_b)](detail::Node<T>& self) {
            for (int side = 0; side < 2; ++side) {
                auto& parent = *self.parents[side];
                if (!parent.requires_grad) continue;
                const auto& map = side == 0 ? map_a : map_b;
                T* g = parent.grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[map.empty() ? i : map[i]] += self.grad[i];
            }
        },
        "add");
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    auto plan = detail::plan_broadcast(a.shape(), b.shape(), "sub");
    std::size_t n = shape_numel(plan.out);
    auto ad = a.data();
    auto bd = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = ad[plan.map_a.empty() ? i : plan.map_a[i]] - bd[plan.map_b.empty() ? i : plan.map_b[i]];
    }
    return detail::make_result<T>(
        plan.out, std::move(out), {a, b},
        [map_a = std::move(plan.map_a), map_b = std::move(plan.map_b)](detail::Node<T>& self) {
            for (int side = 0; side < 2; ++side) {
                auto& parent = *self.parents[side];
                if (!parent.requires_grad) continue;
                const auto& map = side == 0 ? map_a : map_b;
                T sign = side == 0 ? T(1) : T(-1);
                T* g = parent.grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    g[map.empty() ? i : map[i]] += sign * self.grad[i];
                }
            }
        },
        "sub");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    auto plan = detail::plan_broadcast(a.shape(), b.shape(), "mul");
    std::size_t n = shape_numel(plan.out);
    auto ad = a.data();
    auto bd = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = ad[plan.map_a.empty() ? i : plan.map_a[i]] * bd[plan.map_b.empty() ? i : plan.map_b[i]];
    }
    return detail::make_result<T>(
        plan.out, std::move(out), {a, b},
        [map_a = std::move(plan.map_a), map_b = std::move(plan.map_b)](detail::Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            auto ia = [&](std::size_t i) { return map_a.empty() ? i : map_a[i]; };
            auto ib = [&](std::size_t i) { return map_b.empty() ? i : map_b[i]; };
            if (pa.requires_grad) {
                T* g = pa.grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[ia(i)] += self.grad[i] * pb.data[ib(i)];
            }
            if (pb.requires_grad) {
                T* g = pb.grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[ib(i)] += self.grad[i] * pa.data[ia(i)];
            }
        },
        "mul");
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

// ---- scalar-constant ops --------------------------------------------------------

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    return detail::unary(
        x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; }, "scale");
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
    return detail::unary(
        x, [value](T v) { return v + value; }, [](T, T) { return T(1); }, "add_scalar");
}

// ---- elementwise unary ops -------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T out) { return out * (T(1) - out); }, "sigmoid");
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::exp(v); }, [](T, T out) { return out; }, "exp");
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
    for (T v : x.data()) {
        if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return detail::unary(
        x, [](T v) { return std::log(v); }, [](T in, T) { return T(1) / in; }, "log");
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v * v; }, [](T in, T) { return T(2) * in; }, "square");
}

// ---- reductions (64-bit accumulation) -------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    return detail::make_result<T>(
        {}, {static_cast<T>(acc)}, {x},
        [](detail::Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t i = 0; i < parent.data.size(); ++i) g[i] += self.grad[0];
        },
        "sum");
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum over the last axis: [..., k] -> [...].
template <typename T>
BasicTensor<T> sum_last(const BasicTensor<T>& x) {
    if (x.rank() == 0) throw DimensionError("sum_last on a rank-0 tensor");
    std::size_t k = x.shape().back();
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    std::size_t rows = x.numel() / k;
    auto in = x.data();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += static_cast<double>(in[r * k + j]);
        out[r] = static_cast<T>(acc);
    }
    return detail::make_result<T>(
        out_shape, std::move(out), {x},
        [k](detail::Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t r = 0; r < self.grad.size(); ++r) {
                for (std::size_t j = 0; j < k; ++j) g[r * k + j] += self.grad[r];
            }
        },
        "sum_last");
}

// ---- shape ops -----------------------------------------------------------------

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return detail::make_result<T>(
        std::move(shape), x.to_vector(), {x},
        [](detail::Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        },
        "reshape");
}

// [N, ...] -> [N, prod(...)]
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
    return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

// Concatenate along dimension 0; trailing shapes must agree.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<T> out;
    for (const auto& p : parts) {
        if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
            throw DimensionError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                                 shape_str(parts[0].shape()));
        }
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape = tail;
    shape.insert(shape.begin(), rows);
    return detail::make_result<T>(
        std::move(shape), std::move(out), parts,
        [](detail::Node<T>& self) {
            std::size_t offset = 0;
            for (auto& parent : self.parents) {
                std::size_t n = parent->data.size();
                if (parent->requires_grad) {
                    T* g = parent->grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                }
                offset += n;
            }
        },
        "concat");
}

// Rows [begin, end) along dimension 0.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for shape " + shape_str(x.shape()));
    }
    std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    std::vector<T> out(x.data().begin() + begin * row, x.data().begin() + end * row);
    return detail::make_result<T>(
        std::move(shape), std::move(out), {x},
        [offset = begin * row](detail::Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
        },
        "slice_rows");
}

// Nearest-neighbour upsampling by 2 on [N, C, H, W].
template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("upsample2x expects NCHW, got " + shape_str(x.shape()));
    std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<T> out(planes * 4 * h * w);
    auto in = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = in.data() + p * h * w;
        T* dst = out.data() + p * 4 * h * w;
        for (std::size_t y = 0; y < 2 * h; ++y) {
            for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
        }
    }
    return detail::make_result<T>(
        {x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
        [planes, h, w](detail::Node<T>& self) {
            auto& parent = *self.parents[0];
            T* g = parent.grad_buffer();
            for (std::size_t p = 0; p < planes; ++p) {
                const T* src = self.grad.data() + p * 4 * h * w;
                T* dst = g + p * h * w;
                for (std::size_t y = 0; y < 2 * h; ++y) {
                    for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                }
            }
        },
        "upsample2x");
}

// ---- linear algebra ----------------------------------------------------------

// [m, k] x [k, n] -> [m, n]. Each output row is computed independently of the
// others so a row's value never depends on what else is in the batch.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    using MatR = detail::MatR<T>;
    Eigen::Map<const MatR> A(a.data().data(), m, k);
    Eigen::Map<const MatR> B(b.data().data(), k, n);
    std::vector<T> out(m * n);
    Eigen::Map<MatR> C(out.data(), m, n);
    for (std::size_t i = 0; i < m; ++i) C.row(i).noalias() = A.row(i) * B;
    return detail::make_result<T>(
        {m, n}, std::move(out), {a, b},
        [m, k, n](detail::Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            Eigen::Map<const MatR> G(self.grad.data(), m, n);
            if (pa.requires_grad) {
                Eigen::Map<const MatR> B(pb.data.data(), k, n);
                Eigen::Map<MatR> dA(pa.grad_buffer(), m, k);
                dA.noalias() += G * B.transpose();
            }
            if (pb.requires_grad) {
                Eigen::Map<const MatR> A(pa.data.data(), m, k);
                Eigen::Map<MatR> dB(pb.grad_buffer(), k, n);
                dB.noalias() += A.transpose() * G;
            }
        },
        "matmul");
}

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ContractError("conv stride must be >= 1");
    if (kernel == 0 || kernel > in + 2 * pad) {
        throw DimensionError("conv kernel " + std::to_string(kernel) + " exceeds padded input " +
                             std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
    std::size_t col_rows() const { return channels * kh * kw; }
    std::size_t col_cols() const { return out_h * out_w; }
};

// Output columns [x0, x1) whose tap kj lands inside a row of `width` pixels.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
    auto lo = static_cast<long>(g.pad) - static_cast<long>(kj);
    std::size_t x0 = lo > 0 ? (static_cast<std::size_t>(lo) + g.stride - 1) / g.stride : 0;
    long hi = static_cast<long>(g.width) + static_cast<long>(g.pad) - static_cast<long>(kj);  // ix < width
    std::size_t x1 = hi <= 0 ? 0 : std::min(g.out_w, (static_cast<std::size_t>(hi) + g.stride - 1) / g.stride);
    return {x0, std::max(x0, x1)};
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
    std::size_t cols = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
                auto [x0, x1] = valid_columns(g, kj);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    T* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    // src[ox * stride] is input column ox * stride + kj - pad
                    const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width + kj - g.pad;
                    std::fill(dst, dst + x0, T(0));
                    if (g.stride == 1) {
                        std::copy(src + x0, src + x1, dst + x0);
                    } else {
                        for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + x1, dst + g.out_w, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
    std::size_t cols = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
                auto [x0, x1] = valid_columns(g, kj);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width + kj - g.pad;
                    const T* src = row + oy * g.out_w;
                    for (std::size_t ox = x0; ox < x1; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
        }
    }
}

}  // namespace detail

namespace detail {

// Shift-and-add convolution for stride 1 and few filters, where an im2col
// buffer would cost more than the arithmetic.
template <typename T>
void direct_conv_forward(const T* in, const T* w, const ConvGeometry& g, std::size_t filters, T* out) {
    for (std::size_t f = 0; f < filters; ++f) {
        T* plane = out + f * g.out_h * g.out_w;
        for (std::size_t c = 0; c < g.channels; ++c) {
            const T* src_plane = in + c * g.height * g.width;
            for (std::size_t ki = 0; ki < g.kh; ++ki) {
                for (std::size_t kj = 0; kj < g.kw; ++kj) {
                    T wv = w[((f * g.channels + c) * g.kh + ki) * g.kw + kj];
                    std::size_t x0 = kj < g.pad ? g.pad - kj : 0;
                    std::size_t x1 = std::min(g.out_w, g.width + g.pad - kj);
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        long iy = static_cast<long>(oy + ki) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                        const T* src = src_plane + static_cast<std::size_t>(iy) * g.width + kj - g.pad;
                        T* dst = plane + oy * g.out_w;
                        for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] += wv * src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void direct_conv_backward(const T* in, const T* w, const T* grad, const ConvGeometry& g, std::size_t filters,
                          T* dx, T* dw) {
    for (std::size_t f = 0; f < filters; ++f) {
        const T* gplane = grad + f * g.out_h * g.out_w;
        for (std::size_t c = 0; c < g.channels; ++c) {
            for (std::size_t ki = 0; ki < g.kh; ++ki) {
                for (std::size_t kj = 0; kj < g.kw; ++kj) {
                    std::size_t widx = ((f * g.channels + c) * g.kh + ki) * g.kw + kj;
                    T wv = w[widx];
                    std::size_t x0 = kj < g.pad ? g.pad - kj : 0;
                    std::size_t x1 = std::min(g.out_w, g.width + g.pad - kj);
                    T acc = T(0);
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        long iy = static_cast<long>(oy + ki) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                        std::size_t offset = (c * g.height + static_cast<std::size_t>(iy)) * g.width + kj - g.pad;
                        const T* gy = gplane + oy * g.out_w;
                        if (dw) {
                            const T* src = in + offset;
                            for (std::size_t ox = x0; ox < x1; ++ox) acc += gy[ox] * src[ox];
                        }
                        if (dx) {
                            T* dst = dx + offset;
                            for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] += wv * gy[ox];
                        }
                    }
                    if (dw) dw[widx] += acc;
                }
            }
        }
    }
}

inline constexpr std::size_t kDirectConvMaxFilters = 8;

}  // namespace detail

// Cross-correlation of [N, C, H, W] with [F, C, kh, kw], plus an optional
// per-filter bias of F elements (any shape, e.g. [F] or [F, 1, 1]).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t pad) {
    if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                             shape_str(kernel.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != kernel.dim(0)) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(kernel.dim(0)) + " filters");
    }
    detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), stride, pad, 0, 0};
    g.out_h = conv_out_dim(g.height, g.kh, stride, pad);
    g.out_w = conv_out_dim(g.width, g.kw, stride, pad);
    const std::size_t batch = input.dim(0), filters = kernel.dim(0);
    const std::size_t in_plane = g.channels * g.height * g.width;
    const std::size_t hw = g.col_cols();
    const std::size_t out_plane = filters * hw;
    const bool direct = stride == 1 && filters <= detail::kDirectConvMaxFilters;
    const bool keep_cols = !direct && kernel.requires_grad();

    using MatR = detail::MatR<T>;
    std::vector<T> out(batch * out_plane, T(0));
    if (has_bias) {
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t f = 0; f < filters; ++f) {
                std::fill_n(out.data() + n * out_plane + f * hw, hw, bias.data()[f]);
            }
        }
    }
    std::vector<T> cols;
    if (direct) {
        for (std::size_t n = 0; n < batch; ++n) {
            detail::direct_conv_forward(input.data().data() + n * in_plane, kernel.data().data(), g, filters,
                                        out.data() + n * out_plane);
        }
    } else {
        const std::size_t col_size = g.col_rows() * hw;
        cols.resize(keep_cols ? batch * col_size : col_size);
        Eigen::Map<const MatR> W(kernel.data().data(), filters, g.col_rows());
        for (std::size_t n = 0; n < batch; ++n) {
            T* col = cols.data() + (keep_cols ? n * col_size : 0);
            detail::im2col(input.data().data() + n * in_plane, g, col);
            Eigen::Map<const MatR> C(col, g.col_rows(), hw);
            Eigen::Map<MatR> Y(out.data() + n * out_plane, filters, hw);
            Y.noalias() += W * C;
        }
        if (!keep_cols) cols.clear();
    }

    std::vector<BasicTensor<T>> inputs = {input, kernel};
    if (has_bias) inputs.push_back(bias);
    return detail::make_result<T>(
        {batch, filters, g.out_h, g.out_w}, std::move(out), std::move(inputs),
        [g, batch, filters, in_plane, out_plane, hw, direct, has_bias,
         cols = std::move(cols)](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pk = *self.parents[1];
            T* dx = px.requires_grad ? px.grad_buffer() : nullptr;
            T* dk = pk.requires_grad ? pk.grad_buffer() : nullptr;
            if (has_bias && self.parents[2]->requires_grad) {
                T* db = self.parents[2]->grad_buffer();
                for (std::size_t f = 0; f < filters; ++f) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < batch; ++n) {
                        const T* gp = self.grad.data() + n * out_plane + f * hw;
                        for (std::size_t i = 0; i < hw; ++i) acc += gp[i];
                    }
                    db[f] += static_cast<T>(acc);
                }
            }
            const std::size_t col_size = g.col_rows() * hw;
            if (direct) {
                // dx by shift-and-add; dk as a GEMM, whose reduction vectorizes
                std::vector<T> scratch(dk ? col_size : 0);
                for (std::size_t n = 0; n < batch; ++n) {
                    if (dx) {
                        detail::direct_conv_backward(px.data.data() + n * in_plane, pk.data.data(),
                                                     self.grad.data() + n * out_plane, g, filters, dx + n * in_plane,
                                                     static_cast<T*>(nullptr));
                    }
                    if (dk) {
                        detail::im2col(px.data.data() + n * in_plane, g, scratch.data());
                        Eigen::Map<const MatR> G(self.grad.data() + n * out_plane, filters, hw);
                        Eigen::Map<const MatR> C(scratch.data(), g.col_rows(), hw);
                        Eigen::Map<MatR> dW(dk, filters, g.col_rows());
                        dW.noalias() += G * C.transpose();
                    }
                }
                return;
            }
            std::vector<T> scratch(cols.empty() && dk ? col_size : 0);
            std::vector<T> dcol(dx ? col_size : 0);
            Eigen::Map<const MatR> W(pk.data.data(), filters, g.col_rows());
            for (std::size_t n = 0; n < batch; ++n) {
                Eigen::Map<const MatR> G(self.grad.data() + n * out_plane, filters, hw);
                if (dk) {
                    const T* col = cols.empty() ? scratch.data() : cols.data() + n * col_size;
                    if (cols.empty()) detail::im2col(px.data.data() + n * in_plane, g, scratch.data());
                    Eigen::Map<const MatR> C(col, g.col_rows(), hw);
                    Eigen::Map<MatR> dW(dk, filters, g.col_rows());
                    dW.noalias() += G * C.transpose();
                }
                if (dx) {
                    Eigen::Map<MatR> dC(dcol.data(), g.col_rows(), hw);
                    dC.noalias() = W.transpose() * G;
                    detail::col2im(dcol.data(), g, dx + n * in_plane);
                }
            }
        },
        "conv2d");
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t pad) {
    return conv2d(input, kernel, BasicTensor<T>{}, stride, pad);
}

// ---- utilities -----------------------------------------------------------------

template <typename T>
bool all_finite(const BasicTensor<T>& x) {
    return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace stylespace
