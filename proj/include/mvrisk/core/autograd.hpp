#pragma once

// Small reverse-mode automatic differentiation library over dense tensors.
//
// A Var is a handle to a graph node. Ops whose inputs all lack
// requires_grad produce plain constant nodes and record nothing, so frozen
// sub-networks run without building a graph. Gradients accumulate into
// leaf nodes (parameters) across calls to backward() until zero_grad().

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mvrisk/core/errors.hpp"
#include "mvrisk/core/kernels.hpp"
#include "mvrisk/core/tensor.hpp"

namespace mvrisk::ag {

template <typename T>
struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.numel(), T{0});
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t numel() const { return node_->value.numel(); }
    std::size_t dim(std::size_t i) const { return node_->value.shape.at(i); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }
    T item() const { return node_->value.data.at(0); }
    const std::vector<T>& grad() const { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    // Seeds d(self)/d(self) = 1 and propagates to every reachable node.
    void backward() const;

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
    return Var<T>(std::move(v), true);
}

namespace detail {

inline bool& grad_disabled() {
    thread_local bool disabled = false;
    return disabled;
}

}  // namespace detail

// While alive, ops on this thread record no graph even for parameters.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_disabled()) { detail::grad_disabled() = true; }
    ~NoGradGuard() { detail::grad_disabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    if (!grad_disabled())
        for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& v : inputs) node->inputs.push_back(v.node());
        node->backward = std::move(fn);
    }
    return Var<T>(std::move(node));
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeMismatch(what);
}

template <typename T>
bool wants(const Node<T>& n, std::size_t i) {
    return n.inputs[i]->requires_grad;
}

}  // namespace detail

template <typename T>
void Var<T>::backward() const {
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            Node<T>* child = n->inputs[idx++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    auto& g = node_->ensure_grad();
    for (auto& x : g) x += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    detail::require(shape_numel(shape) == x.numel(), "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor<T> out(std::move(shape), x.value().data);
    return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
    });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
    detail::require(x.shape().size() == 2, "transpose needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({c, r});
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = xv[i * c + j];
    return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[j * r + i];
    });
}

// Concatenates rank-2 tensors along axis 0 (rows) or axis 1 (columns).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
    detail::require(!xs.empty(), "concat of nothing");
    for (const auto& x : xs) detail::require(x.shape().size() == 2, "concat needs rank-2 inputs");
    std::size_t rows = 0, cols = 0;
    if (axis == 0) {
        cols = xs[0].dim(1);
        for (const auto& x : xs) {
            detail::require(x.dim(1) == cols, "concat rows: column mismatch");
            rows += x.dim(0);
        }
    } else {
        rows = xs[0].dim(0);
        for (const auto& x : xs) {
            detail::require(x.dim(0) == rows, "concat cols: row mismatch");
            cols += x.dim(1);
        }
    }
    Tensor<T> out({rows, cols});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const auto& v = x.value().data;
        const std::size_t r = x.dim(0), c = x.dim(1);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                if (axis == 0)
                    out.data[(off + i) * cols + j] = v[i * c + j];
                else
                    out.data[i * cols + off + j] = v[i * c + j];
            }
        off += axis == 0 ? r : c;
    }
    return detail::make_result<T>(std::move(out), xs, [offsets, axis, cols](Node<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            if (!detail::wants(self, k)) continue;
            auto& in = *self.inputs[k];
            auto& gi = in.ensure_grad();
            const std::size_t r = in.value.shape[0], c = in.value.shape[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gi[i * c + j] += axis == 0 ? self.grad[(offsets[k] + i) * cols + j]
                                               : self.grad[i * cols + offsets[k] + j];
        }
    });
}

// Sub-block [start, start+len) along the given axis of a rank-2 tensor.
template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t len) {
    detail::require(x.shape().size() == 2, "slice needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    detail::require(start + len <= (axis == 0 ? r : c), "slice out of range");
    const std::size_t orows = axis == 0 ? len : r, ocols = axis == 0 ? c : len;
    Tensor<T> out({orows, ocols});
    const auto& v = x.value().data;
    for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j)
            out.data[i * ocols + j] = axis == 0 ? v[(start + i) * c + j] : v[i * c + start + j];
    return detail::make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < orows; ++i)
            for (std::size_t j = 0; j < ocols; ++j)
                (axis == 0 ? gi[(start + i) * c + j] : gi[i * c + start + j]) += self.grad[i * ocols + j];
    });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!detail::wants(self, k)) continue;
            auto& gi = self.inputs[k]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "sub " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
        }
        if (detail::wants(self, 1)) {
            auto& gi = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "mul " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
    return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value.data;
        const auto& bv = self.inputs[1]->value.data;
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * bv[i];
        }
        if (detail::wants(self, 1)) {
            auto& gi = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * s;
    return detail::make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * s;
    });
}

// x * s where s is a single-element Var.
template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
    detail::require(s.numel() == 1, "mul_scalar expects a one-element scale");
    const T sv = s.item();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * sv;
    return detail::make_result<T>(std::move(out), {x, s}, [](Node<T>& self) {
        const auto& xv = self.inputs[0]->value.data;
        const T sv = self.inputs[1]->value.data[0];
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * sv;
        }
        if (detail::wants(self, 1)) {
            T acc = 0;
            for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
            self.inputs[1]->ensure_grad()[0] += acc;
        }
    });
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = f(x.value().data[i]);
    return detail::make_result<T>(std::move(out), {x}, [df](Node<T>& self) {
        const auto& xv = self.inputs[0]->value.data;
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * df(xv[i], self.value.data[i]);
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return unary(x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
    return unary(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return unary(
        x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
        [](T v, T) { return T(0.5) * (T{1} + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

// ---------------------------------------------------------------------------
// Broadcasts and reductions on rank-2 tensors

// x[i,j] + b[j]
template <typename T>
Var<T> add_row_vector(const Var<T>& x, const Var<T>& b) {
    detail::require(x.shape().size() == 2 && b.numel() == x.dim(1), "add_row_vector shape");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = x.value().data[i * c + j] + b.value().data[j];
    return detail::make_result<T>(std::move(out), {x, b}, [r, c](Node<T>& self) {
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
        }
        if (detail::wants(self, 1)) {
            auto& gb = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
        }
    });
}

// x[i,j] + b[i]
template <typename T>
Var<T> add_col_vector(const Var<T>& x, const Var<T>& b) {
    detail::require(x.shape().size() == 2 && b.numel() == x.dim(0), "add_col_vector shape");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = x.value().data[i * c + j] + b.value().data[i];
    return detail::make_result<T>(std::move(out), {x, b}, [r, c](Node<T>& self) {
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
        }
        if (detail::wants(self, 1)) {
            auto& gb = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[i] += self.grad[i * c + j];
        }
    });
}

// x[i,j] * s[i]
template <typename T>
Var<T> mul_col_vector(const Var<T>& x, const Var<T>& s) {
    detail::require(x.shape().size() == 2 && s.numel() == x.dim(0), "mul_col_vector shape");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = x.value().data[i * c + j] * s.value().data[i];
    return detail::make_result<T>(std::move(out), {x, s}, [r, c](Node<T>& self) {
        const auto& xv = self.inputs[0]->value.data;
        const auto& sv = self.inputs[1]->value.data;
        if (detail::wants(self, 0)) {
            auto& gi = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[i * c + j] * sv[i];
        }
        if (detail::wants(self, 1)) {
            auto& gs = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * xv[i * c + j];
                gs[i] += acc;
            }
        }
    });
}

// Mean of each row: [r, c] -> [r]
template <typename T>
Var<T> row_mean(const Var<T>& x) {
    detail::require(x.shape().size() == 2, "row_mean needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({r});
    for (std::size_t i = 0; i < r; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += x.value().data[i * c + j];
        out.data[i] = s / static_cast<T>(c);
    }
    return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[i] / static_cast<T>(c);
    });
}

// Mean over rows: [r, c] -> [c]
template <typename T>
Var<T> col_mean(const Var<T>& x) {
    detail::require(x.shape().size() == 2, "col_mean needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j] += x.value().data[i * c + j];
    for (auto& v : out.data) v /= static_cast<T>(r);
    return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[j] / static_cast<T>(r);
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (auto v : x.value().data) s += v;
    return detail::make_result<T>(Tensor<T>({1}, std::vector<T>{s}), {x}, [](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (auto& g : gi) g += self.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Var<T> element(const Var<T>& x, std::size_t idx) {
    detail::require(idx < x.numel(), "element index out of range");
    return detail::make_result<T>(Tensor<T>({1}, std::vector<T>{x.value().data[idx]}), {x}, [idx](Node<T>& self) {
        self.inputs[0]->ensure_grad()[idx] += self.grad[0];
    });
}

// Row-wise softmax of a rank-2 tensor.
template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    detail::require(x.shape().size() == 2, "softmax_rows needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < r; ++i) {
        T mx = xv[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += out.data[i * c + j] = std::exp(xv[i * c + j] - mx);
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] /= s;
    }
    return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        const auto& y = self.value.data;
        for (std::size_t i = 0; i < r; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

// Row-wise layer normalization with affine gamma/beta of length c.
template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    detail::require(x.shape().size() == 2, "layer_norm_rows needs rank 2");
    const std::size_t r = x.dim(0), c = x.dim(1);
    detail::require(gamma.numel() == c && beta.numel() == c, "layer norm affine shape");
    Tensor<T> out(x.shape());
    std::vector<T> xhat(r * c), inv_std(r);
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < r; ++i) {
        T m = 0;
        for (std::size_t j = 0; j < c; ++j) m += xv[i * c + j];
        m /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xv[i * c + j] - m) * (xv[i * c + j] - m);
        var /= static_cast<T>(c);
        inv_std[i] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xv[i * c + j] - m) * inv_std[i];
            out.data[i * c + j] = xhat[i * c + j] * gamma.value().data[j] + beta.value().data[j];
        }
    }
    return detail::make_result<T>(
        std::move(out), {x, gamma, beta},
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const auto& gv = self.inputs[1]->value.data;
            if (detail::wants(self, 1)) {
                auto& gg = self.inputs[1]->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
            if (detail::wants(self, 2)) {
                auto& gb = self.inputs[2]->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
            }
            if (detail::wants(self, 0)) {
                auto& gi = self.inputs[0]->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = self.grad[i * c + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * c + j];
                    }
                    mean_d /= static_cast<T>(c);
                    mean_dx /= static_cast<T>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = self.grad[i * c + j] * gv[j];
                        gi[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Dense kernels

// op(a) * op(b) for rank-2 tensors.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
    detail::require(a.shape().size() == 2 && b.shape().size() == 2, "matmul needs rank 2");
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    detail::require(k == kb, "matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out({m, n});
    kernels::omp::gemm(trans_a, trans_b, m, n, k, a.value().data.data(), b.value().data.data(), out.data.data(), false);
    return detail::make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
        const T* av = self.inputs[0]->value.data.data();
        const T* bv = self.inputs[1]->value.data.data();
        const T* g = self.grad.data();
        if (detail::wants(self, 0)) {
            T* ga = self.inputs[0]->ensure_grad().data();
            // dA = G * op(B)^T  (or its transpose when A was transposed)
            if (!trans_a)
                kernels::omp::gemm(false, !trans_b, m, k, n, g, bv, ga, true);
            else
                kernels::omp::gemm(trans_b, true, k, m, n, bv, g, ga, true);
        }
        if (detail::wants(self, 1)) {
            T* gb = self.inputs[1]->ensure_grad().data();
            if (!trans_b)
                kernels::omp::gemm(!trans_a, false, k, n, m, av, g, gb, true);
            else
                kernels::omp::gemm(true, trans_a, n, k, m, g, av, gb, true);
        }
    });
}

// x[Cin,H,W] conv w[Cout,Cin/groups,K,K] (+ b[Cout]) with zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* b, std::size_t stride, std::size_t pad,
              std::size_t groups) {
    detail::require(x.shape().size() == 3 && w.shape().size() == 4, "conv2d needs x[C,H,W], w[O,I,K,K]");
    kernels::ConvGeometry g;
    g.in_channels = x.dim(0);
    g.height = x.dim(1);
    g.width = x.dim(2);
    g.out_channels = w.dim(0);
    g.kernel = w.dim(2);
    g.stride = stride;
    g.pad = pad;
    g.groups = groups;
    detail::require(groups >= 1 && g.in_channels % groups == 0 && g.out_channels % groups == 0,
                    "conv2d channels not divisible by groups");
    detail::require(w.dim(1) == g.in_channels / groups && w.dim(3) == g.kernel, "conv2d weight shape " +
                                                                                    shape_str(w.shape()));
    detail::require(g.height + 2 * pad >= g.kernel && g.width + 2 * pad >= g.kernel, "conv2d kernel larger than input");
    if (b) detail::require(b->numel() == g.out_channels, "conv2d bias shape");
    Tensor<T> out({g.out_channels, g.out_height(), g.out_width()});
    kernels::omp::conv2d_forward(g, x.value().data.data(), w.value().data.data(), b ? b->value().data.data() : nullptr,
                                 out.data.data());
    std::vector<Var<T>> inputs{x, w};
    if (b) inputs.push_back(*b);
    const bool has_bias = b != nullptr;
    return detail::make_result<T>(std::move(out), std::move(inputs), [g, has_bias](Node<T>& self) {
        const T* gout = self.grad.data();
        if (detail::wants(self, 0))
            kernels::omp::conv2d_backward_input(g, gout, self.inputs[1]->value.data.data(),
                                                self.inputs[0]->ensure_grad().data());
        const bool gw = detail::wants(self, 1);
        const bool gb = has_bias && detail::wants(self, 2);
        if (gw || gb) {
            std::vector<T> scratch;
            T* wgrad = nullptr;
            if (gw) {
                wgrad = self.inputs[1]->ensure_grad().data();
            } else {
                scratch.assign(self.inputs[1]->value.numel(), T{0});
                wgrad = scratch.data();
            }
            kernels::omp::conv2d_backward_weight(g, gout, self.inputs[0]->value.data.data(), wgrad,
                                                 gb ? self.inputs[2]->ensure_grad().data() : nullptr);
        }
    });
}

// Separable linear resampling of x[C,H,W]: y[c] = rows * x[c] * cols^T with
// constant matrices rows[Gh,H], cols[Gw,W].
template <typename T>
Var<T> separable_resample(const Var<T>& x, const Tensor<T>& rows, const Tensor<T>& cols) {
    detail::require(x.shape().size() == 3, "separable_resample needs x[C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t gh = rows.dim(0), gw = cols.dim(0);
    detail::require(rows.dim(1) == h && cols.dim(1) == w, "separable_resample matrix shape");
    Tensor<T> out({c, gh, gw});
    std::vector<T> tmp(gh * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = x.value().data.data() + ch * h * w;
        kernels::omp::gemm(false, false, gh, w, h, rows.data.data(), src, tmp.data(), false);
        kernels::omp::gemm(false, true, gh, gw, w, tmp.data(), cols.data.data(), out.data.data() + ch * gh * gw,
                           false);
    }
    return detail::make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        std::vector<T> t2(gh * w);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* g = self.grad.data() + ch * gh * gw;
            kernels::omp::gemm(false, false, gh, w, gw, g, cols.data.data(), t2.data(), false);
            kernels::omp::gemm(true, false, h, w, gh, rows.data.data(), t2.data(), gi.data() + ch * h * w, true);
        }
    });
}

}  // namespace mvrisk::ag
