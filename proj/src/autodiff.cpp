#include "lepp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "lepp/kernels.hpp"

namespace lepp::ad {

Tensor& Node::grad_buffer()
{
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Tensor Var::grad() const
{
    if (node_->grad.empty()) return Tensor(node_->value.shape());
    return node_->grad;
}

Var constant(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(n);
}

Var parameter(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "parameter";
    n->requires_grad = true;
    return Var(n);
}

Var detach(const Var& a) { return constant(a.value()); }

Var make_op(std::string op, Tensor value, std::vector<Var> parents, std::function<void(Node&)> rule)
{
    value.require_finite(op);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = std::move(op);
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.ptr());
        n->backward_rule = std::move(rule);
    }
    return Var(n);
}

namespace {

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

void check_binary(const char* op, const Var& a, const Var& b)
{
    if (b.size() != 1 && a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f)
{
    Tensor out(a.shape());
    if (b.size() == 1) {
        const double bv = b[0];
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], bv);
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    }
    return out;
}

template <class F>
Tensor map_unary(const Tensor& a, F f)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

// Accumulates g (shape of a) into the parent of shape b, summing when b is a broadcast scalar.
void accumulate_broadcast(Tensor& target, std::size_t i, double g)
{
    if (target.size() == 1)
        target[0] += g;
    else
        target[i] += g;
}

}  // namespace

Var add(const Var& a, const Var& b)
{
    check_binary("add", a, b);
    return make_op("add", map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                   [](Node& self) {
                       const Tensor& g = self.grad;
                       if (wants(self, 0)) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (wants(self, 1)) {
                           auto& gb = self.parents[1]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) accumulate_broadcast(gb, i, g[i]);
                       }
                   });
}

Var sub(const Var& a, const Var& b)
{
    check_binary("sub", a, b);
    return make_op("sub", map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                   [](Node& self) {
                       const Tensor& g = self.grad;
                       if (wants(self, 0)) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (wants(self, 1)) {
                           auto& gb = self.parents[1]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) accumulate_broadcast(gb, i, -g[i]);
                       }
                   });
}

Var mul(const Var& a, const Var& b)
{
    check_binary("mul", a, b);
    return make_op("mul", map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                   [](Node& self) {
                       const Tensor& g = self.grad;
                       const Tensor& av = self.parents[0]->value;
                       const Tensor& bv = self.parents[1]->value;
                       const bool bs = bv.size() == 1;
                       if (wants(self, 0)) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (bs ? bv[0] : bv[i]);
                       }
                       if (wants(self, 1)) {
                           auto& gb = self.parents[1]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) accumulate_broadcast(gb, i, g[i] * av[i]);
                       }
                   });
}

Var div(const Var& a, const Var& b)
{
    check_binary("div", a, b);
    return make_op("div", map_binary(a.value(), b.value(), [](double x, double y) { return x / y; }), {a, b},
                   [](Node& self) {
                       const Tensor& g = self.grad;
                       const Tensor& av = self.parents[0]->value;
                       const Tensor& bv = self.parents[1]->value;
                       const bool bs = bv.size() == 1;
                       if (wants(self, 0)) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (bs ? bv[0] : bv[i]);
                       }
                       if (wants(self, 1)) {
                           auto& gb = self.parents[1]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const double y = bs ? bv[0] : bv[i];
                               accumulate_broadcast(gb, i, -g[i] * av[i] / (y * y));
                           }
                       }
                   });
}

Var scale(const Var& a, double s)
{
    return make_op("scale", map_unary(a.value(), [s](double x) { return s * x; }), {a}, [s](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
    });
}

Var exp(const Var& a)
{
    return make_op("exp", map_unary(a.value(), [](double x) { return std::exp(x); }), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * self.value[i];
    });
}

Var tanh(const Var& a)
{
    return make_op("tanh", map_unary(a.value(), [](double x) { return std::tanh(x); }), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double t = self.value[i];
            ga[i] += self.grad[i] * (1.0 - t * t);
        }
    });
}

Var silu(const Var& a)
{
    return make_op("silu", map_unary(a.value(), [](double x) { return x / (1.0 + std::exp(-x)); }), {a},
                   [](Node& self) {
                       const Tensor& x = self.parents[0]->value;
                       auto& ga = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           const double sg = 1.0 / (1.0 + std::exp(-x[i]));
                           ga[i] += self.grad[i] * sg * (1.0 + x[i] * (1.0 - sg));
                       }
                   });
}

Var elu(const Var& a)
{
    return make_op("elu", map_unary(a.value(), [](double x) { return x > 0.0 ? x : std::expm1(x); }), {a},
                   [](Node& self) {
                       const Tensor& x = self.parents[0]->value;
                       auto& ga = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           ga[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : self.value[i] + 1.0);
                   });
}

Var square(const Var& a)
{
    return make_op("square", map_unary(a.value(), [](double x) { return x * x; }), {a}, [](Node& self) {
        const Tensor& x = self.parents[0]->value;
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += 2.0 * x[i] * self.grad[i];
    });
}

Var matmul(const Var& a, const Var& b)
{
    if (a.value().ndim() != 2 || b.value().ndim() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out(Shape{m, n});
    kernels::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data());
    return make_op("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
        if (wants(self, 0))  // dA = G B^T
            kernels::gemm_nt(m, n, k, self.grad.data(), self.parents[1]->value.data(),
                             self.parents[0]->grad_buffer().data());
        if (wants(self, 1))  // dB = A^T G
            kernels::gemm_tn(k, m, n, self.parents[0]->value.data(), self.grad.data(),
                             self.parents[1]->grad_buffer().data());
    });
}

Var linear(const Var& x, const Var& w, const Var& b)
{
    const std::size_t xdim = x.value().ndim();
    if (w.value().ndim() != 2 || (xdim != 1 && xdim != 2) || w.shape()[1] != x.shape().back() ||
        b.value().ndim() != 1 || b.size() != w.shape()[0])
        throw ShapeError("linear: W " + shape_str(w.shape()) + ", x " + shape_str(x.shape()) + ", b " +
                         shape_str(b.shape()));
    const std::size_t out = w.shape()[0], in = w.shape()[1];
    const std::size_t rows = xdim == 1 ? 1 : x.shape()[0];
    Tensor y(xdim == 1 ? Shape{out} : Shape{rows, out});
    for (std::size_t r = 0; r < rows; ++r)
        kernels::affine(out, in, w.value().data(), b.value().data(), x.value().data().subspan(r * in, in),
                        y.data().subspan(r * out, out));
    return make_op("linear", std::move(y), {x, w, b}, [out, in, rows](Node& self) {
        const Tensor& g = self.grad;  // [rows, out]
        if (wants(self, 0))           // dX = G W
            kernels::gemm_nn(rows, out, in, g.data(), self.parents[1]->value.data(),
                             self.parents[0]->grad_buffer().data());
        if (wants(self, 1))  // dW = G^T X
            kernels::gemm_tn(out, rows, in, g.data(), self.parents[0]->value.data(),
                             self.parents[1]->grad_buffer().data());
        if (wants(self, 2)) {
            auto& gb = self.parents[2]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < out; ++i) gb[i] += g[r * out + i];
        }
    });
}

Var reshape(const Var& a, Shape shape)
{
    return make_op("reshape", a.value().reshaped(std::move(shape)), {a}, [](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Var concat(const std::vector<Var>& parts)
{
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (first.empty()) throw ShapeError("concat: scalar inputs");
    Shape out_shape = first;
    out_shape[0] = 0;
    std::vector<double> data;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
            throw ShapeError("concat: trailing dims differ " + shape_str(first) + " vs " + shape_str(s));
        out_shape[0] += s[0];
        data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
    }
    return make_op("concat", Tensor(out_shape, std::move(data)), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& parent : self.parents) {
            const std::size_t n = parent->value.size();
            if (parent->requires_grad) {
                auto& gp = parent->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

Var slice(const Var& a, std::size_t begin, std::size_t count)
{
    const Shape& s = a.shape();
    if (s.empty() || count == 0 || begin + count > s[0])
        throw ShapeError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of " + shape_str(s));
    const std::size_t row = a.size() / s[0];
    Shape out_shape = s;
    out_shape[0] = count;
    const auto& src = a.value().storage();
    std::vector<double> data(src.begin() + begin * row, src.begin() + (begin + count) * row);
    return make_op("slice", Tensor(out_shape, std::move(data)), {a}, [offset = begin * row](Node& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[offset + i] += self.grad[i];
    });
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t padding)
{
    if (x.value().ndim() != 3 || w.value().ndim() != 4 || w.shape()[1] != x.shape()[0])
        throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
    const auto g = kernels::ConvGeom::make(x.shape()[0], x.shape()[1], x.shape()[2], w.shape()[0], w.shape()[2],
                                           w.shape()[3], stride, padding);
    Tensor out(Shape{g.c_out, g.h_out, g.w_out});
    kernels::conv2d_forward(g, x.value().data(), w.value().data(), out.data());
    return make_op("conv2d", std::move(out), {x, w}, [g](Node& self) {
        if (wants(self, 0))
            kernels::conv2d_adjoint(g, self.grad.data(), self.parents[1]->value.data(),
                                    self.parents[0]->grad_buffer().data());
        if (wants(self, 1))
            kernels::conv2d_weight_grad(g, self.parents[0]->value.data(), self.grad.data(),
                                        self.parents[1]->grad_buffer().data());
    });
}

Var transposed_conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t padding)
{
    if (x.value().ndim() != 3 || w.value().ndim() != 4 || w.shape()[0] != x.shape()[0])
        throw ShapeError("transposed_conv2d: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
    const std::size_t kh = w.shape()[2], kw = w.shape()[3];
    const std::size_t span_h = (x.shape()[1] - 1) * stride + kh, span_w = (x.shape()[2] - 1) * stride + kw;
    if (span_h <= 2 * padding || span_w <= 2 * padding)
        throw ShapeError("transposed_conv2d: padding too large for input " + shape_str(x.shape()));
    const auto g = kernels::ConvGeom::make(w.shape()[1], span_h - 2 * padding, span_w - 2 * padding, w.shape()[0],
                                           kh, kw, stride, padding);
    if (g.h_out != x.shape()[1] || g.w_out != x.shape()[2])
        throw ShapeError("transposed_conv2d: inconsistent geometry for " + shape_str(x.shape()));
    Tensor out(Shape{g.c_in, g.h, g.w});
    kernels::conv2d_adjoint(g, x.value().data(), w.value().data(), out.data());
    return make_op("transposed_conv2d", std::move(out), {x, w}, [g](Node& self) {
        if (wants(self, 0))
            kernels::conv2d_forward(g, self.grad.data(), self.parents[1]->value.data(),
                                    self.parents[0]->grad_buffer().data());
        if (wants(self, 1))
            kernels::conv2d_weight_grad(g, self.grad.data(), self.parents[0]->value.data(),
                                        self.parents[1]->grad_buffer().data());
    });
}

Var add_channel_bias(const Var& x, const Var& b)
{
    if (x.value().ndim() != 3 || b.value().ndim() != 1 || b.size() != x.shape()[0])
        throw ShapeError("add_channel_bias: x " + shape_str(x.shape()) + ", b " + shape_str(b.shape()));
    const std::size_t c = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
    Tensor out = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += b.value()[ch];
    return make_op("add_channel_bias", std::move(out), {x, b}, [c, plane](Node& self) {
        if (wants(self, 0)) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& gb = self.parents[1]->grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += self.grad[ch * plane + i];
                gb[ch] += acc;
            }
        }
    });
}

namespace {

// Maps each flat input index to its flat index in the reduced output.
std::vector<std::size_t> reduction_map(const Shape& in, const std::vector<std::size_t>& axes, Shape& out_shape)
{
    std::vector<bool> reduced(in.size(), false);
    for (auto ax : axes) {
        if (ax >= in.size()) throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for " + shape_str(in));
        if (reduced[ax]) throw ShapeError("reduce: repeated axis " + std::to_string(ax));
        reduced[ax] = true;
    }
    out_shape.clear();
    for (std::size_t d = 0; d < in.size(); ++d)
        if (!reduced[d]) out_shape.push_back(in[d]);

    // Output strides expressed per input dimension (0 for reduced dims).
    std::vector<std::size_t> ostride(in.size(), 0);
    std::size_t acc = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
        if (!reduced[d]) {
            ostride[d] = acc;
            acc *= in[d];
        }
    }
    const std::size_t n = numel(in);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(in.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < in.size(); ++d) o += idx[d] * ostride[d];
        map[flat] = o;
        for (std::size_t d = in.size(); d-- > 0;) {
            if (++idx[d] < in[d]) break;
            idx[d] = 0;
        }
    }
    return map;
}

Var reduce(const char* op, const Var& x, const std::vector<std::size_t>& axes, bool average)
{
    Shape out_shape;
    auto map = reduction_map(x.shape(), axes, out_shape);
    Tensor out(out_shape);
    const double factor = average ? static_cast<double>(out.size()) / static_cast<double>(x.size()) : 1.0;
    for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += x.value()[i];
    if (average)
        for (auto& v : out.storage()) v *= factor;
    return make_op(op, std::move(out), {x}, [map = std::move(map), factor](Node& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < map.size(); ++i) gx[i] += factor * self.grad[map[i]];
    });
}

}  // namespace

Var sum(const Var& x, const std::vector<std::size_t>& axes) { return reduce("sum", x, axes, false); }
Var mean(const Var& x, const std::vector<std::size_t>& axes) { return reduce("mean", x, axes, true); }

Var sum_all(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().storage()) s += v;
    return make_op("sum_all", Tensor::scalar(s), {x}, [](Node& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Var mse(const Var& pred, const Var& target)
{
    if (pred.shape() != target.shape())
        throw ShapeError("mse: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const std::size_t n = pred.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.value()[i] - target.value()[i];
        s += d * d;
    }
    return make_op("mse", Tensor::scalar(s / static_cast<double>(n)), {pred, target}, [n](Node& self) {
        const Tensor& p = self.parents[0]->value;
        const Tensor& t = self.parents[1]->value;
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        if (wants(self, 0)) {
            auto& gp = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gp[i] += c * (p[i] - t[i]);
        }
        if (wants(self, 1)) {
            auto& gt = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gt[i] -= c * (p[i] - t[i]);
        }
    });
}

void backward(const Var& loss)
{
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    Node& root = loss.node();
    if (root.consumed) throw Error("backward: graph already back-propagated; rebuild the loss before calling again");
    root.consumed = true;
    if (!root.requires_grad) return;

    // Iterative DFS post-order; a grey node reached again means a cycle.
    enum class Mark : unsigned char { grey, black };
    std::unordered_map<Node*, Mark> marks;
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    marks[&root] = Mark::grey;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (!parent->requires_grad) continue;
            auto it = marks.find(parent);
            if (it == marks.end()) {
                marks[parent] = Mark::grey;
                stack.emplace_back(parent, 0);
            } else if (it->second == Mark::grey) {
                throw Error("backward: cycle detected at op '" + parent->op + "'");
            }
        } else {
            marks[node] = Mark::black;
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_rule && !n->grad.empty()) n->backward_rule(*n);
    }
    // Interior gradients are scratch; only leaves keep theirs.
    for (Node* n : order)
        if (!n->is_leaf()) n->grad = Tensor();
}

void zero_grad(const std::vector<Var>& params)
{
    for (const auto& p : params) p.node().grad = Tensor();
}

}  // namespace lepp::ad
