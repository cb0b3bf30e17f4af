#include "rce/error.hpp"
#include "rce/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace rce {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Node = detail::Node;
using NodePtr = std::shared_ptr<Node>;

// Wraps a computed value into a graph node. `backward` is only attached when
// some input participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   const char* op, std::function<void(Node&)> backward, bool check = true) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const Tensor* t : inputs) {
            if (t->requires_grad()) {
                any = true;
            }
        }
        if (any) {
            node->requires_grad = true;
            for (const Tensor* t : inputs) {
                node->parents.push_back(t->node());
            }
            node->backward = std::move(backward);
        }
    }
    Tensor out(std::move(node));
    if (check && finite_checks()) {
        check_finite(out, op);
    }
    return out;
}

std::size_t norm_axis(const Tensor& t, int axis) {
    const int r = static_cast<int>(t.rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + to_string(t.shape()));
    }
    return static_cast<std::size_t>(a);
}

// outer x n x inner view around one axis
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) {
        v.outer *= shape[i];
    }
    v.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        v.inner *= shape[i];
    }
    return v;
}

// ----------------------------------------------------------------- broadcast

struct Broadcast {
    Shape out;
    enum class Kind { Same, BRepeats, ARepeats, General } kind = Kind::Same;
    std::vector<std::size_t> a_index, b_index; // General only
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
    Broadcast p;
    if (a == b) {
        p.out = a;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    p.out.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            p.out[i] = pa[i];
        } else if (pa[i] == 1) {
            p.out[i] = pb[i];
        } else {
            throw ShapeMismatch("cannot broadcast " + to_string(a) + " with " + to_string(b));
        }
    }
    auto is_suffix = [&](const Shape& small) {
        if (small.size() > p.out.size()) {
            return false;
        }
        return std::equal(small.begin(), small.end(), p.out.end() - static_cast<long>(small.size()));
    };
    if (a == p.out && is_suffix(b)) {
        p.kind = Broadcast::Kind::BRepeats;
        return p;
    }
    if (b == p.out && is_suffix(a)) {
        p.kind = Broadcast::Kind::ARepeats;
        return p;
    }
    p.kind = Broadcast::Kind::General;
    const std::size_t total = numel(p.out);
    p.a_index.resize(total);
    p.b_index.resize(total);
    std::vector<std::size_t> sa(r), sb(r);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t i = r; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : acc_a;
        sb[i] = pb[i] == 1 ? 0 : acc_b;
        acc_a *= pa[i];
        acc_b *= pb[i];
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
        p.a_index[flat] = ia;
        p.b_index[flat] = ib;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < p.out[d]) {
                break;
            }
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    return p;
}

// Calls fn(out_index, a_index, b_index) for every output element. The repeat
// cases walk whole rows so the inner loop is a plain contiguous sweep.
template <class Fn>
void for_each_pair(const Broadcast& p, std::size_t na, std::size_t nb, std::size_t total, Fn&& fn) {
    switch (p.kind) {
    case Broadcast::Kind::Same:
        for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
        break;
    case Broadcast::Kind::BRepeats:
        for (std::size_t r = 0; r < total; r += nb)
            for (std::size_t j = 0; j < nb; ++j) fn(r + j, r + j, j);
        break;
    case Broadcast::Kind::ARepeats:
        for (std::size_t r = 0; r < total; r += na)
            for (std::size_t j = 0; j < na; ++j) fn(r + j, j, r + j);
        break;
    case Broadcast::Kind::General:
        for (std::size_t i = 0; i < total; ++i) fn(i, p.a_index[i], p.b_index[i]);
        break;
    }
}

enum class BinOp { Add, Sub, Mul };

template <BinOp Op>
Tensor binary_impl(const Tensor& a, const Tensor& b, const char* name) {
    auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
    const std::size_t total = numel(plan->out);
    const std::size_t na = a.numel(), nb = b.numel();
    std::vector<double> out(total);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = out.data();
    for_each_pair(*plan, na, nb, total, [=](std::size_t o, std::size_t i, std::size_t j) {
        if constexpr (Op == BinOp::Add) ov[o] = av[i] + bv[j];
        else if constexpr (Op == BinOp::Sub) ov[o] = av[i] - bv[j];
        else ov[o] = av[i] * bv[j];
    });
    Node* an = a.node().get();
    Node* bn = b.node().get();
    Shape shape = plan->out;
    return make_result(std::move(shape), std::move(out), {&a, &b}, name, [an, bn, plan, na, nb, total](Node& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
            double* ga = an->grad_buffer().data();
            const double* bv = bn->value.data();
            for_each_pair(*plan, na, nb, total, [=](std::size_t o, std::size_t i, std::size_t j) {
                if constexpr (Op == BinOp::Mul) ga[i] += g[o] * bv[j];
                else ga[i] += g[o];
            });
        }
        if (bn->requires_grad) {
            double* gb = bn->grad_buffer().data();
            const double* av = an->value.data();
            for_each_pair(*plan, na, nb, total, [=](std::size_t o, std::size_t i, std::size_t j) {
                if constexpr (Op == BinOp::Mul) gb[j] += g[o] * av[i];
                else if constexpr (Op == BinOp::Sub) gb[j] -= g[o];
                else gb[j] += g[o];
            });
        }
    });
}

Tensor unary(const Tensor& x, const char* name, double (*f)(double), double (*df)(double x, double y)) {
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(xv[i]);
    }
    Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {&x}, name, [xn, df](Node& self) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
        }
    });
}

} // namespace

// -------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeMismatch("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " x " +
                            to_string(b.shape()));
    }
    std::size_t batch = 1;
    std::size_t m, k, k2, n;
    Shape out_shape;
    bool batched = false;
    if (b.rank() == 2) {
        if (trans_a && a.rank() != 2) {
            throw ShapeMismatch("transposed left operand must be rank 2");
        }
        const std::size_t rows = a.numel() / a.dim(-1);
        m = trans_a ? a.dim(-1) : rows;
        k = trans_a ? rows : a.dim(-1);
        k2 = trans_b ? b.dim(1) : b.dim(0);
        n = trans_b ? b.dim(0) : b.dim(1);
        if (trans_a) {
            out_shape = {m, n};
        } else {
            out_shape = a.shape();
            out_shape.back() = n;
        }
    } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0)) {
        batched = true;
        batch = a.dim(0);
        m = trans_a ? a.dim(2) : a.dim(1);
        k = trans_a ? a.dim(1) : a.dim(2);
        k2 = trans_b ? b.dim(2) : b.dim(1);
        n = trans_b ? b.dim(1) : b.dim(2);
        out_shape = {batch, m, n};
    } else {
        throw ShapeMismatch("matmul operands " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    if (k != k2) {
        throw ShapeMismatch("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t a_rows = trans_a ? k : m, a_cols = trans_a ? m : k;
    const std::size_t b_rows = trans_b ? n : k, b_cols = trans_b ? k : n;
    const std::size_t a_step = batched ? m * k : 0, b_step = batched ? k * n : 0;
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

    std::vector<double> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        ConstMap A(a.data().data() + i * a_step, ei(a_rows), ei(a_cols));
        ConstMap B(b.data().data() + i * b_step, ei(b_rows), ei(b_cols));
        MutMap C(out.data() + i * m * n, ei(m), ei(n));
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_result(std::move(out_shape), std::move(out), {&a, &b}, "matmul",
                       [=](Node& self) {
                           for (std::size_t i = 0; i < batch; ++i) {
                               ConstMap G(self.grad.data() + i * m * n, ei(m), ei(n));
                               ConstMap A(an->value.data() + i * a_step, ei(a_rows), ei(a_cols));
                               ConstMap B(bn->value.data() + i * b_step, ei(b_rows), ei(b_cols));
                               if (an->requires_grad) {
                                   MutMap GA(an->grad_buffer().data() + i * a_step, ei(a_rows), ei(a_cols));
                                   if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
                                   else if (!trans_a && trans_b) GA.noalias() += G * B;
                                   else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
                                   else GA.noalias() += B.transpose() * G.transpose();
                               }
                               if (bn->requires_grad) {
                                   MutMap GB(bn->grad_buffer().data() + i * b_step, ei(b_rows), ei(b_cols));
                                   if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
                                   else if (trans_a && !trans_b) GB.noalias() += A * G;
                                   else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
                                   else GB.noalias() += G.transpose() * A.transpose();
                               }
                           }
                       });
}

// --------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary_impl<BinOp::Add>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_impl<BinOp::Sub>(a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_impl<BinOp::Mul>(a, b, "mul"); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    auto av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * factor;
    }
    Node* an = a.node().get();
    return make_result(a.shape(), std::move(out), {&a}, "scale", [an, factor](Node& self) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    Node* xn = x.node().get();
    return make_result({}, {s}, {&x}, "sum", [xn](Node& self) {
        for (auto& g : xn->grad_buffer()) {
            g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ----------------------------------------------------------- normalization

Tensor softmax(const Tensor& x, int axis) {
    const auto v = axis_view(x.shape(), norm_axis(x, axis));
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.n * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < v.n; ++j) {
                mx = std::max(mx, xv[base + j * v.inner]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                const double e = std::exp(xv[base + j * v.inner] - mx);
                out[base + j * v.inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < v.n; ++j) {
                out[base + j * v.inner] /= z;
            }
        }
    }
    Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {&x}, "softmax", [xn, v](Node& self) {
        auto& gx = xn->grad_buffer();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.n * v.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) {
                    dot += g[base + j * v.inner] * y[base + j * v.inner];
                }
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = base + j * v.inner;
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, int axis, double eps) {
    const auto v = axis_view(x.shape(), norm_axis(x, axis));
    std::vector<double> out(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(v.outer * v.inner);
    auto xv = x.data();
    const double n = static_cast<double>(v.n);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.n * v.inner + in;
            double mu = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                mu += xv[base + j * v.inner];
            }
            mu /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                const double d = xv[base + j * v.inner] - mu;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[o * v.inner + in] = is;
            for (std::size_t j = 0; j < v.n; ++j) {
                out[base + j * v.inner] = (xv[base + j * v.inner] - mu) * is;
            }
        }
    }
    Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {&x}, "layer_norm", [xn, v, inv_std, n](Node& self) {
        auto& gx = xn->grad_buffer();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.n * v.inner + in;
                double mg = 0.0, mgy = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = base + j * v.inner;
                    mg += g[idx];
                    mgy += g[idx] * y[idx];
                }
                mg /= n;
                mgy /= n;
                const double is = (*inv_std)[o * v.inner + in];
                for (std::size_t j = 0; j < v.n; ++j) {
                    const std::size_t idx = base + j * v.inner;
                    gx[idx] += is * (g[idx] - mg - y[idx] * mgy);
                }
            }
        }
    });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng* rng) {
    if (!train || p <= 0.0) {
        return x;
    }
    if (p >= 1.0) {
        throw ConfigError("dropout probability must be below 1");
    }
    if (rng == nullptr) {
        throw ConfigError("training-mode dropout needs a random generator");
    }
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = keep(*rng) ? s : 0.0;
        out[i] = xv[i] * (*mask)[i];
    }
    Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {&x}, "dropout", [xn, mask](Node& self) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * (*mask)[i];
        }
    });
}

// -------------------------------------------------------------------- layout

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw ShapeMismatch("concat of nothing");
    }
    const std::size_t ax = norm_axis(parts[0], axis);
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size()) {
            throw ShapeMismatch("concat rank mismatch");
        }
        for (std::size_t i = 0; i < out_shape.size(); ++i) {
            if (i != ax && p.shape()[i] != out_shape[i]) {
                throw ShapeMismatch("concat shapes " + to_string(parts[0].shape()) + " and " + to_string(p.shape()));
            }
        }
        out_shape[ax] += p.shape()[ax];
    }
    const auto v = axis_view(out_shape, ax);
    std::vector<double> out(numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t block = p.shape()[ax] * v.inner;
        auto pv = p.data();
        for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy_n(pv.begin() + static_cast<long>(o * block), block,
                        out.begin() + static_cast<long>(o * v.n * v.inner + off * v.inner));
        }
        off += p.shape()[ax];
    }
    std::vector<Node*> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node().get());
        widths.push_back(p.shape()[ax]);
    }
    auto result = make_result(out_shape, std::move(out), {}, "concat", {});
    if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
        auto& node = *result.node();
        node.requires_grad = true;
        for (const auto& p : parts) {
            node.parents.push_back(p.node());
        }
        node.backward = [nodes, widths, offsets, v](Node& self) {
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (!nodes[k]->requires_grad) {
                    continue;
                }
                auto& g = nodes[k]->grad_buffer();
                const std::size_t block = widths[k] * v.inner;
                for (std::size_t o = 0; o < v.outer; ++o) {
                    const double* src = self.grad.data() + o * v.n * v.inner + offsets[k] * v.inner;
                    double* dst = g.data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        };
    }
    return result;
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = norm_axis(x, axis);
    if (begin >= end || end > x.shape()[ax]) {
        throw ShapeMismatch("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of axis with " +
                            std::to_string(x.shape()[ax]));
    }
    const auto v = axis_view(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = end - begin;
    const std::size_t block = (end - begin) * v.inner;
    std::vector<double> out(numel(out_shape));
    auto xv = x.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(xv.begin() + static_cast<long>(o * v.n * v.inner + begin * v.inner), block,
                    out.begin() + static_cast<long>(o * block));
    }
    Node* xn = x.node().get();
    return make_result(std::move(out_shape), std::move(out), {&x}, "slice", [xn, v, begin, block](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < v.outer; ++o) {
            double* dst = g.data() + o * v.n * v.inner + begin * v.inner;
            const double* src = self.grad.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw ShapeMismatch("reshape " + to_string(x.shape()) + " to " + to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    Node* xn = x.node().get();
    return make_result(std::move(shape), std::move(out), {&x}, "reshape", [xn](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1) {
        throw ShapeMismatch("gather_rows on a scalar");
    }
    const std::size_t n = x.shape()[0];
    const std::size_t width = x.numel() / std::max<std::size_t>(n, 1);
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * width);
    auto xv = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw ShapeMismatch("gather_rows index " + std::to_string(rows[i]) + " >= " + std::to_string(n));
        }
        std::copy_n(xv.begin() + static_cast<long>(rows[i] * width), width, out.begin() + static_cast<long>(i * width));
    }
    Node* xn = x.node().get();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result(std::move(out_shape), std::move(out), {&x}, "gather_rows",
                       [xn, idx = std::move(idx), width](Node& self) {
                           auto& g = xn->grad_buffer();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               double* dst = g.data() + idx[i] * width;
                               const double* src = self.grad.data() + i * width;
                               for (std::size_t j = 0; j < width; ++j) {
                                   dst[j] += src[j];
                               }
                           }
                       });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, Shape prefix) {
    if (table.rank() != 2) {
        throw ShapeMismatch("embedding table must be rank 2, got " + to_string(table.shape()));
    }
    if (numel(prefix) != ids.size()) {
        throw ShapeMismatch("embedding prefix " + to_string(prefix) + " does not hold " + std::to_string(ids.size()) +
                            " ids");
    }
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    auto tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ShapeMismatch("embedding id " + std::to_string(ids[i]) + " outside table of " +
                                std::to_string(vocab));
        }
        std::copy_n(tv.begin() + static_cast<long>(static_cast<std::size_t>(ids[i]) * d), d,
                    out.begin() + static_cast<long>(i * d));
    }
    prefix.push_back(d);
    Node* tn = table.node().get();
    std::vector<int> idv(ids.begin(), ids.end());
    return make_result(std::move(prefix), std::move(out), {&table}, "embedding_lookup",
                       [tn, idv = std::move(idv), d](Node& self) {
                           auto& g = tn->grad_buffer();
                           for (std::size_t i = 0; i < idv.size(); ++i) {
                               double* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
                               const double* src = self.grad.data() + i * d;
                               for (std::size_t j = 0; j < d; ++j) {
                                   dst[j] += src[j];
                               }
                           }
                       });
}

// -------------------------------------------------------------- convolution

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
    if (x.rank() != 3 || weight.rank() != 3 || x.dim(2) != weight.dim(1)) {
        throw ShapeMismatch("conv1d input " + to_string(x.shape()) + " with kernel " + to_string(weight.shape()));
    }
    if (stride == 0) {
        throw ShapeMismatch("conv1d stride must be positive");
    }
    const std::size_t B = x.dim(0), L = x.dim(1), cin = x.dim(2);
    const std::size_t K = weight.dim(0), cout = weight.dim(2);
    if (L < K) {
        throw ShapeMismatch("conv1d input length " + std::to_string(L) + " shorter than kernel " + std::to_string(K));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw ShapeMismatch("conv1d bias " + to_string(bias.shape()));
    }
    const std::size_t lout = (L - K) / stride + 1;
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
    std::vector<double> out(B * lout * cout);
    ConstMap W(weight.data().data(), ei(K * cin), ei(cout));
    for (std::size_t b = 0; b < B; ++b) {
        // windows are contiguous K*cin runs starting every stride*cin values
        StridedMap X(x.data().data() + b * L * cin, ei(lout), ei(K * cin), Eigen::OuterStride<>(ei(stride * cin)));
        MutMap Y(out.data() + b * lout * cout, ei(lout), ei(cout));
        Y.noalias() = X * W;
        if (bias.defined()) {
            Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), ei(cout));
        }
    }
    Node* xn = x.node().get();
    Node* wn = weight.node().get();
    Node* bn = bias.defined() ? bias.node().get() : nullptr;
    Tensor dummy = bias.defined() ? bias : Tensor::zeros({0});
    return make_result({B, lout, cout}, std::move(out), {&x, &weight, &dummy}, "conv1d",
                       [=](Node& self) {
                           ConstMap Wm(wn->value.data(), ei(K * cin), ei(cout));
                           for (std::size_t b = 0; b < B; ++b) {
                               ConstMap G(self.grad.data() + b * lout * cout, ei(lout), ei(cout));
                               StridedMap X(xn->value.data() + b * L * cin, ei(lout), ei(K * cin),
                                            Eigen::OuterStride<>(ei(stride * cin)));
                               if (wn->requires_grad) {
                                   MutMap GW(wn->grad_buffer().data(), ei(K * cin), ei(cout));
                                   GW.noalias() += X.transpose() * G;
                               }
                               if (bn != nullptr && bn->requires_grad) {
                                   Eigen::Map<Eigen::RowVectorXd> gb(bn->grad_buffer().data(), ei(cout));
                                   gb += G.colwise().sum();
                               }
                               if (xn->requires_grad) {
                                   RowMat cols = G * Wm.transpose(); // [lout, K*cin]
                                   double* gx = xn->grad_buffer().data() + b * L * cin;
                                   for (std::size_t t = 0; t < lout; ++t) {
                                       double* dst = gx + t * stride * cin;
                                       for (std::size_t j = 0; j < K * cin; ++j) {
                                           dst[j] += cols(ei(t), ei(j));
                                       }
                                   }
                               }
                           }
                       });
}

Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::span<const std::size_t> valid) {
    if (x.rank() != 3) {
        throw ShapeMismatch("max_pool1d expects [B, L, C], got " + to_string(x.shape()));
    }
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (kernel == 0 || stride == 0 || kernel > L) {
        throw ShapeMismatch("max_pool1d kernel " + std::to_string(kernel) + " over length " + std::to_string(L));
    }
    if (!valid.empty() && valid.size() != B) {
        throw ShapeMismatch("max_pool1d valid lengths do not match batch");
    }
    const std::size_t lout = (L - kernel) / stride + 1;
    std::vector<double> out(B * lout * C, 0.0);
    // flat source index per output, or SIZE_MAX for empty windows
    auto arg = std::make_shared<std::vector<std::size_t>>(out.size(), SIZE_MAX);
    auto xv = x.data();
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t limit = valid.empty() ? L : std::min(valid[b], L);
        for (std::size_t t = 0; t < lout; ++t) {
            const std::size_t start = t * stride;
            const std::size_t stop = std::min(start + kernel, limit);
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t o = (b * lout + t) * C + c;
                for (std::size_t p = start; p < stop; ++p) {
                    const std::size_t src = (b * L + p) * C + c;
                    if ((*arg)[o] == SIZE_MAX || xv[src] > out[o]) {
                        out[o] = xv[src];
                        (*arg)[o] = src;
                    }
                }
            }
        }
    }
    Node* xn = x.node().get();
    return make_result({B, lout, C}, std::move(out), {&x}, "max_pool1d", [xn, arg](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < arg->size(); ++o) {
            if ((*arg)[o] != SIZE_MAX) {
                g[(*arg)[o]] += self.grad[o];
            }
        }
    });
}

// -------------------------------------------------------------------- losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index,
                     std::span<const double> weights) {
    if (logits.rank() < 1) {
        throw ShapeMismatch("cross_entropy on a scalar");
    }
    const std::size_t C = logits.dim(-1);
    const std::size_t N = logits.numel() / C;
    if (targets.size() != N) {
        throw ShapeMismatch("cross_entropy has " + std::to_string(N) + " rows but " + std::to_string(targets.size()) +
                            " targets");
    }
    if (!weights.empty() && weights.size() != N) {
        throw ShapeMismatch("cross_entropy has " + std::to_string(N) + " rows but " + std::to_string(weights.size()) +
                            " weights");
    }
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    auto w = std::make_shared<std::vector<double>>(N, 0.0);
    auto lv = logits.data();
    double total = 0.0;
    double counted = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (targets[i] == ignore_index) {
            continue;
        }
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= C) {
            throw ShapeMismatch("cross_entropy target " + std::to_string(targets[i]) + " outside " + std::to_string(C) +
                                " classes");
        }
        const double* row = lv.data() + i * C;
        double* p = probs->data() + i * C;
        const double mx = *std::max_element(row, row + C);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(row[c] - mx);
            z += p[c];
        }
        for (std::size_t c = 0; c < C; ++c) {
            p[c] /= z;
        }
        (*w)[i] = weights.empty() ? 1.0 : weights[i];
        total += (*w)[i] * ((mx + std::log(z)) - row[targets[i]]);
        counted += (*w)[i];
    }
    if (counted <= 0.0) {
        return Tensor::scalar(0.0);
    }
    const double inv = 1.0 / counted;
    Node* ln = logits.node().get();
    std::vector<int> tv(targets.begin(), targets.end());
    return make_result({}, {total * inv}, {&logits}, "cross_entropy",
                       [ln, probs, w, tv = std::move(tv), C, N, inv](Node& self) {
                           auto& g = ln->grad_buffer();
                           for (std::size_t i = 0; i < N; ++i) {
                               const double s = self.grad[0] * inv * (*w)[i];
                               if (s == 0.0) {
                                   continue;
                               }
                               for (std::size_t c = 0; c < C; ++c) {
                                   g[i * C + c] += s * (*probs)[i * C + c];
                               }
                               g[i * C + static_cast<std::size_t>(tv[i])] -= s;
                           }
                       });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
    const std::size_t N = logits.numel();
    if (labels.size() != N) {
        throw ShapeMismatch("bce_with_logits label count mismatch");
    }
    auto lv = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double z = lv[i];
        total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
    }
    const double inv = 1.0 / static_cast<double>(N);
    Node* ln = logits.node().get();
    std::vector<double> y(labels.begin(), labels.end());
    return make_result({}, {total * inv}, {&logits}, "bce_with_logits", [ln, y = std::move(y), inv](Node& self) {
        auto& g = ln->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-ln->value[i]));
            g[i] += self.grad[0] * inv * (sig - y[i]);
        }
    });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() < 1) {
        throw ShapeMismatch("cosine_similarity of " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const std::size_t d = a.dim(-1);
    const std::size_t N = a.numel() / d;
    constexpr double kMinNorm = 1e-12;
    auto norms = std::make_shared<std::vector<double>>(2 * N);
    std::vector<double> out(N);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < N; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += av[i * d + j] * bv[i * d + j];
            na += av[i * d + j] * av[i * d + j];
            nb += bv[i * d + j] * bv[i * d + j];
        }
        na = std::max(std::sqrt(na), kMinNorm);
        nb = std::max(std::sqrt(nb), kMinNorm);
        (*norms)[2 * i] = na;
        (*norms)[2 * i + 1] = nb;
        out[i] = dot / (na * nb);
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_result(std::move(out_shape), std::move(out), {&a, &b}, "cosine_similarity",
                       [an, bn, norms, d, N](Node& self) {
                           for (std::size_t i = 0; i < N; ++i) {
                               const double na = (*norms)[2 * i], nb = (*norms)[2 * i + 1];
                               const double cos = self.value[i];
                               const double g = self.grad[i];
                               const double* av = an->value.data() + i * d;
                               const double* bv = bn->value.data() + i * d;
                               if (an->requires_grad) {
                                   double* ga = an->grad_buffer().data() + i * d;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       ga[j] += g * (bv[j] / (na * nb) - cos * av[j] / (na * na));
                                   }
                               }
                               if (bn->requires_grad) {
                                   double* gb = bn->grad_buffer().data() + i * d;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       gb[j] += g * (av[j] / (na * nb) - cos * bv[j] / (nb * nb));
                                   }
                               }
                           }
                       });
}

// ----------------------------------------------------------------- attention

Tensor split_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
        throw ShapeMismatch("split_heads of " + to_string(x.shape()) + " into " + std::to_string(heads));
    }
    const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), dh = d / heads;
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.begin() + static_cast<long>((b * L + l) * d + h * dh), dh,
                            out.begin() + static_cast<long>(((b * heads + h) * L + l) * dh));
    Node* xn = x.node().get();
    return make_result({B * heads, L, dh}, std::move(out), {&x}, "split_heads", [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t h = 0; h < heads; ++h) {
                    double* dst = g.data() + (b * L + l) * d + h * dh;
                    const double* src = self.grad.data() + ((b * heads + h) * L + l) * dh;
                    for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
                }
    });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
        throw ShapeMismatch("merge_heads of " + to_string(x.shape()) + " from " + std::to_string(heads));
    }
    const std::size_t B = x.dim(0) / heads, L = x.dim(1), dh = x.dim(2), d = dh * heads;
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.begin() + static_cast<long>(((b * heads + h) * L + l) * dh), dh,
                            out.begin() + static_cast<long>((b * L + l) * d + h * dh));
    Node* xn = x.node().get();
    return make_result({B, L, d}, std::move(out), {&x}, "merge_heads", [=](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t h = 0; h < heads; ++h) {
                    double* dst = g.data() + ((b * heads + h) * L + l) * dh;
                    const double* src = self.grad.data() + (b * L + l) * d + h * dh;
                    for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
                }
    });
}

Tensor mask_keys(const Tensor& scores, std::span<const std::uint8_t> key_valid, std::size_t heads) {
    if (scores.rank() != 3 || heads == 0 || scores.dim(0) % heads != 0) {
        throw ShapeMismatch("mask_keys expects [B*h, Lq, Lk], got " + to_string(scores.shape()));
    }
    const std::size_t BH = scores.dim(0), Lq = scores.dim(1), Lk = scores.dim(2);
    if (key_valid.size() != (BH / heads) * Lk) {
        throw ShapeMismatch("mask_keys mask has " + std::to_string(key_valid.size()) + " entries");
    }
    std::vector<double> out(scores.data().begin(), scores.data().end());
    std::vector<std::uint8_t> mask(key_valid.begin(), key_valid.end());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t bh = 0; bh < BH; ++bh) {
        const std::size_t b = bh / heads;
        for (std::size_t q = 0; q < Lq; ++q)
            for (std::size_t k = 0; k < Lk; ++k)
                if (!mask[b * Lk + k]) out[(bh * Lq + q) * Lk + k] = neg_inf;
    }
    Node* sn = scores.node().get();
    return make_result(
        scores.shape(), std::move(out), {&scores}, "mask_keys",
        [sn, mask = std::move(mask), BH, Lq, Lk, heads](Node& self) {
            auto& g = sn->grad_buffer();
            for (std::size_t bh = 0; bh < BH; ++bh) {
                const std::size_t b = bh / heads;
                for (std::size_t q = 0; q < Lq; ++q)
                    for (std::size_t k = 0; k < Lk; ++k)
                        if (mask[b * Lk + k]) g[(bh * Lq + q) * Lk + k] += self.grad[(bh * Lq + q) * Lk + k];
            }
        },
        /*check=*/false);
}

} // namespace rce
