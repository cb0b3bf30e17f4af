#include "rce/tensor.hpp"

#include "rce/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rce {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_checks = false;
} // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += ", ";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(rce::numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (rce::numel(shape) != values.size()) {
        throw ShapeMismatch("shape " + rce::to_string(shape) + " does not hold " + std::to_string(values.size()) +
                            " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> values(rce::numel(shape));
    for (auto& v : values) {
        v = dist(rng);
    }
    return from(std::move(shape), std::move(values), requires_grad);
}

std::size_t Tensor::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + rce::to_string(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeMismatch("item() on tensor of shape " + rce::to_string(shape()));
    }
    return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

std::span<double> Tensor::grad() { return node_->grad_buffer(); }

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() {
    if (node_) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

void Tensor::backward() {
    if (numel() != 1) {
        throw ShapeMismatch("backward() without a seed needs a scalar, got " + rce::to_string(shape()));
    }
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) {
    if (seed.size() != numel()) {
        throw ShapeMismatch("backward seed has " + std::to_string(seed.size()) + " values for " +
                            rce::to_string(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    // iterative post-order DFS
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    auto& g = node_->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += seed[i];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
        }
    }
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void retain_freed_memory() {
#if defined(__GLIBC__)
    constexpr int kOneGiB = 1 << 30;
    mallopt(M_MMAP_THRESHOLD, kOneGiB);
    mallopt(M_TRIM_THRESHOLD, kOneGiB);
#endif
}

void set_finite_checks(bool on) { g_finite_checks = on; }

bool finite_checks() { return g_finite_checks; }

void check_finite(const Tensor& t, const std::string& where) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NonFiniteValue("non-finite value in " + where);
        }
    }
}

} // namespace rce
