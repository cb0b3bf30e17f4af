#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rce {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    std::vector<double>& grad_buffer();
};

} // namespace detail

/// Dense row-major double tensor with optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies alias the same storage. Operations
/// record a backward closure on their result whenever an input requires a
/// gradient and grad mode is on, forming a DAG that `backward()` replays in
/// reverse topological order.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(int axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    double item() const;
    double operator[](std::size_t flat_index) const { return node_->value[flat_index]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    /// Gradient buffer, zero-filled on first access.
    std::span<double> grad();
    std::span<const double> grad() const;
    void zero_grad();

    /// Backpropagates from a scalar (seed 1) or from `seed` of matching size.
    void backward();
    void backward(std::span<const double> seed);

    /// Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const;

    const char* op_name() const { return node_->op; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Asks the C allocator to keep freed blocks for reuse instead of returning
/// them to the system; training allocates many large short-lived buffers.
/// A no-op where the allocator offers no such control.
void retain_freed_memory();

/// When on, every op output is scanned and NonFiniteValue thrown on NaN/Inf.
void set_finite_checks(bool on);
bool finite_checks();
void check_finite(const Tensor& t, const std::string& where);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// a[..., m, k] x b[k, n], or batched a[B, m, k] x b[B, k, n]. The trans
/// flags transpose the trailing two axes of the respective operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);
/// Normalizes to zero mean, unit variance along `axis` (no affine part).
Tensor layer_norm(const Tensor& x, int axis = -1, double eps = 1e-5);
Tensor dropout(const Tensor& x, double p, bool train, Rng* rng);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
/// Rows of x viewed as [shape[0], rest...].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// table[V, d] looked up at `ids`; result shape = prefix + [d].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, Shape prefix);

/// x[B, L, Cin] * w[K, Cin, Cout] (+ bias[Cout]) -> [B, (L-K)/stride+1, Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1);
/// Max over windows of positions of x[B, L, C]. When `valid` is given, row b
/// only pools positions < valid[b]; a window lying entirely past it yields 0
/// and passes no gradient.
Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride,
                  std::span<const std::size_t> valid = {});

/// Mean negative log-likelihood of logits[N, C] at targets; rows whose target
/// equals `ignore_index` are excluded from the mean. With `weights`, row i
/// counts weights[i] times (weighted mean).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -100,
                     std::span<const double> weights = {});
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// [B, L, h*dh] -> [B*h, L, dh] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);
/// scores[B*h, Lq, Lk]: keys with key_valid[b*Lk + k] == 0 are set to -inf.
Tensor mask_keys(const Tensor& scores, std::span<const std::uint8_t> key_valid, std::size_t heads);

} // namespace rce
