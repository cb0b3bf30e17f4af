#include "rce/nn.hpp"

#include "rce/error.hpp"

#include <cmath>

namespace rce {

namespace {

std::string join(const std::string& prefix, const char* name) { return prefix.empty() ? name : prefix + "." + name; }

Tensor uniform(Shape shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(numel(shape));
    for (auto& v : values) {
        v = dist(rng);
    }
    return Tensor::from(std::move(shape), std::move(values), true);
}

} // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
    // Glorot-uniform weights, zero bias
    weight = uniform({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
    if (with_bias) {
        bias = Tensor::zeros({out}, true);
    }
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "weight"), weight});
    if (bias.defined()) {
        out.push_back({join(prefix, "bias"), bias});
    }
}

LayerNorm::LayerNorm(std::size_t dim, double eps_)
    : gain(Tensor::full({dim}, 1.0, true)), shift(Tensor::zeros({dim}, true)), eps(eps_) {}

Tensor LayerNorm::forward(const Tensor& x) const { return add(mul(layer_norm(x, -1, eps), gain), shift); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "gain"), gain});
    out.push_back({join(prefix, "shift"), shift});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng) : heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ShapeMismatch("model dimension " + std::to_string(dim) + " is not divisible by " +
                            std::to_string(heads) + " heads");
    }
    query = Linear(dim, dim, rng);
    key = Linear(dim, dim, rng);
    value = Linear(dim, dim, rng);
    output = Linear(dim, dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x, std::span<const std::uint8_t> key_valid, Tensor* weights) const {
    if (x.rank() == 2) {
        Tensor y = forward(reshape(x, {1, x.dim(0), x.dim(1)}), key_valid, weights);
        return reshape(y, {x.dim(0), x.dim(1)});
    }
    if (x.rank() != 3 || x.dim(2) != query.in_features()) {
        throw ShapeMismatch("attention input " + to_string(x.shape()) + " for model dimension " +
                            std::to_string(query.in_features()));
    }
    const std::size_t dh = x.dim(2) / heads_;
    Tensor q = split_heads(query.forward(x), heads_);
    Tensor k = split_heads(key.forward(x), heads_);
    Tensor v = split_heads(value.forward(x), heads_);
    Tensor scores = scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (!key_valid.empty()) {
        scores = mask_keys(scores, key_valid, heads_);
    }
    Tensor probs = softmax(scores, -1);
    if (weights != nullptr) {
        *weights = probs;
    }
    return output.forward(merge_heads(matmul(probs, v), heads_));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
    query.collect(out, join(prefix, "query"));
    key.collect(out, join(prefix, "key"));
    value.collect(out, join(prefix, "value"));
    output.collect(out, join(prefix, "output"));
}

EncoderLayer::EncoderLayer(const EncoderLayerConfig& config, Rng& rng)
    : attention(config.dim, config.heads, rng),
      norm1(config.dim),
      norm2(config.dim),
      ff1(config.dim, config.ff_dim, rng),
      ff2(config.ff_dim, config.dim, rng),
      dropout(config.dropout) {}

Tensor EncoderLayer::forward(const Tensor& x, std::span<const std::uint8_t> key_valid,
                             const ForwardContext& ctx) const {
    Tensor a = dropout_apply(attention.forward(x, key_valid), ctx);
    Tensor h = norm1.forward(add(x, a));
    Tensor f = dropout_apply(ff2.forward(relu(ff1.forward(h))), ctx);
    return norm2.forward(add(h, f));
}

Tensor EncoderLayer::dropout_apply(const Tensor& x, const ForwardContext& ctx) const {
    return rce::dropout(x, dropout, ctx.training, ctx.rng);
}

void EncoderLayer::collect(ParamList& out, const std::string& prefix) const {
    attention.collect(out, join(prefix, "attention"));
    norm1.collect(out, join(prefix, "norm1"));
    ff1.collect(out, join(prefix, "ff1"));
    ff2.collect(out, join(prefix, "ff2"));
    norm2.collect(out, join(prefix, "norm2"));
}

EncoderStack::EncoderStack(std::size_t count, const EncoderLayerConfig& config, Rng& rng) {
    if (count == 0) {
        throw ConfigError("an encoder needs at least one layer");
    }
    layers.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        layers.emplace_back(config, rng);
    }
}

Tensor EncoderStack::forward(Tensor x, std::span<const std::uint8_t> key_valid, const ForwardContext& ctx) const {
    for (const auto& layer : layers) {
        x = layer.forward(x, key_valid, ctx);
    }
    return x;
}

void EncoderStack::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(out, join(prefix, ("layer" + std::to_string(i)).c_str()));
    }
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
    std::vector<double> values(length * dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * rate;
            values[pos * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({length, dim}, std::move(values));
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.tensor.numel();
    }
    return n;
}

} // namespace rce
