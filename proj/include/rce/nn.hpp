#pragma once

#include "rce/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rce {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// Per-call forward settings. Dropout is only active when `training` is set,
/// in which case `rng` must be provided.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;

    static ForwardContext eval() { return {}; }
    static ForwardContext train(Rng& rng) { return {true, &rng}; }
};

/// Anything owning trainable tensors. Names are dotted paths, stable across
/// runs, and used as keys in parameter files.
class Module {
public:
    virtual ~Module() = default;
    virtual void collect(ParamList& out, const std::string& prefix) const = 0;

    ParamList parameters(const std::string& prefix = "") const {
        ParamList out;
        collect(out, prefix);
        return out;
    }
};

/// y = x W + b with W[in, out]; applies to the last axis of any rank.
class Linear : public Module {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor weight;
    Tensor bias; // undefined when built without bias
};

/// Layer normalization over the last axis with learned gain and shift.
class LayerNorm : public Module {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim, double eps = 1e-5);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    Tensor gain;
    Tensor shift;
    double eps = 1e-5;
};

class MultiHeadAttention : public Module {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    /// Self-attention over x[B, L, d] (or x[L, d]). `key_valid` holds B*L
    /// flags; zero flags are never attended to. When `weights` is given it
    /// receives the attention probabilities [B*heads, L, L].
    Tensor forward(const Tensor& x, std::span<const std::uint8_t> key_valid = {}, Tensor* weights = nullptr) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    std::size_t heads() const { return heads_; }

    Linear query, key, value, output;

private:
    std::size_t heads_ = 1;
};

struct EncoderLayerConfig {
    std::size_t dim = 64;
    std::size_t heads = 2;
    std::size_t ff_dim = 256;
    double dropout = 0.1;
};

/// Post-norm transformer encoder block:
///   h = LN(x + Drop(MHA(x)));  out = LN(h + Drop(FF(h)))
class EncoderLayer : public Module {
public:
    EncoderLayer() = default;
    EncoderLayer(const EncoderLayerConfig& config, Rng& rng);

    Tensor forward(const Tensor& x, std::span<const std::uint8_t> key_valid, const ForwardContext& ctx) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    MultiHeadAttention attention;
    LayerNorm norm1, norm2;
    Linear ff1, ff2;
    double dropout = 0.1;

private:
    Tensor dropout_apply(const Tensor& x, const ForwardContext& ctx) const;
};

class EncoderStack : public Module {
public:
    EncoderStack() = default;
    EncoderStack(std::size_t layers, const EncoderLayerConfig& config, Rng& rng);

    Tensor forward(Tensor x, std::span<const std::uint8_t> key_valid, const ForwardContext& ctx) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    std::vector<EncoderLayer> layers;
};

/// Fixed sinusoidal position table [length, dim].
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

/// Total number of scalars in a parameter list.
std::size_t parameter_count(const ParamList& params);

} // namespace rce
