#pragma once

#include "rce/alphabet.hpp"
#include "rce/nn.hpp"
#include "rce/serialize.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rce {

using WordVector = std::vector<double>;

/// Padded integer view of a batch of character sequences, cut to the longest
/// content in the batch (plus `extra` trailing [PAD] columns).
struct CharBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<int> ids;              // batch * length
    std::vector<std::uint8_t> valid;   // 1 where position < content_len
    std::vector<std::size_t> content;  // content_len per row
};

CharBatch make_char_batch(const Alphabet& alphabet, std::span<const CharTokenSeq> seqs, std::size_t max_len,
                          std::size_t extra = 0);

/// A model turning character sequences into one vector per word.
class WordEncoder : public Module {
public:
    /// [n, dim()] embeddings; differentiable when grad mode is on.
    virtual Tensor embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::size_t max_word_len() const = 0;
    virtual const Alphabet& alphabet() const = 0;
    /// {"kind": ..., "config": ...}; enough to rebuild the architecture.
    virtual nlohmann::json describe() const = 0;

    /// Encodes a word (or registered special) padded to max_word_len().
    CharTokenSeq encode(std::string_view word, bool truncate = false) const;

    /// Inference helpers: eval mode, no graph.
    WordVector embed_word(const CharTokenSeq& seq) const;
    std::vector<WordVector> embed_batch(std::span<const CharTokenSeq> seqs) const;
    std::vector<WordVector> embed_words(const std::vector<std::string>& words, bool truncate = false,
                                        std::size_t chunk = 256) const;
};

struct RceConfig {
    std::size_t dim = 64;
    std::size_t layers = 3;
    std::size_t heads = 2;
    std::size_t ff_dim = 256;
    std::size_t max_word_len = kDefaultMaxWordLen;
    double dropout = 0.1;

    void validate() const;
};

void to_json(nlohmann::json& j, const RceConfig& c);
void from_json(const nlohmann::json& j, RceConfig& c);

/// Transformer word encoder: token embedding (the one-hot projection) plus
/// bias and sinusoidal positions, a post-norm encoder stack over the
/// unpadded positions, and the output at [BEG] as the word vector.
class RceModel : public WordEncoder {
public:
    RceModel(const Alphabet& alphabet, const RceConfig& config, Rng& rng);

    Tensor embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const override;
    std::size_t dim() const override { return config_.dim; }
    std::size_t max_word_len() const override { return config_.max_word_len; }
    const Alphabet& alphabet() const override { return alphabet_; }
    nlohmann::json describe() const override;
    void collect(ParamList& out, const std::string& prefix) const override;

    const RceConfig& config() const { return config_; }

    /// Per-position encoder outputs [n, L, dim] and the batch layout used.
    Tensor encode_positions(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx, CharBatch* layout) const;

private:
    Alphabet alphabet_;
    RceConfig config_;
    Linear input_;     // weight [|A|, d]; applied as a row lookup
    Tensor positions_; // [max_word_len, d], fixed
    EncoderStack encoder_;
};

struct C2vConfig {
    std::size_t char_dim = 32;
    std::vector<std::size_t> kernels = {2, 3, 4};
    std::size_t filters = 32;
    std::size_t dim = 64;
    std::size_t max_word_len = kDefaultMaxWordLen;

    void validate() const;
};

void to_json(nlohmann::json& j, const C2vConfig& c);
void from_json(const nlohmann::json& j, C2vConfig& c);

/// Convolutional word encoder: char embedding, one ReLU convolution per
/// kernel width, max over window starts inside the word, linear to dim.
class C2vModel : public WordEncoder {
public:
    C2vModel(const Alphabet& alphabet, const C2vConfig& config, Rng& rng);

    Tensor embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const override;
    std::size_t dim() const override { return config_.dim; }
    std::size_t max_word_len() const override { return config_.max_word_len; }
    const Alphabet& alphabet() const override { return alphabet_; }
    nlohmann::json describe() const override;
    void collect(ParamList& out, const std::string& prefix) const override;

    const C2vConfig& config() const { return config_; }

private:
    Alphabet alphabet_;
    C2vConfig config_;
    Tensor char_embed_;
    std::vector<Tensor> conv_weight_, conv_bias_;
    Linear proj_;
};

/// Concatenation [rce | c2v] of two encoders sharing an alphabet.
class CombinedEncoder : public WordEncoder {
public:
    CombinedEncoder(std::unique_ptr<RceModel> rce, std::unique_ptr<C2vModel> c2v);

    Tensor embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const override;
    std::size_t dim() const override { return rce_->dim() + c2v_->dim(); }
    std::size_t max_word_len() const override;
    const Alphabet& alphabet() const override { return rce_->alphabet(); }
    nlohmann::json describe() const override;
    void collect(ParamList& out, const std::string& prefix) const override;

    const RceModel& rce() const { return *rce_; }
    const C2vModel& c2v() const { return *c2v_; }

private:
    std::unique_ptr<RceModel> rce_;
    std::unique_ptr<C2vModel> c2v_;
};

/// Builds an encoder from `describe()` output with fresh parameters.
std::unique_ptr<WordEncoder> make_encoder(const nlohmann::json& description, const Alphabet& alphabet, Rng& rng);

/// Writes the encoder (prefix "encoder") plus any `extra` tensors. The meta
/// block records the architecture, the alphabet listing and `extra_meta`.
void save_model(const std::string& path, const WordEncoder& encoder, const ParamList& extra = {},
                const nlohmann::json& extra_meta = nlohmann::json::object());

struct LoadedModel {
    std::unique_ptr<WordEncoder> encoder;
    nlohmann::json meta;
    ParameterFile file; // all stored tensors, including non-encoder ones
};

/// Restores a saved encoder. When `expected` is given its hash must match the
/// stored alphabet, otherwise AlphabetMismatch is thrown.
LoadedModel load_model(const std::string& path, const Alphabet* expected = nullptr);

} // namespace rce
