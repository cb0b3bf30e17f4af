#pragma once

#include "rce/corpus.hpp"
#include "rce/encoder.hpp"
#include "rce/heads.hpp"
#include "rce/nn.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rce {

inline constexpr const char* kLmCls = "[CLS]";
inline constexpr const char* kLmSep = "[SEP]";
inline constexpr const char* kLmMask = "[MASK]";
inline constexpr const char* kLmPad = "[PAD]";
inline constexpr const char* kLmUnk = "[UNK]";

struct LmConfig {
    std::size_t dim = 128;
    std::size_t heads = 4;
    std::size_t layers = 4;
    std::size_t ff_dim = 128;
    std::size_t batch_size = 12; // sentence pairs per step
    double mask_rate = 0.15;
    double dropout = 0.1;
    std::size_t max_len = 64;    // words per framed pair

    // lookup variant
    std::size_t vocab_size = 20000;
    // character variant
    std::size_t char_layers = 2;
    std::size_t char_heads = 4;
    std::size_t max_word_len = 32;

    void validate() const;
};

void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);

/// Turns words into model-dimension vectors and scores masked-word
/// predictions. Framing words ([CLS], [SEP], [MASK]) are ordinary words.
class LmEmbedding : public Module {
public:
    virtual std::string kind() const = 0;
    virtual std::size_t dim() const = 0;
    /// [n, dim] vectors; every word embeds without failure.
    virtual Tensor embed(std::span<const std::string> words, const ForwardContext& ctx) const = 0;
    /// Loss of predicting `targets` from hidden states [n, dim].
    virtual Tensor mlm_loss(const Tensor& hidden, std::span<const std::string> targets,
                            const ForwardContext& ctx) const = 0;
    virtual nlohmann::json describe() const = 0;
};

/// Whole-word lookup table; words outside the vocabulary share [UNK].
/// Masked words are predicted with a softmax over the vocabulary.
class LookupEmbedding : public LmEmbedding {
public:
    /// Specials first, then `words` in order.
    LookupEmbedding(const std::vector<std::string>& words, std::size_t dim, Rng& rng);
    /// Vocabulary of the `size` most frequent corpus words.
    static std::unique_ptr<LookupEmbedding> from_corpus(const Corpus& corpus, std::size_t size, std::size_t dim,
                                                        Rng& rng);

    std::string kind() const override { return "lookup"; }
    std::size_t dim() const override { return table_.dim(1); }
    Tensor embed(std::span<const std::string> words, const ForwardContext& ctx) const override;
    Tensor mlm_loss(const Tensor& hidden, std::span<const std::string> targets,
                    const ForwardContext& ctx) const override;
    nlohmann::json describe() const override;
    void collect(ParamList& out, const std::string& prefix) const override;

    int id(std::string_view word) const; // the [UNK] id when absent
    int unk_id() const { return unk_; }
    const TokenDictionary& vocabulary() const { return vocab_; }

private:
    TokenDictionary vocab_;
    int unk_ = 0;
    Tensor table_; // [V, d]
    Linear out_;   // d -> V
};

/// Character transformer word encoder; masked words are reconstructed
/// character by character with a decoder. Encoder outputs are standardized
/// per dimension across word types: in training over the distinct words of
/// the batch, otherwise with running statistics. Encoders give nearly
/// parallel vectors for all words, and the differences that identify a word
/// would otherwise be drowned by the shared component (or by its drift
/// during training), leaving the language model blind to word identity.
class CharLmEmbedding : public LmEmbedding {
public:
    CharLmEmbedding(const Alphabet& alphabet, const RceConfig& encoder, const DecoderConfig& decoder, Rng& rng);

    std::string kind() const override { return "rce"; }
    std::size_t dim() const override { return encoder_.dim(); }
    Tensor embed(std::span<const std::string> words, const ForwardContext& ctx) const override;
    Tensor mlm_loss(const Tensor& hidden, std::span<const std::string> targets,
                    const ForwardContext& ctx) const override;
    nlohmann::json describe() const override;
    void collect(ParamList& out, const std::string& prefix) const override;

    const RceModel& encoder() const { return encoder_; }
    const CharDecoder& decoder() const { return decoder_; }
    /// Padded character encoding; overly long words are truncated.
    CharTokenSeq encode(std::string_view word) const;
    /// Resets the running statistics to those of the eval-mode vectors of `words`.
    void calibrate(std::span<const std::string> words);

private:
    RceModel encoder_;
    DecoderConfig decoder_config_;
    CharDecoder decoder_;
    // running per-dimension mean and variance over word types [dim]; updated
    // by training-mode calls
    mutable Tensor mean_, var_;
};

/// Builds the embedding layer of the requested variant ("lookup" or "rce").
std::unique_ptr<LmEmbedding> make_lm_embedding(const std::string& kind, const LmConfig& config,
                                               const Corpus& corpus, Rng& rng);

/// Sentence pair for next-sentence prediction.
struct LmPair {
    std::vector<std::string> first;
    std::vector<std::string> second;
    bool is_next = false;
};

/// [CLS] first [SEP] second [SEP] for a batch, padded with [PAD] to the
/// longest pair. Pairs longer than max_len lose words from the right end of
/// the second sentence, then of the first.
struct LmInput {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::string> words;     // batch * length
    std::vector<std::uint8_t> valid;    // 0 at [PAD] positions
    std::vector<int> segment;           // 0 through the first [SEP], then 1
    std::vector<std::uint8_t> maskable; // 1 at sentence words, 0 at framing
};

LmInput frame_pairs(std::span<const LmPair> pairs, std::size_t max_len);

/// Masked copy of an input: chosen word positions read [MASK].
struct MaskedInput {
    LmInput input;
    std::vector<std::size_t> positions; // flat indices into input.words
    std::vector<std::string> originals;
};

/// Replaces round(rate * n) (at least one) of the n sentence words of every
/// pair with [MASK]; framing words are never masked.
MaskedInput mask_words(const LmInput& input, double rate, Rng& rng);

/// BERT-like encoder over word vectors with segment and word-position terms.
class MiniLm : public Module {
public:
    MiniLm(std::unique_ptr<LmEmbedding> embedding, const LmConfig& config, Rng& rng);

    /// Hidden states [B, L, dim]. SequenceTooLong when input.length > max_len.
    Tensor hidden(const LmInput& input, const ForwardContext& ctx) const;
    /// Next-sentence logits [B] read at the [CLS] position.
    Tensor nsp_logits(const Tensor& hidden, const ForwardContext& ctx = {}) const;

    void collect(ParamList& out, const std::string& prefix) const override;

    const LmConfig& config() const { return config_; }
    const LmEmbedding& embedding() const { return *embedding_; }

private:
    LmConfig config_;
    std::unique_ptr<LmEmbedding> embedding_;
    Tensor segments_;  // [2, dim]
    Tensor positions_; // [max_len, dim], word level
    LayerNorm input_norm_;
    EncoderStack encoder_;
    Linear pooler_, nsp_;
};

struct LmLosses {
    Tensor total;
    double mlm = 0.0;
    double nsp = 0.0;
    double nsp_accuracy = 0.0;
};

/// MLM (masked positions only) plus NSP loss of one batch.
LmLosses lm_losses(const MiniLm& model, std::span<const LmPair> pairs, Rng& rng, const ForwardContext& ctx);

/// A pair starting at a uniformly drawn sentence: half the time its true
/// successor, otherwise any other sentence except the first itself.
LmPair sample_pair(const Corpus& corpus, Rng& rng);

struct PretrainOptions {
    std::size_t steps = 5000;
    double max_lr = 0.001;
    std::size_t warmup = 5000;
    std::size_t schedule_steps = 0; // cosine horizon; 0: steps
    std::uint64_t seed = 1;
    std::size_t log_every = 100;
};

void to_json(nlohmann::json& j, const PretrainOptions& o);
void from_json(const nlohmann::json& j, PretrainOptions& o);

struct LmMetricsRow {
    std::size_t step = 0;
    double lr = 0.0, total = 0.0, mlm = 0.0, nsp = 0.0, nsp_accuracy = 0.0;
};

std::string lm_metrics_header();
std::string format_lm_metrics(const LmMetricsRow& row);

/// Trains with Adam under the warmup-cosine schedule; writes one metrics
/// line per log_every steps (means over those steps) when `log` is given.
std::vector<LmMetricsRow> pretrain(MiniLm& model, const Corpus& corpus, const PretrainOptions& options,
                                   std::ostream* log = nullptr);

/// Fraction of pairs whose NSP logit sign matches is_next (eval mode).
double nsp_accuracy(const MiniLm& model, std::span<const LmPair> pairs, std::size_t batch_size = 32);

// --------------------------------------------------------------- SWAG-like

struct SwagItem {
    std::string context;
    std::array<std::string, 4> candidates;
    int gold = 0;
};

/// TSV `context<TAB>cand1<TAB>cand2<TAB>cand3<TAB>cand4<TAB>gold_index`.
std::vector<SwagItem> parse_swag(std::istream& in);
std::vector<SwagItem> load_swag(const std::filesystem::path& path);
void write_swag(std::ostream& out, const std::vector<SwagItem>& items);

/// Items from consecutive corpus sentences: the context, its true successor
/// and three distinct random sentences, in shuffled order.
std::vector<SwagItem> make_swag_items(const Corpus& corpus, std::size_t count, std::uint64_t seed);

/// Index of the candidate with the highest next-sentence score.
int swag_choose(const MiniLm& model, const SwagItem& item);
double swag_eval(const MiniLm& model, const std::vector<SwagItem>& items);

/// Model persistence (the parameter file format shared with encoders).
void save_lm(const std::string& path, const MiniLm& model, const nlohmann::json& extra_meta = nlohmann::json::object());
std::unique_ptr<MiniLm> load_lm(const std::string& path);

} // namespace rce
