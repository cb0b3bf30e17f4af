#pragma once

#include "rce/corpus.hpp"
#include "rce/encoder.hpp"
#include "rce/nn.hpp"
#include "rce/optim.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rce {

/// Mixing weights of the three objectives; a zero weight disables its head.
struct HeadWeights {
    double context = 1.0;
    double identity = 1.0;
    double dict = 1.0;

    void validate() const; // ConfigError unless all >= 0 and one > 0
};

struct DecoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ff_dim = 0; // 0: four times the input dimension
    double dropout = 0.1;
};

/// Non-autoregressive character decoder: the word vector is copied to every
/// position, the position table is added, a transformer encoder mixes the
/// positions, and a linear layer scores every alphabet entry per position.
class CharDecoder : public Module {
public:
    CharDecoder() = default;
    CharDecoder(std::size_t dim, std::size_t alphabet_size, std::size_t length, const DecoderConfig& config,
                Rng& rng);

    /// e[U, dim] -> logits[U, length, |A|].
    Tensor logits(const Tensor& e, const ForwardContext& ctx) const;
    void collect(ParamList& out, const std::string& prefix) const override;

    std::size_t length() const { return length_; }
    std::size_t dim() const { return dim_; }

private:
    std::size_t dim_ = 0, length_ = 0;
    Tensor positions_;
    EncoderStack encoder_;
    Linear out_;
};

/// Per-position logits for one word vector: [length, |A|].
Tensor predict_chars(const CharDecoder& decoder, const Tensor& e, const ForwardContext& ctx = {});

/// Greedy per-position argmax reading of decoder logits [length, |A|].
std::vector<int> argmax_tokens(const Tensor& logits);

/// True when the per-position argmax of `logits` [length, |A|] spells
/// `seq` exactly from [BEG] through [END].
bool reconstructs(const Tensor& logits, const CharTokenSeq& seq);

/// A reconstruction target: row `row` of the decoded batch should spell `seq`.
struct CharTarget {
    std::size_t row;
    const CharTokenSeq* seq;
};

/// Mean cross-entropy over every target's positions [BEG] .. [END]; padding
/// positions are never counted.
Tensor char_reconstruction_loss(const Tensor& logits, std::span<const CharTarget> targets);

struct DictTarget {
    std::size_t row;
    int id;
};

/// Mean cross-entropy of dictionary logits [U, |D|] at the given targets.
/// Throws NoDictNeighbor when `targets` is empty.
Tensor dict_target_loss(const Tensor& logits, std::span<const DictTarget> targets);

/// Single-sample objectives.
Tensor context_char_loss(const WordEncoder& encoder, const CharDecoder& decoder, const CharTokenSeq& center,
                         std::span<const CharTokenSeq> neighbors, const ForwardContext& ctx = {});
Tensor identity_loss(const WordEncoder& encoder, const CharDecoder& decoder, const CharTokenSeq& word,
                     const ForwardContext& ctx = {});
/// `neighbor_ids` holds dictionary ids, negative for out-of-dictionary words.
Tensor dict_context_loss(const WordEncoder& encoder, const Linear& head, const CharTokenSeq& center,
                         std::span<const int> neighbor_ids, const ForwardContext& ctx = {});

/// Distinct corpus words with their encodings and dictionary ids.
struct TrainingVocabulary {
    std::vector<std::string> words;
    std::vector<CharTokenSeq> seqs;
    std::vector<int> dict_id; // -1 when not in the dictionary
    std::size_t truncated = 0;

    int index_of(std::string_view word) const;
    std::unordered_map<std::string, int> index;
};

TrainingVocabulary build_training_vocabulary(const Corpus& corpus, const WordEncoder& encoder,
                                             const TokenDictionary& dictionary);

/// One sample per center-word occurrence: the center and its sentence-bounded
/// neighbors within the window, as (offset, vocabulary index) pairs.
struct ContextSample {
    int center = 0;
    std::vector<std::pair<int, int>> neighbors;
};

std::vector<ContextSample> make_context_samples(const Corpus& corpus, const TrainingVocabulary& vocab,
                                                std::size_t window);

/// The trainable heads attached to an encoder.
class TrainingHeads : public Module {
public:
    TrainingHeads(std::size_t dim, const Alphabet& alphabet, std::size_t word_len, std::size_t dict_size,
                  const HeadWeights& weights, const DecoderConfig& decoder, Rng& rng);

    void collect(ParamList& out, const std::string& prefix) const override;

    bool has_context() const { return context_.has_value(); }
    bool has_identity() const { return identity_.has_value(); }
    bool has_dict() const { return dict_.has_value(); }
    const CharDecoder& context_decoder() const { return *context_; }
    const CharDecoder& identity_decoder() const { return *identity_; }
    const Linear& dict_head() const { return *dict_; }

private:
    std::optional<CharDecoder> context_, identity_;
    std::optional<Linear> dict_;
};

struct BatchLosses {
    Tensor total;
    double context = std::numeric_limits<double>::quiet_NaN();
    double identity = std::numeric_limits<double>::quiet_NaN();
    double dict = std::numeric_limits<double>::quiet_NaN();
    std::size_t dict_skipped = 0; // samples without an in-dictionary neighbor
};

/// Weighted sum of the active heads over a batch. Each distinct center word
/// is encoded and decoded once; every occurrence still counts as a sample.
BatchLosses batch_losses(const WordEncoder& encoder, const TrainingHeads& heads, const TrainingVocabulary& vocab,
                         std::span<const ContextSample> batch, const HeadWeights& weights,
                         const ForwardContext& ctx);

struct TrainOptions {
    std::size_t steps = 100000;
    std::size_t batch_size = 512;
    std::size_t window = 2;
    std::size_t dict_size = 10000;
    double max_lr = 0.001;
    std::size_t warmup = 5000;
    double clip_norm = 0.0; // off
    HeadWeights weights;
    DecoderConfig decoder;
    std::uint64_t seed = 1;
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 0; // 0: never
    std::string checkpoint_path;
    bool truncate_long_words = true;
};

void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);

struct MetricsRow {
    std::size_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double context = std::numeric_limits<double>::quiet_NaN();
    double identity = std::numeric_limits<double>::quiet_NaN();
    double dict = std::numeric_limits<double>::quiet_NaN();
};

/// Tab-separated header and row formatting of the metrics log.
std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

/// Drives training of one encoder with its heads over a corpus.
class Trainer {
public:
    Trainer(WordEncoder& encoder, const Corpus& corpus, const TrainOptions& options);

    /// Runs one optimizer step; returns its losses (total as a number).
    MetricsRow step();
    /// Runs the remaining steps, writing a metrics line every log_every
    /// steps (mean over those steps) to `metrics` when given.
    std::vector<MetricsRow> run(std::ostream* metrics = nullptr);

    void save_checkpoint(const std::string& path) const;

    std::size_t steps_done() const { return step_; }
    const TrainingHeads& heads() const { return *heads_; }
    const TrainingVocabulary& vocabulary() const { return vocab_; }
    const TokenDictionary& dictionary() const { return dictionary_; }
    const std::vector<ContextSample>& samples() const { return samples_; }

private:
    WordEncoder& encoder_;
    TrainOptions options_;
    TokenDictionary dictionary_;
    TrainingVocabulary vocab_;
    std::vector<ContextSample> samples_;
    std::unique_ptr<TrainingHeads> heads_;
    std::vector<Tensor> params_;
    AdamState adam_;
    Rng rng_;
    std::size_t step_ = 0;
};

} // namespace rce
