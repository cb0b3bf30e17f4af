#include "rce/heads.hpp"

#include "rce/error.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace rce {

using nlohmann::json;

void HeadWeights::validate() const {
    if (context < 0.0 || identity < 0.0 || dict < 0.0) {
        throw ConfigError("head weights must be nonnegative");
    }
    if (context == 0.0 && identity == 0.0 && dict == 0.0) {
        throw ConfigError("at least one head weight must be positive");
    }
}

// ------------------------------------------------------------- CharDecoder

CharDecoder::CharDecoder(std::size_t dim, std::size_t alphabet_size, std::size_t length, const DecoderConfig& config,
                         Rng& rng)
    : dim_(dim), length_(length) {
    const std::size_t ff = config.ff_dim == 0 ? 4 * dim : config.ff_dim;
    positions_ = sinusoidal_positions(length, dim);
    encoder_ = EncoderStack(config.layers, {dim, config.heads, ff, config.dropout}, rng);
    out_ = Linear(dim, alphabet_size, rng);
}

Tensor CharDecoder::logits(const Tensor& e, const ForwardContext& ctx) const {
    if (e.rank() != 2 || e.dim(1) != dim_) {
        throw ShapeMismatch("decoder expects [n, " + std::to_string(dim_) + "], got " + to_string(e.shape()));
    }
    const std::size_t n = e.dim(0);
    // the same vector at every position, told apart only by the position term
    std::vector<std::size_t> repeat(n * length_);
    for (std::size_t i = 0; i < repeat.size(); ++i) {
        repeat[i] = i / length_;
    }
    Tensor x = add(reshape(gather_rows(e, repeat), {n, length_, dim_}), positions_);
    Tensor h = encoder_.forward(x, {}, ctx);
    return out_.forward(h);
}

void CharDecoder::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    encoder_.collect(out, p + "encoder");
    out_.collect(out, p + "out");
}

Tensor predict_chars(const CharDecoder& decoder, const Tensor& e, const ForwardContext& ctx) {
    Tensor row = e.rank() == 1 ? reshape(e, {1, e.dim(0)}) : e;
    Tensor l = decoder.logits(row, ctx);
    return reshape(l, {decoder.length(), l.dim(2)});
}

std::vector<int> argmax_tokens(const Tensor& logits) {
    const std::size_t C = logits.dim(-1);
    const std::size_t rows = logits.numel() / C;
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = logits.data().subspan(r * C, C);
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

bool reconstructs(const Tensor& logits, const CharTokenSeq& seq) {
    const auto tokens = argmax_tokens(logits);
    if (seq.content_len > tokens.size()) {
        return false;
    }
    return std::equal(seq.tokens.begin(), seq.tokens.begin() + static_cast<long>(seq.content_len), tokens.begin());
}

// ----------------------------------------------------------------- losses

namespace {

// Collapses repeated (row, class) targets into weighted rows.
Tensor weighted_target_loss(const Tensor& flat_logits, const std::map<std::pair<std::size_t, int>, double>& counts) {
    std::vector<std::size_t> rows;
    std::vector<int> classes;
    std::vector<double> weights;
    rows.reserve(counts.size());
    for (const auto& [key, count] : counts) {
        rows.push_back(key.first);
        classes.push_back(key.second);
        weights.push_back(count);
    }
    return cross_entropy(gather_rows(flat_logits, rows), classes, -100, weights);
}

} // namespace

Tensor char_reconstruction_loss(const Tensor& logits, std::span<const CharTarget> targets) {
    if (logits.rank() != 3) {
        throw ShapeMismatch("character logits must be [n, length, |A|], got " + to_string(logits.shape()));
    }
    const std::size_t n = logits.dim(0), L = logits.dim(1), C = logits.dim(2);
    std::map<std::pair<std::size_t, int>, double> counts;
    for (const auto& t : targets) {
        if (t.row >= n) {
            throw ShapeMismatch("target row " + std::to_string(t.row) + " outside " + std::to_string(n));
        }
        if (t.seq->content_len > L) {
            throw WordTooLong("target of " + std::to_string(t.seq->content_len) + " tokens for a decoder of length " +
                              std::to_string(L));
        }
        for (std::size_t j = 0; j < t.seq->content_len; ++j) {
            counts[{t.row * L + j, t.seq->tokens[j]}] += 1.0;
        }
    }
    if (counts.empty()) {
        return Tensor::scalar(0.0);
    }
    return weighted_target_loss(reshape(logits, {n * L, C}), counts);
}

Tensor dict_target_loss(const Tensor& logits, std::span<const DictTarget> targets) {
    if (targets.empty()) {
        throw NoDictNeighbor("no neighbor has a dictionary entry");
    }
    if (logits.rank() != 2) {
        throw ShapeMismatch("dictionary logits must be [n, |D|], got " + to_string(logits.shape()));
    }
    std::map<std::pair<std::size_t, int>, double> counts;
    for (const auto& t : targets) {
        if (t.row >= logits.dim(0) || t.id < 0 || static_cast<std::size_t>(t.id) >= logits.dim(1)) {
            throw ShapeMismatch("dictionary target out of range");
        }
        counts[{t.row, t.id}] += 1.0;
    }
    return weighted_target_loss(logits, counts);
}

Tensor context_char_loss(const WordEncoder& encoder, const CharDecoder& decoder, const CharTokenSeq& center,
                         std::span<const CharTokenSeq> neighbors, const ForwardContext& ctx) {
    Tensor e = encoder.embed(std::span<const CharTokenSeq>(&center, 1), ctx);
    std::vector<CharTarget> targets;
    for (const auto& nb : neighbors) {
        targets.push_back({0, &nb});
    }
    return char_reconstruction_loss(decoder.logits(e, ctx), targets);
}

Tensor identity_loss(const WordEncoder& encoder, const CharDecoder& decoder, const CharTokenSeq& word,
                     const ForwardContext& ctx) {
    return context_char_loss(encoder, decoder, word, std::span<const CharTokenSeq>(&word, 1), ctx);
}

Tensor dict_context_loss(const WordEncoder& encoder, const Linear& head, const CharTokenSeq& center,
                         std::span<const int> neighbor_ids, const ForwardContext& ctx) {
    std::vector<DictTarget> targets;
    for (int id : neighbor_ids) {
        if (id >= 0) {
            targets.push_back({0, id});
        }
    }
    if (targets.empty()) {
        throw NoDictNeighbor("sample has no in-dictionary neighbor");
    }
    Tensor e = encoder.embed(std::span<const CharTokenSeq>(&center, 1), ctx);
    return dict_target_loss(head.forward(e), targets);
}

// ------------------------------------------------------------- vocabulary

int TrainingVocabulary::index_of(std::string_view word) const {
    auto it = index.find(std::string(word));
    if (it == index.end()) {
        throw MissingWord("'" + std::string(word) + "' is not in the training vocabulary");
    }
    return it->second;
}

TrainingVocabulary build_training_vocabulary(const Corpus& corpus, const WordEncoder& encoder,
                                             const TokenDictionary& dictionary) {
    TrainingVocabulary v;
    for (const auto& w : unique_words(corpus)) {
        CharTokenSeq seq;
        try {
            seq = encoder.encode(w, false);
        } catch (const WordTooLong&) {
            seq = encoder.encode(w, true);
            ++v.truncated;
        }
        v.index.emplace(w, static_cast<int>(v.words.size()));
        v.words.push_back(w);
        v.seqs.push_back(std::move(seq));
        v.dict_id.push_back(dictionary.id(w).value_or(-1));
    }
    return v;
}

std::vector<ContextSample> make_context_samples(const Corpus& corpus, const TrainingVocabulary& vocab,
                                                std::size_t window) {
    std::vector<ContextSample> out;
    out.reserve(corpus.token_count());
    for (const auto& sentence : corpus.sentences) {
        std::vector<int> ids;
        ids.reserve(sentence.size());
        for (const auto& t : sentence) {
            ids.push_back(vocab.index_of(t));
        }
        const long n = static_cast<long>(ids.size());
        const long w = static_cast<long>(window);
        for (long i = 0; i < n; ++i) {
            ContextSample s;
            s.center = ids[static_cast<std::size_t>(i)];
            for (long o = -w; o <= w; ++o) {
                if (o != 0 && i + o >= 0 && i + o < n) {
                    s.neighbors.emplace_back(static_cast<int>(o), ids[static_cast<std::size_t>(i + o)]);
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ------------------------------------------------------------------ heads

TrainingHeads::TrainingHeads(std::size_t dim, const Alphabet& alphabet, std::size_t word_len, std::size_t dict_size,
                             const HeadWeights& weights, const DecoderConfig& decoder, Rng& rng) {
    weights.validate();
    if (weights.context > 0.0) {
        context_.emplace(dim, alphabet.size(), word_len, decoder, rng);
    }
    if (weights.identity > 0.0) {
        identity_.emplace(dim, alphabet.size(), word_len, decoder, rng);
    }
    if (weights.dict > 0.0 && dict_size > 0) {
        dict_.emplace(dim, dict_size, rng);
    }
}

void TrainingHeads::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    if (context_) context_->collect(out, p + "context");
    if (identity_) identity_->collect(out, p + "identity");
    if (dict_) dict_->collect(out, p + "dict");
}

BatchLosses batch_losses(const WordEncoder& encoder, const TrainingHeads& heads, const TrainingVocabulary& vocab,
                         std::span<const ContextSample> batch, const HeadWeights& weights,
                         const ForwardContext& ctx) {
    weights.validate();
    // distinct centers, first-seen order
    std::unordered_map<int, std::size_t> row_of;
    std::vector<CharTokenSeq> seqs;
    std::vector<std::size_t> rows(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto [it, inserted] = row_of.emplace(batch[i].center, seqs.size());
        if (inserted) {
            seqs.push_back(vocab.seqs[static_cast<std::size_t>(batch[i].center)]);
        }
        rows[i] = it->second;
    }
    BatchLosses out;
    Tensor e = encoder.embed(seqs, ctx);
    std::vector<Tensor> terms;

    if (weights.context > 0.0 && heads.has_context()) {
        std::vector<CharTarget> targets;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            for (const auto& [offset, nb] : batch[i].neighbors) {
                targets.push_back({rows[i], &vocab.seqs[static_cast<std::size_t>(nb)]});
            }
        }
        if (!targets.empty()) {
            Tensor loss = char_reconstruction_loss(heads.context_decoder().logits(e, ctx), targets);
            out.context = loss.item();
            terms.push_back(scale(loss, weights.context));
        }
    }
    if (weights.identity > 0.0 && heads.has_identity()) {
        std::vector<CharTarget> targets;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            targets.push_back({rows[i], &vocab.seqs[static_cast<std::size_t>(batch[i].center)]});
        }
        Tensor loss = char_reconstruction_loss(heads.identity_decoder().logits(e, ctx), targets);
        out.identity = loss.item();
        terms.push_back(scale(loss, weights.identity));
    }
    if (weights.dict > 0.0 && heads.has_dict()) {
        std::vector<DictTarget> targets;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            bool any = false;
            for (const auto& [offset, nb] : batch[i].neighbors) {
                const int id = vocab.dict_id[static_cast<std::size_t>(nb)];
                if (id >= 0) {
                    targets.push_back({rows[i], id});
                    any = true;
                }
            }
            if (!any) {
                ++out.dict_skipped;
            }
        }
        if (!targets.empty()) {
            Tensor loss = dict_target_loss(heads.dict_head().forward(e), targets);
            out.dict = loss.item();
            terms.push_back(scale(loss, weights.dict));
        }
    }
    if (terms.empty()) {
        out.total = Tensor::scalar(0.0);
        return out;
    }
    out.total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) {
        out.total = add(out.total, terms[i]);
    }
    return out;
}

// ---------------------------------------------------------------- options

void to_json(json& j, const TrainOptions& o) {
    j = json{{"steps", o.steps},
             {"batch_size", o.batch_size},
             {"window", o.window},
             {"dict_size", o.dict_size},
             {"max_lr", o.max_lr},
             {"warmup", o.warmup},
             {"clip_norm", o.clip_norm},
             {"weights", {{"context", o.weights.context}, {"identity", o.weights.identity}, {"dict", o.weights.dict}}},
             {"decoder",
              {{"layers", o.decoder.layers},
               {"heads", o.decoder.heads},
               {"ff_dim", o.decoder.ff_dim},
               {"dropout", o.decoder.dropout}}},
             {"seed", o.seed},
             {"log_every", o.log_every},
             {"checkpoint_every", o.checkpoint_every},
             {"checkpoint_path", o.checkpoint_path},
             {"truncate_long_words", o.truncate_long_words}};
}

void from_json(const json& j, TrainOptions& o) {
    TrainOptions d;
    o.steps = j.value("steps", d.steps);
    o.batch_size = j.value("batch_size", d.batch_size);
    o.window = j.value("window", d.window);
    o.dict_size = j.value("dict_size", d.dict_size);
    o.max_lr = j.value("max_lr", d.max_lr);
    o.warmup = j.value("warmup", d.warmup);
    o.clip_norm = j.value("clip_norm", d.clip_norm);
    const json w = j.value("weights", json::object());
    o.weights.context = w.value("context", d.weights.context);
    o.weights.identity = w.value("identity", d.weights.identity);
    o.weights.dict = w.value("dict", d.weights.dict);
    const json dec = j.value("decoder", json::object());
    o.decoder.layers = dec.value("layers", d.decoder.layers);
    o.decoder.heads = dec.value("heads", d.decoder.heads);
    o.decoder.ff_dim = dec.value("ff_dim", d.decoder.ff_dim);
    o.decoder.dropout = dec.value("dropout", d.decoder.dropout);
    o.seed = j.value("seed", d.seed);
    o.log_every = j.value("log_every", d.log_every);
    o.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    o.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
    o.truncate_long_words = j.value("truncate_long_words", d.truncate_long_words);
}

// ---------------------------------------------------------------- metrics

std::string metrics_header() { return "step\tlr\ttotal\tcontext\tidentity\tdict"; }

std::string format_metrics(const MetricsRow& row) {
    std::ostringstream out;
    out << row.step << '\t' << std::setprecision(6) << row.lr << '\t' << row.total;
    for (double v : {row.context, row.identity, row.dict}) {
        out << '\t';
        if (std::isnan(v)) {
            out << '-';
        } else {
            out << v;
        }
    }
    return out.str();
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(WordEncoder& encoder, const Corpus& corpus, const TrainOptions& options)
    : encoder_(encoder), options_(options), rng_(options.seed) {
    options_.weights.validate();
    if (options_.batch_size == 0 || options_.steps == 0) {
        throw ConfigError("steps and batch size must be positive");
    }
    if (options_.weights.dict > 0.0) {
        dictionary_ = build_dictionary(corpus, options_.dict_size);
    }
    vocab_ = build_training_vocabulary(corpus, encoder_, dictionary_);
    if (vocab_.truncated > 0 && !options_.truncate_long_words) {
        throw WordTooLong(std::to_string(vocab_.truncated) + " corpus words exceed the maximum word length");
    }
    samples_ = make_context_samples(corpus, vocab_, options_.window);
    if (samples_.empty()) {
        throw ConfigError("the corpus holds no tokens");
    }
    heads_ = std::make_unique<TrainingHeads>(encoder_.dim(), encoder_.alphabet(), encoder_.max_word_len(),
                                             dictionary_.size(), options_.weights, options_.decoder, rng_);
    params_ = tensors_of(encoder_.parameters());
    for (auto& t : tensors_of(heads_->parameters())) {
        params_.push_back(t);
    }
}

MetricsRow Trainer::step() {
    if (step_ >= options_.steps) {
        throw StepOutOfRange("training already ran its " + std::to_string(options_.steps) + " steps");
    }
    const double lr = lr_schedule(static_cast<long long>(step_ + 1), static_cast<long long>(options_.warmup),
                                  static_cast<long long>(options_.steps), options_.max_lr);
    std::uniform_int_distribution<std::size_t> pick(0, samples_.size() - 1);
    std::vector<ContextSample> batch;
    batch.reserve(options_.batch_size);
    for (std::size_t i = 0; i < options_.batch_size; ++i) {
        batch.push_back(samples_[pick(rng_)]);
    }
    zero_grads(params_);
    BatchLosses losses = batch_losses(encoder_, *heads_, vocab_, batch, options_.weights, ForwardContext::train(rng_));
    const double total = losses.total.item();
    if (!std::isfinite(total)) {
        throw NonFiniteValue("training loss became " + std::to_string(total) + " at step " + std::to_string(step_ + 1));
    }
    losses.total.backward();
    clip_grad_norm(params_, options_.clip_norm);
    adam_step(params_, adam_, lr);
    ++step_;
    if (options_.checkpoint_every > 0 && !options_.checkpoint_path.empty() && step_ % options_.checkpoint_every == 0) {
        save_checkpoint(options_.checkpoint_path);
    }
    return {step_, lr, total, losses.context, losses.identity, losses.dict};
}

std::vector<MetricsRow> Trainer::run(std::ostream* metrics) {
    std::vector<MetricsRow> log;
    if (metrics != nullptr && step_ == 0) {
        *metrics << metrics_header() << '\n';
    }
    const std::size_t every = std::max<std::size_t>(options_.log_every, 1);
    MetricsRow acc;
    std::size_t n = 0;
    auto add_to = [](double& sum, double v) { sum = std::isnan(sum) ? v : sum + v; };
    while (step_ < options_.steps) {
        MetricsRow r = step();
        if (n == 0) {
            acc = MetricsRow{};
            acc.total = 0.0;
        }
        ++n;
        acc.total += r.total;
        if (!std::isnan(r.context)) add_to(acc.context, r.context);
        if (!std::isnan(r.identity)) add_to(acc.identity, r.identity);
        if (!std::isnan(r.dict)) add_to(acc.dict, r.dict);
        if (step_ % every == 0 || step_ == options_.steps) {
            const double k = static_cast<double>(n);
            MetricsRow row{r.step, r.lr, acc.total / k, acc.context / k, acc.identity / k, acc.dict / k};
            log.push_back(row);
            if (metrics != nullptr) {
                *metrics << format_metrics(row) << '\n' << std::flush;
            }
            n = 0;
        }
    }
    return log;
}

void Trainer::save_checkpoint(const std::string& path) const {
    json meta;
    meta["train"] = options_;
    meta["step"] = step_;
    meta["dictionary"] = dictionary_.tokens();
    save_model(path, encoder_, heads_->parameters("heads"), meta);
}

} // namespace rce
