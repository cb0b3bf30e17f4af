#include "rce/minilm.hpp"

#include "rce/error.hpp"
#include "rce/optim.hpp"
#include "rce/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rce {

using nlohmann::json;

namespace {

const std::vector<std::string>& lookup_specials() {
    static const std::vector<std::string> specials{kLmPad, kLmUnk, kLmCls, kLmSep, kLmMask};
    return specials;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    for (std::string w; ss >> w;) {
        out.push_back(std::move(w));
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

// Distinct words in first-seen order and the row of every input word.
void dedupe(std::span<const std::string> words, std::vector<std::string>& unique, std::vector<std::size_t>& rows) {
    std::unordered_map<std::string_view, std::size_t> seen;
    rows.resize(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        auto [it, inserted] = seen.emplace(words[i], unique.size());
        if (inserted) {
            unique.push_back(words[i]);
        }
        rows[i] = it->second;
    }
}

// running statistics follow roughly the last hundred batches
constexpr double kStatsMomentum = 0.01;
constexpr double kStatsEps = 1e-5;

// Per-column mean and (biased) variance of a [n, d] tensor.
std::pair<std::vector<double>, std::vector<double>> column_moments(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            mean[c] += x[i * d + c] / static_cast<double>(n);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            var[c] += (x[i * d + c] - mean[c]) * (x[i * d + c] - mean[c]) / static_cast<double>(n);
        }
    }
    return {mean, var};
}

} // namespace

// ------------------------------------------------------------------ config

void LmConfig::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ConfigError("model size " + std::to_string(dim) + " must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    }
    if (char_heads == 0 || dim % char_heads != 0) {
        throw ConfigError("model size must be a multiple of the character encoder heads");
    }
    if (layers == 0 || char_layers == 0 || ff_dim == 0 || batch_size == 0) {
        throw ConfigError("layers, feed-forward size and batch size must be positive");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0) || !(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("mask rate must lie in (0, 1) and dropout in [0, 1)");
    }
    if (max_len < 5) {
        throw ConfigError("a framed pair needs at least 5 word positions");
    }
    if (max_word_len < 3) {
        throw ConfigError("maximum word length must allow [BEG] x [END]");
    }
}

void to_json(json& j, const LmConfig& c) {
    j = json{{"dim", c.dim},
             {"heads", c.heads},
             {"layers", c.layers},
             {"ff_dim", c.ff_dim},
             {"batch_size", c.batch_size},
             {"mask_rate", c.mask_rate},
             {"dropout", c.dropout},
             {"max_len", c.max_len},
             {"vocab_size", c.vocab_size},
             {"char_layers", c.char_layers},
             {"char_heads", c.char_heads},
             {"max_word_len", c.max_word_len}};
}

void from_json(const json& j, LmConfig& c) {
    LmConfig d;
    c.dim = j.value("dim", d.dim);
    c.heads = j.value("heads", d.heads);
    c.layers = j.value("layers", d.layers);
    c.ff_dim = j.value("ff_dim", d.ff_dim);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.mask_rate = j.value("mask_rate", d.mask_rate);
    c.dropout = j.value("dropout", d.dropout);
    c.max_len = j.value("max_len", d.max_len);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.char_layers = j.value("char_layers", d.char_layers);
    c.char_heads = j.value("char_heads", d.char_heads);
    c.max_word_len = j.value("max_word_len", d.max_word_len);
}

// ------------------------------------------------------------ lookup layer

LookupEmbedding::LookupEmbedding(const std::vector<std::string>& words, std::size_t dim, Rng& rng) {
    std::vector<std::string> all = lookup_specials();
    for (const auto& w : words) {
        if (std::find(all.begin(), all.begin() + static_cast<long>(lookup_specials().size()), w) ==
            all.begin() + static_cast<long>(lookup_specials().size())) {
            all.push_back(w);
        }
    }
    vocab_ = TokenDictionary(std::move(all));
    unk_ = *vocab_.id(kLmUnk);
    table_ = Tensor::randn({vocab_.size(), dim}, rng, 1.0, true);
    out_ = Linear(dim, vocab_.size(), rng);
}

std::unique_ptr<LookupEmbedding> LookupEmbedding::from_corpus(const Corpus& corpus, std::size_t size,
                                                             std::size_t dim, Rng& rng) {
    return std::make_unique<LookupEmbedding>(build_dictionary(corpus, size).tokens(), dim, rng);
}

int LookupEmbedding::id(std::string_view word) const { return vocab_.id(word).value_or(unk_); }

Tensor LookupEmbedding::embed(std::span<const std::string> words, const ForwardContext&) const {
    std::vector<int> ids(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        ids[i] = id(words[i]);
    }
    return embedding_lookup(table_, ids, {words.size()});
}

Tensor LookupEmbedding::mlm_loss(const Tensor& hidden, std::span<const std::string> targets,
                                 const ForwardContext&) const {
    std::vector<int> ids(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        ids[i] = id(targets[i]);
    }
    return cross_entropy(out_.forward(hidden), ids);
}

json LookupEmbedding::describe() const {
    const auto& t = vocab_.tokens();
    return json{{"kind", "lookup"},
                {"dim", dim()},
                {"vocabulary", std::vector<std::string>(t.begin() + static_cast<long>(lookup_specials().size()), t.end())}};
}

void LookupEmbedding::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    out.push_back({p + "table", table_});
    out_.collect(out, p + "out");
}

// --------------------------------------------------------- character layer

CharLmEmbedding::CharLmEmbedding(const Alphabet& alphabet, const RceConfig& encoder, const DecoderConfig& decoder,
                                 Rng& rng)
    : encoder_(alphabet, encoder, rng),
      decoder_config_(decoder),
      decoder_(encoder.dim, alphabet.size(), encoder.max_word_len, decoder, rng),
      mean_(Tensor::zeros({encoder.dim})),
      var_(Tensor::full({encoder.dim}, 1.0)) {}

void CharLmEmbedding::calibrate(std::span<const std::string> words) {
    if (words.empty()) {
        throw ConfigError("cannot calibrate the word encoder without words");
    }
    std::vector<CharTokenSeq> seqs;
    seqs.reserve(words.size());
    for (const auto& w : words) {
        seqs.push_back(encode(w));
    }
    NoGradGuard no_grad;
    const Tensor vectors = encoder_.embed(seqs, ForwardContext::eval());
    const auto [mean, var] = column_moments(vectors);
    std::copy(mean.begin(), mean.end(), mean_.data().begin());
    std::copy(var.begin(), var.end(), var_.data().begin());
}

CharTokenSeq CharLmEmbedding::encode(std::string_view word) const {
    return encode_any(encoder_.alphabet(), word, encoder_.max_word_len());
}

Tensor CharLmEmbedding::embed(std::span<const std::string> words, const ForwardContext& ctx) const {
    std::vector<std::string> unique;
    std::vector<std::size_t> rows;
    dedupe(words, unique, rows);
    std::vector<CharTokenSeq> seqs;
    seqs.reserve(unique.size());
    for (const auto& w : unique) {
        seqs.push_back(encode(w));
    }
    const Tensor raw = encoder_.embed(seqs, ctx);
    const std::size_t d = encoder_.dim();
    if (ctx.training && unique.size() > 1) {
        const auto [mean, var] = column_moments(raw);
        auto running_mean = mean_.data();
        auto running_var = var_.data();
        for (std::size_t x = 0; x < d; ++x) {
            running_mean[x] += kStatsMomentum * (mean[x] - running_mean[x]);
            running_var[x] += kStatsMomentum * (var[x] - running_var[x]);
        }
        return gather_rows(layer_norm(raw, 0, kStatsEps), rows);
    }
    std::vector<double> shift(d), gain(d);
    for (std::size_t x = 0; x < d; ++x) {
        shift[x] = -mean_[x];
        gain[x] = 1.0 / std::sqrt(var_[x] + kStatsEps);
    }
    return gather_rows(mul(add(raw, Tensor::from({d}, shift)), Tensor::from({d}, gain)), rows);
}

Tensor CharLmEmbedding::mlm_loss(const Tensor& hidden, std::span<const std::string> targets,
                                 const ForwardContext& ctx) const {
    std::vector<CharTokenSeq> seqs;
    seqs.reserve(targets.size());
    for (const auto& t : targets) {
        seqs.push_back(encode(t));
    }
    std::vector<CharTarget> char_targets;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        char_targets.push_back({i, &seqs[i]});
    }
    return char_reconstruction_loss(decoder_.logits(hidden, ctx), char_targets);
}

json CharLmEmbedding::describe() const {
    std::ostringstream alpha;
    encoder_.alphabet().write(alpha);
    return json{{"kind", "rce"},
                {"encoder", encoder_.config()},
                {"decoder",
                 {{"layers", decoder_config_.layers},
                  {"heads", decoder_config_.heads},
                  {"ff_dim", decoder_config_.ff_dim},
                  {"dropout", decoder_config_.dropout}}},
                {"alphabet", alpha.str()}};
}

void CharLmEmbedding::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    encoder_.collect(out, p + "encoder");
    decoder_.collect(out, p + "decoder");
    out.push_back({p + "standardize.mean", mean_});
    out.push_back({p + "standardize.var", var_});
}

namespace {

std::unique_ptr<LmEmbedding> embedding_from_description(const json& d, Rng& rng) {
    const std::string kind = d.at("kind").get<std::string>();
    if (kind == "lookup") {
        return std::make_unique<LookupEmbedding>(d.at("vocabulary").get<std::vector<std::string>>(),
                                                 d.at("dim").get<std::size_t>(), rng);
    }
    if (kind == "rce") {
        std::istringstream alpha_text(d.at("alphabet").get<std::string>());
        const Alphabet alphabet = Alphabet::parse(alpha_text);
        const json& dec = d.at("decoder");
        DecoderConfig decoder{dec.at("layers").get<std::size_t>(), dec.at("heads").get<std::size_t>(),
                              dec.at("ff_dim").get<std::size_t>(), dec.at("dropout").get<double>()};
        return std::make_unique<CharLmEmbedding>(alphabet, d.at("encoder").get<RceConfig>(), decoder, rng);
    }
    throw ConfigError("unknown embedding variant '" + kind + "' (expected lookup or rce)");
}

} // namespace

std::unique_ptr<LmEmbedding> make_lm_embedding(const std::string& kind, const LmConfig& config,
                                               const Corpus& corpus, Rng& rng) {
    config.validate();
    if (kind == "lookup") {
        return LookupEmbedding::from_corpus(corpus, config.vocab_size, config.dim, rng);
    }
    if (kind == "rce") {
        RceConfig enc{config.dim, config.char_layers, config.char_heads, config.ff_dim, config.max_word_len,
                      0.0};
        DecoderConfig dec{config.char_layers, config.char_heads, config.ff_dim, config.dropout};
        auto emb = std::make_unique<CharLmEmbedding>(Alphabet::standard(), enc, dec, rng);
        // no dropout inside the word encoder: the noise is large next to the
        // differences between words; the language model's own dropout applies
        // to the standardized vectors
        // the most frequent words stand in for the vocabulary
        const auto words = build_dictionary(corpus, std::min<std::size_t>(config.vocab_size, 2000)).tokens();
        if (!words.empty()) {
            emb->calibrate(words);
        }
        return emb;
    }
    throw ConfigError("unknown embedding variant '" + kind + "' (expected lookup or rce)");
}

// ------------------------------------------------------------------ inputs

LmInput frame_pairs(std::span<const LmPair> pairs, std::size_t max_len) {
    if (max_len < 5) {
        throw ConfigError("a framed pair needs at least 5 word positions");
    }
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> first_len;
    for (const auto& p : pairs) {
        std::size_t a = p.first.size(), b = p.second.size();
        while (a + b + 3 > max_len) {
            if (b > 0) {
                --b;
            } else {
                --a;
            }
        }
        std::vector<std::string> r{kLmCls};
        r.insert(r.end(), p.first.begin(), p.first.begin() + static_cast<long>(a));
        r.push_back(kLmSep);
        r.insert(r.end(), p.second.begin(), p.second.begin() + static_cast<long>(b));
        r.push_back(kLmSep);
        rows.push_back(std::move(r));
        first_len.push_back(a);
    }
    LmInput in;
    in.batch = pairs.size();
    for (const auto& r : rows) {
        in.length = std::max(in.length, r.size());
    }
    const std::size_t n = in.batch * in.length;
    in.words.assign(n, kLmPad);
    in.valid.assign(n, 0);
    in.segment.assign(n, 0);
    in.maskable.assign(n, 0);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const std::size_t sep1 = first_len[b] + 1;
        for (std::size_t j = 0; j < rows[b].size(); ++j) {
            const std::size_t k = b * in.length + j;
            in.words[k] = rows[b][j];
            in.valid[k] = 1;
            in.segment[k] = j > sep1 ? 1 : 0;
            in.maskable[k] = (j != 0 && j != sep1 && j + 1 != rows[b].size()) ? 1 : 0;
        }
    }
    return in;
}

MaskedInput mask_words(const LmInput& input, double rate, Rng& rng) {
    MaskedInput m;
    m.input = input;
    for (std::size_t b = 0; b < input.batch; ++b) {
        std::vector<std::size_t> candidates;
        for (std::size_t j = 0; j < input.length; ++j) {
            if (input.maskable[b * input.length + j]) {
                candidates.push_back(b * input.length + j);
            }
        }
        if (candidates.empty()) {
            continue;
        }
        const auto count = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(rate * static_cast<double>(candidates.size()))));
        std::shuffle(candidates.begin(), candidates.end(), rng);
        candidates.resize(count);
        std::sort(candidates.begin(), candidates.end());
        for (std::size_t k : candidates) {
            m.positions.push_back(k);
            m.originals.push_back(input.words[k]);
            m.input.words[k] = kLmMask;
        }
    }
    return m;
}

// ------------------------------------------------------------------- model

MiniLm::MiniLm(std::unique_ptr<LmEmbedding> embedding, const LmConfig& config, Rng& rng)
    : config_(config), embedding_(std::move(embedding)) {
    config_.validate();
    if (embedding_->dim() != config_.dim) {
        throw ShapeMismatch("embedding layer gives " + std::to_string(embedding_->dim()) + " dimensions, model uses " +
                            std::to_string(config_.dim));
    }
    segments_ = Tensor::randn({2, config_.dim}, rng, 0.02, true);
    positions_ = sinusoidal_positions(config_.max_len, config_.dim);
    input_norm_ = LayerNorm(config_.dim);
    encoder_ = EncoderStack(config_.layers, {config_.dim, config_.heads, config_.ff_dim, config_.dropout}, rng);
    pooler_ = Linear(config_.dim, config_.dim, rng);
    nsp_ = Linear(config_.dim, 1, rng);
    // small output weights: an untrained model is near-indifferent (loss ~ ln 2)
    nsp_.weight = Tensor::randn({config_.dim, 1}, rng, 0.02, true);
}

Tensor MiniLm::hidden(const LmInput& input, const ForwardContext& ctx) const {
    if (input.length > config_.max_len) {
        throw SequenceTooLong("pair of " + std::to_string(input.length) + " words exceeds the limit of " +
                              std::to_string(config_.max_len));
    }
    const std::size_t B = input.batch, L = input.length, d = config_.dim;
    // [PAD] positions are never embedded; they read a zero row and are masked
    std::vector<std::string> present;
    std::vector<std::size_t> flat;
    for (std::size_t k = 0; k < input.words.size(); ++k) {
        if (input.valid[k]) {
            present.push_back(input.words[k]);
        }
    }
    Tensor vectors = concat({embedding_->embed(present, ctx), Tensor::zeros({1, d})}, 0);
    std::size_t next = 0;
    flat.resize(input.words.size());
    for (std::size_t k = 0; k < input.words.size(); ++k) {
        flat[k] = input.valid[k] ? next++ : present.size();
    }
    Tensor x = reshape(gather_rows(vectors, flat), {B, L, d});
    x = add(x, slice(positions_, 0, 0, L));
    x = add(x, embedding_lookup(segments_, input.segment, {B, L}));
    x = dropout(input_norm_.forward(x), config_.dropout, ctx.training, ctx.rng);
    return encoder_.forward(x, input.valid, ctx);
}

Tensor MiniLm::nsp_logits(const Tensor& hidden, const ForwardContext&) const {
    const std::size_t B = hidden.dim(0), L = hidden.dim(1);
    std::vector<std::size_t> cls(B);
    for (std::size_t b = 0; b < B; ++b) {
        cls[b] = b * L;
    }
    Tensor pooled = tanh(pooler_.forward(gather_rows(reshape(hidden, {B * L, config_.dim}), cls)));
    return reshape(nsp_.forward(pooled), {B});
}

void MiniLm::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    embedding_->collect(out, p + "embedding");
    out.push_back({p + "segments", segments_});
    input_norm_.collect(out, p + "input_norm");
    encoder_.collect(out, p + "encoder");
    pooler_.collect(out, p + "pooler");
    nsp_.collect(out, p + "nsp");
}

LmLosses lm_losses(const MiniLm& model, std::span<const LmPair> pairs, Rng& rng, const ForwardContext& ctx) {
    const LmInput framed = frame_pairs(pairs, model.config().max_len);
    const MaskedInput masked = mask_words(framed, model.config().mask_rate, rng);
    Tensor h = model.hidden(masked.input, ctx);

    std::vector<double> labels(pairs.size());
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        labels[b] = pairs[b].is_next ? 1.0 : 0.0;
    }
    Tensor logits = model.nsp_logits(h, ctx);
    LmLosses out;
    Tensor nsp = bce_with_logits(logits, labels);
    out.nsp = nsp.item();
    std::size_t hits = 0;
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        hits += (logits[b] > 0.0) == pairs[b].is_next ? 1 : 0;
    }
    out.nsp_accuracy = static_cast<double>(hits) / static_cast<double>(pairs.size());
    if (masked.positions.empty()) {
        out.total = nsp;
        return out;
    }
    Tensor at_masks = gather_rows(reshape(h, {framed.batch * framed.length, model.config().dim}), masked.positions);
    Tensor mlm = model.embedding().mlm_loss(at_masks, masked.originals, ctx);
    out.mlm = mlm.item();
    out.total = add(mlm, nsp);
    return out;
}

LmPair sample_pair(const Corpus& corpus, Rng& rng) {
    const std::size_t n = corpus.sentences.size();
    if (n < 3) {
        throw ConfigError("next-sentence pairs need a corpus of at least 3 sentences");
    }
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
    LmPair p;
    p.first = corpus.sentences[i];
    p.is_next = std::bernoulli_distribution(0.5)(rng);
    std::size_t j = i + 1;
    if (!p.is_next) {
        // any sentence but i and i + 1
        j = std::uniform_int_distribution<std::size_t>(0, n - 3)(rng);
        if (j >= i) j += 2;
    }
    p.second = corpus.sentences[j];
    return p;
}

// ---------------------------------------------------------------- training

void to_json(json& j, const PretrainOptions& o) {
    j = json{{"steps", o.steps},   {"max_lr", o.max_lr}, {"warmup", o.warmup}, {"schedule_steps", o.schedule_steps},
             {"seed", o.seed},     {"log_every", o.log_every}};
}

void from_json(const json& j, PretrainOptions& o) {
    PretrainOptions d;
    o.steps = j.value("steps", d.steps);
    o.max_lr = j.value("max_lr", d.max_lr);
    o.warmup = j.value("warmup", d.warmup);
    o.schedule_steps = j.value("schedule_steps", d.schedule_steps);
    o.seed = j.value("seed", d.seed);
    o.log_every = j.value("log_every", d.log_every);
}

std::string lm_metrics_header() { return "step\tlr\ttotal\tmlm\tnsp\tnsp_acc"; }

std::string format_lm_metrics(const LmMetricsRow& r) {
    std::ostringstream out;
    out << r.step << '\t' << std::setprecision(6) << r.lr << '\t' << r.total << '\t' << r.mlm << '\t' << r.nsp
        << '\t' << r.nsp_accuracy;
    return out.str();
}

std::vector<LmMetricsRow> pretrain(MiniLm& model, const Corpus& corpus, const PretrainOptions& options,
                                   std::ostream* log) {
    if (options.steps == 0) {
        throw ConfigError("pretraining needs at least one step");
    }
    const std::size_t horizon = options.schedule_steps == 0 ? options.steps : options.schedule_steps;
    if (horizon < options.steps) {
        throw ConfigError("the schedule horizon must cover every step");
    }
    Rng rng(options.seed);
    auto params = tensors_of(model.parameters());
    AdamState adam;
    std::vector<LmMetricsRow> rows;
    if (log != nullptr) {
        *log << lm_metrics_header() << '\n';
    }
    const std::size_t every = std::max<std::size_t>(options.log_every, 1);
    LmMetricsRow acc;
    std::size_t n = 0;
    for (std::size_t step = 1; step <= options.steps; ++step) {
        const double lr = lr_schedule(static_cast<long long>(step), static_cast<long long>(options.warmup),
                                      static_cast<long long>(horizon), options.max_lr);
        std::vector<LmPair> batch;
        for (std::size_t b = 0; b < model.config().batch_size; ++b) {
            batch.push_back(sample_pair(corpus, rng));
        }
        zero_grads(params);
        LmLosses losses = lm_losses(model, batch, rng, ForwardContext::train(rng));
        const double total = losses.total.item();
        if (!std::isfinite(total)) {
            throw NonFiniteValue("pretraining loss became " + std::to_string(total) + " at step " +
                                 std::to_string(step));
        }
        losses.total.backward();
        adam_step(params, adam, lr);

        acc.total += total;
        acc.mlm += losses.mlm;
        acc.nsp += losses.nsp;
        acc.nsp_accuracy += losses.nsp_accuracy;
        ++n;
        if (step % every == 0 || step == options.steps) {
            const double k = static_cast<double>(n);
            LmMetricsRow row{step, lr, acc.total / k, acc.mlm / k, acc.nsp / k, acc.nsp_accuracy / k};
            rows.push_back(row);
            if (log != nullptr) {
                *log << format_lm_metrics(row) << '\n' << std::flush;
            }
            acc = {};
            n = 0;
        }
    }
    return rows;
}

double nsp_accuracy(const MiniLm& model, std::span<const LmPair> pairs, std::size_t batch_size) {
    if (pairs.empty()) {
        throw ConfigError("no pairs to evaluate");
    }
    NoGradGuard no_grad;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
        const auto chunk = pairs.subspan(start, std::min(batch_size, pairs.size() - start));
        Tensor logits = model.nsp_logits(model.hidden(frame_pairs(chunk, model.config().max_len), {}));
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            hits += (logits[b] > 0.0) == chunk[b].is_next ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// --------------------------------------------------------------- SWAG-like

std::vector<SwagItem> parse_swag(std::istream& in) {
    std::vector<SwagItem> items;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            f.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (f.size() != 6) {
            throw FormatError(where + "expected context, 4 candidates and a gold index, got " +
                              std::to_string(f.size()) + " fields");
        }
        SwagItem item;
        item.context = f[0];
        for (std::size_t c = 0; c < 4; ++c) {
            item.candidates[c] = f[c + 1];
        }
        if (f[5].size() != 1 || f[5][0] < '0' || f[5][0] > '3') {
            throw FormatError(where + "gold index must be 0..3, got '" + f[5] + "'");
        }
        item.gold = f[5][0] - '0';
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<SwagItem> load_swag(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "'");
    }
    return parse_swag(in);
}

void write_swag(std::ostream& out, const std::vector<SwagItem>& items) {
    for (const auto& it : items) {
        out << it.context;
        for (const auto& c : it.candidates) {
            out << '\t' << c;
        }
        out << '\t' << it.gold << '\n';
    }
}

std::vector<SwagItem> make_swag_items(const Corpus& corpus, std::size_t count, std::uint64_t seed) {
    const std::size_t n = corpus.sentences.size();
    std::vector<std::string> text(n);
    for (std::size_t i = 0; i < n; ++i) {
        text[i] = join_words(corpus.sentences[i]);
    }
    std::unordered_set<std::string> distinct(text.begin(), text.end());
    if (n < 2 || distinct.size() < 5) {
        throw ConfigError("building items needs at least 5 distinct sentences");
    }
    Rng rng(seed);
    std::vector<SwagItem> items;
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    std::size_t attempts = 0;
    while (items.size() < count) {
        if (++attempts > 100 * count + 1000) {
            throw ConfigError("the corpus is too repetitive to build distinct candidates");
        }
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
        if (text[i + 1] == text[i]) {
            continue;
        }
        std::vector<std::string> cands{text[i + 1]};
        std::unordered_set<std::string> used{text[i], text[i + 1]};
        std::size_t tries = 0;
        while (cands.size() < 4 && tries++ < 1000) {
            const std::size_t j = any(rng);
            if (used.insert(text[j]).second) {
                cands.push_back(text[j]);
            }
        }
        if (cands.size() < 4) {
            continue;
        }
        std::array<std::size_t, 4> order{0, 1, 2, 3};
        std::shuffle(order.begin(), order.end(), rng);
        SwagItem item;
        item.context = text[i];
        for (std::size_t c = 0; c < 4; ++c) {
            item.candidates[c] = cands[order[c]];
            if (order[c] == 0) {
                item.gold = static_cast<int>(c);
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

int swag_choose(const MiniLm& model, const SwagItem& item) {
    NoGradGuard no_grad;
    std::vector<LmPair> pairs;
    const auto context = split_words(item.context);
    for (const auto& c : item.candidates) {
        pairs.push_back({context, split_words(c), false});
    }
    Tensor logits = model.nsp_logits(model.hidden(frame_pairs(pairs, model.config().max_len), {}));
    int best = 0;
    for (int c = 1; c < 4; ++c) {
        if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) {
            best = c;
        }
    }
    return best;
}

double swag_eval(const MiniLm& model, const std::vector<SwagItem>& items) {
    if (items.empty()) {
        throw ConfigError("no items to evaluate");
    }
    std::size_t hits = 0;
    for (const auto& it : items) {
        hits += swag_choose(model, it) == it.gold ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(items.size());
}

// ------------------------------------------------------------- persistence

void save_lm(const std::string& path, const MiniLm& model, const json& extra_meta) {
    json meta = extra_meta;
    meta["lm"] = model.config();
    meta["embedding"] = model.embedding().describe();
    ParameterFile file;
    if (const auto* chars = dynamic_cast<const CharLmEmbedding*>(&model.embedding())) {
        file.alphabet_hash = chars->encoder().alphabet().hash();
    }
    file.meta = meta.dump();
    file.tensors = model.parameters("lm");
    save_parameters(path, file);
}

std::unique_ptr<MiniLm> load_lm(const std::string& path) {
    ParameterFile file = load_parameters(path);
    json meta;
    try {
        meta = json::parse(file.meta);
    } catch (const json::exception& e) {
        throw FormatError("model '" + path + "' has unreadable metadata: " + e.what());
    }
    if (!meta.contains("lm") || !meta.contains("embedding")) {
        throw FormatError("'" + path + "' is not a language model file");
    }
    Rng rng(0);
    auto embedding = embedding_from_description(meta["embedding"], rng);
    if (const auto* chars = dynamic_cast<const CharLmEmbedding*>(embedding.get());
        chars != nullptr && chars->encoder().alphabet().hash() != file.alphabet_hash) {
        throw AlphabetMismatch("model '" + path + "' alphabet listing does not match its recorded hash");
    }
    auto model = std::make_unique<MiniLm>(std::move(embedding), meta["lm"].get<LmConfig>(), rng);
    assign_parameters(model->parameters("lm"), file.tensors);
    return model;
}

} // namespace rce
