#include "rce/encoder.hpp"

#include "rce/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rce {

using nlohmann::json;

CharBatch make_char_batch(const Alphabet& alphabet, std::span<const CharTokenSeq> seqs, std::size_t max_len,
                          std::size_t extra) {
    CharBatch b;
    b.batch = seqs.size();
    for (const auto& s : seqs) {
        if (s.content_len > max_len) {
            throw WordTooLong("sequence of " + std::to_string(s.content_len) + " tokens exceeds the maximum of " +
                              std::to_string(max_len));
        }
        if (s.content_len < 2 || s.tokens.size() < s.content_len) {
            throw MalformedSequence("sequence without [BEG]/[END] framing");
        }
        b.length = std::max(b.length, s.content_len);
    }
    b.length += extra;
    b.ids.assign(b.batch * b.length, alphabet.pad());
    b.valid.assign(b.batch * b.length, 0);
    b.content.resize(b.batch);
    for (std::size_t i = 0; i < b.batch; ++i) {
        const auto& s = seqs[i];
        b.content[i] = s.content_len;
        for (std::size_t j = 0; j < s.content_len; ++j) {
            b.ids[i * b.length + j] = s.tokens[j];
            b.valid[i * b.length + j] = 1;
        }
    }
    return b;
}

// ------------------------------------------------------------- WordEncoder

CharTokenSeq WordEncoder::encode(std::string_view word, bool truncate) const {
    if (is_registered_special(word)) {
        return encode_special(alphabet(), word, max_word_len());
    }
    EncodeOptions options;
    options.truncate = truncate;
    options.warn_on_truncate = false;
    return encode_word(alphabet(), word, max_word_len(), options);
}

WordVector WordEncoder::embed_word(const CharTokenSeq& seq) const {
    return embed_batch(std::span<const CharTokenSeq>(&seq, 1)).front();
}

std::vector<WordVector> WordEncoder::embed_batch(std::span<const CharTokenSeq> seqs) const {
    NoGradGuard guard;
    Tensor out = embed(seqs, ForwardContext::eval());
    const std::size_t d = dim();
    std::vector<WordVector> rows(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        rows[i].assign(out.data().begin() + static_cast<long>(i * d), out.data().begin() + static_cast<long>((i + 1) * d));
    }
    return rows;
}

std::vector<WordVector> WordEncoder::embed_words(const std::vector<std::string>& words, bool truncate,
                                                 std::size_t chunk) const {
    std::vector<WordVector> out;
    out.reserve(words.size());
    chunk = std::max<std::size_t>(chunk, 1);
    for (std::size_t start = 0; start < words.size(); start += chunk) {
        std::vector<CharTokenSeq> seqs;
        for (std::size_t i = start; i < std::min(words.size(), start + chunk); ++i) {
            seqs.push_back(encode(words[i], truncate));
        }
        for (auto& v : embed_batch(seqs)) {
            out.push_back(std::move(v));
        }
    }
    return out;
}

// ---------------------------------------------------------------- RceModel

void RceConfig::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ConfigError("embedding size " + std::to_string(dim) + " must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    }
    if (layers == 0) {
        throw ConfigError("the encoder needs at least one layer");
    }
    if (ff_dim == 0) {
        throw ConfigError("feed-forward size must be positive");
    }
    if (max_word_len < 3) {
        throw ConfigError("maximum word length must allow [BEG] x [END]");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("dropout must lie in [0, 1)");
    }
}

void to_json(json& j, const RceConfig& c) {
    j = json{{"dim", c.dim},         {"layers", c.layers},
             {"heads", c.heads},     {"ff_dim", c.ff_dim},
             {"max_word_len", c.max_word_len}, {"dropout", c.dropout}};
}

void from_json(const json& j, RceConfig& c) {
    RceConfig d;
    c.dim = j.value("dim", d.dim);
    c.layers = j.value("layers", d.layers);
    c.heads = j.value("heads", d.heads);
    c.ff_dim = j.value("ff_dim", d.ff_dim);
    c.max_word_len = j.value("max_word_len", d.max_word_len);
    c.dropout = j.value("dropout", d.dropout);
}

RceModel::RceModel(const Alphabet& alphabet, const RceConfig& config, Rng& rng)
    : alphabet_(alphabet), config_(config) {
    config_.validate();
    input_ = Linear(alphabet_.size(), config_.dim, rng);
    positions_ = sinusoidal_positions(config_.max_word_len, config_.dim);
    encoder_ = EncoderStack(config_.layers, {config_.dim, config_.heads, config_.ff_dim, config_.dropout}, rng);
}

Tensor RceModel::encode_positions(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx,
                                  CharBatch* layout) const {
    CharBatch b = make_char_batch(alphabet_, seqs, config_.max_word_len);
    // one-hot rows times the projection matrix == row lookup
    Tensor x = embedding_lookup(input_.weight, b.ids, {b.batch, b.length});
    x = add(x, input_.bias);
    x = add(x, slice(positions_, 0, 0, b.length));
    x = dropout(x, config_.dropout, ctx.training, ctx.rng);
    Tensor h = encoder_.forward(x, b.valid, ctx);
    if (layout != nullptr) {
        *layout = std::move(b);
    }
    return h;
}

Tensor RceModel::embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const {
    if (seqs.empty()) {
        return Tensor::zeros({0, config_.dim});
    }
    CharBatch layout;
    Tensor h = encode_positions(seqs, ctx, &layout);
    std::vector<std::size_t> first(layout.batch);
    for (std::size_t i = 0; i < layout.batch; ++i) {
        first[i] = i * layout.length; // the [BEG] position
    }
    return gather_rows(reshape(h, {layout.batch * layout.length, config_.dim}), first);
}

json RceModel::describe() const { return json{{"kind", "rce"}, {"config", config_}}; }

void RceModel::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    input_.collect(out, p + "input");
    encoder_.collect(out, p + "encoder");
}

// ---------------------------------------------------------------- C2vModel

void C2vConfig::validate() const {
    if (char_dim == 0 || filters == 0 || dim == 0 || kernels.empty()) {
        throw ConfigError("c2v sizes must be positive and at least one kernel width given");
    }
    for (auto k : kernels) {
        if (k == 0) {
            throw ConfigError("kernel widths must be positive");
        }
    }
    if (max_word_len < 3) {
        throw ConfigError("maximum word length must allow [BEG] x [END]");
    }
}

void to_json(json& j, const C2vConfig& c) {
    j = json{{"char_dim", c.char_dim}, {"kernels", c.kernels}, {"filters", c.filters},
             {"dim", c.dim},           {"max_word_len", c.max_word_len}};
}

void from_json(const json& j, C2vConfig& c) {
    C2vConfig d;
    c.char_dim = j.value("char_dim", d.char_dim);
    c.kernels = j.value("kernels", d.kernels);
    c.filters = j.value("filters", d.filters);
    c.dim = j.value("dim", d.dim);
    c.max_word_len = j.value("max_word_len", d.max_word_len);
}

C2vModel::C2vModel(const Alphabet& alphabet, const C2vConfig& config, Rng& rng)
    : alphabet_(alphabet), config_(config) {
    config_.validate();
    char_embed_ = Tensor::randn({alphabet_.size(), config_.char_dim}, rng, 1.0, true);
    for (auto k : config_.kernels) {
        const double bound = std::sqrt(6.0 / static_cast<double>(k * config_.char_dim + config_.filters));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> w(k * config_.char_dim * config_.filters);
        for (auto& v : w) {
            v = dist(rng);
        }
        conv_weight_.push_back(Tensor::from({k, config_.char_dim, config_.filters}, std::move(w), true));
        conv_bias_.push_back(Tensor::zeros({config_.filters}, true));
    }
    proj_ = Linear(config_.filters * config_.kernels.size(), config_.dim, rng);
}

Tensor C2vModel::embed(std::span<const CharTokenSeq> seqs, const ForwardContext& /*ctx*/) const {
    if (seqs.empty()) {
        return Tensor::zeros({0, config_.dim});
    }
    const std::size_t kmax = *std::max_element(config_.kernels.begin(), config_.kernels.end());
    // Trailing [PAD] columns so every window starting inside the word fits;
    // the layout past the content is then the same for any input padding.
    CharBatch b = make_char_batch(alphabet_, seqs, config_.max_word_len, kmax - 1);
    Tensor x = embedding_lookup(char_embed_, b.ids, {b.batch, b.length});
    std::vector<Tensor> pooled;
    for (std::size_t i = 0; i < config_.kernels.size(); ++i) {
        Tensor c = relu(conv1d(x, conv_weight_[i], conv_bias_[i]));
        Tensor m = max_pool1d(c, c.dim(1), 1, b.content); // window starts < content_len
        pooled.push_back(reshape(m, {b.batch, config_.filters}));
    }
    return proj_.forward(pooled.size() == 1 ? pooled.front() : concat(pooled, 1));
}

json C2vModel::describe() const { return json{{"kind", "c2v"}, {"config", config_}}; }

void C2vModel::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    out.push_back({p + "char_embed", char_embed_});
    for (std::size_t i = 0; i < config_.kernels.size(); ++i) {
        const std::string name = p + "conv" + std::to_string(config_.kernels[i]) + "_" + std::to_string(i);
        out.push_back({name + ".weight", conv_weight_[i]});
        out.push_back({name + ".bias", conv_bias_[i]});
    }
    proj_.collect(out, p + "proj");
}

// --------------------------------------------------------- CombinedEncoder

CombinedEncoder::CombinedEncoder(std::unique_ptr<RceModel> rce, std::unique_ptr<C2vModel> c2v)
    : rce_(std::move(rce)), c2v_(std::move(c2v)) {
    if (!rce_ || !c2v_) {
        throw ConfigError("combined encoder needs both parts");
    }
    if (rce_->alphabet().hash() != c2v_->alphabet().hash()) {
        throw AlphabetMismatch("the two encoders were built over different alphabets");
    }
}

std::size_t CombinedEncoder::max_word_len() const { return std::min(rce_->max_word_len(), c2v_->max_word_len()); }

Tensor CombinedEncoder::embed(std::span<const CharTokenSeq> seqs, const ForwardContext& ctx) const {
    return concat({rce_->embed(seqs, ctx), c2v_->embed(seqs, ctx)}, 1);
}

json CombinedEncoder::describe() const {
    return json{{"kind", "combined"}, {"rce", rce_->describe()}, {"c2v", c2v_->describe()}};
}

void CombinedEncoder::collect(ParamList& out, const std::string& prefix) const {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    rce_->collect(out, p + "rce");
    c2v_->collect(out, p + "c2v");
}

// ------------------------------------------------------------ persistence

std::unique_ptr<WordEncoder> make_encoder(const json& description, const Alphabet& alphabet, Rng& rng) {
    const std::string kind = description.value("kind", "");
    if (kind == "rce") {
        return std::make_unique<RceModel>(alphabet, description.value("config", json::object()).get<RceConfig>(), rng);
    }
    if (kind == "c2v") {
        return std::make_unique<C2vModel>(alphabet, description.value("config", json::object()).get<C2vConfig>(), rng);
    }
    if (kind == "combined") {
        auto r = make_encoder(description.at("rce"), alphabet, rng);
        auto c = make_encoder(description.at("c2v"), alphabet, rng);
        return std::make_unique<CombinedEncoder>(std::unique_ptr<RceModel>(static_cast<RceModel*>(r.release())),
                                                 std::unique_ptr<C2vModel>(static_cast<C2vModel*>(c.release())));
    }
    throw ConfigError("unknown encoder kind '" + kind + "' (expected rce, c2v or combined)");
}

void save_model(const std::string& path, const WordEncoder& encoder, const ParamList& extra,
                const json& extra_meta) {
    std::ostringstream alpha;
    encoder.alphabet().write(alpha);
    json meta = extra_meta;
    meta["encoder"] = encoder.describe();
    meta["alphabet"] = alpha.str();
    ParameterFile file;
    file.alphabet_hash = encoder.alphabet().hash();
    file.meta = meta.dump();
    file.tensors = encoder.parameters("encoder");
    file.tensors.insert(file.tensors.end(), extra.begin(), extra.end());
    save_parameters(path, file);
}

LoadedModel load_model(const std::string& path, const Alphabet* expected) {
    LoadedModel m;
    m.file = load_parameters(path);
    try {
        m.meta = json::parse(m.file.meta);
    } catch (const json::exception& e) {
        throw FormatError("model '" + path + "' has unreadable metadata: " + e.what());
    }
    if (!m.meta.contains("encoder") || !m.meta.contains("alphabet")) {
        throw FormatError("model '" + path + "' lacks encoder metadata");
    }
    std::istringstream alpha_text(m.meta["alphabet"].get<std::string>());
    const Alphabet alphabet = Alphabet::parse(alpha_text);
    if (alphabet.hash() != m.file.alphabet_hash) {
        throw AlphabetMismatch("model '" + path + "' alphabet listing does not match its recorded hash");
    }
    if (expected != nullptr && expected->hash() != m.file.alphabet_hash) {
        throw AlphabetMismatch("model '" + path + "' was trained with a different alphabet");
    }
    Rng rng(0);
    m.encoder = make_encoder(m.meta["encoder"], alphabet, rng);
    assign_parameters(m.encoder->parameters("encoder"), m.file.tensors);
    return m;
}

} // namespace rce
