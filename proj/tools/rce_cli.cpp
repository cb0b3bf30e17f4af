// Command-line entry point: one subcommand per pipeline stage.
//
// Option values resolve as flags > config file > built-in defaults. The
// resolved configuration of every run is written next to its output as
// <out>.config.json (or to stderr when the run has no --out).

#include "rce/alphabet.hpp"
#include "rce/corpus.hpp"
#include "rce/encoder.hpp"
#include "rce/error.hpp"
#include "rce/eval.hpp"
#include "rce/heads.hpp"
#include "rce/minilm.hpp"
#include "rce/tensor.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

const char* const kFormats = R"(File formats:
  corpus        UTF-8 text, one sentence per line, whitespace-separated words
  word list     same as corpus; every distinct word is used once
  categories    category<TAB>word per line (at least two categories)
  embeddings    first line "count dim", then "word v1 ... vdim" per line
  declension    nominative<TAB>genitive<TAB>class per line
  chiasmus      w1<TAB>w2<TAB>w3<TAB>w4 per line
  metaphor      adjective<TAB>noun<TAB>label per line (label 0 or 1;
                the label column is optional in --pairs)
  swag items    context<TAB>cand1<TAB>cand2<TAB>cand3<TAB>cand4<TAB>gold (0-3)
  alphabet      the token listing written by the library (see README)
  config        JSON object; top-level keys seed/threads/precision/out, and one
                object per subcommand keyed by its name holding option values
                with dashes written as underscores, e.g.
                {"seed": 3, "train": {"steps": 2000, "encoder": "c2v"}})";

std::string key_of(const std::string& flag) {
    std::string k = flag.substr(flag.find_first_not_of('-'));
    for (char& c : k) {
        if (c == '-') c = '_';
    }
    return k;
}

// Registers options whose defaults come from a JSON config and remembers how
// to read back every resolved value.
class Settings {
public:
    explicit Settings(json config) : config_(std::move(config)) {
        if (!config_.is_object()) throw rce::ConfigError("config file must hold a JSON object");
    }

    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& flag, T& value, const std::string& help) {
        apply(app, key_of(flag), value);
        return app->add_option(flag, value, help)->capture_default_str();
    }

    CLI::Option* flag(CLI::App* app, const std::string& flag, bool& value, const std::string& help) {
        apply(app, key_of(flag), value);
        return app->add_flag(flag, value, help);
    }

    json resolved(const CLI::App* app) const {
        json out = json::object();
        auto it = readers_.find(app);
        if (it == readers_.end()) return out;
        for (const auto& [key, read] : it->second) out[key] = read();
        return out;
    }

    // Unknown keys are mistakes in the config file, not silently ignored.
    void check_keys(const CLI::App* root) const {
        for (const auto& [key, value] : config_.items()) {
            if (value.is_object()) {
                const auto* sub = find_sub(root, key);
                if (!sub) throw rce::ConfigError("config: unknown subcommand section '" + key + "'");
                for (const auto& [inner, v] : value.items()) {
                    (void)v;
                    if (!known(sub, inner)) throw rce::ConfigError("config: unknown option '" + key + "." + inner + "'");
                }
            } else if (!known(root, key)) {
                throw rce::ConfigError("config: unknown option '" + key + "'");
            }
        }
    }

private:
    template <class T>
    void apply(CLI::App* app, const std::string& key, T& value) {
        const json* section = &config_;
        if (app->get_parent() != nullptr) {
            auto it = config_.find(app->get_name());
            section = it != config_.end() && it->is_object() ? &*it : nullptr;
        }
        if (section != nullptr) {
            auto it = section->find(key);
            if (it != section->end() && !it->is_object()) {
                try {
                    value = it->get<T>();
                } catch (const json::exception& e) {
                    throw rce::ConfigError("config: bad value for '" + key + "': " + e.what());
                }
            }
        }
        readers_[app].emplace_back(key, [&value] { return json(value); });
    }

    bool known(const CLI::App* app, const std::string& key) const {
        auto it = readers_.find(app);
        if (it == readers_.end()) return false;
        for (const auto& r : it->second) {
            if (r.first == key) return true;
        }
        return false;
    }

    static const CLI::App* find_sub(const CLI::App* root, const std::string& name) {
        for (const auto* s : root->get_subcommands([](const CLI::App*) { return true; })) {
            if (s->get_name() == name) return s;
        }
        return nullptr;
    }

    json config_;
    std::map<const CLI::App*, std::vector<std::pair<std::string, std::function<json()>>>> readers_;
};

std::optional<std::string> config_path(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return std::nullopt;
}

json read_config(const std::optional<std::string>& path) {
    if (!path) return json::object();
    std::ifstream in(*path);
    if (!in) throw rce::FormatError("cannot open config file " + *path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw rce::FormatError("config file " + *path + ": " + e.what());
    }
}

struct Globals {
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::string precision = "double";
    std::string out;
    std::string config;
};

// Where a subcommand's main result goes: --out when given, else stdout.
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::binary);
            if (!file_) throw rce::FormatError("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::ofstream open_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw rce::FormatError("cannot write " + path);
    return out;
}

std::string fixed3(double x) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << x;
    return s.str();
}

rce::Alphabet alphabet_from(const std::string& path) {
    return path.empty() ? rce::Alphabet::standard() : rce::Alphabet::load(path);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        f.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    if (!f.empty() && !f.back().empty() && f.back().back() == '\r') f.back().pop_back();
    return f;
}

std::vector<std::vector<std::string>> read_tsv(const std::string& path, std::size_t min_fields,
                                               std::size_t max_fields) {
    std::ifstream in(path);
    if (!in) throw rce::FormatError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line == "\r") continue;
        auto f = split_line(line);
        if (f.size() < min_fields || f.size() > max_fields) {
            throw rce::FormatError(path + ":" + std::to_string(n) + ": expected " + std::to_string(min_fields) +
                                   (min_fields == max_fields ? "" : "-" + std::to_string(max_fields)) +
                                   " tab-separated fields");
        }
        rows.push_back(std::move(f));
    }
    return rows;
}

std::vector<double> row_of(const rce::EmbeddingTable& table, const std::string& word) { return table.at(word); }

// ------------------------------------------------------------------ commands

struct TokenizeArgs {
    std::vector<std::string> words;
    std::string alphabet;
    std::size_t max_word_len = rce::kDefaultMaxWordLen;
    bool no_padding = false;
};

void run_tokenize(const TokenizeArgs& a, const Globals& g) {
    const auto alpha = alphabet_from(a.alphabet);
    Output out(g.out);
    for (const auto& w : a.words) {
        const auto seq = rce::encode_any(alpha, w, a.max_word_len);
        out.stream() << w << '\t' << rce::format_tokens(alpha, seq, !a.no_padding) << '\n';
    }
}

struct TrainArgs {
    std::string corpus, alphabet, encoder = "rce", metrics, embeddings;
    rce::RceConfig rce;
    rce::C2vConfig c2v;
    rce::TrainOptions train;
    bool strict_length = false;
};

void run_train(TrainArgs a, const Globals& g) {
    if (g.out.empty()) throw rce::ConfigError("train needs --out for the model file");
    const auto corpus = rce::load_corpus(a.corpus);
    const auto alpha = alphabet_from(a.alphabet);
    a.c2v.max_word_len = a.rce.max_word_len;
    json description;
    if (a.encoder == "rce") {
        description = {{"kind", "rce"}, {"config", a.rce}};
    } else if (a.encoder == "c2v") {
        description = {{"kind", "c2v"}, {"config", a.c2v}};
    } else if (a.encoder == "combined") {
        description = {{"kind", "combined"}, {"rce", a.rce}, {"c2v", a.c2v}};
    } else {
        throw rce::ConfigError("unknown encoder '" + a.encoder + "' (expected rce, c2v or combined)");
    }
    a.train.seed = g.seed;
    a.train.truncate_long_words = !a.strict_length;
    rce::Rng init(g.seed);
    auto encoder = rce::make_encoder(description, alpha, init);

    auto metrics = open_write(a.metrics.empty() ? g.out + ".metrics.tsv" : a.metrics);
    rce::Trainer trainer(*encoder, corpus, a.train);
    if (trainer.vocabulary().truncated > 0) {
        std::cerr << "rce: " << trainer.vocabulary().truncated << " training words truncated to "
                  << encoder->max_word_len() << " tokens\n";
    }
    const auto rows = trainer.run(&metrics);
    rce::save_model(g.out, *encoder, {}, {{"train", a.train}});
    if (!a.embeddings.empty()) rce::export_embeddings(*encoder, trainer.vocabulary().words, a.embeddings, true);
    if (!rows.empty()) std::cout << rce::metrics_header() << '\n' << rce::format_metrics(rows.back()) << '\n';
}

struct EmbedArgs {
    std::string model, corpus, words, categories;
    bool truncate = false;
};

void run_embed(const EmbedArgs& a, const Globals& g) {
    const int sources = !a.corpus.empty() + !a.words.empty() + !a.categories.empty();
    if (sources != 1) throw rce::ConfigError("embed needs exactly one of --corpus, --words, --categories");
    const auto loaded = rce::load_model(a.model);
    std::vector<std::string> words;
    if (!a.categories.empty()) {
        words = rce::unique_words(rce::load_categories(a.categories));
    } else {
        words = rce::unique_words(rce::load_corpus(a.corpus.empty() ? a.words : a.corpus));
    }
    const auto table = rce::embed_table(*loaded.encoder, words, a.truncate);
    Output out(g.out);
    rce::write_embeddings(out.stream(), table);
}

struct TopkArgs {
    std::string embeddings, categories;
    std::size_t k = 3;
};

void run_topk(const TopkArgs& a, const Globals& g) {
    const auto table = rce::import_embeddings(a.embeddings);
    const auto data = rce::load_categories(a.categories);
    const auto r = rce::topk_score(table, data, a.k);

    std::vector<std::pair<double, std::size_t>> per_cat(data.names.size());
    std::size_t e = 0;
    for (std::size_t c = 0; c < data.names.size(); ++c) {
        for (std::size_t m = 0; m < data.members[c].size(); ++m, ++e) {
            if (std::isnan(r.per_word[e])) continue;
            per_cat[c].first += r.per_word[e];
            ++per_cat[c].second;
        }
    }
    std::cout << std::left << std::setw(24) << "category" << std::right << std::setw(8) << "words" << std::setw(10)
              << "top" + std::to_string(a.k) << '\n';
    for (std::size_t c = 0; c < data.names.size(); ++c) {
        const auto& [sum, n] = per_cat[c];
        std::cout << std::left << std::setw(24) << data.names[c] << std::right << std::setw(8)
                  << data.members[c].size() << std::setw(10) << (n ? fixed3(sum / double(n)) : "-") << '\n';
    }
    std::cout << std::left << std::setw(24) << "all" << std::right << std::setw(8) << r.scored << std::setw(10)
              << fixed3(r.score) << '\n';
    if (r.reduced > 0) std::cout << "(k reduced for " << r.reduced << " words in small categories)\n";

    if (!g.out.empty()) {
        auto out = open_write(g.out);
        out << "category\twords\tscored\ttopk\n" << std::setprecision(17);
        for (std::size_t c = 0; c < data.names.size(); ++c) {
            const auto& [sum, n] = per_cat[c];
            out << data.names[c] << '\t' << data.members[c].size() << '\t' << n << '\t';
            if (n) out << sum / double(n); else out << '-';
            out << '\n';
        }
        out << "*\t" << data.word_count() << '\t' << r.scored << '\t' << r.score << '\n';
    }
}

struct OooArgs {
    std::string embeddings, categories;
    std::size_t sets = 1000, in_size = 10;
};

void run_ooo(const OooArgs& a, const Globals& g) {
    const auto table = rce::import_embeddings(a.embeddings);
    const auto data = rce::load_categories(a.categories);
    const rce::OooOptions opts{a.sets, a.in_size, g.seed};
    const double score = rce::ooo_score(table, data, opts);
    std::cout << "odd-one-out\t" << a.sets << " sets of " << a.in_size << "+1\t" << fixed3(score) << '\n';
    if (!g.out.empty()) {
        auto out = open_write(g.out);
        out << "trial\tcategory\toutlier\tchosen\tcorrect\n";
        for (std::size_t i = 0; i < a.sets; ++i) {
            const auto t = rce::ooo_trial(table, data, opts, i);
            out << i << '\t' << data.names[t.category] << '\t' << table.word(t.rows.back()) << '\t'
                << table.word(t.rows[t.chosen]) << '\t' << (t.correct() ? 1 : 0) << '\n';
        }
        out << std::setprecision(17) << "*\t-\t-\t-\t" << score << '\n';
    }
}

struct ProbeArgs {
    std::string embeddings, data;
    std::size_t folds = 5, hidden = 64, epochs = 300;
    double lr = 0.01;
};

void run_probe(const ProbeArgs& a, const Globals& g) {
    const auto table = rce::import_embeddings(a.embeddings);
    const auto items = rce::load_declension(a.data);
    const rce::ProbeOptions opts{a.folds, a.hidden, a.epochs, a.lr, g.seed};
    const auto r = rce::declension_probe(table, items, opts);
    std::cout << "declension probe\t" << items.size() << " items\t" << r.classes.size() << " classes\t"
              << fixed3(r.accuracy) << '\n';
    if (!g.out.empty()) {
        auto out = open_write(g.out);
        out << "fold\taccuracy\n" << std::setprecision(17);
        for (std::size_t f = 0; f < r.fold_accuracy.size(); ++f) out << f << '\t' << r.fold_accuracy[f] << '\n';
        out << "*\t" << r.accuracy << '\n';
    }
}

struct ChiasmusArgs {
    std::string embeddings, data;
};

void run_chiasmus(const ChiasmusArgs& a, const Globals& g) {
    const auto table = rce::import_embeddings(a.embeddings);
    const auto rows = read_tsv(a.data, 4, 4);
    Output out(g.out);
    auto& s = out.stream();
    s << "w1\tw2\tw3\tw4\td12\td13\td14\td23\td24\td34\n" << std::setprecision(17);
    for (const auto& r : rows) {
        const auto f = rce::chiasmus_features(table, r[0], r[1], r[2], r[3]);
        s << r[0] << '\t' << r[1] << '\t' << r[2] << '\t' << r[3];
        for (double d : f) s << '\t' << d;
        s << '\n';
    }
}

struct MetaphorArgs {
    std::string embeddings, data, pairs;
    std::size_t folds = 10, epochs = 300;
    double lr = 0.01;
};

void run_metaphor(const MetaphorArgs& a, const Globals& g) {
    const auto table = rce::import_embeddings(a.embeddings);
    const auto train = rce::load_metaphor_pairs(a.data);
    const rce::MetaphorOptions opts{a.epochs, a.lr, a.folds, g.seed};
    const auto cv = rce::metaphor_cross_validate(table, train, opts);
    std::cout << "metaphoricity\t" << train.size() << " pairs\t" << a.folds << "-fold accuracy\t"
              << fixed3(cv.accuracy) << '\n';

    std::vector<std::vector<double>> adjs, nouns;
    std::vector<int> labels;
    for (const auto& p : train) {
        adjs.push_back(row_of(table, p.adjective));
        nouns.push_back(row_of(table, p.noun));
        labels.push_back(p.label);
    }
    const auto model = rce::MetaphorModel::fit(adjs, nouns, labels, opts);
    std::vector<std::pair<std::string, std::string>> targets;
    if (a.pairs.empty()) {
        for (const auto& p : train) targets.emplace_back(p.adjective, p.noun);
    } else {
        for (const auto& r : read_tsv(a.pairs, 2, 3)) targets.emplace_back(r[0], r[1]);
    }
    Output out(g.out);
    auto& s = out.stream();
    s << "adjective\tnoun\tdistance\tscore\n" << std::setprecision(17);
    for (const auto& [adj, noun] : targets) {
        const auto& va = table.at(adj);
        const auto& vn = table.at(noun);
        s << adj << '\t' << noun << '\t' << model.distance(va, vn) << '\t' << model.score(va, vn) << '\n';
    }
}

struct PretrainArgs {
    std::string corpus, variant = "lookup", metrics, heldout;
    rce::LmConfig lm;
    rce::PretrainOptions train;
    std::size_t heldout_pairs = 1000;
};

void run_pretrain(PretrainArgs a, const Globals& g) {
    if (g.out.empty()) throw rce::ConfigError("pretrain-lm needs --out for the model file");
    const auto corpus = rce::load_corpus(a.corpus);
    a.train.seed = g.seed;
    rce::Rng init(g.seed);
    rce::MiniLm model(rce::make_lm_embedding(a.variant, a.lm, corpus, init), a.lm, init);
    auto metrics = open_write(a.metrics.empty() ? g.out + ".metrics.tsv" : a.metrics);
    const auto rows = rce::pretrain(model, corpus, a.train, &metrics);
    rce::save_lm(g.out, model, {{"pretrain", a.train}});
    if (!rows.empty()) std::cout << rce::lm_metrics_header() << '\n' << rce::format_lm_metrics(rows.back()) << '\n';
    if (!a.heldout.empty()) {
        const auto held = rce::load_corpus(a.heldout);
        rce::Rng rng(g.seed + 7);
        std::vector<rce::LmPair> pairs;
        for (std::size_t i = 0; i < a.heldout_pairs; ++i) pairs.push_back(rce::sample_pair(held, rng));
        std::cout << "held-out nsp accuracy\t" << fixed3(rce::nsp_accuracy(model, pairs)) << '\n';
    }
}

struct SwagArgs {
    std::string model, items;
};

void run_swag(const SwagArgs& a, const Globals& g) {
    const auto model = rce::load_lm(a.model);
    const auto items = rce::load_swag(a.items);
    std::size_t unknown = 0, total = 0;
    if (const auto* lk = dynamic_cast<const rce::LookupEmbedding*>(&model->embedding())) {
        auto count = [&](const std::string& s) {
            std::istringstream in(s);
            for (std::string w; in >> w; ++total) unknown += lk->id(w) == lk->unk_id();
        };
        for (const auto& it : items) {
            count(it.context);
            for (const auto& c : it.candidates) count(c);
        }
    }
    Output out(g.out);
    std::size_t correct = 0;
    if (!g.out.empty()) out.stream() << "item\tgold\tchosen\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        const int chosen = rce::swag_choose(*model, items[i]);
        correct += chosen == items[i].gold;
        if (!g.out.empty()) out.stream() << i << '\t' << items[i].gold << '\t' << chosen << '\n';
    }
    const double acc = items.empty() ? 0.0 : double(correct) / double(items.size());
    std::cout << "swag accuracy\t" << items.size() << " items\t" << fixed3(acc) << '\n';
    if (total > 0) std::cout << "out-of-vocabulary words\t" << unknown << " of " << total << '\n';
}

struct MakeSwagArgs {
    std::string corpus;
    std::size_t count = 1000;
};

void run_make_swag(const MakeSwagArgs& a, const Globals& g) {
    const auto corpus = rce::load_corpus(a.corpus);
    Output out(g.out);
    rce::write_swag(out.stream(), rce::make_swag_items(corpus, a.count, g.seed));
}

void write_sidecar(const Globals& g, const std::string& command, const json& options) {
    const json resolved = {{"command", command},
                           {"seed", g.seed},
                           {"threads", g.threads},
                           {"precision", g.precision},
                           {"out", g.out},
                           {"options", options}};
    if (g.out.empty()) {
        std::cerr << "# config " << resolved.dump() << '\n';
    } else {
        auto side = open_write(g.out + ".config.json");
        side << resolved.dump(2) << '\n';
    }
}

int run(int argc, char** argv) {
    CLI::App app{"Character-level word embeddings: tokenize, train, embed, evaluate"};
    app.footer(kFormats);
    app.require_subcommand(1);
    app.fallthrough();

    Settings s(read_config(config_path(argc, argv)));
    Globals g;
    s.add(&app, "--seed", g.seed, "Seed of every random choice");
    s.add(&app, "--threads", g.threads, "Worker threads (computation is single-threaded)")
        ->check(CLI::PositiveNumber);
    s.add(&app, "--precision", g.precision, "Floating-point precision (double)")
        ->check(CLI::IsMember({"double"}));
    s.add(&app, "--out", g.out, "Main output file (stdout when omitted)");
    app.add_option("--config", g.config, "JSON config file; command-line flags win over it");

    std::map<const CLI::App*, std::function<void()>> actions;

    TokenizeArgs tok;
    auto* c = app.add_subcommand("tokenize", "Print the character token sequence of words");
    c->add_option("words", tok.words, "Words to encode")->required();
    s.add(c, "--alphabet", tok.alphabet, "Alphabet file (built-in alphabet when omitted)");
    s.add(c, "--max-word-len", tok.max_word_len, "Padded sequence length");
    s.flag(c, "--no-padding", tok.no_padding, "Stop at [END]");
    actions[c] = [&] { run_tokenize(tok, g); };

    TrainArgs tr;
    c = app.add_subcommand("train", "Train a word encoder on a corpus (model written to --out)");
    s.add(c, "--corpus", tr.corpus, "Training corpus")->required();
    s.add(c, "--encoder", tr.encoder, "rce, c2v or combined")->check(CLI::IsMember({"rce", "c2v", "combined"}));
    s.add(c, "--alphabet", tr.alphabet, "Alphabet file (built-in alphabet when omitted)");
    s.add(c, "--dim", tr.rce.dim, "Transformer encoder: vector size");
    s.add(c, "--layers", tr.rce.layers, "Transformer encoder: layers");
    s.add(c, "--heads", tr.rce.heads, "Transformer encoder: attention heads");
    s.add(c, "--ff-dim", tr.rce.ff_dim, "Transformer encoder: feed-forward width");
    s.add(c, "--dropout", tr.rce.dropout, "Transformer encoder: dropout");
    s.add(c, "--max-word-len", tr.rce.max_word_len, "Token sequence length, [BEG] and [END] included");
    s.add(c, "--c2v-dim", tr.c2v.dim, "Convolutional encoder: vector size");
    s.add(c, "--char-dim", tr.c2v.char_dim, "Convolutional encoder: character embedding size");
    s.add(c, "--kernels", tr.c2v.kernels, "Convolutional encoder: kernel widths")->delimiter(',');
    s.add(c, "--filters", tr.c2v.filters, "Convolutional encoder: filters per width");
    s.add(c, "--steps", tr.train.steps, "Optimizer steps");
    s.add(c, "--batch-size", tr.train.batch_size, "Context samples per step");
    s.add(c, "--window", tr.train.window, "Context window radius");
    s.add(c, "--dict-size", tr.train.dict_size, "Dictionary size of the dictionary head");
    s.add(c, "--lr", tr.train.max_lr, "Peak learning rate");
    s.add(c, "--warmup", tr.train.warmup, "Linear warmup steps");
    s.add(c, "--clip-norm", tr.train.clip_norm, "Gradient norm clip (0: off)");
    s.add(c, "--w-context", tr.train.weights.context, "Weight of the context reconstruction head");
    s.add(c, "--w-identity", tr.train.weights.identity, "Weight of the identity head");
    s.add(c, "--w-dict", tr.train.weights.dict, "Weight of the dictionary head");
    s.add(c, "--decoder-layers", tr.train.decoder.layers, "Decoder layers");
    s.add(c, "--decoder-heads", tr.train.decoder.heads, "Decoder attention heads");
    s.add(c, "--decoder-ff-dim", tr.train.decoder.ff_dim, "Decoder feed-forward width (0: 4 x dim)");
    s.add(c, "--decoder-dropout", tr.train.decoder.dropout, "Decoder dropout");
    s.add(c, "--log-every", tr.train.log_every, "Steps per metrics line");
    s.add(c, "--checkpoint-every", tr.train.checkpoint_every, "Steps per checkpoint (0: never)");
    s.add(c, "--checkpoint", tr.train.checkpoint_path, "Checkpoint file");
    s.add(c, "--metrics", tr.metrics, "Metrics log (default <out>.metrics.tsv)");
    s.add(c, "--embeddings", tr.embeddings, "Also export vectors of every corpus word here");
    s.flag(c, "--strict-length", tr.strict_length, "Fail on over-long words instead of truncating");
    actions[c] = [&] { run_train(tr, g); };

    EmbedArgs em;
    c = app.add_subcommand("embed", "Write the vectors of words to an embedding file");
    s.add(c, "--model", em.model, "Trained encoder")->required();
    s.add(c, "--corpus", em.corpus, "Embed every distinct corpus word");
    s.add(c, "--words", em.words, "Embed every word of a word list");
    s.add(c, "--categories", em.categories, "Embed every word of a category file");
    s.flag(c, "--truncate", em.truncate, "Truncate over-long words instead of failing");
    actions[c] = [&] { run_embed(em, g); };

    TopkArgs tk;
    c = app.add_subcommand("eval-topk", "Category agreement of nearest neighbors");
    s.add(c, "--embeddings", tk.embeddings, "Embedding file")->required();
    s.add(c, "--categories", tk.categories, "Category file")->required();
    s.add(c, "--k", tk.k, "Neighbors per word")->check(CLI::PositiveNumber);
    actions[c] = [&] { run_topk(tk, g); };

    OooArgs oo;
    c = app.add_subcommand("eval-ooo", "Odd-one-out accuracy over seeded random sets");
    s.add(c, "--embeddings", oo.embeddings, "Embedding file")->required();
    s.add(c, "--categories", oo.categories, "Category file")->required();
    s.add(c, "--sets", oo.sets, "Number of sets")->check(CLI::PositiveNumber);
    s.add(c, "--in-size", oo.in_size, "In-category words per set")->check(CLI::PositiveNumber);
    actions[c] = [&] { run_ooo(oo, g); };

    ProbeArgs pr;
    c = app.add_subcommand("probe-declension", "Cross-validated declension class probe");
    s.add(c, "--embeddings", pr.embeddings, "Embedding file")->required();
    s.add(c, "--data", pr.data, "Declension file")->required();
    s.add(c, "--folds", pr.folds, "Cross-validation folds");
    s.add(c, "--hidden", pr.hidden, "Hidden units");
    s.add(c, "--epochs", pr.epochs, "Full-batch training epochs");
    s.add(c, "--lr", pr.lr, "Adam learning rate");
    actions[c] = [&] { run_probe(pr, g); };

    ChiasmusArgs ch;
    c = app.add_subcommand("features-chiasmus", "Six pairwise cosine distances per word quadruple");
    s.add(c, "--embeddings", ch.embeddings, "Embedding file")->required();
    s.add(c, "--data", ch.data, "Chiasmus candidate file")->required();
    actions[c] = [&] { run_chiasmus(ch, g); };

    MetaphorArgs me;
    c = app.add_subcommand("score-metaphor", "Fit a metaphoricity space and score adjective-noun pairs");
    s.add(c, "--embeddings", me.embeddings, "Embedding file")->required();
    s.add(c, "--data", me.data, "Labelled training pairs")->required();
    s.add(c, "--pairs", me.pairs, "Pairs to score (training pairs when omitted)");
    s.add(c, "--folds", me.folds, "Cross-validation folds");
    s.add(c, "--epochs", me.epochs, "Full-batch training epochs");
    s.add(c, "--lr", me.lr, "Adam learning rate");
    actions[c] = [&] { run_metaphor(me, g); };

    PretrainArgs pt;
    c = app.add_subcommand("pretrain-lm", "Pretrain the small masked language model (model written to --out)");
    s.add(c, "--corpus", pt.corpus, "Training corpus; consecutive lines are sentence pairs")->required();
    s.add(c, "--variant", pt.variant, "Word embedding layer: lookup or rce")->check(CLI::IsMember({"lookup", "rce"}));
    s.add(c, "--dim", pt.lm.dim, "Model width");
    s.add(c, "--heads", pt.lm.heads, "Attention heads");
    s.add(c, "--layers", pt.lm.layers, "Encoder layers");
    s.add(c, "--ff-dim", pt.lm.ff_dim, "Feed-forward width");
    s.add(c, "--batch-size", pt.lm.batch_size, "Sentence pairs per step");
    s.add(c, "--mask-rate", pt.lm.mask_rate, "Fraction of words masked");
    s.add(c, "--dropout", pt.lm.dropout, "Dropout");
    s.add(c, "--max-len", pt.lm.max_len, "Words per framed pair");
    s.add(c, "--vocab-size", pt.lm.vocab_size, "Lookup variant: vocabulary size");
    s.add(c, "--char-layers", pt.lm.char_layers, "Character variant: encoder and decoder layers");
    s.add(c, "--char-heads", pt.lm.char_heads, "Character variant: attention heads");
    s.add(c, "--max-word-len", pt.lm.max_word_len, "Character variant: token sequence length");
    s.add(c, "--steps", pt.train.steps, "Optimizer steps");
    s.add(c, "--lr", pt.train.max_lr, "Peak learning rate");
    s.add(c, "--warmup", pt.train.warmup, "Linear warmup steps");
    s.add(c, "--schedule-steps", pt.train.schedule_steps, "Cosine decay horizon (0: --steps)");
    s.add(c, "--log-every", pt.train.log_every, "Steps per metrics line");
    s.add(c, "--metrics", pt.metrics, "Metrics log (default <out>.metrics.tsv)");
    s.add(c, "--heldout", pt.heldout, "Corpus for a held-out next-sentence accuracy report");
    s.add(c, "--heldout-pairs", pt.heldout_pairs, "Sentence pairs drawn from --heldout");
    actions[c] = [&] { run_pretrain(pt, g); };

    SwagArgs sw;
    c = app.add_subcommand("eval-swag", "Four-way next-sentence choice accuracy");
    s.add(c, "--model", sw.model, "Pretrained language model")->required();
    s.add(c, "--items", sw.items, "Item file")->required();
    actions[c] = [&] { run_swag(sw, g); };

    MakeSwagArgs ms;
    c = app.add_subcommand("make-swag", "Build four-way items from consecutive corpus sentences");
    s.add(c, "--corpus", ms.corpus, "Source corpus")->required();
    s.add(c, "--count", ms.count, "Number of items")->check(CLI::PositiveNumber);
    actions[c] = [&] { run_make_swag(ms, g); };

    s.check_keys(&app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) std::cerr << '\n' << kFormats << '\n';
        return code;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    if (g.threads > 1) std::cerr << "rce: note: computation is single-threaded; --threads has no effect\n";
    write_sidecar(g, chosen->get_name(), s.resolved(chosen));
    actions.at(chosen)();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    rce::retain_freed_memory();
    try {
        return run(argc, argv);
    } catch (const rce::FormatError& e) {
        std::cerr << "rce: error: " << e.what() << "\n\n" << kFormats << '\n';
        return 2;
    } catch (const rce::Error& e) {
        std::cerr << "rce: error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "rce: error: " << e.what() << '\n';
        return 1;
    }
}
