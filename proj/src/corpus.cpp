#include "rce/corpus.hpp"

#include "rce/encoder.hpp"
#include "rce/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace rce {

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "'");
    }
    return in;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    for (std::string tok; ss >> tok;) {
        out.push_back(std::move(tok));
    }
    return out;
}

} // namespace

// ------------------------------------------------------------------ corpus

std::size_t Corpus::token_count() const {
    std::size_t k = 0;
    for (const auto& s : sentences) {
        k += s.size();
    }
    return k;
}

Corpus parse_corpus(std::istream& in) {
    Corpus c;
    for (std::string line; std::getline(in, line);) {
        strip_cr(line);
        auto tokens = split_ws(line);
        if (!tokens.empty()) {
            c.sentences.push_back(std::move(tokens));
        }
    }
    return c;
}

Corpus load_corpus(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_corpus(in);
}

// -------------------------------------------------------------- dictionary

TokenDictionary::TokenDictionary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw FormatError("duplicate dictionary token '" + tokens_[i] + "'");
        }
    }
}

std::optional<int> TokenDictionary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

TokenDictionary build_dictionary(const Corpus& corpus, std::size_t n) {
    if (n == 0) {
        throw ConfigError("dictionary size must be at least 1");
    }
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& s : corpus.sentences) {
        for (const auto& t : s) {
            ++counts[t];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > n) {
        ranked.resize(n);
    }
    std::vector<std::string> tokens;
    tokens.reserve(ranked.size());
    for (auto& [t, c] : ranked) {
        tokens.push_back(t);
    }
    return TokenDictionary(std::move(tokens));
}

// -------------------------------------------------------------- categories

std::size_t CategoryDataset::word_count() const {
    std::size_t n = 0;
    for (const auto& m : members) {
        n += m.size();
    }
    return n;
}

CategoryDataset parse_categories(std::istream& in) {
    CategoryDataset d;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::unordered_set<std::string>> seen;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        strip_cr(line);
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw FormatError("line " + std::to_string(line_no) + ": expected 'category<TAB>word'");
        }
        std::string category = line.substr(0, tab);
        std::string word = line.substr(tab + 1);
        if (category.empty() || word.empty() || word.find(' ') != std::string::npos) {
            throw FormatError("line " + std::to_string(line_no) + ": empty category or word, or word with spaces");
        }
        auto [it, inserted] = index.emplace(category, d.names.size());
        if (inserted) {
            d.names.push_back(category);
            d.members.emplace_back();
            seen.emplace_back();
        }
        if (!seen[it->second].insert(word).second) {
            throw FormatError("line " + std::to_string(line_no) + ": '" + word + "' listed twice in category '" +
                              category + "'");
        }
        d.members[it->second].push_back(std::move(word));
    }
    if (d.names.size() < 2) {
        throw InsufficientCategory("a category dataset needs at least two categories, found " +
                                   std::to_string(d.names.size()));
    }
    return d;
}

CategoryDataset load_categories(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_categories(in);
}

// -------------------------------------------------------------- embeddings

void EmbeddingTable::add(std::string word, std::vector<double> vector) {
    if (words_.empty() && dim_ == 0) {
        dim_ = vector.size();
    }
    if (vector.size() != dim_) {
        throw ShapeMismatch("vector for '" + word + "' has " + std::to_string(vector.size()) +
                            " components, table dimension is " + std::to_string(dim_));
    }
    if (!index_.emplace(word, words_.size()).second) {
        throw FormatError("duplicate embedding for '" + word + "'");
    }
    words_.push_back(std::move(word));
    vectors_.push_back(std::move(vector));
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t EmbeddingTable::row_of(std::string_view word) const {
    auto r = find(word);
    if (!r) {
        throw MissingWord("no embedding for '" + std::string(word) + "'");
    }
    return *r;
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
    out << table.size() << ' ' << table.dim() << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t r = 0; r < table.size(); ++r) {
        out << table.word(r);
        for (double v : table.vector(r)) {
            out << ' ' << v;
        }
        out << '\n';
    }
    if (!out) {
        throw FormatError("failed writing embeddings");
    }
}

EmbeddingTable read_embeddings(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("embedding file is empty");
    }
    strip_cr(line);
    std::istringstream head(line);
    std::size_t count = 0, dim = 0;
    if (!(head >> count >> dim) || dim == 0) {
        throw FormatError("embedding header must be 'count dim'");
    }
    EmbeddingTable table(dim);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        auto fields = split_ws(line);
        if (fields.empty()) {
            continue;
        }
        if (fields.size() != dim + 1) {
            throw FormatError("line " + std::to_string(line_no) + ": expected a word and " + std::to_string(dim) +
                              " values, got " + std::to_string(fields.size()) + " fields");
        }
        std::vector<double> v(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const auto& f = fields[i + 1];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v[i]);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw FormatError("line " + std::to_string(line_no) + ": bad number '" + f + "'");
            }
        }
        table.add(fields[0], std::move(v));
    }
    if (table.size() != count) {
        throw FormatError("header announces " + std::to_string(count) + " vectors, file holds " +
                          std::to_string(table.size()));
    }
    return table;
}

EmbeddingTable import_embeddings(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_embeddings(in);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot open '" + path.string() + "' for writing");
    }
    write_embeddings(out, table);
}

EmbeddingTable embed_table(const WordEncoder& encoder, const std::vector<std::string>& words, bool truncate) {
    std::vector<std::string> unique;
    std::unordered_set<std::string> seen;
    for (const auto& w : words) {
        if (seen.insert(w).second) {
            unique.push_back(w);
        }
    }
    auto vectors = encoder.embed_words(unique, truncate);
    EmbeddingTable table(encoder.dim());
    for (std::size_t i = 0; i < unique.size(); ++i) {
        table.add(unique[i], std::move(vectors[i]));
    }
    return table;
}

void export_embeddings(const WordEncoder& encoder, const std::vector<std::string>& words,
                       const std::filesystem::path& path, bool truncate) {
    save_embeddings(path, embed_table(encoder, words, truncate));
}

std::vector<std::string> unique_words(const Corpus& corpus) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& s : corpus.sentences) {
        for (const auto& t : s) {
            if (seen.insert(t).second) {
                out.push_back(t);
            }
        }
    }
    return out;
}

std::vector<std::string> unique_words(const CategoryDataset& dataset) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& m : dataset.members) {
        for (const auto& w : m) {
            if (seen.insert(w).second) {
                out.push_back(w);
            }
        }
    }
    return out;
}

} // namespace rce
