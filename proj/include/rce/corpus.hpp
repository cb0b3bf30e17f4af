#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rce {

class WordEncoder;

/// Sentences of whitespace-separated surface tokens, in file order.
struct Corpus {
    std::vector<std::vector<std::string>> sentences;

    std::size_t token_count() const;
};

/// One sentence per line; blank lines are skipped and CRLF is accepted.
Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);

/// The `n` most frequent tokens, ids dense by descending frequency with ties
/// broken by byte-wise token order.
class TokenDictionary {
public:
    TokenDictionary() = default;
    explicit TokenDictionary(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::optional<int> id(std::string_view token) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

TokenDictionary build_dictionary(const Corpus& corpus, std::size_t n);

/// Category name -> member words, categories in order of first appearance.
struct CategoryDataset {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> members;

    std::size_t word_count() const;
};

/// TSV `category<TAB>word`. Duplicate members within a category are a
/// FormatError; fewer than two categories is InsufficientCategory.
CategoryDataset parse_categories(std::istream& in);
CategoryDataset load_categories(const std::filesystem::path& path);

/// Word -> vector map with uniform dimension; rows keep insertion order.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

    void add(std::string word, std::vector<double> vector);
    std::size_t size() const { return words_.size(); }
    std::size_t dim() const { return dim_; }
    const std::string& word(std::size_t row) const { return words_[row]; }
    const std::vector<double>& vector(std::size_t row) const { return vectors_[row]; }
    std::optional<std::size_t> find(std::string_view word) const;
    /// Row of `word`; MissingWord when absent.
    std::size_t row_of(std::string_view word) const;
    const std::vector<double>& at(std::string_view word) const { return vectors_[row_of(word)]; }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> words_;
    std::vector<std::vector<double>> vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Text format: "count dim" header, then `word v1 ... vd` per line. Values
/// are printed with round-trip precision.
void write_embeddings(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable read_embeddings(std::istream& in);
EmbeddingTable import_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

/// Embeds `words` (duplicates collapsed, first occurrence order) with the
/// encoder; overly long words are truncated when `truncate` is set.
EmbeddingTable embed_table(const WordEncoder& encoder, const std::vector<std::string>& words, bool truncate = false);
void export_embeddings(const WordEncoder& encoder, const std::vector<std::string>& words,
                       const std::filesystem::path& path, bool truncate = false);

/// Unique words of a corpus, or of a category dataset, in first-seen order.
std::vector<std::string> unique_words(const Corpus& corpus);
std::vector<std::string> unique_words(const CategoryDataset& dataset);

} // namespace rce
