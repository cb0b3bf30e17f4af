#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rce {

/// Longest decomposed word (including [BEG] and [END]) accepted by default.
inline constexpr std::size_t kDefaultMaxWordLen = 32;

enum class TokenCategory : std::uint8_t {
    Base,        // a-z
    Digit,       // 0-9
    Symbol,      // standalone special symbols and punctuation
    WordSpecial, // [BEG] [END] [UNK] [PAD] and the registered [CLS] [SEP] [MASK]
    Modifier,    // diacritics, ligature, uppercase, sharp s
};

enum class Modifier : std::uint8_t {
    Acute,
    Grave,
    Macron,
    Tilde,
    Ogonek,
    Diaeresis,
    Ligature,
    Upper,
    SharpS,
};

/// The closed character-token inventory with its index mapping.
///
/// The standard alphabet lists categories in a fixed order (base letters,
/// digits, symbols, word-level specials, modifiers) and within a category in
/// registration order. A loaded alphabet may permute the standard entries but
/// never add or drop one.
class Alphabet {
public:
    struct Entry {
        std::string name;
        TokenCategory category;
        char32_t character = 0; // for Base/Digit/Symbol
    };

    static const Alphabet& standard();

    static Alphabet parse(std::istream& in);
    static Alphabet load(const std::filesystem::path& path);
    void write(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(int index) const { return entries_.at(static_cast<std::size_t>(index)); }
    const std::string& name(int index) const { return entry(index).name; }
    TokenCategory category(int index) const { return entry(index).category; }

    std::optional<int> find(std::string_view name) const;
    int index_of(std::string_view name) const; // FormatError when absent
    std::optional<int> char_index(char32_t c) const;
    std::optional<Modifier> modifier_of(int index) const;
    int modifier_index(Modifier m) const;

    int beg() const { return beg_; }
    int end() const { return end_; }
    int unk() const { return unk_; }
    int pad() const { return pad_; }

    /// FNV-1a over the serialized token list; identifies the index mapping.
    std::uint64_t hash() const;

    bool operator==(const Alphabet& other) const;

private:
    explicit Alphabet(std::vector<Entry> entries);

    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
    std::unordered_map<char32_t, int> by_char_;
    std::unordered_map<int, Modifier> modifiers_;
    int beg_ = -1, end_ = -1, unk_ = -1, pad_ = -1;
};

/// A word decomposed into framed character tokens.
struct CharTokenSeq {
    std::vector<int> tokens;
    std::size_t content_len = 0; // [BEG] .. [END] inclusive
    std::string source;

    std::size_t padded_len() const { return tokens.size(); }
    bool operator==(const CharTokenSeq&) const = default;
};

/// |A| x |C| one-hot matrix, row-major (row = alphabet index, column = position).
struct OneHotWord {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t row, std::size_t col) const { return values[row * cols + col]; }
    int argmax_column(std::size_t col) const;
};

struct EncodeOptions {
    bool truncate = false; // drop trailing characters instead of throwing WordTooLong
    bool warn_on_truncate = true;
};

/// Number of content tokens (excluding [BEG]/[END]) the word decomposes into.
std::size_t decomposed_length(const Alphabet& alphabet, std::string_view word);

CharTokenSeq encode_word(const Alphabet& alphabet, std::string_view word, std::size_t pad_to,
                         EncodeOptions options = {});
std::string decode_word(const Alphabet& alphabet, const CharTokenSeq& seq);
OneHotWord to_one_hot(const Alphabet& alphabet, const CharTokenSeq& seq);

/// Registered word-level specials that may be encoded as one-character words.
const std::vector<std::string>& registered_specials();
bool is_registered_special(std::string_view symbol);
CharTokenSeq encode_special(const Alphabet& alphabet, std::string_view symbol, std::size_t pad_to = 3);

/// Encodes a registered special as a one-character word, anything else as a
/// regular word (truncating to `pad_to`).
CharTokenSeq encode_any(const Alphabet& alphabet, std::string_view word, std::size_t pad_to);

/// Same content, different padding.
CharTokenSeq repad(const Alphabet& alphabet, const CharTokenSeq& seq, std::size_t pad_to);

/// "[BEG] [UP] [t] ..." rendering; padding included when `with_padding`.
std::string format_tokens(const Alphabet& alphabet, const CharTokenSeq& seq, bool with_padding = true);

} // namespace rce
