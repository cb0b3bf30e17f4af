#include "rce/alphabet.hpp"

#include "rce/error.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <iostream>

namespace rce {

namespace {

struct MarkMapping {
    char32_t mark;
    Modifier modifier;
};

constexpr MarkMapping kMarks[] = {
    {0x0301, Modifier::Acute},  {0x0300, Modifier::Grave},  {0x0304, Modifier::Macron},
    {0x0303, Modifier::Tilde},  {0x0328, Modifier::Ogonek}, {0x0308, Modifier::Diaeresis},
};

struct Ligature {
    char32_t lower;
    char32_t first;
    char32_t second;
};

constexpr Ligature kLigatures[] = {
    {U'æ', U'a', U'e'},
    {U'œ', U'o', U'e'},
    {U'ĳ', U'i', U'j'},
};

constexpr char32_t kSharpS = U'ß';
constexpr char32_t kCapitalSharpS = 0x1E9E;
constexpr char32_t kReplacement = 0xFFFD;

const std::vector<std::string> kRegisteredSpecials = {"[CLS]", "[SEP]", "[MASK]"};

std::u32string to_u32(const icu::UnicodeString& s) {
    std::u32string out;
    for (int32_t i = 0; i < s.length();) {
        UChar32 c = s.char32At(i);
        out.push_back(static_cast<char32_t>(c));
        i = s.moveIndex32(i, 1);
    }
    return out;
}

icu::UnicodeString from_u32(const std::u32string& s) {
    icu::UnicodeString out;
    for (char32_t c : s) {
        out.append(static_cast<UChar32>(c));
    }
    return out;
}

std::string to_utf8(const icu::UnicodeString& s) {
    std::string out;
    s.toUTF8String(out);
    return out;
}

std::u32string nfd(std::string_view word) {
    UErrorCode status = U_ZERO_ERROR;
    const auto* norm = icu::Normalizer2::getNFDInstance(status);
    auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(word.data(), static_cast<int32_t>(word.size())));
    auto out = norm->normalize(src, status);
    if (U_FAILURE(status)) {
        throw FormatError("unicode normalization failed");
    }
    return to_u32(out);
}

std::string nfc_utf8(const std::u32string& s) {
    UErrorCode status = U_ZERO_ERROR;
    const auto* norm = icu::Normalizer2::getNFCInstance(status);
    auto out = norm->normalize(from_u32(s), status);
    if (U_FAILURE(status)) {
        throw FormatError("unicode normalization failed");
    }
    return to_utf8(out);
}

bool is_mark(char32_t c) {
    auto type = u_charType(static_cast<UChar32>(c));
    return type == U_NON_SPACING_MARK || type == U_ENCLOSING_MARK;
}

std::u32string trim(std::u32string s) {
    auto ws = [](char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)) != 0; };
    while (!s.empty() && ws(s.back())) {
        s.pop_back();
    }
    std::size_t start = 0;
    while (start < s.size() && ws(s[start])) {
        ++start;
    }
    return s.substr(start);
}

// Token groups, one per visible character, so truncation never splits a
// modifier from its base.
std::vector<std::vector<int>> decompose(const Alphabet& alphabet, std::string_view word) {
    const std::u32string chars = trim(nfd(word));
    if (chars.empty()) {
        throw EmptyWord("word is empty after trimming");
    }
    const int up = alphabet.modifier_index(Modifier::Upper);
    std::vector<std::vector<int>> units;
    std::size_t i = 0;
    while (i < chars.size()) {
        std::vector<int> unit;
        if (is_mark(chars[i])) {
            // combining mark with nothing to attach to
            units.push_back({alphabet.unk()});
            ++i;
            continue;
        }
        const char32_t base = chars[i++];
        while (i < chars.size() && is_mark(chars[i])) {
            const char32_t mark = chars[i++];
            auto it = std::find_if(std::begin(kMarks), std::end(kMarks),
                                   [mark](const MarkMapping& m) { return m.mark == mark; });
            unit.push_back(it == std::end(kMarks) ? alphabet.unk() : alphabet.modifier_index(it->modifier));
        }
        const char32_t lower = static_cast<char32_t>(u_tolower(static_cast<UChar32>(base)));
        const bool upper = lower != base;
        auto lig = std::find_if(std::begin(kLigatures), std::end(kLigatures),
                                [lower](const Ligature& l) { return l.lower == lower; });
        if (lower == kSharpS) {
            unit.push_back(alphabet.modifier_index(Modifier::SharpS));
            if (upper) {
                unit.push_back(up);
            }
            unit.push_back(*alphabet.char_index(U's'));
        } else if (lig != std::end(kLigatures)) {
            unit.push_back(alphabet.modifier_index(Modifier::Ligature));
            if (upper) {
                unit.push_back(up);
            }
            unit.push_back(*alphabet.char_index(lig->first));
            unit.push_back(*alphabet.char_index(lig->second));
        } else if (auto idx = alphabet.char_index(lower)) {
            if (upper) {
                unit.push_back(up);
            }
            unit.push_back(*idx);
        } else {
            unit.push_back(alphabet.unk());
        }
        units.push_back(std::move(unit));
    }
    return units;
}

std::string display(const Alphabet& alphabet, int token) {
    const auto& name = alphabet.name(token);
    if (name.size() > 2 && name.front() == '[' && name.back() == ']') {
        return name;
    }
    return "[" + name + "]";
}

} // namespace

std::size_t decomposed_length(const Alphabet& alphabet, std::string_view word) {
    std::size_t n = 0;
    for (const auto& unit : decompose(alphabet, word)) {
        n += unit.size();
    }
    return n;
}

CharTokenSeq encode_word(const Alphabet& alphabet, std::string_view word, std::size_t pad_to,
                         EncodeOptions options) {
    const auto units = decompose(alphabet, word);
    CharTokenSeq seq;
    seq.source = std::string(word);
    seq.tokens.push_back(alphabet.beg());
    bool truncated = false;
    for (const auto& unit : units) {
        if (seq.tokens.size() + unit.size() + 1 > pad_to) {
            if (!options.truncate) {
                std::size_t total = 2;
                for (const auto& u : units) {
                    total += u.size();
                }
                throw WordTooLong("'" + std::string(word) + "' needs " + std::to_string(total) +
                                  " tokens, limit is " + std::to_string(pad_to));
            }
            truncated = true;
            break;
        }
        seq.tokens.insert(seq.tokens.end(), unit.begin(), unit.end());
    }
    if (seq.tokens.size() == 1) {
        throw WordTooLong("first character of '" + std::string(word) + "' does not fit in " + std::to_string(pad_to) +
                          " tokens");
    }
    if (truncated && options.warn_on_truncate) {
        std::clog << "warning: truncated '" << word << "' to " << pad_to << " tokens\n";
    }
    seq.tokens.push_back(alphabet.end());
    seq.content_len = seq.tokens.size();
    seq.tokens.resize(pad_to, alphabet.pad());
    return seq;
}

std::string decode_word(const Alphabet& alphabet, const CharTokenSeq& seq) {
    const auto& t = seq.tokens;
    const std::size_t n = seq.content_len;
    const int alpha_size = static_cast<int>(alphabet.size());
    for (int tok : t) {
        if (tok < 0 || tok >= alpha_size) {
            throw MalformedSequence("token index " + std::to_string(tok) + " outside the alphabet");
        }
    }
    if (n < 3 || n > t.size() || t[0] != alphabet.beg()) {
        throw MalformedSequence("sequence must start with [BEG] and frame at least one character");
    }
    if (t[n - 1] != alphabet.end()) {
        throw MalformedSequence("missing [END]");
    }
    for (std::size_t i = n; i < t.size(); ++i) {
        if (t[i] != alphabet.pad()) {
            throw MalformedSequence("non-[PAD] token after [END]");
        }
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (t[i] == alphabet.beg() || t[i] == alphabet.end() || t[i] == alphabet.pad()) {
            throw MalformedSequence("framing token inside the word");
        }
    }
    if (n == 3 && alphabet.category(t[1]) == TokenCategory::WordSpecial && t[1] != alphabet.unk()) {
        return alphabet.name(t[1]);
    }

    std::u32string out;
    std::size_t i = 1;
    while (i + 1 < n) {
        std::u32string marks;
        bool lig = false, sharp = false, upper = false;
        while (i + 1 < n) {
            auto mod = alphabet.modifier_of(t[i]);
            if (!mod) {
                break;
            }
            if (upper) {
                throw MalformedSequence("modifier after [UP]");
            }
            switch (*mod) {
            case Modifier::Ligature:
                if (lig) throw MalformedSequence("repeated ligature modifier");
                lig = true;
                break;
            case Modifier::SharpS:
                if (sharp) throw MalformedSequence("repeated sharp-s modifier");
                sharp = true;
                break;
            case Modifier::Upper:
                upper = true;
                break;
            default: {
                auto it = std::find_if(std::begin(kMarks), std::end(kMarks),
                                       [m = *mod](const MarkMapping& mm) { return mm.modifier == m; });
                marks.push_back(it->mark);
            }
            }
            ++i;
        }
        if (i + 1 >= n) {
            throw MalformedSequence("modifier without a base character");
        }
        const int base = t[i];
        const auto category = alphabet.category(base);
        if (base == alphabet.unk()) {
            if (lig || sharp || upper) {
                throw MalformedSequence("case or ligature modifier on an unknown character");
            }
            out.push_back(kReplacement);
            out += marks;
            ++i;
            continue;
        }
        if (category == TokenCategory::WordSpecial) {
            throw MalformedSequence("word-level special inside a word");
        }
        char32_t c = alphabet.entry(base).character;
        if (lig && sharp) {
            throw MalformedSequence("ligature and sharp-s modifiers combined");
        }
        if (lig) {
            if (i + 2 >= n) {
                throw MalformedSequence("ligature needs two base characters");
            }
            const char32_t second = alphabet.entry(t[i + 1]).character;
            auto it = std::find_if(std::begin(kLigatures), std::end(kLigatures), [&](const Ligature& l) {
                return l.first == c && l.second == second;
            });
            if (it == std::end(kLigatures) || alphabet.category(t[i + 1]) != TokenCategory::Base) {
                throw MalformedSequence("unsupported ligature");
            }
            c = it->lower;
            ++i;
        } else if (sharp) {
            if (c != U's') {
                throw MalformedSequence("sharp-s modifier needs base 's'");
            }
            c = kSharpS;
        }
        if (upper) {
            char32_t up = c == kSharpS ? kCapitalSharpS : static_cast<char32_t>(u_toupper(static_cast<UChar32>(c)));
            if (up == c) {
                throw MalformedSequence("[UP] on a character without an uppercase form");
            }
            c = up;
        }
        out.push_back(c);
        out += marks;
        ++i;
    }
    return nfc_utf8(out);
}

OneHotWord to_one_hot(const Alphabet& alphabet, const CharTokenSeq& seq) {
    OneHotWord m;
    m.rows = alphabet.size();
    m.cols = seq.tokens.size();
    m.values.assign(m.rows * m.cols, 0.0);
    for (std::size_t j = 0; j < m.cols; ++j) {
        m.values[static_cast<std::size_t>(seq.tokens[j]) * m.cols + j] = 1.0;
    }
    return m;
}

const std::vector<std::string>& registered_specials() { return kRegisteredSpecials; }

bool is_registered_special(std::string_view symbol) {
    return std::find(kRegisteredSpecials.begin(), kRegisteredSpecials.end(), symbol) != kRegisteredSpecials.end();
}

CharTokenSeq encode_special(const Alphabet& alphabet, std::string_view symbol, std::size_t pad_to) {
    if (!is_registered_special(symbol)) {
        throw UnknownSpecial("'" + std::string(symbol) + "' is not a registered special token");
    }
    if (pad_to < 3) {
        throw WordTooLong("special tokens need 3 positions");
    }
    CharTokenSeq seq;
    seq.source = std::string(symbol);
    seq.tokens = {alphabet.beg(), alphabet.index_of(symbol), alphabet.end()};
    seq.content_len = 3;
    seq.tokens.resize(pad_to, alphabet.pad());
    return seq;
}

CharTokenSeq encode_any(const Alphabet& alphabet, std::string_view word, std::size_t pad_to) {
    if (is_registered_special(word)) {
        return encode_special(alphabet, word, pad_to);
    }
    return encode_word(alphabet, word, pad_to, {.truncate = true, .warn_on_truncate = false});
}

CharTokenSeq repad(const Alphabet& alphabet, const CharTokenSeq& seq, std::size_t pad_to) {
    if (pad_to < seq.content_len) {
        throw WordTooLong("cannot pad a " + std::to_string(seq.content_len) + "-token word to " +
                          std::to_string(pad_to));
    }
    CharTokenSeq out = seq;
    out.tokens.resize(seq.content_len);
    out.tokens.resize(pad_to, alphabet.pad());
    return out;
}

std::string format_tokens(const Alphabet& alphabet, const CharTokenSeq& seq, bool with_padding) {
    std::string out;
    const std::size_t n = with_padding ? seq.tokens.size() : seq.content_len;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += display(alphabet, seq.tokens[i]);
    }
    return out;
}

} // namespace rce
