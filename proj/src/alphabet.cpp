#include "rce/alphabet.hpp"

#include "rce/error.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace rce {

namespace {

constexpr std::string_view kHeader = "rce-alphabet v1";

std::string utf8_of(char32_t c) {
    std::string out;
    if (c < 0x80) {
        out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (c >> 6)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (c >> 12)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (c >> 18)));
        out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
    return out;
}

struct ModifierSpec {
    const char* name;
    Modifier kind;
};

// Grave and tilde use spacing modifier letters so they never collide with the
// ASCII '`' and '~' symbols.
constexpr ModifierSpec kModifiers[] = {
    {"´", Modifier::Acute},     {"ˋ", Modifier::Grave},
    {"¯", Modifier::Macron},    {"˜", Modifier::Tilde},
    {"˛", Modifier::Ogonek},    {"¨", Modifier::Diaeresis},
    {"[LIG]", Modifier::Ligature},   {"[UP]", Modifier::Upper},
    {"ß", Modifier::SharpS},
};

std::vector<Alphabet::Entry> standard_entries() {
    std::vector<Alphabet::Entry> entries;
    for (char32_t c = U'a'; c <= U'z'; ++c) {
        entries.push_back({utf8_of(c), TokenCategory::Base, c});
    }
    for (char32_t c = U'0'; c <= U'9'; ++c) {
        entries.push_back({utf8_of(c), TokenCategory::Digit, c});
    }
    std::vector<char32_t> symbols = {U'ø', U'þ', U'ð', U'ł', U'ŋ', U'°',
                                     U'^',      U'!',      U'"',      U'§', U'$'};
    for (char32_t c = 0x21; c < 0x7F; ++c) {
        bool alnum = (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || (c >= U'0' && c <= U'9');
        if (alnum) {
            continue;
        }
        if (std::find(symbols.begin(), symbols.end(), c) == symbols.end()) {
            symbols.push_back(c);
        }
    }
    for (char32_t c : symbols) {
        entries.push_back({utf8_of(c), TokenCategory::Symbol, c});
    }
    for (const char* name : {"[BEG]", "[END]", "[UNK]", "[PAD]", "[CLS]", "[SEP]", "[MASK]"}) {
        entries.push_back({name, TokenCategory::WordSpecial, 0});
    }
    for (const auto& m : kModifiers) {
        entries.push_back({m.name, TokenCategory::Modifier, 0});
    }
    return entries;
}

} // namespace

Alphabet::Alphabet(std::vector<Entry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const int idx = static_cast<int>(i);
        const auto& e = entries_[i];
        if (!by_name_.emplace(e.name, idx).second) {
            throw FormatError("duplicate alphabet entry '" + e.name + "'");
        }
        if (e.category == TokenCategory::Base || e.category == TokenCategory::Digit ||
            e.category == TokenCategory::Symbol) {
            by_char_.emplace(e.character, idx);
        }
        if (e.category == TokenCategory::Modifier) {
            for (const auto& m : kModifiers) {
                if (e.name == m.name) {
                    modifiers_.emplace(idx, m.kind);
                }
            }
        }
    }
    beg_ = index_of("[BEG]");
    end_ = index_of("[END]");
    unk_ = index_of("[UNK]");
    pad_ = index_of("[PAD]");
}

const Alphabet& Alphabet::standard() {
    static const Alphabet instance(standard_entries());
    return instance;
}

Alphabet Alphabet::parse(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
        throw FormatError("alphabet file must start with '" + std::string(kHeader) + "'");
    }
    const auto& std_alpha = standard();
    std::vector<Entry> entries;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto idx = std_alpha.find(line);
        if (!idx) {
            throw FormatError("unknown alphabet entry '" + line + "'");
        }
        entries.push_back(std_alpha.entry(*idx));
    }
    if (entries.size() != std_alpha.size()) {
        throw FormatError("alphabet file lists " + std::to_string(entries.size()) + " entries, expected " +
                          std::to_string(std_alpha.size()));
    }
    return Alphabet(std::move(entries));
}

Alphabet Alphabet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open alphabet file " + path.string());
    }
    return parse(in);
}

void Alphabet::write(std::ostream& out) const {
    out << kHeader << '\n';
    for (const auto& e : entries_) {
        out << e.name << '\n';
    }
}

void Alphabet::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write alphabet file " + path.string());
    }
    write(out);
}

std::optional<int> Alphabet::find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) {
        return std::nullopt;
    }
    return it->second;
}

int Alphabet::index_of(std::string_view name) const {
    if (auto idx = find(name)) {
        return *idx;
    }
    throw FormatError("no alphabet entry named '" + std::string(name) + "'");
}

std::optional<int> Alphabet::char_index(char32_t c) const {
    auto it = by_char_.find(c);
    if (it == by_char_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<Modifier> Alphabet::modifier_of(int index) const {
    auto it = modifiers_.find(index);
    if (it == modifiers_.end()) {
        return std::nullopt;
    }
    return it->second;
}

int Alphabet::modifier_index(Modifier m) const {
    for (const auto& [idx, kind] : modifiers_) {
        if (kind == m) {
            return idx;
        }
    }
    throw FormatError("alphabet lacks a modifier");
}

std::uint64_t Alphabet::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
        for (unsigned char c : e.name) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= '\n';
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool Alphabet::operator==(const Alphabet& other) const {
    if (entries_.size() != other.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name) {
            return false;
        }
    }
    return true;
}

int OneHotWord::argmax_column(std::size_t col) const {
    std::size_t best = 0;
    for (std::size_t r = 1; r < rows; ++r) {
        if (at(r, col) > at(best, col)) {
            best = r;
        }
    }
    return static_cast<int>(best);
}

} // namespace rce
