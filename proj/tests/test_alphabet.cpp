#include "rce/alphabet.hpp"
#include "rce/error.hpp"
#include "support/words.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

using namespace rce;

namespace {

const Alphabet& A() { return Alphabet::standard(); }

std::vector<int> ids(std::initializer_list<const char*> names) {
    std::vector<int> out;
    for (const char* n : names) {
        out.push_back(A().index_of(n));
    }
    return out;
}

} // namespace

TEST(Alphabet, CategoriesInTableOrder) {
    const auto& a = A();
    EXPECT_EQ(a.index_of("a"), 0);
    EXPECT_EQ(a.index_of("z"), 25);
    EXPECT_EQ(a.index_of("0"), 26);
    EXPECT_EQ(a.index_of("ø"), 36);
    TokenCategory last = TokenCategory::Base;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto c = a.category(static_cast<int>(i));
        EXPECT_GE(static_cast<int>(c), static_cast<int>(last));
        last = c;
    }
    for (const char* name : {"[BEG]", "[END]", "[UNK]", "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UP]", "[LIG]", "ß", "´",
                             "¨", "¯", "˛", "ˋ", "˜", "þ", "ð", "ł", "ŋ", "§", "$", "~", "`"}) {
        EXPECT_TRUE(a.find(name).has_value()) << name;
    }
}

TEST(Alphabet, IndicesAreABijection) {
    const auto& a = A();
    std::set<std::string> names;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& n = a.name(static_cast<int>(i));
        EXPECT_TRUE(names.insert(n).second) << n;
        EXPECT_EQ(a.index_of(n), static_cast<int>(i));
    }
}

TEST(Alphabet, FileRoundtripPreservesOrderAndHash) {
    std::stringstream ss;
    A().write(ss);
    auto loaded = Alphabet::parse(ss);
    EXPECT_TRUE(loaded == A());
    EXPECT_EQ(loaded.hash(), A().hash());
}

TEST(Alphabet, PermutedFileChangesHash) {
    std::stringstream ss;
    A().write(ss);
    std::string text = ss.str();
    // swap the first two token lines: "a" and "b"
    auto pos = text.find("\na\nb\n");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 5, "\nb\na\n");
    std::stringstream permuted(text);
    auto loaded = Alphabet::parse(permuted);
    EXPECT_EQ(loaded.index_of("b"), 0);
    EXPECT_NE(loaded.hash(), A().hash());
}

TEST(Alphabet, RejectsUnknownOrMissingEntries) {
    std::stringstream bad("rce-alphabet v1\na\nщ\n");
    EXPECT_THROW(Alphabet::parse(bad), FormatError);
    std::stringstream short_file("rce-alphabet v1\na\nb\n");
    EXPECT_THROW(Alphabet::parse(short_file), FormatError);
    std::stringstream no_header("a\nb\n");
    EXPECT_THROW(Alphabet::parse(no_header), FormatError);
}

TEST(EncodeWord, TokenWalkthrough) {
    auto seq = encode_word(A(), "Token", 12);
    auto expected = ids({"[BEG]", "[UP]", "t", "o", "k", "e", "n", "[END]", "[PAD]", "[PAD]", "[PAD]", "[PAD]"});
    EXPECT_EQ(seq.tokens, expected);
    EXPECT_EQ(seq.content_len, 8u);
    EXPECT_EQ(format_tokens(A(), seq, false), "[BEG] [UP] [t] [o] [k] [e] [n] [END]");
}

TEST(EncodeWord, LiberteWalkthrough) {
    auto seq = encode_word(A(), "Liberté", 12);
    auto expected = ids({"[BEG]", "[UP]", "l", "i", "b", "e", "r", "t", "´", "e", "[END]", "[PAD]"});
    EXPECT_EQ(seq.tokens, expected);
    EXPECT_EQ(format_tokens(A(), seq), "[BEG] [UP] [l] [i] [b] [e] [r] [t] [´] [e] [END] [PAD]");
}

TEST(EncodeWord, SingleLetter) {
    EXPECT_EQ(encode_word(A(), "a", 4).tokens, ids({"[BEG]", "a", "[END]", "[PAD]"}));
}

TEST(EncodeWord, SharpS) {
    EXPECT_EQ(encode_word(A(), "ß", 6).tokens, ids({"[BEG]", "ß", "s", "[END]", "[PAD]", "[PAD]"}));
    EXPECT_EQ(encode_word(A(), "ẞ", 6).tokens, ids({"[BEG]", "ß", "[UP]", "s", "[END]", "[PAD]"}));
}

TEST(EncodeWord, UppercaseDiacriticPutsModifierBeforeUp) {
    EXPECT_EQ(encode_word(A(), "Ö", 5).tokens, ids({"[BEG]", "¨", "[UP]", "o", "[END]"}));
    EXPECT_EQ(encode_word(A(), "Æ", 6).tokens, ids({"[BEG]", "[LIG]", "[UP]", "a", "e", "[END]"}));
    EXPECT_EQ(encode_word(A(), "Ø", 4).tokens, ids({"[BEG]", "[UP]", "ø", "[END]"}));
}

TEST(EncodeWord, PrecomposedAndDecomposedInputsAgree) {
    auto pre = encode_word(A(), "Liberté", 16);
    auto dec = encode_word(A(), "Liberte\xCC\x81", 16);
    EXPECT_EQ(pre.tokens, dec.tokens);
}

TEST(EncodeWord, UnsupportedCharactersBecomeUnk) {
    auto cyr = encode_word(A(), "щит", 8);
    EXPECT_EQ(cyr.tokens, ids({"[BEG]", "[UNK]", "[UNK]", "[UNK]", "[END]", "[PAD]", "[PAD]", "[PAD]"}));
    // ring above has no modifier
    auto ring = encode_word(A(), "å", 5);
    EXPECT_EQ(ring.tokens, ids({"[BEG]", "[UNK]", "a", "[END]", "[PAD]"}));
}

TEST(EncodeWord, Errors) {
    EXPECT_THROW(encode_word(A(), "", 8), EmptyWord);
    EXPECT_THROW(encode_word(A(), "  \t", 8), EmptyWord);
    EXPECT_THROW(encode_word(A(), "Token", 7), WordTooLong);
    EXPECT_NO_THROW(encode_word(A(), "Token", 8));
}

TEST(EncodeWord, TruncatesAtCharacterBoundary) {
    EXPECT_EQ(encode_word(A(), "aÉ", 4, {.truncate = true, .warn_on_truncate = false}).tokens,
              ids({"[BEG]", "a", "[END]", "[PAD]"}));
    // the first character alone does not fit: truncation cannot help
    EXPECT_THROW(encode_word(A(), "Éa", 4, {.truncate = true, .warn_on_truncate = false}), WordTooLong);
    auto long_word = encode_word(A(), std::string(40, 'x'), kDefaultMaxWordLen, {.truncate = true, .warn_on_truncate = false});
    EXPECT_EQ(long_word.content_len, kDefaultMaxWordLen);
    EXPECT_EQ(long_word.tokens.back(), A().end());
    EXPECT_EQ(decode_word(A(), long_word), std::string(30, 'x'));
}

TEST(EncodeWord, TruncationNeverLeavesDanglingModifier) {
    auto seq = encode_word(A(), "abÉ", 5, {.truncate = true, .warn_on_truncate = false});
    EXPECT_EQ(seq.tokens, ids({"[BEG]", "a", "b", "[END]", "[PAD]"}));
}

TEST(DecodeWord, Roundtrips) {
    for (const char* w : {"Token", "Liberté", "ß", "STRAẞE", "Æsir", "Œuvre", "Ĳssel", "þórður", "Łódź", "ŋ!", "ǖ",
                          "Ærøskøbing", "pół", "añejo", "Ąęły"}) {
        auto seq = encode_word(A(), w, 32);
        EXPECT_EQ(decode_word(A(), seq), w) << w;
    }
}

TEST(DecodeWord, RejectsMalformed) {
    CharTokenSeq dangling{ids({"[BEG]", "´", "[END]"}), 3, ""};
    EXPECT_THROW(decode_word(A(), dangling), MalformedSequence);
    CharTokenSeq no_end{ids({"[BEG]", "a", "b"}), 3, ""};
    EXPECT_THROW(decode_word(A(), no_end), MalformedSequence);
    CharTokenSeq inner_pad{ids({"[BEG]", "a", "[PAD]", "b", "[END]"}), 5, ""};
    EXPECT_THROW(decode_word(A(), inner_pad), MalformedSequence);
    CharTokenSeq upper_digit{ids({"[BEG]", "[UP]", "1", "[END]"}), 4, ""};
    EXPECT_THROW(decode_word(A(), upper_digit), MalformedSequence);
    CharTokenSeq bad_lig{ids({"[BEG]", "[LIG]", "x", "y", "[END]"}), 5, ""};
    EXPECT_THROW(decode_word(A(), bad_lig), MalformedSequence);
    CharTokenSeq trailing{ids({"[BEG]", "a", "[END]", "b"}), 3, ""};
    EXPECT_THROW(decode_word(A(), trailing), MalformedSequence);
}

TEST(OneHot, ShapeAndColumns) {
    auto seq = encode_word(A(), "a", 4);
    auto m = to_one_hot(A(), seq);
    EXPECT_EQ(m.rows, A().size());
    EXPECT_EQ(m.cols, 4u);
    EXPECT_EQ(m.at(static_cast<std::size_t>(A().index_of("a")), 1), 1.0);
    for (std::size_t j = 0; j < m.cols; ++j) {
        double sum = 0;
        for (std::size_t r = 0; r < m.rows; ++r) {
            sum += m.at(r, j);
        }
        EXPECT_EQ(sum, 1.0);
    }
}

TEST(OneHot, ArgmaxInvertsOnFuzzedWords) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        auto seq = encode_word(A(), testutil::random_word(rng, 1, 8), 32, {.truncate = true, .warn_on_truncate = false});
        auto m = to_one_hot(A(), seq);
        for (std::size_t j = 0; j < m.cols; ++j) {
            ASSERT_EQ(m.argmax_column(j), seq.tokens[j]);
        }
    }
}

TEST(EncodeSpecial, RegisteredSpecials) {
    EXPECT_EQ(encode_special(A(), "[CLS]").tokens, ids({"[BEG]", "[CLS]", "[END]"}));
    EXPECT_EQ(encode_special(A(), "[MASK]", 5).tokens, ids({"[BEG]", "[MASK]", "[END]", "[PAD]", "[PAD]"}));
    EXPECT_EQ(decode_word(A(), encode_special(A(), "[SEP]")), "[SEP]");
    EXPECT_THROW(encode_special(A(), "xyz"), UnknownSpecial);
    EXPECT_THROW(encode_special(A(), "[PAD]"), UnknownSpecial);
}

TEST(Properties, RoundtripInjectivityAndPaddingNeutrality) {
    std::mt19937_64 rng(11);
    std::map<std::vector<int>, std::string> seen;
    for (int trial = 0; trial < 2000; ++trial) {
        const auto w = testutil::random_word(rng, 1, 6);
        auto a = encode_word(A(), w, 32);
        auto b = encode_word(A(), w, 40);
        ASSERT_EQ(decode_word(A(), a), w);
        ASSERT_TRUE(std::equal(a.tokens.begin(), a.tokens.begin() + static_cast<long>(a.content_len), b.tokens.begin()));
        std::vector<int> content(a.tokens.begin(), a.tokens.begin() + static_cast<long>(a.content_len));
        auto [it, inserted] = seen.emplace(content, w);
        if (!inserted) {
            ASSERT_EQ(it->second, w) << "two words share a token sequence";
        }
        // every modifier run ends in exactly one base (or ligature pair / unknown)
        for (std::size_t i = 1; i + 1 < a.content_len; ++i) {
            if (!A().modifier_of(a.tokens[i])) {
                continue;
            }
            std::size_t j = i;
            while (j + 1 < a.content_len && A().modifier_of(a.tokens[j])) {
                ++j;
            }
            ASSERT_LT(j + 1, a.content_len) << w;
            ASSERT_FALSE(A().modifier_of(a.tokens[j]).has_value()) << w;
            i = j;
        }
    }
}

TEST(Repad, ChangesOnlyPadding) {
    auto seq = encode_word(A(), "Token", 8);
    auto wider = repad(A(), seq, 12);
    EXPECT_EQ(wider, encode_word(A(), "Token", 12));
    EXPECT_THROW(repad(A(), seq, 5), WordTooLong);
}
