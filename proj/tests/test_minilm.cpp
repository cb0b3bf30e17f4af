#include "rce/error.hpp"
#include "rce/minilm.hpp"
#include "rce/optim.hpp"
#include "support/synthetic.hpp"
#include "support/words.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

namespace rce {
namespace {

LmConfig tiny_lm() {
    LmConfig c;
    c.dim = 16;
    c.heads = 2;
    c.layers = 2;
    c.ff_dim = 32;
    c.dropout = 0.0;
    c.max_len = 16;
    c.vocab_size = 100;
    c.char_layers = 1;
    c.char_heads = 2;
    c.max_word_len = 10;
    return c;
}

Corpus small_corpus(std::uint64_t seed = 1, std::size_t sentences = 200) {
    Rng rng(seed);
    return testutil::topic_corpus(rng, 4, 10, sentences, 3, 6, 5).corpus;
}

std::unique_ptr<MiniLm> tiny_model(const std::string& kind, std::uint64_t seed = 1, LmConfig cfg = tiny_lm()) {
    Rng rng(seed);
    auto corpus = small_corpus();
    return std::make_unique<MiniLm>(make_lm_embedding(kind, cfg, corpus, rng), cfg, rng);
}

std::vector<std::string> words(std::initializer_list<const char*> ws) { return {ws.begin(), ws.end()}; }

TEST(Framing, LayoutOfAPair) {
    const std::vector<LmPair> pairs{{words({"a", "b"}), words({"c"}), true}, {words({"d"}), words({"e", "f", "g"}), false}};
    auto in = frame_pairs(pairs, 16);
    EXPECT_EQ(in.batch, 2u);
    EXPECT_EQ(in.length, 7u);
    EXPECT_EQ(std::vector<std::string>(in.words.begin(), in.words.begin() + 7),
              words({"[CLS]", "a", "b", "[SEP]", "c", "[SEP]", "[PAD]"}));
    EXPECT_EQ(std::vector<int>(in.segment.begin(), in.segment.begin() + 7), (std::vector<int>{0, 0, 0, 0, 1, 1, 0}));
    EXPECT_EQ(std::vector<std::uint8_t>(in.valid.begin(), in.valid.begin() + 7),
              (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1, 0}));
    EXPECT_EQ(std::vector<std::uint8_t>(in.maskable.begin(), in.maskable.begin() + 7),
              (std::vector<std::uint8_t>{0, 1, 1, 0, 1, 0, 0}));
    EXPECT_EQ(std::vector<std::string>(in.words.begin() + 7, in.words.end()),
              words({"[CLS]", "d", "[SEP]", "e", "f", "g", "[SEP]"}));
}

TEST(Framing, LongPairsLoseWordsFromTheRight) {
    const std::vector<LmPair> pairs{{words({"a", "b", "c", "d"}), words({"e", "f", "g"}), true}};
    auto in = frame_pairs(pairs, 7);
    EXPECT_EQ(in.words, words({"[CLS]", "a", "b", "c", "d", "[SEP]", "[SEP]"}));
    auto shorter = frame_pairs(pairs, 5);
    EXPECT_EQ(shorter.words, words({"[CLS]", "a", "b", "[SEP]", "[SEP]"}));
}

TEST(Framing, MaskingTouchesOnlySentenceWords) {
    Rng rng(3);
    auto corpus = small_corpus();
    std::vector<LmPair> pairs;
    for (int i = 0; i < 12; ++i) pairs.push_back(sample_pair(corpus, rng));
    auto in = frame_pairs(pairs, 64);
    auto m = mask_words(in, 0.15, rng);
    std::size_t expected = 0;
    for (std::size_t b = 0; b < in.batch; ++b) {
        std::size_t n = 0;
        for (std::size_t j = 0; j < in.length; ++j) n += in.maskable[b * in.length + j];
        expected += std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * n)));
    }
    ASSERT_EQ(m.positions.size(), expected);
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
        EXPECT_TRUE(in.maskable[m.positions[i]]);
        EXPECT_EQ(m.input.words[m.positions[i]], kLmMask);
        EXPECT_EQ(m.originals[i], in.words[m.positions[i]]);
    }
    std::size_t changed = 0;
    for (std::size_t k = 0; k < in.words.size(); ++k) changed += in.words[k] != m.input.words[k];
    EXPECT_LE(changed, m.positions.size());
}

TEST(Pairs, NextAndRandomSecondSentences) {
    Corpus c;
    for (int i = 0; i < 50; ++i) c.sentences.push_back({"s" + std::to_string(i)});
    Rng rng(4);
    int next = 0;
    for (int t = 0; t < 2000; ++t) {
        auto p = sample_pair(c, rng);
        const int i = std::stoi(p.first[0].substr(1)), j = std::stoi(p.second[0].substr(1));
        if (p.is_next) {
            EXPECT_EQ(j, i + 1);
            ++next;
        } else {
            EXPECT_NE(j, i + 1);
            EXPECT_NE(j, i);
        }
    }
    EXPECT_NEAR(next / 2000.0, 0.5, 0.05);
}

TEST(Model, VariantsShareDownstreamShapes) {
    auto lookup = tiny_model("lookup");
    auto chars = tiny_model("rce");
    const std::vector<LmPair> pairs{{words({"a", "b"}), words({"c"}), true}};
    auto in = frame_pairs(pairs, 16);
    Tensor h1 = lookup->hidden(in, {}), h2 = chars->hidden(in, {});
    EXPECT_EQ(h1.shape(), h2.shape());
    EXPECT_EQ(lookup->nsp_logits(h1).shape(), (Shape{1}));
    EXPECT_THROW(make_lm_embedding("wordpiece", tiny_lm(), small_corpus(), *std::make_unique<Rng>(1)), ConfigError);
}

TEST(Model, PaddingDoesNotChangeHiddenStates) {
    for (const char* kind : {"lookup", "rce"}) {
        auto m = tiny_model(kind);
        const LmPair shortp{words({"ba", "ke"}), words({"lo"}), true};
        const LmPair longp{words({"ba", "ke", "mi", "nu"}), words({"lo", "pa", "ri"}), false};
        auto alone = frame_pairs(std::vector<LmPair>{shortp}, 16);
        auto batched = frame_pairs(std::vector<LmPair>{shortp, longp}, 16);
        Tensor a = m->hidden(alone, {}), b = m->hidden(batched, {});
        const std::size_t d = 16;
        for (std::size_t j = 0; j < alone.length; ++j) {
            for (std::size_t x = 0; x < d; ++x) {
                ASSERT_NEAR(a[j * d + x], b[j * d + x], 1e-12) << kind;
            }
        }
    }
}

TEST(Model, TooLongInputIsRejected) {
    auto m = tiny_model("lookup");
    std::vector<std::string> many(20, "a");
    auto in = frame_pairs(std::vector<LmPair>{{many, many, true}}, 64);
    EXPECT_THROW(m->hidden(in, {}), SequenceTooLong);
}

TEST(Model, MlmGradientReachesCharacterEncoder) {
    auto m = tiny_model("rce");
    const auto& emb = dynamic_cast<const CharLmEmbedding&>(m->embedding());
    auto params = tensors_of(emb.encoder().parameters());
    zero_grads(params);
    Rng rng(5);
    auto in = frame_pairs(std::vector<LmPair>{{words({"ba", "ke", "mi"}), words({"lo", "pa"}), true}}, 16);
    auto masked = mask_words(in, 0.5, rng);
    Tensor h = reshape(m->hidden(masked.input, {}), {in.length, 16});
    Tensor loss = m->embedding().mlm_loss(gather_rows(h, masked.positions), masked.originals, {});
    loss.backward();
    double norm = 0.0;
    for (auto& p : params) {
        ASSERT_TRUE(p.has_grad());
        for (double g : p.grad()) norm += g * g;
    }
    EXPECT_GT(norm, 0.0);
}

TEST(Model, UntrainedNspLossIsNearLogTwo) {
    LmConfig cfg = tiny_lm();
    auto corpus = small_corpus(2, 400);
    Rng rng(6);
    MiniLm m(make_lm_embedding("lookup", cfg, corpus, rng), cfg, rng);
    std::vector<LmPair> pairs;
    for (int i = 0; i < 400; ++i) pairs.push_back(sample_pair(corpus, rng));
    NoGradGuard no_grad;
    auto losses = lm_losses(m, pairs, rng, {});
    EXPECT_NEAR(losses.nsp, std::log(2.0), 0.01);
}

TEST(Model, EveryWordEmbedsWithCharacters) {
    auto lookup = tiny_model("lookup");
    auto chars = tiny_model("rce");
    Rng rng(7);
    std::vector<std::string> odd;
    for (int i = 0; i < 50; ++i) odd.push_back(testutil::random_word(rng, 1, 14));
    const auto& lk = dynamic_cast<const LookupEmbedding&>(lookup->embedding());
    for (const auto& w : odd) EXPECT_EQ(lk.id(w), lk.unk_id());
    Tensor v = chars->embedding().embed(odd, {});
    EXPECT_EQ(v.shape(), (Shape{50, 16}));
    for (double x : v.data()) ASSERT_TRUE(std::isfinite(x));
    // distinct spellings get distinct vectors
    EXPECT_NE(std::vector<double>(v.data().begin(), v.data().begin() + 16),
              std::vector<double>(v.data().begin() + 16, v.data().begin() + 32));
}

TEST(Model, CharacterVectorsStartStandardized) {
    auto m = tiny_model("rce");
    const auto words = build_dictionary(small_corpus(), 100).tokens();
    NoGradGuard no_grad;
    Tensor v = m->embedding().embed(words, {});
    const std::size_t n = words.size(), d = 16;
    for (std::size_t x = 0; x < d; ++x) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += v[i * d + x] / double(n);
        for (std::size_t i = 0; i < n; ++i) sq += std::pow(v[i * d + x] - mean, 2) / double(n);
        EXPECT_NEAR(mean, 0.0, 1e-6);
        EXPECT_NEAR(sq, 1.0, 1e-2); // the variance floor shrinks tiny spreads slightly
    }
}

TEST(Model, TrainingStandardizesOverTheBatchAndTracksStatistics) {
    auto m = tiny_model("rce");
    const auto ws = words({"ba", "ke", "mi", "lo", "pa", "ba"});
    Rng rng(8);
    Tensor before = m->embedding().embed(std::vector<std::string>{"zu"}, {});
    Tensor v = m->embedding().embed(ws, ForwardContext::train(rng));
    const std::size_t d = 16;
    // repeated words share a row, and the five distinct rows are standardized
    EXPECT_TRUE(std::equal(v.data().begin(), v.data().begin() + d, v.data().begin() + 5 * d));
    for (std::size_t x = 0; x < d; ++x) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 5; ++i) mean += v[i * d + x] / 5.0;
        EXPECT_NEAR(mean, 0.0, 1e-9);
    }
    Tensor after = m->embedding().embed(std::vector<std::string>{"zu"}, {});
    EXPECT_NE(std::vector<double>(before.data().begin(), before.data().end()),
              std::vector<double>(after.data().begin(), after.data().end()));
}

TEST(Model, SaveLoadRoundTrip) {
    for (const char* kind : {"lookup", "rce"}) {
        auto m = tiny_model(kind, 9);
        const auto path = (std::filesystem::temp_directory_path() / "rce_test_lm.bin").string();
        save_lm(path, *m, {{"note", "x"}});
        auto back = load_lm(path);
        std::filesystem::remove(path);
        auto in = frame_pairs(std::vector<LmPair>{{words({"ba", "zz"}), words({"lo"}), true}}, 16);
        Tensor a = m->hidden(in, {}), b = back->hidden(in, {});
        EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin())) << kind;
        EXPECT_EQ(back->embedding().kind(), kind);
    }
}

TEST(Swag, BuilderItemsAreWellFormed) {
    auto corpus = small_corpus(3, 300);
    auto items = make_swag_items(corpus, 100, 11);
    ASSERT_EQ(items.size(), 100u);
    std::set<std::pair<std::string, std::string>> successors;
    for (std::size_t i = 0; i + 1 < corpus.sentences.size(); ++i) {
        std::string a, b;
        for (auto& w : corpus.sentences[i]) a += (a.empty() ? "" : " ") + w;
        for (auto& w : corpus.sentences[i + 1]) b += (b.empty() ? "" : " ") + w;
        successors.insert({a, b});
    }
    std::array<int, 4> gold_at{};
    for (const auto& it : items) {
        std::set<std::string> distinct(it.candidates.begin(), it.candidates.end());
        EXPECT_EQ(distinct.size(), 4u);
        EXPECT_FALSE(distinct.contains(it.context));
        EXPECT_TRUE(successors.contains({it.context, it.candidates[static_cast<std::size_t>(it.gold)]}));
        ++gold_at[static_cast<std::size_t>(it.gold)];
    }
    for (int g : gold_at) EXPECT_GT(g, 10);
    EXPECT_EQ(make_swag_items(corpus, 10, 11)[3].context, make_swag_items(corpus, 10, 11)[3].context);
}

TEST(Swag, TsvRoundTripAndErrors) {
    std::vector<SwagItem> items{{"a b", {"c", "d e", "f", "g"}, 2}};
    std::stringstream s;
    write_swag(s, items);
    EXPECT_EQ(s.str(), "a b\tc\td e\tf\tg\t2\n");
    auto back = parse_swag(s);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].candidates[1], "d e");
    EXPECT_EQ(back[0].gold, 2);
    std::istringstream bad_gold("a\tb\tc\td\te\t4\n");
    EXPECT_THROW(parse_swag(bad_gold), FormatError);
    std::istringstream short_line("a\tb\tc\t1\n");
    EXPECT_THROW(parse_swag(short_line), FormatError);
}

TEST(Swag, OverfitsTwentyItems) {
    auto corpus = small_corpus(4, 300);
    auto items = make_swag_items(corpus, 20, 12);
    LmConfig cfg = tiny_lm();
    cfg.dim = 32;
    cfg.ff_dim = 64;
    Rng rng(13);
    MiniLm m(make_lm_embedding("lookup", cfg, corpus, rng), cfg, rng);
    // every item yields one true and three false pairs
    std::vector<LmPair> pairs;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream in(s);
        for (std::string w; in >> w;) out.push_back(w);
        return out;
    };
    for (const auto& it : items) {
        for (int c = 0; c < 4; ++c) pairs.push_back({split(it.context), split(it.candidates[c]), c == it.gold});
    }
    auto params = tensors_of(m.parameters());
    AdamState adam;
    for (int step = 0; step < 300; ++step) {
        zero_grads(params);
        auto losses = lm_losses(m, pairs, rng, ForwardContext::train(rng));
        losses.total.backward();
        adam_step(params, adam, 3e-3);
    }
    EXPECT_EQ(swag_eval(m, items), 1.0);
}

TEST(Pretrain, LogsAndIsReproducible) {
    auto corpus = small_corpus(5, 100);
    auto run = [&] {
        auto m = tiny_model("lookup", 21);
        PretrainOptions o;
        o.steps = 6;
        o.warmup = 2;
        o.log_every = 3;
        std::ostringstream log;
        auto rows = pretrain(*m, corpus, o, &log);
        return log.str();
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(a.substr(0, a.find('\n')), lm_metrics_header());
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 3);
}

} // namespace
} // namespace rce
