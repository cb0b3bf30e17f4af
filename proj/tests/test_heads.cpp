#include "rce/error.hpp"
#include "rce/heads.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

namespace rce {
namespace {

const Alphabet& A() { return Alphabet::standard(); }

RceConfig tiny_rce(std::size_t max_len = 12) {
    RceConfig c;
    c.dim = 16;
    c.layers = 1;
    c.heads = 2;
    c.ff_dim = 32;
    c.max_word_len = max_len;
    c.dropout = 0.0;
    return c;
}

DecoderConfig tiny_decoder() {
    DecoderConfig d;
    d.layers = 1;
    d.heads = 2;
    d.ff_dim = 32;
    d.dropout = 0.0;
    return d;
}

Corpus corpus_of(const std::string& text) {
    std::istringstream in(text);
    return parse_corpus(in);
}

// Naive per-target mean of -log softmax, one target at a time.
double naive_char_loss(const Tensor& logits, const std::vector<CharTarget>& targets) {
    const std::size_t L = logits.dim(1), C = logits.dim(2);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& t : targets) {
        for (std::size_t j = 0; j < t.seq->content_len; ++j) {
            const double* row = logits.data().data() + (t.row * L + j) * C;
            double m = row[0];
            for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
            double z = 0.0;
            for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - m);
            sum += -(row[t.seq->tokens[j]] - m - std::log(z));
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

TEST(Losses, UniformLogitsGiveLogAlphabetSize) {
    const auto seq = encode_word(A(), "Token", 12);
    const std::vector<CharTarget> targets{{0, &seq}, {1, &seq}};
    Tensor logits = Tensor::zeros({2, 12, A().size()});
    EXPECT_NEAR(char_reconstruction_loss(logits, targets).item(), std::log(static_cast<double>(A().size())), 1e-12);

    const std::vector<DictTarget> dict{{0, 3}, {0, 4}, {1, 0}};
    EXPECT_NEAR(dict_target_loss(Tensor::zeros({2, 7}), dict).item(), std::log(7.0), 1e-12);
}

TEST(Losses, PerfectLogitsGiveNearZero) {
    const auto seq = encode_word(A(), "abc", 8);
    Tensor logits = Tensor::zeros({1, 8, A().size()});
    for (std::size_t j = 0; j < seq.content_len; ++j) {
        logits.data()[j * A().size() + static_cast<std::size_t>(seq.tokens[j])] = 50.0;
    }
    const std::vector<CharTarget> targets{{0, &seq}};
    EXPECT_LT(char_reconstruction_loss(logits, targets).item(), 1e-15);
    EXPECT_TRUE(reconstructs(reshape(logits, {8, A().size()}), seq));
}

TEST(Losses, PaddingPositionsAreNeverScored) {
    const auto seq = encode_word(A(), "ab", 10);
    Rng rng(3);
    Tensor logits = Tensor::randn({1, 10, A().size()}, rng, 1.0);
    const std::vector<CharTarget> targets{{0, &seq}};
    const double before = char_reconstruction_loss(logits, targets).item();
    Tensor changed = logits.clone();
    for (std::size_t j = seq.content_len; j < 10; ++j) {
        for (std::size_t c = 0; c < A().size(); ++c) {
            changed.data()[j * A().size() + c] = 100.0 * static_cast<double>(c % 5);
        }
    }
    EXPECT_EQ(char_reconstruction_loss(changed, targets).item(), before);
}

TEST(Losses, AggregatedTargetsMatchNaiveMean) {
    Rng rng(5);
    Tensor logits = Tensor::randn({3, 9, A().size()}, rng, 2.0);
    const auto a = encode_word(A(), "ab", 9);
    const auto b = encode_word(A(), "Abba", 9);
    const auto c = encode_word(A(), "café", 9);
    // repeated (row, word) pairs must count once per occurrence
    const std::vector<CharTarget> targets{{0, &a}, {0, &a}, {1, &b}, {2, &c}, {0, &b}, {2, &a}};
    EXPECT_NEAR(char_reconstruction_loss(logits, targets).item(), naive_char_loss(logits, targets), 1e-12);
}

TEST(Losses, DictLossNeedsANeighbor) {
    EXPECT_THROW(dict_target_loss(Tensor::zeros({1, 3}), {}), NoDictNeighbor);
    Rng rng(6);
    RceModel enc(A(), tiny_rce(), rng);
    Linear head(16, 4, rng);
    const auto seq = enc.encode("dog");
    const std::vector<int> none{-1, -1};
    EXPECT_THROW(dict_context_loss(enc, head, seq, none), NoDictNeighbor);
    const std::vector<int> some{-1, 2};
    EXPECT_TRUE(std::isfinite(dict_context_loss(enc, head, seq, some).item()));
}

TEST(Vocabulary, ContextSamplesStayInsideSentences) {
    auto corpus = corpus_of("a b c\nd e\n");
    Rng rng(1);
    RceModel enc(A(), tiny_rce(), rng);
    auto vocab = build_training_vocabulary(corpus, enc, build_dictionary(corpus, 2));
    auto samples = make_context_samples(corpus, vocab, 2);
    ASSERT_EQ(samples.size(), 5u);
    EXPECT_EQ(samples[0].neighbors, (std::vector<std::pair<int, int>>{{1, 1}, {2, 2}}));
    EXPECT_EQ(samples[2].neighbors, (std::vector<std::pair<int, int>>{{-2, 0}, {-1, 1}}));
    EXPECT_EQ(samples[3].neighbors, (std::vector<std::pair<int, int>>{{1, 4}}));
    EXPECT_EQ(vocab.dict_id[vocab.index_of("a")], 0);
    EXPECT_EQ(vocab.dict_id[vocab.index_of("e")], -1);
}

TEST(Vocabulary, LongWordsAreTruncatedAndCounted) {
    auto corpus = corpus_of("short averyveryverylongword\n");
    Rng rng(1);
    RceModel enc(A(), tiny_rce(10), rng);
    auto vocab = build_training_vocabulary(corpus, enc, {});
    EXPECT_EQ(vocab.truncated, 1u);
    EXPECT_EQ(vocab.seqs[1].content_len, 10u);

    TrainOptions o;
    o.truncate_long_words = false;
    o.steps = 1;
    EXPECT_THROW(Trainer(enc, corpus, o), WordTooLong);
}

TEST(Heads, AllZeroWeightsAreRejected) {
    Rng rng(1);
    HeadWeights zero{0.0, 0.0, 0.0};
    EXPECT_THROW(TrainingHeads(16, A(), 12, 5, zero, tiny_decoder(), rng), ConfigError);
    HeadWeights negative{1.0, -1.0, 0.0};
    EXPECT_THROW(negative.validate(), ConfigError);
}

TEST(Heads, DisabledHeadsHaveNoParameters) {
    Rng rng(1);
    TrainingHeads only_dict(16, A(), 12, 5, {0.0, 0.0, 1.0}, tiny_decoder(), rng);
    EXPECT_FALSE(only_dict.has_context());
    EXPECT_FALSE(only_dict.has_identity());
    ASSERT_TRUE(only_dict.has_dict());
    EXPECT_EQ(parameter_count(only_dict.parameters()), 16u * 5u + 5u);
}

TEST(Heads, TotalIsTheWeightedSumOfHeads) {
    auto corpus = corpus_of("the cat sat on the mat\nthe dog ran\n");
    Rng rng(9);
    RceModel enc(A(), tiny_rce(), rng);
    auto dict = build_dictionary(corpus, 3);
    auto vocab = build_training_vocabulary(corpus, enc, dict);
    auto samples = make_context_samples(corpus, vocab, 2);
    const HeadWeights w{0.5, 2.0, 1.5};
    TrainingHeads heads(16, A(), 12, dict.size(), w, tiny_decoder(), rng);
    auto losses = batch_losses(enc, heads, vocab, samples, w, ForwardContext::eval());
    EXPECT_NEAR(losses.total.item(), 0.5 * losses.context + 2.0 * losses.identity + 1.5 * losses.dict, 1e-12);

    // each head alone reproduces its own term
    auto ctx_only = batch_losses(enc, heads, vocab, samples, {1.0, 0.0, 0.0}, ForwardContext::eval());
    EXPECT_NEAR(ctx_only.context, losses.context, 1e-12);
    EXPECT_TRUE(std::isnan(ctx_only.identity));
    EXPECT_TRUE(std::isnan(ctx_only.dict));
}

TEST(Heads, BatchLossMatchesSingleSampleLosses) {
    auto corpus = corpus_of("a bb a ccc\n");
    Rng rng(12);
    RceModel enc(A(), tiny_rce(), rng);
    auto vocab = build_training_vocabulary(corpus, enc, {});
    auto samples = make_context_samples(corpus, vocab, 1);
    TrainingHeads heads(16, A(), 12, 0, {0.0, 1.0, 0.0}, tiny_decoder(), rng);
    const auto eval = ForwardContext::eval();
    auto batch = batch_losses(enc, heads, vocab, samples, {0.0, 1.0, 0.0}, eval);
    // identity loss is a mean over all character positions of all samples
    double sum = 0.0, positions = 0.0;
    for (const auto& s : samples) {
        const auto& seq = vocab.seqs[static_cast<std::size_t>(s.center)];
        const double n = static_cast<double>(seq.content_len);
        sum += identity_loss(enc, heads.identity_decoder(), seq, eval).item() * n;
        positions += n;
    }
    EXPECT_NEAR(batch.identity, sum / positions, 1e-12);
}

TEST(Metrics, FormatMarksInactiveHeads) {
    MetricsRow r{7, 0.5, 1.25, 1.25, std::nan(""), std::nan("")};
    EXPECT_EQ(metrics_header(), "step\tlr\ttotal\tcontext\tidentity\tdict");
    EXPECT_EQ(format_metrics(r), "7\t0.5\t1.25\t1.25\t-\t-");
}

TEST(Options, JsonRoundTrip) {
    TrainOptions o;
    o.steps = 77;
    o.weights.dict = 0.0;
    o.decoder.layers = 3;
    o.checkpoint_path = "x.bin";
    nlohmann::json j = o;
    auto back = j.get<TrainOptions>();
    EXPECT_EQ(nlohmann::json(back), j);
    auto partial = nlohmann::json{{"steps", 5}}.get<TrainOptions>();
    EXPECT_EQ(partial.steps, 5u);
    EXPECT_EQ(partial.batch_size, TrainOptions{}.batch_size);
}

TrainOptions quick_options(std::size_t steps, const HeadWeights& w) {
    TrainOptions o;
    o.steps = steps;
    o.batch_size = 16;
    o.warmup = steps / 10;
    o.max_lr = 3e-3;
    o.weights = w;
    o.decoder = tiny_decoder();
    o.log_every = 10;
    o.dict_size = 50;
    return o;
}

TEST(Training, OverfitsOneWordWithIdentityHead) {
    auto corpus = corpus_of("Liberté\n");
    Rng rng(21);
    RceModel enc(A(), tiny_rce(), rng);
    Trainer trainer(enc, corpus, quick_options(500, {0.0, 1.0, 0.0}));
    auto log = trainer.run();
    EXPECT_LT(log.back().identity, 0.05);
    const auto seq = enc.encode("Liberté");
    Tensor e = Tensor::from({1, 16}, enc.embed_word(seq));
    EXPECT_TRUE(reconstructs(predict_chars(trainer.heads().identity_decoder(), e), seq));
}

TEST(Training, DictHeadLearnsCooccurrence) {
    // "x" is always next to "y", "p" always next to "q"
    std::string text;
    for (int i = 0; i < 20; ++i) text += "x y\np q\n";
    auto corpus = corpus_of(text);
    Rng rng(22);
    RceModel enc(A(), tiny_rce(), rng);
    Trainer trainer(enc, corpus, quick_options(150, {0.0, 0.0, 1.0}));
    trainer.run();
    const auto& dict = trainer.dictionary();
    for (auto [center, partner] : {std::pair{"x", "y"}, {"y", "x"}, {"p", "q"}, {"q", "p"}}) {
        Tensor e = Tensor::from({1, 16}, enc.embed_word(enc.encode(center)));
        const auto best = argmax_tokens(trainer.heads().dict_head().forward(e));
        EXPECT_EQ(dict.token(best[0]), partner) << center;
    }
}

TEST(Training, SameSeedSameMetrics) {
    auto corpus = corpus_of("the cat sat\nthe dog ran far\n");
    auto run = [&] {
        Rng rng(5);
        RceModel enc(A(), tiny_rce(), rng);
        auto o = quick_options(20, {});
        o.decoder.dropout = 0.1;
        Trainer t(enc, corpus, o);
        std::ostringstream out;
        t.run(&out);
        return std::make_pair(out.str(), enc.embed_word(enc.encode("cat")));
    };
    auto [log1, v1] = run();
    auto [log2, v2] = run();
    EXPECT_EQ(log1, log2);
    EXPECT_EQ(v1, v2);
    // header plus one line per 10 steps
    EXPECT_EQ(std::count(log1.begin(), log1.end(), '\n'), 3);
    EXPECT_EQ(log1.substr(0, log1.find('\n')), metrics_header());
}

TEST(Training, StepsPastTheEndThrow) {
    auto corpus = corpus_of("a b\n");
    Rng rng(5);
    RceModel enc(A(), tiny_rce(), rng);
    Trainer t(enc, corpus, quick_options(2, {0.0, 1.0, 0.0}));
    t.step();
    t.step();
    EXPECT_THROW(t.step(), StepOutOfRange);
}

TEST(Training, CheckpointRestoresEncoderAndHeads) {
    auto corpus = corpus_of("a bb ccc\n");
    Rng rng(8);
    RceModel enc(A(), tiny_rce(), rng);
    auto o = quick_options(4, {});
    o.checkpoint_every = 2;
    o.checkpoint_path = (std::filesystem::temp_directory_path() / "rce_test_ckpt.bin").string();
    Trainer t(enc, corpus, o);
    t.run();
    auto loaded = load_model(o.checkpoint_path, &A());
    std::filesystem::remove(o.checkpoint_path);
    EXPECT_EQ(loaded.meta.at("step"), 4);
    EXPECT_EQ(loaded.meta.at("train").get<TrainOptions>().steps, 4u);
    EXPECT_EQ(loaded.meta.at("dictionary").get<std::vector<std::string>>(), t.dictionary().tokens());
    EXPECT_EQ(loaded.encoder->embed_word(enc.encode("bb")), enc.embed_word(enc.encode("bb")));
    // heads come back bit-identical as well
    ParameterFile heads_only;
    for (const auto& nt : loaded.file.tensors) {
        if (nt.name.rfind("heads.", 0) == 0) {
            heads_only.tensors.push_back(nt);
        }
    }
    const auto live = t.heads().parameters("heads");
    ASSERT_EQ(heads_only.tensors.size(), live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
        const auto& stored = heads_only.tensors[i];
        ASSERT_EQ(stored.name, live[i].name);
        EXPECT_TRUE(std::equal(stored.tensor.data().begin(), stored.tensor.data().end(), live[i].tensor.data().begin()));
    }
}

} // namespace
} // namespace rce
