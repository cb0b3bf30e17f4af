#include "rce/error.hpp"
#include "rce/eval.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace rce {
namespace {

CategoryDataset dataset_of(std::vector<std::pair<std::string, std::vector<std::string>>> cats) {
    CategoryDataset d;
    for (auto& [name, words] : cats) {
        d.names.push_back(name);
        d.members.push_back(words);
    }
    return d;
}

// a1..a4 near the origin except a4, which sits inside the b cluster
struct SevenPoints {
    EmbeddingTable table{2};
    CategoryDataset data;
    SevenPoints() {
        table.add("a1", {0, 0});
        table.add("a2", {1, 0});
        table.add("a3", {0, 1});
        table.add("a4", {5, 5});
        table.add("b1", {5, 6});
        table.add("b2", {6, 5});
        table.add("b3", {6, 6});
        data = dataset_of({{"a", {"a1", "a2", "a3", "a4"}}, {"b", {"b1", "b2", "b3"}}});
    }
};

// Full enumeration: sort every other entry by (distance, table row) and
// count category matches among the first min(k, |category|-1).
double brute_topk(const EmbeddingTable& t, const CategoryDataset& d, std::size_t k) {
    std::vector<std::pair<std::size_t, std::size_t>> entries; // (row, category)
    for (std::size_t c = 0; c < d.members.size(); ++c) {
        for (const auto& w : d.members[c]) entries.push_back({t.row_of(w), c});
    }
    double sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::size_t kw = std::min(k, d.members[entries[i].second].size() - 1);
        if (kw == 0) continue;
        std::vector<std::tuple<double, std::size_t, std::size_t>> all;
        for (std::size_t j = 0; j < entries.size(); ++j) {
            if (j == i) continue;
            double dist = 0.0;
            for (std::size_t x = 0; x < t.dim(); ++x) {
                dist += std::pow(t.vector(entries[i].first)[x] - t.vector(entries[j].first)[x], 2);
            }
            all.emplace_back(dist, entries[j].first, entries[j].second);
        }
        std::sort(all.begin(), all.end());
        std::size_t same = 0;
        for (std::size_t n = 0; n < kw; ++n) same += std::get<2>(all[n]) == entries[i].second;
        sum += static_cast<double>(same) / static_cast<double>(kw);
        ++scored;
    }
    return sum / static_cast<double>(scored);
}

EmbeddingTable random_table(const CategoryDataset& d, std::size_t dim, Rng& rng, double spread = 1.0) {
    std::normal_distribution<double> g(0.0, spread);
    EmbeddingTable t(dim);
    for (const auto& m : d.members) {
        for (const auto& w : m) {
            std::vector<double> v(dim);
            for (double& x : v) x = g(rng);
            t.add(w, v);
        }
    }
    return t;
}

CategoryDataset numbered(std::size_t categories, std::size_t members) {
    CategoryDataset d;
    for (std::size_t c = 0; c < categories; ++c) {
        d.names.push_back("c" + std::to_string(c));
        d.members.emplace_back();
        for (std::size_t m = 0; m < members; ++m) d.members.back().push_back("w" + std::to_string(c) + "_" + std::to_string(m));
    }
    return d;
}

TEST(Topk, HandPlacedConfiguration) {
    SevenPoints p;
    // k=2: a1..a3 -> 1, a4 -> 0, b1 and b2 -> 1/2 each, b3 -> 1
    EXPECT_DOUBLE_EQ(topk_score(p.table, p.data, 2).score, 5.0 / 7.0);
    // k=1: ties resolve to the earlier table row (a4 before b3)
    EXPECT_DOUBLE_EQ(topk_score(p.table, p.data, 1).score, 4.0 / 7.0);
    for (std::size_t k = 1; k <= 5; ++k) {
        EXPECT_EQ(topk_score(p.table, p.data, k).score, brute_topk(p.table, p.data, k)) << k;
    }
    EXPECT_EQ(topk_score(p.table, p.data, 3).reduced, 3u);
}

TEST(Topk, PerfectClustersScoreOne) {
    Rng rng(1);
    auto d = numbered(2, 6);
    auto t = random_table(d, 4, rng, 0.01);
    EmbeddingTable shifted(4);
    for (std::size_t r = 0; r < t.size(); ++r) {
        auto v = t.vector(r);
        if (r >= 6) v[0] += 100.0;
        shifted.add(t.word(r), v);
    }
    EXPECT_EQ(topk_score(shifted, d, 3).score, 1.0);
}

TEST(Topk, MatchesBruteForceOnRandomTables) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto d = numbered(3, 4);
        auto t = random_table(d, 3, rng);
        EXPECT_EQ(topk_score(t, d, 3).score, brute_topk(t, d, 3));
    }
}

TEST(Topk, RandomPlacementMatchesChanceExpectation) {
    // m-member categories among M words: a random neighbor shares the
    // category with probability (m-1)/(M-1)
    Rng rng(3);
    auto d = numbered(2, 5);
    double sum = 0.0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) sum += topk_score(random_table(d, 2, rng), d, 3).score;
    EXPECT_NEAR(sum / trials, 4.0 / 9.0, 0.01);
}

TEST(Topk, InvariantUnderIsometry) {
    Rng rng(4);
    auto d = numbered(3, 5);
    auto t = random_table(d, 6, rng);
    Eigen::MatrixXd r(6, 6);
    std::normal_distribution<double> g;
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = g(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ();
    const Eigen::VectorXd shift = Eigen::VectorXd::Random(6) * 10.0;
    EmbeddingTable moved(6);
    for (std::size_t i = 0; i < t.size(); ++i) {
        Eigen::VectorXd v = q * Eigen::Map<const Eigen::VectorXd>(t.vector(i).data(), 6) + shift;
        moved.add(t.word(i), {v.data(), v.data() + 6});
    }
    EXPECT_EQ(topk_score(moved, d, 3).score - topk_score(t, d, 3).score, 0.0);
}

TEST(Topk, MissingWordAndSingletons) {
    SevenPoints p;
    auto d = p.data;
    d.members[1].push_back("zz");
    EXPECT_THROW(topk_score(p.table, d, 3), MissingWord);
    auto singletons = dataset_of({{"a", {"a1"}}, {"b", {"b1"}}});
    EXPECT_THROW(topk_score(p.table, singletons, 3), InsufficientCategory);
}

TEST(Ooo, FurthestFromMeanByHand) {
    const std::vector<double> a{0, 0}, b{1, 0}, c{0, 1}, far{4, 4};
    std::vector<const std::vector<double>*> v{&a, &b, &c, &far};
    // mean (1.25, 1.25): far is at 2*2.75^2, a at 2*1.25^2
    EXPECT_EQ(furthest_from_mean(v), 3u);
    std::vector<const std::vector<double>*> tie{&b, &c};
    EXPECT_EQ(furthest_from_mean(tie), 0u);
}

TEST(Ooo, TrialsMatchBruteForceAndAreWellFormed) {
    Rng rng(5);
    auto d = numbered(3, 12);
    d.members[2].resize(4); // below in_size: never supplies an in-set
    auto t = random_table(d, 5, rng);
    OooOptions o;
    o.seed = 99;
    for (std::size_t i = 0; i < 200; ++i) {
        auto trial = ooo_trial(t, d, o, i);
        ASSERT_EQ(trial.rows.size(), 11u);
        EXPECT_NE(trial.category, 2u);
        std::set<std::size_t> distinct(trial.rows.begin(), trial.rows.end() - 1);
        EXPECT_EQ(distinct.size(), 10u);
        for (std::size_t p = 0; p < 10; ++p) {
            EXPECT_EQ(t.word(trial.rows[p]).substr(0, 3), "w" + std::to_string(trial.category) + "_");
        }
        EXPECT_NE(t.word(trial.rows[10]).substr(0, 3), "w" + std::to_string(trial.category) + "_");
        // brute-force furthest point
        std::vector<double> mean(5, 0.0);
        for (auto r : trial.rows)
            for (std::size_t x = 0; x < 5; ++x) mean[x] += t.vector(r)[x] / 11.0;
        std::size_t best = 0;
        double best_d = -1;
        for (std::size_t p = 0; p < 11; ++p) {
            double dist = 0;
            for (std::size_t x = 0; x < 5; ++x) dist += std::pow(t.vector(trial.rows[p])[x] - mean[x], 2);
            if (dist > best_d) best_d = dist, best = p;
        }
        EXPECT_EQ(trial.chosen, best);
    }
}

TEST(Ooo, ReproducibleUnderSeed) {
    Rng rng(6);
    auto d = numbered(4, 11);
    auto t = random_table(d, 3, rng);
    OooOptions o{300, 10, 7};
    const double first = ooo_score(t, d, o);
    EXPECT_EQ(ooo_score(t, d, o), first);
    EXPECT_EQ(ooo_trial(t, d, o, 17).rows, ooo_trial(t, d, o, 17).rows);
    o.seed = 8;
    EXPECT_NE(ooo_trial(t, d, o, 17).rows, ooo_trial(t, d, {300, 10, 7}, 17).rows);
}

TEST(Ooo, FarOutlierAlwaysFoundCentroidNever) {
    auto d = numbered(2, 10);
    d.members[1].resize(1);
    EmbeddingTable t(2);
    for (int i = 0; i < 10; ++i) {
        const double a = 2 * M_PI * i / 10.0;
        t.add("w0_" + std::to_string(i), {std::cos(a), std::sin(a)});
    }
    t.add("w1_0", {50, 50});
    EXPECT_EQ(ooo_score(t, d, {100, 10, 1}), 1.0);
    EmbeddingTable centered(2);
    for (std::size_t r = 0; r < 10; ++r) centered.add(t.word(r), t.vector(r));
    centered.add("w1_0", {0, 0});
    EXPECT_EQ(ooo_score(centered, d, {100, 10, 1}), 0.0);
}

TEST(Ooo, InvariantUnderTranslationAndScaling) {
    Rng rng(7);
    auto d = numbered(3, 10);
    auto t = random_table(d, 4, rng);
    EmbeddingTable moved(4);
    for (std::size_t r = 0; r < t.size(); ++r) {
        auto v = t.vector(r);
        for (double& x : v) x = 4.0 * x + 3.0;
        moved.add(t.word(r), v);
    }
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_EQ(ooo_trial(t, d, {}, i).chosen, ooo_trial(moved, d, {}, i).chosen);
    }
}

TEST(Ooo, NeedsALargeEnoughCategory) {
    auto d = numbered(3, 9);
    Rng rng(8);
    auto t = random_table(d, 2, rng);
    EXPECT_THROW(ooo_score(t, d), InsufficientCategory);
    EXPECT_NO_THROW(ooo_score(t, d, {10, 9, 1}));
}

TEST(Probe, FoldsArePartition) {
    auto folds = make_folds(23, 5, 3);
    std::vector<std::size_t> all;
    for (const auto& f : folds) {
        EXPECT_TRUE(f.size() == 4 || f.size() == 5);
        all.insert(all.end(), f.begin(), f.end());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(23);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
    EXPECT_EQ(make_folds(23, 5, 3), folds);
    EXPECT_THROW(make_folds(3, 5, 1), ConfigError);
}

std::vector<DeclensionItem> declension_fixture(EmbeddingTable& table, std::size_t n, bool separable, Rng& rng) {
    std::normal_distribution<double> g;
    std::vector<DeclensionItem> items;
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % 3);
        std::vector<double> nom(6), gen(6);
        for (double& x : nom) x = g(rng);
        for (double& x : gen) x = g(rng);
        if (separable) gen[0] = 4.0 * cls + 0.1 * g(rng);
        const auto id = std::to_string(i);
        table.add("n" + id, nom);
        table.add("g" + id, gen);
        items.push_back({"n" + id, "g" + id, "class" + std::to_string(cls)});
    }
    return items;
}

TEST(Probe, SeparableSyntheticIsLearned) {
    Rng rng(9);
    EmbeddingTable t(6);
    auto items = declension_fixture(t, 300, true, rng);
    auto r = declension_probe(t, items);
    EXPECT_GT(r.accuracy, 0.99);
    EXPECT_EQ(r.fold_accuracy.size(), 5u);
    EXPECT_EQ(r.classes, (std::vector<std::string>{"class0", "class1", "class2"}));
}

TEST(Probe, ShuffledLabelsStayAtChance) {
    Rng rng(10);
    EmbeddingTable t(6);
    auto items = declension_fixture(t, 300, true, rng);
    std::vector<std::string> labels;
    for (auto& it : items) labels.push_back(it.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < items.size(); ++i) items[i].label = labels[i];
    const double p = 1.0 / 3.0, sigma = std::sqrt(p * (1 - p) / 300.0);
    EXPECT_NEAR(declension_probe(t, items).accuracy, p, 3 * sigma);
}

TEST(Probe, ParsesTsv) {
    std::istringstream in("rosa\trosae\ta\n\nservus\tservi\to\r\n");
    auto items = parse_declension(in);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[1].genitive, "servi");
    EXPECT_EQ(items[1].label, "o");
    std::istringstream bad("rosa\trosae\n");
    EXPECT_THROW(parse_declension(bad), FormatError);
}

TEST(Chiasmus, DefinitionalDistances) {
    EmbeddingTable t(3);
    t.add("x", {1, 2, 3});
    t.add("e1", {1, 0, 0});
    t.add("e2", {0, 1, 0});
    t.add("e3", {0, 0, 1});
    t.add("e4", {0, 0, -2});
    for (double v : chiasmus_features(t, "x", "x", "x", "x")) EXPECT_NEAR(v, 0.0, 1e-15);
    auto ortho = chiasmus_features(t, "e1", "e2", "e3", "e1");
    EXPECT_EQ(ortho, (std::array<double, 6>{1, 1, 0, 1, 1, 1}));
    EXPECT_EQ(chiasmus_features(t, "e3", "e4", "e1", "e2")[0], 2.0);

    Rng rng(11);
    std::normal_distribution<double> g;
    EmbeddingTable r(5);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> v(5);
        for (double& x : v) x = g(rng);
        r.add("w" + std::to_string(i), v);
    }
    auto f = chiasmus_features(r, "w0", "w1", "w2", "w3");
    const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (int k = 0; k < 6; ++k) {
        Eigen::Map<const Eigen::VectorXd> a(r.vector(pairs[k][0]).data(), 5), b(r.vector(pairs[k][1]).data(), 5);
        EXPECT_NEAR(f[k], 1.0 - a.dot(b) / (a.norm() * b.norm()), 1e-12);
    }
    EmbeddingTable scaled(5);
    for (std::size_t i = 0; i < 4; ++i) {
        auto v = r.vector(i);
        for (double& x : v) x *= 0.5 + static_cast<double>(i);
        scaled.add(r.word(i), v);
    }
    auto fs = chiasmus_features(scaled, "w0", "w1", "w2", "w3");
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(fs[k], f[k], 1e-12);
    EXPECT_THROW(chiasmus_features(r, "w0", "w1", "w2", "nope"), MissingWord);
}

TEST(Metaphor, IdentityMapAndSymmetry) {
    MetaphorModel m(3);
    const std::vector<double> a{1, 2, 3}, b{-1, 0.5, 2};
    EXPECT_NEAR(m.distance(a, a), 0.0, 1e-15);
    EXPECT_EQ(m.distance(a, b), m.distance(b, a));
    EXPECT_NEAR(m.distance(a, b), cosine_distance(a, b), 1e-15);
}

// Literal pairs agree on the first four coordinates, metaphorical ones do
// not; the last four coordinates are loud noise the map must suppress.
std::vector<MetaphorPair> metaphor_fixture(EmbeddingTable& t, std::size_t n, Rng& rng) {
    std::normal_distribution<double> g;
    std::vector<MetaphorPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        std::vector<double> adj(8), noun(8);
        for (std::size_t x = 0; x < 4; ++x) {
            adj[x] = g(rng);
            noun[x] = label ? -adj[x] + 0.2 * g(rng) : adj[x] + 0.2 * g(rng);
        }
        for (std::size_t x = 4; x < 8; ++x) {
            adj[x] = 3.0 * g(rng);
            noun[x] = 3.0 * g(rng);
        }
        const auto id = std::to_string(i);
        t.add("adj" + id, adj);
        t.add("noun" + id, noun);
        pairs.push_back({"adj" + id, "noun" + id, label});
    }
    return pairs;
}

TEST(Metaphor, SeparableSyntheticCrossValidates) {
    Rng rng(12);
    EmbeddingTable t(8);
    auto pairs = metaphor_fixture(t, 200, rng);
    auto r = metaphor_cross_validate(t, pairs);
    EXPECT_GT(r.accuracy, 0.95);
    EXPECT_EQ(r.fold_accuracy.size(), 10u);
}

TEST(Metaphor, SingleLabelIsDegenerate) {
    std::vector<std::vector<double>> a{{1, 0}, {0, 1}};
    EXPECT_THROW(MetaphorModel::fit(a, a, {1, 1}, {}), DegenerateTraining);
    std::istringstream bad("red\tidea\t2\n");
    EXPECT_THROW(parse_metaphor_pairs(bad), FormatError);
}

} // namespace
} // namespace rce
