#pragma once

#include "rce/corpus.hpp"
#include "rce/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rce {

// ------------------------------------------------------------------ TopK

struct TopkResult {
    double score = 0.0;               // mean over scored words, in [0, 1]
    std::vector<double> per_word;     // dataset entry order; NaN when skipped
    std::size_t scored = 0;
    std::size_t reduced = 0;          // entries whose k had to shrink
};

/// For every dataset entry, the fraction of its k nearest other entries
/// (squared Euclidean distance, ties by table row) sharing its category.
/// k shrinks to |category| - 1 for small categories; singleton categories
/// are skipped. Throws MissingWord for an entry absent from the table.
TopkResult topk_score(const EmbeddingTable& table, const CategoryDataset& dataset, std::size_t k = 3);

// ----------------------------------------------------------- Odd-One-Out

struct OooOptions {
    std::size_t set_count = 1000;
    std::size_t in_size = 10;
    std::uint64_t seed = 1;
};

/// One drawn set: `rows` holds table rows, the in-category words first and
/// the outlier last; `chosen` is the position furthest from the set mean.
struct OooTrial {
    std::size_t category = 0;
    std::vector<std::size_t> rows;
    std::size_t chosen = 0;
    bool correct() const { return chosen + 1 == rows.size(); }
};

/// Position of the vector furthest (squared Euclidean) from the mean of all
/// given vectors; ties resolve to the earliest position.
std::size_t furthest_from_mean(std::span<const std::vector<double>* const> vectors);

/// Trial `index`, drawn with its own generator seeded by seed + index. Only
/// categories with at least in_size members supply the in-set; the outlier
/// is uniform over the members of every other category.
OooTrial ooo_trial(const EmbeddingTable& table, const CategoryDataset& dataset, const OooOptions& options,
                   std::size_t index);

/// Fraction of set_count trials whose furthest word is the outlier.
/// InsufficientCategory unless some category reaches in_size members.
double ooo_score(const EmbeddingTable& table, const CategoryDataset& dataset, const OooOptions& options = {});

// ------------------------------------------------------------ Declension

struct DeclensionItem {
    std::string nominative;
    std::string genitive;
    std::string label;
};

/// TSV `nominative<TAB>genitive<TAB>class`.
std::vector<DeclensionItem> parse_declension(std::istream& in);
std::vector<DeclensionItem> load_declension(const std::filesystem::path& path);

struct ProbeOptions {
    std::size_t folds = 5;
    std::size_t hidden = 64;
    std::size_t epochs = 300;
    double lr = 0.01;
    std::uint64_t seed = 1;
};

struct ProbeResult {
    double accuracy = 0.0;             // pooled over all held-out predictions
    std::vector<double> fold_accuracy;
    std::vector<std::string> classes;  // label order of the classifier
};

/// Seeded shuffle of 0..n-1 cut into `folds` disjoint, near-equal parts.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed);

/// Cross-validated accuracy of a one-hidden-layer classifier on standardized
/// features, trained full-batch with Adam. Labels are class indices.
ProbeResult mlp_cross_validate(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                               std::size_t class_count, const ProbeOptions& options);

/// Classifies concat(v_nominative, v_genitive) into declension classes.
ProbeResult declension_probe(const EmbeddingTable& table, const std::vector<DeclensionItem>& items,
                             const ProbeOptions& options = {});

// -------------------------------------------------------------- Chiasmus

/// 1 - cos(a, b). NonFiniteValue when either vector has zero length.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Cosine distances of the pairs 12, 13, 14, 23, 24, 34.
std::array<double, 6> chiasmus_features(const EmbeddingTable& table, const std::string& w1, const std::string& w2,
                                        const std::string& w3, const std::string& w4);

// ------------------------------------------------------------ Metaphoricity

struct MetaphorPair {
    std::string adjective;
    std::string noun;
    int label = 0; // 1: metaphorical
};

/// TSV `adjective<TAB>noun<TAB>label` with label 0 or 1.
std::vector<MetaphorPair> parse_metaphor_pairs(std::istream& in);
std::vector<MetaphorPair> load_metaphor_pairs(const std::filesystem::path& path);

struct MetaphorOptions {
    std::size_t epochs = 300;
    double lr = 0.01;
    std::size_t folds = 10;
    std::uint64_t seed = 1;
};

/// A shared linear map into a metaphoricity space; the cosine distance of the
/// mapped adjective and noun, passed through a learned logistic calibration,
/// is the probability that the pair is metaphorical.
class MetaphorModel {
public:
    /// Identity map with calibration slope 1 and offset 0.
    explicit MetaphorModel(std::size_t dim);

    /// Logistic-loss fit; DegenerateTraining when all labels agree.
    static MetaphorModel fit(const std::vector<std::vector<double>>& adjectives,
                             const std::vector<std::vector<double>>& nouns, const std::vector<int>& labels,
                             const MetaphorOptions& options);

    double distance(std::span<const double> adjective, std::span<const double> noun) const;
    double score(std::span<const double> adjective, std::span<const double> noun) const;

    std::size_t dim() const { return dim_; }
    const Tensor& transform() const { return transform_; }

private:
    std::size_t dim_;
    Tensor transform_; // [d, d]; row vectors are mapped as v * M
    Tensor slope_, offset_;
};

struct MetaphorResult {
    double accuracy = 0.0;
    std::vector<double> fold_accuracy;
};

MetaphorResult metaphor_cross_validate(const EmbeddingTable& table, const std::vector<MetaphorPair>& pairs,
                                       const MetaphorOptions& options = {});

} // namespace rce
