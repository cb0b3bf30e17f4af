#include "rce/eval.hpp"

#include "rce/error.hpp"
#include "rce/nn.hpp"
#include "rce/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rce {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "'");
    }
    return in;
}

// Splits a non-blank line into exactly `n` tab-separated fields.
bool split_tabs(std::string line, std::size_t n, std::vector<std::string>& fields) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    fields.clear();
    if (line.find_first_not_of(" \t") == std::string::npos) {
        return false;
    }
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) {
            break;
        }
        start = tab + 1;
    }
    if (fields.size() != n || std::any_of(fields.begin(), fields.end(), [](auto& f) { return f.empty(); })) {
        throw FormatError("expected " + std::to_string(n) + " non-empty tab-separated fields in '" + line + "'");
    }
    return true;
}

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

Tensor matrix_of(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> pick) {
    const std::size_t d = rows.empty() ? 0 : rows[0].size();
    std::vector<double> values;
    values.reserve(pick.size() * d);
    for (std::size_t r : pick) {
        values.insert(values.end(), rows[r].begin(), rows[r].end());
    }
    return Tensor::from({pick.size(), d}, std::move(values));
}

std::vector<int> row_argmax(const Tensor& scores) {
    const std::size_t C = scores.dim(-1);
    std::vector<int> out(scores.numel() / C);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const auto row = scores.data().subspan(r * C, C);
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& held_out) {
    std::vector<char> out_mask(n, 0);
    for (std::size_t i : held_out) {
        out_mask[i] = 1;
    }
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
        if (!out_mask[i]) {
            rest.push_back(i);
        }
    }
    return rest;
}

} // namespace

// ------------------------------------------------------------------ TopK

TopkResult topk_score(const EmbeddingTable& table, const CategoryDataset& dataset, std::size_t k) {
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    struct Entry {
        std::size_t row, category;
    };
    std::vector<Entry> entries;
    for (std::size_t c = 0; c < dataset.members.size(); ++c) {
        for (const auto& w : dataset.members[c]) {
            entries.push_back({table.row_of(w), c});
        }
    }
    TopkResult result;
    result.per_word.assign(entries.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> order;
    double total = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::size_t members = dataset.members[entries[i].category].size();
        const std::size_t kw = std::min(k, members - 1);
        if (kw == 0) {
            continue;
        }
        if (kw < k) {
            ++result.reduced;
        }
        const auto& v = table.vector(entries[i].row);
        std::vector<double> dist(entries.size());
        for (std::size_t j = 0; j < entries.size(); ++j) {
            dist[j] = squared_distance(v, table.vector(entries[j].row));
        }
        auto closer = [&](std::size_t a, std::size_t b) {
            if (dist[a] != dist[b]) return dist[a] < dist[b];
            if (entries[a].row != entries[b].row) return entries[a].row < entries[b].row;
            return a < b;
        };
        // the query entry itself never counts as a neighbor
        order.clear();
        for (std::size_t j = 0; j < entries.size(); ++j) {
            if (j != i) order.push_back(j);
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<long>(kw), order.end(), closer);
        std::size_t same = 0;
        for (std::size_t n = 0; n < kw; ++n) {
            same += entries[order[n]].category == entries[i].category ? 1 : 0;
        }
        result.per_word[i] = static_cast<double>(same) / static_cast<double>(kw);
        total += result.per_word[i];
        ++result.scored;
    }
    if (result.scored == 0) {
        throw InsufficientCategory("every category has a single member; TopK needs neighbors");
    }
    result.score = total / static_cast<double>(result.scored);
    return result;
}

// ----------------------------------------------------------- Odd-One-Out

std::size_t furthest_from_mean(std::span<const std::vector<double>* const> vectors) {
    if (vectors.empty()) {
        throw ConfigError("furthest_from_mean of an empty set");
    }
    const std::size_t d = vectors[0]->size();
    std::vector<double> mean(d, 0.0);
    for (const auto* v : vectors) {
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] += (*v)[i];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(vectors.size());
    }
    std::size_t best = 0;
    double best_dist = -1.0;
    for (std::size_t p = 0; p < vectors.size(); ++p) {
        const double dist = squared_distance(*vectors[p], mean);
        if (dist > best_dist) {
            best_dist = dist;
            best = p;
        }
    }
    return best;
}

OooTrial ooo_trial(const EmbeddingTable& table, const CategoryDataset& dataset, const OooOptions& options,
                   std::size_t index) {
    if (options.in_size == 0) {
        throw ConfigError("the in-category set needs at least one word");
    }
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < dataset.members.size(); ++c) {
        if (dataset.members[c].size() >= options.in_size) {
            eligible.push_back(c);
        }
    }
    if (eligible.empty() || dataset.members.size() < 2) {
        throw InsufficientCategory("no category has " + std::to_string(options.in_size) +
                                   " members, or fewer than two categories");
    }
    Rng rng(options.seed + index);
    OooTrial trial;
    trial.category = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
    const auto& members = dataset.members[trial.category];

    std::vector<std::size_t> pick(members.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    for (std::size_t i = 0; i < options.in_size; ++i) {
        trial.rows.push_back(table.row_of(members[pick[i]]));
    }

    const std::unordered_set<std::string> inside(members.begin(), members.end());
    std::vector<const std::string*> outside;
    for (std::size_t c = 0; c < dataset.members.size(); ++c) {
        if (c == trial.category) continue;
        for (const auto& w : dataset.members[c]) {
            if (!inside.contains(w)) {
                outside.push_back(&w);
            }
        }
    }
    if (outside.empty()) {
        throw InsufficientCategory("no word outside category '" + dataset.names[trial.category] + "'");
    }
    const auto* outlier = outside[std::uniform_int_distribution<std::size_t>(0, outside.size() - 1)(rng)];
    trial.rows.push_back(table.row_of(*outlier));

    std::vector<const std::vector<double>*> vectors;
    for (std::size_t r : trial.rows) {
        vectors.push_back(&table.vector(r));
    }
    trial.chosen = furthest_from_mean(vectors);
    return trial;
}

double ooo_score(const EmbeddingTable& table, const CategoryDataset& dataset, const OooOptions& options) {
    if (options.set_count == 0) {
        throw ConfigError("set_count must be positive");
    }
    std::size_t correct = 0;
    for (std::size_t t = 0; t < options.set_count; ++t) {
        correct += ooo_trial(table, dataset, options, t).correct() ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(options.set_count);
}

// ------------------------------------------------------------ Declension

std::vector<DeclensionItem> parse_declension(std::istream& in) {
    std::vector<DeclensionItem> items;
    std::vector<std::string> f;
    for (std::string line; std::getline(in, line);) {
        if (split_tabs(line, 3, f)) {
            items.push_back({f[0], f[1], f[2]});
        }
    }
    return items;
}

std::vector<DeclensionItem> load_declension(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_declension(in);
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
    if (folds < 2 || folds > n) {
        throw ConfigError("cannot split " + std::to_string(n) + " items into " + std::to_string(folds) + " folds");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out(folds);
    for (std::size_t i = 0; i < n; ++i) {
        out[i % folds].push_back(order[i]);
    }
    return out;
}

ProbeResult mlp_cross_validate(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                               std::size_t class_count, const ProbeOptions& options) {
    if (features.size() != labels.size() || features.empty()) {
        throw ShapeMismatch("probe needs one label per feature row");
    }
    if (class_count < 2) {
        throw DegenerateTraining("a classifier needs at least two classes");
    }
    const std::size_t n = features.size();
    const std::size_t d = features[0].size();
    ProbeResult result;
    std::size_t hits = 0;
    const auto folds = make_folds(n, options.folds, options.seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& test = folds[f];
        const auto train = complement(n, test);

        // standardize with training-fold statistics
        std::vector<double> mu(d, 0.0), sd(d, 0.0);
        for (std::size_t r : train) {
            for (std::size_t j = 0; j < d; ++j) mu[j] += features[r][j];
        }
        for (double& m : mu) m /= static_cast<double>(train.size());
        for (std::size_t r : train) {
            for (std::size_t j = 0; j < d; ++j) sd[j] += (features[r][j] - mu[j]) * (features[r][j] - mu[j]);
        }
        for (double& s : sd) s = std::sqrt(s / static_cast<double>(train.size())) + 1e-8;
        auto standardized = [&](const std::vector<std::size_t>& rows) {
            Tensor x = matrix_of(features, rows);
            auto v = x.data();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) v[i * d + j] = (v[i * d + j] - mu[j]) / sd[j];
            }
            return x;
        };
        const Tensor x_train = standardized(train);
        const Tensor x_test = standardized(test);
        std::vector<int> y_train;
        for (std::size_t r : train) y_train.push_back(labels[r]);

        Rng rng(options.seed + 1000 + f);
        Linear hidden(d, options.hidden, rng);
        Linear out(options.hidden, class_count, rng);
        ParamList named = hidden.parameters("hidden");
        for (auto& p : out.parameters("out")) named.push_back(p);
        auto params = tensors_of(named);
        AdamState adam;
        for (std::size_t e = 0; e < options.epochs; ++e) {
            zero_grads(params);
            Tensor loss = cross_entropy(out.forward(relu(hidden.forward(x_train))), y_train);
            loss.backward();
            adam_step(params, adam, options.lr);
        }
        NoGradGuard no_grad;
        const auto pred = row_argmax(out.forward(relu(hidden.forward(x_test))));
        std::size_t fold_hits = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            fold_hits += pred[i] == labels[test[i]] ? 1 : 0;
        }
        hits += fold_hits;
        result.fold_accuracy.push_back(static_cast<double>(fold_hits) / static_cast<double>(test.size()));
    }
    result.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    return result;
}

ProbeResult declension_probe(const EmbeddingTable& table, const std::vector<DeclensionItem>& items,
                             const ProbeOptions& options) {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    std::vector<std::string> classes;
    std::unordered_map<std::string, int> class_id;
    for (const auto& it : items) {
        x.push_back(concat(table.at(it.nominative), table.at(it.genitive)));
        auto [pos, inserted] = class_id.emplace(it.label, static_cast<int>(classes.size()));
        if (inserted) {
            classes.push_back(it.label);
        }
        y.push_back(pos->second);
    }
    auto result = mlp_cross_validate(x, y, classes.size(), options);
    result.classes = std::move(classes);
    return result;
}

// -------------------------------------------------------------- Chiasmus

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeMismatch("cosine distance of vectors with different lengths");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw NonFiniteValue("cosine distance involving a zero vector is undefined");
    }
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::array<double, 6> chiasmus_features(const EmbeddingTable& table, const std::string& w1, const std::string& w2,
                                        const std::string& w3, const std::string& w4) {
    const std::array<const std::vector<double>*, 4> v{&table.at(w1), &table.at(w2), &table.at(w3), &table.at(w4)};
    std::array<double, 6> out{};
    std::size_t k = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) {
            out[k++] = cosine_distance(*v[i], *v[j]);
        }
    }
    return out;
}

// ------------------------------------------------------------ Metaphoricity

std::vector<MetaphorPair> parse_metaphor_pairs(std::istream& in) {
    std::vector<MetaphorPair> pairs;
    std::vector<std::string> f;
    for (std::string line; std::getline(in, line);) {
        if (!split_tabs(line, 3, f)) {
            continue;
        }
        if (f[2] != "0" && f[2] != "1") {
            throw FormatError("metaphor label must be 0 or 1, got '" + f[2] + "'");
        }
        pairs.push_back({f[0], f[1], f[2] == "1" ? 1 : 0});
    }
    return pairs;
}

std::vector<MetaphorPair> load_metaphor_pairs(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_metaphor_pairs(in);
}

MetaphorModel::MetaphorModel(std::size_t dim)
    : dim_(dim), slope_(Tensor::full({1}, 1.0)), offset_(Tensor::full({1}, 0.0)) {
    transform_ = Tensor::zeros({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) {
        transform_.data()[i * dim + i] = 1.0;
    }
}

namespace {

Tensor metaphor_logits(const Tensor& adj, const Tensor& noun, const Tensor& m, const Tensor& slope,
                       const Tensor& offset) {
    Tensor cos = cosine_similarity(matmul(adj, m), matmul(noun, m));
    Tensor dist = sub(Tensor::full(cos.shape(), 1.0), cos);
    return add(mul(dist, slope), offset);
}

} // namespace

MetaphorModel MetaphorModel::fit(const std::vector<std::vector<double>>& adjectives,
                                 const std::vector<std::vector<double>>& nouns, const std::vector<int>& labels,
                                 const MetaphorOptions& options) {
    if (adjectives.empty() || adjectives.size() != nouns.size() || nouns.size() != labels.size()) {
        throw ShapeMismatch("metaphor training needs matching adjective, noun and label lists");
    }
    const bool any_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool any_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (!any_pos || !any_neg) {
        throw DegenerateTraining("metaphor training data holds a single label");
    }
    MetaphorModel model(adjectives[0].size());
    model.transform_.set_requires_grad(true);
    model.slope_.set_requires_grad(true);
    model.offset_.set_requires_grad(true);
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    const Tensor a = matrix_of(adjectives, all);
    const Tensor n = matrix_of(nouns, all);
    const std::vector<double> y(labels.begin(), labels.end());
    std::vector<Tensor> params{model.transform_, model.slope_, model.offset_};
    AdamState adam;
    for (std::size_t e = 0; e < options.epochs; ++e) {
        zero_grads(params);
        Tensor loss = bce_with_logits(metaphor_logits(a, n, model.transform_, model.slope_, model.offset_), y);
        loss.backward();
        adam_step(params, adam, options.lr);
    }
    model.transform_ = model.transform_.detach();
    model.slope_ = model.slope_.detach();
    model.offset_ = model.offset_.detach();
    return model;
}

double MetaphorModel::distance(std::span<const double> adjective, std::span<const double> noun) const {
    NoGradGuard no_grad;
    const Tensor a = matmul(Tensor::from({1, dim_}, {adjective.begin(), adjective.end()}), transform_);
    const Tensor n = matmul(Tensor::from({1, dim_}, {noun.begin(), noun.end()}), transform_);
    return cosine_distance(a.data(), n.data());
}

double MetaphorModel::score(std::span<const double> adjective, std::span<const double> noun) const {
    const double z = slope_[0] * distance(adjective, noun) + offset_[0];
    return 1.0 / (1.0 + std::exp(-z));
}

MetaphorResult metaphor_cross_validate(const EmbeddingTable& table, const std::vector<MetaphorPair>& pairs,
                                       const MetaphorOptions& options) {
    std::vector<std::vector<double>> adj, noun;
    std::vector<int> labels;
    for (const auto& p : pairs) {
        adj.push_back(table.at(p.adjective));
        noun.push_back(table.at(p.noun));
        labels.push_back(p.label);
    }
    MetaphorResult result;
    std::size_t hits = 0;
    for (const auto& test : make_folds(pairs.size(), options.folds, options.seed)) {
        const auto train = complement(pairs.size(), test);
        std::vector<std::vector<double>> ta, tn;
        std::vector<int> tl;
        for (std::size_t r : train) {
            ta.push_back(adj[r]);
            tn.push_back(noun[r]);
            tl.push_back(labels[r]);
        }
        const auto model = MetaphorModel::fit(ta, tn, tl, options);
        std::size_t fold_hits = 0;
        for (std::size_t r : test) {
            const int pred = model.score(adj[r], noun[r]) >= 0.5 ? 1 : 0;
            fold_hits += pred == labels[r] ? 1 : 0;
        }
        hits += fold_hits;
        result.fold_accuracy.push_back(static_cast<double>(fold_hits) / static_cast<double>(test.size()));
    }
    result.accuracy = static_cast<double>(hits) / static_cast<double>(pairs.size());
    return result;
}

} // namespace rce
