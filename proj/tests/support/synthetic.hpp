#pragma once

#include "rce/corpus.hpp"
#include "rce/tensor.hpp"

#include <string>
#include <vector>

namespace rce::testutil {

// Pronounceable pseudo-word built from consonant-vowel syllables.
inline std::string pseudo_word(Rng& rng, std::size_t syllables) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += consonants[std::uniform_int_distribution<std::size_t>(0, consonants.size() - 1)(rng)];
        w += vowels[std::uniform_int_distribution<std::size_t>(0, vowels.size() - 1)(rng)];
    }
    return w;
}

// `count` distinct pseudo-words of 2-3 syllables, none in `avoid`.
inline std::vector<std::string> pseudo_words(Rng& rng, std::size_t count, std::vector<std::string> avoid = {}) {
    std::vector<std::string> out;
    while (out.size() < count) {
        auto w = pseudo_word(rng, 2 + std::uniform_int_distribution<std::size_t>(0, 1)(rng));
        if (std::find(avoid.begin(), avoid.end(), w) == avoid.end()) {
            avoid.push_back(w);
            out.push_back(w);
        }
    }
    return out;
}

// Sentences whose words all come from one topic's vocabulary.
struct TopicCorpus {
    std::vector<std::vector<std::string>> topics;
    Corpus corpus;
};

// `sentences` sentences of min_len..max_len words drawn from `topics`; the
// topic stays fixed for runs of `run` consecutive sentences and is then
// redrawn.
inline TopicCorpus topic_sentences(Rng& rng, std::vector<std::vector<std::string>> topics, std::size_t sentences,
                                   std::size_t min_len, std::size_t max_len, std::size_t run = 1) {
    TopicCorpus tc;
    tc.topics = std::move(topics);
    const std::size_t topic_count = tc.topics.size();
    const std::size_t words_per_topic = tc.topics.front().size();
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<std::size_t> topic(0, topic_count - 1);
    std::uniform_int_distribution<std::size_t> word(0, words_per_topic - 1);
    std::size_t current = topic(rng);
    for (std::size_t s = 0; s < sentences; ++s) {
        if (s % run == 0) {
            current = topic(rng);
        }
        std::vector<std::string> sentence(len(rng));
        for (auto& w : sentence) {
            w = tc.topics[current][word(rng)];
        }
        tc.corpus.sentences.push_back(std::move(sentence));
    }
    return tc;
}

// Topics of distinct pseudo-words with unrelated spellings.
inline TopicCorpus topic_corpus(Rng& rng, std::size_t topic_count, std::size_t words_per_topic,
                                std::size_t sentences, std::size_t min_len, std::size_t max_len,
                                std::size_t run = 1) {
    std::vector<std::vector<std::string>> topics;
    std::vector<std::string> used;
    for (std::size_t t = 0; t < topic_count; ++t) {
        topics.push_back(pseudo_words(rng, words_per_topic, used));
        used.insert(used.end(), topics.back().begin(), topics.back().end());
    }
    return topic_sentences(rng, std::move(topics), sentences, min_len, max_len, run);
}

// Topics whose words share a topic-specific final syllable, the way words of
// one domain often share derivational endings.
inline TopicCorpus suffixed_topic_corpus(Rng& rng, std::size_t topic_count, std::size_t words_per_topic,
                                         std::size_t sentences, std::size_t min_len, std::size_t max_len,
                                         std::size_t run = 1) {
    std::vector<std::vector<std::string>> topics;
    std::vector<std::string> suffixes;
    while (suffixes.size() < topic_count) {
        auto s = pseudo_word(rng, 1);
        if (std::find(suffixes.begin(), suffixes.end(), s) == suffixes.end()) suffixes.push_back(s);
    }
    for (std::size_t t = 0; t < topic_count; ++t) {
        std::vector<std::string> words;
        while (words.size() < words_per_topic) {
            auto w = pseudo_word(rng, 1 + std::uniform_int_distribution<std::size_t>(0, 1)(rng)) + suffixes[t];
            if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
        }
        topics.push_back(std::move(words));
    }
    return topic_sentences(rng, std::move(topics), sentences, min_len, max_len, run);
}

} // namespace rce::testutil
