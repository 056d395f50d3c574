#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfd/corpus.hpp"

namespace lfd::fixtures {

/// Synthetic language-modeling corpus. A `degenerate_fraction` of documents
/// are built from a few repeated phrases over the most frequent words; the
/// rest are sentences sampled from a Zipf(1) distribution over the whole
/// lexicon.
struct LmOptions {
    std::size_t train_docs = 200;
    std::size_t valid_docs = 20;
    std::size_t test_docs = 40;
    std::size_t lexicon = 240;
    std::size_t head_words = 16;
    double degenerate_fraction = 0.5;
    std::uint64_t seed = 1;
};

struct LmCorpus {
    std::vector<std::string> train, valid, test;
};

LmCorpus make_lm_corpus(const LmOptions& options = {});

/// Toy dialogue set: topical contexts; a `generic_fraction` of responses come
/// from a handful of generic replies, the rest reuse context words.
struct DialogueOptions {
    std::size_t train = 200;
    std::size_t valid = 20;
    std::size_t test = 40;
    double generic_fraction = 0.5;
    std::uint64_t seed = 2;
};

struct DialogueCorpus {
    std::vector<corpus::TextPair> train, valid, test;
};

DialogueCorpus make_dialogue_corpus(const DialogueOptions& options = {});

/// Deterministic pseudo-words, most frequent first.
std::vector<std::string> make_lexicon(std::size_t n, std::uint64_t seed);

void write_documents(const std::filesystem::path& path, const std::vector<std::string>& docs);
void write_pairs(const std::filesystem::path& path, const std::vector<corpus::TextPair>& pairs);

/// Writes lm_{train,valid,test}.txt, dialogue_{train,valid,test}.tsv and
/// example run configs (lm.json, lfd.json, dialogue.json) into `dir`.
void write_all(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace lfd::fixtures
