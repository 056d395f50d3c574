#include "lfd/fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "lfd/error.hpp"
#include "lfd/json_util.hpp"
#include "lfd/rng.hpp"

namespace lfd::fixtures {

namespace {

const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
const char* const kVowels[] = {"a", "e", "i", "o", "u"};

const std::vector<std::string> kGenericReplies{"i do not know .", "that is fine .", "ok sure .", "me too ."};

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

// Exactly round(fraction * n) flags set, in shuffled positions.
std::vector<bool> mixed_flags(std::size_t n, double fraction, Rng& rng) {
    const auto set = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<bool> flags(n, false);
    for (std::size_t i = 0; i < set && i < n; ++i) flags[i] = true;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.index(i);
        const bool tmp = flags[i - 1];
        flags[i - 1] = flags[j];
        flags[j] = tmp;
    }
    return flags;
}

class ZipfSampler {
public:
    explicit ZipfSampler(std::size_t n) : cumulative_(n) {
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) cumulative_[r] = total += 1.0 / static_cast<double>(r + 1);
        for (double& c : cumulative_) c /= total;
    }
    std::size_t operator()(Rng& rng) const {
        const double u = rng.uniform();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

std::string diverse_document(const std::vector<std::string>& lexicon, const ZipfSampler& zipf, Rng& rng) {
    std::vector<std::string> words;
    const std::size_t sentences = 4 + rng.index(3);
    for (std::size_t s = 0; s < sentences; ++s) {
        const std::size_t len = 5 + rng.index(6);
        for (std::size_t i = 0; i < len; ++i) words.push_back(lexicon[zipf(rng)]);
        words.push_back(".");
    }
    return join(words);
}

std::string degenerate_document(const std::vector<std::string>& lexicon, std::size_t head, Rng& rng) {
    std::vector<std::string> phrases[2];
    for (auto& p : phrases)
        for (int i = 0; i < 3; ++i) p.push_back(lexicon[rng.index(head)]);
    std::vector<std::string> words;
    const std::size_t sentences = 4 + rng.index(3);
    for (std::size_t s = 0; s < sentences; ++s) {
        const auto& p = phrases[rng.index(2)];
        for (int rep = 0; rep < 2; ++rep) words.insert(words.end(), p.begin(), p.end());
        words.push_back(".");
    }
    return join(words);
}

std::vector<std::string> lm_split(std::size_t n, const LmOptions& o, const std::vector<std::string>& lexicon,
                                  const ZipfSampler& zipf, Rng& rng) {
    const auto degenerate = mixed_flags(n, o.degenerate_fraction, rng);
    std::vector<std::string> docs;
    for (std::size_t i = 0; i < n; ++i)
        docs.push_back(degenerate[i] ? degenerate_document(lexicon, o.head_words, rng) : diverse_document(lexicon, zipf, rng));
    return docs;
}

std::vector<corpus::TextPair> dialogue_split(std::size_t n, const DialogueOptions& o, const std::vector<std::string>& lexicon,
                                             Rng& rng) {
    constexpr std::size_t kTopics = 8, kTopicWords = 10, kHead = 16;
    const auto generic = mixed_flags(n, o.generic_fraction, rng);
    std::vector<corpus::TextPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t topic = rng.index(kTopics);
        auto topic_word = [&] { return lexicon[kHead + topic * kTopicWords + rng.index(kTopicWords)]; };
        std::vector<std::string> context;
        const std::size_t len = 6 + rng.index(5);
        for (std::size_t k = 0; k < len; ++k) context.push_back(rng.uniform() < 0.7 ? topic_word() : lexicon[rng.index(kHead)]);
        context.push_back(rng.index(2) == 0 ? "?" : ".");
        std::string response;
        if (generic[i]) {
            response = kGenericReplies[rng.index(kGenericReplies.size())];
        } else {
            std::vector<std::string> words;
            const std::size_t copied = 2 + rng.index(2);
            for (std::size_t k = 0; k < copied; ++k) words.push_back(context[rng.index(len)]);
            const std::size_t fresh = 2 + rng.index(3);
            for (std::size_t k = 0; k < fresh; ++k) words.push_back(topic_word());
            words.push_back(".");
            response = join(words);
        }
        out.push_back({std::to_string(i + 1), join(context), response});
    }
    return out;
}

Json base_config(const std::string& task) {
    const bool lm = task == "lm";
    Json data = lm ? Json{{"train", "lm_train.txt"}, {"valid", "lm_valid.txt"}, {"test", "lm_test.txt"}, {"chunk_len", 32}}
                   : Json{{"train", "dialogue_train.tsv"}, {"valid", "dialogue_valid.tsv"}, {"test", "dialogue_test.tsv"}};
    return Json{{"task", task},
                {"data", data},
                {"model",
                 {{"arch", lm ? "decoder_only" : "encoder_decoder"},
                  {"layers", 2},
                  {"model_dim", 32},
                  {"heads", 4},
                  {"ffn_dim", 64},
                  {"max_positions", 64},
                  {"dropout", 0.0},
                  {"init_std", 0.05}}},
                {"train", {{"epochs", 10}, {"batch_size", 16}, {"learning_rate", 0.003}, {"eval_every", 0}}},
                {"decode", {{"strategy", "top_k"}, {"k", 20}, {"max_new_tokens", 30}, {"prefix_len", 16}}}};
}

void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

std::vector<std::string> make_lexicon(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < n) {
        std::string w;
        const std::size_t syllables = 1 + rng.index(3);
        for (std::size_t s = 0; s < syllables; ++s) {
            w += kOnsets[rng.index(std::size(kOnsets))];
            w += kVowels[rng.index(std::size(kVowels))];
        }
        if (seen.insert(w).second) out.push_back(w);
    }
    return out;
}

LmCorpus make_lm_corpus(const LmOptions& o) {
    require(o.head_words >= 1 && o.head_words <= o.lexicon, ErrorKind::ContractViolation, "head words must fit in the lexicon");
    const auto lexicon = make_lexicon(o.lexicon, o.seed);
    const ZipfSampler zipf(o.lexicon);
    Rng rng(o.seed ^ 0x4c4dULL);
    LmCorpus c;
    c.train = lm_split(o.train_docs, o, lexicon, zipf, rng);
    c.valid = lm_split(o.valid_docs, o, lexicon, zipf, rng);
    c.test = lm_split(o.test_docs, o, lexicon, zipf, rng);
    return c;
}

DialogueCorpus make_dialogue_corpus(const DialogueOptions& o) {
    const auto lexicon = make_lexicon(96, o.seed);
    Rng rng(o.seed ^ 0x444cULL);
    DialogueCorpus c;
    c.train = dialogue_split(o.train, o, lexicon, rng);
    c.valid = dialogue_split(o.valid, o, lexicon, rng);
    c.test = dialogue_split(o.test, o, lexicon, rng);
    return c;
}

void write_documents(const std::filesystem::path& path, const std::vector<std::string>& docs) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    for (std::size_t i = 0; i < docs.size(); ++i) out << (i ? "\n" : "") << docs[i] << '\n';
}

void write_pairs(const std::filesystem::path& path, const std::vector<corpus::TextPair>& pairs) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    for (const auto& p : pairs) out << p.x << '\t' << p.y << '\n';
}

void write_all(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    LmOptions lo;
    lo.seed = seed;
    const auto lm = make_lm_corpus(lo);
    write_documents(dir / "lm_train.txt", lm.train);
    write_documents(dir / "lm_valid.txt", lm.valid);
    write_documents(dir / "lm_test.txt", lm.test);

    DialogueOptions dopt;
    dopt.seed = seed + 1;
    const auto dialogue = make_dialogue_corpus(dopt);
    write_pairs(dir / "dialogue_train.tsv", dialogue.train);
    write_pairs(dir / "dialogue_valid.tsv", dialogue.valid);
    write_pairs(dir / "dialogue_test.tsv", dialogue.test);

    Json lm_cfg = base_config("lm");
    lm_cfg["attributes"] = {{"metrics", {"avg_frequency", "repetition"}}};
    lm_cfg["dynamics"] = {{"sentence_level", true}, {"terminators", {"."}}};
    write_json(dir / "lm.json", lm_cfg);

    Json lfd_cfg = base_config("lm");
    lfd_cfg["objective"] = {{"kind", "poe_combined"}, {"R", 0.7}, {"lambda", 0.5}};
    write_json(dir / "lfd.json", lfd_cfg);

    Json dialogue_cfg = base_config("dialogue");
    dialogue_cfg["attributes"] = {{"metrics", {"avg_frequency", "repetition", "source_entropy", "context_overlap"}},
                                  {"bandwidth", 0.8}};
    write_json(dir / "dialogue.json", dialogue_cfg);
}

}  // namespace lfd::fixtures
