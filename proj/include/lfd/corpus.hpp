#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lfd/tokens.hpp"

namespace lfd::corpus {

// ---------------------------------------------------------------------------
// Vocabulary and tokenization

class Vocabulary {
public:
    /// Starts with the reserved <pad> <bos> <eos> <unk> entries.
    Vocabulary();

    TokenId add(std::string_view token);
    std::optional<TokenId> find(std::string_view token) const;
    /// Unknown tokens map to kUnkToken.
    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    std::size_t size() const noexcept { return tokens_.size(); }

    /// One token per line, in id order.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::string> split(std::string_view text) const = 0;
    virtual std::string join(std::span<const std::string> pieces) const = 0;
    virtual std::string name() const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
public:
    std::vector<std::string> split(std::string_view text) const override;
    std::string join(std::span<const std::string> pieces) const override;
    std::string name() const override { return "whitespace"; }
};

/// One token per byte, whitespace runs collapsed to a single "_" token.
class CharacterTokenizer final : public Tokenizer {
public:
    std::vector<std::string> split(std::string_view text) const override;
    std::string join(std::span<const std::string> pieces) const override;
    std::string name() const override { return "character"; }
};

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& name);

TokenSequence encode(const Vocabulary& vocab, const Tokenizer& tok, std::string_view text);
std::string decode(const Vocabulary& vocab, const Tokenizer& tok, std::span<const TokenId> ids);

// ---------------------------------------------------------------------------
// Examples and dataset files

struct Example {
    std::string id;
    TokenSequence x;  // condition; empty for plain language modeling
    TokenSequence y;  // target, never empty
};

/// A TAB-separated record before tokenization.
struct TextPair {
    std::string id;
    std::string x;
    std::string y;
};

/// Plain text, documents separated by one or more blank lines.
std::vector<std::string> read_documents(const std::filesystem::path& path);
std::vector<std::string> parse_documents(std::istream& in);

/// `condition<TAB>target` per line (dialogue history turns joined by
/// " __eou__ "). Throws Parse with the 1-based line number on malformed lines.
std::vector<TextPair> read_pairs(const std::filesystem::path& path);
std::vector<TextPair> parse_pairs(std::istream& in, const std::string& source = "<stream>");

/// Grows `vocab` with every token of `texts`, in first-seen order.
void extend_vocabulary(Vocabulary& vocab, const Tokenizer& tok, std::span<const std::string> texts);

/// Splits each document into consecutive chunks of at most `chunk_len` tokens;
/// trailing chunks shorter than two tokens are dropped. Ids are
/// "<prefix>-<doc>-<chunk>" with zero padding.
std::vector<Example> chunk_documents(std::span<const std::string> docs, const Vocabulary& vocab, const Tokenizer& tok,
                                     std::size_t chunk_len, const std::string& id_prefix);

/// Tokenizes pairs, dropping any whose condition or target has more than
/// `max_tokens` tokens (0 disables the filter) or whose target is empty.
std::vector<Example> tokenize_pairs(std::span<const TextPair> pairs, const Vocabulary& vocab, const Tokenizer& tok,
                                    std::size_t max_tokens);

// ---------------------------------------------------------------------------
// Degenerative attributes

using CountTable = std::unordered_map<TokenId, std::size_t>;

/// Counts of every target token in `examples`.
CountTable count_target_tokens(std::span<const Example> examples);

double avg_frequency(std::span<const TokenId> y, const CountTable& counts);

/// Fraction of positions whose token already occurred earlier in the sequence.
double repetition_attr(std::span<const TokenId> seq);

/// |N(x) ∩ N(y)| / |N(y)| over the sets of token n-grams.
double context_overlap(std::span<const TokenId> x, std::span<const TokenId> y, std::size_t n = 2);

enum class AttributeMetric { avg_frequency, repetition, source_entropy, context_overlap };

std::string to_string(AttributeMetric metric);
AttributeMetric attribute_metric_from_string(const std::string& name);

struct AttributeScore {
    std::string example_id;
    AttributeMetric metric;
    double value;
};

/// Member i belongs to cluster cluster_of[i]; ids are dense in [0, cluster_count).
struct ClusterAssignment {
    std::vector<std::size_t> cluster_of;
    std::size_t cluster_count = 0;
};

struct MeanShiftOptions {
    double bandwidth = 0.5;
    double tolerance_factor = 1e-4;  // converged once a shift is below factor * bandwidth
    int max_iterations = 300;
};

/// Flat-kernel mean shift. Every point climbs to the mean of the input points
/// within `bandwidth` of its current position; modes closer than
/// bandwidth / 2 are merged transitively. Cluster ids are numbered by the
/// first member in input order.
ClusterAssignment mean_shift(std::span<const std::vector<double>> points, const MeanShiftOptions& options);

/// Entropy (bits) of the context-cluster distribution paired with each
/// example's response cluster. Member i of both assignments is example i.
std::vector<double> source_entropy(const ClusterAssignment& contexts, const ClusterAssignment& responses);

/// Keyed by example id; examples[i] is member i of both assignments.
std::map<std::string, double> source_entropy(std::span<const Example> examples, const ClusterAssignment& contexts,
                                             const ClusterAssignment& responses);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Hashed bag of character trigrams (text padded with one space on each side),
/// L2-normalized. Deterministic across platforms.
class TrigramEmbedder final : public Embedder {
public:
    explicit TrigramEmbedder(std::size_t dim = 256) : dim_(dim) {}
    std::vector<double> embed(std::string_view text) const override;

private:
    std::size_t dim_;
};

struct SplitResult {
    std::set<std::string> top;
    std::set<std::string> bottom;
};

/// n highest and n lowest scores; ties ordered by example id.
SplitResult split_by_attribute(std::span<const AttributeScore> scores, std::size_t n);

/// CSV with header `example_id,metric,value`; values printed with 17
/// significant digits.
void write_attribute_csv(std::ostream& out, std::span<const AttributeScore> scores);

}  // namespace lfd::corpus
