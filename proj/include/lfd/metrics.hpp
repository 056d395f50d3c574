#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfd/json_util.hpp"
#include "lfd/tokens.hpp"

namespace lfd::metrics {

using Corpus = std::vector<TokenSequence>;

struct Perplexity {
    double paper = 0.0;     // mean of 1 / p(y_t)
    double standard = 0.0;  // exp(mean NLL)
    bool overflow = false;  // some target had probability zero in floating point
    std::size_t tokens = 0;
};

/// Both perplexities over every target position of every unit. Input rows
/// hold log p(y_t | ...) of the gold token for one unit.
Perplexity perplexity(std::span<const std::vector<double>> target_logprobs);

double zipf_coefficient(std::span<const TokenSequence> corpus);
/// Same fit from a frequency list (any order).
double zipf_from_frequencies(std::span<const double> frequencies);

inline constexpr std::size_t kUnboundedWindow = std::numeric_limits<std::size_t>::max();

double repetition_gen(std::span<const TokenId> generation, std::size_t window = kUnboundedWindow);
/// Mean of repetition_gen over the nonempty sequences of a corpus.
double mean_repetition(std::span<const TokenSequence> corpus, std::size_t window = kUnboundedWindow);

std::size_t unique_tokens(std::span<const TokenSequence> corpus);

inline constexpr double kKldEpsilon = 1e-9;

/// KL(P_ref || P_gen) of unigram distributions over the union vocabulary,
/// each smoothed as (p + eps) / (1 + |V| eps).
double kld_unigram(std::span<const TokenSequence> generated, std::span<const TokenSequence> reference,
                   double epsilon = kKldEpsilon);

/// Corpus-free sentence BLEU: clipped n-gram precisions for n = 1..max_n,
/// geometric mean, brevity penalty against the closest reference length
/// (shorter wins ties). Orders n >= 2 with no match use (0 + 1) / (total + 1).
double bleu(std::span<const TokenId> candidate, std::span<const TokenSequence> references, int max_n = 4);

double self_bleu(std::span<const TokenSequence> corpus, int max_n = 4);

/// Distinct n-grams over total n-gram occurrences, pooled across the corpus.
double distinct_n(std::span<const TokenSequence> corpus, int n);

double novel_n(std::span<const TokenId> summary, std::span<const TokenId> article, int n);

enum class RougeVariant { r1, r2, rL };
double rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference, RougeVariant variant);

struct MetricReport {
    std::string metric;
    double value = 0.0;
    std::optional<int> n;
    std::map<std::string, double> counts;
    std::string generations;  // source file of the generated text
    std::string references;   // source file of the references, if any
    std::vector<std::string> flags;
};

Json to_json(const MetricReport& r);
/// One JSON object per report, one per line.
void write_reports_jsonl(std::ostream& out, std::span<const MetricReport> reports);
/// Header row of metric names (n appended, e.g. distinct_2) and one row of values.
void write_summary_csv(std::ostream& out, std::span<const MetricReport> reports);

}  // namespace lfd::metrics
