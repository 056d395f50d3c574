#include "lfd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "lfd/error.hpp"

namespace lfd::metrics {

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts ngram_counts(std::span<const TokenId> seq, int n) {
    NgramCounts counts;
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= seq.size(); ++i) ++counts[std::vector<TokenId>(seq.begin() + i, seq.begin() + i + un)];
    return counts;
}

std::size_t ngram_total(std::span<const TokenId> seq, int n) {
    const auto un = static_cast<std::size_t>(n);
    return seq.size() >= un ? seq.size() - un + 1 : 0;
}

std::size_t clipped_overlap(const NgramCounts& a, const NgramCounts& b) {
    std::size_t shared = 0;
    for (const auto& [g, c] : a)
        if (auto it = b.find(g); it != b.end()) shared += std::min(c, it->second);
    return shared;
}

double f1(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Perplexity perplexity(std::span<const std::vector<double>> target_logprobs) {
    Perplexity out;
    double nll_sum = 0.0, recip_sum = 0.0;
    for (const auto& unit : target_logprobs)
        for (double lp : unit) {
            require(!std::isnan(lp) && lp <= 0.0, ErrorKind::InvalidValue, "target log-probabilities must lie in [-inf, 0]");
            const double recip = std::exp(-lp);
            if (!std::isfinite(recip)) out.overflow = true;
            nll_sum += -lp;
            recip_sum += recip;
            ++out.tokens;
        }
    require(out.tokens > 0, ErrorKind::EmptyInput, "perplexity needs at least one target token");
    const double n = static_cast<double>(out.tokens);
    out.paper = recip_sum / n;
    out.standard = std::exp(nll_sum / n);
    if (!std::isfinite(out.standard)) out.overflow = true;
    return out;
}

double zipf_from_frequencies(std::span<const double> frequencies) {
    std::vector<double> f;
    for (double v : frequencies)
        if (v >= 1.0) f.push_back(v);
    require(f.size() >= 2, ErrorKind::Undefined, "zipf coefficient needs at least two token types");
    std::sort(f.begin(), f.end(), std::greater<>());
    const double m = static_cast<double>(f.size());
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        sx += std::log(static_cast<double>(i + 1));
        sy += std::log(f[i]);
    }
    const double mx = sx / m, my = sy / m;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double dx = std::log(static_cast<double>(i + 1)) - mx;
        sxy += dx * (std::log(f[i]) - my);
        sxx += dx * dx;
    }
    const double slope = sxy / sxx;
    return slope == 0.0 ? 0.0 : -slope;
}

double zipf_coefficient(std::span<const TokenSequence> corpus) {
    std::unordered_map<TokenId, std::size_t> counts;
    for (const auto& seq : corpus)
        for (TokenId t : seq) ++counts[t];
    std::vector<double> f;
    f.reserve(counts.size());
    for (const auto& [t, c] : counts) f.push_back(static_cast<double>(c));
    return zipf_from_frequencies(f);
}

double repetition_gen(std::span<const TokenId> generation, std::size_t window) {
    require(!generation.empty(), ErrorKind::EmptyInput, "repetition of an empty generation");
    require(window >= 1, ErrorKind::ContractViolation, "repetition window must be >= 1");
    std::size_t repeats = 0;
    if (window == kUnboundedWindow) {
        std::unordered_set<TokenId> seen;
        for (TokenId t : generation) repeats += !seen.insert(t).second;
    } else {
        for (std::size_t t = 0; t < generation.size(); ++t) {
            const std::size_t lo = t > window ? t - window : 0;
            repeats += std::find(generation.begin() + lo, generation.begin() + t, generation[t]) != generation.begin() + t;
        }
    }
    return static_cast<double>(repeats) / static_cast<double>(generation.size());
}

double mean_repetition(std::span<const TokenSequence> corpus, std::size_t window) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& seq : corpus) {
        if (seq.empty()) continue;
        total += repetition_gen(seq, window);
        ++n;
    }
    require(n > 0, ErrorKind::EmptyInput, "mean repetition over a corpus with no tokens");
    return total / static_cast<double>(n);
}

std::size_t unique_tokens(std::span<const TokenSequence> corpus) {
    std::unordered_set<TokenId> types;
    for (const auto& seq : corpus) types.insert(seq.begin(), seq.end());
    return types.size();
}

double kld_unigram(std::span<const TokenSequence> generated, std::span<const TokenSequence> reference, double epsilon) {
    require(epsilon > 0.0, ErrorKind::ContractViolation, "kld epsilon must be positive");
    std::map<TokenId, std::pair<double, double>> counts;  // (reference, generated)
    double n_ref = 0.0, n_gen = 0.0;
    for (const auto& seq : reference)
        for (TokenId t : seq) {
            counts[t].first += 1.0;
            n_ref += 1.0;
        }
    for (const auto& seq : generated)
        for (TokenId t : seq) {
            counts[t].second += 1.0;
            n_gen += 1.0;
        }
    require(n_ref > 0.0 && n_gen > 0.0, ErrorKind::EmptyInput, "kld needs nonempty generated and reference corpora");
    const double norm = 1.0 + static_cast<double>(counts.size()) * epsilon;
    double kl = 0.0;
    for (const auto& [t, c] : counts) {
        const double p = (c.first / n_ref + epsilon) / norm;
        const double q = (c.second / n_gen + epsilon) / norm;
        kl += p * std::log(p / q);
    }
    return std::max(kl, 0.0);
}

double bleu(std::span<const TokenId> candidate, std::span<const TokenSequence> references, int max_n) {
    require(max_n >= 1, ErrorKind::ContractViolation, "bleu order must be >= 1");
    require(!candidate.empty(), ErrorKind::EmptyInput, "bleu of an empty candidate");
    require(!references.empty(), ErrorKind::ContractViolation, "bleu needs at least one reference");
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const NgramCounts cand = ngram_counts(candidate, n);
        NgramCounts best;
        for (const auto& ref : references)
            for (const auto& [g, c] : ngram_counts(ref, n)) best[g] = std::max(best[g], c);
        const double matched = static_cast<double>(clipped_overlap(cand, best));
        const double total = static_cast<double>(ngram_total(candidate, n));
        if (matched == 0.0) {
            if (n == 1) return 0.0;
            log_sum += std::log(1.0 / (total + 1.0));
        } else {
            log_sum += std::log(matched / total);
        }
    }
    const double c = static_cast<double>(candidate.size());
    double r = static_cast<double>(references[0].size());
    for (const auto& ref : references) {
        const double len = static_cast<double>(ref.size());
        if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / static_cast<double>(max_n));
}

double self_bleu(std::span<const TokenSequence> corpus, int max_n) {
    require(corpus.size() >= 2, ErrorKind::TooFew, "self-BLEU needs at least two generations");
    double total = 0.0;
    std::vector<TokenSequence> others;
    others.reserve(corpus.size() - 1);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        others.clear();
        for (std::size_t j = 0; j < corpus.size(); ++j)
            if (j != i) others.push_back(corpus[j]);
        total += bleu(corpus[i], others, max_n);
    }
    return total / static_cast<double>(corpus.size());
}

double distinct_n(std::span<const TokenSequence> corpus, int n) {
    require(n >= 1, ErrorKind::ContractViolation, "distinct order must be >= 1");
    std::set<std::vector<TokenId>> distinct;
    std::size_t total = 0;
    const auto un = static_cast<std::size_t>(n);
    for (const auto& seq : corpus)
        for (std::size_t i = 0; i + un <= seq.size(); ++i) {
            distinct.emplace(seq.begin() + i, seq.begin() + i + un);
            ++total;
        }
    require(total > 0, ErrorKind::Undefined, "distinct-" + std::to_string(n) + " of a corpus without n-grams");
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double novel_n(std::span<const TokenId> summary, std::span<const TokenId> article, int n) {
    require(n >= 1, ErrorKind::ContractViolation, "novel order must be >= 1");
    require(summary.size() >= static_cast<std::size_t>(n), ErrorKind::TooShort, "summary shorter than the n-gram order");
    const NgramCounts source = ngram_counts(article, n);
    std::size_t novel = 0, total = 0;
    for (const auto& [g, c] : ngram_counts(summary, n)) {
        total += c;
        if (!source.contains(g)) novel += c;
    }
    return static_cast<double>(novel) / static_cast<double>(total);
}

double rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference, RougeVariant variant) {
    require(!candidate.empty() && !reference.empty(), ErrorKind::EmptyInput, "rouge needs nonempty inputs");
    if (variant == RougeVariant::rL) {
        std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
        for (std::size_t i = 1; i <= candidate.size(); ++i) {
            for (std::size_t j = 1; j <= reference.size(); ++j)
                cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
            std::swap(prev, cur);
        }
        const double lcs = static_cast<double>(prev[reference.size()]);
        return f1(lcs / static_cast<double>(candidate.size()), lcs / static_cast<double>(reference.size()));
    }
    const int n = variant == RougeVariant::r1 ? 1 : 2;
    const double tc = static_cast<double>(ngram_total(candidate, n));
    const double tr = static_cast<double>(ngram_total(reference, n));
    if (tc == 0.0 || tr == 0.0) return 0.0;
    const double overlap = static_cast<double>(clipped_overlap(ngram_counts(candidate, n), ngram_counts(reference, n)));
    return f1(overlap / tc, overlap / tr);
}

Json to_json(const MetricReport& r) {
    Json j{{"metric", r.metric}};
    j["value"] = std::isfinite(r.value) ? Json(r.value) : Json(std::isnan(r.value) ? "nan" : (r.value > 0 ? "inf" : "-inf"));
    if (r.n) j["n"] = *r.n;
    j["counts"] = r.counts;
    j["generations"] = r.generations;
    j["references"] = r.references;
    j["flags"] = r.flags;
    return j;
}

void write_reports_jsonl(std::ostream& out, std::span<const MetricReport> reports) {
    for (const auto& r : reports) out << to_json(r).dump() << '\n';
}

void write_summary_csv(std::ostream& out, std::span<const MetricReport> reports) {
    for (std::size_t i = 0; i < reports.size(); ++i) {
        if (i) out << ',';
        out << reports[i].metric;
        if (reports[i].n) out << '_' << *reports[i].n;
    }
    out << '\n';
    for (std::size_t i = 0; i < reports.size(); ++i) {
        if (i) out << ',';
        out << format_real(reports[i].value);
    }
    out << '\n';
}

}  // namespace lfd::metrics
