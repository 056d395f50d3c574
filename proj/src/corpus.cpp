#include "lfd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lfd/error.hpp"

namespace lfd::corpus {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string zero_pad(std::size_t value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, value);
    return buf;
}

std::string format_real(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    return in;
}

std::vector<std::vector<TokenId>> ngram_set(std::span<const TokenId> seq, std::size_t n) {
    std::vector<std::vector<TokenId>> grams;
    if (seq.size() < n) return grams;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) grams.emplace_back(seq.begin() + i, seq.begin() + i + n);
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    return grams;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

}  // namespace

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
    for (const char* special : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(special);
}

TokenId Vocabulary::add(std::string_view token) {
    const std::string key(token);
    if (auto it = ids_.find(key); it != ids_.end()) return it->second;
    require(!key.empty(), ErrorKind::ContractViolation, "vocabulary tokens must be nonempty");
    require(key.find('\n') == std::string::npos, ErrorKind::ContractViolation, "vocabulary tokens cannot contain newlines");
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(key);
    ids_.emplace(key, id);
    return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    if (auto it = ids_.find(std::string(token)); it != ids_.end()) return it->second;
    return std::nullopt;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnkToken); }

const std::string& Vocabulary::token(TokenId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::InvalidToken,
            "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    Vocabulary vocab;
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (index < static_cast<std::size_t>(kNumSpecialTokens)) {
            require(line == vocab.tokens_[index], ErrorKind::Parse,
                    path.string() + ":" + std::to_string(index + 1) + ": expected reserved token " + vocab.tokens_[index]);
        } else {
            require(!vocab.find(line).has_value(), ErrorKind::Parse,
                    path.string() + ":" + std::to_string(index + 1) + ": duplicate token");
            vocab.add(line);
        }
        ++index;
    }
    return vocab;
}

std::vector<std::string> WhitespaceTokenizer::split(std::string_view text) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string WhitespaceTokenizer::join(std::span<const std::string> pieces) const {
    std::string out;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i) out += ' ';
        out += pieces[i];
    }
    return out;
}

std::vector<std::string> CharacterTokenizer::split(std::string_view text) const {
    std::vector<std::string> out;
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.emplace_back("_");
        pending_space = false;
        out.emplace_back(1, c);
    }
    return out;
}

std::string CharacterTokenizer::join(std::span<const std::string> pieces) const {
    std::string out;
    for (const auto& p : pieces) out += p == "_" ? " " : p;
    return out;
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& name) {
    if (name == "whitespace") return std::make_unique<WhitespaceTokenizer>();
    if (name == "character") return std::make_unique<CharacterTokenizer>();
    throw Error(ErrorKind::InvalidConfig, "unknown tokenizer '" + name + "'");
}

TokenSequence encode(const Vocabulary& vocab, const Tokenizer& tok, std::string_view text) {
    TokenSequence ids;
    for (const auto& piece : tok.split(text)) ids.push_back(vocab.id(piece));
    return ids;
}

std::string decode(const Vocabulary& vocab, const Tokenizer& tok, std::span<const TokenId> ids) {
    std::vector<std::string> pieces;
    pieces.reserve(ids.size());
    for (TokenId id : ids) pieces.push_back(vocab.token(id));
    return tok.join(pieces);
}

// ---------------------------------------------------------------------------

std::vector<std::string> parse_documents(std::istream& in) {
    std::vector<std::string> docs;
    std::string current, line;
    auto flush = [&] {
        if (!current.empty()) docs.push_back(std::move(current));
        current.clear();
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::all_of(line.begin(), line.end(), is_space)) {
            flush();
            continue;
        }
        if (!current.empty()) current += '\n';
        current += line;
    }
    flush();
    return docs;
}

std::vector<std::string> read_documents(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    return parse_documents(in);
}

std::vector<TextPair> parse_pairs(std::istream& in, const std::string& source) {
    std::vector<TextPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        require(tab != std::string::npos, ErrorKind::Parse, source + ":" + std::to_string(line_no) + ": missing TAB separator");
        require(line.find('\t', tab + 1) == std::string::npos, ErrorKind::Parse,
                source + ":" + std::to_string(line_no) + ": more than two TAB-separated fields");
        pairs.push_back({zero_pad(line_no, 6), line.substr(0, tab), line.substr(tab + 1)});
    }
    return pairs;
}

std::vector<TextPair> read_pairs(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    return parse_pairs(in, path.string());
}

void extend_vocabulary(Vocabulary& vocab, const Tokenizer& tok, std::span<const std::string> texts) {
    for (const auto& text : texts)
        for (const auto& piece : tok.split(text)) vocab.add(piece);
}

std::vector<Example> chunk_documents(std::span<const std::string> docs, const Vocabulary& vocab, const Tokenizer& tok,
                                     std::size_t chunk_len, const std::string& id_prefix) {
    require(chunk_len >= 2, ErrorKind::ContractViolation, "chunk length must be at least 2");
    std::vector<Example> out;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const TokenSequence ids = encode(vocab, tok, docs[d]);
        for (std::size_t start = 0, c = 0; start < ids.size(); start += chunk_len, ++c) {
            const std::size_t end = std::min(ids.size(), start + chunk_len);
            if (end - start < 2) break;
            out.push_back({id_prefix + "-" + zero_pad(d, 5) + "-" + zero_pad(c, 3), {},
                           TokenSequence(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                         ids.begin() + static_cast<std::ptrdiff_t>(end))});
        }
    }
    return out;
}

std::vector<Example> tokenize_pairs(std::span<const TextPair> pairs, const Vocabulary& vocab, const Tokenizer& tok,
                                    std::size_t max_tokens) {
    std::vector<Example> out;
    for (const auto& p : pairs) {
        Example ex{p.id, encode(vocab, tok, p.x), encode(vocab, tok, p.y)};
        if (ex.y.empty()) continue;
        if (max_tokens > 0 && (ex.x.size() > max_tokens || ex.y.size() > max_tokens)) continue;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------

CountTable count_target_tokens(std::span<const Example> examples) {
    CountTable counts;
    for (const auto& ex : examples)
        for (TokenId t : ex.y) ++counts[t];
    return counts;
}

double avg_frequency(std::span<const TokenId> y, const CountTable& counts) {
    require(!y.empty(), ErrorKind::EmptyInput, "avg_frequency of an empty sequence");
    double total = 0.0;
    for (TokenId t : y) {
        auto it = counts.find(t);
        require(it != counts.end() && it->second > 0, ErrorKind::MissingCount,
                "token " + std::to_string(t) + " has no corpus count");
        total += static_cast<double>(it->second);
    }
    return total / static_cast<double>(y.size());
}

double repetition_attr(std::span<const TokenId> seq) {
    require(!seq.empty(), ErrorKind::EmptyInput, "repetition of an empty sequence");
    std::vector<TokenId> seen;
    std::size_t repeats = 0;
    for (TokenId t : seq) {
        auto it = std::lower_bound(seen.begin(), seen.end(), t);
        if (it != seen.end() && *it == t) {
            ++repeats;
        } else {
            seen.insert(it, t);
        }
    }
    return static_cast<double>(repeats) / static_cast<double>(seq.size());
}

double context_overlap(std::span<const TokenId> x, std::span<const TokenId> y, std::size_t n) {
    require(n >= 1, ErrorKind::ContractViolation, "n-gram order must be >= 1");
    require(y.size() >= n, ErrorKind::TooShort, "target shorter than the n-gram order");
    const auto gx = ngram_set(x, n);
    const auto gy = ngram_set(y, n);
    std::size_t shared = 0;
    for (const auto& g : gy) shared += std::binary_search(gx.begin(), gx.end(), g);
    return static_cast<double>(shared) / static_cast<double>(gy.size());
}

std::string to_string(AttributeMetric metric) {
    switch (metric) {
        case AttributeMetric::avg_frequency: return "avg_frequency";
        case AttributeMetric::repetition: return "repetition";
        case AttributeMetric::source_entropy: return "source_entropy";
        case AttributeMetric::context_overlap: return "context_overlap";
    }
    return "unknown";
}

AttributeMetric attribute_metric_from_string(const std::string& name) {
    for (auto m : {AttributeMetric::avg_frequency, AttributeMetric::repetition, AttributeMetric::source_entropy,
                   AttributeMetric::context_overlap})
        if (to_string(m) == name) return m;
    throw Error(ErrorKind::InvalidConfig, "unknown attribute metric '" + name + "'");
}

// ---------------------------------------------------------------------------

ClusterAssignment mean_shift(std::span<const std::vector<double>> points, const MeanShiftOptions& options) {
    require(!points.empty(), ErrorKind::ContractViolation, "mean_shift needs at least one point");
    require(options.bandwidth > 0.0 && std::isfinite(options.bandwidth), ErrorKind::ContractViolation,
            "mean_shift bandwidth must be positive");
    const std::size_t dim = points[0].size();
    for (const auto& p : points) require(p.size() == dim, ErrorKind::ContractViolation, "mean_shift points differ in dimension");

    // Work on a canonical (sorted) copy so the result does not depend on input order.
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });

    const double bw2 = options.bandwidth * options.bandwidth;
    const double tol = options.tolerance_factor * options.bandwidth;
    std::vector<std::vector<double>> modes;
    modes.reserve(points.size());
    for (std::size_t idx : order) {
        std::vector<double> mode = points[idx];
        for (int iter = 0; iter < options.max_iterations; ++iter) {
            std::vector<double> mean(dim, 0.0);
            std::size_t count = 0;
            for (std::size_t j : order) {
                if (squared_distance(points[j], mode) > bw2) continue;
                for (std::size_t k = 0; k < dim; ++k) mean[k] += points[j][k];
                ++count;
            }
            for (double& v : mean) v /= static_cast<double>(count);
            const double shift = std::sqrt(squared_distance(mean, mode));
            mode = std::move(mean);
            if (shift < tol) break;
        }
        modes.push_back(std::move(mode));
    }

    std::vector<std::size_t> parent(modes.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    const double merge2 = 0.25 * bw2;
    for (std::size_t a = 0; a < modes.size(); ++a)
        for (std::size_t b = a + 1; b < modes.size(); ++b)
            if (squared_distance(modes[a], modes[b]) < merge2) {
                const std::size_t ra = find_root(parent, a), rb = find_root(parent, b);
                if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
            }

    std::vector<std::size_t> root_of(points.size());
    for (std::size_t s = 0; s < order.size(); ++s) root_of[order[s]] = find_root(parent, s);

    ClusterAssignment out;
    out.cluster_of.resize(points.size());
    std::vector<std::size_t> label(modes.size(), SIZE_MAX);
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::size_t& l = label[root_of[i]];
        if (l == SIZE_MAX) l = out.cluster_count++;
        out.cluster_of[i] = l;
    }
    return out;
}

std::vector<double> source_entropy(const ClusterAssignment& contexts, const ClusterAssignment& responses) {
    require(contexts.cluster_of.size() == responses.cluster_of.size(), ErrorKind::ContractViolation,
            "context and response assignments cover different members");
    auto check = [](const ClusterAssignment& a, const char* what) {
        std::vector<std::size_t> sizes(a.cluster_count, 0);
        for (std::size_t c : a.cluster_of) {
            require(c < a.cluster_count, ErrorKind::ContractViolation, std::string(what) + " cluster id out of range");
            ++sizes[c];
        }
        for (std::size_t s : sizes) require(s > 0, ErrorKind::ContractViolation, std::string(what) + " assignment has an empty cluster");
    };
    check(contexts, "context");
    check(responses, "response");

    std::vector<std::vector<std::size_t>> joint(responses.cluster_count, std::vector<std::size_t>(contexts.cluster_count, 0));
    std::vector<std::size_t> totals(responses.cluster_count, 0);
    for (std::size_t i = 0; i < responses.cluster_of.size(); ++i) {
        ++joint[responses.cluster_of[i]][contexts.cluster_of[i]];
        ++totals[responses.cluster_of[i]];
    }
    std::vector<double> entropy(responses.cluster_count, 0.0);
    for (std::size_t r = 0; r < responses.cluster_count; ++r) {
        double h = 0.0;
        for (std::size_t count : joint[r]) {
            if (count == 0) continue;
            const double p = static_cast<double>(count) / static_cast<double>(totals[r]);
            h -= p * std::log2(p);
        }
        entropy[r] = h > 0.0 ? h : 0.0;
    }
    std::vector<double> out(responses.cluster_of.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = entropy[responses.cluster_of[i]];
    return out;
}

std::map<std::string, double> source_entropy(std::span<const Example> examples, const ClusterAssignment& contexts,
                                             const ClusterAssignment& responses) {
    require(examples.size() == responses.cluster_of.size(), ErrorKind::ContractViolation,
            "every example must be a cluster member");
    const auto values = source_entropy(contexts, responses);
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < examples.size(); ++i) out[examples[i].id] = values[i];
    return out;
}

std::vector<double> TrigramEmbedder::embed(std::string_view text) const {
    require(dim_ > 0, ErrorKind::ContractViolation, "embedding dimension must be positive");
    const std::string padded = " " + std::string(text) + " ";
    std::vector<double> v(dim_, 0.0);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        std::uint64_t h = 1469598103934665603ULL;
        for (std::size_t k = 0; k < 3; ++k) {
            h ^= static_cast<unsigned char>(padded[i + k]);
            h *= 1099511628211ULL;
        }
        v[h % dim_] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

SplitResult split_by_attribute(std::span<const AttributeScore> scores, std::size_t n) {
    require(2 * n <= scores.size(), ErrorKind::ContractViolation,
            "split size " + std::to_string(n) + " exceeds half of " + std::to_string(scores.size()) + " scores");
    std::vector<const AttributeScore*> sorted;
    sorted.reserve(scores.size());
    for (const auto& s : scores) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(), [](const AttributeScore* a, const AttributeScore* b) {
        if (a->value != b->value) return a->value < b->value;
        return a->example_id < b->example_id;
    });
    SplitResult out;
    for (std::size_t i = 0; i < n; ++i) {
        out.bottom.insert(sorted[i]->example_id);
        out.top.insert(sorted[sorted.size() - 1 - i]->example_id);
    }
    return out;
}

void write_attribute_csv(std::ostream& out, std::span<const AttributeScore> scores) {
    out << "example_id,metric,value\n";
    for (const auto& s : scores) out << s.example_id << ',' << to_string(s.metric) << ',' << format_real(s.value) << '\n';
}

}  // namespace lfd::corpus
