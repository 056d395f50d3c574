#include "lfd/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfd/error.hpp"

namespace lfd::decode {

std::string to_string(Strategy s) { return s == Strategy::greedy ? "greedy" : "top_k"; }

Strategy strategy_from_string(const std::string& name) {
    if (name == "greedy") return Strategy::greedy;
    if (name == "top_k") return Strategy::top_k;
    throw Error(ErrorKind::InvalidConfig, "unknown decoding strategy '" + name + "'");
}

void DecodeConfig::validate() const {
    require(k >= 1, ErrorKind::InvalidConfig, "decode.k must be >= 1");
    require(max_new_tokens >= 1, ErrorKind::InvalidConfig, "decode.max_new_tokens must be >= 1");
    require(prefix_len >= 0, ErrorKind::InvalidConfig, "decode.prefix_len must be >= 0");
    for (TokenId t : stop_tokens) require(t >= 0, ErrorKind::InvalidConfig, "decode.stop_tokens must be token ids");
}

Json to_json(const DecodeConfig& c) {
    return Json{{"strategy", to_string(c.strategy)}, {"k", c.k},       {"max_new_tokens", c.max_new_tokens},
                {"prefix_len", c.prefix_len},        {"seed", c.seed}, {"stop_tokens", c.stop_tokens}};
}

DecodeConfig decode_config_from_json(const Json& j, const std::string& context) {
    DecodeConfig c;
    StrictObject obj(j, context);
    std::string strategy = to_string(c.strategy);
    obj.optional("strategy", strategy)
        .optional("k", c.k)
        .optional("max_new_tokens", c.max_new_tokens)
        .optional("prefix_len", c.prefix_len)
        .optional("seed", c.seed)
        .optional("stop_tokens", c.stop_tokens);
    obj.finish();
    c.strategy = strategy_from_string(strategy);
    c.validate();
    return c;
}

TokenId greedy_step(std::span<const double> logprobs) {
    require(!logprobs.empty(), ErrorKind::EmptyInput, "greedy_step on an empty row");
    std::size_t best = 0;
    for (std::size_t v = 1; v < logprobs.size(); ++v)
        if (logprobs[v] > logprobs[best]) best = v;
    return static_cast<TokenId>(best);
}

TokenId top_k_step(std::span<const double> logprobs, int k, Rng& rng) {
    require(k >= 1, ErrorKind::ContractViolation, "top_k_step: k must be >= 1");
    require(!logprobs.empty(), ErrorKind::EmptyInput, "top_k_step on an empty row");
    const std::size_t keep = std::min(static_cast<std::size_t>(k), logprobs.size());
    std::vector<std::size_t> idx(logprobs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), [&](std::size_t a, std::size_t b) {
        if (logprobs[a] != logprobs[b]) return logprobs[a] > logprobs[b];
        return a < b;
    });
    const double top = logprobs[idx[0]];
    std::vector<double> weights(keep);
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        weights[i] = std::exp(logprobs[idx[i]] - top);
        total += weights[i];
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        acc += weights[i];
        if (u < acc) return static_cast<TokenId>(idx[i]);
    }
    return static_cast<TokenId>(idx[keep - 1]);
}

NextTokenFn model_next_token(const model::ParameterSet& params, const model::ModelConfig& cfg) {
    return [&params, &cfg](std::span<const TokenId> condition, std::span<const TokenId> generated) {
        return model::next_token_logprobs(params, cfg, condition, generated);
    };
}

TokenSequence generate(const NextTokenFn& next, const DecodeConfig& cfg, std::span<const TokenId> condition, Rng& rng) {
    cfg.validate();
    TokenSequence out;
    for (int i = 0; i < cfg.max_new_tokens; ++i) {
        const std::vector<double> row = next(condition, out);
        const TokenId t = cfg.strategy == Strategy::greedy ? greedy_step(row) : top_k_step(row, cfg.k, rng);
        if (std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), t) != cfg.stop_tokens.end()) break;
        out.push_back(t);
    }
    return out;
}

TokenSequence generate(const model::ParameterSet& params, const model::ModelConfig& mcfg, const DecodeConfig& cfg,
                       std::span<const TokenId> condition, Rng& rng) {
    cfg.validate();
    require(static_cast<long>(condition.size()) <= static_cast<long>(mcfg.max_positions) - cfg.max_new_tokens,
            ErrorKind::LengthExceeded,
            "condition of " + std::to_string(condition.size()) + " tokens leaves no room for " +
                std::to_string(cfg.max_new_tokens) + " new tokens within max_positions " + std::to_string(mcfg.max_positions));
    return generate(model_next_token(params, mcfg), cfg, condition, rng);
}

std::uint64_t unit_seed(const DecodeConfig& cfg, std::size_t unit_index) { return mix_seed(cfg.seed, unit_index); }

}  // namespace lfd::decode
