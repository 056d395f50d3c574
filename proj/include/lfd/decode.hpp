#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lfd/json_util.hpp"
#include "lfd/model.hpp"
#include "lfd/rng.hpp"
#include "lfd/tokens.hpp"

namespace lfd::decode {

enum class Strategy { greedy, top_k };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct DecodeConfig {
    Strategy strategy = Strategy::top_k;
    int k = 20;
    int max_new_tokens = 100;
    int prefix_len = 50;  // condition length for LM prefix continuation
    std::uint64_t seed = 0;
    std::vector<TokenId> stop_tokens{kEosToken};

    void validate() const;
    bool operator==(const DecodeConfig&) const = default;
};

Json to_json(const DecodeConfig& cfg);
DecodeConfig decode_config_from_json(const Json& j, const std::string& context = "decode");

/// Argmax; the smallest index wins exact ties.
TokenId greedy_step(std::span<const double> logprobs);

/// Samples from the k most probable tokens renormalized (ties in probability
/// ranked by index). Consumes exactly one uniform draw.
TokenId top_k_step(std::span<const double> logprobs, int k, Rng& rng);

/// Log-probabilities of the next token given the condition and the tokens
/// generated so far.
using NextTokenFn = std::function<std::vector<double>(std::span<const TokenId> condition, std::span<const TokenId> generated)>;

NextTokenFn model_next_token(const model::ParameterSet& params, const model::ModelConfig& cfg);

/// Autoregressive continuation. Stops after max_new_tokens or when a stop
/// token is produced (the stop token is not included in the output).
TokenSequence generate(const NextTokenFn& next, const DecodeConfig& cfg, std::span<const TokenId> condition, Rng& rng);

/// As above with the length precondition |condition| <= max_positions -
/// max_new_tokens checked against the model.
TokenSequence generate(const model::ParameterSet& params, const model::ModelConfig& mcfg, const DecodeConfig& cfg,
                       std::span<const TokenId> condition, Rng& rng);

/// Seed of the generator used for the i-th unit of an evaluation set.
std::uint64_t unit_seed(const DecodeConfig& cfg, std::size_t unit_index);

}  // namespace lfd::decode
