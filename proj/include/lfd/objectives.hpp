#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lfd/json_util.hpp"
#include "lfd/tensor.hpp"
#include "lfd/tokens.hpp"

// Training losses over log-probability matrices ([|y| x V] tensors from
// model::forward / model::score). Every loss is a sum over target positions;
// rescaling by token count is the trainer's business.

namespace lfd::objectives {

/// Per-position negative log-likelihood values with a validity mask.
struct TokenLossVector {
    std::vector<double> values;
    std::vector<std::uint8_t> valid;  // 1 = counts, 0 = padding
};

struct MleResult {
    Tensor loss;  // scalar
    TokenLossVector tokens;
};

/// Sum of losses over a batch together with the number of tokens it covers.
struct BatchLoss {
    Tensor loss;
    std::size_t token_count = 0;
};

MleResult mle_loss(const Tensor& logp, std::span<const TokenId> y);
Tensor focal_loss(const Tensor& logp, std::span<const TokenId> y, double gamma);
Tensor cp_loss(const Tensor& logp, std::span<const TokenId> y, double cp_weight);
/// The penalty uses -log(max(1 - p, 1e-12)) so a candidate at probability one
/// stays finite.
Tensor ul_repeat_loss(const Tensor& logp, std::span<const TokenId> y, double ul_weight);

/// Number of tokens kept out of `valid_count` at ratio R.
std::size_t selection_count(std::size_t valid_count, double R);

/// Mask (per sequence, per position) of the selection_count smallest valid
/// losses across the whole batch; ties go to the earlier (sequence, position).
std::vector<std::vector<std::uint8_t>> small_loss_select(std::span<const TokenLossVector> batch, double R);

/// Batch MLE: per-sequence sums added in sequence order.
BatchLoss mle_batch_loss(std::span<const Tensor> logps, std::span<const TokenSequence> ys);

/// Like mle_batch_loss restricted to the small-loss selection. At R = 1 the
/// result is bit-identical to mle_batch_loss.
BatchLoss truncated_ce_loss(std::span<const Tensor> logps, std::span<const TokenSequence> ys, double R);

/// log p_D + log p_M, elementwise. The expert side is detached.
Tensor poe_sigma(const Tensor& logp_expert, const Tensor& logp_main);
Tensor poe_loss(const Tensor& logp_expert, const Tensor& logp_main, std::span<const TokenId> y);
/// mle_loss(main) + lambda * poe_loss. At lambda = 0 the PoE term is not
/// evaluated, so the value and gradients equal mle_loss bit for bit.
Tensor lfd_loss(const Tensor& logp_expert, const Tensor& logp_main, std::span<const TokenId> y, double lambda);

enum class ObjectiveKind { mle, focal, cp, ul_repeat, truncated_ce, poe_combined, face, dialogue_ul };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

struct ObjectiveConfig {
    ObjectiveKind kind = ObjectiveKind::mle;
    double gamma = 2.0;
    double cp_weight = 2.5;
    double ul_weight = 1.0;
    double R = 0.7;
    double lambda = 0.5;

    void validate() const;
    bool operator==(const ObjectiveConfig&) const = default;
};

Json to_json(const ObjectiveConfig& cfg);
ObjectiveConfig objective_config_from_json(const Json& j, const std::string& context = "objective");

/// Batch loss for `cfg.kind`. `expert_logps` is read only by poe_combined and
/// may be empty otherwise. truncated_ce reports the selected token count.
BatchLoss batch_objective(const ObjectiveConfig& cfg, std::span<const Tensor> logps, std::span<const TokenSequence> ys,
                          std::span<const Tensor> expert_logps = {});

}  // namespace lfd::objectives
