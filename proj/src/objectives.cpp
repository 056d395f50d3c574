#include "lfd/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfd/error.hpp"

namespace lfd::objectives {

namespace {

void check_targets(const Tensor& logp, std::span<const TokenId> y, const char* what) {
    require(logp.defined() && logp.rank() == 2, ErrorKind::ContractViolation, std::string(what) + ": expected a matrix");
    require(logp.rows() == y.size(), ErrorKind::ContractViolation,
            std::string(what) + ": " + std::to_string(logp.rows()) + " rows for " + std::to_string(y.size()) + " targets");
    for (TokenId t : y)
        require(t >= 0 && static_cast<std::size_t>(t) < logp.cols(), ErrorKind::InvalidToken,
                std::string(what) + ": target " + std::to_string(t) + " outside vocabulary");
}

// -log p(y_t) for the listed positions, in order.
Tensor gathered_nll(const Tensor& logp, std::span<const TokenId> y, std::span<const std::size_t> positions) {
    std::vector<std::size_t> cols;
    cols.reserve(positions.size());
    for (std::size_t t : positions) cols.push_back(static_cast<std::size_t>(y[t]));
    return ops::neg(ops::gather(logp, positions, cols));
}

std::vector<std::size_t> all_positions(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
}

Tensor add_all(std::vector<Tensor>& parts) {
    if (parts.empty()) return Tensor::scalar(0.0);
    Tensor total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = ops::add(total, parts[i]);
    return total;
}

Tensor detach(const Tensor& t) { return t.requires_grad() ? t.clone() : t; }

}  // namespace

MleResult mle_loss(const Tensor& logp, std::span<const TokenId> y) {
    check_targets(logp, y, "mle_loss");
    const auto positions = all_positions(y.size());
    const Tensor terms = gathered_nll(logp, y, positions);
    MleResult out{ops::sum(terms), {}};
    out.tokens.values.assign(terms.values().begin(), terms.values().end());
    out.tokens.valid.assign(y.size(), 1);
    return out;
}

Tensor focal_loss(const Tensor& logp, std::span<const TokenId> y, double gamma) {
    require(gamma >= 0.0 && std::isfinite(gamma), ErrorKind::ContractViolation, "focal_loss: gamma must be >= 0");
    check_targets(logp, y, "focal_loss");
    if (gamma == 0.0) return mle_loss(logp, y).loss;
    const auto positions = all_positions(y.size());
    const Tensor nll = gathered_nll(logp, y, positions);
    const Tensor one_minus_p = ops::add_scalar(ops::neg(ops::exp(ops::neg(nll))), 1.0);
    return ops::sum(ops::mul(ops::pow(ops::clamp_min(one_minus_p, 0.0), gamma), nll));
}

Tensor cp_loss(const Tensor& logp, std::span<const TokenId> y, double cp_weight) {
    require(cp_weight >= 0.0 && std::isfinite(cp_weight), ErrorKind::ContractViolation, "cp_loss: weight must be >= 0");
    const Tensor mle = mle_loss(logp, y).loss;
    if (cp_weight == 0.0) return mle;
    // Total entropy is -sum p log p over every row.
    const Tensor entropy = ops::neg(ops::sum(ops::mul(ops::exp(logp), logp)));
    return ops::sub(mle, ops::scale(entropy, cp_weight));
}

Tensor ul_repeat_loss(const Tensor& logp, std::span<const TokenId> y, double ul_weight) {
    require(ul_weight >= 0.0 && std::isfinite(ul_weight), ErrorKind::ContractViolation, "ul_repeat_loss: weight must be >= 0");
    const Tensor mle = mle_loss(logp, y).loss;
    if (ul_weight == 0.0) return mle;
    std::vector<std::size_t> rows, cols;
    std::vector<TokenId> seen;
    for (std::size_t t = 0; t < y.size(); ++t) {
        for (TokenId c : seen)
            if (c != y[t]) {
                rows.push_back(t);
                cols.push_back(static_cast<std::size_t>(c));
            }
        auto it = std::lower_bound(seen.begin(), seen.end(), y[t]);
        if (it == seen.end() || *it != y[t]) seen.insert(it, y[t]);
    }
    if (rows.empty()) return mle;
    const Tensor p = ops::exp(ops::gather(logp, rows, cols));
    const Tensor penalty = ops::neg(ops::sum(ops::log(ops::clamp_min(ops::add_scalar(ops::neg(p), 1.0), 1e-12))));
    return ops::add(mle, ops::scale(penalty, ul_weight));
}

std::size_t selection_count(std::size_t valid_count, double R) {
    require(R > 0.0 && R <= 1.0, ErrorKind::ContractViolation, "selection ratio R must lie in (0, 1]");
    // The small slack keeps products such as 0.29 * 100 from flooring one short.
    const auto k = static_cast<std::size_t>(std::floor(R * static_cast<double>(valid_count) + 1e-9));
    return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(valid_count, 1));
}

std::vector<std::vector<std::uint8_t>> small_loss_select(std::span<const TokenLossVector> batch, double R) {
    require(R > 0.0 && R <= 1.0, ErrorKind::ContractViolation, "selection ratio R must lie in (0, 1]");
    struct Entry {
        double value;
        std::size_t seq, pos;
    };
    std::vector<Entry> pool;
    std::vector<std::vector<std::uint8_t>> mask(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& b = batch[s];
        require(b.valid.empty() || b.valid.size() == b.values.size(), ErrorKind::ContractViolation,
                "small_loss_select: mask and values differ in length");
        mask[s].assign(b.values.size(), 0);
        for (std::size_t t = 0; t < b.values.size(); ++t)
            if (b.valid.empty() || b.valid[t]) pool.push_back({b.values[t], s, t});
    }
    require(!pool.empty(), ErrorKind::EmptyInput, "small_loss_select: no valid tokens in batch");
    const std::size_t k = selection_count(pool.size(), R);
    // Pool order is already (seq, pos), so a stable sort on value breaks ties by it.
    std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });
    for (std::size_t i = 0; i < k; ++i) mask[pool[i].seq][pool[i].pos] = 1;
    return mask;
}

BatchLoss mle_batch_loss(std::span<const Tensor> logps, std::span<const TokenSequence> ys) {
    require(logps.size() == ys.size(), ErrorKind::ContractViolation, "mle_batch_loss: batch sizes differ");
    require(!ys.empty(), ErrorKind::EmptyInput, "mle_batch_loss: empty batch");
    std::vector<Tensor> parts;
    BatchLoss out;
    for (std::size_t s = 0; s < ys.size(); ++s) {
        check_targets(logps[s], ys[s], "mle_batch_loss");
        parts.push_back(ops::sum(gathered_nll(logps[s], ys[s], all_positions(ys[s].size()))));
        out.token_count += ys[s].size();
    }
    out.loss = add_all(parts);
    return out;
}

BatchLoss truncated_ce_loss(std::span<const Tensor> logps, std::span<const TokenSequence> ys, double R) {
    require(logps.size() == ys.size(), ErrorKind::ContractViolation, "truncated_ce_loss: batch sizes differ");
    require(!ys.empty(), ErrorKind::EmptyInput, "truncated_ce_loss: empty batch");
    std::vector<TokenLossVector> losses;
    losses.reserve(ys.size());
    for (std::size_t s = 0; s < ys.size(); ++s) {
        check_targets(logps[s], ys[s], "truncated_ce_loss");
        TokenLossVector v;
        for (std::size_t t = 0; t < ys[s].size(); ++t)
            v.values.push_back(-logps[s].at(t, static_cast<std::size_t>(ys[s][t])));
        v.valid.assign(ys[s].size(), 1);
        losses.push_back(std::move(v));
    }
    const auto mask = small_loss_select(losses, R);
    std::vector<Tensor> parts;
    BatchLoss out;
    for (std::size_t s = 0; s < ys.size(); ++s) {
        std::vector<std::size_t> positions;
        for (std::size_t t = 0; t < mask[s].size(); ++t)
            if (mask[s][t]) positions.push_back(t);
        if (positions.empty()) continue;
        out.token_count += positions.size();
        parts.push_back(ops::sum(gathered_nll(logps[s], ys[s], positions)));
    }
    out.loss = add_all(parts);
    return out;
}

Tensor poe_sigma(const Tensor& logp_expert, const Tensor& logp_main) {
    require(logp_expert.defined() && logp_main.defined() && logp_expert.shape() == logp_main.shape(),
            ErrorKind::ContractViolation, "poe_sigma: expert and main shapes differ");
    return ops::add(detach(logp_expert), logp_main);
}

Tensor poe_loss(const Tensor& logp_expert, const Tensor& logp_main, std::span<const TokenId> y) {
    const Tensor combined = ops::log_softmax_rows(poe_sigma(logp_expert, logp_main));
    check_targets(combined, y, "poe_loss");
    return ops::sum(gathered_nll(combined, y, all_positions(y.size())));
}

Tensor lfd_loss(const Tensor& logp_expert, const Tensor& logp_main, std::span<const TokenId> y, double lambda) {
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::ContractViolation, "lfd_loss: lambda must be >= 0");
    const Tensor mle = mle_loss(logp_main, y).loss;
    if (lambda == 0.0) return mle;
    return ops::add(mle, ops::scale(poe_loss(logp_expert, logp_main, y), lambda));
}

// ---------------------------------------------------------------------------

std::string to_string(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::mle: return "mle";
        case ObjectiveKind::focal: return "focal";
        case ObjectiveKind::cp: return "cp";
        case ObjectiveKind::ul_repeat: return "ul_repeat";
        case ObjectiveKind::truncated_ce: return "truncated_ce";
        case ObjectiveKind::poe_combined: return "poe_combined";
        case ObjectiveKind::face: return "face";
        case ObjectiveKind::dialogue_ul: return "dialogue_ul";
    }
    return "unknown";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
    for (auto k : {ObjectiveKind::mle, ObjectiveKind::focal, ObjectiveKind::cp, ObjectiveKind::ul_repeat,
                   ObjectiveKind::truncated_ce, ObjectiveKind::poe_combined, ObjectiveKind::face, ObjectiveKind::dialogue_ul})
        if (to_string(k) == name) return k;
    throw Error(ErrorKind::InvalidConfig, "unknown objective kind '" + name + "'");
}

void ObjectiveConfig::validate() const {
    require(std::isfinite(gamma) && gamma >= 0.0, ErrorKind::InvalidConfig, "objective.gamma must be >= 0");
    require(std::isfinite(cp_weight) && cp_weight >= 0.0, ErrorKind::InvalidConfig, "objective.cp_weight must be >= 0");
    require(std::isfinite(ul_weight) && ul_weight >= 0.0, ErrorKind::InvalidConfig, "objective.ul_weight must be >= 0");
    require(R > 0.0 && R <= 1.0, ErrorKind::InvalidConfig, "objective.R must lie in (0, 1]");
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::InvalidConfig, "objective.lambda must be >= 0");
}

Json to_json(const ObjectiveConfig& cfg) {
    return Json{{"kind", to_string(cfg.kind)}, {"gamma", cfg.gamma}, {"cp_weight", cfg.cp_weight},
                {"ul_weight", cfg.ul_weight},  {"R", cfg.R},         {"lambda", cfg.lambda}};
}

ObjectiveConfig objective_config_from_json(const Json& j, const std::string& context) {
    ObjectiveConfig cfg;
    StrictObject obj(j, context);
    std::string kind = to_string(cfg.kind);
    obj.optional("kind", kind)
        .optional("gamma", cfg.gamma)
        .optional("cp_weight", cfg.cp_weight)
        .optional("ul_weight", cfg.ul_weight)
        .optional("R", cfg.R)
        .optional("lambda", cfg.lambda);
    obj.finish();
    cfg.kind = objective_kind_from_string(kind);
    cfg.validate();
    return cfg;
}

BatchLoss batch_objective(const ObjectiveConfig& cfg, std::span<const Tensor> logps, std::span<const TokenSequence> ys,
                          std::span<const Tensor> expert_logps) {
    cfg.validate();
    switch (cfg.kind) {
        case ObjectiveKind::mle: return mle_batch_loss(logps, ys);
        case ObjectiveKind::truncated_ce: return truncated_ce_loss(logps, ys, cfg.R);
        case ObjectiveKind::face:
        case ObjectiveKind::dialogue_ul:
            throw Error(ErrorKind::Unimplemented, "objective '" + to_string(cfg.kind) + "' is not implemented");
        default: break;
    }
    require(logps.size() == ys.size(), ErrorKind::ContractViolation, "batch_objective: batch sizes differ");
    require(!ys.empty(), ErrorKind::EmptyInput, "batch_objective: empty batch");
    if (cfg.kind == ObjectiveKind::poe_combined)
        require(expert_logps.size() == ys.size(), ErrorKind::ContractViolation, "poe_combined needs one expert matrix per sequence");
    std::vector<Tensor> parts;
    BatchLoss out;
    for (std::size_t s = 0; s < ys.size(); ++s) {
        switch (cfg.kind) {
            case ObjectiveKind::focal: parts.push_back(focal_loss(logps[s], ys[s], cfg.gamma)); break;
            case ObjectiveKind::cp: parts.push_back(cp_loss(logps[s], ys[s], cfg.cp_weight)); break;
            case ObjectiveKind::ul_repeat: parts.push_back(ul_repeat_loss(logps[s], ys[s], cfg.ul_weight)); break;
            case ObjectiveKind::poe_combined: parts.push_back(lfd_loss(expert_logps[s], logps[s], ys[s], cfg.lambda)); break;
            default: break;
        }
        out.token_count += ys[s].size();
    }
    out.loss = add_all(parts);
    return out;
}

}  // namespace lfd::objectives
