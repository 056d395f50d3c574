#pragma once

#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lfd/corpus.hpp"
#include "lfd/model.hpp"

namespace lfd::dynamics {

struct DynamicsCurve {
    std::string metric;
    std::string group;  // "high" or "low"
    std::vector<std::pair<int, double>> points;  // (epoch, mean log-perplexity)
};

struct PplOptions {
    bool sentence_level = false;
    /// Tokens that end a sentence; the terminator belongs to the sentence it ends.
    std::set<TokenId> terminators;
};

/// Mean over units (sentences or whole examples) of the unit's NLL per token,
/// natural log. Each example is scored once with its full context.
double group_log_ppl(const model::ParameterSet& params, const model::ModelConfig& cfg, std::span<const corpus::Example> group,
                     const PplOptions& options = {});

struct EpochModel {
    int epoch = 0;
    model::ModelConfig config;
    model::ParameterSet params;
};

/// High and low curves for the split_by_attribute(n) groups of `scores`
/// (which must all carry the same metric and refer to ids in `examples`).
std::pair<DynamicsCurve, DynamicsCurve> run_dynamics(std::span<const EpochModel> checkpoints,
                                                     std::span<const corpus::Example> examples,
                                                     std::span<const corpus::AttributeScore> scores, std::size_t n,
                                                     const PplOptions& options = {});

/// CSV with header `metric,group,epoch,log_ppl`.
void write_curves_csv(std::ostream& out, std::span<const DynamicsCurve> curves);

}  // namespace lfd::dynamics
