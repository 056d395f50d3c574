#include "lfd/dynamics.hpp"

#include <cstdio>
#include <map>
#include <ostream>

#include "lfd/error.hpp"

namespace lfd::dynamics {

double group_log_ppl(const model::ParameterSet& params, const model::ModelConfig& cfg, std::span<const corpus::Example> group,
                     const PplOptions& options) {
    require(!group.empty(), ErrorKind::EmptyInput, "group_log_ppl of an empty group");
    double total = 0.0;
    std::size_t units = 0;
    for (const auto& ex : group) {
        const auto logp = model::score(params, cfg, ex.x, ex.y);
        double unit_sum = 0.0;
        std::size_t unit_len = 0;
        for (std::size_t t = 0; t < ex.y.size(); ++t) {
            unit_sum -= logp.at(t, static_cast<std::size_t>(ex.y[t]));
            ++unit_len;
            const bool boundary = options.sentence_level && options.terminators.contains(ex.y[t]);
            if (boundary || t + 1 == ex.y.size()) {
                total += unit_sum / static_cast<double>(unit_len);
                ++units;
                unit_sum = 0.0;
                unit_len = 0;
            }
        }
    }
    return total / static_cast<double>(units);
}

std::pair<DynamicsCurve, DynamicsCurve> run_dynamics(std::span<const EpochModel> checkpoints,
                                                     std::span<const corpus::Example> examples,
                                                     std::span<const corpus::AttributeScore> scores, std::size_t n,
                                                     const PplOptions& options) {
    require(checkpoints.size() >= 2, ErrorKind::ContractViolation, "dynamics needs at least two checkpoints");
    require(!scores.empty(), ErrorKind::EmptyInput, "dynamics needs attribute scores");
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
        require(checkpoints[i].epoch > checkpoints[i - 1].epoch, ErrorKind::ContractViolation,
                "checkpoint epochs must be strictly increasing");
    for (const auto& s : scores)
        require(s.metric == scores[0].metric, ErrorKind::ContractViolation, "dynamics scores mix attribute metrics");

    std::map<std::string, const corpus::Example*> by_id;
    for (const auto& ex : examples) by_id[ex.id] = &ex;
    const auto split = corpus::split_by_attribute(scores, n);
    auto collect = [&](const std::set<std::string>& ids) {
        std::vector<corpus::Example> group;
        for (const auto& id : ids) {
            auto it = by_id.find(id);
            require(it != by_id.end(), ErrorKind::ContractViolation, "scored example " + id + " is not in the data set");
            group.push_back(*it->second);
        }
        return group;
    };
    const auto high_group = collect(split.top);
    const auto low_group = collect(split.bottom);

    const std::string metric = corpus::to_string(scores[0].metric);
    DynamicsCurve high{metric, "high", {}}, low{metric, "low", {}};
    for (const auto& ck : checkpoints) {
        high.points.emplace_back(ck.epoch, group_log_ppl(ck.params, ck.config, high_group, options));
        low.points.emplace_back(ck.epoch, group_log_ppl(ck.params, ck.config, low_group, options));
    }
    return {high, low};
}

void write_curves_csv(std::ostream& out, std::span<const DynamicsCurve> curves) {
    out << "metric,group,epoch,log_ppl\n";
    char buf[40];
    for (const auto& c : curves)
        for (const auto& [epoch, value] : c.points) {
            std::snprintf(buf, sizeof buf, "%.17g", value);
            out << c.metric << ',' << c.group << ',' << epoch << ',' << buf << '\n';
        }
}

}  // namespace lfd::dynamics
