#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfd/corpus.hpp"
#include "lfd/json_util.hpp"
#include "lfd/model.hpp"
#include "lfd/objectives.hpp"

namespace lfd::trainer {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Adam with bias correction. Moments are kept per parameter name; tensors
/// that do not require gradients are left untouched.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(model::ParameterSet& params, double lr);
    /// Same update for a loose list of tensors (keyed by position).
    void step(std::span<Tensor> tensors, double lr);
    void reset();
    std::uint64_t steps() const noexcept { return t_; }

private:
    void update(const std::string& key, Tensor& t, double lr);

    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>> state_;
};

/// Linear warmup from 0 to base_lr over `warmup` steps, then linear decay to 0
/// at `total_steps`.
double schedule_lr(std::size_t step, std::size_t total_steps, std::size_t warmup, double base_lr);

struct LfDConfig {
    int epochs = 10;
    int batch_size = 16;
    double learning_rate = 1e-3;
    int warmup_steps = 0;
    AdamConfig adam;
    std::uint64_t seed = 0;

    // Degenerative schedule. Step counts override the epoch multiples when >= 0.
    double K_epochs = 1.0;
    double H_epochs = 1.0;
    long K_steps = -1;
    long H_steps = -1;
    double R = 0.7;
    bool reset_optimizer_between_phases = false;

    double lambda = 0.5;

    int eval_every = 500;  // validation every n steps; 0 = only at epoch ends
    double divergence_factor = 10.0;

    void validate() const;
    bool operator==(const LfDConfig&) const = default;
};

Json to_json(const LfDConfig& cfg);
LfDConfig lfd_config_from_json(const Json& j, const std::string& context = "train");

struct StepRecord {
    std::size_t step = 0;  // 1-based
    std::string phase;
    double loss = 0.0;  // batch loss divided by the number of tokens it covers
    std::size_t selected_token_count = 0;
    double learning_rate = 0.0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    std::size_t end_step = 0;
    double train_loss = 0.0;
    std::optional<double> validation_loss;
    std::string checkpoint_path;
};

struct EvalRecord {
    std::size_t step = 0;
    double validation_loss = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<EvalRecord> evals;
    int best_epoch = 0;  // 0 when no epoch completed

    bool operator==(const TrainLog&) const;
};

Json to_json(const StepRecord& r);
Json to_json(const EpochRecord& r);
Json to_json(const EvalRecord& r);
/// One JSON object per line: every step, eval and epoch record in the order
/// they happened, then a summary line.
void write_jsonl(std::ostream& out, const TrainLog& log);

struct TrainHooks {
    /// Epoch checkpoints go to <dir>/epoch-NNN.ckpt when set.
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Receives each JSONL record as it is produced (including a divergence
    /// record before DivergenceDetected is thrown).
    std::ostream* log_sink = nullptr;
    /// Starting weights instead of init_parameters (fine-tuning).
    const model::ParameterSet* initial = nullptr;
};

struct TrainResult {
    model::ParameterSet params;  // after the last step
    model::ParameterSet best;    // lowest validation loss, earliest epoch on ties
    TrainLog log;
};

using Examples = std::span<const corpus::Example>;

/// Mean per-token NLL of the MLE objective, no dropout.
double validation_loss(const model::ParameterSet& params, const model::ModelConfig& mcfg, Examples data);

std::size_t steps_per_epoch(std::size_t examples, int batch_size);

TrainResult train_standard(const LfDConfig& cfg, const model::ModelConfig& mcfg, const objectives::ObjectiveConfig& objective,
                           Examples train, Examples valid, const TrainHooks& hooks = {});

/// K standard MLE steps, then H truncated-CE steps at ratio R. The returned
/// params (and best) are frozen.
TrainResult train_degenerative(const LfDConfig& cfg, const model::ModelConfig& mcfg, Examples train, Examples valid,
                               const TrainHooks& hooks = {});

/// Trains the main model on mle + lambda * poe against a frozen expert.
TrainResult train_lfd_main(const LfDConfig& cfg, const model::ModelConfig& mcfg, const model::ParameterSet& expert,
                           const model::ModelConfig& expert_cfg, Examples train, Examples valid, const TrainHooks& hooks = {});

}  // namespace lfd::trainer
