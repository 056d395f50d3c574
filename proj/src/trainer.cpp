#include "lfd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lfd/error.hpp"
#include "lfd/rng.hpp"

namespace lfd::trainer {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4452;

struct Phase {
    std::string name;
    std::size_t steps = 0;
    objectives::ObjectiveConfig objective;
};

struct Expert {
    const model::ParameterSet* params = nullptr;
    const model::ModelConfig* config = nullptr;
};

std::string epoch_filename(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch-%03d.ckpt", epoch);
    return buf;
}

void emit(std::ostream* sink, const Json& record) {
    if (sink) *sink << record.dump() << '\n' << std::flush;
}

Json summary_json(const TrainLog& log) {
    return Json{{"type", "summary"},
                {"best_epoch", log.best_epoch},
                {"total_steps", log.steps.size()},
                {"loss_reduction", "mean_per_token"}};
}

TrainResult run(const LfDConfig& cfg, const model::ModelConfig& mcfg, const std::vector<Phase>& phases, Examples train,
                Examples valid, const TrainHooks& hooks, Expert expert) {
    cfg.validate();
    mcfg.validate();
    require(!train.empty(), ErrorKind::EmptyInput, "training data is empty");
    for (const auto& ex : train) require(!ex.y.empty(), ErrorKind::ContractViolation, "example " + ex.id + " has an empty target");

    TrainResult result;
    result.params = hooks.initial ? hooks.initial->clone_trainable() : model::init_parameters(mcfg);
    result.best = result.params.clone_trainable();

    const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size);
    std::size_t total = 0;
    for (const auto& p : phases) total += p.steps;
    if (hooks.checkpoint_dir) std::filesystem::create_directories(*hooks.checkpoint_dir);

    Adam adam(cfg.adam);
    Rng dropout_rng(mix_seed(cfg.seed, kDropoutStream));
    const model::ForwardOptions train_opts{true, &dropout_rng};
    std::optional<double> best_val;

    std::size_t step = 0;
    std::size_t phase_index = 0, phase_end = phases.empty() ? 0 : phases[0].steps;
    for (int epoch = 1; step < total; ++epoch) {
        Rng shuffle(mix_seed(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);

        double epoch_sum = 0.0, epoch_start_loss = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t b = 0; b < per_epoch && step < total; ++b) {
            while (step >= phase_end) {
                ++phase_index;
                phase_end += phases[phase_index].steps;
                if (cfg.reset_optimizer_between_phases) adam.reset();
            }
            const Phase& phase = phases[phase_index];
            const double lr = schedule_lr(step, total, static_cast<std::size_t>(cfg.warmup_steps), cfg.learning_rate);
            ++step;

            const std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            StepRecord rec{step, phase.name, 0.0, 0, lr};
            try {
                Tape tape;
                TapeScope scope(tape);
                std::vector<Tensor> logps, expert_logps;
                std::vector<TokenSequence> ys;
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto& ex = train[order[i]];
                    logps.push_back(model::score(result.params, mcfg, ex.x, ex.y, train_opts).tensor());
                    if (expert.params) expert_logps.push_back(model::score(*expert.params, *expert.config, ex.x, ex.y).tensor());
                    ys.push_back(ex.y);
                }
                const auto batch = objectives::batch_objective(phase.objective, logps, ys, expert_logps);
                const Tensor loss = ops::scale(batch.loss, 1.0 / static_cast<double>(batch.token_count));
                rec.loss = loss.item();
                rec.selected_token_count = batch.token_count;
                const bool runaway = epoch_steps > 0 && rec.loss > cfg.divergence_factor * epoch_start_loss;
                if (runaway) throw Error(ErrorKind::InvalidValue, "loss exceeded the divergence bound");
                tape.backward(loss);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::InvalidValue) throw;
                emit(hooks.log_sink, Json{{"type", "divergence"}, {"step", step}, {"epoch", epoch}, {"reason", e.what()}});
                throw Error(ErrorKind::DivergenceDetected,
                            "training diverged at step " + std::to_string(step) + " (" + e.what() + ")");
            }
            adam.step(result.params, lr);
            result.params.zero_grad();

            if (epoch_steps == 0) epoch_start_loss = rec.loss;
            epoch_sum += rec.loss;
            ++epoch_steps;
            result.log.steps.push_back(rec);
            emit(hooks.log_sink, to_json(rec));

            if (cfg.eval_every > 0 && !valid.empty() && step % static_cast<std::size_t>(cfg.eval_every) == 0) {
                EvalRecord ev{step, validation_loss(result.params, mcfg, valid)};
                result.log.evals.push_back(ev);
                emit(hooks.log_sink, to_json(ev));
            }
        }
        if (epoch_steps < per_epoch) break;  // schedule ended inside this epoch

        EpochRecord er;
        er.epoch = epoch;
        er.end_step = step;
        er.train_loss = epoch_sum / static_cast<double>(epoch_steps);
        if (!valid.empty()) er.validation_loss = validation_loss(result.params, mcfg, valid);
        if (hooks.checkpoint_dir) {
            er.checkpoint_path = epoch_filename(epoch);
            model::save_checkpoint(*hooks.checkpoint_dir / er.checkpoint_path, mcfg, result.params);
        }
        const bool better = !er.validation_loss || !best_val || *er.validation_loss < *best_val;
        if (better) {
            if (er.validation_loss) best_val = er.validation_loss;
            result.log.best_epoch = epoch;
            result.best = result.params.clone_trainable();
        }
        result.log.epochs.push_back(er);
        emit(hooks.log_sink, to_json(er));
    }
    emit(hooks.log_sink, summary_json(result.log));
    return result;
}

}  // namespace

// ---------------------------------------------------------------------------

void Adam::update(const std::string& key, Tensor& t, double lr) {
    if (!t.requires_grad()) return;
    auto it = std::find_if(state_.begin(), state_.end(), [&](const auto& s) { return s.first == key; });
    if (it == state_.end()) {
        state_.push_back({key, {std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)}});
        it = std::prev(state_.end());
    }
    auto& [m, v] = it->second;
    require(m.size() == t.size(), ErrorKind::ContractViolation, "optimizer state shape changed for " + key);
    const auto grad = t.grad();
    auto values = t.mutable_values();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
}

void Adam::step(model::ParameterSet& params, double lr) {
    require(!params.frozen(), ErrorKind::ContractViolation, "cannot optimize a frozen parameter set");
    ++t_;
    for (const auto& [name, tensor] : params.entries()) {
        Tensor handle = tensor;  // shares the node
        update(name, handle, lr);
    }
}

void Adam::step(std::span<Tensor> tensors, double lr) {
    ++t_;
    for (std::size_t i = 0; i < tensors.size(); ++i) update(std::to_string(i), tensors[i], lr);
}

void Adam::reset() {
    t_ = 0;
    state_.clear();
}

double schedule_lr(std::size_t step, std::size_t total_steps, std::size_t warmup, double base_lr) {
    require(step <= total_steps, ErrorKind::ContractViolation, "schedule_lr: step beyond total_steps");
    if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return base_lr;
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

void LfDConfig::validate() const {
    require(epochs >= 0, ErrorKind::InvalidConfig, "train.epochs must be >= 0");
    require(batch_size >= 1, ErrorKind::InvalidConfig, "train.batch_size must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorKind::InvalidConfig, "train.learning_rate must be positive");
    require(warmup_steps >= 0, ErrorKind::InvalidConfig, "train.warmup_steps must be >= 0");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, ErrorKind::InvalidConfig,
            "train.adam betas must lie in [0, 1)");
    require(adam.eps > 0.0, ErrorKind::InvalidConfig, "train.adam.eps must be positive");
    require(K_epochs >= 0.0 && std::isfinite(K_epochs), ErrorKind::InvalidConfig, "train.K_epochs must be >= 0");
    require(H_epochs > 0.0 && std::isfinite(H_epochs), ErrorKind::InvalidConfig, "train.H_epochs must be positive");
    require(K_steps >= -1, ErrorKind::InvalidConfig, "train.K_steps must be >= 0 (or -1 to use K_epochs)");
    require(H_steps == -1 || H_steps >= 1, ErrorKind::InvalidConfig, "train.H_steps must be >= 1 (or -1 to use H_epochs)");
    require(R > 0.0 && R <= 1.0, ErrorKind::InvalidConfig, "train.R must lie in (0, 1]");
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::InvalidConfig, "train.lambda must be >= 0");
    require(eval_every >= 0, ErrorKind::InvalidConfig, "train.eval_every must be >= 0");
    require(divergence_factor > 1.0, ErrorKind::InvalidConfig, "train.divergence_factor must exceed 1");
}

Json to_json(const LfDConfig& c) {
    return Json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"warmup_steps", c.warmup_steps},
                {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
                {"seed", c.seed},
                {"K_epochs", c.K_epochs},
                {"H_epochs", c.H_epochs},
                {"K_steps", c.K_steps},
                {"H_steps", c.H_steps},
                {"R", c.R},
                {"reset_optimizer_between_phases", c.reset_optimizer_between_phases},
                {"lambda", c.lambda},
                {"eval_every", c.eval_every},
                {"divergence_factor", c.divergence_factor}};
}

LfDConfig lfd_config_from_json(const Json& j, const std::string& context) {
    LfDConfig c;
    StrictObject obj(j, context);
    obj.optional("epochs", c.epochs)
        .optional("batch_size", c.batch_size)
        .optional("learning_rate", c.learning_rate)
        .optional("warmup_steps", c.warmup_steps)
        .optional("seed", c.seed)
        .optional("K_epochs", c.K_epochs)
        .optional("H_epochs", c.H_epochs)
        .optional("K_steps", c.K_steps)
        .optional("H_steps", c.H_steps)
        .optional("R", c.R)
        .optional("reset_optimizer_between_phases", c.reset_optimizer_between_phases)
        .optional("lambda", c.lambda)
        .optional("eval_every", c.eval_every)
        .optional("divergence_factor", c.divergence_factor);
    if (obj.has("adam")) {
        StrictObject adam(obj.child("adam"), obj.path("adam"));
        adam.optional("beta1", c.adam.beta1).optional("beta2", c.adam.beta2).optional("eps", c.adam.eps);
        adam.finish();
    }
    obj.finish();
    c.validate();
    return c;
}

Json to_json(const StepRecord& r) {
    return Json{{"type", "step"}, {"step", r.step}, {"phase", r.phase}, {"loss", r.loss},
                {"selected_token_count", r.selected_token_count}, {"learning_rate", r.learning_rate}};
}

Json to_json(const EpochRecord& r) {
    Json j{{"type", "epoch"}, {"epoch", r.epoch}, {"step", r.end_step}, {"train_loss", r.train_loss}, {"checkpoint_path", r.checkpoint_path}};
    j["validation_loss"] = r.validation_loss ? Json(*r.validation_loss) : Json(nullptr);
    return j;
}

Json to_json(const EvalRecord& r) {
    return Json{{"type", "eval"}, {"step", r.step}, {"validation_loss", r.validation_loss}};
}

bool TrainLog::operator==(const TrainLog& o) const {
    std::ostringstream a, b;
    write_jsonl(a, *this);
    write_jsonl(b, o);
    return a.str() == b.str();
}

void write_jsonl(std::ostream& out, const TrainLog& log) {
    std::size_t ev = 0, ep = 0;
    for (const auto& rec : log.steps) {
        out << to_json(rec).dump() << '\n';
        while (ev < log.evals.size() && log.evals[ev].step == rec.step) out << to_json(log.evals[ev++]).dump() << '\n';
        while (ep < log.epochs.size() && log.epochs[ep].end_step == rec.step) out << to_json(log.epochs[ep++]).dump() << '\n';
    }
    out << summary_json(log).dump() << '\n';
}

double validation_loss(const model::ParameterSet& params, const model::ModelConfig& mcfg, Examples data) {
    require(!data.empty(), ErrorKind::EmptyInput, "validation data is empty");
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : data) {
        const auto logp = model::score(params, mcfg, ex.x, ex.y);
        for (std::size_t t = 0; t < ex.y.size(); ++t) total -= logp.at(t, static_cast<std::size_t>(ex.y[t]));
        tokens += ex.y.size();
    }
    return total / static_cast<double>(tokens);
}

std::size_t steps_per_epoch(std::size_t examples, int batch_size) {
    require(batch_size >= 1, ErrorKind::InvalidConfig, "batch_size must be >= 1");
    const auto b = static_cast<std::size_t>(batch_size);
    return (examples + b - 1) / b;
}

TrainResult train_standard(const LfDConfig& cfg, const model::ModelConfig& mcfg, const objectives::ObjectiveConfig& objective,
                           Examples train, Examples valid, const TrainHooks& hooks) {
    objective.validate();
    require(objective.kind != objectives::ObjectiveKind::poe_combined, ErrorKind::ContractViolation,
            "poe_combined training needs an expert; use train_lfd_main");
    const std::size_t total = static_cast<std::size_t>(cfg.epochs) * steps_per_epoch(train.size(), cfg.batch_size);
    return run(cfg, mcfg, {{"standard", total, objective}}, train, valid, hooks, {});
}

TrainResult train_degenerative(const LfDConfig& cfg, const model::ModelConfig& mcfg, Examples train, Examples valid,
                               const TrainHooks& hooks) {
    cfg.validate();
    const double per_epoch = static_cast<double>(steps_per_epoch(train.size(), cfg.batch_size));
    const auto K = cfg.K_steps >= 0 ? static_cast<std::size_t>(cfg.K_steps)
                                    : static_cast<std::size_t>(std::llround(cfg.K_epochs * per_epoch));
    const auto H = cfg.H_steps >= 0 ? static_cast<std::size_t>(cfg.H_steps)
                                    : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.H_epochs * per_epoch)));
    objectives::ObjectiveConfig standard, truncated;
    truncated.kind = objectives::ObjectiveKind::truncated_ce;
    truncated.R = cfg.R;
    TrainResult r = run(cfg, mcfg, {{"standard", K, standard}, {"truncated", H, truncated}}, train, valid, hooks, {});
    r.params.freeze();
    r.best.freeze();
    return r;
}

TrainResult train_lfd_main(const LfDConfig& cfg, const model::ModelConfig& mcfg, const model::ParameterSet& expert,
                           const model::ModelConfig& expert_cfg, Examples train, Examples valid, const TrainHooks& hooks) {
    require(expert.frozen(), ErrorKind::ContractViolation, "the degenerative expert must be frozen");
    require(expert_cfg.vocab_size == mcfg.vocab_size, ErrorKind::ContractViolation, "expert and main model vocabularies differ");
    require(expert_cfg.arch == mcfg.arch, ErrorKind::ContractViolation, "expert and main model architectures differ");
    objectives::ObjectiveConfig poe;
    poe.kind = objectives::ObjectiveKind::poe_combined;
    poe.lambda = cfg.lambda;
    const std::size_t total = static_cast<std::size_t>(cfg.epochs) * steps_per_epoch(train.size(), cfg.batch_size);
    return run(cfg, mcfg, {{"lfd", total, poe}}, train, valid, hooks, {&expert, &expert_cfg});
}

}  // namespace lfd::trainer
