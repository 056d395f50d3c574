#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lfd/decode.hpp"
#include "lfd/json_util.hpp"
#include "lfd/model.hpp"
#include "lfd/objectives.hpp"
#include "lfd/trainer.hpp"

namespace lfd {

enum class Task { lm, dialogue, summarization };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct DataConfig {
    std::string train;
    std::string valid;
    std::string test;
    std::string tokenizer = "whitespace";
    int chunk_len = 64;     // lm: tokens per training chunk
    int max_tokens = 100;   // dialogue / summarization: drop longer pairs; 0 disables
    int max_eval_examples = 0;  // 0 = every test example
    bool operator==(const DataConfig&) const = default;
};

struct AttributeConfig {
    std::vector<std::string> metrics{"avg_frequency", "repetition"};
    int overlap_n = 2;
    double bandwidth = 0.5;
    int embed_dim = 256;
    bool operator==(const AttributeConfig&) const = default;
};

struct DynamicsConfig {
    int group_size = 0;  // 0 = a quarter of the scored examples
    bool sentence_level = false;
    std::vector<std::string> terminators{"."};
    bool operator==(const DynamicsConfig&) const = default;
};

struct MetricsConfig {
    std::vector<std::string> metrics{"repetition", "unique", "zipf", "kld", "self_bleu", "distinct_1", "distinct_2", "bleu"};
    int bleu_n = 4;
    int self_bleu_n = 4;
    std::size_t repetition_window = static_cast<std::size_t>(-1);
    bool distinct_per_response = false;
    bool operator==(const MetricsConfig&) const = default;
};

struct RunConfig {
    Task task = Task::lm;
    DataConfig data;
    model::ModelConfig model;
    trainer::LfDConfig train;
    objectives::ObjectiveConfig objective;
    decode::DecodeConfig decode;
    AttributeConfig attributes;
    DynamicsConfig dynamics;
    MetricsConfig evaluation;
    std::string output_dir;
    std::string init_checkpoint;  // start training from these weights

    /// Throws InvalidConfig naming the offending field.
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

Json to_json(const RunConfig& cfg);

/// Strict: unknown keys anywhere raise InvalidConfig. When only one of
/// train.R / objective.R (or train.lambda / objective.lambda) is given it is
/// copied to the other; conflicting values are rejected.
RunConfig run_config_from_json(const Json& j);

/// Parses the file and resolves relative data and checkpoint paths against
/// the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace lfd
