#include "lfd/run_config.hpp"

#include <algorithm>
#include <fstream>

#include "lfd/corpus.hpp"
#include "lfd/error.hpp"
#include "lfd/metrics.hpp"

namespace lfd {

namespace {

const std::vector<std::string> kEvaluationMetrics{"repetition", "unique",  "zipf",    "kld",     "self_bleu", "distinct_1",
                                                  "distinct_2", "bleu",    "rouge_1", "rouge_2", "rouge_l",   "novel_1",
                                                  "novel_2",    "ppl"};

template <class T>
bool contains(const std::vector<T>& v, const T& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

// Reads `key` from both sections; a value given in only one is copied to the other.
void reconcile(const Json& train, const Json& objective, const std::string& key, double& train_value, double& objective_value) {
    const bool in_train = train.is_object() && train.contains(key);
    const bool in_objective = objective.is_object() && objective.contains(key);
    if (in_train && in_objective) {
        require(train_value == objective_value, ErrorKind::InvalidConfig,
                "train." + key + " and objective." + key + " disagree");
    } else if (in_train) {
        objective_value = train_value;
    } else if (in_objective) {
        train_value = objective_value;
    }
}

}  // namespace

std::string to_string(Task task) {
    switch (task) {
        case Task::lm: return "lm";
        case Task::dialogue: return "dialogue";
        case Task::summarization: return "summarization";
    }
    return "unknown";
}

Task task_from_string(const std::string& name) {
    for (auto t : {Task::lm, Task::dialogue, Task::summarization})
        if (to_string(t) == name) return t;
    throw Error(ErrorKind::InvalidConfig, "task: unknown task '" + name + "'");
}

void RunConfig::validate() const {
    require(!data.train.empty(), ErrorKind::InvalidConfig, "data.train: missing required field");
    corpus::make_tokenizer(data.tokenizer);
    require(data.chunk_len >= 2, ErrorKind::InvalidConfig, "data.chunk_len must be >= 2");
    require(data.max_tokens >= 0, ErrorKind::InvalidConfig, "data.max_tokens must be >= 0");
    require(data.max_eval_examples >= 0, ErrorKind::InvalidConfig, "data.max_eval_examples must be >= 0");

    model::ModelConfig m = model;
    m.vocab_size = std::max(m.vocab_size, 2);
    m.validate();
    train.validate();
    objective.validate();
    decode.validate();

    for (const auto& name : attributes.metrics) corpus::attribute_metric_from_string(name);
    require(attributes.overlap_n >= 1, ErrorKind::InvalidConfig, "attributes.overlap_n must be >= 1");
    require(attributes.bandwidth > 0.0, ErrorKind::InvalidConfig, "attributes.bandwidth must be positive");
    require(attributes.embed_dim >= 1, ErrorKind::InvalidConfig, "attributes.embed_dim must be >= 1");

    require(dynamics.group_size >= 0, ErrorKind::InvalidConfig, "dynamics.group_size must be >= 0");
    require(!dynamics.sentence_level || !dynamics.terminators.empty(), ErrorKind::InvalidConfig,
            "dynamics.terminators must be nonempty for sentence-level averaging");

    for (const auto& name : evaluation.metrics)
        require(contains(kEvaluationMetrics, name), ErrorKind::InvalidConfig, "evaluation.metrics: unknown metric '" + name + "'");
    require(evaluation.bleu_n >= 1, ErrorKind::InvalidConfig, "evaluation.bleu_n must be >= 1");
    require(evaluation.self_bleu_n >= 1, ErrorKind::InvalidConfig, "evaluation.self_bleu_n must be >= 1");
    require(evaluation.repetition_window >= 1, ErrorKind::InvalidConfig, "evaluation.repetition_window must be >= 1");
}

Json to_json(const RunConfig& c) {
    Json j{{"task", to_string(c.task)},
           {"data",
            {{"train", c.data.train},
             {"valid", c.data.valid},
             {"test", c.data.test},
             {"tokenizer", c.data.tokenizer},
             {"chunk_len", c.data.chunk_len},
             {"max_tokens", c.data.max_tokens},
             {"max_eval_examples", c.data.max_eval_examples}}},
           {"model", to_json(c.model)},
           {"train", trainer::to_json(c.train)},
           {"objective", objectives::to_json(c.objective)},
           {"decode", decode::to_json(c.decode)},
           {"attributes",
            {{"metrics", c.attributes.metrics},
             {"overlap_n", c.attributes.overlap_n},
             {"bandwidth", c.attributes.bandwidth},
             {"embed_dim", c.attributes.embed_dim}}},
           {"dynamics",
            {{"group_size", c.dynamics.group_size},
             {"sentence_level", c.dynamics.sentence_level},
             {"terminators", c.dynamics.terminators}}},
           {"evaluation",
            {{"metrics", c.evaluation.metrics},
             {"bleu_n", c.evaluation.bleu_n},
             {"self_bleu_n", c.evaluation.self_bleu_n},
             {"distinct_per_response", c.evaluation.distinct_per_response}}},
           {"output_dir", c.output_dir},
           {"init_checkpoint", c.init_checkpoint}};
    if (c.evaluation.repetition_window != metrics::kUnboundedWindow)
        j["evaluation"]["repetition_window"] = c.evaluation.repetition_window;
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    StrictObject obj(j, "config");
    std::string task = to_string(c.task);
    obj.optional("task", task).optional("output_dir", c.output_dir).optional("init_checkpoint", c.init_checkpoint);
    c.task = task_from_string(task);

    require(obj.has("data"), ErrorKind::InvalidConfig, "config.data: missing required field");
    {
        StrictObject d(obj.child("data"), "data");
        d.required("train", c.data.train)
            .optional("valid", c.data.valid)
            .optional("test", c.data.test)
            .optional("tokenizer", c.data.tokenizer)
            .optional("chunk_len", c.data.chunk_len)
            .optional("max_tokens", c.data.max_tokens)
            .optional("max_eval_examples", c.data.max_eval_examples);
        d.finish();
    }
    const Json empty = Json::object();
    const Json& train_json = obj.has("train") ? obj.child("train") : empty;
    const Json& objective_json = obj.has("objective") ? obj.child("objective") : empty;
    if (obj.has("model")) c.model = model::model_config_from_json(obj.child("model"));
    if (c.task != Task::lm && !(j.contains("model") && j.at("model").is_object() && j.at("model").contains("arch")))
        c.model.arch = model::Architecture::encoder_decoder;
    c.train = trainer::lfd_config_from_json(train_json);
    c.objective = objectives::objective_config_from_json(objective_json);
    reconcile(train_json, objective_json, "R", c.train.R, c.objective.R);
    reconcile(train_json, objective_json, "lambda", c.train.lambda, c.objective.lambda);
    if (obj.has("decode")) c.decode = decode::decode_config_from_json(obj.child("decode"));
    if (obj.has("attributes")) {
        StrictObject a(obj.child("attributes"), "attributes");
        a.optional("metrics", c.attributes.metrics)
            .optional("overlap_n", c.attributes.overlap_n)
            .optional("bandwidth", c.attributes.bandwidth)
            .optional("embed_dim", c.attributes.embed_dim);
        a.finish();
    }
    if (obj.has("dynamics")) {
        StrictObject d(obj.child("dynamics"), "dynamics");
        d.optional("group_size", c.dynamics.group_size)
            .optional("sentence_level", c.dynamics.sentence_level)
            .optional("terminators", c.dynamics.terminators);
        d.finish();
    }
    if (obj.has("evaluation")) {
        StrictObject e(obj.child("evaluation"), "evaluation");
        e.optional("metrics", c.evaluation.metrics)
            .optional("bleu_n", c.evaluation.bleu_n)
            .optional("self_bleu_n", c.evaluation.self_bleu_n)
            .optional("repetition_window", c.evaluation.repetition_window)
            .optional("distinct_per_response", c.evaluation.distinct_per_response);
        e.finish();
    }
    obj.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    const auto base = path.parent_path();
    for (std::string* p : {&c.data.train, &c.data.valid, &c.data.test, &c.init_checkpoint})
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    return c;
}

}  // namespace lfd
