#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <regex>
#include <sstream>

#include "lfd/corpus.hpp"
#include "lfd/decode.hpp"
#include "lfd/dynamics.hpp"
#include "lfd/error.hpp"
#include "lfd/fixtures.hpp"
#include "lfd/metrics.hpp"
#include "lfd/model.hpp"
#include "lfd/run_config.hpp"
#include "lfd/trainer.hpp"

namespace fs = std::filesystem;

namespace lfd::cli {

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string run;
    std::string checkpoint;
    std::string generations;
    std::string references;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool overwrite = false;
};

struct Loaded {
    RunConfig cfg;
    fs::path config_path;
};

Loaded load(const Options& o) {
    Loaded l{load_run_config(o.config), o.config};
    if (o.seed_given) {
        l.cfg.train.seed = o.seed;
        l.cfg.model.seed = o.seed;
        l.cfg.decode.seed = o.seed;
    }
    return l;
}

fs::path default_run_dir(const Loaded& l) {
    if (!l.cfg.output_dir.empty()) return l.cfg.output_dir;
    const char* root = std::getenv("LFD_OUTPUT_ROOT");
    return fs::path(root && *root ? root : "runs") / l.config_path.stem();
}

fs::path run_dir(const Options& o, const Loaded& l) { return o.run.empty() ? default_run_dir(l) : fs::path(o.run); }

fs::path output_dir(const Options& o, const Loaded& l, const std::string& command) {
    if (!o.out.empty()) return o.out;
    return command == "train" ? run_dir(o, l) : run_dir(o, l) / command;
}

void prepare_output(const fs::path& dir, bool overwrite) {
    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
        require(overwrite, ErrorKind::InvalidConfig, "output directory " + dir.string() + " is not empty; pass --overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    return out;
}

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Data

bool is_lm(const RunConfig& cfg) { return cfg.task == Task::lm; }

std::vector<std::string> training_texts(const RunConfig& cfg) {
    if (is_lm(cfg)) return corpus::read_documents(cfg.data.train);
    std::vector<std::string> texts;
    for (const auto& p : corpus::read_pairs(cfg.data.train)) {
        texts.push_back(p.x);
        texts.push_back(p.y);
    }
    return texts;
}

corpus::Vocabulary build_vocabulary(const RunConfig& cfg, const corpus::Tokenizer& tok) {
    corpus::Vocabulary vocab;
    const auto texts = training_texts(cfg);
    corpus::extend_vocabulary(vocab, tok, texts);
    return vocab;
}

std::vector<corpus::Example> load_examples(const RunConfig& cfg, const std::string& path, const corpus::Vocabulary& vocab,
                                           const corpus::Tokenizer& tok, const std::string& prefix) {
    if (path.empty()) return {};
    if (is_lm(cfg)) {
        const auto docs = corpus::read_documents(path);
        return corpus::chunk_documents(docs, vocab, tok, static_cast<std::size_t>(cfg.data.chunk_len), prefix);
    }
    const auto pairs = corpus::read_pairs(path);
    return corpus::tokenize_pairs(pairs, vocab, tok, static_cast<std::size_t>(cfg.data.max_tokens));
}

corpus::Vocabulary run_vocabulary(const fs::path& dir) {
    const auto path = dir / "vocab.txt";
    require(fs::exists(path), ErrorKind::Io, "no vocabulary at " + path.string() + "; train first or pass --run");
    return corpus::Vocabulary::load(path);
}

model::Checkpoint load_model(const Options& o, const fs::path& run) {
    fs::path path = o.checkpoint;
    if (path.empty()) {
        const Json summary = read_json(run / "train_summary.json");
        const std::string best = summary.value("best_checkpoint", "");
        require(!best.empty(), ErrorKind::Io, run.string() + " has no best checkpoint");
        path = run / best;
    }
    return model::load_checkpoint(path);
}

// ---------------------------------------------------------------------------
// Attribute scoring

std::vector<corpus::AttributeScore> score_attribute(corpus::AttributeMetric metric, std::span<const corpus::Example> examples,
                                                    const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                                    const AttributeConfig& acfg) {
    using corpus::AttributeMetric;
    std::vector<corpus::AttributeScore> out;
    switch (metric) {
        case AttributeMetric::avg_frequency: {
            const auto counts = corpus::count_target_tokens(examples);
            for (const auto& ex : examples) out.push_back({ex.id, metric, corpus::avg_frequency(ex.y, counts)});
            break;
        }
        case AttributeMetric::repetition:
            for (const auto& ex : examples) out.push_back({ex.id, metric, corpus::repetition_attr(ex.y)});
            break;
        case AttributeMetric::context_overlap: {
            const auto n = static_cast<std::size_t>(acfg.overlap_n);
            for (const auto& ex : examples)
                if (ex.y.size() >= n) out.push_back({ex.id, metric, corpus::context_overlap(ex.x, ex.y, n)});
            break;
        }
        case AttributeMetric::source_entropy: {
            const corpus::TrigramEmbedder embedder(static_cast<std::size_t>(acfg.embed_dim));
            std::vector<std::vector<double>> contexts, responses;
            for (const auto& ex : examples) {
                contexts.push_back(embedder.embed(corpus::decode(vocab, tok, ex.x)));
                responses.push_back(embedder.embed(corpus::decode(vocab, tok, ex.y)));
            }
            corpus::MeanShiftOptions ms;
            ms.bandwidth = acfg.bandwidth;
            const auto entropy = corpus::source_entropy(corpus::mean_shift(contexts, ms), corpus::mean_shift(responses, ms));
            for (std::size_t i = 0; i < examples.size(); ++i) out.push_back({examples[i].id, metric, entropy[i]});
            break;
        }
    }
    return out;
}

std::vector<corpus::AttributeMetric> attribute_metrics(const RunConfig& cfg) {
    std::vector<corpus::AttributeMetric> out;
    for (const auto& name : cfg.attributes.metrics) {
        const auto m = corpus::attribute_metric_from_string(name);
        require(!is_lm(cfg) || m != corpus::AttributeMetric::source_entropy, ErrorKind::InvalidConfig,
                "attributes.metrics: source_entropy needs a task with contexts");
        out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const Options& o, std::ostream& out) {
    Loaded l = load(o);
    RunConfig& cfg = l.cfg;
    const auto tok = corpus::make_tokenizer(cfg.data.tokenizer);
    const auto vocab = build_vocabulary(cfg, *tok);
    cfg.model.vocab_size = static_cast<int>(vocab.size());
    cfg.validate();
    cfg.model.validate();
    const auto train = load_examples(cfg, cfg.data.train, vocab, *tok, "train");
    const auto valid = load_examples(cfg, cfg.data.valid, vocab, *tok, "valid");
    require(!train.empty(), ErrorKind::InvalidConfig, "data.train: no usable training examples");

    std::optional<model::Checkpoint> initial;
    if (!cfg.init_checkpoint.empty()) {
        initial = model::load_checkpoint(cfg.init_checkpoint);
        require(initial->config.vocab_size == cfg.model.vocab_size && initial->config.arch == cfg.model.arch,
                ErrorKind::InvalidConfig, "init_checkpoint does not match the model configuration");
        initial->params = initial->params.clone_trainable();
    }

    const fs::path dir = output_dir(o, l, "train");
    prepare_output(dir, o.overwrite);
    fs::copy_file(l.config_path, dir / "config.json");
    open_output(dir / "resolved_config.json") << to_json(cfg).dump(2) << '\n';
    vocab.save(dir / "vocab.txt");
    const fs::path ckpt_dir = dir / "checkpoints";
    fs::create_directories(ckpt_dir);

    trainer::TrainHooks hooks;
    hooks.checkpoint_dir = ckpt_dir;
    if (initial) hooks.initial = &initial->params;
    Json summary;
    trainer::TrainResult result;
    if (cfg.objective.kind == objectives::ObjectiveKind::poe_combined) {
        auto expert_log = open_output(dir / "expert_log.jsonl");
        trainer::TrainHooks expert_hooks;
        expert_hooks.log_sink = &expert_log;
        expert_hooks.initial = hooks.initial;
        const auto expert = trainer::train_degenerative(cfg.train, cfg.model, train, valid, expert_hooks);
        model::save_checkpoint(ckpt_dir / "expert.ckpt", cfg.model, expert.params);
        summary["expert_checkpoint"] = "checkpoints/expert.ckpt";
        out << "expert: " << expert.log.steps.size() << " steps\n";
        auto log = open_output(dir / "train_log.jsonl");
        hooks.log_sink = &log;
        result = trainer::train_lfd_main(cfg.train, cfg.model, expert.params, cfg.model, train, valid, hooks);
    } else {
        auto log = open_output(dir / "train_log.jsonl");
        hooks.log_sink = &log;
        result = trainer::train_standard(cfg.train, cfg.model, cfg.objective, train, valid, hooks);
    }

    Json checkpoints = Json::array();
    std::string best;
    for (const auto& e : result.log.epochs) {
        checkpoints.push_back("checkpoints/" + e.checkpoint_path);
        if (e.epoch == result.log.best_epoch) best = "checkpoints/" + e.checkpoint_path;
    }
    summary["best_epoch"] = result.log.best_epoch;
    summary["best_checkpoint"] = best;
    summary["checkpoints"] = checkpoints;
    summary["total_steps"] = result.log.steps.size();
    summary["vocab_size"] = vocab.size();
    open_output(dir / "train_summary.json") << summary.dump(2) << '\n';
    out << "trained " << result.log.steps.size() << " steps; best epoch " << result.log.best_epoch << "; run directory "
        << dir.string() << '\n';
    return kExitOk;
}

struct Prompt {
    std::string id;
    TokenSequence condition;
    TokenSequence reference;
};

std::vector<Prompt> make_prompts(const RunConfig& cfg, const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok) {
    require(!cfg.data.test.empty(), ErrorKind::InvalidConfig, "data.test: required for generation");
    std::vector<Prompt> prompts;
    if (is_lm(cfg)) {
        const auto prefix = static_cast<std::size_t>(cfg.decode.prefix_len);
        const auto docs = corpus::read_documents(cfg.data.test);
        const auto chunks = corpus::chunk_documents(docs, vocab, tok, prefix + static_cast<std::size_t>(cfg.decode.max_new_tokens), "test");
        for (const auto& c : chunks)
            if (c.y.size() > prefix)
                prompts.push_back({c.id, TokenSequence(c.y.begin(), c.y.begin() + static_cast<long>(prefix)),
                                   TokenSequence(c.y.begin() + static_cast<long>(prefix), c.y.end())});
    } else {
        for (auto& ex : load_examples(cfg, cfg.data.test, vocab, tok, "test")) prompts.push_back({ex.id, ex.x, ex.y});
    }
    const auto cap = static_cast<std::size_t>(cfg.data.max_eval_examples);
    if (cap > 0 && prompts.size() > cap) prompts.resize(cap);
    return prompts;
}

int cmd_generate(const Options& o, std::ostream& out) {
    const Loaded l = load(o);
    const RunConfig& cfg = l.cfg;
    const fs::path run = run_dir(o, l);
    const auto vocab = run_vocabulary(run);
    const auto ckpt = load_model(o, run);
    require(ckpt.config.vocab_size == static_cast<int>(vocab.size()), ErrorKind::InvalidConfig,
            "checkpoint vocabulary does not match " + (run / "vocab.txt").string());
    const auto tok = corpus::make_tokenizer(cfg.data.tokenizer);
    const auto prompts = make_prompts(cfg, vocab, *tok);

    const fs::path dir = output_dir(o, l, "generate");
    prepare_output(dir, o.overwrite);
    auto gen_out = open_output(dir / "generations.jsonl");
    auto ref_out = open_output(dir / "references.jsonl");
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        Rng rng(decode::unit_seed(cfg.decode, i));
        const auto output = decode::generate(ckpt.params, ckpt.config, cfg.decode, prompts[i].condition, rng);
        const std::string condition = corpus::decode(vocab, *tok, prompts[i].condition);
        gen_out << Json{{"id", prompts[i].id}, {"condition", condition}, {"output", corpus::decode(vocab, *tok, output)}}.dump()
                << '\n';
        ref_out << Json{{"id", prompts[i].id}, {"condition", condition}, {"output", corpus::decode(vocab, *tok, prompts[i].reference)}}.dump()
                << '\n';
    }
    out << "generated " << prompts.size() << " continuations into " << dir.string() << '\n';
    return kExitOk;
}

struct Record {
    std::string id;
    std::string condition;
    std::string output;
};

std::vector<Record> read_records(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
    std::vector<Record> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        try {
            const Json j = Json::parse(line);
            require(j.is_object() && j.contains("id") && j.contains("output"), ErrorKind::Parse, where + "expected {id, output}");
            out.push_back({j.at("id").get<std::string>(), j.value("condition", ""), j.at("output").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, where + e.what());
        }
    }
    return out;
}

bool soft_metric_failure(ErrorKind kind) {
    return kind == ErrorKind::Undefined || kind == ErrorKind::TooFew || kind == ErrorKind::EmptyInput || kind == ErrorKind::TooShort;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const Loaded l = load(o);
    const RunConfig& cfg = l.cfg;
    const fs::path run = run_dir(o, l);
    const fs::path gen_path = o.generations.empty() ? run / "generate" / "generations.jsonl" : fs::path(o.generations);
    const fs::path ref_path = o.references.empty() ? run / "generate" / "references.jsonl" : fs::path(o.references);
    const auto gens = read_records(gen_path);
    const auto refs = read_records(ref_path);
    require(!gens.empty(), ErrorKind::Parse, gen_path.string() + ": no generations");
    std::map<std::string, const Record*> ref_by_id;
    for (const auto& r : refs) ref_by_id[r.id] = &r;

    const auto tok = corpus::make_tokenizer(cfg.data.tokenizer);
    corpus::Vocabulary vocab;
    std::vector<std::string> texts;
    for (const auto* set : {&gens, &refs})
        for (const auto& r : *set) {
            texts.push_back(r.condition);
            texts.push_back(r.output);
        }
    corpus::extend_vocabulary(vocab, *tok, texts);
    metrics::Corpus generated, matched, conditions, all_refs;
    for (const auto& r : refs) all_refs.push_back(corpus::encode(vocab, *tok, r.output));
    for (const auto& g : gens) {
        auto it = ref_by_id.find(g.id);
        require(it != ref_by_id.end(), ErrorKind::Parse, ref_path.string() + ": no reference for id " + g.id);
        generated.push_back(corpus::encode(vocab, *tok, g.output));
        matched.push_back(corpus::encode(vocab, *tok, it->second->output));
        conditions.push_back(corpus::encode(vocab, *tok, g.condition));
    }
    metrics::Corpus nonempty;
    for (const auto& g : generated)
        if (!g.empty()) nonempty.push_back(g);

    const auto& ev = cfg.evaluation;
    const std::map<std::string, double> unit_counts{{"generations", static_cast<double>(gens.size())},
                                                    {"empty_generations", static_cast<double>(gens.size() - nonempty.size())}};
    std::vector<metrics::MetricReport> reports;
    auto add = [&](const std::string& name, std::optional<int> n, const std::function<double()>& fn) {
        metrics::MetricReport r{name, 0.0, n, unit_counts, gen_path.string(), ref_path.string(), {}};
        try {
            r.value = fn();
        } catch (const Error& e) {
            if (!soft_metric_failure(e.kind())) throw;
            r.value = std::nan("");
            r.flags.push_back(to_string(e.kind()));
        }
        reports.push_back(std::move(r));
    };
    auto mean_over_units = [&](const std::function<double(std::size_t)>& fn) {
        double total = 0.0;
        for (std::size_t i = 0; i < generated.size(); ++i) total += fn(i);
        return total / static_cast<double>(generated.size());
    };

    for (const auto& name : ev.metrics) {
        if (name == "repetition") {
            add(name, std::nullopt, [&] { return metrics::mean_repetition(generated, ev.repetition_window); });
        } else if (name == "unique") {
            add(name, std::nullopt, [&] { return static_cast<double>(metrics::unique_tokens(generated)); });
        } else if (name == "zipf") {
            add(name, std::nullopt, [&] { return metrics::zipf_coefficient(generated); });
        } else if (name == "kld") {
            add(name, std::nullopt, [&] { return metrics::kld_unigram(generated, all_refs); });
        } else if (name == "self_bleu") {
            add(name, ev.self_bleu_n, [&] { return metrics::self_bleu(nonempty, ev.self_bleu_n); });
        } else if (name == "distinct_1" || name == "distinct_2") {
            const int n = name.back() - '0';
            add("distinct", n, [&] {
                if (!ev.distinct_per_response) return metrics::distinct_n(generated, n);
                double total = 0.0;
                std::size_t units = 0;
                for (const auto& g : generated)
                    if (g.size() >= static_cast<std::size_t>(n)) {
                        total += metrics::distinct_n(metrics::Corpus{g}, n);
                        ++units;
                    }
                require(units > 0, ErrorKind::Undefined, "no generation has " + std::to_string(n) + " tokens");
                return total / static_cast<double>(units);
            });
        } else if (name == "bleu") {
            add(name, ev.bleu_n, [&] {
                return mean_over_units([&](std::size_t i) {
                    return generated[i].empty() || matched[i].empty() ? 0.0 : metrics::bleu(generated[i], metrics::Corpus{matched[i]}, ev.bleu_n);
                });
            });
        } else if (name == "rouge_1" || name == "rouge_2" || name == "rouge_l") {
            const auto variant = name == "rouge_1"   ? metrics::RougeVariant::r1
                                 : name == "rouge_2" ? metrics::RougeVariant::r2
                                                     : metrics::RougeVariant::rL;
            add(name, std::nullopt, [&] {
                return mean_over_units([&](std::size_t i) {
                    return generated[i].empty() || matched[i].empty() ? 0.0 : metrics::rouge(generated[i], matched[i], variant);
                });
            });
        } else if (name == "novel_1" || name == "novel_2") {
            const int n = name.back() - '0';
            add("novel", n, [&] {
                double total = 0.0;
                std::size_t units = 0;
                for (std::size_t i = 0; i < generated.size(); ++i)
                    if (generated[i].size() >= static_cast<std::size_t>(n)) {
                        total += metrics::novel_n(generated[i], conditions[i], n);
                        ++units;
                    }
                require(units > 0, ErrorKind::TooShort, "no generation has " + std::to_string(n) + " tokens");
                return total / static_cast<double>(units);
            });
        } else if (name == "ppl") {
            const auto run_vocab = run_vocabulary(run);
            const auto ckpt = load_model(o, run);
            auto test = load_examples(cfg, cfg.data.test, run_vocab, *tok, "test");
            const auto cap = static_cast<std::size_t>(cfg.data.max_eval_examples);
            if (cap > 0 && test.size() > cap) test.resize(cap);
            std::vector<std::vector<double>> target_logprobs;
            for (const auto& ex : test) {
                const auto logp = model::score(ckpt.params, ckpt.config, ex.x, ex.y);
                auto& unit = target_logprobs.emplace_back();
                for (std::size_t t = 0; t < ex.y.size(); ++t) unit.push_back(logp.at(t, static_cast<std::size_t>(ex.y[t])));
            }
            const auto ppl = metrics::perplexity(target_logprobs);
            for (const auto& [label, value] : {std::pair{"ppl_paper", ppl.paper}, std::pair{"ppl_standard", ppl.standard}}) {
                metrics::MetricReport r{label, value, std::nullopt, {{"tokens", static_cast<double>(ppl.tokens)}}, "", cfg.data.test, {}};
                if (ppl.overflow) r.flags.push_back("overflow");
                reports.push_back(std::move(r));
            }
        }
    }

    const fs::path dir = output_dir(o, l, "evaluate");
    prepare_output(dir, o.overwrite);
    auto report = open_output(dir / "report.jsonl");
    metrics::write_reports_jsonl(report, reports);
    auto summary = open_output(dir / "summary.csv");
    metrics::write_summary_csv(summary, reports);
    out << "wrote " << reports.size() << " metric reports to " << dir.string() << '\n';
    return kExitOk;
}

std::vector<dynamics::EpochModel> epoch_checkpoints(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorKind::Io, "no checkpoint directory " + dir.string());
    static const std::regex pattern(R"(epoch-(\d+)\.ckpt)");
    std::vector<std::pair<int, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1].str()), entry.path());
    }
    std::sort(found.begin(), found.end());
    require(found.size() >= 2, ErrorKind::Io, dir.string() + " holds fewer than two epoch checkpoints");
    std::vector<dynamics::EpochModel> out;
    for (const auto& [epoch, path] : found) {
        auto ckpt = model::load_checkpoint(path);
        out.push_back({epoch, ckpt.config, std::move(ckpt.params)});
    }
    return out;
}

int cmd_dynamics(const Options& o, std::ostream& out) {
    const Loaded l = load(o);
    const RunConfig& cfg = l.cfg;
    const fs::path run = run_dir(o, l);
    const auto vocab = run_vocabulary(run);
    const auto tok = corpus::make_tokenizer(cfg.data.tokenizer);
    const auto examples = load_examples(cfg, cfg.data.train, vocab, *tok, "train");
    const auto checkpoints = epoch_checkpoints(run / "checkpoints");
    const auto metric_list = attribute_metrics(cfg);

    dynamics::PplOptions options;
    options.sentence_level = cfg.dynamics.sentence_level;
    for (const auto& t : cfg.dynamics.terminators)
        if (auto id = vocab.find(t)) options.terminators.insert(*id);
    require(!options.sentence_level || !options.terminators.empty(), ErrorKind::InvalidConfig,
            "dynamics.terminators: none of the terminators is in the vocabulary");

    std::vector<dynamics::DynamicsCurve> curves;
    for (auto metric : metric_list) {
        const auto scores = score_attribute(metric, examples, vocab, *tok, cfg.attributes);
        const std::size_t n = cfg.dynamics.group_size > 0 ? static_cast<std::size_t>(cfg.dynamics.group_size)
                                                          : std::max<std::size_t>(1, scores.size() / 4);
        auto [high, low] = dynamics::run_dynamics(checkpoints, examples, scores, n, options);
        curves.push_back(std::move(high));
        curves.push_back(std::move(low));
    }
    const fs::path dir = output_dir(o, l, "dynamics");
    prepare_output(dir, o.overwrite);
    auto csv = open_output(dir / "curves.csv");
    dynamics::write_curves_csv(csv, curves);
    out << "wrote " << curves.size() << " curves over " << checkpoints.size() << " checkpoints to " << dir.string() << '\n';
    return kExitOk;
}

int cmd_score_attrs(const Options& o, std::ostream& out) {
    const Loaded l = load(o);
    const RunConfig& cfg = l.cfg;
    const auto tok = corpus::make_tokenizer(cfg.data.tokenizer);
    const auto vocab = build_vocabulary(cfg, *tok);
    const auto examples = load_examples(cfg, cfg.data.train, vocab, *tok, "train");
    std::vector<corpus::AttributeScore> scores;
    for (auto metric : attribute_metrics(cfg)) {
        auto s = score_attribute(metric, examples, vocab, *tok, cfg.attributes);
        scores.insert(scores.end(), s.begin(), s.end());
    }
    const fs::path dir = output_dir(o, l, "score-attrs");
    prepare_output(dir, o.overwrite);
    auto csv = open_output(dir / "attrs.csv");
    corpus::write_attribute_csv(csv, scores);
    out << "scored " << examples.size() << " examples into " << dir.string() << '\n';
    return kExitOk;
}

int cmd_make_fixtures(const Options& o, std::ostream& out) {
    require(!o.out.empty(), ErrorKind::InvalidConfig, "make-fixtures needs --out");
    prepare_output(o.out, o.overwrite);
    fixtures::write_all(o.out, o.seed_given ? o.seed : 1);
    out << "wrote fixtures to " << o.out << '\n';
    return kExitOk;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidConfig:
        case ErrorKind::Parse:
        case ErrorKind::Io: return kExitUsage;
        default: return kExitRuntime;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learning from degeneration: train, generate, evaluate and analyze text generators"};
    app.name("lfd");
    app.require_subcommand(1);
    Options o;

    struct Command {
        const char* name;
        const char* help;
        int (*fn)(const Options&, std::ostream&);
        bool needs_config;
        bool uses_model;
    };
    const Command commands[] = {
        {"train", "train a model (or an expert and an LfD main model)", cmd_train, true, false},
        {"generate", "generate continuations for the test set", cmd_generate, true, true},
        {"evaluate", "compute metrics over a generations file", cmd_evaluate, true, true},
        {"dynamics", "per-group log-perplexity across epoch checkpoints", cmd_dynamics, true, false},
        {"score-attrs", "score training examples on degenerative attributes", cmd_score_attrs, true, false},
        {"make-fixtures", "write the synthetic corpora and example configs", cmd_make_fixtures, false, false},
    };
    std::map<std::string, std::pair<const Command*, CLI::Option*>> parsed;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        if (c.needs_config) sub->add_option("--config", o.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory");
        CLI::Option* seed = sub->add_option("--seed", o.seed, "override every seed in the config");
        sub->add_flag("--overwrite", o.overwrite, "replace a nonempty output directory");
        if (c.needs_config && std::string(c.name) != "train" && std::string(c.name) != "score-attrs")
            sub->add_option("--run", o.run, "training run directory");
        if (c.uses_model) sub->add_option("--checkpoint", o.checkpoint, "checkpoint instead of the run's best");
        if (std::string(c.name) == "evaluate") {
            sub->add_option("--generations", o.generations, "generations JSONL");
            sub->add_option("--references", o.references, "references JSONL");
        }
        parsed[c.name] = {&c, seed};
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    const auto& [command, seed] = parsed.at(name);
    o.seed_given = seed->count() > 0;
    try {
        return command->fn(o, out);
    } catch (const Error& e) {
        err << "lfd " << name << ": " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "lfd " << name << ": " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace lfd::cli
