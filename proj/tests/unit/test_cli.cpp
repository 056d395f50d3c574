#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "lfd/error.hpp"
#include "lfd/run_config.hpp"

namespace fs = std::filesystem;
using namespace lfd;

namespace {

const fs::path kData = LFD_TEST_DATA_DIR;
const fs::path kGolden = LFD_TEST_GOLDEN_DIR;

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an lfd::Error");
    return ErrorKind::Undefined;
}

struct Result {
    int code;
    std::string out, err;
};

Result lfd_cmd(std::vector<std::string> args) {
    args.insert(args.begin(), "lfd");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("lfd_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& name, const Json& j) {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

Json tiny_lm_config() {
    return Json{{"task", "lm"},
                {"data",
                 {{"train", (kData / "lm_train.txt").string()},
                  {"valid", (kData / "lm_valid.txt").string()},
                  {"test", (kData / "lm_test.txt").string()},
                  {"chunk_len", 24},
                  {"max_eval_examples", 6}}},
                {"model", {{"layers", 1}, {"model_dim", 16}, {"heads", 2}, {"ffn_dim", 16}, {"max_positions", 40}, {"dropout", 0.1}}},
                {"train", {{"epochs", 3}, {"batch_size", 32}, {"learning_rate", 0.003}, {"eval_every", 4}}},
                {"decode", {{"k", 5}, {"max_new_tokens", 10}, {"prefix_len", 8}}},
                {"evaluation", {{"metrics", {"repetition", "unique", "kld", "bleu", "distinct_2", "ppl"}}}}};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("run config round-trips and rejects unknown keys") {
    Json j = tiny_lm_config();
    const RunConfig c = run_config_from_json(j);
    CHECK(run_config_from_json(to_json(c)) == c);
    CHECK(c.train.R == c.objective.R);

    Json extra = j;
    extra["model"]["depth"] = 3;
    CHECK(kind_of([&] { run_config_from_json(extra); }) == ErrorKind::InvalidConfig);
    extra = j;
    extra["colour"] = "blue";
    CHECK(kind_of([&] { run_config_from_json(extra); }) == ErrorKind::InvalidConfig);

    Json one_sided = j;
    one_sided["objective"] = {{"kind", "poe_combined"}, {"lambda", 0.25}};
    CHECK(run_config_from_json(one_sided).train.lambda == 0.25);
    Json conflict = one_sided;
    conflict["train"]["lambda"] = 0.5;
    CHECK(kind_of([&] { run_config_from_json(conflict); }) == ErrorKind::InvalidConfig);

    Json dialogue = j;
    dialogue["task"] = "dialogue";
    dialogue["model"].erase("arch");
    CHECK(run_config_from_json(dialogue).model.arch == model::Architecture::encoder_decoder);
}

TEST_CASE("invalid configs exit 2 before training") {
    const auto dir = scratch("invalid");
    Json j = tiny_lm_config();
    j["train"]["R"] = 0.0;
    const auto cfg = write_config(dir, "bad.json", j);
    const auto r = lfd_cmd({"train", "--config", cfg.string(), "--out", (dir / "run").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("train.R") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run"));

    CHECK(lfd_cmd({"train"}).code == cli::kExitUsage);
    CHECK(lfd_cmd({"frobnicate"}).code == cli::kExitUsage);
    CHECK(lfd_cmd({"--help"}).code == cli::kExitOk);
}

TEST_CASE("malformed data files exit 2 with the line number") {
    const auto dir = scratch("malformed");
    std::ofstream(dir / "broken.tsv") << "hello\tthere\nno separator here\n";
    Json j = tiny_lm_config();
    j["task"] = "dialogue";
    j["data"] = {{"train", (dir / "broken.tsv").string()}};
    const auto cfg = write_config(dir, "cfg.json", j);
    const auto r = lfd_cmd({"score-attrs", "--config", cfg.string(), "--out", (dir / "out").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("broken.tsv:2") != std::string::npos);
}

TEST_CASE("divergence exits 3 and leaves a log record") {
    const auto dir = scratch("diverge");
    Json j = tiny_lm_config();
    j["train"]["learning_rate"] = 5.0;
    j["train"]["divergence_factor"] = 1.5;
    j["model"]["dropout"] = 0.0;
    const auto cfg = write_config(dir, "cfg.json", j);
    const auto r = lfd_cmd({"train", "--config", cfg.string(), "--out", (dir / "run").string()});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(slurp(dir / "run" / "train_log.jsonl").find("\"type\":\"divergence\"") != std::string::npos);
}

TEST_CASE("make-fixtures regenerates the bundled data byte for byte") {
    const auto dir = scratch("fixtures");
    REQUIRE(lfd_cmd({"make-fixtures", "--out", (dir / "data").string()}).code == 0);
    for (const auto& entry : fs::directory_iterator(kData))
        CHECK_MESSAGE(slurp(entry.path()) == slurp(dir / "data" / entry.path().filename()), entry.path().filename().string());
}

TEST_CASE("score-attrs matches the golden oracle file") {
    const auto dir = scratch("golden");
    const auto r = lfd_cmd({"score-attrs", "--config", (kData / "dialogue.json").string(), "--out", (dir / "attrs").string()});
    REQUIRE(r.code == 0);
    const auto got = read_csv(dir / "attrs" / "attrs.csv");
    const auto want = read_csv(kGolden / "dialogue_attrs.csv");
    REQUIRE(got.size() == want.size());
    CHECK(got[0] == want[0]);
    for (std::size_t i = 1; i < got.size(); ++i) {
        REQUIRE(got[i].size() == 3);
        CHECK(got[i][0] == want[i][0]);
        CHECK(got[i][1] == want[i][1]);
        const double g = std::stod(got[i][2]), w = std::stod(want[i][2]);
        CHECK(std::abs(g - w) <= 1e-9 * std::max(1.0, std::abs(w)));
    }
}

TEST_CASE("full pipeline on the toy corpus") {
    const auto dir = scratch("pipeline");
    Json j = tiny_lm_config();
    j["objective"] = {{"kind", "poe_combined"}, {"lambda", 0.5}, {"R", 0.7}};
    const auto cfg = write_config(dir, "lfd.json", j);
    const auto run_a = dir / "a", run_b = dir / "b";

    REQUIRE(lfd_cmd({"train", "--config", cfg.string(), "--out", run_a.string()}).code == 0);
    REQUIRE(lfd_cmd({"train", "--config", cfg.string(), "--out", run_b.string()}).code == 0);

    // Expert plus one checkpoint per epoch.
    std::size_t checkpoints = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(run_a / "checkpoints")) ++checkpoints;
    CHECK(checkpoints == 4);
    CHECK(slurp(run_a / "config.json") == slurp(cfg));
    CHECK(slurp(run_a / "train_log.jsonl") == slurp(run_b / "train_log.jsonl"));
    CHECK(slurp(run_a / "expert_log.jsonl") == slurp(run_b / "expert_log.jsonl"));
    for (const auto& e : fs::directory_iterator(run_a / "checkpoints"))
        CHECK(slurp(e.path()) == slurp(run_b / "checkpoints" / e.path().filename()));

    {  // refuses a nonempty output without --overwrite
        CHECK(lfd_cmd({"train", "--config", cfg.string(), "--out", run_a.string()}).code == cli::kExitUsage);
    }

    {  // generate and evaluate are reproducible
        for (const auto& run : {run_a, run_b})
            REQUIRE(lfd_cmd({"generate", "--config", cfg.string(), "--run", run.string()}).code == 0);
        CHECK(slurp(run_a / "generate" / "generations.jsonl") == slurp(run_b / "generate" / "generations.jsonl"));
        for (const auto& run : {run_a, run_b})
            REQUIRE(lfd_cmd({"evaluate", "--config", cfg.string(), "--run", run.string()}).code == 0);
        CHECK(slurp(run_a / "evaluate" / "summary.csv") == slurp(run_b / "evaluate" / "summary.csv"));
        CHECK(lfd_cmd({"generate", "--config", cfg.string(), "--run", run_a.string()}).code == cli::kExitUsage);
        CHECK(lfd_cmd({"generate", "--config", cfg.string(), "--run", run_a.string(), "--overwrite"}).code == 0);
        CHECK(slurp(run_a / "generate" / "generations.jsonl") == slurp(run_b / "generate" / "generations.jsonl"));
    }

    {  // evaluating references against themselves
        const auto refs = (run_a / "generate" / "references.jsonl").string();
        REQUIRE(lfd_cmd({"evaluate", "--config", cfg.string(), "--run", run_a.string(), "--generations", refs, "--references", refs,
                         "--out", (dir / "self").string()})
                    .code == 0);
        std::istringstream report(slurp(dir / "self" / "report.jsonl"));
        std::string line;
        int seen = 0;
        while (std::getline(report, line)) {
            const Json r = Json::parse(line);
            if (r["metric"] == "kld") {
                CHECK(r["value"].get<double>() <= 1e-6);
                ++seen;
            }
            if (r["metric"] == "bleu") {
                CHECK(r["value"].get<double>() == doctest::Approx(1.0));
                ++seen;
            }
            if (r["metric"] == "ppl_paper") CHECK(r["value"].get<double>() >= 1.0);
        }
        CHECK(seen == 2);
    }

    {  // dynamics writes two rows per checkpoint per metric
        const auto r = lfd_cmd({"dynamics", "--config", cfg.string(), "--run", run_a.string()});
        REQUIRE(r.code == 0);
        const auto rows = read_csv(run_a / "dynamics" / "curves.csv");
        CHECK(rows[0] == std::vector<std::string>{"metric", "group", "epoch", "log_ppl"});
        CHECK(rows.size() == 1 + 2 * 2 * 3);  // two default metrics, three epochs
    }

    {  // missing checkpoints exit 2
        CHECK(lfd_cmd({"generate", "--config", cfg.string(), "--run", run_a.string(), "--checkpoint", (dir / "nope.ckpt").string()}).code ==
              cli::kExitUsage);
        CHECK(lfd_cmd({"dynamics", "--config", cfg.string(), "--run", (dir / "empty").string()}).code == cli::kExitUsage);
    }
}

TEST_CASE("output root comes from the environment") {
    const auto dir = scratch("env");
    Json j = tiny_lm_config();
    j["attributes"] = {{"metrics", {"repetition"}}};
    const auto cfg = write_config(dir, "probe.json", j);
    setenv("LFD_OUTPUT_ROOT", (dir / "root").string().c_str(), 1);
    const auto r = lfd_cmd({"score-attrs", "--config", cfg.string()});
    unsetenv("LFD_OUTPUT_ROOT");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "root" / "probe" / "score-attrs" / "attrs.csv"));
}
