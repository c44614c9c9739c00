#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fibro/cli.hpp"
#include "test_util.hpp"

using fibro::testing::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = fibro::cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::vector<fs::path> run_dirs(const fs::path& parent) {
    std::vector<fs::path> dirs;
    if (!fs::exists(parent)) return dirs;
    for (const auto& e : fs::directory_iterator(parent))
        if (e.is_directory() && e.path().filename().string().rfind("run-", 0) == 0) dirs.push_back(e.path());
    return dirs;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

} // namespace

TEST(Cli, HelpAndUsage) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_NE(run({"--help"}).out.find("cv"), std::string::npos);
    EXPECT_EQ(run({"cv", "--help"}).code, 0);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"cv", "--k", "1", "--data", "x"}).code, 1);
    EXPECT_EQ(run({"synth"}).code, 1);
}

TEST(Cli, VersionAndSchema) {
    const CliResult v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    const json j = json::parse(v.out);
    EXPECT_EQ(j.at("version"), fibro::cli::kVersion);
    EXPECT_EQ(j.at("prepared_format"), 1);
    EXPECT_EQ(j.at("checkpoint_format"), 1);

    const CliResult s = run({"--print-config-schema"});
    EXPECT_EQ(s.code, 0);
    const json schema = json::parse(s.out);
    EXPECT_TRUE(schema.contains("train_config"));
    EXPECT_TRUE(schema.contains("model_config"));
}

TEST(Cli, MissingDataDirNamesThePath) {
    TempDir tmp("cli");
    const std::string missing = (tmp.path() / "no_such_dir").string();
    const CliResult r = run({"prepare", "--data", missing});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("no_such_dir"), std::string::npos);
    EXPECT_NE(r.err.find("level=error"), std::string::npos);
    EXPECT_EQ(run({"cv", "--k", "2"}).code, 1);
}

TEST(Cli, BadConfigIsAValidationError) {
    TempDir tmp("cli");
    ASSERT_EQ(run({"synth", "--patients", "4", "--size", "16", "--slices", "6", "--out", (tmp.path() / "d").string()}).code, 0);
    write_text(tmp.path() / "bad.json", R"({"epochs": -3})");
    const CliResult r = run({"cv", "--data", (tmp.path() / "d").string(), "--k", "2", "--config",
                       (tmp.path() / "bad.json").string(), "--out-dir", (tmp.path() / "runs").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("kind=validation"), std::string::npos);
    write_text(tmp.path() / "typo.json", R"({"epoch": 3})");
    EXPECT_EQ(run({"cv", "--data", (tmp.path() / "d").string(), "--k", "2", "--config",
                   (tmp.path() / "typo.json").string()}).code, 1);
}

TEST(Cli, SynthPrepareCvChain) {
    TempDir tmp("cli");
    const std::string data = (tmp.path() / "data").string();
    const std::string runs = (tmp.path() / "runs").string();
    ASSERT_EQ(run({"synth", "--patients", "6", "--size", "32", "--slices", "10", "--seed", "2", "--out", data}).code, 0);
    EXPECT_TRUE(fs::exists(fs::path(data) / "train.csv"));
    EXPECT_TRUE(fs::exists(fs::path(data) / "truth.csv"));
    EXPECT_TRUE(fs::exists(fs::path(data) / "manifest.json"));

    const std::string prepared = (tmp.path() / "data" / "prepared.fpd").string();
    ASSERT_EQ(run({"prepare", "--data", data, "--size", "16", "--out", prepared}).code, 0);
    EXPECT_TRUE(fs::exists(tmp.path() / "data" / "volumes.csv"));
    ASSERT_EQ(run({"fit-slopes", "--data", data}).code, 0);
    EXPECT_TRUE(fs::exists(tmp.path() / "data" / "slopes.csv"));

    write_text(tmp.path() / "train.json", R"({"epochs": 2})");
    write_text(tmp.path() / "model.json",
               R"({"backbone_channels": [4, 8], "attention_filter_size": 4, "stacking_factor": 1})");
    const CliResult cv = run({"cv", "--prepared", prepared, "--k", "2", "--seed", "3", "--config",
                        (tmp.path() / "train.json").string(), "--model-config", (tmp.path() / "model.json").string(),
                        "--truth", (tmp.path() / "data" / "truth.csv").string(), "--out-dir", runs});
    ASSERT_EQ(cv.code, 0) << cv.err;
    const auto dirs = run_dirs(runs);
    ASSERT_EQ(dirs.size(), 1u);
    const json report = read_json(dirs[0] / "report.json");
    EXPECT_EQ(report.at("folds").size(), 2u);
    EXPECT_EQ(report.at("k"), 2);
    EXPECT_TRUE(report.at("aggregate").contains("model"));
    EXPECT_TRUE(fs::exists(dirs[0] / "folds.json"));
    EXPECT_TRUE(fs::exists(dirs[0] / "fold0.ckpt"));
    const json manifest = read_json(dirs[0] / "manifest.json");
    EXPECT_EQ(manifest.at("command"), "cv");
    EXPECT_EQ(manifest.at("fingerprint"), report.at("fingerprint"));
    EXPECT_EQ("run-" + manifest.at("fingerprint").get<std::string>(), dirs[0].filename().string());
    for (const auto& e : fs::directory_iterator(dirs[0])) EXPECT_NE(e.path().extension(), ".tmp");

    const std::string plan = (dirs[0] / "folds.json").string();
    const std::string train_runs = (tmp.path() / "train_runs").string();
    const CliResult tr = run({"train", "--prepared", prepared, "--fold-plan", plan, "--fold", "1", "--config",
                        (tmp.path() / "train.json").string(), "--model-config", (tmp.path() / "model.json").string(),
                        "--out-dir", train_runs});
    ASSERT_EQ(tr.code, 0) << tr.err;
    const auto tdirs = run_dirs(train_runs);
    ASSERT_EQ(tdirs.size(), 1u);
    EXPECT_TRUE(fs::exists(tdirs[0] / "train_log.json"));

    const std::string eval_runs = (tmp.path() / "eval_runs").string();
    const CliResult ev = run({"evaluate", "--checkpoint", (tdirs[0] / "model.ckpt").string(), "--prepared", prepared,
                        "--fold-plan", plan, "--out-dir", eval_runs});
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto edirs = run_dirs(eval_runs);
    ASSERT_EQ(edirs.size(), 1u);
    const json eval = read_json(edirs[0] / "eval.json");
    EXPECT_TRUE(eval.contains("lll_m"));
    EXPECT_TRUE(eval.contains("sigma_used"));
}

TEST(Cli, GradcheckPasses) {
    TempDir tmp("cli");
    write_text(tmp.path() / "model.json",
               R"({"input_size": [16, 16], "backbone_channels": [4, 8], "attention_filter_size": 4, "stacking_factor": 2})");
    const CliResult r = run({"gradcheck", "--model-config", (tmp.path() / "model.json").string(), "--out-dir",
                       (tmp.path() / "runs").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto dirs = run_dirs(tmp.path() / "runs");
    ASSERT_EQ(dirs.size(), 1u);
    const json g = read_json(dirs[0] / "gradcheck.json");
    EXPECT_LT(g.at("max_rel_error").get<double>(), 1e-4);
}

TEST(Cli, ManifestWriteIsAtomic) {
    TempDir tmp("cli");
    fibro::cli::write_atomic(tmp.path() / "m.json", "{}");
    fibro::cli::write_atomic(tmp.path() / "m.json", "{\"a\":1}");
    EXPECT_EQ(read_json(tmp.path() / "m.json").at("a"), 1);
    EXPECT_FALSE(fs::exists(tmp.path() / "m.json.tmp"));
    const std::string ts = fibro::cli::utc_timestamp();
    EXPECT_EQ(ts.size(), 20u);
    EXPECT_EQ(ts.back(), 'Z');
}
