#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cli_runner.hpp"
#include "dualad/core/io.hpp"
#include "dualad/distillation/checkpoint.hpp"

using namespace dualad;
using dualad::testing::read_text;
using dualad::testing::run_cli;
using dualad::testing::scratch_dir;
using io::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = DUALAD_CLI_PATH;

// Small enough to run in a second or two.
std::vector<std::string> small_run(const fs::path& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"-o", out.string(),    "--mock-blocks",     "4",  "--train-per-class", "20",
                               "--test-per-class",  "10", "--epochs", "3", "--log-level", "warn"};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
}

std::vector<std::string> with(std::string cmd, std::vector<std::string> args) {
    args.insert(args.begin(), std::move(cmd));
    return args;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

} // namespace

TEST(Cli, HelpExitsCleanly) {
    const auto r = run_cli(kCli, {"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("evaluate"), std::string::npos);
}

TEST(Cli, IdenticalInvocationsWriteIdenticalReports) {
    const auto dir = scratch_dir("cli_determinism");
    const std::vector<std::string> variants{"--variant", "pretrained:gaussian", "--variant", "combined:gaussian",
                                            "--pivot", "0", "--pivot", "2"};
    for (const auto* run : {"a", "b"}) {
        const auto r = run_cli(kCli, with("evaluate", small_run(dir / run, variants)),
                               {"DUALAD_CACHE=" + (dir / run / "cache").string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(read_text(dir / "a" / "report.json"), read_text(dir / "b" / "report.json"));
    EXPECT_EQ(read_text(dir / "a" / "report.csv"), read_text(dir / "b" / "report.csv"));
    // Timing lives in its own file so it cannot break the comparison.
    const auto timing = io::read_json(dir / "a" / "report.timing.json");
    EXPECT_TRUE(timing.contains("timestamp"));
    EXPECT_GT(timing.at("total_seconds").get<double>(), 0.0);
    EXPECT_EQ(read_text(dir / "a" / "report.json").find("timestamp"), std::string::npos);
}

TEST(Cli, WarmAndColdCacheGiveTheSameReport) {
    const auto dir = scratch_dir("cli_warm_report");
    const auto cache = "DUALAD_CACHE=" + (dir / "cache").string();
    ASSERT_EQ(run_cli(kCli, with("evaluate", small_run(dir / "cold", {"--pivot", "1"})), {cache}).code, 0);
    ASSERT_EQ(run_cli(kCli, with("evaluate", small_run(dir / "warm", {"--pivot", "1"})), {cache}).code, 0);
    EXPECT_EQ(read_text(dir / "cold" / "report.json"), read_text(dir / "warm" / "report.json"));
    EXPECT_GT(io::read_json(dir / "cold" / "report.timing.json").at("extractions").get<int>(), 0);
    EXPECT_EQ(io::read_json(dir / "warm" / "report.timing.json").at("extractions").get<int>(), 0);
}

TEST(Cli, ReportEmbedsResolvedConfig) {
    const auto dir = scratch_dir("cli_snapshot");
    const auto r = run_cli(kCli, with("evaluate", small_run(dir, {"--pivot", "0", "--energy", "0.95", "--blocks", "2",
                                                                  "--seed", "11", "--trials", "2"})));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = io::read_json(dir / "report.json");
    const auto& cfg = rep.at("config");
    EXPECT_EQ(cfg.at("variants"), json({"combined:m=2:gaussian:e=0.95"}));
    EXPECT_EQ(cfg.at("seed").get<int>(), 11);
    EXPECT_EQ(cfg.at("trials").get<int>(), 2);
    EXPECT_EQ(cfg.at("train").at("epochs").get<int>(), 3);
    EXPECT_EQ(cfg.at("backbone").at("num_blocks").get<int>(), 4);
    EXPECT_EQ(rep.at("dataset_options").at("train_per_class").get<int>(), 20);
}

TEST(Cli, CsvHasOneRowPerPivotAndVariant) {
    const auto dir = scratch_dir("cli_csv");
    const auto r = run_cli(kCli, with("evaluate", small_run(dir, {"--setting", "multimodal", "--variant-set", "scorers",
                                                                  "--pivot", "0", "--pivot", "1", "--pivot", "3"})));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = io::read_json(dir / "report.json");
    const auto variants = rep.at("results").size();
    EXPECT_EQ(variants, 7u);
    EXPECT_EQ(count_lines(read_text(dir / "report.csv")), 1 + 3 * static_cast<int>(variants));
    EXPECT_EQ(rep.at("setting"), "multimodal");
}

TEST(Cli, ConfigFileIsReadAndFlagsOverrideIt) {
    const auto dir = scratch_dir("cli_config");
    {
        std::ofstream cfg(dir / "run.toml");
        cfg << "dataset = \"blobs\"\nclasses = 3\ntrain-per-class = 15\ntest-per-class = 10\nmock-blocks = 3\n"
               "epochs = 2\nsetting = \"multimodal\"\nvariant = [\"pretrained:knn\", \"finetuned:gaussian\"]\n"
               "seed = 5\nlog-level = \"warn\"\noutput = \""
            << (dir / "from-file").string() << "\"\n";
    }
    auto r = run_cli(kCli, {"evaluate", "--config", (dir / "run.toml").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    auto rep = io::read_json(dir / "from-file" / "report.json");
    EXPECT_EQ(rep.at("setting"), "multimodal");
    EXPECT_EQ(rep.at("class_names").size(), 3u);
    EXPECT_EQ(rep.at("config").at("variants"), json({"pretrained:knn:k=2:e=0.90", "finetuned:m=1:gaussian"}));

    r = run_cli(kCli, {"evaluate", "--config", (dir / "run.toml").string(), "--seed", "6", "-o", (dir / "flag").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    rep = io::read_json(dir / "flag" / "report.json");
    EXPECT_EQ(rep.at("config").at("seed").get<int>(), 6);
    EXPECT_EQ(rep.at("config").at("train").at("epochs").get<int>(), 2);
}

TEST(Cli, ExtractWithWarmCacheDoesNoBackbonePasses) {
    const auto dir = scratch_dir("cli_extract");
    const auto cache = "DUALAD_CACHE=" + (dir / "cache").string();
    auto r = run_cli(kCli, with("extract", small_run(dir)), {cache});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 4);  // train and test, pretrained and traces
    r = run_cli(kCli, with("extract", small_run(dir)), {cache});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 0);

    // --cache-dir works as well as the environment variable.
    r = run_cli(kCli, with("extract", small_run(dir, {"--cache-dir", (dir / "cache").string()})));
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 0);
}

TEST(Cli, CacheKeyChangesWithBackbone) {
    const auto dir = scratch_dir("cli_key");
    const auto cache = "DUALAD_CACHE=" + (dir / "cache").string();
    ASSERT_EQ(run_cli(kCli, with("extract", small_run(dir)), {cache}).code, 0);
    const auto before = std::distance(fs::directory_iterator(dir / "cache"), fs::directory_iterator{});
    const auto r = run_cli(kCli, with("extract", small_run(dir, {"--mock-seed", "8"})), {cache});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 4);
    const auto after = std::distance(fs::directory_iterator(dir / "cache"), fs::directory_iterator{});
    EXPECT_EQ(after, 2 * before);
}

TEST(Cli, TruncatedCacheEntryIsReextractedWithWarning) {
    const auto dir = scratch_dir("cli_corrupt");
    const auto cache = "DUALAD_CACHE=" + (dir / "cache").string();
    ASSERT_EQ(run_cli(kCli, with("extract", small_run(dir)), {cache}).code, 0);
    fs::path victim;
    for (const auto& e : fs::directory_iterator(dir / "cache"))
        if (e.path().extension() == ".f32") {
            const auto side = io::read_json(fs::path(e.path()).replace_extension(".json"));
            if (side.at("kind") == "pretrained" && side.at("split") == "train") victim = e.path();
        }
    ASSERT_FALSE(victim.empty());
    fs::resize_file(victim, fs::file_size(victim) / 2);

    auto r = run_cli(kCli, with("extract", small_run(dir, {"--log-level", "info"})), {cache});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 1);
    EXPECT_NE(r.err.find("corrupted"), std::string::npos) << r.err;
    r = run_cli(kCli, with("extract", small_run(dir)), {cache});
    EXPECT_EQ(json::parse(r.out).at("extractions").get<int>(), 0);
}

TEST(Cli, ExitCodesSeparateErrorKinds) {
    const auto dir = scratch_dir("cli_exit");
    // configuration
    EXPECT_EQ(run_cli(kCli, with("evaluate", small_run(dir, {"--setting", "bimodal"}))).code, 2);
    EXPECT_EQ(run_cli(kCli, with("evaluate", small_run(dir, {"--variant", "combined:svm"}))).code, 2);
    EXPECT_EQ(run_cli(kCli, with("evaluate", small_run(dir, {"--pivot", "9"}))).code, 2);
    EXPECT_EQ(run_cli(kCli, {"evaluate", "--config", (dir / "missing.toml").string()}).code, 2);
    EXPECT_EQ(run_cli(kCli, {"extract", "--dataset", "cifar10"}).code, 2);
    EXPECT_EQ(run_cli(kCli, {}).code, 2);
    // data
    fs::create_directories(dir / "empty");
    EXPECT_EQ(run_cli(kCli, {"extract", "--dataset", "cifar10", "--dataset-root", (dir / "empty").string()}).code, 3);
    EXPECT_EQ(run_cli(kCli, {"report", (dir / "nope.json").string()}).code, 3);
    // numerical: a wildly large step size makes the students diverge
    const auto r = run_cli(kCli, with("train", small_run(dir, {"--lr", "1e100", "--epochs", "30", "--patience", "0"})));
    EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, TrainWritesCheckpointAndLossCurves) {
    const auto dir = scratch_dir("cli_train");
    const auto r = run_cli(kCli, with("train", small_run(dir, {"--pivot", "1", "--setting", "multimodal"})));
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path ck = dir / "students" / "multimodal-class1";
    const auto ens = distillation::load_ensemble(ck);
    EXPECT_EQ(ens.block_indices, (std::vector<int>{2, 3}));
    const auto curves = read_text(ck / "loss_curves.csv");
    EXPECT_EQ(curves.rfind("block,epoch,loss\n", 0), 0u);
    EXPECT_EQ(count_lines(curves), 1 + 2 * (3 + 1));
    for (const auto& log : ens.logs) EXPECT_LT(log.epoch_losses.back(), log.initial_loss);
}

TEST(Cli, TrainResumesFromPartialCheckpoint) {
    const auto dir = scratch_dir("cli_resume");
    const auto args = with("train", small_run(dir, {"--blocks", "3", "--log-level", "info"}));
    ASSERT_EQ(run_cli(kCli, args).code, 0);
    const fs::path ck = dir / "students" / "unimodal-class0";
    const auto full_bytes = read_text(ck / "block_3.bin");
    const auto full_manifest = read_text(ck / "manifest.json");

    // Drop block 3 from the checkpoint, as if the run had been interrupted.
    auto manifest = io::read_json(ck / "manifest.json");
    json kept = json::array();
    for (const auto& b : manifest.at("blocks"))
        if (b.at("block_index") != 3) kept.push_back(b);
    manifest["blocks"] = kept;
    io::write_json(ck / "manifest.json", manifest);
    fs::remove(ck / "block_3.bin");

    const auto r = run_cli(kCli, args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("resuming: 2 of 3"), std::string::npos) << r.err;
    EXPECT_EQ(r.err.find("block 1:"), std::string::npos);
    EXPECT_NE(r.err.find("block 3:"), std::string::npos);
    EXPECT_EQ(read_text(ck / "block_3.bin"), full_bytes);
    EXPECT_EQ(read_text(ck / "manifest.json"), full_manifest);

    // Changing the training configuration must not silently reuse the checkpoint.
    EXPECT_EQ(run_cli(kCli, with("train", small_run(dir, {"--blocks", "3", "--lr", "2e-4"}))).code, 2);
}

TEST(Cli, DiagnoseWritesReportPlotAndDemos) {
    const auto dir = scratch_dir("cli_diagnose");
    const auto r = run_cli(kCli, with("diagnose", small_run(dir, {"--demos"})));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto conf = io::read_json(dir / "confusion.json");
    EXPECT_EQ(conf.at("confusion").size(), 4u);
    EXPECT_EQ(conf.at("class_names").size(), 4u);
    for (const auto* png : {"confusion.png", "toy_demo.png"}) {
        const auto bytes = read_text(dir / png);
        ASSERT_GE(bytes.size(), 8u);
        EXPECT_EQ(bytes.substr(1, 3), "PNG");
    }
    const auto toy = io::read_json(dir / "toy_demo.json");
    EXPECT_GT(toy.at("unimodal_auroc").get<double>(), toy.at("multimodal_auroc").get<double>());
    const auto inf = io::read_json(dir / "inflation_demo.json");
    EXPECT_EQ(inf.at("normal_count").get<int>(), 500);
    EXPECT_EQ(inf.at("anomaly_count").get<int>(), 9500);
}

TEST(Cli, DiagnoseUsesTrainedStudents) {
    const auto dir = scratch_dir("cli_diagnose_ft");
    EXPECT_EQ(run_cli(kCli, with("diagnose", small_run(dir, {"--space", "finetuned"}))).code, 3);  // nothing trained yet
    ASSERT_EQ(run_cli(kCli, with("train", small_run(dir))).code, 0);
    const auto r = run_cli(kCli, with("diagnose", small_run(dir, {"--space", "finetuned"})));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::read_json(dir / "confusion.json").at("space"), "finetuned");
}

TEST(Cli, ReportPrintsEveryVariant) {
    const auto dir = scratch_dir("cli_report");
    ASSERT_EQ(run_cli(kCli, with("evaluate", small_run(dir, {"--variant-set", "energies", "--pivot", "0"}))).code, 0);
    const auto r = run_cli(kCli, {"report", (dir / "report.json").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto* v : {"combined:m=2:gaussian:e=0.85", "combined:m=2:gaussian:e=0.90", "combined:m=2:gaussian:e=0.95"})
        EXPECT_NE(r.out.find(v), std::string::npos) << r.out;
}
