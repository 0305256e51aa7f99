// dualad: extract | train | evaluate | diagnose | report
//
// Options may come from flags, from a config file (--config, TOML or INI
// with the long option names as keys), or DUALAD_CACHE for the cache root.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/fmt/chrono.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dualad/backbone/feature_cache.hpp"
#include "dualad/backbone/preprocess.hpp"
#include "dualad/backbone/vit.hpp"
#include "dualad/benchmark/datasets.hpp"
#include "dualad/benchmark/experiment.hpp"
#include "dualad/benchmark/split.hpp"
#include "dualad/benchmark/variant.hpp"
#include "dualad/core/error.hpp"
#include "dualad/core/io.hpp"
#include "dualad/core/random.hpp"
#include "dualad/diagnostics/confusion.hpp"
#include "dualad/diagnostics/demos.hpp"
#include "dualad/diagnostics/plot.hpp"
#include "dualad/distillation/checkpoint.hpp"
#include "dualad/distillation/discrepancy.hpp"
#include "dualad/distillation/train.hpp"

namespace fs = std::filesystem;
using namespace dualad;
using io::json;

namespace {

struct Options {
    std::string cache_dir;
    std::string output = "dualad-out";
    std::string log_level = "info";

    std::string dataset = "blobs";
    std::string dataset_root;
    int limit_per_class = 0;
    int classes = 0;
    int train_per_class = 0;
    int test_per_class = 0;
    int side = 0;
    double noise = 0.0;
    std::uint64_t dataset_seed = 0;

    std::string backbone = "mock";
    std::string weights;
    int mock_blocks = 12;
    std::uint64_t mock_seed = 7;
    bool tap_layer_norm = false;

    std::string setting = "unimodal";
    std::vector<int> pivots;
    std::vector<std::string> variants;
    std::string variant_set;
    int trials = 1;
    std::uint64_t seed = 0;
    int blocks = 0;
    double energy = 0.0;
    double reg_lambda = 0.0;
    std::string accounting = "sum";

    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-4;
    std::string optimizer = "adam";
    int patience = 5;
    std::string init = "random";
    double trace_budget_mb = 1024.0;
    bool parallel = false;

    std::string space = "pretrained";
    std::string split = "test";
    double threshold = 0.25;
    bool demos = false;

    std::vector<std::string> inputs;

    std::map<std::string, CLI::Option*> given;  // dataset generator flags
    [[nodiscard]] bool set(const std::string& name) const { return given.at(name)->count() > 0; }
};

std::optional<fs::path> cache_root(const Options& o) {
    if (o.cache_dir.empty()) return std::nullopt;
    fs::create_directories(o.cache_dir);
    return fs::path(o.cache_dir);
}

benchmark::DatasetHandle load_dataset(const Options& o) {
    json opts = json::object();
    if (o.dataset == "blobs" || o.dataset == "spectrum") {
        if (o.set("classes")) opts["classes"] = o.classes;
        if (o.set("train-per-class")) opts["train_per_class"] = o.train_per_class;
        if (o.set("test-per-class")) opts["test_per_class"] = o.test_per_class;
        if (o.set("side")) opts["side"] = o.side;
        if (o.set("noise")) {
            if (o.dataset != "blobs") throw ConfigError("--noise applies to the blobs dataset only");
            opts["noise"] = o.noise;
        }
        opts["seed"] = o.dataset_seed;
    } else {
        if (!o.dataset_root.empty()) opts["root"] = o.dataset_root;
        if (o.limit_per_class > 0) opts["limit_per_class"] = o.limit_per_class;
    }
    return benchmark::make_dataset(o.dataset, opts);
}

std::unique_ptr<backbone::Backbone> make_backbone(const Options& o, const benchmark::DatasetSplits& data) {
    if (o.backbone == "pixels") return std::make_unique<backbone::PixelBackbone>(static_cast<int>(data.train.height));
    backbone::VisionTransformer vit;
    if (o.backbone == "mock") {
        auto spec = backbone::mock_spec(o.mock_blocks, o.mock_seed);
        spec.tap_layer_norm = o.tap_layer_norm;
        vit = backbone::VisionTransformer::mock(spec, o.mock_seed);
    } else {
        if (o.weights.empty()) throw ConfigError("--backbone weights needs --weights <stem>");
        vit = backbone::VisionTransformer::load(o.weights);
        if (o.tap_layer_norm) vit.set_tap_layer_norm(true);
    }
    return std::make_unique<backbone::VisionTransformer>(std::move(vit));
}

const backbone::VisionTransformer& as_transformer(const backbone::Backbone& b) {
    const auto* vit = dynamic_cast<const backbone::VisionTransformer*>(&b);
    if (vit == nullptr) throw ConfigError("this command needs a transformer backbone");
    return *vit;
}

int block_count(const Options& o, const backbone::BackboneSpec& spec) {
    if (o.blocks > spec.num_blocks) throw ConfigError("--blocks exceeds the backbone's " + std::to_string(spec.num_blocks) + " blocks");
    return o.blocks > 0 ? o.blocks : std::max(1, std::min(10, spec.num_blocks - 2));
}

distillation::TrainConfig train_config(const Options& o) {
    distillation::TrainConfig c;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.learning_rate = o.lr;
    c.optimizer = o.optimizer;
    c.early_stop_patience = o.patience > 0 ? std::optional<int>(o.patience) : std::nullopt;
    if (o.init == "random") c.init = distillation::StudentInit::random;
    else if (o.init == "teacher-copy") c.init = distillation::StudentInit::teacher_copy;
    else throw ConfigError("--init must be random or teacher-copy");
    c.parallel_blocks = o.parallel;
    c.max_cached_bytes = static_cast<std::size_t>(o.trace_budget_mb * 1024.0 * 1024.0);
    c.validate();
    return c;
}

std::vector<std::string> variant_names(const Options& o, int num_blocks) {
    std::vector<std::string> names = o.variants;
    if (!o.variant_set.empty()) {
        const auto extra = benchmark::variant_set(o.variant_set);
        names.insert(names.end(), extra.begin(), extra.end());
    }
    if (names.empty()) names.emplace_back("combined:gaussian");
    std::vector<std::string> out;
    for (const auto& text : names) {
        auto v = benchmark::Variant::parse(text);
        if (o.energy > 0.0 && v.uses_pretrained() && text.find(":e=") == std::string::npos) v.energy = o.energy;
        if (o.blocks > 0 && v.uses_finetuned() && text.find(":m=") == std::string::npos) v.blocks = o.blocks;
        out.push_back(v.resolved(num_blocks).name());
    }
    return out;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

backbone::ImageBatch unlabeled(backbone::ImageBatch b) {
    b.labels.clear();
    return b;
}

// ---------------------------------------------------------------------------

int cmd_extract(const Options& o) {
    const auto ds = load_dataset(o);
    const auto data = ds.load();
    const auto model = make_backbone(o, data);
    const auto& spec = model->spec();
    backbone::FeatureStore store(*model, cache_root(o), ds.name);

    json summary = {{"dataset", ds.name}, {"backbone_id", spec.identifier}};
    for (const auto& [tag, batch] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
        const auto images = unlabeled(backbone::preprocess(*batch, spec));
        const auto zp = store.pretrained(images, tag);
        summary[tag] = {{"samples", images.size()}, {"pretrained_dim", zp.cols()}};
        if (spec.num_blocks > 0) {
            const auto blocks = distillation::last_blocks(spec.num_blocks, block_count(o, spec));
            (void)store.trace(images, tag, blocks);
            summary[tag]["blocks"] = blocks;
        }
    }
    summary["extractions"] = store.extractions();
    spdlog::info("extract: {} backbone passes", store.extractions());
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_train(const Options& o) {
    const auto ds = load_dataset(o);
    const auto data = ds.load();
    const auto model = make_backbone(o, data);
    const auto& teacher = as_transformer(*model);
    const auto& spec = teacher.spec();
    const auto setting = benchmark::setting_from_string(o.setting);
    if (o.pivots.size() > 1) throw ConfigError("train takes a single --pivot");
    const int pivot = o.pivots.empty() ? 0 : o.pivots.front();
    const auto split = benchmark::make_split(data, ds.num_classes, pivot, setting);

    auto cfg = train_config(o);
    const std::uint64_t cell_seed = derive_seed(derive_seed(o.seed, 0), static_cast<std::uint64_t>(pivot));
    cfg.seed = derive_seed(cell_seed, 0x5701);
    const auto blocks = distillation::last_blocks(spec.num_blocks, block_count(o, spec));

    const fs::path dir = fs::path(o.output) / "students" / (o.setting + "-class" + std::to_string(pivot));
    auto ck = distillation::EnsembleCheckpoint::resume_or_create(dir, spec.identifier, blocks, cfg);
    if (!ck.completed().empty()) spdlog::info("resuming: {} of {} blocks already trained", ck.completed().size(), blocks.size());

    const auto images = unlabeled(backbone::preprocess(data.train, spec));
    const auto train_images = images.subset(split.train_index, false);
    std::mutex m;
    auto on_block = [&](const distillation::TrainedBlock& tb) {
        std::lock_guard lock(m);
        ck.add(tb);
        spdlog::info("block {}: loss {:.6g} -> {:.6g} over {} epochs", tb.log.block_index, tb.log.initial_loss,
                     tb.log.epoch_losses.empty() ? tb.log.initial_loss : tb.log.epoch_losses.back(),
                     tb.log.epoch_losses.size());
    };
    const std::size_t need = distillation::trace_bytes(spec, images.size(), blocks.size());
    if (need <= cfg.max_cached_bytes) {
        backbone::FeatureStore store(teacher, cache_root(o), ds.name);
        const auto trace = benchmark::detail::select_samples(store.trace(images, "train", blocks), split.train_index);
        (void)distillation::train_students(teacher, trace, cfg, ck.completed(), on_block);
    } else {
        (void)distillation::train_students(teacher, train_images, blocks, cfg, ck.completed(), on_block);
    }
    ck.write_manifest();

    std::string curves = "block,epoch,loss\n";
    for (const auto& [j, tb] : ck.completed()) {
        curves += fmt::format("{},0,{:.17g}\n", j, tb.log.initial_loss);
        for (std::size_t e = 0; e < tb.log.epoch_losses.size(); ++e)
            curves += fmt::format("{},{},{:.17g}\n", j, e + 1, tb.log.epoch_losses[e]);
    }
    io::atomic_write(dir / "loss_curves.csv", curves);
    std::cout << json{{"checkpoint", dir.string()}, {"blocks", blocks}}.dump() << "\n";
    return kExitOk;
}

int cmd_evaluate(const Options& o) {
    const auto ds = load_dataset(o);
    const auto data = ds.load();
    const auto model = make_backbone(o, data);
    const auto setting = benchmark::setting_from_string(o.setting);

    benchmark::ExperimentConfig cfg;
    cfg.variants = variant_names(o, model->spec().num_blocks);
    cfg.trials = o.trials;
    cfg.seed = o.seed;
    cfg.pivots = o.pivots;
    cfg.train = train_config(o);
    cfg.train.parallel_blocks = false;
    cfg.scoring.reg_lambda = o.reg_lambda;
    if (o.accounting == "sum") cfg.accounting = distillation::NormAccounting::sum;
    else if (o.accounting == "mean") cfg.accounting = distillation::NormAccounting::mean_per_element;
    else throw ConfigError("--accounting must be sum or mean");
    cfg.trace_budget_bytes = cfg.train.max_cached_bytes;
    cfg.parallel_pivots = o.parallel;

    backbone::FeatureStore store(*model, cache_root(o), ds.name);
    benchmark::ExperimentTiming timing;
    auto report = benchmark::run_experiment(ds, data, setting, *model, cfg, store, &timing);
    report.config["backbone"] = model->spec();
    report.config["backbone_kind"] = o.backbone;

    const fs::path out(o.output);
    fs::create_directories(out);
    benchmark::write_report_json(out / "report.json", report);
    benchmark::write_report_csv(out / "report.csv", report);
    json pivot_seconds = json::object();
    for (const auto& [c, s] : timing.pivot_seconds) pivot_seconds[std::to_string(c)] = s;
    io::write_json(out / "report.timing.json", {{"timestamp", utc_timestamp()},
                                                 {"total_seconds", timing.total_seconds},
                                                 {"pivot_seconds", pivot_seconds},
                                                 {"extractions", store.extractions()}});
    for (const auto& r : report.results) spdlog::info("{}: mean AUROC {:.4f}", r.variant, r.mean_auroc);
    return kExitOk;
}

int cmd_diagnose(const Options& o) {
    const fs::path out(o.output);
    fs::create_directories(out);
    const auto ds = load_dataset(o);
    const auto data = ds.load();
    const auto model = make_backbone(o, data);
    const auto& spec = model->spec();
    if (o.split != "train" && o.split != "test") throw ConfigError("--split must be train or test");
    const auto& raw = o.split == "train" ? data.train : data.test;
    const auto images = unlabeled(backbone::preprocess(raw, spec));

    backbone::FeatureStore store(*model, cache_root(o), ds.name);
    FeatureMatrix features;
    if (o.space == "pretrained") {
        features = store.pretrained(images, o.split);
    } else if (o.space == "finetuned") {
        const fs::path dir = fs::path(o.output) / "students" / (o.setting + "-class" + std::to_string(o.pivots.empty() ? 0 : o.pivots.front()));
        const auto ens = distillation::load_ensemble(dir);
        (void)as_transformer(*model);
        const auto trace = store.trace(images, o.split, ens.block_indices);
        features = distillation::discrepancy_from_trace(spec, trace, ens, distillation::NormAccounting::sum)
                       .features(spec.identifier, o.split);
    } else {
        throw ConfigError("--space must be pretrained or finetuned");
    }
    const auto rep = diagnostics::confusion_report(features, raw.labels, o.threshold);
    json j = diagnostics::to_json(rep, ds.class_names);
    j["dataset"] = ds.name;
    j["backbone_id"] = spec.identifier;
    j["space"] = o.space;
    j["split"] = o.split;
    io::write_json(out / "confusion.json", j);
    diagnostics::write_scatter_png(out / "confusion.png", rep.projection, raw.labels);
    spdlog::info("diagnose: {} confused class pairs", rep.flagged.size());

    if (o.demos) {
        const auto toy = diagnostics::toy_confusion_demo(o.seed);
        io::write_json(out / "toy_demo.json", {{"unimodal_auroc", toy.unimodal_auroc},
                                                {"multimodal_auroc", toy.multimodal_auroc},
                                                {"control_unimodal_auroc", toy.control_unimodal_auroc},
                                                {"control_multimodal_auroc", toy.control_multimodal_auroc},
                                                {"narrative", toy.narrative}});
        const auto pts = diagnostics::toy_points(o.seed, true);
        diagnostics::write_scatter_png(out / "toy_demo.png", pts.test.values, pts.test_labels);
        const auto inf = diagnostics::auroc_inflation_demo(20, 1, o.seed);
        io::write_json(out / "inflation_demo.json", {{"auroc", inf.auroc},
                                                      {"precision_at_threshold", inf.precision_at_threshold},
                                                      {"threshold", inf.threshold},
                                                      {"normal_count", inf.normal_count},
                                                      {"anomaly_count", inf.anomaly_count},
                                                      {"expected_auroc", inf.expected_auroc},
                                                      {"expected_precision", inf.expected_precision},
                                                      {"narrative", inf.narrative}});
    }
    return kExitOk;
}

int cmd_report(const Options& o) {
    std::vector<std::string> inputs = o.inputs;
    if (inputs.empty()) inputs.push_back((fs::path(o.output) / "report.json").string());
    for (const auto& path : inputs) {
        if (!fs::exists(path)) throw DataError(path + ": no such report");
        const auto r = io::read_json(path);
        std::cout << fmt::format("{} / {} / {}\n\n", r.at("dataset").get<std::string>(), r.at("setting").get<std::string>(),
                                 r.at("backbone").get<std::string>());
        for (const auto& v : r.at("results")) {
            std::cout << fmt::format("{:<40} mean {:.4f}  std {:.4f}\n", v.at("variant").get<std::string>(),
                                     v.at("mean_auroc").get<double>(), v.at("std_across_trials").get<double>());
            for (const auto& c : v.at("per_class"))
                std::cout << fmt::format("    {:<20} {:.4f}\n", c.at("class_name").get<std::string>(), c.at("auroc").get<double>());
        }
        std::cout << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic anomaly detection with pretrained and teacher-student transformer features"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML or INI file whose keys are long option names");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    Options o;

    auto* common = app.add_option_group("common");
    common->add_option("--cache-dir", o.cache_dir, "Feature cache root")->envname("DUALAD_CACHE");
    common->add_option("-o,--output", o.output, "Output directory")->capture_default_str();
    common->add_option("--log-level", o.log_level)->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))->capture_default_str();

    auto* data = app.add_option_group("data");
    data->add_option("--dataset", o.dataset)->check(CLI::IsMember(benchmark::dataset_names()))->capture_default_str();
    data->add_option("--dataset-root", o.dataset_root, "Directory holding the dataset files");
    data->add_option("--limit-per-class", o.limit_per_class, "Keep at most this many samples per class and split");
    o.given["classes"] = data->add_option("--classes", o.classes, "Synthetic: number of classes");
    o.given["train-per-class"] = data->add_option("--train-per-class", o.train_per_class);
    o.given["test-per-class"] = data->add_option("--test-per-class", o.test_per_class);
    o.given["side"] = data->add_option("--side", o.side, "Synthetic: image side in pixels");
    o.given["noise"] = data->add_option("--noise", o.noise, "Blobs: pixel noise");
    data->add_option("--dataset-seed", o.dataset_seed)->capture_default_str();

    auto* model = app.add_option_group("backbone");
    model->add_option("--backbone", o.backbone)->check(CLI::IsMember({"mock", "weights", "pixels"}))->capture_default_str();
    model->add_option("--weights", o.weights, "Weight file stem written by tools/export_vit.py");
    model->add_option("--mock-blocks", o.mock_blocks)->check(CLI::PositiveNumber)->capture_default_str();
    model->add_option("--mock-seed", o.mock_seed)->capture_default_str();
    model->add_flag("--tap-layer-norm", o.tap_layer_norm, "Compare block outputs after a parameter-free LayerNorm");

    auto* exp = app.add_option_group("experiment");
    exp->add_option("--setting", o.setting)->check(CLI::IsMember({"unimodal", "multimodal"}))->capture_default_str();
    exp->add_option("--pivot,--pivots", o.pivots, "Normal class (unimodal) or held-out class (multimodal); default all")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    exp->add_option("--variant", o.variants, "Scorer variant, e.g. combined:m=10:gaussian:e=0.90 (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    exp->add_option("--variant-set", o.variant_set)->check(CLI::IsMember({"feature-spaces", "scorers", "energies", "pretrained-energies"}));
    exp->add_option("--trials", o.trials)->check(CLI::PositiveNumber)->capture_default_str();
    exp->add_option("--seed", o.seed)->capture_default_str();
    exp->add_option("--blocks", o.blocks, "Number of final blocks with students")->check(CLI::PositiveNumber);
    exp->add_option("--energy", o.energy, "Whitening energy for pretrained features")->check(CLI::Range(0.0, 1.0));
    exp->add_option("--reg-lambda", o.reg_lambda)->check(CLI::NonNegativeNumber)->capture_default_str();
    exp->add_option("--accounting", o.accounting)->check(CLI::IsMember({"sum", "mean"}))->capture_default_str();

    auto* tr = app.add_option_group("training");
    tr->add_option("--epochs", o.epochs)->capture_default_str();
    tr->add_option("--batch-size", o.batch_size)->capture_default_str();
    tr->add_option("--lr", o.lr)->capture_default_str();
    tr->add_option("--optimizer", o.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    tr->add_option("--patience", o.patience, "Early-stopping patience in epochs, 0 disables")->capture_default_str();
    tr->add_option("--init", o.init)->check(CLI::IsMember({"random", "teacher-copy"}))->capture_default_str();
    tr->add_option("--trace-budget-mb", o.trace_budget_mb, "Hold teacher traces in memory up to this size")->capture_default_str();
    tr->add_flag("--parallel", o.parallel, "Run classes and blocks on all cores");

    auto* diag = app.add_option_group("diagnostics");
    diag->add_option("--space", o.space)->check(CLI::IsMember({"pretrained", "finetuned"}))->capture_default_str();
    diag->add_option("--split", o.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
    diag->add_option("--threshold", o.threshold, "Confusion rate that flags a class pair")->capture_default_str();
    diag->add_flag("--demos", o.demos, "Also write the toy confusion and AUROC inflation demos");

    auto* extract = app.add_subcommand("extract", "Fill the feature cache for a dataset");
    auto* train = app.add_subcommand("train", "Train students for one split and checkpoint them");
    auto* evaluate = app.add_subcommand("evaluate", "Run the benchmark and write report.json / report.csv");
    auto* diagnose = app.add_subcommand("diagnose", "Class confusion report and scatter plot");
    auto* report = app.add_subcommand("report", "Print a summary of report files");
    report->add_option("inputs", o.inputs, "report.json files (default <output>/report.json)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    for (auto* s : {extract, train, evaluate, diagnose, report}) s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    auto logger = spdlog::stderr_color_mt("dualad");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(o.log_level));

    try {
        if (*extract) return cmd_extract(o);
        if (*train) return cmd_train(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*diagnose) return cmd_diagnose(o);
        return cmd_report(o);
    } catch (const ConfigError& e) {
        spdlog::error("configuration error: {}", e.what());
        return kExitConfigError;
    } catch (const DataError& e) {
        spdlog::error("data error: {}", e.what());
        return kExitDataError;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return kExitNumericalError;
    } catch (const json::exception& e) {
        spdlog::error("data error: {}", e.what());
        return kExitDataError;
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return kExitInternalError;
    }
}
