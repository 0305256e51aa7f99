#pragma once

#include <chrono>
#include <numeric>
#include <span>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "dualad/backbone/feature_cache.hpp"
#include "dualad/backbone/preprocess.hpp"
#include "dualad/benchmark/auroc.hpp"
#include "dualad/benchmark/datasets.hpp"
#include "dualad/benchmark/split.hpp"
#include "dualad/benchmark/variant.hpp"
#include "dualad/distillation/discrepancy.hpp"
#include "dualad/distillation/train.hpp"

namespace dualad::benchmark {

struct ExperimentConfig {
    std::vector<std::string> variants{"combined:gaussian:e=0.90"};
    int trials = 1;
    std::uint64_t seed = 0;
    std::vector<int> pivots;  // empty = every class
    distillation::TrainConfig train;
    ScoringOptions scoring;
    distillation::NormAccounting accounting = distillation::NormAccounting::sum;
    // Teacher traces for the whole dataset are held (and cached) when they fit here.
    std::size_t trace_budget_bytes = std::size_t{1} << 30;
    std::size_t chunk_size = 256;  // samples per forward pass when traces are not held
    bool parallel_pivots = false;

    void validate() const {
        if (trials < 1) throw ConfigError("trials must be positive");
        if (variants.empty()) throw ConfigError("at least one variant is required");
        if (chunk_size < 1) throw ConfigError("chunk_size must be positive");
        train.validate();
        for (const auto& v : variants) (void)Variant::parse(v);
    }
};

inline io::json to_json_snapshot(const ExperimentConfig& c) {
    return {{"variants", c.variants},
            {"trials", c.trials},
            {"seed", c.seed},
            {"pivots", c.pivots},
            {"train", c.train},
            {"reg_lambda", c.scoring.reg_lambda},
            {"whiten_finetuned", c.scoring.whiten_finetuned},
            {"accounting", c.accounting == distillation::NormAccounting::sum ? "sum" : "mean_per_element"}};
}

struct VariantResult {
    std::string variant;
    std::map<int, double> per_class_auroc;               // mean over trials
    std::map<int, double> per_class_std;                 // sample std over trials
    std::map<int, int> retained_dim;                     // whitened dimension, first trial
    std::vector<std::map<int, double>> trial_class_auroc;
    std::vector<double> trial_means;
    double mean_auroc = 0.0;
    double std_across_trials = 0.0;
};

struct BlockSummary {
    int trial = 0;
    int pivot = 0;
    distillation::BlockTrainingLog log;
};

struct ExperimentReport {
    std::string dataset;
    io::json dataset_options;
    Setting setting = Setting::unimodal;
    std::vector<std::string> class_names;
    std::string backbone_id;
    io::json config;
    std::vector<VariantResult> results;
    std::vector<BlockSummary> training;

    [[nodiscard]] const VariantResult& result(const std::string& variant) const {
        for (const auto& r : results)
            if (r.variant == variant) return r;
        throw ConfigError("report has no variant '" + variant + "'");
    }
};

struct ExperimentTiming {
    double total_seconds = 0.0;
    std::map<int, double> pivot_seconds;  // summed over trials
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); zero for a single value.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline FeatureMatrix select_rows(const FeatureMatrix& f, const std::vector<std::size_t>& rows) {
    FeatureMatrix out = f;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), f.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.values.row(static_cast<Eigen::Index>(i)) = f.values.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

inline backbone::TeacherTrace select_samples(const backbone::TeacherTrace& t, const std::vector<std::size_t>& rows) {
    backbone::TeacherTrace out;
    out.block_indices = t.block_indices;
    out.inputs.resize(t.inputs.size());
    out.outputs.resize(t.outputs.size());
    for (std::size_t k = 0; k < t.inputs.size(); ++k)
        for (std::size_t i : rows) {
            out.inputs[k].push_back(t.inputs[k][i]);
            out.outputs[k].push_back(t.outputs[k][i]);
        }
    return out;
}

/// Discrepancies computed in chunks straight from images.
inline distillation::DiscrepancyMatrix chunked_discrepancy(const backbone::VisionTransformer& teacher,
                                                           const backbone::ImageBatch& batch,
                                                           const distillation::StudentEnsemble& ens,
                                                           distillation::NormAccounting acc, std::size_t chunk) {
    distillation::DiscrepancyMatrix out{Matrix(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(ens.size())),
                                        ens.block_indices, acc};
    for (std::size_t start = 0; start < batch.size(); start += chunk) {
        std::vector<std::size_t> idx(std::min(batch.size(), start + chunk) - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto part = distillation::discrepancy_features(teacher, batch.subset(idx, false), ens, acc);
        out.values.middleRows(static_cast<Eigen::Index>(start), part.values.rows()) = part.values;
    }
    return out;
}

template <typename E>
[[noreturn]] void rethrow_with(const std::string& context, const E& e) {
    throw E(context + ": " + e.what());
}

} // namespace detail

/// For every trial and pivot class: split, train students on the training
/// part, fit the densities, score the test set and compute AUROC per variant.
inline ExperimentReport run_experiment(const DatasetHandle& ds, const DatasetSplits& data, Setting setting,
                                       const backbone::Backbone& model, const ExperimentConfig& cfg,
                                       backbone::FeatureStore& store, ExperimentTiming* timing = nullptr) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    cfg.validate();
    const auto& spec = model.spec();

    std::vector<Variant> variants;
    int max_blocks = 0;
    for (const auto& name : cfg.variants) {
        variants.push_back(Variant::parse(name).resolved(spec.num_blocks));
        if (variants.back().uses_finetuned()) max_blocks = std::max(max_blocks, variants.back().blocks);
    }
    for (std::size_t a = 0; a < variants.size(); ++a)
        for (std::size_t b = 0; b < a; ++b)
            if (variants[a].name() == variants[b].name()) throw ConfigError("variant '" + variants[a].name() + "' listed twice");

    const auto* teacher = dynamic_cast<const backbone::VisionTransformer*>(&model);
    if (max_blocks > 0 && teacher == nullptr) throw ConfigError("discrepancy features need a transformer backbone");

    std::vector<int> pivots = cfg.pivots;
    if (pivots.empty())
        for (int c = 0; c < ds.num_classes; ++c) pivots.push_back(c);
    for (int c : pivots)
        if (c < 0 || c >= ds.num_classes) throw ConfigError("pivot class " + std::to_string(c) + " out of range");

    const auto train_all = backbone::preprocess(data.train, spec);
    const auto test_all = backbone::preprocess(data.test, spec);
    const auto unlabeled = [](backbone::ImageBatch b) {
        b.labels.clear();
        return b;
    };
    const auto train_images = unlabeled(train_all);
    const auto test_images = unlabeled(test_all);
    const FeatureMatrix zp_train_all = store.pretrained(train_images, "train");
    const FeatureMatrix zp_test = store.pretrained(test_images, "test");

    std::vector<int> blocks;
    std::optional<backbone::TeacherTrace> train_trace, test_trace;
    if (max_blocks > 0) {
        blocks = distillation::last_blocks(spec.num_blocks, max_blocks);
        const std::size_t need = distillation::trace_bytes(spec, train_images.size() + test_images.size(), blocks.size());
        if (need <= cfg.trace_budget_bytes) {
            train_trace = store.trace(train_images, "train", blocks);
            test_trace = store.trace(test_images, "test", blocks);
        } else {
            spdlog::info("teacher traces need {} bytes; recomputing them in chunks", need);
        }
    }

    struct Cell {
        std::vector<SpaceScores> scores;
        std::vector<double> aurocs;
        std::vector<distillation::BlockTrainingLog> logs;
        double seconds = 0.0;
    };
    const std::size_t cells = static_cast<std::size_t>(cfg.trials) * pivots.size();
    std::vector<Cell> grid(cells);

    auto run_cell = [&](std::size_t index) {
        const auto cell_start = Clock::now();
        const int trial = static_cast<int>(index / pivots.size());
        const int pivot = pivots[index % pivots.size()];
        const std::string context = "class " + std::to_string(pivot) + " (trial " + std::to_string(trial) + ")";
        try {
            const std::uint64_t cell_seed =
                derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(trial)), static_cast<std::uint64_t>(pivot));
            const EvalSplit split = make_split(data, ds.num_classes, pivot, setting);
            const FeatureMatrix zp_train = detail::select_rows(zp_train_all, split.train_index);
            const FeatureMatrix zp_eval = detail::select_rows(zp_test, split.test_index);

            std::optional<FeatureMatrix> zf_train, zf_test;
            Cell& cell = grid[index];
            if (max_blocks > 0) {
                distillation::TrainConfig tc = cfg.train;
                tc.seed = derive_seed(cell_seed, 0x5701);
                distillation::StudentEnsemble ens;
                distillation::DiscrepancyMatrix dtrain, dtest;
                if (train_trace) {
                    const auto sub = detail::select_samples(*train_trace, split.train_index);
                    ens = distillation::train_students(*teacher, sub, tc);
                    dtrain = distillation::discrepancy_from_trace(spec, sub, ens, cfg.accounting);
                    dtest = distillation::discrepancy_from_trace(spec, detail::select_samples(*test_trace, split.test_index),
                                                                 ens, cfg.accounting);
                } else {
                    const auto train_batch = train_images.subset(split.train_index, false);
                    ens = distillation::train_students(*teacher, train_batch, blocks, tc);
                    dtrain = detail::chunked_discrepancy(*teacher, train_batch, ens, cfg.accounting, cfg.chunk_size);
                    dtest = detail::chunked_discrepancy(*teacher, test_images.subset(split.test_index, false), ens,
                                                        cfg.accounting, cfg.chunk_size);
                }
                zf_train = dtrain.features(spec.identifier, "train");
                zf_test = dtest.features(spec.identifier, "test");
                cell.logs = ens.logs;
            }
            for (const auto& v : variants) {
                const auto s = score_variant(v, zp_train, zp_eval, zf_train ? &*zf_train : nullptr,
                                             zf_test ? &*zf_test : nullptr, cfg.scoring, derive_seed(cell_seed, 0x6A4));
                cell.aurocs.push_back(auroc(std::span<const double>(s.scores.values.data(), static_cast<std::size_t>(s.scores.size())),
                                            std::span<const int>(split.anomaly_labels)));
                cell.scores.push_back(s);
            }
        } catch (const ConfigError& e) {
            detail::rethrow_with(context, e);
        } catch (const DataError& e) {
            detail::rethrow_with(context, e);
        } catch (const NumericalError& e) {
            detail::rethrow_with(context, e);
        }
        grid[index].seconds = std::chrono::duration<double>(Clock::now() - cell_start).count();
        spdlog::debug("{} {} done", ds.name, context);
    };
    parallel_for(cells, run_cell, cfg.parallel_pivots ? 0 : 1);

    ExperimentReport report;
    report.dataset = ds.name;
    report.dataset_options = ds.options;
    report.setting = setting;
    report.class_names = ds.class_names;
    report.backbone_id = spec.identifier;
    report.config = to_json_snapshot(cfg);
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        VariantResult r;
        r.variant = variants[vi].name();
        r.trial_class_auroc.resize(static_cast<std::size_t>(cfg.trials));
        for (std::size_t index = 0; index < cells; ++index) {
            const auto trial = index / pivots.size();
            const int pivot = pivots[index % pivots.size()];
            r.trial_class_auroc[trial][pivot] = grid[index].aurocs[vi];
            if (trial == 0) r.retained_dim[pivot] = grid[index].scores[vi].retained_dim;
        }
        std::vector<double> class_means;
        for (int pivot : pivots) {
            std::vector<double> over_trials;
            for (const auto& t : r.trial_class_auroc) over_trials.push_back(t.at(pivot));
            r.per_class_auroc[pivot] = detail::mean_of(over_trials);
            r.per_class_std[pivot] = detail::sample_std(over_trials);
            class_means.push_back(r.per_class_auroc[pivot]);
        }
        for (const auto& t : r.trial_class_auroc) {
            std::vector<double> vals;
            for (const auto& [c, a] : t) vals.push_back(a);
            r.trial_means.push_back(detail::mean_of(vals));
        }
        r.mean_auroc = detail::mean_of(class_means);
        r.std_across_trials = detail::sample_std(r.trial_means);
        report.results.push_back(std::move(r));
    }
    for (std::size_t index = 0; index < cells; ++index)
        for (const auto& log : grid[index].logs)
            report.training.push_back({static_cast<int>(index / pivots.size()), pivots[index % pivots.size()], log});

    if (timing) {
        timing->pivot_seconds.clear();
        for (std::size_t index = 0; index < cells; ++index)
            timing->pivot_seconds[pivots[index % pivots.size()]] += grid[index].seconds;
        timing->total_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    }
    return report;
}

/// Same runner over a list of variants; one AUROC row per variant and pivot.
inline ExperimentReport ablation_runner(const DatasetHandle& ds, const DatasetSplits& data, Setting setting,
                                        const backbone::Backbone& model, const std::vector<std::string>& variants,
                                        ExperimentConfig cfg, backbone::FeatureStore& store,
                                        ExperimentTiming* timing = nullptr) {
    cfg.variants = variants;
    return run_experiment(ds, data, setting, model, cfg, store, timing);
}

// ---------------------------------------------------------------------------
// Report files.

inline io::json to_json(const ExperimentReport& r) {
    io::json results = io::json::array();
    for (const auto& v : r.results) {
        io::json per_class = io::json::array();
        for (const auto& [c, a] : v.per_class_auroc) {
            std::vector<double> trials;
            for (const auto& t : v.trial_class_auroc) trials.push_back(t.at(c));
            per_class.push_back({{"class", c},
                                 {"class_name", r.class_names.at(static_cast<std::size_t>(c))},
                                 {"auroc", a},
                                 {"std", v.per_class_std.at(c)},
                                 {"trials", trials},
                                 {"retained_dim", v.retained_dim.at(c)}});
        }
        results.push_back({{"variant", v.variant},
                           {"mean_auroc", v.mean_auroc},
                           {"trial_means", v.trial_means},
                           {"std_across_trials", v.std_across_trials},
                           {"per_class", per_class}});
    }
    io::json training = io::json::array();
    for (const auto& b : r.training)
        training.push_back({{"trial", b.trial},
                            {"class", b.pivot},
                            {"block_index", b.log.block_index},
                            {"initial_loss", b.log.initial_loss},
                            {"epoch_losses", b.log.epoch_losses},
                            {"early_stopped", b.log.early_stopped},
                            {"skewness", b.log.skewness},
                            {"excess_kurtosis", b.log.excess_kurtosis}});
    return {{"dataset", r.dataset},   {"dataset_options", r.dataset_options}, {"setting", to_string(r.setting)},
            {"class_names", r.class_names}, {"backbone", r.backbone_id}, {"config", r.config},             {"results", results},
            {"training", training}};
}

inline void write_report_json(const fs::path& path, const ExperimentReport& r) { io::write_json(path, to_json(r)); }

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

/// One row per (variant, pivot class).
inline std::string report_csv(const ExperimentReport& r) {
    std::string out = "dataset,setting,variant,class,class_name,auroc,std,retained_dim\n";
    for (const auto& v : r.results)
        for (const auto& [c, a] : v.per_class_auroc)
            out += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(r.dataset), to_string(r.setting), csv_field(v.variant), c,
                               csv_field(r.class_names.at(static_cast<std::size_t>(c))), a, v.per_class_std.at(c),
                               v.retained_dim.at(c));
    return out;
}

inline void write_report_csv(const fs::path& path, const ExperimentReport& r) { io::atomic_write(path, report_csv(r)); }

} // namespace dualad::benchmark
