#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "dualad/benchmark/auroc.hpp"
#include "dualad/benchmark/datasets.hpp"
#include "dualad/benchmark/experiment.hpp"
#include "dualad/benchmark/split.hpp"
#include "dualad/benchmark/variant.hpp"
#include "oracles.hpp"

using namespace dualad;
using namespace dualad::benchmark;

namespace {

DatasetSplits labelled(const std::vector<int>& train_labels, const std::vector<int>& test_labels) {
    auto make = [](const std::vector<int>& labels, const std::string& prefix) {
        backbone::ImageBatch b;
        b.height = b.width = 1;
        b.channels = 1;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            b.pixels.push_back(0.5f);
            b.labels.push_back(labels[i]);
            b.ids.push_back(prefix + std::to_string(i));
        }
        return b;
    };
    return {make(train_labels, "tr"), make(test_labels, "te")};
}

std::vector<int> balanced(int classes, int per_class) {
    std::vector<int> out;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) out.push_back(c);
    return out;
}

double fraction(const std::vector<int>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), 1)) / static_cast<double>(v.size());
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("dualad_bench_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> cifar_records(const std::vector<std::vector<std::uint8_t>>& labels) {
    std::vector<std::uint8_t> out;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        out.insert(out.end(), labels[r].begin(), labels[r].end());
        for (int k = 0; k < 3072; ++k) out.push_back(static_cast<std::uint8_t>((k + r) % 256));
    }
    return out;
}

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
}

ExperimentConfig quick_experiment() {
    ExperimentConfig c;
    c.train.epochs = 4;
    c.train.batch_size = 16;
    c.train.learning_rate = 2e-3;
    c.train.early_stop_patience.reset();
    return c;
}

BlobDatasetOptions small_blobs(int classes = 4, int train = 30, int test = 15) {
    BlobDatasetOptions o;
    o.num_classes = classes;
    o.train_per_class = train;
    o.test_per_class = test;
    return o;
}

} // namespace

// ---------------------------------------------------------------------------
// Splits.

TEST(Splits, TenClassAnomalyFractions) {
    const auto d = labelled(balanced(10, 5), balanced(10, 4));
    EXPECT_DOUBLE_EQ(fraction(make_unimodal_split(d, 10, 3).anomaly_labels), 0.9);
    EXPECT_DOUBLE_EQ(fraction(make_multimodal_split(d, 10, 3).anomaly_labels), 0.1);
}

TEST(Splits, TwoClassSymmetry) {
    const auto d = labelled({0, 1, 1, 0, 1}, {1, 0, 0, 1});
    const auto uni = make_unimodal_split(d, 2, 0);
    const auto multi = make_multimodal_split(d, 2, 1);
    EXPECT_EQ(uni.train_index, multi.train_index);
    EXPECT_EQ(uni.test_index, multi.test_index);
    EXPECT_EQ(uni.anomaly_labels, multi.anomaly_labels);
    EXPECT_EQ(uni.anomaly_labels, (std::vector<int>{1, 0, 0, 1}));
}

TEST(Splits, LabelScansOnSyntheticData) {
    const auto d = blob_dataset(small_blobs(4, 6, 3)).load();
    const auto uni = make_unimodal_split(d, 4, 2);
    std::set<int> seen;
    for (auto i : uni.train_index) seen.insert(d.train.labels[i]);
    EXPECT_EQ(seen, (std::set<int>{2}));
    for (std::size_t k = 0; k < uni.test_index.size(); ++k)
        EXPECT_EQ(uni.anomaly_labels[k], d.test.labels[uni.test_index[k]] != 2 ? 1 : 0);

    const auto multi = make_multimodal_split(d, 4, 3);
    seen.clear();
    for (auto i : multi.train_index) seen.insert(d.train.labels[i]);
    EXPECT_EQ(seen, (std::set<int>{0, 1, 2}));
    for (std::size_t k = 0; k < multi.test_index.size(); ++k)
        EXPECT_EQ(multi.anomaly_labels[k], d.test.labels[multi.test_index[k]] == 3 ? 1 : 0);
}

TEST(Splits, ComplementaryTrainingSets) {
    const auto d = blob_dataset(small_blobs(4, 5, 2)).load();
    for (int c = 0; c < 4; ++c) {
        auto a = make_unimodal_split(d, 4, c).train_index;
        const auto b = make_multimodal_split(d, 4, c).train_index;
        std::set<std::size_t> all(a.begin(), a.end());
        for (auto i : b) EXPECT_TRUE(all.insert(i).second) << "index in both splits";
        EXPECT_EQ(all.size(), d.train.size());
    }
}

TEST(Splits, TrainBatchHidesLabels) {
    const auto d = blob_dataset(small_blobs(3, 4, 2)).load();
    const auto s = make_multimodal_split(d, 3, 0);
    const auto b = s.train_batch(d);
    EXPECT_FALSE(b.has_labels());
    EXPECT_EQ(b.size(), 8u);
    EXPECT_FALSE(s.test_batch(d).has_labels());
}

TEST(Splits, Errors) {
    const auto d = labelled({0, 0, 1}, {0, 1, 2});
    EXPECT_THROW(make_unimodal_split(d, 3, 3), ConfigError);
    EXPECT_THROW(make_unimodal_split(d, 3, -1), ConfigError);
    EXPECT_THROW(make_unimodal_split(d, 3, 2), DataError);  // no training samples of class 2
    EXPECT_THROW(setting_from_string("bimodal"), ConfigError);
    EXPECT_EQ(setting_from_string("multimodal"), Setting::multimodal);
}

// ---------------------------------------------------------------------------
// AUROC.

TEST(Auroc, Examples) {
    EXPECT_EQ(auroc({0.9, 0.8, 0.1}, {0, 0, 1}), 1.0);
    EXPECT_EQ(auroc({0.4, 0.4, 0.4, 0.4}, {0, 1, 0, 1}), 0.5);
    EXPECT_EQ(auroc({0.8, 0.7, 0.9, 0.6}, {1, 0, 0, 1}), 0.75);
    EXPECT_EQ(auroc({0.1, 0.8, 0.9}, {0, 1, 1}), 0.0);
}

TEST(Auroc, EqualsPairCountingExactly) {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng() % 49);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse values so ties are common.
            scores[i] = trial % 2 ? std::round(uniform01(rng) * 8.0) / 8.0 : standard_normal(rng);
            labels[i] = static_cast<int>(rng() % 2);
        }
        labels[0] = 0;
        labels[1] = 1;
        EXPECT_EQ(auroc(scores, labels), oracle::brute_force_auroc(scores, labels)) << "trial " << trial;
    }
}

TEST(Auroc, InvariantUnderMonotoneMaps) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(40), mapped(40), negated(40);
        std::vector<int> y(40);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = standard_normal(rng);
            y[i] = static_cast<int>(i % 3 == 0);
        }
        const double a = 0.1 + uniform01(rng), b = standard_normal(rng);
        for (std::size_t i = 0; i < s.size(); ++i) {
            mapped[i] = std::exp(a * s[i]) + b;
            negated[i] = -s[i];
        }
        EXPECT_EQ(auroc(mapped, y), auroc(s, y));
        EXPECT_NEAR(auroc(s, y) + auroc(negated, y), 1.0, 1e-15);
    }
}

TEST(Auroc, Errors) {
    EXPECT_THROW(auroc({0.1, 0.2}, {0, 0}), DataError);
    EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), DataError);
    EXPECT_THROW(auroc({0.1, 0.2}, {0}), DataError);
    EXPECT_THROW(auroc({0.1, 0.2}, {0, 2}), DataError);
    EXPECT_THROW(auroc({0.1, std::nan("")}, {0, 1}), NumericalError);
}

// ---------------------------------------------------------------------------
// Variants.

TEST(Variants, CanonicalNamesRoundTrip) {
    EXPECT_EQ(Variant::parse("pretrained-only:gaussian:e=0.9").name(), "pretrained:gaussian:e=0.90");
    EXPECT_EQ(Variant::parse("combined:m=10:gaussian").name(), "combined:m=10:gaussian:e=0.90");
    EXPECT_EQ(Variant::parse("pretrained:knn").name(), "pretrained:knn:k=2:e=0.90");
    EXPECT_EQ(Variant::parse("finetuned:m=5:gmm:k=3").name(), "finetuned:m=5:gmm:k=3");
    EXPECT_EQ(Variant::parse("pretrained:gaussian:e=0.925").name(), "pretrained:gaussian:e=0.925");
    for (const auto& set : {feature_space_variants(), scorer_variants(), energy_variants()})
        for (const auto& n : set) EXPECT_EQ(Variant::parse(n).name(), n);
    EXPECT_EQ(feature_space_variants().size(), 7u);
}

TEST(Variants, DefaultBlocksResolveAgainstBackbone) {
    EXPECT_EQ(Variant::parse("combined:gaussian").resolved(12).blocks, 10);
    EXPECT_EQ(Variant::parse("finetuned:gaussian").resolved(4).blocks, 2);
    EXPECT_THROW(Variant::parse("combined:m=10:gaussian").resolved(4), ConfigError);
    EXPECT_THROW(Variant::parse("combined:gaussian").resolved(0), ConfigError);
    EXPECT_EQ(Variant::parse("pretrained:gaussian").resolved(0).blocks, 0);
}

TEST(Variants, RejectsUnknownNames) {
    for (const char* bad : {"", "raw:gaussian", "pretrained:svm", "pretrained:gaussian:e=1.5", "pretrained:m=3:gaussian",
                            "combined:m=x:gaussian", "pretrained:gaussian:k=2", "pretrained:knn:k=0", "combined:foo"})
        EXPECT_THROW(Variant::parse(bad), ConfigError) << bad;
    EXPECT_THROW(variant_set("everything"), ConfigError);
}

// ---------------------------------------------------------------------------
// Datasets.

TEST(Datasets, BlobsAreLabelledAndDeterministic) {
    const auto h = blob_dataset(small_blobs(4, 5, 3));
    const auto a = h.load(), b = h.load();
    EXPECT_EQ(a.train.size(), 20u);
    EXPECT_EQ(a.test.size(), 12u);
    EXPECT_EQ(a.train.pixels, b.train.pixels);
    EXPECT_NE(a.train.pixels, a.test.pixels);
    std::set<std::string> ids(a.train.ids.begin(), a.train.ids.end());
    ids.insert(a.test.ids.begin(), a.test.ids.end());
    EXPECT_EQ(ids.size(), 32u);
    for (float p : a.train.pixels) {
        EXPECT_GE(p, 0.0f);
        EXPECT_LE(p, 1.0f);
    }
}

TEST(Datasets, SpectrumHasPrescribedEigenvalues) {
    SpectrumDatasetOptions o;
    const auto d = spectrum_dataset(o).load();
    const int dim = 12;
    for (int c = 0; c < o.num_classes; ++c) {
        Matrix x(o.train_per_class, dim);
        for (std::size_t i = 0, r = 0; i < d.train.size(); ++i)
            if (d.train.labels[i] == c) {
                for (int j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(r), j) = d.train.pixels[i * dim + static_cast<std::size_t>(j)];
                ++r;
            }
        const auto eig = oracle::jacobi_eigen(density::ml_covariance(x, density::column_mean(x))).first;
        for (std::size_t k = 0; k < o.eigenvalues.size(); ++k)
            EXPECT_NEAR(eig[static_cast<Eigen::Index>(k)], o.scale * o.scale * o.eigenvalues[k], 1e-8);
        for (Eigen::Index k = static_cast<Eigen::Index>(o.eigenvalues.size()); k < dim; ++k)
            EXPECT_NEAR(eig[k], 0.0, 1e-8);
    }
}

TEST(Datasets, RegistryLookups) {
    EXPECT_EQ(make_dataset("blobs", {{"classes", 3}}).num_classes, 3);
    EXPECT_EQ(make_dataset("spectrum").num_classes, 3);
    EXPECT_THROW(make_dataset("imagenet"), ConfigError);
    EXPECT_THROW(make_dataset("cifar10"), ConfigError);
    EXPECT_THROW(make_dataset("blobs", {{"classes", "four"}}), ConfigError);
    EXPECT_THROW(make_dataset("cifar10", {{"root", "/nonexistent/dualad"}}).load(), DataError);
}

TEST(Datasets, Cifar10BinaryLayout) {
    TempDir tmp("cifar10");
    const auto dir = tmp.path / "cifar-10-batches-bin";
    std::filesystem::create_directories(dir);
    for (int i = 1; i <= 5; ++i)
        write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), cifar_records({{std::uint8_t(i % 10)}, {9}}));
    write_bytes(dir / "test_batch.bin", cifar_records({{3}, {4}, {3}}));
    const auto d = make_dataset("cifar10", {{"root", tmp.path.string()}}).load();
    EXPECT_EQ(d.train.size(), 10u);
    EXPECT_EQ(d.test.size(), 3u);
    EXPECT_EQ(d.train.labels[0], 1);
    EXPECT_EQ(d.train.labels[1], 9);
    // Planar RGB records become interleaved HWC: (y, x, c) <- byte c*1024 + y*32 + x.
    EXPECT_FLOAT_EQ(d.test.at(0, 0, 1, 0), 1 / 255.0f);
    EXPECT_FLOAT_EQ(d.test.at(0, 0, 0, 1), (1024 % 256) / 255.0f);
    EXPECT_FLOAT_EQ(d.test.at(1, 2, 3, 2), ((2048 + 67 + 1) % 256) / 255.0f);

    const auto limited = make_dataset("cifar10", {{"root", tmp.path.string()}, {"limit_per_class", 1}}).load();
    EXPECT_EQ(std::count(limited.train.labels.begin(), limited.train.labels.end(), 9), 1);

    write_bytes(dir / "test_batch.bin", std::vector<std::uint8_t>(100, 0));
    EXPECT_THROW(make_dataset("cifar10", {{"root", tmp.path.string()}}).load(), DataError);
}

TEST(Datasets, Cifar100UsesCoarseLabels) {
    TempDir tmp("cifar100");
    write_bytes(tmp.path / "train.bin", cifar_records({{19, 99}, {4, 0}}));
    write_bytes(tmp.path / "test.bin", cifar_records({{7, 55}}));
    const auto h = make_dataset("cifar100", {{"root", tmp.path.string()}});
    EXPECT_EQ(h.num_classes, 20);
    EXPECT_EQ(h.class_names.size(), 20u);
    const auto d = h.load();
    EXPECT_EQ(d.train.labels, (std::vector<int>{19, 4}));
    EXPECT_EQ(d.test.labels, (std::vector<int>{7}));
}

TEST(Datasets, FashionMnistIdxFiles) {
    TempDir tmp("fmnist");
    auto write_pair = [&](const std::string& stem, const std::vector<std::uint8_t>& labels) {
        std::vector<std::uint8_t> img, lab;
        put_u32(img, 2051);
        put_u32(img, static_cast<std::uint32_t>(labels.size()));
        put_u32(img, 28);
        put_u32(img, 28);
        for (std::size_t i = 0; i < labels.size() * 784; ++i) img.push_back(static_cast<std::uint8_t>(i % 251));
        put_u32(lab, 2049);
        put_u32(lab, static_cast<std::uint32_t>(labels.size()));
        lab.insert(lab.end(), labels.begin(), labels.end());
        write_bytes(tmp.path / (stem + "-images-idx3-ubyte"), img);
        write_bytes(tmp.path / (stem + "-labels-idx1-ubyte"), lab);
    };
    write_pair("train", {0, 5, 9});
    write_pair("t10k", {2});
    const auto d = make_dataset("fashion-mnist", {{"root", tmp.path.string()}}).load();
    EXPECT_EQ(d.train.channels, 1u);
    EXPECT_EQ(d.train.labels, (std::vector<int>{0, 5, 9}));
    EXPECT_FLOAT_EQ(d.train.at(1, 0, 3, 0), ((784 + 3) % 251) / 255.0f);
    write_pair("t10k", {12});
    EXPECT_THROW(make_dataset("fashion-mnist", {{"root", tmp.path.string()}}).load(), DataError);
}

// ---------------------------------------------------------------------------
// Experiment runner.

TEST(Experiment, IdentityFeaturesSeparateBlobs) {
    const auto h = blob_dataset(small_blobs());
    const auto data = h.load();
    backbone::PixelBackbone pixels(16);
    backbone::FeatureStore store(pixels, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.variants = {"pretrained:gaussian:e=1.00", "pretrained:knn:k=2:e=0.90"};
    for (auto setting : {Setting::unimodal, Setting::multimodal}) {
        const auto r = run_experiment(h, data, setting, pixels, cfg, store);
        for (const auto& v : r.results) EXPECT_GE(v.mean_auroc, 0.95) << v.variant << " " << to_string(setting);
    }
}

TEST(Experiment, ReportAggregatesExactly) {
    const auto h = blob_dataset(small_blobs(3, 20, 10));
    const auto data = h.load();
    const auto vit = backbone::VisionTransformer::mock(backbone::mock_spec(4, 7), 7);
    backbone::FeatureStore store(vit, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.trials = 2;
    cfg.variants = {"combined:m=2:gaussian:e=0.90", "pretrained:gaussian:e=0.90"};
    const auto r = run_experiment(h, data, Setting::unimodal, vit, cfg, store);
    ASSERT_EQ(r.results.size(), 2u);
    for (const auto& v : r.results) {
        double sum = 0.0;
        for (const auto& [c, a] : v.per_class_auroc) {
            sum += a;
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
            EXPECT_EQ(a, (v.trial_class_auroc[0].at(c) + v.trial_class_auroc[1].at(c)) / 2.0);
        }
        EXPECT_EQ(v.mean_auroc, sum / 3.0);
        ASSERT_EQ(v.trial_means.size(), 2u);
        EXPECT_NEAR(v.std_across_trials, std::abs(v.trial_means[0] - v.trial_means[1]) / std::sqrt(2.0), 1e-15);
    }
    // Pretrained features and their Gaussian do not depend on the trial seed.
    EXPECT_EQ(r.result("pretrained:gaussian:e=0.90").std_across_trials, 0.0);
    // Two blocks per class and trial.
    EXPECT_EQ(r.training.size(), 2u * 3u * 2u);
}

TEST(Experiment, SingleComponentMixtureMatchesGaussianRow) {
    const auto h = blob_dataset(small_blobs(3, 25, 10));
    const auto data = h.load();
    const auto vit = backbone::VisionTransformer::mock(backbone::mock_spec(4, 7), 7);
    backbone::FeatureStore store(vit, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.variants = {"pretrained:gaussian:e=0.90", "pretrained:gmm:k=1:e=0.90"};
    const auto r = run_experiment(h, data, Setting::multimodal, vit, cfg, store);
    for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(r.results[0].per_class_auroc.at(c), r.results[1].per_class_auroc.at(c), 1e-8);
}

TEST(Experiment, FeatureSpaceAblationHasSevenRows) {
    const auto h = blob_dataset(small_blobs(3, 16, 8));
    const auto data = h.load();
    const auto vit = backbone::VisionTransformer::mock(backbone::mock_spec(12, 7), 7);
    backbone::FeatureStore store(vit, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.pivots = {0};
    const auto r = ablation_runner(h, data, Setting::unimodal, vit, feature_space_variants(), cfg, store);
    ASSERT_EQ(r.results.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(r.results[i].variant, feature_space_variants()[i]);
    EXPECT_EQ(report_csv(r).find("finetuned:m=10:gaussian") != std::string::npos, true);
    // Students for the largest cut only: ten blocks.
    EXPECT_EQ(r.training.size(), 10u);
}

TEST(Experiment, EnergyThresholdsRetainPredictedDimensions) {
    SpectrumDatasetOptions o;
    const auto h = spectrum_dataset(o);
    const auto data = h.load();
    backbone::PixelBackbone pixels(o.side);
    backbone::FeatureStore store(pixels, std::nullopt, h.name);
    auto cfg = quick_experiment();
    const auto r = ablation_runner(h, data, Setting::unimodal, pixels, energy_variants("pretrained"), cfg, store);
    Vector eig(static_cast<Eigen::Index>(o.eigenvalues.size()));
    for (std::size_t k = 0; k < o.eigenvalues.size(); ++k) eig[static_cast<Eigen::Index>(k)] = o.eigenvalues[k];
    const std::vector<int> expected{3, 4, 5};
    for (std::size_t i = 0; i < 3; ++i) {
        const double e = Variant::parse(r.results[i].variant).energy;
        EXPECT_EQ(density::retained_components(eig, e), expected[i]);
        for (const auto& [c, dim] : r.results[i].retained_dim) EXPECT_EQ(dim, expected[i]) << r.results[i].variant;
    }
}

TEST(Experiment, DeterministicReportsAndCsvShape) {
    const auto h = blob_dataset(small_blobs(3, 15, 6));
    const auto data = h.load();
    const auto vit = backbone::VisionTransformer::mock(backbone::mock_spec(4, 7), 7);
    auto cfg = quick_experiment();
    cfg.variants = {"combined:m=2:gaussian:e=0.90", "finetuned:m=1:gaussian", "pretrained:knn:k=2:e=0.90"};
    cfg.seed = 17;
    backbone::FeatureStore s1(vit, std::nullopt, h.name), s2(vit, std::nullopt, h.name);
    const auto a = run_experiment(h, data, Setting::multimodal, vit, cfg, s1);
    auto parallel = cfg;
    parallel.parallel_pivots = true;
    const auto b = run_experiment(h, data, Setting::multimodal, vit, parallel, s2);
    auto strip = [](io::json j) {
        j["config"].erase("parallel_pivots");
        return j.dump();
    };
    EXPECT_EQ(strip(to_json(a)), strip(to_json(b)));
    const auto csv = report_csv(a);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 3);
}

TEST(Experiment, StreamingTracesMatchHeldTraces) {
    const auto h = blob_dataset(small_blobs(2, 12, 6));
    const auto data = h.load();
    const auto vit = backbone::VisionTransformer::mock(backbone::mock_spec(4, 7), 7);
    auto cfg = quick_experiment();
    cfg.variants = {"combined:m=2:gaussian:e=0.90"};
    backbone::FeatureStore s1(vit, std::nullopt, h.name), s2(vit, std::nullopt, h.name);
    const auto held = run_experiment(h, data, Setting::unimodal, vit, cfg, s1);
    cfg.trace_budget_bytes = 0;
    cfg.train.max_cached_bytes = 0;
    cfg.chunk_size = 5;
    const auto streamed = run_experiment(h, data, Setting::unimodal, vit, cfg, s2);
    // Held traces are float32-rounded through the feature store, so agreement is close, not exact.
    for (int c = 0; c < 2; ++c)
        EXPECT_NEAR(held.results[0].per_class_auroc.at(c), streamed.results[0].per_class_auroc.at(c), 0.05);
}

TEST(Experiment, ConfigurationErrors) {
    const auto h = blob_dataset(small_blobs(2, 6, 3));
    const auto data = h.load();
    backbone::PixelBackbone pixels(16);
    backbone::FeatureStore store(pixels, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.variants = {"combined:m=1:gaussian"};
    EXPECT_THROW(run_experiment(h, data, Setting::unimodal, pixels, cfg, store), ConfigError);
    cfg.variants = {"pretrained:bogus"};
    EXPECT_THROW(run_experiment(h, data, Setting::unimodal, pixels, cfg, store), ConfigError);
    cfg.variants = {"pretrained:gaussian", "pretrained:gaussian:e=0.9"};
    EXPECT_THROW(run_experiment(h, data, Setting::unimodal, pixels, cfg, store), ConfigError);
    cfg.variants = {"pretrained:gaussian"};
    cfg.pivots = {5};
    EXPECT_THROW(run_experiment(h, data, Setting::unimodal, pixels, cfg, store), ConfigError);
    cfg.pivots = {};
    cfg.trials = 0;
    EXPECT_THROW(run_experiment(h, data, Setting::unimodal, pixels, cfg, store), ConfigError);
}

TEST(Experiment, ErrorsCarryPivotContext) {
    const auto h = blob_dataset(small_blobs(2, 6, 3));
    const auto data = h.load();
    backbone::PixelBackbone pixels(16);
    backbone::FeatureStore store(pixels, std::nullopt, h.name);
    auto cfg = quick_experiment();
    cfg.variants = {"pretrained:knn:k=50:e=0.90"};  // more neighbours than training samples
    try {
        (void)run_experiment(h, data, Setting::unimodal, pixels, cfg, store);
        FAIL() << "expected an error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos) << e.what();
    }
}
