#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "dualad/benchmark/split.hpp"
#include "dualad/benchmark/synthetic.hpp"
#include "dualad/core/io.hpp"
#include "dualad/density/gaussian.hpp"

namespace dualad::benchmark {

namespace fs = std::filesystem;

struct DatasetHandle {
    std::string name;
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::function<DatasetSplits()> loader;
    io::json options;  // what the registry was asked for; goes into reports

    /// Loads and checks that every label lies in [0, num_classes).
    [[nodiscard]] DatasetSplits load() const {
        if (num_classes < 2) throw ConfigError(name + ": a dataset needs at least two classes");
        DatasetSplits d = loader();
        for (const auto* b : {&d.train, &d.test}) {
            b->validate();
            if (!b->has_labels()) throw DataError(name + ": missing labels");
            for (int l : b->labels)
                if (l < 0 || l >= num_classes) throw DataError(name + ": label " + std::to_string(l) + " out of range");
        }
        return d;
    }
};

// ---------------------------------------------------------------------------
// Synthetic generators.

struct BlobDatasetOptions {
    int num_classes = 4;
    int train_per_class = 50;
    int test_per_class = 25;
    int side = 16;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

inline DatasetHandle blob_dataset(const BlobDatasetOptions& o) {
    DatasetHandle h;
    h.name = "blobs";
    h.num_classes = o.num_classes;
    for (int c = 0; c < o.num_classes; ++c) h.class_names.push_back("blob" + std::to_string(c));
    h.options = {{"classes", o.num_classes}, {"train_per_class", o.train_per_class}, {"test_per_class", o.test_per_class},
                 {"side", o.side},           {"noise", o.noise},                     {"seed", o.seed}};
    h.loader = [o] {
        auto make = [&](int per_class, std::uint64_t stream, const char* prefix) {
            BlobImageOptions b;
            b.num_classes = o.num_classes;
            b.per_class = per_class;
            b.side = o.side;
            b.noise = o.noise;
            b.seed = derive_seed(o.seed, stream);
            b.class_seed = o.seed;
            b.id_prefix = prefix;
            return blob_images(b);
        };
        return DatasetSplits{make(o.train_per_class, 1, "blobs-train"), make(o.test_per_class, 2, "blobs-test")};
    };
    return h;
}

/// Images whose per-class pixel covariance has a prescribed spectrum. Each
/// class is mean + scale * sum_i sqrt(eigenvalue_i) * g_i * u_i over a shared
/// orthonormal basis u; the latent g is exactly whitened per class, so the
/// training covariance (divide-by-n) of every class has exactly these
/// eigenvalues times scale^2 (before float32 storage).
struct SpectrumDatasetOptions {
    int num_classes = 3;
    int train_per_class = 200;
    int test_per_class = 100;
    int side = 2;  // pixel dimension is side*side*3
    std::vector<double> eigenvalues{0.60, 0.20, 0.075, 0.05, 0.05, 0.025};
    double scale = 0.05;
    double separation = 0.25;
    std::uint64_t seed = 0;
};

namespace detail {

inline Matrix random_orthonormal(int d, Rng& rng) {
    Matrix g(d, d);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(d, d);
}

/// n x k standard-normal latent with zero mean and identity ML covariance.
inline Matrix exact_white_latent(int n, int k, Rng& rng) {
    Matrix g(n, k);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
    g.rowwise() -= density::column_mean(g).transpose();
    const Matrix cov = density::ml_covariance(g, Vector::Zero(k));
    const Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("spectrum generator: degenerate latent sample");
    return llt.matrixL().solve(g.transpose()).transpose();
}

} // namespace detail

inline DatasetHandle spectrum_dataset(const SpectrumDatasetOptions& o) {
    const int d = o.side * o.side * 3;
    const int k = static_cast<int>(o.eigenvalues.size());
    if (k < 1 || k > d) throw ConfigError("spectrum dataset: need between 1 and " + std::to_string(d) + " eigenvalues");
    if (o.train_per_class <= k) throw ConfigError("spectrum dataset: train_per_class must exceed the number of eigenvalues");
    for (double l : o.eigenvalues)
        if (!(l > 0.0)) throw ConfigError("spectrum dataset: eigenvalues must be positive");
    DatasetHandle h;
    h.name = "spectrum";
    h.num_classes = o.num_classes;
    for (int c = 0; c < o.num_classes; ++c) h.class_names.push_back("spectrum" + std::to_string(c));
    h.options = {{"classes", o.num_classes}, {"train_per_class", o.train_per_class}, {"test_per_class", o.test_per_class},
                 {"side", o.side},           {"eigenvalues", o.eigenvalues},        {"scale", o.scale},
                 {"separation", o.separation}, {"seed", o.seed}};
    h.loader = [o, d, k] {
        Rng basis_rng(derive_seed(o.seed, 0));
        const Matrix basis = detail::random_orthonormal(d, basis_rng).leftCols(k);
        Vector sd(k);
        for (int i = 0; i < k; ++i) sd[i] = o.scale * std::sqrt(o.eigenvalues[static_cast<std::size_t>(i)]);
        const Matrix mix = sd.asDiagonal() * basis.transpose();  // k x d

        std::vector<Vector> means;
        for (int c = 0; c < o.num_classes; ++c) {
            Vector v(d);
            for (int i = 0; i < d; ++i) v[i] = standard_normal(basis_rng);
            means.push_back(Vector::Constant(d, 0.5) + o.separation * v.normalized());
        }
        auto make = [&](int per_class, std::uint64_t stream, const std::string& prefix) {
            backbone::ImageBatch b;
            b.height = b.width = static_cast<std::size_t>(o.side);
            b.channels = 3;
            Rng rng(derive_seed(o.seed, stream));
            for (int c = 0; c < o.num_classes; ++c) {
                const Matrix x = (detail::exact_white_latent(per_class, k, rng) * mix).rowwise() +
                                 means[static_cast<std::size_t>(c)].transpose();
                for (int i = 0; i < per_class; ++i) {
                    for (int j = 0; j < d; ++j) b.pixels.push_back(static_cast<float>(x(i, j)));
                    b.labels.push_back(c);
                    b.ids.push_back(prefix + "/c" + std::to_string(c) + "/" + std::to_string(i));
                }
            }
            return b;
        };
        return DatasetSplits{make(o.train_per_class, 1, "spectrum-train/s" + std::to_string(o.seed)),
                             make(o.test_per_class, 2, "spectrum-test/s" + std::to_string(o.seed))};
    };
    return h;
}

// ---------------------------------------------------------------------------
// File-backed datasets (binary distributions, uncompressed).

namespace detail {

inline std::vector<std::uint8_t> read_file(const fs::path& p) {
    const auto bytes = io::read_bytes(p);
    std::vector<std::uint8_t> out(bytes.size());
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

/// Appends records of `label_bytes` label bytes followed by a 3x32x32 planar image.
inline void append_cifar(const fs::path& file, int label_offset, int label_bytes, const std::string& prefix,
                         int limit_per_class, int num_classes, backbone::ImageBatch& out, std::vector<int>& counts) {
    const auto data = read_file(file);
    const std::size_t rec = static_cast<std::size_t>(label_bytes) + 3072;
    if (data.size() % rec != 0) throw DataError(file.string() + ": size is not a multiple of the record size");
    for (std::size_t r = 0; r < data.size() / rec; ++r) {
        const std::uint8_t* p = data.data() + r * rec;
        const int label = p[label_offset];
        if (label >= num_classes) throw DataError(file.string() + ": label out of range");
        if (limit_per_class > 0 && counts[static_cast<std::size_t>(label)] >= limit_per_class) continue;
        ++counts[static_cast<std::size_t>(label)];
        const std::uint8_t* img = p + label_bytes;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                for (int c = 0; c < 3; ++c) out.pixels.push_back(img[c * 1024 + y * 32 + x] / 255.0f);
        out.labels.push_back(label);
        out.ids.push_back(prefix + "/" + file.filename().string() + "/" + std::to_string(r));
    }
}

inline backbone::ImageBatch cifar_batch() {
    backbone::ImageBatch b;
    b.height = b.width = 32;
    b.channels = 3;
    return b;
}

/// Looks for `file` in root and in one level of subdirectories.
inline fs::path locate(const fs::path& root, const std::string& file) {
    if (fs::exists(root / file)) return root / file;
    if (fs::is_directory(root))
        for (const auto& e : fs::directory_iterator(root))
            if (e.is_directory() && fs::exists(e.path() / file)) return e.path() / file;
    throw DataError("dataset file '" + file + "' not found under " + root.string());
}

inline std::uint32_t big_endian_u32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline backbone::ImageBatch read_idx(const fs::path& images, const fs::path& labels, const std::string& prefix,
                                     int limit_per_class, int num_classes) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    if (img.size() < 16 || big_endian_u32(img.data()) != 2051) throw DataError(images.string() + ": not an idx3 image file");
    if (lab.size() < 8 || big_endian_u32(lab.data()) != 2049) throw DataError(labels.string() + ": not an idx1 label file");
    const std::size_t n = big_endian_u32(img.data() + 4);
    const std::size_t rows = big_endian_u32(img.data() + 8), cols = big_endian_u32(img.data() + 12);
    if (big_endian_u32(lab.data() + 4) != n) throw DataError(labels.string() + ": label count differs from image count");
    if (img.size() != 16 + n * rows * cols || lab.size() != 8 + n) throw DataError(images.string() + ": truncated idx file");
    backbone::ImageBatch b;
    b.height = rows;
    b.width = cols;
    b.channels = 1;
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = lab[8 + i];
        if (label >= num_classes) throw DataError(labels.string() + ": label out of range");
        if (limit_per_class > 0 && counts[static_cast<std::size_t>(label)] >= limit_per_class) continue;
        ++counts[static_cast<std::size_t>(label)];
        for (std::size_t k = 0; k < rows * cols; ++k) b.pixels.push_back(img[16 + i * rows * cols + k] / 255.0f);
        b.labels.push_back(label);
        b.ids.push_back(prefix + "/" + std::to_string(i));
    }
    return b;
}

} // namespace detail

inline DatasetHandle cifar10_dataset(const fs::path& root, int limit_per_class = 0) {
    DatasetHandle h;
    h.name = "cifar10";
    h.num_classes = 10;
    h.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
    h.options = {{"root", root.string()}, {"limit_per_class", limit_per_class}};
    h.loader = [root, limit_per_class] {
        DatasetSplits d{detail::cifar_batch(), detail::cifar_batch()};
        std::vector<int> train_counts(10, 0), test_counts(10, 0);
        for (int i = 1; i <= 5; ++i)
            detail::append_cifar(detail::locate(root, "data_batch_" + std::to_string(i) + ".bin"), 0, 1, "cifar10",
                                 limit_per_class, 10, d.train, train_counts);
        detail::append_cifar(detail::locate(root, "test_batch.bin"), 0, 1, "cifar10", limit_per_class, 10, d.test,
                             test_counts);
        return d;
    };
    return h;
}

/// CIFAR-100 with its 20 coarse superclasses as labels.
inline DatasetHandle cifar100_coarse_dataset(const fs::path& root, int limit_per_class = 0) {
    DatasetHandle h;
    h.name = "cifar100";
    h.num_classes = 20;
    h.class_names = {"aquatic_mammals", "fish", "flowers", "food_containers", "fruit_and_vegetables",
                     "household_electrical_devices", "household_furniture", "insects", "large_carnivores",
                     "large_man-made_outdoor_things", "large_natural_outdoor_scenes", "large_omnivores_and_herbivores",
                     "medium_mammals", "non-insect_invertebrates", "people", "reptiles", "small_mammals", "trees",
                     "vehicles_1", "vehicles_2"};
    h.options = {{"root", root.string()}, {"limit_per_class", limit_per_class}};
    h.loader = [root, limit_per_class] {
        DatasetSplits d{detail::cifar_batch(), detail::cifar_batch()};
        std::vector<int> train_counts(20, 0), test_counts(20, 0);
        detail::append_cifar(detail::locate(root, "train.bin"), 0, 2, "cifar100", limit_per_class, 20, d.train, train_counts);
        detail::append_cifar(detail::locate(root, "test.bin"), 0, 2, "cifar100", limit_per_class, 20, d.test, test_counts);
        return d;
    };
    return h;
}

inline DatasetHandle fashion_mnist_dataset(const fs::path& root, int limit_per_class = 0) {
    DatasetHandle h;
    h.name = "fashion-mnist";
    h.num_classes = 10;
    h.class_names = {"t-shirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle_boot"};
    h.options = {{"root", root.string()}, {"limit_per_class", limit_per_class}};
    h.loader = [root, limit_per_class] {
        return DatasetSplits{
            detail::read_idx(detail::locate(root, "train-images-idx3-ubyte"), detail::locate(root, "train-labels-idx1-ubyte"),
                             "fashion-mnist/train", limit_per_class, 10),
            detail::read_idx(detail::locate(root, "t10k-images-idx3-ubyte"), detail::locate(root, "t10k-labels-idx1-ubyte"),
                             "fashion-mnist/test", limit_per_class, 10)};
    };
    return h;
}

/// Names accepted by make_dataset.
inline std::vector<std::string> dataset_names() { return {"blobs", "spectrum", "cifar10", "cifar100", "fashion-mnist"}; }

/// Registry lookup. `options` holds generator parameters for synthetic sets
/// or {"root", "limit_per_class"} for file-backed ones.
inline DatasetHandle make_dataset(const std::string& name, const io::json& options = io::json::object()) {
    try {
        if (name == "blobs") {
            BlobDatasetOptions o;
            o.num_classes = options.value("classes", o.num_classes);
            o.train_per_class = options.value("train_per_class", o.train_per_class);
            o.test_per_class = options.value("test_per_class", o.test_per_class);
            o.side = options.value("side", o.side);
            o.noise = options.value("noise", o.noise);
            o.seed = options.value("seed", o.seed);
            return blob_dataset(o);
        }
        if (name == "spectrum") {
            SpectrumDatasetOptions o;
            o.num_classes = options.value("classes", o.num_classes);
            o.train_per_class = options.value("train_per_class", o.train_per_class);
            o.test_per_class = options.value("test_per_class", o.test_per_class);
            o.side = options.value("side", o.side);
            o.eigenvalues = options.value("eigenvalues", o.eigenvalues);
            o.scale = options.value("scale", o.scale);
            o.separation = options.value("separation", o.separation);
            o.seed = options.value("seed", o.seed);
            return spectrum_dataset(o);
        }
        const int limit = options.value("limit_per_class", 0);
        auto root = [&]() -> fs::path {
            if (!options.contains("root")) throw ConfigError("dataset '" + name + "' needs a 'root' directory");
            return options.at("root").get<std::string>();
        };
        if (name == "cifar10") return cifar10_dataset(root(), limit);
        if (name == "cifar100") return cifar100_coarse_dataset(root(), limit);
        if (name == "fashion-mnist") return fashion_mnist_dataset(root(), limit);
    } catch (const io::json::exception& e) {
        throw ConfigError("dataset '" + name + "': bad option (" + e.what() + ")");
    }
    throw ConfigError("unknown dataset '" + name + "'");
}

} // namespace dualad::benchmark
