#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualad/backbone/vit.hpp"
#include "dualad/core/io.hpp"

// On-disk feature cache. Each entry is <key>.f32 (little-endian float32,
// row-major) plus <key>.json:
//
//   {"shape": [...], "backbone": id, "dataset": name, "split": tag,
//    "kind": what, "content_hash": sha256(<key>.f32)}
//
// key = sha256(backbone id, preprocessing parameters, kind, sample ids).

namespace dualad::backbone {

namespace fs = std::filesystem;

struct CacheMeta {
    std::vector<std::int64_t> shape;
    std::string backbone_id;
    std::string dataset;
    std::string split;
    std::string kind;
};

/// Preprocessing parameters that change extracted values.
inline io::json preprocessing_params(const BackboneSpec& spec) {
    return {{"input_resolution", spec.input_resolution}, {"mean", spec.mean}, {"std", spec.stddev}};
}

inline std::string cache_key(std::string_view backbone_id, const io::json& preprocessing, std::string_view kind,
                             std::span<const std::string> ids) {
    io::Sha256 h;
    h.update(backbone_id).update(preprocessing.dump()).update(kind);
    for (const auto& id : ids) h.update(id);
    return h.hex();
}

class FeatureCache {
public:
    explicit FeatureCache(fs::path dir) : dir_(std::move(dir)) {}

    [[nodiscard]] const fs::path& dir() const { return dir_; }
    [[nodiscard]] fs::path data_path(const std::string& key) const { return dir_ / (key + ".f32"); }
    [[nodiscard]] fs::path sidecar_path(const std::string& key) const { return dir_ / (key + ".json"); }

    /// Stores an n x k matrix; `meta.shape` may refine k (e.g. n x T x D).
    void store(const std::string& key, const Matrix& values, CacheMeta meta) const {
        if (meta.shape.empty()) meta.shape = {values.rows(), values.cols()};
        const auto bytes = io::to_f32_bytes(values);
        io::atomic_write(data_path(key), bytes);
        io::write_json(sidecar_path(key), {{"shape", meta.shape},
                                           {"backbone", meta.backbone_id},
                                           {"dataset", meta.dataset},
                                           {"split", meta.split},
                                           {"kind", meta.kind},
                                           {"content_hash", io::sha256_hex(bytes)}});
    }

    /// Loads an entry as n x prod(shape[1:]). Missing entries return nullopt;
    /// corrupted ones are reported and also return nullopt.
    [[nodiscard]] std::optional<Matrix> load(const std::string& key) const {
        if (!fs::exists(sidecar_path(key)) || !fs::exists(data_path(key))) return std::nullopt;
        try {
            const auto side = io::read_json(sidecar_path(key));
            const auto shape = side.at("shape").get<std::vector<std::int64_t>>();
            if (shape.empty()) throw DataError("empty shape");
            std::int64_t cols = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
            const auto bytes = io::read_bytes(data_path(key));
            if (io::sha256_hex(bytes) != side.at("content_hash").get<std::string>())
                throw DataError("content hash mismatch");
            return io::from_f32_bytes(bytes, shape[0], cols);
        } catch (const std::exception& e) {
            spdlog::warn("feature cache entry {} is corrupted ({}); re-extracting", key, e.what());
            return std::nullopt;
        }
    }

private:
    fs::path dir_;
};

/// Flattens per-sample token matrices into an n x (T*D) row-major layout.
inline Matrix flatten_tokens(const std::vector<Tokens>& tokens) {
    if (tokens.empty()) return {};
    const auto t = tokens.front().rows(), d = tokens.front().cols();
    Matrix out(static_cast<Eigen::Index>(tokens.size()), t * d);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        for (Eigen::Index r = 0; r < t; ++r) out.row(static_cast<Eigen::Index>(i)).segment(r * d, d) = tokens[i].row(r);
    return out;
}

inline std::vector<Tokens> unflatten_tokens(const Matrix& flat, Eigen::Index tokens, Eigen::Index dim) {
    if (flat.cols() != tokens * dim) throw DataError("cached token tensor has the wrong width");
    std::vector<Tokens> out(static_cast<std::size_t>(flat.rows()), Tokens(tokens, dim));
    for (Eigen::Index i = 0; i < flat.rows(); ++i)
        for (Eigen::Index r = 0; r < tokens; ++r) out[static_cast<std::size_t>(i)].row(r) = flat.row(i).segment(r * dim, dim);
    return out;
}

/// Round-trips through float32 so cached and freshly computed values agree.
inline Matrix round_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

/// Backbone outputs for named splits, served from the feature cache when one
/// is configured. Values are always float32-rounded.
class FeatureStore {
public:
    FeatureStore(const Backbone& backbone, std::optional<fs::path> cache_dir, std::string dataset)
        : backbone_(backbone), dataset_(std::move(dataset)) {
        if (cache_dir) cache_.emplace(*cache_dir);
    }

    /// Number of backbone forward passes performed (cache misses).
    [[nodiscard]] int extractions() const { return extractions_; }

    [[nodiscard]] FeatureMatrix pretrained(const ImageBatch& batch, const std::string& split) {
        const auto& spec = backbone_.spec();
        const auto key = cache_key(spec.identifier, preprocessing_params(spec), "pretrained", batch.ids);
        FeatureMatrix out;
        out.space = SpaceTag::pretrained;
        out.backbone_id = spec.identifier;
        out.split_tag = split;
        if (cache_) {
            if (auto hit = cache_->load(key); hit && hit->rows() == static_cast<Eigen::Index>(batch.size())) {
                out.values = std::move(*hit);
                return out;
            }
        }
        ++extractions_;
        out.values = round_f32(backbone_.extract_pretrained(batch).values);
        if (cache_) cache_->store(key, out.values, {{}, spec.identifier, dataset_, split, "pretrained"});
        return out;
    }

    /// Teacher residual stream around the requested blocks (strictly increasing).
    [[nodiscard]] TeacherTrace trace(const ImageBatch& batch, const std::string& split, std::span<const int> indices) {
        const auto* vit = dynamic_cast<const VisionTransformer*>(&backbone_);
        if (vit == nullptr) throw ConfigError("teacher-student features need a transformer backbone");
        const auto& spec = vit->spec();
        // Stream s is the residual stream after block s; s = -1 is the embedding.
        std::set<int> streams;
        for (int j : indices) {
            streams.insert(j - 1);
            streams.insert(j);
        }
        auto key_of = [&](int s) {
            return cache_key(spec.identifier, preprocessing_params(spec), "stream_" + std::to_string(s), batch.ids);
        };

        std::map<int, std::vector<Tokens>> loaded;
        if (cache_) {
            for (int s : streams) {
                auto hit = cache_->load(key_of(s));
                if (!hit || hit->rows() != static_cast<Eigen::Index>(batch.size())) {
                    loaded.clear();
                    break;
                }
                loaded[s] = unflatten_tokens(*hit, spec.num_tokens(), spec.embed_dim);
            }
        }
        if (loaded.size() != streams.size()) {
            ++extractions_;
            loaded.clear();
            const TeacherTrace raw = vit->trace(batch, indices);
            for (std::size_t k = 0; k < indices.size(); ++k) {
                loaded[indices[k] - 1] = raw.inputs[k];
                loaded[indices[k]] = raw.outputs[k];
            }
            for (auto& [s, tokens] : loaded) {
                Matrix flat = round_f32(flatten_tokens(tokens));
                tokens = unflatten_tokens(flat, spec.num_tokens(), spec.embed_dim);
                if (cache_)
                    cache_->store(key_of(s), flat,
                                  {{static_cast<std::int64_t>(batch.size()), spec.num_tokens(), spec.embed_dim},
                                   spec.identifier, dataset_, split, "stream_" + std::to_string(s)});
            }
        }
        TeacherTrace t;
        t.block_indices.assign(indices.begin(), indices.end());
        for (int j : indices) {
            t.inputs.push_back(loaded.at(j - 1));
            t.outputs.push_back(loaded.at(j));
        }
        return t;
    }

private:
    const Backbone& backbone_;
    std::string dataset_;
    std::optional<FeatureCache> cache_;
    int extractions_ = 0;
};

} // namespace dualad::backbone
