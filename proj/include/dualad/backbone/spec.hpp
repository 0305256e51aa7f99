#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualad/core/error.hpp"
#include "dualad/core/types.hpp"

namespace dualad::backbone {

/// Architecture and pretraining metadata of a vision transformer.
struct BackboneSpec {
    std::string identifier;  // model name + pretraining corpus tag (+ weight seed for mocks)
    int num_blocks = 12;
    int embed_dim = 768;
    int num_heads = 12;
    int mlp_dim = 3072;
    int patch_size = 16;
    int input_resolution = 224;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};
    double layer_norm_eps = 1e-6;
    double dropout = 0.1;        // used by student training only
    bool tap_layer_norm = false; // apply a parameter-free LayerNorm at the block tap point

    [[nodiscard]] int patches_per_side() const { return input_resolution / patch_size; }
    [[nodiscard]] int num_patches() const { return patches_per_side() * patches_per_side(); }
    [[nodiscard]] int num_tokens() const { return num_patches() + 1; }
    [[nodiscard]] int patch_dim() const { return 3 * patch_size * patch_size; }
    [[nodiscard]] int head_dim() const { return embed_dim / num_heads; }

    void validate() const {
        if (num_blocks < 1) throw ConfigError("backbone: num_blocks must be >= 1");
        if (embed_dim < 1) throw ConfigError("backbone: embed_dim must be >= 1");
        if (num_heads < 1 || embed_dim % num_heads != 0)
            throw ConfigError("backbone: embed_dim must be divisible by num_heads");
        if (mlp_dim < 1) throw ConfigError("backbone: mlp_dim must be >= 1");
        if (patch_size < 1 || input_resolution < 1 || input_resolution % patch_size != 0)
            throw ConfigError("backbone: input_resolution must be a positive multiple of patch_size");
        for (float s : stddev)
            if (!(s > 0.0f)) throw ConfigError("backbone: normalization std must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("backbone: dropout must lie in [0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const BackboneSpec& s) {
    j = {{"identifier", s.identifier},     {"num_blocks", s.num_blocks},
         {"embed_dim", s.embed_dim},       {"num_heads", s.num_heads},
         {"mlp_dim", s.mlp_dim},           {"patch_size", s.patch_size},
         {"input_resolution", s.input_resolution},
         {"mean", s.mean},                 {"std", s.stddev},
         {"layer_norm_eps", s.layer_norm_eps},
         {"dropout", s.dropout},           {"tap_layer_norm", s.tap_layer_norm}};
}

inline void from_json(const nlohmann::json& j, BackboneSpec& s) {
    j.at("identifier").get_to(s.identifier);
    j.at("num_blocks").get_to(s.num_blocks);
    j.at("embed_dim").get_to(s.embed_dim);
    j.at("num_heads").get_to(s.num_heads);
    j.at("mlp_dim").get_to(s.mlp_dim);
    j.at("patch_size").get_to(s.patch_size);
    j.at("input_resolution").get_to(s.input_resolution);
    j.at("mean").get_to(s.mean);
    j.at("std").get_to(s.stddev);
    s.layer_norm_eps = j.value("layer_norm_eps", 1e-6);
    s.dropout = j.value("dropout", 0.0);
    s.tap_layer_norm = j.value("tap_layer_norm", false);
}

/// ViT-B/16, ImageNet-21k pretrained and ImageNet-1k fine-tuned.
inline BackboneSpec vit_base_patch16_spec() {
    BackboneSpec s;
    s.identifier = "vit_base_patch16_224/in21k-ft-in1k";
    return s;
}

/// Tiny transformer with seeded weights for CPU-only tests.
inline BackboneSpec mock_spec(int num_blocks = 4, std::uint64_t seed = 7) {
    BackboneSpec s;
    s.identifier = "mock-vit/blocks=" + std::to_string(num_blocks) + "/seed=" + std::to_string(seed);
    s.num_blocks = num_blocks;
    s.embed_dim = 16;
    s.num_heads = 2;
    s.mlp_dim = 32;
    s.patch_size = 4;
    s.input_resolution = 16;
    s.dropout = 0.0;
    return s;
}

/// n images stored n x H x W x C, row-major, float.
struct ImageBatch {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> pixels;
    std::vector<int> labels;       // empty when unlabeled
    std::vector<std::string> ids;  // stable sample identifiers
    bool normalized = false;       // set by preprocess()

    [[nodiscard]] std::size_t size() const { return ids.size(); }
    [[nodiscard]] std::size_t image_stride() const { return height * width * channels; }
    [[nodiscard]] bool has_labels() const { return !labels.empty(); }

    [[nodiscard]] float at(std::size_t i, std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[((i * height + y) * width + x) * channels + c];
    }

    void validate() const {
        if (ids.empty()) throw DataError("image batch is empty");
        if (height == 0 || width == 0) throw DataError("image batch has zero-area images");
        if (channels != 1 && channels != 3)
            throw DataError("unsupported channel count " + std::to_string(channels));
        if (pixels.size() != ids.size() * image_stride())
            throw DataError("image batch pixel buffer does not match n x H x W x C");
        if (!labels.empty() && labels.size() != ids.size())
            throw DataError("image batch labels are not aligned with samples");
    }

    /// Rows in `index` order; labels dropped when `keep_labels` is false.
    [[nodiscard]] ImageBatch subset(const std::vector<std::size_t>& index, bool keep_labels = true) const {
        ImageBatch out;
        out.height = height;
        out.width = width;
        out.channels = channels;
        out.normalized = normalized;
        const std::size_t stride = image_stride();
        out.pixels.reserve(index.size() * stride);
        for (std::size_t i : index) {
            if (i >= size()) throw DataError("subset index out of range");
            out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * stride),
                              pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
            out.ids.push_back(ids[i]);
            if (keep_labels && has_labels()) out.labels.push_back(labels[i]);
        }
        return out;
    }
};

/// Token activations T x D, one matrix per sample.
using Tokens = Matrix;

/// Activations tapped after one transformer block.
struct BlockOutput {
    int block_index = 0;
    std::vector<Tokens> activations;
};

} // namespace dualad::backbone
