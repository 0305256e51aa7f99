#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualad/backbone/layers.hpp"
#include "dualad/backbone/spec.hpp"
#include "dualad/core/io.hpp"
#include "dualad/core/parallel.hpp"
#include "dualad/core/random.hpp"

namespace dualad::backbone {

/// Feature extractor interface: penultimate embedding plus per-block taps.
class Backbone {
public:
    virtual ~Backbone() = default;
    [[nodiscard]] virtual const BackboneSpec& spec() const = 0;
    [[nodiscard]] virtual FeatureMatrix extract_pretrained(const ImageBatch& batch) const = 0;
    [[nodiscard]] virtual std::vector<BlockOutput> block_outputs(const ImageBatch& batch,
                                                                 std::span<const int> indices) const = 0;
};

/// Raw residual stream around a set of blocks: inputs[k][i] enters block
/// indices[k] for sample i, outputs[k][i] leaves it.
struct TeacherTrace {
    std::vector<int> block_indices;
    std::vector<std::vector<Tokens>> inputs;
    std::vector<std::vector<Tokens>> outputs;

    [[nodiscard]] std::size_t num_samples() const { return inputs.empty() ? 0 : inputs.front().size(); }
};

/// Vision transformer with class token, learned position embeddings, pre-norm
/// blocks and a final LayerNorm. Inference only; dropout is never applied here.
class VisionTransformer final : public Backbone {
public:
    VisionTransformer() = default;

    /// Seeded random weights. Deterministic across platforms (raw-engine RNG).
    static VisionTransformer mock(const BackboneSpec& spec, std::uint64_t seed) {
        spec.validate();
        VisionTransformer vit;
        vit.spec_ = spec;
        Rng rng(seed);
        const int dim = spec.embed_dim;
        const double patch_scale = 1.0 / std::sqrt(static_cast<double>(spec.patch_dim()));
        vit.patch_weight_.resize(dim, spec.patch_dim());
        for (Eigen::Index i = 0; i < vit.patch_weight_.size(); ++i)
            vit.patch_weight_.data()[i] = patch_scale * standard_normal(rng);
        vit.patch_bias_ = RowVec(dim);
        for (Eigen::Index i = 0; i < dim; ++i) vit.patch_bias_[i] = 0.02 * standard_normal(rng);
        vit.cls_token_ = RowVec(dim);
        for (Eigen::Index i = 0; i < dim; ++i) vit.cls_token_[i] = 0.1 * standard_normal(rng);
        vit.pos_embed_.resize(spec.num_tokens(), dim);
        for (Eigen::Index i = 0; i < vit.pos_embed_.size(); ++i) vit.pos_embed_.data()[i] = 0.1 * standard_normal(rng);
        for (int b = 0; b < spec.num_blocks; ++b)
            vit.blocks_.push_back(random_block(dim, spec.mlp_dim, spec.num_heads, rng));
        vit.final_norm_ = {RowVec::Ones(dim), RowVec::Zero(dim)};
        return vit;
    }

    [[nodiscard]] const BackboneSpec& spec() const override { return spec_; }
    [[nodiscard]] const BlockParams& block(int j) const { return blocks_.at(static_cast<std::size_t>(j)); }

    /// Tokens entering block 0 for sample i of a preprocessed batch.
    [[nodiscard]] Tokens embed(const ImageBatch& batch, std::size_t i) const {
        const int p = spec_.patch_size;
        const int side = spec_.patches_per_side();
        Matrix patches(spec_.num_patches(), spec_.patch_dim());
        // Patch vector layout (c, ky, kx), matching a conv kernel reshaped to out x (C*p*p).
        for (int py = 0; py < side; ++py)
            for (int px = 0; px < side; ++px) {
                const Eigen::Index row = py * side + px;
                Eigen::Index col = 0;
                for (int c = 0; c < 3; ++c)
                    for (int ky = 0; ky < p; ++ky)
                        for (int kx = 0; kx < p; ++kx)
                            patches(row, col++) = batch.at(i, static_cast<std::size_t>(py * p + ky),
                                                           static_cast<std::size_t>(px * p + kx),
                                                           static_cast<std::size_t>(c));
            }
        Tokens tokens(spec_.num_tokens(), spec_.embed_dim);
        tokens.row(0) = cls_token_;
        tokens.bottomRows(spec_.num_patches()) = (patches * patch_weight_.transpose()).rowwise() + patch_bias_;
        return tokens + pos_embed_;
    }

    [[nodiscard]] Tokens run_block(int j, const Tokens& x) const {
        return block_forward(block(j), x, spec_.layer_norm_eps);
    }

    /// Applies the configured tap transform to raw block output.
    [[nodiscard]] Tokens tap(const Tokens& raw) const {
        return spec_.tap_layer_norm ? plain_layer_norm(raw, spec_.layer_norm_eps) : raw;
    }

    /// Class token of the final-normed last block output.
    [[nodiscard]] FeatureMatrix extract_pretrained(const ImageBatch& batch) const override {
        check_batch(batch);
        FeatureMatrix out;
        out.values.resize(static_cast<Eigen::Index>(batch.size()), spec_.embed_dim);
        out.space = SpaceTag::pretrained;
        out.backbone_id = spec_.identifier;
        parallel_for(batch.size(), [&](std::size_t i) {
            Tokens x = embed(batch, i);
            for (int j = 0; j < spec_.num_blocks; ++j) x = run_block(j, x);
            out.values.row(static_cast<Eigen::Index>(i)) =
                layer_norm(x.topRows(1), final_norm_, spec_.layer_norm_eps);
        });
        return out;
    }

    [[nodiscard]] std::vector<BlockOutput> block_outputs(const ImageBatch& batch,
                                                         std::span<const int> indices) const override {
        check_indices(indices);
        if (indices.empty()) return {};
        check_batch(batch);
        const int last = *std::max_element(indices.begin(), indices.end());
        std::vector<BlockOutput> out(indices.size());
        for (std::size_t k = 0; k < indices.size(); ++k) {
            out[k].block_index = indices[k];
            out[k].activations.resize(batch.size());
        }
        parallel_for(batch.size(), [&](std::size_t i) {
            Tokens x = embed(batch, i);
            for (int j = 0; j <= last; ++j) {
                x = run_block(j, x);
                for (std::size_t k = 0; k < indices.size(); ++k)
                    if (indices[k] == j) out[k].activations[i] = tap(x);
            }
        });
        return out;
    }

    /// Raw inputs/outputs of each requested block (strictly increasing indices).
    [[nodiscard]] TeacherTrace trace(const ImageBatch& batch, std::span<const int> indices) const {
        check_indices(indices);
        for (std::size_t k = 1; k < indices.size(); ++k)
            if (indices[k] <= indices[k - 1]) throw ConfigError("block indices must be strictly increasing");
        TeacherTrace t;
        t.block_indices.assign(indices.begin(), indices.end());
        t.inputs.assign(indices.size(), std::vector<Tokens>(batch.size()));
        t.outputs.assign(indices.size(), std::vector<Tokens>(batch.size()));
        if (indices.empty()) return t;
        check_batch(batch);
        const int last = indices.back();
        parallel_for(batch.size(), [&](std::size_t i) {
            Tokens x = embed(batch, i);
            std::size_t k = 0;
            for (int j = 0; j <= last; ++j) {
                const bool tapped = indices[k] == j;
                if (tapped) t.inputs[k][i] = x;
                x = run_block(j, x);
                if (tapped) t.outputs[k++][i] = x;
            }
        });
        return t;
    }

    // -- weights ------------------------------------------------------------

    /// Writes <stem>.json (spec) and <stem>.bin (named arrays, timm naming).
    void save(const std::filesystem::path& stem) const {
        io::ArrayArchive a;
        a.put("patch_embed.proj.weight", patch_weight_);
        a.put("patch_embed.proj.bias", Vector(patch_bias_.transpose()));
        a.put("cls_token", Matrix(cls_token_));
        a.put("pos_embed", pos_embed_);
        for (int b = 0; b < spec_.num_blocks; ++b) put_block(a, "blocks." + std::to_string(b) + ".", block(b));
        a.put("norm.weight", Vector(final_norm_.gamma.transpose()));
        a.put("norm.bias", Vector(final_norm_.beta.transpose()));
        auto bin = std::filesystem::path(stem).concat(".bin");
        a.save(bin);
        io::write_json(std::filesystem::path(stem).concat(".json"),
                       {{"version", 1}, {"kind", "vit"}, {"spec", spec_}, {"arrays", bin.filename().string()}});
    }

    /// Block outputs are compared after a parameter-free LayerNorm when set.
    void set_tap_layer_norm(bool on) { spec_.tap_layer_norm = on; }

    static VisionTransformer load(const std::filesystem::path& stem) {
        const auto manifest = io::read_json(std::filesystem::path(stem).concat(".json"));
        if (manifest.value("kind", "") != "vit") throw DataError(stem.string() + ": not a vit weight file");
        VisionTransformer vit;
        vit.spec_ = manifest.at("spec").get<BackboneSpec>();
        vit.spec_.validate();
        const auto a = io::ArrayArchive::load(std::filesystem::path(stem).parent_path() /
                                              manifest.at("arrays").get<std::string>());
        vit.patch_weight_ = a.matrix("patch_embed.proj.weight");
        vit.patch_bias_ = a.vector("patch_embed.proj.bias").transpose();
        vit.cls_token_ = a.matrix("cls_token").row(0);
        vit.pos_embed_ = a.matrix("pos_embed");
        for (int b = 0; b < vit.spec_.num_blocks; ++b)
            vit.blocks_.push_back(get_block(a, "blocks." + std::to_string(b) + ".", vit.spec_.num_heads));
        vit.final_norm_ = {a.vector("norm.weight").transpose(), a.vector("norm.bias").transpose()};
        vit.check_shapes();
        return vit;
    }

    static void put_block(io::ArrayArchive& a, const std::string& prefix, const BlockParams& p) {
        zip_tensors(
            [&](const char* name, const auto& t) {
                if constexpr (std::decay_t<decltype(t)>::RowsAtCompileTime == 1)
                    a.put(prefix + name, Vector(t.transpose()));
                else
                    a.put(prefix + name, Matrix(t));
            },
            p);
    }

    static BlockParams get_block(const io::ArrayArchive& a, const std::string& prefix, int num_heads) {
        BlockParams p;
        p.num_heads = num_heads;
        zip_tensors(
            [&](const char* name, auto& t) {
                if constexpr (std::decay_t<decltype(t)>::RowsAtCompileTime == 1)
                    t = a.vector(prefix + name).transpose();
                else
                    t = a.matrix(prefix + name);
            },
            p);
        return p;
    }

private:
    void check_batch(const ImageBatch& batch) const {
        batch.validate();
        if (!batch.normalized) throw DataError("backbone expects a preprocessed batch");
        const auto res = static_cast<std::size_t>(spec_.input_resolution);
        if (batch.height != res || batch.width != res || batch.channels != 3)
            throw DataError("batch shape " + std::to_string(batch.height) + "x" + std::to_string(batch.width) +
                            "x" + std::to_string(batch.channels) + " does not match backbone input " +
                            std::to_string(res) + "x" + std::to_string(res) + "x3");
    }

    void check_indices(std::span<const int> indices) const {
        for (int j : indices)
            if (j < 0 || j >= spec_.num_blocks)
                throw ConfigError("block index " + std::to_string(j) + " outside [0, " +
                                  std::to_string(spec_.num_blocks) + ")");
    }

    void check_shapes() const {
        const int d = spec_.embed_dim;
        auto expect = [](bool ok, const char* what) {
            if (!ok) throw DataError(std::string("weight shape mismatch: ") + what);
        };
        expect(patch_weight_.rows() == d && patch_weight_.cols() == spec_.patch_dim(), "patch_embed");
        expect(pos_embed_.rows() == spec_.num_tokens() && pos_embed_.cols() == d, "pos_embed");
        expect(cls_token_.size() == d, "cls_token");
        for (const auto& b : blocks_) {
            expect(b.qkv.weight.rows() == 3 * d && b.qkv.weight.cols() == d, "qkv");
            expect(b.fc1.weight.rows() == spec_.mlp_dim && b.fc2.weight.cols() == spec_.mlp_dim, "mlp");
        }
    }

    BackboneSpec spec_;
    Matrix patch_weight_;  // D x (3*p*p)
    RowVec patch_bias_;
    RowVec cls_token_;
    Matrix pos_embed_;     // T x D
    std::vector<BlockParams> blocks_;
    LayerNorm final_norm_;
};

/// Identity features: flattened preprocessed pixels, no transformer blocks.
class PixelBackbone final : public Backbone {
public:
    explicit PixelBackbone(int input_resolution) {
        spec_.identifier = "pixels/res=" + std::to_string(input_resolution);
        spec_.input_resolution = input_resolution;
        spec_.patch_size = input_resolution;
        spec_.embed_dim = 3 * input_resolution * input_resolution;
        spec_.num_heads = 1;
        spec_.num_blocks = 0;
        spec_.dropout = 0.0;
    }

    [[nodiscard]] const BackboneSpec& spec() const override { return spec_; }

    [[nodiscard]] FeatureMatrix extract_pretrained(const ImageBatch& batch) const override {
        batch.validate();
        if (!batch.normalized) throw DataError("backbone expects a preprocessed batch");
        FeatureMatrix out;
        out.values.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(batch.image_stride()));
        for (std::size_t i = 0; i < batch.size(); ++i)
            for (std::size_t k = 0; k < batch.image_stride(); ++k)
                out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                    batch.pixels[i * batch.image_stride() + k];
        out.backbone_id = spec_.identifier;
        return out;
    }

    [[nodiscard]] std::vector<BlockOutput> block_outputs(const ImageBatch&, std::span<const int> indices) const override {
        if (!indices.empty()) throw ConfigError("pixel backbone has no transformer blocks");
        return {};
    }

private:
    BackboneSpec spec_;
};

} // namespace dualad::backbone
