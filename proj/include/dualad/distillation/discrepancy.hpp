#pragma once

#include <vector>

#include "dualad/backbone/vit.hpp"
#include "dualad/core/parallel.hpp"
#include "dualad/distillation/ensemble.hpp"
#include "dualad/distillation/train.hpp"

namespace dualad::distillation {

/// n x m matrix of per-block teacher-student discrepancies.
struct DiscrepancyMatrix {
    Matrix values;
    std::vector<int> block_indices;
    NormAccounting accounting = NormAccounting::sum;

    [[nodiscard]] FeatureMatrix features(std::string backbone_id = {}, std::string split = {}) const {
        FeatureMatrix f = make_features(values, SpaceTag::finetuned);
        f.backbone_id = std::move(backbone_id);
        f.split_tag = std::move(split);
        return f;
    }
};

inline void check_compatible(const backbone::BackboneSpec& spec, const StudentEnsemble& ens) {
    if (ens.students.size() != ens.block_indices.size()) throw DataError("ensemble is missing students");
    check_block_indices(ens.block_indices, spec.num_blocks);
    for (const auto& s : ens.students)
        if (s.embed_dim() != spec.embed_dim || s.mlp_dim() != spec.mlp_dim || s.num_heads != spec.num_heads)
            throw DataError("student shape does not match the backbone (embed " + std::to_string(s.embed_dim()) +
                            " vs " + std::to_string(spec.embed_dim) + ")");
    if (!ens.backbone_id.empty() && ens.backbone_id != spec.identifier)
        throw DataError("ensemble was trained against '" + ens.backbone_id + "', not '" + spec.identifier + "'");
}

/// Discrepancies from a precomputed teacher trace that covers every ensemble block.
inline DiscrepancyMatrix discrepancy_from_trace(const backbone::BackboneSpec& spec,
                                                const backbone::TeacherTrace& trace, const StudentEnsemble& ens,
                                                NormAccounting accounting = NormAccounting::sum) {
    check_compatible(spec, ens);
    std::vector<std::size_t> slot;
    for (int j : ens.block_indices) {
        std::size_t k = 0;
        while (k < trace.block_indices.size() && trace.block_indices[k] != j) ++k;
        if (k == trace.block_indices.size()) throw ConfigError("teacher trace lacks block " + std::to_string(j));
        slot.push_back(k);
    }
    const std::size_t n = trace.num_samples();
    const auto m = static_cast<Eigen::Index>(ens.size());
    DiscrepancyMatrix out{Matrix(static_cast<Eigen::Index>(n), m), ens.block_indices, accounting};
    parallel_for(n, [&](std::size_t i) {
        for (Eigen::Index b = 0; b < m; ++b) {
            const std::size_t k = slot[static_cast<std::size_t>(b)];
            const Tokens& x = trace.inputs[k][i];
            if (x.cols() != spec.embed_dim) throw DataError("teacher activations have the wrong width");
            const Tokens s = apply_tap(spec, backbone::block_forward(ens.students[static_cast<std::size_t>(b)], x,
                                                                     spec.layer_norm_eps));
            const Tokens t = apply_tap(spec, trace.outputs[k][i]);
            double d = (s - t).squaredNorm();
            if (accounting == NormAccounting::mean_per_element) d /= static_cast<double>(t.size());
            out.values(static_cast<Eigen::Index>(i), b) = d;
        }
    });
    return out;
}

/// Discrepancies for a preprocessed batch.
inline DiscrepancyMatrix discrepancy_features(const backbone::VisionTransformer& teacher,
                                              const backbone::ImageBatch& batch, const StudentEnsemble& ens,
                                              NormAccounting accounting = NormAccounting::sum) {
    check_compatible(teacher.spec(), ens);
    return discrepancy_from_trace(teacher.spec(), teacher.trace(batch, ens.block_indices), ens, accounting);
}

} // namespace dualad::distillation
