#pragma once

#include "dualad/core/types.hpp"

namespace dualad::density {

/// log(Pr(z_p) Pr(z_f)) = log Pr(z_p) + log Pr(z_f), kept in log space.
inline ScoreVector combined_score(const ScoreVector& pretrained, const ScoreVector& finetuned) {
    if (pretrained.size() != finetuned.size())
        throw DataError("combined_score: length mismatch (" + std::to_string(pretrained.size()) + " vs " +
                        std::to_string(finetuned.size()) + ")");
    return {pretrained.values + finetuned.values, SpaceTag::combined};
}

} // namespace dualad::density
