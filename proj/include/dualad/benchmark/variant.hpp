#pragma once

#include <spdlog/fmt/fmt.h>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualad/core/error.hpp"
#include "dualad/core/random.hpp"
#include "dualad/core/types.hpp"
#include "dualad/density/gaussian.hpp"
#include "dualad/density/gmm.hpp"
#include "dualad/density/knn.hpp"
#include "dualad/density/score.hpp"
#include "dualad/density/whiten.hpp"

// Scoring variants, written as colon-separated tokens:
//
//   pretrained:<scorer>[:k=K][:e=E]
//   finetuned[:m=M]:<scorer>[:k=K]
//   combined[:m=M]:<scorer>[:k=K][:e=E]
//
// scorer is gaussian | knn | gmm. In combined variants the scorer models the
// pretrained features; the discrepancy features always get a single Gaussian.
// Missing m means the backbone's default cut.

namespace dualad::benchmark {

enum class FeatureSpace { pretrained, finetuned, combined };

struct Variant {
    FeatureSpace space = FeatureSpace::combined;
    int blocks = 0;  // 0 = default cut, resolved against the backbone
    std::string scorer = "gaussian";
    int k = 0;  // neighbours for knn, components for gmm
    double energy = 0.90;

    [[nodiscard]] bool uses_pretrained() const { return space != FeatureSpace::finetuned; }
    [[nodiscard]] bool uses_finetuned() const { return space != FeatureSpace::pretrained; }

    [[nodiscard]] std::string name() const {
        std::string s = space == FeatureSpace::pretrained ? "pretrained"
                        : space == FeatureSpace::finetuned ? "finetuned"
                                                           : "combined";
        if (uses_finetuned() && blocks > 0) s += ":m=" + std::to_string(blocks);
        s += ":" + scorer;
        if (scorer != "gaussian") s += ":k=" + std::to_string(k);
        if (uses_pretrained()) s += ":e=" + format_energy(energy);
        return s;
    }

    static std::string format_energy(double e) {
        std::string s = fmt::format("{}", e);
        if (s.find('.') == std::string::npos) s += ".";
        while (s.size() - s.find('.') < 3) s += "0";
        return s;
    }

    static Variant parse(const std::string& text) {
        Variant v;
        std::vector<std::string> tokens;
        std::stringstream ss(text);
        for (std::string t; std::getline(ss, t, ':');) tokens.push_back(t);
        if (tokens.empty() || text.empty()) throw ConfigError("empty variant name");
        const auto& head = tokens.front();
        if (head == "pretrained" || head == "pretrained-only") v.space = FeatureSpace::pretrained;
        else if (head == "finetuned" || head == "finetuned-only") v.space = FeatureSpace::finetuned;
        else if (head == "combined") v.space = FeatureSpace::combined;
        else throw ConfigError("unknown variant '" + text + "': feature space must be pretrained, finetuned or combined");
        bool explicit_k = false;
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const auto& t = tokens[i];
            auto number = [&](std::size_t skip) {
                try {
                    std::size_t used = 0;
                    const double x = std::stod(t.substr(skip), &used);
                    if (used != t.size() - skip) throw std::invalid_argument(t);
                    return x;
                } catch (const std::exception&) {
                    throw ConfigError("unknown variant '" + text + "': bad value in '" + t + "'");
                }
            };
            if (t == "gaussian" || t == "knn" || t == "gmm") v.scorer = t;
            else if (t.starts_with("m=")) v.blocks = static_cast<int>(number(2));
            else if (t.starts_with("k=")) { v.k = static_cast<int>(number(2)); explicit_k = true; }
            else if (t.starts_with("e=")) v.energy = number(2);
            else throw ConfigError("unknown variant '" + text + "': unrecognized token '" + t + "'");
        }
        if (!explicit_k) v.k = v.scorer == "gaussian" ? 0 : 2;
        if (v.scorer == "gaussian" && explicit_k) throw ConfigError("unknown variant '" + text + "': k needs knn or gmm");
        if (v.scorer != "gaussian" && v.k < 1) throw ConfigError("variant '" + text + "': k must be positive");
        if (v.space == FeatureSpace::pretrained && v.blocks != 0)
            throw ConfigError("variant '" + text + "': pretrained features take no block count");
        if (v.blocks < 0) throw ConfigError("variant '" + text + "': m must be positive");
        if (!(v.energy > 0.0 && v.energy <= 1.0)) throw ConfigError("variant '" + text + "': energy must be in (0, 1]");
        return v;
    }

    /// Fills in the default block count for a backbone with `num_blocks` blocks.
    [[nodiscard]] Variant resolved(int num_blocks) const {
        Variant v = *this;
        if (!uses_finetuned()) return v;
        if (num_blocks < 1) throw ConfigError("variant '" + name() + "' needs a transformer backbone");
        if (v.blocks == 0) v.blocks = std::max(1, std::min(10, num_blocks - 2));
        if (v.blocks > num_blocks)
            throw ConfigError("variant '" + name() + "' uses more blocks than the backbone has (" +
                              std::to_string(num_blocks) + ")");
        return v;
    }
};

/// The seven columns of the feature-space ablation: pretrained alone,
/// discrepancy features with 1, 5 and 10 blocks, and the combination of both.
inline std::vector<std::string> feature_space_variants() {
    return {"pretrained:gaussian:e=0.90", "finetuned:m=1:gaussian",          "finetuned:m=5:gaussian",
            "finetuned:m=10:gaussian",    "combined:m=1:gaussian:e=0.90",    "combined:m=5:gaussian:e=0.90",
            "combined:m=10:gaussian:e=0.90"};
}

/// Density models for the pretrained features.
inline std::vector<std::string> scorer_variants() {
    return {"pretrained:gaussian:e=0.90", "pretrained:knn:k=1:e=0.90", "pretrained:knn:k=2:e=0.90",
            "pretrained:knn:k=5:e=0.90",  "pretrained:gmm:k=1:e=0.90", "pretrained:gmm:k=2:e=0.90",
            "pretrained:gmm:k=3:e=0.90"};
}

/// Whitening energy thresholds for the given feature space.
inline std::vector<std::string> energy_variants(const std::string& space = "combined") {
    std::vector<std::string> out;
    for (const char* e : {"0.85", "0.90", "0.95"})
        out.push_back(space == "pretrained" ? std::string("pretrained:gaussian:e=") + e
                                            : space + ":gaussian:e=" + e);
    return out;
}

/// Named variant lists for the command line.
inline std::vector<std::string> variant_set(const std::string& name) {
    if (name == "feature-spaces") return feature_space_variants();
    if (name == "scorers") return scorer_variants();
    if (name == "energies") return energy_variants();
    if (name == "pretrained-energies") return energy_variants("pretrained");
    throw ConfigError("unknown variant set '" + name + "' (feature-spaces, scorers, energies, pretrained-energies)");
}

/// Scores from one feature space plus the whitened dimension (0 when not whitened).
struct SpaceScores {
    ScoreVector scores;
    int retained_dim = 0;
};

struct ScoringOptions {
    double reg_lambda = 0.0;
    bool whiten_finetuned = false;
};

/// Fits `scorer` on train and scores test, optionally after truncated whitening.
inline SpaceScores score_space(const FeatureMatrix& train, const FeatureMatrix& test, const std::string& scorer, int k,
                               std::optional<double> whiten_energy, double reg_lambda, std::uint64_t seed) {
    FeatureMatrix tr = train, te = test;
    SpaceScores out;
    if (whiten_energy) {
        const auto w = density::fit_whitener(train, *whiten_energy);
        tr = density::apply_whitener(w, train);
        te = density::apply_whitener(w, test);
        out.retained_dim = static_cast<int>(w.projection.cols());
    }
    if (scorer == "gaussian") {
        out.scores = density::gaussian_log_likelihood(density::fit_gaussian(tr, reg_lambda), te);
    } else if (scorer == "knn") {
        out.scores = density::knn_score(tr, te, k);
    } else if (scorer == "gmm") {
        density::GMMOptions o;
        o.reg_lambda = reg_lambda;
        out.scores = density::gmm_log_likelihood(density::fit_gmm(tr, k, seed, o), te);
    } else {
        throw ConfigError("unknown scorer '" + scorer + "'");
    }
    out.scores.space = train.space;
    return out;
}

/// Normality scores for one variant. `zf_*` hold all trained blocks in
/// increasing order; the variant uses the last `blocks` columns.
inline SpaceScores score_variant(const Variant& v, const FeatureMatrix& zp_train, const FeatureMatrix& zp_test,
                                 const FeatureMatrix* zf_train, const FeatureMatrix* zf_test,
                                 const ScoringOptions& opt, std::uint64_t seed) {
    std::optional<SpaceScores> p, f;
    if (v.uses_pretrained()) p = score_space(zp_train, zp_test, v.scorer, v.k, v.energy, opt.reg_lambda, seed);
    if (v.uses_finetuned()) {
        if (zf_train == nullptr || zf_test == nullptr) throw ConfigError("variant '" + v.name() + "' needs discrepancy features");
        if (v.blocks > zf_train->cols()) throw ConfigError("variant '" + v.name() + "' needs more trained blocks");
        auto last = [&](const FeatureMatrix& z) {
            FeatureMatrix s = z;
            s.values = z.values.rightCols(v.blocks);
            return s;
        };
        const std::string scorer = v.space == FeatureSpace::combined ? "gaussian" : v.scorer;
        const std::optional<double> energy = opt.whiten_finetuned ? std::optional<double>(v.energy) : std::nullopt;
        f = score_space(last(*zf_train), last(*zf_test), scorer, v.k, energy, opt.reg_lambda, derive_seed(seed, 1));
    }
    if (p && f) return {density::combined_score(p->scores, f->scores), p->retained_dim};
    return p ? *p : *f;
}

} // namespace dualad::benchmark
