#pragma once

#include <filesystem>
#include <string>

#include "dualad/core/io.hpp"
#include "dualad/density/gaussian.hpp"
#include "dualad/density/gmm.hpp"
#include "dualad/density/whiten.hpp"

// Density models are stored as <stem>.json (manifest) next to <stem>.bin
// (named float64 arrays with shape headers). The manifest carries a mandatory
// version field; the cached Cholesky factor is recomputed on load.

namespace dualad::density {

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline io::json manifest(const char* kind, const std::filesystem::path& bin) {
    return {{"version", kModelFormatVersion}, {"kind", kind}, {"arrays", bin.filename().string()}};
}

inline io::ArrayArchive open_manifest(const std::filesystem::path& json_path, const char* kind,
                                      io::json& out) {
    out = io::read_json(json_path);
    if (!out.contains("version")) throw DataError(json_path.string() + ": missing version field");
    if (out.at("version").get<int>() != kModelFormatVersion)
        throw DataError(json_path.string() + ": unsupported model version");
    if (out.value("kind", "") != kind)
        throw DataError(json_path.string() + ": expected a '" + kind + "' model");
    return io::ArrayArchive::load(json_path.parent_path() / out.at("arrays").get<std::string>());
}

} // namespace detail

inline void save_model(const std::filesystem::path& stem, const GaussianModel& g) {
    auto bin = std::filesystem::path(stem).concat(".bin");
    io::ArrayArchive a;
    a.put("mean", g.mean);
    a.put("covariance", g.covariance);
    a.save(bin);
    auto m = detail::manifest("gaussian", bin);
    m["dim"] = g.dim();
    m["reg_lambda"] = g.reg_lambda;
    io::write_json(std::filesystem::path(stem).concat(".json"), m);
}

inline GaussianModel load_gaussian(const std::filesystem::path& stem) {
    io::json m;
    auto a = detail::open_manifest(std::filesystem::path(stem).concat(".json"), "gaussian", m);
    // covariance already contains the regularization; factor it as-is.
    GaussianModel g = make_gaussian(a.vector("mean"), a.matrix("covariance"), 0.0);
    g.reg_lambda = m.value("reg_lambda", 0.0);
    return g;
}

inline void save_model(const std::filesystem::path& stem, const WhitenTransform& w) {
    auto bin = std::filesystem::path(stem).concat(".bin");
    io::ArrayArchive a;
    a.put("mean", w.mean);
    a.put("projection", w.projection);
    a.put("eigenvalues", w.eigenvalues);
    a.save(bin);
    auto m = detail::manifest("whitener", bin);
    m["input_dim"] = w.input_dim();
    m["output_dim"] = w.output_dim();
    m["energy_threshold"] = w.energy_threshold;
    io::write_json(std::filesystem::path(stem).concat(".json"), m);
}

inline WhitenTransform load_whitener(const std::filesystem::path& stem) {
    io::json m;
    auto a = detail::open_manifest(std::filesystem::path(stem).concat(".json"), "whitener", m);
    WhitenTransform w;
    w.mean = a.vector("mean");
    w.projection = a.matrix("projection");
    w.eigenvalues = a.vector("eigenvalues");
    w.energy_threshold = m.at("energy_threshold").get<double>();
    return w;
}

inline void save_model(const std::filesystem::path& stem, const GMMModel& model) {
    auto bin = std::filesystem::path(stem).concat(".bin");
    io::ArrayArchive a;
    Vector weights(static_cast<Eigen::Index>(model.components.size()));
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto key = std::to_string(k);
        weights[static_cast<Eigen::Index>(k)] = model.components[k].weight;
        a.put("mean_" + key, model.components[k].gaussian.mean);
        a.put("covariance_" + key, model.components[k].gaussian.covariance);
    }
    a.put("weights", weights);
    a.save(bin);
    auto m = detail::manifest("gmm", bin);
    m["components"] = model.components.size();
    m["iterations"] = model.iterations;
    m["final_log_likelihood"] = model.final_log_likelihood;
    io::write_json(std::filesystem::path(stem).concat(".json"), m);
}

inline GMMModel load_gmm(const std::filesystem::path& stem) {
    io::json m;
    auto a = detail::open_manifest(std::filesystem::path(stem).concat(".json"), "gmm", m);
    GMMModel model;
    const Vector weights = a.vector("weights");
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
        const auto key = std::to_string(k);
        model.components.push_back(
            {weights[k], make_gaussian(a.vector("mean_" + key), a.matrix("covariance_" + key), 0.0)});
    }
    model.iterations = m.value("iterations", 0);
    model.final_log_likelihood = m.value("final_log_likelihood", 0.0);
    return model;
}

} // namespace dualad::density
