#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualad/backbone/layers.hpp"
#include "dualad/core/error.hpp"

namespace dualad::distillation {

enum class StudentInit { random, teacher_copy };

/// How per-block squared differences are aggregated into one feature.
enum class NormAccounting { sum, mean_per_element };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-4;
    std::string optimizer = "adam";  // adam | sgd
    std::uint64_t seed = 0;
    std::optional<int> early_stop_patience = 5;
    double plateau_tolerance = 1e-4;  // relative improvement that resets patience
    StudentInit init = StudentInit::random;
    bool parallel_blocks = false;
    std::size_t max_cached_bytes = std::size_t{1} << 30;  // teacher trace kept in memory below this

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("train: unknown optimizer '" + optimizer + "'");
        if (early_stop_patience && *early_stop_patience < 1)
            throw ConfigError("train: early_stop_patience must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"optimizer", c.optimizer},
         {"seed", c.seed},
         {"early_stop_patience", c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json()},
         {"plateau_tolerance", c.plateau_tolerance},
         {"init", c.init == StudentInit::random ? "random" : "teacher_copy"}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.optimizer = j.at("optimizer").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.early_stop_patience = j.at("early_stop_patience").is_null()
                                ? std::nullopt
                                : std::optional<int>(j.at("early_stop_patience").get<int>());
    c.plateau_tolerance = j.value("plateau_tolerance", 1e-4);
    c.init = j.value("init", "random") == "teacher_copy" ? StudentInit::teacher_copy : StudentInit::random;
}

struct BlockTrainingLog {
    int block_index = 0;
    double initial_loss = 0.0;         // before any update, inference mode
    std::vector<double> epoch_losses;  // sample-weighted mean of minibatch losses
    bool early_stopped = false;
    // Shape of this block's discrepancy feature on the training data.
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

inline void to_json(nlohmann::json& j, const BlockTrainingLog& l) {
    j = {{"block_index", l.block_index},   {"initial_loss", l.initial_loss},
         {"epoch_losses", l.epoch_losses}, {"early_stopped", l.early_stopped},
         {"skewness", l.skewness},         {"excess_kurtosis", l.excess_kurtosis}};
}

inline void from_json(const nlohmann::json& j, BlockTrainingLog& l) {
    j.at("block_index").get_to(l.block_index);
    j.at("initial_loss").get_to(l.initial_loss);
    j.at("epoch_losses").get_to(l.epoch_losses);
    j.at("early_stopped").get_to(l.early_stopped);
    j.at("skewness").get_to(l.skewness);
    j.at("excess_kurtosis").get_to(l.excess_kurtosis);
}

struct TrainedBlock {
    backbone::BlockParams params;
    BlockTrainingLog log;
};

/// One student per mirrored teacher block.
struct StudentEnsemble {
    std::vector<int> block_indices;
    std::vector<backbone::BlockParams> students;
    std::vector<BlockTrainingLog> logs;
    TrainConfig config;
    std::string backbone_id;

    [[nodiscard]] std::size_t size() const { return block_indices.size(); }

    /// Sub-ensemble of the given blocks (must be members).
    [[nodiscard]] StudentEnsemble select(const std::vector<int>& blocks) const {
        StudentEnsemble out;
        out.config = config;
        out.backbone_id = backbone_id;
        for (int b : blocks) {
            std::size_t k = 0;
            while (k < block_indices.size() && block_indices[k] != b) ++k;
            if (k == block_indices.size()) throw ConfigError("block " + std::to_string(b) + " is not in the ensemble");
            out.block_indices.push_back(b);
            out.students.push_back(students[k]);
            out.logs.push_back(logs[k]);
        }
        return out;
    }
};

/// The last `m` blocks of a backbone.
inline std::vector<int> last_blocks(int num_blocks, int m) {
    if (m < 1 || m > num_blocks)
        throw ConfigError("cannot take the last " + std::to_string(m) + " of " + std::to_string(num_blocks) + " blocks");
    std::vector<int> out;
    for (int j = num_blocks - m; j < num_blocks; ++j) out.push_back(j);
    return out;
}

/// Default cut: the last min(10, num_blocks - 2) blocks, at least one.
inline std::vector<int> default_block_indices(int num_blocks) {
    return last_blocks(num_blocks, std::max(1, std::min(10, num_blocks - 2)));
}

/// Throws unless indices are strictly increasing and inside [0, num_blocks).
inline void check_block_indices(const std::vector<int>& indices, int num_blocks) {
    if (indices.empty()) throw ConfigError("at least one block index is required");
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] < 0 || indices[k] >= num_blocks)
            throw ConfigError("block index " + std::to_string(indices[k]) + " outside [0, " + std::to_string(num_blocks) + ")");
        if (k > 0 && indices[k] <= indices[k - 1]) throw ConfigError("block indices must be strictly increasing");
    }
}

} // namespace dualad::distillation
