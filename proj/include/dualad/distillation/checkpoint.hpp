#pragma once

#include <filesystem>
#include <map>

#include "dualad/backbone/vit.hpp"
#include "dualad/core/io.hpp"
#include "dualad/distillation/ensemble.hpp"

// Ensemble checkpoint directory:
//
//   manifest.json   {"version": 1, "backbone_id", "block_indices", "config",
//                    "blocks": [{"block_index", "file", "num_heads", "training_log"}]}
//   block_<j>.bin   student weights (timm block naming)
//
// "block_indices" is the requested set; "blocks" lists the finished ones.

namespace dualad::distillation {

namespace fs = std::filesystem;

inline constexpr int kCheckpointVersion = 1;

class EnsembleCheckpoint {
public:
    EnsembleCheckpoint(fs::path dir, std::string backbone_id, std::vector<int> block_indices, TrainConfig config)
        : dir_(std::move(dir)), backbone_id_(std::move(backbone_id)), blocks_(std::move(block_indices)),
          config_(std::move(config)) {}

    [[nodiscard]] const fs::path& dir() const { return dir_; }
    [[nodiscard]] fs::path manifest_path() const { return dir_ / "manifest.json"; }

    /// Adds one finished block and rewrites the manifest.
    void add(const TrainedBlock& tb) {
        fs::create_directories(dir_);
        io::ArrayArchive a;
        backbone::VisionTransformer::put_block(a, "", tb.params);
        a.save(dir_ / file_name(tb.log.block_index));
        done_.insert_or_assign(tb.log.block_index, tb);
        write_manifest();
    }

    void write_manifest() const {
        fs::create_directories(dir_);
        io::json blocks = io::json::array();
        for (const auto& [j, tb] : done_)
            blocks.push_back({{"block_index", j},
                              {"file", file_name(j)},
                              {"num_heads", tb.params.num_heads},
                              {"training_log", tb.log}});
        io::write_json(manifest_path(), {{"version", kCheckpointVersion},
                                         {"backbone_id", backbone_id_},
                                         {"block_indices", blocks_},
                                         {"config", config_},
                                         {"blocks", blocks}});
    }

    [[nodiscard]] const std::map<int, TrainedBlock>& completed() const { return done_; }
    [[nodiscard]] bool complete() const {
        return std::all_of(blocks_.begin(), blocks_.end(), [&](int j) { return done_.contains(j); });
    }

    [[nodiscard]] StudentEnsemble ensemble() const {
        if (!complete()) throw DataError(dir_.string() + ": checkpoint is incomplete");
        StudentEnsemble e;
        e.block_indices = blocks_;
        e.config = config_;
        e.backbone_id = backbone_id_;
        for (int j : blocks_) {
            e.students.push_back(done_.at(j).params);
            e.logs.push_back(done_.at(j).log);
        }
        return e;
    }

    /// Reads an existing checkpoint directory.
    static EnsembleCheckpoint open(const fs::path& dir) {
        const auto m = io::read_json(dir / "manifest.json");
        if (!m.contains("version")) throw DataError(dir.string() + ": checkpoint manifest has no version");
        if (m.at("version").get<int>() != kCheckpointVersion)
            throw DataError(dir.string() + ": unsupported checkpoint version " + m.at("version").dump());
        EnsembleCheckpoint ck(dir, m.at("backbone_id").get<std::string>(),
                              m.at("block_indices").get<std::vector<int>>(), m.at("config").get<TrainConfig>());
        for (const auto& b : m.at("blocks")) {
            TrainedBlock tb;
            const auto a = io::ArrayArchive::load(dir / b.at("file").get<std::string>());
            tb.params = backbone::VisionTransformer::get_block(a, "", b.at("num_heads").get<int>());
            tb.log = b.at("training_log").get<BlockTrainingLog>();
            ck.done_.emplace(b.at("block_index").get<int>(), std::move(tb));
        }
        return ck;
    }

    /// Opens `dir` for resuming when it matches this run, or starts fresh.
    /// A checkpoint for a different backbone or configuration is an error.
    static EnsembleCheckpoint resume_or_create(const fs::path& dir, std::string backbone_id,
                                               std::vector<int> block_indices, const TrainConfig& config) {
        if (!fs::exists(dir / "manifest.json")) return {dir, std::move(backbone_id), std::move(block_indices), config};
        auto ck = open(dir);
        if (ck.backbone_id_ != backbone_id || io::json(ck.config_) != io::json(config))
            throw ConfigError(dir.string() + ": existing checkpoint was made with a different backbone or configuration");
        for (const auto& [j, tb] : ck.done_)
            if (std::find(block_indices.begin(), block_indices.end(), j) == block_indices.end())
                throw ConfigError(dir.string() + ": existing checkpoint holds block " + std::to_string(j) +
                                  " which was not requested");
        ck.blocks_ = std::move(block_indices);
        return ck;
    }

private:
    static std::string file_name(int j) { return "block_" + std::to_string(j) + ".bin"; }

    fs::path dir_;
    std::string backbone_id_;
    std::vector<int> blocks_;
    TrainConfig config_;
    std::map<int, TrainedBlock> done_;
};

inline void save_ensemble(const fs::path& dir, const StudentEnsemble& e) {
    EnsembleCheckpoint ck(dir, e.backbone_id, e.block_indices, e.config);
    for (std::size_t k = 0; k < e.size(); ++k) ck.add({e.students[k], e.logs[k]});
    ck.write_manifest();
}

inline StudentEnsemble load_ensemble(const fs::path& dir) { return EnsembleCheckpoint::open(dir).ensemble(); }

} // namespace dualad::distillation
