#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualad/backbone/vit.hpp"
#include "dualad/core/parallel.hpp"
#include "dualad/core/random.hpp"
#include "dualad/distillation/ensemble.hpp"

// Per-block student training. Student j sees the teacher's input to block j
// and regresses the teacher's (tapped) output of block j:
//
//   L = 1/B * sum_i || tap(h'_j(x_i)) - tap(h_j(x_i)) ||^2
//
// Every block is trained independently; the teacher is never updated.

namespace dualad::distillation {

using backbone::BlockParams;
using backbone::Tokens;

namespace detail {

inline constexpr std::uint64_t kInitStream = 0x1000;
inline constexpr std::uint64_t kDropoutStream = 0x2000;
inline constexpr std::uint64_t kEpochStream = 0x3000;
// Minibatch gradients are accumulated in this many fixed shards so the
// summation order does not depend on the machine's thread count.
inline constexpr std::size_t kGradShards = 4;

/// Sample order for one epoch; shared by every block.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, kEpochStream + static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    return order;
}

inline void add_into(BlockParams& acc, const BlockParams& g) {
    zip_tensors([](const char*, auto& a, auto& b) { a += b; }, acc, g);
}

/// Sample skewness and excess kurtosis (population moments).
inline std::pair<double, double> shape_moments(const std::vector<double>& v) {
    if (v.size() < 2) return {0.0, 0.0};
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double scale = 0.0;
    for (double x : v) scale = std::max(scale, std::abs(x - mean));
    if (!(scale > 0.0) || !std::isfinite(scale)) return {0.0, 0.0};
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : v) {
        const double d = (x - mean) / scale;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) return {0.0, 0.0};
    return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

} // namespace detail

/// Applies the backbone's tap transform.
inline Tokens apply_tap(const backbone::BackboneSpec& spec, const Tokens& raw) {
    return spec.tap_layer_norm ? backbone::plain_layer_norm(raw, spec.layer_norm_eps) : raw;
}

/// Optimizer state and training loop bookkeeping for one student.
class BlockTrainer {
public:
    BlockTrainer(const backbone::BackboneSpec& spec, const BlockParams& teacher_block, int block_index,
                 const TrainConfig& cfg)
        : spec_(spec), cfg_(cfg), dropout_seed_(derive_seed(cfg.seed, detail::kDropoutStream + block_index)) {
        log_.block_index = block_index;
        if (cfg.init == StudentInit::teacher_copy) {
            params_ = teacher_block;
        } else {
            Rng rng(derive_seed(cfg.seed, detail::kInitStream + static_cast<std::uint64_t>(block_index)));
            params_ = backbone::random_block(spec.embed_dim, spec.mlp_dim, spec.num_heads, rng);
        }
        m_ = backbone::zeros_like(params_);
        v_ = backbone::zeros_like(params_);
    }

    [[nodiscard]] const BlockParams& params() const { return params_; }
    [[nodiscard]] bool finished() const { return finished_; }
    [[nodiscard]] const BlockTrainingLog& log() const { return log_; }
    void set_initial_loss(double loss) { log_.initial_loss = loss; }

    /// Inference-mode squared discrepancy for one sample.
    [[nodiscard]] double sample_loss(const Tokens& input, const Tokens& target) const {
        const Tokens out = apply_tap(spec_, backbone::block_forward(params_, input, spec_.layer_norm_eps));
        return (out - target).squaredNorm();
    }

    /// One optimizer update on a minibatch; returns the batch mean loss.
    double step(const std::vector<const Tokens*>& inputs, const std::vector<const Tokens*>& targets) {
        const std::size_t b = inputs.size();
        const double inv_b = 1.0 / static_cast<double>(b);
        const std::size_t shards = std::min(detail::kGradShards, b);
        std::vector<BlockParams> grads(shards, backbone::zeros_like(params_));
        std::vector<double> losses(b);
        const std::uint64_t first = samples_seen_;
        parallel_for(shards, [&](std::size_t s) {
            backbone::BlockCache cache;
            for (std::size_t i = s; i < b; i += shards) {
                Rng rng(derive_seed(dropout_seed_, first + i));
                const backbone::DropoutState drop{spec_.dropout, &rng};
                const Tokens y = backbone::block_forward(params_, *inputs[i], spec_.layer_norm_eps, drop, &cache);
                Matrix dy;
                if (spec_.tap_layer_norm) {
                    Matrix xhat;
                    Vector rstd;
                    backbone::layer_norm_core(y, spec_.layer_norm_eps, xhat, rstd);
                    const Matrix diff = xhat - *targets[i];
                    losses[i] = diff.squaredNorm();
                    dy = backbone::layer_norm_backward(2.0 * inv_b * diff, xhat, rstd);
                } else {
                    const Matrix diff = y - *targets[i];
                    losses[i] = diff.squaredNorm();
                    dy = 2.0 * inv_b * diff;
                }
                backbone::block_backward(params_, cache, dy, grads[s]);
            }
        });
        samples_seen_ += b;
        for (std::size_t s = 1; s < shards; ++s) detail::add_into(grads[0], grads[s]);
        const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) * inv_b;
        if (!std::isfinite(loss))
            throw NumericalError("student for block " + std::to_string(log_.block_index) + " diverged (loss is not finite)");
        apply_update(grads[0]);
        return loss;
    }

    /// Records the epoch loss and updates early stopping.
    void end_epoch(double loss) {
        log_.epoch_losses.push_back(loss);
        if (loss < best_ * (1.0 - cfg_.plateau_tolerance) || log_.epoch_losses.size() == 1) {
            best_ = loss;
            stale_ = 0;
        } else {
            ++stale_;
        }
        if (cfg_.early_stop_patience && stale_ >= *cfg_.early_stop_patience) {
            finished_ = true;
            log_.early_stopped = static_cast<int>(log_.epoch_losses.size()) < cfg_.epochs;
        }
        if (static_cast<int>(log_.epoch_losses.size()) >= cfg_.epochs) finished_ = true;
    }

    /// Final parameters; fills the discrepancy shape diagnostics from `train_losses`.
    [[nodiscard]] TrainedBlock result(const std::vector<double>& train_losses) const {
        TrainedBlock out{params_, log_};
        std::tie(out.log.skewness, out.log.excess_kurtosis) = detail::shape_moments(train_losses);
        return out;
    }

private:
    void apply_update(const BlockParams& grad) {
        ++t_;
        const double lr = cfg_.learning_rate;
        if (cfg_.optimizer == "sgd") {
            zip_tensors([&](const char*, auto& p, const auto& g) { p -= lr * g; }, params_, grad);
            return;
        }
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        zip_tensors(
            [&](const char*, auto& p, const auto& g, auto& m, auto& v) {
                m = beta1 * m + (1.0 - beta1) * g;
                v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
                p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
            },
            params_, grad, m_, v_);
    }

    backbone::BackboneSpec spec_;
    TrainConfig cfg_;
    std::uint64_t dropout_seed_;
    BlockParams params_, m_, v_;
    BlockTrainingLog log_;
    std::uint64_t samples_seen_ = 0;
    long t_ = 0;
    double best_ = 0.0;
    int stale_ = 0;
    bool finished_ = false;
};

using BlockCallback = std::function<void(const TrainedBlock&)>;

/// Trains one student from cached teacher inputs and tapped targets.
inline TrainedBlock train_block(const backbone::BackboneSpec& spec, const BlockParams& teacher_block, int block_index,
                                const std::vector<Tokens>& inputs, const std::vector<Tokens>& targets,
                                const TrainConfig& cfg) {
    const std::size_t n = inputs.size();
    if (n == 0) throw DataError("no training samples");
    BlockTrainer trainer(spec, teacher_block, block_index, cfg);
    std::vector<double> losses(n);
    for (std::size_t i = 0; i < n; ++i) losses[i] = trainer.sample_loss(inputs[i], targets[i]);
    trainer.set_initial_loss(std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n));

    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; !trainer.finished(); ++epoch) {
        const auto order = detail::epoch_order(cfg.seed, epoch, n);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            std::vector<const Tokens*> in, tg;
            for (std::size_t k = start; k < std::min(n, start + bs); ++k) {
                in.push_back(&inputs[order[k]]);
                tg.push_back(&targets[order[k]]);
            }
            total += trainer.step(in, tg) * static_cast<double>(in.size());
        }
        trainer.end_epoch(total / static_cast<double>(n));
        spdlog::debug("block {} epoch {} loss {:.6g}", block_index, epoch, total / static_cast<double>(n));
    }
    for (std::size_t i = 0; i < n; ++i) losses[i] = trainer.sample_loss(inputs[i], targets[i]);
    return trainer.result(losses);
}

namespace detail {

inline StudentEnsemble assemble(const backbone::BackboneSpec& spec, const std::vector<int>& blocks,
                                const TrainConfig& cfg, std::map<int, TrainedBlock> done) {
    StudentEnsemble ens;
    ens.block_indices = blocks;
    ens.config = cfg;
    ens.backbone_id = spec.identifier;
    for (int j : blocks) {
        auto& tb = done.at(j);
        ens.students.push_back(std::move(tb.params));
        ens.logs.push_back(std::move(tb.log));
    }
    return ens;
}

} // namespace detail

/// Trains one student per block of `trace`. Blocks already in `completed`
/// are reused as-is; `on_block` fires after each newly trained block.
inline StudentEnsemble train_students(const backbone::VisionTransformer& teacher, const backbone::TeacherTrace& trace,
                                      const TrainConfig& cfg, std::map<int, TrainedBlock> completed = {},
                                      const BlockCallback& on_block = {}) {
    cfg.validate();
    const auto& spec = teacher.spec();
    check_block_indices(trace.block_indices, spec.num_blocks);
    std::vector<std::size_t> todo;
    for (std::size_t k = 0; k < trace.block_indices.size(); ++k)
        if (!completed.contains(trace.block_indices[k])) todo.push_back(k);

    std::mutex mutex;
    auto run = [&](std::size_t t) {
        const std::size_t k = todo[t];
        const int j = trace.block_indices[k];
        std::vector<Tokens> targets;
        targets.reserve(trace.outputs[k].size());
        for (const auto& y : trace.outputs[k]) targets.push_back(apply_tap(spec, y));
        TrainedBlock tb = train_block(spec, teacher.block(j), j, trace.inputs[k], targets, cfg);
        std::lock_guard lock(mutex);
        if (on_block) on_block(tb);
        completed.emplace(j, std::move(tb));
    };
    parallel_for(todo.size(), run, cfg.parallel_blocks ? 0 : 1);
    return detail::assemble(spec, trace.block_indices, cfg, std::move(completed));
}

/// Bytes needed to hold the teacher trace for `n` samples and `blocks` blocks.
inline std::size_t trace_bytes(const backbone::BackboneSpec& spec, std::size_t n, std::size_t blocks) {
    return n * blocks * 2 * static_cast<std::size_t>(spec.num_tokens()) * static_cast<std::size_t>(spec.embed_dim) *
           sizeof(double);
}

/// Trains students straight from images. The teacher trace is kept in memory
/// when it fits in cfg.max_cached_bytes; otherwise it is recomputed per
/// minibatch. Both paths produce identical students.
inline StudentEnsemble train_students(const backbone::VisionTransformer& teacher, const backbone::ImageBatch& train,
                                      const std::vector<int>& blocks, const TrainConfig& cfg,
                                      std::map<int, TrainedBlock> completed = {}, const BlockCallback& on_block = {}) {
    cfg.validate();
    const auto& spec = teacher.spec();
    check_block_indices(blocks, spec.num_blocks);
    const std::size_t n = train.size();
    if (n == 0) throw DataError("no training samples");
    std::vector<int> todo;
    for (int j : blocks)
        if (!completed.contains(j)) todo.push_back(j);
    if (todo.empty()) return detail::assemble(spec, blocks, cfg, std::move(completed));

    if (trace_bytes(spec, n, todo.size()) <= cfg.max_cached_bytes) {
        auto ens = train_students(teacher, teacher.trace(train, todo), cfg, {}, on_block);
        for (std::size_t k = 0; k < todo.size(); ++k)
            completed.emplace(todo[k], TrainedBlock{ens.students[k], ens.logs[k]});
        return detail::assemble(spec, blocks, cfg, std::move(completed));
    }

    spdlog::info("teacher trace exceeds the cache budget; recomputing it per minibatch");
    std::vector<BlockTrainer> trainers;
    for (int j : todo) trainers.emplace_back(spec, teacher.block(j), j, cfg);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    // Per-sample inference losses for every trainer, in sample order.
    auto sweep = [&] {
        std::vector<std::vector<double>> losses(trainers.size(), std::vector<double>(n));
        for (std::size_t start = 0; start < n; start += bs) {
            std::vector<std::size_t> idx(std::min(n, start + bs) - start);
            std::iota(idx.begin(), idx.end(), start);
            const auto tr = teacher.trace(train.subset(idx, false), todo);
            for (std::size_t k = 0; k < trainers.size(); ++k)
                for (std::size_t i = 0; i < idx.size(); ++i)
                    losses[k][start + i] = trainers[k].sample_loss(tr.inputs[k][i], apply_tap(spec, tr.outputs[k][i]));
        }
        return losses;
    };

    {
        const auto initial = sweep();
        for (std::size_t k = 0; k < trainers.size(); ++k)
            trainers[k].set_initial_loss(std::accumulate(initial[k].begin(), initial[k].end(), 0.0) /
                                         static_cast<double>(n));
    }
    auto active = [&] {
        return std::any_of(trainers.begin(), trainers.end(), [](const BlockTrainer& t) { return !t.finished(); });
    };
    for (int epoch = 0; active(); ++epoch) {
        const auto order = detail::epoch_order(cfg.seed, epoch, n);
        std::vector<double> totals(trainers.size(), 0.0);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
            const auto tr = teacher.trace(train.subset(idx, false), todo);
            for (std::size_t k = 0; k < trainers.size(); ++k) {
                if (trainers[k].finished()) continue;
                std::vector<Tokens> targets;
                std::vector<const Tokens*> in, tg;
                targets.reserve(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) targets.push_back(apply_tap(spec, tr.outputs[k][i]));
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    in.push_back(&tr.inputs[k][i]);
                    tg.push_back(&targets[i]);
                }
                totals[k] += trainers[k].step(in, tg) * static_cast<double>(idx.size());
            }
        }
        for (std::size_t k = 0; k < trainers.size(); ++k)
            if (!trainers[k].finished()) trainers[k].end_epoch(totals[k] / static_cast<double>(n));
    }
    const auto final_losses = sweep();
    for (std::size_t k = 0; k < trainers.size(); ++k) {
        TrainedBlock tb = trainers[k].result(final_losses[k]);
        if (on_block) on_block(tb);
        completed.emplace(todo[k], std::move(tb));
    }
    return detail::assemble(spec, blocks, cfg, std::move(completed));
}

} // namespace dualad::distillation
