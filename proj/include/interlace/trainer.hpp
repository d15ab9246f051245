#pragma once

// Recovery fine-tuning: next-token cross-entropy over the masked trainable
// parameter set. Fixed recipe: decoupled-decay Adam, linear warmup from
// zero into cosine decay to zero, global-norm gradient clipping, gradient
// accumulation with exact token-mean loss scaling. Everything is
// deterministic given (seed, data, config).

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "interlace/model.hpp"
#include "interlace/surgery.hpp"
#include "interlace/taskgen.hpp"

namespace interlace {

struct TrainConfig {
    double lr_peak = 1e-5;
    double warmup_ratio = 0.03;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;
    int64_t batch_size = 16;
    int64_t grad_accum = 2;
    int64_t epochs = 1;
    uint64_t seed = 0;
    // Moment hyperparameters are part of the frozen recipe; kept in config
    // so runs are reproducible from the serialized form alone.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(warmup_ratio >= 0.0) || !(warmup_ratio < 1.0))
            throw InvalidConfig("train: warmup_ratio must lie in [0, 1)");
        if (!(grad_clip_norm > 0.0)) throw InvalidConfig("train: grad_clip_norm must be positive");
        if (batch_size < 1 || grad_accum < 1)
            throw InvalidConfig("train: batch_size and grad_accum must be at least 1");
        if (epochs < 1) throw InvalidConfig("train: epochs must be at least 1");
        if (!(lr_peak >= 0.0) || !std::isfinite(lr_peak))
            throw InvalidConfig("train: lr_peak must be finite and non-negative");
        if (!(weight_decay >= 0.0)) throw InvalidConfig("train: weight_decay must be non-negative");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
            throw InvalidConfig("train: invalid moment hyperparameters");
    }

    Json to_json() const {
        Json j;
        j["lr_peak"] = lr_peak;
        j["warmup_ratio"] = warmup_ratio;
        j["weight_decay"] = weight_decay;
        j["grad_clip_norm"] = grad_clip_norm;
        j["batch_size"] = batch_size;
        j["grad_accum"] = grad_accum;
        j["epochs"] = epochs;
        j["seed"] = seed;
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["adam_eps"] = adam_eps;
        return j;
    }

    static TrainConfig from_json(const Json& j) {
        TrainConfig c;
        try {
            c.lr_peak = j.value("lr_peak", c.lr_peak);
            c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
            c.weight_decay = j.value("weight_decay", c.weight_decay);
            c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
            c.batch_size = j.value("batch_size", c.batch_size);
            c.grad_accum = j.value("grad_accum", c.grad_accum);
            c.epochs = j.value("epochs", c.epochs);
            c.seed = j.value("seed", c.seed);
            c.beta1 = j.value("beta1", c.beta1);
            c.beta2 = j.value("beta2", c.beta2);
            c.adam_eps = j.value("adam_eps", c.adam_eps);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("train config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

struct StepRecord {
    int64_t step = 0;  // 1-based optimizer step
    double lr = 0.0;
    double loss = 0.0;  // token-mean over the step's effective batch
    double grad_norm_preclip = 0.0;
    int64_t tokens = 0;  // unmasked target tokens in the effective batch
};

struct TrainLog {
    std::vector<StepRecord> steps;
    double wall_seconds = 0.0;  // measurement only; never part of serialized output
    std::string checkpoint;     // final checkpoint reference, set by the caller

    // One JSON object per optimizer step. Wall-clock is deliberately
    // excluded so identical runs serialize identically.
    std::string to_jsonl() const {
        std::string out;
        for (const auto& s : steps) {
            Json j;
            j["step"] = s.step;
            j["lr"] = s.lr;
            j["loss"] = s.loss;
            j["grad_norm_preclip"] = s.grad_norm_preclip;
            j["tokens"] = s.tokens;
            out += j.dump();
            out += '\n';
        }
        return out;
    }

    Json summary() const {
        Json j;
        j["optimizer_steps"] = static_cast<int64_t>(steps.size());
        int64_t tokens = 0;
        KahanSum mean;
        for (const auto& s : steps) {
            tokens += s.tokens;
            mean.add(s.loss);
        }
        j["total_tokens"] = tokens;
        j["final_loss"] = steps.empty() ? 0.0 : steps.back().loss;
        j["mean_step_loss"] = steps.empty() ? 0.0 : mean.value() / static_cast<double>(steps.size());
        j["checkpoint"] = checkpoint;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Token-mean next-token cross-entropy: −log p(target_t) averaged over the
// unmasked positions. Thin wrapper that owns the target/mask buffers.
inline Tensor next_token_loss(const Tensor& logits, const std::vector<int64_t>& targets,
                              const std::vector<uint8_t>& loss_mask) {
    auto t = std::make_shared<std::vector<int64_t>>(targets);
    auto m = std::make_shared<std::vector<uint8_t>>(loss_mask);
    return cross_entropy_rows(logits, t, m);
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

// Warmup steps: ⌈warmup_ratio · total⌉, with the same floating-point guard
// as the pruning budget so exact products do not round past the integer.
inline int64_t warmup_steps(double warmup_ratio, int64_t total_steps) {
    if (warmup_ratio <= 0.0) return 0;
    return static_cast<int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

// Closed-form learning rate at 1-based optimizer step s of S total: linear
// from 0 up to lr_peak at the last warmup step, then cosine down to exactly
// 0 at step S.
inline double schedule_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
    if (step < 1 || step > total_steps) throw InvalidConfig("schedule_lr: step out of range");
    const int64_t warm = warmup_steps(cfg.warmup_ratio, total_steps);
    if (step <= warm) return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warm);
    if (step == total_steps) return 0.0;
    if (warm == total_steps) return cfg.lr_peak;  // all-warmup degenerate split
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// Clipping and optimizer
// ---------------------------------------------------------------------------

// Scale all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm. Norm accumulation is strictly sequential in the given
// parameter order for value determinism.
inline double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        sq += sequential_dot(g.data(), g.data(), static_cast<int64_t>(g.size()));
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            double* g = p.node()->grad.data();
            for (size_t i = 0; i < p.node()->grad.size(); i++) g[i] *= scale;
        }
    }
    return norm;
}

// Decoupled-weight-decay Adam over a fixed set of named parameters. Slots
// are keyed by name; iteration order is the caller's parameter order.
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) { cfg.validate(); }

    int64_t steps_taken() const { return t_; }

    // One optimizer step at the given learning rate. Parameters without a
    // gradient are skipped (their moments still exist once seen).
    void step(std::vector<std::pair<std::string, Tensor>>& params, double lr) {
        t_++;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            Slot& slot = slots_[name];
            if (slot.m.empty()) {
                slot.m.assign(static_cast<size_t>(p.size()), 0.0);
                slot.v.assign(static_cast<size_t>(p.size()), 0.0);
            }
            const double* g = p.node()->grad.data();
            double* w = p.data();
            for (size_t i = 0; i < slot.m.size(); i++) {
                slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
                slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                if (lr != 0.0) {
                    const double mhat = slot.m[i] / bc1;
                    const double vhat = slot.v[i] / bc2;
                    w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                                  cfg_.weight_decay * w[i]);
                }
            }
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    TrainConfig cfg_;
    std::map<std::string, Slot> slots_;
    int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Fine-tuning loop
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t mask_count(const std::vector<uint8_t>& mask) {
    int64_t n = 0;
    for (uint8_t b : mask) n += (b != 0);
    return n;
}

}  // namespace detail

// Number of optimizer steps one epoch of n samples produces.
inline int64_t steps_per_epoch(int64_t num_samples, const TrainConfig& cfg) {
    const int64_t micro = (num_samples + cfg.batch_size - 1) / cfg.batch_size;
    return (micro + cfg.grad_accum - 1) / cfg.grad_accum;
}

namespace detail {

// Shared training loop: one epoch pass over `data` per cfg.epochs with the
// warmup+cosine schedule, token-mean loss scaling across the accumulation
// group, global-norm clipping, and decoupled-decay Adam updates applied to
// exactly the `trainable` parameters. The caller has already set
// requires_grad flags. Throws NonFiniteLoss (with the offending step in the
// message) if any micro-batch loss is not finite.
inline TrainLog run_training(TransformerModel& model,
                             std::vector<std::pair<std::string, Tensor>>& trainable,
                             const Dataset& data, const TrainConfig& cfg, const char* label) {
    std::vector<Tensor> trainable_only;
    for (auto& [name, t] : trainable) trainable_only.push_back(t);

    const int64_t n = static_cast<int64_t>(data.samples.size());
    const int64_t n_v = model.config().prefix_len;
    const int64_t total_steps = cfg.epochs * steps_per_epoch(n, cfg);

    AdamW opt(cfg);
    TrainLog log;
    const double t0 = now_seconds();

    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; epoch++) {
        Rng order_rng(mix_seed(cfg.seed, 0x65706f6b /* "epok" */, static_cast<uint64_t>(epoch)));
        const std::vector<int64_t> order = order_rng.permutation(n);

        const int64_t micro_total = (n + cfg.batch_size - 1) / cfg.batch_size;
        int64_t micro_index = 0;
        while (micro_index < micro_total) {
            const int64_t group = std::min(cfg.grad_accum, micro_total - micro_index);

            // Token counts first: exact token-mean scaling needs the group
            // total before any backward pass.
            std::vector<std::vector<int64_t>> group_samples;
            int64_t group_tokens = 0;
            for (int64_t gi = 0; gi < group; gi++) {
                const int64_t lo = (micro_index + gi) * cfg.batch_size;
                const int64_t hi = std::min(n, lo + cfg.batch_size);
                std::vector<int64_t> idx;
                for (int64_t s = lo; s < hi; s++) {
                    idx.push_back(order[static_cast<size_t>(s)]);
                    const Sample& smp = data.samples[static_cast<size_t>(idx.back())];
                    group_tokens += detail::mask_count(row_mask(smp, n_v));
                }
                group_samples.push_back(std::move(idx));
            }
            if (group_tokens == 0)
                throw AllMasked(std::string(label) + ": optimizer step has no target tokens");

            global_step++;
            for (auto& t : trainable_only) t.zero_grad();

            KahanSum step_loss;  // Σ count_s · mean_s / total = global token-mean
            for (const auto& micro : group_samples) {
                for (int64_t sample_idx : micro) {
                    const Sample& smp = data.samples[static_cast<size_t>(sample_idx)];
                    const auto targets = row_targets(smp, n_v);
                    const auto lmask = row_mask(smp, n_v);
                    const int64_t count = detail::mask_count(lmask);
                    if (count == 0) continue;

                    Tensor logits = model.forward(smp.prefix_feats, smp.tokens).logits;
                    Tensor loss = next_token_loss(logits, targets, lmask);
                    const double lv = loss.scalar();
                    if (!std::isfinite(lv))
                        throw NonFiniteLoss(std::string(label) +
                                            ": non-finite loss at optimizer step " +
                                            std::to_string(global_step));
                    const double weight =
                        static_cast<double>(count) / static_cast<double>(group_tokens);
                    backward(scale(loss, weight));
                    step_loss.add(lv * weight);
                }
            }

            const double preclip = clip_global_norm(trainable_only, cfg.grad_clip_norm);
            const double lr = schedule_lr(cfg, global_step, total_steps);
            opt.step(trainable, lr);

            StepRecord rec;
            rec.step = global_step;
            rec.lr = lr;
            rec.loss = step_loss.value();
            rec.grad_norm_preclip = preclip;
            rec.tokens = group_tokens;
            log.steps.push_back(rec);

            micro_index += group;
        }
    }

    log.wall_seconds = now_seconds() - t0;
    return log;
}

}  // namespace detail

// Recovery training: only the parameters the surgery record marks trainable
// (tune-set layers under their new numbering) receive updates; every other
// tensor is bitwise untouched.
inline TrainLog finetune(TransformerModel& model, const SurgeryRecord& record, const Dataset& data,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.empty()) throw EmptyResult("finetune: dataset is empty");

    const std::set<std::string> mask = trainable_mask(record);
    std::vector<std::pair<std::string, Tensor>> trainable;
    for (auto& [name, t] : model.named_params()) {
        const bool on = mask.count(name) > 0;
        t.set_requires_grad(on);
        if (on) trainable.push_back({name, t});
    }
    return detail::run_training(model, trainable, data, cfg, "finetune");
}

// Full training of a fresh dense model: every parameter — embeddings, prefix
// projection, all layers, final norm, output head — is trainable. Same loop
// and recipe as finetune.
inline TrainLog pretrain(TransformerModel& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.empty()) throw EmptyResult("pretrain: dataset is empty");

    std::vector<std::pair<std::string, Tensor>> trainable;
    for (auto& [name, t] : model.named_params()) {
        t.set_requires_grad(true);
        trainable.push_back({name, t});
    }
    return detail::run_training(model, trainable, data, cfg, "pretrain");
}

}  // namespace interlace
