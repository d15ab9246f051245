#pragma once
// Evaluation (answer-position accuracy and token-mean loss), relative
// performance between a pruned model and its dense baseline, and the
// time-to-first-token prefill microbenchmark.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "interlace/checkpoint.hpp"
#include "interlace/model.hpp"
#include "interlace/taskgen.hpp"
#include "interlace/trainer.hpp"

namespace interlace {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double accuracy = 0.0;   // greedy-argmax accuracy over mask-true positions
    double mean_loss = 0.0;  // token-mean cross-entropy over the same positions
    int64_t samples = 0;
    std::string model_fingerprint;

    Json to_json() const {
        Json j;
        j["accuracy"] = accuracy;
        j["mean_loss"] = mean_loss;
        j["samples"] = samples;
        j["model_fingerprint"] = model_fingerprint;
        return j;
    }

    static EvalReport from_json(const Json& j) {
        EvalReport r;
        try {
            r.accuracy = j.at("accuracy").get<double>();
            r.mean_loss = j.at("mean_loss").get<double>();
            r.samples = j.at("samples").get<int64_t>();
            r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("eval report: ") + e.what());
        }
        return r;
    }
};

// A predictor maps a sample to logit rows covering prefix + text positions.
// evaluate() wraps a model; tests may inject oracles or noise sources.
using Predictor = std::function<Tensor(const Sample&)>;

inline int64_t argmax_row(const Tensor& logits, int64_t row) {
    int64_t best = 0;
    double best_v = logits.at(row, 0);
    for (int64_t v = 1; v < logits.cols(); v++) {
        if (logits.at(row, v) > best_v) {  // strict: ties keep the lowest index
            best_v = logits.at(row, v);
            best = v;
        }
    }
    return best;
}

inline EvalReport evaluate_with(const Predictor& predict, const Dataset& data, int64_t prefix_len,
                                const std::string& fingerprint = "") {
    if (data.samples.empty()) throw EmptyResult("evaluate: empty dataset");
    int64_t correct = 0, total = 0;
    KahanSum nll;
    for (const Sample& s : data.samples) {
        const Tensor logits = predict(s);
        const auto targets = row_targets(s, prefix_len);
        const auto mask = row_mask(s, prefix_len);
        if (logits.rows() != static_cast<int64_t>(targets.size()))
            throw InvalidConfig("evaluate: predictor produced " + std::to_string(logits.rows()) +
                                " rows for " + std::to_string(targets.size()) + " positions");
        int64_t count = 0;
        for (size_t t = 0; t < mask.size(); t++) {
            if (!mask[t]) continue;
            count++;
            if (argmax_row(logits, static_cast<int64_t>(t)) == targets[t]) correct++;
        }
        if (count == 0) continue;  // sample contributes no answer positions
        const double sample_mean = next_token_loss(logits, targets, mask).scalar();
        nll.add(sample_mean * static_cast<double>(count));
        total += count;
    }
    if (total == 0) throw AllMasked("evaluate: no answer positions in dataset");
    EvalReport r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    r.mean_loss = nll.value() / static_cast<double>(total);
    r.samples = static_cast<int64_t>(data.samples.size());
    r.model_fingerprint = fingerprint;
    return r;
}

inline EvalReport evaluate(const TransformerModel& model, const Dataset& data) {
    const int64_t n_v = model.config().prefix_len;
    Predictor predict = [&model](const Sample& s) {
        return model.forward(s.prefix_feats, s.tokens).logits;
    };
    return evaluate_with(predict, data, n_v, model_fingerprint(model));
}

// 100 · pruned accuracy / baseline accuracy.
inline double relative_performance(const EvalReport& pruned, const EvalReport& baseline) {
    if (!(baseline.accuracy > 0.0))
        throw ZeroBaseline("relative_performance: baseline accuracy " +
                           std::to_string(baseline.accuracy));
    return 100.0 * pruned.accuracy / baseline.accuracy;
}

// ---------------------------------------------------------------------------
// Prefill latency
// ---------------------------------------------------------------------------

// External reference measurement on a production-scale model (non-binding
// comparison line only): a 25% depth reduction was reported as a 1.18x
// prefill speedup.
inline constexpr double kExternalTtftReference = 1.18;

struct BenchReport {
    int64_t seq_len = 0;  // text tokens per trial (prefix rows are added on top)
    int64_t trials = 0;   // post-warmup, the only ones recorded
    int64_t warmup = 0;
    std::vector<double> latencies_seconds;  // post-warmup trials, in order
    double median_seconds = 0.0;
    double mean_seconds = 0.0;
    double speedup_vs_reference = 0.0;  // reference median / this median; 0 until set
    std::string model_fingerprint;

    Json to_json() const {
        Json j;
        j["seq_len"] = seq_len;
        j["trials"] = trials;
        j["warmup"] = warmup;
        j["latencies_seconds"] = latencies_seconds;
        j["median_seconds"] = median_seconds;
        j["mean_seconds"] = mean_seconds;
        j["speedup_vs_reference"] = speedup_vs_reference;
        j["model_fingerprint"] = model_fingerprint;
        j["external_reference_speedup"] = kExternalTtftReference;
        j["external_reference_note"] =
            "non-binding: production-scale measurement of 1.18x prefill speedup "
            "at 25% depth reduction";
        return j;
    }

    static BenchReport from_json(const Json& j) {
        BenchReport r;
        try {
            r.seq_len = j.at("seq_len").get<int64_t>();
            r.trials = j.at("trials").get<int64_t>();
            r.warmup = j.at("warmup").get<int64_t>();
            r.latencies_seconds = j.at("latencies_seconds").get<std::vector<double>>();
            r.median_seconds = j.at("median_seconds").get<double>();
            r.mean_seconds = j.at("mean_seconds").get<double>();
            r.speedup_vs_reference = j.at("speedup_vs_reference").get<double>();
            r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("bench report: ") + e.what());
        }
        return r;
    }
};

using Clock = std::function<double()>;

// Smallest positive increment the clock can report, estimated by spinning
// until the reading changes; minimum over a few probes.
inline double timer_resolution(const Clock& clock) {
    double best = std::numeric_limits<double>::infinity();
    for (int probe = 0; probe < 8; probe++) {
        const double t0 = clock();
        double t1 = clock();
        while (t1 <= t0) t1 = clock();
        best = std::min(best, t1 - t0);
    }
    return best;
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

// One model prepared for repeated prefill timing: fixed inputs, plus a sink
// that consumes every forward so no trial can be elided by the optimizer.
class TtftRunner {
public:
    TtftRunner(const TransformerModel& model, int64_t seq_len) : model_(model) {
        const ModelConfig& cfg = model.config();
        if (cfg.prefix_len + seq_len > cfg.max_seq)
            throw SequenceTooLong("ttft: prefix " + std::to_string(cfg.prefix_len) + " + " +
                                  std::to_string(seq_len) + " tokens exceeds max_seq " +
                                  std::to_string(cfg.max_seq));
        // Fixed inputs across trials; content does not matter for timing.
        Rng rng(mix_seed(0x7474667462ull /*"ttftb"*/, cfg.seed));
        feats_.resize(static_cast<size_t>(cfg.prefix_len * cfg.feat_dim));
        for (double& f : feats_) f = rng.normal();
        tokens_.resize(static_cast<size_t>(seq_len));
        for (int64_t& t : tokens_)
            t = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(cfg.vocab_size)));
    }

    void run_once() { sink_ += model_.forward(feats_, tokens_).logits.at(0, 0); }

    double timed_once(const Clock& clock, double resolution) {
        const double t0 = clock();
        run_once();
        const double t1 = clock();
        const double lat = t1 - t0;
        if (lat < 100.0 * resolution)
            throw ClockResolutionTooCoarse("trial took " + std::to_string(lat) +
                                           " s but timer resolution is " +
                                           std::to_string(resolution) + " s");
        return lat;
    }

    void check_finite() const {
        if (!std::isfinite(sink_))
            throw NonFiniteValue("ttft: forward produced non-finite logits");
    }

private:
    const TransformerModel& model_;
    std::vector<double> feats_;
    std::vector<int64_t> tokens_;
    double sink_ = 0.0;
};

inline void validate_ttft_args(int64_t seq_len, int64_t trials, int64_t warmup) {
    if (trials < 10) throw InvalidConfig("ttft: need at least 10 recorded trials");
    if (warmup < 0) throw InvalidConfig("ttft: negative warmup");
    if (seq_len < 1) throw InvalidConfig("ttft: seq_len must be positive");
}

inline void finalize_latencies(BenchReport& r) {
    r.median_seconds = median_of(r.latencies_seconds);
    KahanSum mean;
    for (double l : r.latencies_seconds) mean.add(l);
    r.mean_seconds = mean.value() / static_cast<double>(r.latencies_seconds.size());
}

}  // namespace detail

// Times one full prefill forward (prefix + seq_len text tokens, up to
// first-token logits) per trial. Warmup trials run first and are discarded;
// the median is taken over the recorded trials only. Strictly
// single-threaded. Input generation is excluded from timing.
inline BenchReport ttft_bench(const TransformerModel& model, int64_t seq_len,
                              int64_t trials = 30, int64_t warmup = 5, Clock clock = {}) {
    detail::validate_ttft_args(seq_len, trials, warmup);
    if (!clock) clock = [] { return now_seconds(); };
    const double resolution = timer_resolution(clock);

    detail::TtftRunner run(model, seq_len);
    for (int64_t i = 0; i < warmup; i++) run.run_once();

    BenchReport r;
    r.seq_len = seq_len;
    r.trials = trials;
    r.warmup = warmup;
    r.model_fingerprint = model_fingerprint(model);
    r.latencies_seconds.reserve(static_cast<size_t>(trials));
    for (int64_t i = 0; i < trials; i++)
        r.latencies_seconds.push_back(run.timed_once(clock, resolution));
    run.check_finite();
    detail::finalize_latencies(r);
    return r;
}

// Speedup of `subject` relative to `reference`: reference median / subject
// median. Values above 1 mean the subject is faster.
inline double ttft_speedup(const BenchReport& reference, const BenchReport& subject) {
    if (!(reference.median_seconds > 0.0) || !(subject.median_seconds > 0.0))
        throw InvalidConfig("ttft_speedup: medians must be positive");
    return reference.median_seconds / subject.median_seconds;
}

struct PairedBench {
    BenchReport reference;
    BenchReport subject;  // subject.speedup_vs_reference carries the ratio
    double speedup = 0.0;

    Json to_json() const {
        Json j;
        j["reference"] = reference.to_json();
        j["subject"] = subject.to_json();
        j["speedup"] = speedup;
        return j;
    }
};

// Benchmarks two models under like conditions by interleaving their trials
// (reference, subject, reference, subject, ...). Timing the two models in
// separate whole runs is vulnerable to machine-state drift (CPU frequency,
// cache, allocator) between the runs, which shows up as a phantom speedup
// even for architecturally identical models; interleaving exposes both
// models to the same average conditions.
inline PairedBench ttft_paired(const TransformerModel& reference, const TransformerModel& subject,
                               int64_t seq_len, int64_t trials = 30, int64_t warmup = 5,
                               Clock clock = {}) {
    detail::validate_ttft_args(seq_len, trials, warmup);
    if (!clock) clock = [] { return now_seconds(); };
    const double resolution = timer_resolution(clock);

    detail::TtftRunner ref_run(reference, seq_len);
    detail::TtftRunner sub_run(subject, seq_len);
    for (int64_t i = 0; i < warmup; i++) {
        ref_run.run_once();
        sub_run.run_once();
    }

    PairedBench out;
    auto init = [&](BenchReport& r, const TransformerModel& m) {
        r.seq_len = seq_len;
        r.trials = trials;
        r.warmup = warmup;
        r.model_fingerprint = model_fingerprint(m);
        r.latencies_seconds.reserve(static_cast<size_t>(trials));
    };
    init(out.reference, reference);
    init(out.subject, subject);
    for (int64_t i = 0; i < trials; i++) {
        out.reference.latencies_seconds.push_back(ref_run.timed_once(clock, resolution));
        out.subject.latencies_seconds.push_back(sub_run.timed_once(clock, resolution));
    }
    ref_run.check_finite();
    sub_run.check_finite();
    detail::finalize_latencies(out.reference);
    detail::finalize_latencies(out.subject);
    out.speedup = ttft_speedup(out.reference, out.subject);
    out.subject.speedup_vs_reference = out.speedup;
    return out;
}

// ---------------------------------------------------------------------------
// Combined experiment report
// ---------------------------------------------------------------------------

struct CombinedRow {
    std::string strategy;
    double ratio = 0.0;
    double accuracy = 0.0;
    double relative_performance = 0.0;
    double ttft_speedup = 0.0;
};

// CSV with one row per (strategy, ratio) cell. Numbers use shortest
// round-trip formatting so the artifact is byte-stable.
inline std::string combined_csv(const std::vector<CombinedRow>& rows) {
    std::string out = "strategy,ratio,accuracy,relative_performance,ttft_speedup\n";
    for (const CombinedRow& r : rows) {
        out += r.strategy;
        out += ',';
        out += Json(r.ratio).dump();
        out += ',';
        out += Json(r.accuracy).dump();
        out += ',';
        out += Json(r.relative_performance).dump();
        out += ',';
        out += Json(r.ttft_speedup).dump();
        out += '\n';
    }
    return out;
}

}  // namespace interlace
