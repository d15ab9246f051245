#pragma once

// Layer-redundancy scoring. For each calibration sample the model is run
// once with taps; token-wise cosine similarities are folded into per-layer
// and per-triplet compensated accumulators immediately, so only one trace is
// alive at a time. Layer l (1-based) scores the boundary pair
// (states[l-1], states[l]); triplet i scores (states[i-1], states[i+2]) —
// the hidden state entering layer i against the one leaving layer i+2.

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "interlace/common.hpp"
#include "interlace/model.hpp"
#include "interlace/taskgen.hpp"
#include "interlace/tensor.hpp"

namespace interlace {

struct SimilarityReport {
    int64_t num_layers = 0;
    int64_t tokens_seen = 0;
    std::vector<double> layer_scores;    // index l-1 holds S_layer(l), l in 1..L
    std::vector<double> triplet_scores;  // index i-1 holds S_triplet(i), i in 1..L-2
    std::string calib_fingerprint;

    void validate() const {
        if (num_layers < 1) throw SchemaError("report: num_layers must be >= 1");
        if (tokens_seen < 1) throw SchemaError("report: tokens_seen must be >= 1");
        if (static_cast<int64_t>(layer_scores.size()) != num_layers)
            throw SchemaError("report: layer_scores length != num_layers");
        const int64_t expect_triplets = num_layers >= 3 ? num_layers - 2 : 0;
        if (static_cast<int64_t>(triplet_scores.size()) != expect_triplets)
            throw SchemaError("report: triplet_scores length != num_layers - 2");
        for (double s : layer_scores)
            if (!(s >= -1.0 && s <= 1.0)) throw SchemaError("report: layer score outside [-1, 1]");
        for (double s : triplet_scores)
            if (!(s >= -1.0 && s <= 1.0)) throw SchemaError("report: triplet score outside [-1, 1]");
    }

    Json to_json() const {
        Json j;
        j["num_layers"] = num_layers;
        j["tokens_seen"] = tokens_seen;
        j["layer_scores"] = layer_scores;
        j["triplet_scores"] = triplet_scores;
        j["calib_fingerprint"] = calib_fingerprint;
        return j;
    }

    static SimilarityReport from_json(const Json& j) {
        SimilarityReport r;
        try {
            r.num_layers = j.at("num_layers").get<int64_t>();
            r.tokens_seen = j.at("tokens_seen").get<int64_t>();
            r.layer_scores = j.at("layer_scores").get<std::vector<double>>();
            r.triplet_scores = j.at("triplet_scores").get<std::vector<double>>();
            r.calib_fingerprint = j.at("calib_fingerprint").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("similarity report: ") + e.what());
        }
        r.validate();
        return r;
    }

    // One row per layer; the triplet column is empty past layer L-2.
    std::string to_csv() const {
        std::string out = "layer_index,s_layer,s_triplet\n";
        for (int64_t l = 1; l <= num_layers; l++) {
            out += std::to_string(l);
            out += ',';
            out += double_str(layer_scores[static_cast<size_t>(l - 1)]);
            out += ',';
            if (l <= static_cast<int64_t>(triplet_scores.size()))
                out += double_str(triplet_scores[static_cast<size_t>(l - 1)]);
            out += '\n';
        }
        return out;
    }

    std::string fingerprint() const {
        Fnv1a h;
        h.update_i64(num_layers);
        h.update_i64(tokens_seen);
        h.update_f64s(layer_scores);
        h.update_f64s(triplet_scores);
        h.update_str(calib_fingerprint);
        return h.hex();
    }
};

// Scores from an arbitrary trace source — the engine behind score(), and a
// seam for tests that inject synthetic traces.
inline SimilarityReport score_traces(
    int64_t num_layers, const Dataset& calib,
    const std::function<std::vector<Tensor>(const Sample&, size_t)>& trace_fn) {
    if (calib.samples.empty()) throw EmptyCalibration("calibration set is empty");
    if (num_layers < 1) throw InvalidConfig("score_traces: num_layers must be >= 1");

    const int64_t num_triplets = num_layers >= 3 ? num_layers - 2 : 0;
    std::vector<KahanSum> layer_acc(static_cast<size_t>(num_layers));
    std::vector<KahanSum> triplet_acc(static_cast<size_t>(num_triplets));
    int64_t tokens_seen = 0;

    for (size_t si = 0; si < calib.samples.size(); si++) {
        const std::vector<Tensor> states = trace_fn(calib.samples[si], si);
        if (static_cast<int64_t>(states.size()) != num_layers + 1)
            throw InvalidConfig("score_traces: trace must have num_layers + 1 states");
        const int64_t t_total = states[0].rows();
        const int64_t d = states[0].cols();
        auto row = [&](int64_t state, int64_t j) { return states[static_cast<size_t>(state)].data() + j * d; };

        auto scored_cosine = [&](int64_t a, int64_t b, int64_t j, const char* what, int64_t idx) {
            try {
                return cosine(row(a, j), row(b, j), d);
            } catch (const ZeroNormVector& e) {
                throw ZeroNormVector("sample " + std::to_string(si) + " position " + std::to_string(j) +
                                     " " + what + " " + std::to_string(idx) + ": " + e.what());
            }
        };

        for (int64_t l = 1; l <= num_layers; l++)
            for (int64_t j = 0; j < t_total; j++)
                layer_acc[static_cast<size_t>(l - 1)].add(scored_cosine(l - 1, l, j, "layer", l));
        for (int64_t i = 1; i <= num_triplets; i++)
            for (int64_t j = 0; j < t_total; j++)
                triplet_acc[static_cast<size_t>(i - 1)].add(scored_cosine(i - 1, i + 2, j, "triplet", i));
        tokens_seen += t_total;
    }

    SimilarityReport report;
    report.num_layers = num_layers;
    report.tokens_seen = tokens_seen;
    report.layer_scores.reserve(static_cast<size_t>(num_layers));
    for (auto& acc : layer_acc)
        report.layer_scores.push_back(std::clamp(acc.value() / static_cast<double>(tokens_seen), -1.0, 1.0));
    for (auto& acc : triplet_acc)
        report.triplet_scores.push_back(
            std::clamp(acc.value() / static_cast<double>(tokens_seen), -1.0, 1.0));
    report.calib_fingerprint = calib.fingerprint();
    report.validate();
    return report;
}

inline SimilarityReport score(const TransformerModel& model, const Dataset& calib) {
    NoGradGuard guard;
    return score_traces(model.num_layers(), calib, [&](const Sample& s, size_t) {
        auto out = model.forward(s.prefix_feats, s.tokens, /*with_taps=*/true);
        for (size_t l = 0; l < out.trace.states.size(); l++)
            assert_all_finite(out.trace.states[l], "hidden state " + std::to_string(l));
        return out.trace.states;
    });
}

// Deterministic uniform subsample of ceil(fraction · n) samples, ascending
// canonical order.
inline Dataset select_calibration(const Dataset& finetune_set, double fraction, uint64_t seed) {
    if (finetune_set.samples.empty()) throw EmptyResult("cannot subsample an empty dataset");
    if (fraction <= 0.0 || fraction > 1.0) throw InvalidConfig("calibration fraction must be in (0, 1]");
    const int64_t n = static_cast<int64_t>(finetune_set.samples.size());
    const int64_t m = static_cast<int64_t>(std::ceil(static_cast<double>(n) * fraction));
    Dataset out;
    for (int64_t i : seeded_subset(n, m, mix_seed(seed, 0x63616c69 /* "cali" */)))
        out.samples.push_back(finetune_set.samples[static_cast<size_t>(i)]);
    return out;
}

}  // namespace interlace
