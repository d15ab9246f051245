#pragma once

// Pruning planners. The flagship selector walks triplets of consecutive
// layers in descending triplet-redundancy order; each selected triplet
// freezes its third layer as an anchor, drops whichever of the first two
// has the higher single-layer redundancy, and marks the other for tuning.
// Four alternative selectors (contiguous block, seeded random, positional
// in-triplet roles, rank-order drop with next-layer tuning) plus a
// tune-only control share the same plan shape.
//
// Layer indices are 1-based everywhere in plans, matching the reports.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "interlace/common.hpp"
#include "interlace/similarity.hpp"

namespace interlace {

enum class Strategy { interlace, consecutive, random, interlace_oa, interlace_tn, dense_ft };

inline const std::vector<Strategy>& all_strategies() {
    static const std::vector<Strategy> all = {Strategy::interlace,    Strategy::consecutive,
                                              Strategy::random,       Strategy::interlace_oa,
                                              Strategy::interlace_tn, Strategy::dense_ft};
    return all;
}

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::interlace: return "interlace";
        case Strategy::consecutive: return "consecutive";
        case Strategy::random: return "random";
        case Strategy::interlace_oa: return "interlace_oa";
        case Strategy::interlace_tn: return "interlace_tn";
        case Strategy::dense_ft: return "dense_ft";
    }
    throw InvalidConfig("unknown strategy enum value");
}

inline Strategy strategy_from_name(const std::string& name) {
    for (Strategy s : all_strategies())
        if (strategy_name(s) == name) return s;
    throw InvalidConfig("unknown strategy: " + name);
}

// Provenance of one selected triplet {index, index+1, index+2}.
struct TripletRecord {
    int64_t index = 0;
    int64_t dropped = 0;
    int64_t tuned = 0;
    int64_t frozen = 0;
};

// Budget K = ⌊ρ·L⌋, with a tiny nudge so exact products like 0.15·20 do not
// round down through floating point.
inline int64_t pruning_budget(int64_t num_layers, double ratio, bool allow_full = false) {
    const double hi = allow_full ? 1.0 + 1e-12 : 1.0;
    if (!(ratio > 0.0) || !(ratio < hi) || !std::isfinite(ratio))
        throw InvalidRatio("ratio must lie in (0, 1), got " + double_str(ratio));
    const int64_t k = static_cast<int64_t>(std::floor(ratio * static_cast<double>(num_layers) + 1e-9));
    if (k < 1)
        throw InvalidRatio("ratio " + double_str(ratio) + " yields zero layers at depth " +
                           std::to_string(num_layers));
    return k;
}

struct PruningPlan {
    int64_t version = 1;
    Strategy strategy = Strategy::interlace;
    int64_t num_layers = 0;
    double ratio = 0.0;
    int64_t k = 0;  // dropped-layer count; 0 for the tune-only control
    std::vector<int64_t> drop, tune, freeze;  // ascending 1-based indices
    std::vector<TripletRecord> triplets;
    std::optional<uint64_t> seed;
    std::string report_fingerprint;
    std::vector<std::string> notes;  // decisions taken on edge cases

    void validate() const {
        if (num_layers < 1) throw SchemaError("plan: num_layers must be >= 1");
        const bool tune_only = strategy == Strategy::dense_ft;
        if (!(ratio > 0.0) || !(tune_only ? ratio <= 1.0 : ratio < 1.0))
            throw SchemaError("plan: ratio out of range for strategy " + strategy_name(strategy));

        // drop ∪ tune ∪ freeze must partition {1..L}
        std::vector<int8_t> role(static_cast<size_t>(num_layers) + 1, 0);
        auto mark = [&](const std::vector<int64_t>& set, const char* what) {
            int64_t prev = 0;
            for (int64_t l : set) {
                if (l < 1 || l > num_layers)
                    throw SchemaError(std::string("plan: ") + what + " index out of range");
                if (l <= prev) throw SchemaError(std::string("plan: ") + what + " not ascending");
                if (role[static_cast<size_t>(l)] != 0)
                    throw SchemaError("plan: layer " + std::to_string(l) + " assigned twice");
                role[static_cast<size_t>(l)] = 1;
                prev = l;
            }
        };
        mark(drop, "drop");
        mark(tune, "tune");
        mark(freeze, "freeze");
        for (int64_t l = 1; l <= num_layers; l++)
            if (role[static_cast<size_t>(l)] == 0)
                throw SchemaError("plan: layer " + std::to_string(l) + " unassigned");

        if (tune_only) {
            if (k != 0 || !drop.empty()) throw SchemaError("plan: tune-only control must drop nothing");
        } else {
            const int64_t expect_k = static_cast<int64_t>(
                std::floor(ratio * static_cast<double>(num_layers) + 1e-9));
            if (k != expect_k) throw SchemaError("plan: k does not equal floor(ratio * L)");
            if (static_cast<int64_t>(drop.size()) != k) throw SchemaError("plan: |drop| != k");
        }

        if (strategy == Strategy::interlace || strategy == Strategy::interlace_oa) {
            if (static_cast<int64_t>(tune.size()) != k) throw SchemaError("plan: |tune| != k");
            std::vector<int8_t> owned(static_cast<size_t>(num_layers) + 1, 0);
            auto in = [](const std::vector<int64_t>& v, int64_t x) {
                return std::binary_search(v.begin(), v.end(), x);
            };
            for (const auto& t : triplets) {
                if (t.index < 1 || t.index + 2 > num_layers)
                    throw SchemaError("plan: triplet record out of range");
                if (t.frozen != t.index + 2)
                    throw SchemaError("plan: triplet must freeze its third layer");
                const bool roles_ok = (t.dropped == t.index && t.tuned == t.index + 1) ||
                                      (t.dropped == t.index + 1 && t.tuned == t.index);
                if (!roles_ok) throw SchemaError("plan: triplet drop/tune must cover its first two layers");
                for (int64_t l = t.index; l <= t.index + 2; l++) {
                    if (owned[static_cast<size_t>(l)])
                        throw SchemaError("plan: triplet records overlap at layer " + std::to_string(l));
                    owned[static_cast<size_t>(l)] = 1;
                }
                if (!in(drop, t.dropped) || !in(tune, t.tuned) || !in(freeze, t.frozen))
                    throw SchemaError("plan: triplet record disagrees with role sets");
            }
        }
        if (strategy == Strategy::random && !seed.has_value())
            throw SchemaError("plan: random strategy requires a seed");
    }

    Json to_json() const {
        Json j;
        j["version"] = version;
        j["strategy"] = strategy_name(strategy);
        j["num_layers"] = num_layers;
        j["ratio"] = ratio;
        j["k"] = k;
        j["drop"] = drop;
        j["tune"] = tune;
        j["freeze"] = freeze;
        Json trips = Json::array();
        for (const auto& t : triplets) {
            Json e;
            e["index"] = t.index;
            e["dropped"] = t.dropped;
            e["tuned"] = t.tuned;
            e["frozen"] = t.frozen;
            trips.push_back(e);
        }
        j["triplets"] = trips;
        if (seed.has_value()) j["seed"] = *seed;
        j["report_fingerprint"] = report_fingerprint;
        j["notes"] = notes;
        return j;
    }

    static PruningPlan from_json(const Json& j) {
        PruningPlan p;
        try {
            p.version = j.at("version").get<int64_t>();
            p.strategy = strategy_from_name(j.at("strategy").get<std::string>());
            p.num_layers = j.at("num_layers").get<int64_t>();
            p.ratio = j.at("ratio").get<double>();
            p.k = j.at("k").get<int64_t>();
            p.drop = j.at("drop").get<std::vector<int64_t>>();
            p.tune = j.at("tune").get<std::vector<int64_t>>();
            p.freeze = j.at("freeze").get<std::vector<int64_t>>();
            for (const auto& e : j.at("triplets")) {
                TripletRecord t;
                t.index = e.at("index").get<int64_t>();
                t.dropped = e.at("dropped").get<int64_t>();
                t.tuned = e.at("tuned").get<int64_t>();
                t.frozen = e.at("frozen").get<int64_t>();
                p.triplets.push_back(t);
            }
            if (j.contains("seed")) p.seed = j.at("seed").get<uint64_t>();
            p.report_fingerprint = j.at("report_fingerprint").get<std::string>();
            p.notes = j.value("notes", std::vector<std::string>{});
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("pruning plan: ") + e.what());
        }
        if (p.version != 1) throw VersionMismatch("unsupported plan version " + std::to_string(p.version));
        p.validate();
        return p;
    }

    // Assignment table mirroring the report: layer, role, score, owning triplet.
    std::string to_csv(const SimilarityReport& report) const {
        if (report.num_layers != num_layers)
            throw PlanModelMismatch("plan depth does not match report depth");
        std::vector<std::string> roles(static_cast<size_t>(num_layers) + 1, "freeze");
        for (int64_t l : drop) roles[static_cast<size_t>(l)] = "drop";
        for (int64_t l : tune) roles[static_cast<size_t>(l)] = "tune";
        std::vector<int64_t> owner(static_cast<size_t>(num_layers) + 1, 0);
        for (const auto& t : triplets)
            for (int64_t l = t.index; l <= t.index + 2; l++) owner[static_cast<size_t>(l)] = t.index;
        std::string out = "layer,role,s_layer,owning_triplet\n";
        for (int64_t l = 1; l <= num_layers; l++) {
            out += std::to_string(l);
            out += ',';
            out += roles[static_cast<size_t>(l)];
            out += ',';
            out += double_str(report.layer_scores[static_cast<size_t>(l - 1)]);
            out += ',';
            if (owner[static_cast<size_t>(l)] != 0) out += std::to_string(owner[static_cast<size_t>(l)]);
            out += '\n';
        }
        return out;
    }
};

namespace detail {

// Triplet indices 1..L-2 sorted by descending score, ties toward the lower
// index so ranking is total and deterministic.
inline std::vector<int64_t> rank_triplets(const SimilarityReport& report) {
    std::vector<int64_t> order;
    for (int64_t i = 1; i <= static_cast<int64_t>(report.triplet_scores.size()); i++) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return report.triplet_scores[static_cast<size_t>(a - 1)] >
               report.triplet_scores[static_cast<size_t>(b - 1)];
    });
    return order;
}

inline void finalize_roles(PruningPlan& plan, std::vector<int8_t>& role /* 0 none, 1 drop, 2 tune, 3 freeze */) {
    for (int64_t l = 1; l <= plan.num_layers; l++) {
        switch (role[static_cast<size_t>(l)]) {
            case 1: plan.drop.push_back(l); break;
            case 2: plan.tune.push_back(l); break;
            default: plan.freeze.push_back(l); break;  // unassigned layers freeze
        }
    }
}

// Shared selection loop for the two triplet-based planners.
inline PruningPlan plan_triplets(const SimilarityReport& report, double ratio, bool positional_roles) {
    const int64_t L = report.num_layers;
    if (L < 3)
        throw InsufficientLayers("triplet selection needs at least 3 layers, got " + std::to_string(L));
    const int64_t K = pruning_budget(L, ratio);

    PruningPlan plan;
    plan.strategy = positional_roles ? Strategy::interlace_oa : Strategy::interlace;
    plan.num_layers = L;
    plan.ratio = ratio;
    plan.k = K;
    plan.report_fingerprint = report.fingerprint();

    std::vector<int8_t> role(static_cast<size_t>(L) + 1, 0);
    int64_t drops = 0;
    for (int64_t i : rank_triplets(report)) {
        if (drops >= K) break;
        if (role[static_cast<size_t>(i)] || role[static_cast<size_t>(i + 1)] ||
            role[static_cast<size_t>(i + 2)])
            continue;  // a constituent layer is already assigned
        TripletRecord rec;
        rec.index = i;
        rec.frozen = i + 2;
        if (positional_roles) {
            rec.dropped = i;
            rec.tuned = i + 1;
        } else if (report.layer_scores[static_cast<size_t>(i - 1)] >
                   report.layer_scores[static_cast<size_t>(i)]) {
            rec.dropped = i;  // strictly higher single-layer redundancy goes
            rec.tuned = i + 1;
        } else {
            rec.dropped = i + 1;  // ties fall to the second layer
            rec.tuned = i;
        }
        role[static_cast<size_t>(rec.dropped)] = 1;
        role[static_cast<size_t>(rec.tuned)] = 2;
        role[static_cast<size_t>(rec.frozen)] = 3;
        plan.triplets.push_back(rec);
        drops++;
    }
    if (drops < K)
        throw InsufficientTriplets("placed " + std::to_string(drops) + " of " + std::to_string(K) +
                                   " drops before running out of disjoint triplets");
    finalize_roles(plan, role);
    plan.validate();
    return plan;
}

}  // namespace detail

inline PruningPlan plan_interlace(const SimilarityReport& report, double ratio) {
    return detail::plan_triplets(report, ratio, /*positional_roles=*/false);
}

inline PruningPlan plan_interlace_oa(const SimilarityReport& report, double ratio) {
    return detail::plan_triplets(report, ratio, /*positional_roles=*/true);
}

// Rank layers by single-layer redundancy; drop a layer when neither it nor
// its successor is assigned yet, tune the successor; stop at K drops.
inline PruningPlan plan_interlace_tn(const SimilarityReport& report, double ratio) {
    const int64_t L = report.num_layers;
    const int64_t K = pruning_budget(L, ratio);

    PruningPlan plan;
    plan.strategy = Strategy::interlace_tn;
    plan.num_layers = L;
    plan.ratio = ratio;
    plan.k = K;
    plan.report_fingerprint = report.fingerprint();

    std::vector<int64_t> order;
    for (int64_t l = 1; l <= L; l++) order.push_back(l);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return report.layer_scores[static_cast<size_t>(a - 1)] >
               report.layer_scores[static_cast<size_t>(b - 1)];
    });

    std::vector<int8_t> role(static_cast<size_t>(L) + 1, 0);
    int64_t drops = 0;
    for (int64_t l : order) {
        if (drops >= K) break;
        if (l >= L) continue;  // the last layer has no successor to tune
        if (role[static_cast<size_t>(l)] || role[static_cast<size_t>(l + 1)]) continue;
        role[static_cast<size_t>(l)] = 1;
        role[static_cast<size_t>(l + 1)] = 2;
        drops++;
    }
    if (drops < K)
        throw InsufficientTriplets("placed " + std::to_string(drops) + " of " + std::to_string(K) +
                                   " drops before running out of drop/tune pairs");
    detail::finalize_roles(plan, role);
    plan.validate();
    return plan;
}

// Contiguous window of K layers with the highest cumulative single-layer
// redundancy; the K layers after it are tuned. If the global best window
// leaves fewer than K successors, the best window that does admit them is
// chosen and the decision is logged in the plan.
inline PruningPlan plan_consecutive(const SimilarityReport& report, double ratio) {
    const int64_t L = report.num_layers;
    const int64_t K = pruning_budget(L, ratio);

    auto window_sum = [&](int64_t start) {
        double s = 0.0;
        for (int64_t l = start; l < start + K; l++) s += report.layer_scores[static_cast<size_t>(l - 1)];
        return s;
    };
    auto best_start = [&](int64_t max_start) {
        int64_t best = 1;
        double best_sum = window_sum(1);
        for (int64_t s = 2; s <= max_start; s++) {
            const double sum = window_sum(s);
            if (sum > best_sum) {  // ties keep the lowest start
                best_sum = sum;
                best = s;
            }
        }
        return best;
    };

    const int64_t last_admissible = L - 2 * K + 1;  // start whose tuned block still fits
    if (last_admissible < 1)
        throw WindowOutOfRange("no window of " + std::to_string(K) + " layers leaves " +
                               std::to_string(K) + " successors within " + std::to_string(L));

    PruningPlan plan;
    plan.strategy = Strategy::consecutive;
    plan.num_layers = L;
    plan.ratio = ratio;
    plan.k = K;
    plan.report_fingerprint = report.fingerprint();

    const int64_t global_best = best_start(L - K + 1);
    int64_t start = global_best;
    if (global_best > last_admissible) {
        start = best_start(last_admissible);
        plan.notes.push_back("max-redundancy window at layer " + std::to_string(global_best) +
                             " leaves fewer than " + std::to_string(K) +
                             " successors; using best admissible window at layer " +
                             std::to_string(start));
    }

    std::vector<int8_t> role(static_cast<size_t>(L) + 1, 0);
    for (int64_t l = start; l < start + K; l++) role[static_cast<size_t>(l)] = 1;
    for (int64_t l = start + K; l < start + 2 * K; l++) role[static_cast<size_t>(l)] = 2;
    detail::finalize_roles(plan, role);
    plan.validate();
    return plan;
}

// Seeded uniform choice of K layers to drop and K disjoint layers to tune.
inline PruningPlan plan_random(int64_t num_layers, double ratio, uint64_t seed) {
    const int64_t K = pruning_budget(num_layers, ratio);
    if (2 * K > num_layers)
        throw InsufficientLayers("need " + std::to_string(2 * K) + " distinct layers in a stack of " +
                                 std::to_string(num_layers));

    PruningPlan plan;
    plan.strategy = Strategy::random;
    plan.num_layers = num_layers;
    plan.ratio = ratio;
    plan.k = K;
    plan.seed = seed;

    Rng rng(mix_seed(seed, 0x706c616e /* "plan" */));
    const std::vector<int64_t> perm = rng.permutation(num_layers);
    std::vector<int8_t> role(static_cast<size_t>(num_layers) + 1, 0);
    for (int64_t i = 0; i < K; i++) role[static_cast<size_t>(perm[static_cast<size_t>(i)] + 1)] = 1;
    for (int64_t i = K; i < 2 * K; i++) role[static_cast<size_t>(perm[static_cast<size_t>(i)] + 1)] = 2;
    detail::finalize_roles(plan, role);
    plan.validate();
    return plan;
}

// Tune-only control: nothing dropped, the last ⌊ρL⌋ layers trainable.
inline PruningPlan plan_dense_ft(int64_t num_layers, double ratio) {
    const int64_t tuned = pruning_budget(num_layers, ratio, /*allow_full=*/true);

    PruningPlan plan;
    plan.strategy = Strategy::dense_ft;
    plan.num_layers = num_layers;
    plan.ratio = ratio;
    plan.k = 0;
    std::vector<int8_t> role(static_cast<size_t>(num_layers) + 1, 0);
    for (int64_t l = num_layers - tuned + 1; l <= num_layers; l++) role[static_cast<size_t>(l)] = 2;
    detail::finalize_roles(plan, role);
    plan.validate();
    return plan;
}

// Single entry point used by the pipeline; the random strategy is the only
// one consuming a seed.
inline PruningPlan plan_with_strategy(Strategy strategy, const SimilarityReport& report, double ratio,
                                      std::optional<uint64_t> seed = std::nullopt) {
    switch (strategy) {
        case Strategy::interlace: return plan_interlace(report, ratio);
        case Strategy::interlace_oa: return plan_interlace_oa(report, ratio);
        case Strategy::interlace_tn: return plan_interlace_tn(report, ratio);
        case Strategy::consecutive: return plan_consecutive(report, ratio);
        case Strategy::random: {
            if (!seed.has_value()) throw InvalidConfig("random strategy requires a seed");
            PruningPlan p = plan_random(report.num_layers, ratio, *seed);
            p.report_fingerprint = report.fingerprint();
            return p;
        }
        case Strategy::dense_ft: {
            PruningPlan p = plan_dense_ft(report.num_layers, ratio);
            p.report_fingerprint = report.fingerprint();
            return p;
        }
    }
    throw InvalidConfig("unknown strategy enum value");
}

}  // namespace interlace
