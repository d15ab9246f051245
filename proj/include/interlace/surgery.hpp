#pragma once

// Model surgery: materialize a pruned model from a plan by removing the
// dropped layers and renumbering the survivors contiguously, and derive the
// parameter-level trainability mask that leaves only the tuned layers
// updatable. The pruned model is a deep copy — experiments comparing the
// dense and pruned models must never alias state.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "interlace/model.hpp"
#include "interlace/planner.hpp"

namespace interlace {

struct SurgeryRecord {
    // Surviving old layer index (1-based) → new contiguous index (1-based).
    std::map<int64_t, int64_t> old_to_new;
    std::vector<int64_t> dropped;  // ascending old indices
    std::vector<uint8_t> mask;     // mask[i] ↔ new layer i+1 is trainable
    bool non_layer_trainables = false;  // embeddings, prefix_proj, lm_head stay frozen

    void validate() const {
        const int64_t survivors = static_cast<int64_t>(old_to_new.size());
        if (static_cast<int64_t>(mask.size()) != survivors)
            throw SchemaError("surgery record: mask length must equal survivor count");
        int64_t prev_old = 0, expect_new = 1;
        for (const auto& [old_idx, new_idx] : old_to_new) {
            if (old_idx <= prev_old) throw SchemaError("surgery record: old indices not increasing");
            if (new_idx != expect_new)
                throw SchemaError("surgery record: new indices must be contiguous from 1");
            prev_old = old_idx;
            expect_new++;
        }
        std::set<int64_t> gone(dropped.begin(), dropped.end());
        if (gone.size() != dropped.size()) throw SchemaError("surgery record: duplicate dropped index");
        for (int64_t d : dropped)
            if (old_to_new.count(d)) throw SchemaError("surgery record: dropped layer also survives");
        if (non_layer_trainables)
            throw SchemaError("surgery record: non-layer components must stay frozen");
    }

    Json to_json() const {
        Json j;
        Json o2n = Json::array();
        for (const auto& [old_idx, new_idx] : old_to_new) {
            Json e;
            e["old"] = old_idx;
            e["new"] = new_idx;
            o2n.push_back(e);
        }
        j["old_to_new"] = o2n;
        j["dropped"] = dropped;
        Json m = Json::array();
        for (uint8_t b : mask) m.push_back(b != 0);
        j["mask"] = m;
        j["non_layer_trainables"] = non_layer_trainables;
        return j;
    }

    static SurgeryRecord from_json(const Json& j) {
        SurgeryRecord r;
        try {
            for (const auto& e : j.at("old_to_new"))
                r.old_to_new[e.at("old").get<int64_t>()] = e.at("new").get<int64_t>();
            r.dropped = j.at("dropped").get<std::vector<int64_t>>();
            for (const auto& b : j.at("mask")) r.mask.push_back(b.get<bool>() ? 1 : 0);
            r.non_layer_trainables = j.at("non_layer_trainables").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("surgery record: ") + e.what());
        }
        r.validate();
        return r;
    }
};

struct SurgeryResult {
    TransformerModel model;
    SurgeryRecord record;
};

// The renumbering and trainability record a plan induces, independent of any
// model instance. Lets a pipeline stage that receives an already-pruned
// checkpoint plus the plan rebuild the mask without redoing surgery.
inline SurgeryRecord record_from_plan(const PruningPlan& plan) {
    plan.validate();
    const std::set<int64_t> drop(plan.drop.begin(), plan.drop.end());
    const std::set<int64_t> tune(plan.tune.begin(), plan.tune.end());

    SurgeryRecord record;
    int64_t next_new = 1;
    for (int64_t old_idx = 1; old_idx <= plan.num_layers; old_idx++) {
        if (drop.count(old_idx)) continue;
        record.old_to_new[old_idx] = next_new++;
        record.mask.push_back(tune.count(old_idx) ? 1 : 0);
    }
    record.dropped = plan.drop;
    record.validate();
    return record;
}

// Remove the plan's dropped layers and renumber the rest. The plan applies
// only to the exact depth it was computed for — no re-projection.
inline SurgeryResult apply_plan(const TransformerModel& model, const PruningPlan& plan) {
    if (plan.num_layers != model.config().num_layers)
        throw PlanModelMismatch("plan computed for depth " + std::to_string(plan.num_layers) +
                                " but model has " + std::to_string(model.config().num_layers) +
                                " layers");
    SurgeryResult out;
    out.record = record_from_plan(plan);
    out.model = model.deep_copy();

    const std::set<int64_t> drop(plan.drop.begin(), plan.drop.end());
    std::vector<DecoderLayer> kept;
    for (int64_t old_idx = 1; old_idx <= plan.num_layers; old_idx++) {
        if (drop.count(old_idx)) continue;
        kept.push_back(out.model.layers()[static_cast<size_t>(old_idx - 1)]);
    }
    out.model.replace_layers(std::move(kept), plan.num_layers - plan.k);
    return out;
}

// Parameter names (in the pruned model's numbering) that training may
// update; everything absent from the set stays frozen.
inline std::set<std::string> trainable_mask(const SurgeryRecord& record) {
    record.validate();
    std::set<std::string> names;
    for (size_t i = 0; i < record.mask.size(); i++) {
        if (!record.mask[i]) continue;
        const std::string prefix = "layers." + std::to_string(i) + ".";
        for (const auto& suffix : DecoderLayer::suffixes()) names.insert(prefix + suffix);
    }
    return names;
}

}  // namespace interlace
