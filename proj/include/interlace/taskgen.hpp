#pragma once

// Synthetic prefix-keyed retrieval task. Every sample carries a noisy copy
// of one of `num_buckets` prototype feature prefixes plus an alternating
// query/answer token sequence; the answer to a query is a fixed function of
// (bucket, query) drawn once per task seed. The rule is invertible — a
// nearest-prototype decoder plus the lookup table recovers every label — so
// the ceiling is 100% and any accuracy gap is model-side.
//
// Splits mirror the recovery-training regime: a finetune subset (default 1%
// of train), a calibration subset (default 10% of finetune), and an eval
// split generated from a disjoint index range.

#include <cmath>
#include <string>
#include <vector>

#include "interlace/common.hpp"

namespace interlace {

struct TaskSpec {
    int64_t vocab_size = 64;
    int64_t seq_len = 16;  // text tokens per sample; even (query/answer pairs)
    int64_t prefix_len = 8;
    int64_t feat_dim = 16;
    int64_t num_train = 0;
    int64_t num_eval = 0;
    double finetune_fraction = 0.01;
    double calib_fraction = 0.10;
    int64_t num_buckets = 8;
    double noise_std = 0.05;
    uint64_t seed = 0;

    void validate() const {
        if (finetune_fraction <= 0.0 || finetune_fraction > 1.0 || calib_fraction <= 0.0 ||
            calib_fraction > 1.0)
            throw InvalidConfig("task fractions must lie in (0, 1]");
        if (noise_std < 0.0) throw InvalidConfig("noise_std must be >= 0");
        if (num_train < 1 || num_eval < 1) throw SpecTooSmall("need at least one train and eval sample");
        if (static_cast<double>(num_train) * finetune_fraction < 1.0)
            throw SpecTooSmall("finetune fraction of num_train rounds below one sample");
        if (seq_len < 2 || seq_len % 2 != 0)
            throw SpecTooSmall("seq_len must be an even count of query/answer tokens");
        if (prefix_len < 1 || feat_dim < 1) throw SpecTooSmall("prefix must be non-empty");
        if (num_buckets < 2) throw SpecTooSmall("need at least two prefix buckets");
        if (vocab_size < 7) throw SpecTooSmall("vocab too small to split into queries and answers");
    }

    // Token-range layout: id 0 reserved, then queries, then answers.
    int64_t query_base() const { return 1; }
    int64_t num_queries() const { return std::max<int64_t>(2, (vocab_size - 1) / 3); }
    int64_t answer_base() const { return query_base() + num_queries(); }
    int64_t num_answers() const { return vocab_size - answer_base(); }

    Json to_json() const {
        Json j;
        j["vocab_size"] = vocab_size;
        j["seq_len"] = seq_len;
        j["prefix_len"] = prefix_len;
        j["feat_dim"] = feat_dim;
        j["num_train"] = num_train;
        j["num_eval"] = num_eval;
        j["finetune_fraction"] = finetune_fraction;
        j["calib_fraction"] = calib_fraction;
        j["num_buckets"] = num_buckets;
        j["noise_std"] = noise_std;
        j["seed"] = seed;
        return j;
    }

    static TaskSpec from_json(const Json& j) {
        TaskSpec s;
        try {
            s.vocab_size = j.at("vocab_size").get<int64_t>();
            s.seq_len = j.at("seq_len").get<int64_t>();
            s.prefix_len = j.at("prefix_len").get<int64_t>();
            s.feat_dim = j.at("feat_dim").get<int64_t>();
            s.num_train = j.at("num_train").get<int64_t>();
            s.num_eval = j.at("num_eval").get<int64_t>();
            s.finetune_fraction = j.value("finetune_fraction", 0.01);
            s.calib_fraction = j.value("calib_fraction", 0.10);
            s.num_buckets = j.value("num_buckets", int64_t(8));
            s.noise_std = j.value("noise_std", 0.05);
            s.seed = j.at("seed").get<uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("task spec: ") + e.what());
        }
        s.validate();
        return s;
    }
};

struct Sample {
    std::vector<double> prefix_feats;  // prefix_len × feat_dim, row-major
    std::vector<int64_t> tokens;       // text tokens
    std::vector<int64_t> targets;      // next-token labels, one per text position
    std::vector<uint8_t> loss_mask;    // true where the target is an answer
};

inline void hash_sample(Fnv1a& h, const Sample& s) {
    h.update_u64(s.prefix_feats.size());
    h.update(s.prefix_feats.data(), s.prefix_feats.size() * sizeof(double));
    h.update_u64(s.tokens.size());
    h.update(s.tokens.data(), s.tokens.size() * sizeof(int64_t));
    h.update(s.targets.data(), s.targets.size() * sizeof(int64_t));
    h.update(s.loss_mask.data(), s.loss_mask.size());
}

struct Dataset {
    std::vector<Sample> samples;

    std::string fingerprint() const {
        Fnv1a h;
        h.update_u64(samples.size());
        for (const auto& s : samples) hash_sample(h, s);
        return h.hex();
    }
};

struct TaskBundle {
    TaskSpec spec;
    Dataset train, finetune, calib, eval;
};

// Expands a sample's text-aligned target/mask arrays to logit-row space:
// n_v prefix rows contribute nothing, then the text rows follow. Row
// n_v + t predicts text position t + 1.
inline std::vector<int64_t> row_targets(const Sample& s, int64_t n_v) {
    std::vector<int64_t> out(static_cast<size_t>(n_v), 0);
    out.insert(out.end(), s.targets.begin(), s.targets.end());
    return out;
}

inline std::vector<uint8_t> row_mask(const Sample& s, int64_t n_v) {
    std::vector<uint8_t> out(static_cast<size_t>(n_v), 0);
    out.insert(out.end(), s.loss_mask.begin(), s.loss_mask.end());
    return out;
}

class TaskGen {
public:
    explicit TaskGen(const TaskSpec& spec) : spec_(spec) {
        spec.validate();
        // Prototype prefixes: unit-variance rows, far apart relative to the
        // per-sample noise, so bucket decoding is unambiguous.
        Rng proto_rng(mix_seed(spec.seed, tag("prot")));
        const size_t pf = static_cast<size_t>(spec.prefix_len * spec.feat_dim);
        prototypes_.resize(static_cast<size_t>(spec.num_buckets));
        for (auto& p : prototypes_) {
            p.resize(pf);
            for (auto& x : p) x = proto_rng.normal();
        }
        // Answer table: one answer token per (bucket, query).
        Rng table_rng(mix_seed(spec.seed, tag("tabl")));
        table_.resize(static_cast<size_t>(spec.num_buckets * spec.num_queries()));
        for (auto& a : table_)
            a = spec.answer_base() + static_cast<int64_t>(table_rng.bounded(static_cast<uint64_t>(spec.num_answers())));
    }

    const TaskSpec& spec() const { return spec_; }

    // Deterministic function of (seed, index) alone.
    Sample make_sample(int64_t index) const {
        Rng rng(mix_seed(spec_.seed, tag("smpl"), static_cast<uint64_t>(index)));
        Sample s;
        const int64_t bucket = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(spec_.num_buckets)));
        s.prefix_feats = prototypes_[static_cast<size_t>(bucket)];
        for (auto& x : s.prefix_feats) x += spec_.noise_std * rng.normal();

        const int64_t pairs = spec_.seq_len / 2;
        s.tokens.reserve(static_cast<size_t>(spec_.seq_len));
        for (int64_t p = 0; p < pairs; p++) {
            const int64_t q =
                spec_.query_base() + static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(spec_.num_queries())));
            s.tokens.push_back(q);
            s.tokens.push_back(answer_for(bucket, q));
        }
        s.targets.assign(static_cast<size_t>(spec_.seq_len), 0);
        s.loss_mask.assign(static_cast<size_t>(spec_.seq_len), 0);
        for (int64_t t = 0; t + 1 < spec_.seq_len; t++) {
            s.targets[static_cast<size_t>(t)] = s.tokens[static_cast<size_t>(t + 1)];
            s.loss_mask[static_cast<size_t>(t)] = (t % 2 == 0) ? 1 : 0;  // query → answer positions
        }
        return s;
    }

    // Rule inversion: decode the bucket by nearest prototype, then look the
    // answer up. Exact on generated data (noise ≪ prototype separation).
    int64_t decode_bucket(const std::vector<double>& prefix_feats) const {
        int64_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t b = 0; b < prototypes_.size(); b++) {
            double d = 0.0;
            for (size_t i = 0; i < prefix_feats.size(); i++) {
                const double diff = prefix_feats[i] - prototypes_[b][i];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = static_cast<int64_t>(b);
            }
        }
        return best;
    }

    int64_t oracle_answer(const std::vector<double>& prefix_feats, int64_t query) const {
        return answer_for(decode_bucket(prefix_feats), query);
    }

    TaskBundle generate() const {
        TaskBundle out;
        out.spec = spec_;
        out.train.samples.reserve(static_cast<size_t>(spec_.num_train));
        for (int64_t i = 0; i < spec_.num_train; i++) out.train.samples.push_back(make_sample(i));
        // eval indices sit beyond the train range: disjoint by construction
        out.eval.samples.reserve(static_cast<size_t>(spec_.num_eval));
        for (int64_t i = 0; i < spec_.num_eval; i++)
            out.eval.samples.push_back(make_sample(spec_.num_train + i));

        const int64_t n_ft =
            static_cast<int64_t>(std::ceil(static_cast<double>(spec_.num_train) * spec_.finetune_fraction));
        const auto ft_idx = seeded_subset(spec_.num_train, n_ft, mix_seed(spec_.seed, tag("ftsb")));
        for (int64_t i : ft_idx) out.finetune.samples.push_back(out.train.samples[static_cast<size_t>(i)]);

        const int64_t n_cal =
            static_cast<int64_t>(std::ceil(static_cast<double>(n_ft) * spec_.calib_fraction));
        const auto cal_idx = seeded_subset(n_ft, n_cal, mix_seed(spec_.seed, tag("calb")));
        for (int64_t i : cal_idx) out.calib.samples.push_back(out.finetune.samples[static_cast<size_t>(i)]);
        return out;
    }

    Json describe() const {
        const TaskBundle bundle = generate();
        Json card;
        card["rule_family"] = "prefix_bucket_query_table";
        card["spec"] = spec_.to_json();
        card["num_queries"] = spec_.num_queries();
        card["num_answers"] = spec_.num_answers();
        card["query_base"] = spec_.query_base();
        card["answer_base"] = spec_.answer_base();
        Json sizes, prints;
        sizes["train"] = bundle.train.samples.size();
        sizes["finetune"] = bundle.finetune.samples.size();
        sizes["calib"] = bundle.calib.samples.size();
        sizes["eval"] = bundle.eval.samples.size();
        prints["train"] = bundle.train.fingerprint();
        prints["finetune"] = bundle.finetune.fingerprint();
        prints["calib"] = bundle.calib.fingerprint();
        prints["eval"] = bundle.eval.fingerprint();
        card["split_sizes"] = sizes;
        card["split_fingerprints"] = prints;
        return card;
    }

private:
    static uint64_t tag(const char (&s)[5]) {
        return (uint64_t(uint8_t(s[0])) << 24) | (uint64_t(uint8_t(s[1])) << 16) |
               (uint64_t(uint8_t(s[2])) << 8) | uint64_t(uint8_t(s[3]));
    }

    int64_t answer_for(int64_t bucket, int64_t query) const {
        const int64_t qi = query - spec_.query_base();
        if (qi < 0 || qi >= spec_.num_queries())
            throw TokenOutOfRange("token " + std::to_string(query) + " is not a query");
        return table_[static_cast<size_t>(bucket * spec_.num_queries() + qi)];
    }

    TaskSpec spec_;
    std::vector<std::vector<double>> prototypes_;
    std::vector<int64_t> table_;
};

//
// JSON-lines on-disk cache: one header line carrying split name, spec, and
// fingerprint, then one line per sample.
//

inline void save_dataset(const Dataset& ds, const TaskSpec& spec, const std::string& split,
                         const std::string& path) {
    std::string out;
    Json header;
    header["split"] = split;
    header["spec"] = spec.to_json();
    header["num_samples"] = ds.samples.size();
    header["fingerprint"] = ds.fingerprint();
    out += header.dump();
    out += '\n';
    for (const auto& s : ds.samples) {
        Json line;
        line["prefix_feats"] = s.prefix_feats;
        line["tokens"] = s.tokens;
        line["targets"] = s.targets;
        line["loss_mask"] = s.loss_mask;
        out += line.dump();
        out += '\n';
    }
    write_file(path, out);
}

struct LoadedDataset {
    Dataset data;
    TaskSpec spec;
    std::string split;
};

inline LoadedDataset load_dataset(const std::string& path) {
    const std::string bytes = read_file(path);
    LoadedDataset out;
    size_t pos = 0;
    bool first = true;
    while (pos < bytes.size()) {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        const std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError("dataset line unparsable in " + path + ": " + e.what());
        }
        if (first) {
            first = false;
            try {
                out.split = j.at("split").get<std::string>();
                out.spec = TaskSpec::from_json(j.at("spec"));
                out.data.samples.reserve(j.at("num_samples").get<size_t>());
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError("dataset header in " + path + ": " + e.what());
            }
            continue;
        }
        Sample s;
        try {
            s.prefix_feats = j.at("prefix_feats").get<std::vector<double>>();
            s.tokens = j.at("tokens").get<std::vector<int64_t>>();
            s.targets = j.at("targets").get<std::vector<int64_t>>();
            s.loss_mask = j.at("loss_mask").get<std::vector<uint8_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("dataset sample in " + path + ": " + e.what());
        }
        out.data.samples.push_back(std::move(s));
    }
    if (first) throw SchemaError("dataset file has no header: " + path);
    return out;
}

}  // namespace interlace
