#pragma once
// Experiment orchestration: the configuration file shared by the pipeline
// subcommands, each stage as a library function that writes its interface
// artifacts, and the resumable strategy × ratio × seed grid behind `ablate`
// and `report`.
//
// Determinism contract: every artifact a stage writes is a pure function of
// its inputs and seeds, except measured wall-clock values. Timing lives in
// latency reports (whose numbers are the measurement itself) and in
// `.meta.json` sidecars; nothing else may contain time.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interlace/bench.hpp"
#include "interlace/checkpoint.hpp"
#include "interlace/planner.hpp"
#include "interlace/similarity.hpp"
#include "interlace/surgery.hpp"
#include "interlace/taskgen.hpp"
#include "interlace/trainer.hpp"

namespace interlace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    int64_t version = 1;
    TaskSpec task;
    ModelConfig model;
    TrainConfig pretrain_cfg;  // full-parameter training of the dense model
    TrainConfig finetune_cfg;  // recovery regime after surgery
    std::vector<Strategy> strategies;
    std::vector<double> ratios;
    std::vector<uint64_t> seeds;
    std::string data_dir;  // where `gen` wrote (or `ablate` writes) the datasets
    std::string out_dir;   // artifact root for the grid

    void validate() const {
        task.validate();
        model.validate();
        pretrain_cfg.validate();
        finetune_cfg.validate();
        if (model.vocab_size != task.vocab_size)
            throw InvalidConfig("model vocab " + std::to_string(model.vocab_size) +
                                " != task vocab " + std::to_string(task.vocab_size));
        if (model.prefix_len != task.prefix_len)
            throw InvalidConfig("model prefix_len != task prefix_len");
        if (model.feat_dim != task.feat_dim)
            throw InvalidConfig("model feat_dim != task feat_dim");
        if (model.max_seq < task.prefix_len + task.seq_len)
            throw InvalidConfig("model max_seq " + std::to_string(model.max_seq) +
                                " cannot hold prefix + text of " +
                                std::to_string(task.prefix_len + task.seq_len));
        if (strategies.empty()) throw InvalidConfig("experiment: no strategies");
        if (ratios.empty()) throw InvalidConfig("experiment: no ratios");
        if (seeds.empty()) throw InvalidConfig("experiment: no seeds");
        for (double r : ratios)
            if (!(r > 0.0 && r < 1.0))
                throw InvalidConfig("experiment ratio " + std::to_string(r) + " outside (0, 1)");
        if (data_dir.empty()) throw InvalidConfig("experiment: empty data_dir");
        if (out_dir.empty()) throw InvalidConfig("experiment: empty out_dir");
    }

    Json to_json() const {
        Json j;
        j["version"] = version;
        j["task"] = task.to_json();
        j["model"] = model.to_json();
        j["pretrain"] = pretrain_cfg.to_json();
        j["finetune"] = finetune_cfg.to_json();
        Json names = Json::array();
        for (Strategy s : strategies) names.push_back(strategy_name(s));
        j["strategies"] = names;
        j["ratios"] = ratios;
        j["seeds"] = seeds;
        j["data_dir"] = data_dir;
        j["out_dir"] = out_dir;
        return j;
    }

    static ExperimentConfig from_json(const Json& j) {
        ExperimentConfig c;
        try {
            c.version = j.at("version").get<int64_t>();
            if (c.version != 1)
                throw VersionMismatch("experiment config version " + std::to_string(c.version));
            c.task = TaskSpec::from_json(j.at("task"));
            c.model = ModelConfig::from_json(j.at("model"));
            c.pretrain_cfg = TrainConfig::from_json(j.at("pretrain"));
            c.finetune_cfg = TrainConfig::from_json(j.at("finetune"));
            for (const auto& name : j.at("strategies"))
                c.strategies.push_back(strategy_from_name(name.get<std::string>()));
            c.ratios = j.at("ratios").get<std::vector<double>>();
            c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
            c.data_dir = j.at("data_dir").get<std::string>();
            c.out_dir = j.at("out_dir").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("experiment config: ") + e.what());
        }
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        return from_json(read_json_file(path));
    }
};

// ---------------------------------------------------------------------------
// Paths and sidecars
// ---------------------------------------------------------------------------

// INTERLACE_OUT, when set, is the root under which relative output paths are
// placed. Absolute paths and inputs are never rewritten.
inline std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("INTERLACE_OUT");
    if (!root || !*root) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(root) / p).string();
}

inline void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// Timestamps and wall time are quarantined here so primary artifacts stay
// byte-identical across reruns.
inline void write_meta(const std::string& artifact_path, double wall_seconds) {
    Json meta;
    meta["wall_seconds"] = wall_seconds;
    meta["written_unix"] = static_cast<int64_t>(::time(nullptr));
    write_file(artifact_path + ".meta.json", meta.dump(2) + "\n");
}

// write_json_file from common plus parent-directory creation.
inline void write_json_mkdir(const std::string& path, const Json& j) {
    ensure_parent_dir(path);
    write_json_file(path, j);
}

// Replace a trailing .json with .csv, otherwise append .csv.
inline std::string csv_sibling(const std::string& json_path) {
    const std::string suffix = ".json";
    if (json_path.size() > suffix.size() &&
        json_path.compare(json_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return json_path.substr(0, json_path.size() - suffix.size()) + ".csv";
    return json_path + ".csv";
}

inline std::string split_path(const std::string& data_dir, const std::string& split) {
    return (fs::path(data_dir) / (split + ".jsonl")).string();
}

// Load one split and fail loudly if it was generated from a different task.
inline Dataset load_split_checked(const std::string& data_dir, const std::string& split,
                                  const TaskSpec& expect) {
    LoadedDataset loaded = load_dataset(split_path(data_dir, split));
    if (loaded.spec.to_json() != expect.to_json())
        throw SchemaError("split '" + split + "' in " + data_dir +
                          " was generated from a different task spec");
    return std::move(loaded.data);
}

// ---------------------------------------------------------------------------
// Pipeline stages (one per subcommand)
// ---------------------------------------------------------------------------

inline void save_bundle(const TaskBundle& bundle, const std::string& out_dir) {
    fs::create_directories(out_dir);
    save_dataset(bundle.train, bundle.spec, "train", split_path(out_dir, "train"));
    save_dataset(bundle.finetune, bundle.spec, "finetune", split_path(out_dir, "finetune"));
    save_dataset(bundle.calib, bundle.spec, "calib", split_path(out_dir, "calib"));
    save_dataset(bundle.eval, bundle.spec, "eval", split_path(out_dir, "eval"));
    write_json_mkdir((fs::path(out_dir) / "spec.json").string(), bundle.spec.to_json());
}

inline void cmd_gen(const std::string& spec_path, const std::string& out_dir_arg) {
    const std::string out_dir = resolve_out(out_dir_arg);
    const double t0 = now_seconds();
    const TaskSpec spec = TaskSpec::from_json(read_json_file(spec_path));
    save_bundle(TaskGen(spec).generate(), out_dir);
    write_meta((fs::path(out_dir) / "gen").string(), now_seconds() - t0);
}

inline void write_train_artifacts(const TransformerModel& model, const TrainLog& log,
                                  const std::string& out_ckpt) {
    ensure_parent_dir(out_ckpt);
    save_model(model, out_ckpt);
    write_file(out_ckpt + ".log.jsonl", log.to_jsonl());
    Json summary = log.summary();
    summary["checkpoint"] = fs::path(out_ckpt).filename().string();
    write_file(out_ckpt + ".summary.json", summary.dump(2) + "\n");
    write_meta(out_ckpt, log.wall_seconds);
}

inline void cmd_pretrain(const std::string& config_path, const std::string& out_ckpt_arg) {
    const std::string out_ckpt = resolve_out(out_ckpt_arg);
    const ExperimentConfig cfg = ExperimentConfig::load(config_path);
    const Dataset train = load_split_checked(cfg.data_dir, "train", cfg.task);
    TransformerModel model = TransformerModel::init(cfg.model);
    const TrainLog log = pretrain(model, train, cfg.pretrain_cfg);
    write_train_artifacts(model, log, out_ckpt);
}

inline void cmd_calibrate(const std::string& model_path, const std::string& data_dir,
                          const std::string& out_arg) {
    const std::string out = resolve_out(out_arg);
    const double t0 = now_seconds();
    const TransformerModel model = load_model(model_path);
    const LoadedDataset calib = load_dataset(split_path(data_dir, "calib"));
    const SimilarityReport report = score(model, calib.data);
    write_json_mkdir(out, report.to_json());
    write_meta(out, now_seconds() - t0);
}

inline void cmd_plan(const std::string& report_path, double ratio, const std::string& strategy_str,
                     std::optional<uint64_t> seed, const std::string& out_arg) {
    const std::string out = resolve_out(out_arg);
    const Strategy strategy = strategy_from_name(strategy_str);
    const SimilarityReport report = SimilarityReport::from_json(read_json_file(report_path));
    const PruningPlan plan = plan_with_strategy(strategy, report, ratio, seed);
    write_json_mkdir(out, plan.to_json());
    write_file(csv_sibling(out), plan.to_csv(report));
}

inline void cmd_prune(const std::string& model_path, const std::string& plan_path,
                      const std::string& out_ckpt_arg) {
    const std::string out_ckpt = resolve_out(out_ckpt_arg);
    const TransformerModel model = load_model(model_path);
    const PruningPlan plan = PruningPlan::from_json(read_json_file(plan_path));
    const SurgeryResult result = apply_plan(model, plan);
    ensure_parent_dir(out_ckpt);
    save_model(result.model, out_ckpt);
    write_json_mkdir(out_ckpt + ".record.json", result.record.to_json());
}

inline void cmd_finetune(const std::string& model_path, const std::string& plan_path,
                         const std::string& data_dir, const std::string& config_path,
                         const std::string& out_ckpt_arg) {
    const std::string out_ckpt = resolve_out(out_ckpt_arg);
    const ExperimentConfig cfg = ExperimentConfig::load(config_path);
    TransformerModel model = load_model(model_path);
    const PruningPlan plan = PruningPlan::from_json(read_json_file(plan_path));
    const SurgeryRecord record = record_from_plan(plan);
    if (static_cast<int64_t>(record.mask.size()) != model.num_layers())
        throw PlanModelMismatch("plan leaves " + std::to_string(record.mask.size()) +
                                " layers but checkpoint has " +
                                std::to_string(model.num_layers()));
    const Dataset data = load_split_checked(data_dir, "finetune", cfg.task);
    const TrainLog log = finetune(model, record, data, cfg.finetune_cfg);
    write_train_artifacts(model, log, out_ckpt);
}

inline void cmd_eval(const std::string& model_path, const std::string& data_dir,
                     const std::string& out_arg) {
    const std::string out = resolve_out(out_arg);
    const double t0 = now_seconds();
    const TransformerModel model = load_model(model_path);
    const LoadedDataset eval_set = load_dataset(split_path(data_dir, "eval"));
    write_json_mkdir(out, evaluate(model, eval_set.data).to_json());
    write_meta(out, now_seconds() - t0);
}

inline void cmd_bench(const std::string& model_path, const std::string& ref_path, int64_t seq_len,
                      int64_t trials, const std::string& out_arg) {
    const std::string out = resolve_out(out_arg);
    const TransformerModel subject = load_model(model_path);
    const TransformerModel reference = load_model(ref_path);
    const PairedBench paired = ttft_paired(reference, subject, seq_len, trials);
    write_json_mkdir(out, paired.to_json());
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

// Sub-seed derivation: each grid seed deterministically fans out into the
// stage seeds so that cells never share randomness across purposes.
inline constexpr uint64_t kSeedTagInit = 0x696e6974;  // model initialization
inline constexpr uint64_t kSeedTagPre = 0x70726574;   // pretraining shuffle
inline constexpr uint64_t kSeedTagFt = 0x66747570;    // recovery shuffle

struct CellResult {
    std::string strategy;
    double ratio = 0.0;
    uint64_t seed = 0;
    double accuracy = 0.0;
    double baseline_accuracy = 0.0;
    double relative_performance = 0.0;
    double ttft_speedup = 0.0;
    std::string notes;

    Json to_json() const {
        Json j;
        j["strategy"] = strategy;
        j["ratio"] = ratio;
        j["seed"] = seed;
        j["accuracy"] = accuracy;
        j["baseline_accuracy"] = baseline_accuracy;
        j["relative_performance"] = relative_performance;
        j["ttft_speedup"] = ttft_speedup;
        j["notes"] = notes;
        return j;
    }

    static CellResult from_json(const Json& j) {
        CellResult c;
        try {
            c.strategy = j.at("strategy").get<std::string>();
            c.ratio = j.at("ratio").get<double>();
            c.seed = j.at("seed").get<uint64_t>();
            c.accuracy = j.at("accuracy").get<double>();
            c.baseline_accuracy = j.at("baseline_accuracy").get<double>();
            c.relative_performance = j.at("relative_performance").get<double>();
            c.ttft_speedup = j.at("ttft_speedup").get<double>();
            c.notes = j.at("notes").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("cell result: ") + e.what());
        }
        return c;
    }
};

namespace detail {

inline std::string cell_dir_name(Strategy strategy, double ratio, uint64_t seed) {
    return strategy_name(strategy) + "_r" + Json(ratio).dump() + "_s" + std::to_string(seed);
}

// Everything a cell's outputs depend on; a stored cell whose fingerprint
// still matches is skipped on resume.
inline std::string cell_fingerprint(const ExperimentConfig& cfg, const std::string& dense_fp,
                                    const std::string& report_fp, Strategy strategy, double ratio,
                                    uint64_t seed, const std::string& finetune_data_fp,
                                    const std::string& eval_data_fp) {
    Fnv1a h;
    h.update_str(dense_fp);
    h.update_str(report_fp);
    h.update_str(strategy_name(strategy));
    h.update_f64(ratio);
    h.update_u64(seed);
    h.update_str(cfg.finetune_cfg.to_json().dump());
    h.update_str(finetune_data_fp);
    h.update_str(eval_data_fp);
    return h.hex();
}

inline std::string report_fingerprint_of(const SimilarityReport& r) {
    Fnv1a h;
    h.update_i64(r.num_layers);
    h.update_i64(r.tokens_seen);
    h.update_f64s(r.layer_scores);
    h.update_f64s(r.triplet_scores);
    h.update_str(r.calib_fingerprint);
    return h.hex();
}

}  // namespace detail

// CSV with one row per cell, all grid axes explicit. Sidecar to the
// aggregated combined.csv.
inline std::string cells_csv(const std::vector<CellResult>& cells) {
    std::string out = "strategy,ratio,seed,accuracy,relative_performance,ttft_speedup\n";
    for (const CellResult& c : cells) {
        out += c.strategy;
        out += ',';
        out += Json(c.ratio).dump();
        out += ',';
        out += std::to_string(c.seed);
        out += ',';
        out += Json(c.accuracy).dump();
        out += ',';
        out += Json(c.relative_performance).dump();
        out += ',';
        out += Json(c.ttft_speedup).dump();
        out += '\n';
    }
    return out;
}

// Aggregate cells into one combined row per (strategy, ratio), averaging
// over seeds, in the given axis order.
inline std::vector<CombinedRow> aggregate_cells(const std::vector<CellResult>& cells,
                                                const std::vector<Strategy>& strategies,
                                                const std::vector<double>& ratios) {
    std::vector<CombinedRow> rows;
    for (Strategy s : strategies) {
        for (double r : ratios) {
            KahanSum acc, rp, spd;
            int64_t n = 0;
            for (const CellResult& c : cells) {
                if (c.strategy != strategy_name(s) || c.ratio != r) continue;
                acc.add(c.accuracy);
                rp.add(c.relative_performance);
                spd.add(c.ttft_speedup);
                n++;
            }
            if (n == 0) continue;
            CombinedRow row;
            row.strategy = strategy_name(s);
            row.ratio = r;
            row.accuracy = acc.value() / static_cast<double>(n);
            row.relative_performance = rp.value() / static_cast<double>(n);
            row.ttft_speedup = spd.value() / static_cast<double>(n);
            rows.push_back(row);
        }
    }
    return rows;
}

// Generate the dataset bundle unless it is already on disk; returns the
// resolved data directory.
inline std::string ensure_datasets(const ExperimentConfig& cfg) {
    const std::string data_dir = resolve_out(cfg.data_dir);
    if (!fs::exists(split_path(data_dir, "train")))
        save_bundle(TaskGen(cfg.task).generate(), data_dir);
    return data_dir;
}

// Dense checkpoint for one grid seed, cached at out_dir/dense/seed_<s>.ckpt.
// The grid seed fans out into the stage seeds here, so any caller that wants
// "the dense model for seed s" gets the identical artifact.
inline std::string ensure_dense_checkpoint(const ExperimentConfig& cfg, const std::string& out_dir,
                                           uint64_t seed, const Dataset& train) {
    const std::string dense_path =
        (fs::path(out_dir) / "dense" / ("seed_" + std::to_string(seed) + ".ckpt")).string();
    if (!fs::exists(dense_path)) {
        ModelConfig mc = cfg.model;
        mc.seed = mix_seed(seed, kSeedTagInit);
        TransformerModel dense = TransformerModel::init(mc);
        TrainConfig pre = cfg.pretrain_cfg;
        pre.seed = mix_seed(seed, kSeedTagPre);
        const TrainLog log = pretrain(dense, train, pre);
        write_train_artifacts(dense, log, dense_path);
    }
    return dense_path;
}

// Baseline evaluation for a dense checkpoint, cached next to it.
inline EvalReport ensure_dense_eval(const std::string& dense_path, const TransformerModel& dense,
                                    const Dataset& eval_set) {
    const std::string base_eval_path = dense_path + ".eval.json";
    if (!fs::exists(base_eval_path))
        write_json_mkdir(base_eval_path, evaluate(dense, eval_set).to_json());
    return EvalReport::from_json(read_json_file(base_eval_path));
}

// Run the full strategy × ratio × seed grid. Resumable: the datasets, the
// per-seed dense checkpoints and calibration reports, and every finished
// cell are reused when their fingerprints match, so a rerun over a finished
// directory only reassembles the CSVs (byte-identically).
inline void cmd_ablate(const std::string& config_path, const std::string& out_dir_arg) {
    const double t0 = now_seconds();
    const ExperimentConfig cfg = ExperimentConfig::load(config_path);
    const std::string out_dir = resolve_out(out_dir_arg.empty() ? cfg.out_dir : out_dir_arg);
    fs::create_directories(out_dir);

    // Datasets: generate once, then reuse.
    const std::string data_dir = ensure_datasets(cfg);
    const Dataset train = load_split_checked(data_dir, "train", cfg.task);
    const Dataset ft_data = load_split_checked(data_dir, "finetune", cfg.task);
    const Dataset calib = load_split_checked(data_dir, "calib", cfg.task);
    const Dataset eval_set = load_split_checked(data_dir, "eval", cfg.task);

    const int64_t bench_trials = 20;
    std::vector<CellResult> cells;

    for (uint64_t seed : cfg.seeds) {
        // Dense checkpoint, cached per seed: the expensive stage.
        const std::string dense_path = ensure_dense_checkpoint(cfg, out_dir, seed, train);
        const TransformerModel dense = load_model(dense_path);
        const std::string dense_fp = model_fingerprint(dense);

        // Baseline evaluation, cached.
        const EvalReport baseline = ensure_dense_eval(dense_path, dense, eval_set);

        // Calibration report, cached.
        const std::string report_path =
            (fs::path(out_dir) / "calib" / ("seed_" + std::to_string(seed) + ".report.json"))
                .string();
        if (!fs::exists(report_path)) {
            const double c0 = now_seconds();
            write_json_mkdir(report_path, score(dense, calib).to_json());
            write_meta(report_path, now_seconds() - c0);
        }
        const SimilarityReport report = SimilarityReport::from_json(read_json_file(report_path));
        const std::string report_fp = detail::report_fingerprint_of(report);

        for (Strategy strategy : cfg.strategies) {
            for (double ratio : cfg.ratios) {
                const fs::path cell_dir =
                    fs::path(out_dir) / "cells" / detail::cell_dir_name(strategy, ratio, seed);
                const std::string fingerprint = detail::cell_fingerprint(
                    cfg, dense_fp, report_fp, strategy, ratio, seed, ft_data.fingerprint(),
                    eval_set.fingerprint());

                const std::string done_path = (cell_dir / "done.json").string();
                if (fs::exists(done_path)) {
                    const Json done = read_json_file(done_path);
                    if (done.value("fingerprint", "") == fingerprint) {
                        cells.push_back(CellResult::from_json(read_json_file((cell_dir / "cell.json").string())));
                        continue;
                    }
                }
                fs::create_directories(cell_dir);

                // plan → prune → recover → evaluate → time.
                const std::optional<uint64_t> plan_seed =
                    strategy == Strategy::random ? std::optional<uint64_t>(seed) : std::nullopt;
                const PruningPlan plan = plan_with_strategy(strategy, report, ratio, plan_seed);
                write_json_mkdir((cell_dir / "plan.json").string(), plan.to_json());
                write_file((cell_dir / "plan.csv").string(), plan.to_csv(report));

                SurgeryResult pruned = apply_plan(dense, plan);
                write_json_mkdir((cell_dir / "record.json").string(), pruned.record.to_json());

                TrainConfig ft = cfg.finetune_cfg;
                ft.seed = mix_seed(seed, kSeedTagFt);
                const TrainLog log = finetune(pruned.model, pruned.record, ft_data, ft);
                write_train_artifacts(pruned.model, log, (cell_dir / "tuned.ckpt").string());

                const EvalReport eval_report = evaluate(pruned.model, eval_set);
                write_json_mkdir((cell_dir / "eval.json").string(), eval_report.to_json());

                // Timing discipline: trials are interleaved (ttft_paired) so
                // both models see the same machine conditions, and both
                // checkpoints are reloaded fresh so allocation history from
                // training does not skew memory placement for one side.
                const TransformerModel bench_ref = load_model(dense_path);
                const TransformerModel bench_sub =
                    load_model((cell_dir / "tuned.ckpt").string());
                const PairedBench cell_bench =
                    ttft_paired(bench_ref, bench_sub, cfg.task.seq_len, bench_trials);
                write_json_mkdir((cell_dir / "bench.json").string(), cell_bench.to_json());

                CellResult cell;
                cell.strategy = strategy_name(strategy);
                cell.ratio = ratio;
                cell.seed = seed;
                cell.accuracy = eval_report.accuracy;
                cell.baseline_accuracy = baseline.accuracy;
                cell.relative_performance = relative_performance(eval_report, baseline);
                cell.ttft_speedup = cell_bench.speedup;
                std::string joined;
                for (const std::string& n : plan.notes) {
                    if (!joined.empty()) joined += "; ";
                    joined += n;
                }
                cell.notes = joined;
                write_json_mkdir((cell_dir / "cell.json").string(), cell.to_json());

                Json done;
                done["fingerprint"] = fingerprint;
                write_json_mkdir(done_path, done);  // last: marks the cell complete
                cells.push_back(cell);
            }
        }
    }

    // Reassemble the CSVs from cell results on every run (including resumes).
    std::vector<CellResult> ordered;
    for (Strategy s : cfg.strategies)
        for (double r : cfg.ratios)
            for (uint64_t seed : cfg.seeds)
                for (const CellResult& c : cells)
                    if (c.strategy == strategy_name(s) && c.ratio == r && c.seed == seed)
                        ordered.push_back(c);
    write_file((fs::path(out_dir) / "cells.csv").string(), cells_csv(ordered));
    write_file((fs::path(out_dir) / "combined.csv").string(),
               combined_csv(aggregate_cells(ordered, cfg.strategies, cfg.ratios)));
    write_meta((fs::path(out_dir) / "ablate").string(), now_seconds() - t0);
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

namespace detail {

// Cells sorted by (strategy, ratio, seed) with no config available: the
// report stage sees only the artifact directory.
inline std::vector<CellResult> load_cells(const std::string& in_dir) {
    std::vector<CellResult> cells;
    const fs::path root = fs::path(in_dir) / "cells";
    if (!fs::exists(root)) throw IoError("no cells/ directory under " + in_dir);
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "cell.json"))
            dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) cells.push_back(CellResult::from_json(read_json_file(d + "/cell.json")));
    std::stable_sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
        if (a.strategy != b.strategy) return a.strategy < b.strategy;
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        return a.seed < b.seed;
    });
    return cells;
}

inline std::vector<std::pair<uint64_t, SimilarityReport>> load_calib_reports(
    const std::string& in_dir) {
    std::vector<std::pair<uint64_t, SimilarityReport>> out;
    const fs::path root = fs::path(in_dir) / "calib";
    if (!fs::exists(root)) return out;
    for (const auto& entry : fs::directory_iterator(root)) {
        const std::string name = entry.path().filename().string();
        // seed_<n>.report.json
        if (name.rfind("seed_", 0) != 0) continue;
        const size_t dot = name.find('.');
        if (dot == std::string::npos || name.substr(dot) != ".report.json") continue;
        out.push_back({std::stoull(name.substr(5, dot - 5)),
                       SimilarityReport::from_json(read_json_file(entry.path().string()))});
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

}  // namespace detail

// Emit analysis tables from a finished grid directory: the per-layer and
// per-triplet similarity profiles, accuracy and latency summaries, and the
// strategy comparison normalized so the flagship selector reads 100.
inline void cmd_report(const std::string& in_dir, const std::string& out_dir_arg) {
    const std::string out_dir = resolve_out(out_dir_arg);
    const double t0 = now_seconds();
    fs::create_directories(out_dir);

    const auto reports = detail::load_calib_reports(in_dir);
    std::string layers_csv = "seed,layer,s_layer\n";
    std::string triplets_csv = "seed,start_layer,s_triplet\n";
    for (const auto& [seed, rep] : reports) {
        for (size_t l = 0; l < rep.layer_scores.size(); l++) {
            layers_csv += std::to_string(seed) + "," + std::to_string(l + 1) + "," +
                          Json(rep.layer_scores[l]).dump() + "\n";
        }
        for (size_t i = 0; i < rep.triplet_scores.size(); i++) {
            triplets_csv += std::to_string(seed) + "," + std::to_string(i + 1) + "," +
                            Json(rep.triplet_scores[i]).dump() + "\n";
        }
    }
    write_file((fs::path(out_dir) / "similarity_layers.csv").string(), layers_csv);
    write_file((fs::path(out_dir) / "similarity_triplets.csv").string(), triplets_csv);

    const std::vector<CellResult> cells = detail::load_cells(in_dir);

    // Distinct (strategy, ratio) groups in sorted order.
    std::vector<std::string> strategies;
    std::vector<double> ratios;
    for (const CellResult& c : cells) {
        if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end())
            strategies.push_back(c.strategy);
        if (std::find(ratios.begin(), ratios.end(), c.ratio) == ratios.end())
            ratios.push_back(c.ratio);
    }
    std::sort(strategies.begin(), strategies.end());
    std::sort(ratios.begin(), ratios.end());

    struct Group {
        double accuracy = 0, rp = 0, speedup = 0;
        int64_t n = 0;
    };
    std::map<std::pair<std::string, double>, Group> groups;
    for (const CellResult& c : cells) {
        Group& g = groups[{c.strategy, c.ratio}];
        g.accuracy += c.accuracy;
        g.rp += c.relative_performance;
        g.speedup += c.ttft_speedup;
        g.n++;
    }
    for (auto& [key, g] : groups) {
        g.accuracy /= static_cast<double>(g.n);
        g.rp /= static_cast<double>(g.n);
        g.speedup /= static_cast<double>(g.n);
    }

    std::string acc_csv = "strategy,ratio,mean_accuracy,mean_relative_performance,seeds\n";
    std::string ttft_csv = "strategy,ratio,mean_ttft_speedup,seeds\n";
    for (const auto& s : strategies) {
        for (double r : ratios) {
            const auto it = groups.find({s, r});
            if (it == groups.end()) continue;
            acc_csv += s + "," + Json(r).dump() + "," + Json(it->second.accuracy).dump() + "," +
                       Json(it->second.rp).dump() + "," + std::to_string(it->second.n) + "\n";
            ttft_csv += s + "," + Json(r).dump() + "," + Json(it->second.speedup).dump() + "," +
                        std::to_string(it->second.n) + "\n";
        }
    }
    write_file((fs::path(out_dir) / "accuracy.csv").string(), acc_csv);
    write_file((fs::path(out_dir) / "ttft.csv").string(), ttft_csv);

    // Strategy comparison per ratio, normalized to the flagship selector.
    std::string cmp_csv = "ratio,strategy,mean_relative_performance,rp_vs_interlace\n";
    for (double r : ratios) {
        const auto flag = groups.find({strategy_name(Strategy::interlace), r});
        for (const auto& s : strategies) {
            const auto it = groups.find({s, r});
            if (it == groups.end()) continue;
            std::string vs;
            if (flag != groups.end() && flag->second.rp > 0.0)
                vs = Json(100.0 * it->second.rp / flag->second.rp).dump();
            cmp_csv +=
                Json(r).dump() + "," + s + "," + Json(it->second.rp).dump() + "," + vs + "\n";
        }
    }
    write_file((fs::path(out_dir) / "strategy_comparison.csv").string(), cmp_csv);
    write_meta((fs::path(out_dir) / "report").string(), now_seconds() - t0);
}

}  // namespace interlace
