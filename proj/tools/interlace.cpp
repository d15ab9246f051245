// interlace — pipeline driver.
//
// Subcommands cover the full flow: gen → pretrain → calibrate → plan →
// prune → finetune → eval → bench, plus the ablate grid runner and the
// report table emitter. Exit codes: 0 success, 1 runtime failure, 2 usage
// error. Failures print one machine-readable JSON object to stderr.
// The INTERLACE_OUT environment variable re-roots relative output paths.

#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "interlace/experiment.hpp"

namespace {

void print_error(const std::string& kind, const std::string& message) {
    interlace::Json j;
    j["error"] = kind;
    j["message"] = message;
    fprintf(stderr, "%s\n", j.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interlace: layer-pruning laboratory pipeline"};
    app.require_subcommand(1);

    // gen
    std::string gen_spec, gen_out;
    CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic task datasets");
    gen->add_option("--spec", gen_spec, "Task spec JSON file")->required();
    gen->add_option("--out", gen_out, "Output directory for the dataset splits")->required();

    // pretrain
    std::string pre_config, pre_out;
    CLI::App* pre = app.add_subcommand("pretrain", "Train the dense model from scratch");
    pre->add_option("--config", pre_config, "Experiment config JSON file")->required();
    pre->add_option("--out", pre_out, "Output checkpoint path")->required();

    // calibrate
    std::string cal_model, cal_data, cal_out;
    CLI::App* cal = app.add_subcommand("calibrate", "Score layer/triplet redundancy on the calibration split");
    cal->add_option("--model", cal_model, "Model checkpoint")->required();
    cal->add_option("--data", cal_data, "Dataset directory (uses calib.jsonl)")->required();
    cal->add_option("--out", cal_out, "Output report JSON path")->required();

    // plan
    std::string plan_report, plan_strategy, plan_out;
    double plan_ratio = 0.0;
    std::optional<uint64_t> plan_seed;
    CLI::App* plan = app.add_subcommand("plan", "Select drop/tune/freeze layers from a redundancy report");
    plan->add_option("--report", plan_report, "Redundancy report JSON")->required();
    plan->add_option("--ratio", plan_ratio, "Fraction of layers to drop, in (0,1)")->required();
    plan->add_option("--strategy", plan_strategy,
                     "One of: interlace, consecutive, random, interlace_oa, interlace_tn, dense_ft")
        ->required();
    plan->add_option("--seed", plan_seed, "Selection seed (required for --strategy random)");
    plan->add_option("--out", plan_out, "Output plan JSON path")->required();

    // prune
    std::string prune_model, prune_plan, prune_out;
    CLI::App* prune = app.add_subcommand("prune", "Apply a plan: remove layers and renumber");
    prune->add_option("--model", prune_model, "Dense model checkpoint")->required();
    prune->add_option("--plan", prune_plan, "Plan JSON")->required();
    prune->add_option("--out", prune_out, "Output pruned checkpoint path")->required();

    // finetune
    std::string ft_model, ft_plan, ft_data, ft_config, ft_out;
    CLI::App* ft = app.add_subcommand("finetune", "Recovery-train the tune-set layers of a pruned model");
    ft->add_option("--model", ft_model, "Pruned model checkpoint")->required();
    ft->add_option("--plan", ft_plan, "Plan JSON the checkpoint was pruned with")->required();
    ft->add_option("--data", ft_data, "Dataset directory (uses finetune.jsonl)")->required();
    ft->add_option("--config", ft_config, "Experiment config JSON file")->required();
    ft->add_option("--out", ft_out, "Output checkpoint path")->required();

    // eval
    std::string ev_model, ev_data, ev_out;
    CLI::App* ev = app.add_subcommand("eval", "Greedy-decoding accuracy on the eval split");
    ev->add_option("--model", ev_model, "Model checkpoint")->required();
    ev->add_option("--data", ev_data, "Dataset directory (uses eval.jsonl)")->required();
    ev->add_option("--out", ev_out, "Output eval report JSON path")->required();

    // bench
    std::string be_model, be_ref, be_out;
    int64_t be_seq = 0, be_trials = 30;
    CLI::App* be = app.add_subcommand("bench", "Prefill latency of a model vs a reference");
    be->add_option("--model", be_model, "Subject model checkpoint")->required();
    be->add_option("--ref", be_ref, "Reference model checkpoint")->required();
    be->add_option("--seq-len", be_seq, "Text tokens per prefill trial")->required();
    be->add_option("--trials", be_trials, "Recorded trials (>= 10)")->required();
    be->add_option("--out", be_out, "Output bench JSON path")->required();

    // ablate
    std::string ab_config, ab_out;
    CLI::App* ab = app.add_subcommand("ablate", "Run the strategy x ratio x seed grid, resumably");
    ab->add_option("--config", ab_config, "Experiment config JSON file")->required();
    ab->add_option("--out", ab_out, "Grid output directory")->required();

    // report
    std::string rp_in, rp_out;
    CLI::App* rp = app.add_subcommand("report", "Emit analysis tables from a finished grid");
    rp->add_option("--in", rp_in, "Grid directory written by ablate")->required();
    rp->add_option("--out", rp_out, "Output directory for the CSV tables")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what());
        return 2;
    }

    try {
        if (*gen) {
            interlace::cmd_gen(gen_spec, gen_out);
        } else if (*pre) {
            interlace::cmd_pretrain(pre_config, pre_out);
        } else if (*cal) {
            interlace::cmd_calibrate(cal_model, cal_data, cal_out);
        } else if (*plan) {
            // Flag-level contract: random selection is meaningless without a
            // seed, so its absence is a usage error, not a runtime one.
            interlace::Strategy strategy;
            try {
                strategy = interlace::strategy_from_name(plan_strategy);
            } catch (const interlace::Error& e) {
                print_error("UsageError", e.what());
                return 2;
            }
            if (strategy == interlace::Strategy::random && !plan_seed.has_value()) {
                print_error("UsageError", "--strategy random requires --seed");
                return 2;
            }
            interlace::cmd_plan(plan_report, plan_ratio, plan_strategy, plan_seed, plan_out);
        } else if (*prune) {
            interlace::cmd_prune(prune_model, prune_plan, prune_out);
        } else if (*ft) {
            interlace::cmd_finetune(ft_model, ft_plan, ft_data, ft_config, ft_out);
        } else if (*ev) {
            interlace::cmd_eval(ev_model, ev_data, ev_out);
        } else if (*be) {
            interlace::cmd_bench(be_model, be_ref, be_seq, be_trials, be_out);
        } else if (*ab) {
            interlace::cmd_ablate(ab_config, ab_out);
        } else if (*rp) {
            interlace::cmd_report(rp_in, rp_out);
        }
    } catch (const interlace::Error& e) {
        print_error(e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("Unexpected", e.what());
        return 1;
    }
    return 0;
}
