// Acceptance gate: one self-contained check per release criterion, printed
// as a single PASS/FAIL line each. Checks that need an oracle carry an
// independent straight-line reference implementation in this file — written
// against the documented behavior, sharing no code with the library paths it
// judges. Run `acceptance all` or a subset like `acceptance c1 c4`.
//
// Exit status is 0 iff every requested criterion passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "interlace/bench.hpp"
#include "interlace/checkpoint.hpp"
#include "interlace/common.hpp"
#include "interlace/experiment.hpp"
#include "interlace/model.hpp"
#include "interlace/planner.hpp"
#include "interlace/similarity.hpp"
#include "interlace/surgery.hpp"
#include "interlace/taskgen.hpp"
#include "interlace/tensor.hpp"
#include "interlace/trainer.hpp"

namespace fs = std::filesystem;
using namespace interlace;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// C1 — greedy triplet selection against an independent reference
// ---------------------------------------------------------------------------
//
// The reference below re-derives the published selection rule from scratch:
// repeatedly take the highest-scored triplet start whose three layers are all
// unassigned (ties to the lowest start), freeze its third layer, drop
// whichever of the first two has the strictly higher single-layer score
// (ties drop the second), tune the other, stop at K = floor(ratio * L)
// drops; every unassigned layer freezes. It deliberately uses a repeated
// arg-max scan rather than a sort so the mechanics share nothing with the
// library's implementation.

struct RefOutcome {
    bool budget_refused = false;  // K < 1
    bool shortfall = false;       // fewer than K disjoint triplets available
    std::vector<int64_t> drop, tune, freeze;
};

RefOutcome reference_triplet_selection(int64_t L, const std::vector<double>& s_layer,
                                       const std::vector<double>& s_triplet, double ratio) {
    RefOutcome r;
    const int64_t K = static_cast<int64_t>(std::floor(ratio * static_cast<double>(L) + 1e-9));
    if (K < 1) {
        r.budget_refused = true;
        return r;
    }
    std::vector<int> state(static_cast<size_t>(L) + 1, 0);  // 0 free, 1 drop, 2 tune, 3 freeze
    for (int64_t placed = 0; placed < K; placed++) {
        int64_t best = -1;
        double best_score = 0.0;
        for (int64_t i = 1; i <= L - 2; i++) {
            if (state[static_cast<size_t>(i)] || state[static_cast<size_t>(i + 1)] ||
                state[static_cast<size_t>(i + 2)])
                continue;
            const double sc = s_triplet[static_cast<size_t>(i - 1)];
            if (best < 0 || sc > best_score) {
                best = i;
                best_score = sc;
            }
        }
        if (best < 0) {
            r.shortfall = true;
            return r;
        }
        int64_t dropped, tuned;
        if (s_layer[static_cast<size_t>(best - 1)] > s_layer[static_cast<size_t>(best)]) {
            dropped = best;
            tuned = best + 1;
        } else {
            dropped = best + 1;
            tuned = best;
        }
        state[static_cast<size_t>(dropped)] = 1;
        state[static_cast<size_t>(tuned)] = 2;
        state[static_cast<size_t>(best + 2)] = 3;
    }
    for (int64_t l = 1; l <= L; l++) {
        switch (state[static_cast<size_t>(l)]) {
            case 1: r.drop.push_back(l); break;
            case 2: r.tune.push_back(l); break;
            default: r.freeze.push_back(l); break;
        }
    }
    return r;
}

Outcome run_c1(const fs::path&) {
    const double t0 = now_s();
    const double ratios[] = {0.10, 0.15, 0.20, 0.25};
    Rng rng(0xacc1);
    int matches = 0, refusals = 0, shortfalls = 0;
    const int total = 200;

    for (int c = 0; c < total; c++) {
        const int64_t L = 5 + static_cast<int64_t>(rng.bounded(36));  // [5, 40]
        const double ratio = ratios[c % 4];
        const bool quantize = rng.uniform() < 0.3;  // force score ties sometimes
        auto draw = [&]() {
            double v = rng.uniform();
            if (quantize) v = std::floor(v * 8.0) / 8.0;
            return v;
        };
        SimilarityReport rep;
        rep.num_layers = L;
        rep.tokens_seen = 1;
        rep.calib_fingerprint = "acceptance-c1";
        for (int64_t l = 0; l < L; l++) rep.layer_scores.push_back(draw());
        for (int64_t i = 0; i < L - 2; i++) rep.triplet_scores.push_back(draw());

        const RefOutcome want = reference_triplet_selection(L, rep.layer_scores,
                                                            rep.triplet_scores, ratio);
        bool match = false;
        try {
            const PruningPlan got = plan_interlace(rep, ratio);
            match = !want.budget_refused && !want.shortfall && got.drop == want.drop &&
                    got.tune == want.tune && got.freeze == want.freeze;
        } catch (const InvalidRatio&) {
            match = want.budget_refused;
            refusals++;
        } catch (const InsufficientTriplets&) {
            match = want.shortfall;
            shortfalls++;
        }
        if (match) matches++;
    }
    const double dt = now_s() - t0;
    Outcome o;
    o.pass = matches == total && dt < 10.0;
    o.detail = std::to_string(matches) + "/" + std::to_string(total) + " reports match (" +
               std::to_string(refusals) + " budget refusals, " + std::to_string(shortfalls) +
               " triplet shortfalls agreed), " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C2 — partition and structural invariants under fuzzing, all five selectors
// ---------------------------------------------------------------------------

std::string check_partition(const PruningPlan& p, int64_t L, int64_t K) {
    auto ascending_in_range = [&](const std::vector<int64_t>& v, const char* what) -> std::string {
        int64_t prev = 0;
        for (int64_t l : v) {
            if (l < 1 || l > L) return std::string(what) + " index out of range";
            if (l <= prev) return std::string(what) + " not strictly ascending";
            prev = l;
        }
        return "";
    };
    for (auto [vec, name] : {std::pair{&p.drop, "drop"}, {&p.tune, "tune"}, {&p.freeze, "freeze"}}) {
        const std::string err = ascending_in_range(*vec, name);
        if (!err.empty()) return err;
    }
    std::set<int64_t> all;
    for (const auto* v : {&p.drop, &p.tune, &p.freeze})
        for (int64_t l : *v)
            if (!all.insert(l).second) return "layer " + std::to_string(l) + " assigned twice";
    if (static_cast<int64_t>(all.size()) != L) return "role sets do not cover every layer";
    if (static_cast<int64_t>(p.drop.size()) != K) return "|drop| != K";
    if (static_cast<int64_t>(p.tune.size()) != K) return "|tune| != K";
    if (static_cast<int64_t>(p.freeze.size()) != L - 2 * K) return "|freeze| != L - 2K";
    return "";
}

std::string check_structure(const PruningPlan& p, Strategy s, int64_t K) {
    auto contains = [](const std::vector<int64_t>& v, int64_t x) {
        return std::binary_search(v.begin(), v.end(), x);
    };
    if (s == Strategy::interlace || s == Strategy::interlace_oa) {
        if (static_cast<int64_t>(p.triplets.size()) != K) return "triplet record count != K";
        std::set<int64_t> covered;
        for (const auto& t : p.triplets) {
            if (t.frozen != t.index + 2) return "triplet does not freeze its third layer";
            const bool pair_ok = (t.dropped == t.index && t.tuned == t.index + 1) ||
                                 (t.dropped == t.index + 1 && t.tuned == t.index);
            if (!pair_ok) return "triplet drop/tune not its first two layers";
            if (s == Strategy::interlace_oa && t.dropped != t.index)
                return "positional selector must drop the first layer";
            if (!contains(p.drop, t.dropped) || !contains(p.tune, t.tuned) ||
                !contains(p.freeze, t.frozen))
                return "triplet record disagrees with role sets";
            for (int64_t l = t.index; l <= t.index + 2; l++)
                if (!covered.insert(l).second) return "triplet spans overlap";
        }
    } else if (s == Strategy::interlace_tn) {
        std::set<int64_t> tune(p.tune.begin(), p.tune.end());
        for (int64_t d : p.drop)
            if (!tune.count(d + 1)) return "dropped layer lacks its tuned successor";
    } else if (s == Strategy::consecutive) {
        for (size_t i = 1; i < p.drop.size(); i++)
            if (p.drop[i] != p.drop[i - 1] + 1) return "dropped block not contiguous";
        for (size_t i = 0; i < p.tune.size(); i++)
            if (p.tune[i] != p.drop.back() + 1 + static_cast<int64_t>(i))
                return "tuned block does not follow the dropped block";
    }
    return "";
}

Outcome run_c2(const fs::path&) {
    const double t0 = now_s();
    Rng rng(0xacc2);
    const int total = 1000;
    int violations = 0, planned = 0, refused = 0;
    std::string first_violation;

    const Strategy strategies[] = {Strategy::interlace, Strategy::interlace_oa,
                                   Strategy::interlace_tn, Strategy::consecutive,
                                   Strategy::random};

    for (int c = 0; c < total; c++) {
        const int64_t L = 3 + static_cast<int64_t>(rng.bounded(62));  // [3, 64]
        const double ratio = 0.01 + 0.48 * rng.uniform();
        const bool quantize = rng.uniform() < 0.3;
        auto draw = [&]() {
            double v = -1.0 + 2.0 * rng.uniform();
            if (quantize) v = std::floor(v * 4.0) / 4.0;
            return v;
        };
        SimilarityReport rep;
        rep.num_layers = L;
        rep.tokens_seen = 1;
        rep.calib_fingerprint = "acceptance-c2";
        for (int64_t l = 0; l < L; l++) rep.layer_scores.push_back(draw());
        for (int64_t i = 0; i < std::max<int64_t>(L - 2, 0); i++)
            rep.triplet_scores.push_back(draw());

        const int64_t K = static_cast<int64_t>(std::floor(ratio * static_cast<double>(L) + 1e-9));

        for (Strategy s : strategies) {
            std::optional<PruningPlan> plan;
            try {
                switch (s) {
                    case Strategy::interlace: plan = plan_interlace(rep, ratio); break;
                    case Strategy::interlace_oa: plan = plan_interlace_oa(rep, ratio); break;
                    case Strategy::interlace_tn: plan = plan_interlace_tn(rep, ratio); break;
                    case Strategy::consecutive: plan = plan_consecutive(rep, ratio); break;
                    case Strategy::random:
                        plan = plan_random(L, ratio, static_cast<uint64_t>(c));
                        break;
                    default: break;
                }
            } catch (const InvalidRatio&) {
                refused++;
            } catch (const InsufficientTriplets&) {
                refused++;
            } catch (const InsufficientLayers&) {
                refused++;
            } catch (const WindowOutOfRange&) {
                refused++;
            }
            // Anything thrown past this point (or a malformed plan) is a
            // violation; documented refusals above are the only accepted
            // non-answers.
            if (!plan.has_value()) continue;
            planned++;

            std::string err = check_partition(*plan, L, K);
            if (err.empty()) err = check_structure(*plan, s, K);
            if (err.empty() && s == Strategy::random) {
                const PruningPlan again = plan_random(L, ratio, static_cast<uint64_t>(c));
                if (again.drop != plan->drop || again.tune != plan->tune)
                    err = "random selector not deterministic for a fixed seed";
            }
            if (err.empty()) {
                const PruningPlan round = PruningPlan::from_json(plan->to_json());
                if (round.drop != plan->drop || round.tune != plan->tune ||
                    round.freeze != plan->freeze)
                    err = "plan JSON round-trip changed the role sets";
            }
            if (!err.empty()) {
                violations++;
                if (first_violation.empty())
                    first_violation = strategy_name(s) + " case " + std::to_string(c) + ": " + err;
            }
        }
    }
    const double dt = now_s() - t0;
    Outcome o;
    o.pass = violations == 0;
    o.detail = std::to_string(total) + " fuzz cases x 5 selectors: " + std::to_string(planned) +
               " plans checked, " + std::to_string(refused) + " documented refusals, " +
               std::to_string(violations) + " violations" +
               (first_violation.empty() ? "" : " (first: " + first_violation + ")") + ", " +
               fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C3 — streaming similarity vs a full-materialization oracle
// ---------------------------------------------------------------------------
//
// The oracle holds every trace in memory at once and accumulates in long
// double with plain summation — a different numerical path from the
// library's one-trace-at-a-time compensated streaming.

struct OracleScores {
    std::vector<double> layer, triplet;
    int64_t tokens = 0;
};

OracleScores materialized_scores(const TransformerModel& model, const Dataset& calib) {
    std::vector<std::vector<Tensor>> traces;
    for (const Sample& s : calib.samples)
        traces.push_back(model.forward(s.prefix_feats, s.tokens, /*with_taps=*/true).trace.states);

    const int64_t L = model.num_layers();
    const int64_t T = L >= 3 ? L - 2 : 0;
    std::vector<long double> layer_sum(static_cast<size_t>(L), 0.0L);
    std::vector<long double> triplet_sum(static_cast<size_t>(T), 0.0L);
    int64_t tokens = 0;

    auto cos_ld = [](const double* a, const double* b, int64_t d) {
        long double dot = 0.0L, na = 0.0L, nb = 0.0L;
        for (int64_t i = 0; i < d; i++) {
            dot += static_cast<long double>(a[i]) * b[i];
            na += static_cast<long double>(a[i]) * a[i];
            nb += static_cast<long double>(b[i]) * b[i];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    for (const auto& states : traces) {
        const int64_t rows = states[0].rows();
        const int64_t d = states[0].cols();
        for (int64_t l = 1; l <= L; l++)
            for (int64_t j = 0; j < rows; j++)
                layer_sum[static_cast<size_t>(l - 1)] +=
                    cos_ld(states[static_cast<size_t>(l - 1)].data() + j * d,
                           states[static_cast<size_t>(l)].data() + j * d, d);
        for (int64_t i = 1; i <= T; i++)
            for (int64_t j = 0; j < rows; j++)
                triplet_sum[static_cast<size_t>(i - 1)] +=
                    cos_ld(states[static_cast<size_t>(i - 1)].data() + j * d,
                           states[static_cast<size_t>(i + 2)].data() + j * d, d);
        tokens += rows;
    }

    OracleScores out;
    out.tokens = tokens;
    for (auto s : layer_sum)
        out.layer.push_back(std::clamp(static_cast<double>(s / tokens), -1.0, 1.0));
    for (auto s : triplet_sum)
        out.triplet.push_back(std::clamp(static_cast<double>(s / tokens), -1.0, 1.0));
    return out;
}

Outcome run_c3(const fs::path&) {
    const double t0 = now_s();
    Rng rng(0xacc3);
    double worst = 0.0;
    int pairs_ok = 0;
    const int total = 50;

    for (int c = 0; c < total; c++) {
        ModelConfig mc;
        mc.num_heads = static_cast<int64_t>(1) << rng.bounded(3);  // 1, 2, or 4
        mc.hidden_dim = mc.num_heads * (2 + static_cast<int64_t>(rng.bounded(6)));
        mc.num_layers = 2 + static_cast<int64_t>(rng.bounded(7));  // [2, 8]
        mc.ffn_dim = 4 + static_cast<int64_t>(rng.bounded(28));
        mc.vocab_size = 7 + static_cast<int64_t>(rng.bounded(25));
        mc.prefix_len = 1 + static_cast<int64_t>(rng.bounded(3));
        mc.feat_dim = 2 + static_cast<int64_t>(rng.bounded(4));
        mc.max_seq = mc.prefix_len + 12;
        mc.seed = mix_seed(0xacc3, static_cast<uint64_t>(c));
        const TransformerModel model = TransformerModel::init(mc);

        Dataset calib;
        const int n = 2 + static_cast<int>(rng.bounded(4));
        for (int s = 0; s < n; s++) {
            Sample smp;
            smp.prefix_feats.resize(static_cast<size_t>(mc.prefix_len * mc.feat_dim));
            for (auto& x : smp.prefix_feats) x = rng.normal();
            const int64_t t = 3 + static_cast<int64_t>(rng.bounded(10));
            for (int64_t i = 0; i < t; i++)
                smp.tokens.push_back(static_cast<int64_t>(rng.bounded(
                    static_cast<uint64_t>(mc.vocab_size))));
            smp.targets.assign(smp.tokens.size(), 0);
            smp.loss_mask.assign(smp.tokens.size(), 0);
            calib.samples.push_back(std::move(smp));
        }

        const SimilarityReport got = score(model, calib);
        const OracleScores want = materialized_scores(model, calib);
        if (got.tokens_seen != want.tokens) {
            Outcome o;
            o.detail = "token count mismatch on pair " + std::to_string(c);
            return o;
        }
        double err = 0.0;
        for (size_t i = 0; i < want.layer.size(); i++)
            err = std::max(err, std::abs(got.layer_scores[i] - want.layer[i]));
        for (size_t i = 0; i < want.triplet.size(); i++)
            err = std::max(err, std::abs(got.triplet_scores[i] - want.triplet[i]));
        worst = std::max(worst, err);
        if (err <= 1e-12) pairs_ok++;
    }

    // Pass-through stack: every residual contribution is exactly zero, so
    // every boundary similarity must be 1 to addition-rounding precision.
    ModelConfig idc;
    idc.num_layers = 8;
    idc.hidden_dim = 16;
    idc.num_heads = 2;
    idc.ffn_dim = 32;
    idc.vocab_size = 16;
    idc.max_seq = 16;
    idc.prefix_len = 2;
    idc.feat_dim = 4;
    idc.seed = 55;
    idc.identity_init = true;
    const TransformerModel id_model = TransformerModel::init(idc);
    Dataset id_calib;
    for (int s = 0; s < 3; s++) {
        Sample smp;
        smp.prefix_feats.resize(static_cast<size_t>(idc.prefix_len * idc.feat_dim));
        for (auto& x : smp.prefix_feats) x = rng.normal();
        for (int64_t i = 0; i < 8; i++)
            smp.tokens.push_back(static_cast<int64_t>(rng.bounded(16)));
        smp.targets.assign(8, 0);
        smp.loss_mask.assign(8, 0);
        id_calib.samples.push_back(std::move(smp));
    }
    const SimilarityReport id_rep = score(id_model, id_calib);
    double id_err = 0.0;
    for (double s : id_rep.layer_scores) id_err = std::max(id_err, std::abs(s - 1.0));
    for (double s : id_rep.triplet_scores) id_err = std::max(id_err, std::abs(s - 1.0));

    const double dt = now_s() - t0;
    Outcome o;
    o.pass = pairs_ok == total && id_err <= 1e-9;
    o.detail = std::to_string(pairs_ok) + "/" + std::to_string(total) +
               " pairs within 1e-12 (worst " + fmt(worst, 3) + "), pass-through stack off by " +
               fmt(id_err, 3) + ", " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C4 — reverse-mode gradients vs central finite differences
// ---------------------------------------------------------------------------

Outcome run_c4(const fs::path&) {
    const double t0 = now_s();
    ModelConfig mc;
    mc.num_layers = 2;
    mc.hidden_dim = 16;
    mc.num_heads = 2;
    mc.ffn_dim = 24;
    mc.vocab_size = 19;
    mc.max_seq = 12;
    mc.prefix_len = 2;
    mc.feat_dim = 3;
    mc.seed = 0xc4;
    TransformerModel model = TransformerModel::init(mc);

    Rng rng(0xacc4);
    std::vector<double> feats(static_cast<size_t>(mc.prefix_len * mc.feat_dim));
    for (auto& x : feats) x = rng.normal();
    std::vector<int64_t> tokens, targets;
    std::vector<uint8_t> mask;
    const int64_t t_text = 8;
    for (int64_t i = 0; i < t_text; i++)
        tokens.push_back(static_cast<int64_t>(rng.bounded(19)));
    const int64_t rows = mc.prefix_len + t_text;
    for (int64_t i = 0; i < rows; i++) {
        targets.push_back(static_cast<int64_t>(rng.bounded(19)));
        mask.push_back(i >= mc.prefix_len && rng.uniform() < 0.7 ? 1 : 0);
    }
    mask[static_cast<size_t>(rows - 1)] = 1;  // guarantee a target exists

    auto loss_value = [&]() {
        NoGradGuard guard;
        const Tensor logits = model.forward(feats, tokens).logits;
        return next_token_loss(logits, targets, mask).scalar();
    };

    auto params = model.named_params();
    for (auto& [name, t] : params) t.zero_grad();
    {
        const Tensor logits = model.forward(feats, tokens).logits;
        backward(next_token_loss(logits, targets, mask));
    }

    // Central differences at step h have a noise floor of roughly
    // eps * |loss| / h plus an h^2 truncation term; coordinates whose
    // gradient sits below ~1e-6 cannot be certified to 1e-4 relative
    // precision by any h, so they are skipped and counted. Each tensor is
    // additionally certified as a whole through a directional difference
    // along sign(grad), whose magnitude (the gradient's scaled L1 norm)
    // stands far above the floor.
    double worst = 0.0, worst_dir = 0.0;
    std::string worst_at = "-";
    int coords = 0, measured = 0, dirs_measured = 0;
    const double h = 1e-5;
    for (auto& [name, t] : params) {
        const int64_t n = t.rows() * t.cols();
        const std::vector<double> ad_grad(t.grad().begin(), t.grad().end());
        for (int pick = 0; pick < 3; pick++) {
            const int64_t i = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(n)));
            const double ad = ad_grad[static_cast<size_t>(i)];
            double* slot = t.data() + i;
            const double keep = *slot;
            *slot = keep + h;
            const double up = loss_value();
            *slot = keep - h;
            const double down = loss_value();
            *slot = keep;
            const double fd = (up - down) / (2.0 * h);
            coords++;
            const double denom = std::max(std::abs(ad), std::abs(fd));
            if (denom < 1e-6) continue;  // below the finite-difference floor
            measured++;
            const double rel = std::abs(ad - fd) / denom;
            if (rel > worst) {
                worst = rel;
                worst_at = name;
            }
        }

        const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
        double ad_dir = 0.0;
        for (double g : ad_grad) ad_dir += std::abs(g) * inv_sqrt_n;
        const std::vector<double> keep_all(t.data(), t.data() + n);
        auto set_shifted = [&](double sign) {
            double* d = t.data();
            for (int64_t i = 0; i < n; i++) {
                const double g = ad_grad[static_cast<size_t>(i)];
                d[i] = keep_all[static_cast<size_t>(i)] +
                       (g == 0.0 ? 0.0 : sign * h * inv_sqrt_n * (g > 0.0 ? 1.0 : -1.0));
            }
        };
        set_shifted(+1.0);
        const double up = loss_value();
        set_shifted(-1.0);
        const double down = loss_value();
        std::copy(keep_all.begin(), keep_all.end(), t.data());
        const double fd_dir = (up - down) / (2.0 * h);
        const double dir_denom = std::max(std::abs(ad_dir), std::abs(fd_dir));
        if (dir_denom >= 1e-8) {
            dirs_measured++;
            const double rel = std::abs(ad_dir - fd_dir) / dir_denom;
            if (rel > worst_dir) worst_dir = rel;
        }
    }

    const double dt = now_s() - t0;
    Outcome o;
    o.pass = worst < 1e-4 && worst_dir < 1e-4 && dirs_measured > 0 && dt < 120.0;
    o.detail = std::to_string(measured) + "/" + std::to_string(coords) +
               " sampled coordinates above the finite-difference floor, max relative error " +
               fmt(worst, 3) + " (at " + worst_at + "); " + std::to_string(dirs_measured) + "/" +
               std::to_string(params.size()) + " per-tensor directional checks, worst " +
               fmt(worst_dir, 3) + ", " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C5 — freeze integrity through a finetune + pass-through drop equivalence
// ---------------------------------------------------------------------------

Outcome run_c5(const fs::path&) {
    const double t0 = now_s();

    TaskSpec ts;
    ts.vocab_size = 16;
    ts.seq_len = 8;
    ts.prefix_len = 2;
    ts.feat_dim = 4;
    ts.num_train = 64;
    ts.num_eval = 8;
    ts.finetune_fraction = 0.25;
    ts.calib_fraction = 0.25;
    ts.num_buckets = 4;
    ts.noise_std = 0.05;
    ts.seed = 9;
    const TaskBundle bundle = TaskGen(ts).generate();

    ModelConfig mc;
    mc.num_layers = 6;
    mc.hidden_dim = 16;
    mc.num_heads = 2;
    mc.ffn_dim = 32;
    mc.vocab_size = 16;
    mc.max_seq = 16;
    mc.prefix_len = 2;
    mc.feat_dim = 4;
    mc.seed = 3;
    const TransformerModel model = TransformerModel::init(mc);

    const SimilarityReport report = score(model, bundle.calib);
    const PruningPlan plan = plan_interlace(report, 0.34);  // K = 2 of 6
    SurgeryResult sr = apply_plan(model, plan);
    const auto tuned_names = trainable_mask(sr.record);

    std::map<std::string, std::vector<double>> before;
    for (auto& [name, t] : sr.model.named_params())
        before[name] = std::vector<double>(t.data(), t.data() + t.rows() * t.cols());

    TrainConfig ft;
    ft.lr_peak = 1e-3;
    ft.batch_size = 8;
    ft.grad_accum = 1;
    ft.epochs = 1;
    ft.seed = 77;
    finetune(sr.model, sr.record, bundle.finetune, ft);

    int frozen_total = 0, frozen_changed = 0, tuned_changed = 0;
    for (auto& [name, t] : sr.model.named_params()) {
        const auto& old = before.at(name);
        const bool same = std::equal(old.begin(), old.end(), t.data());
        if (tuned_names.count(name)) {
            if (!same) tuned_changed++;
        } else {
            frozen_total++;
            if (!same) frozen_changed++;
        }
    }

    // Pass-through drop equivalence: a stack whose blocks contribute exactly
    // zero must produce identical logits after any of them are removed.
    ModelConfig idc = mc;
    idc.num_layers = 8;
    idc.identity_init = true;
    idc.seed = 5;
    const TransformerModel dense = TransformerModel::init(idc);
    const SimilarityReport id_rep = score(dense, bundle.calib);
    const PruningPlan id_plan = plan_interlace(id_rep, 0.25);  // K = 2 of 8
    const TransformerModel pruned = apply_plan(dense, id_plan).model;

    double logit_diff = 0.0;
    for (int s = 0; s < 3; s++) {
        const Sample& smp = bundle.eval.samples[static_cast<size_t>(s)];
        const Tensor a = dense.forward(smp.prefix_feats, smp.tokens).logits;
        const Tensor b = pruned.forward(smp.prefix_feats, smp.tokens).logits;
        for (int64_t i = 0; i < a.rows() * a.cols(); i++)
            logit_diff = std::max(logit_diff, std::abs(a.data()[i] - b.data()[i]));
    }

    const double dt = now_s() - t0;
    Outcome o;
    o.pass = frozen_changed == 0 && tuned_changed > 0 && logit_diff < 1e-10;
    o.detail = std::to_string(frozen_total) + " frozen tensors unchanged (" +
               std::to_string(frozen_changed) + " violations, " + std::to_string(tuned_changed) +
               " tuned tensors moved), pass-through drop logit diff " + fmt(logit_diff, 3) +
               ", " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// Shared grid configuration for C6/C7/C8 (the directional experiment)
// ---------------------------------------------------------------------------

ExperimentConfig grid_config(const fs::path& ws) {
    ExperimentConfig cfg;
    cfg.task.vocab_size = 64;
    cfg.task.seq_len = 16;
    cfg.task.prefix_len = 8;
    cfg.task.feat_dim = 16;
    cfg.task.num_train = 25600;
    cfg.task.num_eval = 512;
    cfg.task.finetune_fraction = 0.01;
    cfg.task.calib_fraction = 0.10;
    cfg.task.num_buckets = 96;
    cfg.task.noise_std = 0.1;
    cfg.task.seed = 101;

    cfg.model.num_layers = 12;
    cfg.model.hidden_dim = 128;
    cfg.model.num_heads = 4;
    cfg.model.ffn_dim = 512;
    cfg.model.vocab_size = 64;
    cfg.model.max_seq = 24;
    cfg.model.prefix_len = 8;
    cfg.model.feat_dim = 16;

    cfg.pretrain_cfg.lr_peak = 1e-3;
    cfg.pretrain_cfg.batch_size = 16;
    cfg.pretrain_cfg.grad_accum = 1;
    cfg.pretrain_cfg.epochs = 1;

    cfg.finetune_cfg.lr_peak = 1e-3;
    cfg.finetune_cfg.batch_size = 8;
    cfg.finetune_cfg.grad_accum = 1;
    cfg.finetune_cfg.epochs = 1;

    cfg.strategies = {Strategy::interlace, Strategy::random, Strategy::consecutive,
                      Strategy::dense_ft};
    cfg.ratios = {0.25};
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.data_dir = (ws / "data").string();
    cfg.out_dir = (ws / "grid").string();
    return cfg;
}

void ensure_grid(const fs::path& ws) {
    const ExperimentConfig cfg = grid_config(ws);
    const fs::path cfg_path = ws / "exp.json";
    fs::create_directories(ws);
    write_json_file(cfg_path.string(), cfg.to_json());
    cmd_ablate(cfg_path.string(), cfg.out_dir);  // resumes from finished cells
}

Outcome run_c6(const fs::path& ws) {
    const double t0 = now_s();
    ExperimentConfig cfg = grid_config(ws);
    fs::create_directories(ws);
    cfg.data_dir = ensure_datasets(cfg);
    const Dataset train = load_split_checked(cfg.data_dir, "train", cfg.task);
    const std::string dense_path =
        ensure_dense_checkpoint(cfg, cfg.out_dir, cfg.seeds.front(), train);
    const TransformerModel dense = load_model(dense_path);
    const Dataset eval_set = load_split_checked(cfg.data_dir, "eval", cfg.task);
    const EvalReport er = ensure_dense_eval(dense_path, dense, eval_set);

    const double dt = now_s() - t0;
    Outcome o;
    o.pass = er.accuracy >= 0.95 && dt < 1800.0;
    o.detail = "dense eval accuracy " + fmt(er.accuracy, 4) + " on " +
               std::to_string(er.samples) + " samples (threshold 0.95), " + fmt(dt) + "s";
    return o;
}

std::map<std::string, CombinedRow> read_combined(const fs::path& ws) {
    std::map<std::string, CombinedRow> rows;
    std::istringstream in(slurp(ws / "grid" / "combined.csv"));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string strategy, ratio, acc, rp, speedup;
        std::getline(ls, strategy, ',');
        std::getline(ls, ratio, ',');
        std::getline(ls, acc, ',');
        std::getline(ls, rp, ',');
        std::getline(ls, speedup, ',');
        CombinedRow r;
        r.strategy = strategy;
        r.ratio = std::stod(ratio);
        r.accuracy = std::stod(acc);
        r.relative_performance = std::stod(rp);
        r.ttft_speedup = std::stod(speedup);
        rows[strategy + "@" + ratio] = r;
    }
    return rows;
}

Outcome run_c7(const fs::path& ws) {
    const double t0 = now_s();
    ensure_grid(ws);
    const auto rows = read_combined(ws);

    Outcome o;
    const auto il = rows.find("interlace@0.25");
    const auto rd = rows.find("random@0.25");
    const auto cs = rows.find("consecutive@0.25");
    if (il == rows.end() || rd == rows.end() || cs == rows.end()) {
        o.detail = "combined report is missing a strategy row";
        return o;
    }
    const double i_rp = il->second.relative_performance;
    const double r_rp = rd->second.relative_performance;
    const double c_rp = cs->second.relative_performance;
    const double margin = i_rp - c_rp;
    const double dt = now_s() - t0;
    o.pass = i_rp >= r_rp && r_rp >= c_rp && margin >= 10.0 && dt < 14400.0;
    o.detail = "mean relative performance over 5 seeds: interlace " + fmt(i_rp, 4) +
               " >= random " + fmt(r_rp, 4) + " >= consecutive " + fmt(c_rp, 4) +
               ", margin " + fmt(margin, 4) + "pp (need >= 10), " + fmt(dt) + "s";
    return o;
}

Outcome run_c8(const fs::path& ws) {
    const double t0 = now_s();
    ensure_grid(ws);
    const auto rows = read_combined(ws);
    const auto it = rows.find("dense_ft@0.25");

    Outcome o;
    if (it == rows.end()) {
        o.detail = "tune-only control row missing from combined.csv";
        return o;
    }
    // Per-seed cells must exist too: the control has to actually run.
    int cells = 0;
    for (uint64_t s = 1; s <= 5; s++)
        if (fs::exists(ws / "grid" / "cells" / ("dense_ft_r0.25_s" + std::to_string(s)) /
                       "cell.json"))
            cells++;
    const double rp = it->second.relative_performance;
    const double dt = now_s() - t0;
    o.pass = cells == 5 && std::isfinite(rp);
    o.detail = "tune-only control present in combined.csv (mean relative performance " +
               fmt(rp, 4) + ", " + std::to_string(cells) + "/5 seed cells), " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C9 — prefill latency: pruned speedup in range, self-comparison near unity
// ---------------------------------------------------------------------------

Outcome run_c9(const fs::path&) {
    const double t0 = now_s();
    ModelConfig mc;
    mc.num_layers = 12;
    mc.hidden_dim = 512;
    mc.num_heads = 8;
    mc.ffn_dim = 2048;
    mc.vocab_size = 64;
    mc.max_seq = 1032;
    mc.prefix_len = 8;
    mc.feat_dim = 16;
    mc.seed = 0xc9;

    const TransformerModel dense = TransformerModel::init(mc);

    PruningPlan plan;  // fixed 25% surgery: 3 of 12 blocks removed
    plan.strategy = Strategy::random;
    plan.num_layers = 12;
    plan.ratio = 0.25;
    plan.k = 3;
    plan.drop = {3, 6, 9};
    plan.tune = {2, 5, 8};
    plan.freeze = {1, 4, 7, 10, 11, 12};
    plan.seed = 0;
    plan.validate();
    const TransformerModel pruned = apply_plan(dense, plan).model;

    const int64_t seq = 1024, trials = 10, warmup = 1;
    const PairedBench vs = ttft_paired(dense, pruned, seq, trials, warmup);

    const TransformerModel twin_a = TransformerModel::init(mc);
    const TransformerModel twin_b = TransformerModel::init(mc);
    const PairedBench self = ttft_paired(twin_a, twin_b, seq, trials, warmup);

    const double dt = now_s() - t0;
    Outcome o;
    const bool speedup_ok = vs.speedup > 1.05 && vs.speedup <= 1.40;
    const bool self_ok = self.speedup >= 0.95 && self.speedup <= 1.05;
    o.pass = speedup_ok && self_ok && dt < 600.0;
    o.detail = "25%-pruned prefill speedup " + fmt(vs.speedup, 4) +
               " (need (1.05, 1.40]), dense-vs-dense " + fmt(self.speedup, 4) +
               " (need [0.95, 1.05]), median dense " + fmt(vs.reference.median_seconds, 3) +
               "s, " + fmt(dt) + "s";
    return o;
}

// ---------------------------------------------------------------------------
// C10 — byte-identical reruns for every deterministic pipeline stage
// ---------------------------------------------------------------------------

// Relative paths of every primary artifact a full single-pipeline pass
// leaves behind. Meta sidecars (wall-clock quarantine) are excluded by
// construction; measured-latency artifacts are handled separately below.
const std::vector<std::string> kPipelineArtifacts = {
    "data/train.jsonl", "data/finetune.jsonl", "data/calib.jsonl", "data/eval.jsonl",
    "data/spec.json",   "dense.ckpt",          "dense.ckpt.log.jsonl",
    "dense.ckpt.summary.json", "calib.report.json", "plan.json", "plan.csv",
    "pruned.ckpt",      "pruned.ckpt.record.json", "tuned.ckpt", "tuned.ckpt.log.jsonl",
    "tuned.ckpt.summary.json", "eval.json",
};

void run_pipeline(const fs::path& root) {
    fs::create_directories(root);

    TaskSpec ts;
    ts.vocab_size = 16;
    ts.seq_len = 8;
    ts.prefix_len = 2;
    ts.feat_dim = 4;
    ts.num_train = 96;
    ts.num_eval = 8;
    ts.finetune_fraction = 0.25;
    ts.calib_fraction = 0.25;
    ts.num_buckets = 4;
    ts.noise_std = 0.05;
    ts.seed = 21;

    ExperimentConfig cfg;
    cfg.task = ts;
    cfg.model.num_layers = 4;
    cfg.model.hidden_dim = 16;
    cfg.model.num_heads = 2;
    cfg.model.ffn_dim = 32;
    cfg.model.vocab_size = 16;
    cfg.model.max_seq = 16;
    cfg.model.prefix_len = 2;
    cfg.model.feat_dim = 4;
    cfg.model.seed = 13;
    cfg.pretrain_cfg.batch_size = 16;
    cfg.pretrain_cfg.grad_accum = 1;
    cfg.pretrain_cfg.seed = 17;
    cfg.finetune_cfg.batch_size = 4;
    cfg.finetune_cfg.grad_accum = 1;
    cfg.finetune_cfg.seed = 19;
    cfg.strategies = {Strategy::interlace};
    cfg.ratios = {0.3};
    cfg.seeds = {1};
    cfg.data_dir = (root / "data").string();
    cfg.out_dir = (root / "grid").string();

    const fs::path spec_path = root / "task.json";
    write_json_file(spec_path.string(), ts.to_json());
    const fs::path cfg_path = root / "exp.json";
    write_json_file(cfg_path.string(), cfg.to_json());

    cmd_gen(spec_path.string(), (root / "data").string());
    cmd_pretrain(cfg_path.string(), (root / "dense.ckpt").string());
    cmd_calibrate((root / "dense.ckpt").string(), (root / "data").string(),
                  (root / "calib.report.json").string());
    cmd_plan((root / "calib.report.json").string(), 0.3, "interlace", std::nullopt,
             (root / "plan.json").string());
    cmd_prune((root / "dense.ckpt").string(), (root / "plan.json").string(),
              (root / "pruned.ckpt").string());
    cmd_finetune((root / "pruned.ckpt").string(), (root / "plan.json").string(),
                 (root / "data").string(), cfg_path.string(), (root / "tuned.ckpt").string());
    cmd_eval((root / "tuned.ckpt").string(), (root / "data").string(),
             (root / "eval.json").string());
    cmd_ablate(cfg_path.string(), cfg.out_dir);
}

Outcome run_c10(const fs::path& ws) {
    const double t0 = now_s();
    const fs::path a = ws / "determinism" / "a";
    const fs::path b = ws / "determinism" / "b";
    fs::remove_all(a);
    fs::remove_all(b);
    run_pipeline(a);
    run_pipeline(b);

    int compared = 0, differing = 0;
    std::string first_diff;
    auto compare = [&](const fs::path& pa, const fs::path& pb, const std::string& label) {
        compared++;
        if (!fs::exists(pa) || !fs::exists(pb) || slurp(pa) != slurp(pb)) {
            differing++;
            if (first_diff.empty()) first_diff = label;
        }
    };
    for (const std::string& rel : kPipelineArtifacts) compare(a / rel, b / rel, rel);

    // The grid runner's deterministic cell artifacts, fresh directory vs
    // fresh directory. The grid CSVs carry measured prefill latencies, so
    // across independent runs only their resume stability (below) applies.
    for (const std::string& rel :
         {std::string("grid/cells/interlace_r0.3_s1/plan.json"),
          std::string("grid/cells/interlace_r0.3_s1/tuned.ckpt"),
          std::string("grid/cells/interlace_r0.3_s1/eval.json"),
          std::string("grid/dense/seed_1.ckpt")})
        compare(a / rel, b / rel, rel);

    // In-place rerun: a second ablate pass over a finished grid must leave
    // the summary CSVs byte-identical (cells resume, nothing re-measured).
    const std::string cells_before = slurp(a / "grid" / "cells.csv");
    const std::string combined_before = slurp(a / "grid" / "combined.csv");
    cmd_ablate((a / "exp.json").string(), (a / "grid").string());
    compared += 2;
    if (slurp(a / "grid" / "cells.csv") != cells_before) {
        differing++;
        if (first_diff.empty()) first_diff = "grid/cells.csv (in-place rerun)";
    }
    if (slurp(a / "grid" / "combined.csv") != combined_before) {
        differing++;
        if (first_diff.empty()) first_diff = "grid/combined.csv (in-place rerun)";
    }

    const double dt = now_s() - t0;
    Outcome o;
    o.pass = differing == 0;
    o.detail = std::to_string(compared) + " artifact comparisons across gen/pretrain/calibrate/" +
               "plan/prune/finetune/eval/ablate, " + std::to_string(differing) + " differ" +
               (first_diff.empty() ? "" : " (first: " + first_diff + ")") +
               "; wall-clock lives in .meta.json sidecars and measured latencies in bench " +
               "reports, both excluded by design, " + fmt(dt) + "s";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    using Runner = Outcome (*)(const fs::path&);
    const std::vector<std::pair<std::string, Runner>> criteria = {
        {"c1", run_c1}, {"c2", run_c2}, {"c3", run_c3}, {"c4", run_c4},  {"c5", run_c5},
        {"c6", run_c6}, {"c7", run_c7}, {"c8", run_c8}, {"c9", run_c9}, {"c10", run_c10},
    };

    fs::path workspace = "acceptance_work";
    std::vector<std::string> asked;
    for (int i = 1; i < argc; i++) {
        const std::string arg = argv[i];
        if (arg == "--workspace") {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "--workspace needs a directory\n");
                return 2;
            }
            workspace = argv[++i];
        } else if (arg == "all") {
            for (const auto& [name, fn] : criteria) asked.push_back(name);
        } else {
            const bool known = std::any_of(criteria.begin(), criteria.end(),
                                           [&](const auto& c) { return c.first == arg; });
            if (!known) {
                std::fprintf(stderr, "unknown criterion '%s' (use c1..c10 or all)\n",
                             arg.c_str());
                return 2;
            }
            asked.push_back(arg);
        }
    }
    if (asked.empty()) {
        std::fprintf(stderr, "usage: acceptance [--workspace DIR] all | c1 [c2 ...]\n");
        return 2;
    }

    workspace = fs::absolute(workspace);
    fs::create_directories(workspace);

    bool all_pass = true;
    for (const std::string& name : asked) {
        const auto it = std::find_if(criteria.begin(), criteria.end(),
                                     [&](const auto& c) { return c.first == name; });
        Outcome o;
        try {
            o = it->second(workspace);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("unexpected exception: ") + e.what();
        }
        std::string label = name;
        for (auto& ch : label) ch = static_cast<char>(std::toupper(ch));
        std::printf("%s %s — %s\n", label.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) all_pass = false;
    }
    return all_pass ? 0 : 1;
}
