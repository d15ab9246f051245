#pragma once

// Decoder-only transformer with pre-norm RMS residual blocks, learned
// absolute positions, and a projected synthetic feature prefix standing in
// for an encoder. Every layer boundary can be tapped, exposing the exact
// hidden state each block consumes — the raw material for redundancy
// scoring.

#include <string>
#include <utility>
#include <vector>

#include "interlace/common.hpp"
#include "interlace/tensor.hpp"

namespace interlace {

struct ModelConfig {
    int64_t num_layers = 0;   // L
    int64_t hidden_dim = 0;   // width of every residual stream
    int64_t num_heads = 0;    // must divide hidden_dim
    int64_t ffn_dim = 0;
    int64_t vocab_size = 0;
    int64_t max_seq = 0;      // positions table size, prefix included
    int64_t prefix_len = 0;   // rows of the synthetic feature prefix
    int64_t feat_dim = 0;     // columns of the raw prefix features
    uint64_t seed = 0;
    bool identity_init = false;  // test fixture: zero residual outputs

    void validate() const {
        if (num_layers < 1) throw InvalidConfig("num_layers must be >= 1");
        if (hidden_dim < 1 || ffn_dim < 1 || vocab_size < 1)
            throw InvalidConfig("widths and vocab_size must be >= 1");
        if (num_heads < 1 || hidden_dim % num_heads != 0)
            throw InvalidConfig("num_heads must divide hidden_dim");
        if (prefix_len < 0) throw InvalidConfig("prefix_len must be >= 0");
        if (feat_dim < 1) throw InvalidConfig("feat_dim must be >= 1");
        if (max_seq < prefix_len + 1)
            throw InvalidConfig("max_seq must be >= prefix_len + 1");
    }

    Json to_json() const {
        Json j;
        j["num_layers"] = num_layers;
        j["hidden_dim"] = hidden_dim;
        j["num_heads"] = num_heads;
        j["ffn_dim"] = ffn_dim;
        j["vocab_size"] = vocab_size;
        j["max_seq"] = max_seq;
        j["prefix_len"] = prefix_len;
        j["feat_dim"] = feat_dim;
        j["seed"] = seed;
        j["identity_init"] = identity_init;
        return j;
    }

    static ModelConfig from_json(const Json& j) {
        ModelConfig c;
        try {
            c.num_layers = j.at("num_layers").get<int64_t>();
            c.hidden_dim = j.at("hidden_dim").get<int64_t>();
            c.num_heads = j.at("num_heads").get<int64_t>();
            c.ffn_dim = j.at("ffn_dim").get<int64_t>();
            c.vocab_size = j.at("vocab_size").get<int64_t>();
            c.max_seq = j.at("max_seq").get<int64_t>();
            c.prefix_len = j.at("prefix_len").get<int64_t>();
            c.feat_dim = j.at("feat_dim").get<int64_t>();
            c.seed = j.at("seed").get<uint64_t>();
            c.identity_init = j.value("identity_init", false);  // fixture flag; optional in configs
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("model config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

// One pre-norm residual block: x += Attn(norm(x)); x += FFN(norm(x)).
struct DecoderLayer {
    Tensor attn_norm, wq, wk, wv, wo;
    Tensor ffn_norm, w1, w2;

    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const {
        return {{prefix + ".attn_norm", attn_norm}, {prefix + ".wq", wq}, {prefix + ".wk", wk},
                {prefix + ".wv", wv},               {prefix + ".wo", wo}, {prefix + ".ffn_norm", ffn_norm},
                {prefix + ".w1", w1},               {prefix + ".w2", w2}};
    }

    // Per-layer parameter names without an instance, in canonical order.
    static const std::vector<std::string>& suffixes() {
        static const std::vector<std::string> s = {"attn_norm", "wq", "wk", "wv",
                                                   "wo",        "ffn_norm", "w1", "w2"};
        return s;
    }
};

// All L+1 boundary states: states[0] is the embedded input, states[l] the
// output of block l (equivalently the input of block l+1).
struct HiddenTrace {
    std::vector<Tensor> states;
};

struct ForwardResult {
    Tensor logits;
    HiddenTrace trace;  // populated only when taps were requested
};

class TransformerModel {
public:
    TransformerModel() = default;

    // Zero-filled parameters with the canonical shapes; the starting point
    // for init, checkpoint loading, and surgery.
    static TransformerModel skeleton(const ModelConfig& cfg) {
        cfg.validate();
        TransformerModel m;
        m.cfg_ = cfg;
        m.tok_emb_ = Tensor::zeros(cfg.vocab_size, cfg.hidden_dim, true);
        m.pos_emb_ = Tensor::zeros(cfg.max_seq, cfg.hidden_dim, true);
        m.prefix_proj_ = Tensor::zeros(cfg.feat_dim, cfg.hidden_dim, true);
        m.layers_.resize(static_cast<size_t>(cfg.num_layers));
        for (auto& layer : m.layers_) {
            layer.attn_norm = Tensor::zeros(1, cfg.hidden_dim, true);
            layer.wq = Tensor::zeros(cfg.hidden_dim, cfg.hidden_dim, true);
            layer.wk = Tensor::zeros(cfg.hidden_dim, cfg.hidden_dim, true);
            layer.wv = Tensor::zeros(cfg.hidden_dim, cfg.hidden_dim, true);
            layer.wo = Tensor::zeros(cfg.hidden_dim, cfg.hidden_dim, true);
            layer.ffn_norm = Tensor::zeros(1, cfg.hidden_dim, true);
            layer.w1 = Tensor::zeros(cfg.hidden_dim, cfg.ffn_dim, true);
            layer.w2 = Tensor::zeros(cfg.ffn_dim, cfg.hidden_dim, true);
        }
        m.final_norm_ = Tensor::zeros(1, cfg.hidden_dim, true);
        m.lm_head_ = Tensor::zeros(cfg.hidden_dim, cfg.vocab_size, true);
        return m;
    }

    static TransformerModel init(const ModelConfig& cfg) {
        TransformerModel m = skeleton(cfg);
        Rng rng(cfg.seed);
        const double std_in = 0.02;
        // Residual output projections shrink with depth so deep stacks stay
        // well-scaled; under identity_init they are exactly zero instead.
        const double std_out = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));

        fill_normal(rng, m.tok_emb_, std_in);
        fill_normal(rng, m.pos_emb_, std_in);
        fill_normal(rng, m.prefix_proj_, std_in);
        for (auto& layer : m.layers_) {
            fill_ones(layer.attn_norm);
            fill_normal(rng, layer.wq, std_in);
            fill_normal(rng, layer.wk, std_in);
            fill_normal(rng, layer.wv, std_in);
            if (!cfg.identity_init) fill_normal(rng, layer.wo, std_out);
            fill_ones(layer.ffn_norm);
            fill_normal(rng, layer.w1, std_in);
            if (!cfg.identity_init) fill_normal(rng, layer.w2, std_out);
        }
        fill_ones(m.final_norm_);
        fill_normal(rng, m.lm_head_, std_in);
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    int64_t num_layers() const { return cfg_.num_layers; }
    std::vector<DecoderLayer>& layers() { return layers_; }
    const std::vector<DecoderLayer>& layers() const { return layers_; }

    // Canonical parameter order; doubles as the checkpoint manifest order.
    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("tok_emb", tok_emb_);
        out.emplace_back("pos_emb", pos_emb_);
        out.emplace_back("prefix_proj", prefix_proj_);
        for (size_t i = 0; i < layers_.size(); i++) {
            auto block = layers_[i].named("layers." + std::to_string(i));
            out.insert(out.end(), block.begin(), block.end());
        }
        out.emplace_back("final_norm", final_norm_);
        out.emplace_back("lm_head", lm_head_);
        return out;
    }

    // Names of every parameter belonging to 0-based layer index i.
    std::vector<std::string> layer_param_names(int64_t i) const {
        std::vector<std::string> out;
        for (auto& [name, t] : layers_[static_cast<size_t>(i)].named("layers." + std::to_string(i)))
            out.push_back(name);
        return out;
    }

    ForwardResult forward(const std::vector<double>& prefix_feats, const std::vector<int64_t>& tokens,
                          bool with_taps = false) const {
        const int64_t n_v = cfg_.prefix_len;
        const int64_t t_text = static_cast<int64_t>(tokens.size());
        if (t_text < 1) throw InvalidConfig("forward: empty token sequence");
        if (n_v + t_text > cfg_.max_seq)
            throw SequenceTooLong("sequence of " + std::to_string(n_v + t_text) + " exceeds max_seq " +
                                  std::to_string(cfg_.max_seq));
        for (int64_t tok : tokens)
            if (tok < 0 || tok >= cfg_.vocab_size)
                throw TokenOutOfRange("token " + std::to_string(tok) + " outside vocab of " +
                                      std::to_string(cfg_.vocab_size));
        if (static_cast<int64_t>(prefix_feats.size()) != n_v * cfg_.feat_dim)
            throw InvalidConfig("forward: prefix feature buffer has wrong size");

        const int64_t t_total = n_v + t_text;
        Tensor x_text = embedding(tok_emb_, tokens);
        Tensor x;
        if (n_v > 0) {
            Tensor feats = Tensor::from_data(prefix_feats, n_v, cfg_.feat_dim, false);
            Tensor x_prefix = matmul(feats, prefix_proj_);
            x = concat_rows({x_prefix, x_text});
        } else {
            x = x_text;
        }
        x = add(x, slice_rows(pos_emb_, 0, t_total));

        auto mask = causal_prefix_mask(t_total, n_v);

        ForwardResult result;
        if (with_taps) result.trace.states.push_back(x);
        for (const auto& layer : layers_) {
            x = apply_block(layer, x, mask);
            if (with_taps) result.trace.states.push_back(x);
        }
        result.logits = matmul(rms_norm(x, final_norm_), lm_head_);
        return result;
    }

    // Re-runs block index i (0-based) on an arbitrary state; lets tests
    // confirm the taps are faithful layer inputs/outputs.
    Tensor apply_layer(int64_t i, const Tensor& state) const {
        if (i < 0 || i >= num_layers()) throw InvalidConfig("apply_layer: index out of range");
        auto mask = causal_prefix_mask(state.rows(), cfg_.prefix_len);
        return apply_block(layers_[static_cast<size_t>(i)], state, mask);
    }

    TransformerModel deep_copy() const {
        TransformerModel m;
        m.cfg_ = cfg_;
        m.tok_emb_ = tok_emb_.clone();
        m.pos_emb_ = pos_emb_.clone();
        m.prefix_proj_ = prefix_proj_.clone();
        m.layers_.reserve(layers_.size());
        for (const auto& l : layers_)
            m.layers_.push_back({l.attn_norm.clone(), l.wq.clone(), l.wk.clone(), l.wv.clone(),
                                 l.wo.clone(), l.ffn_norm.clone(), l.w1.clone(), l.w2.clone()});
        m.final_norm_ = final_norm_.clone();
        m.lm_head_ = lm_head_.clone();
        return m;
    }

    // Replaces the layer stack (surgery helper). New config must already
    // reflect the new depth.
    void replace_layers(std::vector<DecoderLayer> layers, int64_t new_num_layers) {
        cfg_.num_layers = new_num_layers;
        layers_ = std::move(layers);
    }

    // Direct access for checkpoint IO.
    Tensor& param(const std::string& name) {
        if (name == "tok_emb") return tok_emb_;
        if (name == "pos_emb") return pos_emb_;
        if (name == "prefix_proj") return prefix_proj_;
        if (name == "final_norm") return final_norm_;
        if (name == "lm_head") return lm_head_;
        if (name.rfind("layers.", 0) == 0) {
            const size_t dot = name.find('.', 7);
            if (dot != std::string::npos) {
                const int64_t idx = std::stoll(name.substr(7, dot - 7));
                if (idx >= 0 && idx < num_layers()) {
                    DecoderLayer& l = layers_[static_cast<size_t>(idx)];
                    const std::string field = name.substr(dot + 1);
                    if (field == "attn_norm") return l.attn_norm;
                    if (field == "wq") return l.wq;
                    if (field == "wk") return l.wk;
                    if (field == "wv") return l.wv;
                    if (field == "wo") return l.wo;
                    if (field == "ffn_norm") return l.ffn_norm;
                    if (field == "w1") return l.w1;
                    if (field == "w2") return l.w2;
                }
            }
        }
        throw InvalidConfig("unknown parameter name: " + name);
    }

private:
    static void fill_normal(Rng& rng, Tensor& t, double std) {
        for (int64_t i = 0; i < t.size(); i++) t.data()[i] = std * rng.normal();
    }

    static void fill_ones(Tensor& t) { std::fill(t.values().begin(), t.values().end(), 1.0); }

    // Token j is visible from position i when j is not in the future, or
    // when both are prefix positions (the prefix attends bidirectionally).
    static std::shared_ptr<const std::vector<uint8_t>> causal_prefix_mask(int64_t t_total, int64_t n_v) {
        auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(t_total * t_total), 0);
        for (int64_t i = 0; i < t_total; i++)
            for (int64_t j = 0; j < t_total; j++)
                if (j <= i || (i < n_v && j < n_v)) (*mask)[static_cast<size_t>(i * t_total + j)] = 1;
        return mask;
    }

    Tensor apply_block(const DecoderLayer& layer, const Tensor& x,
                       const std::shared_ptr<const std::vector<uint8_t>>& mask) const {
        const int64_t d = cfg_.hidden_dim;
        const int64_t dh = d / cfg_.num_heads;
        Tensor h = rms_norm(x, layer.attn_norm);
        Tensor q = matmul(h, layer.wq);
        Tensor k = matmul(h, layer.wk);
        Tensor v = matmul(h, layer.wv);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(cfg_.num_heads));
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int64_t hh = 0; hh < cfg_.num_heads; hh++) {
            Tensor qh = slice_cols(q, hh * dh, (hh + 1) * dh);
            Tensor kh = slice_cols(k, hh * dh, (hh + 1) * dh);
            Tensor vh = slice_cols(v, hh * dh, (hh + 1) * dh);
            Tensor probs = softmax_rows_masked(scale(matmul_nt(qh, kh), inv_sqrt_dh), mask);
            heads.push_back(matmul(probs, vh));
        }
        Tensor attn_out = matmul(cfg_.num_heads == 1 ? heads[0] : concat_cols(heads), layer.wo);
        Tensor x1 = add(x, attn_out);
        Tensor ffn_out = matmul(silu(matmul(rms_norm(x1, layer.ffn_norm), layer.w1)), layer.w2);
        return add(x1, ffn_out);
    }

    ModelConfig cfg_;
    Tensor tok_emb_, pos_emb_, prefix_proj_, final_norm_, lm_head_;
    std::vector<DecoderLayer> layers_;
};

}  // namespace interlace
