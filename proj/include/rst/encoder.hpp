#pragma once

#include <random>
#include <string>
#include <vector>

#include "rst/graph.hpp"
#include "rst/vocab.hpp"

namespace rst {

struct EncoderConfig {
    int vocab_size = 0;
    int hidden_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int max_len = 128;
    double dropout_rate = 0.0;
    int mask_token_id = Vocabulary::kMask;
    int sep_token_id = Vocabulary::kSep;
    int pad_token_id = Vocabulary::kPad;

    void validate() const {
        if (vocab_size < 5) throw ConfigError("encoder: vocab_size too small");
        if (hidden_dim < 1 || num_layers < 1 || num_heads < 1 || max_len < 1)
            throw ConfigError("encoder: dimensions must be positive");
        if (hidden_dim % num_heads != 0)
            throw ConfigError("encoder: hidden_dim not divisible by num_heads");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("encoder: dropout_rate must be in [0,1)");
        if (mask_token_id == sep_token_id || mask_token_id == pad_token_id ||
            sep_token_id == pad_token_id)
            throw ConfigError("encoder: special token ids must be distinct");
        if (mask_token_id >= vocab_size || sep_token_id >= vocab_size ||
            pad_token_id >= vocab_size || mask_token_id < 0 || sep_token_id < 0 ||
            pad_token_id < 0)
            throw ConfigError("encoder: special token id out of vocabulary range");
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Pre-norm transformer parameters. Parameter count:
//   (vocab_size + max_len) * H                      embeddings
// + num_layers * (12*H^2 + 13*H)                    attention + MLP + norms
// + 2*H                                             final norm
template <typename Real>
struct Encoder {
    using M = Mat<Real>;

    struct Layer {
        M ln1_g, ln1_b;
        M wq, bq, wk, bk, wv, bv, wo, bo;
        M ln2_g, ln2_b;
        M w1, b1, w2, b2;
    };

    EncoderConfig cfg;
    M tok_emb, pos_emb;
    std::vector<Layer> layers;
    M lnf_g, lnf_b;

    // Deterministic enumeration order; the optimizer and the checkpoint
    // format both rely on it.
    template <typename F>
    void visit(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Layer& ly = layers[l];
            f(p + "ln1_g", ly.ln1_g);
            f(p + "ln1_b", ly.ln1_b);
            f(p + "wq", ly.wq);
            f(p + "bq", ly.bq);
            f(p + "wk", ly.wk);
            f(p + "bk", ly.bk);
            f(p + "wv", ly.wv);
            f(p + "bv", ly.bv);
            f(p + "wo", ly.wo);
            f(p + "bo", ly.bo);
            f(p + "ln2_g", ly.ln2_g);
            f(p + "ln2_b", ly.ln2_b);
            f(p + "w1", ly.w1);
            f(p + "b1", ly.b1);
            f(p + "w2", ly.w2);
            f(p + "b2", ly.b2);
        }
        f("lnf_g", lnf_g);
        f("lnf_b", lnf_b);
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<Encoder*>(this)->visit(
            [&](const std::string& n, M& m) { f(n, static_cast<const M&>(m)); });
    }

    long param_count() const {
        long n = 0;
        visit([&](const std::string&, const M& m) { n += m.size(); });
        return n;
    }

    static long expected_param_count(const EncoderConfig& c) {
        const long h = c.hidden_dim;
        return (c.vocab_size + c.max_len) * h + c.num_layers * (12 * h * h + 13 * h) + 2 * h;
    }
};

template <typename Real>
Encoder<Real> new_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(seed, /*phase=*/0xE2Cu));
    const int h = cfg.hidden_dim;
    Encoder<Real> enc;
    enc.cfg = cfg;
    enc.tok_emb = randn<Real>(cfg.vocab_size, h, Real(0.02), rng);
    enc.pos_emb = randn<Real>(cfg.max_len, h, Real(0.02), rng);
    enc.layers.resize(cfg.num_layers);
    for (auto& ly : enc.layers) {
        ly.ln1_g = Mat<Real>::Ones(1, h);
        ly.ln1_b = Mat<Real>::Zero(1, h);
        ly.wq = glorot<Real>(h, h, rng);
        ly.bq = Mat<Real>::Zero(1, h);
        ly.wk = glorot<Real>(h, h, rng);
        ly.bk = Mat<Real>::Zero(1, h);
        ly.wv = glorot<Real>(h, h, rng);
        ly.bv = Mat<Real>::Zero(1, h);
        ly.wo = glorot<Real>(h, h, rng);
        ly.bo = Mat<Real>::Zero(1, h);
        ly.ln2_g = Mat<Real>::Ones(1, h);
        ly.ln2_b = Mat<Real>::Zero(1, h);
        ly.w1 = glorot<Real>(h, 4 * h, rng);
        ly.b1 = Mat<Real>::Zero(1, 4 * h);
        ly.w2 = glorot<Real>(4 * h, h, rng);
        ly.b2 = Mat<Real>::Zero(1, h);
    }
    enc.lnf_g = Mat<Real>::Ones(1, h);
    enc.lnf_b = Mat<Real>::Zero(1, h);
    return enc;
}

// Row layout of a packed batch: example i owns rows
// [spans[i].offset, spans[i].offset + spans[i].rows).
struct BatchLayout {
    std::vector<Span> spans;
    int total_rows = 0;
};

// Dropout draws come from an explicit engine so a training phase is
// reproducible from its seed; nullptr means inference (no dropout).
struct DropoutCtx {
    std::mt19937_64* rng = nullptr;
    double rate = 0.0;
    bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace detail {

template <typename Real>
NodeId maybe_dropout(Graph<Real>& g, NodeId x, const DropoutCtx& dctx) {
    if (!dctx.active()) return x;
    const auto& v = g.value(x);
    std::bernoulli_distribution keep(1.0 - dctx.rate);
    Mat<Real> mask(v.rows(), v.cols());
    const Real scale = Real(1.0 / (1.0 - dctx.rate));
    for (int i = 0; i < mask.rows(); ++i)
        for (int j = 0; j < mask.cols(); ++j)
            mask(i, j) = keep(*dctx.rng) ? scale : Real(0);
    return g.cmul(x, std::move(mask));
}

}  // namespace detail

// Packed forward over a batch of token-id sequences; returns the final
// hidden states [total_rows x H]. Positions past each span's attn_len are
// embedded but excluded from attention, so padding never perturbs the
// attended region.
template <typename Real>
NodeId encode_packed(Graph<Real>& g, const Encoder<Real>& enc,
                     const std::vector<std::vector<int>>& batch_ids, BatchLayout& layout,
                     const DropoutCtx& dctx = {},
                     const std::vector<int>* attn_lens = nullptr) {
    const EncoderConfig& cfg = enc.cfg;
    layout.spans.clear();
    layout.total_rows = 0;

    std::vector<int> ids;
    std::vector<int> positions;
    for (size_t b = 0; b < batch_ids.size(); ++b) {
        const auto& seq = batch_ids[b];
        if (seq.empty()) throw Error("encode: empty input sequence");
        if (static_cast<int>(seq.size()) > cfg.max_len)
            throw Error("encode: input length " + std::to_string(seq.size()) +
                        " exceeds max_len " + std::to_string(cfg.max_len));
        Span sp;
        sp.offset = layout.total_rows;
        sp.rows = static_cast<int>(seq.size());
        sp.attn_len = attn_lens ? (*attn_lens)[b] : sp.rows;
        if (sp.attn_len < 1 || sp.attn_len > sp.rows)
            throw Error("encode: invalid attention length");
        for (int i = 0; i < sp.rows; ++i) {
            if (seq[i] < 0 || seq[i] >= cfg.vocab_size)
                throw Error("encode: token id " + std::to_string(seq[i]) +
                            " out of vocabulary range");
            ids.push_back(seq[i]);
            positions.push_back(i);
        }
        layout.spans.push_back(sp);
        layout.total_rows += sp.rows;
    }

    NodeId tok = g.rows(g.param(&enc.tok_emb), ids);
    NodeId pos = g.rows(g.param(&enc.pos_emb), positions);
    NodeId x = detail::maybe_dropout(g, g.add(tok, pos), dctx);

    const Real eps = Real(1e-5);
    for (const auto& ly : enc.layers) {
        NodeId n1 = g.layer_norm(x, g.param(&ly.ln1_g), g.param(&ly.ln1_b), eps);
        NodeId q = g.add_row(g.matmul(n1, g.param(&ly.wq)), g.param(&ly.bq));
        NodeId k = g.add_row(g.matmul(n1, g.param(&ly.wk)), g.param(&ly.bk));
        NodeId v = g.add_row(g.matmul(n1, g.param(&ly.wv)), g.param(&ly.bv));
        NodeId att = g.attention(q, k, v, layout.spans, cfg.num_heads);
        NodeId proj = g.add_row(g.matmul(att, g.param(&ly.wo)), g.param(&ly.bo));
        x = g.add(x, detail::maybe_dropout(g, proj, dctx));

        NodeId n2 = g.layer_norm(x, g.param(&ly.ln2_g), g.param(&ly.ln2_b), eps);
        NodeId hid = g.gelu(g.add_row(g.matmul(n2, g.param(&ly.w1)), g.param(&ly.b1)));
        NodeId out = g.add_row(g.matmul(hid, g.param(&ly.w2)), g.param(&ly.b2));
        x = g.add(x, detail::maybe_dropout(g, out, dctx));
    }
    return g.layer_norm(x, g.param(&enc.lnf_g), g.param(&enc.lnf_b), eps);
}

// Single-sequence contract: hidden state per token plus the pooled
// (first-position) representation.
template <typename Real>
struct EncoderOutput {
    Mat<Real> token_states;
    Mat<Real> pooled;  // 1 x H
};

template <typename Real>
EncoderOutput<Real> encode(const Encoder<Real>& enc, const std::vector<int>& ids,
                           int attn_len = -1) {
    Graph<Real> g(/*recording=*/false);
    BatchLayout layout;
    std::vector<int> lens{attn_len < 0 ? static_cast<int>(ids.size()) : attn_len};
    NodeId h = encode_packed(g, enc, {ids}, layout, DropoutCtx{}, &lens);
    EncoderOutput<Real> out;
    out.token_states = g.value(h);
    out.pooled = out.token_states.row(0);
    return out;
}

}  // namespace rst
