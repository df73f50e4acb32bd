#pragma once

#include <random>
#include <string>
#include <vector>

#include "rst/encoder.hpp"

namespace rst {

// Shared encoder with two softmax heads: instance-level task prediction
// (hidden -> K) and token-level rationale prediction (hidden -> 2). Teacher
// and student are two instances of this one type.
template <typename Real>
struct MultiTaskModel {
    using M = Mat<Real>;

    Encoder<Real> encoder;
    int num_classes = 0;
    M task_w, task_b;
    M rat_w, rat_b;

    template <typename F>
    void visit(F&& f) {
        encoder.visit(f);
        f("task_w", task_w);
        f("task_b", task_b);
        f("rat_w", rat_w);
        f("rat_b", rat_b);
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<MultiTaskModel*>(this)->visit(
            [&](const std::string& n, M& m) { f(n, static_cast<const M&>(m)); });
    }

    long param_count() const {
        long n = 0;
        visit([&](const std::string&, const M& m) { n += m.size(); });
        return n;
    }
};

template <typename Real>
MultiTaskModel<Real> new_model(const EncoderConfig& cfg, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    MultiTaskModel<Real> m;
    m.encoder = new_encoder<Real>(cfg, seed);
    m.num_classes = num_classes;
    std::mt19937_64 rng(derive_seed(seed, /*phase=*/0x4EADu));
    m.task_w = glorot<Real>(cfg.hidden_dim, num_classes, rng);
    m.task_b = Mat<Real>::Zero(1, num_classes);
    m.rat_w = glorot<Real>(cfg.hidden_dim, 2, rng);
    m.rat_b = Mat<Real>::Zero(1, 2);
    return m;
}

// Handles into a packed-batch forward. task_logits is [B x K]; rat_logits
// stacks every example's document region ([sum doc_len x 2]) and doc_spans
// indexes into those rows. Rationale logits exist only for document
// positions; separator and query are never targets.
struct ForwardHandles {
    NodeId task_logits;
    NodeId rat_logits;
    std::vector<Span> doc_spans;
    BatchLayout layout;
};

template <typename Real>
ForwardHandles forward_packed(Graph<Real>& g, const MultiTaskModel<Real>& model,
                              const std::vector<const ModelInput*>& batch,
                              const DropoutCtx& dctx = {}) {
    std::vector<std::vector<int>> ids;
    ids.reserve(batch.size());
    for (const ModelInput* in : batch) ids.push_back(in->ids);

    ForwardHandles h;
    NodeId states = encode_packed(g, model.encoder, ids, h.layout, dctx);

    std::vector<int> pooled_idx;
    std::vector<int> doc_idx;
    int doc_rows = 0;
    for (size_t b = 0; b < batch.size(); ++b) {
        const Span& sp = h.layout.spans[b];
        pooled_idx.push_back(sp.offset);  // first-position pooling
        Span ds{doc_rows, batch[b]->doc_len, batch[b]->doc_len};
        for (int j = 0; j < batch[b]->doc_len; ++j) doc_idx.push_back(sp.offset + j);
        doc_rows += batch[b]->doc_len;
        h.doc_spans.push_back(ds);
    }

    NodeId pooled = g.rows(states, pooled_idx);
    h.task_logits = g.add_row(g.matmul(pooled, g.param(&model.task_w)), g.param(&model.task_b));
    NodeId doc_states = g.rows(states, doc_idx);
    h.rat_logits =
        g.add_row(g.matmul(doc_states, g.param(&model.rat_w)), g.param(&model.rat_b));
    return h;
}

struct TaskDistribution {
    std::vector<double> probs;

    int argmax() const {
        int best = 0;
        for (int k = 1; k < static_cast<int>(probs.size()); ++k)
            if (probs[k] > probs[best]) best = k;  // ties keep the lowest index
        return best;
    }
};

struct RationaleDistribution {
    std::vector<double> probs;  // P(r_j = 1) per document-region token
};

// Inference forward for one input; dropout disabled.
template <typename Real>
std::pair<TaskDistribution, RationaleDistribution> forward(const MultiTaskModel<Real>& model,
                                                           const ModelInput& input) {
    Graph<Real> g(/*recording=*/false);
    ForwardHandles h = forward_packed(g, model, {&input});
    const auto task = g.softmax_rows(h.task_logits);
    const auto rat = g.softmax_rows(h.rat_logits);
    TaskDistribution td;
    for (int k = 0; k < model.num_classes; ++k)
        td.probs.push_back(static_cast<double>(g.value(task)(0, k)));
    RationaleDistribution rd;
    for (int j = 0; j < input.doc_len; ++j)
        rd.probs.push_back(static_cast<double>(g.value(rat)(j, 1)));
    return {td, rd};
}

// Teacher-predicted labels with the teacher's own confidence in them.
struct PseudoLabeledExample {
    Document doc;
    ModelInput input;
    int y_pseudo = 0;
    double y_confidence = 0.0;
    RationaleMask r_pseudo;              // hard, over the document region
    std::vector<double> r_confidences;   // P(r_j = r_pseudo_j)

    // Prediction mask padded with zeros over truncated-away tail tokens.
    RationaleMask full_length_mask() const {
        RationaleMask m = RationaleMask::zeros(doc.tokens.size());
        for (size_t j = 0; j < r_pseudo.values.size(); ++j) m.values[j] = r_pseudo.values[j];
        return m;
    }
};

enum class PseudoLabelMode { argmax, sample };

// Dropout stays off here: pseudo-labels are a deterministic function of the
// teacher unless sampling mode is requested explicitly.
template <typename Real>
PseudoLabeledExample pseudo_label(const MultiTaskModel<Real>& teacher, const Document& doc,
                                  const Vocabulary& vocab,
                                  PseudoLabelMode mode = PseudoLabelMode::argmax,
                                  std::mt19937_64* rng = nullptr) {
    PseudoLabeledExample ex;
    ex.doc = doc;
    ex.input = build_input(doc, vocab, teacher.encoder.cfg.max_len);
    auto [task, rat] = forward(teacher, ex.input);

    if (mode == PseudoLabelMode::sample) {
        if (!rng) throw Error("pseudo_label: sampling mode requires an RNG");
        std::discrete_distribution<int> pick(task.probs.begin(), task.probs.end());
        ex.y_pseudo = pick(*rng);
    } else {
        ex.y_pseudo = task.argmax();
    }
    ex.y_confidence = task.probs[ex.y_pseudo];

    ex.r_pseudo.kind = MaskKind::hard;
    for (double p1 : rat.probs) {
        int r;
        if (mode == PseudoLabelMode::sample) {
            r = std::bernoulli_distribution(p1)(*rng) ? 1 : 0;
        } else {
            r = p1 >= 0.5 ? 1 : 0;  // ties resolve to 1
        }
        ex.r_pseudo.values.push_back(r);
        ex.r_confidences.push_back(r == 1 ? p1 : 1.0 - p1);
    }
    return ex;
}

namespace detail {

template <typename Real>
ModelInput mask_document_region(const ModelInput& input, const std::vector<double>& r,
                                const MultiTaskModel<Real>& model, bool keep_rationale) {
    if (static_cast<int>(r.size()) != input.doc_len)
        throw Error("rationale mask length " + std::to_string(r.size()) +
                    " != document region length " + std::to_string(input.doc_len));
    ModelInput out = input;
    const int mask_id = model.encoder.cfg.mask_token_id;
    for (int j = 0; j < input.doc_len; ++j) {
        const bool in_rationale = r[j] >= 0.5;
        if (in_rationale != keep_rationale) out.ids[j] = mask_id;
    }
    return out;
}

}  // namespace detail

// u (*) r: positions outside the rationale become [MASK]; rationale,
// separator and query positions pass through.
template <typename Real>
ModelInput mask_keep_rationale(const ModelInput& input, const RationaleMask& r,
                               const MultiTaskModel<Real>& model) {
    return detail::mask_document_region(input, r.values, model, /*keep_rationale=*/true);
}

// u (*) (1-r): rationale positions become [MASK]; the rest pass through.
template <typename Real>
ModelInput mask_drop_rationale(const ModelInput& input, const RationaleMask& r,
                               const MultiTaskModel<Real>& model) {
    return detail::mask_document_region(input, r.values, model, /*keep_rationale=*/false);
}

template <typename Real>
void copy_into_teacher(const MultiTaskModel<Real>& student, MultiTaskModel<Real>& teacher) {
    if (!(student.encoder.cfg == teacher.encoder.cfg) ||
        student.num_classes != teacher.num_classes)
        throw Error("copy_into_teacher: configuration mismatch");
    teacher = student;  // value semantics; no storage aliasing afterwards
}

}  // namespace rst
