#pragma once

#include <vector>

#include "rst/model.hpp"

namespace rst {

// Joint-objective coefficients. The composition is an unweighted sum by
// default; per-term coefficients exist for ablation and dataset tuning.
struct LossWeights {
    double coef_wu = 1.0;
    double coef_suff = 1.0;
    double coef_comp = 1.0;
    double coef_sparsity = 1.0;
    double coef_continuity = 1.0;

    void validate() const {
        if (coef_wu < 0 || coef_suff < 0 || coef_comp < 0 || coef_sparsity < 0 ||
            coef_continuity < 0)
            throw ConfigError("loss coefficients must be non-negative");
    }
};

struct LossOptions {
    // Rationale term of the supervised/pseudo losses: token-summed per
    // example (literal reading) or token-averaged.
    bool rationale_token_mean = false;
    // Rationale confidence weights normalized over all (example, token)
    // pairs in the batch, or within each example.
    bool rationale_weights_per_example = false;
    // Soft coherence terms divided by document length; unnormalized mode
    // matches the hard-mask counting form exactly.
    bool coherence_length_normalized = true;
};

// ---------------------------------------------------------------------------
// Batch confidence weights
// ---------------------------------------------------------------------------

struct BatchWeights {
    std::vector<double> task_weights;                 // per example
    std::vector<std::vector<double>> rationale_weights;  // per example, per token
};

// Teacher-confidence weights normalized across the batch: task weights sum
// to one over examples; rationale weights sum to one over all (example,
// token) pairs (or per example when configured). Optional per-example
// multipliers (class rebalancing) apply before normalization.
inline BatchWeights compute_batch_weights(const std::vector<const PseudoLabeledExample*>& batch,
                                          const LossOptions& opts = {},
                                          const std::vector<double>* task_multipliers = nullptr) {
    if (batch.empty()) throw Error("compute_batch_weights: empty batch");
    if (task_multipliers && task_multipliers->size() != batch.size())
        throw Error("compute_batch_weights: multiplier/batch misalignment");

    BatchWeights w;
    double task_total = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        double c = batch[i]->y_confidence;
        if (task_multipliers) c *= (*task_multipliers)[i];
        w.task_weights.push_back(c);
        task_total += c;
    }
    if (task_total <= 0) throw Error("compute_batch_weights: non-positive confidence mass");
    for (double& t : w.task_weights) t /= task_total;

    w.rationale_weights.resize(batch.size());
    if (opts.rationale_weights_per_example) {
        for (size_t i = 0; i < batch.size(); ++i) {
            double total = 0;
            for (double c : batch[i]->r_confidences) total += c;
            const double per_example = 1.0 / static_cast<double>(batch.size());
            for (double c : batch[i]->r_confidences)
                w.rationale_weights[i].push_back(per_example * c / total);
        }
    } else {
        double total = 0;
        for (const auto* ex : batch)
            for (double c : ex->r_confidences) total += c;
        if (total <= 0) throw Error("compute_batch_weights: non-positive rationale mass");
        for (size_t i = 0; i < batch.size(); ++i)
            for (double c : batch[i]->r_confidences)
                w.rationale_weights[i].push_back(c / total);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Supervised multi-task loss (teacher phase)
// ---------------------------------------------------------------------------

struct SupervisedExample {
    const ModelInput* input = nullptr;
    int label = 0;
    const RationaleMask* rationale = nullptr;  // over full tokens; region prefix is used
};

template <typename Real>
struct SupervisedLossHandles {
    NodeId total;
    double task_term = 0;       // mean over batch of -log p(y|x)
    double rationale_term = 0;  // mean over batch of -sum_j log p(r_j|x)
    double value = 0;
};

// Mean over the batch of [-log p(y|x) - sum_j log p(r_j|x)], rationale term
// over document-region tokens only.
template <typename Real>
SupervisedLossHandles<Real> supervised_loss(Graph<Real>& g, const MultiTaskModel<Real>& model,
                                            const std::vector<SupervisedExample>& batch,
                                            const LossOptions& opts = {},
                                            const DropoutCtx& dctx = {}) {
    if (batch.empty()) throw Error("supervised_loss: empty batch");
    std::vector<const ModelInput*> inputs;
    std::vector<int> labels;
    for (const auto& ex : batch) {
        if (!ex.input || !ex.rationale) throw Error("supervised_loss: missing gold fields");
        if (static_cast<int>(ex.rationale->values.size()) < ex.input->doc_len)
            throw Error("supervised_loss: rationale shorter than document region");
        inputs.push_back(ex.input);
        labels.push_back(ex.label);
    }

    ForwardHandles h = forward_packed(g, model, inputs, dctx);

    const Real inv_b = Real(1) / static_cast<Real>(batch.size());
    NodeId task = g.cross_entropy(h.task_logits, labels,
                                  std::vector<Real>(batch.size(), inv_b));

    std::vector<int> token_labels;
    std::vector<Real> token_weights;
    for (size_t i = 0; i < batch.size(); ++i) {
        const int n = inputs[i]->doc_len;
        const Real wt = opts.rationale_token_mean ? inv_b / static_cast<Real>(n) : inv_b;
        for (int j = 0; j < n; ++j) {
            token_labels.push_back(batch[i].rationale->values[j] >= 0.5 ? 1 : 0);
            token_weights.push_back(wt);
        }
    }
    NodeId rat = g.cross_entropy(h.rat_logits, std::move(token_labels),
                                 std::move(token_weights));

    SupervisedLossHandles<Real> out;
    out.total = g.weighted_sum({task, rat}, {Real(1), Real(1)});
    out.task_term = static_cast<double>(g.value(task)(0, 0));
    out.rationale_term = static_cast<double>(g.value(rat)(0, 0));
    out.value = static_cast<double>(g.value(out.total)(0, 0));
    return out;
}

// ---------------------------------------------------------------------------
// Student losses on pseudo-labeled data
// ---------------------------------------------------------------------------

using PseudoBatch = std::vector<const PseudoLabeledExample*>;

// sum_i w_y,i * (-log p(y^T_i | u_i)) + sum_{i,j} w_r,ij * (-log p(r^T_ij | u_i))
// over a forward on the raw inputs (already computed by the caller).
template <typename Real>
NodeId weighted_pseudo_loss_on(Graph<Real>& g, const ForwardHandles& h, const PseudoBatch& batch,
                               const BatchWeights& weights) {
    if (weights.task_weights.size() != batch.size() ||
        weights.rationale_weights.size() != batch.size())
        throw Error("weighted_pseudo_loss: weight/batch misalignment");
    std::vector<int> labels;
    std::vector<Real> wy;
    for (size_t i = 0; i < batch.size(); ++i) {
        labels.push_back(batch[i]->y_pseudo);
        wy.push_back(static_cast<Real>(weights.task_weights[i]));
    }
    NodeId task = g.cross_entropy(h.task_logits, std::move(labels), std::move(wy));

    std::vector<int> token_labels;
    std::vector<Real> wr;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& ex = *batch[i];
        if (weights.rationale_weights[i].size() != ex.r_pseudo.values.size())
            throw Error("weighted_pseudo_loss: rationale weight misalignment");
        for (size_t j = 0; j < ex.r_pseudo.values.size(); ++j) {
            token_labels.push_back(ex.r_pseudo.values[j] >= 0.5 ? 1 : 0);
            wr.push_back(static_cast<Real>(weights.rationale_weights[i][j]));
        }
    }
    NodeId rat = g.cross_entropy(h.rat_logits, std::move(token_labels), std::move(wr));
    return g.weighted_sum({task, rat}, {Real(1), Real(1)});
}

template <typename Real>
NodeId weighted_pseudo_loss(Graph<Real>& g, const MultiTaskModel<Real>& student,
                            const PseudoBatch& batch, const BatchWeights& weights,
                            const DropoutCtx& dctx = {}) {
    std::vector<const ModelInput*> inputs;
    for (const auto* ex : batch) inputs.push_back(&ex->input);
    ForwardHandles h = forward_packed(g, student, inputs, dctx);
    return weighted_pseudo_loss_on(g, h, batch, weights);
}

// Mean over batch of -log p(y^T | u (*) r^T): the teacher looked at the
// full input, the student must reach the same label from the rationale
// tokens alone. Gradients reach only the student.
template <typename Real>
NodeId sufficiency_loss(Graph<Real>& g, const MultiTaskModel<Real>& student,
                        const PseudoBatch& batch, const DropoutCtx& dctx = {}) {
    if (batch.empty()) throw Error("sufficiency_loss: empty batch");
    std::vector<ModelInput> masked;
    masked.reserve(batch.size());
    for (const auto* ex : batch)
        masked.push_back(mask_keep_rationale(ex->input, ex->r_pseudo, student));
    std::vector<const ModelInput*> inputs;
    std::vector<int> labels;
    for (size_t i = 0; i < batch.size(); ++i) {
        inputs.push_back(&masked[i]);
        labels.push_back(batch[i]->y_pseudo);
    }
    ForwardHandles h = forward_packed(g, student, inputs, dctx);
    const Real inv_b = Real(1) / static_cast<Real>(batch.size());
    return g.cross_entropy(h.task_logits, std::move(labels),
                           std::vector<Real>(batch.size(), inv_b));
}

// Mean over batch of -H(p(y | u (*) (1 - r^T))): minimizing drives the
// student toward maximal uncertainty without the rationale. Bounded in
// [-ln K, 0].
template <typename Real>
NodeId completeness_loss(Graph<Real>& g, const MultiTaskModel<Real>& student,
                         const PseudoBatch& batch, const DropoutCtx& dctx = {}) {
    if (batch.empty()) throw Error("completeness_loss: empty batch");
    std::vector<ModelInput> masked;
    masked.reserve(batch.size());
    for (const auto* ex : batch)
        masked.push_back(mask_drop_rationale(ex->input, ex->r_pseudo, student));
    std::vector<const ModelInput*> inputs;
    for (const auto& in : masked) inputs.push_back(&in);
    ForwardHandles h = forward_packed(g, student, inputs, dctx);
    const Real inv_b = Real(1) / static_cast<Real>(batch.size());
    return g.neg_entropy(h.task_logits, std::vector<Real>(batch.size(), inv_b));
}

// Plain-value coherence on one probability sequence; the unnormalized form
// on hard masks counts |r| plus the number of 0/1 boundaries exactly.
inline double coherence_value(const std::vector<double>& probs, double coef_sparsity = 1.0,
                              double coef_continuity = 1.0, bool length_normalized = false) {
    if (probs.empty()) throw Error("coherence_loss: empty sequence");
    double sparsity = 0, continuity = 0;
    for (double p : probs) sparsity += p;
    for (size_t j = 1; j < probs.size(); ++j) continuity += std::abs(probs[j] - probs[j - 1]);
    const double norm = length_normalized ? 1.0 / static_cast<double>(probs.size()) : 1.0;
    return (coef_sparsity * sparsity + coef_continuity * continuity) * norm;
}

// Graph coherence over a batch's rationale probabilities (shares the raw
// forward with the pseudo loss).
template <typename Real>
NodeId coherence_loss_on(Graph<Real>& g, const ForwardHandles& h, const LossWeights& lw,
                         const LossOptions& opts) {
    NodeId probs = g.softmax_rows(h.rat_logits);
    NodeId p1 = g.col(probs, 1);
    return g.coherence(p1, h.doc_spans, static_cast<Real>(lw.coef_sparsity),
                       static_cast<Real>(lw.coef_continuity), opts.coherence_length_normalized);
}

// ---------------------------------------------------------------------------
// Joint student objective
// ---------------------------------------------------------------------------

struct JointLossResult {
    NodeId total;
    // Coefficient-weighted contributions; they sum to `value`.
    double wu = 0, suff = 0, comp = 0, co = 0;
    double value = 0;
};

// L_u = coef_wu * L_wu + coef_suff * L_suff + coef_comp * L_comp + L_co.
// Terms with zero coefficient are skipped entirely (their forwards are not
// built) and report a zero contribution.
template <typename Real>
JointLossResult joint_student_loss(Graph<Real>& g, const MultiTaskModel<Real>& student,
                                   const PseudoBatch& batch, const BatchWeights& weights,
                                   const LossWeights& lw, const LossOptions& opts = {},
                                   const DropoutCtx& dctx = {}) {
    lw.validate();
    if (batch.empty()) throw Error("joint_student_loss: empty batch");

    std::vector<NodeId> terms;
    std::vector<Real> coefs;
    JointLossResult out;

    const bool need_wu = lw.coef_wu > 0;
    const bool need_co = lw.coef_sparsity > 0 || lw.coef_continuity > 0;
    if (need_wu || need_co) {
        std::vector<const ModelInput*> inputs;
        for (const auto* ex : batch) inputs.push_back(&ex->input);
        ForwardHandles h = forward_packed(g, student, inputs, dctx);
        if (need_wu) {
            NodeId wu = weighted_pseudo_loss_on(g, h, batch, weights);
            out.wu = lw.coef_wu * static_cast<double>(g.value(wu)(0, 0));
            terms.push_back(wu);
            coefs.push_back(static_cast<Real>(lw.coef_wu));
        }
        if (need_co) {
            NodeId co = coherence_loss_on(g, h, lw, opts);
            out.co = static_cast<double>(g.value(co)(0, 0));
            terms.push_back(co);
            coefs.push_back(Real(1));
        }
    }

    if (lw.coef_suff > 0) {
        NodeId suff = sufficiency_loss(g, student, batch, dctx);
        out.suff = lw.coef_suff * static_cast<double>(g.value(suff)(0, 0));
        terms.push_back(suff);
        coefs.push_back(static_cast<Real>(lw.coef_suff));
    }
    if (lw.coef_comp > 0) {
        NodeId comp = completeness_loss(g, student, batch, dctx);
        out.comp = lw.coef_comp * static_cast<double>(g.value(comp)(0, 0));
        terms.push_back(comp);
        coefs.push_back(static_cast<Real>(lw.coef_comp));
    }

    if (terms.empty()) {
        Mat<Real> zero(1, 1);
        zero(0, 0) = Real(0);
        out.total = g.constant(std::move(zero));
    } else {
        out.total = g.weighted_sum(std::move(terms), std::move(coefs));
    }
    out.value = static_cast<double>(g.value(out.total)(0, 0));
    return out;
}

}  // namespace rst
