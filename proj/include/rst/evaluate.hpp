#pragma once

#include <vector>

#include "rst/losses.hpp"
#include "rst/metrics.hpp"

namespace rst {

struct EvalFlags {
    Averaging task_averaging = Averaging::macro;
    Averaging token_averaging = Averaging::micro;
};

template <typename Real>
struct EvalResult {
    MetricReport report;
    double total_loss = 0;      // mean supervised multi-task loss
    double task_loss = 0;       // its task term
    double rationale_loss = 0;  // its rationale term
    std::vector<int> predictions;
    std::vector<RationaleMask> pred_masks;  // full token length, zero-padded past region
};

struct ValidationLoss {
    double total = 0;
    double task = 0;
    double rationale = 0;
};

// Supervised loss terms only; the cheap path for per-epoch early stopping.
template <typename Real>
ValidationLoss validation_loss(const MultiTaskModel<Real>& model, const Corpus& corpus,
                               const Vocabulary& vocab, int batch_size = 32,
                               const LossOptions& opts = {}) {
    if (corpus.documents.empty()) throw Error("validation_loss: empty corpus");
    const int n = static_cast<int>(corpus.documents.size());
    double task_sum = 0, rat_sum = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int bs = std::min(batch_size, n - start);
        std::vector<ModelInput> inputs;
        inputs.reserve(bs);
        for (int i = 0; i < bs; ++i) {
            const Document& d = corpus.documents[start + i];
            if (!d.gold_label || !d.gold_rationale)
                throw Error("validation_loss: document " + d.id + " lacks gold fields");
            inputs.push_back(build_input(d, vocab, model.encoder.cfg.max_len));
        }
        std::vector<const ModelInput*> batch;
        for (const auto& in : inputs) batch.push_back(&in);
        Graph<Real> g(/*recording=*/false);
        ForwardHandles h = forward_packed(g, model, batch);
        const auto& task_probs = g.value(g.softmax_rows(h.task_logits));
        const auto& rat_probs = g.value(g.softmax_rows(h.rat_logits));
        for (int i = 0; i < bs; ++i) {
            const Document& d = corpus.documents[start + i];
            task_sum += -safe_log(static_cast<double>(task_probs(i, *d.gold_label)));
            const Span& ds = h.doc_spans[i];
            double doc_rat = 0;
            for (int j = 0; j < ds.rows; ++j) {
                const double p1 = static_cast<double>(rat_probs(ds.offset + j, 1));
                const bool gold_on = d.gold_rationale->values[j] >= 0.5;
                doc_rat += -safe_log(gold_on ? p1 : 1.0 - p1);
            }
            rat_sum += opts.rationale_token_mean ? doc_rat / ds.rows : doc_rat;
        }
    }
    ValidationLoss out;
    out.task = task_sum / n;
    out.rationale = rat_sum / n;
    out.total = out.task + out.rationale;
    return out;
}

// Deterministic batched evaluation against gold labels and rationales;
// dropout disabled.
template <typename Real>
EvalResult<Real> evaluate_model(const MultiTaskModel<Real>& model, const Corpus& corpus,
                                const Vocabulary& vocab, int batch_size = 32,
                                const EvalFlags& flags = {}, const LossOptions& opts = {}) {
    if (corpus.documents.empty()) throw Error("evaluate_model: empty corpus");
    EvalResult<Real> out;
    std::vector<int> golds;
    std::vector<RationaleMask> gold_masks;
    std::vector<std::vector<std::string>> cand_text, ref_text;

    const int n = static_cast<int>(corpus.documents.size());
    double task_loss_sum = 0, rat_loss_sum = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int bs = std::min(batch_size, n - start);
        std::vector<ModelInput> inputs;
        inputs.reserve(bs);
        for (int i = 0; i < bs; ++i) {
            const Document& d = corpus.documents[start + i];
            if (!d.gold_label || !d.gold_rationale)
                throw Error("evaluate_model: document " + d.id + " lacks gold fields");
            inputs.push_back(build_input(d, vocab, model.encoder.cfg.max_len));
        }
        std::vector<const ModelInput*> batch;
        for (const auto& in : inputs) batch.push_back(&in);

        Graph<Real> g(/*recording=*/false);
        ForwardHandles h = forward_packed(g, model, batch);
        const auto& task_probs = g.value(g.softmax_rows(h.task_logits));
        const auto& rat_probs = g.value(g.softmax_rows(h.rat_logits));

        for (int i = 0; i < bs; ++i) {
            const Document& d = corpus.documents[start + i];
            int pred = 0;
            for (int k = 1; k < model.num_classes; ++k)
                if (task_probs(i, k) > task_probs(i, pred)) pred = k;
            out.predictions.push_back(pred);
            golds.push_back(*d.gold_label);
            task_loss_sum += -safe_log(static_cast<double>(task_probs(i, *d.gold_label)));

            RationaleMask pm = RationaleMask::zeros(d.tokens.size());
            const Span& ds = h.doc_spans[i];
            double doc_rat_loss = 0;
            for (int j = 0; j < ds.rows; ++j) {
                const double p1 = static_cast<double>(rat_probs(ds.offset + j, 1));
                pm.values[j] = p1 >= 0.5 ? 1.0 : 0.0;
                const bool gold_on = d.gold_rationale->values[j] >= 0.5;
                doc_rat_loss += -safe_log(gold_on ? p1 : 1.0 - p1);
            }
            rat_loss_sum += opts.rationale_token_mean ? doc_rat_loss / ds.rows : doc_rat_loss;

            std::vector<std::string> cand, ref;
            for (size_t j = 0; j < d.tokens.size(); ++j) {
                if (pm.values[j] >= 0.5) cand.push_back(d.tokens[j]);
                if (d.gold_rationale->values[j] >= 0.5) ref.push_back(d.tokens[j]);
            }
            cand_text.push_back(std::move(cand));
            ref_text.push_back(std::move(ref));
            gold_masks.push_back(*d.gold_rationale);
            out.pred_masks.push_back(std::move(pm));
        }
    }

    out.task_loss = task_loss_sum / n;
    out.rationale_loss = rat_loss_sum / n;
    out.total_loss = out.task_loss + out.rationale_loss;

    out.report.task_f1 =
        task_f1(out.predictions, golds, model.num_classes, flags.task_averaging);
    const TokenPRF prf = token_prf(out.pred_masks, gold_masks, flags.token_averaging);
    out.report.token_precision = prf.precision;
    out.report.token_recall = prf.recall;
    out.report.token_f1 = prf.f1;
    out.report.bleu2 = bleu2(cand_text, ref_text);
    out.report.rationale_pct = rationale_pct(out.pred_masks);
    for (int gl : golds) ++out.report.support[gl];
    return out;
}

}  // namespace rst
