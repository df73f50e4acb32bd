#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "rst/evaluate.hpp"
#include "rst/optim.hpp"

namespace rst {

enum class SelectionMetric { validation_total_loss, validation_rationale_loss };

inline std::string to_string(SelectionMetric m) {
    return m == SelectionMetric::validation_total_loss ? "validation_total_loss"
                                                       : "validation_rationale_loss";
}

inline SelectionMetric selection_metric_from_string(const std::string& s) {
    if (s == "validation_total_loss") return SelectionMetric::validation_total_loss;
    if (s == "validation_rationale_loss") return SelectionMetric::validation_rationale_loss;
    throw ConfigError("unknown selection metric '" + s + "'");
}

struct SelfTrainConfig {
    int max_iterations = 15;
    int teacher_epochs = 20;
    int student_epochs = 1;
    int batch_size = 8;
    double learning_rate = 3e-5;
    LossWeights loss_weights;
    LossOptions loss_options;
    bool refit_teacher_each_iter = true;
    bool class_rebalance = false;
    int early_stop_patience = 3;
    SelectionMetric selection_metric = SelectionMetric::validation_total_loss;
    std::uint64_t seed = 1;

    // Confidence re-weighting of the pseudo loss; off means uniform weights.
    bool reweight_task = true;
    bool reweight_rationale = true;
    // Student starts from the current teacher unless cold-started.
    bool cold_start_student = false;
    bool pseudo_label_sampling = false;

    void validate() const {
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
        if (teacher_epochs < 0 || student_epochs < 0)
            throw ConfigError("epoch counts must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (learning_rate < 0) throw ConfigError("learning_rate must be non-negative");
        if (early_stop_patience < 0) throw ConfigError("patience must be >= 0");
        loss_weights.validate();
    }
};

struct IterationRecord {
    int iteration = 0;
    bool teacher_refit = false;
    double teacher_train_loss = 0;
    double teacher_val_loss = 0;
    int teacher_epochs_run = 0;
    double student_total = 0;
    double student_wu = 0, student_suff = 0, student_comp = 0, student_co = 0;
    double val_task_f1 = 0;
    double val_token_precision = 0, val_token_recall = 0, val_token_f1 = 0;
    double val_total_loss = 0;
    double val_rationale_loss = 0;
    double rationale_pct = 0;  // on validation predictions
    std::vector<long> pseudo_class_histogram;

    double selection_value(SelectionMetric m) const {
        return m == SelectionMetric::validation_total_loss ? val_total_loss
                                                           : val_rationale_loss;
    }
};

inline void to_json(nlohmann::json& j, const IterationRecord& r) {
    j = {{"iteration", r.iteration},
         {"teacher_refit", r.teacher_refit},
         {"teacher_train_loss", r.teacher_train_loss},
         {"teacher_val_loss", r.teacher_val_loss},
         {"teacher_epochs_run", r.teacher_epochs_run},
         {"student_total", r.student_total},
         {"student_wu", r.student_wu},
         {"student_suff", r.student_suff},
         {"student_comp", r.student_comp},
         {"student_co", r.student_co},
         {"val_task_f1", r.val_task_f1},
         {"val_token_precision", r.val_token_precision},
         {"val_token_recall", r.val_token_recall},
         {"val_token_f1", r.val_token_f1},
         {"val_total_loss", r.val_total_loss},
         {"val_rationale_loss", r.val_rationale_loss},
         {"rationale_pct", r.rationale_pct},
         {"pseudo_class_histogram", r.pseudo_class_histogram}};
}

inline void from_json(const nlohmann::json& j, IterationRecord& r) {
    j.at("iteration").get_to(r.iteration);
    j.at("teacher_refit").get_to(r.teacher_refit);
    j.at("teacher_train_loss").get_to(r.teacher_train_loss);
    j.at("teacher_val_loss").get_to(r.teacher_val_loss);
    j.at("teacher_epochs_run").get_to(r.teacher_epochs_run);
    j.at("student_total").get_to(r.student_total);
    j.at("student_wu").get_to(r.student_wu);
    j.at("student_suff").get_to(r.student_suff);
    j.at("student_comp").get_to(r.student_comp);
    j.at("student_co").get_to(r.student_co);
    j.at("val_task_f1").get_to(r.val_task_f1);
    j.at("val_token_precision").get_to(r.val_token_precision);
    j.at("val_token_recall").get_to(r.val_token_recall);
    j.at("val_token_f1").get_to(r.val_token_f1);
    j.at("val_total_loss").get_to(r.val_total_loss);
    j.at("val_rationale_loss").get_to(r.val_rationale_loss);
    j.at("rationale_pct").get_to(r.rationale_pct);
    j.at("pseudo_class_histogram").get_to(r.pseudo_class_histogram);
}

namespace phase {
inline constexpr std::uint64_t kTeacherInit = 1;
inline constexpr std::uint64_t kTeacherFit = 2;
inline constexpr std::uint64_t kPseudoLabel = 3;
inline constexpr std::uint64_t kStudentFit = 4;
inline constexpr std::uint64_t kStudentInit = 5;
}  // namespace phase

// ---------------------------------------------------------------------------
// Teacher phase: minibatch Adam on the supervised loss with early stopping
// on validation loss; best-on-validation parameters are restored.
// ---------------------------------------------------------------------------

struct TeacherFitReport {
    double final_train_loss = 0;
    double best_val_loss = 0;
    int epochs_run = 0;
};

template <typename Real>
TeacherFitReport fit_teacher(MultiTaskModel<Real>& teacher, const Corpus& labeled,
                             const Corpus& validation, const Vocabulary& vocab,
                             const SelfTrainConfig& config, std::uint64_t iteration = 0) {
    if (labeled.documents.empty()) throw Error("fit_teacher: empty labeled corpus");
    config.validate();

    std::vector<ModelInput> inputs;
    std::vector<SupervisedExample> examples;
    inputs.reserve(labeled.documents.size());
    for (const Document& d : labeled.documents) {
        if (!d.gold_label || !d.gold_rationale)
            throw Error("fit_teacher: document " + d.id + " lacks gold fields");
        inputs.push_back(build_input(d, vocab, teacher.encoder.cfg.max_len));
    }
    for (size_t i = 0; i < labeled.documents.size(); ++i)
        examples.push_back({&inputs[i], *labeled.documents[i].gold_label,
                            &*labeled.documents[i].gold_rationale});

    std::mt19937_64 rng(derive_seed(config.seed, iteration, phase::kTeacherFit));
    Adam<Real> opt(config.learning_rate);
    DropoutCtx dctx{&rng, teacher.encoder.cfg.dropout_rate};

    auto val_loss = [&]() {
        return validation_loss(teacher, validation, vocab, config.batch_size,
                               config.loss_options)
            .total;
    };

    TeacherFitReport report;
    MultiTaskModel<Real> best = teacher;
    report.best_val_loss = val_loss();
    int since_best = 0;

    std::vector<int> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.teacher_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<SupervisedExample> batch;
            for (size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
                batch.push_back(examples[order[i]]);
            Graph<Real> g;
            auto loss = supervised_loss(g, teacher, batch, config.loss_options, dctx);
            if (!std::isfinite(loss.value))
                throw Error("fit_teacher: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch offset " + std::to_string(start) + " (task term " +
                            std::to_string(loss.task_term) + ", rationale term " +
                            std::to_string(loss.rationale_term) + ")");
            g.backward(loss.total);
            opt.step(teacher, g);
            epoch_loss += loss.value;
            ++steps;
        }
        report.final_train_loss = steps > 0 ? epoch_loss / steps : 0.0;
        ++report.epochs_run;

        const double vl = val_loss();
        if (vl < report.best_val_loss) {
            report.best_val_loss = vl;
            best = teacher;
            since_best = 0;
        } else if (config.early_stop_patience > 0 &&
                   ++since_best >= config.early_stop_patience) {
            break;
        }
    }
    teacher = best;
    return report;
}

// ---------------------------------------------------------------------------
// Pseudo-labeling phase
// ---------------------------------------------------------------------------

struct PseudoLabelingResult {
    std::vector<PseudoLabeledExample> examples;
    std::vector<long> class_histogram;
};

template <typename Real>
PseudoLabelingResult pseudo_label_corpus(const MultiTaskModel<Real>& teacher,
                                         const Corpus& unlabeled, const Vocabulary& vocab,
                                         const SelfTrainConfig& config,
                                         std::uint64_t iteration = 0) {
    PseudoLabelingResult out;
    out.class_histogram.assign(teacher.num_classes, 0);
    const int n = static_cast<int>(unlabeled.documents.size());
    out.examples.reserve(n);
    std::mt19937_64 rng(derive_seed(config.seed, iteration, phase::kPseudoLabel));
    const bool sample = config.pseudo_label_sampling;

    const int bs = std::max(1, config.batch_size);
    for (int start = 0; start < n; start += bs) {
        const int cur = std::min(bs, n - start);
        std::vector<ModelInput> inputs;
        inputs.reserve(cur);
        for (int i = 0; i < cur; ++i)
            inputs.push_back(
                build_input(unlabeled.documents[start + i], vocab, teacher.encoder.cfg.max_len));
        std::vector<const ModelInput*> batch;
        for (const auto& in : inputs) batch.push_back(&in);

        Graph<Real> g(/*recording=*/false);
        ForwardHandles h = forward_packed(g, teacher, batch);
        const auto& task_probs = g.value(g.softmax_rows(h.task_logits));
        const auto& rat_probs = g.value(g.softmax_rows(h.rat_logits));

        for (int i = 0; i < cur; ++i) {
            PseudoLabeledExample ex;
            ex.doc = unlabeled.documents[start + i];
            ex.input = std::move(inputs[i]);
            if (sample) {
                std::vector<double> p(teacher.num_classes);
                for (int k = 0; k < teacher.num_classes; ++k)
                    p[k] = static_cast<double>(task_probs(i, k));
                std::discrete_distribution<int> pick(p.begin(), p.end());
                ex.y_pseudo = pick(rng);
            } else {
                int best = 0;
                for (int k = 1; k < teacher.num_classes; ++k)
                    if (task_probs(i, k) > task_probs(i, best)) best = k;
                ex.y_pseudo = best;
            }
            ex.y_confidence = static_cast<double>(task_probs(i, ex.y_pseudo));
            const Span& ds = h.doc_spans[i];
            ex.r_pseudo.kind = MaskKind::hard;
            for (int j = 0; j < ds.rows; ++j) {
                const double p1 = static_cast<double>(rat_probs(ds.offset + j, 1));
                int r;
                if (sample)
                    r = std::bernoulli_distribution(p1)(rng) ? 1 : 0;
                else
                    r = p1 >= 0.5 ? 1 : 0;
                ex.r_pseudo.values.push_back(r);
                ex.r_confidences.push_back(r == 1 ? p1 : 1.0 - p1);
            }
            ++out.class_histogram[ex.y_pseudo];
            out.examples.push_back(std::move(ex));
        }
    }
    return out;
}

// Per-example multipliers inversely proportional to the pseudo-class count:
// (total / K) / count(class). Classes absent from the pseudo set are skipped
// with a warning (there is nothing to weight).
inline std::vector<double> rebalance_weights(const std::vector<PseudoLabeledExample>& pseudo,
                                             int num_classes) {
    if (pseudo.empty()) throw Error("rebalance_weights: empty pseudo set");
    std::vector<long> counts(num_classes, 0);
    for (const auto& ex : pseudo) ++counts[ex.y_pseudo];
    std::vector<double> per_class(num_classes, 1.0);
    const double target = static_cast<double>(pseudo.size()) / num_classes;
    for (int c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) {
            std::cerr << "warning: class " << c
                      << " has no pseudo-labeled examples; rebalancing skips it\n";
            continue;
        }
        per_class[c] = target / static_cast<double>(counts[c]);
    }
    std::vector<double> out;
    out.reserve(pseudo.size());
    for (const auto& ex : pseudo) out.push_back(per_class[ex.y_pseudo]);
    return out;
}

// ---------------------------------------------------------------------------
// Student phase: minibatch Adam on the joint objective; per-batch weights
// recomputed from the fixed pseudo-labels each step.
// ---------------------------------------------------------------------------

struct StudentFitReport {
    double mean_total = 0;
    double mean_wu = 0, mean_suff = 0, mean_comp = 0, mean_co = 0;
    int steps = 0;
};

// Confidence weights with the re-weighting switches applied: a disabled
// switch replaces confidences by a constant, which normalizes to uniform.
inline BatchWeights make_student_weights(const PseudoBatch& batch,
                                         const SelfTrainConfig& config,
                                         const std::vector<double>* task_multipliers) {
    if (config.reweight_task && config.reweight_rationale)
        return compute_batch_weights(batch, config.loss_options, task_multipliers);
    std::vector<PseudoLabeledExample> neutral(batch.size());
    PseudoBatch view;
    for (size_t i = 0; i < batch.size(); ++i) {
        neutral[i] = *batch[i];
        if (!config.reweight_task) neutral[i].y_confidence = 1.0;
        if (!config.reweight_rationale)
            std::fill(neutral[i].r_confidences.begin(), neutral[i].r_confidences.end(), 1.0);
        view.push_back(&neutral[i]);
    }
    return compute_batch_weights(view, config.loss_options, task_multipliers);
}

template <typename Real>
StudentFitReport fit_student(MultiTaskModel<Real>& student,
                             const std::vector<PseudoLabeledExample>& pseudo,
                             const SelfTrainConfig& config, std::uint64_t iteration = 0) {
    if (pseudo.empty()) throw Error("fit_student: empty pseudo-labeled set");
    config.validate();

    std::vector<double> multipliers;
    if (config.class_rebalance) multipliers = rebalance_weights(pseudo, student.num_classes);

    std::mt19937_64 rng(derive_seed(config.seed, iteration, phase::kStudentFit));
    Adam<Real> opt(config.learning_rate);
    DropoutCtx dctx{&rng, student.encoder.cfg.dropout_rate};

    StudentFitReport report;
    std::vector<int> order(pseudo.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.student_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            PseudoBatch batch;
            std::vector<double> batch_mult;
            for (size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(&pseudo[order[i]]);
                if (!multipliers.empty()) batch_mult.push_back(multipliers[order[i]]);
            }
            const BatchWeights weights =
                make_student_weights(batch, config, batch_mult.empty() ? nullptr : &batch_mult);

            Graph<Real> g;
            JointLossResult loss = joint_student_loss(g, student, batch, weights,
                                                      config.loss_weights,
                                                      config.loss_options, dctx);
            if (!std::isfinite(loss.value))
                throw Error("fit_student: non-finite loss (wu " + std::to_string(loss.wu) +
                            ", suff " + std::to_string(loss.suff) + ", comp " +
                            std::to_string(loss.comp) + ", co " + std::to_string(loss.co) +
                            ")");
            g.backward(loss.total);
            opt.step(student, g);

            report.mean_total += loss.value;
            report.mean_wu += loss.wu;
            report.mean_suff += loss.suff;
            report.mean_comp += loss.comp;
            report.mean_co += loss.co;
            ++report.steps;
        }
    }
    if (report.steps > 0) {
        report.mean_total /= report.steps;
        report.mean_wu /= report.steps;
        report.mean_suff /= report.steps;
        report.mean_comp /= report.steps;
        report.mean_co /= report.steps;
    }
    return report;
}

// ---------------------------------------------------------------------------
// The full loop
// ---------------------------------------------------------------------------

template <typename Real>
struct SelfTrainHooks {
    // Called after each completed iteration (student already copied into
    // the teacher). Both models see the same parameters at this point.
    std::function<void(const IterationRecord&, const MultiTaskModel<Real>& student,
                       const MultiTaskModel<Real>& teacher)>
        after_iteration;
};

template <typename Real>
struct ResumeState {
    MultiTaskModel<Real> teacher;  // checkpoint of the last completed iteration
    std::vector<IterationRecord> records;
};

template <typename Real>
struct SelfTrainResult {
    std::optional<MultiTaskModel<Real>> best_model;  // absent only when selected
                                                     // before a resume point
    int best_iteration = -1;
    std::vector<IterationRecord> records;
    bool degenerate_teacher_only = false;
};

template <typename Real>
SelfTrainResult<Real> self_train(const Corpus& labeled, const Corpus& unlabeled,
                                 const Corpus& validation, const Vocabulary& vocab,
                                 const EncoderConfig& encoder_cfg,
                                 const SelfTrainConfig& config,
                                 const SelfTrainHooks<Real>* hooks = nullptr,
                                 ResumeState<Real>* resume = nullptr) {
    config.validate();
    for (const Document& d : validation.documents)
        if (!d.gold_label || !d.gold_rationale)
            throw Error("self_train: validation document " + d.id + " lacks gold fields");

    SelfTrainResult<Real> result;
    MultiTaskModel<Real> teacher =
        resume ? resume->teacher
               : new_model<Real>(encoder_cfg, labeled.num_classes,
                                 derive_seed(config.seed, 0, phase::kTeacherInit));
    int start_iteration = 1;
    double best_metric = std::numeric_limits<double>::infinity();
    int since_best = 0;
    if (resume) {
        result.records = resume->records;
        for (const auto& r : result.records) {
            const double m = r.selection_value(config.selection_metric);
            if (m < best_metric) {
                best_metric = m;
                result.best_iteration = r.iteration;
                since_best = 0;
            } else {
                ++since_best;
            }
        }
        start_iteration = static_cast<int>(result.records.size()) + 1;
    }

    // Degenerate mode: nothing to pseudo-label, return the fitted teacher.
    if (unlabeled.documents.empty()) {
        std::cerr << "warning: empty unlabeled set; returning the fitted teacher\n";
        TeacherFitReport tr = fit_teacher(teacher, labeled, validation, vocab, config, 1);
        EvalResult<Real> ev = evaluate_model(teacher, validation, vocab, config.batch_size,
                                             EvalFlags{}, config.loss_options);
        IterationRecord rec;
        rec.iteration = 1;
        rec.teacher_refit = true;
        rec.teacher_train_loss = tr.final_train_loss;
        rec.teacher_val_loss = tr.best_val_loss;
        rec.teacher_epochs_run = tr.epochs_run;
        rec.val_task_f1 = ev.report.task_f1;
        rec.val_token_precision = ev.report.token_precision;
        rec.val_token_recall = ev.report.token_recall;
        rec.val_token_f1 = ev.report.token_f1;
        rec.val_total_loss = ev.total_loss;
        rec.val_rationale_loss = ev.rationale_loss;
        rec.rationale_pct = ev.report.rationale_pct;
        rec.pseudo_class_histogram.assign(labeled.num_classes, 0);
        result.records.push_back(rec);
        if (hooks && hooks->after_iteration) hooks->after_iteration(rec, teacher, teacher);
        result.best_model = std::move(teacher);
        result.best_iteration = 1;
        result.degenerate_teacher_only = true;
        return result;
    }

    for (int iter = start_iteration; iter <= config.max_iterations; ++iter) {
        IterationRecord rec;
        rec.iteration = iter;

        if (config.refit_teacher_each_iter || iter == 1) {
            TeacherFitReport tr = fit_teacher(teacher, labeled, validation, vocab, config,
                                              static_cast<std::uint64_t>(iter));
            rec.teacher_refit = true;
            rec.teacher_train_loss = tr.final_train_loss;
            rec.teacher_val_loss = tr.best_val_loss;
            rec.teacher_epochs_run = tr.epochs_run;
        }

        PseudoLabelingResult pl = pseudo_label_corpus(teacher, unlabeled, vocab, config,
                                                      static_cast<std::uint64_t>(iter));
        rec.pseudo_class_histogram = pl.class_histogram;

        MultiTaskModel<Real> student =
            config.cold_start_student
                ? new_model<Real>(encoder_cfg, labeled.num_classes,
                                  derive_seed(config.seed, iter, phase::kStudentInit))
                : teacher;
        StudentFitReport sr = fit_student(student, pl.examples, config,
                                          static_cast<std::uint64_t>(iter));
        rec.student_total = sr.mean_total;
        rec.student_wu = sr.mean_wu;
        rec.student_suff = sr.mean_suff;
        rec.student_comp = sr.mean_comp;
        rec.student_co = sr.mean_co;

        EvalResult<Real> ev = evaluate_model(student, validation, vocab, config.batch_size,
                                             EvalFlags{}, config.loss_options);
        rec.val_task_f1 = ev.report.task_f1;
        rec.val_token_precision = ev.report.token_precision;
        rec.val_token_recall = ev.report.token_recall;
        rec.val_token_f1 = ev.report.token_f1;
        rec.val_total_loss = ev.total_loss;
        rec.val_rationale_loss = ev.rationale_loss;
        rec.rationale_pct = ev.report.rationale_pct;
        result.records.push_back(rec);

        const double metric = rec.selection_value(config.selection_metric);
        if (metric < best_metric) {
            best_metric = metric;
            result.best_iteration = iter;
            result.best_model = student;
            since_best = 0;
        } else {
            ++since_best;
        }

        copy_into_teacher(student, teacher);
        if (hooks && hooks->after_iteration) hooks->after_iteration(rec, student, teacher);

        // patience = 0 disables iteration-level early stopping
        if (config.early_stop_patience > 0 && since_best >= config.early_stop_patience) break;
    }
    return result;
}

}  // namespace rst
