// Command-line front end: prepare / train / eval / ablate / export-curves.
//
// Exit codes: 0 success, 1 user or configuration error, 2 internal failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rst/rst.hpp"

namespace fs = std::filesystem;
using Real = float;  // training-scale builds; tests instantiate double where needed

namespace {

struct TrainArgs {
    std::string split_dir;
    std::string out_dir;
    rst::SelfTrainConfig train;
    int hidden_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int max_len = 128;
    double dropout = 0.0;
    std::string selection_metric = "validation_total_loss";
    std::string ablate;  // comma list of components to disable
    bool no_reweight_task = false;
    bool no_reweight_rationale = false;
    bool no_refit_teacher = false;
    bool resume = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--split", a.split_dir, "Split directory from `prepare`")->required();
    cmd->add_option("--out", a.out_dir, "Run directory")->required();
    cmd->add_option("--seed", a.train.seed, "Random seed")->envname("RST_SEED");
    cmd->add_option("--max-iterations", a.train.max_iterations, "Self-training iterations");
    cmd->add_option("--teacher-epochs", a.train.teacher_epochs, "Max teacher epochs per refit");
    cmd->add_option("--student-epochs", a.train.student_epochs, "Student epochs per iteration");
    cmd->add_option("--batch-size", a.train.batch_size, "Minibatch size");
    cmd->add_option("--learning-rate", a.train.learning_rate, "Adam learning rate");
    cmd->add_option("--coef-wu", a.train.loss_weights.coef_wu, "Pseudo-loss coefficient");
    cmd->add_option("--coef-suff", a.train.loss_weights.coef_suff, "Sufficiency coefficient");
    cmd->add_option("--coef-comp", a.train.loss_weights.coef_comp, "Completeness coefficient");
    cmd->add_option("--coef-sparsity", a.train.loss_weights.coef_sparsity,
                    "Coherence sparsity coefficient");
    cmd->add_option("--coef-continuity", a.train.loss_weights.coef_continuity,
                    "Coherence continuity coefficient");
    cmd->add_option("--patience", a.train.early_stop_patience,
                    "Early-stop patience (0 disables)");
    cmd->add_option("--selection-metric", a.selection_metric,
                    "validation_total_loss | validation_rationale_loss");
    cmd->add_option("--ablate", a.ablate,
                    "Comma list of components to disable: "
                    "wu,suff,comp,co,sparsity,continuity,reweight");
    cmd->add_flag("--no-refit-teacher", a.no_refit_teacher,
                  "Fit the teacher only once at the beginning");
    cmd->add_flag("--class-rebalance", a.train.class_rebalance,
                  "Upweight minority pseudo-label classes");
    cmd->add_flag("--no-reweight-task", a.no_reweight_task, "Uniform task pseudo weights");
    cmd->add_flag("--no-reweight-rationale", a.no_reweight_rationale,
                  "Uniform rationale pseudo weights");
    cmd->add_flag("--cold-start-student", a.train.cold_start_student,
                  "Random-init the student each iteration");
    cmd->add_flag("--sample-pseudo-labels", a.train.pseudo_label_sampling,
                  "Sample pseudo-labels instead of argmax");
    cmd->add_option("--hidden-dim", a.hidden_dim, "Encoder hidden size");
    cmd->add_option("--num-layers", a.num_layers, "Encoder layers");
    cmd->add_option("--num-heads", a.num_heads, "Attention heads");
    cmd->add_option("--max-len", a.max_len, "Max sequence length");
    cmd->add_option("--dropout", a.dropout, "Dropout rate");
    cmd->set_config("--config", "", "Read options from an INI file");
}

rst::RunConfig to_run_config(TrainArgs& a) {
    rst::RunConfig rc;
    rc.split_dir = a.split_dir;
    rc.out_dir = a.out_dir;
    rc.encoder.hidden_dim = a.hidden_dim;
    rc.encoder.num_layers = a.num_layers;
    rc.encoder.num_heads = a.num_heads;
    rc.encoder.max_len = a.max_len;
    rc.encoder.dropout_rate = a.dropout;
    rc.train = a.train;
    rc.train.selection_metric = rst::selection_metric_from_string(a.selection_metric);
    rc.train.refit_teacher_each_iter = !a.no_refit_teacher;
    rc.train.reweight_task = !a.no_reweight_task;
    rc.train.reweight_rationale = !a.no_reweight_rationale;

    std::stringstream ss(a.ablate);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto& lw = rc.train.loss_weights;
        if (item == "wu") lw.coef_wu = 0;
        else if (item == "suff") lw.coef_suff = 0;
        else if (item == "comp") lw.coef_comp = 0;
        else if (item == "co") lw.coef_sparsity = lw.coef_continuity = 0;
        else if (item == "sparsity") lw.coef_sparsity = 0;
        else if (item == "continuity") lw.coef_continuity = 0;
        else if (item == "reweight") rc.train.reweight_task = rc.train.reweight_rationale = false;
        else throw rst::ConfigError("unknown ablation component '" + item + "'");
    }
    return rc;
}

// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& corpus_path, const std::string& eraser_dir,
                const std::string& synth_path, const std::string& val_corpus,
                const std::string& val_eraser, int val_count, int n_per_class,
                std::uint64_t seed, const std::string& out_dir) {
    rst::Corpus source;
    rst::Corpus validation;
    const int sources = (!corpus_path.empty()) + (!eraser_dir.empty()) + (!synth_path.empty());
    if (sources != 1)
        throw rst::ConfigError("exactly one of --corpus, --eraser, --synthetic is required");

    nlohmann::json source_desc;
    if (!synth_path.empty()) {
        rst::SyntheticConfig sc = rst::load_synthetic_config(synth_path);
        sc.seed = rst::derive_seed(seed, 1);
        source = rst::generate_synthetic(sc);
        rst::SyntheticConfig vc = sc;
        vc.corpus_size = val_count;
        vc.seed = rst::derive_seed(seed, 2);
        validation = rst::generate_synthetic(vc);
        source_desc = {{"kind", "synthetic"}, {"config", synth_path}};
    } else {
        source = corpus_path.empty() ? rst::load_eraser_corpus(eraser_dir)
                                     : rst::load_corpus_jsonl(corpus_path);
        if (val_corpus.empty() && val_eraser.empty())
            throw rst::ConfigError("--val-corpus or --val-eraser is required for file corpora");
        validation = val_corpus.empty() ? rst::load_eraser_corpus(val_eraser)
                                        : rst::load_corpus_jsonl(val_corpus);
        source_desc = {{"kind", corpus_path.empty() ? "eraser" : "jsonl"},
                       {"path", corpus_path.empty() ? eraser_dir : corpus_path}};
    }

    rst::FewShotSplit split = rst::sample_few_shot(source, n_per_class, seed);
    rst::Vocabulary vocab = rst::Vocabulary::build(split.labeled, split.unlabeled, validation);

    rst::SplitPaths paths{fs::path(out_dir)};
    fs::create_directories(paths.dir);
    rst::save_corpus_jsonl(split.labeled, paths.labeled());
    rst::save_corpus_jsonl(split.unlabeled, paths.unlabeled());
    rst::save_corpus_jsonl(split.sealed_gold, paths.unlabeled_gold());
    rst::save_corpus_jsonl(validation, paths.validation());
    vocab.save(paths.vocab().string());

    nlohmann::json manifest = {{"seed", seed},
                               {"n_per_class", n_per_class},
                               {"labeled", split.labeled.documents.size()},
                               {"unlabeled", split.unlabeled.documents.size()},
                               {"validation", validation.documents.size()},
                               {"num_classes", source.num_classes},
                               {"class_names", source.class_names},
                               {"vocab_size", vocab.size()},
                               {"source", source_desc}};
    std::ofstream mout(paths.manifest());
    if (!mout) throw rst::IoError("cannot write " + paths.manifest().string());
    mout << manifest.dump(2) << "\n";

    std::cout << "prepared split: labeled=" << split.labeled.documents.size()
              << " unlabeled=" << split.unlabeled.documents.size()
              << " validation=" << validation.documents.size() << " vocab=" << vocab.size()
              << "\n";
    return 0;
}

int cmd_train(TrainArgs& args) {
    rst::RunConfig rc = to_run_config(args);
    rst::RunOutcome<Real> out = rst::run_training<Real>(rc, args.resume);
    const auto& rec = out.result.records[out.result.best_iteration - 1];
    std::cout << "run complete: iterations=" << out.result.records.size()
              << " best_iteration=" << out.result.best_iteration
              << " val_task_f1=" << rec.val_task_f1 << " val_token_f1=" << rec.val_token_f1
              << "\n"
              << "best checkpoint: " << out.paths.best_checkpoint().string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus_path,
             const std::string& vocab_path, const std::string& out_path,
             const std::string& task_avg, const std::string& token_avg, int batch_size) {
    rst::MultiTaskModel<Real> model = rst::load_model<Real>(checkpoint);
    rst::Corpus corpus = rst::load_corpus_jsonl(corpus_path);
    rst::Vocabulary vocab = rst::Vocabulary::load(vocab_path);
    if (vocab.size() != model.encoder.cfg.vocab_size)
        throw rst::ConfigError("vocabulary size " + std::to_string(vocab.size()) +
                               " does not match checkpoint vocab_size " +
                               std::to_string(model.encoder.cfg.vocab_size));
    rst::EvalFlags flags;
    flags.task_averaging = task_avg == "micro" ? rst::Averaging::micro : rst::Averaging::macro;
    flags.token_averaging =
        token_avg == "macro" ? rst::Averaging::macro : rst::Averaging::micro;
    auto result = rst::evaluate_model(model, corpus, vocab, batch_size, flags);

    std::ostringstream report;
    for (const auto& [k, v] : result.report.to_flat()) report << k << "=" << v << "\n";
    std::cout << report.str();
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw rst::IoError("cannot write " + out_path);
        out << report.str();
    }
    return 0;
}

struct AblationArm {
    std::string name;
    std::string ablate;       // components to disable
    bool teacher_only = false;
};

const std::vector<AblationArm>& ablation_arms() {
    static const std::vector<AblationArm> arms = {
        {"teacher_only", "", true},
        {"suff", "comp,co,reweight", false},
        {"suff_reweight", "comp,co", false},
        {"suff_sparsity", "comp,continuity", false},
        {"suff_sparsity_comp", "continuity", false},
        {"full_no_suff", "suff", false},
        {"full_no_comp", "comp", false},
        {"full_no_reweight", "reweight", false},
        {"full_no_coherence", "co", false},
        {"full", "", false},
    };
    return arms;
}

int cmd_ablate(TrainArgs& base, const std::string& subsets) {
    std::vector<AblationArm> selected;
    if (subsets.empty()) {
        selected = ablation_arms();
    } else {
        std::stringstream ss(subsets);
        std::string name;
        while (std::getline(ss, name, ',')) {
            bool found = false;
            for (const auto& arm : ablation_arms())
                if (arm.name == name) {
                    selected.push_back(arm);
                    found = true;
                }
            if (!found) throw rst::ConfigError("unknown ablation subset '" + name + "'");
        }
    }

    const fs::path root(base.out_dir);
    fs::create_directories(root);
    std::ostringstream table;
    table << "subset\ttask_f1\ttoken_precision\ttoken_recall\ttoken_f1\tbleu2\trationale_pct\n";
    for (const auto& arm : selected) {
        TrainArgs args = base;
        args.out_dir = (root / arm.name).string();
        args.ablate = arm.ablate;
        if (arm.teacher_only) {
            args.train.max_iterations = 1;
            args.train.student_epochs = 0;
        }
        rst::RunConfig rc = to_run_config(args);
        rst::RunOutcome<Real> out = rst::run_training<Real>(rc, false);

        rst::LoadedSplit split = rst::load_split(rc.split_dir);
        auto ev = rst::evaluate_model(out.best_model, split.validation, split.vocab,
                                      rc.train.batch_size);
        char row[256];
        std::snprintf(row, sizeof(row), "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.2f\n",
                      arm.name.c_str(), ev.report.task_f1, ev.report.token_precision,
                      ev.report.token_recall, ev.report.token_f1, ev.report.bleu2,
                      ev.report.rationale_pct);
        table << row;
        std::cout << "finished arm " << arm.name << "\n";
    }
    std::ofstream tout(root / "ablation.tsv");
    tout << table.str();
    std::cout << table.str();
    return 0;
}

int cmd_export_curves(const std::string& run_dir, std::string out_dir) {
    rst::RunPaths paths{fs::path(run_dir)};
    std::vector<rst::IterationRecord> records = rst::read_records(paths);
    if (records.empty())
        throw rst::IoError("no iteration records found under " + run_dir);
    if (out_dir.empty()) out_dir = (paths.dir / "curves").string();
    fs::create_directories(out_dir);

    std::ofstream f1(fs::path(out_dir) / "task_f1.tsv");
    std::ofstream pct(fs::path(out_dir) / "rationale_pct.tsv");
    f1 << "iteration\ttask_f1\n";
    pct << "iteration\trationale_pct\n";
    for (const auto& r : records) {
        f1 << r.iteration << "\t" << r.val_task_f1 << "\n";
        pct << r.iteration << "\t" << r.rationale_pct << "\n";
    }
    std::cout << "wrote curves for " << records.size() << " iterations to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-label self-training with rationale extraction"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Build a few-shot split from a corpus");
    std::string corpus_path, eraser_dir, synth_path, val_corpus, val_eraser, out_dir;
    int val_count = 200, n_per_class = 100;
    std::uint64_t prep_seed = 1;
    prepare->add_option("--corpus", corpus_path, "Corpus in jsonl format");
    prepare->add_option("--eraser", eraser_dir, "ERASER-style corpus directory");
    prepare->add_option("--synthetic", synth_path, "Synthetic corpus config file");
    prepare->add_option("--val-corpus", val_corpus, "Validation corpus (jsonl)");
    prepare->add_option("--val-eraser", val_eraser, "Validation corpus (ERASER directory)");
    prepare->add_option("--val-count", val_count, "Synthetic validation size");
    prepare->add_option("--n-per-class", n_per_class, "Labeled examples per class");
    prepare->add_option("--seed", prep_seed, "Random seed")->envname("RST_SEED");
    prepare->add_option("--out", out_dir, "Output split directory")->required();
    prepare->set_config("--config", "", "Read options from an INI file");

    // train
    auto* train = app.add_subcommand("train", "Run self-training on a prepared split");
    TrainArgs train_args;
    add_train_options(train, train_args);
    train->add_flag("--resume", train_args.resume, "Continue from the last checkpoint");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
    std::string ckpt_path, eval_corpus, vocab_path, eval_out;
    std::string task_avg = "macro", token_avg = "micro";
    int eval_batch = 32;
    std::uint64_t eval_seed = 1;
    eval->add_option("--checkpoint", ckpt_path, "Model checkpoint")->required();
    eval->add_option("--corpus", eval_corpus, "Evaluation corpus (jsonl)")->required();
    eval->add_option("--vocab", vocab_path, "Vocabulary file")->required();
    eval->add_option("--out", eval_out, "Write the flat report here");
    eval->add_option("--task-averaging", task_avg, "macro | micro");
    eval->add_option("--token-averaging", token_avg, "micro | macro");
    eval->add_option("--batch-size", eval_batch, "Evaluation batch size");
    eval->add_option("--seed", eval_seed, "Unused; evaluation is deterministic");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Sweep loss-component subsets");
    TrainArgs ablate_args;
    std::string subsets;
    add_train_options(ablate, ablate_args);
    ablate->add_option("--subsets", subsets,
                       "Comma list of arms (default: the full sweep); available: "
                       "teacher_only,suff,suff_reweight,suff_sparsity,suff_sparsity_comp,"
                       "full_no_suff,full_no_comp,full_no_reweight,full_no_coherence,full");

    // export-curves
    auto* curves = app.add_subcommand("export-curves", "Emit per-iteration metric series");
    std::string curves_run, curves_out;
    std::uint64_t curves_seed = 1;
    curves->add_option("--run", curves_run, "Run directory")->required();
    curves->add_option("--out", curves_out, "Output directory (default <run>/curves)");
    curves->add_option("--seed", curves_seed, "Unused; export is deterministic");

    try {
        app.parse(argc, argv);
        if (*prepare)
            return cmd_prepare(corpus_path, eraser_dir, synth_path, val_corpus, val_eraser,
                               val_count, n_per_class, prep_seed, out_dir);
        if (*train) return cmd_train(train_args);
        if (*eval)
            return cmd_eval(ckpt_path, eval_corpus, vocab_path, eval_out, task_avg, token_avg,
                            eval_batch);
        if (*ablate) return cmd_ablate(ablate_args, subsets);
        if (*curves) return cmd_export_curves(curves_run, curves_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // user error, not CLI11's internal numbering
    } catch (const rst::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const rst::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const rst::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
