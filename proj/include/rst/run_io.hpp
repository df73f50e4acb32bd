#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rst/checkpoint.hpp"
#include "rst/corpus_io.hpp"
#include "rst/selftrain.hpp"

namespace rst {

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

inline nlohmann::json selftrain_config_to_json(const SelfTrainConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"teacher_epochs", c.teacher_epochs},
            {"student_epochs", c.student_epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"coef_wu", c.loss_weights.coef_wu},
            {"coef_suff", c.loss_weights.coef_suff},
            {"coef_comp", c.loss_weights.coef_comp},
            {"coef_sparsity", c.loss_weights.coef_sparsity},
            {"coef_continuity", c.loss_weights.coef_continuity},
            {"rationale_token_mean", c.loss_options.rationale_token_mean},
            {"rationale_weights_per_example", c.loss_options.rationale_weights_per_example},
            {"coherence_length_normalized", c.loss_options.coherence_length_normalized},
            {"refit_teacher_each_iter", c.refit_teacher_each_iter},
            {"class_rebalance", c.class_rebalance},
            {"early_stop_patience", c.early_stop_patience},
            {"selection_metric", to_string(c.selection_metric)},
            {"seed", c.seed},
            {"reweight_task", c.reweight_task},
            {"reweight_rationale", c.reweight_rationale},
            {"cold_start_student", c.cold_start_student},
            {"pseudo_label_sampling", c.pseudo_label_sampling}};
}

inline SelfTrainConfig selftrain_config_from_json(const nlohmann::json& j) {
    SelfTrainConfig c;
    c.max_iterations = j.at("max_iterations").get<int>();
    c.teacher_epochs = j.at("teacher_epochs").get<int>();
    c.student_epochs = j.at("student_epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.loss_weights.coef_wu = j.at("coef_wu").get<double>();
    c.loss_weights.coef_suff = j.at("coef_suff").get<double>();
    c.loss_weights.coef_comp = j.at("coef_comp").get<double>();
    c.loss_weights.coef_sparsity = j.at("coef_sparsity").get<double>();
    c.loss_weights.coef_continuity = j.at("coef_continuity").get<double>();
    c.loss_options.rationale_token_mean = j.at("rationale_token_mean").get<bool>();
    c.loss_options.rationale_weights_per_example =
        j.at("rationale_weights_per_example").get<bool>();
    c.loss_options.coherence_length_normalized =
        j.at("coherence_length_normalized").get<bool>();
    c.refit_teacher_each_iter = j.at("refit_teacher_each_iter").get<bool>();
    c.class_rebalance = j.at("class_rebalance").get<bool>();
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
    c.selection_metric = selection_metric_from_string(j.at("selection_metric").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.reweight_task = j.at("reweight_task").get<bool>();
    c.reweight_rationale = j.at("reweight_rationale").get<bool>();
    c.cold_start_student = j.at("cold_start_student").get<bool>();
    c.pseudo_label_sampling = j.at("pseudo_label_sampling").get<bool>();
    return c;
}

struct RunConfig {
    std::string split_dir;
    std::string out_dir;
    EncoderConfig encoder;  // vocab_size resolved from the split's vocabulary
    SelfTrainConfig train;

    nlohmann::json to_json() const {
        return {{"split_dir", split_dir},
                {"out_dir", out_dir},
                {"encoder", ckpt::config_to_json(encoder)},
                {"train", selftrain_config_to_json(train)}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.split_dir = j.at("split_dir").get<std::string>();
        c.out_dir = j.at("out_dir").get<std::string>();
        c.encoder = ckpt::config_from_json(j.at("encoder"));
        c.train = selftrain_config_from_json(j.at("train"));
        return c;
    }
};

// ---------------------------------------------------------------------------
// Split directory (written by `prepare`)
// ---------------------------------------------------------------------------

struct SplitPaths {
    std::filesystem::path dir;
    std::filesystem::path labeled() const { return dir / "labeled.jsonl"; }
    std::filesystem::path unlabeled() const { return dir / "unlabeled.jsonl"; }
    std::filesystem::path unlabeled_gold() const { return dir / "unlabeled_gold.jsonl"; }
    std::filesystem::path validation() const { return dir / "validation.jsonl"; }
    std::filesystem::path vocab() const { return dir / "vocab.txt"; }
    std::filesystem::path manifest() const { return dir / "manifest.json"; }
};

struct LoadedSplit {
    Corpus labeled, unlabeled, validation;
    Vocabulary vocab;
};

inline LoadedSplit load_split(const std::filesystem::path& dir) {
    SplitPaths p{dir};
    LoadedSplit s;
    s.labeled = load_corpus_jsonl(p.labeled());
    s.unlabeled = load_corpus_jsonl(p.unlabeled());
    s.validation = load_corpus_jsonl(p.validation());
    s.vocab = Vocabulary::load(p.vocab().string());
    // an unlabeled file has no labels of its own; classes come from labeled
    s.unlabeled.num_classes = s.labeled.num_classes;
    s.unlabeled.class_names = s.labeled.class_names;
    return s;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path config() const { return dir / "config.json"; }
    std::filesystem::path lock() const { return dir / "run.lock"; }
    std::filesystem::path records() const { return dir / "iterations.jsonl"; }
    std::filesystem::path checkpoints() const { return dir / "checkpoints"; }
    std::filesystem::path checkpoint(int iteration) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "iter_%04d.ckpt", iteration);
        return checkpoints() / buf;
    }
    std::filesystem::path best_marker() const { return dir / "best.json"; }
    std::filesystem::path best_checkpoint() const { return dir / "best.ckpt"; }
};

// Advisory single-writer lock. `steal` replaces a stale lock (interrupted
// runs leave one behind; --resume passes steal=true).
class RunLock {
public:
    RunLock(const std::filesystem::path& path, bool steal) : path_(path) {
        if (std::filesystem::exists(path_)) {
            if (!steal)
                throw IoError("run directory is locked (" + path_.string() +
                              "); another writer may be active");
            std::filesystem::remove(path_);
        }
        std::ofstream out(path_);
        if (!out) throw IoError("cannot create lock file " + path_.string());
        out << "locked\n";
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

inline void append_record(const RunPaths& paths, const IterationRecord& rec) {
    std::ofstream out(paths.records(), std::ios::app);
    if (!out) throw IoError("cannot append to " + paths.records().string());
    out << nlohmann::json(rec).dump() << "\n";
}

inline std::vector<IterationRecord> read_records(const RunPaths& paths) {
    std::vector<IterationRecord> records;
    std::ifstream in(paths.records());
    if (!in) return records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(nlohmann::json::parse(line).get<IterationRecord>());
    }
    return records;
}

// ---------------------------------------------------------------------------
// Orchestrated training run: config snapshot, per-iteration checkpoints and
// records, best-model marker, resume from the last completed iteration.
// ---------------------------------------------------------------------------

template <typename Real>
struct RunOutcome {
    SelfTrainResult<Real> result;
    MultiTaskModel<Real> best_model;
    RunPaths paths;
};

template <typename Real>
RunOutcome<Real> run_training(const RunConfig& config, bool resume = false) {
    namespace fs = std::filesystem;
    RunPaths paths{fs::path(config.out_dir)};
    fs::create_directories(paths.checkpoints());
    RunLock lock(paths.lock(), /*steal=*/resume);

    LoadedSplit split = load_split(config.split_dir);
    EncoderConfig enc = config.encoder;
    enc.vocab_size = split.vocab.size();
    enc.validate();

    {
        RunConfig snapshot = config;
        snapshot.encoder = enc;
        std::ofstream out(paths.config());
        if (!out) throw IoError("cannot write " + paths.config().string());
        out << snapshot.to_json().dump(2) << "\n";
    }

    ResumeState<Real> state;
    ResumeState<Real>* state_ptr = nullptr;
    if (resume) {
        state.records = read_records(paths);
        if (!state.records.empty()) {
            const int last = state.records.back().iteration;
            state.teacher = load_model<Real>(paths.checkpoint(last));
            state_ptr = &state;
        }
    }

    SelfTrainHooks<Real> hooks;
    hooks.after_iteration = [&](const IterationRecord& rec, const MultiTaskModel<Real>&,
                                const MultiTaskModel<Real>& teacher) {
        save_model(teacher, paths.checkpoint(rec.iteration));
        append_record(paths, rec);
    };

    RunOutcome<Real> out{self_train<Real>(split.labeled, split.unlabeled, split.validation,
                                          split.vocab, enc, config.train, &hooks, state_ptr),
                         MultiTaskModel<Real>{},
                         paths};

    const int best_iter = out.result.best_iteration;
    if (best_iter < 1) throw Error("run produced no iterations");
    if (out.result.best_model) {
        out.best_model = *out.result.best_model;
    } else {
        out.best_model = load_model<Real>(paths.checkpoint(best_iter));
    }
    save_model(out.best_model, paths.best_checkpoint());

    nlohmann::json best = {
        {"best_iteration", best_iter},
        {"selection_metric", to_string(config.train.selection_metric)},
        {"value",
         out.result.records[best_iter - 1].selection_value(config.train.selection_metric)},
        {"checkpoint", paths.checkpoint(best_iter).string()}};
    std::ofstream bout(paths.best_marker());
    bout << best.dump(2) << "\n";
    return out;
}

}  // namespace rst
