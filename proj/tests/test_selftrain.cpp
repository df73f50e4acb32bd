#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>

#include "test_util.hpp"

using namespace rst;
using test_util::TempDir;

namespace {

struct Bench {
    Corpus labeled, unlabeled, validation;
    Vocabulary vocab;
    EncoderConfig enc;

    explicit Bench(int labeled_per_class = 6, int unlabeled_count = 40, int val_count = 20,
                   std::uint64_t seed = 5) {
        SyntheticConfig sc;
        sc.vocab_size = 40;
        sc.num_classes = 2;
        sc.phrase_length = 2;
        sc.doc_len_min = 8;
        sc.doc_len_max = 8;
        sc.corpus_size = labeled_per_class * 2 + unlabeled_count;
        sc.seed = seed;
        Corpus train = generate_synthetic(sc);
        FewShotSplit split = sample_few_shot(train, labeled_per_class, seed);
        labeled = split.labeled;
        unlabeled = split.unlabeled;
        SyntheticConfig vc = sc;
        vc.corpus_size = val_count;
        vc.seed = seed + 1000;
        validation = generate_synthetic(vc);
        vocab = Vocabulary::build(labeled, unlabeled, validation);
        enc.vocab_size = vocab.size();
        enc.hidden_dim = 16;
        enc.num_layers = 1;
        enc.num_heads = 2;
        enc.max_len = 10;
    }

    SelfTrainConfig config() const {
        SelfTrainConfig c;
        c.max_iterations = 2;
        c.teacher_epochs = 3;
        c.student_epochs = 1;
        c.batch_size = 8;
        c.learning_rate = 2e-3;
        c.early_stop_patience = 0;
        c.seed = 11;
        return c;
    }
};

template <typename Real>
bool models_identical(const MultiTaskModel<Real>& a, const MultiTaskModel<Real>& b) {
    bool same = true;
    std::vector<const Mat<Real>*> pa, pb;
    a.visit([&](const std::string&, const Mat<Real>& m) { pa.push_back(&m); });
    b.visit([&](const std::string&, const Mat<Real>& m) { pb.push_back(&m); });
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        same = same && pa[i]->rows() == pb[i]->rows() && pa[i]->cols() == pb[i]->cols() &&
               std::memcmp(pa[i]->data(), pb[i]->data(), sizeof(Real) * pa[i]->size()) == 0;
    return same;
}

}  // namespace

TEST_CASE("rebalance multipliers are inverse class frequencies") {
    std::vector<PseudoLabeledExample> pseudo;
    auto add = [&](int cls, int count) {
        for (int i = 0; i < count; ++i) {
            PseudoLabeledExample ex;
            ex.y_pseudo = cls;
            pseudo.push_back(ex);
        }
    };
    SECTION("balanced classes get unit multipliers") {
        add(0, 50);
        add(1, 50);
        auto m = rebalance_weights(pseudo, 2);
        for (double v : m) REQUIRE(v == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("75/25 split gives (2/3, 2)") {
        add(0, 75);
        add(1, 25);
        auto m = rebalance_weights(pseudo, 2);
        REQUIRE(m[0] == Catch::Approx(2.0 / 3).margin(1e-12));
        REQUIRE(m[74] == Catch::Approx(2.0 / 3).margin(1e-12));
        REQUIRE(m[75] == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("a class with no pseudo-labels is skipped") {
        add(0, 10);
        auto m = rebalance_weights(pseudo, 2);
        for (double v : m) REQUIRE(v == Catch::Approx(0.5).margin(1e-12));
        // multiplier for the present class is total/K / count = 5/10
    }
    SECTION("empty set is an error") {
        REQUIRE_THROWS_AS(rebalance_weights({}, 2), Error);
    }
}

TEST_CASE("teacher fitting with zero learning rate leaves parameters unchanged") {
    Bench bench;
    auto teacher = new_model<double>(bench.enc, 2, 3);
    auto before = teacher;
    SelfTrainConfig cfg = bench.config();
    cfg.learning_rate = 0.0;
    cfg.teacher_epochs = 1;
    fit_teacher(teacher, bench.labeled, bench.validation, bench.vocab, cfg);
    REQUIRE(models_identical(teacher, before));
}

TEST_CASE("teacher fitting reduces the supervised training loss") {
    Bench bench(8, 20, 16);
    auto teacher = new_model<double>(bench.enc, 2, 3);
    SelfTrainConfig cfg = bench.config();
    cfg.teacher_epochs = 8;
    cfg.learning_rate = 3e-3;
    cfg.early_stop_patience = 0;

    auto train_loss = [&](const MultiTaskModel<double>& m) {
        std::vector<ModelInput> inputs;
        std::vector<SupervisedExample> sup;
        for (const auto& d : bench.labeled.documents)
            inputs.push_back(build_input(d, bench.vocab, bench.enc.max_len));
        for (size_t i = 0; i < inputs.size(); ++i)
            sup.push_back({&inputs[i], *bench.labeled.documents[i].gold_label,
                           &*bench.labeled.documents[i].gold_rationale});
        Graph<double> g(false);
        return supervised_loss(g, m, sup).value;
    };

    const double before = train_loss(teacher);
    fit_teacher(teacher, bench.labeled, bench.validation, bench.vocab, cfg);
    const double after = train_loss(teacher);
    REQUIRE(after < before);
}

TEST_CASE("teacher fitting is reproducible for a fixed seed") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    auto t1 = new_model<double>(bench.enc, 2, 3);
    auto t2 = new_model<double>(bench.enc, 2, 3);
    fit_teacher(t1, bench.labeled, bench.validation, bench.vocab, cfg, 4);
    fit_teacher(t2, bench.labeled, bench.validation, bench.vocab, cfg, 4);
    REQUIRE(models_identical(t1, t2));
}

TEST_CASE("pseudo-labeling covers the whole unlabeled corpus") {
    Bench bench;
    auto teacher = new_model<double>(bench.enc, 2, 3);
    SelfTrainConfig cfg = bench.config();
    auto pl = pseudo_label_corpus(teacher, bench.unlabeled, bench.vocab, cfg);
    REQUIRE(pl.examples.size() == bench.unlabeled.documents.size());
    long total = 0;
    for (long c : pl.class_histogram) total += c;
    REQUIRE(total == static_cast<long>(bench.unlabeled.documents.size()));

    // batched path agrees with per-document pseudo_label
    for (int i : {0, 7, 23}) {
        auto single = pseudo_label(teacher, bench.unlabeled.documents[i], bench.vocab);
        REQUIRE(single.y_pseudo == pl.examples[i].y_pseudo);
        REQUIRE(single.y_confidence ==
                Catch::Approx(pl.examples[i].y_confidence).margin(1e-12));
        REQUIRE(single.r_pseudo.values == pl.examples[i].r_pseudo.values);
    }
}

TEST_CASE("student fitting with zero epochs is a no-op") {
    Bench bench;
    auto teacher = new_model<double>(bench.enc, 2, 3);
    SelfTrainConfig cfg = bench.config();
    auto pl = pseudo_label_corpus(teacher, bench.unlabeled, bench.vocab, cfg);
    auto student = teacher;
    cfg.student_epochs = 0;
    auto report = fit_student(student, pl.examples, cfg);
    REQUIRE(report.steps == 0);
    REQUIRE(models_identical(student, teacher));
}

TEST_CASE("student loss breakdown sums to the total") {
    Bench bench;
    auto teacher = new_model<double>(bench.enc, 2, 3);
    SelfTrainConfig cfg = bench.config();
    auto pl = pseudo_label_corpus(teacher, bench.unlabeled, bench.vocab, cfg);
    auto student = teacher;
    auto report = fit_student(student, pl.examples, cfg);
    REQUIRE(report.steps > 0);
    REQUIRE(report.mean_total ==
            Catch::Approx(report.mean_wu + report.mean_suff + report.mean_comp +
                          report.mean_co)
                .margin(1e-8));
}

TEST_CASE("self-training records one entry per iteration and picks the best") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    cfg.max_iterations = 1;
    auto res = self_train<double>(bench.labeled, bench.unlabeled, bench.validation,
                                  bench.vocab, bench.enc, cfg);
    REQUIRE(res.records.size() == 1);
    REQUIRE(res.best_iteration == 1);

    cfg.max_iterations = 3;
    res = self_train<double>(bench.labeled, bench.unlabeled, bench.validation, bench.vocab,
                             bench.enc, cfg);
    REQUIRE(res.records.size() == 3);
    for (size_t i = 0; i < res.records.size(); ++i)
        REQUIRE(res.records[i].iteration == static_cast<int>(i) + 1);

    double best = std::numeric_limits<double>::infinity();
    int best_iter = -1;
    for (const auto& r : res.records) {
        const double m = r.selection_value(cfg.selection_metric);
        if (m < best) {
            best = m;
            best_iter = r.iteration;
        }
    }
    REQUIRE(res.best_iteration == best_iter);
    REQUIRE(res.best_model.has_value());

    // the returned model reproduces the recorded metric of its iteration
    auto ev = evaluate_model(*res.best_model, bench.validation, bench.vocab, cfg.batch_size);
    REQUIRE(ev.total_loss ==
            Catch::Approx(res.records[best_iter - 1].val_total_loss).margin(1e-9));
}

TEST_CASE("teacher and student agree on a probe batch after every copy") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    cfg.max_iterations = 2;

    std::vector<ModelInput> probe;
    for (int i = 0; i < 4; ++i)
        probe.push_back(build_input(bench.validation.documents[i], bench.vocab, bench.enc.max_len));

    int checks = 0;
    SelfTrainHooks<double> hooks;
    hooks.after_iteration = [&](const IterationRecord&, const MultiTaskModel<double>& student,
                                const MultiTaskModel<double>& teacher) {
        for (const auto& in : probe) {
            auto [st, sr] = forward(student, in);
            auto [tt, tr] = forward(teacher, in);
            for (size_t k = 0; k < st.probs.size(); ++k)
                REQUIRE(std::abs(st.probs[k] - tt.probs[k]) < 1e-7);
            for (size_t j = 0; j < sr.probs.size(); ++j)
                REQUIRE(std::abs(sr.probs[j] - tr.probs[j]) < 1e-7);
        }
        ++checks;
    };
    self_train<double>(bench.labeled, bench.unlabeled, bench.validation, bench.vocab,
                       bench.enc, cfg, &hooks);
    REQUIRE(checks == 2);
}

TEST_CASE("self-training is deterministic for a fixed seed") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    auto r1 = self_train<double>(bench.labeled, bench.unlabeled, bench.validation,
                                 bench.vocab, bench.enc, cfg);
    auto r2 = self_train<double>(bench.labeled, bench.unlabeled, bench.validation,
                                 bench.vocab, bench.enc, cfg);
    REQUIRE(r1.records.size() == r2.records.size());
    for (size_t i = 0; i < r1.records.size(); ++i)
        REQUIRE(nlohmann::json(r1.records[i]).dump() == nlohmann::json(r2.records[i]).dump());
    REQUIRE(models_identical(*r1.best_model, *r2.best_model));
}

TEST_CASE("an empty unlabeled set degenerates to the fitted teacher") {
    Bench bench;
    Corpus empty;
    empty.num_classes = 2;
    empty.class_names = bench.unlabeled.class_names;
    SelfTrainConfig cfg = bench.config();
    auto res = self_train<double>(bench.labeled, empty, bench.validation, bench.vocab,
                                  bench.enc, cfg);
    REQUIRE(res.degenerate_teacher_only);
    REQUIRE(res.records.size() == 1);
    REQUIRE(res.best_model.has_value());
}

TEST_CASE("teacher refit can be limited to the first iteration") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    cfg.max_iterations = 2;
    cfg.refit_teacher_each_iter = false;
    auto res = self_train<double>(bench.labeled, bench.unlabeled, bench.validation,
                                  bench.vocab, bench.enc, cfg);
    REQUIRE(res.records[0].teacher_refit);
    REQUIRE_FALSE(res.records[1].teacher_refit);

    cfg.refit_teacher_each_iter = true;
    res = self_train<double>(bench.labeled, bench.unlabeled, bench.validation, bench.vocab,
                             bench.enc, cfg);
    REQUIRE(res.records[1].teacher_refit);
}

TEST_CASE("iteration-level early stopping respects patience") {
    Bench bench;
    SelfTrainConfig cfg = bench.config();
    cfg.max_iterations = 6;
    cfg.learning_rate = 0.0;  // nothing improves after iteration 1
    cfg.early_stop_patience = 2;
    auto res = self_train<double>(bench.labeled, bench.unlabeled, bench.validation,
                                  bench.vocab, bench.enc, cfg);
    REQUIRE(res.records.size() == 3);  // iteration 1 + two non-improving
}

TEST_CASE("run directory training writes records, checkpoints and best marker") {
    Bench bench;
    TempDir tmp("run");
    const auto split_dir = tmp.path / "split";
    std::filesystem::create_directories(split_dir);
    SplitPaths sp{split_dir};
    save_corpus_jsonl(bench.labeled, sp.labeled());
    save_corpus_jsonl(bench.unlabeled, sp.unlabeled());
    save_corpus_jsonl(bench.validation, sp.validation());
    bench.vocab.save(sp.vocab().string());

    RunConfig rc;
    rc.split_dir = split_dir.string();
    rc.out_dir = (tmp.path / "run1").string();
    rc.encoder = bench.enc;
    rc.train = bench.config();
    rc.train.max_iterations = 2;

    auto out = run_training<double>(rc);
    RunPaths paths{tmp.path / "run1"};
    REQUIRE(std::filesystem::exists(paths.config()));
    REQUIRE(std::filesystem::exists(paths.checkpoint(1)));
    REQUIRE(std::filesystem::exists(paths.checkpoint(2)));
    REQUIRE(std::filesystem::exists(paths.best_checkpoint()));
    REQUIRE(read_records(paths).size() == 2);
    REQUIRE_FALSE(std::filesystem::exists(paths.lock()));

    // the best checkpoint round-trips to the in-memory best model
    auto loaded = load_model<double>(paths.best_checkpoint());
    REQUIRE(models_identical(loaded, out.best_model));
}

TEST_CASE("resumed runs reproduce the uninterrupted trajectory") {
    Bench bench;
    TempDir tmp("resume");
    const auto split_dir = tmp.path / "split";
    std::filesystem::create_directories(split_dir);
    SplitPaths sp{split_dir};
    save_corpus_jsonl(bench.labeled, sp.labeled());
    save_corpus_jsonl(bench.unlabeled, sp.unlabeled());
    save_corpus_jsonl(bench.validation, sp.validation());
    bench.vocab.save(sp.vocab().string());

    RunConfig full;
    full.split_dir = split_dir.string();
    full.out_dir = (tmp.path / "full").string();
    full.encoder = bench.enc;
    full.train = bench.config();
    full.train.max_iterations = 3;
    auto uninterrupted = run_training<double>(full);

    RunConfig part = full;
    part.out_dir = (tmp.path / "part").string();
    part.train.max_iterations = 2;
    run_training<double>(part);
    part.train.max_iterations = 3;  // continue to the full horizon
    auto resumed = run_training<double>(part, /*resume=*/true);

    REQUIRE(resumed.result.records.size() == uninterrupted.result.records.size());
    for (size_t i = 0; i < resumed.result.records.size(); ++i)
        REQUIRE(nlohmann::json(resumed.result.records[i]).dump() ==
                nlohmann::json(uninterrupted.result.records[i]).dump());
    REQUIRE(models_identical(resumed.best_model, uninterrupted.best_model));
}

TEST_CASE("the run lock blocks concurrent writers") {
    TempDir tmp("lock");
    RunLock first(tmp.path / "run.lock", false);
    REQUIRE_THROWS_AS(RunLock(tmp.path / "run.lock", false), IoError);
    RunLock stolen(tmp.path / "run.lock", true);  // resume path
}
