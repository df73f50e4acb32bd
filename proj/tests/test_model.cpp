#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace rst;
using test_util::TinyWorld;
using test_util::bias_only_model;

TEST_CASE("task distribution is a normalized K-vector") {
    TinyWorld world;
    auto model = world.model<double>(3);
    auto [task, rat] = forward(model, world.input(0));
    REQUIRE(task.probs.size() == 2);
    double sum = 0;
    for (double p : task.probs) {
        REQUIRE(p >= 0.0);
        sum += p;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-6);
    REQUIRE(rat.probs.size() == static_cast<size_t>(world.input(0).doc_len));
}

TEST_CASE("zeroed heads give uniform task and 0.5 rationale probabilities") {
    TinyWorld world;
    auto model = bias_only_model<double>(world.encoder_cfg, 2, {0.0, 0.0}, {0.0, 0.0});
    auto [task, rat] = forward(model, world.input(0));
    REQUIRE(task.probs[0] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(task.probs[1] == Catch::Approx(0.5).margin(1e-12));
    for (double p : rat.probs) REQUIRE(p == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("distribution invariants hold under random parameters") {
    TinyWorld world;
    std::mt19937_64 rng(404);
    for (int draw = 0; draw < 20; ++draw) {
        auto model = world.model<double>(1000 + draw);
        test_util::randomize_params(model, rng);
        auto [task, rat] = forward(model, world.input(draw % 8));
        double sum = 0;
        for (double p : task.probs) {
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-6);
        for (double p : rat.probs) {
            REQUIRE(p >= 0.0);
            REQUIRE(p <= 1.0);
        }
    }
}

TEST_CASE("task head gradient matches finite differences") {
    TinyWorld world(8, 1, 2);
    auto model = world.model<double>(21);
    std::mt19937_64 rng(13);
    test_util::randomize_params(model, rng);
    const ModelInput in = world.input(0);

    auto loss = [&](Graph<double>& g, MultiTaskModel<double>& m) {
        ForwardHandles h = forward_packed(g, m, {&in});
        return g.cross_entropy(h.task_logits, {1}, {1.0});  // -log p(y=1|x)
    };
    REQUIRE(test_util::max_gradient_error(model, loss) < 1e-4);
}

TEST_CASE("pseudo-labeling takes the argmax with its probability") {
    TinyWorld world;
    // softmax(ln 0.8, ln 0.2) = (0.8, 0.2)
    auto model = bias_only_model<double>(world.encoder_cfg, 2, {std::log(0.8), std::log(0.2)},
                                         {std::log(0.3), std::log(0.7)});
    PseudoLabeledExample ex = pseudo_label(model, world.corpus.documents[0], world.vocab);
    REQUIRE(ex.y_pseudo == 0);
    REQUIRE(ex.y_confidence == Catch::Approx(0.8).margin(1e-9));
    // every token: P(r=1) = 0.7 >= 0.5 -> 1 with confidence 0.7
    for (size_t j = 0; j < ex.r_pseudo.values.size(); ++j) {
        REQUIRE(ex.r_pseudo.values[j] == 1.0);
        REQUIRE(ex.r_confidences[j] == Catch::Approx(0.7).margin(1e-9));
    }
}

TEST_CASE("pseudo-label ties resolve to the lowest class and rationale 1") {
    TinyWorld world;
    auto model = bias_only_model<double>(world.encoder_cfg, 2, {0.0, 0.0}, {0.0, 0.0});
    PseudoLabeledExample ex = pseudo_label(model, world.corpus.documents[1], world.vocab);
    REQUIRE(ex.y_pseudo == 0);
    REQUIRE(ex.y_confidence == Catch::Approx(0.5).margin(1e-12));
    for (size_t j = 0; j < ex.r_pseudo.values.size(); ++j) {
        REQUIRE(ex.r_pseudo.values[j] == 1.0);  // 0.5 ties to 1
        REQUIRE(ex.r_confidences[j] == Catch::Approx(0.5).margin(1e-12));
    }
}

TEST_CASE("pseudo-label confidences agree with the forward distribution") {
    TinyWorld world;
    auto model = world.model<double>(88);
    std::mt19937_64 rng(5);
    test_util::randomize_params(model, rng);
    const Document& doc = world.corpus.documents[2];
    PseudoLabeledExample ex = pseudo_label(model, doc, world.vocab);
    auto [task, rat] = forward(model, ex.input);
    REQUIRE(ex.y_pseudo == task.argmax());
    REQUIRE(ex.y_confidence == Catch::Approx(task.probs[ex.y_pseudo]).margin(1e-12));
    for (size_t j = 0; j < rat.probs.size(); ++j) {
        const int expect = rat.probs[j] >= 0.5 ? 1 : 0;
        REQUIRE(ex.r_pseudo.values[j] == expect);
        REQUIRE(ex.r_confidences[j] ==
                Catch::Approx(expect ? rat.probs[j] : 1.0 - rat.probs[j]).margin(1e-12));
    }
}

TEST_CASE("pseudo-labeling ignores dropout") {
    TinyWorld world;
    EncoderConfig cfg = world.encoder_cfg;
    cfg.dropout_rate = 0.5;
    auto model = new_model<double>(cfg, 2, 3);
    PseudoLabeledExample a = pseudo_label(model, world.corpus.documents[0], world.vocab);
    PseudoLabeledExample b = pseudo_label(model, world.corpus.documents[0], world.vocab);
    REQUIRE(a.y_confidence == b.y_confidence);
    REQUIRE(a.r_confidences == b.r_confidences);
}

TEST_CASE("sampled pseudo-labels record the probability of the sample") {
    TinyWorld world;
    auto model = bias_only_model<double>(world.encoder_cfg, 2, {std::log(0.8), std::log(0.2)},
                                         {std::log(0.4), std::log(0.6)});
    std::mt19937_64 rng(2024);
    int ones = 0, runs = 400;
    for (int i = 0; i < runs; ++i) {
        PseudoLabeledExample ex = pseudo_label(model, world.corpus.documents[0], world.vocab,
                                               PseudoLabelMode::sample, &rng);
        ones += ex.y_pseudo == 0;
        const double expect = ex.y_pseudo == 0 ? 0.8 : 0.2;
        REQUIRE(ex.y_confidence == Catch::Approx(expect).margin(1e-9));
    }
    REQUIRE(ones > runs / 2);  // the 0.8 class dominates
    REQUIRE(ones < runs);      // but sampling is not argmax
}

// --- masking -------------------------------------------------------------

TEST_CASE("mask-keep and mask-drop follow the rationale") {
    TinyWorld world;
    auto model = world.model<double>(1);
    const int mask_id = model.encoder.cfg.mask_token_id;
    ModelInput in;
    in.ids = {10, 11, 12};
    in.doc_len = 3;
    RationaleMask r{{1, 0, 1}, MaskKind::hard};

    ModelInput kept = mask_keep_rationale(in, r, model);
    REQUIRE(kept.ids == std::vector<int>{10, mask_id, 12});
    ModelInput dropped = mask_drop_rationale(in, r, model);
    REQUIRE(dropped.ids == std::vector<int>{mask_id, 11, mask_id});

    RationaleMask ones{{1, 1, 1}, MaskKind::hard};
    REQUIRE(mask_keep_rationale(in, ones, model).ids == in.ids);
    RationaleMask zeros{{0, 0, 0}, MaskKind::hard};
    REQUIRE(mask_drop_rationale(in, zeros, model).ids == in.ids);
    REQUIRE(mask_keep_rationale(in, zeros, model).ids ==
            std::vector<int>{mask_id, mask_id, mask_id});
}

TEST_CASE("mask length mismatch is an error") {
    TinyWorld world;
    auto model = world.model<double>(1);
    ModelInput in;
    in.ids = {10, 11, 12};
    in.doc_len = 3;
    RationaleMask r{{1, 0}, MaskKind::hard};
    REQUIRE_THROWS_AS(mask_keep_rationale(in, r, model), Error);
}

TEST_CASE("keep and drop partition the document and spare the query") {
    TinyWorld world;
    auto model = world.model<double>(1);
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 1000; ++trial) {
        const int doc_len = 1 + static_cast<int>(rng() % 6);
        const int q_len = static_cast<int>(rng() % 3);
        ModelInput in;
        for (int j = 0; j < doc_len; ++j) in.ids.push_back(4 + static_cast<int>(rng() % 8));
        if (q_len > 0) {
            in.ids.push_back(Vocabulary::kSep);
            for (int j = 0; j < q_len; ++j) in.ids.push_back(4 + static_cast<int>(rng() % 8));
        }
        in.doc_len = doc_len;
        RationaleMask r = RationaleMask::zeros(doc_len);
        for (int j = 0; j < doc_len; ++j) r.values[j] = rng() % 2;

        ModelInput kept = mask_keep_rationale(in, r, model);
        ModelInput dropped = mask_drop_rationale(in, r, model);
        for (int j = 0; j < doc_len; ++j) {
            if (r.values[j] >= 0.5) {
                REQUIRE(kept.ids[j] == in.ids[j]);
                REQUIRE(dropped.ids[j] == model.encoder.cfg.mask_token_id);
            } else {
                REQUIRE(kept.ids[j] == model.encoder.cfg.mask_token_id);
                REQUIRE(dropped.ids[j] == in.ids[j]);
            }
        }
        for (size_t j = doc_len; j < in.ids.size(); ++j) {
            REQUIRE(kept.ids[j] == in.ids[j]);
            REQUIRE(dropped.ids[j] == in.ids[j]);
        }
    }
}

// --- teacher/student copy --------------------------------------------------

TEST_CASE("copying the student into the teacher aligns outputs exactly") {
    TinyWorld world;
    auto student = world.model<double>(100);
    auto teacher = world.model<double>(200);
    const ModelInput in = world.input(0);

    copy_into_teacher(student, teacher);
    auto [st, sr] = forward(student, in);
    auto [tt, tr] = forward(teacher, in);
    REQUIRE(st.probs == tt.probs);
    REQUIRE(sr.probs == tr.probs);

    // mutating the teacher must not alias student storage
    teacher.task_b(0, 0) += 1.0;
    auto [st2, sr2] = forward(student, in);
    REQUIRE(st2.probs == st.probs);

    // idempotent
    copy_into_teacher(student, teacher);
    copy_into_teacher(student, teacher);
    auto [tt3, tr3] = forward(teacher, in);
    REQUIRE(tt3.probs == st.probs);
}

TEST_CASE("copy between mismatched configurations is refused") {
    TinyWorld world;
    auto student = world.model<double>(1);
    EncoderConfig other = world.encoder_cfg;
    other.hidden_dim = 16;
    other.num_heads = 4;
    auto teacher = new_model<double>(other, 2, 2);
    REQUIRE_THROWS_AS(copy_into_teacher(student, teacher), Error);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
    TinyWorld world;
    auto model = world.model<double>(77);
    test_util::TempDir tmp("ckpt");
    const auto path = tmp.path / "m.ckpt";
    save_model(model, path);
    auto loaded = load_model<double>(path);

    bool identical = true;
    std::vector<const Mat<double>*> a, b;
    model.visit([&](const std::string&, const Mat<double>& m) { a.push_back(&m); });
    loaded.visit([&](const std::string&, const Mat<double>& m) { b.push_back(&m); });
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i)
        identical = identical && std::memcmp(a[i]->data(), b[i]->data(),
                                             sizeof(double) * a[i]->size()) == 0;
    REQUIRE(identical);

    // re-saving the loaded model reproduces the file byte-for-byte
    const auto path2 = tmp.path / "m2.ckpt";
    save_model(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);

    // scalar-width mismatch is refused
    REQUIRE_THROWS_AS(load_model<float>(path), ParseError);
}
