#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace rst;
using test_util::TempDir;

namespace {

EncoderConfig small_cfg(int vocab = 20, int hidden = 16, int layers = 2, int heads = 4,
                        int max_len = 16) {
    EncoderConfig c;
    c.vocab_size = vocab;
    c.hidden_dim = hidden;
    c.num_layers = layers;
    c.num_heads = heads;
    c.max_len = max_len;
    return c;
}

}  // namespace

TEST_CASE("encoder config validation") {
    EncoderConfig c = small_cfg();
    c.hidden_dim = 10;
    c.num_heads = 4;
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.mask_token_id = c.sep_token_id;
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.pad_token_id = 25;  // >= vocab_size
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.dropout_rate = 1.0;
    REQUIRE_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("token states have one row per input token") {
    auto enc = new_encoder<double>(small_cfg(), 3);
    auto out = encode(enc, {4, 5, 6, 7, 8, 9, 10});
    REQUIRE(out.token_states.rows() == 7);
    REQUIRE(out.token_states.cols() == 16);
    REQUIRE(out.pooled.rows() == 1);
    REQUIRE((out.pooled - out.token_states.row(0)).norm() == 0.0);
}

TEST_CASE("encoding is deterministic with dropout off") {
    auto enc = new_encoder<double>(small_cfg(), 3);
    auto a = encode(enc, {4, 5, 6});
    auto b = encode(enc, {4, 5, 6});
    REQUIRE((a.token_states - b.token_states).norm() == 0.0);
}

TEST_CASE("position permutation changes the representation") {
    auto enc = new_encoder<double>(small_cfg(), 3);
    auto a = encode(enc, {4, 5, 6, 7, 8});
    auto b = encode(enc, {8, 5, 6, 7, 4});  // swap two non-adjacent tokens
    REQUIRE((a.token_states - b.token_states).norm() > 1e-6);
}

TEST_CASE("initialization is seed-determined") {
    const EncoderConfig cfg = small_cfg();
    auto a = new_encoder<double>(cfg, 9);
    auto b = new_encoder<double>(cfg, 9);
    auto c = new_encoder<double>(cfg, 10);
    std::vector<const Mat<double>*> pa, pb, pc;
    a.visit([&](const std::string&, const Mat<double>& m) { pa.push_back(&m); });
    b.visit([&](const std::string&, const Mat<double>& m) { pb.push_back(&m); });
    c.visit([&](const std::string&, const Mat<double>& m) { pc.push_back(&m); });
    bool b_same = true, c_same = true;
    for (size_t i = 0; i < pa.size(); ++i) {
        b_same = b_same && (*pa[i] - *pb[i]).cwiseAbs().maxCoeff() == 0.0;
        c_same = c_same && (*pa[i] - *pc[i]).cwiseAbs().maxCoeff() == 0.0;
    }
    REQUIRE(b_same);
    REQUIRE_FALSE(c_same);
}

TEST_CASE("parameter count matches the closed form") {
    // hidden 32, 2 layers: (V + max_len)*H + L*(12H^2 + 13H) + 2H
    EncoderConfig cfg = small_cfg(50, 32, 2, 4, 24);
    auto enc = new_encoder<double>(cfg, 1);
    const long expected = (50 + 24) * 32 + 2 * (12 * 32 * 32 + 13 * 32) + 2 * 32;
    REQUIRE(Encoder<double>::expected_param_count(cfg) == expected);
    REQUIRE(enc.param_count() == expected);
}

TEST_CASE("padding beyond the attention region does not leak in") {
    auto enc = new_encoder<double>(small_cfg(), 3);
    std::vector<int> ids{4, 5, 6, 7};
    auto base = encode(enc, ids);

    std::vector<int> padded = ids;
    padded.insert(padded.end(), 5, enc.cfg.pad_token_id);
    auto with_pad = encode(enc, padded, /*attn_len=*/4);

    const double diff =
        (with_pad.token_states.topRows(4) - base.token_states).cwiseAbs().maxCoeff();
    REQUIRE(diff < 1e-6);
}

TEST_CASE("encode rejects bad inputs") {
    auto enc = new_encoder<double>(small_cfg(), 3);
    REQUIRE_THROWS_AS(encode(enc, {4, 99}), Error);                    // out-of-range id
    REQUIRE_THROWS_AS(encode(enc, std::vector<int>(17, 4)), Error);    // beyond max_len
    REQUIRE_THROWS_AS(encode(enc, std::vector<int>{}), Error);         // empty
}

TEST_CASE("encoder gradients match finite differences") {
    // scalar functional of encode output on a dim-16 config
    test_util::TinyWorld world(16, 1, 2);
    auto model = world.model<double>(5);
    std::mt19937_64 rng(77);
    test_util::randomize_params(model, rng);

    Mat<double> probe = randn<double>(4, 16, 0.5, rng);
    const std::vector<int> ids{4, 5, 6, 7};
    auto loss = [&](Graph<double>& g, MultiTaskModel<double>& m) {
        BatchLayout layout;
        NodeId h = encode_packed(g, m.encoder, {ids}, layout);
        NodeId flat = g.cmul(h, probe);
        return g.cross_entropy(g.matmul(flat, g.param(&m.task_w)),
                               std::vector<int>{0, 1, 0, 1}, std::vector<double>(4, 0.25));
    };
    REQUIRE(test_util::max_gradient_error(model, loss) < 1e-4);
}

TEST_CASE("dropout masks activations during training forwards only") {
    EncoderConfig cfg = small_cfg();
    cfg.dropout_rate = 0.5;
    auto enc = new_encoder<double>(cfg, 3);

    std::mt19937_64 rng(11);
    DropoutCtx dctx{&rng, cfg.dropout_rate};
    Graph<double> g1;
    BatchLayout l1;
    NodeId a = encode_packed(g1, enc, {{4, 5, 6}}, l1, dctx);
    Graph<double> g2;
    BatchLayout l2;
    NodeId b = encode_packed(g2, enc, {{4, 5, 6}}, l2, dctx);
    REQUIRE((g1.value(a) - g2.value(b)).norm() > 1e-9);  // different draws

    auto c = encode(enc, {4, 5, 6});
    auto d = encode(enc, {4, 5, 6});
    REQUIRE((c.token_states - d.token_states).norm() == 0.0);  // inference path
}
