#include <cstring>
#include <filesystem>

#include "cmaseg/encoders.hpp"
#include "cmaseg/synthetic.hpp"
#include "doctest.h"

using namespace cmaseg;

namespace {

RunConfig tiny_cfg() {
    RunConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_text = 8;
    cfg.text_heads = 2;
    cfg.enc_base_width = 4;
    return cfg;
}

Tensor rand_frame(size_t h, size_t w, Rng& rng) {
    Tensor t = Tensor::uninitialized({3, h, w});
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(0, 1);
    return t;
}

}  // namespace

TEST_CASE("encode_frame level shapes follow the stride table") {
    RunConfig cfg = tiny_cfg();
    Rng rng(1);
    ParamStore store;
    auto vision = make_vision_encoder(store, cfg, rng);
    Tape tape(false);
    auto feats = encode_frame(tape, rand_frame(64, 64, rng), vision);
    REQUIRE(feats.levels.size() == 4);
    const size_t expect_hw[4] = {16, 8, 4, 2};
    for (size_t l = 0; l < 4; ++l) {
        CHECK(feats.levels[l].extent(0) == vision.widths[l]);
        CHECK(feats.levels[l].extent(1) == expect_hw[l]);
        CHECK(feats.levels[l].extent(2) == expect_hw[l]);
    }
    for (size_t h = 32; h <= 128; h += 32) {
        auto f = encode_frame(tape, rand_frame(h, 96, rng), vision);
        for (size_t l = 0; l < 4; ++l) {
            CHECK(f.levels[l].extent(1) == h / kLevelStrides[l]);
            CHECK(f.levels[l].extent(2) == 96 / kLevelStrides[l]);
        }
    }
    CHECK_THROWS_AS(encode_frame(tape, rand_frame(30, 64, rng), vision), Error);
}

TEST_CASE("encode_frame is pure and zero maps to zero without biases") {
    RunConfig cfg = tiny_cfg();
    Rng rng(2);
    ParamStore store;
    auto vision = make_vision_encoder(store, cfg, rng);
    Tape tape(false);
    Tensor frame = rand_frame(32, 32, rng);
    auto a = encode_frame(tape, frame, vision);
    auto b = encode_frame(tape, frame, vision);
    for (size_t l = 0; l < 4; ++l)
        CHECK(std::memcmp(a.levels[l].data(), b.levels[l].data(),
                          a.levels[l].size() * sizeof(double)) == 0);

    // zero out conv biases, feed a zero frame: linear conv stages keep zeros
    for (auto& e : store.entries())
        if (e.name.ends_with(".b"))
            for (size_t i = 0; i < e.tensor.size(); ++i) e.tensor.data()[i] = 0.0;
    auto z = encode_frame(tape, Tensor::zeros({3, 32, 32}), vision);
    for (size_t l = 0; l < 4; ++l)
        for (size_t i = 0; i < z.levels[l].size(); ++i) CHECK(z.levels[l].data()[i] == 0.0);
}

TEST_CASE("encode_expression length, order sensitivity, determinism") {
    RunConfig cfg = tiny_cfg();
    Rng rng(3);
    ParamStore store;
    auto text = make_text_encoder(store, cfg, 20, rng);
    Tape tape(false);

    auto one = encode_expression(tape, {5}, text, cfg.max_text_len);
    CHECK(one.length() == 1);
    CHECK(one.tokens.extent(1) == cfg.d_text);

    auto fwd = encode_expression(tape, {3, 4, 5}, text, cfg.max_text_len);
    auto rev = encode_expression(tape, {5, 4, 3}, text, cfg.max_text_len);
    // token 4 keeps its position but its neighbors changed (contextualization)
    bool ctx_diff = false;
    for (size_t c = 0; c < cfg.d_text; ++c)
        if (fwd.tokens.at({1, c}) != rev.tokens.at({1, c})) ctx_diff = true;
    CHECK(ctx_diff);
    // token 5 moved from position 2 to position 0 (position encodings active)
    bool pos_diff = false;
    for (size_t c = 0; c < cfg.d_text; ++c)
        if (fwd.tokens.at({2, c}) != rev.tokens.at({0, c})) pos_diff = true;
    CHECK(pos_diff);

    auto again = encode_expression(tape, {3, 4, 5}, text, cfg.max_text_len);
    CHECK(std::memcmp(fwd.tokens.data(), again.tokens.data(),
                      fwd.tokens.size() * sizeof(double)) == 0);

    CHECK_THROWS_AS(encode_expression(tape, {}, text, cfg.max_text_len), Error);
    CHECK_THROWS_AS(encode_expression(tape, std::vector<int>(25, 1), text, cfg.max_text_len),
                    Error);
}

TEST_CASE("vocabulary round-trip and unknown handling") {
    auto vocab = grammar_vocabulary();
    CHECK(vocab.id_of("circle") >= 0);
    CHECK(vocab.token_of(vocab.id_of("circle")) == "circle");
    CHECK(vocab.id_of("zebra") == vocab.unk_id());

    auto ids = vocab.encode("The RED circle MOVING left", 20);
    REQUIRE(ids.size() == 5);
    CHECK(vocab.token_of(ids[0]) == "the");
    CHECK(vocab.token_of(ids[1]) == "red");
    CHECK_THROWS_AS(vocab.encode("", 20), Error);

    const auto path = (std::filesystem::temp_directory_path() / "cmaseg_vocab_test.txt").string();
    vocab.save(path);
    auto loaded = Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    for (size_t i = 0; i < vocab.size(); ++i)
        CHECK(loaded.token_of(static_cast<int>(i)) == vocab.token_of(static_cast<int>(i)));
    std::filesystem::remove(path);
}
