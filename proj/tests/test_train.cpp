#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmaseg/checkpoint.hpp"
#include "cmaseg/losses.hpp"
#include "cmaseg/synthetic.hpp"
#include "cmaseg/trainer.hpp"
#include "doctest.h"

using namespace cmaseg;
namespace fs = std::filesystem;

namespace {

struct TestData {
    std::string dir;
    Manifest manifest;
    FoldSpec fold;
    Vocabulary vocab = grammar_vocabulary();

    TestData() {
        dir = (fs::temp_directory_path() / "cmaseg_train_data").string();
        if (!fs::exists(dir + "/manifest.json")) {
            DatasetSpec spec;
            spec.classes = 2;
            spec.videos_per_class = 3;
            spec.frames = 4;
            spec.canvas = 32;
            spec.seed = 77;
            generate_dataset(spec, dir);
        }
        manifest = load_manifest(dir + "/manifest.json");
        fold.fold_index = 1;
        fold.train_classes = manifest.classes;
    }
};

RunConfig train_cfg() {
    RunConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_text = 4;
    cfg.text_heads = 2;
    cfg.enc_base_width = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_mult = 2;
    cfg.n_slots = 2;
    cfg.seg_channels = 3;
    cfg.k_shot = 2;
    cfg.n_query = 2;
    cfg.holdout_per_class = 0;
    cfg.steps = 0;
    cfg.seed = 3;
    return cfg;
}

bool params_identical(const ParamStore& a, const ParamStore& b) {
    if (a.entries().size() != b.entries().size()) return false;
    for (size_t i = 0; i < a.entries().size(); ++i) {
        const auto& ea = a.entries()[i];
        const auto& eb = b.entries()[i];
        if (ea.name != eb.name || !same_shape(ea.tensor.shape(), eb.tensor.shape())) return false;
        if (std::memcmp(ea.tensor.data(), eb.tensor.data(),
                        ea.tensor.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("a zero-step run checkpoints the initialization") {
    TestData data;
    RunConfig cfg = train_cfg();
    Model model(cfg, data.vocab.size());
    Model reference(cfg, data.vocab.size());

    const std::string ckpt = data.dir + "/init.ckpt";
    std::ostringstream log;
    TrainOptions opts;
    opts.out_checkpoint = ckpt;
    opts.log = &log;
    auto result = train(model, data.manifest, data.fold, Split::train, data.vocab, opts);
    CHECK(result.steps_run == 0);
    CHECK(log.str().empty());
    CHECK(params_identical(model.params(), reference.params()));

    Model loaded(cfg, data.vocab.size());
    // scramble, then restore from the checkpoint
    for (auto& e : loaded.params().entries())
        for (size_t i = 0; i < e.tensor.size(); ++i) e.tensor.data()[i] += 1.0;
    load_model_checkpoint(loaded, ckpt);
    CHECK(params_identical(loaded.params(), reference.params()));
}

TEST_CASE("resumed training is bit-identical to an uninterrupted run") {
    TestData data;
    RunConfig cfg = train_cfg();
    cfg.steps = 12;

    // uninterrupted run
    Model straight(cfg, data.vocab.size());
    std::ostringstream straight_log;
    TrainOptions full_opts;
    full_opts.out_checkpoint = data.dir + "/straight.ckpt";
    full_opts.log = &straight_log;
    train(straight, data.manifest, data.fold, Split::train, data.vocab, full_opts);

    // 6 steps, checkpoint, resume 6 more
    RunConfig half_cfg = cfg;
    half_cfg.steps = 6;
    Model part(half_cfg, data.vocab.size());
    std::ostringstream log_a;
    TrainOptions opts_a;
    opts_a.out_checkpoint = data.dir + "/part.ckpt";
    opts_a.log = &log_a;
    train(part, data.manifest, data.fold, Split::train, data.vocab, opts_a);

    Model resumed(cfg, data.vocab.size());
    std::ostringstream log_b;
    TrainOptions opts_b;
    opts_b.resume = data.dir + "/part.ckpt";
    opts_b.out_checkpoint = data.dir + "/resumed.ckpt";
    opts_b.log = &log_b;
    train(resumed, data.manifest, data.fold, Split::train, data.vocab, opts_b);

    CHECK(params_identical(straight.params(), resumed.params()));
    CHECK(log_a.str() + log_b.str() == straight_log.str());

    // checkpoints agree byte-for-byte on every record
    auto a = load_checkpoint(data.dir + "/straight.ckpt");
    auto b = load_checkpoint(data.dir + "/resumed.ckpt");
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(std::memcmp(a[i].second.data(), b[i].second.data(),
                          a[i].second.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("training logs one line per step in the documented format") {
    TestData data;
    RunConfig cfg = train_cfg();
    cfg.steps = 3;
    Model model(cfg, data.vocab.size());
    std::ostringstream log;
    TrainOptions opts;
    opts.log = &log;
    train(model, data.manifest, data.fold, Split::train, data.vocab, opts);

    std::istringstream lines(log.str());
    std::string line;
    size_t count = 0;
    while (std::getline(lines, line)) {
        ++count;
        std::istringstream fields(line);
        std::string step, id, total, cls, kernel, slot;
        CHECK(std::getline(fields, step, '\t'));
        CHECK(std::getline(fields, id, '\t'));
        CHECK(std::getline(fields, total, '\t'));
        CHECK(std::getline(fields, cls, '\t'));
        CHECK(std::getline(fields, kernel, '\t'));
        CHECK(std::getline(fields, slot, '\t'));
        CHECK(std::stoul(step) == count);
        CHECK(std::stod(total) >= 0.0);
        CHECK(std::abs(std::stod(total) - (std::stod(cls) + std::stod(kernel))) <= 1e-12);
    }
    CHECK(count == 3);
}

TEST_CASE("loss on a fixed overfit episode decreases for most seeds") {
    TestData data;
    RunConfig base = train_cfg();
    base.lr = 3e-4;

    // one fixed episode reused every step
    Rng sampler(5);
    SampleOptions sopts = SampleOptions::from(base);
    EpisodeRef ref = sample_episode(data.manifest, data.fold, Split::train, sopts, sampler);
    EpisodeTensors episode = load_episode(data.manifest, ref, base, data.vocab, true);

    int improved = 0;
    const int n_seeds = 10, steps = 50;
    for (int seed = 0; seed < n_seeds; ++seed) {
        RunConfig cfg = base;
        cfg.seed = 100 + seed;
        Model model(cfg, data.vocab.size());
        AdamW opt(model.params(), cfg);
        double first = 0, last = 0;
        for (int s = 0; s < steps; ++s) {
            model.params().zero_grads();
            Tape tape;
            auto pred = model.forward(tape, episode);
            auto gt = make_ground_truth(episode.query_masks, pred.masks.extent(2),
                                        pred.masks.extent(3));
            auto loss = match_and_loss(tape, pred, gt, LossWeights::from(cfg));
            if (s == 0) first = loss.total.item();
            last = loss.total.item();
            tape.backward(loss.total);
            opt.step();
        }
        if (last < first) ++improved;
    }
    CHECK(improved >= 9);
}

TEST_CASE("freeze_encoders keeps encoder parameters bit-identical through training") {
    TestData data;
    RunConfig cfg = train_cfg();
    cfg.steps = 4;
    cfg.freeze_encoders = true;
    Model model(cfg, data.vocab.size());

    std::vector<std::pair<std::string, Tensor>> before;
    for (const auto& e : model.params().entries())
        if (e.name.rfind("encoder.", 0) == 0) before.emplace_back(e.name, e.tensor.clone());
    REQUIRE(!before.empty());

    TrainOptions opts;
    train(model, data.manifest, data.fold, Split::train, data.vocab, opts);

    Model fresh(cfg, data.vocab.size());
    bool any_other_changed = false;
    for (const auto& e : model.params().entries()) {
        if (e.name.rfind("encoder.", 0) == 0) continue;
        const Tensor init = fresh.params().get(e.name);
        if (std::memcmp(e.tensor.data(), init.data(), init.size() * sizeof(double)) != 0)
            any_other_changed = true;
    }
    CHECK(any_other_changed);
    for (const auto& [name, saved] : before) {
        const Tensor now = model.params().get(name);
        CHECK(std::memcmp(now.data(), saved.data(), saved.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("a non-finite loss aborts with the step index") {
    TestData data;
    RunConfig cfg = train_cfg();
    cfg.steps = 1;
    Model model(cfg, data.vocab.size());
    // poison one parameter so the forward pass goes non-finite
    Tensor w = model.params().get("heads.class.w");
    w.data()[0] = std::numeric_limits<double>::infinity();
    TrainOptions opts;
    try {
        train(model, data.manifest, data.fold, Split::train, data.vocab, opts);
        FAIL("expected a numeric error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::numeric);
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}
