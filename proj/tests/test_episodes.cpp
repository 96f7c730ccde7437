#include <filesystem>
#include <fstream>
#include <set>

#include "cmaseg/synthetic.hpp"
#include "doctest.h"

using namespace cmaseg;
namespace fs = std::filesystem;

namespace {

// manifest metadata only; paths are never opened by the sampler
Manifest fake_manifest(size_t n_classes, size_t videos_per_class, size_t frames, Rng& rng) {
    Manifest m;
    for (size_t c = 0; c < n_classes; ++c) m.classes.push_back("class" + std::to_string(c));
    for (size_t c = 0; c < n_classes; ++c) {
        for (size_t v = 0; v < videos_per_class; ++v) {
            VideoRecord r;
            r.video_id = m.classes[c] + "_v" + std::to_string(v);
            r.class_label = m.classes[c];
            const size_t n = frames + rng.uniform_index(3);
            for (size_t f = 0; f < n; ++f) {
                r.frames.push_back(r.video_id + "/f" + std::to_string(f) + ".ppm");
                r.masks.push_back(r.video_id + "/m" + std::to_string(f) + ".pgm");
            }
            r.expressions.push_back("the red circle moving left");
            m.videos.push_back(std::move(r));
        }
    }
    return m;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("manifest write/load round-trip") {
    Rng rng(1);
    Manifest m = fake_manifest(3, 4, 6, rng);
    const std::string path = temp_path("cmaseg_manifest_test.json");
    write_manifest(m, path);
    Manifest loaded = load_manifest(path);
    REQUIRE(loaded.classes == m.classes);
    REQUIRE(loaded.videos.size() == m.videos.size());
    for (size_t i = 0; i < m.videos.size(); ++i) {
        CHECK(loaded.videos[i].video_id == m.videos[i].video_id);
        CHECK(loaded.videos[i].class_label == m.videos[i].class_label);
        CHECK(loaded.videos[i].frames == m.videos[i].frames);
        CHECK(loaded.videos[i].masks == m.videos[i].masks);
        CHECK(loaded.videos[i].expressions == m.videos[i].expressions);
    }
    fs::remove(path);
}

TEST_CASE("manifest schema errors name the offending record") {
    const std::string path = temp_path("cmaseg_manifest_bad.json");
    {
        std::ofstream os(path);
        os << R"({"classes":["cat"],"videos":[{"video_id":"vid7","class":"cat",)"
           << R"("frames":["a.ppm"],"masks":["a.pgm"]}]})";
    }
    try {
        load_manifest(path);
        FAIL("expected schema error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("vid7") != std::string::npos);
        CHECK(e.code() == ErrorCode::io);
    }
    {
        std::ofstream os(path);
        os << R"({"classes":["cat"],"videos":[{"video_id":"vid8","class":"dog",)"
           << R"("frames":["a.ppm"],"masks":["a.pgm"],"expressions":["x"]}]})";
    }
    CHECK_THROWS_AS(load_manifest(path), Error);
    {
        std::ofstream os(path);
        os << R"({"classes":["cat"],"videos":[{"video_id":"vid9","class":"cat",)"
           << R"("frames":["a.ppm","b.ppm"],"masks":["a.pgm"],"expressions":["x"]}]})";
    }
    CHECK_THROWS_AS(load_manifest(path), Error);
    fs::remove(path);
}

TEST_CASE("build_folds mirrors the benchmark splits") {
    Rng rng(2);

    SUBCASE("48 classes give 36 train / 12 test per fold") {
        Manifest m = fake_manifest(48, 10, 8, rng);
        auto build = build_folds(m, 4, 10, 3.0, 7);
        REQUIRE(build.folds.size() == 4);
        std::set<std::string> all_test;
        for (const auto& fold : build.folds) {
            CHECK(fold.train_classes.size() == 36);
            CHECK(fold.test_classes.size() == 12);
            for (const auto& c : fold.test_classes) {
                CHECK(all_test.insert(c).second);  // partition: no repeats
                for (const auto& t : fold.train_classes) CHECK(t != c);
            }
        }
        CHECK(all_test.size() == 48);
    }

    SUBCASE("4 classes over 4 folds test exactly one class each") {
        Manifest m = fake_manifest(4, 10, 8, rng);
        auto build = build_folds(m, 4, 10, 3.0, 3);
        for (const auto& fold : build.folds) CHECK(fold.test_classes.size() == 1);
    }

    SUBCASE("3 classes, 68 videos fold into 3 single-class test groups") {
        Manifest m;
        m.classes = {"person", "car", "bike"};
        const size_t counts[3] = {23, 23, 22};
        for (size_t c = 0; c < 3; ++c)
            for (size_t v = 0; v < counts[c]; ++v) {
                VideoRecord r;
                r.video_id = m.classes[c] + std::to_string(v);
                r.class_label = m.classes[c];
                r.frames = {"f.ppm"};
                r.masks = {"m.pgm"};
                r.expressions = {"the thing"};
                m.videos.push_back(std::move(r));
            }
        auto build = build_folds(m, 3, 10, 3.0, 1);
        REQUIRE(build.folds.size() == 3);
        std::set<std::string> tested;
        for (const auto& fold : build.folds) {
            CHECK(fold.test_classes.size() == 1);
            CHECK(fold.train_classes.size() == 2);
            tested.insert(fold.test_classes[0]);
        }
        CHECK(tested.size() == 3);
    }

    SUBCASE("disjointness holds for random manifests") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r2(seed + 100);
            Manifest m = fake_manifest(5 + r2.uniform_index(10), 10, 8, r2);
            auto build = build_folds(m, 4, 10, 3.0, seed);
            for (const auto& fold : build.folds) {
                std::set<std::string> train(fold.train_classes.begin(),
                                            fold.train_classes.end());
                for (const auto& c : fold.test_classes) CHECK(train.count(c) == 0);
            }
        }
    }

    SUBCASE("balancing drops small classes and caps the ratio") {
        Manifest m = fake_manifest(4, 12, 8, rng);
        // class0 gets only 3 videos, class1 gets 50
        Manifest skewed;
        skewed.classes = m.classes;
        for (const auto& v : m.videos) {
            if (v.class_label == "class0") {
                static int kept = 0;
                if (kept++ >= 3) continue;
            }
            skewed.videos.push_back(v);
        }
        for (size_t extra = 0; extra < 38; ++extra) {
            VideoRecord r;
            r.video_id = "class1_x" + std::to_string(extra);
            r.class_label = "class1";
            r.frames = {"f.ppm"};
            r.masks = {"m.pgm"};
            r.expressions = {"the thing"};
            skewed.videos.push_back(std::move(r));
        }
        Manifest balanced = balance_manifest(skewed, 10, 3.0, 5);
        CHECK(balanced.classes.size() == 3);  // class0 dropped
        size_t lo = SIZE_MAX, hi = 0;
        for (const auto& c : balanced.classes) {
            const size_t n = balanced.videos_of_class(c).size();
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        CHECK(hi <= lo * 3);
        CHECK_THROWS_AS(build_folds(skewed, 4, 10, 3.0, 0), Error);  // 3 classes < 4 folds
    }
}

TEST_CASE("episode sampling invariants over 1000 draws") {
    Rng rng(3);
    Manifest m = fake_manifest(8, 6, 9, rng);
    auto build = build_folds(m, 4, 2, 10.0, 11);
    const FoldSpec& fold = build.folds[0];
    std::set<std::string> train(fold.train_classes.begin(), fold.train_classes.end());

    SampleOptions opts;
    opts.k_shot = 5;
    opts.n_query = 3;
    opts.holdout_per_class = 2;
    Rng sampler(17);
    for (int i = 0; i < 1000; ++i) {
        EpisodeRef ref = sample_episode(m, fold, Split::train, opts, sampler);
        CHECK(train.count(ref.class_label) == 1);
        CHECK(ref.support_video != ref.query_video);
        CHECK(m.videos[ref.support_video].class_label == ref.class_label);
        CHECK(m.videos[ref.query_video].class_label == ref.class_label);
        CHECK(ref.support_start + opts.k_shot <= m.videos[ref.support_video].frames.size());
        CHECK(ref.query_start + opts.n_query <= m.videos[ref.query_video].frames.size());
    }

    // fixed seed reproduces the episode exactly
    Rng a(23), b(23);
    EpisodeRef r1 = sample_episode(m, fold, Split::test, opts, a);
    EpisodeRef r2 = sample_episode(m, fold, Split::test, opts, b);
    CHECK(r1.id == r2.id);

    // a class with exactly two videos uses them as the support/query pair
    Manifest two;
    two.classes = {"solo"};
    for (int v = 0; v < 2; ++v) {
        VideoRecord r;
        r.video_id = "v" + std::to_string(v);
        r.class_label = "solo";
        for (int f = 0; f < 6; ++f) {
            r.frames.push_back("f.ppm");
            r.masks.push_back("m.pgm");
        }
        r.expressions = {"the thing"};
        two.videos.push_back(std::move(r));
    }
    FoldSpec solo_fold;
    solo_fold.fold_index = 1;
    solo_fold.train_classes = {"solo"};
    SampleOptions solo_opts;
    solo_opts.k_shot = 5;
    solo_opts.n_query = 5;
    solo_opts.holdout_per_class = 0;
    for (int i = 0; i < 20; ++i) {
        EpisodeRef ref = sample_episode(two, solo_fold, Split::train, solo_opts, sampler);
        std::set<size_t> pair = {ref.support_video, ref.query_video};
        CHECK(pair == std::set<size_t>{0, 1});
    }
}

TEST_CASE("holdout videos never appear as training queries") {
    Rng rng(29);
    Manifest m = fake_manifest(2, 6, 9, rng);
    FoldSpec fold;
    fold.fold_index = 1;
    fold.train_classes = m.classes;
    SampleOptions opts;
    opts.k_shot = 2;
    opts.n_query = 2;
    opts.holdout_per_class = 2;

    // the last two videos of each class (manifest order) are the holdout
    std::set<size_t> holdout;
    for (const auto& cls : m.classes) {
        auto vids = m.videos_of_class(cls);
        holdout.insert(vids[vids.size() - 1]);
        holdout.insert(vids[vids.size() - 2]);
    }
    Rng sampler(31);
    for (int i = 0; i < 500; ++i) {
        EpisodeRef ref = sample_episode(m, fold, Split::train, opts, sampler);
        CHECK(holdout.count(ref.support_video) == 0);
        CHECK(holdout.count(ref.query_video) == 0);
    }
    opts.query_from_holdout = true;
    for (int i = 0; i < 200; ++i) {
        EpisodeRef ref = sample_episode(m, fold, Split::train, opts, sampler);
        CHECK(holdout.count(ref.query_video) == 1);
        CHECK(holdout.count(ref.support_video) == 0);
    }
}

TEST_CASE("synthetic videos render exact masks with unique referents") {
    Rng rng(5);
    SyntheticSceneSpec spec = sample_scene_spec(ShapeKind::circle, 64, 4, rng);
    SyntheticVideo video = generate_synthetic_video(spec);
    REQUIRE(video.frames.size() == 4);
    REQUIRE(video.masks.size() == 4);

    // mask equals an independent re-rasterization of the referent (IoU 1)
    for (size_t t = 0; t < 4; ++t) {
        size_t mismatches = 0, area = 0;
        for (size_t y = 0; y < 64; ++y)
            for (size_t x = 0; x < 64; ++x) {
                const bool inside = object_covers(spec.referent, t, 64, x + 0.5, y + 0.5);
                const bool mask_on = video.masks[t].px[y * 64 + x] != 0;
                area += inside;
                if (inside != mask_on) ++mismatches;
            }
        CHECK(mismatches == 0);
        CHECK(area > 0);  // referent present in every frame
    }

    // expression uniquely identifies the referent by attribute matching
    auto matches_expression = [&](const ObjectSpec& o) {
        return o.shape == spec.referent.shape && o.color == spec.referent.color &&
               o.direction == spec.referent.direction;
    };
    CHECK(matches_expression(spec.referent));
    for (const auto& d : spec.distractors) CHECK_FALSE(matches_expression(d));

    // determinism
    Rng rng2(5);
    SyntheticSceneSpec spec2 = sample_scene_spec(ShapeKind::circle, 64, 4, rng2);
    SyntheticVideo video2 = generate_synthetic_video(spec2);
    CHECK(video.expression == video2.expression);
    for (size_t t = 0; t < 4; ++t) {
        CHECK(video.frames[t].px == video2.frames[t].px);
        CHECK(video.masks[t].px == video2.masks[t].px);
    }
}

TEST_CASE("generate_dataset writes a loadable, seed-stable tree") {
    const std::string dir = temp_path("cmaseg_synth_test");
    fs::remove_all(dir);
    DatasetSpec spec;
    spec.classes = 3;
    spec.videos_per_class = 2;
    spec.frames = 3;
    spec.canvas = 32;
    spec.seed = 9;
    Manifest m = generate_dataset(spec, dir);
    CHECK(m.videos.size() == 6);
    Manifest loaded = load_manifest(dir + "/manifest.json");
    CHECK(loaded.videos.size() == 6);
    CHECK(loaded.classes.size() == 3);

    // every referenced file exists and parses
    for (const auto& v : loaded.videos) {
        for (const auto& f : v.frames) {
            ImageRGB img = read_ppm(loaded.resolve(f));
            CHECK(img.h == 32);
        }
        for (const auto& f : v.masks) {
            ImageGray img = read_pgm(loaded.resolve(f));
            CHECK(img.w == 32);
        }
    }

    // regeneration is byte-identical
    const std::string dir2 = temp_path("cmaseg_synth_test2");
    fs::remove_all(dir2);
    generate_dataset(spec, dir2);
    for (const auto& v : loaded.videos) {
        for (const auto& f : v.frames) {
            std::ifstream a(loaded.resolve(f), std::ios::binary);
            std::ifstream b(dir2 + "/" + f, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(a)), {});
            std::string sb((std::istreambuf_iterator<char>(b)), {});
            CHECK(sa == sb);
        }
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("load_episode pads to multiples of 32 and tokenizes") {
    const std::string dir = temp_path("cmaseg_synth_load");
    fs::remove_all(dir);
    DatasetSpec spec;
    spec.classes = 1;
    spec.videos_per_class = 2;
    spec.frames = 3;
    spec.canvas = 64;
    spec.seed = 4;
    Manifest m = generate_dataset(spec, dir);
    RunConfig cfg;
    cfg.k_shot = 2;
    cfg.n_query = 2;
    cfg.holdout_per_class = 0;
    FoldSpec fold;
    fold.fold_index = 1;
    fold.train_classes = m.classes;
    Rng rng(41);
    auto vocab = grammar_vocabulary();
    EpisodeRef ref = sample_episode(m, fold, Split::train, SampleOptions::from(cfg), rng);
    EpisodeTensors ep = load_episode(m, ref, cfg, vocab, true);
    CHECK(ep.support_frames.size() == 2);
    CHECK(ep.query_frames.size() == 2);
    CHECK(ep.query_masks.size() == 2);
    CHECK(ep.support_frames[0].shape() == Shape{3, 64, 64});
    CHECK(ep.support_masks[0].shape() == Shape{64, 64});
    CHECK(ep.orig_h == 64);
    CHECK(ep.support_tokens.size() == 5);
    CHECK(ep.query_tokens.size() == 5);
    fs::remove_all(dir);
}
