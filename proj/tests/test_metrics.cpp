#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmaseg/metrics.hpp"
#include "cmaseg/synthetic.hpp"
#include "doctest.h"

using namespace cmaseg;
namespace fs = std::filesystem;

namespace {

BinaryMask mask_of(size_t h, size_t w, std::initializer_list<std::pair<size_t, size_t>> on) {
    BinaryMask m;
    m.h = h;
    m.w = w;
    m.px.assign(h * w, 0);
    for (auto [y, x] : on) m.px[y * w + x] = 1;
    return m;
}

BinaryMask random_mask(size_t h, size_t w, Rng& rng, double p = 0.4) {
    BinaryMask m;
    m.h = h;
    m.w = w;
    m.px.resize(h * w);
    for (auto& v : m.px) v = rng.bernoulli(p) ? 1 : 0;
    return m;
}

// counting oracle for J
double j_oracle(const BinaryMask& a, const BinaryMask& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        if (a.px[i] && b.px[i]) ++inter;
        if (a.px[i] || b.px[i]) ++uni;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// all-pairs boundary-distance oracle for F
double f_oracle(const BinaryMask& pred, const BinaryMask& gt, size_t tol) {
    auto boundary_points = [](const BinaryMask& m) {
        std::vector<std::pair<ptrdiff_t, ptrdiff_t>> pts;
        for (size_t y = 0; y < m.h; ++y)
            for (size_t x = 0; x < m.w; ++x) {
                if (!m.px[y * m.w + x]) continue;
                bool edge = false;
                const ptrdiff_t Y = y, X = x;
                for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                    const ptrdiff_t ny = Y + dy, nx = X + dx;
                    if (ny < 0 || nx < 0 || ny >= ptrdiff_t(m.h) || nx >= ptrdiff_t(m.w) ||
                        !m.px[ny * m.w + nx])
                        edge = true;
                }
                if (edge) pts.emplace_back(Y, X);
            }
        return pts;
    };
    auto pb = boundary_points(pred), gb = boundary_points(gt);
    if (pb.empty() && gb.empty()) return 1.0;
    if (pb.empty() || gb.empty()) return 0.0;
    auto frac_within = [&](const auto& from, const auto& to) {
        size_t hit = 0;
        for (auto [y, x] : from) {
            ptrdiff_t best = 1 << 20;
            for (auto [gy, gx] : to)
                best = std::min(best, std::max(std::abs(y - gy), std::abs(x - gx)));
            if (best <= ptrdiff_t(tol)) ++hit;
        }
        return double(hit) / double(from.size());
    };
    const double p = frac_within(pb, gb), r = frac_within(gb, pb);
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("region similarity basics") {
    BinaryMask a = mask_of(2, 2, {{0, 0}, {0, 1}});
    BinaryMask b = mask_of(2, 2, {{0, 1}, {1, 1}});
    CHECK(region_similarity(a, a) == 1.0);
    CHECK(region_similarity(a, b) == doctest::Approx(1.0 / 3.0));

    BinaryMask disjoint = mask_of(2, 2, {{1, 0}});
    BinaryMask other = mask_of(2, 2, {{0, 1}});
    CHECK(region_similarity(disjoint, other) == 0.0);

    BinaryMask empty = mask_of(2, 2, {});
    CHECK(region_similarity(empty, empty) == 1.0);
    CHECK(region_similarity(empty, a) == 0.0);

    BinaryMask wrong;
    wrong.h = 3;
    wrong.w = 2;
    wrong.px.assign(6, 0);
    CHECK_THROWS_AS(region_similarity(a, wrong), Error);
}

TEST_CASE("J is symmetric, identity-detecting, and translation invariant") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        BinaryMask a = random_mask(6, 6, rng), b = random_mask(6, 6, rng);
        CHECK(region_similarity(a, b) == region_similarity(b, a));
        if (region_similarity(a, b) == 1.0) CHECK(a.px == b.px);
    }
    // translate both masks by (2, 1) inside a larger canvas
    BinaryMask base = mask_of(8, 8, {{2, 2}, {2, 3}, {3, 2}});
    BinaryMask gt = mask_of(8, 8, {{2, 3}, {3, 3}, {3, 2}});
    BinaryMask base_t = mask_of(8, 8, {{4, 3}, {4, 4}, {5, 3}});
    BinaryMask gt_t = mask_of(8, 8, {{4, 4}, {5, 4}, {5, 3}});
    CHECK(region_similarity(base, gt) == region_similarity(base_t, gt_t));
    CHECK(contour_accuracy(base, gt, 1) == contour_accuracy(base_t, gt_t, 1));
}

TEST_CASE("contour accuracy basics and the shifted-square case") {
    BinaryMask sq = mask_of(5, 5, {{1, 1}, {1, 2}, {1, 3}, {2, 1}, {2, 2}, {2, 3},
                                   {3, 1}, {3, 2}, {3, 3}});
    CHECK(contour_accuracy(sq, sq, 1) == 1.0);

    BinaryMask empty = mask_of(5, 5, {});
    CHECK(contour_accuracy(empty, sq, 1) == 0.0);
    CHECK(contour_accuracy(empty, empty, 1) == 1.0);

    // gt = centered 3x3 square, pred = same square shifted right by one
    BinaryMask shifted = mask_of(5, 5, {{1, 2}, {1, 3}, {1, 4}, {2, 2}, {2, 3}, {2, 4},
                                        {3, 2}, {3, 3}, {3, 4}});
    const double want = f_oracle(shifted, sq, 1);
    CHECK(contour_accuracy(shifted, sq, 1) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("metric oracles agree on 1000 random masks up to 8x8") {
    Rng rng(11);
    for (int rep = 0; rep < 1000; ++rep) {
        const size_t h = 1 + rng.uniform_index(8), w = 1 + rng.uniform_index(8);
        BinaryMask pred = random_mask(h, w, rng, rng.uniform(0.1, 0.9));
        BinaryMask gt = random_mask(h, w, rng, rng.uniform(0.1, 0.9));
        CHECK(region_similarity(pred, gt) == j_oracle(pred, gt));
        const size_t tol = rng.uniform_index(3);
        CHECK(contour_accuracy(pred, gt, tol) ==
              doctest::Approx(f_oracle(pred, gt, tol)).epsilon(1e-12));
        // symmetry of F under swapping pred/gt
        CHECK(contour_accuracy(pred, gt, tol) ==
              doctest::Approx(contour_accuracy(gt, pred, tol)).epsilon(1e-12));
    }
}

TEST_CASE("default F tolerance follows the diagonal rule") {
    CHECK(default_f_tolerance(64, 64) == 1);
    CHECK(default_f_tolerance(360, 640) == 6);  // ceil(0.008 * 734.4)
    CHECK(default_f_tolerance(2, 2) == 1);
}

TEST_CASE("select_instance picks the argmax of the mean sigmoid score") {
    SelectOptions opts;
    opts.out_h = opts.out_w = 8;

    PredictionSequence pred;
    pred.scores = Tensor::from_data({2, 3}, {0.0, 2.0, -1.0, 0.5, 1.5, -2.0});
    pred.masks = Tensor::zeros({2, 3, 2, 2});
    for (size_t t = 0; t < 2; ++t)
        pred.masks.data()[(t * 3 + 1) * 4 + 0] = 5.0;  // slot 1, pixel (0,0)

    auto traj = select_instance(pred, opts);
    CHECK(traj.slot == 1);
    REQUIRE(traj.masks.size() == 2);
    CHECK(traj.masks[0].h == 8);
    // x4 nearest upsampling of pixel (0,0)
    for (size_t y = 0; y < 4; ++y)
        for (size_t x = 0; x < 4; ++x) CHECK(traj.masks[0].px[y * 8 + x] == 1);
    CHECK(traj.masks[0].px[4 * 8 + 4] == 0);

    SUBCASE("single slot wins by default") {
        PredictionSequence one;
        one.scores = Tensor::from_data({2, 1}, {-3.0, -4.0});
        one.masks = Tensor::zeros({2, 1, 2, 2});
        CHECK(select_instance(one, opts).slot == 0);
    }

    SUBCASE("ties resolve to the lowest slot index") {
        PredictionSequence tie;
        tie.scores = Tensor::zeros({2, 3});
        tie.masks = Tensor::zeros({2, 3, 2, 2});
        CHECK(select_instance(tie, opts).slot == 0);
    }

    SUBCASE("random scores match the brute-force argmax of per-slot means") {
        Rng rng(13);
        for (int rep = 0; rep < 50; ++rep) {
            PredictionSequence p;
            p.scores = Tensor::uninitialized({3, 4});
            for (size_t i = 0; i < 12; ++i) p.scores.data()[i] = rng.uniform(-3, 3);
            p.masks = Tensor::zeros({3, 4, 2, 2});
            int want = 0;
            double best = -1;
            for (size_t n = 0; n < 4; ++n) {
                double mean = 0;
                for (size_t t = 0; t < 3; ++t) {
                    const double v = p.scores.at({t, n});
                    mean += 1.0 / (1.0 + std::exp(-v));
                }
                if (mean / 3 > best) {
                    best = mean / 3;
                    want = int(n);
                }
            }
            CHECK(select_instance(p, opts).slot == want);
        }
    }

    SUBCASE("per-frame mode picks frame-wise argmax") {
        SelectOptions pf = opts;
        pf.per_frame = true;
        auto t2 = select_instance(pred, pf);
        CHECK(t2.per_frame_slots[0] == 1);  // 2.0 dominates frame 0
        CHECK(t2.per_frame_slots[1] == 1);  // 1.5 dominates frame 1
    }
}

TEST_CASE("report means are consistent and files round-trip") {
    MetricReport r;
    r.fold_index = 2;
    r.runs = 2;
    r.seeds = {5, 6};
    r.f_tolerance = 1;
    r.split = "test";
    r.episodes = {{"a", 0.5, 0.25}, {"b", 0.7, 0.35}, {"c", 0.9, 0.6}};
    r.recompute_means();
    CHECK(std::abs(r.mean_j - (0.5 + 0.7 + 0.9) / 3) <= 1e-12);
    CHECK(std::abs(r.mean_f - (0.25 + 0.35 + 0.6) / 3) <= 1e-12);
    CHECK(std::abs(r.mean_jf - 0.5 * (r.mean_j + r.mean_f)) <= 1e-12);

    const std::string path = (fs::temp_directory_path() / "cmaseg_report_test.json").string();
    write_report(r, path);
    MetricReport loaded = load_report(path);
    CHECK(loaded.fold_index == r.fold_index);
    CHECK(loaded.runs == r.runs);
    CHECK(loaded.episodes.size() == 3);
    CHECK(loaded.mean_j == r.mean_j);
    fs::remove(path);
}

TEST_CASE("evaluate with a ground-truth oracle model reaches J = F = 1") {
    const std::string dir = (fs::temp_directory_path() / "cmaseg_eval_test").string();
    fs::remove_all(dir);
    DatasetSpec dspec;
    dspec.classes = 2;
    dspec.videos_per_class = 3;
    dspec.frames = 4;
    dspec.canvas = 32;
    dspec.seed = 21;
    Manifest manifest = generate_dataset(dspec, dir);

    RunConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_text = 4;
    cfg.enc_base_width = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.n_slots = 2;
    cfg.seg_channels = 3;
    cfg.k_shot = 2;
    cfg.n_query = 2;
    cfg.holdout_per_class = 0;
    cfg.eval_episodes = 3;
    cfg.eval_runs = 2;
    Model model(cfg, grammar_vocabulary().size());

    FoldSpec fold;
    fold.fold_index = 1;
    fold.train_classes = {manifest.classes[0]};
    fold.test_classes = {manifest.classes[1]};

    auto vocab = grammar_vocabulary();
    InferenceFn oracle = [](const EpisodeTensors& ep) {
        std::vector<BinaryMask> out;
        for (const auto& m : ep.query_masks) {
            BinaryMask b;
            b.h = ep.orig_h;
            b.w = ep.orig_w;
            b.px.resize(b.h * b.w);
            for (size_t y = 0; y < b.h; ++y)
                for (size_t x = 0; x < b.w; ++x)
                    b.px[y * b.w + x] = m.data()[y * m.extent(1) + x] != 0 ? 1 : 0;
            out.push_back(std::move(b));
        }
        return out;
    };
    MetricReport report = evaluate(model, manifest, fold, Split::test, vocab, oracle, 3);
    CHECK(report.mean_j == 1.0);
    CHECK(report.mean_f == 1.0);
    CHECK(report.episodes.size() == cfg.eval_episodes * cfg.eval_runs);

    // determinism: identical call -> identical report content
    MetricReport again = evaluate(model, manifest, fold, Split::test, vocab, oracle, 3);
    REQUIRE(again.episodes.size() == report.episodes.size());
    for (size_t i = 0; i < report.episodes.size(); ++i) {
        CHECK(again.episodes[i].episode_id == report.episodes[i].episode_id);
        CHECK(again.episodes[i].j == report.episodes[i].j);
    }

    // the real model path produces full-resolution masks of the right size
    MetricReport model_report =
        evaluate(model, manifest, fold, Split::test, vocab, model_inference(model), 3);
    CHECK(model_report.episodes.size() == cfg.eval_episodes * cfg.eval_runs);
    for (const auto& e : model_report.episodes) {
        CHECK(e.j >= 0.0);
        CHECK(e.j <= 1.0);
        CHECK(e.f >= 0.0);
        CHECK(e.f <= 1.0);
    }
    fs::remove_all(dir);
}
