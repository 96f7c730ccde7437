#include "cmaseg/metrics.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

using nlohmann::json;

namespace cmaseg {

BinaryMask BinaryMask::from_tensor(const Tensor& t, double threshold) {
    if (t.rank() != 2) fail(ErrorCode::dim, "BinaryMask: expected [H, W]");
    BinaryMask m;
    m.h = t.extent(0);
    m.w = t.extent(1);
    m.px.resize(m.h * m.w);
    for (size_t i = 0; i < m.px.size(); ++i) m.px[i] = t.data()[i] > threshold ? 1 : 0;
    return m;
}

size_t BinaryMask::count() const {
    size_t n = 0;
    for (uint8_t v : px) n += v;
    return n;
}

double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        fail(ErrorCode::input, "region_similarity: mask dimensions differ (" +
                                   std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                                   std::to_string(gt.h) + "x" + std::to_string(gt.w) + ")");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.px.size(); ++i) {
        inter += pred.px[i] & gt.px[i];
        uni += pred.px[i] | gt.px[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask boundary_of(const BinaryMask& mask) {
    BinaryMask b;
    b.h = mask.h;
    b.w = mask.w;
    b.px.assign(mask.px.size(), 0);
    auto bg = [&](ptrdiff_t y, ptrdiff_t x) {
        if (y < 0 || x < 0 || y >= ptrdiff_t(mask.h) || x >= ptrdiff_t(mask.w)) return true;
        return mask.px[size_t(y) * mask.w + size_t(x)] == 0;
    };
    for (size_t y = 0; y < mask.h; ++y)
        for (size_t x = 0; x < mask.w; ++x) {
            if (!mask.px[y * mask.w + x]) continue;
            const ptrdiff_t iy = ptrdiff_t(y), ix = ptrdiff_t(x);
            if (bg(iy - 1, ix) || bg(iy + 1, ix) || bg(iy, ix - 1) || bg(iy, ix + 1))
                b.px[y * mask.w + x] = 1;
        }
    return b;
}

size_t default_f_tolerance(size_t h, size_t w) {
    const double diag = std::sqrt(static_cast<double>(h * h + w * w));
    return std::max<size_t>(1, static_cast<size_t>(std::ceil(0.008 * diag)));
}

namespace {

// Exact Chebyshev distance to the nearest set pixel (two-pass 8-neighbor
// chamfer; unit weights are exact for the chessboard metric).
std::vector<int> chebyshev_distance(const BinaryMask& mask) {
    const int inf = 1 << 28;
    const size_t h = mask.h, w = mask.w;
    std::vector<int> d(h * w, inf);
    for (size_t i = 0; i < d.size(); ++i)
        if (mask.px[i]) d[i] = 0;
    auto relax = [&](size_t y, size_t x, ptrdiff_t dy, ptrdiff_t dx) {
        const ptrdiff_t ny = ptrdiff_t(y) + dy, nx = ptrdiff_t(x) + dx;
        if (ny < 0 || nx < 0 || ny >= ptrdiff_t(h) || nx >= ptrdiff_t(w)) return;
        const int cand = d[size_t(ny) * w + size_t(nx)] + 1;
        if (cand < d[y * w + x]) d[y * w + x] = cand;
    };
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            relax(y, x, -1, -1);
            relax(y, x, -1, 0);
            relax(y, x, -1, 1);
            relax(y, x, 0, -1);
        }
    for (size_t y = h; y-- > 0;)
        for (size_t x = w; x-- > 0;) {
            relax(y, x, 1, 1);
            relax(y, x, 1, 0);
            relax(y, x, 1, -1);
            relax(y, x, 0, 1);
        }
    return d;
}

double matched_fraction(const BinaryMask& from_boundary, const std::vector<int>& dist_to_other,
                        size_t tol) {
    size_t total = 0, matched = 0;
    for (size_t i = 0; i < from_boundary.px.size(); ++i) {
        if (!from_boundary.px[i]) continue;
        ++total;
        if (dist_to_other[i] <= static_cast<int>(tol)) ++matched;
    }
    return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace

double contour_accuracy(const BinaryMask& pred, const BinaryMask& gt, size_t tol_radius) {
    if (pred.h != gt.h || pred.w != gt.w)
        fail(ErrorCode::input, "contour_accuracy: mask dimensions differ");
    BinaryMask pb = boundary_of(pred), gb = boundary_of(gt);
    const size_t pn = pb.count(), gn = gb.count();
    if (pn == 0 && gn == 0) return 1.0;
    if (pn == 0 || gn == 0) return 0.0;
    auto dist_to_g = chebyshev_distance(gb);
    auto dist_to_p = chebyshev_distance(pb);
    const double precision = matched_fraction(pb, dist_to_g, tol_radius);
    const double recall = matched_fraction(gb, dist_to_p, tol_radius);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

SelectOptions SelectOptions::from(const RunConfig& cfg, size_t out_h, size_t out_w) {
    return {cfg.per_frame_select, cfg.eval_upsample, out_h, out_w};
}

namespace {

BinaryMask upsample_mask(const Tensor& logits, const SelectOptions& opts) {
    const size_t h = logits.extent(0), w = logits.extent(1);
    const size_t uh = h * 4, uw = w * 4;
    BinaryMask out;
    out.h = opts.out_h ? std::min(opts.out_h, uh) : uh;
    out.w = opts.out_w ? std::min(opts.out_w, uw) : uw;
    out.px.assign(out.h * out.w, 0);
    if (opts.upsample == "bilinear") {
        Tape tape(false);
        Tensor prob = tape.sigmoid(logits);
        Tensor up = tape.bilinear_resize(tape.reshape(prob, {1, h, w}), uh, uw);
        for (size_t y = 0; y < out.h; ++y)
            for (size_t x = 0; x < out.w; ++x)
                out.px[y * out.w + x] = up.data()[y * uw + x] > 0.5 ? 1 : 0;
    } else {
        for (size_t y = 0; y < out.h; ++y)
            for (size_t x = 0; x < out.w; ++x)
                out.px[y * out.w + x] = logits.data()[(y / 4) * w + (x / 4)] > 0.0 ? 1 : 0;
    }
    return out;
}

}  // namespace

SelectedTrajectory select_instance(const PredictionSequence& pred, const SelectOptions& opts) {
    const size_t t_frames = pred.frames(), n_slots = pred.slots();
    if (n_slots == 0) fail(ErrorCode::input, "select_instance: no slots");
    auto sigmoid = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };

    SelectedTrajectory out;
    // clip-level: argmax of the mean sigmoid score across frames, ties to the
    // lowest slot index
    double best = -1.0;
    for (size_t n = 0; n < n_slots; ++n) {
        double mean = 0;
        for (size_t t = 0; t < t_frames; ++t) mean += sigmoid(pred.scores.at({t, n}));
        mean /= static_cast<double>(t_frames);
        if (mean > best) {
            best = mean;
            out.slot = static_cast<int>(n);
        }
    }
    out.per_frame_slots.assign(t_frames, out.slot);
    if (opts.per_frame) {
        for (size_t t = 0; t < t_frames; ++t) {
            double fb = -1.0;
            for (size_t n = 0; n < n_slots; ++n) {
                const double s = sigmoid(pred.scores.at({t, n}));
                if (s > fb) {
                    fb = s;
                    out.per_frame_slots[t] = static_cast<int>(n);
                }
            }
        }
    }

    Tape tape(false);
    for (size_t t = 0; t < t_frames; ++t) {
        const size_t slot = static_cast<size_t>(out.per_frame_slots[t]);
        Tensor logits = tape.slice0(tape.slice0(pred.masks, t), slot);
        out.masks.push_back(upsample_mask(logits, opts));
    }
    return out;
}

void MetricReport::recompute_means() {
    mean_j = mean_f = 0;
    for (const auto& e : episodes) {
        mean_j += e.j;
        mean_f += e.f;
    }
    if (!episodes.empty()) {
        mean_j /= static_cast<double>(episodes.size());
        mean_f /= static_cast<double>(episodes.size());
    }
    mean_jf = 0.5 * (mean_j + mean_f);
}

void write_report(const MetricReport& report, const std::string& path) {
    json j;
    j["fold"] = report.fold_index;
    j["runs"] = report.runs;
    j["seeds"] = report.seeds;
    j["f_tolerance"] = report.f_tolerance;
    j["f_measure"] = "boundary precision/recall with Chebyshev distance-threshold matching";
    j["split"] = report.split;
    j["mean_J"] = report.mean_j;
    j["mean_F"] = report.mean_f;
    j["mean_JF"] = report.mean_jf;
    j["episodes"] = json::array();
    for (const auto& e : report.episodes)
        j["episodes"].push_back({{"episode_id", e.episode_id}, {"J", e.j}, {"F", e.f}});
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open report for writing: " + path);
    os << j.dump(2) << "\n";
}

MetricReport load_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::io, "cannot open report: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::io, "report is not valid JSON: " + path + " (" + e.what() + ")");
    }
    MetricReport r;
    r.fold_index = j.at("fold").get<int>();
    r.runs = j.at("runs").get<size_t>();
    for (const auto& s : j.at("seeds")) r.seeds.push_back(s.get<uint64_t>());
    r.f_tolerance = j.at("f_tolerance").get<size_t>();
    r.split = j.value("split", "");
    r.mean_j = j.at("mean_J").get<double>();
    r.mean_f = j.at("mean_F").get<double>();
    r.mean_jf = j.at("mean_JF").get<double>();
    for (const auto& e : j.at("episodes"))
        r.episodes.push_back(
            {e.at("episode_id").get<std::string>(), e.at("J").get<double>(), e.at("F").get<double>()});
    return r;
}

InferenceFn model_inference(const Model& model) {
    return [&model](const EpisodeTensors& episode) {
        Tape tape(false);
        PredictionSequence pred = model.forward(tape, episode);
        SelectedTrajectory traj =
            select_instance(pred, SelectOptions::from(model.config(), episode.orig_h,
                                                      episode.orig_w));
        return traj.masks;
    };
}

MetricReport evaluate(const Model& model, const Manifest& manifest, const FoldSpec& fold,
                      Split split, const Vocabulary& vocab, const InferenceFn& infer,
                      uint64_t seed, bool query_from_holdout, size_t threads) {
    const RunConfig& cfg = model.config();
    const auto& split_classes =
        split == Split::train ? fold.train_classes : fold.test_classes;
    if (split_classes.empty()) fail(ErrorCode::input, "evaluate: split has no classes");

    MetricReport report;
    report.fold_index = fold.fold_index;
    report.runs = cfg.eval_runs;
    report.split = split == Split::train ? "train" : "test";
    if (query_from_holdout) report.split += "-heldout";

    SampleOptions opts = SampleOptions::from(cfg);
    opts.query_from_holdout = query_from_holdout;

    struct Job {
        EpisodeRef ref;
        std::string id;
    };
    std::vector<Job> jobs;
    for (size_t run = 0; run < cfg.eval_runs; ++run) {
        const uint64_t run_seed = seed + run;
        report.seeds.push_back(run_seed);
        Rng rng = Rng::derive(run_seed, 9000 + run);
        for (size_t e = 0; e < cfg.eval_episodes; ++e) {
            EpisodeRef ref = sample_episode(manifest, fold, split, opts, rng);
            jobs.push_back({ref, "run" + std::to_string(run) + "/" + ref.id});
        }
    }

    report.episodes.resize(jobs.size());
    std::atomic<size_t> cursor{0};
    std::atomic<size_t> tol_seen{cfg.f_tolerance};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const size_t i = cursor.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                EpisodeTensors episode = load_episode(manifest, jobs[i].ref, cfg, vocab, true);
                std::vector<BinaryMask> pred_masks = infer(episode);
                if (pred_masks.size() != episode.query_frames.size())
                    fail(ErrorCode::input, "evaluate: inference returned wrong frame count");
                size_t tol = cfg.f_tolerance;
                if (tol == 0) tol = default_f_tolerance(episode.orig_h, episode.orig_w);
                tol_seen.store(tol);
                double ep_j = 0, ep_f = 0;
                for (size_t t = 0; t < pred_masks.size(); ++t) {
                    BinaryMask gt;
                    // crop the padded ground truth back to the original size
                    const Tensor& gm = episode.query_masks[t];
                    gt.h = episode.orig_h;
                    gt.w = episode.orig_w;
                    gt.px.resize(gt.h * gt.w);
                    for (size_t y = 0; y < gt.h; ++y)
                        for (size_t x = 0; x < gt.w; ++x)
                            gt.px[y * gt.w + x] = gm.data()[y * gm.extent(1) + x] != 0.0 ? 1 : 0;
                    ep_j += region_similarity(pred_masks[t], gt);
                    ep_f += contour_accuracy(pred_masks[t], gt, tol);
                }
                ep_j /= static_cast<double>(pred_masks.size());
                ep_f /= static_cast<double>(pred_masks.size());
                report.episodes[i] = {jobs[i].id, ep_j, ep_f};
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                cursor.store(jobs.size());
                return;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    report.f_tolerance = tol_seen.load();
    report.recompute_means();
    return report;
}

}  // namespace cmaseg
