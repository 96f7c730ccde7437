#include "cmaseg/episodes.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "cmaseg/image.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cmaseg {

std::vector<size_t> Manifest::videos_of_class(const std::string& cls) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < videos.size(); ++i)
        if (videos[i].class_label == cls) out.push_back(i);
    return out;
}

std::string Manifest::resolve(const std::string& path) const {
    fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (fs::path(base_dir) / p).string();
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::io, "cannot open manifest: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::io, "manifest is not valid JSON: " + path + " (" + e.what() + ")");
    }
    Manifest m;
    m.base_dir = fs::path(path).parent_path().string();
    if (!j.is_object() || !j.contains("classes") || !j.contains("videos"))
        fail(ErrorCode::io, "manifest must be an object with 'classes' and 'videos': " + path);
    std::set<std::string> class_set;
    for (const auto& c : j.at("classes")) {
        if (!c.is_string()) fail(ErrorCode::io, "manifest classes must be strings");
        if (!class_set.insert(c.get<std::string>()).second)
            fail(ErrorCode::io, "manifest has duplicate class '" + c.get<std::string>() + "'");
        m.classes.push_back(c.get<std::string>());
    }
    std::set<std::string> ids;
    for (const auto& v : j.at("videos")) {
        VideoRecord r;
        if (!v.contains("video_id") || !v.at("video_id").is_string())
            fail(ErrorCode::io, "manifest video without video_id");
        r.video_id = v.at("video_id").get<std::string>();
        auto record_fail = [&](const std::string& what) {
            fail(ErrorCode::io, "manifest video '" + r.video_id + "': " + what);
        };
        if (!ids.insert(r.video_id).second) record_fail("duplicate video_id");
        if (!v.contains("class") || !v.at("class").is_string()) record_fail("missing class");
        r.class_label = v.at("class").get<std::string>();
        if (!class_set.count(r.class_label)) record_fail("unknown class '" + r.class_label + "'");
        if (!v.contains("frames") || !v.at("frames").is_array() || v.at("frames").empty())
            record_fail("missing frames");
        for (const auto& f : v.at("frames")) r.frames.push_back(f.get<std::string>());
        if (!v.contains("masks") || !v.at("masks").is_array()) record_fail("missing masks");
        for (const auto& f : v.at("masks")) r.masks.push_back(f.get<std::string>());
        if (r.masks.size() != r.frames.size())
            record_fail("mask count " + std::to_string(r.masks.size()) + " != frame count " +
                        std::to_string(r.frames.size()));
        if (!v.contains("expressions") || !v.at("expressions").is_array() ||
            v.at("expressions").empty())
            record_fail("missing expressions");
        for (const auto& e : v.at("expressions")) {
            if (!e.is_string() || e.get<std::string>().empty())
                record_fail("empty expression");
            r.expressions.push_back(e.get<std::string>());
        }
        m.videos.push_back(std::move(r));
    }
    return m;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    json j;
    j["classes"] = manifest.classes;
    j["videos"] = json::array();
    for (const auto& v : manifest.videos) {
        json r;
        r["video_id"] = v.video_id;
        r["class"] = v.class_label;
        r["frames"] = v.frames;
        r["masks"] = v.masks;
        r["expressions"] = v.expressions;
        j["videos"].push_back(std::move(r));
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open manifest for writing: " + path);
    os << j.dump(2) << "\n";
}

FoldSpec load_fold(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::io, "cannot open fold file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::io, "fold file is not valid JSON: " + path + " (" + e.what() + ")");
    }
    FoldSpec f;
    if (!j.contains("fold") || !j.contains("train_classes") || !j.contains("test_classes"))
        fail(ErrorCode::io, "fold file must contain fold, train_classes, test_classes: " + path);
    f.fold_index = j.at("fold").get<int>();
    for (const auto& c : j.at("train_classes")) f.train_classes.push_back(c.get<std::string>());
    for (const auto& c : j.at("test_classes")) f.test_classes.push_back(c.get<std::string>());
    std::set<std::string> train(f.train_classes.begin(), f.train_classes.end());
    for (const auto& c : f.test_classes)
        if (train.count(c))
            fail(ErrorCode::io, "fold file has class '" + c + "' in both train and test");
    return f;
}

void write_fold(const FoldSpec& fold, const std::string& path) {
    json j;
    j["fold"] = fold.fold_index;
    j["train_classes"] = fold.train_classes;
    j["test_classes"] = fold.test_classes;
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open fold file for writing: " + path);
    os << j.dump(2) << "\n";
}

Manifest balance_manifest(const Manifest& manifest, size_t min_videos, double max_ratio,
                          uint64_t seed) {
    if (max_ratio < 1.0) fail(ErrorCode::config, "balance_manifest: max_ratio must be >= 1");
    std::map<std::string, std::vector<size_t>> by_class;
    for (size_t i = 0; i < manifest.videos.size(); ++i)
        by_class[manifest.videos[i].class_label].push_back(i);

    std::vector<std::string> kept;
    size_t min_count = SIZE_MAX;
    for (const auto& cls : manifest.classes) {
        auto it = by_class.find(cls);
        const size_t count = it == by_class.end() ? 0 : it->second.size();
        if (count >= min_videos) {
            kept.push_back(cls);
            min_count = std::min(min_count, count);
        }
    }
    if (kept.empty()) fail(ErrorCode::config, "balance_manifest: no class meets min_videos");
    const size_t cap = static_cast<size_t>(static_cast<double>(min_count) * max_ratio);

    Manifest out;
    out.base_dir = manifest.base_dir;
    out.classes = kept;
    Rng rng = Rng::derive(seed, 77);
    for (const auto& cls : kept) {
        auto idx = by_class[cls];
        if (idx.size() > cap) {
            // seeded partial Fisher-Yates, keep the first `cap`
            for (size_t i = 0; i + 1 < idx.size(); ++i) {
                const size_t j = i + rng.uniform_index(idx.size() - i);
                std::swap(idx[i], idx[j]);
            }
            idx.resize(cap);
            std::sort(idx.begin(), idx.end());
        }
        for (size_t i : idx) out.videos.push_back(manifest.videos[i]);
    }
    return out;
}

FoldBuild build_folds(const Manifest& manifest, size_t n_folds, size_t min_videos,
                      double max_ratio, uint64_t seed) {
    if (n_folds == 0) fail(ErrorCode::config, "build_folds: n_folds must be >= 1");
    FoldBuild out;
    out.balanced = balance_manifest(manifest, min_videos, max_ratio, seed);
    std::vector<std::string> classes = out.balanced.classes;
    if (classes.size() < n_folds)
        fail(ErrorCode::config, "build_folds: " + std::to_string(classes.size()) +
                                    " usable classes for " + std::to_string(n_folds) + " folds");
    Rng rng = Rng::derive(seed, 78);
    for (size_t i = 0; i + 1 < classes.size(); ++i) {
        const size_t j = i + rng.uniform_index(classes.size() - i);
        std::swap(classes[i], classes[j]);
    }
    const size_t base = classes.size() / n_folds, rem = classes.size() % n_folds;
    size_t cursor = 0;
    for (size_t f = 0; f < n_folds; ++f) {
        const size_t take = base + (f < rem ? 1 : 0);
        FoldSpec spec;
        spec.fold_index = static_cast<int>(f + 1);
        spec.test_classes.assign(classes.begin() + cursor, classes.begin() + cursor + take);
        for (size_t c = 0; c < classes.size(); ++c)
            if (c < cursor || c >= cursor + take) spec.train_classes.push_back(classes[c]);
        std::sort(spec.train_classes.begin(), spec.train_classes.end());
        std::sort(spec.test_classes.begin(), spec.test_classes.end());
        cursor += take;
        out.folds.push_back(std::move(spec));
    }
    return out;
}

SampleOptions SampleOptions::from(const RunConfig& cfg) {
    return {cfg.k_shot, cfg.n_query, cfg.holdout_per_class, false};
}

namespace {

struct ClassPools {
    std::vector<size_t> support;  // candidate support videos
    std::vector<size_t> query;    // candidate query videos
};

// Per class, the trailing holdout_per_class videos (manifest order) are
// reserved as evaluation queries; training never samples them.
std::optional<ClassPools> class_pools(const Manifest& manifest, const std::string& cls,
                                      const SampleOptions& opts) {
    const auto videos = manifest.videos_of_class(cls);
    if (videos.size() < 2) return std::nullopt;
    const size_t holdout =
        std::min(opts.holdout_per_class, videos.size() >= 2 ? videos.size() - 2 : size_t(0));
    const size_t main_count = videos.size() - holdout;
    ClassPools pools;
    for (size_t i = 0; i < videos.size(); ++i) {
        const bool in_holdout = i >= main_count;
        const VideoRecord& v = manifest.videos[videos[i]];
        const bool support_ok = v.frames.size() >= opts.k_shot && !in_holdout;
        const bool query_ok = v.frames.size() >= opts.n_query &&
                              (opts.query_from_holdout ? in_holdout : !in_holdout);
        if (support_ok) pools.support.push_back(videos[i]);
        if (query_ok) pools.query.push_back(videos[i]);
    }
    if (pools.support.empty() || pools.query.empty()) return std::nullopt;
    if (!opts.query_from_holdout) {
        bool distinct_possible = false;
        for (size_t s : pools.support)
            for (size_t q : pools.query)
                if (s != q) distinct_possible = true;
        if (!distinct_possible) return std::nullopt;
    }
    return pools;
}

}  // namespace

EpisodeRef sample_episode(const Manifest& manifest, const FoldSpec& fold, Split split,
                          const SampleOptions& opts, Rng& rng) {
    if (opts.k_shot == 0 || opts.n_query == 0)
        fail(ErrorCode::config, "sample_episode: k_shot and n_query must be >= 1");
    const auto& classes = split == Split::train ? fold.train_classes : fold.test_classes;
    static thread_local std::set<std::string> warned;
    std::vector<std::pair<std::string, ClassPools>> usable;
    for (const auto& cls : classes) {
        auto pools = class_pools(manifest, cls, opts);
        if (pools) {
            usable.emplace_back(cls, std::move(*pools));
        } else if (warned.insert(cls).second) {
            std::cerr << "warning: class '" << cls
                      << "' has too few usable videos for episode sampling; skipping\n";
        }
    }
    if (usable.empty()) fail(ErrorCode::input, "sample_episode: no usable class in split");

    const auto& [cls, pools] = usable[rng.uniform_index(usable.size())];
    std::vector<size_t> support_candidates;
    for (size_t s : pools.support) {
        for (size_t q : pools.query)
            if (q != s) {
                support_candidates.push_back(s);
                break;
            }
    }
    if (support_candidates.empty())
        fail(ErrorCode::input, "sample_episode: no support/query pair for class " + cls);
    const size_t support_video = support_candidates[rng.uniform_index(support_candidates.size())];
    std::vector<size_t> query_candidates;
    for (size_t q : pools.query)
        if (q != support_video) query_candidates.push_back(q);
    const size_t query_video = query_candidates[rng.uniform_index(query_candidates.size())];

    const VideoRecord& sv = manifest.videos[support_video];
    const VideoRecord& qv = manifest.videos[query_video];
    EpisodeRef ref;
    ref.class_label = cls;
    ref.support_video = support_video;
    ref.query_video = query_video;
    ref.support_start = rng.uniform_index(sv.frames.size() - opts.k_shot + 1);
    ref.query_start = rng.uniform_index(qv.frames.size() - opts.n_query + 1);
    ref.support_expr = rng.uniform_index(sv.expressions.size());
    ref.query_expr = rng.uniform_index(qv.expressions.size());
    ref.id = cls + ":" + sv.video_id + "@" + std::to_string(ref.support_start) + "->" +
             qv.video_id + "@" + std::to_string(ref.query_start);

    if (sv.video_id == qv.video_id)
        fail(ErrorCode::input, "sample_episode: support and query video coincide");
    if (sv.class_label != qv.class_label)
        fail(ErrorCode::input, "sample_episode: class mismatch inside episode");
    return ref;
}

namespace {

struct LoadedFrame {
    Tensor frame;          // [3, H, W] padded
    size_t orig_h, orig_w;  // post-resize, pre-pad
};

size_t pad32(size_t v) { return (v + 31) / 32 * 32; }

// Downscale factor so short side <= resize_short and long side <= resize_long;
// only shrinks, never enlarges.
double resize_factor(size_t h, size_t w, const RunConfig& cfg) {
    const double short_side = static_cast<double>(std::min(h, w));
    const double long_side = static_cast<double>(std::max(h, w));
    double f = 1.0;
    if (short_side > cfg.resize_short) f = std::min(f, cfg.resize_short / short_side);
    if (long_side * f > cfg.resize_long) f = std::min(f, cfg.resize_long / long_side);
    return f;
}

LoadedFrame load_frame(const std::string& path, const RunConfig& cfg) {
    ImageRGB img = read_ppm(path);
    Tensor t = image_to_tensor(img);
    const double f = resize_factor(img.h, img.w, cfg);
    size_t h = img.h, w = img.w;
    Tape tape(false);
    if (f < 1.0) {
        h = std::max<size_t>(1, static_cast<size_t>(img.h * f));
        w = std::max<size_t>(1, static_cast<size_t>(img.w * f));
        t = tape.bilinear_resize(t, h, w);
    }
    const size_t ph = pad32(h), pw = pad32(w);
    if (ph != h || pw != w) {
        Tensor padded = Tensor::zeros({3, ph, pw});
        for (size_t c = 0; c < 3; ++c)
            for (size_t y = 0; y < h; ++y)
                std::copy(t.data() + (c * h + y) * w, t.data() + (c * h + y + 1) * w,
                          padded.data() + (c * ph + y) * pw);
        t = padded;
    }
    return {t, h, w};
}

Tensor load_mask(const std::string& path, size_t target_h, size_t target_w, size_t pad_h,
                 size_t pad_w) {
    ImageGray img = read_pgm(path);
    Tensor m = mask_to_tensor(img);
    if (img.h != target_h || img.w != target_w) {
        Tape tape(false);
        Tensor soft = tape.bilinear_resize(tape.reshape(m, {1, img.h, img.w}), target_h, target_w);
        m = Tensor::uninitialized({target_h, target_w});
        for (size_t i = 0; i < m.size(); ++i) m.data()[i] = soft.data()[i] > 0.5 ? 1.0 : 0.0;
    }
    if (pad_h != target_h || pad_w != target_w) {
        Tensor padded = Tensor::zeros({pad_h, pad_w});
        for (size_t y = 0; y < target_h; ++y)
            std::copy(m.data() + y * target_w, m.data() + (y + 1) * target_w,
                      padded.data() + y * pad_w);
        m = padded;
    }
    return m;
}

}  // namespace

EpisodeTensors load_episode(const Manifest& manifest, const EpisodeRef& ref, const RunConfig& cfg,
                            const Vocabulary& vocab, bool need_query_masks) {
    const VideoRecord& sv = manifest.videos[ref.support_video];
    const VideoRecord& qv = manifest.videos[ref.query_video];
    EpisodeTensors ep;
    ep.episode_id = ref.id;
    ep.class_label = ref.class_label;

    for (size_t i = 0; i < cfg.k_shot; ++i) {
        LoadedFrame lf = load_frame(manifest.resolve(sv.frames[ref.support_start + i]), cfg);
        ep.support_frames.push_back(lf.frame);
        ep.support_masks.push_back(load_mask(manifest.resolve(sv.masks[ref.support_start + i]),
                                             lf.orig_h, lf.orig_w, lf.frame.extent(1),
                                             lf.frame.extent(2)));
    }
    for (size_t i = 0; i < cfg.n_query; ++i) {
        LoadedFrame lf = load_frame(manifest.resolve(qv.frames[ref.query_start + i]), cfg);
        if (i == 0) {
            ep.orig_h = lf.orig_h;
            ep.orig_w = lf.orig_w;
        }
        ep.query_frames.push_back(lf.frame);
        if (need_query_masks) {
            if (qv.masks[ref.query_start + i].empty())
                fail(ErrorCode::input, "episode " + ref.id + " needs labeled query masks");
            ep.query_masks.push_back(load_mask(manifest.resolve(qv.masks[ref.query_start + i]),
                                               lf.orig_h, lf.orig_w, lf.frame.extent(1),
                                               lf.frame.extent(2)));
        }
    }
    ep.support_tokens = vocab.encode(sv.expressions[ref.support_expr], cfg.max_text_len);
    ep.query_tokens = vocab.encode(qv.expressions[ref.query_expr], cfg.max_text_len);
    return ep;
}

}  // namespace cmaseg
