#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmaseg/config.hpp"
#include "cmaseg/model.hpp"
#include "cmaseg/vocab.hpp"

namespace cmaseg {

struct VideoRecord {
    std::string video_id;
    std::string class_label;
    std::vector<std::string> frames;  // paths, one per frame
    std::vector<std::string> masks;   // paths, parallel to frames
    std::vector<std::string> expressions;
};

struct Manifest {
    std::vector<std::string> classes;
    std::vector<VideoRecord> videos;
    std::string base_dir;  // directory of the manifest file; resolves relative paths

    std::vector<size_t> videos_of_class(const std::string& cls) const;
    std::string resolve(const std::string& path) const;
};

Manifest load_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

struct FoldSpec {
    int fold_index = 0;  // 1-based
    std::vector<std::string> train_classes;
    std::vector<std::string> test_classes;
};

FoldSpec load_fold(const std::string& path);
void write_fold(const FoldSpec& fold, const std::string& path);

// Drops classes below min_videos, then caps every class at
// floor(min_kept_count * max_ratio) videos (seeded deterministic subset).
Manifest balance_manifest(const Manifest& manifest, size_t min_videos, double max_ratio,
                          uint64_t seed);

struct FoldBuild {
    std::vector<FoldSpec> folds;
    Manifest balanced;
};

// Shuffles the balanced classes by seed and partitions them into n_folds
// near-equal test groups; fold i trains on every other group.
FoldBuild build_folds(const Manifest& manifest, size_t n_folds = 4, size_t min_videos = 10,
                      double max_ratio = 3.0, uint64_t seed = 0);

enum class Split { train, test };

struct SampleOptions {
    size_t k_shot = 5;
    size_t n_query = 5;
    size_t holdout_per_class = 2;  // trailing videos per class reserved for eval queries
    bool query_from_holdout = false;
    static SampleOptions from(const RunConfig& cfg);
};

struct EpisodeRef {
    std::string class_label;
    size_t support_video = 0;  // indices into manifest.videos
    size_t query_video = 0;
    size_t support_start = 0;
    size_t query_start = 0;
    size_t support_expr = 0;
    size_t query_expr = 0;
    std::string id;
};

EpisodeRef sample_episode(const Manifest& manifest, const FoldSpec& fold, Split split,
                          const SampleOptions& opts, Rng& rng);

// Loads pixels and tokenizes expressions. Frames larger than the configured
// bounds are downscaled so short <= resize_short and long <= resize_long,
// then padded (bottom/right, zeros) to multiples of 32.
EpisodeTensors load_episode(const Manifest& manifest, const EpisodeRef& ref, const RunConfig& cfg,
                            const Vocabulary& vocab, bool need_query_masks);

}  // namespace cmaseg
