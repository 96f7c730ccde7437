#pragma once

#include <functional>

#include "cmaseg/episodes.hpp"

namespace cmaseg {

struct BinaryMask {
    size_t h = 0, w = 0;
    std::vector<uint8_t> px;  // 0 or 1

    static BinaryMask from_tensor(const Tensor& t, double threshold = 0.5);
    size_t count() const;
    bool empty_mask() const { return count() == 0; }
};

// Intersection-over-union; both masks empty gives 1 by convention.
double region_similarity(const BinaryMask& pred, const BinaryMask& gt);

// Foreground pixels with at least one 4-neighbor that is background or out
// of bounds.
BinaryMask boundary_of(const BinaryMask& mask);

size_t default_f_tolerance(size_t h, size_t w);  // ceil(0.8% of diagonal), min 1

// Boundary F-measure: precision is the fraction of pred-boundary pixels
// within tol (Chebyshev) of the gt boundary, recall is symmetric,
// F = 2PR/(P+R). Both boundaries empty -> 1, exactly one empty -> 0.
double contour_accuracy(const BinaryMask& pred, const BinaryMask& gt, size_t tol_radius);

struct SelectOptions {
    bool per_frame = false;             // per-frame argmax instead of clip-level
    std::string upsample = "nearest";   // or "bilinear" (on sigmoid probabilities)
    size_t out_h = 0, out_w = 0;        // crop to this size after x4 upsampling
    static SelectOptions from(const RunConfig& cfg, size_t out_h, size_t out_w);
};

struct SelectedTrajectory {
    int slot = 0;                      // clip-level winner (mean sigmoid score)
    std::vector<int> per_frame_slots;  // equals slot everywhere unless per_frame
    std::vector<BinaryMask> masks;     // one per frame, upsampled x4 and cropped
};

// Picks the slot with the highest mean sigmoid score across frames (ties ->
// lowest index), thresholds its mask logits at 0.5 and upsamples x4.
SelectedTrajectory select_instance(const PredictionSequence& pred, const SelectOptions& opts);

struct EpisodeMetrics {
    std::string episode_id;
    double j = 0, f = 0;
};

struct MetricReport {
    int fold_index = 0;
    size_t runs = 0;
    std::vector<uint64_t> seeds;
    size_t f_tolerance = 0;
    std::string split;
    double mean_j = 0, mean_f = 0, mean_jf = 0;
    std::vector<EpisodeMetrics> episodes;

    void recompute_means();
};

void write_report(const MetricReport& report, const std::string& path);
MetricReport load_report(const std::string& path);

// Inference seam: maps a loaded episode to one full-resolution binary mask
// per query frame. The standard implementation runs the model; tests may
// inject oracles.
using InferenceFn = std::function<std::vector<BinaryMask>(const EpisodeTensors&)>;
InferenceFn model_inference(const Model& model);

// Samples eval episodes (runs x eval_episodes, seeded per run), runs
// inference over each whole query clip in one pass, and averages J and F
// over frames, episodes and runs. query_from_holdout evaluates on held-out
// query videos of train classes instead of the test split.
// threads > 1 parallelizes inference over pre-sampled episodes; results are
// aggregated in episode order, so the report is identical for any thread
// count.
MetricReport evaluate(const Model& model, const Manifest& manifest, const FoldSpec& fold,
                      Split split, const Vocabulary& vocab, const InferenceFn& infer,
                      uint64_t seed, bool query_from_holdout = false, size_t threads = 1);

}  // namespace cmaseg
