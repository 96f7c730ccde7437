#pragma once

#include "cmaseg/maskgen.hpp"

namespace cmaseg {

// Per-frame visibility flags plus binary masks at mask resolution (H/4).
// visible[t] == 0 implies masks[t] is all zeros.
struct GroundTruthSequence {
    std::vector<int> visible;
    Tensor masks;  // [T, h, w], values in {0, 1}
    void validate() const;
};

// Downsamples full-resolution {0,1} masks to (h, w) by bilinear area
// weighting followed by a 0.5 threshold; visibility = any foreground pixel
// at full resolution.
GroundTruthSequence make_ground_truth(const std::vector<Tensor>& full_masks, size_t h, size_t w);

struct LossWeights {
    double lambda_cls = 2.0;
    double lambda_kernel = 5.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double dice_eps = 1.0;
    static LossWeights from(const RunConfig& cfg);
};

// -alpha_t (1 - p_t)^gamma log(p_t) with p = sigmoid(logit), averaged over
// all entries; targets are {0, 1} and are not differentiated.
Tensor focal_loss(Tape& tape, const Tensor& logits, const Tensor& targets, double alpha,
                  double gamma);

// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps), p = sigmoid(logits).
Tensor dice_loss(Tape& tape, const Tensor& mask_logits, const Tensor& gt_mask, double eps);

// Per-pixel focal loss on a mask; identical formula to focal_loss.
Tensor mask_focal_loss(Tape& tape, const Tensor& mask_logits, const Tensor& gt_mask, double alpha,
                       double gamma);

struct EpisodeLoss {
    Tensor total;    // cls + kernel
    Tensor cls;      // lambda_cls * (matched class loss + unmatched-slot class losses)
    Tensor kernel;   // lambda_kernel * (dice + mask focal) on the matched slot
    int matched_slot = -1;
};

// Treats each slot as one candidate trajectory: the slot minimizing
// lambda_cls * L_cls + lambda_kernel * (dice + mask focal over visible
// frames) is matched to the single ground-truth sequence; the other slots
// receive the class loss with an all-zero target.
EpisodeLoss match_and_loss(Tape& tape, const PredictionSequence& pred,
                           const GroundTruthSequence& gt, const LossWeights& weights);

}  // namespace cmaseg
