#include "cmaseg/losses.hpp"

#include <limits>

namespace cmaseg {

void GroundTruthSequence::validate() const {
    if (masks.rank() != 3 || visible.size() != masks.extent(0))
        fail(ErrorCode::dim, "GroundTruthSequence: masks must be [T, h, w] with T visibility flags");
    const size_t plane = masks.extent(1) * masks.extent(2);
    for (size_t t = 0; t < visible.size(); ++t) {
        bool any = false;
        for (size_t i = 0; i < plane; ++i) {
            const scalar v = masks.data()[t * plane + i];
            if (v != 0.0 && v != 1.0)
                fail(ErrorCode::input, "GroundTruthSequence: masks must be binary");
            any = any || v != 0.0;
        }
        if (visible[t] == 0 && any)
            fail(ErrorCode::input, "GroundTruthSequence: invisible frame has foreground pixels");
    }
}

GroundTruthSequence make_ground_truth(const std::vector<Tensor>& full_masks, size_t h, size_t w) {
    if (full_masks.empty()) fail(ErrorCode::input, "make_ground_truth: no masks");
    GroundTruthSequence gt;
    gt.masks = Tensor::zeros({full_masks.size(), h, w});
    Tape tape(false);
    for (size_t t = 0; t < full_masks.size(); ++t) {
        const Tensor& m = full_masks[t];
        if (m.rank() != 2) fail(ErrorCode::dim, "make_ground_truth: masks must be [H, W]");
        bool any = false;
        for (size_t i = 0; i < m.size(); ++i) any = any || m.data()[i] != 0.0;
        gt.visible.push_back(any ? 1 : 0);
        if (!any) continue;
        Tensor small = tape.bilinear_resize(tape.reshape(m, {1, m.extent(0), m.extent(1)}), h, w);
        for (size_t i = 0; i < h * w; ++i)
            gt.masks.data()[t * h * w + i] = small.data()[i] > 0.5 ? 1.0 : 0.0;
    }
    gt.validate();
    return gt;
}

LossWeights LossWeights::from(const RunConfig& cfg) {
    return {cfg.lambda_cls, cfg.lambda_kernel, cfg.focal_alpha, cfg.focal_gamma, cfg.dice_eps};
}

Tensor focal_loss(Tape& tape, const Tensor& logits, const Tensor& targets, double alpha,
                  double gamma) {
    if (!same_shape(logits.shape(), targets.shape()))
        fail(ErrorCode::dim, "focal_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                                 shape_str(targets.shape()));
    for (size_t i = 0; i < targets.size(); ++i)
        if (targets.data()[i] != 0.0 && targets.data()[i] != 1.0)
            fail(ErrorCode::input, "focal_loss: targets must be binary");
    Tensor p = tape.sigmoid(logits);
    // p_t = p * (2y - 1) + (1 - y);  alpha_t = alpha*y + (1-alpha)*(1-y)
    Tensor two_y_minus_1 = Tensor::uninitialized(targets.shape());
    Tensor one_minus_y = Tensor::uninitialized(targets.shape());
    Tensor alpha_t = Tensor::uninitialized(targets.shape());
    for (size_t i = 0; i < targets.size(); ++i) {
        const scalar y = targets.data()[i];
        two_y_minus_1.data()[i] = 2.0 * y - 1.0;
        one_minus_y.data()[i] = 1.0 - y;
        alpha_t.data()[i] = alpha * y + (1.0 - alpha) * (1.0 - y);
    }
    Tensor pt = tape.add(tape.mul(p, two_y_minus_1), one_minus_y);
    Tensor focal_weight = tape.pow_scalar(tape.sub(Tensor::full(pt.shape(), 1.0), pt), gamma);
    Tensor entries = tape.mul(tape.mul(alpha_t, focal_weight), tape.log_clamped(pt));
    return tape.mul_scalar(tape.reduce_mean(entries), -1.0);
}

Tensor dice_loss(Tape& tape, const Tensor& mask_logits, const Tensor& gt_mask, double eps) {
    if (!same_shape(mask_logits.shape(), gt_mask.shape()))
        fail(ErrorCode::dim, "dice_loss: shape mismatch " + shape_str(mask_logits.shape()) +
                                 " vs " + shape_str(gt_mask.shape()));
    Tensor p = tape.sigmoid(mask_logits);
    Tensor inter = tape.reduce_sum(tape.mul(p, gt_mask));
    Tensor denom = tape.add_scalar(tape.add(tape.reduce_sum(p), tape.reduce_sum(gt_mask)), eps);
    Tensor ratio = tape.div(tape.add_scalar(tape.mul_scalar(inter, 2.0), eps), denom);
    return tape.add_scalar(tape.mul_scalar(ratio, -1.0), 1.0);
}

Tensor mask_focal_loss(Tape& tape, const Tensor& mask_logits, const Tensor& gt_mask, double alpha,
                       double gamma) {
    return focal_loss(tape, mask_logits, gt_mask, alpha, gamma);
}

EpisodeLoss match_and_loss(Tape& tape, const PredictionSequence& pred,
                           const GroundTruthSequence& gt, const LossWeights& weights) {
    gt.validate();
    const size_t t_frames = pred.frames(), n_slots = pred.slots();
    if (gt.visible.size() != t_frames)
        fail(ErrorCode::input, "match_and_loss: ground truth has " +
                                   std::to_string(gt.visible.size()) + " frames, predictions have " +
                                   std::to_string(t_frames));
    if (pred.masks.extent(2) != gt.masks.extent(1) || pred.masks.extent(3) != gt.masks.extent(2))
        fail(ErrorCode::dim, "match_and_loss: mask resolution mismatch");

    Tensor vis_target = Tensor::uninitialized({t_frames});
    for (size_t t = 0; t < t_frames; ++t) vis_target.data()[t] = gt.visible[t];
    Tensor zero_target = Tensor::zeros({t_frames});

    Tensor scores_by_slot = tape.transpose(pred.scores, 0, 1);  // [N, T]
    Tensor masks_by_slot = tape.transpose(pred.masks, 0, 1);    // [N, T, h, w]

    std::vector<size_t> visible_frames;
    for (size_t t = 0; t < t_frames; ++t)
        if (gt.visible[t]) visible_frames.push_back(t);

    std::vector<Tensor> cls_losses, kernel_losses;
    std::vector<scalar> slot_cost(n_slots);
    for (size_t i = 0; i < n_slots; ++i) {
        Tensor cls = focal_loss(tape, tape.slice0(scores_by_slot, i), vis_target,
                                weights.focal_alpha, weights.focal_gamma);
        Tensor kern;
        if (!visible_frames.empty()) {
            Tensor slot_masks = tape.slice0(masks_by_slot, i);  // [T, h, w]
            for (size_t t : visible_frames) {
                Tensor logits = tape.slice0(slot_masks, t);
                Tensor target = tape.slice0(gt.masks, t);
                Tensor frame_loss =
                    tape.add(dice_loss(tape, logits, target, weights.dice_eps),
                             mask_focal_loss(tape, logits, target, weights.focal_alpha,
                                             weights.focal_gamma));
                kern = kern.defined() ? tape.add(kern, frame_loss) : frame_loss;
            }
            kern = tape.mul_scalar(kern, 1.0 / static_cast<scalar>(visible_frames.size()));
        } else {
            kern = Tensor::scalar_value(0.0);
        }
        cls_losses.push_back(cls);
        kernel_losses.push_back(kern);
        slot_cost[i] = weights.lambda_cls * cls.item() + weights.lambda_kernel * kern.item();
    }

    int matched = 0;
    scalar best = std::numeric_limits<scalar>::infinity();
    for (size_t i = 0; i < n_slots; ++i) {
        if (slot_cost[i] < best) {
            best = slot_cost[i];
            matched = static_cast<int>(i);
        }
    }

    Tensor cls_sum = cls_losses[static_cast<size_t>(matched)];
    for (size_t i = 0; i < n_slots; ++i) {
        if (static_cast<int>(i) == matched) continue;
        Tensor rejected = focal_loss(tape, tape.slice0(scores_by_slot, i), zero_target,
                                     weights.focal_alpha, weights.focal_gamma);
        cls_sum = tape.add(cls_sum, rejected);
    }

    EpisodeLoss out;
    out.matched_slot = matched;
    out.cls = tape.mul_scalar(cls_sum, weights.lambda_cls);
    out.kernel = tape.mul_scalar(kernel_losses[static_cast<size_t>(matched)],
                                 weights.lambda_kernel);
    out.total = tape.add(out.cls, out.kernel);
    return out;
}

}  // namespace cmaseg
