#pragma once

#include "cmaseg/maskgen.hpp"

namespace cmaseg {

// One episode, loaded to tensors. Frames are [3, H, W] in [0, 1], masks are
// [H, W] in {0, 1}; all frames share one padded H, W divisible by 32.
// orig_h/orig_w keep the pre-padding size so predictions can be cropped.
struct EpisodeTensors {
    std::vector<Tensor> support_frames;
    std::vector<Tensor> support_masks;
    std::vector<int> support_tokens;
    std::vector<Tensor> query_frames;
    std::vector<Tensor> query_masks;  // empty when unlabeled
    std::vector<int> query_tokens;
    std::string episode_id;
    std::string class_label;
    size_t orig_h = 0, orig_w = 0;
};

class Model {
public:
    Model(const RunConfig& cfg, size_t vocab_size);

    PredictionSequence forward(Tape& tape, const EpisodeTensors& episode) const;

    const RunConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    size_t vocab_size() const { return vocab_size_; }

private:
    RunConfig cfg_;
    size_t vocab_size_ = 0;
    ParamStore store_;
    VisionEncoderParams vision_;
    TextEncoderParams text_;
    CmaParams cma_;
    MaskGenParams maskgen_;
};

}  // namespace cmaseg
