#pragma once

#include "cmaseg/config.hpp"
#include "cmaseg/nn.hpp"

namespace cmaseg {

// AdamW with decoupled weight decay and optional global-norm gradient
// clipping. Frozen (non-trainable) parameters are never touched.
class AdamW {
public:
    AdamW(ParamStore& store, const RunConfig& cfg);

    // Clips gradients, then applies one update. Throws on non-finite
    // gradients, naming the offending parameter.
    void step();
    size_t step_count() const { return step_; }

    // State for exact resume, stored alongside the parameters:
    //   opt.step (scalar), opt.m.<name>, opt.v.<name>
    std::vector<std::pair<std::string, Tensor>> state_entries() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& named);

private:
    ParamStore& store_;
    double lr_, weight_decay_, beta1_, beta2_, eps_, clip_norm_;
    size_t step_ = 0;
    std::vector<Tensor> m_, v_;  // parallel to store entries; undefined for frozen
};

}  // namespace cmaseg
