#pragma once

#include <string>
#include <vector>

#include "cmaseg/common.hpp"

namespace cmaseg {

// Flat key=value run configuration. Unknown keys are rejected; defaults
// follow the training protocol (AdamW lr 1e-4, weight decay 5e-4, 5-shot,
// lambda_cls 2, lambda_kernel 5, frames bounded to 360/640).
struct RunConfig {
    // widths and architecture
    size_t d_model = 256;
    size_t n_heads = 8;
    size_t d_text = 64;
    size_t text_heads = 2;
    size_t enc_base_width = 32;   // vision stage widths are {w, 2w, 3w, 4w}
    size_t enc_layers = 2;
    size_t dec_layers = 2;
    size_t ffn_mult = 2;
    size_t n_slots = 5;           // instance queries per frame
    size_t seg_channels = 8;      // C of the segmentation feature map
    double dropout = 0.0;

    // episodic protocol
    size_t k_shot = 5;
    size_t n_query = 5;
    size_t max_text_len = 20;
    size_t holdout_per_class = 2;

    // loss
    double lambda_cls = 2.0;
    double lambda_kernel = 5.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double dice_eps = 1.0;

    // optimizer
    double lr = 1e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    size_t steps = 2000;
    uint64_t seed = 0;

    // toggles
    bool freeze_encoders = false;
    bool mask_support = true;
    bool plain_affinity = false;
    bool self_affinity = true;
    bool cross_affinity = true;

    // input sizing: applied only when frames exceed the bounds
    size_t resize_short = 360;
    size_t resize_long = 640;

    // evaluation
    size_t eval_episodes = 24;
    size_t eval_runs = 5;
    bool per_frame_select = false;
    size_t f_tolerance = 0;                 // 0 = ceil(0.8% of diagonal), min 1
    std::string eval_upsample = "nearest";  // or "bilinear"

    std::string vocab;  // path; empty = built-in synthetic grammar vocabulary

    void validate() const;
    void set(const std::string& key, const std::string& value);
    static RunConfig from_file(const std::string& path);
    void apply_overrides(const std::vector<std::string>& key_values);  // "key=value"
    std::string describe() const;  // key=value lines, every key
};

}  // namespace cmaseg
