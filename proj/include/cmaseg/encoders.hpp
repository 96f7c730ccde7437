#pragma once

#include <vector>

#include "cmaseg/config.hpp"
#include "cmaseg/nn.hpp"
#include "cmaseg/vocab.hpp"

namespace cmaseg {

inline constexpr size_t kNumLevels = 4;
inline constexpr size_t kLevelStrides[kNumLevels] = {4, 8, 16, 32};

struct MultiScaleFeatures {
    std::vector<Tensor> levels;  // [C_l, H/s, W/s] for s in {4, 8, 16, 32}
    size_t frame_index = 0;
};

struct TextFeatures {
    Tensor tokens;  // [L, d_text]
    size_t length() const { return tokens.extent(0); }
};

// Stand-in for a pretrained multi-scale vision backbone: four stages of
// 3x3 strided convolutions with relu, widths {w, 2w, 3w, 4w}.
struct VisionEncoderParams {
    // stage 1 has two stride-2 convs to reach stride 4; stages 2..4 one each
    Tensor conv1a_w, conv1a_b;
    Tensor conv1b_w, conv1b_b;
    Tensor conv2_w, conv2_b;
    Tensor conv3_w, conv3_b;
    Tensor conv4_w, conv4_b;
    std::array<size_t, kNumLevels> widths{};
};

VisionEncoderParams make_vision_encoder(ParamStore& store, const RunConfig& cfg, Rng& rng);
MultiScaleFeatures encode_frame(Tape& tape, const Tensor& frame, const VisionEncoderParams& params,
                                size_t frame_index = 0);

// Stand-in for a pretrained text encoder: embedding table + sinusoidal
// positions + one self-attention layer with residual.
struct TextEncoderParams {
    Tensor embedding;  // [V, d_text]
    MhaParams attn;
    size_t d_text = 0;
    size_t n_heads = 1;
};

TextEncoderParams make_text_encoder(ParamStore& store, const RunConfig& cfg, size_t vocab_size,
                                    Rng& rng);
TextFeatures encode_expression(Tape& tape, const std::vector<int>& token_ids,
                               const TextEncoderParams& params, size_t max_len);

}  // namespace cmaseg
