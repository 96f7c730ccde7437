#pragma once

#include "cmaseg/cma.hpp"

namespace cmaseg {

// Only the stride-16 and stride-32 pyramid levels enter the transformer
// encoder; dense attention over the finer levels would dominate the cost.
inline constexpr size_t kEncoderLevels[2] = {2, 3};

struct TransformerLayerParams {
    MhaParams attn;
    Tensor ln1_g, ln1_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_g, ln2_b;
};

struct DecoderLayerParams {
    MhaParams self_attn;
    Tensor ln1_g, ln1_b;
    MhaParams cross_attn;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln3_g, ln3_b;
};

struct MaskGenParams {
    std::vector<TransformerLayerParams> enc_layers;
    Tensor level_embed;  // [2, d_model], one row per encoder level
    Tensor query_content;  // [N, d_model]
    Tensor query_box;      // [N, 4] anchor-box embedding
    Tensor query_proj_w, query_proj_b;  // [d_model + 4, d_model]
    std::vector<DecoderLayerParams> dec_layers;
    Tensor out_conv_w, out_conv_b;  // 3x3, d_model -> seg_channels
    Tensor class_w, class_b;        // d_model -> 1
    Tensor kernel_w1, kernel_b1, kernel_w2, kernel_b2, kernel_w3, kernel_b3;
};

MaskGenParams make_maskgen_params(ParamStore& store, const RunConfig& cfg, Rng& rng);

// Eq. 5 outputs: per-frame, per-slot confidence logits and mask logits.
struct PredictionSequence {
    Tensor scores;  // [T, N]
    Tensor masks;   // [T, N, H/4, W/4]
    size_t frames() const { return scores.extent(0); }
    size_t slots() const { return scores.extent(1); }
};

// Per-frame encoder memory plus the token/spatial bookkeeping needed to
// reassemble encoder outputs into maps.
struct EncodedFrame {
    Tensor memory;  // [n16 + n32, d_model]
    size_t h16 = 0, w16 = 0, h32 = 0, w32 = 0;
};

EncodedFrame encode_features(Tape& tape, const MultiScaleFeatures& frame, const RunConfig& cfg,
                             const MaskGenParams& params);

// N learnable anchor-box queries replicated for every frame; each frame's
// queries cross-attend to that frame's memory only.
Tensor decode_instances(Tape& tape, const std::vector<EncodedFrame>& memory, const RunConfig& cfg,
                        const MaskGenParams& params);  // [T, N, d_model]

// Eq. 4 text cross-attention on one token matrix (no learned projections).
Tensor text_cross_attention(Tape& tape, const Tensor& visual_tokens, const Tensor& text_tokens,
                            size_t d_head);

// Coarse-to-fine decode: per level, Eq. 4 enhancement and upsample-add, with
// encoder outputs injected at their native levels; a final 3x3 convolution
// produces f_seg at stride 4. query_text must already have width d_model.
Tensor fpn_decode(Tape& tape, const std::vector<MultiScaleFeatures>& frames,
                  const std::vector<EncodedFrame>& encoded, const Tensor& query_text,
                  const RunConfig& cfg, const MaskGenParams& params);  // [T, C, H/4, W/4]

Tensor class_head(Tape& tape, const Tensor& embeddings, const MaskGenParams& params);   // [T, N]
Tensor kernel_head(Tape& tape, const Tensor& embeddings, const RunConfig& cfg,
                   const MaskGenParams& params);  // [T, N, C+1]

// 1x1 dynamic convolution with bias: kernel holds C weights then the bias.
Tensor dynamic_conv(Tape& tape, const Tensor& f_seg, const Tensor& kernel);  // [h, w]

// Applies every slot's kernel to every frame's feature map.
Tensor dynamic_conv_all(Tape& tape, const Tensor& f_seg, const Tensor& kernels);  // [T, N, h, w]

}  // namespace cmaseg
