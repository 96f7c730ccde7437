#include "cmaseg/encoders.hpp"

namespace cmaseg {

VisionEncoderParams make_vision_encoder(ParamStore& store, const RunConfig& cfg, Rng& rng) {
    const size_t w = cfg.enc_base_width;
    VisionEncoderParams p;
    p.widths = {w, 2 * w, 3 * w, 4 * w};
    auto conv = [&](const std::string& name, size_t c_out, size_t c_in, Tensor& weight,
                    Tensor& bias) {
        weight = store.create("encoder.vision." + name + ".w", {c_out, c_in, 3, 3}, Init::fan_in,
                              rng);
        bias = store.create("encoder.vision." + name + ".b", {c_out}, Init::zeros, rng);
    };
    conv("conv1a", w, 3, p.conv1a_w, p.conv1a_b);
    conv("conv1b", w, w, p.conv1b_w, p.conv1b_b);
    conv("conv2", 2 * w, w, p.conv2_w, p.conv2_b);
    conv("conv3", 3 * w, 2 * w, p.conv3_w, p.conv3_b);
    conv("conv4", 4 * w, 3 * w, p.conv4_w, p.conv4_b);
    return p;
}

MultiScaleFeatures encode_frame(Tape& tape, const Tensor& frame,
                                const VisionEncoderParams& params, size_t frame_index) {
    if (frame.rank() != 3 || frame.extent(0) != 3)
        fail(ErrorCode::input, "encode_frame: expected frame [3, H, W], got " +
                                   shape_str(frame.shape()));
    const size_t h = frame.extent(1), w = frame.extent(2);
    if (h % 32 != 0 || w % 32 != 0)
        fail(ErrorCode::input, "encode_frame: extents must be divisible by 32, got " +
                                   std::to_string(h) + "x" + std::to_string(w) +
                                   " (pad the input first)");
    auto stage = [&](const Tensor& x, const Tensor& weight, const Tensor& bias) {
        return tape.relu(tape.add_channel_bias(tape.conv2d(x, weight, 2, 1), bias));
    };
    MultiScaleFeatures out;
    out.frame_index = frame_index;
    Tensor s1 = stage(stage(frame, params.conv1a_w, params.conv1a_b), params.conv1b_w,
                      params.conv1b_b);
    Tensor s2 = stage(s1, params.conv2_w, params.conv2_b);
    Tensor s3 = stage(s2, params.conv3_w, params.conv3_b);
    Tensor s4 = stage(s3, params.conv4_w, params.conv4_b);
    out.levels = {s1, s2, s3, s4};
    return out;
}

TextEncoderParams make_text_encoder(ParamStore& store, const RunConfig& cfg, size_t vocab_size,
                                    Rng& rng) {
    TextEncoderParams p;
    p.d_text = cfg.d_text;
    p.n_heads = cfg.text_heads;
    p.embedding = store.create("encoder.text.embedding", {vocab_size, cfg.d_text},
                               Init::normal_small, rng);
    p.attn = make_mha_params(store, "encoder.text.attn", cfg.d_text, rng);
    return p;
}

TextFeatures encode_expression(Tape& tape, const std::vector<int>& token_ids,
                               const TextEncoderParams& params, size_t max_len) {
    if (token_ids.empty()) fail(ErrorCode::input, "encode_expression: empty expression");
    if (token_ids.size() > max_len)
        fail(ErrorCode::input, "encode_expression: expression longer than " +
                                   std::to_string(max_len) + " tokens");
    Tensor x = tape.embed(params.embedding, token_ids);
    x = tape.add(x, sinusoidal_positions_1d(token_ids.size(), params.d_text));
    Tensor q = tape.linear(x, params.attn.wq, params.attn.bq);
    Tensor k = tape.linear(x, params.attn.wk, params.attn.bk);
    Tensor v = tape.linear(x, params.attn.wv, params.attn.bv);
    Tensor ctx = multi_head_attention(tape, q, k, v, params.n_heads);
    TextFeatures out;
    out.tokens = tape.add(x, tape.linear(ctx, params.attn.wo, params.attn.bo));
    return out;
}

}  // namespace cmaseg
