#include "cmaseg/maskgen.hpp"

#include <cmath>

namespace cmaseg {

namespace {

TransformerLayerParams make_encoder_layer(ParamStore& store, const std::string& prefix,
                                          const RunConfig& cfg, Rng& rng) {
    TransformerLayerParams p;
    const size_t d = cfg.d_model, ffn = cfg.ffn_mult * cfg.d_model;
    p.attn = make_mha_params(store, prefix + ".attn", d, rng);
    p.ln1_g = store.create(prefix + ".ln1.g", {d}, Init::ones, rng);
    p.ln1_b = store.create(prefix + ".ln1.b", {d}, Init::zeros, rng);
    p.ffn_w1 = store.create(prefix + ".ffn.w1", {d, ffn}, Init::fan_in, rng);
    p.ffn_b1 = store.create(prefix + ".ffn.b1", {ffn}, Init::zeros, rng);
    p.ffn_w2 = store.create(prefix + ".ffn.w2", {ffn, d}, Init::fan_in, rng);
    p.ffn_b2 = store.create(prefix + ".ffn.b2", {d}, Init::zeros, rng);
    p.ln2_g = store.create(prefix + ".ln2.g", {d}, Init::ones, rng);
    p.ln2_b = store.create(prefix + ".ln2.b", {d}, Init::zeros, rng);
    return p;
}

DecoderLayerParams make_decoder_layer(ParamStore& store, const std::string& prefix,
                                      const RunConfig& cfg, Rng& rng) {
    DecoderLayerParams p;
    const size_t d = cfg.d_model, ffn = cfg.ffn_mult * cfg.d_model;
    p.self_attn = make_mha_params(store, prefix + ".self", d, rng);
    p.ln1_g = store.create(prefix + ".ln1.g", {d}, Init::ones, rng);
    p.ln1_b = store.create(prefix + ".ln1.b", {d}, Init::zeros, rng);
    p.cross_attn = make_mha_params(store, prefix + ".cross", d, rng);
    p.ln2_g = store.create(prefix + ".ln2.g", {d}, Init::ones, rng);
    p.ln2_b = store.create(prefix + ".ln2.b", {d}, Init::zeros, rng);
    p.ffn_w1 = store.create(prefix + ".ffn.w1", {d, ffn}, Init::fan_in, rng);
    p.ffn_b1 = store.create(prefix + ".ffn.b1", {ffn}, Init::zeros, rng);
    p.ffn_w2 = store.create(prefix + ".ffn.w2", {ffn, d}, Init::fan_in, rng);
    p.ffn_b2 = store.create(prefix + ".ffn.b2", {d}, Init::zeros, rng);
    p.ln3_g = store.create(prefix + ".ln3.g", {d}, Init::ones, rng);
    p.ln3_b = store.create(prefix + ".ln3.b", {d}, Init::zeros, rng);
    return p;
}

Tensor ffn_forward(Tape& tape, const Tensor& x, const Tensor& w1, const Tensor& b1,
                   const Tensor& w2, const Tensor& b2) {
    return tape.linear(tape.relu(tape.linear(x, w1, b1)), w2, b2);
}

Tensor encoder_layer_forward(Tape& tape, const Tensor& x, const RunConfig& cfg,
                             const TransformerLayerParams& p) {
    Tensor q = tape.linear(x, p.attn.wq, p.attn.bq);
    Tensor k = tape.linear(x, p.attn.wk, p.attn.bk);
    Tensor v = tape.linear(x, p.attn.wv, p.attn.bv);
    Tensor ctx = tape.linear(multi_head_attention(tape, q, k, v, cfg.n_heads), p.attn.wo,
                             p.attn.bo);
    Tensor h = tape.layer_norm(tape.add(x, ctx), p.ln1_g, p.ln1_b);
    Tensor f = ffn_forward(tape, h, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2);
    return tape.layer_norm(tape.add(h, f), p.ln2_g, p.ln2_b);
}

Tensor decoder_layer_forward(Tape& tape, const Tensor& queries, const Tensor& memory,
                             const RunConfig& cfg, const DecoderLayerParams& p) {
    Tensor q1 = tape.linear(queries, p.self_attn.wq, p.self_attn.bq);
    Tensor k1 = tape.linear(queries, p.self_attn.wk, p.self_attn.bk);
    Tensor v1 = tape.linear(queries, p.self_attn.wv, p.self_attn.bv);
    Tensor self_ctx = tape.linear(multi_head_attention(tape, q1, k1, v1, cfg.n_heads),
                                  p.self_attn.wo, p.self_attn.bo);
    Tensor h1 = tape.layer_norm(tape.add(queries, self_ctx), p.ln1_g, p.ln1_b);

    Tensor q2 = tape.linear(h1, p.cross_attn.wq, p.cross_attn.bq);
    Tensor k2 = tape.linear(memory, p.cross_attn.wk, p.cross_attn.bk);
    Tensor v2 = tape.linear(memory, p.cross_attn.wv, p.cross_attn.bv);
    Tensor cross_ctx = tape.linear(multi_head_attention(tape, q2, k2, v2, cfg.n_heads),
                                   p.cross_attn.wo, p.cross_attn.bo);
    Tensor h2 = tape.layer_norm(tape.add(h1, cross_ctx), p.ln2_g, p.ln2_b);

    Tensor f = ffn_forward(tape, h2, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2);
    return tape.layer_norm(tape.add(h2, f), p.ln3_g, p.ln3_b);
}

}  // namespace

MaskGenParams make_maskgen_params(ParamStore& store, const RunConfig& cfg, Rng& rng) {
    MaskGenParams p;
    const size_t d = cfg.d_model;
    for (size_t i = 0; i < cfg.enc_layers; ++i)
        p.enc_layers.push_back(
            make_encoder_layer(store, "maskgen.encoder.layer" + std::to_string(i), cfg, rng));
    p.level_embed = store.create("maskgen.level_embed", {2, d}, Init::normal_small, rng);
    p.query_content = store.create("maskgen.query.content", {cfg.n_slots, d}, Init::fan_in, rng);
    p.query_box = store.create("maskgen.query.box", {cfg.n_slots, 4}, Init::fan_in, rng);
    p.query_proj_w = store.create("maskgen.query.proj.w", {d + 4, d}, Init::fan_in, rng);
    p.query_proj_b = store.create("maskgen.query.proj.b", {d}, Init::zeros, rng);
    for (size_t i = 0; i < cfg.dec_layers; ++i)
        p.dec_layers.push_back(
            make_decoder_layer(store, "maskgen.decoder.layer" + std::to_string(i), cfg, rng));
    p.out_conv_w = store.create("maskgen.fpn.out_conv.w", {cfg.seg_channels, d, 3, 3},
                                Init::fan_in, rng);
    p.out_conv_b = store.create("maskgen.fpn.out_conv.b", {cfg.seg_channels}, Init::zeros, rng);
    p.class_w = store.create("heads.class.w", {d, 1}, Init::fan_in, rng);
    p.class_b = store.create("heads.class.b", {1}, Init::zeros, rng);
    p.kernel_w1 = store.create("heads.kernel.w1", {d, d}, Init::fan_in, rng);
    p.kernel_b1 = store.create("heads.kernel.b1", {d}, Init::zeros, rng);
    p.kernel_w2 = store.create("heads.kernel.w2", {d, d}, Init::fan_in, rng);
    p.kernel_b2 = store.create("heads.kernel.b2", {d}, Init::zeros, rng);
    p.kernel_w3 = store.create("heads.kernel.w3", {d, cfg.seg_channels + 1}, Init::fan_in, rng);
    p.kernel_b3 = store.create("heads.kernel.b3", {cfg.seg_channels + 1}, Init::zeros, rng);
    return p;
}

EncodedFrame encode_features(Tape& tape, const MultiScaleFeatures& frame, const RunConfig& cfg,
                             const MaskGenParams& params) {
    if (frame.levels.size() != kNumLevels)
        fail(ErrorCode::input, "encode_features: expected 4 pyramid levels");
    EncodedFrame out;
    const Tensor& l16 = frame.levels[kEncoderLevels[0]];
    const Tensor& l32 = frame.levels[kEncoderLevels[1]];
    out.h16 = l16.extent(1);
    out.w16 = l16.extent(2);
    out.h32 = l32.extent(1);
    out.w32 = l32.extent(2);

    auto with_pos = [&](const Tensor& map, size_t level_row) {
        Tensor tokens = map_to_tokens(tape, map);
        Tensor pos = sinusoidal_positions_2d(map.extent(1), map.extent(2), cfg.d_model);
        Tensor lvl = tape.matmul(Tensor::full({tokens.extent(0), 1}, 1.0),
                                 tape.slice_rows(params.level_embed, level_row, level_row + 1));
        return tape.add(tape.add(tokens, pos), lvl);
    };
    Tensor x = tape.concat({with_pos(l16, 0), with_pos(l32, 1)}, 0);
    for (const auto& layer : params.enc_layers) x = encoder_layer_forward(tape, x, cfg, layer);
    out.memory = x;
    return out;
}

Tensor decode_instances(Tape& tape, const std::vector<EncodedFrame>& memory, const RunConfig& cfg,
                        const MaskGenParams& params) {
    if (memory.empty()) fail(ErrorCode::input, "decode_instances: no frames");
    Tensor queries = tape.linear(tape.concat({params.query_content, params.query_box}, 1),
                                 params.query_proj_w, params.query_proj_b);
    std::vector<Tensor> per_frame;
    per_frame.reserve(memory.size());
    for (const auto& frame : memory) {
        Tensor q = queries;
        for (const auto& layer : params.dec_layers)
            q = decoder_layer_forward(tape, q, frame.memory, cfg, layer);
        per_frame.push_back(q);
    }
    return tape.stack0(per_frame);  // [T, N, d]
}

Tensor text_cross_attention(Tape& tape, const Tensor& visual_tokens, const Tensor& text_tokens,
                            size_t d_head) {
    if (text_tokens.extent(0) == 0)
        fail(ErrorCode::input, "text_cross_attention: empty text");
    Tensor scores = tape.mul_scalar(tape.matmul(visual_tokens, tape.transpose(text_tokens, 0, 1)),
                                    1.0 / std::sqrt(static_cast<scalar>(d_head)));
    return tape.matmul(tape.softmax(scores, 1), text_tokens);
}

Tensor fpn_decode(Tape& tape, const std::vector<MultiScaleFeatures>& frames,
                  const std::vector<EncodedFrame>& encoded, const Tensor& query_text,
                  const RunConfig& cfg, const MaskGenParams& params) {
    if (frames.size() != encoded.size())
        fail(ErrorCode::input, "fpn_decode: frame/memory count mismatch");
    const size_t d_head = cfg.d_model / cfg.n_heads;
    std::vector<Tensor> seg;
    seg.reserve(frames.size());
    for (size_t f = 0; f < frames.size(); ++f) {
        const auto& enc = encoded[f];
        const size_t n16 = enc.h16 * enc.w16;
        // encoder outputs replace the vision-pyramid features at their levels
        std::array<Tensor, kNumLevels> maps;
        maps[0] = frames[f].levels[0];
        maps[1] = frames[f].levels[1];
        maps[2] = tokens_to_map(tape, tape.slice_rows(enc.memory, 0, n16), enc.h16, enc.w16);
        maps[3] = tokens_to_map(tape, tape.slice_rows(enc.memory, n16, enc.memory.extent(0)),
                                enc.h32, enc.w32);

        Tensor carry;  // upsampled coarser output
        for (size_t l = kNumLevels; l-- > 0;) {
            const size_t h = maps[l].extent(1), w = maps[l].extent(2);
            Tensor tokens = map_to_tokens(tape, maps[l]);
            Tensor enhanced =
                tape.add(tokens, text_cross_attention(tape, tokens, query_text, d_head));
            Tensor g = tokens_to_map(tape, enhanced, h, w);
            if (carry.defined()) g = tape.add(g, tape.bilinear_resize(carry, h, w));
            carry = g;
        }
        seg.push_back(tape.add_channel_bias(tape.conv2d(carry, params.out_conv_w, 1, 1),
                                            params.out_conv_b));
    }
    return tape.stack0(seg);  // [T, C, H/4, W/4]
}

Tensor class_head(Tape& tape, const Tensor& embeddings, const MaskGenParams& params) {
    if (embeddings.rank() != 3) fail(ErrorCode::dim, "class_head: expected [T, N, d]");
    Tensor logits = tape.linear(embeddings, params.class_w, params.class_b);
    return tape.reshape(logits, {embeddings.extent(0), embeddings.extent(1)});
}

Tensor kernel_head(Tape& tape, const Tensor& embeddings, const RunConfig& cfg,
                   const MaskGenParams& params) {
    if (embeddings.rank() != 3) fail(ErrorCode::dim, "kernel_head: expected [T, N, d]");
    (void)cfg;
    Tensor h1 = tape.relu(tape.linear(embeddings, params.kernel_w1, params.kernel_b1));
    Tensor h2 = tape.relu(tape.linear(h1, params.kernel_w2, params.kernel_b2));
    return tape.linear(h2, params.kernel_w3, params.kernel_b3);  // [T, N, C+1]
}

Tensor dynamic_conv(Tape& tape, const Tensor& f_seg, const Tensor& kernel) {
    if (f_seg.rank() != 3) fail(ErrorCode::dim, "dynamic_conv: expected f_seg [C, h, w]");
    const size_t c = f_seg.extent(0), h = f_seg.extent(1), w = f_seg.extent(2);
    if (kernel.rank() != 1 || kernel.extent(0) != c + 1)
        fail(ErrorCode::dim, "dynamic_conv: kernel length " +
                                 std::to_string(kernel.defined() ? kernel.size() : 0) +
                                 " != C+1 = " + std::to_string(c + 1));
    Tensor col = tape.reshape(kernel, {c + 1, 1});
    Tensor weight = tape.slice_rows(col, 0, c);                       // [C, 1]
    Tensor bias = tape.reshape(tape.slice_rows(col, c, c + 1), {1});  // [1]
    Tensor tokens = map_to_tokens(tape, f_seg);                       // [hw, C]
    return tape.reshape(tape.linear(tokens, weight, bias), {h, w});
}

Tensor dynamic_conv_all(Tape& tape, const Tensor& f_seg, const Tensor& kernels) {
    if (f_seg.rank() != 4 || kernels.rank() != 3)
        fail(ErrorCode::dim, "dynamic_conv_all: expected f_seg [T, C, h, w], kernels [T, N, C+1]");
    const size_t t = f_seg.extent(0), c = f_seg.extent(1);
    const size_t h = f_seg.extent(2), w = f_seg.extent(3);
    const size_t n = kernels.extent(1);
    if (kernels.extent(0) != t || kernels.extent(2) != c + 1)
        fail(ErrorCode::dim, "dynamic_conv_all: kernel shape mismatch");
    std::vector<Tensor> frames;
    frames.reserve(t);
    for (size_t f = 0; f < t; ++f) {
        Tensor kf = tape.transpose(tape.slice0(kernels, f), 0, 1);  // [C+1, N]
        Tensor weight = tape.slice_rows(kf, 0, c);                  // [C, N]
        Tensor bias = tape.reshape(tape.slice_rows(kf, c, c + 1), {n});
        Tensor tokens = map_to_tokens(tape, tape.slice0(f_seg, f));  // [hw, C]
        Tensor masks = tape.transpose(tape.linear(tokens, weight, bias), 0, 1);  // [N, hw]
        frames.push_back(tape.reshape(masks, {n, h, w}));
    }
    return tape.stack0(frames);  // [T, N, h, w]
}

}  // namespace cmaseg
