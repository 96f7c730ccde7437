#include "cmaseg/cma.hpp"

namespace cmaseg {

void AttentionConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
        fail(ErrorCode::config, "AttentionConfig: d_model " + std::to_string(d_model) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
    if (dropout != 0.0) fail(ErrorCode::config, "AttentionConfig: dropout is fixed at 0");
}

AttentionConfig AttentionConfig::from(const RunConfig& cfg) {
    AttentionConfig a;
    a.d_model = cfg.d_model;
    a.n_heads = cfg.n_heads;
    a.dropout = cfg.dropout;
    a.plain_affinity = cfg.plain_affinity;
    a.validate();
    return a;
}

CmaOptions CmaOptions::from(const RunConfig& cfg) {
    return {cfg.self_affinity, cfg.cross_affinity, cfg.mask_support};
}

CmaParams make_cma_params(ParamStore& store, const RunConfig& cfg,
                          const std::array<size_t, kNumLevels>& level_widths, Rng& rng) {
    CmaParams p;
    for (size_t l = 0; l < kNumLevels; ++l) {
        const std::string prefix = "cma.adapter.level" + std::to_string(l);
        p.level_adapter_w[l] =
            store.create(prefix + ".w", {level_widths[l], cfg.d_model}, Init::fan_in, rng);
        p.level_adapter_b[l] = store.create(prefix + ".b", {cfg.d_model}, Init::zeros, rng);
    }
    p.text_adapter_w =
        store.create("cma.adapter.text.w", {cfg.d_text, cfg.d_model}, Init::fan_in, rng);
    p.text_adapter_b = store.create("cma.adapter.text.b", {cfg.d_model}, Init::zeros, rng);
    p.fuse = make_mha_params(store, "cma.fuse", cfg.d_model, rng);
    p.self = make_mha_params(store, "cma.self", cfg.d_model, rng);
    auto cross_base = make_mha_params(store, "cma.cross", cfg.d_model, rng,
                                      /*with_query_proj=*/false);
    p.cross = {cross_base.wk, cross_base.bk, cross_base.wv, cross_base.bv, cross_base.wo,
               cross_base.bo};
    p.concat_w =
        store.create("cma.concat.w", {2 * cfg.d_model, cfg.d_model}, Init::fan_in, rng);
    p.concat_b = store.create("cma.concat.b", {cfg.d_model}, Init::zeros, rng);
    return p;
}

Tensor map_to_tokens(Tape& tape, const Tensor& map) {
    if (map.rank() != 3) fail(ErrorCode::dim, "map_to_tokens: expected [C, h, w]");
    const size_t c = map.extent(0), hw = map.extent(1) * map.extent(2);
    return tape.transpose(tape.reshape(map, {c, hw}), 0, 1);
}

Tensor tokens_to_map(Tape& tape, const Tensor& tokens, size_t h, size_t w) {
    if (tokens.rank() != 2 || tokens.extent(0) != h * w)
        fail(ErrorCode::dim, "tokens_to_map: token count does not match h*w");
    return tape.reshape(tape.transpose(tokens, 0, 1), {tokens.extent(1), h, w});
}

Tensor mca_fuse(Tape& tape, const Tensor& visual, const Tensor& text, const AttentionConfig& cfg,
                const MhaParams& params) {
    cfg.validate();
    if (visual.rank() != 2 || visual.extent(1) != cfg.d_model)
        fail(ErrorCode::dim, "mca_fuse: visual tokens must be [T_v, d_model]");
    if (text.rank() != 2 || text.extent(0) == 0)
        fail(ErrorCode::input, "mca_fuse: text must contain at least one token");
    if (text.extent(1) != cfg.d_model)
        fail(ErrorCode::dim, "mca_fuse: text width " + std::to_string(text.extent(1)) +
                                 " != d_model " + std::to_string(cfg.d_model));
    Tensor q = tape.linear(visual, params.wq, params.bq);
    Tensor k = tape.linear(text, params.wk, params.bk);
    Tensor v = tape.linear(text, params.wv, params.bv);
    Tensor ctx = multi_head_attention(tape, q, k, v, cfg.n_heads);
    return tape.add(visual, tape.linear(ctx, params.wo, params.bo));
}

Tensor self_affinity(Tape& tape, const Tensor& query_feats, const AttentionConfig& cfg,
                     const MhaParams& params, Tensor* scores_out) {
    cfg.validate();
    if (query_feats.rank() != 2 || query_feats.extent(1) != cfg.d_model)
        fail(ErrorCode::dim, "self_affinity: expected [T_q, d_model]");
    Tensor q = tape.linear(query_feats, params.wq, params.bq);
    Tensor k = tape.linear(query_feats, params.wk, params.bk);
    Tensor v = tape.linear(query_feats, params.wv, params.bv);
    Tensor ctx = multi_head_attention(tape, q, k, v, cfg.n_heads, scores_out);
    if (cfg.plain_affinity) return ctx;
    return tape.add(query_feats, tape.linear(ctx, params.wo, params.bo));
}

Tensor cross_affinity(Tape& tape, const Tensor& q_s, const Tensor& support_feats,
                      const AttentionConfig& cfg, const CrossAffinityParams& params,
                      Tensor* scores_out) {
    cfg.validate();
    if (q_s.rank() != 2 || q_s.extent(1) != cfg.d_model)
        fail(ErrorCode::dim, "cross_affinity: expected q_s [T_q, d_model]");
    if (support_feats.rank() != 2 || support_feats.extent(0) == 0)
        fail(ErrorCode::input, "cross_affinity: support must contain at least one token");
    if (support_feats.extent(1) != cfg.d_model)
        fail(ErrorCode::dim, "cross_affinity: support width mismatch");
    Tensor k = tape.linear(support_feats, params.wk, params.bk);
    Tensor v = tape.linear(support_feats, params.wv, params.bv);
    // q_s enters the affinity map unprojected
    Tensor ctx = multi_head_attention(tape, q_s, k, v, cfg.n_heads, scores_out);
    if (cfg.plain_affinity) return ctx;
    return tape.add(q_s, tape.linear(ctx, params.wo, params.bo));
}

namespace {

// Mean over token rows, kept on the tape: [T, d] -> [1, d].
Tensor mean_rows(Tape& tape, const Tensor& tokens) {
    const size_t t = tokens.extent(0);
    Tensor ones = Tensor::full({1, t}, 1.0 / static_cast<scalar>(t));
    return tape.matmul(ones, tokens);
}

Tensor broadcast_rows(Tape& tape, const Tensor& row, size_t t) {
    return tape.matmul(Tensor::full({t, 1}, 1.0), row);
}

}  // namespace

std::vector<MultiScaleFeatures> cma_forward(Tape& tape,
                                            const std::vector<MultiScaleFeatures>& support,
                                            const TextFeatures& support_text,
                                            const std::vector<MultiScaleFeatures>& query,
                                            const TextFeatures& query_text,
                                            const std::vector<Tensor>& support_masks,
                                            const AttentionConfig& cfg, const CmaOptions& opt,
                                            const CmaParams& params) {
    if (support.empty() || query.empty())
        fail(ErrorCode::input, "cma_forward: support and query must be non-empty");
    if (opt.mask_support && support_masks.size() != support.size())
        fail(ErrorCode::input, "cma_forward: one support mask per support frame required");

    Tensor s_text = tape.linear(support_text.tokens, params.text_adapter_w, params.text_adapter_b);
    Tensor q_text = tape.linear(query_text.tokens, params.text_adapter_w, params.text_adapter_b);

    const size_t n_query = query.size();
    std::vector<MultiScaleFeatures> out(n_query);
    for (size_t f = 0; f < n_query; ++f) {
        out[f].frame_index = query[f].frame_index;
        out[f].levels.resize(kNumLevels);
    }

    for (size_t l = 0; l < kNumLevels; ++l) {
        const size_t h = query[0].levels[l].extent(1), w = query[0].levels[l].extent(2);

        auto adapt = [&](const Tensor& map, const Tensor* full_mask) {
            Tensor tokens = map_to_tokens(tape, map);
            if (full_mask) {
                Tensor small = tape.bilinear_resize(
                    tape.reshape(*full_mask, {1, full_mask->extent(0), full_mask->extent(1)}),
                    map.extent(1), map.extent(2));
                tokens = tape.scale_rows(tokens, tape.reshape(small, {map.extent(1) * map.extent(2)}));
            }
            return tape.linear(tokens, params.level_adapter_w[l], params.level_adapter_b[l]);
        };

        std::vector<Tensor> s_parts, q_parts;
        for (size_t f = 0; f < support.size(); ++f)
            s_parts.push_back(adapt(support[f].levels[l],
                                    opt.mask_support ? &support_masks[f] : nullptr));
        for (size_t f = 0; f < n_query; ++f) q_parts.push_back(adapt(query[f].levels[l], nullptr));
        Tensor s_tokens = s_parts.size() == 1 ? s_parts[0] : tape.concat(s_parts, 0);
        Tensor q_tokens = q_parts.size() == 1 ? q_parts[0] : tape.concat(q_parts, 0);

        Tensor s_fused = mca_fuse(tape, s_tokens, s_text, cfg, params.fuse);
        Tensor q_fused = mca_fuse(tape, q_tokens, q_text, cfg, params.fuse);

        Tensor enhanced = opt.self_on ? self_affinity(tape, q_fused, cfg, params.self) : q_fused;
        if (opt.cross_on) {
            enhanced = cross_affinity(tape, enhanced, s_fused, cfg, params.cross);
        } else {
            // baseline path: pool the support tokens and inject by channel
            // concatenation + projection
            Tensor pooled = broadcast_rows(tape, mean_rows(tape, s_fused), enhanced.extent(0));
            Tensor mixed = tape.linear(tape.concat({enhanced, pooled}, 1), params.concat_w,
                                       params.concat_b);
            enhanced = tape.add(enhanced, mixed);
        }

        Tensor per_frame = tape.reshape(enhanced, {n_query, h * w, cfg.d_model});
        for (size_t f = 0; f < n_query; ++f)
            out[f].levels[l] = tokens_to_map(tape, tape.slice0(per_frame, f), h, w);
    }
    return out;
}

}  // namespace cmaseg
