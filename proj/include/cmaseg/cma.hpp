#pragma once

#include "cmaseg/encoders.hpp"

namespace cmaseg {

struct AttentionConfig {
    size_t d_model = 256;
    size_t n_heads = 8;
    double dropout = 0.0;
    // Run the affinity blocks as the bare equations: projections, scaled
    // dot-product softmax, weighted sum. No output projection, no residual.
    bool plain_affinity = false;

    size_t d_head() const { return d_model / n_heads; }
    void validate() const;
    static AttentionConfig from(const RunConfig& cfg);
};

struct CrossAffinityParams {
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;  // unused in plain mode
};

struct CmaParams {
    std::array<Tensor, kNumLevels> level_adapter_w;
    std::array<Tensor, kNumLevels> level_adapter_b;
    Tensor text_adapter_w, text_adapter_b;
    MhaParams fuse;   // Eq. 1 multi-head cross-attention, shared across levels
    MhaParams self;   // Eq. 2 projections
    CrossAffinityParams cross;  // Eq. 3 projections
    Tensor concat_w, concat_b;  // support-pooling path when cross-affinity is off
};

CmaParams make_cma_params(ParamStore& store, const RunConfig& cfg,
                          const std::array<size_t, kNumLevels>& level_widths, Rng& rng);

// Eq. 1: visual tokens attend over text tokens; heads concatenated, output
// projected, residual added. Output shape equals the visual input shape.
Tensor mca_fuse(Tape& tape, const Tensor& visual, const Tensor& text, const AttentionConfig& cfg,
                const MhaParams& params);

// Eq. 2: q_s = Softmax(q_q k_q^T / sqrt(d_head)) v_q over the query tokens.
// scores_out receives the raw affinity map A^Q ([heads, T, T]) when non-null.
Tensor self_affinity(Tape& tape, const Tensor& query_feats, const AttentionConfig& cfg,
                     const MhaParams& params, Tensor* scores_out = nullptr);

// Eq. 3: query tokens attend over support tokens; q_s is used as the query
// without further projection.
Tensor cross_affinity(Tape& tape, const Tensor& q_s, const Tensor& support_feats,
                      const AttentionConfig& cfg, const CrossAffinityParams& params,
                      Tensor* scores_out = nullptr);

struct CmaOptions {
    bool self_on = true;
    bool cross_on = true;
    bool mask_support = true;
    static CmaOptions from(const RunConfig& cfg);
};

// Full module: per pyramid level, fuse each set with its own text (Eq. 1),
// run self-affinity on query tokens (Eq. 2) and cross-affinity from support
// to query (Eq. 3), then reshape back to per-frame maps of width d_model.
// support_masks are full-resolution {0,1} masks, one per support frame; they
// gate support tokens when mask_support is on.
std::vector<MultiScaleFeatures> cma_forward(Tape& tape,
                                            const std::vector<MultiScaleFeatures>& support,
                                            const TextFeatures& support_text,
                                            const std::vector<MultiScaleFeatures>& query,
                                            const TextFeatures& query_text,
                                            const std::vector<Tensor>& support_masks,
                                            const AttentionConfig& cfg, const CmaOptions& opt,
                                            const CmaParams& params);

// [C, h, w] -> [h*w, C] token matrix and back.
Tensor map_to_tokens(Tape& tape, const Tensor& map);
Tensor tokens_to_map(Tape& tape, const Tensor& tokens, size_t h, size_t w);

}  // namespace cmaseg
