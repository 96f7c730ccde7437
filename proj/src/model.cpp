#include "cmaseg/model.hpp"

namespace cmaseg {

Model::Model(const RunConfig& cfg, size_t vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size == 0) fail(ErrorCode::config, "Model: empty vocabulary");
    Rng rng = Rng::derive(cfg.seed, 1);
    vision_ = make_vision_encoder(store_, cfg_, rng);
    text_ = make_text_encoder(store_, cfg_, vocab_size, rng);
    cma_ = make_cma_params(store_, cfg_, vision_.widths, rng);
    maskgen_ = make_maskgen_params(store_, cfg_, rng);
    if (cfg_.freeze_encoders) store_.set_trainable_prefix("encoder.", false);
}

PredictionSequence Model::forward(Tape& tape, const EpisodeTensors& episode) const {
    if (episode.support_frames.empty() || episode.query_frames.empty())
        fail(ErrorCode::input, "forward: episode needs support and query frames");
    if (episode.support_masks.size() != episode.support_frames.size())
        fail(ErrorCode::input, "forward: one mask per support frame required");

    std::vector<MultiScaleFeatures> support, query;
    support.reserve(episode.support_frames.size());
    query.reserve(episode.query_frames.size());
    for (size_t i = 0; i < episode.support_frames.size(); ++i)
        support.push_back(encode_frame(tape, episode.support_frames[i], vision_, i));
    for (size_t i = 0; i < episode.query_frames.size(); ++i)
        query.push_back(encode_frame(tape, episode.query_frames[i], vision_, i));

    TextFeatures support_text =
        encode_expression(tape, episode.support_tokens, text_, cfg_.max_text_len);
    TextFeatures query_text =
        encode_expression(tape, episode.query_tokens, text_, cfg_.max_text_len);

    const AttentionConfig acfg = AttentionConfig::from(cfg_);
    std::vector<MultiScaleFeatures> enhanced =
        cma_forward(tape, support, support_text, query, query_text, episode.support_masks, acfg,
                    CmaOptions::from(cfg_), cma_);

    std::vector<EncodedFrame> encoded;
    encoded.reserve(enhanced.size());
    for (const auto& frame : enhanced)
        encoded.push_back(encode_features(tape, frame, cfg_, maskgen_));

    Tensor embeddings = decode_instances(tape, encoded, cfg_, maskgen_);
    Tensor scores = class_head(tape, embeddings, maskgen_);
    Tensor kernels = kernel_head(tape, embeddings, cfg_, maskgen_);

    Tensor query_text_wide =
        tape.linear(query_text.tokens, cma_.text_adapter_w, cma_.text_adapter_b);
    Tensor f_seg = fpn_decode(tape, enhanced, encoded, query_text_wide, cfg_, maskgen_);

    PredictionSequence pred;
    pred.scores = scores;
    pred.masks = dynamic_conv_all(tape, f_seg, kernels);
    return pred;
}

}  // namespace cmaseg
