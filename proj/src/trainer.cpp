#include "cmaseg/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cmaseg/checkpoint.hpp"
#include "cmaseg/losses.hpp"

namespace cmaseg {

Tensor rng_state_tensor(const Rng& rng) {
    Tensor t = Tensor::uninitialized({4});
    const auto s = rng.state();
    for (size_t i = 0; i < 4; ++i) t.data()[i] = std::bit_cast<scalar>(s[i]);
    return t;
}

void set_rng_state(Rng& rng, const Tensor& t) {
    if (t.rank() != 1 || t.extent(0) != 4)
        fail(ErrorCode::io, "checkpoint RNG state must hold 4 words");
    std::array<uint64_t, 4> s{};
    for (size_t i = 0; i < 4; ++i) s[i] = std::bit_cast<uint64_t>(t.data()[i]);
    rng.set_state(s);
}

void save_model_checkpoint(const Model& model, const std::string& path) {
    save_checkpoint(path, model.params().named_values());
}

void load_model_checkpoint(Model& model, const std::string& path) {
    model.params().load_values(load_checkpoint(path));
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void save_training_checkpoint(const Model& model, const AdamW& opt, const Rng& sampler_rng,
                              const std::string& path) {
    auto entries = model.params().named_values();
    for (auto& e : opt.state_entries()) entries.push_back(std::move(e));
    entries.emplace_back("opt.rng", rng_state_tensor(sampler_rng));
    save_checkpoint(path, entries);
}

}  // namespace

TrainResult train(Model& model, const Manifest& manifest, const FoldSpec& fold, Split split,
                  const Vocabulary& vocab, const TrainOptions& options) {
    const RunConfig& cfg = model.config();
    AdamW optimizer(model.params(), cfg);
    Rng sampler = Rng::derive(cfg.seed, 2);

    if (!options.resume.empty()) {
        auto entries = load_checkpoint(options.resume);
        model.params().load_values(entries);
        optimizer.load_state(entries);
        bool have_rng = false;
        for (const auto& [name, tensor] : entries) {
            if (name == "opt.rng") {
                set_rng_state(sampler, tensor);
                have_rng = true;
            }
        }
        if (!have_rng)
            fail(ErrorCode::io, "checkpoint '" + options.resume +
                                    "' has no sampler state; cannot resume training");
    }

    SampleOptions sample_opts = SampleOptions::from(cfg);
    TrainResult result;
    LossWeights weights = LossWeights::from(cfg);

    for (size_t step = optimizer.step_count() + 1; step <= cfg.steps; ++step) {
        EpisodeRef ref = sample_episode(manifest, fold, split, sample_opts, sampler);
        EpisodeTensors episode = load_episode(manifest, ref, cfg, vocab, true);

        model.params().zero_grads();
        Tape tape;
        PredictionSequence pred = model.forward(tape, episode);
        GroundTruthSequence gt = make_ground_truth(episode.query_masks, pred.masks.extent(2),
                                                   pred.masks.extent(3));
        EpisodeLoss loss = match_and_loss(tape, pred, gt, weights);
        if (!std::isfinite(loss.total.item()))
            fail(ErrorCode::numeric,
                 "non-finite loss at step " + std::to_string(step) + " (episode " + ref.id + ")");
        tape.backward(loss.total);
        optimizer.step();

        result.steps_run++;
        result.last_loss = loss.total.item();
        if (options.log) {
            (*options.log) << step << "\t" << ref.id << "\t" << fmt(loss.total.item()) << "\t"
                           << fmt(loss.cls.item()) << "\t" << fmt(loss.kernel.item()) << "\t"
                           << loss.matched_slot << "\n";
        }
    }

    if (!options.out_checkpoint.empty())
        save_training_checkpoint(model, optimizer, sampler, options.out_checkpoint);
    return result;
}

}  // namespace cmaseg
