#pragma once

#include <iosfwd>

#include "cmaseg/episodes.hpp"
#include "cmaseg/optim.hpp"

namespace cmaseg {

struct TrainOptions {
    std::string out_checkpoint;
    std::string resume;      // checkpoint to continue from ("" = fresh start)
    std::ostream* log = nullptr;  // step\tepisode_id\ttotal\tcls\tkernel\tmatched_slot
};

struct TrainResult {
    size_t steps_run = 0;
    double last_loss = 0.0;
};

// Episodic training: sample -> forward -> match_and_loss -> backward ->
// AdamW step, one episode per step. The checkpoint holds the parameters plus
// "opt.*" optimizer state and the sampler RNG, so a resumed run reproduces
// the uninterrupted run bit for bit at thread count 1.
TrainResult train(Model& model, const Manifest& manifest, const FoldSpec& fold, Split split,
                  const Vocabulary& vocab, const TrainOptions& options);

// Writes parameters only (no optimizer state); used for ad-hoc snapshots.
void save_model_checkpoint(const Model& model, const std::string& path);
// Loads parameters from a checkpoint (ignores "opt.*" records).
void load_model_checkpoint(Model& model, const std::string& path);

// RNG state <-> tensor of 4 bit-cast doubles, stored as "opt.rng".
Tensor rng_state_tensor(const Rng& rng);
void set_rng_state(Rng& rng, const Tensor& t);

}  // namespace cmaseg
