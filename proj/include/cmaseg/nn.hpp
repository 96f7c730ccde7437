#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cmaseg/tape.hpp"

namespace cmaseg {

enum class Init {
    zeros,
    ones,
    fan_in,          // U(-1/sqrt(fan), 1/sqrt(fan)); fan inferred from shape
    normal_small,    // N(0, 0.02)
};

// Named, ordered parameter registry. Creation order is the checkpoint and
// optimizer-state order, so model construction must be deterministic.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable = true;
    };

    Tensor create(const std::string& name, Shape shape, Init init, Rng& rng, bool trainable = true);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    bool trainable(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t total_elements() const;

    void set_trainable_prefix(const std::string& prefix, bool trainable);
    void zero_grads();

    // Strict by-name load: every store entry must be present with an equal
    // shape. Extra names in `named` are ignored (optimizer state lives in the
    // same file under "opt.").
    void load_values(const std::vector<std::pair<std::string, Tensor>>& named);
    std::vector<std::pair<std::string, Tensor>> named_values() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Multi-head attention projection weights. wo/bo may be undefined for blocks
// that run without an output projection.
struct MhaParams {
    Tensor wq, bq;
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;
};

MhaParams make_mha_params(ParamStore& store, const std::string& prefix, size_t d_model, Rng& rng,
                          bool with_query_proj = true, bool with_out_proj = true);

// Scaled dot-product attention over pre-projected q/k/v of width d_model,
// split into n_heads. If scores_out is non-null it receives the raw
// pre-softmax affinity map of shape [n_heads, T_q, T_kv].
Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            size_t n_heads, Tensor* scores_out = nullptr);

// Sinusoidal position encodings (constant tensors).
Tensor sinusoidal_positions_1d(size_t length, size_t d_model);
Tensor sinusoidal_positions_2d(size_t h, size_t w, size_t d_model);  // [h*w, d_model]

}  // namespace cmaseg
