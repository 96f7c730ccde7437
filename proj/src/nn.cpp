#include "cmaseg/nn.hpp"

#include <cmath>

namespace cmaseg {

Tensor ParamStore::create(const std::string& name, Shape shape, Init init, Rng& rng,
                          bool trainable) {
    if (index_.count(name)) fail(ErrorCode::config, "parameter '" + name + "' already exists");
    Tensor t = Tensor::uninitialized(shape);
    switch (init) {
        case Init::zeros:
            for (size_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0;
            break;
        case Init::ones:
            for (size_t i = 0; i < t.size(); ++i) t.data()[i] = 1.0;
            break;
        case Init::fan_in: {
            size_t fan = 1;
            if (shape.size() >= 2) {
                // weight [d_in, d_out] or conv [c_out, c_in, kh, kw]
                fan = shape.size() == 2 ? shape[0] : shape_numel(shape) / shape[0];
            } else if (!shape.empty()) {
                fan = shape[0];
            }
            const scalar bound = 1.0 / std::sqrt(static_cast<scalar>(fan));
            for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
            break;
        }
        case Init::normal_small:
            for (size_t i = 0; i < t.size(); ++i) t.data()[i] = 0.02 * rng.normal();
            break;
    }
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::config, "unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::config, "unknown parameter '" + name + "'");
    return entries_[it->second].trainable;
}

size_t ParamStore::total_elements() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& e : entries_)
        if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamStore::load_values(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::unordered_map<std::string, const Tensor*> lookup;
    for (const auto& [name, tensor] : named) lookup[name] = &tensor;
    for (auto& e : entries_) {
        auto it = lookup.find(e.name);
        if (it == lookup.end())
            fail(ErrorCode::io, "checkpoint is missing parameter '" + e.name + "'");
        if (!same_shape(it->second->shape(), e.tensor.shape()))
            fail(ErrorCode::io, "checkpoint parameter '" + e.name + "' has shape " +
                                    shape_str(it->second->shape()) + ", expected " +
                                    shape_str(e.tensor.shape()));
        e.tensor.copy_values_from(*it->second);
    }
}

std::vector<std::pair<std::string, Tensor>> ParamStore::named_values() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.name, e.tensor);
    return out;
}

MhaParams make_mha_params(ParamStore& store, const std::string& prefix, size_t d_model, Rng& rng,
                          bool with_query_proj, bool with_out_proj) {
    MhaParams p;
    if (with_query_proj) {
        p.wq = store.create(prefix + ".wq", {d_model, d_model}, Init::fan_in, rng);
        p.bq = store.create(prefix + ".bq", {d_model}, Init::zeros, rng);
    }
    p.wk = store.create(prefix + ".wk", {d_model, d_model}, Init::fan_in, rng);
    p.bk = store.create(prefix + ".bk", {d_model}, Init::zeros, rng);
    p.wv = store.create(prefix + ".wv", {d_model, d_model}, Init::fan_in, rng);
    p.bv = store.create(prefix + ".bv", {d_model}, Init::zeros, rng);
    if (with_out_proj) {
        p.wo = store.create(prefix + ".wo", {d_model, d_model}, Init::fan_in, rng);
        p.bo = store.create(prefix + ".bo", {d_model}, Init::zeros, rng);
    }
    return p;
}

Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            size_t n_heads, Tensor* scores_out) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        fail(ErrorCode::dim, "attention: expected 2-D token matrices");
    const size_t d_model = q.extent(1);
    if (k.extent(1) != d_model || v.extent(1) != d_model)
        fail(ErrorCode::dim, "attention: width mismatch between q/k/v");
    if (k.extent(0) != v.extent(0))
        fail(ErrorCode::dim, "attention: key/value token counts differ");
    if (n_heads == 0 || d_model % n_heads != 0)
        fail(ErrorCode::config, "attention: d_model " + std::to_string(d_model) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
    const size_t t_q = q.extent(0), t_kv = k.extent(0), d_head = d_model / n_heads;

    // [T, d] -> [heads, T, d_head]
    auto split = [&](const Tensor& x, size_t t) {
        return tape.transpose(tape.reshape(x, {t, n_heads, d_head}), 0, 1);
    };
    // scaling q up front keeps the [heads, T, T] score tensor as a single
    // matmul output instead of a second full-size elementwise pass
    Tensor qh = tape.mul_scalar(split(q, t_q), 1.0 / std::sqrt(static_cast<scalar>(d_head)));
    Tensor kh = split(k, t_kv);
    Tensor vh = split(v, t_kv);

    Tensor scores = tape.matmul(qh, tape.transpose(kh, 1, 2));
    if (scores_out) *scores_out = scores;
    Tensor weights = tape.softmax(scores, 2);
    Tensor ctx = tape.matmul(weights, vh);  // [heads, T_q, d_head]
    return tape.reshape(tape.transpose(ctx, 0, 1), {t_q, d_model});
}

Tensor sinusoidal_positions_1d(size_t length, size_t d_model) {
    Tensor out = Tensor::zeros({length, d_model});
    for (size_t pos = 0; pos < length; ++pos) {
        for (size_t i = 0; i * 2 < d_model; ++i) {
            const scalar freq = std::pow(10000.0, -2.0 * static_cast<scalar>(i) /
                                                       static_cast<scalar>(d_model));
            out.data()[pos * d_model + 2 * i] = std::sin(pos * freq);
            if (2 * i + 1 < d_model) out.data()[pos * d_model + 2 * i + 1] = std::cos(pos * freq);
        }
    }
    return out;
}

Tensor sinusoidal_positions_2d(size_t h, size_t w, size_t d_model) {
    // first half encodes y, second half encodes x
    const size_t dh = d_model / 2;
    Tensor ys = sinusoidal_positions_1d(h, dh);
    Tensor xs = sinusoidal_positions_1d(w, d_model - dh);
    Tensor out = Tensor::zeros({h * w, d_model});
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            scalar* row = out.data() + (y * w + x) * d_model;
            for (size_t i = 0; i < dh; ++i) row[i] = ys.data()[y * dh + i];
            for (size_t i = 0; i < d_model - dh; ++i)
                row[dh + i] = xs.data()[x * (d_model - dh) + i];
        }
    }
    return out;
}

}  // namespace cmaseg
