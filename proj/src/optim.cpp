#include "cmaseg/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace cmaseg {

AdamW::AdamW(ParamStore& store, const RunConfig& cfg)
    : store_(store),
      lr_(cfg.lr),
      weight_decay_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      clip_norm_(cfg.clip_norm) {
    m_.resize(store.entries().size());
    v_.resize(store.entries().size());
    for (size_t i = 0; i < store.entries().size(); ++i) {
        if (!store.entries()[i].trainable) continue;
        m_[i] = Tensor::zeros(store.entries()[i].tensor.shape());
        v_[i] = Tensor::zeros(store.entries()[i].tensor.shape());
    }
}

void AdamW::step() {
    auto& entries = store_.entries();
    // global-norm clip over trainable gradients
    if (clip_norm_ > 0.0) {
        scalar sq = 0.0;
        for (size_t i = 0; i < entries.size(); ++i) {
            if (!entries[i].trainable || !entries[i].tensor.grad_allocated()) continue;
            const scalar* g = entries[i].tensor.grad();
            for (size_t j = 0; j < entries[i].tensor.size(); ++j) sq += g[j] * g[j];
        }
        if (!std::isfinite(sq)) {
            for (const auto& e : entries) {
                if (!e.trainable || !e.tensor.grad_allocated()) continue;
                for (size_t j = 0; j < e.tensor.size(); ++j)
                    if (!std::isfinite(e.tensor.grad()[j]))
                        fail(ErrorCode::numeric, "non-finite gradient for parameter '" + e.name +
                                                     "' at optimizer step " +
                                                     std::to_string(step_ + 1));
            }
        }
        const scalar norm = std::sqrt(sq);
        if (norm > clip_norm_) {
            const scalar scale = clip_norm_ / norm;
            for (auto& e : entries) {
                if (!e.trainable || !e.tensor.grad_allocated()) continue;
                scalar* g = e.tensor.grad();
                for (size_t j = 0; j < e.tensor.size(); ++j) g[j] *= scale;
            }
        }
    }

    ++step_;
    const scalar bc1 = 1.0 - std::pow(beta1_, static_cast<scalar>(step_));
    const scalar bc2 = 1.0 - std::pow(beta2_, static_cast<scalar>(step_));
    for (size_t i = 0; i < entries.size(); ++i) {
        auto& e = entries[i];
        if (!e.trainable) continue;
        scalar* p = e.tensor.data();
        scalar* m = m_[i].data();
        scalar* v = v_[i].data();
        const bool has_grad = e.tensor.grad_allocated();
        const scalar* g = has_grad ? e.tensor.grad() : nullptr;
        for (size_t j = 0; j < e.tensor.size(); ++j) {
            const scalar gj = g ? g[j] : 0.0;
            if (!std::isfinite(gj))
                fail(ErrorCode::numeric, "non-finite gradient for parameter '" + e.name +
                                             "' at optimizer step " + std::to_string(step_));
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            const scalar mhat = m[j] / bc1;
            const scalar vhat = v[j] / bc2;
            p[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[j]);
        }
    }
}

std::vector<std::pair<std::string, Tensor>> AdamW::state_entries() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("opt.step", Tensor::scalar_value(static_cast<scalar>(step_)));
    const auto& entries = store_.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        out.emplace_back("opt.m." + entries[i].name, m_[i]);
        out.emplace_back("opt.v." + entries[i].name, v_[i]);
    }
    return out;
}

void AdamW::load_state(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::unordered_map<std::string, const Tensor*> lookup;
    for (const auto& [name, tensor] : named) lookup[name] = &tensor;
    auto find = [&](const std::string& name) -> const Tensor& {
        auto it = lookup.find(name);
        if (it == lookup.end())
            fail(ErrorCode::io, "checkpoint has no optimizer state '" + name + "'");
        return *it->second;
    };
    step_ = static_cast<size_t>(find("opt.step").item());
    const auto& entries = store_.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        m_[i].copy_values_from(find("opt.m." + entries[i].name));
        v_[i].copy_values_from(find("opt.v." + entries[i].name));
    }
}

}  // namespace cmaseg
