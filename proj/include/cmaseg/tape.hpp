#pragma once

#include <functional>
#include <vector>

#include "cmaseg/tensor.hpp"

namespace cmaseg {

// Reverse-mode tape. Ops executed through a recording tape append a backward
// closure; backward() replays them once in reverse execution order. A tape
// constructed with recording=false runs the same forward kernels without
// building a graph (inference mode).
//
// Elementwise ops require identical shapes; the only implicit broadcasting is
// over batch dimensions in matmul and the bias in linear.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t op_count() const { return ops_.size(); }

    // Runs closures in reverse order, seeding d(loss)/d(loss) = 1.
    // loss must be a single-element tensor. Calling twice is an error.
    void backward(const Tensor& loss);
    void clear();

    // --- elementwise ---
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    Tensor add_scalar(const Tensor& a, scalar c);
    Tensor mul_scalar(const Tensor& a, scalar c);
    Tensor relu(const Tensor& x);
    Tensor sigmoid(const Tensor& x);
    // log(max(x, floor)); gradient is 0 where clamped
    Tensor log_clamped(const Tensor& x, scalar floor = 1e-12);
    // x^p for x >= 0; p == 0 gives ones with zero gradient
    Tensor pow_scalar(const Tensor& x, scalar p);
    // multiplies row r of x[R, C] by s[r]
    Tensor scale_rows(const Tensor& x, const Tensor& s);

    // --- linear algebra ---
    // a[..., m, k] * b[..., k, n]; batch dims broadcast (equal or 1).
    Tensor matmul(const Tensor& a, const Tensor& b);
    // x[..., d_in] * W[d_in, d_out] + b[d_out]; pass undefined b to skip bias.
    Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

    // --- shape ---
    Tensor reshape(const Tensor& x, Shape shape);
    Tensor transpose(const Tensor& x, size_t axis_a, size_t axis_b);
    Tensor concat(const std::vector<Tensor>& parts, size_t axis);
    Tensor stack0(const std::vector<Tensor>& parts);  // new leading axis
    Tensor slice0(const Tensor& x, size_t index);     // x[index, ...]
    Tensor slice_rows(const Tensor& x, size_t from, size_t to);  // x[from:to, ...]

    // --- reductions / normalization ---
    Tensor reduce_sum(const Tensor& x);   // rank-0
    Tensor reduce_mean(const Tensor& x);  // rank-0
    Tensor softmax(const Tensor& x, size_t axis);
    // normalizes the last axis; gamma/beta have extent = last axis
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, scalar eps = 1e-5);

    // --- nn ---
    // x[C_in, H, W], k[C_out, C_in, kh, kw], odd kernel extents
    Tensor conv2d(const Tensor& x, const Tensor& kernel, size_t stride, size_t padding);
    Tensor add_channel_bias(const Tensor& x, const Tensor& bias);  // x[C, H, W] + bias[C]
    // align-corners=false bilinear sampling of x[C, H, W] to [C, out_h, out_w]
    Tensor bilinear_resize(const Tensor& x, size_t out_h, size_t out_w);
    // row gather: table[V, d] -> [ids.size(), d]; ids are not differentiated
    Tensor embed(const Tensor& table, const std::vector<int>& ids);

private:
    friend class TapeOpGuard;
    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
    bool should_record(std::initializer_list<const Tensor*> inputs) const;

    std::vector<std::function<void()>> ops_;
    bool recording_ = true;
    bool consumed_ = false;
};

}  // namespace cmaseg
