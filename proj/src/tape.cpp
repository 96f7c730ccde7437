#include "cmaseg/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cmaseg {

using EMat = Eigen::Matrix<scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;
using ArrMap = Eigen::Map<Eigen::Array<scalar, Eigen::Dynamic, 1>>;
using CArrMap = Eigen::Map<const Eigen::Array<scalar, Eigen::Dynamic, 1>>;

using ImplPtr = std::shared_ptr<Tensor::Impl>;

namespace {

scalar* ensure_grad(const ImplPtr& t) {
    if (!t->grad) {
        t->grad = Tensor::allocate(t->numel);
        std::memset(t->grad.get(), 0, t->numel * sizeof(scalar));
    }
    return t->grad.get();
}

bool has_out_grad(const ImplPtr& t) { return t->grad != nullptr; }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape(), b.shape()))
        fail(ErrorCode::dim, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
}

}  // namespace

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void Tape::backward(const Tensor& loss) {
    if (!recording_) fail(ErrorCode::input, "backward: tape is not recording");
    if (consumed_) fail(ErrorCode::input, "backward: tape already consumed; re-run forward first");
    if (loss.size() != 1) fail(ErrorCode::dim, "backward: loss must be a single element");
    ensure_grad(loss.impl())[0] += 1.0;
    for (size_t i = ops_.size(); i-- > 0;) ops_[i]();
    consumed_ = true;
}

void Tape::clear() {
    ops_.clear();
    consumed_ = false;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) + CArrMap(b.data(), n);
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            if (ai->requires_grad) ArrMap(ensure_grad(ai), n) += CArrMap(g, n);
            if (bi->requires_grad) ArrMap(ensure_grad(bi), n) += CArrMap(g, n);
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) - CArrMap(b.data(), n);
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            if (ai->requires_grad) ArrMap(ensure_grad(ai), n) += CArrMap(g, n);
            if (bi->requires_grad) ArrMap(ensure_grad(bi), n) -= CArrMap(g, n);
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) * CArrMap(b.data(), n);
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            if (ai->requires_grad)
                ArrMap(ensure_grad(ai), n) += CArrMap(g, n) * CArrMap(bi->values.get(), n);
            if (bi->requires_grad)
                ArrMap(ensure_grad(bi), n) += CArrMap(g, n) * CArrMap(ai->values.get(), n);
        });
    }
    return out;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) / CArrMap(b.data(), n);
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            const scalar* av = ai->values.get();
            const scalar* bv = bi->values.get();
            if (ai->requires_grad) ArrMap(ensure_grad(ai), n) += CArrMap(g, n) / CArrMap(bv, n);
            if (bi->requires_grad)
                ArrMap(ensure_grad(bi), n) -=
                    CArrMap(g, n) * CArrMap(av, n) / (CArrMap(bv, n) * CArrMap(bv, n));
        });
    }
    return out;
}

Tensor Tape::add_scalar(const Tensor& a, scalar c) {
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) + c;
    if (should_record({&a})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi)) return;
            if (ai->requires_grad) ArrMap(ensure_grad(ai), n) += CArrMap(oi->grad.get(), n);
        });
    }
    return out;
}

Tensor Tape::mul_scalar(const Tensor& a, scalar c) {
    Tensor out = Tensor::uninitialized(a.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(a.data(), n) * c;
    if (should_record({&a})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), oi = out.impl(), n, c] {
            if (!has_out_grad(oi)) return;
            if (ai->requires_grad) ArrMap(ensure_grad(ai), n) += CArrMap(oi->grad.get(), n) * c;
        });
    }
    return out;
}

Tensor Tape::relu(const Tensor& x) {
    Tensor out = Tensor::uninitialized(x.shape());
    const size_t n = out.size();
    ArrMap(out.data(), n) = CArrMap(x.data(), n).max(0.0);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            const scalar* g = oi->grad.get();
            const scalar* xv = xi->values.get();
            scalar* xg = ensure_grad(xi);
            for (size_t i = 0; i < n; ++i)
                if (xv[i] > 0.0) xg[i] += g[i];
        });
    }
    return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
    Tensor out = Tensor::uninitialized(x.shape());
    const size_t n = out.size();
    const scalar* xv = x.data();
    scalar* ov = out.data();
    for (size_t i = 0; i < n; ++i) {
        const scalar v = xv[i];
        if (v >= 0.0) {
            ov[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const scalar e = std::exp(v);
            ov[i] = e / (1.0 + e);
        }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), n] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            const scalar* g = oi->grad.get();
            const scalar* y = oi->values.get();
            scalar* xg = ensure_grad(xi);
            for (size_t i = 0; i < n; ++i) xg[i] += g[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor Tape::log_clamped(const Tensor& x, scalar floor) {
    Tensor out = Tensor::uninitialized(x.shape());
    const size_t n = out.size();
    const scalar* xv = x.data();
    scalar* ov = out.data();
    for (size_t i = 0; i < n; ++i) ov[i] = std::log(std::max(xv[i], floor));
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), n, floor] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            const scalar* g = oi->grad.get();
            const scalar* xv = xi->values.get();
            scalar* xg = ensure_grad(xi);
            for (size_t i = 0; i < n; ++i)
                if (xv[i] >= floor) xg[i] += g[i] / xv[i];
        });
    }
    return out;
}

Tensor Tape::pow_scalar(const Tensor& x, scalar p) {
    Tensor out = Tensor::uninitialized(x.shape());
    const size_t n = out.size();
    const scalar* xv = x.data();
    scalar* ov = out.data();
    if (p == 0.0) {
        for (size_t i = 0; i < n; ++i) ov[i] = 1.0;
    } else {
        for (size_t i = 0; i < n; ++i) ov[i] = std::pow(xv[i], p);
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), n, p] {
            if (!has_out_grad(oi) || !xi->requires_grad || p == 0.0) return;
            const scalar* g = oi->grad.get();
            const scalar* xv = xi->values.get();
            scalar* xg = ensure_grad(xi);
            for (size_t i = 0; i < n; ++i) {
                if (xv[i] == 0.0) {
                    if (p == 1.0) xg[i] += g[i];
                    continue;
                }
                xg[i] += g[i] * p * std::pow(xv[i], p - 1.0);
            }
        });
    }
    return out;
}

Tensor Tape::scale_rows(const Tensor& x, const Tensor& s) {
    if (x.rank() != 2 || s.rank() != 1 || x.extent(0) != s.extent(0))
        fail(ErrorCode::dim, "scale_rows: expected x[R, C] and s[R], got " + shape_str(x.shape()) +
                                 " and " + shape_str(s.shape()));
    const size_t rows = x.extent(0), cols = x.extent(1);
    Tensor out = Tensor::uninitialized(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const scalar sv = s.data()[r];
        ArrMap(out.data() + r * cols, cols) = CArrMap(x.data() + r * cols, cols) * sv;
    }
    if (should_record({&x, &s})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), si = s.impl(), oi = out.impl(), rows, cols] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            if (xi->requires_grad) {
                scalar* xg = ensure_grad(xi);
                for (size_t r = 0; r < rows; ++r)
                    ArrMap(xg + r * cols, cols) +=
                        CArrMap(g + r * cols, cols) * si->values[r];
            }
            if (si->requires_grad) {
                scalar* sg = ensure_grad(si);
                for (size_t r = 0; r < rows; ++r)
                    sg[r] += (CArrMap(g + r * cols, cols) *
                              CArrMap(xi->values.get() + r * cols, cols))
                                 .sum();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

namespace {

struct BatchPlan {
    Shape out_shape;        // full output shape (batch + [m, n])
    size_t batches = 1;
    size_t m = 0, k = 0, n = 0;
    std::vector<size_t> out_dims;      // batch dims only
    std::vector<size_t> a_strides;     // in units of matrices, 0 where broadcast
    std::vector<size_t> b_strides;
    size_t a_index(size_t flat) const { return mapped(flat, a_strides); }
    size_t b_index(size_t flat) const { return mapped(flat, b_strides); }

private:
    size_t mapped(size_t flat, const std::vector<size_t>& strides) const {
        size_t idx = 0;
        for (size_t d = out_dims.size(); d-- > 0;) {
            const size_t coord = flat % out_dims[d];
            flat /= out_dims[d];
            idx += coord * strides[d];
        }
        return idx;
    }
};

BatchPlan make_batch_plan(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        fail(ErrorCode::dim, "matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                                 " and " + shape_str(b.shape()));
    BatchPlan plan;
    plan.m = a.extent(a.rank() - 2);
    plan.k = a.extent(a.rank() - 1);
    plan.n = b.extent(b.rank() - 1);
    if (b.extent(b.rank() - 2) != plan.k)
        fail(ErrorCode::dim, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    const size_t ra = a.rank() - 2, rb = b.rank() - 2;
    const size_t ro = std::max(ra, rb);
    plan.out_dims.assign(ro, 1);
    std::vector<size_t> a_dims(ro, 1), b_dims(ro, 1);
    for (size_t i = 0; i < ra; ++i) a_dims[ro - ra + i] = a.extent(i);
    for (size_t i = 0; i < rb; ++i) b_dims[ro - rb + i] = b.extent(i);
    for (size_t i = 0; i < ro; ++i) {
        if (a_dims[i] != b_dims[i] && a_dims[i] != 1 && b_dims[i] != 1)
            fail(ErrorCode::dim, "matmul: batch extents not broadcastable, " +
                                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        plan.out_dims[i] = std::max(a_dims[i], b_dims[i]);
        plan.batches *= plan.out_dims[i];
    }
    plan.a_strides.assign(ro, 0);
    plan.b_strides.assign(ro, 0);
    size_t sa = 1, sb = 1;
    for (size_t i = ro; i-- > 0;) {
        plan.a_strides[i] = (a_dims[i] == 1) ? 0 : sa;
        plan.b_strides[i] = (b_dims[i] == 1) ? 0 : sb;
        sa *= a_dims[i];
        sb *= b_dims[i];
    }
    plan.out_shape = plan.out_dims;
    plan.out_shape.push_back(plan.m);
    plan.out_shape.push_back(plan.n);
    return plan;
}

}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    BatchPlan plan = make_batch_plan(a, b);
    Tensor out = Tensor::uninitialized(plan.out_shape);
    const size_t msz_a = plan.m * plan.k, msz_b = plan.k * plan.n, msz_o = plan.m * plan.n;
    for (size_t bi = 0; bi < plan.batches; ++bi) {
        CMatMap A(a.data() + plan.a_index(bi) * msz_a, plan.m, plan.k);
        CMatMap B(b.data() + plan.b_index(bi) * msz_b, plan.k, plan.n);
        MatMap C(out.data() + bi * msz_o, plan.m, plan.n);
        C.noalias() = A * B;
    }
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record([ai = a.impl(), bimpl = b.impl(), oi = out.impl(), plan, msz_a, msz_b, msz_o] {
            if (!has_out_grad(oi)) return;
            scalar* ag = ai->requires_grad ? ensure_grad(ai) : nullptr;
            scalar* bg = bimpl->requires_grad ? ensure_grad(bimpl) : nullptr;
            for (size_t bi = 0; bi < plan.batches; ++bi) {
                CMatMap G(oi->grad.get() + bi * msz_o, plan.m, plan.n);
                if (ag) {
                    CMatMap B(bimpl->values.get() + plan.b_index(bi) * msz_b, plan.k, plan.n);
                    MatMap dA(ag + plan.a_index(bi) * msz_a, plan.m, plan.k);
                    dA.noalias() += G * B.transpose();
                }
                if (bg) {
                    CMatMap A(ai->values.get() + plan.a_index(bi) * msz_a, plan.m, plan.k);
                    MatMap dB(bg + plan.b_index(bi) * msz_b, plan.k, plan.n);
                    dB.noalias() += A.transpose() * G;
                }
            }
        });
    }
    return out;
}

Tensor Tape::linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (x.rank() < 1 || W.rank() != 2)
        fail(ErrorCode::dim, "linear: expected x[..., d_in] and W[d_in, d_out]");
    const size_t d_in = W.extent(0), d_out = W.extent(1);
    if (x.extent(x.rank() - 1) != d_in)
        fail(ErrorCode::dim, "linear: x last extent " + std::to_string(x.extent(x.rank() - 1)) +
                                 " != W d_in " + std::to_string(d_in));
    if (b.defined() && (b.rank() != 1 || b.extent(0) != d_out))
        fail(ErrorCode::dim, "linear: bias shape mismatch " + shape_str(b.shape()));
    const size_t rows = x.size() / d_in;
    Shape out_shape = x.shape();
    out_shape.back() = d_out;
    Tensor out = Tensor::uninitialized(out_shape);
    {
        CMatMap X(x.data(), rows, d_in);
        CMatMap Wm(W.data(), d_in, d_out);
        MatMap O(out.data(), rows, d_out);
        O.noalias() = X * Wm;
        if (b.defined()) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), d_out);
    }
    const Tensor* bias_in = b.defined() ? &b : nullptr;
    bool rec = bias_in ? should_record({&x, &W, bias_in}) : should_record({&x, &W});
    if (rec) {
        out.set_requires_grad(true);
        ImplPtr bi = b.defined() ? b.impl() : nullptr;
        record([xi = x.impl(), wi = W.impl(), bi, oi = out.impl(), rows, d_in, d_out] {
            if (!has_out_grad(oi)) return;
            CMatMap G(oi->grad.get(), rows, d_out);
            if (xi->requires_grad) {
                CMatMap Wm(wi->values.get(), d_in, d_out);
                MatMap dX(ensure_grad(xi), rows, d_in);
                dX.noalias() += G * Wm.transpose();
            }
            if (wi->requires_grad) {
                CMatMap X(xi->values.get(), rows, d_in);
                MatMap dW(ensure_grad(wi), d_in, d_out);
                dW.noalias() += X.transpose() * G;
            }
            if (bi && bi->requires_grad) {
                Eigen::Map<Eigen::RowVectorXd> dB(ensure_grad(bi), d_out);
                dB += G.colwise().sum();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor Tape::reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        fail(ErrorCode::dim, "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                 shape_str(shape) + " (element counts differ)");
    Tensor out = Tensor::uninitialized(std::move(shape));
    std::memcpy(out.data(), x.data(), x.size() * sizeof(scalar));
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl()] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            ArrMap(ensure_grad(xi), xi->numel) += CArrMap(oi->grad.get(), oi->numel);
        });
    }
    return out;
}

namespace {

// Copies src into dst with axes a and b swapped; shapes are dst-side.
void transpose_copy(const scalar* src, scalar* dst, const Shape& src_shape, size_t a, size_t b,
                    bool accumulate) {
    Shape dst_shape = src_shape;
    std::swap(dst_shape[a], dst_shape[b]);
    auto s_strides = row_major_strides(src_shape);
    auto d_strides = row_major_strides(dst_shape);
    // iterate source in order, scatter to destination
    const size_t rank = src_shape.size();
    std::vector<size_t> idx(rank, 0);
    const size_t total = shape_numel(src_shape);
    for (size_t flat = 0; flat < total; ++flat) {
        size_t dflat = 0;
        for (size_t d = 0; d < rank; ++d) {
            size_t dd = d == a ? b : (d == b ? a : d);
            dflat += idx[d] * d_strides[dd];
        }
        if (accumulate)
            dst[dflat] += src[flat];
        else
            dst[dflat] = src[flat];
        for (size_t d = rank; d-- > 0;) {
            if (++idx[d] < src_shape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace

Tensor Tape::transpose(const Tensor& x, size_t axis_a, size_t axis_b) {
    if (axis_a >= x.rank() || axis_b >= x.rank())
        fail(ErrorCode::dim, "transpose: axis out of range for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[axis_a], out_shape[axis_b]);
    Tensor out = Tensor::uninitialized(out_shape);
    transpose_copy(x.data(), out.data(), x.shape(), axis_a, axis_b, false);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), axis_a, axis_b] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            // transposing the gradient back is the same swap on the out shape
            transpose_copy(oi->grad.get(), ensure_grad(xi), oi->shape, axis_a, axis_b, true);
        });
    }
    return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) fail(ErrorCode::input, "concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) fail(ErrorCode::dim, "concat: axis out of range");
    size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.size()) fail(ErrorCode::dim, "concat: rank mismatch");
        for (size_t d = 0; d < first.size(); ++d)
            if (d != axis && p.shape()[d] != first[d])
                fail(ErrorCode::dim, "concat: extent mismatch at axis " + std::to_string(d));
        axis_total += p.extent(axis);
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;
    Tensor out = Tensor::uninitialized(out_shape);

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= first[d];
    for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    size_t offset = 0;  // in rows of `inner`
    std::vector<size_t> part_rows(parts.size());
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const size_t rows = parts[pi].extent(axis);
        part_rows[pi] = rows;
        for (size_t o = 0; o < outer; ++o) {
            std::memcpy(out.data() + (o * axis_total + offset) * inner,
                        parts[pi].data() + o * rows * inner, rows * inner * sizeof(scalar));
        }
        offset += rows;
    }
    bool rec = false;
    for (const Tensor& p : parts) rec = rec || (recording_ && p.requires_grad());
    if (rec) {
        out.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        record([impls, oi = out.impl(), part_rows, outer, inner, axis_total] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            size_t offset = 0;
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                const size_t rows = part_rows[pi];
                if (impls[pi]->requires_grad) {
                    scalar* pg = ensure_grad(impls[pi]);
                    for (size_t o = 0; o < outer; ++o)
                        ArrMap(pg + o * rows * inner, rows * inner) +=
                            CArrMap(g + (o * axis_total + offset) * inner, rows * inner);
                }
                offset += rows;
            }
        });
    }
    return out;
}

Tensor Tape::stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail(ErrorCode::input, "stack0: no inputs");
    const Shape& first = parts[0].shape();
    for (const Tensor& p : parts) check_same_shape(p, parts[0], "stack0");
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), first.begin(), first.end());
    Tensor out = Tensor::uninitialized(out_shape);
    const size_t block = parts[0].size();
    for (size_t pi = 0; pi < parts.size(); ++pi)
        std::memcpy(out.data() + pi * block, parts[pi].data(), block * sizeof(scalar));
    bool rec = false;
    for (const Tensor& p : parts) rec = rec || (recording_ && p.requires_grad());
    if (rec) {
        out.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        for (const Tensor& p : parts) impls.push_back(p.impl());
        record([impls, oi = out.impl(), block] {
            if (!has_out_grad(oi)) return;
            for (size_t pi = 0; pi < impls.size(); ++pi)
                if (impls[pi]->requires_grad)
                    ArrMap(ensure_grad(impls[pi]), block) +=
                        CArrMap(oi->grad.get() + pi * block, block);
        });
    }
    return out;
}

Tensor Tape::slice0(const Tensor& x, size_t index) {
    if (x.rank() < 1) fail(ErrorCode::dim, "slice0: rank-0 input");
    if (index >= x.extent(0)) fail(ErrorCode::dim, "slice0: index out of range");
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    const size_t block = shape_numel(out_shape);
    Tensor out = Tensor::uninitialized(out_shape);
    std::memcpy(out.data(), x.data() + index * block, block * sizeof(scalar));
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), index, block] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            ArrMap(ensure_grad(xi) + index * block, block) += CArrMap(oi->grad.get(), block);
        });
    }
    return out;
}

Tensor Tape::slice_rows(const Tensor& x, size_t from, size_t to) {
    if (x.rank() < 1) fail(ErrorCode::dim, "slice_rows: rank-0 input");
    if (from >= to || to > x.extent(0))
        fail(ErrorCode::dim, "slice_rows: invalid range [" + std::to_string(from) + ", " +
                                 std::to_string(to) + ") for extent " + std::to_string(x.extent(0)));
    Shape out_shape = x.shape();
    out_shape[0] = to - from;
    const size_t inner = x.size() / x.extent(0);
    Tensor out = Tensor::uninitialized(out_shape);
    std::memcpy(out.data(), x.data() + from * inner, out.size() * sizeof(scalar));
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), from, inner] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            ArrMap(ensure_grad(xi) + from * inner, oi->numel) += CArrMap(oi->grad.get(), oi->numel);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

Tensor Tape::reduce_sum(const Tensor& x) {
    Tensor out = Tensor::scalar_value(CArrMap(x.data(), x.size()).sum());
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl()] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            ArrMap(ensure_grad(xi), xi->numel) += oi->grad[0];
        });
    }
    return out;
}

Tensor Tape::reduce_mean(const Tensor& x) {
    const scalar inv = 1.0 / static_cast<scalar>(x.size());
    Tensor out = Tensor::scalar_value(CArrMap(x.data(), x.size()).sum() * inv);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), inv] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            ArrMap(ensure_grad(xi), xi->numel) += oi->grad[0] * inv;
        });
    }
    return out;
}

Tensor Tape::softmax(const Tensor& x, size_t axis) {
    if (axis >= x.rank()) fail(ErrorCode::dim, "softmax: axis out of range for " + shape_str(x.shape()));
    const size_t n = x.extent(axis);
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.extent(d);
    for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.extent(d);
    Tensor out = Tensor::uninitialized(x.shape());
    const scalar* xv = x.data();
    scalar* ov = out.data();
    if (inner == 1) {
        for (size_t o = 0; o < outer; ++o) {
            CArrMap row(xv + o * n, n);
            ArrMap orow(ov + o * n, n);
            const scalar mx = row.maxCoeff();
            orow = (row - mx).exp();
            orow /= orow.sum();
        }
    } else {
        for (size_t o = 0; o < outer; ++o) {
            for (size_t i = 0; i < inner; ++i) {
                const scalar* src = xv + o * n * inner + i;
                scalar* dst = ov + o * n * inner + i;
                scalar mx = src[0];
                for (size_t j = 1; j < n; ++j) mx = std::max(mx, src[j * inner]);
                scalar sum = 0;
                for (size_t j = 0; j < n; ++j) {
                    const scalar e = std::exp(src[j * inner] - mx);
                    dst[j * inner] = e;
                    sum += e;
                }
                for (size_t j = 0; j < n; ++j) dst[j * inner] /= sum;
            }
        }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), outer, inner, n] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            const scalar* g = oi->grad.get();
            const scalar* y = oi->values.get();
            scalar* xg = ensure_grad(xi);
            if (inner == 1) {
                for (size_t o = 0; o < outer; ++o) {
                    CArrMap gy(g + o * n, n);
                    CArrMap yy(y + o * n, n);
                    const scalar dot = (gy * yy).sum();
                    ArrMap(xg + o * n, n) += yy * (gy - dot);
                }
            } else {
                for (size_t o = 0; o < outer; ++o) {
                    for (size_t i = 0; i < inner; ++i) {
                        const size_t base = o * n * inner + i;
                        scalar dot = 0;
                        for (size_t j = 0; j < n; ++j)
                            dot += g[base + j * inner] * y[base + j * inner];
                        for (size_t j = 0; j < n; ++j)
                            xg[base + j * inner] +=
                                y[base + j * inner] * (g[base + j * inner] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, scalar eps) {
    if (x.rank() < 1) fail(ErrorCode::dim, "layer_norm: rank-0 input");
    const size_t d = x.extent(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.extent(0) != d || beta.rank() != 1 || beta.extent(0) != d)
        fail(ErrorCode::dim, "layer_norm: gamma/beta must have extent " + std::to_string(d));
    const size_t rows = x.size() / d;
    Tensor out = Tensor::uninitialized(x.shape());
    std::vector<scalar> inv_std(rows), means(rows);
    for (size_t r = 0; r < rows; ++r) {
        CArrMap row(x.data() + r * d, d);
        const scalar mean = row.sum() / static_cast<scalar>(d);
        const scalar var = (row - mean).square().sum() / static_cast<scalar>(d);
        const scalar is = 1.0 / std::sqrt(var + eps);
        means[r] = mean;
        inv_std[r] = is;
        ArrMap(out.data() + r * d, d) =
            (row - mean) * is * CArrMap(gamma.data(), d) + CArrMap(beta.data(), d);
    }
    if (should_record({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), rows, d,
                means = std::move(means), inv_std = std::move(inv_std)] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            for (size_t r = 0; r < rows; ++r) {
                CArrMap grow(g + r * d, d);
                CArrMap xrow(xi->values.get() + r * d, d);
                auto xhat = ((xrow - means[r]) * inv_std[r]).eval();
                if (gi->requires_grad) ArrMap(ensure_grad(gi), d) += grow * xhat;
                if (bi->requires_grad) ArrMap(ensure_grad(bi), d) += grow;
                if (xi->requires_grad) {
                    auto dxhat = (grow * CArrMap(gi->values.get(), d)).eval();
                    const scalar m1 = dxhat.sum() / static_cast<scalar>(d);
                    const scalar m2 = (dxhat * xhat).sum() / static_cast<scalar>(d);
                    ArrMap(ensure_grad(xi) + r * d, d) +=
                        inv_std[r] * (dxhat - m1 - xhat * m2);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nn ops
// ---------------------------------------------------------------------------

Tensor Tape::conv2d(const Tensor& x, const Tensor& kernel, size_t stride, size_t padding) {
    if (x.rank() != 3 || kernel.rank() != 4)
        fail(ErrorCode::dim, "conv2d: expected x[C_in, H, W] and kernel[C_out, C_in, kh, kw], got " +
                                 shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    const size_t c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
    const size_t c_out = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    if (kernel.extent(1) != c_in)
        fail(ErrorCode::dim, "conv2d: channel mismatch, x " + shape_str(x.shape()) + " vs kernel " +
                                 shape_str(kernel.shape()));
    if (kh % 2 == 0 || kw % 2 == 0) fail(ErrorCode::dim, "conv2d: kernel extents must be odd");
    if (stride == 0) fail(ErrorCode::input, "conv2d: stride must be >= 1");
    if (h + 2 * padding < kh || w + 2 * padding < kw)
        fail(ErrorCode::dim, "conv2d: kernel larger than padded input");
    const size_t oh = (h + 2 * padding - kh) / stride + 1;
    const size_t ow = (w + 2 * padding - kw) / stride + 1;
    Tensor out = Tensor::zeros({c_out, oh, ow});

    const scalar* xv = x.data();
    const scalar* kv = kernel.data();
    scalar* ov = out.data();
    const auto run_forward = [=] {
        for (size_t co = 0; co < c_out; ++co) {
            for (size_t ci = 0; ci < c_in; ++ci) {
                const scalar* xp = xv + ci * h * w;
                const scalar* kp = kv + (co * c_in + ci) * kh * kw;
                for (size_t ky = 0; ky < kh; ++ky) {
                    for (size_t kx = 0; kx < kw; ++kx) {
                        const scalar kval = kp[ky * kw + kx];
                        if (kval == 0.0) continue;
                        for (size_t oy = 0; oy < oh; ++oy) {
                            const ptrdiff_t iy =
                                static_cast<ptrdiff_t>(oy * stride + ky) - static_cast<ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<ptrdiff_t>(h)) continue;
                            scalar* orow = ov + (co * oh + oy) * ow;
                            const scalar* xrow = xp + iy * w;
                            for (size_t ox = 0; ox < ow; ++ox) {
                                const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                     static_cast<ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<ptrdiff_t>(w)) continue;
                                orow[ox] += kval * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    };
    run_forward();

    if (should_record({&x, &kernel})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), ki = kernel.impl(), oi = out.impl(), c_in, c_out, h, w, kh, kw, oh,
                ow, stride, padding] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            scalar* xg = xi->requires_grad ? ensure_grad(xi) : nullptr;
            scalar* kg = ki->requires_grad ? ensure_grad(ki) : nullptr;
            for (size_t co = 0; co < c_out; ++co) {
                for (size_t ci = 0; ci < c_in; ++ci) {
                    const scalar* xp = xi->values.get() + ci * h * w;
                    const scalar* kp = ki->values.get() + (co * c_in + ci) * kh * kw;
                    scalar* xgp = xg ? xg + ci * h * w : nullptr;
                    scalar* kgp = kg ? kg + (co * c_in + ci) * kh * kw : nullptr;
                    for (size_t ky = 0; ky < kh; ++ky) {
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const scalar kval = kp[ky * kw + kx];
                            scalar kacc = 0;
                            for (size_t oy = 0; oy < oh; ++oy) {
                                const ptrdiff_t iy = static_cast<ptrdiff_t>(oy * stride + ky) -
                                                     static_cast<ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<ptrdiff_t>(h)) continue;
                                const scalar* grow = g + (co * oh + oy) * ow;
                                const scalar* xrow = xp + iy * w;
                                scalar* xgrow = xgp ? xgp + iy * w : nullptr;
                                for (size_t ox = 0; ox < ow; ++ox) {
                                    const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                         static_cast<ptrdiff_t>(padding);
                                    if (ix < 0 || ix >= static_cast<ptrdiff_t>(w)) continue;
                                    if (xgrow) xgrow[ix] += grow[ox] * kval;
                                    if (kgp) kacc += grow[ox] * xrow[ix];
                                }
                            }
                            if (kgp) kgp[ky * kw + kx] += kacc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 3 || bias.rank() != 1 || bias.extent(0) != x.extent(0))
        fail(ErrorCode::dim, "add_channel_bias: expected x[C, H, W] and bias[C], got " +
                                 shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    const size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    Tensor out = Tensor::uninitialized(x.shape());
    for (size_t ci = 0; ci < c; ++ci)
        ArrMap(out.data() + ci * hw, hw) = CArrMap(x.data() + ci * hw, hw) + bias.data()[ci];
    if (should_record({&x, &bias})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), bi = bias.impl(), oi = out.impl(), c, hw] {
            if (!has_out_grad(oi)) return;
            const scalar* g = oi->grad.get();
            if (xi->requires_grad) ArrMap(ensure_grad(xi), c * hw) += CArrMap(g, c * hw);
            if (bi->requires_grad) {
                scalar* bg = ensure_grad(bi);
                for (size_t ci = 0; ci < c; ++ci) bg[ci] += CArrMap(g + ci * hw, hw).sum();
            }
        });
    }
    return out;
}

namespace {

struct ResizeWeights {
    std::vector<size_t> lo, hi;
    std::vector<scalar> t;  // weight of hi
};

ResizeWeights resize_axis(size_t in, size_t out) {
    ResizeWeights rw;
    rw.lo.resize(out);
    rw.hi.resize(out);
    rw.t.resize(out);
    const scalar scale = static_cast<scalar>(in) / static_cast<scalar>(out);
    for (size_t o = 0; o < out; ++o) {
        scalar src = (static_cast<scalar>(o) + 0.5) * scale - 0.5;
        scalar fl = std::floor(src);
        scalar t = src - fl;
        ptrdiff_t lo = static_cast<ptrdiff_t>(fl);
        ptrdiff_t hi = lo + 1;
        if (lo < 0) {
            lo = 0;
            hi = 0;
            t = 0;
        }
        if (hi >= static_cast<ptrdiff_t>(in)) {
            hi = static_cast<ptrdiff_t>(in) - 1;
            if (lo > hi) lo = hi;
        }
        rw.lo[o] = static_cast<size_t>(lo);
        rw.hi[o] = static_cast<size_t>(hi);
        rw.t[o] = t;
    }
    return rw;
}

}  // namespace

Tensor Tape::bilinear_resize(const Tensor& x, size_t out_h, size_t out_w) {
    if (x.rank() != 3) fail(ErrorCode::dim, "bilinear_resize: expected x[C, H, W]");
    if (out_h == 0 || out_w == 0) fail(ErrorCode::input, "bilinear_resize: output extents must be >= 1");
    const size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    ResizeWeights ry = resize_axis(h, out_h), rx = resize_axis(w, out_w);
    Tensor out = Tensor::uninitialized({c, out_h, out_w});
    const scalar* xv = x.data();
    scalar* ov = out.data();
    for (size_t ci = 0; ci < c; ++ci) {
        const scalar* plane = xv + ci * h * w;
        for (size_t oy = 0; oy < out_h; ++oy) {
            const scalar ty = ry.t[oy];
            const scalar* row0 = plane + ry.lo[oy] * w;
            const scalar* row1 = plane + ry.hi[oy] * w;
            scalar* orow = ov + (ci * out_h + oy) * out_w;
            for (size_t ox = 0; ox < out_w; ++ox) {
                const scalar tx = rx.t[ox];
                const scalar v00 = row0[rx.lo[ox]], v01 = row0[rx.hi[ox]];
                const scalar v10 = row1[rx.lo[ox]], v11 = row1[rx.hi[ox]];
                orow[ox] = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                           ty * ((1 - tx) * v10 + tx * v11);
            }
        }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        record([xi = x.impl(), oi = out.impl(), c, h, w, out_h, out_w, ry = std::move(ry),
                rx = std::move(rx)] {
            if (!has_out_grad(oi) || !xi->requires_grad) return;
            const scalar* g = oi->grad.get();
            scalar* xg = ensure_grad(xi);
            for (size_t ci = 0; ci < c; ++ci) {
                scalar* plane = xg + ci * h * w;
                for (size_t oy = 0; oy < out_h; ++oy) {
                    const scalar ty = ry.t[oy];
                    scalar* row0 = plane + ry.lo[oy] * w;
                    scalar* row1 = plane + ry.hi[oy] * w;
                    const scalar* grow = g + (ci * out_h + oy) * out_w;
                    for (size_t ox = 0; ox < out_w; ++ox) {
                        const scalar tx = rx.t[ox];
                        const scalar gv = grow[ox];
                        row0[rx.lo[ox]] += gv * (1 - ty) * (1 - tx);
                        row0[rx.hi[ox]] += gv * (1 - ty) * tx;
                        row1[rx.lo[ox]] += gv * ty * (1 - tx);
                        row1[rx.hi[ox]] += gv * ty * tx;
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::embed(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) fail(ErrorCode::dim, "embed: table must be [V, d]");
    const size_t v = table.extent(0), d = table.extent(1);
    if (ids.empty()) fail(ErrorCode::input, "embed: empty id list");
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= v)
            fail(ErrorCode::input, "embed: id " + std::to_string(id) + " out of vocabulary range");
    Tensor out = Tensor::uninitialized({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * d, table.data() + static_cast<size_t>(ids[i]) * d,
                    d * sizeof(scalar));
    if (should_record({&table})) {
        out.set_requires_grad(true);
        record([ti = table.impl(), oi = out.impl(), ids, d] {
            if (!has_out_grad(oi) || !ti->requires_grad) return;
            scalar* tg = ensure_grad(ti);
            for (size_t i = 0; i < ids.size(); ++i)
                ArrMap(tg + static_cast<size_t>(ids[i]) * d, d) +=
                    CArrMap(oi->grad.get() + i * d, d);
        });
    }
    return out;
}

}  // namespace cmaseg
