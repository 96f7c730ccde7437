#pragma once

#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cmaseg/common.hpp"

namespace cmaseg {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copying a Tensor copies the handle; both handles see the same storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, scalar value);
    static Tensor from_data(Shape shape, std::vector<scalar> data);
    static Tensor scalar_value(scalar v);  // rank-0
    // Uninitialized storage; caller must fill every element.
    static Tensor uninitialized(Shape shape);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    size_t rank() const { return impl_->shape.size(); }
    size_t size() const { return impl_->numel; }
    size_t extent(size_t axis) const;

    scalar* data() { return impl_->values.get(); }
    const scalar* data() const { return impl_->values.get(); }
    scalar item() const;  // requires size() == 1

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool grad_allocated() const { return impl_->grad != nullptr; }
    // Allocates a zero grad buffer if absent.
    scalar* grad();
    const scalar* grad() const { return impl_->grad.get(); }
    void zero_grad();   // zeroes if allocated, no-op otherwise
    void drop_grad();   // frees the buffer

    Tensor clone() const;  // deep copy of values only
    void copy_values_from(const Tensor& src);
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    // Flat and multi-index element access (test/IO convenience, not a hot path).
    scalar at_flat(size_t i) const { return impl_->values[i]; }
    scalar& at_flat(size_t i) { return impl_->values[i]; }
    scalar at(std::initializer_list<size_t> idx) const;

    bool all_finite() const;

    // All buffers are 64-byte aligned so SIMD kernels take identical code
    // paths for every allocation; bit-reproducibility depends on this.
    struct AlignedDeleter {
        void operator()(scalar* p) const;
    };
    using Buffer = std::unique_ptr<scalar[], AlignedDeleter>;
    static Buffer allocate(size_t n);

    struct Impl {
        Shape shape;
        size_t numel = 0;
        Buffer values;
        Buffer grad;
        bool requires_grad = false;
    };
    const std::shared_ptr<Impl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

// Row-major strides for a shape.
std::vector<size_t> row_major_strides(const Shape& shape);

}  // namespace cmaseg
