#include "cmaseg/tensor.hpp"

#include <cmath>
#include <mutex>
#include <sstream>
#include <unordered_map>

namespace cmaseg {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::vector<size_t> row_major_strides(const Shape& shape) {
    std::vector<size_t> st(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

namespace {

// Size-bucketed freelist for tensor storage. Training repeatedly allocates
// and frees the same large attention buffers; recycling them avoids the
// kernel zero-fill cost of fresh pages on every step. Each block stores its
// element count in a 64-byte header so the deleter can return it.
class BufferPool {
public:
    static BufferPool& instance() {
        static BufferPool pool;
        return pool;
    }

    scalar* acquire(size_t n) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = free_.find(n);
            if (it != free_.end() && !it->second.empty()) {
                scalar* p = it->second.back();
                it->second.pop_back();
                pooled_bytes_ -= bytes_for(n);
                return p;
            }
        }
        auto* raw = static_cast<scalar*>(::operator new[](bytes_for(n), std::align_val_t(64)));
        raw[0] = static_cast<scalar>(n);
        return raw + kHeader;
    }

    void release(scalar* p) {
        scalar* raw = p - kHeader;
        const size_t n = static_cast<size_t>(raw[0]);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (pooled_bytes_ + bytes_for(n) <= kMaxPooledBytes) {
                free_[n].push_back(p);
                pooled_bytes_ += bytes_for(n);
                return;
            }
        }
        ::operator delete[](raw, std::align_val_t(64));
    }

private:
    static constexpr size_t kHeader = 8;  // doubles; keeps 64-byte alignment
    static constexpr size_t kMaxPooledBytes = 3ull << 30;
    static size_t bytes_for(size_t n) { return (n + kHeader) * sizeof(scalar); }

    std::mutex mu_;
    std::unordered_map<size_t, std::vector<scalar*>> free_;
    size_t pooled_bytes_ = 0;
};

}  // namespace

void Tensor::AlignedDeleter::operator()(scalar* p) const {
    if (p) BufferPool::instance().release(p);
}

Tensor::Buffer Tensor::allocate(size_t n) {
    return Buffer(BufferPool::instance().acquire(n));
}

static std::shared_ptr<Tensor::Impl> make_impl(Shape shape) {
    auto impl = std::make_shared<Tensor::Impl>();
    impl->numel = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->values = Tensor::allocate(impl->numel);
    return impl;
}

Tensor Tensor::uninitialized(Shape shape) { return Tensor(make_impl(std::move(shape))); }

Tensor Tensor::zeros(Shape shape) {
    Tensor t = uninitialized(std::move(shape));
    std::memset(t.data(), 0, t.size() * sizeof(scalar));
    return t;
}

Tensor Tensor::full(Shape shape, scalar value) {
    Tensor t = uninitialized(std::move(shape));
    scalar* p = t.data();
    for (size_t i = 0; i < t.size(); ++i) p[i] = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<scalar> data) {
    if (shape_numel(shape) != data.size())
        fail(ErrorCode::dim, "from_data: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
    Tensor t = uninitialized(std::move(shape));
    std::memcpy(t.data(), data.data(), data.size() * sizeof(scalar));
    return t;
}

Tensor Tensor::scalar_value(scalar v) {
    Tensor t = uninitialized(Shape{});
    t.data()[0] = v;
    return t;
}

size_t Tensor::extent(size_t axis) const {
    if (axis >= rank()) fail(ErrorCode::dim, "extent: axis out of range");
    return impl_->shape[axis];
}

scalar Tensor::item() const {
    if (size() != 1) fail(ErrorCode::dim, "item: tensor has " + std::to_string(size()) + " elements");
    return impl_->values[0];
}

scalar* Tensor::grad() {
    if (!impl_->grad) {
        impl_->grad = allocate(impl_->numel);
        std::memset(impl_->grad.get(), 0, impl_->numel * sizeof(scalar));
    }
    return impl_->grad.get();
}

void Tensor::zero_grad() {
    if (impl_->grad) std::memset(impl_->grad.get(), 0, impl_->numel * sizeof(scalar));
}

void Tensor::drop_grad() { impl_->grad.reset(); }

Tensor Tensor::clone() const {
    Tensor t = uninitialized(impl_->shape);
    std::memcpy(t.data(), data(), size() * sizeof(scalar));
    t.set_requires_grad(impl_->requires_grad);
    return t;
}

void Tensor::copy_values_from(const Tensor& src) {
    if (!same_shape(shape(), src.shape()))
        fail(ErrorCode::dim, "copy_values_from: shape mismatch " + shape_str(shape()) + " vs " +
                                 shape_str(src.shape()));
    std::memcpy(data(), src.data(), size() * sizeof(scalar));
}

scalar Tensor::at(std::initializer_list<size_t> idx) const {
    if (idx.size() != rank()) fail(ErrorCode::dim, "at: index rank mismatch");
    auto strides = row_major_strides(impl_->shape);
    size_t flat = 0, k = 0;
    for (size_t i : idx) {
        if (i >= impl_->shape[k]) fail(ErrorCode::dim, "at: index out of bounds");
        flat += i * strides[k++];
    }
    return impl_->values[flat];
}

bool Tensor::all_finite() const {
    const scalar* p = data();
    for (size_t i = 0; i < size(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace cmaseg
