#pragma once

#include <cstdint>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace flowsdf {

// Dense row-major tensor of rank 0..4. Rank and dims are dynamic; payloads are
// contiguous so the numeric kernels can work on raw pointers.
template <typename T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(std::vector<uint32_t> dims) : dims_(std::move(dims)) {
        data_.assign(numel_of(dims_), T(0));
    }
    TensorT(std::initializer_list<uint32_t> dims)
        : TensorT(std::vector<uint32_t>(dims)) {}

    static std::size_t numel_of(const std::vector<uint32_t>& dims) {
        std::size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }

    static TensorT full(std::vector<uint32_t> dims, T value) {
        TensorT t(std::move(dims));
        t.fill(value);
        return t;
    }

    uint32_t rank() const { return static_cast<uint32_t>(dims_.size()); }
    const std::vector<uint32_t>& dims() const { return dims_; }
    uint32_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // rank-2 (h, w)
    T& at(std::size_t y, std::size_t x) { return data_[y * dims_[1] + x]; }
    const T& at(std::size_t y, std::size_t x) const { return data_[y * dims_[1] + x]; }

    // rank-3 (c, h, w)
    T& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }
    const T& at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }

    void fill(T value) { data_.assign(data_.size(), value); }

    // Reallocates only when the total element count changes.
    void reshape(std::vector<uint32_t> dims) {
        std::size_t n = numel_of(dims);
        dims_ = std::move(dims);
        if (n != data_.size()) data_.assign(n, T(0));
    }

    bool same_shape(const TensorT& o) const { return dims_ == o.dims_; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(dims_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::vector<uint32_t> dims_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// Sizes `t` to `dims`, reusing storage when the element count matches.
template <typename T>
void ensure_shape(TensorT<T>& t, std::vector<uint32_t> dims) {
    if (t.dims() != dims) t.reshape(std::move(dims));
}

}  // namespace flowsdf
