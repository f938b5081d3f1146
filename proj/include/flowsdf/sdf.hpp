#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "flowsdf/tensor.hpp"

namespace flowsdf {

// Per-pixel class labels in {0, 1}; 1 marks the foreground object.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> values;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), values(std::size_t(h) * w, 0) {}

    uint8_t& at(int y, int x) { return values[std::size_t(y) * width + x]; }
    uint8_t at(int y, int x) const { return values[std::size_t(y) * width + x]; }
    std::size_t numel() const { return values.size(); }
    bool operator==(const BinaryMask& o) const {
        return height == o.height && width == o.width && values == o.values;
    }
};

// Truncated signed distance representation: negative inside the object,
// positive outside, zero on the boundary, |value| <= delta.
struct SdfMask {
    int height = 0;
    int width = 0;
    float delta = 0.0f;
    std::vector<float> values;

    SdfMask() = default;
    SdfMask(int h, int w, float d)
        : height(h), width(w), delta(d), values(std::size_t(h) * w, 0.0f) {}

    float& at(int y, int x) { return values[std::size_t(y) * width + x]; }
    float at(int y, int x) const { return values[std::size_t(y) * width + x]; }
    std::size_t numel() const { return values.size(); }
};

// Exact squared Euclidean distances to the nearest seed pixel, in integer
// arithmetic. `kInfinity` appears only when the seed set is empty.
struct DistanceMap {
    static constexpr int64_t kInfinity = std::numeric_limits<int64_t>::max();

    int height = 0;
    int width = 0;
    std::vector<int64_t> squared;

    DistanceMap() = default;
    DistanceMap(int h, int w)
        : height(h), width(w), squared(std::size_t(h) * w, kInfinity) {}

    int64_t& at(int y, int x) { return squared[std::size_t(y) * width + x]; }
    int64_t at(int y, int x) const { return squared[std::size_t(y) * width + x]; }
};

// Foreground pixels with at least one 4-connected background neighbour.
// Neighbours beyond the image border do not count as background.
BinaryMask boundary_pixels(const BinaryMask& mask);

// Exact squared Euclidean distance transform (separable two-pass lower
// envelope, O(H*W)).
DistanceMap edt_squared(const BinaryMask& seeds);

// Truncated signed distance of `mask` with truncation radius `delta` (> 0).
// Conventions for masks without a boundary: all-background -> +delta
// everywhere, all-foreground -> -delta everywhere.
SdfMask sdf_from_mask(const BinaryMask& mask, float delta);

// Threshold at zero: boundary and interior (<= 0) become foreground.
BinaryMask mask_from_sdf(const SdfMask& sdf);

// Scale by 1/delta so the flow operates on a fixed [-1, 1] range.
Tensor normalize_sdf(const SdfMask& sdf);
SdfMask denormalize_sdf(const Tensor& field, float delta);

}  // namespace flowsdf
