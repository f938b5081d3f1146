#pragma once

// Test-only oracles and helpers. These deliberately reimplement the checked
// quantities by brute force and stay independent of the library's fast
// paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flowsdf/model.hpp"
#include "flowsdf/rng.hpp"
#include "flowsdf/sdf.hpp"
#include "flowsdf/tensor.hpp"

namespace testsupport {

using flowsdf::BinaryMask;
using flowsdf::DistanceMap;
using flowsdf::Rng;
using flowsdf::Tensor;

// O(N^2 * |seeds|) all-pairs squared distances.
inline DistanceMap brute_force_edt_squared(const BinaryMask& seeds) {
    const int h = seeds.height, w = seeds.width;
    DistanceMap out{};
    out.height = h;
    out.width = w;
    out.squared.assign(std::size_t(h) * w, DistanceMap::kInfinity);
    std::vector<std::pair<int, int>> seed_list;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (seeds.at(y, x)) seed_list.emplace_back(y, x);
    if (seed_list.empty()) return out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int64_t best = DistanceMap::kInfinity;
            for (const auto& [sy, sx] : seed_list) {
                const int64_t dy = y - sy, dx = x - sx;
                best = std::min(best, dy * dy + dx * dx);
            }
            out.at(y, x) = best;
        }
    return out;
}

// Boundary by direct 4-neighbour enumeration (independent of the library).
inline BinaryMask brute_force_boundary(const BinaryMask& mask) {
    const int h = mask.height, w = mask.width;
    BinaryMask out{h, w};
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            for (int k = 0; k < 4; ++k) {
                const int ny = y + dy[k], nx = x + dx[k];
                if (ny >= 0 && ny < h && nx >= 0 && nx < w && !mask.at(ny, nx)) {
                    out.at(y, x) = 1;
                    break;
                }
            }
        }
    return out;
}

// Truncated SDF by brute-force minimum over boundary pixels.
inline std::vector<double> brute_force_sdf(const BinaryMask& mask, double delta) {
    const int h = mask.height, w = mask.width;
    const BinaryMask boundary = brute_force_boundary(mask);
    std::vector<std::pair<int, int>> bpix;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (boundary.at(y, x)) bpix.emplace_back(y, x);
    std::vector<double> out(std::size_t(h) * w, 0.0);
    if (bpix.empty()) {
        const bool all_fg = !mask.values.empty() && mask.values[0] != 0;
        std::fill(out.begin(), out.end(), all_fg ? -delta : delta);
        return out;
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [by, bx] : bpix) {
                const double dy = y - by, dx = x - bx;
                best = std::min(best, std::sqrt(dy * dy + dx * dx));
            }
            best = std::min(best, delta);
            double v;
            if (boundary.at(y, x)) v = 0.0;
            else if (mask.at(y, x)) v = -best;
            else v = best;
            out[std::size_t(y) * w + x] = v;
        }
    return out;
}

inline BinaryMask random_mask(Rng& rng, int h, int w, double p = 0.5) {
    BinaryMask m{h, w};
    for (auto& v : m.values) v = rng.uniform() < p ? 1 : 0;
    return m;
}

// Gives every parameter (including the zero-initialized output layer) a
// random value so gradients flow everywhere during checks.
template <typename T>
void randomize_params(flowsdf::ModelParamsT<T>& params, uint64_t seed) {
    Rng rng(seed);
    flowsdf::for_each_param(params, [&](const std::string&, flowsdf::TensorT<T>& t) {
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = T(rng.uniform(-0.3, 0.3));
    });
    // keep normalization scales near 1 so activations stay well-conditioned
    auto fix_scale = [](flowsdf::TensorT<T>& s, Rng& r) {
        for (std::size_t i = 0; i < s.numel(); ++i) s[i] = T(1.0 + 0.1 * r.uniform(-1, 1));
    };
    for (auto* blk : {&params.enc1, &params.enc2, &params.mid, &params.dec1, &params.dec2}) {
        fix_scale(blk->gn1_scale, rng);
        fix_scale(blk->gn2_scale, rng);
    }
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testsupport
