#include "flowsdf/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace flowsdf {

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("confusion_counts: shape mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double f1(const ConfusionCounts& c) {
    const uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * double(c.tp) / double(denom);
}

double iou(const ConfusionCounts& c) {
    const uint64_t denom = c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return double(c.tp) / double(denom);
}

PatchGrid tile(int image_h, int image_w, int patch, int stride) {
    if (patch <= 0 || patch > image_h || patch > image_w)
        throw std::invalid_argument("tile: patch must be positive and fit the image");
    if (stride <= 0) throw std::invalid_argument("tile: stride must be positive");

    auto axis_origins = [&](int extent) {
        std::vector<int> pos;
        for (int p = 0;; p += stride) {
            if (p + patch >= extent) {
                pos.push_back(extent - patch);  // clamp the final window
                break;
            }
            pos.push_back(p);
        }
        return pos;
    };

    PatchGrid grid;
    grid.image_h = image_h;
    grid.image_w = image_w;
    grid.patch = patch;
    grid.stride = stride;
    for (int y : axis_origins(image_h))
        for (int x : axis_origins(image_w)) grid.origins.emplace_back(y, x);
    return grid;
}

Tensor merge_patches(const PatchGrid& grid, const std::vector<Tensor>& patch_values) {
    if (patch_values.size() != grid.origins.size())
        throw std::invalid_argument("merge_patches: one prediction per window required");
    const int H = grid.image_h, W = grid.image_w, P = grid.patch;
    std::vector<double> sums(std::size_t(H) * W, 0.0);
    std::vector<uint32_t> counts(std::size_t(H) * W, 0);
    for (std::size_t i = 0; i < grid.origins.size(); ++i) {
        const auto [oy, ox] = grid.origins[i];
        const Tensor& v = patch_values[i];
        if (v.numel() != std::size_t(P) * P)
            throw std::invalid_argument("merge_patches: patch prediction has wrong size");
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x) {
                const std::size_t idx = std::size_t(oy + y) * W + (ox + x);
                sums[idx] += double(v[std::size_t(y) * P + x]);
                counts[idx] += 1;
            }
    }
    Tensor out({uint32_t(H), uint32_t(W)});
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = float(sums[i] / double(counts[i]));
    return out;
}

std::vector<uint32_t> coverage_counts(const PatchGrid& grid) {
    std::vector<uint32_t> counts(std::size_t(grid.image_h) * grid.image_w, 0);
    for (const auto& [oy, ox] : grid.origins)
        for (int y = 0; y < grid.patch; ++y)
            for (int x = 0; x < grid.patch; ++x)
                counts[std::size_t(oy + y) * grid.image_w + (ox + x)] += 1;
    return counts;
}

}  // namespace flowsdf
