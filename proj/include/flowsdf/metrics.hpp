#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flowsdf/sdf.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Pixelwise counts with foreground as the positive class.
ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

// F1 = 2tp / (2tp + fp + fn); IoU = tp / (tp + fp + fn). Both are 1 when
// tp + fp + fn = 0 (empty union).
double f1(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);

// Overlapping window layout. The final row/column of windows is clamped to
// the image border, so every pixel is covered at least once.
struct PatchGrid {
    int image_h = 0, image_w = 0;
    int patch = 0;
    int stride = 0;
    std::vector<std::pair<int, int>> origins;  // (y, x)
};

PatchGrid tile(int image_h, int image_w, int patch, int stride);

// Arithmetic mean of all patch predictions covering each pixel; operates on
// SDF values before any thresholding. patch_values[i] matches origins[i].
Tensor merge_patches(const PatchGrid& grid, const std::vector<Tensor>& patch_values);

// Per-pixel coverage counts of a grid (diagnostics and tests).
std::vector<uint32_t> coverage_counts(const PatchGrid& grid);

}  // namespace flowsdf
