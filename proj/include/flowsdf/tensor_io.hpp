#pragma once

#include <string>

#include "flowsdf/sdf.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

// Tensor container: magic "FSTN", version u32 LE, rank u8, dims u32 LE each,
// float32 LE row-major payload. Rank is limited to 4. Read failures throw
// IoError carrying the byte offset at which the problem was detected.
void write_tensor(const std::string& path, const Tensor& tensor);
Tensor read_tensor(const std::string& path);

// Binary PGM (P5, maxval 255). Values map linearly from [lo, hi] to [0, 255]
// with round-half-away-from-zero, clamped.
void write_pgm(const std::string& path, const Tensor& field, float lo, float hi);

struct PgmImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;
};
PgmImage read_pgm(const std::string& path);

// PGM pixels >= 128 count as foreground.
BinaryMask mask_from_pgm(const PgmImage& img);

}  // namespace flowsdf
