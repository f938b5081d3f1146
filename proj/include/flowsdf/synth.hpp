#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsdf/tensor.hpp"

namespace flowsdf {

// Seeded generator of ellipse-blob segmentation pairs. Conditioning images
// are smoothed mask intensities plus an illumination gradient and Gaussian
// texture noise, clamped to [0, 1].
struct SyntheticConfig {
    uint32_t count = 200;
    uint32_t size = 32;
    uint32_t objects_min = 2;
    uint32_t objects_max = 4;
    double radius_min = 3.0;
    double radius_max = 7.0;
    double noise_std = 0.08;
    double illum_amp = 0.15;
    uint64_t seed = 7;

    void validate() const;
};

struct GenerateSummary {
    uint32_t count = 0;
    uint64_t skipped_objects = 0;
    double mean_foreground_fraction = 0.0;
};

// Writes img_%05d.fstn / mask_%05d.fstn pairs plus manifest.txt into
// `out_dir`. Sample i draws from its own stream seeded config.seed + i, so
// generation order does not matter. `index_offset` shifts the sample streams
// (used to keep train and test splits disjoint).
GenerateSummary generate(const SyntheticConfig& config, const std::string& out_dir,
                         uint32_t index_offset = 0);

// In-memory pair generation (used by generate and by tests).
struct SamplePair {
    Tensor image;  // [1, S, S]
    Tensor mask;   // [1, S, S], values in {0, 1}
    uint32_t skipped_objects = 0;
};
SamplePair generate_sample(const SyntheticConfig& config, uint32_t sample_index);

// Loaded dataset directory.
struct Dataset {
    std::vector<Tensor> images;
    std::vector<Tensor> masks;
    std::size_t size() const { return images.size(); }
};
Dataset load_dataset(const std::string& dir);

// Verifies the manifest checksums against the files on disk; throws IoError
// on mismatch.
void verify_manifest(const std::string& dir);

std::string sha256_file_hex(const std::string& path);

}  // namespace flowsdf
