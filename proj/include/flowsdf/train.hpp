#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowsdf/model.hpp"
#include "flowsdf/rng.hpp"
#include "flowsdf/synth.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

struct TrainConfig {
    double learning_rate = 1e-4;
    uint32_t batch_size = 16;
    uint32_t epochs = 1;
    double ema_decay = 0.9999;
    uint32_t crop_size = 0;  // 0 disables cropping
    uint64_t seed = 1;
    enum class Target { Sdf, Binary } target = Target::Sdf;
    uint32_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
    int threads = 0;

    void validate() const {
        if (!(learning_rate > 0.0))
            throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (batch_size < 1)
            throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (!(ema_decay > 0.0 && ema_decay < 1.0))
            throw std::invalid_argument("TrainConfig: ema_decay must lie in (0, 1)");
    }
};

// Paired crop-and-flip augmentation. The same window and the same flips are
// applied to the image and the mask field.
struct AugmentDraw {
    int crop_y = 0;
    int crop_x = 0;
    bool hflip = false;
    bool vflip = false;
};

AugmentDraw draw_augment(Rng& rng, int height, int width, int crop_size);
void apply_augment(Tensor& image, Tensor& field, const AugmentDraw& draw, int crop_size);

// Per-element training draws; each batch element owns a stream derived as
// seed + element_counter * 2^32, so draws are independent across elements
// and identical regardless of worker count.
struct ElementDraws {
    std::size_t dataset_index = 0;
    float t = 0.0f;
    AugmentDraw augment;
    // the prior draw m0 is consumed from the same stream after the above
};

Rng element_stream(uint64_t seed, uint64_t step, uint32_t batch_size, uint32_t element);

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    uint64_t total_steps = 0;
    std::string checkpoint_path;
};

// Algorithm: per step, sample a batch with replacement, draw per-element
// t ~ U[0,1] and a standard-normal prior, regress the interpolation targets
// with the CFM loss, then apply Adam and the EMA update. Masks are encoded
// up front: normalized truncated SDFs for Target::Sdf, {-1 fg, +1 bg} for
// Target::Binary. Writes loss.csv (header "epoch,step,loss") and
// checkpoint.fsdf (raw + EMA parameters + resolved config) into out_dir.
TrainResult train(const Dataset& dataset, float delta, const ModelDescriptor& desc,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resolved_config_text);

// Mask encoding used for training targets; exposed for evaluation code.
Tensor encode_mask(const Tensor& mask, float delta, TrainConfig::Target target);

}  // namespace flowsdf
