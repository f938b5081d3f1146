#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsdf/checkpoint.hpp"
#include "flowsdf/metrics.hpp"
#include "flowsdf/sampler.hpp"
#include "flowsdf/synth.hpp"
#include "flowsdf/train.hpp"

namespace flowsdf {

struct EvalOptions {
    SamplerConfig sampler;
    float delta = 5.0f;
    TrainConfig::Target target = TrainConfig::Target::Sdf;
    int patch = 0;   // 0 evaluates whole images
    int stride = 0;  // 0 defaults to patch size
};

struct ImageScore {
    double f1 = 0.0;
    double iou = 0.0;
};

struct EvalResult {
    std::vector<ImageScore> per_image;
    double mean_f1 = 0.0;
    double mean_iou = 0.0;
};

// Ensemble-evaluates every dataset image against its ground truth. Image i
// uses base seed sampler.seed + i * 2^24 so its K runs (seed + k) never
// collide with a neighbour's.
EvalResult evaluate_dataset(const ModelParams& params, const Dataset& dataset,
                            const EvalOptions& opts);

// Picks EMA parameters when requested and available.
const ModelParams& select_params(const Checkpoint& ck, bool use_ema);

// Mean IoU / F1 per ensemble size K, each averaged over `repetitions`
// distinct base seeds. Returns CSV text with header "k,f1,miou".
std::string ablate_k_csv(const ModelParams& params, const Dataset& dataset,
                         const EvalOptions& opts, const std::vector<uint32_t>& k_values,
                         uint32_t repetitions);

// Two-row comparison of an SDF-trained and a binary-trained model on the
// same dataset. Returns CSV text with header "variant,f1,miou".
std::string ablate_sdf_csv(const ModelParams& sdf_params, const ModelParams& bin_params,
                           const Dataset& dataset, const EvalOptions& sdf_opts);

}  // namespace flowsdf
