#include "flowsdf/eval_harness.hpp"

#include <cmath>
#include <sstream>

#include "flowsdf/parallel.hpp"

namespace flowsdf {

namespace {

BinaryMask mask_from_tensor(const Tensor& t) {
    const uint32_t H = t.rank() == 3 ? t.dim(1) : t.dim(0);
    const uint32_t W = t.rank() == 3 ? t.dim(2) : t.dim(1);
    BinaryMask m{int(H), int(W)};
    for (std::size_t i = 0; i < m.values.size(); ++i)
        m.values[i] = t[i] > 0.5f ? 1 : 0;
    return m;
}

Tensor crop_patch(const Tensor& img, int oy, int ox, int patch) {
    const uint32_t C = img.dim(0);
    Tensor out({C, uint32_t(patch), uint32_t(patch)});
    for (uint32_t c = 0; c < C; ++c)
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x)
                out.at(c, y, x) = img.at(c, uint32_t(oy + y), uint32_t(ox + x));
    return out;
}

// Predicted mask for one conditioning image: ensemble mean SDF (merged over
// patches when tiling is active), thresholded at zero.
BinaryMask predict_mask(const ModelParams& params, const Tensor& image,
                        const EvalOptions& opts, uint64_t base_seed) {
    SamplerConfig scfg = opts.sampler;
    scfg.seed = base_seed;
    if (opts.patch <= 0) {
        return ensemble(params, image, scfg, opts.delta).consensus;
    }
    const int H = int(image.dim(1)), W = int(image.dim(2));
    const int stride = opts.stride > 0 ? opts.stride : opts.patch;
    const PatchGrid grid = tile(H, W, opts.patch, stride);
    std::vector<Tensor> patch_means(grid.origins.size());
    for (std::size_t i = 0; i < grid.origins.size(); ++i) {
        const auto [oy, ox] = grid.origins[i];
        SamplerConfig pcfg = scfg;
        pcfg.seed = base_seed + (uint64_t(i) << 16);
        const EnsembleStats stats =
            ensemble(params, crop_patch(image, oy, ox, opts.patch), pcfg, opts.delta);
        Tensor mean({uint32_t(opts.patch), uint32_t(opts.patch)});
        for (std::size_t j = 0; j < mean.numel(); ++j) mean[j] = stats.mean.values[j];
        patch_means[i] = std::move(mean);
    }
    const Tensor merged = merge_patches(grid, patch_means);
    SdfMask sdf{int(merged.dim(0)), int(merged.dim(1)), opts.delta};
    sdf.values.assign(merged.data(), merged.data() + merged.numel());
    return mask_from_sdf(sdf);
}

}  // namespace

const ModelParams& select_params(const Checkpoint& ck, bool use_ema) {
    return (use_ema && ck.has_ema) ? ck.ema : ck.params;
}

EvalResult evaluate_dataset(const ModelParams& params, const Dataset& dataset,
                            const EvalOptions& opts) {
    EvalResult result;
    result.per_image.resize(dataset.size());
    // Parallelism lives inside ensemble(); images run serially so per-image
    // RNG base seeds stay trivially ordered.
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const uint64_t base = opts.sampler.seed + (uint64_t(i) << 24);
        const BinaryMask pred = predict_mask(params, dataset.images[i], opts, base);
        const BinaryMask gt = mask_from_tensor(dataset.masks[i]);
        const ConfusionCounts c = confusion_counts(pred, gt);
        result.per_image[i] = {f1(c), iou(c)};
    }
    for (const auto& s : result.per_image) {
        result.mean_f1 += s.f1;
        result.mean_iou += s.iou;
    }
    result.mean_f1 /= double(dataset.size());
    result.mean_iou /= double(dataset.size());
    return result;
}

std::string ablate_k_csv(const ModelParams& params, const Dataset& dataset,
                         const EvalOptions& opts, const std::vector<uint32_t>& k_values,
                         uint32_t repetitions) {
    std::ostringstream csv;
    csv << "k,f1,miou\n";
    for (uint32_t k : k_values) {
        double f1_acc = 0.0, iou_acc = 0.0;
        for (uint32_t rep = 0; rep < repetitions; ++rep) {
            EvalOptions o = opts;
            o.sampler.ensemble = k;
            o.sampler.seed = opts.sampler.seed + uint64_t(rep) * (uint64_t(1) << 40);
            const EvalResult r = evaluate_dataset(params, dataset, o);
            f1_acc += r.mean_f1;
            iou_acc += r.mean_iou;
        }
        csv << k << "," << f1_acc / repetitions << "," << iou_acc / repetitions << "\n";
    }
    return csv.str();
}

std::string ablate_sdf_csv(const ModelParams& sdf_params, const ModelParams& bin_params,
                           const Dataset& dataset, const EvalOptions& sdf_opts) {
    EvalOptions bin_opts = sdf_opts;
    bin_opts.target = TrainConfig::Target::Binary;
    bin_opts.delta = 1.0f;  // binary encoding lives in {-1, +1}; threshold unaffected

    const EvalResult rs = evaluate_dataset(sdf_params, dataset, sdf_opts);
    const EvalResult rb = evaluate_dataset(bin_params, dataset, bin_opts);
    std::ostringstream csv;
    csv << "variant,f1,miou\n";
    csv << "sdf," << rs.mean_f1 << "," << rs.mean_iou << "\n";
    csv << "binary," << rb.mean_f1 << "," << rb.mean_iou << "\n";
    return csv.str();
}

}  // namespace flowsdf
