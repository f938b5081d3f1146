#include "flowsdf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowsdf/checkpoint.hpp"
#include "flowsdf/errors.hpp"
#include "flowsdf/flow.hpp"
#include "flowsdf/sdf.hpp"
#include "flowsdf/optim.hpp"
#include "flowsdf/parallel.hpp"

namespace flowsdf {

namespace fs = std::filesystem;

AugmentDraw draw_augment(Rng& rng, int height, int width, int crop_size) {
    AugmentDraw d;
    if (crop_size > 0) {
        if (crop_size > height || crop_size > width)
            throw std::invalid_argument("augment: crop larger than image");
        d.crop_y = int(rng.uniform_int(uint64_t(height - crop_size) + 1));
        d.crop_x = int(rng.uniform_int(uint64_t(width - crop_size) + 1));
    }
    d.hflip = rng.uniform() < 0.5;
    d.vflip = rng.uniform() < 0.5;
    return d;
}

namespace {

void crop_flip(Tensor& t, const AugmentDraw& d, int crop) {
    const uint32_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    const uint32_t oh = crop > 0 ? uint32_t(crop) : H;
    const uint32_t ow = crop > 0 ? uint32_t(crop) : W;
    Tensor out({C, oh, ow});
    for (uint32_t c = 0; c < C; ++c)
        for (uint32_t y = 0; y < oh; ++y)
            for (uint32_t x = 0; x < ow; ++x) {
                const uint32_t sy = uint32_t(d.crop_y) + (d.vflip ? oh - 1 - y : y);
                const uint32_t sx = uint32_t(d.crop_x) + (d.hflip ? ow - 1 - x : x);
                out.at(c, y, x) = t.at(c, sy, sx);
            }
    t = std::move(out);
}

}  // namespace

void apply_augment(Tensor& image, Tensor& field, const AugmentDraw& draw, int crop_size) {
    if (image.dim(1) != field.dim(1) || image.dim(2) != field.dim(2))
        throw std::invalid_argument("augment: image and mask sizes differ");
    if (crop_size > 0 &&
        (uint32_t(crop_size) > image.dim(1) || uint32_t(crop_size) > image.dim(2)))
        throw std::invalid_argument("augment: crop larger than image");
    crop_flip(image, draw, crop_size);
    crop_flip(field, draw, crop_size);
}

Rng element_stream(uint64_t seed, uint64_t step, uint32_t batch_size, uint32_t element) {
    const uint64_t counter = step * batch_size + element;
    return Rng(seed + (counter << 32));
}

Tensor encode_mask(const Tensor& mask, float delta, TrainConfig::Target target) {
    const uint32_t H = mask.dim(1), W = mask.dim(2);
    if (target == TrainConfig::Target::Binary) {
        Tensor out({1, H, W});
        for (std::size_t i = 0; i < mask.numel(); ++i)
            out[i] = mask[i] > 0.5f ? -1.0f : 1.0f;  // negative inside, like the SDF
        return out;
    }
    BinaryMask bm{int(H), int(W)};
    for (std::size_t i = 0; i < mask.numel(); ++i) bm.values[i] = mask[i] > 0.5f ? 1 : 0;
    const Tensor norm = normalize_sdf(sdf_from_mask(bm, delta));
    Tensor out({1, H, W});
    for (std::size_t i = 0; i < norm.numel(); ++i) out[i] = norm[i];
    return out;
}

TrainResult train(const Dataset& dataset, float delta, const ModelDescriptor& desc,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resolved_config_text) {
    cfg.validate();
    if (dataset.size() == 0) throw std::invalid_argument("train: dataset is empty");
    fs::create_directories(out_dir);

    // Encode every mask once up front.
    std::vector<Tensor> encoded(dataset.size());
    parallel_for(dataset.size(), cfg.threads, [&](std::size_t i) {
        encoded[i] = encode_mask(dataset.masks[i], delta, cfg.target);
    });

    ModelParams params = init_params(cfg.seed, desc);
    ModelParams ema = params;
    AdamState adam = AdamState::zeros(desc);
    const AdamConfig adam_cfg{cfg.learning_rate, 0.9, 0.999, 1e-8};

    const uint32_t B = cfg.batch_size;
    const uint64_t steps_per_epoch = (dataset.size() + B - 1) / B;

    const std::string loss_path = (fs::path(out_dir) / "loss.csv").string();
    std::ofstream loss_csv(loss_path);
    if (!loss_csv) throw IoError("cannot open '" + loss_path + "'");
    loss_csv << "epoch,step,loss\n";

    const int threads = effective_threads(cfg.threads);
    std::vector<ModelWorkspace<float>> workspaces(std::min<uint32_t>(B, uint32_t(threads)));
    std::vector<ModelParams> elem_grads(B);
    for (auto& g : elem_grads) g = allocate_params<float>(desc);
    std::vector<double> elem_loss(B, 0.0);
    std::vector<float> elem_t(B, 0.0f);
    std::vector<Tensor> elem_img(B), elem_state(B), elem_target(B);

    ModelParams grads = allocate_params<float>(desc);
    TrainResult result;
    uint64_t global_step = 0;

    // Per-tensor views for the update phase; the fixed for_each order makes
    // the zipped lists line up.
    auto g_list = detail::tensor_list(grads);
    auto p_list = detail::tensor_list(params);
    auto e_list = detail::tensor_list(ema);
    auto m_list = detail::tensor_list(adam.m);
    auto v_list = detail::tensor_list(adam.v);
    std::vector<std::vector<Tensor*>> elem_lists;
    for (auto& eg : elem_grads) elem_lists.push_back(detail::tensor_list(eg));

    double best_loss = std::numeric_limits<double>::infinity();
    const std::string final_path = (fs::path(out_dir) / "checkpoint.fsdf").string();

    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (uint64_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
            // Assemble the batch; each element's draws come from its own
            // stream so assembly may run on any number of workers.
            parallel_for(B, cfg.threads, [&](std::size_t e) {
                Rng rng = element_stream(cfg.seed, global_step, B, uint32_t(e));
                const std::size_t idx = std::size_t(rng.uniform_int(dataset.size()));
                const float t = float(rng.uniform());
                Tensor img = dataset.images[idx];
                Tensor m1 = encoded[idx];
                const AugmentDraw aug = draw_augment(rng, int(img.dim(1)), int(img.dim(2)),
                                                     int(cfg.crop_size));
                apply_augment(img, m1, aug, int(cfg.crop_size));
                Tensor m0(m1.dims());
                for (std::size_t i = 0; i < m0.numel(); ++i) m0[i] = rng.normal_f();

                elem_img[e] = std::move(img);
                elem_state[e] = interpolate_state(m0, m1, t);
                elem_target[e] = training_target(m0, m1);
                elem_t[e] = t;
            });

            // Forward/backward per element. Each element's result is
            // self-contained, so the round-robin split over workspaces only
            // balances load; grads reduce in element order below.
            const std::size_t field_n = elem_state[0].numel();
            const double inv_n = 1.0 / (double(field_n) * double(B));
            const std::size_t n_slots = workspaces.size();
            parallel_for(n_slots, cfg.threads, [&](std::size_t slot) {
                ModelWorkspace<float>& ws = workspaces[slot];
                for (std::size_t e = slot; e < B; e += n_slots) {
                    const Tensor& pred =
                        forward(params, elem_state[e], elem_img[e], elem_t[e], ws);
                    double sq = 0.0;
                    Tensor dout(pred.dims());
                    for (std::size_t i = 0; i < pred.numel(); ++i) {
                        const float diff = pred[i] - elem_target[e][i];
                        sq += double(diff) * diff;
                        dout[i] = float(double(diff) * inv_n);
                    }
                    elem_loss[e] = 0.5 * sq * inv_n;
                    zero_params(elem_grads[e]);
                    backward(params, ws, dout, elem_grads[e]);
                }
            });

            double loss = 0.0;
            for (std::size_t e = 0; e < B; ++e) loss += elem_loss[e];
            if (!std::isfinite(loss))
                throw NumericalError("train: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(s));
            epoch_loss += loss;

            // Reduce, Adam, and EMA tensor by tensor; tensors are independent
            // so the parallel split cannot change any result.
            adam.step += 1;
            const double corr1 = 1.0 - std::pow(adam_cfg.beta1, double(adam.step));
            const double corr2 = 1.0 - std::pow(adam_cfg.beta2, double(adam.step));
            parallel_for(g_list.size(), cfg.threads, [&](std::size_t ti) {
                Tensor& g = *g_list[ti];
                g.fill(0.0f);
                for (std::size_t e = 0; e < B; ++e) {
                    const Tensor& src = *elem_lists[e][ti];
                    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += src[i];
                }
                detail::adam_update_tensor(*p_list[ti], g, *m_list[ti], *v_list[ti],
                                           adam_cfg, corr1, corr2);
                ema_update_tensor(*e_list[ti], *p_list[ti], cfg.ema_decay);
            });
        }

        epoch_loss /= double(steps_per_epoch);
        result.epoch_mean_loss.push_back(epoch_loss);
        loss_csv << epoch << "," << global_step << "," << epoch_loss << "\n";
        loss_csv.flush();

        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint((fs::path(out_dir) / "checkpoint_last.fsdf").string(), params,
                            &ema, resolved_config_text);
            if (epoch_loss <= best_loss) {
                best_loss = epoch_loss;
                save_checkpoint((fs::path(out_dir) / "checkpoint_best.fsdf").string(),
                                params, &ema, resolved_config_text);
            }
        }
    }

    save_checkpoint(final_path, params, &ema, resolved_config_text);
    result.total_steps = global_step;
    result.checkpoint_path = final_path;
    return result;
}

}  // namespace flowsdf
