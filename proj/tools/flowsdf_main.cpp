// flowsdf: image-guided flow matching over truncated signed-distance masks.
// Subcommands cover the full pipeline: synthetic data generation, SDF
// conversion, training, sampling with uncertainty maps, evaluation, and
// ablation reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flowsdf/checkpoint.hpp"
#include "flowsdf/config.hpp"
#include "flowsdf/errors.hpp"
#include "flowsdf/eval_harness.hpp"
#include "flowsdf/metrics.hpp"
#include "flowsdf/sampler.hpp"
#include "flowsdf/sdf.hpp"
#include "flowsdf/synth.hpp"
#include "flowsdf/tensor_io.hpp"
#include "flowsdf/train.hpp"

namespace fs = std::filesystem;
using namespace flowsdf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct CommonArgs {
    std::string out_dir;
    std::string config_file;
    std::vector<std::string> sets;
    int threads = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--out", args.out_dir, "Output directory (created if needed)")
        ->required();
    cmd->add_option("--config", args.config_file, "Configuration file (key = value lines)");
    cmd->add_option("--set", args.sets, "Override a config key (key=value, repeatable)");
    cmd->add_option("--threads", args.threads, "Worker thread cap (0 = all cores)");
}

RunConfig build_config(const CommonArgs& args, const std::string& command) {
    RunConfig cfg;
    if (!args.config_file.empty()) cfg.load_file(args.config_file);
    for (const auto& kv : args.sets) cfg.set_kv(kv);
    if (args.threads >= 0) cfg.set("threads", std::to_string(args.threads));
    if (cfg.was_set("run.command") && cfg.get("run.command") != command)
        throw ConfigError("config was resolved for subcommand '" + cfg.get("run.command") +
                          "', not '" + command + "'");
    cfg.set("run.command", command);
    return cfg;
}

void write_resolved(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "resolved.cfg").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "'");
    out << cfg.serialized();
}

void require_file(const RunConfig& cfg, const std::string& key) {
    if (!cfg.has(key)) throw ConfigError("missing required path '" + key + "'");
    if (!fs::exists(cfg.get(key)))
        throw IoError("missing file '" + cfg.get(key) + "' (from '" + key + "')");
}

void require_dir(const RunConfig& cfg, const std::string& key) {
    if (!cfg.has(key)) throw ConfigError("missing required path '" + key + "'");
    if (!fs::is_directory(cfg.get(key)))
        throw IoError("missing directory '" + cfg.get(key) + "' (from '" + key + "')");
}

// Adopt model/data facts recorded in the checkpoint unless the caller
// explicitly overrode them.
void adopt_checkpoint_config(RunConfig& cfg, const Checkpoint& ck) {
    if (ck.config_text.empty()) return;
    RunConfig embedded;
    std::istringstream in(ck.config_text);
    std::string line;
    const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        try {
            embedded.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError&) {
            // tolerate unknown keys written by other versions
        }
    }
    for (const char* key : {"sdf.delta", "train.target", "model.c1", "model.c2",
                            "model.cb", "model.time_dim", "model.groups"}) {
        if (!cfg.was_set(key) && embedded.was_set(key)) cfg.set(key, embedded.get(key));
    }
}

Tensor load_image_any(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
        const PgmImage img = read_pgm(path);
        Tensor t({1, uint32_t(img.height), uint32_t(img.width)});
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            t[i] = float(img.pixels[i]) / 255.0f;
        return t;
    }
    Tensor t = read_tensor(path);
    if (t.rank() == 2) t.reshape({1, t.dim(0), t.dim(1)});
    if (t.rank() != 3)
        throw IoError("'" + path + "': expected a rank-2 or rank-3 tensor image");
    return t;
}

Tensor mask_to_tensor(const BinaryMask& m) {
    Tensor t({uint32_t(m.height), uint32_t(m.width)});
    for (std::size_t i = 0; i < m.values.size(); ++i) t[i] = float(m.values[i]);
    return t;
}

// ---- subcommands ------------------------------------------------------------

int run_make_data(const CommonArgs& args) {
    RunConfig cfg = build_config(args, "make-data");
    write_resolved(cfg, args.out_dir);

    SyntheticConfig scfg = cfg.synthetic_config();
    const uint32_t n_train = uint32_t(cfg.get_int("data.count_train"));
    const uint32_t n_test = uint32_t(cfg.get_int("data.count_test"));

    scfg.count = n_train;
    const GenerateSummary train_sum =
        generate(scfg, (fs::path(args.out_dir) / "train").string(), 0);
    scfg.count = n_test;
    const GenerateSummary test_sum =
        generate(scfg, (fs::path(args.out_dir) / "test").string(), n_train);

    std::cout << "wrote " << train_sum.count << " train / " << test_sum.count
              << " test samples (mean foreground fraction "
              << train_sum.mean_foreground_fraction << ")\n";
    return kExitOk;
}

int run_sdf(const CommonArgs& args) {
    RunConfig cfg = build_config(args, "sdf");
    require_file(cfg, "io.mask");
    write_resolved(cfg, args.out_dir);

    const float delta = float(cfg.get_double("sdf.delta"));
    const std::string mask_path = cfg.get("io.mask");
    BinaryMask mask;
    if (mask_path.size() >= 4 && mask_path.compare(mask_path.size() - 4, 4, ".pgm") == 0) {
        mask = mask_from_pgm(read_pgm(mask_path));
    } else {
        const Tensor t = load_image_any(mask_path);
        mask = BinaryMask(int(t.dim(1)), int(t.dim(2)));
        for (std::size_t i = 0; i < mask.values.size(); ++i)
            mask.values[i] = t[i] > 0.5f ? 1 : 0;
    }

    const SdfMask sdf = sdf_from_mask(mask, delta);
    Tensor field({uint32_t(sdf.height), uint32_t(sdf.width)});
    for (std::size_t i = 0; i < sdf.values.size(); ++i) field[i] = sdf.values[i];
    write_tensor((fs::path(args.out_dir) / "sdf.fstn").string(), field);
    write_pgm((fs::path(args.out_dir) / "sdf.pgm").string(), field, -delta, delta);
    std::cout << "wrote sdf.fstn and sdf.pgm (delta " << delta << ")\n";
    return kExitOk;
}

int run_train(const CommonArgs& args) {
    RunConfig cfg = build_config(args, "train");
    require_dir(cfg, "data.dir");
    write_resolved(cfg, args.out_dir);

    const Dataset dataset = load_dataset(cfg.get("data.dir"));
    const TrainConfig tcfg = cfg.train_config();
    const ModelDescriptor desc = cfg.model_descriptor();
    const float delta = float(cfg.get_double("sdf.delta"));
    const TrainResult result =
        train(dataset, delta, desc, tcfg, args.out_dir, cfg.serialized());
    std::cout << "trained " << result.total_steps << " steps; final epoch loss "
              << result.epoch_mean_loss.back() << "; checkpoint at "
              << result.checkpoint_path << "\n";
    return kExitOk;
}

int run_sample(const CommonArgs& args) {
    RunConfig cfg = build_config(args, "sample");
    require_file(cfg, "io.checkpoint");
    require_file(cfg, "io.image");

    const Checkpoint ck = load_checkpoint(cfg.get("io.checkpoint"));
    adopt_checkpoint_config(cfg, ck);
    write_resolved(cfg, args.out_dir);

    const Tensor image = load_image_any(cfg.get("io.image"));
    const SamplerConfig scfg = cfg.sampler_config();
    const float delta = float(cfg.get_double("sdf.delta"));
    const ModelParams& params = select_params(ck, scfg.use_ema);

    const EnsembleStats stats = ensemble(params, image, scfg, delta);

    Tensor mean({uint32_t(stats.mean.height), uint32_t(stats.mean.width)});
    for (std::size_t i = 0; i < stats.mean.values.size(); ++i)
        mean[i] = stats.mean.values[i];
    write_tensor((fs::path(args.out_dir) / "mean_sdf.fstn").string(), mean);
    write_pgm((fs::path(args.out_dir) / "mean_sdf.pgm").string(), mean, -delta, delta);
    const Tensor mask = mask_to_tensor(stats.consensus);
    write_tensor((fs::path(args.out_dir) / "mask.fstn").string(), mask);
    write_pgm((fs::path(args.out_dir) / "mask.pgm").string(), mask, 0.0f, 1.0f);
    write_tensor((fs::path(args.out_dir) / "variance.fstn").string(), stats.variance);
    write_tensor((fs::path(args.out_dir) / "std.fstn").string(), stats.stddev);
    write_pgm((fs::path(args.out_dir) / "std.pgm").string(), stats.stddev, 0.0f, delta);
    std::cout << "wrote mean_sdf, mask, variance, std (K = " << scfg.ensemble
              << ", T = " << scfg.noise_steps << ", NFE = " << scfg.nfe << ")\n";
    return kExitOk;
}

int run_eval(const CommonArgs& args) {
    RunConfig cfg = build_config(args, "eval");
    require_file(cfg, "io.checkpoint");
    require_dir(cfg, "data.dir");

    const Checkpoint ck = load_checkpoint(cfg.get("io.checkpoint"));
    adopt_checkpoint_config(cfg, ck);
    write_resolved(cfg, args.out_dir);

    const Dataset dataset = load_dataset(cfg.get("data.dir"));
    EvalOptions opts;
    opts.sampler = cfg.sampler_config();
    opts.delta = float(cfg.get_double("sdf.delta"));
    opts.target = cfg.train_config().target;
    if (opts.target == TrainConfig::Target::Binary) opts.delta = 1.0f;
    opts.patch = int(cfg.get_int("eval.patch"));
    opts.stride = int(cfg.get_int("eval.stride"));

    const EvalResult result =
        evaluate_dataset(select_params(ck, opts.sampler.use_ema), dataset, opts);

    const std::string csv_path = (fs::path(args.out_dir) / "metrics.csv").string();
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot open '" + csv_path + "'");
    csv << "image,f1,iou\n";
    for (std::size_t i = 0; i < result.per_image.size(); ++i)
        csv << i << "," << result.per_image[i].f1 << "," << result.per_image[i].iou
            << "\n";
    csv << "mean," << result.mean_f1 << "," << result.mean_iou << "\n";
    std::cout << "mean f1 " << result.mean_f1 << ", mean iou " << result.mean_iou
              << " over " << result.per_image.size() << " images\n";
    return kExitOk;
}

int run_ablate(const CommonArgs& args, const std::string& mode) {
    if (mode != "k" && mode != "sdf")
        throw ConfigError("ablate: --mode must be 'k' or 'sdf'");
    RunConfig cfg = build_config(args, "ablate");
    require_file(cfg, "io.checkpoint");
    require_dir(cfg, "data.dir");

    const Checkpoint ck = load_checkpoint(cfg.get("io.checkpoint"));
    adopt_checkpoint_config(cfg, ck);

    const Dataset dataset = load_dataset(cfg.get("data.dir"));
    EvalOptions opts;
    opts.sampler = cfg.sampler_config();
    opts.delta = float(cfg.get_double("sdf.delta"));
    opts.patch = int(cfg.get_int("eval.patch"));
    opts.stride = int(cfg.get_int("eval.stride"));

    if (mode == "k") {
        write_resolved(cfg, args.out_dir);
        const std::string csv = ablate_k_csv(
            select_params(ck, opts.sampler.use_ema), dataset, opts,
            cfg.get_int_list("ablate.k_values"), uint32_t(cfg.get_int("ablate.reps")));
        const std::string path = (fs::path(args.out_dir) / "ablate_k.csv").string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "'");
        out << csv;
        std::cout << csv;
        return kExitOk;
    }

    require_file(cfg, "io.checkpoint_binary");
    write_resolved(cfg, args.out_dir);
    const Checkpoint ck_bin = load_checkpoint(cfg.get("io.checkpoint_binary"));
    const std::string csv =
        ablate_sdf_csv(select_params(ck, opts.sampler.use_ema),
                       select_params(ck_bin, opts.sampler.use_ema), dataset, opts);
    const std::string path = (fs::path(args.out_dir) / "ablate_sdf.csv").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "'");
    out << csv;
    std::cout << csv;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "flowsdf: conditional flow matching over truncated signed-distance masks"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 ok; 2 config error (unknown key, invalid value);\n"
        "3 I/O error (missing or malformed file); 4 numerical failure.\n"
        "Every subcommand writes the fully resolved configuration to\n"
        "<out>/resolved.cfg; re-running with --config <that file> reproduces\n"
        "the outputs bit for bit.");

    CommonArgs make_args, sdf_args, train_args, sample_args, eval_args, ablate_args;
    std::string ablate_mode;

    CLI::App* cmd_make = app.add_subcommand("make-data", "Generate a synthetic dataset");
    add_common(cmd_make, make_args);

    CLI::App* cmd_sdf = app.add_subcommand(
        "sdf", "Convert a binary mask to a truncated SDF tensor + PGM preview");
    add_common(cmd_sdf, sdf_args);
    std::string sdf_mask;
    double sdf_delta = -1.0;
    cmd_sdf->add_option("--mask", sdf_mask, "Mask file (.pgm or .fstn)");
    cmd_sdf->add_option("--delta", sdf_delta, "Truncation radius in pixels");

    CLI::App* cmd_train = app.add_subcommand("train", "Train the vector-field model");
    add_common(cmd_train, train_args);
    std::string train_data;
    cmd_train->add_option("--data", train_data, "Training dataset directory");

    CLI::App* cmd_sample =
        app.add_subcommand("sample", "Sample segmentation SDFs with uncertainty maps");
    add_common(cmd_sample, sample_args);
    std::string sample_ckpt, sample_image;
    int64_t sample_nfe = -1, sample_T = -1, sample_K = -1, sample_seed = INT64_MIN;
    std::string sample_solver;
    cmd_sample->add_option("--checkpoint", sample_ckpt, "Trained checkpoint (.fsdf)");
    cmd_sample->add_option("--image", sample_image, "Conditioning image (.fstn or .pgm)");
    cmd_sample->add_option("--nfe", sample_nfe, "Field evaluations per integration");
    cmd_sample->add_option("--T", sample_T, "Noise injection steps (1 = plain ODE)");
    cmd_sample->add_option("--K", sample_K, "Ensemble size");
    cmd_sample->add_option("--seed", sample_seed, "Sampler seed");
    cmd_sample->add_option("--solver", sample_solver, "euler|midpoint|rk4");

    CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    add_common(cmd_eval, eval_args);
    std::string eval_ckpt, eval_data;
    int64_t eval_K = -1, eval_patch = -1, eval_stride = -1, eval_seed = INT64_MIN;
    cmd_eval->add_option("--checkpoint", eval_ckpt, "Trained checkpoint (.fsdf)");
    cmd_eval->add_option("--data", eval_data, "Evaluation dataset directory");
    cmd_eval->add_option("--K", eval_K, "Ensemble size");
    cmd_eval->add_option("--patch", eval_patch, "Patch size for tiled inference (0 = off)");
    cmd_eval->add_option("--stride", eval_stride, "Patch stride (0 = patch size)");
    cmd_eval->add_option("--seed", eval_seed, "Sampler seed");

    CLI::App* cmd_ablate = app.add_subcommand("ablate", "Ablation reports (mode k or sdf)");
    add_common(cmd_ablate, ablate_args);
    std::string ablate_ckpt, ablate_ckpt_bin, ablate_data;
    cmd_ablate->add_option("--mode", ablate_mode, "k | sdf")->required();
    cmd_ablate->add_option("--checkpoint", ablate_ckpt, "Primary (SDF) checkpoint");
    cmd_ablate->add_option("--checkpoint-binary", ablate_ckpt_bin,
                           "Binary-variant checkpoint (mode sdf)");
    cmd_ablate->add_option("--data", ablate_data, "Evaluation dataset directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (cmd_make->parsed()) return run_make_data(make_args);
        if (cmd_sdf->parsed()) {
            if (!sdf_mask.empty()) sdf_args.sets.push_back("io.mask=" + sdf_mask);
            if (sdf_delta > 0)
                sdf_args.sets.push_back("sdf.delta=" + std::to_string(sdf_delta));
            return run_sdf(sdf_args);
        }
        if (cmd_train->parsed()) {
            if (!train_data.empty()) train_args.sets.push_back("data.dir=" + train_data);
            return run_train(train_args);
        }
        if (cmd_sample->parsed()) {
            auto& s = sample_args.sets;
            if (!sample_ckpt.empty()) s.push_back("io.checkpoint=" + sample_ckpt);
            if (!sample_image.empty()) s.push_back("io.image=" + sample_image);
            if (sample_nfe >= 0) s.push_back("sampler.nfe=" + std::to_string(sample_nfe));
            if (sample_T >= 0) s.push_back("sampler.noise_steps=" + std::to_string(sample_T));
            if (sample_K >= 0) s.push_back("sampler.k=" + std::to_string(sample_K));
            if (sample_seed != INT64_MIN)
                s.push_back("sampler.seed=" + std::to_string(sample_seed));
            if (!sample_solver.empty()) s.push_back("sampler.solver=" + sample_solver);
            return run_sample(sample_args);
        }
        if (cmd_eval->parsed()) {
            auto& s = eval_args.sets;
            if (!eval_ckpt.empty()) s.push_back("io.checkpoint=" + eval_ckpt);
            if (!eval_data.empty()) s.push_back("data.dir=" + eval_data);
            if (eval_K >= 0) s.push_back("sampler.k=" + std::to_string(eval_K));
            if (eval_patch >= 0) s.push_back("eval.patch=" + std::to_string(eval_patch));
            if (eval_stride >= 0) s.push_back("eval.stride=" + std::to_string(eval_stride));
            if (eval_seed != INT64_MIN)
                s.push_back("sampler.seed=" + std::to_string(eval_seed));
            return run_eval(eval_args);
        }
        if (cmd_ablate->parsed()) {
            auto& s = ablate_args.sets;
            if (!ablate_ckpt.empty()) s.push_back("io.checkpoint=" + ablate_ckpt);
            if (!ablate_ckpt_bin.empty())
                s.push_back("io.checkpoint_binary=" + ablate_ckpt_bin);
            if (!ablate_data.empty()) s.push_back("data.dir=" + ablate_data);
            return run_ablate(ablate_args, ablate_mode);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitConfig;
}
