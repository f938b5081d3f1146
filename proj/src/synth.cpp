#include "flowsdf/synth.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowsdf/errors.hpp"
#include "flowsdf/rng.hpp"
#include "flowsdf/tensor_io.hpp"

namespace flowsdf {

namespace fs = std::filesystem;

void SyntheticConfig::validate() const {
    if (count < 1) throw ConfigError("synthetic data: count must be >= 1");
    if (size < 8) throw ConfigError("synthetic data: size must be >= 8");
    if (objects_min > objects_max)
        throw ConfigError("synthetic data: objects_min must be <= objects_max");
    if (radius_min < 2.0)
        throw ConfigError("synthetic data: radii must be >= 2 pixels");
    if (radius_max < radius_min)
        throw ConfigError("synthetic data: radius_max must be >= radius_min");
    if (2.0 * radius_min + 1.0 > double(size))
        throw ConfigError("synthetic data: smallest object does not fit in the image");
    if (noise_std < 0.0) throw ConfigError("synthetic data: noise_std must be >= 0");
    if (illum_amp < 0.0) throw ConfigError("synthetic data: illum_amp must be >= 0");
}

namespace {

constexpr double kForegroundLevel = 0.7;
constexpr double kBackgroundLevel = 0.2;
constexpr double kBlurSigma = 1.5;
constexpr int kPlacementAttempts = 100;

void rasterize_ellipse(Tensor& mask, double cx, double cy, double a, double b,
                       double theta) {
    const int s = int(mask.dim(1));
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double dx = double(x) - cx, dy = double(y) - cy;
            const double u = (dx * ct + dy * st) / a;
            const double v = (-dx * st + dy * ct) / b;
            if (u * u + v * v <= 1.0) mask.at(0, y, x) = 1.0f;
        }
    }
}

// Separable Gaussian blur, clamp-to-edge borders.
void gaussian_blur(Tensor& img, double sigma) {
    const int s = int(img.dim(1));
    const int radius = int(std::ceil(2.5 * sigma));
    std::vector<float> kernel(std::size_t(2 * radius) + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-double(i) * i / (2.0 * sigma * sigma));
        kernel[std::size_t(i + radius)] = float(w);
        norm += w;
    }
    for (auto& k : kernel) k = float(double(k) / norm);

    std::vector<float> tmp(std::size_t(s) * s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, s - 1);
                acc += kernel[std::size_t(i + radius)] * img.at(0, y, xx);
            }
            tmp[std::size_t(y) * s + x] = acc;
        }
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, s - 1);
                acc += kernel[std::size_t(i + radius)] * tmp[std::size_t(yy) * s + x];
            }
            img.at(0, y, x) = acc;
        }
}

}  // namespace

SamplePair generate_sample(const SyntheticConfig& cfg, uint32_t sample_index) {
    Rng rng(cfg.seed + sample_index);
    const uint32_t s = cfg.size;
    SamplePair out;
    out.mask = Tensor({1, s, s});
    out.image = Tensor({1, s, s});

    const uint32_t span = cfg.objects_max - cfg.objects_min + 1;
    const uint32_t n_objects = cfg.objects_min + uint32_t(rng.uniform_int(span));

    for (uint32_t obj = 0; obj < n_objects; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            const double a = rng.uniform(cfg.radius_min, cfg.radius_max);
            const double b = rng.uniform(cfg.radius_min, cfg.radius_max);
            const double theta = rng.uniform(0.0, 3.14159265358979323846);
            const double cx = rng.uniform(0.0, double(s - 1));
            const double cy = rng.uniform(0.0, double(s - 1));
            const double ct = std::cos(theta), st = std::sin(theta);
            const double ex = std::sqrt(a * ct * a * ct + b * st * b * st);
            const double ey = std::sqrt(a * st * a * st + b * ct * b * ct);
            if (cx - ex >= -0.5 && cx + ex <= double(s) - 0.5 && cy - ey >= -0.5 &&
                cy + ey <= double(s) - 0.5) {
                rasterize_ellipse(out.mask, cx, cy, a, b, theta);
                placed = true;
            }
        }
        if (!placed) ++out.skipped_objects;
    }

    for (std::size_t i = 0; i < out.image.numel(); ++i)
        out.image[i] = float(kBackgroundLevel +
                             (kForegroundLevel - kBackgroundLevel) * double(out.mask[i]));
    gaussian_blur(out.image, kBlurSigma);

    const double gx = rng.uniform(-cfg.illum_amp, cfg.illum_amp);
    const double gy = rng.uniform(-cfg.illum_amp, cfg.illum_amp);
    for (uint32_t y = 0; y < s; ++y)
        for (uint32_t x = 0; x < s; ++x)
            out.image.at(0, y, x) +=
                float(gx * (double(x) / double(s) - 0.5) + gy * (double(y) / double(s) - 0.5));

    for (std::size_t i = 0; i < out.image.numel(); ++i) {
        const float v = out.image[i] + float(cfg.noise_std * rng.normal());
        out.image[i] = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 init failed");
    }
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx, buf, std::size_t(got)) != 1) {
            EVP_MD_CTX_free(ctx);
            throw IoError("sha256 update failed");
        }
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(std::size_t(len) * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

namespace {

std::string sample_name(const char* kind, uint32_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05u.fstn", kind, i);
    return buf;
}

}  // namespace

GenerateSummary generate(const SyntheticConfig& cfg, const std::string& out_dir,
                         uint32_t index_offset) {
    cfg.validate();
    fs::create_directories(out_dir);

    GenerateSummary summary;
    summary.count = cfg.count;
    double fg_total = 0.0;
    std::vector<uint32_t> skips(cfg.count, 0);

    for (uint32_t i = 0; i < cfg.count; ++i) {
        SamplePair pair = generate_sample(cfg, index_offset + i);
        skips[i] = pair.skipped_objects;
        summary.skipped_objects += pair.skipped_objects;
        double fg = 0.0;
        for (std::size_t j = 0; j < pair.mask.numel(); ++j) fg += double(pair.mask[j]);
        fg_total += fg / double(pair.mask.numel());
        write_tensor((fs::path(out_dir) / sample_name("img", i)).string(), pair.image);
        write_tensor((fs::path(out_dir) / sample_name("mask", i)).string(), pair.mask);
    }
    summary.mean_foreground_fraction = fg_total / double(cfg.count);

    std::ostringstream manifest;
    manifest << "version=1\n";
    manifest << "config.count=" << cfg.count << "\n";
    manifest << "config.size=" << cfg.size << "\n";
    manifest << "config.objects_min=" << cfg.objects_min << "\n";
    manifest << "config.objects_max=" << cfg.objects_max << "\n";
    manifest << "config.radius_min=" << cfg.radius_min << "\n";
    manifest << "config.radius_max=" << cfg.radius_max << "\n";
    manifest << "config.noise_std=" << cfg.noise_std << "\n";
    manifest << "config.illum_amp=" << cfg.illum_amp << "\n";
    manifest << "config.seed=" << cfg.seed << "\n";
    manifest << "config.index_offset=" << index_offset << "\n";
    for (uint32_t i = 0; i < cfg.count; ++i) {
        if (skips[i] > 0)
            manifest << "skip." << sample_name("mask", i) << "=" << skips[i] << "\n";
    }
    for (uint32_t i = 0; i < cfg.count; ++i) {
        for (const char* kind : {"img", "mask"}) {
            const std::string name = sample_name(kind, i);
            manifest << name << " "
                     << sha256_file_hex((fs::path(out_dir) / name).string()) << "\n";
        }
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    std::ofstream mf(manifest_path, std::ios::binary);
    if (!mf) throw IoError("cannot open '" + manifest_path + "'");
    mf << manifest.str();
    mf.close();
    return summary;
}

Dataset load_dataset(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open '" + manifest_path + "'");
    Dataset ds;
    std::string line;
    std::vector<std::string> img_names, mask_names;
    while (std::getline(mf, line)) {
        if (line.empty() || line.find('=') != std::string::npos) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos) continue;
        const std::string name = line.substr(0, space);
        if (name.rfind("img_", 0) == 0) img_names.push_back(name);
        else if (name.rfind("mask_", 0) == 0) mask_names.push_back(name);
    }
    if (img_names.size() != mask_names.size() || img_names.empty())
        throw IoError("'" + manifest_path + "': no usable image/mask pairs listed");
    for (std::size_t i = 0; i < img_names.size(); ++i) {
        ds.images.push_back(read_tensor((fs::path(dir) / img_names[i]).string()));
        ds.masks.push_back(read_tensor((fs::path(dir) / mask_names[i]).string()));
    }
    return ds;
}

void verify_manifest(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open '" + manifest_path + "'");
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty() || line.find('=') != std::string::npos) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos) continue;
        const std::string name = line.substr(0, space);
        const std::string expect = line.substr(space + 1);
        const std::string actual = sha256_file_hex((fs::path(dir) / name).string());
        if (actual != expect)
            throw IoError("'" + dir + "/" + name + "': checksum mismatch");
    }
}

}  // namespace flowsdf
