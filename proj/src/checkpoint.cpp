#include "flowsdf/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <vector>

#include "flowsdf/errors.hpp"

namespace flowsdf {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'D', 'F'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put(std::FILE* f, const void* src, std::size_t n, const std::string& path) {
    if (std::fwrite(src, 1, n, f) != n)
        throw IoError("'" + path + "': short write");
}

void put_u32(std::FILE* f, uint32_t v, const std::string& path) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    put(f, b, 4, path);
}

void put_u16(std::FILE* f, uint16_t v, const std::string& path) {
    uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    put(f, b, 2, path);
}

void put_entry(std::FILE* f, const std::string& name, const Tensor& t,
               const std::string& path) {
    if (name.size() > 0xffff)
        throw std::invalid_argument("checkpoint: parameter name too long");
    put_u16(f, uint16_t(name.size()), path);
    put(f, name.data(), name.size(), path);
    const uint8_t rank = uint8_t(t.rank());
    put(f, &rank, 1, path);
    for (uint32_t d : t.dims()) put_u32(f, d, path);
    put(f, t.data(), t.numel() * 4, path);
}

class Reader {
public:
    Reader(std::FILE* f, const std::string& path) : f_(f), path_(path) {}

    void read(void* dst, std::size_t n, const char* what) {
        const std::size_t got = std::fread(dst, 1, n, f_);
        offset_ += got;
        if (got != n)
            throw IoError("'" + path_ + "': truncated while reading " + what +
                              " at byte offset " + std::to_string(offset_),
                          offset_);
    }

    uint32_t read_u32(const char* what) {
        uint8_t b[4];
        read(b, 4, what);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
               uint32_t(b[3]) << 24;
    }

    uint16_t read_u16(const char* what) {
        uint8_t b[2];
        read(b, 2, what);
        return uint16_t(b[0]) | uint16_t(uint32_t(b[1]) << 8);
    }

    std::size_t offset() const { return offset_; }

private:
    std::FILE* f_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelParams* ema, const std::string& config_text) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open '" + path + "'");

    uint32_t count = 0;
    for_each_param(params, [&](const std::string&, const Tensor&) { ++count; });
    if (ema) count *= 2;
    if (!config_text.empty()) ++count;
    put(f.get(), kMagic, 4, path);
    put_u32(f.get(), kVersion, path);
    put_u32(f.get(), count, path);

    for_each_param(params, [&](const std::string& name, const Tensor& t) {
        put_entry(f.get(), name, t, path);
    });
    if (ema) {
        for_each_param(*ema, [&](const std::string& name, const Tensor& t) {
            put_entry(f.get(), "ema." + name, t, path);
        });
    }
    if (!config_text.empty()) {
        Tensor blob({uint32_t(config_text.size())});
        for (std::size_t i = 0; i < config_text.size(); ++i)
            blob[i] = float(uint8_t(config_text[i]));
        put_entry(f.get(), "meta.config", blob, path);
    }
    if (std::fflush(f.get()) != 0) throw IoError("'" + path + "': flush failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open '" + path + "'");
    Reader r(f.get(), path);

    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("'" + path + "': bad magic at byte offset 0", 0);
    const uint32_t version = r.read_u32("version");
    if (version != kVersion)
        throw IoError("'" + path + "': unsupported version " + std::to_string(version) +
                          " at byte offset 4",
                      4);
    const uint32_t count = r.read_u32("count");

    std::map<std::string, Tensor> entries;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = r.read_u16("name length");
        std::string name(len, '\0');
        r.read(name.data(), len, "name");
        uint8_t rank;
        r.read(&rank, 1, "rank");
        if (rank > 4)
            throw IoError("'" + path + "': rank exceeds 4 at byte offset " +
                              std::to_string(r.offset() - 1),
                          r.offset() - 1);
        std::vector<uint32_t> dims(rank);
        for (auto& d : dims) d = r.read_u32("dims");
        Tensor t(dims);
        r.read(t.data(), t.numel() * 4, "payload");
        entries.emplace(std::move(name), std::move(t));
    }

    Checkpoint ck;
    if (auto it = entries.find("meta.config"); it != entries.end()) {
        ck.config_text.reserve(it->second.numel());
        for (std::size_t i = 0; i < it->second.numel(); ++i)
            ck.config_text.push_back(char(uint8_t(it->second[i])));
    }

    // Reconstruct the architecture from tensor shapes.
    auto need = [&](const char* name) -> const Tensor& {
        auto it = entries.find(name);
        if (it == entries.end())
            throw IoError("'" + path + "': missing parameter '" + std::string(name) + "'");
        return it->second;
    };
    ModelDescriptor desc;
    desc.c1 = need("stem_mask.w").dim(0);
    desc.image_channels = need("stem_image.w").dim(1);
    desc.c2 = need("down1.w").dim(0);
    desc.cb = need("down2.w").dim(0);
    desc.time_dim = need("time.fc1.w").dim(1);
    // `groups` is not recoverable from shapes; take it from the embedded
    // config when present.
    const std::string key = "model.groups = ";
    if (auto pos = ck.config_text.find(key); pos != std::string::npos) {
        desc.groups = uint32_t(std::strtoul(ck.config_text.c_str() + pos + key.size(),
                                            nullptr, 10));
    }
    desc.validate();

    ck.params = allocate_params<float>(desc);
    for_each_param(ck.params, [&](const std::string& name, Tensor& t) {
        const Tensor& src = need(name.c_str());
        if (!t.same_shape(src))
            throw IoError("'" + path + "': parameter '" + name + "' has unexpected shape");
        t = src;
    });

    if (entries.count("ema.out.w")) {
        ck.has_ema = true;
        ck.ema = allocate_params<float>(desc);
        for_each_param(ck.ema, [&](const std::string& name, Tensor& t) {
            const Tensor& src = need(("ema." + name).c_str());
            if (!t.same_shape(src))
                throw IoError("'" + path + "': parameter 'ema." + name +
                              "' has unexpected shape");
            t = src;
        });
    }
    return ck;
}

}  // namespace flowsdf
