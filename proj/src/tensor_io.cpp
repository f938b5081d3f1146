#include "flowsdf/tensor_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "flowsdf/errors.hpp"

namespace flowsdf {

namespace {

constexpr char kTensorMagic[4] = {'F', 'S', 'T', 'N'};
constexpr uint32_t kTensorVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path + "'");
    return f;
}

// Tracks the byte offset so failures can be located precisely.
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

    uint8_t read_u8(const char* what) {
        uint8_t b;
        read(&b, 1, what);
        return b;
    }

    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

private:
    std::FILE* f_;
    std::string path_;
    std::size_t offset_ = 0;
};

void write_bytes(std::FILE* f, const void* src, std::size_t n, const std::string& path) {
    if (std::fwrite(src, 1, n, f) != n)
        throw IoError("'" + path + "': short write");
}

void write_u32(std::FILE* f, uint32_t v, const std::string& path) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    write_bytes(f, b, 4, path);
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& tensor) {
    if (tensor.rank() > 4)
        throw std::invalid_argument("write_tensor: rank must be <= 4");
    FilePtr f = open_file(path, "wb");
    write_bytes(f.get(), kTensorMagic, 4, path);
    write_u32(f.get(), kTensorVersion, path);
    const uint8_t rank = uint8_t(tensor.rank());
    write_bytes(f.get(), &rank, 1, path);
    for (uint32_t d : tensor.dims()) write_u32(f.get(), d, path);
    static_assert(sizeof(float) == 4);
    write_bytes(f.get(), tensor.data(), tensor.numel() * 4, path);
    if (std::fflush(f.get()) != 0) throw IoError("'" + path + "': flush failed");
}

Tensor read_tensor(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    Reader r(f.get(), path);

    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kTensorMagic, 4) != 0)
        throw IoError("'" + path + "': bad magic at byte offset 0", 0);
    const uint32_t version = r.read_u32("version");
    if (version != kTensorVersion)
        throw IoError("'" + path + "': unsupported version " + std::to_string(version) +
                          " at byte offset 4",
                      4);
    const uint8_t rank = r.read_u8("rank");
    if (rank > 4)
        throw IoError("'" + path + "': rank " + std::to_string(rank) +
                          " exceeds 4 at byte offset 8",
                      8);
    std::vector<uint32_t> dims(rank);
    for (auto& d : dims) d = r.read_u32("dims");
    Tensor out(dims);
    r.read(out.data(), out.numel() * 4, "payload");
    return out;
}

void write_pgm(const std::string& path, const Tensor& field, float lo, float hi) {
    if (!(hi > lo)) throw std::invalid_argument("write_pgm: requires hi > lo");
    if (field.rank() != 2 && !(field.rank() == 3 && field.dim(0) == 1))
        throw std::invalid_argument("write_pgm: expected H*W or 1*H*W field");
    const uint32_t h = field.rank() == 2 ? field.dim(0) : field.dim(1);
    const uint32_t w = field.rank() == 2 ? field.dim(1) : field.dim(2);

    FilePtr f = open_file(path, "wb");
    const std::string header =
        "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    write_bytes(f.get(), header.data(), header.size(), path);
    std::vector<uint8_t> row(w);
    const float scale = 255.0f / (hi - lo);
    for (uint32_t y = 0; y < h; ++y) {
        for (uint32_t x = 0; x < w; ++x) {
            const double v = std::round(double(field[std::size_t(y) * w + x] - lo) * scale);
            row[x] = uint8_t(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
        }
        write_bytes(f.get(), row.data(), row.size(), path);
    }
    if (std::fflush(f.get()) != 0) throw IoError("'" + path + "': flush failed");
}

namespace {

int pgm_next_token(Reader& r) {
    // Skips whitespace and '#' comments, then parses a decimal integer.
    int c;
    uint8_t b;
    for (;;) {
        r.read(&b, 1, "header");
        c = b;
        if (c == '#') {
            do {
                r.read(&b, 1, "header");
            } while (b != '\n');
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (!std::isdigit(c))
        throw IoError("'" + r.path() + "': malformed header at byte offset " +
                          std::to_string(r.offset() - 1),
                      r.offset() - 1);
    long v = 0;
    while (std::isdigit(c)) {
        v = v * 10 + (c - '0');
        r.read(&b, 1, "header");
        c = b;
    }
    if (!std::isspace(c))
        throw IoError("'" + r.path() + "': malformed header at byte offset " +
                          std::to_string(r.offset() - 1),
                      r.offset() - 1);
    return int(v);
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    Reader r(f.get(), path);
    char magic[2];
    r.read(magic, 2, "magic");
    if (magic[0] != 'P' || magic[1] != '5')
        throw IoError("'" + path + "': not a binary PGM (P5) at byte offset 0", 0);
    PgmImage img;
    img.width = pgm_next_token(r);
    img.height = pgm_next_token(r);
    const int maxval = pgm_next_token(r);
    if (img.width <= 0 || img.height <= 0 || maxval != 255)
        throw IoError("'" + path + "': unsupported PGM header at byte offset " +
                          std::to_string(r.offset()),
                      r.offset());
    img.pixels.resize(std::size_t(img.width) * img.height);
    r.read(img.pixels.data(), img.pixels.size(), "pixels");
    return img;
}

BinaryMask mask_from_pgm(const PgmImage& img) {
    BinaryMask m(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        m.values[i] = img.pixels[i] >= 128 ? 1 : 0;
    return m;
}

}  // namespace flowsdf
