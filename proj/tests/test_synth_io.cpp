#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flowsdf/errors.hpp"
#include "flowsdf/synth.hpp"
#include "flowsdf/tensor_io.hpp"
#include "support.hpp"

using namespace flowsdf;
using testsupport::Rng;

namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("flowsdf_io_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::vector<char> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generate: byte-identical datasets for identical config and seed") {
    SyntheticConfig cfg;
    cfg.count = 4;
    cfg.size = 16;
    cfg.radius_min = 2;
    cfg.radius_max = 4;
    const std::string d1 = fresh_dir("gen1");
    const std::string d2 = fresh_dir("gen2");
    generate(cfg, d1);
    generate(cfg, d2);
    for (const auto& entry : fs::directory_iterator(d1)) {
        const std::string name = entry.path().filename().string();
        CHECK(file_bytes(d1 + "/" + name) == file_bytes(d2 + "/" + name));
    }
    verify_manifest(d1);
}

TEST_CASE("generate: zero objects gives background-only masks") {
    SyntheticConfig cfg;
    cfg.count = 3;
    cfg.size = 16;
    cfg.objects_min = 0;
    cfg.objects_max = 0;
    for (uint32_t i = 0; i < cfg.count; ++i) {
        const SamplePair p = generate_sample(cfg, i);
        for (std::size_t j = 0; j < p.mask.numel(); ++j) CHECK(p.mask[j] == 0.0f);
        // image stays near the background level plus noise and illumination
        for (std::size_t j = 0; j < p.image.numel(); ++j) {
            CHECK(p.image[j] >= 0.0f);
            CHECK(p.image[j] <= 1.0f);
            CHECK(std::abs(p.image[j] - 0.2f) < 0.5f);
        }
    }
}

TEST_CASE("generate: mean foreground fraction in the calibrated range") {
    SyntheticConfig cfg;  // defaults: 32x32, 2-4 ellipses, radii 3-7
    double acc = 0.0;
    for (uint32_t i = 0; i < 200; ++i) {
        const SamplePair p = generate_sample(cfg, i);
        double fg = 0.0;
        for (std::size_t j = 0; j < p.mask.numel(); ++j) fg += double(p.mask[j]);
        acc += fg / double(p.mask.numel());
    }
    acc /= 200.0;
    CHECK(acc >= 0.1);
    CHECK(acc <= 0.5);
}

TEST_CASE("generate: every non-empty mask has a boundary") {
    SyntheticConfig cfg;
    for (uint32_t i = 0; i < 20; ++i) {
        const SamplePair p = generate_sample(cfg, i);
        BinaryMask m{int(p.mask.dim(1)), int(p.mask.dim(2))};
        bool any = false;
        for (std::size_t j = 0; j < p.mask.numel(); ++j) {
            m.values[j] = p.mask[j] > 0.5f ? 1 : 0;
            any |= m.values[j] != 0;
        }
        if (!any) continue;
        const BinaryMask b = boundary_pixels(m);
        bool has_boundary = false;
        for (auto v : b.values) has_boundary |= v != 0;
        CHECK(has_boundary);
    }
}

TEST_CASE("generate: config validation") {
    SyntheticConfig cfg;
    cfg.radius_min = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SyntheticConfig{};
    cfg.radius_min = 10;
    cfg.radius_max = 12;
    cfg.size = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // smallest object cannot fit
    cfg = SyntheticConfig{};
    cfg.objects_min = 5;
    cfg.objects_max = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("tensor io: bitwise round-trip including negative zero") {
    Rng rng(50);
    Tensor t({3, 4});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform(-5, 5));
    t[0] = -0.0f;
    t[1] = 0.0f;
    const std::string path = fresh_dir("tensor") + "/t.fstn";
    write_tensor(path, t);
    const Tensor back = read_tensor(path);
    REQUIRE(back.dims() == t.dims());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        uint32_t a, b;
        std::memcpy(&a, &t[i], 4);
        std::memcpy(&b, &back[i], 4);
        CHECK(a == b);  // bitwise, distinguishes -0 from +0
    }
}

TEST_CASE("tensor io: zero-sized dimension round-trips") {
    Tensor t({2, 0, 3});
    const std::string path = fresh_dir("tensor0") + "/empty.fstn";
    write_tensor(path, t);
    const Tensor back = read_tensor(path);
    CHECK(back.dims() == std::vector<uint32_t>{2, 0, 3});
    CHECK(back.numel() == 0);
}

TEST_CASE("tensor io: truncation reports the failing byte offset") {
    Tensor t({2, 2});
    for (std::size_t i = 0; i < 4; ++i) t[i] = float(i);
    const std::string dir = fresh_dir("trunc");
    const std::string path = dir + "/t.fstn";
    write_tensor(path, t);
    const auto full = file_bytes(path);
    // header: magic(4) + version(4) + rank(1) + dims(8) = 17, payload 16
    REQUIRE(full.size() == 33);

    for (std::size_t cut : {2ul, 6ul, 9ul, 13ul, 20ul, 32ul}) {
        const std::string cut_path = dir + "/cut.fstn";
        std::ofstream out(cut_path, std::ios::binary);
        out.write(full.data(), std::streamsize(cut));
        out.close();
        try {
            read_tensor(cut_path);
            FAIL("expected IoError for truncation at " << cut);
        } catch (const IoError& e) {
            CHECK(e.offset() == cut);
            CHECK(std::string(e.what()).find(std::to_string(cut)) != std::string::npos);
        }
    }
}

TEST_CASE("tensor io: bad magic and bad version carry offsets") {
    const std::string dir = fresh_dir("bad");
    {
        std::ofstream out(dir + "/magic.fstn", std::ios::binary);
        out << "NOPE" << std::string(20, '\0');
    }
    try {
        read_tensor(dir + "/magic.fstn");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.offset() == 0);
    }
    {
        std::ofstream out(dir + "/ver.fstn", std::ios::binary);
        const uint32_t bad_version = 9;
        out << "FSTN";
        out.write(reinterpret_cast<const char*>(&bad_version), 4);
        out << std::string(8, '\0');
    }
    try {
        read_tensor(dir + "/ver.fstn");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.offset() == 4);
    }
}

TEST_CASE("pgm: linear map endpoints and round-half-away-from-zero midpoint") {
    Tensor t({1, 3});
    t[0] = -2.0f;
    t[1] = 0.0f;
    t[2] = 2.0f;
    const std::string path = fresh_dir("pgm") + "/t.pgm";
    write_pgm(path, t, -2.0f, 2.0f);
    const PgmImage img = read_pgm(path);
    REQUIRE(img.width == 3);
    REQUIRE(img.height == 1);
    CHECK(img.pixels[0] == 0);
    CHECK(img.pixels[1] == 128);  // 127.5 rounds away from zero
    CHECK(img.pixels[2] == 255);
}

TEST_CASE("pgm: binary masks map to {0, 255}") {
    Tensor t({2, 2});
    t[0] = 0.0f;
    t[1] = 1.0f;
    t[2] = 1.0f;
    t[3] = 0.0f;
    const std::string path = fresh_dir("pgmmask") + "/m.pgm";
    write_pgm(path, t, 0.0f, 1.0f);
    const PgmImage img = read_pgm(path);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK((img.pixels[i] == 0 || img.pixels[i] == 255));
    const BinaryMask m = mask_from_pgm(img);
    CHECK(m.values == std::vector<uint8_t>{0, 1, 1, 0});
}

TEST_CASE("pgm: malformed header is rejected") {
    const std::string dir = fresh_dir("pgmbad");
    {
        std::ofstream out(dir + "/bad.pgm", std::ios::binary);
        out << "P6\n2 2\n255\n....";
    }
    CHECK_THROWS_AS(read_pgm(dir + "/bad.pgm"), IoError);
    {
        std::ofstream out(dir + "/hdr.pgm", std::ios::binary);
        out << "P5\nxy 2\n255\n....";
    }
    CHECK_THROWS_AS(read_pgm(dir + "/hdr.pgm"), IoError);
    CHECK_THROWS_AS(write_pgm(dir + "/o.pgm", Tensor({2, 2}), 1.0f, 1.0f),
                    std::invalid_argument);
}

TEST_CASE("manifest: checksum mismatch is detected") {
    SyntheticConfig cfg;
    cfg.count = 2;
    cfg.size = 16;
    cfg.radius_min = 2;
    cfg.radius_max = 4;
    const std::string dir = fresh_dir("mani");
    generate(cfg, dir);
    verify_manifest(dir);
    // corrupt one payload byte
    std::fstream f(dir + "/img_00001.fstn",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(20);
    char c;
    f.seekg(20);
    f.get(c);
    f.seekp(20);
    c = char(c ^ 0x40);
    f.put(c);
    f.close();
    CHECK_THROWS_AS(verify_manifest(dir), IoError);
}
