#include "flowsdf/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowsdf {

BinaryMask boundary_pixels(const BinaryMask& mask) {
    const int h = mask.height, w = mask.width;
    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const bool bg_neighbor =
                (y > 0 && !mask.at(y - 1, x)) || (y + 1 < h && !mask.at(y + 1, x)) ||
                (x > 0 && !mask.at(y, x - 1)) || (x + 1 < w && !mask.at(y, x + 1));
            if (bg_neighbor) out.at(y, x) = 1;
        }
    }
    return out;
}

namespace {

// 1D squared-distance lower envelope over the finite parabolas
// f[q] + (x - q)^2. Entries equal to DistanceMap::kInfinity are absent.
// All finite quantities are small integers, so the double-valued
// intersection abscissae are exact where it matters (ties give equal
// distances either way).
void envelope_1d(const int64_t* f, int n, int64_t* d, std::vector<int>& v,
                 std::vector<double>& z) {
    v.clear();
    z.assign(std::size_t(n) + 1, 0.0);
    constexpr double kHuge = std::numeric_limits<double>::infinity();

    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == DistanceMap::kInfinity) continue;
        const double fq = static_cast<double>(f[q]);
        double s = 0.0;
        while (k >= 0) {
            const int p = v[std::size_t(k)];
            s = (fq + double(q) * q - (double(f[p]) + double(p) * p)) /
                (2.0 * (q - p));
            if (s > z[std::size_t(k)]) break;
            --k;
        }
        if (k < 0) {
            k = 0;
            v.assign(1, q);
            z[0] = -kHuge;
            z[1] = kHuge;
        } else {
            ++k;
            if (std::size_t(k) < v.size())
                v[std::size_t(k)] = q;
            else
                v.push_back(q);
            z[std::size_t(k)] = s;
            z[std::size_t(k) + 1] = kHuge;
        }
    }

    if (k < 0) {
        std::fill(d, d + n, DistanceMap::kInfinity);
        return;
    }
    int j = 0;
    for (int x = 0; x < n; ++x) {
        while (z[std::size_t(j) + 1] < double(x)) ++j;
        const int64_t dx = x - v[std::size_t(j)];
        d[x] = f[v[std::size_t(j)]] + dx * dx;
    }
}

}  // namespace

DistanceMap edt_squared(const BinaryMask& seeds) {
    const int h = seeds.height, w = seeds.width;
    DistanceMap out(h, w);

    // Column pass: nearest seed within each column, via up/down run counts.
    constexpr int kNoSeed = std::numeric_limits<int>::max() / 2;
    std::vector<int> run(std::size_t(h), 0);
    for (int x = 0; x < w; ++x) {
        int cnt = kNoSeed;
        for (int y = 0; y < h; ++y) {
            cnt = seeds.at(y, x) ? 0 : std::min(cnt + 1, kNoSeed);
            run[std::size_t(y)] = cnt;
        }
        cnt = kNoSeed;
        for (int y = h - 1; y >= 0; --y) {
            cnt = seeds.at(y, x) ? 0 : std::min(cnt + 1, kNoSeed);
            run[std::size_t(y)] = std::min(run[std::size_t(y)], cnt);
        }
        for (int y = 0; y < h; ++y) {
            const int r = run[std::size_t(y)];
            out.at(y, x) =
                r >= kNoSeed ? DistanceMap::kInfinity : int64_t(r) * r;
        }
    }

    // Row pass: combine columns through the parabola envelope.
    std::vector<int64_t> frow(std::size_t(w), 0);
    std::vector<int64_t> drow(std::size_t(w), 0);
    std::vector<int> v;
    std::vector<double> z;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) frow[std::size_t(x)] = out.at(y, x);
        envelope_1d(frow.data(), w, drow.data(), v, z);
        for (int x = 0; x < w; ++x) out.at(y, x) = drow[std::size_t(x)];
    }
    return out;
}

SdfMask sdf_from_mask(const BinaryMask& mask, float delta) {
    if (!(delta > 0.0f))
        throw std::invalid_argument("sdf_from_mask: delta must be > 0");
    const int h = mask.height, w = mask.width;
    SdfMask out(h, w, delta);

    const BinaryMask boundary = boundary_pixels(mask);
    const bool has_boundary =
        std::find(boundary.values.begin(), boundary.values.end(), uint8_t(1)) !=
        boundary.values.end();
    if (!has_boundary) {
        // Mask is constant: empty S -> +delta, full S -> -delta.
        const bool all_fg = !mask.values.empty() && mask.values[0] != 0;
        std::fill(out.values.begin(), out.values.end(),
                  all_fg ? -delta : delta);
        return out;
    }

    const DistanceMap d2 = edt_squared(boundary);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (boundary.at(y, x)) {
                out.at(y, x) = 0.0f;
                continue;
            }
            const double dist = std::sqrt(double(d2.at(y, x)));
            const float mag = float(std::min(dist, double(delta)));
            out.at(y, x) = mask.at(y, x) ? -mag : mag;
        }
    }
    return out;
}

BinaryMask mask_from_sdf(const SdfMask& sdf) {
    BinaryMask out(sdf.height, sdf.width);
    for (std::size_t i = 0; i < sdf.values.size(); ++i)
        out.values[i] = sdf.values[i] <= 0.0f ? 1 : 0;
    return out;
}

Tensor normalize_sdf(const SdfMask& sdf) {
    if (!(sdf.delta > 0.0f))
        throw std::invalid_argument("normalize_sdf: delta must be > 0");
    Tensor out({uint32_t(sdf.height), uint32_t(sdf.width)});
    for (std::size_t i = 0; i < sdf.values.size(); ++i)
        out[i] = sdf.values[i] / sdf.delta;
    return out;
}

SdfMask denormalize_sdf(const Tensor& field, float delta) {
    if (!(delta > 0.0f))
        throw std::invalid_argument("denormalize_sdf: delta must be > 0");
    if (field.rank() != 2)
        throw std::invalid_argument("denormalize_sdf: expected a rank-2 field");
    SdfMask out{int(field.dim(0)), int(field.dim(1)), delta};
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = field[i] * delta;
    return out;
}

}  // namespace flowsdf
