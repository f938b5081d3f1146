#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowsdf/rng.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

// Fixed encoder-decoder shape: two stride-2 levels plus a bottleneck, image
// conditioning fused additively after the stems, sinusoidal time embedding
// injected as a per-channel bias in every residual block.
struct ModelDescriptor {
    uint32_t image_channels = 1;
    uint32_t c1 = 16;
    uint32_t c2 = 32;
    uint32_t cb = 64;
    uint32_t time_dim = 64;
    uint32_t groups = 4;

    void validate() const {
        if (image_channels == 0)
            throw std::invalid_argument("ModelDescriptor: image_channels must be >= 1");
        if (time_dim == 0 || time_dim % 2 != 0)
            throw std::invalid_argument("ModelDescriptor: time_dim must be even and > 0");
        if (groups == 0)
            throw std::invalid_argument("ModelDescriptor: groups must be > 0");
        for (uint32_t c : {c1, c2, cb}) {
            if (c == 0 || c % groups != 0)
                throw std::invalid_argument(
                    "ModelDescriptor: channel widths must be positive multiples of groups");
        }
    }

    bool operator==(const ModelDescriptor& o) const {
        return image_channels == o.image_channels && c1 == o.c1 && c2 == o.c2 &&
               cb == o.cb && time_dim == o.time_dim && groups == o.groups;
    }
};

namespace nn {

constexpr double kGroupNormEps = 1e-5;

// ---- 3x3 convolution, padding 1 ----------------------------------------
// w: [OC, IC, 3, 3], b: [OC]. stride 1 keeps the spatial size, stride 2
// halves it (even H, W).

template <typename T>
void conv3x3(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& b,
             int stride, TensorT<T>& out) {
    const int IC = int(in.dim(0)), H = int(in.dim(1)), W = int(in.dim(2));
    const int OC = int(w.dim(0));
    if (stride == 1) {
        ensure_shape(out, {uint32_t(OC), uint32_t(H), uint32_t(W)});
        // Out-of-range rows read from a shared zero row so the nine taps fuse
        // into one stencil pass per row.
        const std::vector<T> zero_row(std::size_t(W), T(0));
        for (int oc = 0; oc < OC; ++oc) {
            T* ob = out.data() + std::size_t(oc) * H * W;
            const T bias = b[std::size_t(oc)];
            for (int i = 0; i < H * W; ++i) ob[i] = bias;
            for (int ic = 0; ic < IC; ++ic) {
                const T* ib = in.data() + std::size_t(ic) * H * W;
                const T* wk = w.data() + (std::size_t(oc) * IC + ic) * 9;
                const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
                const T w3 = wk[3], w4 = wk[4], w5 = wk[5];
                const T w6 = wk[6], w7 = wk[7], w8 = wk[8];
                for (int y = 0; y < H; ++y) {
                    const T* top = y > 0 ? ib + std::size_t(y - 1) * W : zero_row.data();
                    const T* mid = ib + std::size_t(y) * W;
                    const T* bot =
                        y + 1 < H ? ib + std::size_t(y + 1) * W : zero_row.data();
                    T* orow = ob + std::size_t(y) * W;
                    orow[0] += w1 * top[0] + w2 * top[1] + w4 * mid[0] + w5 * mid[1] +
                               w7 * bot[0] + w8 * bot[1];
                    for (int x = 1; x < W - 1; ++x)
                        orow[x] += w0 * top[x - 1] + w1 * top[x] + w2 * top[x + 1] +
                                   w3 * mid[x - 1] + w4 * mid[x] + w5 * mid[x + 1] +
                                   w6 * bot[x - 1] + w7 * bot[x] + w8 * bot[x + 1];
                    orow[W - 1] += w0 * top[W - 2] + w1 * top[W - 1] + w3 * mid[W - 2] +
                                   w4 * mid[W - 1] + w6 * bot[W - 2] + w7 * bot[W - 1];
                }
            }
        }
        return;
    }
    // stride 2
    const int OH = H / 2, OW = W / 2;
    ensure_shape(out, {uint32_t(OC), uint32_t(OH), uint32_t(OW)});
    for (int oc = 0; oc < OC; ++oc) {
        T* ob = out.data() + std::size_t(oc) * OH * OW;
        const T bias = b[std::size_t(oc)];
        for (int i = 0; i < OH * OW; ++i) ob[i] = bias;
        for (int ic = 0; ic < IC; ++ic) {
            const T* ib = in.data() + std::size_t(ic) * H * W;
            const T* wk = w.data() + (std::size_t(oc) * IC + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = 2 * oy + dy;
                    if (iy < 0 || iy >= H) continue;
                    const T* irow = ib + std::size_t(iy) * W;
                    T* orow = ob + std::size_t(oy) * OW;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const T wv = wk[ky * 3 + kx];
                        const int x0 = dx < 0 ? 1 : 0;
                        for (int ox = x0; ox < OW; ++ox)
                            orow[ox] += wv * irow[2 * ox + dx];
                    }
                }
            }
        }
    }
}

// Accumulates dL/d(in) into `din` (caller zeroes or chains).
template <typename T>
void conv3x3_grad_input(const TensorT<T>& dout, const TensorT<T>& w, int stride,
                        TensorT<T>& din) {
    const int IC = int(din.dim(0)), H = int(din.dim(1)), W = int(din.dim(2));
    const int OC = int(w.dim(0));
    if (stride == 1) {
        // Correlation with the 180-degree-rotated kernel, fused over the nine
        // taps exactly like the forward stencil.
        const std::vector<T> zero_row(std::size_t(W), T(0));
        for (int ic = 0; ic < IC; ++ic) {
            T* db = din.data() + std::size_t(ic) * H * W;
            for (int oc = 0; oc < OC; ++oc) {
                const T* gb = dout.data() + std::size_t(oc) * H * W;
                const T* wk = w.data() + (std::size_t(oc) * IC + ic) * 9;
                const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
                const T w3 = wk[3], w4 = wk[4], w5 = wk[5];
                const T w6 = wk[6], w7 = wk[7], w8 = wk[8];
                for (int yi = 0; yi < H; ++yi) {
                    const T* top = yi > 0 ? gb + std::size_t(yi - 1) * W : zero_row.data();
                    const T* mid = gb + std::size_t(yi) * W;
                    const T* bot =
                        yi + 1 < H ? gb + std::size_t(yi + 1) * W : zero_row.data();
                    T* drow = db + std::size_t(yi) * W;
                    // din[xi] += sum over taps of w[ky,kx] * dout[yi-ky+1][xi-kx+1]
                    drow[0] += w0 * bot[1] + w1 * bot[0] + w3 * mid[1] + w4 * mid[0] +
                               w6 * top[1] + w7 * top[0];
                    for (int xi = 1; xi < W - 1; ++xi)
                        drow[xi] += w0 * bot[xi + 1] + w1 * bot[xi] + w2 * bot[xi - 1] +
                                    w3 * mid[xi + 1] + w4 * mid[xi] + w5 * mid[xi - 1] +
                                    w6 * top[xi + 1] + w7 * top[xi] + w8 * top[xi - 1];
                    drow[W - 1] += w1 * bot[W - 1] + w2 * bot[W - 2] + w4 * mid[W - 1] +
                                   w5 * mid[W - 2] + w7 * top[W - 1] + w8 * top[W - 2];
                }
            }
        }
        return;
    }
    const int OH = H / 2, OW = W / 2;
    for (int oc = 0; oc < OC; ++oc) {
        const T* gb = dout.data() + std::size_t(oc) * OH * OW;
        for (int ic = 0; ic < IC; ++ic) {
            T* db = din.data() + std::size_t(ic) * H * W;
            const T* wk = w.data() + (std::size_t(oc) * IC + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = 2 * oy + dy;
                    if (iy < 0 || iy >= H) continue;
                    const T* grow = gb + std::size_t(oy) * OW;
                    T* drow = db + std::size_t(iy) * W;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const T wv = wk[ky * 3 + kx];
                        const int x0 = dx < 0 ? 1 : 0;
                        for (int ox = x0; ox < OW; ++ox)
                            drow[2 * ox + dx] += wv * grow[ox];
                    }
                }
            }
        }
    }
}

// Accumulates dL/dw and dL/db.
template <typename T>
void conv3x3_grad_params(const TensorT<T>& dout, const TensorT<T>& in, int stride,
                         TensorT<T>& dw, TensorT<T>& db) {
    const int IC = int(in.dim(0)), H = int(in.dim(1)), W = int(in.dim(2));
    const int OC = int(dout.dim(0));
    const int OH = int(dout.dim(1)), OW = int(dout.dim(2));
    for (int oc = 0; oc < OC; ++oc) {
        const T* gb = dout.data() + std::size_t(oc) * OH * OW;
        T acc = T(0);
        for (int i = 0; i < OH * OW; ++i) acc += gb[i];
        db[std::size_t(oc)] += acc;
    }
    if (stride == 1) {
        // Eight independent accumulator lanes per tap keep the reduction
        // order fixed (bitwise deterministic) while letting it vectorize.
        constexpr int kLanes = 8;
        for (int oc = 0; oc < OC; ++oc) {
            const T* gb = dout.data() + std::size_t(oc) * H * W;
            for (int ic = 0; ic < IC; ++ic) {
                const T* ib = in.data() + std::size_t(ic) * H * W;
                T* dwk = dw.data() + (std::size_t(oc) * IC + ic) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    const int y0 = dy < 0 ? 1 : 0;
                    const int y1 = dy > 0 ? H - 1 : H;
                    T l0[kLanes] = {}, l1[kLanes] = {}, l2[kLanes] = {};
                    T a0 = T(0), a1 = T(0), a2 = T(0);
                    for (int y = y0; y < y1; ++y) {
                        const T* grow = gb + std::size_t(y) * W;
                        const T* irow = ib + std::size_t(y + dy) * W;
                        const int interior = W - 2;  // x in [1, W-1)
                        const int vec_end = 1 + (interior / kLanes) * kLanes;
                        for (int x = 1; x < vec_end; x += kLanes) {
                            for (int l = 0; l < kLanes; ++l) {
                                const T g = grow[x + l];
                                l0[l] += g * irow[x + l - 1];
                                l1[l] += g * irow[x + l];
                                l2[l] += g * irow[x + l + 1];
                            }
                        }
                        for (int x = vec_end; x < W - 1; ++x) {
                            const T g = grow[x];
                            a0 += g * irow[x - 1];
                            a1 += g * irow[x];
                            a2 += g * irow[x + 1];
                        }
                        a1 += grow[0] * irow[0] + grow[W - 1] * irow[W - 1];
                        a0 += grow[W - 1] * irow[W - 2];
                        a2 += grow[0] * irow[1];
                    }
                    for (int l = 0; l < kLanes; ++l) {
                        a0 += l0[l];
                        a1 += l1[l];
                        a2 += l2[l];
                    }
                    dwk[ky * 3 + 0] += a0;
                    dwk[ky * 3 + 1] += a1;
                    dwk[ky * 3 + 2] += a2;
                }
            }
        }
        return;
    }
    for (int oc = 0; oc < OC; ++oc) {
        const T* gb = dout.data() + std::size_t(oc) * OH * OW;
        for (int ic = 0; ic < IC; ++ic) {
            const T* ib = in.data() + std::size_t(ic) * H * W;
            T* dwk = dw.data() + (std::size_t(oc) * IC + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = dx < 0 ? 1 : 0;
                    T acc = T(0);
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = 2 * oy + dy;
                        if (iy < 0 || iy >= H) continue;
                        const T* grow = gb + std::size_t(oy) * OW;
                        const T* irow = ib + std::size_t(iy) * W;
                        for (int ox = x0; ox < OW; ++ox)
                            acc += grow[ox] * irow[2 * ox + dx];
                    }
                    dwk[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

// ---- 1x1 convolution ----------------------------------------------------

template <typename T>
void conv1x1(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& b,
             TensorT<T>& out) {
    const int IC = int(in.dim(0));
    const int N = int(in.dim(1)) * int(in.dim(2));
    const int OC = int(w.dim(0));
    ensure_shape(out, {uint32_t(OC), in.dim(1), in.dim(2)});
    for (int oc = 0; oc < OC; ++oc) {
        T* ob = out.data() + std::size_t(oc) * N;
        const T bias = b[std::size_t(oc)];
        for (int i = 0; i < N; ++i) ob[i] = bias;
        for (int ic = 0; ic < IC; ++ic) {
            const T wv = w[std::size_t(oc) * IC + ic];
            const T* ib = in.data() + std::size_t(ic) * N;
            for (int i = 0; i < N; ++i) ob[i] += wv * ib[i];
        }
    }
}

template <typename T>
void conv1x1_grad(const TensorT<T>& dout, const TensorT<T>& in, const TensorT<T>& w,
                  TensorT<T>& din, TensorT<T>& dw, TensorT<T>& db) {
    const int IC = int(in.dim(0));
    const int N = int(in.dim(1)) * int(in.dim(2));
    const int OC = int(dout.dim(0));
    for (int oc = 0; oc < OC; ++oc) {
        const T* gb = dout.data() + std::size_t(oc) * N;
        T acc = T(0);
        for (int i = 0; i < N; ++i) acc += gb[i];
        db[std::size_t(oc)] += acc;
        for (int ic = 0; ic < IC; ++ic) {
            const T* ib = in.data() + std::size_t(ic) * N;
            T* dib = din.data() + std::size_t(ic) * N;
            const T wv = w[std::size_t(oc) * IC + ic];
            T dot = T(0);
            for (int i = 0; i < N; ++i) {
                dot += gb[i] * ib[i];
                dib[i] += wv * gb[i];
            }
            dw[std::size_t(oc) * IC + ic] += dot;
        }
    }
}

// ---- group normalization -------------------------------------------------

template <typename T>
struct GroupNormCache {
    TensorT<T> mean;  // [G]
    TensorT<T> inv;   // [G], 1/sqrt(var + eps)
};

template <typename T>
void groupnorm(const TensorT<T>& in, const TensorT<T>& scale, const TensorT<T>& shift,
               uint32_t groups, TensorT<T>& out, GroupNormCache<T>& cache) {
    const int C = int(in.dim(0));
    const int N = int(in.dim(1)) * int(in.dim(2));
    const int G = int(groups), CPG = C / G;
    const std::size_t m = std::size_t(CPG) * N;
    ensure_shape(out, in.dims());
    ensure_shape(cache.mean, {uint32_t(G)});
    ensure_shape(cache.inv, {uint32_t(G)});
    for (int g = 0; g < G; ++g) {
        const T* base = in.data() + std::size_t(g) * CPG * N;
        T sum = T(0);
        for (std::size_t i = 0; i < m; ++i) sum += base[i];
        const T mu = sum / T(m);
        T var = T(0);
        for (std::size_t i = 0; i < m; ++i) {
            const T d = base[i] - mu;
            var += d * d;
        }
        var /= T(m);
        const T inv = T(1) / std::sqrt(var + T(kGroupNormEps));
        cache.mean[std::size_t(g)] = mu;
        cache.inv[std::size_t(g)] = inv;
        for (int cc = 0; cc < CPG; ++cc) {
            const int c = g * CPG + cc;
            const T a = scale[std::size_t(c)] * inv;
            const T sh = shift[std::size_t(c)] - scale[std::size_t(c)] * inv * mu;
            const T* ib = in.data() + std::size_t(c) * N;
            T* ob = out.data() + std::size_t(c) * N;
            for (int i = 0; i < N; ++i) ob[i] = a * ib[i] + sh;
        }
    }
}

template <typename T>
void groupnorm_grad(const TensorT<T>& dout, const TensorT<T>& in, const TensorT<T>& scale,
                    uint32_t groups, const GroupNormCache<T>& cache, TensorT<T>& din,
                    TensorT<T>& dscale, TensorT<T>& dshift) {
    const int C = int(in.dim(0));
    const int N = int(in.dim(1)) * int(in.dim(2));
    const int G = int(groups), CPG = C / G;
    const std::size_t m = std::size_t(CPG) * N;
    for (int g = 0; g < G; ++g) {
        const T mu = cache.mean[std::size_t(g)];
        const T inv = cache.inv[std::size_t(g)];
        T s1 = T(0), s2 = T(0);
        for (int cc = 0; cc < CPG; ++cc) {
            const int c = g * CPG + cc;
            const T* gb = dout.data() + std::size_t(c) * N;
            const T* ib = in.data() + std::size_t(c) * N;
            const T sc = scale[std::size_t(c)];
            T dsh = T(0), dsc = T(0), l1 = T(0), l2 = T(0);
            for (int i = 0; i < N; ++i) {
                const T xh = (ib[i] - mu) * inv;
                dsh += gb[i];
                dsc += gb[i] * xh;
                l1 += gb[i] * sc;
                l2 += gb[i] * sc * xh;
            }
            dshift[std::size_t(c)] += dsh;
            dscale[std::size_t(c)] += dsc;
            s1 += l1;
            s2 += l2;
        }
        const T mean_dxhat = s1 / T(m);
        const T mean_dxhat_xhat = s2 / T(m);
        for (int cc = 0; cc < CPG; ++cc) {
            const int c = g * CPG + cc;
            const T* gb = dout.data() + std::size_t(c) * N;
            const T* ib = in.data() + std::size_t(c) * N;
            T* db = din.data() + std::size_t(c) * N;
            const T sc = scale[std::size_t(c)];
            for (int i = 0; i < N; ++i) {
                const T xh = (ib[i] - mu) * inv;
                db[i] += inv * (gb[i] * sc - mean_dxhat - xh * mean_dxhat_xhat);
            }
        }
    }
}

// ---- SiLU ------------------------------------------------------------------

// Stores sigmoid(in) in `sig` so the backward pass avoids recomputing exp.
template <typename T>
void silu(const TensorT<T>& in, TensorT<T>& out, TensorT<T>& sig) {
    ensure_shape(out, in.dims());
    ensure_shape(sig, in.dims());
    for (std::size_t i = 0; i < in.numel(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-in[i]));
        sig[i] = s;
        out[i] = in[i] * s;
    }
}

template <typename T>
void silu_grad(const TensorT<T>& dout, const TensorT<T>& in, const TensorT<T>& sig,
               TensorT<T>& din) {
    for (std::size_t i = 0; i < in.numel(); ++i) {
        const T s = sig[i];
        din[i] += dout[i] * s * (T(1) + in[i] * (T(1) - s));
    }
}

// ---- nearest-neighbour x2 upsampling --------------------------------------

template <typename T>
void upsample2(const TensorT<T>& in, TensorT<T>& out) {
    const int C = int(in.dim(0)), H = int(in.dim(1)), W = int(in.dim(2));
    ensure_shape(out, {uint32_t(C), uint32_t(2 * H), uint32_t(2 * W)});
    for (int c = 0; c < C; ++c) {
        const T* ib = in.data() + std::size_t(c) * H * W;
        T* ob = out.data() + std::size_t(c) * 4 * H * W;
        for (int y = 0; y < 2 * H; ++y) {
            const T* irow = ib + std::size_t(y / 2) * W;
            T* orow = ob + std::size_t(y) * 2 * W;
            for (int x = 0; x < 2 * W; ++x) orow[x] = irow[x / 2];
        }
    }
}

template <typename T>
void upsample2_grad(const TensorT<T>& dout, TensorT<T>& din) {
    const int C = int(din.dim(0)), H = int(din.dim(1)), W = int(din.dim(2));
    for (int c = 0; c < C; ++c) {
        const T* gb = dout.data() + std::size_t(c) * 4 * H * W;
        T* db = din.data() + std::size_t(c) * H * W;
        for (int y = 0; y < 2 * H; ++y) {
            const T* grow = gb + std::size_t(y) * 2 * W;
            T* drow = db + std::size_t(y / 2) * W;
            for (int x = 0; x < 2 * W; ++x) drow[x / 2] += grow[x];
        }
    }
}

// ---- dense layer -----------------------------------------------------------

template <typename T>
void linear(const TensorT<T>& v, const TensorT<T>& w, const TensorT<T>& b,
            TensorT<T>& out) {
    const int I = int(w.dim(1)), O = int(w.dim(0));
    ensure_shape(out, {uint32_t(O)});
    for (int o = 0; o < O; ++o) {
        const T* wr = w.data() + std::size_t(o) * I;
        T acc = b[std::size_t(o)];
        for (int i = 0; i < I; ++i) acc += wr[i] * v[std::size_t(i)];
        out[std::size_t(o)] = acc;
    }
}

template <typename T>
void linear_grad(const TensorT<T>& dout, const TensorT<T>& v, const TensorT<T>& w,
                 TensorT<T>& dv, TensorT<T>& dw, TensorT<T>& db) {
    const int I = int(w.dim(1)), O = int(w.dim(0));
    for (int o = 0; o < O; ++o) {
        const T g = dout[std::size_t(o)];
        db[std::size_t(o)] += g;
        const T* wr = w.data() + std::size_t(o) * I;
        T* dwr = dw.data() + std::size_t(o) * I;
        for (int i = 0; i < I; ++i) {
            dwr[i] += g * v[std::size_t(i)];
            dv[std::size_t(i)] += g * wr[i];
        }
    }
}

// ---- channel concatenation ---------------------------------------------

template <typename T>
void concat_channels(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& out) {
    const uint32_t H = a.dim(1), W = a.dim(2);
    ensure_shape(out, {a.dim(0) + b.dim(0), H, W});
    const std::size_t na = a.numel();
    for (std::size_t i = 0; i < na; ++i) out[i] = a[i];
    for (std::size_t i = 0; i < b.numel(); ++i) out[na + i] = b[i];
}

template <typename T>
void concat_channels_grad(const TensorT<T>& dout, TensorT<T>& da, TensorT<T>& db) {
    const std::size_t na = da.numel();
    for (std::size_t i = 0; i < na; ++i) da[i] += dout[i];
    for (std::size_t i = 0; i < db.numel(); ++i) db[i] += dout[na + i];
}

}  // namespace nn

// ---- parameters -------------------------------------------------------------

template <typename T>
struct ResBlockParamsT {
    TensorT<T> conv1_w, conv1_b;
    TensorT<T> tproj_w, tproj_b;
    TensorT<T> gn1_scale, gn1_shift;
    TensorT<T> conv2_w, conv2_b;
    TensorT<T> gn2_scale, gn2_shift;
};

template <typename T>
struct ModelParamsT {
    ModelDescriptor desc;
    TensorT<T> time_fc1_w, time_fc1_b, time_fc2_w, time_fc2_b;
    TensorT<T> stem_mask_w, stem_mask_b, stem_image_w, stem_image_b;
    ResBlockParamsT<T> enc1, enc2, mid, dec1, dec2;
    TensorT<T> down1_w, down1_b, down2_w, down2_b;
    TensorT<T> up1_w, up1_b, up2_w, up2_b;
    TensorT<T> out_w, out_b;
};

using ModelParams = ModelParamsT<float>;

namespace detail {

template <typename B, typename Fn>
void visit_block(const std::string& prefix, B& blk, Fn&& fn) {
    fn(prefix + ".conv1.w", blk.conv1_w);
    fn(prefix + ".conv1.b", blk.conv1_b);
    fn(prefix + ".tproj.w", blk.tproj_w);
    fn(prefix + ".tproj.b", blk.tproj_b);
    fn(prefix + ".gn1.scale", blk.gn1_scale);
    fn(prefix + ".gn1.shift", blk.gn1_shift);
    fn(prefix + ".conv2.w", blk.conv2_w);
    fn(prefix + ".conv2.b", blk.conv2_b);
    fn(prefix + ".gn2.scale", blk.gn2_scale);
    fn(prefix + ".gn2.shift", blk.gn2_shift);
}

}  // namespace detail

// Visits every parameter tensor in a fixed order with its dotted name.
// Works with const and mutable parameter sets.
template <typename P, typename Fn>
void for_each_param(P& p, Fn&& fn) {
    fn(std::string("time.fc1.w"), p.time_fc1_w);
    fn(std::string("time.fc1.b"), p.time_fc1_b);
    fn(std::string("time.fc2.w"), p.time_fc2_w);
    fn(std::string("time.fc2.b"), p.time_fc2_b);
    fn(std::string("stem_mask.w"), p.stem_mask_w);
    fn(std::string("stem_mask.b"), p.stem_mask_b);
    fn(std::string("stem_image.w"), p.stem_image_w);
    fn(std::string("stem_image.b"), p.stem_image_b);
    detail::visit_block("enc1", p.enc1, fn);
    fn(std::string("down1.w"), p.down1_w);
    fn(std::string("down1.b"), p.down1_b);
    detail::visit_block("enc2", p.enc2, fn);
    fn(std::string("down2.w"), p.down2_w);
    fn(std::string("down2.b"), p.down2_b);
    detail::visit_block("mid", p.mid, fn);
    fn(std::string("up1.w"), p.up1_w);
    fn(std::string("up1.b"), p.up1_b);
    detail::visit_block("dec1", p.dec1, fn);
    fn(std::string("up2.w"), p.up2_w);
    fn(std::string("up2.b"), p.up2_b);
    detail::visit_block("dec2", p.dec2, fn);
    fn(std::string("out.w"), p.out_w);
    fn(std::string("out.b"), p.out_b);
}

template <typename T>
void allocate_block(ResBlockParamsT<T>& blk, uint32_t c, uint32_t time_dim) {
    blk.conv1_w = TensorT<T>({c, c, 3, 3});
    blk.conv1_b = TensorT<T>({c});
    blk.tproj_w = TensorT<T>({c, time_dim});
    blk.tproj_b = TensorT<T>({c});
    blk.gn1_scale = TensorT<T>({c});
    blk.gn1_shift = TensorT<T>({c});
    blk.conv2_w = TensorT<T>({c, c, 3, 3});
    blk.conv2_b = TensorT<T>({c});
    blk.gn2_scale = TensorT<T>({c});
    blk.gn2_shift = TensorT<T>({c});
}

template <typename T>
ModelParamsT<T> allocate_params(const ModelDescriptor& desc) {
    desc.validate();
    ModelParamsT<T> p;
    p.desc = desc;
    const uint32_t D = desc.time_dim;
    p.time_fc1_w = TensorT<T>({D, D});
    p.time_fc1_b = TensorT<T>({D});
    p.time_fc2_w = TensorT<T>({D, D});
    p.time_fc2_b = TensorT<T>({D});
    p.stem_mask_w = TensorT<T>({desc.c1, 1, 3, 3});
    p.stem_mask_b = TensorT<T>({desc.c1});
    p.stem_image_w = TensorT<T>({desc.c1, desc.image_channels, 3, 3});
    p.stem_image_b = TensorT<T>({desc.c1});
    allocate_block(p.enc1, desc.c1, D);
    p.down1_w = TensorT<T>({desc.c2, desc.c1, 3, 3});
    p.down1_b = TensorT<T>({desc.c2});
    allocate_block(p.enc2, desc.c2, D);
    p.down2_w = TensorT<T>({desc.cb, desc.c2, 3, 3});
    p.down2_b = TensorT<T>({desc.cb});
    allocate_block(p.mid, desc.cb, D);
    p.up1_w = TensorT<T>({desc.c2, desc.cb + desc.c2, 3, 3});
    p.up1_b = TensorT<T>({desc.c2});
    allocate_block(p.dec1, desc.c2, D);
    p.up2_w = TensorT<T>({desc.c1, desc.c2 + desc.c1, 3, 3});
    p.up2_b = TensorT<T>({desc.c1});
    allocate_block(p.dec2, desc.c1, D);
    p.out_w = TensorT<T>({1, desc.c1, 1, 1});
    p.out_b = TensorT<T>({1});
    return p;
}

template <typename T>
std::size_t param_count(const ModelParamsT<T>& p) {
    std::size_t n = 0;
    for_each_param(p, [&](const std::string&, const TensorT<T>& t) { n += t.numel(); });
    return n;
}

// Kernels draw from a fan-in-scaled uniform distribution, normalization
// scales start at 1 with zero shifts, and the output convolution starts at
// zero so the initial prediction is the zero field.
inline ModelParams init_params(uint64_t seed, const ModelDescriptor& desc) {
    ModelParams p = allocate_params<float>(desc);
    Rng rng(seed);
    for_each_param(p, [&](const std::string& name, Tensor& t) {
        const bool is_scale = name.size() >= 6 && name.compare(name.size() - 6, 6, ".scale") == 0;
        const bool is_weight = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        if (is_scale) {
            t.fill(1.0f);
        } else if (is_weight && name != "out.w") {
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < t.dims().size(); ++d) fan_in *= t.dims()[d];
            const double s = 1.0 / std::sqrt(double(fan_in));
            for (std::size_t i = 0; i < t.numel(); ++i)
                t[i] = float(rng.uniform(-s, s));
        }
        // biases, shifts and out.w stay zero
    });
    return p;
}

// ---- forward / backward -----------------------------------------------------

template <typename T>
struct ResBlockCacheT {
    TensorT<T> in;
    TensorT<T> tbias;  // [C]
    TensorT<T> pre1;   // conv1(in) + tbias
    nn::GroupNormCache<T> g1;
    TensorT<T> norm1, sig1, act1;
    TensorT<T> pre2;   // conv2(act1)
    nn::GroupNormCache<T> g2;
    TensorT<T> norm2, sig2, act2;
    TensorT<T> out;    // in + act2
};

template <typename T>
struct ModelWorkspace {
    bool recorded = false;
    T t = T(0);
    TensorT<T> m_in, x_in;
    TensorT<T> emb_raw, emb_pre, emb_sig, emb_act, emb;
    TensorT<T> hm, hx, h0;
    ResBlockCacheT<T> enc1, enc2, mid, dec1, dec2;
    TensorT<T> d1, d2;
    TensorT<T> u1, cat1, p1;
    TensorT<T> u2, cat2, p2;
    TensorT<T> out;
};

// Raw sinusoidal features: [sin(t*w_k); cos(t*w_k)], w_k = 10000^(-2k/D).
template <typename T>
TensorT<T> time_features_raw(T t, uint32_t time_dim) {
    if (!(double(t) >= 0.0 && double(t) <= 1.0))
        throw std::invalid_argument("time_features_raw: t must lie in [0, 1]");
    TensorT<T> raw({time_dim});
    const uint32_t half = time_dim / 2;
    for (uint32_t k = 0; k < half; ++k) {
        const double w = std::pow(10000.0, -2.0 * double(k) / double(time_dim));
        raw[k] = T(std::sin(double(t) * w));
        raw[half + k] = T(std::cos(double(t) * w));
    }
    return raw;
}

// Elementwise sum of mask-path and image-path features.
template <typename T>
TensorT<T> condition_fuse(const TensorT<T>& mask_features, const TensorT<T>& image_features) {
    require_same_shape(mask_features, image_features, "condition_fuse");
    TensorT<T> out(mask_features.dims());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = mask_features[i] + image_features[i];
    return out;
}

namespace detail {

template <typename T>
void resblock_forward(const ResBlockParamsT<T>& blk, const TensorT<T>& in,
                      const TensorT<T>& emb, uint32_t groups, ResBlockCacheT<T>& c) {
    c.in = in;
    nn::conv3x3(in, blk.conv1_w, blk.conv1_b, 1, c.pre1);
    ensure_shape(c.tbias, {blk.tproj_w.dim(0)});
    nn::linear(emb, blk.tproj_w, blk.tproj_b, c.tbias);
    const int C = int(c.pre1.dim(0));
    const int N = int(c.pre1.dim(1)) * int(c.pre1.dim(2));
    for (int ch = 0; ch < C; ++ch) {
        T* row = c.pre1.data() + std::size_t(ch) * N;
        const T bias = c.tbias[std::size_t(ch)];
        for (int i = 0; i < N; ++i) row[i] += bias;
    }
    nn::groupnorm(c.pre1, blk.gn1_scale, blk.gn1_shift, groups, c.norm1, c.g1);
    nn::silu(c.norm1, c.act1, c.sig1);
    nn::conv3x3(c.act1, blk.conv2_w, blk.conv2_b, 1, c.pre2);
    nn::groupnorm(c.pre2, blk.gn2_scale, blk.gn2_shift, groups, c.norm2, c.g2);
    nn::silu(c.norm2, c.act2, c.sig2);
    ensure_shape(c.out, in.dims());
    for (std::size_t i = 0; i < in.numel(); ++i) c.out[i] = in[i] + c.act2[i];
}

// Accumulates into din (dL/d block input) and demb (dL/d embedding).
template <typename T>
void resblock_backward(const ResBlockParamsT<T>& blk, ResBlockParamsT<T>& g,
                       const ResBlockCacheT<T>& c, uint32_t groups,
                       const TensorT<T>& dout, const TensorT<T>& emb,
                       TensorT<T>& din, TensorT<T>& demb) {
    // skip connection
    for (std::size_t i = 0; i < dout.numel(); ++i) din[i] += dout[i];

    TensorT<T> dnorm2(c.norm2.dims());
    nn::silu_grad(dout, c.norm2, c.sig2, dnorm2);
    TensorT<T> dpre2(c.pre2.dims());
    nn::groupnorm_grad(dnorm2, c.pre2, blk.gn2_scale, groups, c.g2, dpre2,
                       g.gn2_scale, g.gn2_shift);
    nn::conv3x3_grad_params(dpre2, c.act1, 1, g.conv2_w, g.conv2_b);
    TensorT<T> dact1(c.act1.dims());
    nn::conv3x3_grad_input(dpre2, blk.conv2_w, 1, dact1);
    TensorT<T> dnorm1(c.norm1.dims());
    nn::silu_grad(dact1, c.norm1, c.sig1, dnorm1);
    TensorT<T> dpre1(c.pre1.dims());
    nn::groupnorm_grad(dnorm1, c.pre1, blk.gn1_scale, groups, c.g1, dpre1,
                       g.gn1_scale, g.gn1_shift);

    // time bias: per-channel sum of dpre1 feeds the embedding projection
    const int C = int(dpre1.dim(0));
    const int N = int(dpre1.dim(1)) * int(dpre1.dim(2));
    TensorT<T> dtbias({uint32_t(C)});
    for (int ch = 0; ch < C; ++ch) {
        const T* row = dpre1.data() + std::size_t(ch) * N;
        T acc = T(0);
        for (int i = 0; i < N; ++i) acc += row[i];
        dtbias[std::size_t(ch)] = acc;
    }
    nn::linear_grad(dtbias, emb, blk.tproj_w, demb, g.tproj_w, g.tproj_b);

    nn::conv3x3_grad_params(dpre1, c.in, 1, g.conv1_w, g.conv1_b);
    nn::conv3x3_grad_input(dpre1, blk.conv1_w, 1, din);
}

}  // namespace detail

// Forward pass; records everything needed for gradients in `ws`.
// m_t: [1, H, W]; x: [image_channels, H, W]; H and W divisible by 4.
template <typename T>
const TensorT<T>& forward(const ModelParamsT<T>& p, const TensorT<T>& m_t,
                          const TensorT<T>& x, T t, ModelWorkspace<T>& ws) {
    const ModelDescriptor& d = p.desc;
    if (m_t.rank() != 3 || m_t.dim(0) != 1)
        throw std::invalid_argument("forward: m_t must have shape [1, H, W]");
    if (x.rank() != 3 || x.dim(0) != d.image_channels)
        throw std::invalid_argument("forward: x must have shape [image_channels, H, W]");
    if (x.dim(1) != m_t.dim(1) || x.dim(2) != m_t.dim(2))
        throw std::invalid_argument("forward: m_t and x spatial sizes differ");
    const uint32_t H = m_t.dim(1), W = m_t.dim(2);
    if (H % 4 != 0 || W % 4 != 0 || H < 4 || W < 4)
        throw std::invalid_argument("forward: H and W must be positive multiples of 4");
    if (!(double(t) >= 0.0 && double(t) <= 1.0))
        throw std::invalid_argument("forward: t must lie in [0, 1]");

    ws.t = t;
    ws.m_in = m_t;
    ws.x_in = x;

    ws.emb_raw = time_features_raw(t, d.time_dim);
    nn::linear(ws.emb_raw, p.time_fc1_w, p.time_fc1_b, ws.emb_pre);
    nn::silu(ws.emb_pre, ws.emb_act, ws.emb_sig);
    nn::linear(ws.emb_act, p.time_fc2_w, p.time_fc2_b, ws.emb);

    nn::conv3x3(m_t, p.stem_mask_w, p.stem_mask_b, 1, ws.hm);
    nn::conv3x3(x, p.stem_image_w, p.stem_image_b, 1, ws.hx);
    ensure_shape(ws.h0, ws.hm.dims());
    for (std::size_t i = 0; i < ws.hm.numel(); ++i) ws.h0[i] = ws.hm[i] + ws.hx[i];

    detail::resblock_forward(p.enc1, ws.h0, ws.emb, d.groups, ws.enc1);
    nn::conv3x3(ws.enc1.out, p.down1_w, p.down1_b, 2, ws.d1);
    detail::resblock_forward(p.enc2, ws.d1, ws.emb, d.groups, ws.enc2);
    nn::conv3x3(ws.enc2.out, p.down2_w, p.down2_b, 2, ws.d2);
    detail::resblock_forward(p.mid, ws.d2, ws.emb, d.groups, ws.mid);

    nn::upsample2(ws.mid.out, ws.u1);
    nn::concat_channels(ws.u1, ws.enc2.out, ws.cat1);
    nn::conv3x3(ws.cat1, p.up1_w, p.up1_b, 1, ws.p1);
    detail::resblock_forward(p.dec1, ws.p1, ws.emb, d.groups, ws.dec1);

    nn::upsample2(ws.dec1.out, ws.u2);
    nn::concat_channels(ws.u2, ws.enc1.out, ws.cat2);
    nn::conv3x3(ws.cat2, p.up2_w, p.up2_b, 1, ws.p2);
    detail::resblock_forward(p.dec2, ws.p2, ws.emb, d.groups, ws.dec2);

    nn::conv1x1(ws.dec2.out, p.out_w, p.out_b, ws.out);
    ws.recorded = true;
    return ws.out;
}

// Accumulates dL/dtheta into `grads` given dL/d(output). Requires a recorded
// forward pass in `ws`.
template <typename T>
void backward(const ModelParamsT<T>& p, const ModelWorkspace<T>& ws,
              const TensorT<T>& dout, ModelParamsT<T>& grads) {
    if (!ws.recorded)
        throw std::logic_error("backward: no recorded forward pass");
    require_same_shape(dout, ws.out, "backward");
    const ModelDescriptor& d = p.desc;

    TensorT<T> demb(ws.emb.dims());

    TensorT<T> db2(ws.dec2.out.dims());
    nn::conv1x1_grad(dout, ws.dec2.out, p.out_w, db2, grads.out_w, grads.out_b);

    TensorT<T> dp2(ws.p2.dims());
    detail::resblock_backward(p.dec2, grads.dec2, ws.dec2, d.groups, db2, ws.emb, dp2, demb);
    TensorT<T> dcat2(ws.cat2.dims());
    nn::conv3x3_grad_params(dp2, ws.cat2, 1, grads.up2_w, grads.up2_b);
    nn::conv3x3_grad_input(dp2, p.up2_w, 1, dcat2);
    TensorT<T> du2(ws.u2.dims());
    TensorT<T> da1(ws.enc1.out.dims());  // grad into enc1 output (skip path)
    nn::concat_channels_grad(dcat2, du2, da1);
    TensorT<T> db1(ws.dec1.out.dims());
    nn::upsample2_grad(du2, db1);

    TensorT<T> dp1(ws.p1.dims());
    detail::resblock_backward(p.dec1, grads.dec1, ws.dec1, d.groups, db1, ws.emb, dp1, demb);
    TensorT<T> dcat1(ws.cat1.dims());
    nn::conv3x3_grad_params(dp1, ws.cat1, 1, grads.up1_w, grads.up1_b);
    nn::conv3x3_grad_input(dp1, p.up1_w, 1, dcat1);
    TensorT<T> du1(ws.u1.dims());
    TensorT<T> da2(ws.enc2.out.dims());  // grad into enc2 output (skip path)
    nn::concat_channels_grad(dcat1, du1, da2);
    TensorT<T> dmid(ws.mid.out.dims());
    nn::upsample2_grad(du1, dmid);

    TensorT<T> dd2(ws.d2.dims());
    detail::resblock_backward(p.mid, grads.mid, ws.mid, d.groups, dmid, ws.emb, dd2, demb);
    nn::conv3x3_grad_params(dd2, ws.enc2.out, 2, grads.down2_w, grads.down2_b);
    nn::conv3x3_grad_input(dd2, p.down2_w, 2, da2);  // joins the skip gradient

    TensorT<T> dd1(ws.d1.dims());
    detail::resblock_backward(p.enc2, grads.enc2, ws.enc2, d.groups, da2, ws.emb, dd1, demb);
    nn::conv3x3_grad_params(dd1, ws.enc1.out, 2, grads.down1_w, grads.down1_b);
    nn::conv3x3_grad_input(dd1, p.down1_w, 2, da1);  // joins the skip gradient

    TensorT<T> dh0(ws.h0.dims());
    detail::resblock_backward(p.enc1, grads.enc1, ws.enc1, d.groups, da1, ws.emb, dh0, demb);

    // fusion is a plain sum: both stems receive dh0
    nn::conv3x3_grad_params(dh0, ws.m_in, 1, grads.stem_mask_w, grads.stem_mask_b);
    nn::conv3x3_grad_params(dh0, ws.x_in, 1, grads.stem_image_w, grads.stem_image_b);

    // time embedding MLP
    TensorT<T> demb_act(ws.emb_act.dims());
    nn::linear_grad(demb, ws.emb_act, p.time_fc2_w, demb_act, grads.time_fc2_w,
                    grads.time_fc2_b);
    TensorT<T> demb_pre(ws.emb_pre.dims());
    nn::silu_grad(demb_act, ws.emb_pre, ws.emb_sig, demb_pre);
    TensorT<T> demb_raw(ws.emb_raw.dims());  // unused: t is not a parameter
    nn::linear_grad(demb_pre, ws.emb_raw, p.time_fc1_w, demb_raw, grads.time_fc1_w,
                    grads.time_fc1_b);
}

}  // namespace flowsdf
