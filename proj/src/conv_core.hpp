#pragma once

// Spatial convolution cores shared by the public per-frame ops and the
// batched model paths. Patches are gathered once (im2col) so every
// multiply-accumulate loop runs at unit stride; channel loops are blocked in
// fours so each column row is loaded once per block.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace cmma::detail {

constexpr std::size_t kCoBlock = 4;

struct ConvDims {
    std::size_t cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t stride, pad;
    std::size_t ho, wo;

    std::size_t patch() const { return cin * kh * kw; }
    std::size_t sites() const { return ho * wo; }
};

inline ConvDims conv_dims(std::size_t cin, std::size_t h, std::size_t w, std::size_t cout,
                          std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
    return {cin, h, w, cout, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1,
            (w + 2 * pad - kw) / stride + 1};
}

// Output-column range [lo, hi) for which ix = ox*stride + tap - pad lies in
// [0, extent).
inline void out_range(std::size_t extent, std::size_t out_extent, std::size_t stride, std::size_t pad,
                      std::size_t tap, std::size_t* lo, std::size_t* hi) {
    const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t begin = 0;
    if (offset < 0) {
        begin = (-offset + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride);
    }
    std::ptrdiff_t end =
        (static_cast<std::ptrdiff_t>(extent) - 1 - offset) / static_cast<std::ptrdiff_t>(stride) + 1;
    end = std::min<std::ptrdiff_t>(end, static_cast<std::ptrdiff_t>(out_extent));
    *lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(begin, 0));
    *hi = static_cast<std::size_t>(std::max<std::ptrdiff_t>(end, static_cast<std::ptrdiff_t>(*lo)));
}

/// col is (cin*kh*kw) x (ho*wo), zero-filled where the kernel hangs over the
/// border.
inline void im2col(const double* x, const ConvDims& d, double* col) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* xblock = x + ci * d.h * d.w;
        for (std::size_t r = 0; r < d.kh; ++r) {
            std::size_t oy_lo, oy_hi;
            out_range(d.h, d.ho, d.stride, d.pad, r, &oy_lo, &oy_hi);
            for (std::size_t c = 0; c < d.kw; ++c) {
                double* crow = col + ((ci * d.kh + r) * d.kw + c) * d.sites();
                std::size_t ox_lo, ox_hi;
                out_range(d.w, d.wo, d.stride, d.pad, c, &ox_lo, &ox_hi);
                const std::ptrdiff_t off =
                    static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(d.pad);
                std::fill(crow, crow + d.sites(), 0.0);
                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const std::size_t iy = oy * d.stride + r - d.pad;
                    const double* xrow = xblock + iy * d.w;
                    double* cdst = crow + oy * d.wo;
                    for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                        cdst[ox] = xrow[static_cast<std::ptrdiff_t>(ox * d.stride) + off];
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column buffer back onto the input grid.
inline void col2im_add(const double* col, const ConvDims& d, double* x) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        double* xblock = x + ci * d.h * d.w;
        for (std::size_t r = 0; r < d.kh; ++r) {
            std::size_t oy_lo, oy_hi;
            out_range(d.h, d.ho, d.stride, d.pad, r, &oy_lo, &oy_hi);
            for (std::size_t c = 0; c < d.kw; ++c) {
                const double* crow = col + ((ci * d.kh + r) * d.kw + c) * d.sites();
                std::size_t ox_lo, ox_hi;
                out_range(d.w, d.wo, d.stride, d.pad, c, &ox_lo, &ox_hi);
                const std::ptrdiff_t off =
                    static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(d.pad);
                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const std::size_t iy = oy * d.stride + r - d.pad;
                    double* xrow = xblock + iy * d.w;
                    const double* csrc = crow + oy * d.wo;
                    for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                        xrow[static_cast<std::ptrdiff_t>(ox * d.stride) + off] += csrc[ox];
                    }
                }
            }
        }
    }
}

/// Output channels [co0, co1) from a prepared column buffer; oblock starts at
/// channel co0 and holds (co1-co0)*sites() values.
inline void conv_forward_chunk(const double* col, const double* weight, const double* bias,
                               const ConvDims& d, std::size_t co0, std::size_t co1, double* oblock) {
    const std::size_t sites = d.sites();
    for (; co0 + kCoBlock <= co1; co0 += kCoBlock, oblock += kCoBlock * sites) {
        double* o0 = oblock;
        double* o1 = oblock + sites;
        double* o2 = oblock + 2 * sites;
        double* o3 = oblock + 3 * sites;
        for (std::size_t i = 0; i < sites; ++i) {
            o0[i] = bias[co0];
            o1[i] = bias[co0 + 1];
            o2[i] = bias[co0 + 2];
            o3[i] = bias[co0 + 3];
        }
        const double* w0 = weight + co0 * d.patch();
        const double* w1 = w0 + d.patch();
        const double* w2 = w1 + d.patch();
        const double* w3 = w2 + d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            const double* crow = col + k * sites;
            const double v0 = w0[k], v1 = w1[k], v2 = w2[k], v3 = w3[k];
            for (std::size_t i = 0; i < sites; ++i) {
                const double c = crow[i];
                o0[i] += v0 * c;
                o1[i] += v1 * c;
                o2[i] += v2 * c;
                o3[i] += v3 * c;
            }
        }
    }
    for (; co0 < co1; ++co0, oblock += sites) {
        for (std::size_t i = 0; i < sites; ++i) oblock[i] = bias[co0];
        const double* wrow = weight + co0 * d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            const double wv = wrow[k];
            const double* crow = col + k * sites;
            for (std::size_t i = 0; i < sites; ++i) oblock[i] += wv * crow[i];
        }
    }
}

/// Dot product over lane-wise partial sums; the fixed association order keeps
/// results identical from run to run while breaking the add latency chain.
inline double dot_lanes(const double* a, const double* b, std::size_t n) {
    double acc0[8] = {};
    double acc1[8] = {};
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 8; ++j) acc0[j] += a[i + j] * b[i + j];
        for (int j = 0; j < 8; ++j) acc1[j] += a[i + 8 + j] * b[i + 8 + j];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    double s0 = 0.0, s1 = 0.0;
    for (int j = 0; j < 8; ++j) {
        s0 += acc0[j];
        s1 += acc1[j];
    }
    return (s0 + s1) + tail;
}

/// dw/db contribution of one frame for output channels [co0, co1); race-free
/// as long as no other writer touches those channels.
inline void conv_backward_dw_chunk(const double* col, const double* gout, const ConvDims& d,
                                   std::size_t co0, std::size_t co1, double* gw, double* gb) {
    const std::size_t sites = d.sites();
    for (; co0 + kCoBlock <= co1; co0 += kCoBlock) {
        const double* g0 = gout + co0 * sites;
        const double* g1 = g0 + sites;
        const double* g2 = g1 + sites;
        const double* g3 = g2 + sites;
        double* gw0 = gw + co0 * d.patch();
        double* gw1 = gw0 + d.patch();
        double* gw2 = gw1 + d.patch();
        double* gw3 = gw2 + d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            const double* crow = col + k * sites;
            gw0[k] += dot_lanes(g0, crow, sites);
            gw1[k] += dot_lanes(g1, crow, sites);
            gw2[k] += dot_lanes(g2, crow, sites);
            gw3[k] += dot_lanes(g3, crow, sites);
        }
        for (std::size_t c = 0; c < kCoBlock; ++c) {
            const double* grow = gout + (co0 + c) * sites;
            double acc = 0.0;
            for (std::size_t i = 0; i < sites; ++i) acc += grow[i];
            gb[co0 + c] += acc;
        }
    }
    for (; co0 < co1; ++co0) {
        const double* grow = gout + co0 * sites;
        double* gwrow = gw + co0 * d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            gwrow[k] += dot_lanes(grow, col + k * sites, sites);
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < sites; ++i) acc += grow[i];
        gb[co0] += acc;
    }
}

/// gcol = W^T gout for one frame; gcol has patch() x sites() values.
inline void conv_backward_gcol(const double* weight, const double* gout, const ConvDims& d,
                               double* gcol) {
    const std::size_t sites = d.sites();
    std::fill(gcol, gcol + d.patch() * sites, 0.0);
    std::size_t co = 0;
    for (; co + kCoBlock <= d.cout; co += kCoBlock) {
        const double* g0 = gout + co * sites;
        const double* g1 = g0 + sites;
        const double* g2 = g1 + sites;
        const double* g3 = g2 + sites;
        const double* w0 = weight + co * d.patch();
        const double* w1 = w0 + d.patch();
        const double* w2 = w1 + d.patch();
        const double* w3 = w2 + d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            double* crow = gcol + k * sites;
            const double v0 = w0[k], v1 = w1[k], v2 = w2[k], v3 = w3[k];
            for (std::size_t i = 0; i < sites; ++i) {
                crow[i] += v0 * g0[i] + v1 * g1[i] + v2 * g2[i] + v3 * g3[i];
            }
        }
    }
    for (; co < d.cout; ++co) {
        const double* grow = gout + co * sites;
        const double* wrow = weight + co * d.patch();
        for (std::size_t k = 0; k < d.patch(); ++k) {
            const double wv = wrow[k];
            double* crow = gcol + k * sites;
            for (std::size_t i = 0; i < sites; ++i) crow[i] += wv * grow[i];
        }
    }
}

}  // namespace cmma::detail
