#include "msconv/conv.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "msconv/parallel.hpp"
#include "msconv/rng.hpp"

namespace msconv {

namespace {

struct ConvGeom {
    std::int64_t n, c_in, h, w;
    std::int64_t c_out, c_in_g, k;
    std::int64_t oh, ow;
    std::int64_t c_out_g;
    int stride, padding, groups;
};

ConvGeom conv_geometry(const Tensor& x, const ConvWeights& w, const char* op) {
    const Shape4 xs = x.shape();
    const Shape4 ks = w.kernel.shape();
    if (ks.h != ks.w) throw ShapeError(std::string(op) + ": kernel must be square, got " + ks.str());
    if (w.groups < 1 || w.stride < 1 || w.padding < 0)
        throw ShapeError(std::string(op) + ": invalid stride/padding/groups");
    if (ks.n % w.groups != 0)
        throw ShapeError(std::string(op) + ": C_out " + std::to_string(ks.n) +
                         " not divisible by groups " + std::to_string(w.groups));
    if (xs.c != ks.c * w.groups)
        throw ShapeError(std::string(op) + ": input channels " + std::to_string(xs.c) +
                         " != kernel C_in/groups * groups = " + std::to_string(ks.c * w.groups));
    if (xs.h < 1 || xs.w < 1)
        throw ShapeError(std::string(op) + ": empty spatial input " + xs.str());
    if (w.bias) {
        const Shape4 bs = w.bias->shape();
        if (!(bs == Shape4{1, ks.n, 1, 1}))
            throw ShapeError(std::string(op) + ": bias shape " + bs.str() + " != (1," +
                             std::to_string(ks.n) + ",1,1)");
    }
    ConvGeom g;
    g.n = xs.n;
    g.c_in = xs.c;
    g.h = xs.h;
    g.w = xs.w;
    g.c_out = ks.n;
    g.c_in_g = ks.c;
    g.k = ks.h;
    g.stride = w.stride;
    g.padding = w.padding;
    g.groups = w.groups;
    g.oh = (xs.h + 2 * w.padding - ks.h) / w.stride + 1;
    g.ow = (xs.w + 2 * w.padding - ks.w) / w.stride + 1;
    g.c_out_g = ks.n / w.groups;
    if (g.oh < 1 || g.ow < 1)
        throw ShapeError(std::string(op) + ": empty output for input " + xs.str() + ", kernel " +
                         ks.str());
    return g;
}

} // namespace

ConvWeights make_conv(std::int64_t c_in, std::int64_t c_out, int k, int groups,
                      std::uint64_t seed, bool with_bias) {
    if (k < 1 || k % 2 == 0) throw ShapeError("make_conv: kernel size must be odd");
    const std::int64_t fan_in = static_cast<std::int64_t>(k) * k * (c_in / groups);
    ConvWeights w;
    w.kernel = Tensor::randn({c_out, c_in / groups, k, k}, seed, std::sqrt(2.0 / fan_in));
    if (with_bias) w.bias = Tensor::zeros({1, c_out, 1, 1});
    w.stride = 1;
    w.padding = (k - 1) / 2;
    w.groups = groups;
    return w;
}

ConvWeights make_conv_zeros(std::int64_t c_in, std::int64_t c_out, int k, int groups,
                            bool with_bias) {
    if (k < 1 || k % 2 == 0) throw ShapeError("make_conv_zeros: kernel size must be odd");
    ConvWeights w;
    w.kernel = Tensor::zeros({c_out, c_in / groups, k, k});
    if (with_bias) w.bias = Tensor::zeros({1, c_out, 1, 1});
    w.stride = 1;
    w.padding = (k - 1) / 2;
    w.groups = groups;
    return w;
}

ConvWeights make_conv_identity(std::int64_t channels, int k) {
    if (k < 1 || k % 2 == 0) throw ShapeError("make_conv_identity: kernel size must be odd");
    std::vector<double> kern(static_cast<std::size_t>(channels * channels * k * k), 0.0);
    for (std::int64_t c = 0; c < channels; ++c)
        kern[static_cast<std::size_t>(((c * channels + c) * k + k / 2) * k + k / 2)] = 1.0;
    ConvWeights w;
    w.kernel = Tensor::from_data({channels, channels, k, k}, std::move(kern));
    w.bias = Tensor::zeros({1, channels, 1, 1});
    w.stride = 1;
    w.padding = (k - 1) / 2;
    w.groups = 1;
    return w;
}

Tensor conv2d(const Tensor& x, const ConvWeights& w) {
    const ConvGeom g = conv_geometry(x, w, "conv2d");
    const auto xv = x.data();
    const auto kv = w.kernel.data();
    const double* bias = w.bias ? w.bias->data().data() : nullptr;

    std::vector<double> out(static_cast<std::size_t>(g.n * g.c_out * g.oh * g.ow));
    parallel_for(g.n * g.c_out, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t idx = begin; idx < end; ++idx) {
            const std::int64_t n = idx / g.c_out;
            const std::int64_t co = idx % g.c_out;
            const std::int64_t grp = co / g.c_out_g;
            for (std::int64_t oy = 0; oy < g.oh; ++oy)
                for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                    double acc = bias ? bias[co] : 0.0;
                    for (std::int64_t ci = 0; ci < g.c_in_g; ++ci) {
                        const std::int64_t cin = grp * g.c_in_g + ci;
                        const double* xp = xv.data() + (n * g.c_in + cin) * g.h * g.w;
                        const double* kp = kv.data() + (co * g.c_in_g + ci) * g.k * g.k;
                        for (std::int64_t ky = 0; ky < g.k; ++ky) {
                            const std::int64_t sy = oy * g.stride - g.padding + ky;
                            if (sy < 0 || sy >= g.h) continue;
                            for (std::int64_t kx = 0; kx < g.k; ++kx) {
                                const std::int64_t sx = ox * g.stride - g.padding + kx;
                                if (sx < 0 || sx >= g.w) continue;
                                acc += xp[sy * g.w + sx] * kp[ky * g.k + kx];
                            }
                        }
                    }
                    out[static_cast<std::size_t>(((n * g.c_out + co) * g.oh + oy) * g.ow + ox)] =
                        acc;
                }
        }
    });

    std::vector<const Tensor*> ins{&x, &w.kernel};
    if (w.bias) ins.push_back(&*w.bias);
    Tape* tp = common_tape(ins);
    const Shape4 out_shape{g.n, g.c_out, g.oh, g.ow};
    if (!tp) return Tensor::from_data(out_shape, std::move(out));

    auto xdata = x.storage();
    auto kdata = w.kernel.storage();
    return tp->emit(ins, out_shape, std::move(out),
                    [g, xdata, kdata](std::span<const double> gout, std::span<double* const> gin) {
                        double* gx = gin[0];
                        double* gk = gin[1];
                        double* gb = gin.size() > 2 ? gin[2] : nullptr;
                        const auto& xv = *xdata;
                        const auto& kv = *kdata;
                        for (std::int64_t n = 0; n < g.n; ++n)
                            for (std::int64_t co = 0; co < g.c_out; ++co) {
                                const std::int64_t grp = co / g.c_out_g;
                                for (std::int64_t oy = 0; oy < g.oh; ++oy)
                                    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                                        const double go = gout[static_cast<std::size_t>(
                                            ((n * g.c_out + co) * g.oh + oy) * g.ow + ox)];
                                        if (gb) gb[co] += go;
                                        if (go == 0.0) continue;
                                        for (std::int64_t ci = 0; ci < g.c_in_g; ++ci) {
                                            const std::int64_t cin = grp * g.c_in_g + ci;
                                            const std::int64_t xbase = (n * g.c_in + cin) * g.h * g.w;
                                            const std::int64_t kbase = (co * g.c_in_g + ci) * g.k * g.k;
                                            for (std::int64_t ky = 0; ky < g.k; ++ky) {
                                                const std::int64_t sy = oy * g.stride - g.padding + ky;
                                                if (sy < 0 || sy >= g.h) continue;
                                                for (std::int64_t kx = 0; kx < g.k; ++kx) {
                                                    const std::int64_t sx =
                                                        ox * g.stride - g.padding + kx;
                                                    if (sx < 0 || sx >= g.w) continue;
                                                    if (gx)
                                                        gx[xbase + sy * g.w + sx] +=
                                                            kv[static_cast<std::size_t>(
                                                                kbase + ky * g.k + kx)] * go;
                                                    if (gk)
                                                        gk[kbase + ky * g.k + kx] +=
                                                            xv[static_cast<std::size_t>(
                                                                xbase + sy * g.w + sx)] * go;
                                                }
                                            }
                                        }
                                    }
                            }
                    });
}

namespace {

// Bilinear read on one channel plane with zero outside padding. Returns the
// value plus its derivatives w.r.t. the sample coordinates, and the in-bounds
// neighbor taps for input scatter.
struct Sample {
    double v = 0.0;
    double dvdy = 0.0;
    double dvdx = 0.0;
    int count = 0;
    std::int64_t idx[4];
    double wt[4];
};

inline Sample sample_plane(const double* plane, std::int64_t h, std::int64_t w, double y,
                           double x) {
    Sample s;
    const double fy0 = std::floor(y);
    const double fx0 = std::floor(x);
    const std::int64_t y0 = static_cast<std::int64_t>(fy0);
    const std::int64_t x0 = static_cast<std::int64_t>(fx0);
    const double fy = y - fy0;
    const double fx = x - fx0;
    double px[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const std::int64_t yy = y0 + dy;
            const std::int64_t xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double v = plane[yy * w + xx];
            px[dy][dx] = v;
            const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
            s.idx[s.count] = yy * w + xx;
            s.wt[s.count] = wgt;
            ++s.count;
        }
    const double r0 = px[0][0] + fx * (px[0][1] - px[0][0]);
    const double r1 = px[1][0] + fx * (px[1][1] - px[1][0]);
    s.v = r0 + fy * (r1 - r0);
    s.dvdy = r1 - r0;
    s.dvdx = (1.0 - fy) * (px[0][1] - px[0][0]) + fy * (px[1][1] - px[1][0]);
    return s;
}

struct DeformGeom {
    ConvGeom conv;
    int deform_groups;
    std::int64_t cd; // input channels per deformable group
};

DeformGeom deform_geometry(const Tensor& x, const DeformInputs& d, const ConvWeights& w,
                           int deform_groups) {
    if (w.stride != 1) throw ShapeError("modulated_deform_conv2d: stride must be 1");
    DeformGeom g;
    g.conv = conv_geometry(x, w, "modulated_deform_conv2d");
    if (deform_groups < 1 || x.shape().c % deform_groups != 0)
        throw ShapeError("modulated_deform_conv2d: deform_groups must divide input channels");
    g.deform_groups = deform_groups;
    g.cd = x.shape().c / deform_groups;
    const std::int64_t kk = g.conv.k * g.conv.k;
    const Shape4 want_off{g.conv.n, 2 * deform_groups * kk, g.conv.oh, g.conv.ow};
    const Shape4 want_mask{g.conv.n, deform_groups * kk, g.conv.oh, g.conv.ow};
    if (!(d.offsets.shape() == want_off))
        throw ShapeError("modulated_deform_conv2d: offsets shape " + d.offsets.shape().str() +
                         " != " + want_off.str());
    if (!(d.mask.shape() == want_mask))
        throw ShapeError("modulated_deform_conv2d: mask shape " + d.mask.shape().str() +
                         " != " + want_mask.str());
    return g;
}

} // namespace

Tensor modulated_deform_conv2d(const Tensor& x, const DeformInputs& d, const ConvWeights& w,
                               int deform_groups) {
    const DeformGeom dg = deform_geometry(x, d, w, deform_groups);
    const ConvGeom g = dg.conv;
    const std::int64_t kk = g.k * g.k;
    const auto xv = x.data();
    const auto kv = w.kernel.data();
    const auto ov = d.offsets.data();
    const auto mv = d.mask.data();
    const double* bias = w.bias ? w.bias->data().data() : nullptr;
    const std::int64_t ohw = g.oh * g.ow;

    std::vector<double> out(static_cast<std::size_t>(g.n * g.c_out * ohw));
    parallel_for(g.n * g.c_out, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t idx = begin; idx < end; ++idx) {
            const std::int64_t n = idx / g.c_out;
            const std::int64_t co = idx % g.c_out;
            const std::int64_t grp = co / g.c_out_g;
            for (std::int64_t oy = 0; oy < g.oh; ++oy)
                for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                    double acc = bias ? bias[co] : 0.0;
                    const std::int64_t p = oy * g.ow + ox;
                    for (std::int64_t ci = 0; ci < g.c_in_g; ++ci) {
                        const std::int64_t cin = grp * g.c_in_g + ci;
                        const std::int64_t gd = cin / dg.cd;
                        const double* plane = xv.data() + (n * g.c_in + cin) * g.h * g.w;
                        const double* kp = kv.data() + (co * g.c_in_g + ci) * kk;
                        for (std::int64_t ky = 0; ky < g.k; ++ky)
                            for (std::int64_t kx = 0; kx < g.k; ++kx) {
                                const std::int64_t tap = ky * g.k + kx;
                                const double dy =
                                    ov[((n * 2 * dg.deform_groups * kk) + gd * 2 * kk + 2 * tap) *
                                           ohw + p];
                                const double dx =
                                    ov[((n * 2 * dg.deform_groups * kk) + gd * 2 * kk + 2 * tap + 1) *
                                           ohw + p];
                                const double m =
                                    mv[((n * dg.deform_groups * kk) + gd * kk + tap) * ohw + p];
                                const double sy = static_cast<double>(oy - g.padding + ky) + dy;
                                const double sx = static_cast<double>(ox - g.padding + kx) + dx;
                                const Sample smp = sample_plane(plane, g.h, g.w, sy, sx);
                                acc += kp[tap] * (m * smp.v);
                            }
                    }
                    out[static_cast<std::size_t>((n * g.c_out + co) * ohw + p)] = acc;
                }
        }
    });

    std::vector<const Tensor*> ins{&x, &d.offsets, &d.mask, &w.kernel};
    if (w.bias) ins.push_back(&*w.bias);
    Tape* tp = common_tape(ins);
    const Shape4 out_shape{g.n, g.c_out, g.oh, g.ow};
    if (!tp) return Tensor::from_data(out_shape, std::move(out));

    auto xdata = x.storage();
    auto kdata = w.kernel.storage();
    auto odata = d.offsets.storage();
    auto mdata = d.mask.storage();
    return tp->emit(
        ins, out_shape, std::move(out),
        [g, dg, kk, ohw, xdata, kdata, odata, mdata](std::span<const double> gout,
                                                     std::span<double* const> gin) {
            double* gx = gin[0];
            double* goff = gin[1];
            double* gm = gin[2];
            double* gk = gin[3];
            double* gb = gin.size() > 4 ? gin[4] : nullptr;
            const auto& xv = *xdata;
            const auto& kv = *kdata;
            const auto& ov = *odata;
            const auto& mv = *mdata;
            for (std::int64_t n = 0; n < g.n; ++n)
                for (std::int64_t co = 0; co < g.c_out; ++co) {
                    const std::int64_t grp = co / g.c_out_g;
                    for (std::int64_t oy = 0; oy < g.oh; ++oy)
                        for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                            const std::int64_t p = oy * g.ow + ox;
                            const double go =
                                gout[static_cast<std::size_t>((n * g.c_out + co) * ohw + p)];
                            if (gb) gb[co] += go;
                            if (go == 0.0) continue;
                            for (std::int64_t ci = 0; ci < g.c_in_g; ++ci) {
                                const std::int64_t cin = grp * g.c_in_g + ci;
                                const std::int64_t gd = cin / dg.cd;
                                const std::int64_t xbase = (n * g.c_in + cin) * g.h * g.w;
                                const std::int64_t kbase = (co * g.c_in_g + ci) * kk;
                                for (std::int64_t ky = 0; ky < g.k; ++ky)
                                    for (std::int64_t kx = 0; kx < g.k; ++kx) {
                                        const std::int64_t tap = ky * g.k + kx;
                                        const std::int64_t obase =
                                            ((n * 2 * dg.deform_groups * kk) + gd * 2 * kk +
                                             2 * tap) * ohw + p;
                                        const std::int64_t mbase =
                                            ((n * dg.deform_groups * kk) + gd * kk + tap) * ohw + p;
                                        const double dy = ov[static_cast<std::size_t>(obase)];
                                        const double dx = ov[static_cast<std::size_t>(obase + ohw)];
                                        const double m = mv[static_cast<std::size_t>(mbase)];
                                        const double sy =
                                            static_cast<double>(oy - g.padding + ky) + dy;
                                        const double sx =
                                            static_cast<double>(ox - g.padding + kx) + dx;
                                        const Sample smp =
                                            sample_plane(xv.data() + xbase, g.h, g.w, sy, sx);
                                        const double kval = kv[static_cast<std::size_t>(kbase + tap)];
                                        if (gk) gk[kbase + tap] += go * (m * smp.v);
                                        if (gm) gm[mbase] += go * kval * smp.v;
                                        if (goff) {
                                            goff[obase] += go * kval * m * smp.dvdy;
                                            goff[obase + ohw] += go * kval * m * smp.dvdx;
                                        }
                                        if (gx) {
                                            const double scale = go * kval * m;
                                            for (int t = 0; t < smp.count; ++t)
                                                gx[xbase + smp.idx[t]] += scale * smp.wt[t];
                                        }
                                    }
                            }
                        }
                }
        });
}

double bilinear_sample(const Tensor& x, std::int64_t n, std::int64_t c, double y, double xcoord) {
    const Shape4 s = x.shape();
    if (n < 0 || n >= s.n || c < 0 || c >= s.c)
        throw ShapeError("bilinear_sample: plane index out of range for " + s.str());
    const double* plane = x.data().data() + (n * s.c + c) * s.h * s.w;
    return sample_plane(plane, s.h, s.w, y, xcoord).v;
}

Tensor local_avg_pool(const Tensor& x, int k) {
    if (k < 1 || k % 2 == 0) throw ShapeError("local_avg_pool: kernel size must be odd");
    const Shape4 s = x.shape();
    const int r = k / 2;
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    // mean computed relative to the first in-bounds tap, so a spatially
    // constant input is preserved exactly at every border divisor
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const double* plane = xv.data() + nc * s.h * s.w;
        double* op = out.data() + nc * s.h * s.w;
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t xx = 0; xx < s.w; ++xx) {
                const std::int64_t y0 = std::max<std::int64_t>(0, y - r);
                const std::int64_t y1 = std::min<std::int64_t>(s.h - 1, y + r);
                const std::int64_t x0 = std::max<std::int64_t>(0, xx - r);
                const std::int64_t x1 = std::min<std::int64_t>(s.w - 1, xx + r);
                const double anchor = plane[y0 * s.w + x0];
                double acc = 0.0;
                std::int64_t cnt = 0;
                for (std::int64_t sy = y0; sy <= y1; ++sy)
                    for (std::int64_t sx = x0; sx <= x1; ++sx) {
                        acc += plane[sy * s.w + sx] - anchor;
                        ++cnt;
                    }
                op[y * s.w + xx] = anchor + acc / static_cast<double>(cnt);
            }
    }

    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    if (!tp) return Tensor::from_data(s, std::move(out));
    return tp->emit(ins, s, std::move(out),
                    [s, r](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
                            const double* gp = g.data() + nc * s.h * s.w;
                            double* dst = gin[0] + nc * s.h * s.w;
                            for (std::int64_t y = 0; y < s.h; ++y)
                                for (std::int64_t xx = 0; xx < s.w; ++xx) {
                                    const std::int64_t y0 = std::max<std::int64_t>(0, y - r);
                                    const std::int64_t y1 = std::min<std::int64_t>(s.h - 1, y + r);
                                    const std::int64_t x0 = std::max<std::int64_t>(0, xx - r);
                                    const std::int64_t x1 = std::min<std::int64_t>(s.w - 1, xx + r);
                                    const double share =
                                        gp[y * s.w + xx] /
                                        static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
                                    for (std::int64_t sy = y0; sy <= y1; ++sy)
                                        for (std::int64_t sx = x0; sx <= x1; ++sx)
                                            dst[sy * s.w + sx] += share;
                                }
                        }
                    });
}

Tensor global_avg_pool(const Tensor& x) {
    const Shape4 s = x.shape();
    if (s.h < 1 || s.w < 1) throw ShapeError("global_avg_pool: empty spatial input " + s.str());
    const auto xv = x.data();
    const std::int64_t hw = s.h * s.w;
    std::vector<double> out(static_cast<std::size_t>(s.n * s.c));
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const double* plane = xv.data() + nc * hw;
        const double anchor = plane[0];
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) acc += plane[i] - anchor;
        out[static_cast<std::size_t>(nc)] = anchor + acc / static_cast<double>(hw);
    }

    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);
    const Shape4 out_shape{s.n, s.c, 1, 1};
    if (!tp) return Tensor::from_data(out_shape, std::move(out));
    return tp->emit(ins, out_shape, std::move(out),
                    [s, hw](std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
                            const double share = g[static_cast<std::size_t>(nc)] /
                                                 static_cast<double>(hw);
                            double* dst = gin[0] + nc * hw;
                            for (std::int64_t i = 0; i < hw; ++i) dst[i] += share;
                        }
                    });
}

namespace {

// One axis of a resize, either direction. Bilinear upsampling is expressed as
// v0 + f*(v1-v0) so that constants survive bit-exactly.
struct AxisPlan {
    enum class Kind { Bilinear, Nearest, MaxPool } kind;
    std::int64_t src = 0, dst = 0;
    std::vector<std::int64_t> i0, i1; // up: taps; down: bin [i0, i1)
    std::vector<double> f;
};

AxisPlan plan_axis(std::int64_t src, std::int64_t dst, UpsampleMode up) {
    AxisPlan plan;
    plan.src = src;
    plan.dst = dst;
    if (dst >= src) {
        plan.kind = up == UpsampleMode::Nearest ? AxisPlan::Kind::Nearest
                                                : AxisPlan::Kind::Bilinear;
        plan.i0.resize(static_cast<std::size_t>(dst));
        if (plan.kind == AxisPlan::Kind::Bilinear) {
            plan.i1.resize(static_cast<std::size_t>(dst));
            plan.f.resize(static_cast<std::size_t>(dst));
        }
        for (std::int64_t i = 0; i < dst; ++i) {
            if (plan.kind == AxisPlan::Kind::Nearest) {
                plan.i0[static_cast<std::size_t>(i)] = std::min(src - 1, i * src / dst);
            } else {
                double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(src) /
                                 static_cast<double>(dst) -
                             0.5;
                pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
                const std::int64_t i0 = static_cast<std::int64_t>(std::floor(pos));
                plan.i0[static_cast<std::size_t>(i)] = i0;
                plan.i1[static_cast<std::size_t>(i)] = std::min(i0 + 1, src - 1);
                plan.f[static_cast<std::size_t>(i)] = pos - static_cast<double>(i0);
            }
        }
    } else {
        plan.kind = AxisPlan::Kind::MaxPool;
        plan.i0.resize(static_cast<std::size_t>(dst));
        plan.i1.resize(static_cast<std::size_t>(dst));
        for (std::int64_t i = 0; i < dst; ++i) {
            plan.i0[static_cast<std::size_t>(i)] = i * src / dst;
            plan.i1[static_cast<std::size_t>(i)] = ((i + 1) * src + dst - 1) / dst;
        }
    }
    return plan;
}

// Applies a plan along H (stride = row length) or W (stride = 1).
// For MaxPool, argmax holds the chosen source index per output element
// (first maximum in scan order, so ties and gradients are deterministic).
void apply_axis(const AxisPlan& plan, const double* src, double* dst, std::int64_t planes,
                std::int64_t other, bool horizontal, std::vector<std::int64_t>* argmax) {
    const std::int64_t in_axis = plan.src;
    const std::int64_t out_axis = plan.dst;
    if (argmax && plan.kind == AxisPlan::Kind::MaxPool)
        argmax->assign(static_cast<std::size_t>(planes * other * out_axis), 0);
    for (std::int64_t pl = 0; pl < planes; ++pl)
        for (std::int64_t o = 0; o < other; ++o) {
            // element (along, o) of plane pl
            auto src_at = [&](std::int64_t along) {
                return horizontal ? src[(pl * other + o) * in_axis + along]
                                  : src[(pl * in_axis + along) * other + o];
            };
            for (std::int64_t i = 0; i < out_axis; ++i) {
                double v;
                if (plan.kind == AxisPlan::Kind::Bilinear) {
                    const double v0 = src_at(plan.i0[static_cast<std::size_t>(i)]);
                    const double v1 = src_at(plan.i1[static_cast<std::size_t>(i)]);
                    v = v0 + plan.f[static_cast<std::size_t>(i)] * (v1 - v0);
                } else if (plan.kind == AxisPlan::Kind::Nearest) {
                    v = src_at(plan.i0[static_cast<std::size_t>(i)]);
                } else {
                    std::int64_t best = plan.i0[static_cast<std::size_t>(i)];
                    v = src_at(best);
                    for (std::int64_t s = best + 1; s < plan.i1[static_cast<std::size_t>(i)]; ++s)
                        if (src_at(s) > v) {
                            v = src_at(s);
                            best = s;
                        }
                    if (argmax)
                        (*argmax)[static_cast<std::size_t>((pl * other + o) * out_axis + i)] = best;
                }
                if (horizontal)
                    dst[(pl * other + o) * out_axis + i] = v;
                else
                    dst[(pl * out_axis + i) * other + o] = v;
            }
        }
}

void apply_axis_backward(const AxisPlan& plan, const double* gdst, double* gsrc,
                         std::int64_t planes, std::int64_t other, bool horizontal,
                         const std::vector<std::int64_t>& argmax) {
    const std::int64_t in_axis = plan.src;
    const std::int64_t out_axis = plan.dst;
    for (std::int64_t pl = 0; pl < planes; ++pl)
        for (std::int64_t o = 0; o < other; ++o) {
            auto src_slot = [&](std::int64_t along) -> double& {
                return horizontal ? gsrc[(pl * other + o) * in_axis + along]
                                  : gsrc[(pl * in_axis + along) * other + o];
            };
            for (std::int64_t i = 0; i < out_axis; ++i) {
                const double g = horizontal ? gdst[(pl * other + o) * out_axis + i]
                                            : gdst[(pl * out_axis + i) * other + o];
                if (plan.kind == AxisPlan::Kind::Bilinear) {
                    const double f = plan.f[static_cast<std::size_t>(i)];
                    src_slot(plan.i0[static_cast<std::size_t>(i)]) += (1.0 - f) * g;
                    src_slot(plan.i1[static_cast<std::size_t>(i)]) += f * g;
                } else if (plan.kind == AxisPlan::Kind::Nearest) {
                    src_slot(plan.i0[static_cast<std::size_t>(i)]) += g;
                } else {
                    src_slot(argmax[static_cast<std::size_t>((pl * other + o) * out_axis + i)]) += g;
                }
            }
        }
}

} // namespace

Tensor resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w, UpsampleMode up) {
    const Shape4 s = x.shape();
    if (out_h < 1 || out_w < 1)
        throw ShapeError("resize: zero-sized target (" + std::to_string(out_h) + "," +
                         std::to_string(out_w) + ")");
    if (s.h < 1 || s.w < 1) throw ShapeError("resize: empty spatial input " + s.str());

    const Tensor* ins[] = {&x};
    Tape* tp = common_tape(ins);

    if (out_h == s.h && out_w == s.w) {
        std::vector<double> out(x.data().begin(), x.data().end());
        if (!tp) return Tensor::from_data(s, std::move(out));
        return tp->emit(ins, s, std::move(out),
                        [](std::span<const double> g, std::span<double* const> gin) {
                            if (!gin[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                        });
    }

    const std::int64_t planes = s.n * s.c;
    const AxisPlan plan_h = plan_axis(s.h, out_h, up);
    const AxisPlan plan_w = plan_axis(s.w, out_w, up);

    auto argmax_h = std::make_shared<std::vector<std::int64_t>>();
    auto argmax_w = std::make_shared<std::vector<std::int64_t>>();

    std::vector<double> mid(static_cast<std::size_t>(planes * out_h * s.w));
    apply_axis(plan_h, x.data().data(), mid.data(), planes, s.w, false, argmax_h.get());
    std::vector<double> out(static_cast<std::size_t>(planes * out_h * out_w));
    apply_axis(plan_w, mid.data(), out.data(), planes, out_h, true, argmax_w.get());

    const Shape4 out_shape{s.n, s.c, out_h, out_w};
    if (!tp) return Tensor::from_data(out_shape, std::move(out));

    return tp->emit(ins, out_shape, std::move(out),
                    [s, planes, out_h, out_w, plan_h, plan_w, argmax_h, argmax_w](
                        std::span<const double> g, std::span<double* const> gin) {
                        if (!gin[0]) return;
                        std::vector<double> gmid(static_cast<std::size_t>(planes * out_h * s.w),
                                                 0.0);
                        apply_axis_backward(plan_w, g.data(), gmid.data(), planes, out_h, true,
                                            *argmax_w);
                        apply_axis_backward(plan_h, gmid.data(), gin[0], planes, s.w, false,
                                            *argmax_h);
                    });
}

} // namespace msconv
