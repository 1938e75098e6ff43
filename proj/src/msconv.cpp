#include "msconv/msconv.hpp"

#include "msconv/rng.hpp"

namespace msconv {

void validate_config(const MSConvConfig& cfg) {
    if (cfg.levels < 1) throw SchemaError("config: L must be >= 1");
    if (cfg.channels < 1) throw SchemaError("config: C must be >= 1");
    if (cfg.c_reduced < 1 || cfg.c_reduced > cfg.channels)
        throw SchemaError("config: C_r must satisfy 1 <= C_r <= C");
    if (cfg.gather_level < 1 || cfg.gather_level > cfg.levels)
        throw SchemaError("config: l_gl must be in [1, L]");
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0) throw SchemaError("config: k must be odd");
}

namespace {

std::int64_t offset_channels(const MSConvConfig& cfg) {
    return 3LL * cfg.levels * cfg.kernel * cfg.kernel;
}

MSConvParams build_params(const MSConvConfig& cfg, std::uint64_t seed, bool seeded) {
    validate_config(cfg);
    MSConvParams p;
    auto conv = [&](const std::string& name, std::int64_t c_in, std::int64_t c_out, int k,
                    int groups) {
        return seeded ? make_conv(c_in, c_out, k, groups, derive_seed(seed, name + ".kernel"))
                      : make_conv_zeros(c_in, c_out, k, groups);
    };
    for (int l = 0; l < cfg.levels; ++l)
        p.reduce.push_back(conv("reduce" + std::to_string(l + 1), cfg.channels, cfg.c_reduced, 1, 1));
    // offsets start at 0 and masks at 0.5 regardless of the seed
    p.offset_gen = make_conv_zeros(cfg.channels, offset_channels(cfg), cfg.kernel, 1);
    const std::int64_t gathered = static_cast<std::int64_t>(cfg.levels) * cfg.c_reduced;
    p.deform = conv("deform", gathered, gathered, cfg.kernel, cfg.levels);
    p.merge = conv("merge", gathered, cfg.channels, 1, 1);
    p.ca_local = conv("ca_local", cfg.channels, cfg.channels, 1, 1);
    p.ca_global = conv("ca_global", cfg.channels, cfg.channels, 1, 1);
    p.ca_out = conv("ca_out", cfg.channels, cfg.channels, 1, 1);
    p.out = conv("out", cfg.channels, cfg.channels, 3, 1);
    return p;
}

} // namespace

MSConvParams msconv_params_seeded(const MSConvConfig& cfg, std::uint64_t seed) {
    return build_params(cfg, seed, true);
}

MSConvParams msconv_params_zeros(const MSConvConfig& cfg) { return build_params(cfg, 0, false); }

MSConvParams msconv_params_identity(const MSConvConfig& cfg) {
    MSConvParams p = msconv_params_zeros(cfg);
    p.out = make_conv_identity(cfg.channels, 3);
    return p;
}

namespace {

void visit_conv(const std::string& name, ConvWeights& w,
                const std::function<void(const std::string&, Tensor&)>& fn) {
    fn(name + ".kernel", w.kernel);
    if (w.bias) fn(name + ".bias", *w.bias);
}

} // namespace

void for_each_param(MSConvParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t l = 0; l < p.reduce.size(); ++l)
        visit_conv("reduce" + std::to_string(l + 1), p.reduce[l], fn);
    visit_conv("offset_gen", p.offset_gen, fn);
    visit_conv("deform", p.deform, fn);
    visit_conv("merge", p.merge, fn);
    visit_conv("ca_local", p.ca_local, fn);
    visit_conv("ca_global", p.ca_global, fn);
    visit_conv("ca_out", p.ca_out, fn);
    visit_conv("out", p.out, fn);
}

void for_each_param(const MSConvParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_param(const_cast<MSConvParams&>(p),
                   [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

MSConvParams attach(Tape& tape, const MSConvParams& p) {
    MSConvParams bound = p;
    for_each_param(bound, [&tape](const std::string&, Tensor& t) { t = tape.leaf(t); });
    return bound;
}

Tensor scale_align(const Tensor& gathered_level, const Tensor& original_level,
                   const MSConvParams& p, const MSConvConfig& cfg) {
    validate_config(cfg);
    const Shape4 qs = gathered_level.shape();
    const Shape4 xs = original_level.shape();
    const std::int64_t gathered = static_cast<std::int64_t>(cfg.levels) * cfg.c_reduced;
    if (qs.c != gathered)
        throw ShapeError("scale_align: gathered features have " + std::to_string(qs.c) +
                         " channels, expected L*C_r = " + std::to_string(gathered));
    if (xs.c != cfg.channels)
        throw ShapeError("scale_align: original features have " + std::to_string(xs.c) +
                         " channels, expected C = " + std::to_string(cfg.channels));
    if (qs.h != xs.h || qs.w != xs.w || qs.n != xs.n)
        throw ShapeError("scale_align: feature shapes differ: " + qs.str() + " vs " + xs.str());

    const Tensor raw = conv2d(original_level, p.offset_gen);
    const std::int64_t kk = static_cast<std::int64_t>(cfg.kernel) * cfg.kernel;
    const std::int64_t off_c = 2LL * cfg.levels * kk;
    if (raw.shape().c != 3LL * cfg.levels * kk)
        throw ShapeError("scale_align: offset_gen produced " + std::to_string(raw.shape().c) +
                         " channels, expected 3*L*k^2 = " + std::to_string(3LL * cfg.levels * kk));
    DeformInputs d;
    d.offsets = slice_channels(raw, 0, off_c);
    d.mask = sigmoid(slice_channels(raw, off_c, off_c + cfg.levels * kk));
    return modulated_deform_conv2d(gathered_level, d, p.deform, cfg.levels);
}

Tensor merge_channels(const Tensor& aligned, const MSConvParams& p) {
    return conv2d(aligned, p.merge);
}

Tensor context_attention(const Tensor& merged, const MSConvParams& p) {
    const Tensor local_feat = conv2d(local_avg_pool(merged, 3), p.ca_local);
    const Tensor global_feat = conv2d(global_avg_pool(merged), p.ca_global);
    const Tensor gate = sigmoid(conv2d(add(local_feat, global_feat), p.ca_out));
    return mul(merged, gate);
}

FeaturePyramid msconv_forward(const FeaturePyramid& x, const MSConvParams& p,
                              const MSConvConfig& cfg) {
    validate_config(cfg);
    validate_pyramid(x);
    if (static_cast<int>(x.levels.size()) != cfg.levels)
        throw ShapeError("msconv_forward: pyramid has " + std::to_string(x.levels.size()) +
                         " levels, config says " + std::to_string(cfg.levels));
    if (x.levels[0].shape().c != cfg.channels)
        throw ShapeError("msconv_forward: pyramid has " + std::to_string(x.levels[0].shape().c) +
                         " channels, config says " + std::to_string(cfg.channels));

    const std::vector<Tensor> reduced = reduce_channels(x, p.reduce);
    const Tensor gathered = gather(reduced, cfg.gather_cfg());
    std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
    for (const Tensor& level : x.levels) shapes.emplace_back(level.shape().h, level.shape().w);
    const std::vector<Tensor> q = scatter(gathered, shapes, cfg.gather_cfg());

    FeaturePyramid y;
    for (std::size_t l = 0; l < x.levels.size(); ++l) {
        const Tensor aligned = scale_align(q[l], x.levels[l], p, cfg);
        const Tensor merged = merge_channels(aligned, p);
        const Tensor attended = context_attention(merged, p);
        y.levels.push_back(conv2d(add(attended, x.levels[l]), p.out));
    }
    return y;
}

} // namespace msconv
