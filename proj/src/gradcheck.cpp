#include "msconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "msconv/head.hpp"
#include "msconv/rng.hpp"

namespace msconv {

GradcheckReport run_gradcheck(const std::string& name, const GradcheckCase& c) {
    Tape tape;
    std::vector<Tensor> bound;
    bound.reserve(c.inputs.size());
    for (const Tensor& t : c.inputs) bound.push_back(tape.leaf(t));
    const Tensor loss = c.loss(bound);
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(bound.size());
    for (const Tensor& t : bound) {
        auto g = tape.grad(t);
        analytic.emplace_back(g.begin(), g.end());
    }

    const double h = 1e-5;
    GradcheckReport report;
    report.op = name;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        for (std::int64_t j = 0; j < c.inputs[i].numel(); ++j) {
            std::vector<Tensor> work = c.inputs;
            work[i] = c.inputs[i].perturbed(j, h);
            const double fp = c.loss(work).value();
            work[i] = c.inputs[i].perturbed(j, -h);
            const double fm = c.loss(work).value();
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][static_cast<std::size_t>(j)];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-8});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_err < 1e-6;
    return report;
}

namespace {

// Finite differences at step 1e-5 leave ~1e-11 * |loss| of roundoff, so the
// 1e-6 relative gate needs every gradient component bounded away from zero.
// The constructors below arrange that: positive weights and kernels make each
// partial derivative a sum of positive terms, monotone ramps keep the bilinear
// sampling derivatives one-signed, and separated grids pin max-pool argmaxes.

Tensor randn_shifted_from_zero(const Shape4& shape, std::uint64_t seed, double margin) {
    std::vector<double> d(static_cast<std::size_t>(shape.numel()));
    fill_normal(d, seed, 1.0);
    for (double& v : d) v += v >= 0.0 ? margin : -margin;
    return Tensor::from_data(shape, d);
}

// Fractional parts kept in [0.25, 0.75) so bilinear sampling stays away from
// the integer-lattice kinks under the finite-difference step.
Tensor offsets_off_integer(const Shape4& shape, std::uint64_t seed) {
    std::vector<double> d(static_cast<std::size_t>(shape.numel()));
    fill_normal(d, seed, 1.0);
    for (double& v : d) {
        const double base = std::floor(v);
        v = base + 0.25 + 0.5 * (v - base);
    }
    return Tensor::from_data(shape, d);
}

Tensor uniform_tensor(const Shape4& shape, std::uint64_t seed, double lo, double hi) {
    std::vector<double> d(static_cast<std::size_t>(shape.numel()));
    SplitMix64 rng(seed);
    for (double& v : d) v = lo + (hi - lo) * rng.next_unit();
    return Tensor::from_data(shape, d);
}

// Strictly increasing along y and x in every plane.
Tensor ramp_tensor(const Shape4& shape, double step) {
    std::vector<double> d(static_cast<std::size_t>(shape.numel()));
    std::size_t i = 0;
    for (std::int64_t n = 0; n < shape.n; ++n)
        for (std::int64_t c = 0; c < shape.c; ++c)
            for (std::int64_t y = 0; y < shape.h; ++y)
                for (std::int64_t x = 0; x < shape.w; ++x)
                    d[i++] = 0.3 + step * static_cast<double>(y * shape.w + x) +
                             0.17 * static_cast<double>(c) + 0.41 * static_cast<double>(n);
    return Tensor::from_data(shape, d);
}

// Shuffled positive arithmetic grid: pairwise gaps >= 0.25, so max-pool
// argmaxes are stable under the finite-difference step.
Tensor separated_values(const Shape4& shape, std::uint64_t seed) {
    const std::int64_t n = shape.numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        d[static_cast<std::size_t>(i)] = 0.25 * static_cast<double>(i + 1);
    SplitMix64 rng(seed);
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j =
            static_cast<std::int64_t>(rng.next() % static_cast<std::uint64_t>(i + 1));
        std::swap(d[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(j)]);
    }
    return Tensor::from_data(shape, d);
}

// Fixed positive projection to a scalar; keeps the loss sensitive to every
// output element without sign cancellation across elements.
std::function<Tensor(std::span<const Tensor>)>
project_loss(std::function<std::vector<Tensor>(std::span<const Tensor>)> forward,
             const std::vector<Shape4>& out_shapes, std::uint64_t seed) {
    std::vector<Tensor> weights;
    for (std::size_t i = 0; i < out_shapes.size(); ++i)
        weights.push_back(uniform_tensor(out_shapes[i],
                                         derive_seed(seed, "loss_w" + std::to_string(i)), 0.5,
                                         1.5));
    return [forward = std::move(forward), weights](std::span<const Tensor> ins) {
        const std::vector<Tensor> outs = forward(ins);
        Tensor total;
        for (std::size_t i = 0; i < outs.size(); ++i) {
            Tensor term = sum_all(mul(outs[i], weights[i]));
            total = i == 0 ? term : add(total, term);
        }
        return total;
    };
}

GradcheckCase elementwise_case(std::uint64_t seed, bool broadcast, bool is_mul) {
    const Shape4 as{1, 3, 4, 4};
    const Shape4 bs = broadcast ? Shape4{1, 3, 1, 1} : as;
    GradcheckCase c;
    c.inputs = {uniform_tensor(as, derive_seed(seed, "a"), 0.5, 1.5),
                uniform_tensor(bs, derive_seed(seed, "b"), 0.5, 1.5)};
    c.loss = project_loss(
        [is_mul](std::span<const Tensor> ins) {
            return std::vector<Tensor>{is_mul ? mul(ins[0], ins[1]) : add(ins[0], ins[1])};
        },
        {as}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase sigmoid_case(std::uint64_t seed) {
    const Shape4 s{1, 4, 3, 3};
    GradcheckCase c;
    c.inputs = {uniform_tensor(s, derive_seed(seed, "x"), -1.5, 1.5)};
    c.loss = project_loss(
        [](std::span<const Tensor> ins) { return std::vector<Tensor>{sigmoid(ins[0])}; }, {s},
        derive_seed(seed, "w"));
    return c;
}

GradcheckCase relu_case(std::uint64_t seed) {
    const Shape4 s{1, 4, 3, 3};
    GradcheckCase c;
    c.inputs = {randn_shifted_from_zero(s, derive_seed(seed, "x"), 0.05)};
    c.loss = project_loss(
        [](std::span<const Tensor> ins) { return std::vector<Tensor>{relu(ins[0])}; }, {s},
        derive_seed(seed, "w"));
    return c;
}

GradcheckCase concat_case(std::uint64_t seed) {
    GradcheckCase c;
    c.inputs = {uniform_tensor({1, 2, 3, 3}, derive_seed(seed, "a"), 0.5, 1.5),
                uniform_tensor({1, 3, 3, 3}, derive_seed(seed, "b"), 0.5, 1.5),
                uniform_tensor({1, 1, 3, 3}, derive_seed(seed, "c"), 0.5, 1.5)};
    c.loss = project_loss(
        [](std::span<const Tensor> ins) {
            return std::vector<Tensor>{concat_channels({ins.data(), ins.size()})};
        },
        {Shape4{1, 6, 3, 3}}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase conv_case(std::uint64_t seed, int groups, int k) {
    const std::int64_t cin = groups == 1 ? 3 : 2 * groups;
    const std::int64_t cout = groups == 1 ? 2 : 2 * groups;
    const Shape4 xs{1, cin, 5, 5};
    GradcheckCase c;
    c.inputs = {uniform_tensor(xs, derive_seed(seed, "x"), 0.5, 1.5),
                uniform_tensor({cout, cin / groups, k, k}, derive_seed(seed, "k"), 0.5, 1.5),
                uniform_tensor({1, cout, 1, 1}, derive_seed(seed, "b"), 0.5, 1.5)};
    c.loss = project_loss(
        [groups, k](std::span<const Tensor> ins) {
            ConvWeights w{ins[1], ins[2], 1, (k - 1) / 2, groups};
            return std::vector<Tensor>{conv2d(ins[0], w)};
        },
        {Shape4{1, cout, 5, 5}}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase deform_case(std::uint64_t seed, int groups, int deform_groups, int k) {
    const std::int64_t cin = groups == 1 ? 3 : 2 * groups;
    const std::int64_t cout = groups == 1 ? 2 : 2 * groups;
    const std::int64_t kk = static_cast<std::int64_t>(k) * k;
    const Shape4 xs{1, cin, 5, 5};
    GradcheckCase c;
    c.inputs = {ramp_tensor(xs, 0.25),
                offsets_off_integer({1, 2 * deform_groups * kk, 5, 5}, derive_seed(seed, "o")),
                uniform_tensor({1, deform_groups * kk, 5, 5}, derive_seed(seed, "m"), 0.4, 0.8),
                uniform_tensor({cout, cin / groups, k, k}, derive_seed(seed, "k"), 0.5, 1.5),
                uniform_tensor({1, cout, 1, 1}, derive_seed(seed, "b"), 0.5, 1.5)};
    c.loss = project_loss(
        [groups, deform_groups, k](std::span<const Tensor> ins) {
            ConvWeights w{ins[3], ins[4], 1, (k - 1) / 2, groups};
            DeformInputs d{ins[1], ins[2]};
            return std::vector<Tensor>{modulated_deform_conv2d(ins[0], d, w, deform_groups)};
        },
        {Shape4{1, cout, 5, 5}}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase lap_case(std::uint64_t seed, const Shape4& s) {
    GradcheckCase c;
    c.inputs = {uniform_tensor(s, derive_seed(seed, "x"), 0.5, 1.5)};
    c.loss = project_loss(
        [](std::span<const Tensor> ins) { return std::vector<Tensor>{local_avg_pool(ins[0], 3)}; },
        {s}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase gap_case(std::uint64_t seed) {
    const Shape4 s{1, 3, 4, 5};
    GradcheckCase c;
    c.inputs = {uniform_tensor(s, derive_seed(seed, "x"), 0.5, 1.5)};
    c.loss = project_loss(
        [](std::span<const Tensor> ins) { return std::vector<Tensor>{global_avg_pool(ins[0])}; },
        {Shape4{1, 3, 1, 1}}, derive_seed(seed, "w"));
    return c;
}

GradcheckCase resize_case(std::uint64_t seed, const Shape4& in, std::int64_t oh, std::int64_t ow,
                          UpsampleMode up, bool separate_values) {
    GradcheckCase c;
    c.inputs = {separate_values ? separated_values(in, derive_seed(seed, "x"))
                                : uniform_tensor(in, derive_seed(seed, "x"), 0.5, 1.5)};
    c.loss = project_loss(
        [oh, ow, up](std::span<const Tensor> ins) {
            return std::vector<Tensor>{resize(ins[0], oh, ow, up)};
        },
        {Shape4{in.n, in.c, oh, ow}}, derive_seed(seed, "w"));
    return c;
}

// Positive parameters keep every gradient path in the composite cases a sum
// of one-signed terms. Kernels stay small so activations remain O(1) and the
// attention sigmoid keeps a responsive slope (a saturated gate has ~1e-16
// weight gradients, which the 1e-8 denominator floor turns into noise).
template <class Params>
void positivize_params(Params& p, std::uint64_t seed) {
    for_each_param(p, [seed](const std::string& name, Tensor& t) {
        const bool kernel = name.size() > 7 && name.rfind(".kernel") == name.size() - 7;
        t = uniform_tensor(t.shape(), derive_seed(seed, name), kernel ? 0.05 : 0.1,
                           kernel ? 0.25 : 0.3);
    });
}

// Nudges the offset generator away from the zero init: sample coordinates sit
// around 0.37 past the integer grid, clear of the bilinear kinks even under
// the finite-difference step.
void condition_offset_gen(MSConvParams& p, const MSConvConfig& cfg, std::uint64_t seed) {
    const std::int64_t kk = static_cast<std::int64_t>(cfg.kernel) * cfg.kernel;
    const std::int64_t total = 3 * cfg.levels * kk;
    p.offset_gen.kernel =
        uniform_tensor(p.offset_gen.kernel.shape(), seed, -0.005, 0.005);
    std::vector<double> bias(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i)
        bias[static_cast<std::size_t>(i)] = i < 2 * cfg.levels * kk ? 0.37 : 0.2;
    p.offset_gen.bias = Tensor::from_data({1, total, 1, 1}, std::move(bias));
}

std::vector<Tensor> flatten_params(const MSConvParams& p) {
    std::vector<Tensor> flat;
    for_each_param(p, [&flat](const std::string&, const Tensor& t) { flat.push_back(t); });
    return flat;
}

MSConvConfig tiny_msconv_config() {
    MSConvConfig cfg;
    cfg.levels = 2;
    cfg.channels = 4;
    cfg.c_reduced = 2;
    cfg.gather_level = 1;
    cfg.kernel = 1;
    return cfg;
}

GradcheckCase msconv_case(std::uint64_t seed) {
    const MSConvConfig cfg = tiny_msconv_config();
    MSConvParams params = msconv_params_seeded(cfg, derive_seed(seed, "params"));
    positivize_params(params, derive_seed(seed, "pos"));
    condition_offset_gen(params, cfg, derive_seed(seed, "offset_gen"));

    GradcheckCase c;
    c.inputs = {ramp_tensor({1, cfg.channels, 6, 6}, 0.1),
                ramp_tensor({1, cfg.channels, 3, 3}, 0.1)};
    for (const Tensor& t : flatten_params(params)) c.inputs.push_back(t);

    const std::vector<Shape4> out_shapes{{1, cfg.channels, 6, 6}, {1, cfg.channels, 3, 3}};
    c.loss = project_loss(
        [cfg](std::span<const Tensor> ins) {
            FeaturePyramid x;
            x.levels = {ins[0], ins[1]};
            std::size_t i = 2;
            MSConvParams p = msconv_params_zeros(cfg);
            for_each_param(p, [&](const std::string&, Tensor& t) { t = ins[i++]; });
            return msconv_forward(x, p, cfg).levels;
        },
        out_shapes, derive_seed(seed, "w"));
    return c;
}

HeadConfig tiny_head_config() {
    HeadConfig cfg;
    cfg.ms = tiny_msconv_config();
    cfg.num_classes = 2;
    cfg.anchors_per_loc = 1;
    cfg.stack_depth = 1;
    cfg.level_shapes = {{4, 4}, {2, 2}};
    return cfg;
}

GradcheckCase baseline_head_case(std::uint64_t seed) {
    const HeadConfig cfg = tiny_head_config();
    BaselineHeadParams params = baseline_head_params_seeded(cfg, derive_seed(seed, "p"));
    positivize_params(params, derive_seed(seed, "pos"));

    GradcheckCase c;
    c.inputs = {ramp_tensor({1, cfg.ms.channels, 4, 4}, 0.1),
                ramp_tensor({1, cfg.ms.channels, 2, 2}, 0.1)};
    for_each_param(params,
                   [&c](const std::string&, const Tensor& t) { c.inputs.push_back(t); });

    std::vector<Shape4> out_shapes;
    for (const auto& [h, w] : cfg.level_shapes) out_shapes.push_back({1, cfg.cls_out(), h, w});
    for (const auto& [h, w] : cfg.level_shapes) out_shapes.push_back({1, cfg.reg_out(), h, w});
    c.loss = project_loss(
        [cfg](std::span<const Tensor> ins) {
            FeaturePyramid x;
            x.levels = {ins[0], ins[1]};
            std::size_t i = 2;
            BaselineHeadParams p = baseline_head_params_zeros(cfg);
            for_each_param(p, [&](const std::string&, Tensor& t) { t = ins[i++]; });
            const HeadOutputs out = baseline_head_forward(x, p, cfg);
            std::vector<Tensor> all = out.cls;
            all.insert(all.end(), out.reg.begin(), out.reg.end());
            return all;
        },
        out_shapes, derive_seed(seed, "w"));
    return c;
}

GradcheckCase msconv_head_case(std::uint64_t seed) {
    const HeadConfig cfg = tiny_head_config();
    MSConvHeadParams params = msconv_head_params_seeded(cfg, derive_seed(seed, "p"));
    positivize_params(params, derive_seed(seed, "pos"));
    for (std::size_t b = 0; b < params.blocks.size(); ++b)
        condition_offset_gen(params.blocks[b], cfg.ms,
                             derive_seed(seed, "offset_gen" + std::to_string(b)));

    GradcheckCase c;
    c.inputs = {ramp_tensor({1, cfg.ms.channels, 4, 4}, 0.1),
                ramp_tensor({1, cfg.ms.channels, 2, 2}, 0.1)};
    for_each_param(params,
                   [&c](const std::string&, const Tensor& t) { c.inputs.push_back(t); });

    std::vector<Shape4> out_shapes;
    for (const auto& [h, w] : cfg.level_shapes) out_shapes.push_back({1, cfg.cls_out(), h, w});
    for (const auto& [h, w] : cfg.level_shapes) out_shapes.push_back({1, cfg.reg_out(), h, w});
    c.loss = project_loss(
        [cfg](std::span<const Tensor> ins) {
            FeaturePyramid x;
            x.levels = {ins[0], ins[1]};
            std::size_t i = 2;
            MSConvHeadParams p = msconv_head_params_seeded(cfg, 0);
            for_each_param(p, [&](const std::string&, Tensor& t) { t = ins[i++]; });
            const HeadOutputs out = msconv_head_forward(x, p, cfg);
            std::vector<Tensor> all = out.cls;
            all.insert(all.end(), out.reg.begin(), out.reg.end());
            return all;
        },
        out_shapes, derive_seed(seed, "w"));
    return c;
}

using CaseBuilder = std::function<std::vector<GradcheckCase>(std::uint64_t)>;

const std::vector<std::pair<std::string, CaseBuilder>>& registry() {
    static const std::vector<std::pair<std::string, CaseBuilder>> reg = {
        {"add",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{elementwise_case(s, false, false),
                                               elementwise_case(s + 1, true, false)};
         }},
        {"mul",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{elementwise_case(s, false, true),
                                               elementwise_case(s + 1, true, true)};
         }},
        {"sigmoid",
         [](std::uint64_t s) { return std::vector<GradcheckCase>{sigmoid_case(s)}; }},
        {"relu", [](std::uint64_t s) { return std::vector<GradcheckCase>{relu_case(s)}; }},
        {"concat", [](std::uint64_t s) { return std::vector<GradcheckCase>{concat_case(s)}; }},
        {"conv2d",
         [](std::uint64_t s) {
             std::vector<GradcheckCase> cases;
             for (int g : {1, 2, 4})
                 for (int k : {1, 3}) cases.push_back(conv_case(s + g * 10 + k, g, k));
             return cases;
         }},
        {"deform_conv",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{deform_case(s, 1, 1, 1), deform_case(s + 1, 2, 2, 3)};
         }},
        {"lap",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{lap_case(s, {1, 3, 5, 5}), lap_case(s + 1, {1, 2, 1, 1})};
         }},
        {"gap", [](std::uint64_t s) { return std::vector<GradcheckCase>{gap_case(s)}; }},
        {"resize_up",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{
                 resize_case(s, {1, 2, 3, 4}, 5, 7, UpsampleMode::Bilinear, false),
                 resize_case(s + 1, {1, 2, 3, 3}, 5, 5, UpsampleMode::Nearest, false)};
         }},
        {"resize_down",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{
                 resize_case(s, {1, 2, 6, 7}, 3, 3, UpsampleMode::Bilinear, true)};
         }},
        {"resize_mixed",
         [](std::uint64_t s) {
             return std::vector<GradcheckCase>{
                 resize_case(s, {1, 2, 4, 3}, 2, 6, UpsampleMode::Bilinear, true)};
         }},
        {"msconv", [](std::uint64_t s) { return std::vector<GradcheckCase>{msconv_case(s)}; }},
        {"baseline_head",
         [](std::uint64_t s) { return std::vector<GradcheckCase>{baseline_head_case(s)}; }},
        {"msconv_head",
         [](std::uint64_t s) { return std::vector<GradcheckCase>{msconv_head_case(s)}; }},
    };
    return reg;
}

} // namespace

std::vector<std::string> gradcheck_op_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

GradcheckReport run_gradcheck_op(const std::string& name, std::uint64_t seed) {
    for (const auto& [op, builder] : registry()) {
        if (op != name) continue;
        GradcheckReport merged;
        merged.op = name;
        merged.pass = true;
        for (const GradcheckCase& c : builder(seed)) {
            const GradcheckReport r = run_gradcheck(name, c);
            merged.max_rel_err = std::max(merged.max_rel_err, r.max_rel_err);
            merged.pass = merged.pass && r.pass;
            merged.checked += r.checked;
        }
        return merged;
    }
    throw SchemaError("unknown gradcheck op '" + name + "'");
}

std::vector<GradcheckReport> run_all_gradchecks(std::uint64_t seed) {
    std::vector<GradcheckReport> reports;
    for (const auto& [name, _] : registry()) reports.push_back(run_gradcheck_op(name, seed));
    return reports;
}

} // namespace msconv
