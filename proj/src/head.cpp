#include "msconv/head.hpp"

#include <cmath>
#include <sstream>

#include "msconv/rng.hpp"

namespace msconv {

void validate_config(const HeadConfig& cfg, HeadVariant variant) {
    validate_config(cfg.ms);
    if (cfg.num_classes < 1 || cfg.anchors_per_loc < 1)
        throw SchemaError("head config: num_classes and anchors_per_loc must be >= 1");
    if (cfg.depth(variant) < 0) throw SchemaError("head config: stack_depth must be >= 0");
    if (cfg.batch < 1) throw SchemaError("head config: N must be >= 1");
    if (!cfg.level_shapes.empty()) {
        if (static_cast<int>(cfg.level_shapes.size()) != cfg.ms.levels)
            throw SchemaError("head config: shapes count != L");
        for (std::size_t l = 0; l < cfg.level_shapes.size(); ++l) {
            const auto& [h, w] = cfg.level_shapes[l];
            if (h < 1 || w < 1) throw SchemaError("head config: empty level shape");
            if (l > 0 && (h > cfg.level_shapes[l - 1].first || w > cfg.level_shapes[l - 1].second))
                throw SchemaError("head config: level shapes must be non-increasing");
        }
    }
}

double cls_bias_init() {
    const double pi = 0.01;
    return -std::log((1.0 - pi) / pi);
}

namespace {

ConvWeights pred_conv(std::int64_t c_in, std::int64_t c_out, std::uint64_t seed, double bias_value) {
    ConvWeights w = make_conv(c_in, c_out, 3, 1, seed);
    w.bias = Tensor::constant({1, c_out, 1, 1}, bias_value);
    return w;
}

} // namespace

BaselineHeadParams baseline_head_params_seeded(const HeadConfig& cfg, std::uint64_t seed) {
    validate_config(cfg, HeadVariant::Baseline);
    const std::int64_t c = cfg.ms.channels;
    BaselineHeadParams p;
    for (int d = 0; d < cfg.depth(HeadVariant::Baseline); ++d) {
        p.cls_stack.push_back(
            make_conv(c, c, 3, 1, derive_seed(seed, "cls_stack" + std::to_string(d + 1))));
        p.reg_stack.push_back(
            make_conv(c, c, 3, 1, derive_seed(seed, "reg_stack" + std::to_string(d + 1))));
    }
    p.cls_pred = pred_conv(c, cfg.cls_out(), derive_seed(seed, "cls_pred"), cls_bias_init());
    p.reg_pred = pred_conv(c, cfg.reg_out(), derive_seed(seed, "reg_pred"), 0.0);
    return p;
}

BaselineHeadParams baseline_head_params_zeros(const HeadConfig& cfg) {
    validate_config(cfg, HeadVariant::Baseline);
    const std::int64_t c = cfg.ms.channels;
    BaselineHeadParams p;
    for (int d = 0; d < cfg.depth(HeadVariant::Baseline); ++d) {
        p.cls_stack.push_back(make_conv_zeros(c, c, 3, 1));
        p.reg_stack.push_back(make_conv_zeros(c, c, 3, 1));
    }
    p.cls_pred = make_conv_zeros(c, cfg.cls_out(), 3, 1);
    p.reg_pred = make_conv_zeros(c, cfg.reg_out(), 3, 1);
    return p;
}

MSConvHeadParams msconv_head_params_seeded(const HeadConfig& cfg, std::uint64_t seed) {
    validate_config(cfg, HeadVariant::MSConv);
    const std::int64_t c = cfg.ms.channels;
    MSConvHeadParams p;
    for (int d = 0; d < cfg.depth(HeadVariant::MSConv); ++d)
        p.blocks.push_back(
            msconv_params_seeded(cfg.ms, derive_seed(seed, "block" + std::to_string(d + 1))));
    p.cls_conv = make_conv(c, c, 3, 1, derive_seed(seed, "cls_conv"));
    p.reg_conv = make_conv(c, c, 3, 1, derive_seed(seed, "reg_conv"));
    p.cls_pred = pred_conv(c, cfg.cls_out(), derive_seed(seed, "cls_pred"), cls_bias_init());
    p.reg_pred = pred_conv(c, cfg.reg_out(), derive_seed(seed, "reg_pred"), 0.0);
    return p;
}

namespace {

void visit_conv(const std::string& name, ConvWeights& w,
                const std::function<void(const std::string&, Tensor&)>& fn) {
    fn(name + ".kernel", w.kernel);
    if (w.bias) fn(name + ".bias", *w.bias);
}

} // namespace

void for_each_param(BaselineHeadParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t d = 0; d < p.cls_stack.size(); ++d)
        visit_conv("cls_stack" + std::to_string(d + 1), p.cls_stack[d], fn);
    for (std::size_t d = 0; d < p.reg_stack.size(); ++d)
        visit_conv("reg_stack" + std::to_string(d + 1), p.reg_stack[d], fn);
    visit_conv("cls_pred", p.cls_pred, fn);
    visit_conv("reg_pred", p.reg_pred, fn);
}

void for_each_param(const BaselineHeadParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_param(const_cast<BaselineHeadParams&>(p),
                   [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

void for_each_param(MSConvHeadParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b + 1) + ".";
        for_each_param(p.blocks[b],
                       [&](const std::string& name, Tensor& t) { fn(prefix + name, t); });
    }
    visit_conv("cls_conv", p.cls_conv, fn);
    visit_conv("reg_conv", p.reg_conv, fn);
    visit_conv("cls_pred", p.cls_pred, fn);
    visit_conv("reg_pred", p.reg_pred, fn);
}

void for_each_param(const MSConvHeadParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_param(const_cast<MSConvHeadParams&>(p),
                   [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

BaselineHeadParams attach(Tape& tape, const BaselineHeadParams& p) {
    BaselineHeadParams bound = p;
    for_each_param(bound, [&tape](const std::string&, Tensor& t) { t = tape.leaf(t); });
    return bound;
}

MSConvHeadParams attach(Tape& tape, const MSConvHeadParams& p) {
    MSConvHeadParams bound = p;
    for_each_param(bound, [&tape](const std::string&, Tensor& t) { t = tape.leaf(t); });
    return bound;
}

HeadOutputs baseline_head_forward(const FeaturePyramid& x, const BaselineHeadParams& p,
                                  const HeadConfig& cfg) {
    validate_config(cfg, HeadVariant::Baseline);
    validate_pyramid(x);
    if (x.levels[0].shape().c != cfg.ms.channels)
        throw ShapeError("baseline_head_forward: input channels != C");
    HeadOutputs out;
    for (const Tensor& level : x.levels) {
        Tensor c = level;
        for (const ConvWeights& w : p.cls_stack) c = relu(conv2d(c, w));
        out.cls.push_back(conv2d(c, p.cls_pred));
        Tensor r = level;
        for (const ConvWeights& w : p.reg_stack) r = relu(conv2d(r, w));
        out.reg.push_back(conv2d(r, p.reg_pred));
    }
    return out;
}

HeadOutputs msconv_head_forward(const FeaturePyramid& x, const MSConvHeadParams& p,
                                const HeadConfig& cfg) {
    validate_config(cfg, HeadVariant::MSConv);
    validate_pyramid(x);
    if (x.levels[0].shape().c != cfg.ms.channels)
        throw ShapeError("msconv_head_forward: input channels != C");
    FeaturePyramid trunk = x;
    for (const MSConvParams& block : p.blocks) trunk = msconv_forward(trunk, block, cfg.ms);
    HeadOutputs out;
    for (const Tensor& level : trunk.levels) {
        Tensor c = conv2d(level, p.cls_conv);
        Tensor r = conv2d(level, p.reg_conv);
        if (cfg.branch_relu) {
            c = relu(c);
            r = relu(r);
        }
        out.cls.push_back(conv2d(c, p.cls_pred));
        out.reg.push_back(conv2d(r, p.reg_pred));
    }
    return out;
}

namespace {

long long conv_param_count(std::int64_t k, std::int64_t c_in, std::int64_t c_out,
                           std::int64_t groups) {
    return static_cast<long long>(k) * k * (c_in / groups) * c_out + c_out;
}

std::string conv_param_formula(std::int64_t k, std::int64_t c_in, std::int64_t c_out,
                               std::int64_t groups) {
    std::ostringstream os;
    os << k << "^2*(" << c_in << "/" << groups << ")*" << c_out << "+" << c_out;
    return os.str();
}

struct Accountant {
    const HeadConfig& cfg;
    bool with_macs;
    std::vector<CostEntry> entries;

    long long area_sum() const {
        long long s = 0;
        for (const auto& [h, w] : cfg.level_shapes) s += static_cast<long long>(h) * w;
        return s;
    }

    // Shared conv applied at every level.
    void conv_all_levels(const std::string& name, std::int64_t k, std::int64_t c_in,
                         std::int64_t c_out, std::int64_t groups) {
        CostEntry e;
        e.name = name;
        e.params = conv_param_count(k, c_in, c_out, groups);
        e.formula = conv_param_formula(k, c_in, c_out, groups);
        if (with_macs) {
            e.macs = static_cast<long long>(k) * k * (c_in / groups) * c_out * cfg.batch *
                     area_sum();
            e.formula += "; macs=k^2*(C_in/g)*C_out*N*sum(H*W)";
        }
        entries.push_back(std::move(e));
    }

    void conv_one_level(const std::string& name, std::int64_t k, std::int64_t c_in,
                        std::int64_t c_out, std::int64_t groups, int level) {
        CostEntry e;
        e.name = name;
        e.params = conv_param_count(k, c_in, c_out, groups);
        e.formula = conv_param_formula(k, c_in, c_out, groups);
        if (with_macs) {
            const auto& [h, w] = cfg.level_shapes[static_cast<std::size_t>(level)];
            e.macs = static_cast<long long>(k) * k * (c_in / groups) * c_out * cfg.batch * h * w;
            e.formula += "; macs=k^2*C_in*C_out*N*H_l*W_l";
        }
        entries.push_back(std::move(e));
    }

    long long resize_macs(std::int64_t channels, std::int64_t sh, std::int64_t sw,
                          std::int64_t dh, std::int64_t dw) const {
        // 4 MACs per output element for bilinear, 1 per input element for max-pool
        if (dh * dw >= sh * sw) return 4LL * channels * cfg.batch * dh * dw;
        return static_cast<long long>(channels) * cfg.batch * sh * sw;
    }

    void msconv_block(const std::string& prefix) {
        const MSConvConfig& ms = cfg.ms;
        const std::int64_t L = ms.levels;
        const std::int64_t k = ms.kernel;
        const std::int64_t gathered = L * ms.c_reduced;
        for (int l = 0; l < ms.levels; ++l)
            conv_one_level(prefix + "reduce" + std::to_string(l + 1), 1, ms.channels,
                           ms.c_reduced, 1, l);
        if (with_macs) {
            const auto& [gh, gw] =
                cfg.level_shapes[static_cast<std::size_t>(ms.gather_level - 1)];
            CostEntry gatherer;
            gatherer.name = prefix + "gather_resize";
            gatherer.formula = "bilinear: 4 MACs/output element; max-pool: 1/input element";
            CostEntry scatterer;
            scatterer.name = prefix + "scatter_resize";
            scatterer.formula = gatherer.formula;
            for (int l = 0; l < ms.levels; ++l) {
                if (l == ms.gather_level - 1) continue;
                const auto& [h, w] = cfg.level_shapes[static_cast<std::size_t>(l)];
                gatherer.macs += resize_macs(ms.c_reduced, h, w, gh, gw);
                scatterer.macs += resize_macs(gathered, gh, gw, h, w);
            }
            entries.push_back(std::move(gatherer));
            entries.push_back(std::move(scatterer));
        }
        conv_all_levels(prefix + "offset_gen", k, ms.channels, 3 * L * k * k, 1);
        {
            CostEntry e;
            e.name = prefix + "deform";
            e.params = conv_param_count(k, gathered, gathered, L);
            e.formula = conv_param_formula(k, gathered, gathered, L);
            if (with_macs) {
                e.macs = (static_cast<long long>(k) * k * ms.c_reduced * gathered +
                          8LL * gathered * k * k) *
                         cfg.batch * area_sum();
                e.formula += "; macs=conv + 8 per bilinear sample per tap";
            }
            entries.push_back(std::move(e));
        }
        conv_all_levels(prefix + "merge", 1, gathered, ms.channels, 1);
        if (with_macs) {
            CostEntry lap;
            lap.name = prefix + "ca_lap";
            lap.macs = 9LL * ms.channels * cfg.batch * area_sum();
            lap.formula = "macs=3^2*C*N*sum(H*W)";
            entries.push_back(std::move(lap));
            CostEntry gap;
            gap.name = prefix + "ca_gap";
            gap.macs = static_cast<long long>(ms.channels) * cfg.batch * area_sum();
            gap.formula = "macs=C*N*sum(H*W)";
            entries.push_back(std::move(gap));
        }
        conv_all_levels(prefix + "ca_local", 1, ms.channels, ms.channels, 1);
        {
            // GAP branch conv acts on a 1x1 map, so it is area-independent.
            CostEntry e;
            e.name = prefix + "ca_global";
            e.params = conv_param_count(1, ms.channels, ms.channels, 1);
            e.formula = conv_param_formula(1, ms.channels, ms.channels, 1);
            if (with_macs) {
                e.macs = static_cast<long long>(ms.channels) * ms.channels * cfg.batch * ms.levels;
                e.formula += "; macs=C*C*N*L (1x1 input)";
            }
            entries.push_back(std::move(e));
        }
        conv_all_levels(prefix + "ca_out", 1, ms.channels, ms.channels, 1);
        conv_all_levels(prefix + "out", 3, ms.channels, ms.channels, 1);
    }
};

long long msconv_block_closed_form(const MSConvConfig& ms) {
    const long long L = ms.levels;
    const long long C = ms.channels;
    const long long Cr = ms.c_reduced;
    const long long k = ms.kernel;
    return L * (C * Cr + Cr) + (k * k * C * (3 * L * k * k) + 3 * L * k * k) +
           (k * k * Cr * (L * Cr) + L * Cr) + (L * Cr * C + C) + 3 * (C * C + C) +
           (9 * C * C + C);
}

CostReport build_report(const HeadConfig& cfg, HeadVariant variant, bool with_macs) {
    validate_config(cfg, variant);
    if (with_macs && cfg.level_shapes.empty())
        throw SchemaError("count_macs: config has no level shapes");
    Accountant acc{cfg, with_macs, {}};
    const std::int64_t c = cfg.ms.channels;
    const int depth = cfg.depth(variant);
    if (variant == HeadVariant::Baseline) {
        for (int d = 0; d < depth; ++d)
            acc.conv_all_levels("cls_stack" + std::to_string(d + 1), 3, c, c, 1);
        for (int d = 0; d < depth; ++d)
            acc.conv_all_levels("reg_stack" + std::to_string(d + 1), 3, c, c, 1);
    } else {
        for (int d = 0; d < depth; ++d)
            acc.msconv_block("block" + std::to_string(d + 1) + ".");
        acc.conv_all_levels("cls_conv", 3, c, c, 1);
        acc.conv_all_levels("reg_conv", 3, c, c, 1);
    }
    acc.conv_all_levels("cls_pred", 3, c, cfg.cls_out(), 1);
    acc.conv_all_levels("reg_pred", 3, c, cfg.reg_out(), 1);

    CostReport report;
    report.variant = variant;
    report.entries = std::move(acc.entries);
    for (const CostEntry& e : report.entries) {
        report.total_params += e.params;
        report.total_macs += e.macs;
    }
    const long long preds = 9 * c * cfg.cls_out() + cfg.cls_out() + 9 * c * cfg.reg_out() +
                            cfg.reg_out();
    if (variant == HeadVariant::Baseline)
        report.closed_form_params = 2LL * depth * (9 * c * c + c) + preds;
    else
        report.closed_form_params =
            depth * msconv_block_closed_form(cfg.ms) + 2LL * (9 * c * c + c) + preds;
    report.convention =
        "counts are multiply-accumulates (MAC = FLOP/2 under the 2-ops-per-MAC reading); "
        "elementwise adds/gates are not counted";
    return report;
}

} // namespace

CostReport count_params(const HeadConfig& cfg, HeadVariant variant) {
    return build_report(cfg, variant, false);
}

CostReport count_macs(const HeadConfig& cfg, HeadVariant variant) {
    return build_report(cfg, variant, true);
}

long long allocated_param_count(const HeadConfig& cfg, HeadVariant variant) {
    long long total = 0;
    auto tally = [&total](const std::string&, const Tensor& t) { total += t.numel(); };
    if (variant == HeadVariant::Baseline) {
        const BaselineHeadParams p = baseline_head_params_seeded(cfg, 1);
        for_each_param(p, tally);
    } else {
        const MSConvHeadParams p = msconv_head_params_seeded(cfg, 1);
        for_each_param(p, tally);
    }
    return total;
}

} // namespace msconv
