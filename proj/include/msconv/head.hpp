#pragma once

#include "msconv/msconv.hpp"

namespace msconv {

enum class HeadVariant { Baseline, MSConv };

/// Geometry and widths of a detection head; drives both the forward builders
/// and the analytic cost accountant.
struct HeadConfig {
    MSConvConfig ms;                // L, C, C_r, l_gl, k, resize mode
    std::int64_t num_classes = 80;
    std::int64_t anchors_per_loc = 9;
    /// Stacked convs per baseline branch, or shared MSConv blocks.
    /// Unset -> 4 for baseline, 2 for the msconv head.
    std::optional<int> stack_depth;
    bool branch_relu = true;        // ReLU after the msconv head's per-branch conv
    std::int64_t batch = 1;
    std::vector<std::pair<std::int64_t, std::int64_t>> level_shapes;

    int depth(HeadVariant v) const {
        return stack_depth.value_or(v == HeadVariant::Baseline ? 4 : 2);
    }
    std::int64_t cls_out() const { return anchors_per_loc * num_classes; }
    std::int64_t reg_out() const { return anchors_per_loc * 4; }
};

void validate_config(const HeadConfig& cfg, HeadVariant variant);

/// Classification prediction bias start value: -log((1-pi)/pi), pi = 0.01.
double cls_bias_init();

/// Baseline head: two independent branches of stacked 3x3 conv + ReLU,
/// each closed by a 3x3 prediction conv. One weight set serves all levels.
struct BaselineHeadParams {
    std::vector<ConvWeights> cls_stack;
    std::vector<ConvWeights> reg_stack;
    ConvWeights cls_pred;
    ConvWeights reg_pred;
};

/// MSConv head: a stack of MSConv blocks shared by both branches, then per
/// branch one 3x3 conv (optionally ReLU) and a 3x3 prediction conv.
struct MSConvHeadParams {
    std::vector<MSConvParams> blocks;
    ConvWeights cls_conv;
    ConvWeights reg_conv;
    ConvWeights cls_pred;
    ConvWeights reg_pred;
};

BaselineHeadParams baseline_head_params_seeded(const HeadConfig& cfg, std::uint64_t seed);
BaselineHeadParams baseline_head_params_zeros(const HeadConfig& cfg);
MSConvHeadParams msconv_head_params_seeded(const HeadConfig& cfg, std::uint64_t seed);

void for_each_param(BaselineHeadParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const BaselineHeadParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);
void for_each_param(MSConvHeadParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const MSConvHeadParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

BaselineHeadParams attach(Tape& tape, const BaselineHeadParams& p);
MSConvHeadParams attach(Tape& tape, const MSConvHeadParams& p);

/// Per-level classification maps (N, anchors*classes, H, W) and box maps
/// (N, anchors*4, H, W).
struct HeadOutputs {
    std::vector<Tensor> cls;
    std::vector<Tensor> reg;
};

HeadOutputs baseline_head_forward(const FeaturePyramid& x, const BaselineHeadParams& p,
                                  const HeadConfig& cfg);
HeadOutputs msconv_head_forward(const FeaturePyramid& x, const MSConvHeadParams& p,
                                const HeadConfig& cfg);

/// One accounted sub-module: exact parameter count, exact MAC count for the
/// configured shapes, and the closed-form expression behind the number.
struct CostEntry {
    std::string name;
    long long params = 0;
    long long macs = 0;
    std::string formula;
};

struct CostReport {
    HeadVariant variant;
    std::vector<CostEntry> entries;
    long long total_params = 0;
    long long total_macs = 0;
    /// Totals recomputed from a single closed-form expression, as a
    /// cross-check against the per-entry sum.
    long long closed_form_params = 0;
    std::string convention;
};

/// Exact analytic parameter count per sub-module:
/// conv params = k^2 * (C_in/groups) * C_out + C_out (bias).
CostReport count_params(const HeadConfig& cfg, HeadVariant variant);

/// Exact analytic MAC count per sub-module over the configured level shapes:
/// conv MACs = k^2 * (C_in/groups) * C_out * H_out * W_out per level, plus
/// labeled conventions for sampling, pooling and resize traffic.
CostReport count_macs(const HeadConfig& cfg, HeadVariant variant);

/// Sum of numel over every tensor a forward builder allocates; must equal
/// count_params(...).total_params exactly.
long long allocated_param_count(const HeadConfig& cfg, HeadVariant variant);

} // namespace msconv
