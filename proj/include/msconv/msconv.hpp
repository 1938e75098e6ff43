#pragma once

#include <functional>

#include "msconv/pyramid.hpp"

namespace msconv {

/// Static configuration of one MSConv block.
struct MSConvConfig {
    int levels = 5;              // L
    std::int64_t channels = 256; // C
    std::int64_t c_reduced = 64; // C_r
    int gather_level = 1;        // l_gl, 1-based
    int kernel = 1;              // k, odd
    UpsampleMode resize_up = UpsampleMode::Bilinear;

    GatherConfig gather_cfg() const { return {c_reduced, gather_level, resize_up}; }
};

void validate_config(const MSConvConfig& cfg);

/// All learnable weights of one MSConv block. The post-gather pipeline
/// (offset_gen, deform, merge, attention, out) is a single shared instance
/// applied at every level; only the per-level reduction convs are unshared.
struct MSConvParams {
    std::vector<ConvWeights> reduce; // L entries, 1x1, C -> C_r
    ConvWeights offset_gen;          // k x k, C -> 3*L*k^2 (2*L*k^2 offsets + L*k^2 mask logits)
    ConvWeights deform;              // k x k, L*C_r -> L*C_r, groups = L
    ConvWeights merge;               // 1x1, L*C_r -> C
    ConvWeights ca_local;            // 1x1, C -> C
    ConvWeights ca_global;           // 1x1, C -> C
    ConvWeights ca_out;              // 1x1, C -> C
    ConvWeights out;                 // 3x3, C -> C
};

/// Kernels are seeded-normal with std sqrt(2 / fan_in) and zero bias;
/// offset_gen starts all-zero so offsets begin at 0 and masks at 0.5.
MSConvParams msconv_params_seeded(const MSConvConfig& cfg, std::uint64_t seed);
MSConvParams msconv_params_zeros(const MSConvConfig& cfg);
/// Zero everywhere except an identity-center out conv: the whole block is the
/// identity map on the pyramid.
MSConvParams msconv_params_identity(const MSConvConfig& cfg);

/// Visits every learnable tensor with its canonical name
/// ("reduce1.kernel", ..., "out.bias"), in a fixed order.
void for_each_param(MSConvParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const MSConvParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

/// Binds every parameter tensor to `tape` as a learnable leaf.
MSConvParams attach(Tape& tape, const MSConvParams& p);

/// Scale alignment: a k x k conv on the level's original features produces
/// per-group (dy,dx) offsets and mask logits; the gathered block is then
/// warped by a modulated deformable conv with conv groups = deformable
/// groups = L. Output keeps L*C_r channels.
Tensor scale_align(const Tensor& gathered_level, const Tensor& original_level,
                   const MSConvParams& p, const MSConvConfig& cfg);

/// 1x1 merge L*C_r -> C.
Tensor merge_channels(const Tensor& aligned, const MSConvParams& p);

/// Dual-pool gate: S = sigmoid(W_out * (W_local * LAP(M) + W_global * GAP(M)))
/// applied elementwise, every gate value strictly inside (0,1).
Tensor context_attention(const Tensor& merged, const MSConvParams& p);

/// Full block: reduce -> gather -> scatter -> per level (scale_align ->
/// merge_channels -> context_attention -> residual add -> 3x3 out conv).
/// Output shapes equal input shapes; differentiable end to end.
FeaturePyramid msconv_forward(const FeaturePyramid& x, const MSConvParams& p,
                              const MSConvConfig& cfg);

} // namespace msconv
