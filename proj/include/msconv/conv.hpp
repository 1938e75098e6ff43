#pragma once

#include <optional>

#include "msconv/tensor.hpp"

namespace msconv {

/// Weights of one 2-D convolution. kernel is (C_out, C_in/groups, k, k);
/// bias, when present, is stored (1, C_out, 1, 1).
struct ConvWeights {
    Tensor kernel;
    std::optional<Tensor> bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

/// Builds same-shape conv weights: stride 1, padding (k-1)/2, k odd.
ConvWeights make_conv(std::int64_t c_in, std::int64_t c_out, int k, int groups,
                      std::uint64_t seed, bool with_bias = true);
/// Same-shape conv with zero kernel and zero bias.
ConvWeights make_conv_zeros(std::int64_t c_in, std::int64_t c_out, int k, int groups,
                            bool with_bias = true);
/// 1x1-style identity: out channel i copies in channel i (requires C_in == C_out),
/// center tap 1, everything else 0, zero bias.
ConvWeights make_conv_identity(std::int64_t channels, int k);

/// Cross-correlation with zero padding. Output spatial size is
/// floor((H + 2p - k)/stride) + 1. Registers backward for input, kernel, bias.
Tensor conv2d(const Tensor& x, const ConvWeights& w);

/// Offsets are (N, 2*G_d*k*k, H, W) in pixels, (dy,dx) pairs per deformable
/// group per kernel tap; mask is (N, G_d*k*k, H, W).
struct DeformInputs {
    Tensor offsets;
    Tensor mask;
};

/// Modulated deformable convolution (stride must be 1). Each tap samples the
/// input bilinearly at (p + grid + offset), scaled by its mask value; samples
/// outside the image contribute 0. Backward covers x, offsets, mask, kernel,
/// bias.
Tensor modulated_deform_conv2d(const Tensor& x, const DeformInputs& d,
                               const ConvWeights& w, int deform_groups);

/// Bilinear read of channel plane (n, c) at fractional (y, x); out-of-range
/// neighbors contribute 0.
double bilinear_sample(const Tensor& x, std::int64_t n, std::int64_t c,
                       double y, double xcoord);

/// k x k average pooling at stride 1 with a border-aware divisor (count of
/// in-bounds taps), so spatially constant inputs are preserved exactly.
Tensor local_avg_pool(const Tensor& x, int k = 3);

/// Per-channel spatial mean, shape (N, C, 1, 1).
Tensor global_avg_pool(const Tensor& x);

enum class UpsampleMode { Bilinear, Nearest };

/// Resizes to (out_h, out_w), per axis: upsampling (target >= source) uses
/// `up` (bilinear with half-pixel centers and edge clamping, or nearest);
/// downsampling uses adaptive max pooling over bins
/// [floor(i*S/D), ceil((i+1)*S/D)). Same-shape resize is a bit-exact identity;
/// constants are preserved exactly on every path.
Tensor resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w,
              UpsampleMode up = UpsampleMode::Bilinear);

} // namespace msconv
