#pragma once

#include <string>
#include <vector>

#include "msconv/conv.hpp"

namespace msconv {

/// Ordered multi-scale feature stack. Level 1 (index 0) has the largest
/// resolution; all levels share batch and channel count, and resolutions are
/// non-increasing with level index.
struct FeaturePyramid {
    std::vector<Tensor> levels;

    std::size_t L() const { return levels.size(); }
};

/// Throws ShapeError unless `p` is a valid pyramid (L >= 1, shared N and C,
/// non-increasing H and W).
void validate_pyramid(const FeaturePyramid& p);

/// Default level geometry: level l has ceil(h1 / 2^(l-1)) rows.
std::vector<std::pair<std::int64_t, std::int64_t>>
default_level_shapes(int levels, std::int64_t h1, std::int64_t w1);

struct GatherConfig {
    std::int64_t c_reduced = 64; // C_r
    int gather_level = 1;        // l_gl, 1-based
    UpsampleMode up = UpsampleMode::Bilinear;
};

/// Per-level 1x1 channel reduction C -> C_r with independent weights.
std::vector<Tensor> reduce_channels(const FeaturePyramid& x,
                                    const std::vector<ConvWeights>& reducers);

/// Resizes every reduced level to the gathering level's resolution and
/// concatenates along channels, in level order. The gathering level's slice
/// of the result is bit-identical to its input.
Tensor gather(const std::vector<Tensor>& reduced, const GatherConfig& cfg);

/// Resizes the gathered block back to each level's resolution. The gathering
/// level's output is bit-identical to the input block.
std::vector<Tensor> scatter(const Tensor& gathered,
                            const std::vector<std::pair<std::int64_t, std::int64_t>>& level_shapes,
                            const GatherConfig& cfg);

enum class ConnectionMode { Full, GatherScatter };

/// Channel-resize traffic of one cross-level connection pass. Full connection
/// resizes every level to every other level at C channels; gather-scatter
/// performs (L-1) gathers plus (L-1) scatters counted at C_r-channel
/// granularity. Counts are exact integers.
struct ConnectionCost {
    ConnectionMode mode;
    long long channel_resizes = 0;
    std::string formula;          // closed form the counter must equal
    long long leading_order = 0;  // C*L^2 (full) or C_r*L (gather-scatter)
    std::string leading_formula;
    long long element_traffic = 0; // channels x target area, when shapes given
};

ConnectionCost connection_cost(
    std::int64_t c, std::int64_t c_reduced, int levels, ConnectionMode mode,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& level_shapes = {});

} // namespace msconv
