#include "msconv/pyramid.hpp"

#include <sstream>

namespace msconv {

void validate_pyramid(const FeaturePyramid& p) {
    if (p.levels.empty()) throw ShapeError("pyramid: no levels");
    const Shape4 first = p.levels[0].shape();
    for (std::size_t l = 1; l < p.levels.size(); ++l) {
        const Shape4 s = p.levels[l].shape();
        if (s.n != first.n || s.c != first.c)
            throw ShapeError("pyramid: level " + std::to_string(l + 1) +
                             " batch/channels differ: " + s.str() + " vs " + first.str());
        const Shape4 prev = p.levels[l - 1].shape();
        if (s.h > prev.h || s.w > prev.w)
            throw ShapeError("pyramid: level " + std::to_string(l + 1) +
                             " resolution increases: " + s.str() + " after " + prev.str());
    }
}

std::vector<std::pair<std::int64_t, std::int64_t>>
default_level_shapes(int levels, std::int64_t h1, std::int64_t w1) {
    std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
    for (int l = 0; l < levels; ++l) {
        const std::int64_t div = std::int64_t{1} << l;
        shapes.emplace_back((h1 + div - 1) / div, (w1 + div - 1) / div);
    }
    return shapes;
}

std::vector<Tensor> reduce_channels(const FeaturePyramid& x,
                                    const std::vector<ConvWeights>& reducers) {
    validate_pyramid(x);
    if (reducers.size() != x.levels.size())
        throw ShapeError("reduce_channels: " + std::to_string(reducers.size()) +
                         " reducers for " + std::to_string(x.levels.size()) + " levels");
    std::vector<Tensor> reduced;
    reduced.reserve(x.levels.size());
    for (std::size_t l = 0; l < x.levels.size(); ++l)
        reduced.push_back(conv2d(x.levels[l], reducers[l]));
    return reduced;
}

Tensor gather(const std::vector<Tensor>& reduced, const GatherConfig& cfg) {
    if (reduced.empty()) throw ShapeError("gather: empty pyramid");
    if (cfg.gather_level < 1 || cfg.gather_level > static_cast<int>(reduced.size()))
        throw ShapeError("gather: gathering level " + std::to_string(cfg.gather_level) +
                         " outside [1," + std::to_string(reduced.size()) + "]");
    const Shape4 target = reduced[static_cast<std::size_t>(cfg.gather_level - 1)].shape();
    std::vector<Tensor> resized;
    resized.reserve(reduced.size());
    for (const Tensor& d : reduced) resized.push_back(resize(d, target.h, target.w, cfg.up));
    return concat_channels(resized);
}

std::vector<Tensor> scatter(const Tensor& gathered,
                            const std::vector<std::pair<std::int64_t, std::int64_t>>& level_shapes,
                            const GatherConfig& cfg) {
    std::vector<Tensor> out;
    out.reserve(level_shapes.size());
    for (const auto& [h, w] : level_shapes) out.push_back(resize(gathered, h, w, cfg.up));
    return out;
}

ConnectionCost connection_cost(
    std::int64_t c, std::int64_t c_reduced, int levels, ConnectionMode mode,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& level_shapes) {
    if (c < 1 || c_reduced < 1 || levels < 1)
        throw SchemaError("connection_cost: invalid geometry");
    ConnectionCost cost;
    cost.mode = mode;
    const long long L = levels;
    if (mode == ConnectionMode::Full) {
        cost.channel_resizes = static_cast<long long>(c) * L * (L - 1);
        cost.formula = "C*L*(L-1)";
        cost.leading_order = static_cast<long long>(c) * L * L;
        cost.leading_formula = "C*L^2";
        if (!level_shapes.empty()) {
            // every level resized to every other level, at C channels
            long long area_sum = 0;
            for (const auto& [h, w] : level_shapes) area_sum += static_cast<long long>(h) * w;
            cost.element_traffic = static_cast<long long>(c) * (L - 1) * area_sum;
        }
    } else {
        cost.channel_resizes = 2LL * static_cast<long long>(c_reduced) * (L - 1);
        cost.formula = "2*C_r*(L-1)";
        cost.leading_order = static_cast<long long>(c_reduced) * L;
        cost.leading_formula = "C_r*L";
        if (!level_shapes.empty()) {
            // gathers land on level 1; scatters move the L*C_r-channel block
            long long traffic = 0;
            const long long gather_area =
                static_cast<long long>(level_shapes[0].first) * level_shapes[0].second;
            for (std::size_t l = 1; l < level_shapes.size(); ++l) {
                traffic += static_cast<long long>(c_reduced) * gather_area;
                traffic += static_cast<long long>(c_reduced) * L *
                           static_cast<long long>(level_shapes[l].first) * level_shapes[l].second;
            }
            cost.element_traffic = traffic;
        }
    }
    return cost;
}

} // namespace msconv
