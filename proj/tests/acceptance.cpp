// Acceptance suite: one line per criterion. Exits with the number of failed
// criteria. Needs the CLI binary (--cli or MSCONV_CLI) and the fixture tree
// (--fixtures or MSCONV_FIXTURES) for the end-to-end criteria.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "msconv/config.hpp"
#include "msconv/gradcheck.hpp"
#include "msconv/rng.hpp"
#include "msconv/serialize.hpp"
#include "reference.hpp"
#include "testutil.hpp"

using namespace msconv;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_fixtures;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// 1. every differentiable op passes finite-difference gradcheck under 5 minutes
std::string criterion_gradients() {
    const auto start = std::chrono::steady_clock::now();
    const auto reports = run_all_gradchecks(1);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    double worst = 0.0;
    for (const auto& r : reports) {
        require(r.pass, r.op + " failed gradcheck with max_rel_err " +
                            std::to_string(r.max_rel_err));
        worst = std::max(worst, r.max_rel_err);
    }
    require(elapsed < 300.0, "suite took " + std::to_string(elapsed) + " s");
    std::ostringstream os;
    os << reports.size() << " op families, worst rel err " << std::scientific << worst << ", "
       << std::fixed << elapsed << " s";
    return os.str();
}

// 2. conv2d against the brute-force reference, 50 seeded cases
std::string criterion_conv_oracle() {
    SplitMix64 rng(8088);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const int groups = std::array{1, 2, 4}[static_cast<std::size_t>(i % 3)];
        const int k = (i % 2) ? 3 : 1;
        const std::int64_t cing = 1 + static_cast<std::int64_t>(rng.next() % 3);
        const std::int64_t coutg = 1 + static_cast<std::int64_t>(rng.next() % 3);
        const std::int64_t h = 3 + static_cast<std::int64_t>(rng.next() % 6);
        const std::int64_t w = 3 + static_cast<std::int64_t>(rng.next() % 6);
        const Tensor x = Tensor::randn({2, cing * groups, h, w}, rng.next());
        ConvWeights cw;
        cw.kernel = Tensor::randn({coutg * groups, cing, k, k}, rng.next());
        cw.bias = Tensor::randn({1, coutg * groups, 1, 1}, rng.next());
        cw.stride = 1;
        cw.padding = (k - 1) / 2;
        cw.groups = groups;
        const auto want = refimpl::conv2d(testutil::to_raw(x), testutil::to_raw(cw.kernel),
                                          testutil::to_raw(*cw.bias).data, cw.stride, cw.padding,
                                          groups);
        worst = std::max(worst, testutil::max_abs_diff(conv2d(x, cw), want));
    }
    require(worst <= 1e-12, "worst |diff| " + std::to_string(worst));
    std::ostringstream os;
    os << "50 cases, worst |diff| " << std::scientific << worst;
    return os.str();
}

// 3. zero offsets + unit mask degenerate to conv2d, 20 seeded cases
std::string criterion_deform_degeneracy() {
    SplitMix64 rng(9099);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const int groups = (i % 2) ? 2 : 1;
        const int k = (i % 3 == 0) ? 1 : 3;
        const std::int64_t c_in = 2 * groups;
        const std::int64_t c_out = 2 * groups;
        const std::int64_t h = 3 + static_cast<std::int64_t>(rng.next() % 5);
        const std::int64_t w = 3 + static_cast<std::int64_t>(rng.next() % 5);
        const Tensor x = Tensor::randn({1, c_in, h, w}, rng.next());
        ConvWeights cw;
        cw.kernel = Tensor::randn({c_out, c_in / groups, k, k}, rng.next());
        cw.bias = Tensor::randn({1, c_out, 1, 1}, rng.next());
        cw.stride = 1;
        cw.padding = (k - 1) / 2;
        cw.groups = groups;
        const DeformInputs d{
            Tensor::zeros({1, 2LL * groups * k * k, h, w}),
            Tensor::constant({1, static_cast<std::int64_t>(groups) * k * k, h, w}, 1.0)};
        worst = std::max(worst, testutil::max_abs_diff(modulated_deform_conv2d(x, d, cw, groups),
                                                       conv2d(x, cw)));
    }
    require(worst <= 1e-12, "worst |diff| " + std::to_string(worst));
    std::ostringstream os;
    os << "20 cases, worst |diff| " << std::scientific << worst;
    return os.str();
}

// 4. gather/scatter identities, bit-exact
std::string criterion_gather_scatter() {
    SplitMix64 rng(13);
    for (int gl : {1, 2, 3}) {
        const int levels = 3;
        const std::int64_t c_r = 4;
        std::vector<Tensor> reduced;
        std::int64_t h = 16, w = 16;
        for (int l = 0; l < levels; ++l) {
            reduced.push_back(Tensor::randn({1, c_r, h, w}, rng.next()));
            h /= 2;
            w /= 2;
        }
        const GatherConfig cfg{c_r, gl, UpsampleMode::Bilinear};
        const Tensor gathered = gather(reduced, cfg);
        const Tensor anchor_slice =
            slice_channels(gathered, (gl - 1) * c_r, static_cast<std::int64_t>(gl) * c_r);
        require(testutil::bit_equal(anchor_slice, reduced[static_cast<std::size_t>(gl - 1)]),
                "gather slice not bit-identical at l_gl=" + std::to_string(gl));

        std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
        for (const Tensor& t : reduced) shapes.emplace_back(t.shape().h, t.shape().w);
        const auto q = scatter(gathered, shapes, cfg);
        require(testutil::bit_equal(q[static_cast<std::size_t>(gl - 1)], gathered),
                "scatter anchor not bit-identical at l_gl=" + std::to_string(gl));
    }

    const Tensor single = Tensor::randn({2, 5, 7, 7}, rng.next());
    const GatherConfig cfg1{5, 1, UpsampleMode::Bilinear};
    const Tensor phi = gather({single}, cfg1);
    require(testutil::bit_equal(phi, single), "L=1 gather is not the identity");
    require(testutil::bit_equal(scatter(phi, {{7, 7}}, cfg1)[0], single),
            "L=1 scatter is not the identity");
    return "anchor slices and L=1 pipeline bit-identical (l_gl in {1,2,3})";
}

// 5. msconv_forward preserves pyramid shapes on 100 randomized configs
std::string criterion_shape_contract() {
    SplitMix64 rng(777);
    for (int iter = 0; iter < 100; ++iter) {
        const int levels = 1 + static_cast<int>(rng.next() % 6);
        const std::int64_t c = 4 + static_cast<std::int64_t>(rng.next() % 61);
        const std::int64_t c_r = 1 + static_cast<std::int64_t>(rng.next() % c);
        MSConvConfig cfg;
        cfg.levels = levels;
        cfg.channels = c;
        cfg.c_reduced = c_r;
        cfg.gather_level = 1 + static_cast<int>(rng.next() % levels);
        cfg.kernel = (rng.next() % 4 == 0) ? 3 : 1;
        cfg.resize_up = (rng.next() % 3 == 0) ? UpsampleMode::Nearest : UpsampleMode::Bilinear;

        FeaturePyramid x;
        std::int64_t h = 2 + static_cast<std::int64_t>(rng.next() % 7);
        std::int64_t w = 2 + static_cast<std::int64_t>(rng.next() % 7);
        const std::int64_t batch = 1 + static_cast<std::int64_t>(rng.next() % 2);
        for (int l = 0; l < levels; ++l) {
            x.levels.push_back(Tensor::randn({batch, c, h, w}, rng.next()));
            h = std::max<std::int64_t>(1, h - static_cast<std::int64_t>(rng.next() % 3));
            w = std::max<std::int64_t>(1, w - static_cast<std::int64_t>(rng.next() % 3));
        }
        const FeaturePyramid y = msconv_forward(x, msconv_params_seeded(cfg, rng.next()), cfg);
        require(y.levels.size() == x.levels.size(), "level count changed");
        for (std::size_t l = 0; l < x.levels.size(); ++l)
            require(y.levels[l].shape() == x.levels[l].shape(),
                    "shape changed at level " + std::to_string(l + 1) + " in iter " +
                        std::to_string(iter));
    }
    return "100 randomized configs, all shapes preserved";
}

// 6. residual identity and the exact zero-weight attention gate
std::string criterion_residual_identity() {
    MSConvConfig cfg;
    cfg.levels = 3;
    cfg.channels = 6;
    cfg.c_reduced = 2;
    FeaturePyramid x;
    std::int64_t h = 12;
    for (int l = 0; l < 3; ++l, h /= 2)
        x.levels.push_back(Tensor::randn({1, 6, h, h}, 500 + static_cast<std::uint64_t>(l)));
    const FeaturePyramid y = msconv_forward(x, msconv_params_identity(cfg), cfg);
    for (std::size_t l = 0; l < 3; ++l)
        require(testutil::bit_equal(y.levels[l], x.levels[l]),
                "identity block is not bit-exact at level " + std::to_string(l + 1));

    const Tensor m = Tensor::randn({2, 6, 5, 5}, 600);
    const Tensor o = context_attention(m, msconv_params_zeros(cfg));
    const auto mv = m.data();
    const auto ov = o.data();
    for (std::size_t i = 0; i < ov.size(); ++i)
        require(ov[i] == 0.5 * mv[i], "zero-weight attention is not exactly 0.5 * M");
    return "identity map bit-exact; zero-weight gate exactly halves";
}

// 7. connection cost: closed form, growth orders, leading ratio
std::string criterion_complexity() {
    for (std::int64_t c : {16, 256}) {
        for (std::int64_t c_r : {4, 64}) {
            for (int l = 1; l <= 10; ++l) {
                const auto full = connection_cost(c, c_r, l, ConnectionMode::Full);
                const auto gs = connection_cost(c, c_r, l, ConnectionMode::GatherScatter);
                require(full.channel_resizes == c * l * (l - 1),
                        "full counter deviates from its closed form");
                require(gs.channel_resizes == 2 * c_r * (l - 1),
                        "gather-scatter counter deviates from its closed form");
            }
        }
    }
    auto full = [](int l) {
        return connection_cost(256, 64, l, ConnectionMode::Full).channel_resizes;
    };
    auto gs = [](int l) {
        return connection_cost(256, 64, l, ConnectionMode::GatherScatter).channel_resizes;
    };
    for (int l = 2; l <= 8; ++l) {
        require(full(l + 2) - 2 * full(l + 1) + full(l) == 2 * 256,
                "full counter is not exactly quadratic in L");
        require(gs(l + 2) - 2 * gs(l + 1) + gs(l) == 0,
                "gather-scatter counter is not exactly linear in L");
    }
    require(gs(8) - gs(4) == 2 * (gs(4) - gs(2)), "gather-scatter growth is not linear over {2,4,8}");
    require(full(8) - full(4) > 3 * (full(4) - full(2)),
            "full growth is not quadratic over {2,4,8}");

    const auto full5 = connection_cost(256, 64, 5, ConnectionMode::Full);
    const auto gs5 = connection_cost(256, 64, 5, ConnectionMode::GatherScatter);
    require(full5.leading_order == 20 * gs5.leading_order,
            "leading-order ratio (C*L^2)/(C_r*L) != 20");
    return "closed forms exact, quadratic vs linear growth, leading ratio 20";
}

// 8. analytic parameter counts equal the allocated-parameter walk
std::string criterion_accounting() {
    SplitMix64 rng(4242);
    for (int iter = 0; iter < 20; ++iter) {
        HeadConfig cfg;
        cfg.ms.levels = 1 + static_cast<int>(rng.next() % 6);
        cfg.ms.channels = 4 + static_cast<std::int64_t>(rng.next() % 20);
        cfg.ms.c_reduced = 1 + static_cast<std::int64_t>(rng.next() % cfg.ms.channels);
        cfg.ms.kernel = (rng.next() % 2) ? 3 : 1;
        cfg.num_classes = 1 + static_cast<std::int64_t>(rng.next() % 12);
        cfg.anchors_per_loc = 1 + static_cast<std::int64_t>(rng.next() % 5);
        cfg.stack_depth = static_cast<int>(rng.next() % 4);
        cfg.level_shapes = default_level_shapes(cfg.ms.levels, 16, 16);
        for (HeadVariant v : {HeadVariant::Baseline, HeadVariant::MSConv}) {
            const CostReport r = count_params(cfg, v);
            const long long walked = allocated_param_count(cfg, v);
            require(r.total_params == walked,
                    "analytic " + std::to_string(r.total_params) + " != allocated " +
                        std::to_string(walked) + " in iter " + std::to_string(iter));
            require(r.total_params == r.closed_form_params,
                    "closed-form cross-check mismatch in iter " + std::to_string(iter));
        }
    }

    HeadConfig hand;
    hand.ms.levels = 1;
    hand.ms.channels = 256;
    hand.ms.c_reduced = 64;
    hand.level_shapes = {{80, 80}};
    long long conv3x3 = 0, reduce1x1 = 0;
    for (const CostEntry& e : count_params(hand, HeadVariant::Baseline).entries)
        if (e.name == "cls_stack1") conv3x3 = e.params;
    for (const CostEntry& e : count_params(hand, HeadVariant::MSConv).entries)
        if (e.name == "block1.reduce1") reduce1x1 = e.params;
    require(conv3x3 == 590080, "3x3 256->256 conv is not 590080 params");
    require(reduce1x1 == 16448, "1x1 256->64 conv is not 16448 params");

    HeadConfig dflt;
    dflt.ms.levels = 5;
    dflt.ms.channels = 256;
    dflt.ms.c_reduced = 64;
    dflt.level_shapes = default_level_shapes(5, 80, 80);
    const long long base = count_params(dflt, HeadVariant::Baseline).total_params;
    const long long ms = count_params(dflt, HeadVariant::MSConv).total_params;
    std::ostringstream os;
    os << "20 configs walk-exact; hand counts 590080/16448; head-only delta " << (ms - base)
       << " (" << (ms < base ? "negative" : "non-negative")
       << "); full-detector context totals (backbone included, not computed here): baseline "
          "37.74 M / msconv 38.49 M";
    return os.str();
}

// 9. cli_run determinism across repeats and MSCONV_THREADS settings
std::string criterion_determinism() {
    require(!g_cli.empty(), "CLI path not provided");
    const fs::path dir = testutil::make_temp_dir("acc9");
    {
        std::ofstream cfg(dir / "config.json");
        cfg << R"({"task": "msconv", "N": 1, "C": 6, "C_r": 3, "k": 3,
                   "shapes": [[6, 6], [3, 3]]})";
    }
    fs::create_directories(dir / "in");
    write_tensor(Tensor::randn({1, 6, 6, 6}, 900), dir / "in" / "x1.mst");
    write_tensor(Tensor::randn({1, 6, 3, 3}, 901), dir / "in" / "x2.mst");

    const std::string base = g_cli + " run --config " + (dir / "config.json").string() +
                             " --inputs " + (dir / "in").string() + " --seed 7 --out ";
    const std::vector<std::pair<std::string, std::string>> runs = {
        {"", "r1"}, {"", "r2"}, {"MSCONV_THREADS=1 ", "t1"}, {"MSCONV_THREADS=4 ", "t4"},
        {"MSCONV_THREADS=13 ", "t13"}};
    for (const auto& [env, out] : runs) {
        const auto res = testutil::run_cmd(env + base + (dir / out).string());
        require(res.exit_code == 0, "cli run failed: " + res.output);
    }
    for (const char* name : {"y1.mst", "y2.mst"}) {
        const std::string want = testutil::slurp(dir / "r1" / name);
        for (const char* out : {"r2", "t1", "t4", "t13"})
            require(testutil::slurp(dir / out / name) == want,
                    std::string("output ") + name + " differs in " + out);
    }
    return "byte-identical outputs across repeats and MSCONV_THREADS in {unset,1,4,13}";
}

// 10. shipped fixtures verify at their manifest tolerances
std::string criterion_fixtures() {
    require(!g_cli.empty(), "CLI path not provided");
    require(fs::is_directory(g_fixtures), "fixture directory missing: " + g_fixtures.string());
    std::vector<fs::path> manifests;
    for (const auto& entry : fs::recursive_directory_iterator(g_fixtures))
        if (entry.is_regular_file() && entry.path().filename() == "manifest.json")
            manifests.push_back(entry.path());
    std::sort(manifests.begin(), manifests.end());
    require(manifests.size() >= 4, "expected at least 4 shipped manifests, found " +
                                       std::to_string(manifests.size()));
    for (const auto& m : manifests) {
        const auto res = testutil::run_cmd(g_cli + " verify --manifest " + m.string());
        require(res.exit_code == 0,
                m.parent_path().filename().string() + " failed: " + res.output);
    }
    return std::to_string(manifests.size()) + " manifests verified through the CLI";
}

} // namespace

int main(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--cli")
            g_cli = argv[i + 1];
        else if (flag == "--fixtures")
            g_fixtures = argv[i + 1];
    }
    if (g_cli.empty() && std::getenv("MSCONV_CLI")) g_cli = std::getenv("MSCONV_CLI");
    if (g_fixtures.empty() && std::getenv("MSCONV_FIXTURES"))
        g_fixtures = std::getenv("MSCONV_FIXTURES");

    const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
        {"gradient suite < 1e-6 within the time budget", criterion_gradients},
        {"conv2d brute-force oracle <= 1e-12", criterion_conv_oracle},
        {"deformable degeneracy <= 1e-12", criterion_deform_degeneracy},
        {"gather/scatter bit-exact identities", criterion_gather_scatter},
        {"shape contract on randomized configs", criterion_shape_contract},
        {"residual identity and exact half gate", criterion_residual_identity},
        {"connection-cost complexity claim", criterion_complexity},
        {"accounting exactness and head delta", criterion_accounting},
        {"cli_run determinism", criterion_determinism},
        {"golden fixtures", criterion_fixtures},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::string detail;
        bool ok = true;
        try {
            detail = criteria[i].second();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << (i + 1) << ": "
                  << criteria[i].first << " — " << detail << "\n";
        if (!ok) ++failures;
    }
    std::cout << (failures == 0 ? "all criteria passed"
                                : std::to_string(failures) + " criteria failed")
              << "\n";
    return failures;
}
