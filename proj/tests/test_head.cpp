#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msconv/gradcheck.hpp"
#include "msconv/head.hpp"
#include "msconv/rng.hpp"
#include "testutil.hpp"

using namespace msconv;
using testutil::bit_equal;
using testutil::max_abs_diff;

namespace {

HeadConfig tiny_cfg() {
    HeadConfig cfg;
    cfg.ms.levels = 2;
    cfg.ms.channels = 4;
    cfg.ms.c_reduced = 2;
    cfg.num_classes = 3;
    cfg.anchors_per_loc = 2;
    cfg.level_shapes = {{6, 6}, {3, 3}};
    return cfg;
}

FeaturePyramid pyramid_for(const HeadConfig& cfg, std::uint64_t seed) {
    FeaturePyramid x;
    for (const auto& [h, w] : cfg.level_shapes)
        x.levels.push_back(Tensor::randn({cfg.batch, cfg.ms.channels, h, w}, seed++));
    return x;
}

} // namespace

TEST_CASE("baseline head: default widths give 720/36 prediction channels") {
    HeadConfig cfg;
    cfg.ms.levels = 1;
    cfg.ms.channels = 256;
    cfg.ms.c_reduced = 64;
    cfg.level_shapes = {{10, 10}};
    const FeaturePyramid x = pyramid_for(cfg, 5);
    const HeadOutputs out =
        baseline_head_forward(x, baseline_head_params_seeded(cfg, 6), cfg);
    REQUIRE(out.cls.size() == 1);
    CHECK(out.cls[0].shape() == Shape4{1, 720, 10, 10});
    CHECK(out.reg[0].shape() == Shape4{1, 36, 10, 10});
}

TEST_CASE("baseline head: stack_depth 0 applies the prediction conv directly") {
    HeadConfig cfg = tiny_cfg();
    cfg.stack_depth = 0;
    const BaselineHeadParams p = baseline_head_params_seeded(cfg, 7);
    const FeaturePyramid x = pyramid_for(cfg, 8);
    const HeadOutputs out = baseline_head_forward(x, p, cfg);
    for (std::size_t l = 0; l < x.levels.size(); ++l) {
        CHECK(bit_equal(out.cls[l], conv2d(x.levels[l], p.cls_pred)));
        CHECK(bit_equal(out.reg[l], conv2d(x.levels[l], p.reg_pred)));
    }
}

TEST_CASE("baseline head: shared weights give identical outputs on identical levels") {
    HeadConfig cfg = tiny_cfg();
    cfg.stack_depth = 2;
    cfg.level_shapes = {{5, 5}, {5, 5}};
    const Tensor level = Tensor::randn({1, 4, 5, 5}, 9);
    FeaturePyramid x;
    x.levels = {level, level};
    const HeadOutputs out =
        baseline_head_forward(x, baseline_head_params_seeded(cfg, 10), cfg);
    CHECK(bit_equal(out.cls[0], out.cls[1]));
    CHECK(bit_equal(out.reg[0], out.reg[1]));
}

TEST_CASE("both heads produce identical output geometry") {
    const HeadConfig cfg = tiny_cfg();
    const FeaturePyramid x = pyramid_for(cfg, 11);
    const HeadOutputs a = baseline_head_forward(x, baseline_head_params_seeded(cfg, 12), cfg);
    const HeadOutputs b = msconv_head_forward(x, msconv_head_params_seeded(cfg, 13), cfg);
    REQUIRE(a.cls.size() == b.cls.size());
    for (std::size_t l = 0; l < a.cls.size(); ++l) {
        CHECK(a.cls[l].shape() == b.cls[l].shape());
        CHECK(a.reg[l].shape() == b.reg[l].shape());
    }
}

TEST_CASE("msconv head with an identity block equals the flat branch composition") {
    HeadConfig cfg = tiny_cfg();
    cfg.stack_depth = 1;
    MSConvHeadParams p = msconv_head_params_seeded(cfg, 14);
    p.blocks[0] = msconv_params_identity(cfg.ms);
    const FeaturePyramid x = pyramid_for(cfg, 15);
    const HeadOutputs out = msconv_head_forward(x, p, cfg);
    for (std::size_t l = 0; l < x.levels.size(); ++l) {
        const Tensor cls = conv2d(relu(conv2d(x.levels[l], p.cls_conv)), p.cls_pred);
        const Tensor reg = conv2d(relu(conv2d(x.levels[l], p.reg_conv)), p.reg_pred);
        CHECK(bit_equal(out.cls[l], cls));
        CHECK(bit_equal(out.reg[l], reg));
    }
}

TEST_CASE("branch_relu switch controls the per-branch activation") {
    HeadConfig cfg = tiny_cfg();
    cfg.stack_depth = 1;
    cfg.branch_relu = false;
    MSConvHeadParams p = msconv_head_params_seeded(cfg, 16);
    p.blocks[0] = msconv_params_identity(cfg.ms);
    const FeaturePyramid x = pyramid_for(cfg, 17);
    const HeadOutputs out = msconv_head_forward(x, p, cfg);
    CHECK(bit_equal(out.cls[0], conv2d(conv2d(x.levels[0], p.cls_conv), p.cls_pred)));
}

TEST_CASE("classification bias starts at the focal prior") {
    CHECK(cls_bias_init() == doctest::Approx(-std::log(99.0)).epsilon(1e-15));
    const HeadConfig cfg = tiny_cfg();
    const BaselineHeadParams p = baseline_head_params_seeded(cfg, 18);
    for (double v : p.cls_pred.bias->data()) CHECK(v == doctest::Approx(-std::log(99.0)));
    for (double v : p.reg_pred.bias->data()) CHECK(v == 0.0);
}

TEST_CASE("count_params reproduces the hand-counted convolutions") {
    HeadConfig cfg;
    cfg.ms.levels = 1;
    cfg.ms.channels = 256;
    cfg.ms.c_reduced = 64;
    cfg.level_shapes = {{80, 80}};
    const CostReport baseline = count_params(cfg, HeadVariant::Baseline);
    bool found = false;
    for (const CostEntry& e : baseline.entries)
        if (e.name == "cls_stack1") {
            CHECK(e.params == 590080); // 9*256*256 + 256
            found = true;
        }
    CHECK(found);

    const CostReport ms = count_params(cfg, HeadVariant::MSConv);
    found = false;
    for (const CostEntry& e : ms.entries)
        if (e.name == "block1.reduce1") {
            CHECK(e.params == 16448); // 256*64 + 64
            found = true;
        }
    CHECK(found);
}

TEST_CASE("count_params equals the allocated-parameter walk and its closed form") {
    SplitMix64 rng(2);
    for (int iter = 0; iter < 6; ++iter) {
        HeadConfig cfg;
        cfg.ms.levels = 1 + static_cast<int>(rng.next() % 5);
        cfg.ms.channels = 4 + static_cast<std::int64_t>(rng.next() % 12);
        cfg.ms.c_reduced = 1 + static_cast<std::int64_t>(rng.next() % cfg.ms.channels);
        cfg.ms.kernel = (rng.next() % 2) ? 3 : 1;
        cfg.num_classes = 1 + static_cast<std::int64_t>(rng.next() % 10);
        cfg.anchors_per_loc = 1 + static_cast<std::int64_t>(rng.next() % 4);
        cfg.stack_depth = static_cast<int>(rng.next() % 4);
        cfg.level_shapes = default_level_shapes(cfg.ms.levels, 8, 8);
        for (HeadVariant v : {HeadVariant::Baseline, HeadVariant::MSConv}) {
            const CostReport r = count_params(cfg, v);
            CHECK(r.total_params == allocated_param_count(cfg, v));
            CHECK(r.total_params == r.closed_form_params);
        }
    }
}

TEST_CASE("count_macs reproduces the 1x1 hand count and scales linearly") {
    HeadConfig cfg;
    cfg.ms.levels = 1;
    cfg.ms.channels = 256;
    cfg.ms.c_reduced = 64;
    cfg.stack_depth = 1;
    cfg.level_shapes = {{80, 80}};
    const CostReport r = count_macs(cfg, HeadVariant::MSConv);
    bool found = false;
    for (const CostEntry& e : r.entries)
        if (e.name == "block1.reduce1") {
            CHECK(e.macs == 104857600); // 256*64*80*80
            found = true;
        }
    CHECK(found);

    // doubling the batch doubles every entry
    HeadConfig cfg2 = cfg;
    cfg2.batch = 2;
    const CostReport r2 = count_macs(cfg2, HeadVariant::MSConv);
    REQUIRE(r2.entries.size() == r.entries.size());
    for (std::size_t i = 0; i < r.entries.size(); ++i)
        CHECK(r2.entries[i].macs == 2 * r.entries[i].macs);

    // doubling the area doubles every area-dependent entry; the GAP-branch
    // conv sees a 1x1 map and stays constant
    HeadConfig cfg4 = cfg;
    cfg4.level_shapes = {{160, 80}};
    const CostReport r4 = count_macs(cfg4, HeadVariant::MSConv);
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        if (r.entries[i].name.find("ca_global") != std::string::npos)
            CHECK(r4.entries[i].macs == r.entries[i].macs);
        else
            CHECK(r4.entries[i].macs == 2 * r.entries[i].macs);
    }
}

TEST_CASE("default msconv head is smaller than the default baseline head") {
    HeadConfig cfg;
    cfg.ms.levels = 5;
    cfg.ms.channels = 256;
    cfg.ms.c_reduced = 64;
    cfg.level_shapes = default_level_shapes(5, 80, 80);
    const long long baseline = count_params(cfg, HeadVariant::Baseline).total_params;
    const long long ms = count_params(cfg, HeadVariant::MSConv).total_params;
    CHECK(ms < baseline);
}

TEST_CASE("count_macs without shapes is a schema error") {
    HeadConfig cfg = tiny_cfg();
    cfg.level_shapes.clear();
    CHECK_THROWS_AS(count_macs(cfg, HeadVariant::Baseline), SchemaError);
}

TEST_CASE("head forwards agree with the straight-line reference") {
    const HeadConfig cfg = tiny_cfg();
    const FeaturePyramid x = pyramid_for(cfg, 40);

    refimpl::HeadConfig rc;
    rc.ms.levels = cfg.ms.levels;
    rc.ms.channels = cfg.ms.channels;
    rc.ms.c_reduced = cfg.ms.c_reduced;
    rc.ms.gather_level = cfg.ms.gather_level;
    rc.ms.kernel = cfg.ms.kernel;
    rc.num_classes = cfg.num_classes;
    rc.anchors = cfg.anchors_per_loc;
    rc.branch_relu = cfg.branch_relu;

    std::vector<refimpl::RawTensor> raw;
    for (const Tensor& t : x.levels) raw.push_back(testutil::to_raw(t));

    {
        const BaselineHeadParams p = baseline_head_params_seeded(cfg, 41);
        std::map<std::string, Tensor> m;
        for_each_param(p, [&m](const std::string& n, const Tensor& t) { m.emplace(n, t); });
        rc.depth = cfg.depth(HeadVariant::Baseline);
        const auto [cls, reg] = refimpl::baseline_head_forward(raw, testutil::to_raw_map(m), rc);
        const HeadOutputs out = baseline_head_forward(x, p, cfg);
        for (std::size_t l = 0; l < out.cls.size(); ++l) {
            CHECK(max_abs_diff(out.cls[l], cls[l]) <= 1e-9);
            CHECK(max_abs_diff(out.reg[l], reg[l]) <= 1e-9);
        }
    }
    {
        const MSConvHeadParams p = msconv_head_params_seeded(cfg, 42);
        std::map<std::string, Tensor> m;
        for_each_param(p, [&m](const std::string& n, const Tensor& t) { m.emplace(n, t); });
        rc.depth = cfg.depth(HeadVariant::MSConv);
        const auto [cls, reg] = refimpl::msconv_head_forward(raw, testutil::to_raw_map(m), rc);
        const HeadOutputs out = msconv_head_forward(x, p, cfg);
        for (std::size_t l = 0; l < out.cls.size(); ++l) {
            CHECK(max_abs_diff(out.cls[l], cls[l]) <= 1e-9);
            CHECK(max_abs_diff(out.reg[l], reg[l]) <= 1e-9);
        }
    }
}

TEST_CASE("tiny head gradchecks pass") {
    for (const char* op : {"baseline_head", "msconv_head"}) {
        const GradcheckReport r = run_gradcheck_op(op, 1);
        INFO(op, " max_rel_err=", r.max_rel_err);
        CHECK(r.pass);
    }
}
