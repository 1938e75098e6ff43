#include "msconv/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "msconv/serialize.hpp"

namespace msconv {

using nlohmann::json;

std::string task_name(Task t) {
    switch (t) {
        case Task::MSConv: return "msconv";
        case Task::BaselineHead: return "baseline_head";
        case Task::MSConvHead: return "msconv_head";
    }
    return "?";
}

namespace {

Task parse_task(const std::string& s) {
    if (s == "msconv") return Task::MSConv;
    if (s == "baseline_head") return Task::BaselineHead;
    if (s == "msconv_head") return Task::MSConvHead;
    throw SchemaError("unknown task '" + s + "' (expected msconv | baseline_head | msconv_head)");
}

std::int64_t require_int(const json& j, const std::string& key) {
    if (!j.contains(key)) throw SchemaError("config: missing field '" + key + "'");
    if (!j[key].is_number_integer()) throw SchemaError("config: field '" + key + "' must be an integer");
    return j[key].get<std::int64_t>();
}

std::int64_t optional_int(const json& j, const std::string& key, std::int64_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) throw SchemaError("config: field '" + key + "' must be an integer");
    return j[key].get<std::int64_t>();
}

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("config: top level must be an object");

    static const std::set<std::string> known = {
        "task", "N",          "L",           "C",          "C_r",
        "l_gl", "k",          "resize",      "shapes",     "num_classes",
        "anchors_per_loc",    "stack_depth", "branch_relu"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw SchemaError("config: unknown field '" + key + "'");

    RunConfig rc;
    if (j.contains("task")) {
        if (!j["task"].is_string()) throw SchemaError("config: 'task' must be a string");
        rc.task = parse_task(j["task"].get<std::string>());
    }

    if (!j.contains("shapes")) throw SchemaError("config: missing field 'shapes'");
    if (!j["shapes"].is_array() || j["shapes"].empty())
        throw SchemaError("config: 'shapes' must be a non-empty array of [H, W] pairs");
    for (const auto& s : j["shapes"]) {
        if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer())
            throw SchemaError("config: each shape must be an [H, W] integer pair");
        rc.cfg.level_shapes.emplace_back(s[0].get<std::int64_t>(), s[1].get<std::int64_t>());
    }

    const std::int64_t levels =
        optional_int(j, "L", static_cast<std::int64_t>(rc.cfg.level_shapes.size()));
    if (levels != static_cast<std::int64_t>(rc.cfg.level_shapes.size()))
        throw SchemaError("config: L does not match the number of shapes");
    rc.cfg.ms.levels = static_cast<int>(levels);
    rc.cfg.ms.channels = require_int(j, "C");
    rc.cfg.ms.c_reduced = optional_int(j, "C_r", 64);
    rc.cfg.ms.gather_level = static_cast<int>(optional_int(j, "l_gl", 1));
    rc.cfg.ms.kernel = static_cast<int>(optional_int(j, "k", 1));
    rc.cfg.batch = optional_int(j, "N", 1);

    if (j.contains("resize")) {
        const json& r = j["resize"];
        if (!r.is_object() || !r.contains("up") || !r["up"].is_string())
            throw SchemaError("config: 'resize' must be an object with a string field 'up'");
        const std::string up = r["up"].get<std::string>();
        if (up == "bilinear")
            rc.cfg.ms.resize_up = UpsampleMode::Bilinear;
        else if (up == "nearest")
            rc.cfg.ms.resize_up = UpsampleMode::Nearest;
        else
            throw SchemaError("config: resize.up must be 'bilinear' or 'nearest'");
    }

    rc.cfg.num_classes = optional_int(j, "num_classes", 80);
    rc.cfg.anchors_per_loc = optional_int(j, "anchors_per_loc", 9);
    if (j.contains("stack_depth"))
        rc.cfg.stack_depth = static_cast<int>(require_int(j, "stack_depth"));
    if (j.contains("branch_relu")) {
        if (!j["branch_relu"].is_boolean()) throw SchemaError("config: 'branch_relu' must be a bool");
        rc.cfg.branch_relu = j["branch_relu"].get<bool>();
    }

    const HeadVariant variant =
        rc.task == Task::BaselineHead ? HeadVariant::Baseline : HeadVariant::MSConv;
    validate_config(rc.cfg, variant);
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Code::Open, "cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string to_json(const RunConfig& rc) {
    json j;
    j["task"] = task_name(rc.task);
    j["N"] = rc.cfg.batch;
    j["L"] = rc.cfg.ms.levels;
    j["C"] = rc.cfg.ms.channels;
    j["C_r"] = rc.cfg.ms.c_reduced;
    j["l_gl"] = rc.cfg.ms.gather_level;
    j["k"] = rc.cfg.ms.kernel;
    j["resize"] = {{"up", rc.cfg.ms.resize_up == UpsampleMode::Nearest ? "nearest" : "bilinear"}};
    j["shapes"] = json::array();
    for (const auto& [h, w] : rc.cfg.level_shapes) j["shapes"].push_back({h, w});
    if (rc.task != Task::MSConv) {
        j["num_classes"] = rc.cfg.num_classes;
        j["anchors_per_loc"] = rc.cfg.anchors_per_loc;
        if (rc.cfg.stack_depth) j["stack_depth"] = *rc.cfg.stack_depth;
        j["branch_relu"] = rc.cfg.branch_relu;
    }
    return j.dump(2);
}

std::vector<std::string> input_names(const RunConfig& rc) {
    std::vector<std::string> names;
    for (int l = 0; l < rc.cfg.ms.levels; ++l) names.push_back("x" + std::to_string(l + 1));
    return names;
}

std::vector<std::string> output_names(const RunConfig& rc) {
    std::vector<std::string> names;
    if (rc.task == Task::MSConv) {
        for (int l = 0; l < rc.cfg.ms.levels; ++l) names.push_back("y" + std::to_string(l + 1));
    } else {
        for (int l = 0; l < rc.cfg.ms.levels; ++l) names.push_back("cls" + std::to_string(l + 1));
        for (int l = 0; l < rc.cfg.ms.levels; ++l) names.push_back("reg" + std::to_string(l + 1));
    }
    return names;
}

namespace {

template <class Params>
std::vector<std::string> names_of(const Params& p) {
    std::vector<std::string> names;
    for_each_param(p, [&names](const std::string& n, const Tensor&) { names.push_back(n); });
    return names;
}

template <class Params>
Params fill_from_map(Params shell, const std::map<std::string, Tensor>& params) {
    std::set<std::string> used;
    for_each_param(shell, [&](const std::string& name, Tensor& t) {
        auto it = params.find(name);
        if (it == params.end()) throw SchemaError("params: missing tensor '" + name + "'");
        if (!(it->second.shape() == t.shape()))
            throw ShapeError("params: tensor '" + name + "' has shape " +
                             it->second.shape().str() + ", expected " + t.shape().str());
        t = it->second;
        used.insert(name);
    });
    for (const auto& [name, _] : params)
        if (!used.count(name)) throw SchemaError("params: unexpected tensor '" + name + "'");
    return shell;
}

template <class Params>
std::map<std::string, Tensor> to_map(const Params& p) {
    std::map<std::string, Tensor> out;
    for_each_param(p, [&out](const std::string& name, const Tensor& t) { out.emplace(name, t); });
    return out;
}

FeaturePyramid collect_inputs(const RunConfig& rc, const std::map<std::string, Tensor>& inputs) {
    FeaturePyramid x;
    for (int l = 0; l < rc.cfg.ms.levels; ++l) {
        const std::string name = "x" + std::to_string(l + 1);
        auto it = inputs.find(name);
        if (it == inputs.end()) throw SchemaError("inputs: missing tensor '" + name + "'");
        const Shape4 want{rc.cfg.batch, rc.cfg.ms.channels, rc.cfg.level_shapes[l].first,
                          rc.cfg.level_shapes[l].second};
        if (!(it->second.shape() == want))
            throw ShapeError("inputs: tensor '" + name + "' has shape " +
                             it->second.shape().str() + ", config expects " + want.str());
        x.levels.push_back(it->second);
    }
    return x;
}

} // namespace

std::vector<std::string> param_names(const RunConfig& rc) {
    switch (rc.task) {
        case Task::MSConv: return names_of(msconv_params_zeros(rc.cfg.ms));
        case Task::BaselineHead: return names_of(baseline_head_params_zeros(rc.cfg));
        case Task::MSConvHead: return names_of(msconv_head_params_seeded(rc.cfg, 0));
    }
    return {};
}

std::map<std::string, Tensor> run_forward(const RunConfig& rc,
                                          const std::map<std::string, Tensor>& inputs,
                                          const std::map<std::string, Tensor>& params) {
    const FeaturePyramid x = collect_inputs(rc, inputs);
    std::map<std::string, Tensor> out;
    if (rc.task == Task::MSConv) {
        const MSConvParams p = fill_from_map(msconv_params_zeros(rc.cfg.ms), params);
        const FeaturePyramid y = msconv_forward(x, p, rc.cfg.ms);
        for (std::size_t l = 0; l < y.levels.size(); ++l)
            out.emplace("y" + std::to_string(l + 1), y.levels[l]);
        return out;
    }
    HeadOutputs res;
    if (rc.task == Task::BaselineHead) {
        const BaselineHeadParams p = fill_from_map(baseline_head_params_zeros(rc.cfg), params);
        res = baseline_head_forward(x, p, rc.cfg);
    } else {
        const MSConvHeadParams p = fill_from_map(msconv_head_params_seeded(rc.cfg, 0), params);
        res = msconv_head_forward(x, p, rc.cfg);
    }
    for (std::size_t l = 0; l < res.cls.size(); ++l)
        out.emplace("cls" + std::to_string(l + 1), res.cls[l]);
    for (std::size_t l = 0; l < res.reg.size(); ++l)
        out.emplace("reg" + std::to_string(l + 1), res.reg[l]);
    return out;
}

std::map<std::string, Tensor> seeded_params(const RunConfig& rc, std::uint64_t seed) {
    switch (rc.task) {
        case Task::MSConv: return to_map(msconv_params_seeded(rc.cfg.ms, seed));
        case Task::BaselineHead: return to_map(baseline_head_params_seeded(rc.cfg, seed));
        case Task::MSConvHead: return to_map(msconv_head_params_seeded(rc.cfg, seed));
    }
    return {};
}

FixtureManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Code::Open, "cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("config"))
        throw SchemaError("manifest: missing 'config' object");

    FixtureManifest m;
    m.run = parse_run_config(j["config"].dump());
    const std::filesystem::path base = path.parent_path();
    auto read_map = [&](const char* key, std::map<std::string, std::filesystem::path>& dst) {
        if (!j.contains(key) || !j[key].is_object())
            throw SchemaError(std::string("manifest: missing object '") + key + "'");
        for (const auto& [name, rel] : j[key].items()) {
            if (!rel.is_string())
                throw SchemaError("manifest: path for '" + name + "' must be a string");
            dst[name] = base / rel.get<std::string>();
        }
    };
    read_map("inputs", m.inputs);
    read_map("params", m.params);
    read_map("expected", m.expected);
    if (j.contains("tolerance")) {
        const json& t = j["tolerance"];
        if (!t.is_object()) throw SchemaError("manifest: 'tolerance' must be an object");
        if (t.contains("abs")) m.tol_abs = t["abs"].get<double>();
        if (t.contains("rel")) m.tol_rel = t["rel"].get<double>();
    }
    if (m.tol_abs < 0 || m.tol_rel < 0) throw SchemaError("manifest: negative tolerance");
    return m;
}

VerifyResult verify_manifest(const FixtureManifest& m) {
    std::map<std::string, Tensor> inputs;
    for (const auto& [name, p] : m.inputs) inputs.emplace(name, read_tensor(p));
    std::map<std::string, Tensor> params;
    for (const auto& [name, p] : m.params) params.emplace(name, read_tensor(p));

    const std::map<std::string, Tensor> got = run_forward(m.run, inputs, params);

    VerifyResult res;
    res.pass = true;
    for (const auto& [name, path] : m.expected) {
        auto it = got.find(name);
        if (it == got.end()) throw SchemaError("manifest: unknown expected output '" + name + "'");
        const Tensor want = read_tensor(path);
        if (!(want.shape() == it->second.shape()))
            throw ShapeError("expected '" + name + "' has shape " + want.shape().str() +
                             ", forward produced " + it->second.shape().str());
        const auto wv = want.data();
        const auto gv = it->second.data();
        for (std::int64_t i = 0; i < want.numel(); ++i) {
            const double diff = std::abs(gv[static_cast<std::size_t>(i)] -
                                         wv[static_cast<std::size_t>(i)]);
            const double allowed = m.tol_abs + m.tol_rel * std::abs(wv[static_cast<std::size_t>(i)]);
            ++res.compared;
            if (diff > res.worst_abs_diff) {
                res.worst_abs_diff = diff;
                res.worst_name = name;
                res.worst_index = i;
                res.allowed = allowed;
            }
            if (diff > allowed) res.pass = false;
        }
    }
    return res;
}

} // namespace msconv
