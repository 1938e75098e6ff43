#pragma once

#include <filesystem>
#include <map>

#include "msconv/head.hpp"

namespace msconv {

enum class Task { MSConv, BaselineHead, MSConvHead };

std::string task_name(Task t);

/// Everything a `run` needs: the task plus the full geometry. For the msconv
/// task the head-only fields are ignored.
struct RunConfig {
    Task task = Task::MSConv;
    HeadConfig cfg;
};

/// Parses the JSON config schema. Field names mirror the config structs:
/// task, N, L, C, C_r, l_gl, k, resize.up, shapes, num_classes,
/// anchors_per_loc, stack_depth, branch_relu. Violations raise SchemaError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_json(const RunConfig& rc);

/// Fixture manifest: config + named input/param/expected tensor files and
/// comparison tolerances. Relative paths resolve against the manifest's
/// directory.
struct FixtureManifest {
    RunConfig run;
    std::map<std::string, std::filesystem::path> inputs;
    std::map<std::string, std::filesystem::path> params;
    std::map<std::string, std::filesystem::path> expected;
    double tol_abs = 0.0;
    double tol_rel = 0.0;
};

FixtureManifest load_manifest(const std::filesystem::path& path);

struct VerifyResult {
    bool pass = false;
    std::string worst_name;
    std::int64_t worst_index = -1;
    double worst_abs_diff = 0.0;
    double allowed = 0.0;
    std::int64_t compared = 0;
};

/// Loads inputs and params, runs the configured forward, and compares every
/// expected tensor: pass iff |got - want| <= tol_abs + tol_rel * |want|
/// elementwise.
VerifyResult verify_manifest(const FixtureManifest& m);

/// Canonically named input tensors ("x1".."xL") for a run config.
std::vector<std::string> input_names(const RunConfig& rc);
/// Canonically named outputs ("y1".."yL", or "cls1"../"reg1"..).
std::vector<std::string> output_names(const RunConfig& rc);
/// Canonical parameter names for the configured task.
std::vector<std::string> param_names(const RunConfig& rc);

/// Runs the configured forward. `params` maps canonical parameter names to
/// tensors; missing or extra names raise SchemaError.
std::map<std::string, Tensor> run_forward(const RunConfig& rc,
                                          const std::map<std::string, Tensor>& inputs,
                                          const std::map<std::string, Tensor>& params);

/// Parameters from the documented seeded init, keyed by canonical name.
std::map<std::string, Tensor> seeded_params(const RunConfig& rc, std::uint64_t seed);

} // namespace msconv
