#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msconv/tensor.hpp"

namespace msconv {

struct GradcheckReport {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
    std::int64_t checked = 0; // perturbed input elements
};

/// A differentiable computation under test: `inputs` are the tensors to
/// perturb, `loss` maps (possibly tape-bound) replacements for them to a
/// scalar. The analytic gradient from a taped pass is compared against
/// central finite differences (step 1e-5) on every input element; relative
/// error uses denominator max(|analytic|, |numeric|, 1e-8) and the case
/// passes iff the maximum is below 1e-6.
struct GradcheckCase {
    std::vector<Tensor> inputs;
    std::function<Tensor(std::span<const Tensor>)> loss;
};

GradcheckReport run_gradcheck(const std::string& name, const GradcheckCase& c);

/// Registered op families: elementwise, activations, concat, conv2d
/// (groups 1/2/4 x k 1/3), deform conv, pooling, both resize paths, the full
/// MSConv block and both heads on tiny configurations.
std::vector<std::string> gradcheck_op_names();

/// Runs one registered family; throws SchemaError for unknown names.
GradcheckReport run_gradcheck_op(const std::string& name, std::uint64_t seed);

std::vector<GradcheckReport> run_all_gradchecks(std::uint64_t seed);

} // namespace msconv
