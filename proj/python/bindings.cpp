#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msconv/config.hpp"
#include "msconv/gradcheck.hpp"
#include "msconv/serialize.hpp"

namespace py = pybind11;
using namespace msconv;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() > 4) throw SchemaError("arrays must have at most 4 dims");
    std::int64_t dims[4] = {1, 1, 1, 1};
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        dims[4 - a.ndim() + i] = static_cast<std::int64_t>(a.shape(i));
    const Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from_data(shape, std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    const Shape4 s = t.shape();
    py::array_t<double> a({s.n, s.c, s.h, s.w});
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

std::map<std::string, Tensor> tensors_from_dict(const py::dict& d) {
    std::map<std::string, Tensor> out;
    for (const auto& item : d)
        out.emplace(item.first.cast<std::string>(),
                    tensor_from_array(item.second.cast<
                        py::array_t<double, py::array::c_style | py::array::forcecast>>()));
    return out;
}

py::dict dict_from_tensors(const std::map<std::string, Tensor>& m) {
    py::dict out;
    for (const auto& [name, t] : m) out[py::str(name)] = array_from_tensor(t);
    return out;
}

py::dict report_to_dict(const CostReport& r) {
    py::dict out;
    py::list entries;
    for (const CostEntry& e : r.entries) {
        py::dict entry;
        entry["name"] = e.name;
        entry["params"] = e.params;
        entry["macs"] = e.macs;
        entry["formula"] = e.formula;
        entries.append(entry);
    }
    out["entries"] = entries;
    out["total_params"] = r.total_params;
    out["total_macs"] = r.total_macs;
    out["closed_form_params"] = r.closed_form_params;
    out["convention"] = r.convention;
    return out;
}

HeadVariant parse_variant(const std::string& v) {
    if (v == "baseline") return HeadVariant::Baseline;
    if (v == "msconv") return HeadVariant::MSConv;
    throw SchemaError("variant must be 'baseline' or 'msconv'");
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multi-scale convolution core: forwards, gradient checks, accounting, tensor files";

    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def(
        "run",
        [](const std::string& config_json, const py::dict& inputs, py::object params,
           py::object seed) {
            const RunConfig rc = parse_run_config(config_json);
            std::map<std::string, Tensor> param_map;
            if (!params.is_none())
                param_map = tensors_from_dict(params.cast<py::dict>());
            else if (!seed.is_none())
                param_map = seeded_params(rc, seed.cast<std::uint64_t>());
            else
                throw SchemaError("run: provide params or seed");
            return dict_from_tensors(run_forward(rc, tensors_from_dict(inputs), param_map));
        },
        py::arg("config"), py::arg("inputs"), py::arg("params") = py::none(),
        py::arg("seed") = py::none(),
        "Run the configured forward pass; inputs/outputs are name->array dicts.");

    m.def(
        "seeded_params",
        [](const std::string& config_json, std::uint64_t seed) {
            const RunConfig rc = parse_run_config(config_json);
            return dict_from_tensors(seeded_params(rc, seed));
        },
        py::arg("config"), py::arg("seed"),
        "Parameters from the documented seeded initialization, keyed by canonical name.");

    m.def(
        "param_names",
        [](const std::string& config_json) {
            return param_names(parse_run_config(config_json));
        },
        py::arg("config"));

    m.def(
        "gradcheck",
        [](const std::string& op, std::uint64_t seed) {
            const GradcheckReport r = run_gradcheck_op(op, seed);
            py::dict out;
            out["op"] = r.op;
            out["max_rel_err"] = r.max_rel_err;
            out["pass"] = r.pass;
            out["checked"] = r.checked;
            return out;
        },
        py::arg("op"), py::arg("seed") = 1,
        "Finite-difference gradient check of one registered op family.");

    m.def("gradcheck_ops", &gradcheck_op_names);

    m.def(
        "count_params",
        [](const std::string& config_json, const std::string& variant) {
            const RunConfig rc = parse_run_config(config_json);
            return report_to_dict(count_params(rc.cfg, parse_variant(variant)));
        },
        py::arg("config"), py::arg("variant"));

    m.def(
        "count_macs",
        [](const std::string& config_json, const std::string& variant) {
            const RunConfig rc = parse_run_config(config_json);
            return report_to_dict(count_macs(rc.cfg, parse_variant(variant)));
        },
        py::arg("config"), py::arg("variant"));

    m.def(
        "connection_cost",
        [](std::int64_t c, std::int64_t c_r, int levels, const std::string& mode) {
            ConnectionMode cm;
            if (mode == "full")
                cm = ConnectionMode::Full;
            else if (mode == "gather_scatter")
                cm = ConnectionMode::GatherScatter;
            else
                throw SchemaError("mode must be 'full' or 'gather_scatter'");
            const ConnectionCost cost = connection_cost(c, c_r, levels, cm);
            py::dict out;
            out["channel_resizes"] = cost.channel_resizes;
            out["formula"] = cost.formula;
            out["leading_order"] = cost.leading_order;
            out["leading_formula"] = cost.leading_formula;
            return out;
        },
        py::arg("C"), py::arg("C_r"), py::arg("L"), py::arg("mode"));

    m.def(
        "read_tensor",
        [](const std::string& path) { return array_from_tensor(read_tensor(path)); },
        py::arg("path"));

    m.def(
        "write_tensor",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const std::string& path) { write_tensor(tensor_from_array(a), path); },
        py::arg("array"), py::arg("path"));
}
