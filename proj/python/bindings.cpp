#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cbmfix/pipeline.hpp"
#include "cbmfix/synth_benchmark.hpp"

namespace py = pybind11;
using namespace cbmfix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

std::vector<double> to_vec(const Array& a) {
    if (a.ndim() != 1) throw DimensionError("expected a 1-D array");
    return {a.data(), a.data() + a.size()};
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Concept-bottleneck intervention pipeline (C++ core)";

    // Translators run most-recent first, so the base class goes first.
    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<StageError>(m, "StageError", base);
    py::register_exception<DimensionError>(m, "DimensionError", base);
    py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base);
    py::register_exception<IoError>(m, "IoError", base);

    m.def("save_matrix", [](const Array& a, const std::filesystem::path& p) { save_matrix(to_matrix(a), p); },
          py::arg("array"), py::arg("path"));
    m.def("load_matrix", [](const std::filesystem::path& p) { return to_array(load_matrix(p)); }, py::arg("path"));

    m.def("softmax", [](const Array& v, double t) { return softmax(to_vec(v), t); }, py::arg("logits"),
          py::arg("temperature") = 1.0);
    m.def(
        "build_teacher",
        [](const Array& cbm, const Array& logits, std::vector<int> gamma, double t1) {
            return build_teacher(to_vec(cbm), to_vec(logits), ConfusedSet(std::move(gamma)), t1);
        },
        py::arg("p_cbm_star"), py::arg("p_org_logits"), py::arg("gamma"), py::arg("t1") = 2.0);
    m.def(
        "distillation_loss",
        [](const Array& t, const Array& z, double t2) { return distillation_loss(to_vec(t), to_vec(z), t2); },
        py::arg("teacher"), py::arg("logits"), py::arg("t2") = 1.5);
    m.def(
        "distillation_grad",
        [](const Array& t, const Array& z, double t2) { return distillation_grad(to_vec(t), to_vec(z), t2); },
        py::arg("teacher"), py::arg("logits"), py::arg("t2") = 1.5);

    m.def(
        "fit_nmf",
        [](const Array& a, std::size_t n, std::size_t iters, std::uint64_t seed) {
            auto [model, coeffs] = fit_nmf(to_matrix(a), n, iters, seed);
            return py::make_tuple(to_array(model.basis), to_array(coeffs.coeffs), model.error_history);
        },
        py::arg("features"), py::arg("n"), py::arg("iters") = 300, py::arg("seed") = 0,
        "Returns (basis, coefficients, error_history).");

    m.def(
        "select_interventions",
        [](const Array& s_nt, const Array& s_pf, std::size_t q) {
            ContributionLedger ledger{to_matrix(s_nt), to_matrix(s_pf), 0};
            return select(ledger, q).indices;
        },
        py::arg("s_nt"), py::arg("s_pf"), py::arg("q"));

    m.def(
        "generate_synth",
        [](const std::filesystem::path& dir, std::uint64_t seed, const std::string& spec_json) {
            SynthSpec spec = spec_json.empty() ? SynthSpec{} : synth_spec_from_json(spec_json);
            spec.seed = seed;
            write_synth(generate(spec), spec, dir);
            RunConfig cfg = synth_run_config(".");
            cfg.seed = seed;
            write_text(dir / "config.json", config_to_json(cfg));
            return dir / "config.json";
        },
        py::arg("dir"), py::arg("seed") = 42, py::arg("spec_json") = "",
        "Writes the synthetic benchmark and a config.json into `dir`; returns the config path.");

    m.def(
        "run",
        [](const std::filesystem::path& config, const std::filesystem::path& output_root, const std::string& mode) {
            RunConfig cfg = load_config(config);
            if (!mode.empty()) cfg.mode = mode_from_string(mode);
            RunReport r;
            {
                py::gil_scoped_release release;
                r = cbmfix::run(cfg, output_root);
            }
            return parse_json(report_to_json(r));
        },
        py::arg("config"), py::arg("output_root"), py::arg("mode") = "",
        "Runs every stage and returns the report as a dict.");

    m.def(
        "ablate",
        [](const std::filesystem::path& config, std::vector<double> fractions,
           const std::filesystem::path& output_root) {
            return parse_json(ablation_to_json(ablate_gamma_fraction(load_config(config), fractions, output_root)));
        },
        py::arg("config"), py::arg("fractions"), py::arg("output_root"));
}
