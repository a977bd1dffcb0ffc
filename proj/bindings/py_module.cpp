// Python bindings for the main operations: dataset generation and I/O, model
// fitting, population summaries, and their variance estimates.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <utility>
#include <vector>

#include "semirep/avar.hpp"
#include "semirep/backfit.hpp"
#include "semirep/dataset_io.hpp"
#include "semirep/errors.hpp"
#include "semirep/simlab.hpp"
#include "semirep/summaries.hpp"

namespace py = pybind11;
using namespace semirep;

namespace {

std::vector<double> to_list(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
}

using FixedColumns = std::vector<std::pair<int, double>>;

SimDesign build_design(int n, int m, int R, const std::vector<double>& beta, double sigma2,
                       double rho, const std::string& theta, const std::string& missingness,
                       double keep_prob, const std::vector<double>& zeta) {
    SimDesign design;
    design.n = n;
    design.m = m;
    design.R = R;
    design.p = static_cast<int>(beta.size());
    design.beta0 = to_vector(beta);
    design.sigma2 = sigma2;
    design.rho = rho;
    design.theta = ThetaRule::named(theta);
    if (missingness == "mcar") {
        design.missingness = MissingnessMechanism::mcar(keep_prob);
    } else if (missingness == "mar") {
        design.missingness = MissingnessMechanism::mar_logistic(to_vector(zeta));
    } else if (missingness != "none") {
        throw_validation("invalid-design", "missingness must be none, mcar, or mar");
    }
    return design;
}

}  // namespace

PYBIND11_MODULE(_semirep, module) {
    module.doc() =
        "Gaussian partially linear repeated-measures model: kernel-weighted "
        "estimating equations, population summaries, and variance estimates.";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::validation)
                PyErr_SetString(PyExc_ValueError, e.what());
            else
                PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    py::class_<ClusterDataset>(module, "ClusterDataset")
        .def_readonly("m", &ClusterDataset::m)
        .def_readonly("R", &ClusterDataset::R)
        .def_readonly("p", &ClusterDataset::p)
        .def("n", &ClusterDataset::n, "Number of clusters")
        .def("n_observed", &ClusterDataset::n_observed, "Clusters with delta = 1")
        .def("q", &ClusterDataset::q, "Slots per cluster (m * R)")
        .def("__repr__", [](const ClusterDataset& d) {
            return "<ClusterDataset n=" + std::to_string(d.n()) + " m=" + std::to_string(d.m) +
                   " R=" + std::to_string(d.R) + " p=" + std::to_string(d.p) + ">";
        });

    py::class_<ModelParams>(module, "ModelParams")
        .def_property_readonly("beta", [](const ModelParams& p) { return to_list(p.beta); })
        .def_readonly("sigma2", &ModelParams::sigma2)
        .def_readonly("rho", &ModelParams::rho);

    py::class_<ThetaEstimate>(module, "ThetaEstimate")
        .def_property_readonly("eval_points",
                               [](const ThetaEstimate& t) { return to_list(t.eval_points); })
        .def_property_readonly("values", [](const ThetaEstimate& t) { return to_list(t.values); })
        .def_property_readonly("slopes", [](const ThetaEstimate& t) { return to_list(t.slopes); })
        .def_readonly("bandwidth", &ThetaEstimate::bandwidth)
        .def("__call__", &ThetaEstimate::value_at_clamped, py::arg("z"),
             "Interpolated curve value, clamped at the boundary");

    py::class_<FitResult>(module, "FitResult")
        .def_readonly("params", &FitResult::params)
        .def_readonly("theta", &FitResult::theta)
        .def_readonly("h", &FitResult::h)
        .def_readonly("bandwidth_selected", &FitResult::bandwidth_selected)
        .def_readonly("iterations", &FitResult::iterations)
        .def_readonly("converged", &FitResult::converged)
        .def_readonly("loglik", &FitResult::loglik)
        .def_readonly("warnings", &FitResult::warnings);

    py::class_<SummaryEstimate>(module, "SummaryEstimate")
        .def_readonly("kappa", &SummaryEstimate::kappa)
        .def_readonly("variance", &SummaryEstimate::variance)
        .def_readonly("ci_lo", &SummaryEstimate::ci_lo)
        .def_readonly("ci_hi", &SummaryEstimate::ci_hi)
        .def_readonly("method", &SummaryEstimate::method)
        .def_readonly("variance_source", &SummaryEstimate::variance_source)
        .def_readonly("n_used", &SummaryEstimate::n_used)
        .def_readonly("warnings", &SummaryEstimate::warnings);

    py::class_<BootstrapResult>(module, "BootstrapResult")
        .def_readonly("variance", &BootstrapResult::variance)
        .def_readonly("ci_lo", &BootstrapResult::ci_lo)
        .def_readonly("ci_hi", &BootstrapResult::ci_hi)
        .def_readonly("replicates", &BootstrapResult::replicates)
        .def_readonly("attempted", &BootstrapResult::attempted)
        .def_readonly("failures", &BootstrapResult::failures)
        .def_readonly("warnings", &BootstrapResult::warnings);

    module.def(
        "load_dataset",
        [](const std::string& path) { return load_dataset(path); }, py::arg("path"),
        "Load the CSV schema cluster_id, position_j, visit_k, delta, y, z, x1..xp");
    module.def(
        "write_dataset",
        [](const std::string& path, const ClusterDataset& data) { write_dataset(path, data); },
        py::arg("path"), py::arg("dataset"));

    module.def(
        "fit",
        [](const ClusterDataset& data, double h, double tol_outer, int max_outer,
           int grid_points) {
            FitConfig config;
            config.h = h;
            config.tol_outer = tol_outer;
            config.max_outer = max_outer;
            config.profile.grid_points = grid_points;
            return fit(data, config);
        },
        py::arg("dataset"), py::arg("h") = 0.0, py::arg("tol_outer") = 1e-6,
        py::arg("max_outer") = 50, py::arg("grid_points") = 101,
        "Backfit the model; h = 0 selects the bandwidth by cross-validation");

    module.def(
        "kappa_semi",
        [](const ClusterDataset& data, const FitResult& fitted, const std::string& functional,
           double threshold, const FixedColumns& fixed) {
            return kappa_semi(data, fitted, make_functional(functional, threshold, fixed));
        },
        py::arg("dataset"), py::arg("fit"), py::arg("functional") = "survival",
        py::arg("threshold") = 0.0, py::arg("fixed") = FixedColumns{},
        "Plug-in population summary over all clusters");

    module.def(
        "kappa_imputed",
        [](const ClusterDataset& data, const FitResult& fitted, const std::string& functional,
           double threshold, const FixedColumns& fixed) {
            ResponseFunctional rf = make_response_functional(functional, threshold);
            rf.fixed_columns = fixed;
            return kappa_imputed(data, fitted, rf);
        },
        py::arg("dataset"), py::arg("fit"), py::arg("functional") = "survival",
        py::arg("threshold") = 0.0, py::arg("fixed") = FixedColumns{},
        "Observed responses where available, model-imputed values elsewhere");

    module.def(
        "kappa_ipw",
        [](const ClusterDataset& data, const FitResult& fitted, const std::string& functional,
           double threshold, const FixedColumns& fixed) {
            ResponseFunctional rf = make_response_functional(functional, threshold);
            rf.fixed_columns = fixed;
            return kappa_ipw(data, fitted, rf, fit_pi_model(data));
        },
        py::arg("dataset"), py::arg("fit"), py::arg("functional") = "survival",
        py::arg("threshold") = 0.0, py::arg("fixed") = FixedColumns{},
        "Inverse-probability weighting with a logistic missingness model");

    module.def(
        "plug_in_variance",
        [](const ClusterDataset& data, const FitResult& fitted, const std::string& functional,
           double threshold, const FixedColumns& fixed, int grid_points, double trim) {
            AvarConfig config;
            config.grid_points = grid_points;
            config.trim_fraction = trim;
            const PlugInReport report =
                plug_in_report(data, fitted, make_functional(functional, threshold, fixed), config);
            py::dict out;
            out["variance"] = report.variance;
            out["variance_of_estimate"] = report.variance / data.n();
            out["trimmed_mass"] = report.trimmed_mass;
            out["g_residual"] = report.g_residual;
            out["theta_b_residual"] = report.theta_b_residual;
            out["warnings"] = report.warnings;
            return out;
        },
        py::arg("dataset"), py::arg("fit"), py::arg("functional") = "survival",
        py::arg("threshold") = 0.0, py::arg("fixed") = FixedColumns{},
        py::arg("grid_points") = 41, py::arg("trim") = 0.01,
        "Plug-in asymptotic variance (sqrt(n)-normalized) with diagnostics");

    module.def(
        "bootstrap_kappa",
        [](const ClusterDataset& data, const FitResult& fitted, const std::string& functional,
           double threshold, const FixedColumns& fixed, int replicates,
           const std::string& scheme, std::uint64_t seed, int threads, int max_outer) {
            BootstrapConfig config;
            config.replicates = replicates;
            if (scheme == "cluster") {
                config.scheme = BootstrapScheme::cluster_nonparametric;
            } else if (scheme == "parametric") {
                config.scheme = BootstrapScheme::parametric;
            } else {
                throw_validation("invalid-config", "scheme must be cluster or parametric");
            }
            config.seed = seed;
            config.threads = threads;
            config.fit_config.max_outer = max_outer;
            const Functional f = make_functional(functional, threshold, fixed);
            return bootstrap_variance(
                data, fitted,
                [&f](const ClusterDataset& replicate, const FitResult& refit) {
                    return kappa_semi(replicate, refit, f).kappa;
                },
                config);
        },
        py::arg("dataset"), py::arg("fit"), py::arg("functional") = "survival",
        py::arg("threshold") = 0.0, py::arg("fixed") = FixedColumns{},
        py::arg("replicates") = 200, py::arg("scheme") = "cluster", py::arg("seed") = 1,
        py::arg("threads") = 1, py::arg("max_outer") = 200,
        "Cluster bootstrap of the plug-in summary, Var(kappa_hat) scale");

    module.def(
        "generate_dataset",
        [](int n, int m, int R, const std::vector<double>& beta, double sigma2, double rho,
           const std::string& theta, const std::string& missingness, double keep_prob,
           const std::vector<double>& zeta, std::uint64_t seed) {
            const SimDesign design =
                build_design(n, m, R, beta, sigma2, rho, theta, missingness, keep_prob, zeta);
            ClusterDataset data = generate_sim_dataset(design, seed);
            if (design.missingness.kind != MissingnessMechanism::Kind::none) {
                Rng rng = Rng::stream(seed, 1);
                data = apply_missingness(data, design.missingness, rng);
            }
            return data;
        },
        py::arg("n") = 100, py::arg("m") = 2, py::arg("R") = 3,
        py::arg("beta") = std::vector<double>{1.0, 1.0}, py::arg("sigma2") = 1.0,
        py::arg("rho") = 0.4, py::arg("theta") = "sin8", py::arg("missingness") = "none",
        py::arg("keep_prob") = 0.7, py::arg("zeta") = std::vector<double>{},
        py::arg("seed") = 1, "Synthetic repeated-measures dataset from the benchmark design");

    module.def(
        "generate_family_survey",
        [](std::uint64_t seed, int n) {
            KenyaConfig config;
            config.n = n;
            return generate_kenya_like(config, seed).data;
        },
        py::arg("seed") = 1, py::arg("n") = 68,
        "Synthetic maternal-child survey design (2 children x 4 visits, 4 covariates)");

    module.def(
        "true_kappa",
        [](const std::string& functional, double threshold, const FixedColumns& fixed,
           const std::vector<double>& beta, double sigma2, double rho, const std::string& theta) {
            SimDesign design;
            design.p = static_cast<int>(beta.size());
            design.beta0 = to_vector(beta);
            design.sigma2 = sigma2;
            design.rho = rho;
            design.theta = ThetaRule::named(theta);
            return true_kappa_oracle(design, make_functional(functional, threshold, fixed)).value;
        },
        py::arg("functional") = "survival", py::arg("threshold") = 0.0,
        py::arg("fixed") = FixedColumns{}, py::arg("beta") = std::vector<double>{1.0, 1.0},
        py::arg("sigma2") = 1.0, py::arg("rho") = 0.4, py::arg("theta") = "sin8",
        "Ground-truth population summary for the synthetic design");
}
