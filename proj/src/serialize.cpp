#include "semirep/serialize.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "semirep/errors.hpp"

namespace semirep {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double value) {
    if (std::isfinite(value)) return value;
    return nullptr;
}

double number_from(const nlohmann::json& j) {
    if (j.is_null()) return kNaN;
    return j.get<double>();
}

std::vector<double> std_vector_from(const nlohmann::json& j) {
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& item : j) out.push_back(number_from(item));
    return out;
}

nlohmann::json json_std_array(const std::vector<double>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (double value : v) j.push_back(number_or_null(value));
    return j;
}

}  // namespace

nlohmann::json json_array(const Eigen::VectorXd& v) {
    nlohmann::json j = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(number_or_null(v[i]));
    return j;
}

nlohmann::json json_matrix(const Eigen::MatrixXd& v) {
    nlohmann::json j = nlohmann::json::array();
    for (int r = 0; r < v.rows(); ++r) j.push_back(json_array(v.row(r).transpose()));
    return j;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<int>(j.size()));
    int i = 0;
    for (const auto& item : j) v[i++] = number_from(item);
    return v;
}

void to_json(nlohmann::json& j, const ModelParams& v) {
    j = {{"beta", json_array(v.beta)}, {"sigma2", number_or_null(v.sigma2)},
         {"rho", number_or_null(v.rho)}};
}

void from_json(const nlohmann::json& j, ModelParams& v) {
    v.beta = vector_from_json(j.at("beta"));
    v.sigma2 = number_from(j.at("sigma2"));
    v.rho = number_from(j.at("rho"));
}

void to_json(nlohmann::json& j, const ThetaEstimate& v) {
    j = {{"eval_points", json_array(v.eval_points)},
         {"values", json_array(v.values)},
         {"slopes", json_array(v.slopes)},
         {"bandwidth", number_or_null(v.bandwidth)}};
}

void from_json(const nlohmann::json& j, ThetaEstimate& v) {
    v.eval_points = vector_from_json(j.at("eval_points"));
    v.values = vector_from_json(j.at("values"));
    v.slopes = vector_from_json(j.at("slopes"));
    v.bandwidth = number_from(j.at("bandwidth"));
}

void to_json(nlohmann::json& j, const BandwidthSelection& v) {
    j = {{"h", number_or_null(v.h)},
         {"h_cv", number_or_null(v.h_cv)},
         {"undersmooth_factor", number_or_null(v.undersmooth_factor)},
         {"candidates", json_std_array(v.candidates)},
         {"cv_loglik", json_std_array(v.cv_loglik)},
         {"failed_candidates", json_std_array(v.failed_candidates)}};
}

void from_json(const nlohmann::json& j, BandwidthSelection& v) {
    v.h = number_from(j.at("h"));
    v.h_cv = number_from(j.at("h_cv"));
    v.undersmooth_factor = number_from(j.at("undersmooth_factor"));
    v.candidates = std_vector_from(j.at("candidates"));
    v.cv_loglik = std_vector_from(j.at("cv_loglik"));
    v.failed_candidates = std_vector_from(j.at("failed_candidates"));
}

void to_json(nlohmann::json& j, const FitIterationRecord& v) {
    j = {{"iteration", v.iteration},
         {"param_change", number_or_null(v.param_change)},
         {"theta_change", number_or_null(v.theta_change)},
         {"loglik", number_or_null(v.loglik)}};
}

void from_json(const nlohmann::json& j, FitIterationRecord& v) {
    v.iteration = j.at("iteration").get<int>();
    v.param_change = number_from(j.at("param_change"));
    v.theta_change = number_from(j.at("theta_change"));
    v.loglik = number_from(j.at("loglik"));
}

void to_json(nlohmann::json& j, const ProfileDiagnostics& v) {
    j = {{"converged", v.converged},
         {"sweeps", v.sweeps},
         {"final_change", number_or_null(v.final_change)},
         {"dropped_points", json_std_array(v.dropped_points)},
         {"boundary_points", json_std_array(v.boundary_points)},
         {"warnings", v.warnings}};
}

void from_json(const nlohmann::json& j, ProfileDiagnostics& v) {
    v.converged = j.at("converged").get<bool>();
    v.sweeps = j.at("sweeps").get<int>();
    v.final_change = number_from(j.at("final_change"));
    v.dropped_points = std_vector_from(j.at("dropped_points"));
    v.boundary_points = std_vector_from(j.at("boundary_points"));
    v.warnings = j.at("warnings").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const FitResult& v) {
    j = {{"params", v.params},
         {"theta", v.theta},
         {"h", number_or_null(v.h)},
         {"bandwidth", v.bandwidth},
         {"bandwidth_selected", v.bandwidth_selected},
         {"iterations", v.iterations},
         {"converged", v.converged},
         {"final_param_change", number_or_null(v.final_param_change)},
         {"final_theta_change", number_or_null(v.final_theta_change)},
         {"loglik", number_or_null(v.loglik)},
         {"trace", v.trace},
         {"profile_diagnostics", v.profile_diagnostics},
         {"warnings", v.warnings}};
}

void from_json(const nlohmann::json& j, FitResult& v) {
    v.params = j.at("params").get<ModelParams>();
    v.theta = j.at("theta").get<ThetaEstimate>();
    v.h = number_from(j.at("h"));
    v.bandwidth = j.at("bandwidth").get<BandwidthSelection>();
    v.bandwidth_selected = j.at("bandwidth_selected").get<bool>();
    v.iterations = j.at("iterations").get<int>();
    v.converged = j.at("converged").get<bool>();
    v.final_param_change = number_from(j.at("final_param_change"));
    v.final_theta_change = number_from(j.at("final_theta_change"));
    v.loglik = number_from(j.at("loglik"));
    v.trace = j.at("trace").get<std::vector<FitIterationRecord>>();
    v.profile_diagnostics = j.at("profile_diagnostics").get<ProfileDiagnostics>();
    v.warnings = j.at("warnings").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const SummaryEstimate& v) {
    j = {{"kappa", number_or_null(v.kappa)},
         {"variance", number_or_null(v.variance)},
         {"ci_lo", number_or_null(v.ci_lo)},
         {"ci_hi", number_or_null(v.ci_hi)},
         {"method", v.method},
         {"variance_source", v.variance_source},
         {"n_used", v.n_used},
         {"threshold", number_or_null(v.threshold)},
         {"warnings", v.warnings}};
}

void from_json(const nlohmann::json& j, SummaryEstimate& v) {
    v.kappa = number_from(j.at("kappa"));
    v.variance = number_from(j.at("variance"));
    v.ci_lo = number_from(j.at("ci_lo"));
    v.ci_hi = number_from(j.at("ci_hi"));
    v.method = j.at("method").get<std::string>();
    v.variance_source = j.at("variance_source").get<std::string>();
    v.n_used = j.at("n_used").get<int>();
    v.threshold = number_from(j.at("threshold"));
    v.warnings = j.at("warnings").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const BootstrapResult& v) {
    j = {{"variance", number_or_null(v.variance)},
         {"ci_lo", number_or_null(v.ci_lo)},
         {"ci_hi", number_or_null(v.ci_hi)},
         {"replicates", json_std_array(v.replicates)},
         {"attempted", v.attempted},
         {"failures", v.failures},
         {"warnings", v.warnings}};
}

void from_json(const nlohmann::json& j, BootstrapResult& v) {
    v.variance = number_from(j.at("variance"));
    v.ci_lo = number_from(j.at("ci_lo"));
    v.ci_hi = number_from(j.at("ci_hi"));
    v.replicates = std_vector_from(j.at("replicates"));
    v.attempted = j.at("attempted").get<int>();
    v.failures = j.at("failures").get<int>();
    v.warnings = j.at("warnings").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const PlugInReport& v) {
    j = {{"variance", number_or_null(v.variance)},
         {"m1_eigenvalues", json_array(v.m1_eigenvalues)},
         {"trimmed_mass", number_or_null(v.trimmed_mass)},
         {"trimmed_nodes", v.trimmed_nodes},
         {"g_residual", number_or_null(v.g_residual)},
         {"theta_b_residual", number_or_null(v.theta_b_residual)},
         {"omega_nodes", json_array(v.omega.nodes)},
         {"omega_values", json_array(v.omega.values)},
         {"warnings", v.warnings}};
}

void to_json(nlohmann::json& j, const ExperimentReport& v) {
    j = {{"names", v.names},
         {"values", json_matrix(v.values)},
         {"ci_lo", json_matrix(v.ci_lo)},
         {"ci_hi", json_matrix(v.ci_hi)},
         {"mean", json_array(v.mean)},
         {"sd", json_array(v.sd)},
         {"mc_se", json_array(v.mc_se)},
         {"oracle", json_array(v.oracle)},
         {"bias", json_array(v.bias)},
         {"coverage", json_array(v.coverage)},
         {"attempted", v.attempted},
         {"failures", v.failures},
         {"warnings", v.warnings}};
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw_validation("parse-error", "cannot open '" + path + "' for writing");
    out << dump_json(j);
    if (!out) throw_validation("parse-error", "failed while writing '" + path + "'");
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_validation("parse-error", "cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw_validation("parse-error", std::string("invalid JSON in '") + path + "': " + e.what());
    }
}

}  // namespace semirep
