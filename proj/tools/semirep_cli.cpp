// Batch front door: dataset ingestion, configuration, command dispatch, and
// machine-readable outputs. Subcommands: fit, summarize, bootstrap, avar,
// simulate. Data artifacts (JSON/CSV files in --out-dir) never share a stream
// with diagnostics; human-readable notes go to stderr only.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semirep/avar.hpp"
#include "semirep/backfit.hpp"
#include "semirep/dataset_io.hpp"
#include "semirep/errors.hpp"
#include "semirep/run_config.hpp"
#include "semirep/serialize.hpp"
#include "semirep/simlab.hpp"
#include "semirep/summaries.hpp"

namespace {

using namespace semirep;

struct Options {
    std::string config_path;
    std::string data_path;
    std::string fit_path;
    std::string out_dir = ".";
    std::optional<long long> seed;
    std::optional<int> threads;
    std::optional<double> bandwidth;
    std::optional<long long> replicates;
    std::optional<std::string> functional;
    std::optional<double> threshold;
    std::optional<std::string> estimator;
    std::optional<std::string> curve;
    std::vector<std::string> fixes;
};

RunConfig resolve_config(const Options& opts) {
    RunConfig config =
        opts.config_path.empty() ? RunConfig::defaults() : RunConfig::from_file(opts.config_path);
    if (opts.seed) config.set("seed", std::to_string(*opts.seed));
    if (opts.threads) config.set("threads", std::to_string(*opts.threads));
    if (opts.bandwidth) {
        config.set("smoother.h", format_full(*opts.bandwidth));
        config.set("smoother.auto", "false");
    }
    if (opts.replicates) {
        config.set("bootstrap.B", std::to_string(*opts.replicates));
        config.set("sim.replicates", std::to_string(*opts.replicates));
    }
    if (opts.functional) config.set("summary.functional", *opts.functional);
    if (opts.threshold) config.set("summary.threshold", format_full(*opts.threshold));
    if (opts.estimator) config.set("summary.estimator", *opts.estimator);
    if (opts.curve) config.set("summary.curve", *opts.curve);
    if (!opts.fixes.empty()) {
        std::string joined;
        for (const std::string& fix : opts.fixes) {
            if (!joined.empty()) joined += ",";
            joined += fix;
        }
        config.set("summary.fix", joined);
    }

    const bool auto_h = config.get_bool("smoother.auto");
    const double h = config.get_double("smoother.h");
    if (auto_h && h != 0.0)
        throw_validation("invalid-config",
                         "smoother.auto = true conflicts with a fixed smoother.h; set one");
    if (!auto_h && h <= 0.0)
        throw_validation("invalid-config", "smoother.auto = false needs smoother.h > 0");
    return config;
}

FitConfig fit_config_from(const RunConfig& config) {
    FitConfig fc;
    fc.h = config.get_bool("smoother.auto") ? 0.0 : config.get_double("smoother.h");
    fc.tol_outer = config.get_double("backfit.tol_outer");
    fc.max_outer = static_cast<int>(config.get_int("backfit.max_outer"));
    fc.profile.grid_points = static_cast<int>(config.get_int("smoother.grid_points"));
    return fc;
}

AvarConfig avar_config_from(const RunConfig& config) {
    AvarConfig ac;
    ac.grid_points = static_cast<int>(config.get_int("avar.grid"));
    ac.trim_fraction = config.get_double("avar.trim");
    return ac;
}

BootstrapConfig bootstrap_config_from(const RunConfig& config) {
    BootstrapConfig bc;
    bc.replicates = static_cast<int>(config.get_int("bootstrap.B"));
    const std::string scheme = config.get_string("bootstrap.scheme");
    if (scheme == "cluster") {
        bc.scheme = BootstrapScheme::cluster_nonparametric;
    } else if (scheme == "parametric") {
        bc.scheme = BootstrapScheme::parametric;
    } else {
        throw_validation("invalid-config",
                         "bootstrap.scheme must be cluster or parametric, got '" + scheme + "'");
    }
    bc.reselect_bandwidth = config.get_bool("bootstrap.reselect_bandwidth");
    bc.seed = static_cast<std::uint64_t>(config.get_int("seed"));
    bc.threads = static_cast<int>(config.get_int("threads"));
    bc.fit_config = fit_config_from(config);
    return bc;
}

ClusterDataset load_data(const Options& opts, const RunConfig& config) {
    ClusterDataset data = load_dataset(opts.data_path);
    if (!config.is_blank("model.p") && config.get_int("model.p") != data.p)
        throw_validation("invalid-config",
                         "model.p = " + config.raw("model.p") + " but the data file has p = " +
                             std::to_string(data.p));
    return data;
}

FitResult obtain_fit(const Options& opts, const RunConfig& config, const ClusterDataset& data) {
    if (!opts.fit_path.empty()) {
        const nlohmann::json j = read_json(opts.fit_path);
        return j.at("fit").get<FitResult>();
    }
    return fit(data, fit_config_from(config));
}

std::filesystem::path prepare_out_dir(const Options& opts) {
    const std::filesystem::path dir(opts.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw_validation("parse-error", "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw_validation("parse-error", "failed while writing '" + path.string() + "'");
}

void write_run_artifacts(const std::filesystem::path& dir, const RunConfig& config) {
    write_text(dir / "resolved_config.cfg", config.echo_text());
}

nlohmann::json config_json(const RunConfig& config) { return nlohmann::json(config.values); }

// Threshold grid: the curve list when present, else the single threshold.
std::vector<double> threshold_grid(const RunConfig& config) {
    if (!config.is_blank("summary.curve")) return config.get_double_list("summary.curve");
    return {config.get_double("summary.threshold")};
}

SummaryEstimate summarize_once(const ClusterDataset& data, const FitResult& fitted,
                               const RunConfig& config, double threshold,
                               const PiModel* pi_model, std::vector<std::string>* diagnostics) {
    const std::string name = config.get_string("summary.functional");
    const std::string estimator = config.get_string("summary.estimator");
    const auto fixed = config.get_fixed_columns("summary.fix");
    const Functional functional = make_functional(name, threshold, fixed);

    SummaryEstimate estimate;
    ResponseFunctional rf;
    if (estimator == "semi") {
        estimate = kappa_semi(data, fitted, functional);
    } else if (estimator == "imputed" || estimator == "ipw") {
        rf = make_response_functional(name, threshold);
        rf.fixed_columns = fixed;
        estimate = estimator == "imputed" ? kappa_imputed(data, fitted, rf)
                                          : kappa_ipw(data, fitted, rf, *pi_model);
    } else {
        throw_validation("invalid-config",
                         "summary.estimator must be semi, imputed, or ipw, got '" + estimator +
                             "'");
    }

    // SummaryEstimate.variance is on the sqrt(n)-normalized scale; its CI
    // helper divides by n_used itself.
    const std::string method = config.get_string("variance.method");
    if (method == "plugin") {
        const AvarConfig ac = avar_config_from(config);
        if (estimator == "semi") {
            const PlugInReport report = plug_in_report(data, fitted, functional, ac);
            estimate.set_variance(report.variance, "plugin");
            diagnostics->insert(diagnostics->end(), report.warnings.begin(),
                                report.warnings.end());
        } else if (estimator == "imputed") {
            const PlugInReport report = plug_in_report(data, fitted, rf, functional, ac);
            estimate.set_variance(report.variance, "plugin");
            diagnostics->insert(diagnostics->end(), report.warnings.begin(),
                                report.warnings.end());
        }
        // kappa_ipw already carries its influence-term variance as "plugin".
    } else if (method == "bootstrap") {
        const BootstrapConfig bc = bootstrap_config_from(config);
        const EstimatorFn fn = [&](const ClusterDataset& replicate, const FitResult& refit) {
            if (estimator == "semi") return kappa_semi(replicate, refit, functional).kappa;
            if (estimator == "imputed") return kappa_imputed(replicate, refit, rf).kappa;
            return kappa_ipw(replicate, refit, rf, *pi_model).kappa;
        };
        const BootstrapResult boot = bootstrap_variance(data, fitted, fn, bc);
        // The bootstrap variance is already Var(kappa_hat); rescale to the
        // normalized convention, then prefer the percentile interval.
        estimate.set_variance(boot.variance * estimate.n_used, "bootstrap");
        estimate.ci_lo = boot.ci_lo;
        estimate.ci_hi = boot.ci_hi;
        diagnostics->insert(diagnostics->end(), boot.warnings.begin(), boot.warnings.end());
    } else if (method != "none") {
        throw_validation("invalid-config",
                         "variance.method must be plugin, bootstrap, or none, got '" + method +
                             "'");
    }
    diagnostics->insert(diagnostics->end(), estimate.warnings.begin(), estimate.warnings.end());
    return estimate;
}

bool needs_pi_model(const RunConfig& config) {
    return config.get_string("summary.estimator") == "ipw";
}

int run_fit(const Options& opts) {
    const RunConfig config = resolve_config(opts);
    const ClusterDataset data = load_data(opts, config);
    const FitResult fitted = fit(data, fit_config_from(config));
    const std::filesystem::path dir = prepare_out_dir(opts);
    write_run_artifacts(dir, config);

    nlohmann::json j;
    j["fit"] = fitted;
    j["config"] = config_json(config);
    j["diagnostics"] = fitted.warnings;
    write_json((dir / "fit.json").string(), j);

    const int grid_points = static_cast<int>(config.get_int("smoother.grid_points"));
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(
        grid_points, fitted.theta.eval_points[0],
        fitted.theta.eval_points[fitted.theta.size() - 1]);
    std::ostringstream csv;
    csv << "z,theta,slope\n";
    for (int i = 0; i < grid.size(); ++i)
        csv << format_full(grid[i]) << ',' << format_full(fitted.theta.value_at(grid[i])) << ','
            << format_full(fitted.theta.slope_at(grid[i])) << "\n";
    write_text(dir / "theta.csv", csv.str());
    std::cerr << "fit: wrote fit.json and theta.csv to " << dir.string() << "\n";
    return 0;
}

int run_summarize(const Options& opts) {
    const RunConfig config = resolve_config(opts);
    const ClusterDataset data = load_data(opts, config);
    const FitResult fitted = obtain_fit(opts, config, data);
    const std::filesystem::path dir = prepare_out_dir(opts);
    write_run_artifacts(dir, config);

    PiModel pi_model;
    if (needs_pi_model(config)) pi_model = fit_pi_model(data);
    std::vector<std::string> diagnostics = fitted.warnings;
    const std::vector<double> grid = threshold_grid(config);
    std::vector<SummaryEstimate> estimates;
    estimates.reserve(grid.size());
    for (double c : grid)
        estimates.push_back(summarize_once(data, fitted, config, c, &pi_model, &diagnostics));

    nlohmann::json j;
    j["summaries"] = estimates;
    j["config"] = config_json(config);
    j["diagnostics"] = diagnostics;
    write_json((dir / "summary.json").string(), j);

    if (!config.is_blank("summary.curve")) {
        std::ostringstream csv;
        csv << "c,kappa,var,lo95,hi95\n";
        for (size_t i = 0; i < grid.size(); ++i) {
            const SummaryEstimate& e = estimates[i];
            csv << format_full(grid[i]) << ',' << format_full(e.kappa) << ',';
            if (e.has_variance())
                // Plot-ready scale: Var(kappa_hat) plus the interval itself.
                csv << format_full(e.variance / std::max(e.n_used, 1)) << ','
                    << format_full(e.ci_lo) << ',' << format_full(e.ci_hi);
            else
                csv << ",,";
            csv << "\n";
        }
        write_text(dir / "curve.csv", csv.str());
    }
    std::cerr << "summarize: wrote summary.json to " << dir.string() << "\n";
    return 0;
}

int run_bootstrap(const Options& opts) {
    const RunConfig config = resolve_config(opts);
    const ClusterDataset data = load_data(opts, config);
    const FitResult fitted = obtain_fit(opts, config, data);
    const std::filesystem::path dir = prepare_out_dir(opts);
    write_run_artifacts(dir, config);

    const std::string name = config.get_string("summary.functional");
    const std::string estimator = config.get_string("summary.estimator");
    const double threshold = config.get_double("summary.threshold");
    const auto fixed = config.get_fixed_columns("summary.fix");
    const Functional functional = make_functional(name, threshold, fixed);
    ResponseFunctional rf;
    PiModel pi_model;
    if (estimator != "semi") {
        rf = make_response_functional(name, threshold);
        rf.fixed_columns = fixed;
        if (estimator == "ipw") pi_model = fit_pi_model(data);
    }
    const EstimatorFn fn = [&](const ClusterDataset& replicate, const FitResult& refit) {
        if (estimator == "semi") return kappa_semi(replicate, refit, functional).kappa;
        if (estimator == "imputed") return kappa_imputed(replicate, refit, rf).kappa;
        if (estimator == "ipw") return kappa_ipw(replicate, refit, rf, pi_model).kappa;
        throw_validation("invalid-config", "summary.estimator must be semi, imputed, or ipw");
    };
    const double point = fn(data, fitted);
    const BootstrapResult boot = bootstrap_variance(data, fitted, fn, bootstrap_config_from(config));

    nlohmann::json j;
    j["estimate"] = point;
    j["bootstrap"] = boot;
    j["config"] = config_json(config);
    nlohmann::json diagnostics = fitted.warnings;
    for (const std::string& w : boot.warnings) diagnostics.push_back(w);
    j["diagnostics"] = diagnostics;
    write_json((dir / "bootstrap.json").string(), j);

    std::ostringstream csv;
    csv << "replicate,estimate\n";
    for (size_t r = 0; r < boot.replicates.size(); ++r)
        csv << (r + 1) << ',' << format_full(boot.replicates[r]) << "\n";
    write_text(dir / "replicates.csv", csv.str());
    std::cerr << "bootstrap: wrote bootstrap.json and replicates.csv to " << dir.string() << "\n";
    return 0;
}

int run_avar(const Options& opts) {
    const RunConfig config = resolve_config(opts);
    const ClusterDataset data = load_data(opts, config);
    const FitResult fitted = obtain_fit(opts, config, data);
    const std::filesystem::path dir = prepare_out_dir(opts);
    write_run_artifacts(dir, config);

    const std::string name = config.get_string("summary.functional");
    const std::string estimator = config.get_string("summary.estimator");
    const double threshold = config.get_double("summary.threshold");
    const auto fixed = config.get_fixed_columns("summary.fix");
    const Functional functional = make_functional(name, threshold, fixed);
    PlugInReport report;
    if (estimator == "semi") {
        report = plug_in_report(data, fitted, functional, avar_config_from(config));
    } else if (estimator == "imputed") {
        ResponseFunctional rf = make_response_functional(name, threshold);
        rf.fixed_columns = fixed;
        report = plug_in_report(data, fitted, rf, functional, avar_config_from(config));
    } else {
        throw_validation("invalid-config",
                         "avar supports estimator semi or imputed, got '" + estimator + "'");
    }

    nlohmann::json j;
    j["plug_in"] = report;
    j["variance_of_estimate"] = report.variance / data.n();
    j["config"] = config_json(config);
    nlohmann::json diagnostics = fitted.warnings;
    for (const std::string& w : report.warnings) diagnostics.push_back(w);
    j["diagnostics"] = diagnostics;
    write_json((dir / "avar.json").string(), j);
    std::cerr << "avar: wrote avar.json to " << dir.string() << "\n";
    return 0;
}

SimDesign design_from(const RunConfig& config) {
    SimDesign design;
    design.n = static_cast<int>(config.get_int("sim.n"));
    design.m = static_cast<int>(config.get_int("sim.m"));
    design.R = static_cast<int>(config.get_int("sim.R"));
    design.p = static_cast<int>(config.get_int("sim.p"));
    const std::vector<double> beta = config.get_double_list("sim.beta");
    design.beta0 = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<int>(beta.size()));
    design.sigma2 = config.get_double("sim.sigma2");
    design.rho = config.get_double("sim.rho");
    design.theta = ThetaRule::named(config.get_string("sim.theta"));
    const std::string missing = config.get_string("sim.missingness");
    if (missing == "none") {
        design.missingness = MissingnessMechanism{};
    } else if (missing == "mcar") {
        design.missingness = MissingnessMechanism::mcar(config.get_double("sim.keep_prob"));
    } else if (missing == "mar") {
        const std::vector<double> zeta = config.get_double_list("sim.zeta");
        design.missingness = MissingnessMechanism::mar_logistic(
            Eigen::Map<const Eigen::VectorXd>(zeta.data(), static_cast<int>(zeta.size())));
    } else {
        throw_validation("invalid-config",
                         "sim.missingness must be none, mcar, or mar, got '" + missing + "'");
    }
    return design;
}

int run_simulate(const Options& opts) {
    const RunConfig config = resolve_config(opts);
    const SimDesign design = design_from(config);
    const std::filesystem::path dir = prepare_out_dir(opts);
    write_run_artifacts(dir, config);

    const std::string name = config.get_string("summary.functional");
    const std::string estimator = config.get_string("summary.estimator");
    const auto fixed = config.get_fixed_columns("summary.fix");
    const std::vector<double> grid = threshold_grid(config);

    PipelineSpec spec;
    for (int c = 0; c < design.p; ++c) spec.names.push_back("beta" + std::to_string(c + 1));
    spec.names.push_back("sigma2");
    spec.names.push_back("rho");
    std::vector<Functional> functionals;
    std::vector<ResponseFunctional> response_functionals;
    for (double c : grid) {
        std::ostringstream label;
        label << "kappa(c=" << c << ")";
        spec.names.push_back(label.str());
        functionals.push_back(make_functional(name, c, fixed));
        ResponseFunctional rf = make_response_functional(name, c);
        rf.fixed_columns = fixed;
        response_functionals.push_back(rf);
    }

    std::vector<std::string> oracle_notes;
    spec.oracle.resize(static_cast<int>(spec.names.size()));
    spec.oracle.head(design.p) = design.beta0;
    spec.oracle[design.p] = design.sigma2;
    spec.oracle[design.p + 1] = design.rho;
    for (size_t i = 0; i < grid.size(); ++i) {
        const OracleResult oracle = true_kappa_oracle(design, functionals[i]);
        spec.oracle[design.p + 2 + static_cast<int>(i)] = oracle.value;
        oracle_notes.insert(oracle_notes.end(), oracle.warnings.begin(), oracle.warnings.end());
    }

    spec.compute = [&](const ClusterDataset& data, const FitResult& fitted, int) {
        ReplicateOutput out;
        out.values.resize(static_cast<int>(spec.names.size()));
        out.values.head(design.p) = fitted.params.beta;
        out.values[design.p] = fitted.params.sigma2;
        out.values[design.p + 1] = fitted.params.rho;
        PiModel pi_model;
        if (estimator == "ipw") pi_model = fit_pi_model(data);
        for (size_t i = 0; i < grid.size(); ++i) {
            double kappa = 0.0;
            if (estimator == "semi") {
                kappa = kappa_semi(data, fitted, functionals[i]).kappa;
            } else if (estimator == "imputed") {
                kappa = kappa_imputed(data, fitted, response_functionals[i]).kappa;
            } else if (estimator == "ipw") {
                kappa = kappa_ipw(data, fitted, response_functionals[i], pi_model).kappa;
            } else {
                throw_validation("invalid-config",
                                 "summary.estimator must be semi, imputed, or ipw");
            }
            out.values[design.p + 2 + static_cast<int>(i)] = kappa;
        }
        return out;
    };

    ExperimentConfig ec;
    ec.replicates = static_cast<int>(config.get_int("sim.replicates"));
    ec.seed = static_cast<std::uint64_t>(config.get_int("seed"));
    ec.threads = static_cast<int>(config.get_int("threads"));
    ec.fixed_h = config.get_bool("smoother.auto") ? 0.0 : config.get_double("smoother.h");
    ec.fit_config = fit_config_from(config);
    ec.fit_config.h = 0.0;  // run_experiment applies fixed_h itself
    const ExperimentReport report = run_experiment(design, spec, ec);

    nlohmann::json j;
    j["experiment"] = report;
    j["config"] = config_json(config);
    nlohmann::json diagnostics = oracle_notes;
    for (const std::string& w : report.warnings) diagnostics.push_back(w);
    j["diagnostics"] = diagnostics;
    write_json((dir / "experiment.json").string(), j);

    std::ostringstream csv;
    csv << "replicate";
    for (const std::string& label : spec.names) csv << ',' << label;
    csv << "\n";
    for (int r = 0; r < report.values.rows(); ++r) {
        csv << (r + 1);
        for (int c = 0; c < report.values.cols(); ++c)
            csv << ',' << format_full(report.values(r, c));
        csv << "\n";
    }
    write_text(dir / "replicates.csv", csv.str());
    std::cerr << "simulate: wrote experiment.json and replicates.csv to " << dir.string() << "\n";
    return 0;
}

void add_common(CLI::App* cmd, Options& opts, bool with_data, bool with_fit) {
    cmd->add_option("--config", opts.config_path, "Run configuration file (key = value lines)");
    if (with_data)
        cmd->add_option("--data", opts.data_path, "Dataset CSV")->required()->check(
            CLI::ExistingFile);
    if (with_fit)
        cmd->add_option("--fit", opts.fit_path,
                        "Reuse a serialized fit.json instead of refitting")
            ->check(CLI::ExistingFile);
    cmd->add_option("--out-dir", opts.out_dir, "Output directory (created if needed)");
    cmd->add_option("--seed", opts.seed, "Random seed");
    cmd->add_option("--threads", opts.threads, "Worker thread cap");
    cmd->add_option("--bandwidth", opts.bandwidth, "Fixed smoothing bandwidth (skips selection)");
    cmd->add_option("--replicates", opts.replicates, "Bootstrap/simulation replicate count");
}

void add_summary_flags(CLI::App* cmd, Options& opts) {
    cmd->add_option("--functional", opts.functional,
                    "survival | indicator-above-c | mean | second-moment");
    cmd->add_option("--threshold", opts.threshold, "Threshold c for threshold functionals");
    cmd->add_option("--curve", opts.curve, "Comma-separated threshold grid for curve output");
    cmd->add_option("--estimator", opts.estimator, "semi | imputed | ipw");
    cmd->add_option("--fix", opts.fixes, "Fix a covariate column, e.g. x3=6 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Partially linear repeated-measures estimation and population summaries"};
    app.require_subcommand(1);
    Options opts;

    CLI::App* cmd_fit = app.add_subcommand("fit", "Fit the model; write fit.json and theta.csv");
    add_common(cmd_fit, opts, true, false);

    CLI::App* cmd_summarize =
        app.add_subcommand("summarize", "Estimate population summaries; write summary.json");
    add_common(cmd_summarize, opts, true, true);
    add_summary_flags(cmd_summarize, opts);

    CLI::App* cmd_bootstrap =
        app.add_subcommand("bootstrap", "Bootstrap a summary; write bootstrap.json");
    add_common(cmd_bootstrap, opts, true, true);
    add_summary_flags(cmd_bootstrap, opts);

    CLI::App* cmd_avar =
        app.add_subcommand("avar", "Plug-in asymptotic variance report; write avar.json");
    add_common(cmd_avar, opts, true, true);
    add_summary_flags(cmd_avar, opts);

    CLI::App* cmd_simulate =
        app.add_subcommand("simulate", "Run a simulation experiment; write experiment.json");
    add_common(cmd_simulate, opts, false, false);
    add_summary_flags(cmd_simulate, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (cmd_fit->parsed()) return run_fit(opts);
        if (cmd_summarize->parsed()) return run_summarize(opts);
        if (cmd_bootstrap->parsed()) return run_bootstrap(opts);
        if (cmd_avar->parsed()) return run_avar(opts);
        if (cmd_simulate->parsed()) return run_simulate(opts);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
        return e.kind() == ErrorKind::validation ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
