#pragma once

#include "volqml/config.hpp"
#include "volqml/errors.hpp"
#include "volqml/filter.hpp"
#include "volqml/io.hpp"
#include "volqml/likelihood.hpp"
#include "volqml/mc_experiments.hpp"
#include "volqml/qmle.hpp"
#include "volqml/sre.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace volqml {

/// Stable process exit codes.
enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitDivergence = 3, kExitFitFailure = 4 };

namespace detail {

inline json provenance_json(const RunConfig& c) {
    const auto p = c.provenance();
    return {{"tool", "volqml"}, {"version", std::string(kVersion)}, {"config_hash", p.config_hash}, {"seed", p.seed}};
}

/// Non-finite reals become null so the document stays valid JSON.
inline json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json named(const ModelSpec& m, const Eigen::VectorXd& v) {
    json o = json::object();
    const auto names = m.coefficient_names();
    for (std::size_t k = 0; k < names.size(); ++k) o[names[k]] = real(v[static_cast<Eigen::Index>(k)]);
    return o;
}

inline json matrix(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(real(m(r, c)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json model_json(const ModelSpec& m) {
    return {{"family", std::string(to_string(m.family))}, {"p", m.p}, {"q", m.q}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
    return std::filesystem::path(c.output_dir) / name;
}

inline json contraction_json(const ContractionDiagnostic& d) {
    return {{"estimate", real(d.log_lambda_mean)},
            {"std_error", real(d.std_error)},
            {"r", d.r},
            {"n", d.n},
            {"method", d.method},
            {"series_terms", d.series_terms},
            {"tail_bound", real(d.tail_bound)},
            {"degenerate_fraction", real(d.degenerate_fraction)},
            {"verdict", d.contractive() ? "contractive" : "not established"}};
}

}  // namespace detail

/// path.csv with columns t, X, sigma2, Z (t = 1..n, after burn-in).
inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
    const auto theta = c.theta_vector();
    const auto& s = *c.simulate;
    const auto path = simulate_stationary(theta, c.innovation, RngStream(c.seed, 0), s.n, s.options);
    std::vector<std::vector<double>> rows;
    rows.reserve(path.size());
    for (std::size_t t = 0; t < path.size(); ++t)
        rows.push_back({static_cast<double>(t + 1), path.x[t], path.sigma2[t], path.z[t]});
    const auto file = detail::out_path(c, s.output);
    write_csv(file, c.provenance(), {"t", "X", "sigma2", "Z"}, rows);

    out << "wrote " << file.string() << " (" << path.size() << " rows)\n";
    out << "initial variance " << format_real(path.initial_variance) << ", burn-in " << path.burn_in << "\n";
    if (s.options.certify && s.options.burn_in > 0)
        out << "burn-in certificate gap " << format_real(path.certificate_gap)
            << (path.certificate_ok ? " (ok)" : " (NOT below tolerance)") << "\n";
    if (!c.model.is_egarch()) out << "weak stationarity margin " << format_real(weak_stationarity_margin(theta, c.innovation)) << "\n";
    if (path.size() >= 2) out << "sample variance of X " << format_real(sample_variance(path.x)) << "\n";
    return kExitOk;
}

/**
 * filter.csv with columns t, X, h, dh.<coef> (order >= 1) and d2h.<a>.<b>
 * (order 2). The first obs_lags rows of the input are consumed as presample.
 * egarch input is refused when the filter is not contractive on the data.
 */
inline int cmd_filter(const RunConfig& c, std::ostream& out) {
    const auto theta = c.theta_vector();
    const auto& f = *c.filter;
    const auto data = read_observations(f.input, f.column);
    const std::size_t lags = c.model.obs_lags();
    if (data.size() < lags)
        throw InputError(f.input + ": needs at least " + std::to_string(lags) + " presample rows, found " +
                         std::to_string(data.size()));
    if (c.model.is_egarch()) {
        const auto d = estimate_contraction(theta, std::span<const double>(data).subspan(lags), 1);
        if (!d.contractive())
            throw InputError("egarch filter is not invertible at theta (contraction estimate " +
                             format_real(d.log_lambda_mean) + "); refusing to filter");
    }
    const auto fo = run_filter(theta, data, f.config, f.order);
    const auto names = c.model.coefficient_names();
    std::vector<std::string> cols{"t", "X", "h"};
    if (f.order >= 1) detail::append(cols, detail::prefixed("dh.", names));
    if (f.order >= 2)
        for (const auto& a : names)
            for (const auto& b : names) cols.push_back("d2h." + a + "." + b);
    const auto d = static_cast<Eigen::Index>(names.size());
    std::vector<std::vector<double>> rows;
    rows.reserve(fo.size());
    for (std::size_t t = 0; t < fo.size(); ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        std::vector<double> row{static_cast<double>(lags + t + 1), data[lags + t], fo.h[t]};
        if (f.order >= 1)
            for (Eigen::Index a = 0; a < d; ++a) row.push_back(fo.dh(ti, a));
        if (f.order >= 2)
            for (Eigen::Index k = 0; k < d * d; ++k) row.push_back(fo.d2h(ti, k));
        rows.push_back(std::move(row));
    }
    const auto file = detail::out_path(c, f.output);
    write_csv(file, c.provenance(), cols, rows);
    out << "wrote " << file.string() << " (" << rows.size() << " rows, order " << f.order << ")\n";
    return kExitOk;
}

/// estimate.json, estimate.csv (one flat row) and residuals.csv.
inline int cmd_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const auto& f = *c.fit;
    const auto data = read_observations(f.input, f.column);
    const std::size_t lags = c.model.obs_lags();
    if (data.size() < lags) throw InputError(f.input + ": fewer rows than presample lags");
    const auto region = f.region ? *f.region : CompactRegion::default_for(c.model, sample_variance(data));
    EstimateReport rep;
    try {
        rep = fit(c.model, data, region, f.init, f.options);
    } catch (const FitFailure& e) {
        err << "fit failed: " << e.what() << "\n";
        throw;
    }
    const auto names = c.model.coefficient_names();
    const auto prov = c.provenance();

    json j;
    j["provenance"] = detail::provenance_json(c);
    j["model"] = detail::model_json(c.model);
    j["n"] = rep.n;
    j["loglik"] = detail::real(rep.loglik);
    j["converged"] = rep.converged;
    j["iterations"] = rep.iterations;
    j["projected_gradient"] = detail::real(rep.projected_gradient);
    j["theta_hat"] = detail::named(c.model, rep.theta_hat);
    j["covariance_available"] = rep.covariance_available;
    j["std_errors_reliable"] = rep.std_errors_reliable;
    if (rep.covariance_available) {
        j["se"] = detail::named(c.model, rep.covariance.std_errors);
        j["kurt_hat"] = detail::real(rep.covariance.kurt_hat);
        j["v0_hat"] = detail::matrix(rep.covariance.v0_hat);
        j["vcov"] = detail::matrix(rep.covariance.vcov);
    } else {
        j["se"] = nullptr;
    }
    json active = json::array();
    for (auto k : rep.active_constraints) active.push_back(names[k]);
    j["active_constraints"] = active;
    j["warnings"] = rep.warnings;
    j["contraction"] = detail::contraction_json(rep.contraction);
    json starts = json::array();
    for (const auto& s : rep.starts)
        starts.push_back({{"start", detail::named(c.model, s.start)},
                          {"end", detail::named(c.model, s.end)},
                          {"loglik_start", detail::real(s.loglik_start)},
                          {"loglik_end", detail::real(s.loglik_end)},
                          {"projected_gradient", detail::real(s.projected_gradient)},
                          {"iterations", s.iterations},
                          {"converged", s.converged},
                          {"error", s.error}});
    j["starts"] = starts;
    write_text(detail::out_path(c, "estimate.json"), detail::dump(j));

    std::vector<std::string> cols = detail::prefixed("theta_hat.", names);
    detail::append(cols, detail::prefixed("se.", names));
    detail::append(cols, {"loglik", "converged", "n"});
    std::vector<double> row(rep.theta_hat.data(), rep.theta_hat.data() + rep.theta_hat.size());
    for (Eigen::Index k = 0; k < rep.theta_hat.size(); ++k)
        row.push_back(rep.covariance_available ? rep.covariance.std_errors[k] : detail::kNaN);
    row.push_back(rep.loglik);
    row.push_back(rep.converged ? 1.0 : 0.0);
    row.push_back(static_cast<double>(rep.n));
    write_csv(detail::out_path(c, "estimate.csv"), prov, cols, {row});

    const ThetaVector theta_hat(c.model, rep.theta_hat);
    const auto fo = run_filter(theta_hat, data, f.options.filter, 0);
    std::vector<std::vector<double>> rrows;
    rrows.reserve(fo.size());
    for (std::size_t t = 0; t < fo.size(); ++t)
        rrows.push_back({static_cast<double>(lags + t + 1), data[lags + t], fo.h[t], rep.residuals[t]});
    write_csv(detail::out_path(c, "residuals.csv"), prov, {"t", "X", "h", "Zhat"}, rrows);

    out << "n = " << rep.n << ", loglik = " << format_real(rep.loglik) << (rep.converged ? "" : " (not converged)")
        << "\n";
    for (std::size_t k = 0; k < names.size(); ++k) {
        char line[128];
        const auto ki = static_cast<Eigen::Index>(k);
        if (rep.covariance_available)
            std::snprintf(line, sizeof line, "  %-8s %14.8g  se %12.6g\n", names[k].c_str(), rep.theta_hat[ki],
                          rep.covariance.std_errors[ki]);
        else
            std::snprintf(line, sizeof line, "  %-8s %14.8g\n", names[k].c_str(), rep.theta_hat[ki]);
        out << line;
    }
    for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
    return kExitOk;
}

/// Stationarity, invertibility, Lyapunov and spectral-radius report: diagnose.json plus a table on `out`.
inline int cmd_diagnose(const RunConfig& c, std::ostream& out) {
    const auto theta = c.theta_vector();
    const auto& d = *c.diagnose;
    json j;
    j["provenance"] = detail::provenance_json(c);
    j["model"] = detail::model_json(c.model);
    j["theta"] = detail::named(c.model, theta.coefficients());
    j["innovation"] = {{"family", std::string(to_string(c.innovation.family))}, {"nu", c.innovation.nu}};
    std::vector<std::array<std::string, 4>> table;
    const auto verdict = [](bool ok, const char* yes) { return ok ? std::string(yes) : std::string("not established"); };

    if (c.model.is_egarch()) {
        const bool stationary = theta[1] < 1.0;
        j["stationarity"] = {{"method", "log-volatility AR(1)"},
                             {"estimate", theta[1]},
                             {"verdict", stationary ? "stationary" : "not established"}};
        table.push_back({"stationarity", format_real(theta[1]), "-", verdict(stationary, "stationary")});
        const auto inv = egarch_invertibility_check(theta, c.innovation, RngStream(c.seed, 1), d.invertibility_samples);
        j["invertibility"] = detail::contraction_json(inv);
        table.push_back({"invertibility", format_real(inv.log_lambda_mean), format_real(inv.std_error),
                         verdict(inv.contractive(), "invertible")});
    } else {
        const double margin = weak_stationarity_margin(theta, c.innovation);
        j["weak_stationarity_margin"] = margin;
        table.push_back({"weak margin", format_real(margin), "-", margin > 0.0 ? "finite variance" : "infinite variance"});
        const auto ly = lyapunov_agarch(theta, c.innovation, RngStream(c.seed, 0), d.n_products, d.n_replications, d.norm);
        j["lyapunov"] = {{"estimate", detail::real(ly.rho_hat)},
                         {"std_error", detail::real(ly.std_error)},
                         {"n", ly.n_products},
                         {"n_replications", ly.n_replications},
                         {"norm", std::string(to_string(ly.norm))},
                         {"verdict", ly.stationary() ? "stationary" : "not established"}};
        table.push_back({"lyapunov", format_real(ly.rho_hat), format_real(ly.std_error), verdict(ly.stationary(), "stationary")});
        const auto betas = theta.betas();
        const auto sr = spectral_radius_C(betas);
        j["spectral_radius"] = {{"estimate", sr.radius},
                                {"bound", sr.bound},
                                {"verdict", sr.radius < 1.0 ? "contractive" : "not established"}};
        table.push_back({"spectral radius", format_real(sr.radius), "-", "bound " + format_real(sr.bound)});
        const auto best = scan_contraction(theta, {}, d.r_max);
        json per_r = json::array();
        for (std::size_t r = 1; r <= d.r_max; r *= 2) {
            const auto e = estimate_contraction(theta, {}, r);
            per_r.push_back({{"r", r}, {"estimate", detail::real(e.log_lambda_mean)}});
        }
        j["invertibility"] = detail::contraction_json(best);
        j["invertibility"]["scan"] = per_r;
        j["invertibility"]["r_choice"] = "heuristic: best of r in {1, 2, 4, ..., r_max}";
        table.push_back({"invertibility", format_real(best.log_lambda_mean), "r=" + std::to_string(best.r),
                         verdict(best.contractive(), "invertible")});
    }
    write_text(detail::out_path(c, "diagnose.json"), detail::dump(j));

    char line[160];
    std::snprintf(line, sizeof line, "%-16s %-24s %-24s %s\n", "check", "estimate", "std_error", "verdict");
    out << line;
    for (const auto& r : table) {
        std::snprintf(line, sizeof line, "%-16s %-24s %-24s %s\n", r[0].c_str(), r[1].c_str(), r[2].c_str(), r[3].c_str());
        out << line;
    }
    return kExitOk;
}

/// rows.csv, aggregate.csv, gaps.csv (decay), plan.json and summary.json under output_dir.
inline int cmd_mc(const RunConfig& c, std::ostream& out) {
    const auto& plan = *c.mc;
    const auto res = run_experiment(plan);
    const auto prov = c.provenance();
    write_table(detail::out_path(c, "rows.csv"), prov, res.rows);
    write_table(detail::out_path(c, "aggregate.csv"), prov, res.aggregate);
    if (plan.kind == ExperimentKind::decay) write_table(detail::out_path(c, "gaps.csv"), prov, res.gaps);

    json pj = c.effective;
    pj["provenance"] = detail::provenance_json(c);
    write_text(detail::out_path(c, "plan.json"), detail::dump(pj));

    json sj;
    sj["provenance"] = detail::provenance_json(c);
    sj["kind"] = std::string(to_string(plan.kind));
    sj["valid"] = res.valid;
    sj["attempted"] = res.attempted;
    sj["failed"] = res.failed;
    sj["failures"] = res.failures;
    json checks = json::array();
    for (const auto& ch : res.checks) checks.push_back({{"name", ch.name}, {"passed", ch.passed}, {"detail", ch.detail}});
    sj["checks"] = checks;
    write_text(detail::out_path(c, "summary.json"), detail::dump(sj));

    out << to_string(plan.kind) << ": " << res.rows.rows.size() << " rows, " << res.failed << " failed of "
        << res.attempted << (res.valid ? "" : " (INVALID: more than 5% failed)") << "\n";
    for (const auto& ch : res.checks) out << (ch.passed ? "  ok    " : "  FAIL  ") << ch.name << ": " << ch.detail << "\n";
    for (const auto& f : res.failures) out << "  failure " << f << "\n";
    return res.valid ? kExitOk : kExitFitFailure;
}

/// Dispatches to the command and maps exceptions to exit codes.
inline int run_command(const RunConfig& c, std::ostream& out, std::ostream& err) {
    try {
        std::filesystem::create_directories(c.output_dir);
        if (c.command == "simulate") return cmd_simulate(c, out);
        if (c.command == "filter") return cmd_filter(c, out);
        if (c.command == "fit") return cmd_fit(c, out, err);
        if (c.command == "diagnose") return cmd_diagnose(c, out);
        if (c.command == "mc") return cmd_mc(c, out);
        err << "error: unknown command '" << c.command << "'\n";
        return kExitInput;
    } catch (const FitFailure&) {
        return kExitFitFailure;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

}  // namespace volqml
