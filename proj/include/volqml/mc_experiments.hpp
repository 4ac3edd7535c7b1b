#pragma once

#include "volqml/errors.hpp"
#include "volqml/filter.hpp"
#include "volqml/innovations.hpp"
#include "volqml/models.hpp"
#include "volqml/qmle.hpp"
#include "volqml/rng.hpp"
#include "volqml/sre.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace volqml {

enum class ExperimentKind { consistency, coverage, decay, region_scan, equivalence };

inline std::string_view to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::consistency: return "consistency";
        case ExperimentKind::coverage: return "coverage";
        case ExperimentKind::decay: return "decay";
        case ExperimentKind::region_scan: return "region-scan";
        case ExperimentKind::equivalence: return "equivalence";
    }
    return "?";
}

inline ExperimentKind parse_experiment_kind(std::string_view s) {
    if (s == "consistency") return ExperimentKind::consistency;
    if (s == "coverage") return ExperimentKind::coverage;
    if (s == "decay") return ExperimentKind::decay;
    if (s == "region-scan" || s == "region_scan") return ExperimentKind::region_scan;
    if (s == "equivalence") return ExperimentKind::equivalence;
    throw ConstraintError("unknown experiment kind '" + std::string(s) + "'");
}

/// One axis of a region scan, addressed by coefficient name (e.g. "alpha1").
struct GridAxis {
    std::string name;
    std::vector<double> values;
};

struct ExperimentPlan {
    ExperimentKind kind = ExperimentKind::consistency;
    ModelSpec model = ModelSpec::garch(1, 1);
    Eigen::VectorXd theta_true;
    InnovationSpec innovation;
    std::vector<std::size_t> sizes;
    std::size_t replications = 1;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    std::size_t threads = 1;
    std::size_t burn_in = 1000;
    FitOptions fit;
    /// Fitting region; default_for(model, sample variance) per replication when absent.
    std::optional<CompactRegion> region;
    double coverage_level = 0.95;

    /// decay: filter seed (variance units); 10x the stationary level when absent.
    std::optional<double> filter_initial_variance;
    std::size_t gap_table_steps = 200;
    double decay_threshold = 1e-12;

    /// region-scan
    GridAxis x_axis;
    GridAxis y_axis;
    std::size_t lyapunov_products = 2000;
    std::size_t invertibility_samples = 20000;

    /// equivalence: starting variance of the second series; the stationary level when absent.
    std::optional<double> alternative_initial_variance;
    /// Bound on the largest-n gap; 10 * fit.step_tol when absent.
    std::optional<double> equivalence_tolerance;

    void validate() const {
        model.validate();
        innovation.validate();
        if (replications < 1) throw ConstraintError("replications must be >= 1");
        if (kind != ExperimentKind::region_scan) {
            if (sizes.empty()) throw ConstraintError("sample sizes must not be empty");
            for (std::size_t i = 0; i < sizes.size(); ++i) {
                if (sizes[i] < 1) throw ConstraintError("sample sizes must be positive");
                if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConstraintError("sample sizes must be strictly increasing");
            }
        }
        if (auto why = theta_violation(model, theta_true); !why.empty()) throw ConstraintError("theta_true: " + why);
        if (kind == ExperimentKind::coverage && !(coverage_level > 0.0 && coverage_level < 1.0))
            throw ConstraintError("coverage_level must lie in (0, 1)");
        if (kind == ExperimentKind::region_scan) {
            const auto names = model.coefficient_names();
            for (const auto* ax : {&x_axis, &y_axis}) {
                if (std::find(names.begin(), names.end(), ax->name) == names.end())
                    throw ConstraintError("grid axis '" + ax->name + "' is not a coefficient of the model");
                if (ax->values.empty()) throw ConstraintError("grid axis '" + ax->name + "' has no values");
            }
            if (x_axis.name == y_axis.name) throw ConstraintError("grid axes must differ");
        }
        if (region) region->validate(model);
    }
};

/// Numeric table; NaN marks missing cells (e.g. estimates of failed fits).
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] std::size_t column(std::string_view name) const {
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (columns[c] == name) return c;
        throw ConstraintError("no column '" + std::string(name) + "'");
    }
    [[nodiscard]] double at(std::size_t row, std::string_view name) const { return rows.at(row)[column(name)]; }
};

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ExperimentResult {
    ExperimentKind kind = ExperimentKind::consistency;
    Table rows;
    Table aggregate;
    /// decay only: per-t gaps (n, rep, t, gap) for the first gap_table_steps steps.
    Table gaps;
    std::vector<std::string> failures;
    std::size_t attempted = 0;
    std::size_t failed = 0;
    /// False when more than 5% of the fits failed.
    bool valid = true;
    std::vector<Check> checks;

    [[nodiscard]] bool all_checks_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Runs body(i) for i in [0, count) on up to `threads` workers; results must be written by index.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) body(i);
        });
    for (auto& t : pool) t.join();
}

/// Stream for replication `rep` at size index `size_index`; independent of execution order.
inline RngStream replication_stream(std::uint64_t seed, std::size_t size_index, std::size_t rep) {
    return RngStream(seed, size_index).split(rep);
}

inline SimulationOptions simulation_options(const ExperimentPlan& plan) {
    SimulationOptions o;
    o.burn_in = plan.burn_in;
    return o;
}

inline void require_stationary(const ExperimentPlan& plan, const ThetaVector& theta) {
    if (theta.model().is_egarch()) return;  // |beta| < 1 already makes the log-volatility AR(1) stationary
    if (weak_stationarity_margin(theta, plan.innovation) > 0.0) return;
    const auto ly = lyapunov_agarch(theta, plan.innovation, RngStream(plan.seed, ~std::uint64_t{0}), 2000, 20);
    if (!ly.stationary())
        throw ConstraintError("theta_true fails the stationarity diagnostic (Lyapunov estimate " +
                              std::to_string(ly.rho_hat) + ")");
}

inline void require_identifiable(const ExperimentPlan& plan) {
    if (!plan.innovation.identifiable())
        throw ConstraintError("innovation law is concentrated on two points; the parameter is not identifiable");
}

inline FitOptions fit_options(const ExperimentPlan& plan) {
    FitOptions o = plan.fit;
    o.threads = 1;
    return o;
}

inline CompactRegion fit_region(const ExperimentPlan& plan, std::span<const double> data) {
    return plan.region ? *plan.region : CompactRegion::default_for(plan.model, sample_variance(data));
}

inline std::vector<std::string> prefixed(std::string_view prefix, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (const auto& n : names) out.push_back(std::string(prefix) + n);
    return out;
}

inline void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

inline double sample_var(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
}

/// Two-sided standard normal quantile at probability 1 - (1 - level) / 2 (Acklam's rational approximation).
inline double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    const double lo = 0.02425;
    double x = 0.0;
    if (p < lo) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - lo) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // one Halley step against erfc brings the error to machine precision
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

struct RepOutcome {
    std::vector<double> row;
    std::string error;
    bool ok = false;
};

/// Runs one task per (size index, replication) and collects the rows in (size, rep) order.
inline void run_replications(const ExperimentPlan& plan, ExperimentResult& res,
                             const std::function<RepOutcome(std::size_t, std::size_t)>& task) {
    const std::size_t total = plan.sizes.size() * plan.replications;
    std::vector<RepOutcome> out(total);
    parallel_for(total, plan.threads, [&](std::size_t k) {
        const std::size_t i = k / plan.replications;
        const std::size_t r = k % plan.replications;
        try {
            out[k] = task(i, r);
        } catch (const std::exception& e) {
            out[k].ok = false;
            out[k].error = e.what();
        }
    });
    res.attempted = total;
    for (std::size_t k = 0; k < total; ++k) {
        const std::size_t i = k / plan.replications;
        const std::size_t r = k % plan.replications;
        auto& o = out[k];
        if (o.row.size() != res.rows.columns.size()) {
            o.row.assign(res.rows.columns.size(), kNaN);
            o.row[0] = static_cast<double>(plan.sizes[i]);
            o.row[1] = static_cast<double>(r);
            o.row[2] = 0.0;
        }
        if (!o.ok) {
            ++res.failed;
            res.failures.push_back("n=" + std::to_string(plan.sizes[i]) + " rep=" + std::to_string(r) + ": " +
                                   (o.error.empty() ? "failed" : o.error));
        }
        res.rows.rows.push_back(std::move(o.row));
    }
    res.valid = static_cast<double>(res.failed) <= 0.05 * static_cast<double>(res.attempted);
    if (!res.valid)
        res.checks.push_back({"failure-rate", false,
                              std::to_string(res.failed) + " of " + std::to_string(res.attempted) + " fits failed"});
}

inline std::vector<std::size_t> rows_for(const Table& rows, double n, bool ok_only) {
    std::vector<std::size_t> out;
    const std::size_t cn = rows.column("n");
    const std::size_t cok = rows.column("ok");
    for (std::size_t r = 0; r < rows.rows.size(); ++r)
        if (rows.rows[r][cn] == n && (!ok_only || rows.rows[r][cok] == 1.0)) out.push_back(r);
    return out;
}

inline std::vector<double> distinct_sizes(const Table& rows) {
    std::vector<double> out;
    const std::size_t cn = rows.column("n");
    for (const auto& r : rows.rows)
        if (std::find(out.begin(), out.end(), r[cn]) == out.end()) out.push_back(r[cn]);
    return out;
}

}  // namespace detail

/**
 * Aggregate table recomputed from per-replication rows. Rows with ok = 0 are
 * counted in n_failed and excluded from every statistic.
 */
inline Table aggregate_rows(const ExperimentPlan& plan, const Table& rows) {
    using detail::kNaN;
    const auto names = plan.model.coefficient_names();
    const auto d = names.size();
    Table agg;
    if (plan.kind == ExperimentKind::region_scan) {
        agg.columns = {"y", "points", "admissible", "contractive"};
        const std::size_t cy = rows.column("y");
        const std::size_t ca = rows.column("admissible");
        const std::size_t cv = rows.column("verdict");
        for (double y : plan.y_axis.values) {
            double pts = 0, adm = 0, con = 0;
            for (const auto& r : rows.rows) {
                if (r[cy] != y) continue;
                ++pts;
                adm += r[ca];
                con += r[cv] == 1.0 ? 1.0 : 0.0;
            }
            agg.rows.push_back({y, pts, adm, con});
        }
        return agg;
    }

    agg.columns = {"n", "n_ok", "n_failed"};
    switch (plan.kind) {
        case ExperimentKind::consistency:
            detail::append(agg.columns, detail::prefixed("bias.", names));
            detail::append(agg.columns, detail::prefixed("rmse.", names));
            break;
        case ExperimentKind::coverage:
            detail::append(agg.columns, detail::prefixed("bias.", names));
            detail::append(agg.columns, detail::prefixed("rmse.", names));
            detail::append(agg.columns, detail::prefixed("coverage.", names));
            detail::append(agg.columns, detail::prefixed("z_mean.", names));
            detail::append(agg.columns, detail::prefixed("z_var.", names));
            break;
        case ExperimentKind::decay:
            detail::append(agg.columns, {"rate_mean", "rate_min", "rate_max", "expected_rate", "gap_final_max"});
            break;
        case ExperimentKind::equivalence:
            detail::append(agg.columns, detail::prefixed("max_gap.", names));
            agg.columns.emplace_back("max_gap");
            break;
        case ExperimentKind::region_scan: break;
    }

    for (double n : detail::distinct_sizes(rows)) {
        const auto all = detail::rows_for(rows, n, false);
        const auto ok = detail::rows_for(rows, n, true);
        std::vector<double> a{n, static_cast<double>(ok.size()), static_cast<double>(all.size() - ok.size())};
        const auto col = [&](std::string_view name) {
            std::vector<double> v;
            const std::size_t c = rows.column(name);
            for (auto r : ok) v.push_back(rows.rows[r][c]);
            return v;
        };
        switch (plan.kind) {
            case ExperimentKind::consistency:
            case ExperimentKind::coverage: {
                std::vector<double> bias(d), rmse(d);
                for (std::size_t k = 0; k < d; ++k) {
                    const auto v = col("theta_hat." + names[k]);
                    const double t0 = plan.theta_true[static_cast<Eigen::Index>(k)];
                    double b = 0.0, s = 0.0;
                    for (double x : v) {
                        b += x - t0;
                        s += (x - t0) * (x - t0);
                    }
                    bias[k] = v.empty() ? kNaN : b / static_cast<double>(v.size());
                    rmse[k] = v.empty() ? kNaN : std::sqrt(s / static_cast<double>(v.size()));
                }
                a.insert(a.end(), bias.begin(), bias.end());
                a.insert(a.end(), rmse.begin(), rmse.end());
                if (plan.kind == ExperimentKind::coverage) {
                    for (const auto& nm : names) a.push_back(detail::mean(col("covered." + nm)));
                    for (const auto& nm : names) a.push_back(detail::mean(col("z." + nm)));
                    for (const auto& nm : names) {
                        const auto v = col("z." + nm);
                        a.push_back(v.size() >= 2 ? detail::sample_var(v) : kNaN);
                    }
                }
                break;
            }
            case ExperimentKind::decay: {
                const auto rates = col("rate");
                double lo = kNaN, hi = kNaN;
                if (!rates.empty()) {
                    lo = *std::min_element(rates.begin(), rates.end());
                    hi = *std::max_element(rates.begin(), rates.end());
                }
                const auto fin = col("gap_final");
                a.push_back(detail::mean(rates));
                a.push_back(lo);
                a.push_back(hi);
                a.push_back(!plan.model.is_egarch() && plan.model.q == 1
                                ? std::log(plan.theta_true[static_cast<Eigen::Index>(plan.model.beta_index(1))])
                                : kNaN);
                a.push_back(fin.empty() ? kNaN : *std::max_element(fin.begin(), fin.end()));
                break;
            }
            case ExperimentKind::equivalence: {
                double overall = ok.empty() ? kNaN : 0.0;
                for (const auto& nm : names) {
                    const auto v = col("gap." + nm);
                    const double m = v.empty() ? kNaN : *std::max_element(v.begin(), v.end());
                    a.push_back(m);
                    if (!v.empty()) overall = std::max(overall, m);
                }
                a.push_back(overall);
                break;
            }
            case ExperimentKind::region_scan: break;
        }
        agg.rows.push_back(std::move(a));
    }
    return agg;
}

/**
 * Fits every replication at every sample size and tracks per-coordinate bias
 * and RMSE. The check requires RMSE(n_{k+1}) < 1.05 RMSE(n_k) for every
 * coordinate and adjacent pair of sizes.
 */
inline ExperimentResult run_consistency(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.kind != ExperimentKind::consistency) throw ConstraintError("plan kind is not consistency");
    const ThetaVector theta(plan.model, plan.theta_true);
    detail::require_stationary(plan, theta);
    detail::require_identifiable(plan);
    const auto names = plan.model.coefficient_names();

    ExperimentResult res;
    res.kind = plan.kind;
    res.rows.columns = {"n", "rep", "ok", "converged", "loglik"};
    detail::append(res.rows.columns, detail::prefixed("theta_hat.", names));

    const auto opts = detail::fit_options(plan);
    detail::run_replications(plan, res, [&](std::size_t i, std::size_t r) {
        const std::size_t n = plan.sizes[i];
        const auto path = simulate_stationary(theta, plan.innovation, detail::replication_stream(plan.seed, i, r), n,
                                              detail::simulation_options(plan));
        const auto data = observations_with_presample(path);
        const auto rep = fit(plan.model, data, detail::fit_region(plan, data), std::nullopt, opts);
        detail::RepOutcome o;
        o.row = {static_cast<double>(n), static_cast<double>(r), rep.converged ? 1.0 : 0.0, rep.converged ? 1.0 : 0.0,
                 rep.loglik};
        for (Eigen::Index k = 0; k < rep.theta_hat.size(); ++k) o.row.push_back(rep.theta_hat[k]);
        o.ok = rep.converged;
        if (!o.ok) o.error = "optimizer did not converge";
        return o;
    });
    res.aggregate = aggregate_rows(plan, res.rows);

    for (std::size_t k = 0; k < names.size(); ++k) {
        const std::size_t c = res.aggregate.column("rmse." + names[k]);
        for (std::size_t i = 1; i < res.aggregate.rows.size(); ++i) {
            const double prev = res.aggregate.rows[i - 1][c];
            const double cur = res.aggregate.rows[i][c];
            res.checks.push_back({"rmse-decreasing." + names[k] + ".n" + std::to_string(plan.sizes[i]),
                                  cur < 1.05 * prev,
                                  "rmse " + std::to_string(cur) + " vs previous " + std::to_string(prev)});
        }
    }
    return res;
}

/**
 * Per replication: fit, covariance, Wald intervals at coverage_level and the
 * standardized estimate V^{-1/2}(theta_hat - theta_0) with V = V0_hat / n.
 */
inline ExperimentResult run_coverage(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.kind != ExperimentKind::coverage) throw ConstraintError("plan kind is not coverage");
    detail::require_identifiable(plan);
    const ThetaVector theta(plan.model, plan.theta_true);
    detail::require_stationary(plan, theta);
    const auto names = plan.model.coefficient_names();
    const auto d = static_cast<Eigen::Index>(names.size());
    const double zq = detail::normal_quantile(1.0 - 0.5 * (1.0 - plan.coverage_level));

    ExperimentResult res;
    res.kind = plan.kind;
    res.rows.columns = {"n", "rep", "ok", "converged", "loglik"};
    detail::append(res.rows.columns, detail::prefixed("theta_hat.", names));
    detail::append(res.rows.columns, detail::prefixed("se.", names));
    detail::append(res.rows.columns, detail::prefixed("covered.", names));
    detail::append(res.rows.columns, detail::prefixed("z.", names));

    const auto opts = detail::fit_options(plan);
    detail::run_replications(plan, res, [&](std::size_t i, std::size_t r) {
        const std::size_t n = plan.sizes[i];
        const auto path = simulate_stationary(theta, plan.innovation, detail::replication_stream(plan.seed, i, r), n,
                                              detail::simulation_options(plan));
        const auto data = observations_with_presample(path);
        const auto rep = fit(plan.model, data, detail::fit_region(plan, data), std::nullopt, opts);
        detail::RepOutcome o;
        o.row = {static_cast<double>(n), static_cast<double>(r), 0.0, rep.converged ? 1.0 : 0.0, rep.loglik};
        for (Eigen::Index k = 0; k < d; ++k) o.row.push_back(rep.theta_hat[k]);
        if (!rep.converged || !rep.covariance_available) {
            o.row.resize(res.rows.columns.size(), detail::kNaN);
            o.error = !rep.converged ? "optimizer did not converge" : "covariance unavailable";
            return o;
        }
        const auto& cov = rep.covariance;
        const Eigen::VectorXd diff = rep.theta_hat - plan.theta_true;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.vcov);
        const Eigen::VectorXd z = es.eigenvectors() * es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse().asDiagonal() *
                                  es.eigenvectors().transpose() * diff;
        for (Eigen::Index k = 0; k < d; ++k) o.row.push_back(cov.std_errors[k]);
        for (Eigen::Index k = 0; k < d; ++k) o.row.push_back(std::abs(diff[k]) <= zq * cov.std_errors[k] ? 1.0 : 0.0);
        for (Eigen::Index k = 0; k < d; ++k) o.row.push_back(z[k]);
        o.row[2] = 1.0;
        o.ok = true;
        return o;
    });
    res.aggregate = aggregate_rows(plan, res.rows);
    return res;
}

/**
 * Filter at theta_true from a mismatched seed and record |h_t - sigma2_t|.
 * For garch/agarch with q = 1 the gap contracts by exactly beta1 per step,
 * and the fitted log-rate is checked against log beta1 to 1e-9.
 */
inline ExperimentResult run_decay(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.kind != ExperimentKind::decay) throw ConstraintError("plan kind is not decay");
    const ThetaVector theta(plan.model, plan.theta_true);
    const double level = default_initial_variance(theta, plan.innovation);
    const double seed_variance = plan.filter_initial_variance.value_or(10.0 * level);

    ExperimentResult res;
    res.kind = plan.kind;
    res.rows.columns = {"n", "rep", "ok", "rate", "window", "gap_first", "gap_final", "gap_200"};
    res.gaps.columns = {"n", "rep", "t", "gap"};
    std::vector<std::vector<std::vector<double>>> gap_rows(plan.sizes.size() * plan.replications);

    detail::run_replications(plan, res, [&](std::size_t i, std::size_t r) {
        const std::size_t n = plan.sizes[i];
        const auto path = simulate_stationary(theta, plan.innovation, detail::replication_stream(plan.seed, i, r), n,
                                              detail::simulation_options(plan));
        FilterConfig cfg;
        cfg.initial = std::vector<double>{seed_variance};
        const auto dr = filter_error_decay(theta, path, cfg, plan.decay_threshold);
        detail::RepOutcome o;
        o.row = {static_cast<double>(n),
                 static_cast<double>(r),
                 1.0,
                 dr.rate,
                 static_cast<double>(dr.window),
                 dr.gaps.empty() ? detail::kNaN : dr.gaps.front(),
                 dr.gaps.empty() ? detail::kNaN : dr.gaps.back(),
                 dr.gaps.size() >= 200 ? dr.gaps[199] : detail::kNaN};
        auto& g = gap_rows[i * plan.replications + r];
        for (std::size_t t = 0; t < std::min(plan.gap_table_steps, dr.gaps.size()); ++t)
            g.push_back({static_cast<double>(n), static_cast<double>(r), static_cast<double>(t + 1), dr.gaps[t]});
        o.ok = true;
        return o;
    });
    for (auto& g : gap_rows)
        for (auto& row : g) res.gaps.rows.push_back(std::move(row));
    res.aggregate = aggregate_rows(plan, res.rows);

    if (!plan.model.is_egarch() && plan.model.q == 1) {
        const double expected = std::log(theta.beta(1));
        double worst = 0.0;
        bool any = false;
        const std::size_t cr = res.rows.column("rate");
        for (const auto& row : res.rows.rows) {
            if (std::isnan(row[cr])) continue;
            any = true;
            worst = std::max(worst, std::abs(row[cr] - expected));
        }
        res.checks.push_back({"exact-rate", any && worst <= 1e-9,
                              "max |rate - log beta1| = " + std::to_string(worst)});
    }
    return res;
}

namespace detail {

/// Region-scan coefficients may leave the ThetaVector region (sum beta >= 1); only sign constraints are enforced.
inline bool scan_point_admissible(const ModelSpec& m, const Eigen::VectorXd& c) {
    if (m.is_egarch()) return c[1] >= 0.0 && c[1] < 1.0 && c[3] >= std::abs(c[2]);
    if (!(c[0] > 0.0)) return false;
    for (std::size_t k = 1; k <= m.p + m.q; ++k)
        if (!(c[static_cast<Eigen::Index>(k)] >= 0.0)) return false;
    return !m.has_gamma() || std::abs(c[static_cast<Eigen::Index>(m.gamma_index())]) <= 1.0;
}

}  // namespace detail

/**
 * Grid over two coefficients. garch/agarch points get a Lyapunov estimate of
 * the companion products (verdict: stationary); egarch points get the Monte
 * Carlo invertibility check (verdict: invertible). Grid point k uses stream
 * id k under the plan seed.
 */
inline ExperimentResult run_region_scan(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.kind != ExperimentKind::region_scan) throw ConstraintError("plan kind is not region-scan");
    const auto names = plan.model.coefficient_names();
    const auto index_of = [&](const std::string& nm) {
        return static_cast<Eigen::Index>(std::find(names.begin(), names.end(), nm) - names.begin());
    };
    const Eigen::Index ix = index_of(plan.x_axis.name);
    const Eigen::Index iy = index_of(plan.y_axis.name);
    const bool one_one = !plan.model.is_egarch() && plan.model.p == 1 && plan.model.q == 1;

    ExperimentResult res;
    res.kind = plan.kind;
    res.rows.columns = {"point", "x", "y", "admissible", "estimate", "std_error", "verdict", "jensen_bound"};
    const std::size_t nx = plan.x_axis.values.size();
    const std::size_t total = nx * plan.y_axis.values.size();
    res.rows.rows.assign(total, {});
    detail::parallel_for(total, plan.threads, [&](std::size_t k) {
        const double xv = plan.x_axis.values[k % nx];
        const double yv = plan.y_axis.values[k / nx];
        Eigen::VectorXd c = plan.theta_true;
        c[ix] = xv;
        c[iy] = yv;
        std::vector<double> row{static_cast<double>(k), xv, yv, 0.0, detail::kNaN, detail::kNaN, detail::kNaN,
                                detail::kNaN};
        if (!detail::scan_point_admissible(plan.model, c)) {
            res.rows.rows[k] = std::move(row);
            return;
        }
        row[3] = 1.0;
        const RngStream stream(plan.seed, k);
        if (plan.model.is_egarch()) {
            const auto diag = egarch_invertibility_check(ThetaVector(plan.model, c), plan.innovation, stream,
                                                         plan.invertibility_samples);
            row[4] = diag.log_lambda_mean;
            row[5] = diag.std_error;
            row[6] = diag.contractive() ? 1.0 : 0.0;
        } else {
            const auto ly = detail::lyapunov_from(plan.model, c, plan.innovation, stream, plan.lyapunov_products,
                                                  plan.replications, MatrixNorm::frobenius);
            row[4] = ly.rho_hat;
            row[5] = ly.std_error;
            row[6] = ly.stationary() ? 1.0 : 0.0;
            if (one_one) {
                const double g = plan.model.has_gamma() ? c[plan.model.gamma_index()] : 0.0;
                const double second = 1.0 + g * g - 2.0 * g * moment_z_abs_z(plan.innovation).value;
                row[7] = std::log(c[1] * second + c[2]);
            }
        }
        res.rows.rows[k] = std::move(row);
    });
    res.attempted = total;
    res.aggregate = aggregate_rows(plan, res.rows);

    if (one_one) {
        bool jensen = true, beta_row = true;
        for (const auto& row : res.rows.rows) {
            if (row[3] != 1.0) continue;
            if (row[4] > row[7] + 3.0 * row[5] + 1e-12) jensen = false;
            Eigen::VectorXd c = plan.theta_true;
            c[ix] = row[1];
            c[iy] = row[2];
            if (c[2] >= 1.0 && row[4] < std::log(c[2]) - 1e-12) beta_row = false;
        }
        res.checks.push_back({"jensen-bound", jensen, "rho_hat <= log(alpha1 E u^2 + beta1) + 3 se at every point"});
        res.checks.push_back({"beta-at-least-one", beta_row, "rho_hat >= log beta1 wherever beta1 >= 1"});
    }
    if (plan.model.is_egarch()) {
        bool ok = true;
        for (const auto& row : res.rows.rows) {
            if (row[3] != 1.0) continue;
            Eigen::VectorXd c = plan.theta_true;
            c[ix] = row[1];
            c[iy] = row[2];
            if (c[1] == 0.0 && c[3] <= 1.0 && row[6] != 1.0) ok = false;
        }
        res.checks.push_back({"delta-at-most-one", ok, "beta = 0 and delta <= 1 points verdict invertible"});
    }
    return res;
}

/**
 * Rebuilds the observations of `path` from the same innovations but with the
 * volatility state before X_1 replaced by `initial_variance` on every lag.
 * Presample observations are kept. The result has the run_filter layout.
 */
inline std::vector<double> reinitialized_observations(const ThetaVector& theta, const PathSample& path,
                                                      double initial_variance) {
    const ModelSpec& m = theta.model();
    if (!(initial_variance > 0.0)) throw ConstraintError("initial variance must be positive");
    std::vector<double> x_lags = path.presample_x;
    std::vector<double> s_lags(m.state_dim(), m.is_egarch() ? std::log(initial_variance) : initial_variance);
    std::vector<double> out(path.presample_x.rbegin(), path.presample_x.rend());
    out.reserve(out.size() + path.size());
    GDerivatives g;
    g.resize(m, 0);
    // the egarch state is the log-volatility of the next observation
    double log_next = m.is_egarch() ? std::log(initial_variance) : 0.0;
    for (std::size_t t = 0; t < path.size(); ++t) {
        double sigma2 = 0.0;
        if (m.is_egarch()) {
            sigma2 = std::exp(log_next);
        } else {
            detail::evaluate_g(m, theta.coefficients().data(), x_lags.data(), s_lags.data(), 0, g);
            sigma2 = g.value;
        }
        if (detail::diverged(sigma2)) throw DivergenceError("reinitialized volatility diverged", t);
        const double x = std::sqrt(sigma2) * path.z[t];
        out.push_back(x);
        if (m.is_egarch()) {
            const auto& c = theta.coefficients();
            log_next = c[0] + c[1] * log_next + c[2] * path.z[t] + c[3] * std::abs(path.z[t]);
            continue;
        }
        if (!x_lags.empty()) {
            std::copy_backward(x_lags.begin(), x_lags.end() - 1, x_lags.end());
            x_lags[0] = x;
        }
        if (!s_lags.empty()) {
            std::copy_backward(s_lags.begin(), s_lags.end() - 1, s_lags.end());
            s_lags[0] = sigma2;
        }
    }
    return out;
}

/**
 * Fits the stationary series X and a series X~ sharing its innovations but
 * started from another volatility value. Both fits use the starts and region
 * derived from X. Refuses non-contractive theta_true.
 */
inline ExperimentResult run_equivalence(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.kind != ExperimentKind::equivalence) throw ConstraintError("plan kind is not equivalence");
    const ThetaVector theta(plan.model, plan.theta_true);
    detail::require_stationary(plan, theta);
    if (plan.model.is_egarch()) {
        const auto inv = egarch_invertibility_check(theta, plan.innovation, RngStream(plan.seed, ~std::uint64_t{0}),
                                                    plan.invertibility_samples);
        if (!inv.contractive())
            throw ConstraintError("theta_true fails the invertibility diagnostic (estimate " +
                                  std::to_string(inv.log_lambda_mean) + ")");
    }
    const double alt = plan.alternative_initial_variance.value_or(default_initial_variance(theta, plan.innovation));
    const auto names = plan.model.coefficient_names();

    ExperimentResult res;
    res.kind = plan.kind;
    res.rows.columns = {"n", "rep", "ok"};
    detail::append(res.rows.columns, detail::prefixed("theta_hat.", names));
    detail::append(res.rows.columns, detail::prefixed("theta_tilde.", names));
    detail::append(res.rows.columns, detail::prefixed("gap.", names));

    detail::run_replications(plan, res, [&](std::size_t i, std::size_t r) {
        const std::size_t n = plan.sizes[i];
        const auto path = simulate_stationary(theta, plan.innovation, detail::replication_stream(plan.seed, i, r), n,
                                              detail::simulation_options(plan));
        const auto data = observations_with_presample(path);
        const auto tilde = reinitialized_observations(theta, path, alt);
        auto opts = detail::fit_options(plan);
        if (opts.start_points.empty())
            opts.start_points = default_starts(plan.model, sample_variance(data), std::max<std::size_t>(opts.starts, 1));
        const auto region = detail::fit_region(plan, data);
        const auto a = fit(plan.model, data, region, std::nullopt, opts);
        const auto b = fit(plan.model, tilde, region, std::nullopt, opts);
        detail::RepOutcome o;
        o.row = {static_cast<double>(n), static_cast<double>(r), 0.0};
        for (Eigen::Index k = 0; k < a.theta_hat.size(); ++k) o.row.push_back(a.theta_hat[k]);
        for (Eigen::Index k = 0; k < b.theta_hat.size(); ++k) o.row.push_back(b.theta_hat[k]);
        for (Eigen::Index k = 0; k < a.theta_hat.size(); ++k) o.row.push_back(std::abs(a.theta_hat[k] - b.theta_hat[k]));
        o.ok = a.converged && b.converged;
        o.row[2] = o.ok ? 1.0 : 0.0;
        if (!o.ok) o.error = "optimizer did not converge";
        return o;
    });
    res.aggregate = aggregate_rows(plan, res.rows);
    if (!res.aggregate.rows.empty()) {
        const double last = res.aggregate.rows.back()[res.aggregate.column("max_gap")];
        const double bound = plan.equivalence_tolerance.value_or(10.0 * plan.fit.step_tol);
        res.checks.push_back({"largest-n-gap", last < bound,
                              "max gap " + std::to_string(last) + " at the largest n, bound " + std::to_string(bound)});
    }
    return res;
}

inline ExperimentResult run_experiment(const ExperimentPlan& plan) {
    switch (plan.kind) {
        case ExperimentKind::consistency: return run_consistency(plan);
        case ExperimentKind::coverage: return run_coverage(plan);
        case ExperimentKind::decay: return run_decay(plan);
        case ExperimentKind::region_scan: return run_region_scan(plan);
        case ExperimentKind::equivalence: return run_equivalence(plan);
    }
    throw ConstraintError("unknown experiment kind");
}

}  // namespace volqml
