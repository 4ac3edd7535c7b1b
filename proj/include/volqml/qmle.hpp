#pragma once

#include "volqml/errors.hpp"
#include "volqml/filter.hpp"
#include "volqml/likelihood.hpp"
#include "volqml/models.hpp"
#include "volqml/sre.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace volqml {

struct FitOptions {
    std::size_t starts = 5;
    /// Analytic Hessian for the Newton step; otherwise BFGS updates of the score.
    bool use_hessian = true;
    /// Projected-gradient tolerance, applied to the per-observation objective and scaled by max(1, |loglik|/n).
    double grad_tol = 1e-8;
    double step_tol = 1e-10;
    std::size_t max_iter = 200;
    /// Coordinates held at their starting value.
    std::vector<bool> fixed;
    /// Replaces default_starts() when non-empty.
    std::vector<Eigen::VectorXd> start_points;
    FilterConfig filter;
    std::size_t threads = 1;
};

/// Optimizer log for one starting point.
struct StartRecord {
    Eigen::VectorXd start;
    Eigen::VectorXd end;
    double loglik_start = std::numeric_limits<double>::quiet_NaN();
    double loglik_end = std::numeric_limits<double>::quiet_NaN();
    double projected_gradient = std::numeric_limits<double>::quiet_NaN();
    std::size_t iterations = 0;
    bool converged = false;
    std::string error;
};

struct CovarianceEstimate {
    /// Estimated asymptotic covariance of sqrt(n)(theta_hat - theta_0).
    Eigen::MatrixXd v0_hat;
    /// v0_hat / n
    Eigen::MatrixXd vcov;
    Eigen::VectorXd std_errors;
    double kurt_hat = 0.0;
    std::size_t n = 0;
};

struct EstimateReport {
    ModelSpec model;
    Eigen::VectorXd theta_hat;
    double loglik = 0.0;
    std::size_t n = 0;
    bool converged = false;
    std::size_t iterations = 0;
    double projected_gradient = 0.0;
    std::vector<std::size_t> active_constraints;
    bool covariance_available = false;
    CovarianceEstimate covariance;
    /// False when theta_hat sits on the region boundary.
    bool std_errors_reliable = false;
    std::vector<double> residuals;
    std::vector<StartRecord> starts;
    std::vector<std::string> warnings;
    /// Contraction diagnostic of the filter at theta_hat.
    ContractionDiagnostic contraction;
};

namespace detail {

/// Objective -loglik / n_terms with optional derivatives.
struct Objective {
    double value = std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
    double loglik = 0.0;
    bool ok = false;
};

inline Objective evaluate_objective(const ModelSpec& model, const Eigen::VectorXd& x, std::span<const double> data,
                                    const FilterConfig& config, int order) {
    Objective o;
    try {
        const ThetaVector theta(model, x);
        const auto lv = evaluate_likelihood(theta, data, config, order);
        if (lv.n_terms == 0 || !std::isfinite(lv.loglik)) return o;
        const double inv_n = 1.0 / static_cast<double>(lv.n_terms);
        o.loglik = lv.loglik;
        o.value = -lv.loglik * inv_n;
        if (order >= 1) o.gradient = -lv.score * inv_n;
        if (order >= 2) o.hessian = -lv.hessian * inv_n;
        o.ok = (order < 1 || o.gradient.allFinite()) && (order < 2 || o.hessian.allFinite());
    } catch (const std::exception&) {
        o.ok = false;
    }
    return o;
}

inline double projected_gradient_norm(const ModelSpec& model, const CompactRegion& region, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& g, const std::vector<bool>& fixed) {
    const Eigen::VectorXd p = region.project(model, x - g, fixed) - x;
    double m = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        if (fixed.empty() || !fixed[static_cast<std::size_t>(k)]) m = std::max(m, std::abs(p[k]));
    return m;
}

/// Solves H d = -g with a diagonal shift until H + mu I is positive definite.
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& h, const Eigen::VectorXd& g) {
    const double scale = std::max(h.diagonal().cwiseAbs().maxCoeff(), 1e-12);
    double mu = 0.0;
    for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::MatrixXd m = h;
        m.diagonal().array() += mu;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success) {
            Eigen::VectorXd d = llt.solve(-g);
            if (d.allFinite()) return d;
        }
        mu = mu == 0.0 ? 1e-8 * scale : mu * 10.0;
    }
    return -g;
}

/**
 * Projected Newton / quasi-Newton minimization of -loglik/n over the region.
 *
 * Coordinates at a bound whose gradient points outward are held (scaled by
 * the gradient only); the remaining free block takes a Newton step. Steps
 * follow the projection arc with Armijo backtracking.
 */
inline StartRecord optimize_from(const ModelSpec& model, std::span<const double> data, const CompactRegion& region,
                                 const Eigen::VectorXd& start, const FitOptions& opt) {
    StartRecord rec;
    rec.start = start;
    const auto d = static_cast<Eigen::Index>(model.dim());
    const auto& fixed = opt.fixed;
    const auto is_fixed = [&](Eigen::Index k) { return !fixed.empty() && fixed[static_cast<std::size_t>(k)]; };
    const int order = opt.use_hessian ? 2 : 1;

    Eigen::VectorXd x = region.project(model, start, fixed);
    Objective cur = evaluate_objective(model, x, data, opt.filter, order);
    if (!cur.ok) {
        rec.error = "objective not finite at start";
        rec.end = x;
        return rec;
    }
    rec.loglik_start = cur.loglik;
    Eigen::MatrixXd bfgs = Eigen::MatrixXd::Identity(d, d);
    int stalled = 0;

    for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
        const double tol = opt.grad_tol * std::max(1.0, std::abs(cur.value));
        const double pg = projected_gradient_norm(model, region, x, cur.gradient, fixed);
        rec.projected_gradient = pg;
        rec.iterations = iter;
        if (pg < tol) {
            rec.converged = true;
            break;
        }

        const double eps_active = std::min(pg, 1e-6);
        std::vector<Eigen::Index> free_idx;
        std::vector<bool> held(static_cast<std::size_t>(d), false);
        for (Eigen::Index k = 0; k < d; ++k) {
            if (is_fixed(k)) continue;
            const bool at_lo = x[k] <= region.lower[k] + eps_active && cur.gradient[k] > 0.0;
            const bool at_hi = x[k] >= region.upper[k] - eps_active && cur.gradient[k] < 0.0;
            if (at_lo || at_hi)
                held[static_cast<std::size_t>(k)] = true;
            else
                free_idx.push_back(k);
        }

        const auto nf = static_cast<Eigen::Index>(free_idx.size());
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
        if (nf > 0) {
            Eigen::MatrixXd hf(nf, nf);
            Eigen::VectorXd gf(nf);
            const Eigen::MatrixXd& curv = opt.use_hessian ? cur.hessian : bfgs;
            for (Eigen::Index a = 0; a < nf; ++a) {
                gf[a] = cur.gradient[free_idx[static_cast<std::size_t>(a)]];
                for (Eigen::Index b = 0; b < nf; ++b)
                    hf(a, b) = curv(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
            }
            const Eigen::VectorXd df = newton_direction(hf, gf);
            for (Eigen::Index a = 0; a < nf; ++a) dir[free_idx[static_cast<std::size_t>(a)]] = df[a];
        }
        for (Eigen::Index k = 0; k < d; ++k)
            if (held[static_cast<std::size_t>(k)]) dir[k] = -cur.gradient[k];

        const auto line_search = [&](const Eigen::VectorXd& direction, Eigen::VectorXd& x_new, Objective& f_new) {
            double t = 1.0;
            for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
                x_new = region.project(model, x + t * direction, fixed);
                const Eigen::VectorXd step = x_new - x;
                double decrease = 0.0;
                for (Eigen::Index k = 0; k < d; ++k) decrease += cur.gradient[k] * step[k];
                if (step.cwiseAbs().maxCoeff() == 0.0) return false;
                f_new = evaluate_objective(model, x_new, data, opt.filter, 0);
                if (f_new.ok && f_new.value <= cur.value + 1e-4 * decrease) return true;
            }
            return false;
        };

        Eigen::VectorXd x_new;
        Objective f_new;
        bool accepted = line_search(dir, x_new, f_new);
        if (!accepted) {
            Eigen::VectorXd sd = -cur.gradient;
            for (Eigen::Index k = 0; k < d; ++k)
                if (is_fixed(k)) sd[k] = 0.0;
            accepted = line_search(sd, x_new, f_new);
            if (opt.use_hessian == false) bfgs = Eigen::MatrixXd::Identity(d, d);
        }
        if (!accepted) break;

        const Eigen::VectorXd step = x_new - x;
        Objective next = evaluate_objective(model, x_new, data, opt.filter, order);
        if (!next.ok) break;
        if (!opt.use_hessian) {
            const Eigen::VectorXd y = next.gradient - cur.gradient;
            const double sy = step.dot(y);
            if (sy > 1e-12 * step.norm() * y.norm()) {
                const Eigen::VectorXd bs = bfgs * step;
                bfgs += y * y.transpose() / sy - bs * bs.transpose() / step.dot(bs);
            }
        }
        x = x_new;
        cur = std::move(next);
        rec.iterations = iter + 1;
        rec.projected_gradient = projected_gradient_norm(model, region, x, cur.gradient, fixed);
        if (rec.projected_gradient < opt.grad_tol * std::max(1.0, std::abs(cur.value))) {
            rec.converged = true;
            break;
        }
        stalled = step.cwiseAbs().maxCoeff() < opt.step_tol ? stalled + 1 : 0;
        if (stalled >= 3) break;
    }
    rec.end = x;
    rec.loglik_end = cur.loglik;
    return rec;
}

}  // namespace detail

/**
 * Deterministic starting points. The first is the moment-style point
 * alpha0 = 0.1 var, alphas summing to 0.1, betas summing to 0.5, gamma = 0;
 * the others vary the persistence split while matching the sample variance.
 */
inline std::vector<Eigen::VectorXd> default_starts(const ModelSpec& model, double data_variance, std::size_t count) {
    std::vector<Eigen::VectorXd> out;
    const auto d = static_cast<Eigen::Index>(model.dim());
    const double v = data_variance > 0.0 && std::isfinite(data_variance) ? data_variance : 1.0;
    if (model.is_egarch()) {
        constexpr double pairs[][2] = {{0.5, 0.2}, {0.9, 0.1}, {0.7, 0.3}, {0.3, 0.1}, {0.95, 0.05}};
        for (std::size_t s = 0; s < count; ++s) {
            const auto& pr = pairs[s % 5];
            Eigen::VectorXd x(4);
            x << (1.0 - pr[0]) * std::log(v) - pr[1] * 0.8, pr[0], 0.0, pr[1];
            out.push_back(x);
        }
        return out;
    }
    constexpr double mix[][2] = {{0.1, 0.5}, {0.05, 0.9}, {0.2, 0.7}, {0.3, 0.3}, {0.02, 0.2}};
    for (std::size_t s = 0; s < count; ++s) {
        const auto& m = mix[s % 5];
        const double a_sum = model.p > 0 ? m[0] : 0.0;
        const double b_sum = model.q > 0 ? m[1] : 0.0;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
        x[0] = s == 0 ? 0.1 * v : v * (1.0 - a_sum - b_sum);
        for (std::size_t i = 1; i <= model.p; ++i)
            x[static_cast<Eigen::Index>(model.alpha_index(i))] = a_sum / static_cast<double>(model.p);
        for (std::size_t j = 1; j <= model.q; ++j)
            x[static_cast<Eigen::Index>(model.beta_index(j))] = b_sum / static_cast<double>(model.q);
        out.push_back(x);
    }
    return out;
}

/// Plug-in covariance V0 = kurt_hat M_hat^{-1}, restricted to non-fixed coordinates.
inline CovarianceEstimate covariance(const ThetaVector& theta_hat, std::span<const double> data,
                                     const FilterConfig& config = {}, const std::vector<bool>& fixed = {}) {
    const auto pieces = information_pieces(theta_hat, data, config);
    const auto d = static_cast<Eigen::Index>(theta_hat.size());
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index k = 0; k < d; ++k)
        if (fixed.empty() || !fixed[static_cast<std::size_t>(k)]) free_idx.push_back(k);
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    Eigen::MatrixXd mf(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b)
            mf(a, b) = pieces.m_hat(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mf);
    if (pieces.n == 0 || nf == 0 || !(es.eigenvalues().minCoeff() > 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1e-300)))
        throw CovarianceUnavailable("information matrix is singular (min eigenvalue " +
                                    std::to_string(nf ? es.eigenvalues().minCoeff() : 0.0) +
                                    "); the model may be over-parameterized or unidentified");
    const Eigen::MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                                es.eigenvectors().transpose();
    CovarianceEstimate c;
    c.n = pieces.n;
    c.kurt_hat = pieces.kurt_hat;
    c.v0_hat = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b)
            c.v0_hat(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]) =
                pieces.kurt_hat * inv(a, b);
    c.v0_hat = 0.5 * (c.v0_hat + c.v0_hat.transpose());
    c.vcov = c.v0_hat / static_cast<double>(c.n);
    c.std_errors = c.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return c;
}

/// Zhat_t = X_t / sqrt(h_t(theta_hat)).
inline std::vector<double> residuals(const ThetaVector& theta_hat, std::span<const double> data,
                                     const FilterConfig& config = {}) {
    const auto f = run_filter(theta_hat, data, config, 0);
    const std::size_t lags = theta_hat.model().obs_lags();
    std::vector<double> z(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) z[t] = data[lags + t] / std::sqrt(f.h[t]);
    return z;
}

/**
 * Quasi-maximum-likelihood fit over `region`.
 *
 * With no `init`, every point of default_starts() is tried and the best
 * converged local maximum wins; the full per-start log is kept in the report.
 */
inline EstimateReport fit(const ModelSpec& model, std::span<const double> data, const CompactRegion& region,
                          const std::optional<Eigen::VectorXd>& init = std::nullopt, const FitOptions& options = {}) {
    model.validate();
    region.validate(model);
    const std::size_t d = model.dim();
    if (data.size() < std::max(model.p, model.q) + 10 * d)
        throw ConstraintError("fit needs at least max(p,q) + 10 d observations");
    if (!options.fixed.empty() && options.fixed.size() != d) throw ConstraintError("fixed mask has the wrong length");

    const double var = sample_variance(data);
    std::vector<Eigen::VectorXd> starts;
    if (init) {
        if (static_cast<std::size_t>(init->size()) != d) throw ConstraintError("init has the wrong dimension");
        starts.push_back(*init);
    } else if (!options.start_points.empty()) {
        starts = options.start_points;
        for (const auto& s : starts)
            if (static_cast<std::size_t>(s.size()) != d) throw ConstraintError("start point has the wrong dimension");
    } else {
        starts = default_starts(model, var, std::max<std::size_t>(options.starts, 1));
    }

    std::vector<StartRecord> records(starts.size());
    const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, starts.size());
    if (workers <= 1) {
        for (std::size_t s = 0; s < starts.size(); ++s)
            records[s] = detail::optimize_from(model, data, region, starts[s], options);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t s = w; s < starts.size(); s += workers)
                    records[s] = detail::optimize_from(model, data, region, starts[s], options);
            });
        for (auto& th : pool) th.join();
    }

    std::optional<std::size_t> best;
    for (std::size_t s = 0; s < records.size(); ++s) {
        const auto& r = records[s];
        if (!r.error.empty() || !std::isfinite(r.loglik_end)) continue;
        if (!best) {
            best = s;
            continue;
        }
        const auto& b = records[*best];
        if ((r.converged && !b.converged) || (r.converged == b.converged && r.loglik_end > b.loglik_end)) best = s;
    }
    if (!best) {
        std::string log = "all starts failed:";
        for (std::size_t s = 0; s < records.size(); ++s) log += " [" + std::to_string(s) + "] " + records[s].error;
        throw FitFailure(log);
    }

    const auto& r = records[*best];
    EstimateReport rep;
    rep.model = model;
    rep.theta_hat = r.end;
    rep.loglik = r.loglik_end;
    rep.converged = r.converged;
    rep.iterations = r.iterations;
    rep.projected_gradient = r.projected_gradient;
    rep.starts = records;
    const ThetaVector theta_hat(model, r.end);

    const auto lv = evaluate_likelihood(theta_hat, data, options.filter, 0);
    rep.n = lv.n_terms;
    if (!rep.converged) rep.warnings.emplace_back("optimizer did not reach the gradient tolerance");

    constexpr double bound_tol = 1e-8;
    for (std::size_t k = 0; k < d; ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        if (!options.fixed.empty() && options.fixed[k]) continue;
        if (r.end[ki] <= region.lower[ki] + bound_tol || r.end[ki] >= region.upper[ki] - bound_tol)
            rep.active_constraints.push_back(k);
    }
    double bsum = 0.0;
    for (std::size_t j = 1; j <= model.state_dim(); ++j) bsum += r.end[static_cast<Eigen::Index>(model.beta_index(j))];
    const bool cap_active = bsum >= region.beta_cap - bound_tol;
    if (!rep.active_constraints.empty() || cap_active)
        rep.warnings.emplace_back("estimate lies on the region boundary; standard errors are unreliable");
    rep.std_errors_reliable = rep.active_constraints.empty() && !cap_active;

    try {
        rep.covariance = covariance(theta_hat, data, options.filter, options.fixed);
        rep.covariance_available = true;
    } catch (const CovarianceUnavailable& e) {
        rep.covariance_available = false;
        rep.std_errors_reliable = false;
        rep.warnings.emplace_back(e.what());
    }
    rep.residuals = residuals(theta_hat, data, options.filter);
    rep.contraction = scan_contraction(theta_hat, data.subspan(model.obs_lags()));
    if (!rep.contraction.contractive())
        rep.warnings.emplace_back("filter contraction is not established at the estimate");
    return rep;
}

}  // namespace volqml
