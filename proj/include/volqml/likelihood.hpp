#pragma once

#include "volqml/errors.hpp"
#include "volqml/filter.hpp"
#include "volqml/models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace volqml {

/**
 * Gaussian quasi-log-likelihood -1/2 sum (X_t^2 / h_t + log h_t) and its
 * derivatives. The constant -(n/2) log(2 pi) is omitted; add it back when
 * comparing against libraries that report the full Gaussian density.
 */
struct LikelihoodValue {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
    std::size_t n_terms = 0;
    /// Terms where h_t was raised to the variance floor.
    std::size_t clamp_events = 0;
};

/// Positive floor applied to h_t before division.
struct LikelihoodOptions {
    double variance_floor = std::numeric_limits<double>::min();
};

/// Builds likelihood pieces from an existing filter pass. `data` is the series passed to run_filter.
inline LikelihoodValue assemble_likelihood(const FilterOutput& f, std::span<const double> data,
                                           const FilterConfig& config, int order,
                                           const LikelihoodOptions& options = {}) {
    if (order > f.order) throw ConstraintError("filter output has lower order than requested");
    const std::size_t lags = f.model.obs_lags();
    const std::size_t d = f.dim();
    const auto di = static_cast<Eigen::Index>(d);
    LikelihoodValue v;
    if (order >= 1) v.score = Eigen::VectorXd::Zero(di);
    if (order >= 2) v.hessian = Eigen::MatrixXd::Zero(di, di);
    double sum = 0.0;
    for (std::size_t t = config.warmup_skip; t < f.size(); ++t) {
        double h = f.h[t];
        if (h < options.variance_floor) {
            h = options.variance_floor;
            ++v.clamp_events;
        }
        const double x2 = data[lags + t] * data[lags + t];
        sum += x2 / h + std::log(h);
        ++v.n_terms;
        if (order >= 1) {
            const auto ti = static_cast<Eigen::Index>(t);
            const double c1 = -0.5 / h * (1.0 - x2 / h);
            for (Eigen::Index a = 0; a < di; ++a) v.score[a] += c1 * f.dh(ti, a);
            if (order >= 2) {
                const double c2 = -0.5 / (h * h);
                const double outer = 2.0 * x2 / h - 1.0;
                const double curv = h - x2;
                for (Eigen::Index a = 0; a < di; ++a) {
                    for (Eigen::Index b = a; b < di; ++b) {
                        const double e = c2 * (f.dh(ti, a) * f.dh(ti, b) * outer + f.d2h(ti, a * di + b) * curv);
                        v.hessian(a, b) += e;
                    }
                }
            }
        }
    }
    if (order >= 2)
        for (Eigen::Index a = 0; a < di; ++a)
            for (Eigen::Index b = 0; b < a; ++b) v.hessian(a, b) = v.hessian(b, a);
    v.loglik = -0.5 * sum;
    return v;
}

inline LikelihoodValue evaluate_likelihood(const ThetaVector& theta, std::span<const double> data,
                                           const FilterConfig& config, int order,
                                           const LikelihoodOptions& options = {}) {
    const auto f = run_filter(theta, data, config, order);
    return assemble_likelihood(f, data, config, order, options);
}

inline double loglik(const ThetaVector& theta, std::span<const double> data, const FilterConfig& config = {}) {
    return evaluate_likelihood(theta, data, config, 0).loglik;
}

inline Eigen::VectorXd score(const ThetaVector& theta, std::span<const double> data, const FilterConfig& config = {}) {
    return evaluate_likelihood(theta, data, config, 1).score;
}

inline Eigen::MatrixXd hessian(const ThetaVector& theta, std::span<const double> data, const FilterConfig& config = {}) {
    return evaluate_likelihood(theta, data, config, 2).hessian;
}

/// Per-t contributions -1/2 (X_t^2 / h_t + log h_t), warmup terms included.
inline std::vector<double> loglik_terms(const ThetaVector& theta, std::span<const double> data,
                                        const FilterConfig& config = {}) {
    const auto f = run_filter(theta, data, config, 0);
    const std::size_t lags = theta.model().obs_lags();
    std::vector<double> terms(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) {
        const double x = data[lags + t];
        terms[t] = -0.5 * (x * x / f.h[t] + std::log(f.h[t]));
    }
    return terms;
}

struct InformationPieces {
    /// (1/n) sum h'_t h'_t^T / h_t^2
    Eigen::MatrixXd m_hat;
    /// (1/n) sum (Zhat_t^4 - 1)
    double kurt_hat = 0.0;
    std::size_t n = 0;
    double min_eigenvalue = 0.0;
    double condition = 0.0;
    /// Set when m_hat is numerically singular.
    bool singular = false;
};

inline InformationPieces information_pieces(const ThetaVector& theta, std::span<const double> data,
                                            const FilterConfig& config = {}) {
    const auto f = run_filter(theta, data, config, 1);
    const std::size_t lags = theta.model().obs_lags();
    const auto di = static_cast<Eigen::Index>(f.dim());
    InformationPieces out;
    out.m_hat = Eigen::MatrixXd::Zero(di, di);
    double kurt = 0.0;
    for (std::size_t t = config.warmup_skip; t < f.size(); ++t) {
        const double h = f.h[t];
        const auto g = f.gradient(t);
        out.m_hat.noalias() += g * g.transpose() / (h * h);
        const double z2 = data[lags + t] * data[lags + t] / h;
        kurt += z2 * z2 - 1.0;
        ++out.n;
    }
    if (out.n > 0) {
        out.m_hat /= static_cast<double>(out.n);
        out.kurt_hat = kurt / static_cast<double>(out.n);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.m_hat);
    const auto& ev = es.eigenvalues();
    out.min_eigenvalue = ev.size() ? ev.minCoeff() : 0.0;
    const double max_ev = ev.size() ? ev.maxCoeff() : 0.0;
    out.condition = out.min_eigenvalue > 0.0 ? max_ev / out.min_eigenvalue : std::numeric_limits<double>::infinity();
    out.singular = out.n == 0 || !(out.min_eigenvalue > 1e-12 * std::max(max_ev, 1e-300));
    return out;
}

}  // namespace volqml
