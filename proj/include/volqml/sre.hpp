#pragma once

#include "volqml/errors.hpp"
#include "volqml/innovations.hpp"
#include "volqml/models.hpp"
#include "volqml/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace volqml {

using SreState = Eigen::VectorXd;

/// Any state coordinate above this magnitude is treated as divergence.
inline constexpr double kDivergenceCap = 1e300;

namespace detail {

inline bool diverged(double v) { return !std::isfinite(v) || std::abs(v) > kDivergenceCap; }

inline bool diverged(const SreState& s) {
    return std::any_of(s.data(), s.data() + s.size(), [](double v) { return diverged(v); });
}

}  // namespace detail

/**
 * Forward iterates phi_{t-1} o ... o phi_0(initial) for t = 1..steps.
 *
 * `phi(t, state)` returns phi_t(state). Element t-1 of the result is the
 * state after t applications.
 */
template <class MapSeq>
std::vector<SreState> forward_iterate(MapSeq&& phi, SreState initial, std::size_t steps) {
    std::vector<SreState> out;
    out.reserve(steps);
    SreState state = std::move(initial);
    for (std::size_t t = 0; t < steps; ++t) {
        state = phi(static_cast<std::ptrdiff_t>(t), state);
        if (detail::diverged(state)) throw DivergenceError("forward iterate diverged", t);
        out.push_back(state);
    }
    return out;
}

/// Backward iterate phi_{t-1} o ... o phi_{t-m}(z).
template <class MapSeq>
SreState backward_iterate(MapSeq&& phi, std::ptrdiff_t t, std::size_t m, SreState z) {
    for (std::size_t k = m; k >= 1; --k) {
        z = phi(t - static_cast<std::ptrdiff_t>(k), z);
        if (detail::diverged(z)) throw DivergenceError("backward iterate diverged", m - k);
    }
    return z;
}

/**
 * Simulated trajectory.
 *
 * x, sigma2 and z have length n and start right after the burn-in. The
 * presample vectors hold the lags in force before x[0], most recent first:
 * observations (length obs_lags) and squared volatilities (length state_dim).
 */
struct PathSample {
    ModelSpec model;
    std::vector<double> x;
    std::vector<double> sigma2;
    std::vector<double> z;
    std::vector<double> presample_x;
    std::vector<double> presample_sigma2;
    double initial_variance = 0.0;
    std::size_t burn_in = 0;
    /// Max gap at burn-in end between this chain and one started elsewhere.
    double certificate_gap = 0.0;
    bool certificate_ok = true;

    [[nodiscard]] std::size_t size() const { return x.size(); }

    /// (sigma2_{k-1}, ..., sigma2_{k-count}) with negative indices read from the presample.
    [[nodiscard]] std::vector<double> sigma2_lags_before(std::size_t k, std::size_t count) const {
        std::vector<double> out(count);
        for (std::size_t j = 1; j <= count; ++j) {
            const auto idx = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(j);
            out[j - 1] = idx >= 0 ? sigma2[static_cast<std::size_t>(idx)]
                                  : presample_sigma2.at(static_cast<std::size_t>(-idx - 1));
        }
        return out;
    }
};

struct SimulationOptions {
    std::size_t burn_in = 1000;
    /// Starting squared volatility; defaults to the stationary mean level (see default_initial_variance).
    std::optional<double> initial_variance;
    /// Run a second chain from a different start and record the gap at burn-in end.
    bool certify = true;
    double certificate_tolerance = 1e-8;
};

/// agarch: alpha0 / margin when the weak-stationarity margin is positive, else alpha0 / (1 - sum beta).
/// egarch: exp(alpha / (1 - beta)).
inline double default_initial_variance(const ThetaVector& theta, const InnovationSpec& innovation) {
    if (theta.model().is_egarch()) return std::exp(theta[0] / (1.0 - theta[1]));
    const double margin = weak_stationarity_margin(theta, innovation);
    if (margin > 0.0) return theta.alpha0() / margin;
    return theta.alpha0() / (1.0 - theta.beta_sum());
}

namespace detail {

/// One chain of the simulation recursion; `z` is shared between chains.
class VolatilityChain {
public:
    VolatilityChain(const ThetaVector& theta, double initial_variance, std::span<const double> presample_z)
        : theta_(&theta), model_(theta.model()) {
        if (model_.is_egarch()) {
            log_state_ = std::log(initial_variance);
            x_lags_.assign(1, std::sqrt(initial_variance) * presample_z[0]);
            s_lags_.assign(1, initial_variance);
        } else {
            x_lags_.resize(model_.p);
            for (std::size_t i = 0; i < model_.p; ++i) x_lags_[i] = std::sqrt(initial_variance) * presample_z[i];
            s_lags_.assign(model_.q, initial_variance);
        }
        work_.resize(model_, 0);
    }

    /// Advances one step with innovation z; returns (X_t, sigma2_t).
    std::pair<double, double> step(double z, std::size_t t) {
        double sigma2 = 0.0;
        if (model_.is_egarch()) {
            sigma2 = std::exp(log_state_);
            if (diverged(log_state_) || diverged(sigma2)) throw DivergenceError("egarch log-volatility diverged", t);
            const double x = std::sqrt(sigma2) * z;
            const auto& c = theta_->coefficients();
            log_state_ = c[0] + c[1] * log_state_ + c[2] * z + c[3] * std::abs(z);
            x_lags_[0] = x;
            s_lags_[0] = sigma2;
            return {x, sigma2};
        }
        evaluate_g(model_, theta_->coefficients().data(), x_lags_.data(), s_lags_.data(), 0, work_);
        sigma2 = work_.value;
        if (diverged(sigma2)) throw DivergenceError("squared volatility diverged", t);
        const double x = std::sqrt(sigma2) * z;
        if (!x_lags_.empty()) {
            std::copy_backward(x_lags_.begin(), x_lags_.end() - 1, x_lags_.end());
            x_lags_[0] = x;
        }
        if (!s_lags_.empty()) {
            std::copy_backward(s_lags_.begin(), s_lags_.end() - 1, s_lags_.end());
            s_lags_[0] = sigma2;
        }
        return {x, sigma2};
    }

    [[nodiscard]] const std::vector<double>& x_lags() const { return x_lags_; }
    /// Squared-volatility lags in variance units (egarch: only the last realized value).
    [[nodiscard]] const std::vector<double>& s_lags() const { return s_lags_; }
    /// Next squared volatility for egarch, which is already determined.
    [[nodiscard]] double egarch_next_variance() const { return std::exp(log_state_); }

    [[nodiscard]] double gap(const VolatilityChain& other) const {
        double g = 0.0;
        for (std::size_t i = 0; i < x_lags_.size(); ++i) g = std::max(g, std::abs(x_lags_[i] - other.x_lags_[i]));
        for (std::size_t j = 0; j < s_lags_.size(); ++j) g = std::max(g, std::abs(s_lags_[j] - other.s_lags_[j]));
        if (model_.is_egarch()) g = std::max(g, std::abs(std::exp(log_state_) - std::exp(other.log_state_)));
        return g;
    }

private:
    const ThetaVector* theta_;
    ModelSpec model_;
    std::vector<double> x_lags_;
    std::vector<double> s_lags_;
    double log_state_ = 0.0;
    GDerivatives work_;
};

}  // namespace detail

/**
 * Approximate draw from the stationary solution: start the recursion at
 * `initial_variance`, run `burn_in` steps and keep the next n.
 *
 * The stream is consumed as: obs_lags presample innovations, then one
 * innovation per step. With `certify`, a second chain driven by the same
 * innovations starts from 10 * initial_variance + 1 and the gap at burn-in
 * end is recorded.
 */
inline PathSample simulate_stationary(const ThetaVector& theta, const InnovationSpec& innovation, RngStream stream,
                                      std::size_t n, const SimulationOptions& options = {}) {
    innovation.validate();
    const ModelSpec& model = theta.model();
    const double init = options.initial_variance.value_or(default_initial_variance(theta, innovation));
    if (!(init > 0.0) || !std::isfinite(init)) throw ConstraintError("initial variance must be positive and finite");

    std::vector<double> pre_z(model.obs_lags());
    for (auto& z : pre_z) z = draw_one(innovation, stream);

    detail::VolatilityChain chain(theta, init, pre_z);
    std::optional<detail::VolatilityChain> shadow;
    if (options.certify && options.burn_in > 0) shadow.emplace(theta, 10.0 * init + 1.0, pre_z);

    PathSample path;
    path.model = model;
    path.initial_variance = init;
    path.burn_in = options.burn_in;
    path.x.reserve(n);
    path.sigma2.reserve(n);
    path.z.reserve(n);

    for (std::size_t t = 0; t < options.burn_in; ++t) {
        const double z = draw_one(innovation, stream);
        chain.step(z, t);
        if (shadow) {
            try {
                shadow->step(z, t);
            } catch (const DivergenceError&) {
                shadow.reset();
                path.certificate_ok = false;
                path.certificate_gap = std::numeric_limits<double>::infinity();
            }
        }
    }
    if (shadow) {
        path.certificate_gap = chain.gap(*shadow);
        path.certificate_ok = path.certificate_gap < options.certificate_tolerance;
    }

    path.presample_x = chain.x_lags();
    path.presample_sigma2 = chain.s_lags();

    for (std::size_t t = 0; t < n; ++t) {
        const double z = draw_one(innovation, stream);
        const auto [x, s2] = chain.step(z, options.burn_in + t);
        path.x.push_back(x);
        path.sigma2.push_back(s2);
        path.z.push_back(z);
    }
    return path;
}

/// Concatenates presample observations and the path, the layout run_filter expects.
inline std::vector<double> observations_with_presample(const PathSample& path) {
    std::vector<double> data(path.presample_x.rbegin(), path.presample_x.rend());
    data.insert(data.end(), path.x.begin(), path.x.end());
    return data;
}

enum class MatrixNorm { frobenius, operator_2 };

inline std::string_view to_string(MatrixNorm n) { return n == MatrixNorm::frobenius ? "frobenius" : "operator"; }

inline double matrix_norm(const Eigen::MatrixXd& m, MatrixNorm norm) {
    if (norm == MatrixNorm::frobenius || m.size() == 1) return m.norm();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

struct LyapunovEstimate {
    double rho_hat = 0.0;
    double std_error = 0.0;
    std::size_t n_products = 0;
    std::size_t n_replications = 0;
    MatrixNorm norm = MatrixNorm::frobenius;

    /// Stationary when the upper 3-SE bound is negative.
    [[nodiscard]] bool stationary() const { return rho_hat + 3.0 * std_error < 0.0; }
};

namespace detail {

inline double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Standard error of the mean; zero for fewer than two values or any non-finite value.
inline double std_error_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    if (!std::isfinite(m)) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// Companion matrix from raw coefficients; no constraint checks, so points with sum(beta) >= 1 are allowed.
inline Eigen::MatrixXd companion_from(const ModelSpec& m, const Eigen::VectorXd& c, double z) {
    const std::size_t pe = std::max<std::size_t>(m.p, 1);
    const std::size_t qe = std::max<std::size_t>(m.q, 1);
    const auto k = static_cast<Eigen::Index>(pe + qe - 1);
    const auto qi = static_cast<Eigen::Index>(qe);
    const auto at = [&](std::size_t idx) { return c[static_cast<Eigen::Index>(idx)]; };
    const double gamma = m.has_gamma() ? at(m.gamma_index()) : 0.0;
    const double u = std::abs(z) - gamma * z;
    const double a1 = m.p >= 1 ? at(m.alpha_index(1)) : 0.0;
    const double b1 = m.q >= 1 ? at(m.beta_index(1)) : 0.0;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    a(0, 0) = a1 * u * u + b1;
    for (std::size_t j = 2; j <= m.q; ++j) a(0, static_cast<Eigen::Index>(j - 1)) = at(m.beta_index(j));
    for (std::size_t i = 2; i <= m.p; ++i) a(0, qi + static_cast<Eigen::Index>(i) - 2) = at(m.alpha_index(i));
    for (Eigen::Index r = 1; r < qi; ++r) a(r, r - 1) = 1.0;
    if (pe >= 2) {
        a(qi, 0) = u * u;
        for (Eigen::Index r = qi + 1; r < k; ++r) a(r, r - 1) = 1.0;
    }
    return a;
}

}  // namespace detail

/**
 * Random companion matrix of the agarch volatility vector at innovation z.
 *
 * q = 0 is treated as q = 1 with beta1 = 0 and p = 0 as p = 1 with alpha1 = 0,
 * so the dimension is max(p,1) + max(q,1) - 1.
 */
inline Eigen::MatrixXd agarch_companion(const ThetaVector& theta, double z) {
    if (theta.model().is_egarch()) throw UnsupportedError("companion matrix is defined for garch/agarch");
    return detail::companion_from(theta.model(), theta.coefficients(), z);
}

namespace detail {

inline LyapunovEstimate lyapunov_from(const ModelSpec& model, const Eigen::VectorXd& coef,
                                      const InnovationSpec& innovation, const RngStream& stream,
                                      std::size_t n_products, std::size_t n_replications, MatrixNorm norm) {
    if (model.is_egarch()) throw UnsupportedError("lyapunov_agarch needs a garch/agarch model");
    if (n_products < 1 || n_replications < 1) throw ConstraintError("n_products and n_replications must be >= 1");
    innovation.validate();
    std::vector<double> per_rep(n_replications);
    for (std::size_t r = 0; r < n_replications; ++r) {
        RngStream s = stream.split(r);
        Eigen::MatrixXd prod;
        double log_sum = 0.0;
        for (std::size_t t = 0; t < n_products; ++t) {
            const Eigen::MatrixXd a = companion_from(model, coef, draw_one(innovation, s));
            prod = t == 0 ? a : Eigen::MatrixXd(a * prod);
            const double c = matrix_norm(prod, norm);
            if (!(c > 0.0)) {
                log_sum = -std::numeric_limits<double>::infinity();
                break;
            }
            log_sum += std::log(c);
            prod /= c;
        }
        per_rep[r] = log_sum / static_cast<double>(n_products);
    }
    return {mean_of(per_rep), std_error_of(per_rep), n_products, n_replications, norm};
}

}  // namespace detail

/**
 * Top Lyapunov exponent of the agarch companion products by Monte Carlo.
 *
 * Each replication multiplies n_products i.i.d. matrices, renormalizing the
 * running product every step and accumulating the log norms; replication r
 * uses stream.split(r).
 */
inline LyapunovEstimate lyapunov_agarch(const ThetaVector& theta, const InnovationSpec& innovation,
                                        const RngStream& stream, std::size_t n_products, std::size_t n_replications,
                                        MatrixNorm norm = MatrixNorm::frobenius) {
    return detail::lyapunov_from(theta.model(), theta.coefficients(), innovation, stream, n_products, n_replications,
                                 norm);
}

/// Deterministic companion matrix C of the beta coefficients.
inline Eigen::MatrixXd beta_companion(std::span<const double> beta) {
    const auto q = static_cast<Eigen::Index>(beta.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(q, q);
    for (Eigen::Index j = 0; j < q; ++j) c(0, j) = beta[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 1; r < q; ++r) c(r, r - 1) = 1.0;
    return c;
}

struct SpectralRadius {
    double radius = 0.0;
    /// (sum beta)^(1/q), which strictly dominates the radius when sum beta < 1.
    double bound = 0.0;
};

inline SpectralRadius spectral_radius_C(std::span<const double> beta) {
    for (double b : beta)
        if (!(b >= 0.0)) throw ConstraintError("beta coefficients must be nonnegative");
    if (beta.empty()) return {0.0, 0.0};
    const double sum = std::accumulate(beta.begin(), beta.end(), 0.0);
    const Eigen::MatrixXd c = beta_companion(beta);
    Eigen::EigenSolver<Eigen::MatrixXd> es(c, false);
    const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
    return {radius, std::pow(sum, 1.0 / static_cast<double>(beta.size()))};
}

/// log ||C^r|| computed with running renormalization so small radii cannot underflow.
inline double log_norm_power(const Eigen::MatrixXd& c, std::size_t r, MatrixNorm norm = MatrixNorm::operator_2) {
    if (c.size() == 0) return -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(c.rows(), c.cols());
    double log_scale = 0.0;
    for (std::size_t k = 0; k < r; ++k) {
        m = c * m;
        const double f = m.norm();
        if (!(f > 0.0)) return -std::numeric_limits<double>::infinity();
        log_scale += std::log(f);
        m /= f;
    }
    return log_scale + std::log(matrix_norm(m, norm));
}

struct ContractionDiagnostic {
    /// Estimate of E log Lambda(phi^(r)) / r.
    double log_lambda_mean = 0.0;
    std::size_t r = 1;
    double std_error = 0.0;
    std::size_t n = 0;
    /// Terms of the volatility series kept per sample (egarch Monte Carlo only).
    std::size_t series_terms = 0;
    double tail_bound = 0.0;
    /// Share of samples with Lambda = 0 (log = -inf).
    double degenerate_fraction = 0.0;
    std::string method;

    [[nodiscard]] bool contractive() const { return log_lambda_mean + 3.0 * std_error < 0.0; }
};

/**
 * Monte-Carlo test of the egarch invertibility condition
 *   E log max{beta, exp(S/2) w(Z_0) / 2 - beta} < 0,
 * where w(z) = gamma z + delta |z| and S = sum_k beta^k w(Z_{-k-1}).
 *
 * The series is cut at K = ceil(log(eps (1-beta)) / log beta) terms, eps = 1e-12,
 * and the neglected tail is bounded by (|gamma| + delta) beta^K / (1 - beta).
 */
inline ContractionDiagnostic egarch_invertibility_check(const ThetaVector& theta, const InnovationSpec& innovation,
                                                        RngStream stream, std::size_t n_samples) {
    if (!theta.model().is_egarch()) throw UnsupportedError("egarch_invertibility_check needs an egarch model");
    innovation.validate();
    const double beta = theta[1], gamma = theta[2], delta = theta[3];
    if (delta < std::abs(gamma)) throw ConstraintError("egarch needs delta >= |gamma|");
    constexpr double eps = 1e-12;
    const std::size_t terms =
        beta > 0.0 ? static_cast<std::size_t>(std::ceil(std::log(eps * (1.0 - beta)) / std::log(beta))) : 1;
    const double tail = beta > 0.0 ? (std::abs(gamma) + delta) * std::pow(beta, static_cast<double>(terms)) / (1.0 - beta)
                                   : 0.0;
    const auto w = [&](double z) { return gamma * z + delta * std::abs(z); };

    std::vector<double> finite;
    finite.reserve(n_samples);
    std::size_t degenerate = 0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double z0 = draw_one(innovation, stream);
        double series = 0.0;
        double bk = 1.0;
        for (std::size_t k = 0; k < terms; ++k) {
            series += bk * w(draw_one(innovation, stream));
            bk *= beta;
        }
        const double lambda = std::max(beta, 0.5 * std::exp(0.5 * series) * w(z0) - beta);
        if (lambda > 0.0)
            finite.push_back(std::log(lambda));
        else
            ++degenerate;
    }
    ContractionDiagnostic out;
    out.r = 1;
    out.n = n_samples;
    out.series_terms = terms;
    out.tail_bound = tail;
    out.method = "egarch-monte-carlo";
    out.degenerate_fraction = n_samples ? static_cast<double>(degenerate) / static_cast<double>(n_samples) : 0.0;
    if (degenerate > 0) {
        out.log_lambda_mean = -std::numeric_limits<double>::infinity();
        out.std_error = 0.0;
    } else {
        out.log_lambda_mean = detail::mean_of(finite);
        out.std_error = detail::std_error_of(finite);
    }
    return out;
}

/**
 * Contraction of the r-fold filter map.
 *
 * agarch: log ||C^r||_op / r, an exact deterministic bound (observations are
 * not used). egarch: ergodic average of log Lambda(phi_t) over the observed
 * series with batch-means standard error; for r > 1 the product bound gives
 * the same value.
 */
inline ContractionDiagnostic estimate_contraction(const ThetaVector& theta, std::span<const double> observations,
                                                  std::size_t r) {
    if (r < 1) throw ConstraintError("r must be >= 1");
    ContractionDiagnostic out;
    out.r = r;
    if (!theta.model().is_egarch()) {
        const auto b = theta.betas();
        out.log_lambda_mean = log_norm_power(beta_companion(b), r) / static_cast<double>(r);
        out.method = "companion-norm";
        return out;
    }
    if (observations.empty()) throw ConstraintError("egarch contraction needs observations");
    const double alpha = theta[0], beta = theta[1], gamma = theta[2], delta = theta[3];
    const double scale = 0.5 * std::exp(-0.5 * alpha / (1.0 - beta));
    std::vector<double> vals;
    vals.reserve(observations.size());
    std::size_t degenerate = 0;
    for (double x : observations) {
        const double lambda = std::max(beta, scale * (gamma * x + delta * std::abs(x)) - beta);
        if (lambda > 0.0)
            vals.push_back(std::log(lambda));
        else
            ++degenerate;
    }
    out.n = observations.size();
    out.method = "egarch-path-average";
    out.degenerate_fraction = static_cast<double>(degenerate) / static_cast<double>(out.n);
    if (degenerate > 0) {
        out.log_lambda_mean = -std::numeric_limits<double>::infinity();
        return out;
    }
    out.log_lambda_mean = detail::mean_of(vals);
    constexpr std::size_t batches = 20;
    if (vals.size() >= 2 * batches) {
        std::vector<double> means;
        const std::size_t len = vals.size() / batches;
        for (std::size_t b = 0; b < batches; ++b)
            means.push_back(detail::mean_of(std::span<const double>(vals).subspan(b * len, len)));
        out.std_error = detail::std_error_of(means);
    }
    return out;
}

/// Scans r in {1, 2, 4, ..., r_max} and returns the most negative diagnostic (a heuristic choice of r).
inline ContractionDiagnostic scan_contraction(const ThetaVector& theta, std::span<const double> observations,
                                              std::size_t r_max = 64) {
    ContractionDiagnostic best = estimate_contraction(theta, observations, 1);
    if (theta.model().is_egarch()) return best;
    for (std::size_t r = 2; r <= r_max; r *= 2) {
        auto d = estimate_contraction(theta, observations, r);
        if (d.log_lambda_mean + 3.0 * d.std_error < best.log_lambda_mean + 3.0 * best.std_error) best = d;
    }
    return best;
}

}  // namespace volqml
