#pragma once

#include "volqml/errors.hpp"
#include "volqml/models.hpp"
#include "volqml/sre.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace volqml {

/**
 * Filter seeding.
 *
 * `initial` is the starting squared-volatility vector (length state_dim,
 * variance units for every family; egarch takes its log). When absent, the
 * sample variance of the data is broadcast to all lags.
 */
struct FilterConfig {
    std::optional<std::vector<double>> initial;
    /// Leading likelihood terms excluded from sums.
    std::size_t warmup_skip = 0;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * Per-t output of the filter for t = 1..n.
 *
 * h, dh (n x d) and d2h (n x d*d, each row a flattened symmetric matrix) are
 * in variance units for every family. For egarch the recursion runs on the
 * log scale and log_h, dlog_h, d2log_h keep those values.
 */
struct FilterOutput {
    ModelSpec model;
    int order = 0;
    std::vector<double> h;
    RowMatrix dh;
    RowMatrix d2h;
    std::vector<double> log_h;
    RowMatrix dlog_h;
    RowMatrix d2log_h;

    [[nodiscard]] std::size_t size() const { return h.size(); }
    [[nodiscard]] std::size_t dim() const { return model.dim(); }

    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> gradient(std::size_t t) const {
        return {dh.row(static_cast<Eigen::Index>(t)).data(), static_cast<Eigen::Index>(dim())};
    }
    [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> hessian(std::size_t t) const {
        const auto d = static_cast<Eigen::Index>(dim());
        return {d2h.row(static_cast<Eigen::Index>(t)).data(), d, d};
    }
};

/// Sample variance (denominator N) of a series; 1 for series shorter than 2.
inline double sample_variance(std::span<const double> x) {
    if (x.size() < 2) return 1.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(x.size());
}

namespace detail {

inline std::vector<double> filter_seed(const ModelSpec& model, std::span<const double> data,
                                       const FilterConfig& config) {
    const std::size_t k = model.state_dim();
    std::vector<double> seed;
    if (config.initial) {
        seed = *config.initial;
        if (seed.size() == 1 && k > 1) seed.assign(k, seed[0]);
        if (seed.size() != k) throw ConstraintError("filter initial value has the wrong length");
        for (double s : seed)
            if (!(s >= 0.0) || !std::isfinite(s)) throw ConstraintError("filter initial value must be nonnegative");
    } else {
        seed.assign(k, sample_variance(data));
    }
    if (model.is_egarch()) {
        if (!(seed[0] > 0.0)) throw ConstraintError("egarch filter needs a positive initial variance");
        seed[0] = std::log(seed[0]);
    }
    return seed;
}

}  // namespace detail

/**
 * Runs the volatility filter and, for order >= 1, its derivative recursions.
 *
 * `data` holds obs_lags presample observations followed by X_1..X_n; the
 * output has n entries, entry t-1 being the filtered volatility of X_t.
 * Derivative states are seeded at zero.
 */
inline FilterOutput run_filter(const ThetaVector& theta, std::span<const double> data, const FilterConfig& config,
                               int order) {
    const ModelSpec& model = theta.model();
    if (order < 0 || order > 2) throw ConstraintError("filter order must be 0, 1 or 2");
    const std::size_t lags = model.obs_lags();
    if (data.size() < lags) throw ConstraintError("data must contain at least obs_lags presample observations");
    const std::size_t n = data.size() - lags;
    const std::size_t k = model.state_dim();
    const std::size_t d = model.dim();
    const auto di = static_cast<Eigen::Index>(d);
    const double* th = theta.coefficients().data();

    FilterOutput out;
    out.model = model;
    out.order = order;
    out.h.resize(n);
    if (order >= 1) out.dh.resize(static_cast<Eigen::Index>(n), di);
    if (order >= 2) out.d2h.resize(static_cast<Eigen::Index>(n), di * di);

    std::vector<double> s = detail::filter_seed(model, data, config);
    std::vector<double> ds(k * d, 0.0);
    std::vector<double> d2s(k * d * d, 0.0);
    std::vector<double> x_lags(lags);
    std::vector<double> new_ds(d);
    std::vector<double> new_d2s(d * d);

    GDerivatives g;
    g.resize(model, order);

    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t now = lags + t;
        for (std::size_t i = 0; i < lags; ++i) x_lags[i] = data[now - 1 - i];
        detail::evaluate_g(model, th, x_lags.data(), s.data(), order, g);
        const double value = g.value;
        if (!std::isfinite(value)) throw NumericError("filtered volatility is not finite", t);

        if (order >= 1) {
            for (std::size_t a = 0; a < d; ++a) {
                double v = g.d_theta[static_cast<Eigen::Index>(a)];
                for (std::size_t i = 0; i < k; ++i) v += g.d_s[static_cast<Eigen::Index>(i)] * ds[i * d + a];
                new_ds[a] = v;
            }
        }
        if (order >= 2) {
            const auto& G = g.second;
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = a; b < d; ++b) {
                    const auto ai = static_cast<Eigen::Index>(a);
                    const auto bi = static_cast<Eigen::Index>(b);
                    double v = G(ai, bi);
                    for (std::size_t i = 0; i < k; ++i) {
                        const auto si = di + static_cast<Eigen::Index>(i);
                        v += G(ai, si) * ds[i * d + b] + ds[i * d + a] * G(si, bi);
                        for (std::size_t j = 0; j < k; ++j) {
                            const auto sj = di + static_cast<Eigen::Index>(j);
                            v += G(si, sj) * ds[i * d + a] * ds[j * d + b];
                        }
                        v += g.d_s[static_cast<Eigen::Index>(i)] * d2s[(i * d + a) * d + b];
                    }
                    new_d2s[a * d + b] = v;
                    new_d2s[b * d + a] = v;
                }
            }
        }

        // shift lags, newest first
        if (k > 0) {
            for (std::size_t i = k - 1; i > 0; --i) {
                s[i] = s[i - 1];
                if (order >= 1) std::copy_n(&ds[(i - 1) * d], d, &ds[i * d]);
                if (order >= 2) std::copy_n(&d2s[(i - 1) * d * d], d * d, &d2s[i * d * d]);
            }
            s[0] = value;
            if (order >= 1) std::copy_n(new_ds.data(), d, ds.data());
            if (order >= 2) std::copy_n(new_d2s.data(), d * d, d2s.data());
        }

        const auto ti = static_cast<Eigen::Index>(t);
        if (model.is_egarch()) {
            if (out.log_h.empty()) {
                out.log_h.resize(n);
                if (order >= 1) out.dlog_h.resize(static_cast<Eigen::Index>(n), di);
                if (order >= 2) out.d2log_h.resize(static_cast<Eigen::Index>(n), di * di);
            }
            const double h = std::exp(value);
            if (!(h > 0.0) || !std::isfinite(h)) throw NumericError("egarch volatility overflow", t);
            out.log_h[t] = value;
            out.h[t] = h;
            if (order >= 1) {
                for (std::size_t a = 0; a < d; ++a) {
                    out.dlog_h(ti, static_cast<Eigen::Index>(a)) = new_ds[a];
                    out.dh(ti, static_cast<Eigen::Index>(a)) = h * new_ds[a];
                }
            }
            if (order >= 2) {
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = 0; b < d; ++b) {
                        const auto idx = static_cast<Eigen::Index>(a * d + b);
                        out.d2log_h(ti, idx) = new_d2s[a * d + b];
                        out.d2h(ti, idx) = h * (new_d2s[a * d + b] + new_ds[a] * new_ds[b]);
                    }
                }
            }
        } else {
            out.h[t] = value;
            if (order >= 1)
                for (std::size_t a = 0; a < d; ++a) out.dh(ti, static_cast<Eigen::Index>(a)) = new_ds[a];
            if (order >= 2)
                for (std::size_t e = 0; e < d * d; ++e) out.d2h(ti, static_cast<Eigen::Index>(e)) = new_d2s[e];
        }
        if (order >= 1) {
            for (std::size_t a = 0; a < d; ++a)
                if (!std::isfinite(new_ds[a])) throw NumericError("filter derivative is not finite", t);
        }
        if (order >= 2) {
            for (double v : new_d2s)
                if (!std::isfinite(v)) throw NumericError("filter second derivative is not finite", t);
        }
    }
    return out;
}

struct SeriesResult {
    std::vector<double> h;
    /// Series terms actually summed for each t (fewer than L near the data start).
    std::vector<std::size_t> terms_used;
    /// Coefficients xi_0..xi_L.
    std::vector<double> xi;
};

/// xi_0 = alpha0 / (1 - sum beta) and xi_1..xi_L, the power-series coefficients of a(z)/b(z).
inline std::vector<double> agarch_series_coefficients(const ThetaVector& theta, std::size_t L) {
    const ModelSpec& m = theta.model();
    if (m.is_egarch()) throw UnsupportedError("series representation is defined for garch/agarch");
    if (!(theta.beta_sum() < 1.0)) throw ConstraintError("series representation needs sum beta < 1");
    std::vector<double> xi(L + 1, 0.0);
    // c_0 = 0 for the series part; xi[0] carries the constant separately
    std::vector<double> c(L + 1, 0.0);
    for (std::size_t l = 1; l <= L; ++l) {
        double v = l <= m.p ? theta.alpha(l) : 0.0;
        for (std::size_t j = 1; j <= std::min(l - 1, m.q); ++j) v += theta.beta(j) * c[l - j];
        c[l] = v;
        xi[l] = v;
    }
    xi[0] = theta.alpha0() / (1.0 - theta.beta_sum());
    return xi;
}

/**
 * Stationary volatility from the infinite-lag representation
 *   h_t = xi_0 + sum_{l=1}^{L} xi_l (|X_{t-l}| - gamma X_{t-l})^2,
 * truncated at the start of the data. Indexing matches run_filter.
 */
inline SeriesResult agarch_series_h(const ThetaVector& theta, std::span<const double> data, std::size_t L) {
    const ModelSpec& m = theta.model();
    const std::size_t lags = m.obs_lags();
    if (data.size() < lags) throw ConstraintError("data must contain at least obs_lags presample observations");
    SeriesResult out;
    out.xi = agarch_series_coefficients(theta, L);
    const double gamma = theta.gamma();
    std::vector<double> u2(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
        const double u = std::abs(data[k]) - gamma * data[k];
        u2[k] = u * u;
    }
    const std::size_t n = data.size() - lags;
    out.h.resize(n);
    out.terms_used.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t now = lags + t;
        const std::size_t terms = std::min(L, now);
        double v = out.xi[0];
        for (std::size_t l = 1; l <= terms; ++l) v += out.xi[l] * u2[now - l];
        out.h[t] = v;
        out.terms_used[t] = terms;
    }
    return out;
}

struct DecayReport {
    /// |h_t(theta_true) - sigma2_t| for t = 1..n.
    std::vector<double> gaps;
    /// Least-squares slope of log gap against t over the leading window where the gap exceeds
    /// both `threshold` and 1e-7 sigma2_t.
    double rate = std::numeric_limits<double>::quiet_NaN();
    std::size_t window = 0;
    double threshold = 1e-12;
};

/// Gap between the filter at the true parameter and the simulated volatility.
inline DecayReport filter_error_decay(const ThetaVector& theta_true, const PathSample& path, const FilterConfig& config,
                                      double threshold = 1e-12) {
    const auto data = observations_with_presample(path);
    const auto out = run_filter(theta_true, data, config, 0);
    DecayReport rep;
    rep.threshold = threshold;
    rep.gaps.resize(out.size());
    for (std::size_t t = 0; t < out.size(); ++t) rep.gaps[t] = std::abs(out.h[t] - path.sigma2[t]);
    // below ~1e9 ulps of sigma2 the gap is dominated by rounding, not by the decay
    constexpr double relative_floor = 1e-7;
    std::size_t w = 0;
    while (w < rep.gaps.size() && rep.gaps[w] > std::max(threshold, relative_floor * path.sigma2[w])) ++w;
    rep.window = w;
    if (w >= 2) {
        double mt = 0.0, my = 0.0;
        for (std::size_t t = 0; t < w; ++t) {
            mt += static_cast<double>(t);
            my += std::log(rep.gaps[t]);
        }
        mt /= static_cast<double>(w);
        my /= static_cast<double>(w);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t t = 0; t < w; ++t) {
            const double dt = static_cast<double>(t) - mt;
            sxy += dt * (std::log(rep.gaps[t]) - my);
            sxx += dt * dt;
        }
        rep.rate = sxy / sxx;
    }
    return rep;
}

}  // namespace volqml
