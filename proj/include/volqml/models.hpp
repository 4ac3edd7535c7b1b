#pragma once

#include "volqml/errors.hpp"
#include "volqml/innovations.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace volqml {

enum class ModelFamily { garch, agarch, egarch };

inline std::string_view to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::garch: return "garch";
        case ModelFamily::agarch: return "agarch";
        case ModelFamily::egarch: return "egarch";
    }
    return "?";
}

inline ModelFamily parse_model_family(std::string_view s) {
    if (s == "garch") return ModelFamily::garch;
    if (s == "agarch") return ModelFamily::agarch;
    if (s == "egarch") return ModelFamily::egarch;
    throw ConstraintError("unknown model family '" + std::string(s) + "'");
}

/**
 * Model family and orders.
 *
 * Coefficient layout (canonical order used everywhere, including files):
 *   garch(p,q):  alpha0, alpha1..alphap, beta1..betaq            (d = p+q+1)
 *   agarch(p,q): alpha0, alpha1..alphap, beta1..betaq, gamma     (d = p+q+2)
 *   egarch:      alpha, beta, gamma, delta                       (d = 4)
 *
 * garch is agarch with gamma pinned to 0 and removed from the parameter
 * vector. egarch is fixed at p = q = 1 and its volatility state is the log
 * squared volatility.
 */
struct ModelSpec {
    ModelFamily family = ModelFamily::garch;
    std::size_t p = 1;
    std::size_t q = 1;

    static ModelSpec garch(std::size_t p, std::size_t q) { return {ModelFamily::garch, p, q}; }
    static ModelSpec agarch(std::size_t p, std::size_t q) { return {ModelFamily::agarch, p, q}; }
    static ModelSpec egarch() { return {ModelFamily::egarch, 1, 1}; }

    void validate() const {
        if (family == ModelFamily::egarch && (p != 1 || q != 1))
            throw ConstraintError("egarch is supported with p = q = 1 only");
        if (family == ModelFamily::agarch && p < 1)
            throw ConstraintError("agarch needs p >= 1 (gamma is unidentified otherwise)");
    }

    [[nodiscard]] bool is_egarch() const { return family == ModelFamily::egarch; }
    [[nodiscard]] bool has_gamma() const { return family == ModelFamily::agarch; }

    /// Parameter dimension d.
    [[nodiscard]] std::size_t dim() const {
        switch (family) {
            case ModelFamily::garch: return p + q + 1;
            case ModelFamily::agarch: return p + q + 2;
            case ModelFamily::egarch: return 4;
        }
        return 0;
    }

    /// Number of lagged volatility states carried by the filter.
    [[nodiscard]] std::size_t state_dim() const { return is_egarch() ? 1 : q; }
    /// Number of lagged observations entering g.
    [[nodiscard]] std::size_t obs_lags() const { return is_egarch() ? 1 : p; }

    [[nodiscard]] std::size_t alpha_index(std::size_t i) const { return i; }           // 1-based i
    [[nodiscard]] std::size_t beta_index(std::size_t j) const { return is_egarch() ? 1 : p + j; }  // 1-based j
    [[nodiscard]] std::size_t gamma_index() const { return is_egarch() ? 2 : p + q + 1; }

    [[nodiscard]] std::vector<std::string> coefficient_names() const {
        if (is_egarch()) return {"alpha", "beta", "gamma", "delta"};
        std::vector<std::string> names{"alpha0"};
        for (std::size_t i = 1; i <= p; ++i) names.push_back("alpha" + std::to_string(i));
        for (std::size_t j = 1; j <= q; ++j) names.push_back("beta" + std::to_string(j));
        if (has_gamma()) names.emplace_back("gamma");
        return names;
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Returns an empty string when `coef` satisfies the intrinsic constraints of `model`.
inline std::string theta_violation(const ModelSpec& model, const Eigen::VectorXd& coef) {
    if (static_cast<std::size_t>(coef.size()) != model.dim())
        return "expected " + std::to_string(model.dim()) + " coefficients, got " + std::to_string(coef.size());
    for (Eigen::Index k = 0; k < coef.size(); ++k)
        if (!std::isfinite(coef[k])) return "coefficient " + std::to_string(k) + " is not finite";
    if (model.is_egarch()) {
        const double beta = coef[1], gamma = coef[2], delta = coef[3];
        if (!(beta >= 0.0 && beta < 1.0)) return "egarch needs 0 <= beta < 1";
        if (!(delta >= std::abs(gamma))) return "egarch needs delta >= |gamma|";
        return {};
    }
    if (!(coef[0] > 0.0)) return "alpha0 must be positive";
    for (std::size_t i = 1; i <= model.p; ++i)
        if (!(coef[model.alpha_index(i)] >= 0.0)) return "alpha" + std::to_string(i) + " must be nonnegative";
    double beta_sum = 0.0;
    for (std::size_t j = 1; j <= model.q; ++j) {
        const double b = coef[model.beta_index(j)];
        if (!(b >= 0.0)) return "beta" + std::to_string(j) + " must be nonnegative";
        beta_sum += b;
    }
    if (!(beta_sum < 1.0)) return "sum of beta coefficients must be below 1";
    if (model.has_gamma() && !(std::abs(coef[model.gamma_index()]) <= 1.0)) return "agarch needs |gamma| <= 1";
    return {};
}

/// A parameter point; construction enforces the model's intrinsic constraints.
class ThetaVector {
public:
    ThetaVector(ModelSpec model, Eigen::VectorXd coef) : model_(model), coef_(std::move(coef)) {
        model_.validate();
        if (auto why = theta_violation(model_, coef_); !why.empty()) throw ConstraintError("theta: " + why);
    }
    ThetaVector(ModelSpec model, std::initializer_list<double> coef)
        : ThetaVector(model, Eigen::Map<const Eigen::VectorXd>(coef.begin(), static_cast<Eigen::Index>(coef.size()))) {}

    [[nodiscard]] const ModelSpec& model() const { return model_; }
    [[nodiscard]] const Eigen::VectorXd& coefficients() const { return coef_; }
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(coef_.size()); }
    double operator[](std::size_t k) const { return coef_[static_cast<Eigen::Index>(k)]; }

    [[nodiscard]] double alpha0() const { return coef_[0]; }
    [[nodiscard]] double alpha(std::size_t i) const { return coef_[static_cast<Eigen::Index>(model_.alpha_index(i))]; }
    [[nodiscard]] double beta(std::size_t j) const { return coef_[static_cast<Eigen::Index>(model_.beta_index(j))]; }
    [[nodiscard]] double gamma() const {
        return model_.family == ModelFamily::garch ? 0.0 : coef_[static_cast<Eigen::Index>(model_.gamma_index())];
    }
    [[nodiscard]] double delta() const { return model_.is_egarch() ? coef_[3] : 0.0; }

    [[nodiscard]] std::vector<double> betas() const {
        std::vector<double> b(model_.is_egarch() ? 1 : model_.q);
        for (std::size_t j = 0; j < b.size(); ++j) b[j] = beta(j + 1);
        return b;
    }
    [[nodiscard]] double beta_sum() const {
        double s = 0.0;
        for (double b : betas()) s += b;
        return s;
    }

private:
    ModelSpec model_;
    Eigen::VectorXd coef_;
};

/**
 * Compact parameter region K: a per-coordinate box plus the cap sum(beta) <= beta_cap.
 *
 * For egarch the cone delta >= |gamma| is part of the region as well.
 */
struct CompactRegion {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    double beta_cap = 0.999;

    void validate(const ModelSpec& model) const {
        const auto d = static_cast<Eigen::Index>(model.dim());
        if (lower.size() != d || upper.size() != d) throw ConstraintError("region bounds have the wrong dimension");
        for (Eigen::Index k = 0; k < d; ++k)
            if (!(lower[k] <= upper[k])) throw ConstraintError("region lower bound exceeds upper bound");
        if (!(beta_cap > 0.0 && beta_cap < 1.0)) throw ConstraintError("beta_cap must lie in (0, 1)");
        if (model.is_egarch()) {
            if (!(lower[1] >= 0.0)) throw ConstraintError("egarch region needs beta >= 0");
            if (!(lower[2] <= 0.0 && upper[2] >= 0.0)) throw ConstraintError("egarch gamma range must contain 0");
            if (!(lower[3] >= 0.0)) throw ConstraintError("egarch region needs delta >= 0");
        } else {
            if (!(lower[0] > 0.0)) throw ConstraintError("alpha0 lower bound must be strictly positive");
            for (std::size_t i = 1; i <= model.p + model.q; ++i)
                if (!(lower[static_cast<Eigen::Index>(i)] >= 0.0))
                    throw ConstraintError("alpha/beta lower bounds must be nonnegative");
            if (model.has_gamma()) {
                const auto g = static_cast<Eigen::Index>(model.gamma_index());
                if (!(lower[g] >= -1.0 && upper[g] <= 1.0)) throw ConstraintError("gamma bounds must lie in [-1, 1]");
            }
        }
    }

    /// Region used when none is configured; `data_variance` scales the intercept range.
    static CompactRegion default_for(const ModelSpec& model, double data_variance = 1.0) {
        const auto d = static_cast<Eigen::Index>(model.dim());
        CompactRegion r{Eigen::VectorXd(d), Eigen::VectorXd(d), 0.999};
        const double v = data_variance > 0.0 && std::isfinite(data_variance) ? data_variance : 1.0;
        if (model.is_egarch()) {
            const double lv = std::abs(std::log(v));
            r.lower << -10.0 - lv, 0.0, -1.0, 0.0;
            r.upper << 10.0 + lv, r.beta_cap, 1.0, 2.0;
            return r;
        }
        r.lower[0] = 1e-8;
        r.upper[0] = 100.0 * v;
        for (std::size_t i = 1; i <= model.p; ++i) {
            r.lower[static_cast<Eigen::Index>(i)] = 0.0;
            r.upper[static_cast<Eigen::Index>(i)] = 2.0;
        }
        for (std::size_t j = 1; j <= model.q; ++j) {
            r.lower[static_cast<Eigen::Index>(model.beta_index(j))] = 0.0;
            r.upper[static_cast<Eigen::Index>(model.beta_index(j))] = r.beta_cap;
        }
        if (model.has_gamma()) {
            r.lower[static_cast<Eigen::Index>(model.gamma_index())] = -1.0;
            r.upper[static_cast<Eigen::Index>(model.gamma_index())] = 1.0;
        }
        return r;
    }

    [[nodiscard]] bool contains(const ModelSpec& model, const Eigen::VectorXd& coef, double tol = 0.0) const {
        if (coef.size() != lower.size()) return false;
        for (Eigen::Index k = 0; k < coef.size(); ++k)
            if (coef[k] < lower[k] - tol || coef[k] > upper[k] + tol) return false;
        double bs = 0.0;
        for (std::size_t j = 1; j <= model.state_dim(); ++j) bs += coef[static_cast<Eigen::Index>(model.beta_index(j))];
        if (bs > beta_cap + tol) return false;
        if (model.is_egarch() && coef[3] < std::abs(coef[2]) - tol) return false;
        return true;
    }

    /**
     * Maps `coef` to a feasible point. The box and beta-cap part is the exact
     * Euclidean projection; coordinates flagged in `fixed` are never moved.
     */
    [[nodiscard]] Eigen::VectorXd project(const ModelSpec& model, Eigen::VectorXd coef,
                                          const std::vector<bool>& fixed = {}) const {
        const auto is_fixed = [&](Eigen::Index k) {
            return !fixed.empty() && fixed[static_cast<std::size_t>(k)];
        };
        for (Eigen::Index k = 0; k < coef.size(); ++k)
            if (!is_fixed(k)) coef[k] = std::clamp(coef[k], lower[k], upper[k]);

        project_beta_cap(model, coef, is_fixed);

        if (model.is_egarch() && !is_fixed(2) && !is_fixed(3)) {
            double& g = coef[2];
            double& dl = coef[3];
            if (dl < std::abs(g)) {
                if (dl <= -std::abs(g)) {
                    g = 0.0;
                    dl = 0.0;
                } else if (g > 0.0) {
                    g = dl = 0.5 * (g + dl);
                } else {
                    const double m = 0.5 * (dl - g);
                    g = -m;
                    dl = m;
                }
                dl = std::clamp(dl, lower[3], upper[3]);
                g = std::clamp(g, std::max(lower[2], -dl), std::min(upper[2], dl));
            }
        }
        return coef;
    }

    /// Lower bound of g over K for agarch (alpha0 floor).
    [[nodiscard]] double variance_floor() const { return lower[0]; }

    /// Lower bound of alpha/(1-beta) over the egarch box.
    [[nodiscard]] double egarch_log_floor() const {
        return lower[0] < 0.0 ? lower[0] / (1.0 - upper[1]) : lower[0] / (1.0 - lower[1]);
    }

private:
    template <class FixedPred>
    void project_beta_cap(const ModelSpec& model, Eigen::VectorXd& coef, FixedPred is_fixed) const {
        const std::size_t k = model.state_dim();
        double fixed_sum = 0.0;
        double free_sum = 0.0;
        std::vector<Eigen::Index> free;
        for (std::size_t j = 1; j <= k; ++j) {
            const auto idx = static_cast<Eigen::Index>(model.beta_index(j));
            if (is_fixed(idx)) {
                fixed_sum += coef[idx];
            } else {
                free_sum += coef[idx];
                free.push_back(idx);
            }
        }
        const double cap = beta_cap - fixed_sum;
        if (free.empty() || free_sum <= cap) return;
        // clamp(b - tau, lo, hi) with tau chosen so the free betas sum to the cap
        const auto total = [&](double tau) {
            double s = 0.0;
            for (auto idx : free) s += std::clamp(coef[idx] - tau, lower[idx], upper[idx]);
            return s;
        };
        double lo_tau = 0.0;
        double hi_tau = 0.0;
        for (auto idx : free) hi_tau = std::max(hi_tau, coef[idx] - lower[idx]);
        for (int it = 0; it < 200 && hi_tau - lo_tau > 1e-17; ++it) {
            const double mid = 0.5 * (lo_tau + hi_tau);
            (total(mid) > cap ? lo_tau : hi_tau) = mid;
        }
        for (auto idx : free) coef[idx] = std::clamp(coef[idx] - hi_tau, lower[idx], upper[idx]);
    }
};

/**
 * Value and partial derivatives of g at one point.
 *
 * `second` is the symmetric Hessian in the stacked argument (theta, s),
 * of size (d + k) x (d + k) with k = state_dim.
 */
struct GDerivatives {
    double value = 0.0;
    Eigen::VectorXd d_theta;
    Eigen::VectorXd d_s;
    Eigen::MatrixXd second;

    void resize(const ModelSpec& model, int order) {
        const auto d = static_cast<Eigen::Index>(model.dim());
        const auto k = static_cast<Eigen::Index>(model.state_dim());
        if (order >= 1) {
            d_theta.resize(d);
            d_s.resize(k);
        }
        if (order >= 2) second.resize(d + k, d + k);
    }
};

namespace detail {

/// Evaluates g and (up to `order`) its derivatives. Buffers in `out` must be sized by resize().
inline void evaluate_g(const ModelSpec& model, const double* theta, const double* x_lags, const double* s_lags,
                       int order, GDerivatives& out) {
    if (model.is_egarch()) {
        const double alpha = theta[0], beta = theta[1], gamma = theta[2], delta = theta[3];
        const double x = x_lags[0];
        const double s = s_lags[0];
        const double ax = std::abs(x);
        const double e = std::exp(-0.5 * s);
        const double w = gamma * x + delta * ax;
        out.value = alpha + beta * s + w * e;
        if (order < 1) return;
        out.d_theta[0] = 1.0;
        out.d_theta[1] = s;
        out.d_theta[2] = x * e;
        out.d_theta[3] = ax * e;
        out.d_s[0] = beta - 0.5 * w * e;
        if (order < 2) return;
        auto& h = out.second;
        h.setZero();
        h(1, 4) = h(4, 1) = 1.0;
        h(2, 4) = h(4, 2) = -0.5 * x * e;
        h(3, 4) = h(4, 3) = -0.5 * ax * e;
        h(4, 4) = 0.25 * w * e;
        return;
    }

    const std::size_t p = model.p;
    const std::size_t q = model.q;
    const bool has_gamma = model.has_gamma();
    const double gamma = has_gamma ? theta[p + q + 1] : 0.0;

    double value = theta[0];
    for (std::size_t i = 1; i <= p; ++i) {
        const double x = x_lags[i - 1];
        const double u = std::abs(x) - gamma * x;
        value += theta[i] * (u * u);
    }
    for (std::size_t j = 1; j <= q; ++j) value += theta[p + j] * s_lags[j - 1];
    out.value = value;
    if (order < 1) return;

    out.d_theta[0] = 1.0;
    double d_gamma = 0.0;
    double dd_gamma = 0.0;
    for (std::size_t i = 1; i <= p; ++i) {
        const double x = x_lags[i - 1];
        const double u = std::abs(x) - gamma * x;
        out.d_theta[static_cast<Eigen::Index>(i)] = u * u;
        d_gamma += theta[i] * x * u;
        dd_gamma += theta[i] * x * x;
    }
    for (std::size_t j = 1; j <= q; ++j) {
        out.d_theta[static_cast<Eigen::Index>(p + j)] = s_lags[j - 1];
        out.d_s[static_cast<Eigen::Index>(j - 1)] = theta[p + j];
    }
    if (has_gamma) out.d_theta[static_cast<Eigen::Index>(p + q + 1)] = -2.0 * d_gamma;
    if (order < 2) return;

    const auto d = static_cast<Eigen::Index>(model.dim());
    auto& h = out.second;
    h.setZero();
    if (has_gamma) {
        const auto g = static_cast<Eigen::Index>(p + q + 1);
        h(g, g) = 2.0 * dd_gamma;
        for (std::size_t i = 1; i <= p; ++i) {
            const double x = x_lags[i - 1];
            const double u = std::abs(x) - gamma * x;
            h(static_cast<Eigen::Index>(i), g) = h(g, static_cast<Eigen::Index>(i)) = -2.0 * x * u;
        }
    }
    for (std::size_t j = 1; j <= q; ++j) {
        const auto b = static_cast<Eigen::Index>(p + j);
        const auto s = d + static_cast<Eigen::Index>(j - 1);
        h(b, s) = h(s, b) = 1.0;
    }
}

inline void check_lags(const ModelSpec& model, std::span<const double> x_lags, std::span<const double> s_lags) {
    if (x_lags.size() != model.obs_lags()) throw ConstraintError("x_lags has the wrong length");
    if (s_lags.size() != model.state_dim()) throw ConstraintError("s_lags has the wrong length");
    for (double s : s_lags) {
        if (!std::isfinite(s)) throw ConstraintError("lagged volatility state is not finite");
        if (!model.is_egarch() && s < 0.0) throw ConstraintError("lagged squared volatility is negative");
    }
}

inline GDerivatives evaluate_checked(const ThetaVector& theta, std::span<const double> x_lags,
                                     std::span<const double> s_lags, int order) {
    detail::check_lags(theta.model(), x_lags, s_lags);
    GDerivatives out;
    out.resize(theta.model(), order);
    evaluate_g(theta.model(), theta.coefficients().data(), x_lags.data(), s_lags.data(), order, out);
    return out;
}

}  // namespace detail

/// g evaluated at the lags (most recent first). For egarch `s_lags` holds the lagged log squared volatility.
inline double eval_g(const ThetaVector& theta, std::span<const double> x_lags, std::span<const double> s_lags) {
    return detail::evaluate_checked(theta, x_lags, s_lags, 0).value;
}

inline Eigen::VectorXd dg_dtheta(const ThetaVector& theta, std::span<const double> x_lags,
                                 std::span<const double> s_lags) {
    return detail::evaluate_checked(theta, x_lags, s_lags, 1).d_theta;
}

inline Eigen::VectorXd dg_ds(const ThetaVector& theta, std::span<const double> x_lags,
                             std::span<const double> s_lags) {
    return detail::evaluate_checked(theta, x_lags, s_lags, 1).d_s;
}

/// Hessian of g in the stacked argument (theta, s).
inline Eigen::MatrixXd d2g(const ThetaVector& theta, std::span<const double> x_lags, std::span<const double> s_lags) {
    return detail::evaluate_checked(theta, x_lags, s_lags, 2).second;
}

/// 1 - [sum alpha_i E(|Z|-gamma Z)^2 + sum beta_j]; positive means a stationary solution with finite variance.
inline double weak_stationarity_margin(const ThetaVector& theta, const InnovationSpec& innovation) {
    const auto& model = theta.model();
    if (model.is_egarch()) throw UnsupportedError("weak stationarity margin is defined for garch/agarch only");
    const double g = theta.gamma();
    const double second = 1.0 + g * g - 2.0 * g * moment_z_abs_z(innovation).value;
    double s = 0.0;
    for (std::size_t i = 1; i <= model.p; ++i) s += theta.alpha(i) * second;
    for (std::size_t j = 1; j <= model.q; ++j) s += theta.beta(j);
    return 1.0 - s;
}

}  // namespace volqml
