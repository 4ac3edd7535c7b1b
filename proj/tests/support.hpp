#pragma once

#include "volqml/innovations.hpp"
#include "volqml/models.hpp"
#include "volqml/rng.hpp"
#include "volqml/sre.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace volqml::testing {

/// Central difference of f at x, step scaled to |x_k|.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double rel = 1e-6) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = rel * std::max(1.0, std::abs(x[k]));
        Eigen::VectorXd a = x, b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Central difference of an analytic gradient, symmetrized.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                                   const Eigen::VectorXd& x, double rel = 1e-5) {
    const auto d = x.size();
    Eigen::MatrixXd j(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double h = rel * std::max(1.0, std::abs(x[k]));
        Eigen::VectorXd a = x, b = x;
        a[k] += h;
        b[k] -= h;
        j.col(k) = (g(a) - g(b)) / (2.0 * h);
    }
    return 0.5 * (j + j.transpose());
}

inline double max_rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
    const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-12);
    return (got - want).cwiseAbs().maxCoeff() / scale;
}

/// Random admissible point with comfortable margins (away from region faces).
inline Eigen::VectorXd random_theta(const ModelSpec& m, RngStream& s) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(m.dim()));
    const auto u = [&](double lo, double hi) { return lo + (hi - lo) * s.uniform(); };
    if (m.is_egarch()) {
        const double delta = u(0.1, 0.5);
        c << u(-0.3, 0.1), u(0.3, 0.8), u(-0.8, 0.8) * delta, delta;
        return c;
    }
    c[0] = u(0.05, 0.3);
    const double a_total = u(0.05, 0.3);
    const double b_total = u(0.2, 0.6);
    for (std::size_t i = 1; i <= m.p; ++i) c[static_cast<Eigen::Index>(i)] = a_total / static_cast<double>(m.p) * u(0.5, 1.5);
    for (std::size_t j = 1; j <= m.q; ++j)
        c[static_cast<Eigen::Index>(m.beta_index(j))] = b_total / static_cast<double>(m.q) * u(0.5, 1.5);
    if (m.has_gamma()) c[static_cast<Eigen::Index>(m.gamma_index())] = u(-0.5, 0.5);
    return c;
}

/// Simulated observations with presample, using a short burn-in.
inline std::vector<double> simulated_data(const ThetaVector& theta, std::uint64_t seed, std::size_t n,
                                          const InnovationSpec& z = InnovationSpec::normal()) {
    SimulationOptions opt;
    opt.burn_in = 500;
    opt.certify = false;
    return observations_with_presample(simulate_stationary(theta, z, RngStream(seed, 0), n, opt));
}

}  // namespace volqml::testing
