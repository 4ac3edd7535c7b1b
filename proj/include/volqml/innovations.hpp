#pragma once

#include "volqml/errors.hpp"
#include "volqml/rng.hpp"

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace volqml {

enum class InnovationFamily { normal, student_t, uniform, rademacher };

inline std::string_view to_string(InnovationFamily f) {
    switch (f) {
        case InnovationFamily::normal: return "normal";
        case InnovationFamily::student_t: return "student_t";
        case InnovationFamily::uniform: return "uniform";
        case InnovationFamily::rademacher: return "rademacher";
    }
    return "?";
}

inline InnovationFamily parse_innovation_family(std::string_view s) {
    if (s == "normal") return InnovationFamily::normal;
    if (s == "student_t" || s == "student-t") return InnovationFamily::student_t;
    if (s == "uniform") return InnovationFamily::uniform;
    if (s == "rademacher") return InnovationFamily::rademacher;
    throw ConstraintError("unknown innovation family '" + std::string(s) + "'");
}

/**
 * Law of the i.i.d. innovations, always standardized to mean 0 and variance 1.
 *
 * student_t is the Student-t law with `nu` degrees of freedom rescaled by
 * sqrt((nu-2)/nu); uniform lives on [-sqrt(3), sqrt(3)]. rademacher (+-1 with
 * equal mass) is a two-point law kept for degenerate-case tests; it violates
 * the identifiability requirement and estimation code refuses it.
 */
struct InnovationSpec {
    InnovationFamily family = InnovationFamily::normal;
    double nu = 0.0;

    static InnovationSpec normal() { return {}; }
    static InnovationSpec student_t(double nu) { return {InnovationFamily::student_t, nu}; }
    static InnovationSpec uniform() { return {InnovationFamily::uniform, 0.0}; }
    static InnovationSpec rademacher() { return {InnovationFamily::rademacher, 0.0}; }

    void validate() const {
        if (family == InnovationFamily::student_t && !(nu > 2.0))
            throw ConstraintError("student_t innovations need nu > 2 for unit variance");
    }

    /// False for laws concentrated on two points.
    [[nodiscard]] bool identifiable() const { return family != InnovationFamily::rademacher; }

    [[nodiscard]] bool symmetric() const { return true; }

    friend bool operator==(const InnovationSpec&, const InnovationSpec&) = default;
};

inline double draw_one(const InnovationSpec& spec, RngStream& stream) {
    switch (spec.family) {
        case InnovationFamily::normal: return stream.normal();
        case InnovationFamily::student_t: {
            const double z = stream.normal();
            const double chi2 = 2.0 * stream.gamma(0.5 * spec.nu);
            return z / std::sqrt(chi2 / spec.nu) * std::sqrt((spec.nu - 2.0) / spec.nu);
        }
        case InnovationFamily::uniform: return std::numbers::sqrt3 * (2.0 * stream.uniform() - 1.0);
        case InnovationFamily::rademacher: return (stream.next_u64() >> 63) != 0 ? 1.0 : -1.0;
    }
    return 0.0;
}

/// n i.i.d. draws; advances `stream`.
inline std::vector<double> draw(const InnovationSpec& spec, RngStream& stream, std::size_t n) {
    spec.validate();
    std::vector<double> out(n);
    for (auto& z : out) z = draw_one(spec, stream);
    return out;
}

/// E Z^4 of the standardized law.
inline double moment4(const InnovationSpec& spec) {
    spec.validate();
    switch (spec.family) {
        case InnovationFamily::normal: return 3.0;
        case InnovationFamily::student_t:
            if (!(spec.nu > 4.0)) throw UnsupportedError("student_t fourth moment is infinite for nu <= 4");
            return 3.0 * (spec.nu - 2.0) / (spec.nu - 4.0);
        case InnovationFamily::uniform: return 9.0 / 5.0;
        case InnovationFamily::rademacher: return 1.0;
    }
    return 0.0;
}

struct MomentEstimate {
    double value = 0.0;
    double std_error = 0.0;  // zero for closed forms
};

/// E|Z|. Every supported family has a closed form.
inline MomentEstimate moment_abs(const InnovationSpec& spec) {
    spec.validate();
    switch (spec.family) {
        case InnovationFamily::normal: return {std::sqrt(2.0 / std::numbers::pi), 0.0};
        case InnovationFamily::student_t: {
            const double nu = spec.nu;
            const double log_ratio = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu);
            return {2.0 * std::sqrt(nu - 2.0) * std::exp(log_ratio) / (std::sqrt(std::numbers::pi) * (nu - 1.0)),
                    0.0};
        }
        case InnovationFamily::uniform: return {std::numbers::sqrt3 / 2.0, 0.0};
        case InnovationFamily::rademacher: return {1.0, 0.0};
    }
    return {};
}

/// E(Z|Z|); zero for the (symmetric) supported laws.
inline MomentEstimate moment_z_abs_z(const InnovationSpec& spec) {
    spec.validate();
    return {0.0, 0.0};
}

}  // namespace volqml
