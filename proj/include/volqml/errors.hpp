#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace volqml {

/// Parameter or configuration value violates a model constraint.
class ConstraintError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Requested quantity does not exist for the given law or model.
class UnsupportedError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A recursion produced a non-finite value or exceeded the divergence cap.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Non-finite intermediate inside a filter pass.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}

    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Every optimizer start failed.
class FitFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Information matrix is singular, so no covariance estimate is available.
class CovarianceUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace volqml
