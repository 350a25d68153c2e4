#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace stochvortex {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double pi = std::numbers::pi;
inline constexpr double inv_four_pi = 1.0 / (4.0 * std::numbers::pi);

/// Process exit codes used by the CLI; every library error maps to one.
enum class ExitCode : int {
    ok = 0,
    invalid_config = 2,
    numerical_failure = 3,
    io = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::numerical_failure)
        : std::runtime_error(what), code_(code) {}
    ExitCode exit_code() const noexcept { return code_; }

private:
    ExitCode code_;
};

class InvalidParameter : public Error {
public:
    explicit InvalidParameter(const std::string& what) : Error(what, ExitCode::invalid_config) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what, ExitCode::invalid_config) {}
};

class EmptyProblem : public Error {
public:
    explicit EmptyProblem(const std::string& what) : Error(what, ExitCode::invalid_config) {}
};

class SingularityError : public Error {
public:
    explicit SingularityError(const std::string& what) : Error(what) {}
};

class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& what) : Error(what) {}
};

class QuadratureError : public Error {
public:
    explicit QuadratureError(const std::string& what) : Error(what) {}
};

class EnvelopeError : public Error {
public:
    explicit EnvelopeError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what, ExitCode::io) {}
};

inline bool all_finite(const Vec3& v) { return v.allFinite(); }
inline bool all_finite(const Mat3& m) { return m.allFinite(); }

} // namespace stochvortex
