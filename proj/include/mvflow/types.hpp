#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mvflow {

/// Largest state dimension supported by the fixed-capacity vector types.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Bad configuration: wrong dimensions, invalid parameters, malformed config.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An operation was asked for something it cannot do (wrong method, too large, grid too coarse).
class CapabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or too many diverged replicas.
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Vec zero_vec(int d) { return Vec::Zero(d); }
inline Mat zero_mat(int d) { return Mat::Zero(d, d); }
inline Mat identity_mat(int d) { return Mat::Identity(d, d); }

inline Vec make_vec(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Frobenius norm; the matrix norm used throughout for |J|, |J^{-1}|, |∂V|.
inline double frobenius(const Mat& m) { return m.norm(); }

/// Numerical invertibility criterion |det J| < 1e-12 * |J|_F^d (scale relative).
inline double singularity_threshold(const Mat& j) {
    return 1e-12 * std::pow(frobenius(j), static_cast<double>(j.rows()));
}

inline bool is_invertible(const Mat& j) {
    if (!j.allFinite()) return false;
    return std::abs(j.determinant()) >= singularity_threshold(j) && j.determinant() != 0.0;
}

/// |J^{-1}|_F, or +inf when J fails the invertibility criterion.
inline double inverse_norm(const Mat& j) {
    if (!is_invertible(j)) return std::numeric_limits<double>::infinity();
    return frobenius(j.inverse());
}

}  // namespace mvflow
