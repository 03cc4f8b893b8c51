#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "conjassess/errors.hpp"

namespace conjassess::detail {

/// Sign and log of |det(m)| via a fully pivoted LU, safe against over/underflow
/// of the raw determinant across the mixed unit scales in play here.
inline std::pair<double, double> signed_log_det(const Eigen::MatrixXd& m) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    const auto& u = lu.matrixLU();
    double sign = static_cast<double>(lu.permutationP().determinant()) *
                  static_cast<double>(lu.permutationQ().determinant());
    double log_abs = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double d = u(i, i);
        if (d == 0.0)
            return {0.0, -std::numeric_limits<double>::infinity()};
        if (d < 0.0)
            sign = -sign;
        log_abs += std::log(std::fabs(d));
    }
    return {sign, log_abs};
}

/// log|det| of a symmetric positive definite matrix; throws if not SPD.
inline double spd_log_det(const Eigen::MatrixXd& m, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
        throw SingularInformation(what);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        log_det += 2.0 * std::log(llt.matrixL()(i, i));
    return log_det;
}

} // namespace conjassess::detail
