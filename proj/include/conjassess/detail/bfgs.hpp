#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace conjassess::detail {

struct BfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Quasi-Newton minimiser with inverse-Hessian BFGS updates and Armijo
/// backtracking. Gradients are supplied analytically by the caller.
template <class F, class G>
BfgsResult bfgs_minimize(F&& value, G&& gradient, Eigen::VectorXd x0,
                         double grad_tol = 1e-8, int max_iterations = 500) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const int n = static_cast<int>(x0.size());
    MatrixXd h_inv = MatrixXd::Identity(n, n);
    VectorXd x = std::move(x0);
    double f = value(x);
    VectorXd g = gradient(x);

    BfgsResult best{x, f, g.norm(), 0, g.norm() <= grad_tol};
    if (best.converged)
        return best;

    for (int iter = 1; iter <= max_iterations; ++iter) {
        VectorXd dir = -(h_inv * g);
        double slope = g.dot(dir);
        if (!(slope < 0.0)) { // stale curvature estimate; reset to steepest descent
            h_inv.setIdentity();
            dir = -g;
            slope = g.dot(dir);
        }
        double step = 1.0;
        double f_new = f;
        VectorXd x_new = x;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = value(x_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;

        VectorXd g_new = gradient(x_new);
        const VectorXd s = x_new - x;
        const VectorXd yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (iter == 1) // Shanno scaling before the first update
                h_inv *= sy / yv.squaredNorm();
            const double rho = 1.0 / sy;
            const MatrixXd eye = MatrixXd::Identity(n, n);
            h_inv = (eye - rho * s * yv.transpose()) * h_inv *
                        (eye - rho * yv * s.transpose()) +
                    rho * s * s.transpose();
        }
        x = std::move(x_new);
        f = f_new;
        g = std::move(g_new);

        const double gn = g.norm();
        if (gn < best.grad_norm)
            best = {x, f, gn, iter, false};
        if (gn <= grad_tol) {
            best = {x, f, gn, iter, true};
            return best;
        }
    }
    return best;
}

} // namespace conjassess::detail
