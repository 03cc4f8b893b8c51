#pragma once

#include <cmath>
#include <cstring>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "conjassess/detail/bfgs.hpp"
#include "conjassess/detail/linalg.hpp"
#include "conjassess/errors.hpp"
#include "conjassess/geometry.hpp"
#include "conjassess/rng.hpp"

namespace conjassess {

// -----------------------------------------------------------------------------
// Curved-mean Gaussian models: y ~ N(eta(theta), Omega^{-1}) with theta[0] the
// interest parameter (the miss distance) and the rest nuisance. The same profile
// and correction machinery serves both the six-dimensional conjunction model and
// the two-parameter encounter-plane model.
// -----------------------------------------------------------------------------

class CurvedGaussianModel {
  public:
    virtual ~CurvedGaussianModel() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd eta(const Eigen::VectorXd& theta) const = 0;
    virtual Eigen::MatrixXd eta_jacobian(const Eigen::VectorXd& theta) const = 0;
    /// Map nuisance coordinates to an unconstrained optimisation space and back.
    /// `center` is the warm-start nuisance vector; angle transforms are recentred
    /// on it so the map stays well-conditioned away from its branch points.
    virtual Eigen::VectorXd nuisance_to_free(const Eigen::VectorXd& lambda,
                                             const Eigen::VectorXd& center) const = 0;
    virtual Eigen::VectorXd nuisance_from_free(const Eigen::VectorXd& u,
                                               const Eigen::VectorXd& center) const = 0;
    /// Diagonal of d(lambda)/d(u) at the given nuisance point.
    virtual Eigen::VectorXd nuisance_chain(const Eigen::VectorXd& lambda,
                                           const Eigen::VectorXd& center) const = 0;
};

namespace detail {

inline double wrap_angle(double phi) {
    phi = std::remainder(phi, 2.0 * M_PI);
    if (phi >= M_PI)
        phi -= 2.0 * M_PI;
    return phi;
}

} // namespace detail

/// Six-dimensional conjunction model: eta stacks the relative position and
/// velocity reconstructed from the spherical parameters.
class ConjunctionModel final : public CurvedGaussianModel {
  public:
    int dim() const override { return 6; }

    Eigen::VectorXd eta(const Eigen::VectorXd& theta) const override {
        return spherical_to_state(ConjunctionParams::from_vector(theta));
    }

    Eigen::MatrixXd eta_jacobian(const Eigen::VectorXd& theta) const override {
        const double psi = theta[0], th1 = theta[1], ph1 = theta[2];
        const double speed = theta[3], th2 = theta[4], ph2 = theta[5];
        const Eigen::Vector3d u1 = detail::sph_unit(th1, ph1);
        const Eigen::Vector3d u2 = detail::sph_unit(th2, ph2);
        const Eigen::Vector3d du1_dth(std::cos(th1) * std::cos(ph1),
                                      std::cos(th1) * std::sin(ph1), -std::sin(th1));
        const Eigen::Vector3d du1_dph(-std::sin(th1) * std::sin(ph1),
                                      std::sin(th1) * std::cos(ph1), 0.0);
        const Eigen::Vector3d du2_dth(std::cos(th2) * std::cos(ph2),
                                      std::cos(th2) * std::sin(ph2), -std::sin(th2));
        const Eigen::Vector3d du2_dph(-std::sin(th2) * std::sin(ph2),
                                      std::sin(th2) * std::cos(ph2), 0.0);

        const double c = u1.dot(u2);
        const double s2 = std::max(1.0 - c * c, 0.0);
        const double sb = std::sqrt(s2);
        if (sb < detail::kSinBetaFloor)
            throw DegenerateGeometry("eta_jacobian: collinear directions");
        const double m = psi / sb;
        // d/dx of (1 - c^2)^{-1/2} is c (1 - c^2)^{-3/2} dc/dx.
        const double k = psi * c / (s2 * sb);
        const double dc_dth1 = du1_dth.dot(u2);
        const double dc_dph1 = du1_dph.dot(u2);
        const double dc_dth2 = u1.dot(du2_dth);
        const double dc_dph2 = u1.dot(du2_dph);

        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(6, 6);
        jac.block<3, 1>(0, 0) = u1 / sb;
        jac.block<3, 1>(0, 1) = k * dc_dth1 * u1 + m * du1_dth;
        jac.block<3, 1>(0, 2) = k * dc_dph1 * u1 + m * du1_dph;
        jac.block<3, 1>(0, 4) = k * dc_dth2 * u1;
        jac.block<3, 1>(0, 5) = k * dc_dph2 * u1;
        jac.block<3, 1>(3, 3) = u2;
        jac.block<3, 1>(3, 4) = speed * du2_dth;
        jac.block<3, 1>(3, 5) = speed * du2_dph;
        return jac;
    }

    Eigen::VectorXd nuisance_to_free(const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& center) const override {
        const auto logit_theta = [](double th) {
            th = std::clamp(th, 1e-12, M_PI - 1e-12);
            return std::log(th / (M_PI - th));
        };
        Eigen::VectorXd u(5);
        u[0] = logit_theta(lambda[0]);
        u[1] = std::tan(0.5 * (lambda[1] - center[1]));
        u[2] = std::log(lambda[2]);
        u[3] = logit_theta(lambda[3]);
        u[4] = std::tan(0.5 * (lambda[4] - center[4]));
        return u;
    }

    Eigen::VectorXd nuisance_from_free(const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& center) const override {
        Eigen::VectorXd lambda(5);
        lambda[0] = M_PI / (1.0 + std::exp(-u[0]));
        lambda[1] = center[1] + 2.0 * std::atan(u[1]);
        lambda[2] = std::exp(u[2]);
        lambda[3] = M_PI / (1.0 + std::exp(-u[3]));
        lambda[4] = center[4] + 2.0 * std::atan(u[4]);
        return lambda;
    }

    Eigen::VectorXd nuisance_chain(const Eigen::VectorXd& lambda,
                                   const Eigen::VectorXd& center) const override {
        Eigen::VectorXd d(5);
        d[0] = lambda[0] * (M_PI - lambda[0]) / M_PI;
        const double t1 = std::tan(0.5 * (lambda[1] - center[1]));
        d[1] = 2.0 / (1.0 + t1 * t1);
        d[2] = lambda[2];
        d[3] = lambda[3] * (M_PI - lambda[3]) / M_PI;
        const double t2 = std::tan(0.5 * (lambda[4] - center[4]));
        d[4] = 2.0 / (1.0 + t2 * t2);
        return d;
    }
};

/// Known-velocity model in the encounter plane: eta = (psi cos lambda, psi sin lambda).
class PlanarModel final : public CurvedGaussianModel {
  public:
    int dim() const override { return 2; }

    Eigen::VectorXd eta(const Eigen::VectorXd& theta) const override {
        Eigen::VectorXd e(2);
        e << theta[0] * std::cos(theta[1]), theta[0] * std::sin(theta[1]);
        return e;
    }

    Eigen::MatrixXd eta_jacobian(const Eigen::VectorXd& theta) const override {
        Eigen::MatrixXd jac(2, 2);
        const double c = std::cos(theta[1]), s = std::sin(theta[1]);
        jac << c, -theta[0] * s, s, theta[0] * c;
        return jac;
    }

    // lambda is periodic, so the raw coordinate is already unconstrained.
    Eigen::VectorXd nuisance_to_free(const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd&) const override {
        return lambda;
    }
    Eigen::VectorXd nuisance_from_free(const Eigen::VectorXd& u,
                                       const Eigen::VectorXd&) const override {
        return u;
    }
    Eigen::VectorXd nuisance_chain(const Eigen::VectorXd&,
                                   const Eigen::VectorXd&) const override {
        return Eigen::VectorXd::Ones(1);
    }
};

// -----------------------------------------------------------------------------
// Contexts
// -----------------------------------------------------------------------------

/// Observation and precision for the six-dimensional model, with the MLE and
/// log|Omega| cached on construction.
struct LikelihoodContext {
    Vector6d observation;
    Matrix6d precision; // Omega
    ConjunctionParams mle;
    double log_det_precision = 0.0;

    LikelihoodContext(const Vector6d& y, const Matrix6d& omega)
        : observation(y), precision(omega), mle(state_to_spherical(y)) {
        const double scale = precision.cwiseAbs().maxCoeff();
        if (!(scale > 0.0) ||
            (precision - precision.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
            throw ValidationError("LikelihoodContext: precision must be symmetric");
        log_det_precision = detail::spd_log_det(
            precision, "LikelihoodContext: precision must be positive definite");
    }

    LikelihoodContext(const RelativeState& state, const DispersionSpec& dispersion)
        : LikelihoodContext(state.vector(), dispersion.precision()) {}
};

/// Observation and variances for the encounter-plane model.
struct PlanarLikelihoodContext {
    Eigen::Vector2d observation;
    std::array<double, 2> variances;
    PlanarParams mle;

    PlanarLikelihoodContext(const Eigen::Vector2d& x, const std::array<double, 2>& v)
        : observation(x), variances(v), mle(PlanarParams::from_xi(x)) {
        if (!(v[0] > 0.0) || !(v[1] > 0.0))
            throw ValidationError("PlanarLikelihoodContext: variances must be positive");
    }

    Eigen::Matrix2d precision() const {
        Eigen::Matrix2d omega = Eigen::Matrix2d::Zero();
        omega(0, 0) = 1.0 / variances[0];
        omega(1, 1) = 1.0 / variances[1];
        return omega;
    }

    double log_det_precision() const {
        return -std::log(variances[0]) - std::log(variances[1]);
    }
};

/// Constrained fit of the nuisance parameters at fixed psi.
struct ProfileFit {
    double psi = 0.0;
    Eigen::VectorXd lambda_hat;  // nuisance estimate at fixed psi
    double loglik = 0.0;         // profile log-likelihood (0 at the MLE)
    Eigen::MatrixXd info_lambda; // nuisance block of the observed information
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
};

// -----------------------------------------------------------------------------
// Generic machinery
// -----------------------------------------------------------------------------

namespace detail {

inline double gaussian_loglik(const CurvedGaussianModel& model,
                              const Eigen::VectorXd& y, const Eigen::MatrixXd& omega,
                              const Eigen::VectorXd& theta) {
    const Eigen::VectorXd resid = y - model.eta(theta);
    return -0.5 * resid.dot(omega * resid);
}

inline Eigen::VectorXd gaussian_score(const CurvedGaussianModel& model,
                                      const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& omega,
                                      const Eigen::VectorXd& theta) {
    return model.eta_jacobian(theta).transpose() * (omega * (y - model.eta(theta)));
}

/// Observed information -d^2 l / d theta d theta^T. The Gauss-Newton part uses the
/// analytic Jacobian; the curvature part differentiates that Jacobian centrally.
inline Eigen::MatrixXd observed_information_impl(const CurvedGaussianModel& model,
                                                 const Eigen::VectorXd& y,
                                                 const Eigen::MatrixXd& omega,
                                                 const Eigen::VectorXd& theta) {
    const int d = model.dim();
    const Eigen::MatrixXd jac = model.eta_jacobian(theta);
    const Eigen::VectorXd omega_resid = omega * (y - model.eta(theta));
    Eigen::MatrixXd info = jac.transpose() * omega * jac;
    for (int r = 0; r < d; ++r) {
        const double h = 1e-6 * std::max(1.0, std::fabs(theta[r]));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[r] += h;
        tm[r] -= h;
        const Eigen::MatrixXd d_jac =
            (model.eta_jacobian(tp) - model.eta_jacobian(tm)) / (2.0 * h);
        info.col(r) -= d_jac.transpose() * omega_resid;
    }
    return 0.5 * (info + info.transpose());
}

struct PolishOutcome {
    Eigen::VectorXd lambda;
    double f = std::numeric_limits<double>::infinity();
    double free_grad_norm = std::numeric_limits<double>::infinity();
    double decrement = std::numeric_limits<double>::infinity();
    bool converged = false;
};

/// Damped Gauss-Newton refinement in the natural nuisance coordinates. The
/// quasi-Newton phase can stall a little above the gradient tolerance (or park
/// on a transform boundary where the free-coordinate gradient vanishes
/// spuriously); these steps are affine invariant and settle both cases. The
/// Newton decrement makes the convergence test scale-free.
template <class Assemble, class Validate>
PolishOutcome polish_profile(const CurvedGaussianModel& model,
                             const Eigen::VectorXd& y, const Eigen::MatrixXd& omega,
                             const Assemble& assemble, const Validate& valid,
                             Eigen::VectorXd lambda, const Eigen::VectorXd& center,
                             double grad_tol) {
    const int d = model.dim();
    PolishOutcome out;
    double mu = 1e-8;
    double f = -gaussian_loglik(model, y, omega, assemble(lambda));
    for (int it = 0; it < 40; ++it) {
        const Eigen::VectorXd theta = assemble(lambda);
        const Eigen::MatrixXd jac = model.eta_jacobian(theta);
        const Eigen::VectorXd score =
            jac.rightCols(d - 1).transpose() * (omega * (y - model.eta(theta)));
        const Eigen::MatrixXd gn =
            jac.rightCols(d - 1).transpose() * omega * jac.rightCols(d - 1);
        const double gn_scale = gn.diagonal().maxCoeff();
        const Eigen::MatrixXd damped =
            gn + mu * (gn.diagonal().asDiagonal().toDenseMatrix() +
                       1e-12 * gn_scale * Eigen::MatrixXd::Identity(d - 1, d - 1));
        const Eigen::VectorXd step = damped.ldlt().solve(score);
        const double decrement = score.dot(step);
        const Eigen::ArrayXd chain =
            model.nuisance_chain(lambda, center).array();
        const double free_gn = (score.array() * chain).matrix().norm();
        // The attainable gradient floor grows with the curvature, so judge the
        // gradient against the free-coordinate information scale.
        const double grad_scale = std::max(
            1.0, std::sqrt((gn.diagonal().array() * chain.square()).maxCoeff()));
        if (free_gn < out.free_grad_norm) {
            out.lambda = lambda;
            out.f = f;
            out.free_grad_norm = free_gn;
            out.decrement = std::fabs(decrement);
        }
        if (free_gn <= grad_tol * grad_scale && std::fabs(decrement) <= 1e-10) {
            out.lambda = lambda;
            out.f = f;
            out.free_grad_norm = free_gn;
            out.decrement = std::fabs(decrement);
            out.converged = true;
            return out;
        }
        bool accepted = false;
        double scale = 1.0;
        for (int bt = 0; bt < 30; ++bt) {
            const Eigen::VectorXd trial = lambda + scale * step;
            if (valid(trial)) {
                const double f_trial =
                    -gaussian_loglik(model, y, omega, assemble(trial));
                if (std::isfinite(f_trial) && f_trial <= f + 1e-12 * std::fabs(f)) {
                    lambda = trial;
                    f = f_trial;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if (!accepted) {
            mu *= 100.0;
            if (mu > 1e8)
                return out;
        } else {
            mu = std::max(mu * 0.1, 1e-10);
        }
    }
    return out;
}

inline ProfileFit fit_profile_impl(const CurvedGaussianModel& model,
                                   const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& omega, double psi,
                                   const Eigen::VectorXd& lambda_init,
                                   double grad_tol = 1e-8, int max_iterations = 500) {
    const int d = model.dim();
    const Eigen::VectorXd center = lambda_init;

    const auto assemble = [&](const Eigen::VectorXd& lambda) {
        Eigen::VectorXd theta(d);
        theta[0] = psi;
        theta.tail(d - 1) = lambda;
        return theta;
    };
    // Keep natural-coordinate steps inside the open parameter box.
    const auto valid = [&](const Eigen::VectorXd& lambda) {
        if (d == 2)
            return std::isfinite(lambda[0]);
        return lambda[0] > 1e-10 && lambda[0] < M_PI - 1e-10 && lambda[2] > 0.0 &&
               lambda[3] > 1e-10 && lambda[3] < M_PI - 1e-10 &&
               std::isfinite(lambda[1]) && std::isfinite(lambda[4]);
    };
    const auto value = [&](const Eigen::VectorXd& u) {
        try {
            return -gaussian_loglik(model, y, omega,
                                    assemble(model.nuisance_from_free(u, center)));
        } catch (const DegenerateGeometry&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    const auto gradient = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
        const Eigen::VectorXd lambda = model.nuisance_from_free(u, center);
        const Eigen::VectorXd score =
            gaussian_score(model, y, omega, assemble(lambda));
        return (-score.tail(d - 1).array() *
                model.nuisance_chain(lambda, center).array())
            .matrix();
    };

    PolishOutcome best;
    int iterations = 0;
    const Eigen::VectorXd u0 = model.nuisance_to_free(lambda_init, center);
    std::uint64_t perturb_key;
    std::memcpy(&perturb_key, &psi, sizeof(double));
    for (int attempt = 0; attempt <= 5; ++attempt) {
        Eigen::VectorXd start = u0;
        if (attempt > 0) {
            CounterRng rng(perturb_key, static_cast<std::uint64_t>(attempt));
            for (int i = 0; i < start.size(); ++i)
                start[i] += 0.25 * attempt * rng.next_normal();
        }
        const BfgsResult res =
            bfgs_minimize(value, gradient, start, grad_tol, max_iterations);
        iterations += res.iterations;
        PolishOutcome cand =
            polish_profile(model, y, omega, assemble, valid,
                           model.nuisance_from_free(res.x, center), center, grad_tol);
        if (cand.converged ? (!best.converged || cand.f < best.f)
                           : (!best.converged && cand.f < best.f))
            best = std::move(cand);
        if (best.converged)
            break;
    }
    if (!best.converged)
        throw NonConvergence("profile fit did not reach gradient tolerance", -best.f,
                             best.free_grad_norm, iterations);

    ProfileFit fit;
    fit.psi = psi;
    fit.lambda_hat = best.lambda;
    fit.loglik = -best.f;
    fit.converged = true;
    fit.iterations = iterations;
    fit.grad_norm = best.free_grad_norm;
    const Eigen::MatrixXd info =
        observed_information_impl(model, y, omega, assemble(fit.lambda_hat));
    fit.info_lambda = info.bottomRightCorner(d - 1, d - 1);
    return fit;
}

/// Profile information j_p(psi) = |j(theta_psi)| / |j_lambda_lambda(theta_psi)|,
/// evaluated as the Schur complement of the nuisance block.
inline double profile_information_impl(const Eigen::MatrixXd& info) {
    const int d = static_cast<int>(info.rows());
    const Eigen::MatrixXd jll = info.bottomRightCorner(d - 1, d - 1);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(jll);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularInformation("profile information: nuisance block not positive definite");
    const Eigen::VectorXd cross = info.block(1, 0, d - 1, 1);
    const double jp = info(0, 0) - cross.dot(ldlt.solve(cross));
    if (!(jp > 0.0))
        throw SingularInformation("profile information: nonpositive");
    return jp;
}

} // namespace detail

// -----------------------------------------------------------------------------
// Public operations (six-dimensional model unless noted)
// -----------------------------------------------------------------------------

inline double loglik_6d(const ConjunctionParams& params, const LikelihoodContext& ctx) {
    const Vector6d resid = ctx.observation - spherical_to_state(params);
    return -0.5 * resid.dot(ctx.precision * resid);
}

inline double loglik_planar(const PlanarParams& params,
                            const PlanarLikelihoodContext& ctx) {
    const double r1 = ctx.observation.x() - params.psi * std::cos(params.lambda);
    const double r2 = ctx.observation.y() - params.psi * std::sin(params.lambda);
    return -0.5 * (r1 * r1 / ctx.variances[0] + r2 * r2 / ctx.variances[1]);
}

/// Joint log-likelihood over independent observation epochs sharing the miss
/// distance, each with its own nuisance vector.
inline double loglik_multi(double psi,
                           const std::vector<Eigen::Matrix<double, 5, 1>>& nuisances,
                           const std::vector<LikelihoodContext>& observations) {
    if (nuisances.empty() || nuisances.size() != observations.size())
        throw ValidationError("loglik_multi: need matching nonempty epoch lists");
    double total = 0.0;
    for (std::size_t j = 0; j < nuisances.size(); ++j) {
        Vector6d theta;
        theta << psi, nuisances[j];
        total += loglik_6d(ConjunctionParams::from_vector(theta), observations[j]);
    }
    return total;
}

inline Matrix6d eta_jacobian(const ConjunctionParams& params) {
    return ConjunctionModel{}.eta_jacobian(params.vector());
}

inline Matrix6d observed_information(const ConjunctionParams& params,
                                     const LikelihoodContext& ctx) {
    return detail::observed_information_impl(ConjunctionModel{}, ctx.observation,
                                             ctx.precision, params.vector());
}

/// Constrained MLE of the nuisance parameters at fixed psi. Warm-starts from the
/// overall MLE unless an initial value is supplied; retries from perturbed starts
/// before reporting NonConvergence.
inline ProfileFit profile_fit(double psi, const LikelihoodContext& ctx,
                              std::optional<Eigen::Matrix<double, 5, 1>> init = {}) {
    if (!(psi >= 0.0))
        throw ValidationError("profile_fit: psi must be >= 0");
    const Eigen::VectorXd lambda0 =
        init ? Eigen::VectorXd(*init)
             : Eigen::VectorXd(ctx.mle.vector().tail<5>());
    ProfileFit fit = detail::fit_profile_impl(ConjunctionModel{}, ctx.observation,
                                              ctx.precision, psi, lambda0);
    fit.lambda_hat[1] = detail::wrap_angle(fit.lambda_hat[1]);
    fit.lambda_hat[4] = detail::wrap_angle(fit.lambda_hat[4]);
    return fit;
}

inline double profile_information(const ProfileFit& fit, const LikelihoodContext& ctx) {
    Vector6d theta;
    theta << fit.psi, fit.lambda_hat;
    const Matrix6d info = detail::observed_information_impl(
        ConjunctionModel{}, ctx.observation, ctx.precision, theta);
    return detail::profile_information_impl(info);
}

/// Planar counterpart of profile_fit; the single nuisance angle is fitted by the
/// same quasi-Newton machinery.
inline ProfileFit profile_fit_planar(double psi, const PlanarLikelihoodContext& ctx,
                                     std::optional<double> init = {}) {
    if (!(psi >= 0.0))
        throw ValidationError("profile_fit_planar: psi must be >= 0");
    Eigen::VectorXd lambda0(1);
    lambda0[0] = init ? *init : ctx.mle.lambda;
    return detail::fit_profile_impl(PlanarModel{}, ctx.observation, ctx.precision(),
                                    psi, lambda0);
}

} // namespace conjassess
