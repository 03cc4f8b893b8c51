#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "conjassess/detail/linalg.hpp"
#include "conjassess/errors.hpp"
#include "conjassess/likelihood.hpp"
#include "conjassess/stats.hpp"

namespace conjassess {

enum class PivotKind { wald, root, modified, modified_bayes };

inline const char* pivot_name(PivotKind k) {
    switch (k) {
    case PivotKind::wald:
        return "wald";
    case PivotKind::root:
        return "root";
    case PivotKind::modified:
        return "modified";
    case PivotKind::modified_bayes:
        return "modified_bayes";
    }
    return "?";
}

/// All pivots evaluated at one psi. `correction` is |q| carrying the sign of the
/// likelihood root, so that the log ratio in the modified root is well defined.
struct PivotSet {
    double psi = 0.0;
    double wald = 0.0;
    double root = 0.0;
    double correction = 0.0;
    double modified = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> modified_bayes;

    double get(PivotKind k) const {
        switch (k) {
        case PivotKind::wald:
            return wald;
        case PivotKind::root:
            return root;
        case PivotKind::modified:
            return modified;
        case PivotKind::modified_bayes:
            return modified_bayes ? *modified_bayes
                                  : std::numeric_limits<double>::quiet_NaN();
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
};

struct PriorSpec {
    enum class Kind { flat, jeffreys };
    Kind kind = Kind::jeffreys;
};

/// Exclusion window around the MLE inside which the modified root is numerically
/// unreliable for curve work and is interpolated instead.
constexpr double kModifiedRootExclusion = 0.1;

// -----------------------------------------------------------------------------
// Scalar pivot combinators
// -----------------------------------------------------------------------------

/// w(psi) = j_p(psi_hat)^{1/2} (psi_hat - psi).
inline double wald_pivot(double psi, double psi_hat, double profile_info_at_mle) {
    if (!(profile_info_at_mle > 0.0))
        throw SingularInformation("wald_pivot: profile information must be positive");
    return std::sqrt(profile_info_at_mle) * (psi_hat - psi);
}

inline double wald(double psi, const ProfileFit& fit_at_mle,
                   const LikelihoodContext& ctx) {
    return wald_pivot(psi, fit_at_mle.psi, profile_information(fit_at_mle, ctx));
}

/// r(psi) = sign(psi_hat - psi) sqrt(-2 l_p(psi)); the overall maximum is 0.
inline double likelihood_root(double psi, const ProfileFit& profile, double psi_hat) {
    if (profile.loglik > 1e-10)
        throw InvalidProfile("likelihood_root: profile log-likelihood exceeds the maximum");
    const double dev = std::max(-2.0 * profile.loglik, 0.0);
    return std::copysign(std::sqrt(dev), psi_hat - psi);
}

/// r*(psi) = r + log(q/r)/r. Throws Indeterminate inside the exclusion window,
/// where callers interpolate across the gap instead.
inline double modified_root(double root, double correction,
                            double exclusion_threshold = kModifiedRootExclusion) {
    if (!(std::fabs(root) >= exclusion_threshold))
        throw Indeterminate("modified_root: |r| below exclusion threshold");
    if (correction == 0.0 || !(correction / root > 0.0))
        throw Indeterminate("modified_root: q/r must be positive");
    return root + std::log(correction / root) / root;
}

namespace detail {

inline double attach_sign(double magnitude_source, double sign_source) {
    const double mag = std::fabs(magnitude_source);
    if (sign_source == 0.0)
        return 0.0;
    return std::copysign(mag, sign_source);
}

/// Correction q via the curved-exponential-family determinant form:
/// q = |[y - eta(theta_psi), eta_lambda(theta_psi)]| |Omega|^{1/2} |j_ll|^{-1/2}.
inline double q_correction_impl(const CurvedGaussianModel& model,
                                const Eigen::VectorXd& y, const Eigen::MatrixXd& omega,
                                double log_det_omega, const ProfileFit& fit) {
    const int d = model.dim();
    Eigen::VectorXd theta(d);
    theta[0] = fit.psi;
    theta.tail(d - 1) = fit.lambda_hat;
    const Eigen::MatrixXd jac = model.eta_jacobian(theta);
    Eigen::MatrixXd m(d, d);
    m.col(0) = y - model.eta(theta);
    m.rightCols(d - 1) = jac.rightCols(d - 1);
    const auto [sign_m, log_m] = signed_log_det(m);
    if (sign_m == 0.0)
        return 0.0;
    const double log_jll =
        spd_log_det(fit.info_lambda, "q correction: nuisance information singular");
    return sign_m * std::exp(log_m + 0.5 * log_det_omega - 0.5 * log_jll);
}

/// Bayesian correction q_B = dl(theta_psi)/dpsi |j_ll(theta_psi)|^{1/2} |j(theta_hat)|^{-1/2}
/// f(theta_hat)/f(theta_psi); the total derivative reduces to the partial score at
/// the constrained fit (envelope identity). Jeffreys prior has density |det eta_theta|.
inline double q_bayes_impl(const CurvedGaussianModel& model, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& omega,
                           const Eigen::VectorXd& theta_hat, const ProfileFit& fit,
                           const PriorSpec& prior) {
    const int d = model.dim();
    Eigen::VectorXd theta(d);
    theta[0] = fit.psi;
    theta.tail(d - 1) = fit.lambda_hat;
    const double ell_psi = gaussian_score(model, y, omega, theta)[0];
    const double log_jll =
        spd_log_det(fit.info_lambda, "q_bayes: nuisance information singular");
    const Eigen::MatrixXd jac_hat = model.eta_jacobian(theta_hat);
    const double log_jhat = spd_log_det(jac_hat.transpose() * omega * jac_hat,
                                        "q_bayes: information at MLE singular");
    double log_prior_ratio = 0.0;
    if (prior.kind == PriorSpec::Kind::jeffreys) {
        const auto [s_hat, l_hat] = signed_log_det(jac_hat);
        const auto [s_psi, l_psi] = signed_log_det(model.eta_jacobian(theta));
        if (s_hat == 0.0 || s_psi == 0.0)
            throw SingularInformation("q_bayes: Jeffreys prior density vanished");
        log_prior_ratio = l_hat - l_psi;
    }
    return ell_psi * std::exp(0.5 * log_jll - 0.5 * log_jhat + log_prior_ratio);
}

} // namespace detail

/// q(psi) for the six-dimensional model, with the likelihood root's sign attached.
inline double q_frequentist(double psi, const ProfileFit& profile,
                            const LikelihoodContext& ctx) {
    if (!profile.converged)
        throw InvalidProfile("q_frequentist: profile fit did not converge");
    if (profile.psi != psi)
        throw ValidationError("q_frequentist: psi does not match the profile fit");
    const double raw = detail::q_correction_impl(ConjunctionModel{}, ctx.observation,
                                                 ctx.precision, ctx.log_det_precision,
                                                 profile);
    const double root = likelihood_root(psi, profile, ctx.mle.psi);
    return detail::attach_sign(raw, root);
}

inline double q_bayes(double psi, const ProfileFit& profile,
                      const LikelihoodContext& ctx, const PriorSpec& prior) {
    if (!profile.converged)
        throw InvalidProfile("q_bayes: profile fit did not converge");
    if (profile.psi != psi)
        throw ValidationError("q_bayes: psi does not match the profile fit");
    return detail::q_bayes_impl(ConjunctionModel{}, ctx.observation, ctx.precision,
                                ctx.mle.vector(), profile, prior);
}

// -----------------------------------------------------------------------------
// Rayleigh scale model: single observation y with density (y/psi^2) exp(-y^2/(2 psi^2)).
// A scalar validation oracle whose exact significance function is available.
// -----------------------------------------------------------------------------

struct RayleighPivots {
    double wald = 0.0;
    double root = 0.0;
    double correction = 0.0;
    double modified = std::numeric_limits<double>::quiet_NaN();
    double exact_tail = 0.0; // Pr(hat psi >= observed; psi)
};

inline RayleighPivots rayleigh_pivots(double psi, double y_obs) {
    if (!(psi > 0.0) || !(y_obs > 0.0))
        throw ValidationError("rayleigh_pivots: psi and y must be positive");
    const double psi_hat = y_obs / std::sqrt(2.0);
    RayleighPivots p;
    p.wald = 2.0 * (1.0 - psi / psi_hat);
    const double ratio = psi_hat / psi;
    const double dev = 2.0 * (2.0 * std::log(psi / psi_hat) + ratio * ratio - 1.0);
    p.root = std::copysign(std::sqrt(std::max(dev, 0.0)), psi_hat - psi);
    p.correction = detail::attach_sign(1.0 - ratio * ratio, p.root);
    if (std::fabs(p.root) > 1e-12 && p.correction != 0.0)
        p.modified = p.root + std::log(p.correction / p.root) / p.root;
    p.exact_tail = std::exp(-y_obs * y_obs / (2.0 * psi * psi));
    return p;
}

// -----------------------------------------------------------------------------
// Encounter-plane closed forms
// -----------------------------------------------------------------------------

namespace detail {

/// Constrained angle estimate at fixed psi: Newton from the MLE angle with a
/// coarse-scan fallback, verified to land on a maximum.
inline double planar_profile_lambda(double psi, const PlanarLikelihoodContext& ctx) {
    const double x1 = ctx.observation.x(), x2 = ctx.observation.y();
    const double v1 = ctx.variances[0], v2 = ctx.variances[1];
    if (psi == 0.0)
        return ctx.mle.lambda; // likelihood is flat in lambda at psi = 0

    const auto grad = [&](double lam) {
        const double c = std::cos(lam), s = std::sin(lam);
        return -psi * s * (x1 - psi * c) / v1 + psi * c * (x2 - psi * s) / v2;
    };
    const auto curvature = [&](double lam) { // second derivative of the log-likelihood
        const double c = std::cos(lam), s = std::sin(lam);
        return -psi * ((x1 * c - psi * std::cos(2.0 * lam)) / v1 +
                       (x2 * s + psi * std::cos(2.0 * lam)) / v2);
    };
    const double scale =
        psi * (std::fabs(x1) + std::fabs(x2) + psi) * (1.0 / v1 + 1.0 / v2);
    const double tol = 1e-13 * std::max(1.0, scale);

    const auto newton_from = [&](double lam) -> std::optional<double> {
        for (int it = 0; it < 60; ++it) {
            const double g = grad(lam);
            if (std::fabs(g) <= tol)
                return (curvature(lam) < 0.0) ? std::optional<double>(lam) : std::nullopt;
            const double h = curvature(lam);
            if (!(h < 0.0))
                return std::nullopt;
            double step = -g / h;
            if (std::fabs(step) > 0.5)
                step = std::copysign(0.5, step);
            lam += step;
        }
        return std::nullopt;
    };

    if (auto lam = newton_from(ctx.mle.lambda))
        return *lam;
    // Coarse global scan, then polish in the located basin.
    double best_lam = ctx.mle.lambda;
    double best_val = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 256; ++k) {
        const double lam = 2.0 * M_PI * k / 256.0;
        const double val = loglik_planar({psi, lam}, ctx);
        if (val > best_val) {
            best_val = val;
            best_lam = lam;
        }
    }
    if (auto lam = newton_from(best_lam))
        return *lam;
    throw NonConvergence("planar profile angle did not converge", best_val,
                         std::fabs(grad(best_lam)), 60);
}

/// Profile information at the planar MLE via the 2x2 information matrix.
inline double planar_profile_info_at_mle(const PlanarLikelihoodContext& ctx) {
    const double psi_hat = ctx.mle.psi;
    if (!(psi_hat > 0.0))
        throw SingularInformation("planar profile information: psi_hat = 0");
    const double c = std::cos(ctx.mle.lambda), s = std::sin(ctx.mle.lambda);
    const double v1 = ctx.variances[0], v2 = ctx.variances[1];
    const double j11 = c * c / v1 + s * s / v2;
    const double j12 = psi_hat * s * c * (1.0 / v2 - 1.0 / v1);
    const double j22 = psi_hat * psi_hat * (s * s / v1 + c * c / v2);
    return j11 - j12 * j12 / j22;
}

inline double planar_root_closed(double psi, double lambda_profile,
                                 const PlanarLikelihoodContext& ctx) {
    const double r1 = ctx.observation.x() - psi * std::cos(lambda_profile);
    const double r2 = ctx.observation.y() - psi * std::sin(lambda_profile);
    const double dev = r1 * r1 / ctx.variances[0] + r2 * r2 / ctx.variances[1];
    return std::copysign(std::sqrt(dev), ctx.mle.psi - psi);
}

inline double planar_q_closed(double psi, double lambda_profile,
                              const PlanarLikelihoodContext& ctx) {
    if (psi == 0.0)
        return 0.0;
    const double x1 = ctx.observation.x(), x2 = ctx.observation.y();
    const double v1 = ctx.variances[0], v2 = ctx.variances[1];
    const double c = std::cos(lambda_profile), s = std::sin(lambda_profile);
    const double c2 = std::cos(2.0 * lambda_profile);
    const double num = std::sqrt(psi) * (x1 * c + x2 * s - psi);
    const double den_sq = v2 * (x1 * c - psi * c2) + v1 * (x2 * s + psi * c2);
    if (!(den_sq > 0.0))
        throw SingularInformation("planar q: nonpositive curvature at the profile fit");
    return num / std::sqrt(den_sq);
}

} // namespace detail

/// Closed-form pivots for the encounter-plane model.
inline PivotSet planar_pivots(double psi, const Eigen::Vector2d& x,
                              const std::array<double, 2>& variances) {
    if (!(psi >= 0.0))
        throw ValidationError("planar_pivots: psi must be >= 0");
    const PlanarLikelihoodContext ctx(x, variances);
    PivotSet p;
    p.psi = psi;
    p.wald = wald_pivot(psi, ctx.mle.psi, detail::planar_profile_info_at_mle(ctx));
    const double lam = detail::planar_profile_lambda(psi, ctx);
    p.root = detail::planar_root_closed(psi, lam, ctx);
    p.correction = detail::attach_sign(detail::planar_q_closed(psi, lam, ctx), p.root);

    const auto direct = [](double root, double corr) {
        return root + std::log(corr / root) / root;
    };
    if (p.correction != 0.0 && std::fabs(p.root) >= 1e-5) {
        p.modified = direct(p.root, p.correction);
    } else if (p.correction != 0.0 && p.root != 0.0) {
        // Too close to the MLE for the log ratio; take the symmetric limit from
        // nearby psi values instead.
        const double delta = 1e-3 * std::max(ctx.mle.psi, 1.0);
        double acc = 0.0;
        for (const double off : {-delta, delta}) {
            const double ps = std::max(psi + off, 1e-12);
            const double lo = detail::planar_profile_lambda(ps, ctx);
            const double ro = detail::planar_root_closed(ps, lo, ctx);
            const double qo =
                detail::attach_sign(detail::planar_q_closed(ps, lo, ctx), ro);
            acc += direct(ro, qo);
        }
        p.modified = 0.5 * acc;
    }
    return p;
}

} // namespace conjassess
