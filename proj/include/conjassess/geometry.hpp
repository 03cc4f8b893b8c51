#pragma once

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "conjassess/errors.hpp"

namespace conjassess {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

enum class LengthUnit { meters, kilometers };

inline double unit_scale(LengthUnit u) {
    return u == LengthUnit::kilometers ? 1.0e3 : 1.0;
}

/// Relative ECI state of the secondary object w.r.t. the primary.
/// Internally always meters and meters/second.
struct RelativeState {
    Eigen::Vector3d position; // m
    Eigen::Vector3d velocity; // m/s

    static RelativeState from(const Eigen::Vector3d& pos, const Eigen::Vector3d& vel,
                              LengthUnit pos_unit = LengthUnit::meters,
                              LengthUnit vel_unit = LengthUnit::meters) {
        RelativeState s{pos * unit_scale(pos_unit), vel * unit_scale(vel_unit)};
        s.validate();
        return s;
    }

    Vector6d vector() const {
        Vector6d y;
        y << position, velocity;
        return y;
    }

    void validate() const {
        if (!position.allFinite() || !velocity.allFinite())
            throw ValidationError("RelativeState: components must be finite");
        if (!(velocity.norm() > 0.0))
            throw ValidationError("RelativeState: velocity norm must be positive");
    }
};

/// 6x6 covariance of the observed relative state, blocked as position / velocity /
/// cross terms. The precision matrix is its inverse.
struct DispersionSpec {
    Matrix6d covariance; // m^2, m^2/s, m^2/s^2 by block

    static DispersionSpec from_matrix(const Matrix6d& cov,
                                      LengthUnit unit = LengthUnit::meters) {
        DispersionSpec d;
        const double s2 = unit_scale(unit) * unit_scale(unit);
        d.covariance = cov * s2;
        d.validate();
        return d;
    }

    /// Isotropic construction: position block tau*sigma2*I, velocity block sigma2*I,
    /// no cross-correlation. sigma2 carries the squared unit of `unit` per second
    /// for the velocity block (km^2 and km^2/s^2 by default).
    static DispersionSpec from_sigma_tau(double sigma2, double tau,
                                         LengthUnit unit = LengthUnit::kilometers) {
        if (!(sigma2 > 0.0) || !(tau > 0.0))
            throw ValidationError("DispersionSpec: sigma2 and tau must be positive");
        const double s2 = unit_scale(unit) * unit_scale(unit);
        DispersionSpec d;
        d.covariance.setZero();
        d.covariance.topLeftCorner<3, 3>() =
            tau * sigma2 * s2 * Eigen::Matrix3d::Identity();
        d.covariance.bottomRightCorner<3, 3>() =
            sigma2 * s2 * Eigen::Matrix3d::Identity();
        return d;
    }

    Matrix6d precision() const {
        Eigen::LLT<Matrix6d> llt(covariance);
        if (llt.info() != Eigen::Success)
            throw ValidationError("DispersionSpec: covariance is not positive definite");
        return llt.solve(Matrix6d::Identity());
    }

    Eigen::Matrix3d position_block() const { return covariance.topLeftCorner<3, 3>(); }
    Eigen::Matrix3d velocity_block() const {
        return covariance.bottomRightCorner<3, 3>();
    }
    Eigen::Matrix3d cross_block() const { return covariance.topRightCorner<3, 3>(); }

    void validate() const {
        if (!covariance.allFinite())
            throw ValidationError("DispersionSpec: covariance must be finite");
        const double scale = covariance.cwiseAbs().maxCoeff();
        const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
        if (!(scale > 0.0) || asym > 1e-12 * scale)
            throw ValidationError("DispersionSpec: covariance must be symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix6d> es(covariance,
                                                   Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
            throw ValidationError(
                "DispersionSpec: covariance must be positive definite");
    }
};

/// Spherical-polar parametrization of the relative state. The miss distance psi
/// is the interest parameter; the remaining five components are nuisance.
struct ConjunctionParams {
    double psi;    // m, >= 0
    double theta1; // rad, [0, pi], polar angle of the position direction
    double phi1;   // rad, [-pi, pi)
    double speed;  // m/s, > 0
    double theta2; // rad, [0, pi], polar angle of the velocity direction
    double phi2;   // rad, [-pi, pi)

    Vector6d vector() const {
        Vector6d v;
        v << psi, theta1, phi1, speed, theta2, phi2;
        return v;
    }

    static ConjunctionParams from_vector(const Vector6d& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5]};
    }

    double cos_beta() const {
        return std::sin(theta1) * std::cos(phi1) * std::sin(theta2) * std::cos(phi2) +
               std::sin(theta1) * std::sin(phi1) * std::sin(theta2) * std::sin(phi2) +
               std::cos(theta1) * std::cos(theta2);
    }

    double sin_beta() const {
        const double c = cos_beta();
        return std::sqrt(std::max(1.0 - c * c, 0.0));
    }

    void validate() const {
        if (!(psi >= 0.0))
            throw ValidationError("ConjunctionParams: psi must be >= 0");
        if (!(speed > 0.0))
            throw ValidationError("ConjunctionParams: speed must be positive");
        if (!(theta1 >= 0.0 && theta1 <= M_PI && theta2 >= 0.0 && theta2 <= M_PI))
            throw ValidationError("ConjunctionParams: theta angles must lie in [0, pi]");
        if (!(phi1 >= -M_PI && phi1 < M_PI && phi2 >= -M_PI && phi2 < M_PI))
            throw ValidationError("ConjunctionParams: phi angles must lie in [-pi, pi)");
    }
};

/// Position of the secondary in the encounter plane: xi = (psi cos(lambda), psi sin(lambda)).
struct PlanarParams {
    double psi;    // m, >= 0
    double lambda; // rad, [0, 2*pi)

    Eigen::Vector2d xi() const {
        return {psi * std::cos(lambda), psi * std::sin(lambda)};
    }

    static PlanarParams from_xi(const Eigen::Vector2d& x) {
        double lam = std::atan2(x.y(), x.x());
        if (lam < 0.0)
            lam += 2.0 * M_PI;
        return {x.norm(), lam};
    }
};

namespace detail {

inline Eigen::Vector3d sph_unit(double theta, double phi) {
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
            std::cos(theta)};
}

constexpr double kSinBetaFloor = 1e-12;

} // namespace detail

/// Minimum separation under linear relative motion, ||mu|| * |sin beta|.
/// Equals min_t ||mu + t nu||; zero for collinear mu, nu.
inline double miss_distance(const Eigen::Vector3d& mu, const Eigen::Vector3d& nu) {
    const double nnu = nu.norm();
    if (!(nnu > 0.0))
        throw DegenerateGeometry("miss_distance: velocity must be nonzero");
    return mu.cross(nu).norm() / nnu;
}

/// Mean map eta(theta): reconstructs the 6-vector (mu, nu) from the spherical
/// parameters, with ||mu|| = psi / |sin beta|.
inline Vector6d spherical_to_state(const ConjunctionParams& p) {
    const Eigen::Vector3d u1 = detail::sph_unit(p.theta1, p.phi1);
    const Eigen::Vector3d u2 = detail::sph_unit(p.theta2, p.phi2);
    const double sb = p.sin_beta();
    Vector6d y;
    if (p.psi > 0.0) {
        if (sb < detail::kSinBetaFloor)
            throw DegenerateGeometry(
                "spherical_to_state: collinear directions with psi > 0");
        y.head<3>() = (p.psi / sb) * u1;
    } else {
        y.head<3>().setZero();
    }
    y.tail<3>() = p.speed * u2;
    return y;
}

/// Inverse of spherical_to_state. Because the model mean is a smooth bijection
/// of the parameters, this is also the overall maximum likelihood estimate for
/// an observed state.
inline ConjunctionParams state_to_spherical(const Eigen::Vector3d& mu,
                                            const Eigen::Vector3d& nu) {
    const double nnu = nu.norm();
    if (!(nnu > 0.0))
        throw DegenerateGeometry("state_to_spherical: velocity must be nonzero");
    const double nmu = mu.norm();
    ConjunctionParams p{};
    p.speed = nnu;
    p.theta2 = std::acos(std::clamp(nu.z() / nnu, -1.0, 1.0));
    p.phi2 = std::atan2(nu.y(), nu.x());
    if (p.phi2 >= M_PI)
        p.phi2 = -M_PI;
    if (nmu > 0.0) {
        const double sb = mu.cross(nu).norm() / (nmu * nnu);
        if (sb < detail::kSinBetaFloor)
            throw DegenerateGeometry(
                "state_to_spherical: position and velocity are collinear");
        p.psi = nmu * sb;
        p.theta1 = std::acos(std::clamp(mu.z() / nmu, -1.0, 1.0));
        p.phi1 = std::atan2(mu.y(), mu.x());
        if (p.phi1 >= M_PI)
            p.phi1 = -M_PI;
    } else {
        p.psi = 0.0;
        p.theta1 = 0.0;
        p.phi1 = 0.0;
    }
    return p;
}

inline ConjunctionParams state_to_spherical(const RelativeState& s) {
    return state_to_spherical(s.position, s.velocity);
}

inline ConjunctionParams state_to_spherical(const Vector6d& y) {
    return state_to_spherical(Eigen::Vector3d(y.head<3>()),
                              Eigen::Vector3d(y.tail<3>()));
}

/// Orthogonal frame whose last axis is the relative velocity direction and whose
/// first two axes diagonalise the projected position covariance.
struct EncounterFrame {
    Eigen::Matrix3d rotation;                 // A = (CV, nu/||nu||)
    Eigen::Matrix<double, 3, 2> planar_basis; // CV
    std::array<double, 2> planar_variances;   // (d1^2, d2^2), d1^2 >= d2^2
    Eigen::Vector2d planar_observation;       // x, filled when built from a state
};

inline EncounterFrame encounter_frame(const Eigen::Vector3d& nu,
                                      const Eigen::Matrix3d& position_cov) {
    const double nnu = nu.norm();
    if (!(nnu > 0.0))
        throw DegenerateGeometry("encounter_frame: velocity must be nonzero");

    // Two directions spanning the plane normal to nu; the canonical pair
    // degenerates when nu is along the x axis, so fall back to a seed on y.
    Eigen::Vector3d b1(0.0, nu.z(), -nu.y());
    if (b1.norm() < 1e-12 * nnu)
        b1 = Eigen::Vector3d(-nu.z(), 0.0, nu.x());
    Eigen::Vector3d b2 = -nu.cross(b1);
    Eigen::Matrix<double, 3, 2> basis;
    basis.col(0) = b1.normalized();
    basis.col(1) = b2.normalized();

    const Eigen::Matrix2d projected =
        basis.transpose() * position_cov * basis;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(projected);
    if (es.info() != Eigen::Success)
        throw NumericalFailure("encounter_frame: eigendecomposition failed");
    // Eigen returns ascending eigenvalues; flip so d1^2 >= d2^2.
    Eigen::Matrix2d v;
    v.col(0) = es.eigenvectors().col(1);
    v.col(1) = es.eigenvectors().col(0);
    const double d1sq = es.eigenvalues()(1);
    const double d2sq = es.eigenvalues()(0);
    if (!(d2sq > 0.0))
        throw ValidationError("encounter_frame: position covariance must be positive definite");

    EncounterFrame f;
    f.planar_basis = basis * v;
    f.rotation.leftCols<2>() = f.planar_basis;
    f.rotation.col(2) = nu / nnu;
    f.planar_variances = {d1sq, d2sq};
    f.planar_observation.setZero();
    return f;
}

inline Eigen::Vector2d project_state(const Eigen::Vector3d& y,
                                     const EncounterFrame& frame) {
    return frame.planar_basis.transpose() * y;
}

inline EncounterFrame encounter_frame(const RelativeState& state,
                                      const DispersionSpec& dispersion) {
    EncounterFrame f = encounter_frame(state.velocity, dispersion.position_block());
    f.planar_observation = project_state(state.position, f);
    return f;
}

} // namespace conjassess
