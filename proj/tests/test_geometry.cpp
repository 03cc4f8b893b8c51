#include <catch2/catch_amalgamated.hpp>

#include "conjassess/geometry.hpp"
#include "conjassess/rng.hpp"
#include "oracles.hpp"

using namespace conjassess;
using Catch::Approx;

namespace {

// Reference conjunction geometries. Angle entries recomputed from the states;
// two catalogued azimuths are self-consistency corrections (the velocity
// azimuth of case A is atan2(6, 10), and the position azimuth of case B takes
// the sign of its y component).
struct CaseGeometry {
    Eigen::Vector3d mu;
    Eigen::Vector3d nu;
    double psi, theta1, phi1, theta2, phi2, psi_tol;
};

const CaseGeometry kCaseA{{-100000.0, -20000.0, 0.0},
                          {10000.0, 6000.0, 1000.0},
                          35267.0, 1.570, -2.944, 1.485, 0.540, 0.5};
const CaseGeometry kCaseB{{-258.909, -635.813, 126.229},
                          {10580.0, -3733.0, 3126.0},
                          698.011, 1.389, -1.958, 1.299, -0.339, 0.005};
const CaseGeometry kCaseC{{-7.678, -9.152, -0.564},
                          {9926.0, -9653.0, -4110.0},
                          11.917, 1.618, -2.269, 1.860, -0.772, 0.005};

constexpr double kAngleTol = 1.5e-3;

} // namespace

TEST_CASE("state_to_spherical reproduces the case-study geometry") {
    for (const auto& c : {kCaseA, kCaseB, kCaseC}) {
        const ConjunctionParams p = state_to_spherical(c.mu, c.nu);
        CHECK(p.psi == Approx(c.psi).margin(c.psi_tol));
        CHECK(p.theta1 == Approx(c.theta1).margin(kAngleTol));
        CHECK(p.phi1 == Approx(c.phi1).margin(kAngleTol));
        CHECK(p.theta2 == Approx(c.theta2).margin(kAngleTol));
        CHECK(p.phi2 == Approx(c.phi2).margin(kAngleTol));
        CHECK(p.speed == Approx(c.nu.norm()));

        const Vector6d back = spherical_to_state(p);
        CHECK((back.head<3>() - c.mu).norm() <= 1e-9 * c.mu.norm());
        CHECK((back.tail<3>() - c.nu).norm() <= 1e-9 * c.nu.norm());
    }
}

TEST_CASE("polar-axis position direction") {
    // theta1 = 0 puts mu on the z axis; with an orthogonal velocity the miss
    // distance equals the current distance.
    ConjunctionParams p{1.0, 0.0, 0.7, 5.0, 0.5 * M_PI, 0.0};
    const Vector6d y = spherical_to_state(p);
    CHECK(y.head<3>().isApprox(Eigen::Vector3d(0, 0, 1), 1e-12));
    CHECK(miss_distance(y.head<3>(), y.tail<3>()) == Approx(1.0));
}

TEST_CASE("round trip over random parameter draws") {
    CounterRng rng(20240901, 0);
    int tested = 0;
    for (int i = 0; i < 10000; ++i) {
        ConjunctionParams p{};
        p.psi = std::pow(10.0, -2.0 + 7.0 * rng.next_double());
        p.theta1 = 0.01 + (M_PI - 0.02) * rng.next_double();
        p.phi1 = -M_PI + 2.0 * M_PI * rng.next_double() * (1.0 - 1e-12);
        p.speed = std::pow(10.0, 1.0 + 3.0 * rng.next_double());
        p.theta2 = 0.01 + (M_PI - 0.02) * rng.next_double();
        p.phi2 = -M_PI + 2.0 * M_PI * rng.next_double() * (1.0 - 1e-12);
        if (p.sin_beta() < 1e-6)
            continue;
        ++tested;
        const Vector6d y = spherical_to_state(p);
        const ConjunctionParams q = state_to_spherical(y);
        const Vector6d pv = p.vector(), qv = q.vector();
        for (int k = 0; k < 6; ++k)
            REQUIRE(qv[k] == Approx(pv[k]).margin(1e-9 * std::max(1.0, std::fabs(pv[k]))));
    }
    CHECK(tested > 9000);
}

TEST_CASE("degenerate geometry is rejected") {
    // collinear with psi > 0 cannot be represented
    ConjunctionParams p{1.0, 0.5, 0.3, 10.0, 0.5, 0.3};
    CHECK_THROWS_AS(spherical_to_state(p), DegenerateGeometry);
    const Eigen::Vector3d nu(1.0, 2.0, 3.0);
    CHECK_THROWS_AS(state_to_spherical(2.0 * nu, nu), DegenerateGeometry);
    CHECK_THROWS_AS(state_to_spherical(Eigen::Vector3d(1, 0, 0),
                                       Eigen::Vector3d::Zero()),
                    DegenerateGeometry);
}

TEST_CASE("miss distance matches a brute-force scan") {
    CHECK(miss_distance(kCaseA.mu, kCaseA.nu) == Approx(35267.0).margin(0.5));
    // collinear: closest approach passes through the origin
    CHECK(miss_distance(Eigen::Vector3d(2, 4, 6), Eigen::Vector3d(1, 2, 3)) ==
          Approx(0.0).margin(1e-12));
    CHECK(miss_distance(Eigen::Vector3d(0, 0, 1), Eigen::Vector3d(1, 0, 0)) ==
          Approx(1.0));

    CounterRng rng(77, 0);
    for (int i = 0; i < 50; ++i) {
        Eigen::Vector3d mu, nu;
        for (int k = 0; k < 3; ++k) {
            mu[k] = rng.next_normal();
            nu[k] = rng.next_normal();
        }
        if (nu.norm() < 0.1)
            continue;
        const double got = miss_distance(mu, nu);
        const double want = oracles::grid_min_distance(mu, nu);
        CHECK(got == Approx(want).margin(1e-6 * std::max(1.0, want)));
    }
}

TEST_CASE("miss distance is invariant to the speed scale") {
    CounterRng rng(78, 0);
    for (int i = 0; i < 20; ++i) {
        Eigen::Vector3d mu, nu;
        for (int k = 0; k < 3; ++k) {
            mu[k] = rng.next_normal();
            nu[k] = rng.next_normal();
        }
        const double c = 0.1 + 10.0 * rng.next_double();
        CHECK(miss_distance(mu, nu) ==
              Approx(miss_distance(mu, c * nu)).epsilon(1e-12));
    }
}

namespace {

Eigen::Matrix3d random_spd3(CounterRng& rng, double scale) {
    Eigen::Matrix3d a;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            a(r, c) = rng.next_normal();
    return scale * (a * a.transpose() + 0.2 * Eigen::Matrix3d::Identity());
}

} // namespace

TEST_CASE("encounter frame is orthogonal and diagonalises the projected covariance") {
    CounterRng rng(79, 0);
    for (int i = 0; i < 40; ++i) {
        Eigen::Vector3d nu;
        for (int k = 0; k < 3; ++k)
            nu[k] = rng.next_normal();
        if (nu.norm() < 0.1)
            continue;
        const Eigen::Matrix3d cov = random_spd3(rng, 4.0);
        const EncounterFrame f = encounter_frame(nu, cov);

        const Eigen::Matrix3d gram = f.rotation.transpose() * f.rotation;
        CHECK((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((f.rotation.col(2) - nu.normalized()).norm() < 1e-12);
        CHECK(f.planar_variances[0] >= f.planar_variances[1]);
        CHECK(f.planar_variances[1] > 0.0);

        const Eigen::Matrix2d proj =
            f.planar_basis.transpose() * cov * f.planar_basis;
        const double scale = proj.cwiseAbs().maxCoeff();
        CHECK(std::fabs(proj(0, 1)) < 1e-10 * scale);
        CHECK(proj(0, 0) == Approx(f.planar_variances[0]).epsilon(1e-10));
        CHECK(proj(1, 1) == Approx(f.planar_variances[1]).epsilon(1e-10));
    }
}

TEST_CASE("encounter frame handles an axis-aligned velocity") {
    const EncounterFrame f =
        encounter_frame(Eigen::Vector3d(0, 0, 1), 4.0 * Eigen::Matrix3d::Identity());
    CHECK(f.planar_variances[0] == Approx(4.0));
    CHECK(f.planar_variances[1] == Approx(4.0));
    // the planar basis spans the xy-plane
    CHECK(std::fabs(f.planar_basis(2, 0)) < 1e-12);
    CHECK(std::fabs(f.planar_basis(2, 1)) < 1e-12);
    // degenerate canonical seed (velocity along x) still yields a valid frame
    const EncounterFrame g =
        encounter_frame(Eigen::Vector3d(1, 0, 0), 4.0 * Eigen::Matrix3d::Identity());
    CHECK((g.rotation.transpose() * g.rotation - Eigen::Matrix3d::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-10);
}

TEST_CASE("case C frame reconstruction") {
    // Rebuild a position covariance from the catalogued frame (columns rounded
    // to two decimals) and check the construction recovers plane and variances.
    Eigen::Matrix3d a_printed;
    a_printed << 0.72, 0.11, -0.69, 0.68, -0.30, 0.67, 0.13, 0.95, 0.28;
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(a_printed);
    Eigen::Matrix3d q = qr.householderQ();
    for (int c = 0; c < 3; ++c)
        if (q.col(c).dot(a_printed.col(c)) < 0.0)
            q.col(c) *= -1.0;
    const Eigen::Vector3d diag(25.1 * 25.1, 11.61 * 11.61, 900.0);
    const Eigen::Matrix3d cov = q * diag.asDiagonal() * q.transpose();

    // the frame of this catalogue entry is built on the opposite relative sign
    const Eigen::Vector3d nu(-9926.0, 9653.0, 4110.0);
    const EncounterFrame f = encounter_frame(nu, cov);
    CHECK(std::sqrt(f.planar_variances[0]) == Approx(25.1).margin(0.02));
    CHECK(std::sqrt(f.planar_variances[1]) == Approx(11.61).margin(0.02));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c)
            CHECK(std::fabs(f.planar_basis(r, c)) ==
                  Approx(std::fabs(a_printed(r, c))).margin(0.02));

    const Eigen::Vector3d y(7.678, 9.152, 0.564);
    const Eigen::Vector2d x = project_state(y, f);
    CHECK(std::fabs(x[0]) == Approx(11.84).margin(0.05));
    CHECK(std::fabs(x[1]) == Approx(1.36).margin(0.05));
    CHECK(x.norm() == Approx(11.9175).margin(0.01));
}

TEST_CASE("projection properties") {
    CounterRng rng(80, 0);
    for (int i = 0; i < 40; ++i) {
        Eigen::Vector3d nu, y;
        for (int k = 0; k < 3; ++k) {
            nu[k] = rng.next_normal();
            y[k] = rng.next_normal();
        }
        if (nu.norm() < 0.1)
            continue;
        const Eigen::Matrix3d cov = random_spd3(rng, 1.0);
        const EncounterFrame f = encounter_frame(nu, cov);

        // contraction
        CHECK(project_state(y, f).norm() <= y.norm() + 1e-12);
        // projection along nu vanishes
        CHECK(project_state(nu, f).norm() < 1e-10 * nu.norm());
        // the planar norm is the miss distance of (y, nu)
        const double md = miss_distance(y, nu);
        CHECK(project_state(y, f).norm() ==
              Approx(md).margin(1e-9 * std::max(1.0, md)));
    }
}

TEST_CASE("dispersion spec validation and construction") {
    const DispersionSpec d = DispersionSpec::from_sigma_tau(0.001, 2.0);
    CHECK(d.position_block()(0, 0) == Approx(2.0 * 0.001 * 1e6));
    CHECK(d.velocity_block()(2, 2) == Approx(0.001 * 1e6));
    CHECK(d.cross_block().cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(d.validate());
    CHECK_NOTHROW(d.precision());

    Matrix6d bad = Matrix6d::Identity();
    bad(0, 0) = -1.0;
    CHECK_THROWS_AS(DispersionSpec::from_matrix(bad), ValidationError);
    Matrix6d asym = Matrix6d::Identity();
    asym(0, 1) = 0.5;
    CHECK_THROWS_AS(DispersionSpec::from_matrix(asym), ValidationError);
}

TEST_CASE("planar params round trip") {
    const PlanarParams p = PlanarParams::from_xi({11.84, -1.36});
    CHECK(p.psi == Approx(std::hypot(11.84, 1.36)));
    CHECK(p.lambda >= 0.0);
    CHECK(p.lambda < 2.0 * M_PI);
    CHECK(p.xi().isApprox(Eigen::Vector2d(11.84, -1.36), 1e-12));
}
