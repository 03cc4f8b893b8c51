#include <catch2/catch_amalgamated.hpp>

#include "conjassess/collision.hpp"
#include "conjassess/rng.hpp"
#include "oracles.hpp"

using namespace conjassess;
using Catch::Approx;

namespace {
const std::array<double, 2> kCaseCVar{25.1 * 25.1, 11.61 * 11.61};
const Eigen::Vector2d kCaseCXi{11.84, -1.36};
} // namespace

TEST_CASE("isotropic centered disk integral has a closed form") {
    for (const auto& [d, r] : {std::pair{2.0, 3.0}, std::pair{11.0, 5.0},
                               std::pair{0.5, 0.2}, std::pair{25.1, 20.0}}) {
        const double got = pc_disk({{0.0, 0.0}, {d * d, d * d}, r});
        const double want = 1.0 - std::exp(-r * r / (2.0 * d * d));
        CHECK(got == Approx(want).margin(1e-10));
    }
}

TEST_CASE("disk integral against the slice oracle") {
    // Case C at both hard-body radii, plus anisotropic off-center variants.
    struct Cfg {
        double cx, cy, v1, v2, r;
    };
    std::vector<Cfg> cfgs{{11.84, -1.36, kCaseCVar[0], kCaseCVar[1], 5.0},
                          {11.84, -1.36, kCaseCVar[0], kCaseCVar[1], 20.0},
                          {0.0, 0.0, 9.0, 1.0, 2.0},
                          {3.0, -4.0, 2.0, 8.0, 6.0},
                          {-20.0, 1.0, 30.0, 5.0, 12.0},
                          {1.5, 1.5, 0.5, 0.3, 1.0}};
    for (const auto& c : cfgs) {
        const double got = pc_disk({{c.cx, c.cy}, {c.v1, c.v2}, c.r});
        const double want = oracles::cartesian_slice_mass(c.cx, c.cy, c.v1, c.v2, c.r);
        CHECK(got == Approx(want).margin(1e-8));
    }
}

TEST_CASE("slice oracle agrees with the closed form") {
    const double want = 1.0 - std::exp(-9.0 / (2.0 * 4.0));
    CHECK(oracles::cartesian_slice_mass(0.0, 0.0, 4.0, 4.0, 3.0) ==
          Approx(want).margin(1e-11));
}

TEST_CASE("midpoint Riemann cross-check at its own resolution") {
    const double got = pc_disk({kCaseCXi, kCaseCVar, 5.0});
    // 4000x4000 midpoint cells leave ~1e-5 boundary error at this geometry.
    const double coarse = oracles::riemann_box_mass(kCaseCXi.x(), kCaseCXi.y(),
                                                    kCaseCVar[0], kCaseCVar[1],
                                                    5.0, 4000);
    CHECK(got == Approx(coarse).margin(5e-5));
}

TEST_CASE("total probability and far-tail limits") {
    CHECK(pc_disk({{0.0, 0.0}, {9.0, 1.0}, 3.0e6}) == Approx(1.0).margin(1e-12));
    const double far = 10.0 * (3.0 + 1.0) + 2.0;
    CHECK(pc_disk({{far, 0.0}, {9.0, 1.0}, 2.0}) < 1e-12);
}

TEST_CASE("disk integral monotonicity") {
    double prev = 0.0;
    for (double r : {1.0, 2.0, 5.0, 10.0, 20.0}) {
        const double p = pc_disk({kCaseCXi, kCaseCVar, r});
        CHECK(p > prev);
        CHECK(p <= 1.0);
        prev = p;
    }
    prev = 1.0;
    const Eigen::Vector2d dir = kCaseCXi.normalized();
    for (double rho : {2.0, 6.0, 12.0, 25.0, 60.0}) {
        const double p = pc_disk({rho * dir, kCaseCVar, 5.0});
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("plug-in estimate delegates to the disk integral") {
    CHECK(pc_estimate(kCaseCXi, kCaseCVar, 5.0) ==
          pc_disk({kCaseCXi, kCaseCVar, 5.0}));
    CHECK_THROWS_AS(pc_disk({{0.0, 0.0}, {1.0, 1.0}, -1.0}), ValidationError);
    CHECK_THROWS_AS(pc_disk({{0.0, 0.0}, {0.0, 1.0}, 1.0}), ValidationError);
}

TEST_CASE("expected norm excess") {
    CHECK(expected_norm_excess({100.0, 0.0}, {1e-30, 1e-30}) ==
          Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(expected_norm_excess({0.0, 0.0}, {1.0, 1.0}),
                    DegenerateGeometry);

    // increasing in the noise scale
    double prev = 0.0;
    for (double c : {0.5, 1.0, 2.0, 4.0}) {
        const double e = expected_norm_excess(
            {11.92, 0.0}, {c * c * kCaseCVar[0], c * c * kCaseCVar[1]});
        CHECK(e > prev);
        prev = e;
    }

    // Monte Carlo mean length at large psi approaches the formula
    const double psi = 500.0;
    const Eigen::Vector2d xi(psi, 0.0);
    CounterRng rng(5150, 0);
    double acc = 0.0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
        const double x1 = xi.x() + 25.1 * rng.next_normal();
        const double x2 = xi.y() + 11.61 * rng.next_normal();
        acc += std::hypot(x1, x2);
    }
    const double mc_excess = acc / n - psi;
    CHECK(mc_excess > 0.0);
    CHECK(mc_excess == Approx(expected_norm_excess(xi, kCaseCVar)).margin(0.15));
}

TEST_CASE("bias study is deterministic and worker-independent") {
    BiasStudyConfig cfg;
    cfg.xi = kCaseCXi;
    cfg.base_variances = kCaseCVar;
    cfg.scale_grid = {0.01, 1.0};
    cfg.replicates = 400;
    cfg.radius = 5.0;
    cfg.seed = 99;
    cfg.workers = 1;
    const auto a = bias_study(cfg);
    cfg.workers = 3;
    const auto b = bias_study(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a[k].pc_values.size() == b[k].pc_values.size());
        for (std::size_t i = 0; i < a[k].pc_values.size(); ++i)
            REQUIRE(a[k].pc_values[i] == b[k].pc_values[i]);
        CHECK(a[k].mean == b[k].mean);
    }
}

TEST_CASE("plug-in estimator is biased downward") {
    BiasStudyConfig cfg;
    cfg.xi = kCaseCXi;
    cfg.base_variances = kCaseCVar;
    cfg.scale_grid = {0.01, 0.1, 1.0, 4.0};
    cfg.replicates = 2000;
    cfg.radius = 5.0;
    cfg.seed = 2;
    const auto rows = bias_study(cfg);
    for (const auto& row : rows) {
        CHECK(row.quantiles[2] < row.pc_truth); // median below the truth
        for (int q = 0; q + 1 < 5; ++q)
            CHECK(row.quantiles[q] <= row.quantiles[q + 1]);
    }
    // roughly a quarter of plug-in values collapse below 1e-4 at c^2 = 0.01
    const auto& small = rows.front();
    const double frac =
        static_cast<double>(std::count_if(small.pc_values.begin(),
                                          small.pc_values.end(),
                                          [](double p) { return p < 1e-4; })) /
        static_cast<double>(small.pc_values.size());
    CHECK(frac > 0.10);
    CHECK(frac < 0.40);
}

TEST_CASE("degenerate center keeps the median below the truth") {
    BiasStudyConfig cfg;
    cfg.xi = {0.0, 0.0};
    cfg.base_variances = kCaseCVar;
    cfg.scale_grid = {0.5, 1.0, 2.0};
    cfg.replicates = 1500;
    cfg.radius = 5.0;
    cfg.seed = 31;
    for (const auto& row : bias_study(cfg))
        CHECK(row.quantiles[2] <= row.pc_truth);
}

TEST_CASE("vanishing noise pins the plug-in values to the truth") {
    BiasStudyConfig cfg;
    cfg.xi = kCaseCXi; // outside the radius-5 disk
    cfg.base_variances = kCaseCVar;
    cfg.scale_grid = {1e-6};
    cfg.replicates = 200;
    cfg.radius = 5.0;
    cfg.seed = 4;
    const auto rows = bias_study(cfg);
    CHECK(rows[0].pc_truth < 1e-12);
    for (double p : rows[0].pc_values)
        CHECK(p < 1e-12);
}
