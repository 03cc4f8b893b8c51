#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "conjassess/detail/parallel.hpp"
#include "conjassess/errors.hpp"
#include "conjassess/geometry.hpp"
#include "conjassess/rng.hpp"
#include "conjassess/stats.hpp"

namespace conjassess {

/// Mass of N2(center, diag(variances)) inside the disk of radius `radius`
/// around the origin of the encounter plane.
struct DiskIntegralSpec {
    Eigen::Vector2d center;          // m
    std::array<double, 2> variances; // (d1^2, d2^2), m^2
    double radius;                   // m, combined hard-body radius

    void validate() const {
        if (!(radius > 0.0))
            throw ValidationError("DiskIntegralSpec: radius must be positive");
        if (!(variances[0] > 0.0) || !(variances[1] > 0.0))
            throw ValidationError("DiskIntegralSpec: variances must be positive");
        if (!center.allFinite())
            throw ValidationError("DiskIntegralSpec: center must be finite");
    }
};

struct DiskIntegralResult {
    double value = 0.0;
    bool underflow_clamped = false; // value fell below 1e-300 and was set to 0
    int refinements = 0;
    std::size_t nodes = 0;
};

namespace detail {

/// Mean of the density over the ring of radius rho, times rho, by the periodic
/// trapezoid rule (spectrally accurate for this analytic integrand).
class RingIntegrand {
  public:
    RingIntegrand(const DiskIntegralSpec& spec, std::size_t n_phi)
        : cx_(spec.center.x()), cy_(spec.center.y()),
          inv2v1_(0.5 / spec.variances[0]), inv2v2_(0.5 / spec.variances[1]),
          norm_(1.0 / (2.0 * M_PI *
                       std::sqrt(spec.variances[0] * spec.variances[1]))),
          c_(n_phi), s_(n_phi) {
        for (std::size_t j = 0; j < n_phi; ++j) {
            const double phi =
                2.0 * M_PI * static_cast<double>(j) / static_cast<double>(n_phi);
            c_[j] = std::cos(phi);
            s_[j] = std::sin(phi);
        }
    }

    double operator()(double rho) const {
        double ring = 0.0;
        for (std::size_t j = 0; j < c_.size(); ++j) {
            const double dx = rho * c_[j] - cx_;
            const double dy = rho * s_[j] - cy_;
            ring += std::exp(-(dx * dx * inv2v1_ + dy * dy * inv2v2_));
        }
        return rho * ring * norm_ * (2.0 * M_PI / static_cast<double>(c_.size()));
    }

    std::size_t n_phi() const { return c_.size(); }

  private:
    double cx_, cy_, inv2v1_, inv2v2_, norm_;
    std::vector<double> c_, s_;
};

/// Romberg integration of a smooth function over [a, b]; the trapezoid values at
/// successive halvings are extrapolated until two diagonal entries agree to tol.
/// With strict unset the deepest diagonal is returned instead of throwing.
template <class F>
double romberg(const F& f, double a, double b, double tol, int min_level,
               int max_level, std::size_t* evals, bool strict = true) {
    std::vector<double> row;
    double trap = 0.5 * (b - a) * (f(a) + f(b));
    *evals += 2;
    row.push_back(trap);
    double prev_diag = trap;
    for (int k = 1; k <= max_level; ++k) {
        const std::size_t mids = std::size_t{1} << (k - 1);
        const double h = (b - a) / static_cast<double>(mids);
        double sum = 0.0;
        for (std::size_t i = 0; i < mids; ++i)
            sum += f(a + h * (static_cast<double>(i) + 0.5));
        *evals += mids;
        trap = 0.5 * trap + 0.5 * h * sum;
        std::vector<double> next(k + 1);
        next[0] = trap;
        double pow4 = 1.0;
        for (int j = 1; j <= k; ++j) {
            pow4 *= 4.0;
            next[j] = next[j - 1] + (next[j - 1] - row[j - 1]) / (pow4 - 1.0);
        }
        const double diag = next[k];
        if (k == max_level && !strict)
            return diag;
        if (k >= min_level && std::fabs(diag - prev_diag) < tol)
            return diag;
        prev_diag = diag;
        row = std::move(next);
    }
    throw NumericalFailure("pc_disk: radial refinement did not converge");
}

} // namespace detail

/// Disk integral in polar form: periodic-trapezoid rule around each ring with
/// the angular resolution doubled until stable, then Romberg refinement in the
/// radial direction until successive estimates agree to 1e-11 absolute.
inline DiskIntegralResult pc_disk_detailed(const DiskIntegralSpec& spec) {
    spec.validate();
    const double d1 = std::sqrt(spec.variances[0]);
    const double d2 = std::sqrt(spec.variances[1]);
    const double dmax = std::max(d1, d2);
    const double dmin = std::min(d1, d2);
    const double rc = spec.center.norm();

    // The integrand is negligible where the ring is more than ~9.5 sigma from
    // the center, so restrict the radial range accordingly.
    const double band = 9.5 * dmax;
    const double rho_lo = std::max(0.0, rc - band);
    const double rho_hi = std::min(spec.radius, rc + band);
    DiskIntegralResult out;
    if (!(rho_lo < rho_hi))
        return out; // density mass and disk do not overlap at this resolution

    constexpr double kTol = 1e-11;
    constexpr std::size_t kNodeCap = std::size_t{1} << 20; // exp evaluations

    // Angular resolution must track the feature size dmin/rho along the rings;
    // double it until a coarse radial pass stops moving.
    std::size_t n_phi = 16;
    while (n_phi < 4096 && static_cast<double>(n_phi) < 10.0 * rho_hi / dmin)
        n_phi *= 2;
    double coarse_prev = 0.0;
    for (;; n_phi *= 2) {
        const detail::RingIntegrand ring(spec, n_phi);
        std::size_t radial_evals = 0;
        // Fixed radial depth so the comparison isolates the angular error.
        const double coarse = detail::romberg(ring, rho_lo, rho_hi, 0.0, 6, 6,
                                              &radial_evals, /*strict=*/false);
        out.nodes += radial_evals * n_phi;
        ++out.refinements;
        if (out.refinements > 1 && std::fabs(coarse - coarse_prev) < 0.1 * kTol)
            break;
        coarse_prev = coarse;
        if (2 * n_phi * 129 > kNodeCap)
            throw NumericalFailure("pc_disk: node budget exhausted before convergence");
    }

    const detail::RingIntegrand ring(spec, n_phi);
    std::size_t radial_evals = 0;
    const double value =
        detail::romberg(ring, rho_lo, rho_hi, kTol, 4, 14, &radial_evals);
    if (out.nodes + radial_evals * n_phi > kNodeCap)
        throw NumericalFailure("pc_disk: node budget exhausted before convergence");
    out.nodes += radial_evals * n_phi;

    double v = std::clamp(value, 0.0, 1.0);
    if (v > 0.0 && v < 1e-300) {
        v = 0.0;
        out.underflow_clamped = true;
    }
    out.value = v;
    return out;
}

inline double pc_disk(const DiskIntegralSpec& spec) {
    return pc_disk_detailed(spec).value;
}

/// Plug-in estimate: the disk integral re-centered at the observed planar position.
inline double pc_estimate(const Eigen::Vector2d& x,
                          const std::array<double, 2>& variances, double radius) {
    return pc_disk({x, variances, radius});
}

inline double pc_estimate(const Eigen::Vector2d& x, const EncounterFrame& frame,
                          double radius) {
    return pc_disk({x, frame.planar_variances, radius});
}

/// Large-psi mean-length excess of the observed planar position over the true
/// miss distance: psi * sqrt(1 + (d1^2 + d2^2)/psi^2) - psi.
inline double expected_norm_excess(const Eigen::Vector2d& xi,
                                   const std::array<double, 2>& variances) {
    if (!(variances[0] > 0.0) || !(variances[1] > 0.0))
        throw ValidationError("expected_norm_excess: variances must be positive");
    const double psi = xi.norm();
    if (!(psi > 0.0))
        throw DegenerateGeometry("expected_norm_excess: psi must be positive");
    const double ratio = (variances[0] + variances[1]) / (psi * psi);
    return psi * (std::sqrt(1.0 + ratio) - 1.0);
}

/// Repeated-sampling study of the plug-in estimator: for each scale c^2 draw
/// x ~ N2(xi, c^2 diag(d1^2, d2^2)) and summarise pc(x) against pc(xi).
/// With scale_position set, grid entries scale the center instead (c' xi).
struct BiasStudyConfig {
    Eigen::Vector2d xi;
    std::array<double, 2> base_variances;
    std::vector<double> scale_grid;
    int replicates = 20000;
    double radius = 5.0;
    std::uint64_t seed = 1;
    bool scale_position = false;
    int workers = 0;

    void validate() const {
        if (scale_grid.empty())
            throw ValidationError("BiasStudyConfig: scale grid must be nonempty");
        for (double s : scale_grid)
            if (!(s > 0.0))
                throw ValidationError("BiasStudyConfig: scale entries must be positive");
        if (replicates < 1)
            throw ValidationError("BiasStudyConfig: replicates must be >= 1");
        if (!(radius > 0.0))
            throw ValidationError("BiasStudyConfig: radius must be positive");
        if (!(base_variances[0] > 0.0) || !(base_variances[1] > 0.0))
            throw ValidationError("BiasStudyConfig: variances must be positive");
    }
};

struct BiasScaleSummary {
    double scale = 0.0;
    double pc_truth = 0.0; // pc at the true planar position
    double mean = 0.0;
    std::array<double, 5> quantiles{}; // 5%, 25%, 50%, 75%, 95%
    std::vector<double> pc_values;     // per-replicate plug-in values
};

inline std::vector<BiasScaleSummary> bias_study(const BiasStudyConfig& config) {
    config.validate();
    std::vector<BiasScaleSummary> out;
    out.reserve(config.scale_grid.size());
    const std::size_t n = static_cast<std::size_t>(config.replicates);
    for (std::size_t k = 0; k < config.scale_grid.size(); ++k) {
        const double scale = config.scale_grid[k];
        Eigen::Vector2d center = config.xi;
        std::array<double, 2> variances = config.base_variances;
        if (config.scale_position)
            center *= scale;
        else {
            variances[0] *= scale;
            variances[1] *= scale;
        }
        const double sd1 = std::sqrt(variances[0]);
        const double sd2 = std::sqrt(variances[1]);

        BiasScaleSummary summary;
        summary.scale = scale;
        summary.pc_truth = pc_disk({center, variances, config.radius});
        summary.pc_values.assign(n, 0.0);
        detail::parallel_for(n, config.workers, [&](std::size_t i) {
            CounterRng rng(config.seed, (static_cast<std::uint64_t>(k) << 32) | i);
            const Eigen::Vector2d x(center.x() + sd1 * rng.next_normal(),
                                    center.y() + sd2 * rng.next_normal());
            summary.pc_values[i] = pc_disk({x, variances, config.radius});
        });
        summary.mean =
            std::accumulate(summary.pc_values.begin(), summary.pc_values.end(), 0.0) /
            static_cast<double>(n);
        std::vector<double> sorted = summary.pc_values;
        std::sort(sorted.begin(), sorted.end());
        const std::array<double, 5> probs{0.05, 0.25, 0.50, 0.75, 0.95};
        for (std::size_t q = 0; q < probs.size(); ++q)
            summary.quantiles[q] = sample_quantile(sorted, probs[q]);
        out.push_back(std::move(summary));
    }
    return out;
}

} // namespace conjassess
