#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "conjassess/detail/parallel.hpp"
#include "conjassess/errors.hpp"
#include "conjassess/geometry.hpp"
#include "conjassess/likelihood.hpp"
#include "conjassess/pivots.hpp"
#include "conjassess/rng.hpp"
#include "conjassess/stats.hpp"

namespace conjassess {

/// Repeated-sampling experiment: simulate observations at a fixed truth, form
/// equi-tailed intervals from each pivot, and record how often the true miss
/// distance escapes them on each side.
struct CalibrationConfig {
    enum class Mode { six_dim, planar };
    Mode mode = Mode::six_dim;

    // six-dimensional experiments
    std::optional<ConjunctionParams> truth;
    std::optional<DispersionSpec> noise;

    // encounter-plane experiments; the truth is xi scaled by cprime, the noise
    // covariance is c2 * diag(variances)
    Eigen::Vector2d xi = Eigen::Vector2d::Zero();
    std::array<double, 2> variances{1.0, 1.0};
    double c2 = 1.0;
    double cprime = 1.0;

    int replicates = 2000;
    std::vector<double> alphas{0.05, 0.025, 0.005};
    std::vector<PivotKind> pivots{PivotKind::wald, PivotKind::root,
                                  PivotKind::modified};
    std::uint64_t seed = 1;
    int workers = 0;
    bool store_pivot_values = false;

    void validate() const {
        if (replicates < 100)
            throw ValidationError("CalibrationConfig: need at least 100 replicates");
        if (alphas.empty())
            throw ValidationError("CalibrationConfig: alphas must be nonempty");
        for (double a : alphas)
            if (!(a > 0.0 && a < 0.5))
                throw ValidationError("CalibrationConfig: alphas must lie in (0, 0.5)");
        if (pivots.empty())
            throw ValidationError("CalibrationConfig: pivot set must be nonempty");
        for (PivotKind k : pivots)
            if (k == PivotKind::modified_bayes)
                throw ValidationError(
                    "CalibrationConfig: calibration covers wald/root/modified only");
        if (mode == Mode::six_dim) {
            if (!truth || !noise)
                throw ValidationError("CalibrationConfig: six_dim mode needs truth and noise");
            truth->validate();
            noise->validate();
        } else {
            if (!(variances[0] > 0.0) || !(variances[1] > 0.0) || !(c2 > 0.0) ||
                !(cprime > 0.0))
                throw ValidationError("CalibrationConfig: invalid planar settings");
        }
    }
};

struct TailRates {
    double left_rate = 0.0;  // fraction of replicates with psi0 below the lower limit
    double right_rate = 0.0; // fraction with psi0 above the upper limit
    double mc_se = 0.0;      // sqrt(alpha (1-alpha) / M)
};

struct CalibrationReport {
    std::vector<double> alphas;
    std::vector<PivotKind> pivots;
    std::vector<std::vector<TailRates>> rates; // [pivot][alpha]
    int replicates = 0;
    int failures = 0;
    double psi0 = 0.0;
    std::vector<std::vector<double>> pivot_values; // [pivot][replicate], when stored
};

/// Draw from the six-dimensional observation model via the Cholesky factor of
/// the covariance.
inline RelativeState simulate_observation(const ConjunctionParams& truth,
                                          const DispersionSpec& noise,
                                          CounterRng& rng) {
    const Vector6d mean = spherical_to_state(truth);
    Eigen::LLT<Matrix6d> llt(noise.covariance);
    if (llt.info() != Eigen::Success)
        throw ValidationError("simulate_observation: covariance not positive definite");
    Vector6d z;
    for (int i = 0; i < 6; ++i)
        z[i] = rng.next_normal();
    const Vector6d y = mean + llt.matrixL() * z;
    return {y.head<3>(), y.tail<3>()};
}

inline Eigen::Vector2d simulate_planar(const Eigen::Vector2d& xi,
                                       const std::array<double, 2>& variances,
                                       CounterRng& rng) {
    return {xi.x() + std::sqrt(variances[0]) * rng.next_normal(),
            xi.y() + std::sqrt(variances[1]) * rng.next_normal()};
}

namespace detail {

struct ReplicateOutcome {
    double wald = 0.0;
    double root = 0.0;
    double modified = 0.0;
    bool ok = false;

    double get(PivotKind k) const {
        switch (k) {
        case PivotKind::wald:
            return wald;
        case PivotKind::root:
            return root;
        default:
            return modified;
        }
    }
};

/// Pivots at psi0 for one simulated six-dimensional observation.
inline ReplicateOutcome sixdim_replicate(const Vector6d& y, const Matrix6d& omega,
                                         double log_det_omega, double psi0) {
    const ConjunctionModel model;
    ReplicateOutcome out;
    const ConjunctionParams mle = state_to_spherical(y);
    const Matrix6d jac_hat = model.eta_jacobian(mle.vector());
    const Matrix6d info_hat = jac_hat.transpose() * omega * jac_hat;
    const double jp = profile_information_impl(info_hat);
    out.wald = wald_pivot(psi0, mle.psi, jp);

    const auto eval_r_rs = [&](double psi) {
        const ProfileFit fit = fit_profile_impl(
            model, y, omega, psi, Eigen::VectorXd(mle.vector().tail<5>()));
        const double r = likelihood_root(psi, fit, mle.psi);
        const double q = attach_sign(
            q_correction_impl(model, y, omega, log_det_omega, fit), r);
        return std::pair<double, double>(r, q);
    };
    auto [r, q] = eval_r_rs(psi0);
    out.root = r;
    if (std::fabs(r) >= 1e-5 && q != 0.0) {
        out.modified = r + std::log(q / r) / r;
    } else {
        // Symmetric continuation across the removable singularity at the MLE.
        const double delta = 1e-3 * std::max(psi0, 1.0);
        double acc = 0.0;
        for (const double off : {-delta, delta}) {
            auto [ro, qo] = eval_r_rs(std::max(psi0 + off, 1e-12));
            acc += ro + std::log(qo / ro) / ro;
        }
        out.modified = 0.5 * acc;
    }
    out.ok = true;
    return out;
}

inline ReplicateOutcome planar_replicate(const Eigen::Vector2d& x,
                                         const std::array<double, 2>& variances,
                                         double psi0) {
    const PivotSet p = planar_pivots(psi0, x, variances);
    ReplicateOutcome out;
    out.wald = p.wald;
    out.root = p.root;
    out.modified = p.modified;
    out.ok = std::isfinite(p.wald) && std::isfinite(p.root) &&
             std::isfinite(p.modified);
    return out;
}

inline CalibrationReport aggregate(const CalibrationConfig& config, double psi0,
                                   const std::vector<ReplicateOutcome>& outcomes) {
    CalibrationReport report;
    report.alphas = config.alphas;
    report.pivots = config.pivots;
    report.replicates = config.replicates;
    report.psi0 = psi0;
    for (const auto& o : outcomes)
        if (!o.ok)
            ++report.failures;
    if (report.failures * 100 > config.replicates)
        throw NumericalFailure("calibration: more than 1% of replicates failed (" +
                               std::to_string(report.failures) + " of " +
                               std::to_string(config.replicates) + ")");
    const int successes = config.replicates - report.failures;

    report.rates.assign(config.pivots.size(), {});
    for (std::size_t p = 0; p < config.pivots.size(); ++p) {
        report.rates[p].resize(config.alphas.size());
        for (std::size_t a = 0; a < config.alphas.size(); ++a) {
            const double z = normal_quantile(1.0 - config.alphas[a]);
            long left = 0, right = 0;
            for (const auto& o : outcomes) {
                if (!o.ok)
                    continue;
                const double v = o.get(config.pivots[p]);
                // psi0 below the lower limit <=> pivot above +z; above the upper
                // limit <=> pivot below -z (the pivots decrease in psi).
                if (v > z)
                    ++left;
                else if (v < -z)
                    ++right;
            }
            TailRates& tr = report.rates[p][a];
            tr.left_rate = static_cast<double>(left) / successes;
            tr.right_rate = static_cast<double>(right) / successes;
            tr.mc_se = std::sqrt(config.alphas[a] * (1.0 - config.alphas[a]) /
                                 static_cast<double>(successes));
        }
    }
    if (config.store_pivot_values) {
        report.pivot_values.assign(config.pivots.size(), {});
        for (std::size_t p = 0; p < config.pivots.size(); ++p) {
            report.pivot_values[p].reserve(successes);
            for (const auto& o : outcomes)
                if (o.ok)
                    report.pivot_values[p].push_back(o.get(config.pivots[p]));
        }
    }
    return report;
}

} // namespace detail

/// Six-dimensional coverage experiment at the configured truth. Left/right tail
/// indicators are evaluated directly from the pivots at the true miss distance,
/// which is equivalent to interval membership because every pivot decreases in psi.
inline CalibrationReport coverage_experiment(const CalibrationConfig& config) {
    config.validate();
    if (config.mode != CalibrationConfig::Mode::six_dim)
        throw ValidationError("coverage_experiment: config is not six_dim");
    const ConjunctionParams& truth = *config.truth;
    const double psi0 = truth.psi;
    const Vector6d mean = spherical_to_state(truth);
    const Matrix6d omega = config.noise->precision();
    const double log_det_omega =
        detail::spd_log_det(omega, "coverage_experiment: precision singular");
    Eigen::LLT<Matrix6d> llt(config.noise->covariance);
    const Matrix6d chol = llt.matrixL();

    const std::size_t n = static_cast<std::size_t>(config.replicates);
    std::vector<detail::ReplicateOutcome> outcomes(n);
    detail::parallel_for(n, config.workers, [&](std::size_t i) {
        CounterRng rng(config.seed, i);
        Vector6d z;
        for (int k = 0; k < 6; ++k)
            z[k] = rng.next_normal();
        const Vector6d y = mean + chol * z;
        try {
            outcomes[i] = detail::sixdim_replicate(y, omega, log_det_omega, psi0);
        } catch (const Error&) {
            outcomes[i].ok = false;
        }
    });
    return detail::aggregate(config, psi0, outcomes);
}

/// Encounter-plane coverage experiment using the closed-form pivots; supports
/// the variance scaling c2 and the position scaling cprime.
inline CalibrationReport planar_coverage_experiment(const CalibrationConfig& config) {
    config.validate();
    if (config.mode != CalibrationConfig::Mode::planar)
        throw ValidationError("planar_coverage_experiment: config is not planar");
    const Eigen::Vector2d xi_eff = config.cprime * config.xi;
    const std::array<double, 2> var_eff{config.c2 * config.variances[0],
                                        config.c2 * config.variances[1]};
    const double psi0 = xi_eff.norm();
    if (!(psi0 > 0.0))
        throw ValidationError("planar_coverage_experiment: true psi must be positive");
    const double sd1 = std::sqrt(var_eff[0]);
    const double sd2 = std::sqrt(var_eff[1]);

    const std::size_t n = static_cast<std::size_t>(config.replicates);
    std::vector<detail::ReplicateOutcome> outcomes(n);
    detail::parallel_for(n, config.workers, [&](std::size_t i) {
        CounterRng rng(config.seed, i);
        const Eigen::Vector2d x(xi_eff.x() + sd1 * rng.next_normal(),
                                xi_eff.y() + sd2 * rng.next_normal());
        try {
            outcomes[i] = detail::planar_replicate(x, var_eff, psi0);
        } catch (const Error&) {
            outcomes[i].ok = false;
        }
    });
    return detail::aggregate(config, psi0, outcomes);
}

/// Sorted pivot samples at the truth, paired with standard normal plotting
/// quantiles, for normal QQ diagnostics.
struct QQExport {
    std::vector<PivotKind> pivots;
    std::vector<std::vector<double>> sorted_values; // [pivot][order statistic]
    std::vector<double> normal_quantiles;
    int failures = 0;
};

inline QQExport qq_export(const CalibrationConfig& config) {
    CalibrationConfig with_store = config;
    with_store.store_pivot_values = true;
    const CalibrationReport report =
        with_store.mode == CalibrationConfig::Mode::planar
            ? planar_coverage_experiment(with_store)
            : coverage_experiment(with_store);
    QQExport qq;
    qq.pivots = report.pivots;
    qq.failures = report.failures;
    qq.sorted_values = report.pivot_values;
    for (auto& v : qq.sorted_values)
        std::sort(v.begin(), v.end());
    const std::size_t m =
        qq.sorted_values.empty() ? 0 : qq.sorted_values.front().size();
    qq.normal_quantiles.resize(m);
    for (std::size_t i = 0; i < m; ++i)
        qq.normal_quantiles[i] = normal_quantile(
            (static_cast<double>(i) + 0.5) / static_cast<double>(m));
    return qq;
}

} // namespace conjassess
