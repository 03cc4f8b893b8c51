#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "conjassess/errors.hpp"
#include "conjassess/likelihood.hpp"
#include "conjassess/pivots.hpp"
#include "conjassess/spline.hpp"
#include "conjassess/stats.hpp"

namespace conjassess {

// -----------------------------------------------------------------------------
// Pivot evaluation engine: one object that can evaluate every pivot at any psi,
// for either the six-dimensional model or the encounter-plane model.
// -----------------------------------------------------------------------------

class PivotEngine {
  public:
    explicit PivotEngine(LikelihoodContext ctx, std::optional<PriorSpec> prior = {})
        : ctx_(std::move(ctx)), prior_(prior) {
        const auto& c = std::get<LikelihoodContext>(ctx_);
        psi_hat_ = c.mle.psi;
        const Matrix6d info =
            eta_jacobian(c.mle).transpose() * c.precision * eta_jacobian(c.mle);
        jp_mle_ = detail::profile_information_impl(info);
    }

    explicit PivotEngine(PlanarLikelihoodContext ctx, std::optional<PriorSpec> prior = {})
        : ctx_(std::move(ctx)), prior_(prior) {
        const auto& c = std::get<PlanarLikelihoodContext>(ctx_);
        psi_hat_ = c.mle.psi;
        jp_mle_ = detail::planar_profile_info_at_mle(c);
    }

    double psi_hat() const { return psi_hat_; }
    double se_psi_hat() const { return 1.0 / std::sqrt(jp_mle_); }
    bool planar() const { return std::holds_alternative<PlanarLikelihoodContext>(ctx_); }
    bool bayes_enabled() const { return prior_.has_value(); }

    /// All pivots at psi. `warm` seeds the nuisance fit; `nuisance_out` receives
    /// the fitted nuisance for continuation along a grid.
    PivotSet evaluate(double psi, const Eigen::VectorXd* warm = nullptr,
                      Eigen::VectorXd* nuisance_out = nullptr) const {
        return evaluate_impl(psi, warm, nuisance_out, true);
    }

    /// Single pivot value at psi (Wald needs no fit; the others profile first).
    double pivot_at(double psi, PivotKind kind,
                    const Eigen::VectorXd* warm = nullptr) const {
        if (kind == PivotKind::wald)
            return wald_pivot(psi, psi_hat_, jp_mle_);
        return evaluate(psi, warm).get(kind);
    }

  private:
    PivotSet evaluate_impl(double psi, const Eigen::VectorXd* warm,
                           Eigen::VectorXd* nuisance_out, bool allow_stabilize) const {
        PivotSet p;
        p.psi = psi;
        p.wald = wald_pivot(psi, psi_hat_, jp_mle_);

        const bool is_planar = planar();
        const CurvedGaussianModel& model =
            is_planar ? static_cast<const CurvedGaussianModel&>(planar_model_)
                      : static_cast<const CurvedGaussianModel&>(sixdim_model_);
        Eigen::VectorXd y;
        Eigen::MatrixXd omega;
        Eigen::VectorXd theta_hat;
        double log_det_omega;
        if (is_planar) {
            const auto& c = std::get<PlanarLikelihoodContext>(ctx_);
            y = c.observation;
            omega = c.precision();
            log_det_omega = c.log_det_precision();
            theta_hat = Eigen::Vector2d(c.mle.psi, c.mle.lambda);
        } else {
            const auto& c = std::get<LikelihoodContext>(ctx_);
            y = c.observation;
            omega = c.precision;
            log_det_omega = c.log_det_precision;
            theta_hat = c.mle.vector();
        }

        const Eigen::VectorXd lambda0 =
            (warm && warm->size() == model.dim() - 1)
                ? *warm
                : Eigen::VectorXd(theta_hat.tail(model.dim() - 1));
        const ProfileFit fit = detail::fit_profile_impl(model, y, omega, psi, lambda0);
        if (nuisance_out)
            *nuisance_out = fit.lambda_hat;

        p.root = likelihood_root(psi, fit, psi_hat_);
        p.correction = detail::attach_sign(
            detail::q_correction_impl(model, y, omega, log_det_omega, fit), p.root);

        if (p.correction != 0.0 && std::fabs(p.root) >= 1e-5) {
            p.modified = p.root + std::log(p.correction / p.root) / p.root;
        } else if (allow_stabilize && p.root != 0.0) {
            p.modified = stabilized_modified(psi, lambda0);
        }

        if (prior_) {
            const double qb = detail::attach_sign(
                detail::q_bayes_impl(model, y, omega, theta_hat, fit, *prior_), p.root);
            if (qb != 0.0 && std::fabs(p.root) >= 1e-5)
                p.modified_bayes = p.root + std::log(qb / p.root) / p.root;
        }
        return p;
    }

    /// Modified root too close to the MLE for the direct log ratio: take the mean
    /// of direct evaluations at symmetric neighbouring psi values.
    double stabilized_modified(double psi, const Eigen::VectorXd& warm) const {
        const double delta = 1e-3 * std::max({psi_hat_, psi, 1e-6});
        double acc = 0.0;
        int used = 0;
        for (const double off : {-delta, delta}) {
            const double ps = std::max(psi + off, 1e-12);
            const PivotSet q = evaluate_impl(ps, &warm, nullptr, false);
            if (std::isfinite(q.modified)) {
                acc += q.modified;
                ++used;
            }
        }
        return used > 0 ? acc / used : std::numeric_limits<double>::quiet_NaN();
    }

    std::variant<LikelihoodContext, PlanarLikelihoodContext> ctx_;
    std::optional<PriorSpec> prior_;
    double psi_hat_ = 0.0;
    double jp_mle_ = 0.0;
    ConjunctionModel sixdim_model_;
    PlanarModel planar_model_;
};

// -----------------------------------------------------------------------------
// Grid and curve
// -----------------------------------------------------------------------------

constexpr int kDefaultGridSize = 80;

/// Grid alpha used when building curves, kept below any requested level so the
/// interval endpoints stay interior to the grid.
inline double default_grid_alpha(double requested_alpha) {
    return std::min(requested_alpha, 1e-5) / 2.0;
}

/// Non-uniform grid over [max(psi_hat - z*se, 0), psi_hat + z*se] with square-law
/// spacing (denser toward small psi) and psi_hat as an interior point.
inline std::vector<double> build_grid(double psi_hat, double se, double alpha,
                                      int n_points) {
    if (!(se > 0.0))
        throw ValidationError("build_grid: standard error must be positive");
    if (n_points < 20)
        throw ValidationError("build_grid: need at least 20 points");
    if (!(alpha > 0.0 && alpha < 0.5))
        throw ValidationError("build_grid: alpha must lie in (0, 0.5)");
    const double z = normal_quantile(1.0 - alpha);
    const double lo = std::max(psi_hat - z * se, 0.0);
    const double hi = psi_hat + z * se;
    std::vector<double> grid(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(n_points - 1);
        grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * u * u;
    }
    // Snap the nearest point onto psi_hat so the curve has an exact anchor.
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (std::fabs(grid[i] - psi_hat) < std::fabs(grid[nearest] - psi_hat))
            nearest = i;
    grid[nearest] = psi_hat;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i] < grid[i + 1]))
            throw NumericalFailure("build_grid: grid is not strictly increasing");
    return grid;
}

/// Tabulated pivots over a psi grid.
struct PivotCurve {
    std::vector<double> grid;
    std::vector<PivotSet> pivots;
    std::vector<std::size_t> excluded; // unreliable modified-root entries
    double psi_hat = 0.0;
    double se_psi_hat = 0.0;
    std::size_t hat_index = 0;
    std::vector<Eigen::VectorXd> nuisance_fits; // warm starts for refinement

    bool is_excluded(std::size_t i) const {
        return std::binary_search(excluded.begin(), excluded.end(), i);
    }
};

/// Evaluate every pivot on the grid, warm-starting each profile fit from its
/// inner neighbour (continuation outward from the MLE on each side).
inline PivotCurve evaluate_curve(const std::vector<double>& grid,
                                 const PivotEngine& engine) {
    if (grid.size() < 4)
        throw ValidationError("evaluate_curve: grid too small");
    PivotCurve curve;
    curve.grid = grid;
    curve.psi_hat = engine.psi_hat();
    curve.se_psi_hat = engine.se_psi_hat();
    curve.pivots.resize(grid.size());
    curve.nuisance_fits.resize(grid.size());

    std::size_t hat = 0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (std::fabs(grid[i] - curve.psi_hat) < std::fabs(grid[hat] - curve.psi_hat))
            hat = i;
    if (std::fabs(grid[hat] - curve.psi_hat) >
        1e-9 * std::max(1.0, std::fabs(curve.psi_hat)))
        throw ValidationError("evaluate_curve: grid must contain the MLE");
    curve.hat_index = hat;

    const auto run_chain = [&](std::size_t start, bool leftward) {
        const Eigen::VectorXd* warm = nullptr;
        std::size_t i = start;
        while (true) {
            try {
                curve.pivots[i] =
                    engine.evaluate(grid[i], warm, &curve.nuisance_fits[i]);
            } catch (const NonConvergence& e) {
                throw NonConvergence("curve evaluation failed at psi = " +
                                         std::to_string(grid[i]) + ": " + e.what(),
                                     e.best_loglik, e.grad_norm, e.iterations);
            }
            warm = &curve.nuisance_fits[i];
            if (leftward) {
                if (i == 0)
                    break;
                --i;
            } else {
                if (i + 1 == grid.size())
                    break;
                ++i;
            }
        }
    };
    run_chain(hat, true);
    run_chain(hat, false);

    // The likelihood root must decrease along the grid; anything else signals a
    // failed profile fit.
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(curve.pivots[i + 1].root < curve.pivots[i].root + 1e-9))
            throw NumericalFailure("evaluate_curve: likelihood root is not decreasing at psi = " +
                                   std::to_string(grid[i + 1]));

    double max_abs_root = 0.0;
    for (const auto& p : curve.pivots)
        max_abs_root = std::max(max_abs_root, std::fabs(p.root));
    const double outlier = 3.0 * max_abs_root;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const PivotSet& p = curve.pivots[i];
        const bool bad_window = std::fabs(p.root) < kModifiedRootExclusion;
        const bool bad_value = !std::isfinite(p.modified) ||
                               std::fabs(p.modified) > outlier;
        const bool degenerate_origin = grid[i] < 1e-12;
        if (bad_window || bad_value || degenerate_origin)
            curve.excluded.push_back(i);
    }
    return curve;
}

namespace detail {

struct CurveSegment {
    std::vector<double> pivot_values; // increasing
    std::vector<double> psi_values;
    std::vector<std::size_t> indices;
};

/// Points usable for inverting the given pivot: exclusions applied for the
/// modified kinds, then trimmed to the maximal monotone run enclosing the MLE.
inline CurveSegment monotone_segment(const PivotCurve& curve, PivotKind kind) {
    const bool apply_exclusions =
        kind == PivotKind::modified || kind == PivotKind::modified_bayes;
    std::vector<double> pv, psi;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < curve.grid.size(); ++i) {
        if (apply_exclusions && curve.is_excluded(i))
            continue;
        const double v = curve.pivots[i].get(kind);
        if (!std::isfinite(v))
            continue;
        pv.push_back(v);
        psi.push_back(curve.grid[i]);
        idx.push_back(i);
    }
    if (pv.size() < 4)
        throw OutOfRange("curve inversion: too few usable grid points");

    // Center on the smallest |pivot| and extend while strictly decreasing in psi.
    std::size_t c = 0;
    for (std::size_t i = 1; i < pv.size(); ++i)
        if (std::fabs(pv[i]) < std::fabs(pv[c]))
            c = i;
    std::size_t lo = c, hi = c;
    while (lo > 0 && pv[lo - 1] > pv[lo])
        --lo;
    while (hi + 1 < pv.size() && pv[hi + 1] < pv[hi])
        ++hi;
    CurveSegment seg;
    for (std::size_t i = hi + 1; i-- > lo;) { // reversed: pivot ascending
        seg.pivot_values.push_back(pv[i]);
        seg.psi_values.push_back(psi[i]);
        seg.indices.push_back(idx[i]);
    }
    if (seg.pivot_values.size() < 2)
        throw OutOfRange("curve inversion: monotone segment too short");
    return seg;
}

} // namespace detail

/// Solve pivot(psi) = target by spline interpolation of psi against the pivot,
/// refined against the exact pivot when an engine is supplied and the target is
/// outside the exclusion window.
inline double invert_curve(const PivotCurve& curve, PivotKind kind, double target,
                           const PivotEngine* engine = nullptr) {
    const detail::CurveSegment seg = detail::monotone_segment(curve, kind);
    if (target < seg.pivot_values.front() || target > seg.pivot_values.back())
        throw OutOfRange("curve inversion: target outside the tabulated pivot range");
    const NaturalCubicSpline spline(seg.pivot_values, seg.psi_values);
    double psi = spline(target);

    if (engine == nullptr || std::fabs(target) <= kModifiedRootExclusion)
        return psi;

    // Secant refinement against the exact pivot, warm-started from the nearest
    // tabulated nuisance fit.
    const Eigen::VectorXd* warm = nullptr;
    {
        std::size_t nearest = 0;
        for (std::size_t i = 1; i < curve.grid.size(); ++i)
            if (std::fabs(curve.grid[i] - psi) < std::fabs(curve.grid[nearest] - psi))
                nearest = i;
        if (curve.nuisance_fits[nearest].size() > 0)
            warm = &curve.nuisance_fits[nearest];
    }
    double p_prev = engine->pivot_at(psi, kind, warm);
    if (std::fabs(p_prev - target) <= 1e-4)
        return psi;
    double psi_prev = psi;
    psi = psi + (target - p_prev) * spline.derivative(target);
    for (int it = 0; it < 8; ++it) {
        psi = std::max(psi, 0.0);
        const double p = engine->pivot_at(psi, kind, warm);
        if (std::fabs(p - target) <= 1e-4)
            return psi;
        const double denom = p - p_prev;
        double next = (std::fabs(denom) > 0.0)
                          ? psi + (target - p) * (psi - psi_prev) / denom
                          : psi;
        psi_prev = psi;
        p_prev = p;
        psi = next;
    }
    throw NumericalFailure("invert_curve: refinement did not reach tolerance");
}

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.0; // 1 - 2*alpha
    PivotKind pivot_kind = PivotKind::root;
    bool lower_clamped = false;
};

namespace detail {

inline PivotCurve extend_curve_right(const PivotCurve& curve,
                                     const PivotEngine& engine) {
    const double hi_old = curve.grid.back();
    const double hi_new = engine.psi_hat() + 2.0 * (hi_old - engine.psi_hat());
    const double span = hi_new - curve.grid.front();
    if (!(span > 0.0))
        throw OutOfRange("extend_curve_right: cannot extend");
    std::vector<double> grid = curve.grid;
    const int extra = 24;
    for (int i = 1; i <= extra; ++i)
        grid.push_back(hi_old + (hi_new - hi_old) * static_cast<double>(i) /
                                    static_cast<double>(extra));
    return evaluate_curve(grid, engine);
}

} // namespace detail

/// Equi-tailed interval from the pivot curve: endpoints solve pivot = +/- z_{1-alpha}.
/// An unsolvable lower endpoint clamps to zero; an unsolvable upper endpoint
/// triggers one rightward grid extension before giving up.
inline ConfidenceInterval confidence_interval(const PivotCurve& curve, double alpha,
                                              PivotKind kind,
                                              const PivotEngine* engine = nullptr) {
    if (!(alpha > 0.0 && alpha < 0.5))
        throw ValidationError("confidence_interval: alpha must lie in (0, 0.5)");
    const double z = normal_quantile(1.0 - alpha);
    ConfidenceInterval ci;
    ci.level = 1.0 - 2.0 * alpha;
    ci.pivot_kind = kind;
    try {
        ci.lower = std::max(invert_curve(curve, kind, z, engine), 0.0);
    } catch (const OutOfRange&) {
        ci.lower = 0.0;
        ci.lower_clamped = true;
    }
    try {
        ci.upper = invert_curve(curve, kind, -z, engine);
    } catch (const OutOfRange&) {
        if (engine == nullptr)
            throw;
        const PivotCurve wider = detail::extend_curve_right(curve, *engine);
        ci.upper = invert_curve(wider, kind, -z, engine);
    }
    if (ci.upper < ci.lower)
        throw NumericalFailure("confidence_interval: crossed endpoints");
    return ci;
}

/// One-sided evidence against psi = psi0 in favour of larger miss distances:
/// 1 - Phi(pivot(psi0)).
inline double significance_probability(const PivotEngine& engine, double psi0,
                                       PivotKind kind) {
    if (!(psi0 >= 0.0))
        throw ValidationError("significance_probability: psi0 must be >= 0");
    return normal_sf(engine.pivot_at(psi0, kind));
}

/// Significance function along the curve: pairs (psi, Phi(pivot(psi))).
inline std::vector<std::pair<double, double>>
significance_function(const PivotCurve& curve, PivotKind kind) {
    std::vector<std::pair<double, double>> out;
    const bool apply_exclusions =
        kind == PivotKind::modified || kind == PivotKind::modified_bayes;
    for (std::size_t i = 0; i < curve.grid.size(); ++i) {
        if (apply_exclusions && curve.is_excluded(i))
            continue;
        const double v = curve.pivots[i].get(kind);
        if (!std::isfinite(v))
            continue;
        out.emplace_back(curve.grid[i], normal_cdf(v));
    }
    return out;
}

// -----------------------------------------------------------------------------
// Decision threshold
// -----------------------------------------------------------------------------

/// Losses for the act/no-act decision; the no-action/no-collision loss is zero.
struct LossTable {
    double l01 = 0.0; // do nothing, collision occurs
    double l10 = 0.0; // evasive action, no collision
    double l11 = 0.0; // evasive action, collision occurs
};

/// Posterior collision probability above which evasive action minimises the
/// expected loss: epsilon = l10 / (l10 + l01 - l11).
inline double decision_threshold(const LossTable& losses) {
    if (losses.l01 < 0.0 || losses.l10 < 0.0 || losses.l11 < 0.0)
        throw InvalidLosses("decision_threshold: losses must be nonnegative");
    const double denom = losses.l10 + losses.l01 - losses.l11;
    if (!(denom > 0.0))
        throw InvalidLosses("decision_threshold: l10 + l01 - l11 must be positive");
    const double eps = losses.l10 / denom;
    if (!(eps > 0.0 && eps <= 1.0))
        throw InvalidLosses("decision_threshold: threshold must lie in (0, 1]");
    return eps;
}

// -----------------------------------------------------------------------------
// Assessment report
// -----------------------------------------------------------------------------

struct AssessmentReport {
    double psi_hat = 0.0;      // miss-distance MLE (m)
    double psi_hat_star = 0.0; // point estimate from the modified root
    double se_psi_hat = 0.0;
    std::vector<ConfidenceInterval> intervals; // per pivot kind, per level
    struct Significance {
        PivotKind kind;
        double p_obs;
    };
    std::vector<Significance> significance; // at psi0
    double psi0 = 0.0;
    double epsilon = 0.0;
    PivotKind decision_pivot = PivotKind::modified;
    double decision_p_obs = 0.0;
    bool action_advised = false; // p_obs >= epsilon: psi > psi0 not established
    double pc_estimate = 0.0;    // plug-in disk integral at the hard-body radius
    double hard_body_radius = 0.0;
    std::size_t curve_points = 0;
    std::size_t curve_exclusions = 0;
};

} // namespace conjassess
