#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conjassess/calibration.hpp"
#include "conjassess/collision.hpp"
#include "conjassess/geometry.hpp"
#include "conjassess/inference.hpp"

namespace conjassess {

using nlohmann::json;

// -----------------------------------------------------------------------------
// Parsing helpers
// -----------------------------------------------------------------------------

namespace detail {

inline double num_at(const json& j, const std::string& key) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw ValidationError("input: field '" + key + "' must be a number");
    return j.at(key).get<double>();
}

inline Eigen::Vector3d vec3_at(const json& j, const std::string& key) {
    if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 3)
        throw ValidationError("input: field '" + key + "' must be a 3-vector");
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) {
        if (!j.at(key)[i].is_number())
            throw ValidationError("input: field '" + key + "' must hold numbers");
        v[i] = j.at(key)[i].get<double>();
    }
    return v;
}

inline LengthUnit length_unit(const json& j, const std::string& key,
                              const std::string& fallback) {
    const std::string u = j.value(key, fallback);
    if (u == "m" || u == "m/s")
        return LengthUnit::meters;
    if (u == "km" || u == "km/s")
        return LengthUnit::kilometers;
    throw ValidationError("input: field '" + key + "' must be one of m, km, m/s, km/s");
}

inline RelativeState parse_state(const json& j) {
    const auto pos = vec3_at(j, "position");
    const auto vel = vec3_at(j, "velocity");
    return RelativeState::from(pos, vel, length_unit(j, "position_unit", "m"),
                               length_unit(j, "velocity_unit", "m/s"));
}

inline DispersionSpec parse_covariance(const json& j) {
    if (j.contains("sigma2")) {
        const double sigma2 = num_at(j, "sigma2");
        const double tau = j.value("tau", 1.0);
        return DispersionSpec::from_sigma_tau(sigma2, tau,
                                              length_unit(j, "unit", "km"));
    }
    if (!j.contains("matrix") || !j.at("matrix").is_array() ||
        j.at("matrix").size() != 6)
        throw ValidationError(
            "input: covariance needs either sigma2/tau or a 6x6 'matrix'");
    Matrix6d m;
    for (int r = 0; r < 6; ++r) {
        const auto& row = j.at("matrix")[r];
        if (!row.is_array() || row.size() != 6)
            throw ValidationError("input: covariance matrix rows must have 6 entries");
        for (int c = 0; c < 6; ++c)
            m(r, c) = row[c].get<double>();
    }
    return DispersionSpec::from_matrix(m, length_unit(j, "unit", "m"));
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open input file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot open output file: " + path);
    out << text;
}

} // namespace detail

// -----------------------------------------------------------------------------
// Conjunction input document
// -----------------------------------------------------------------------------

/// Parsed assessment input. Either a six-dimensional relative state with its
/// covariance, or an already-projected encounter-plane observation.
struct ConjunctionInput {
    enum class Mode { six_dim, planar };
    Mode mode = Mode::six_dim;

    std::optional<RelativeState> relative_state;
    std::optional<DispersionSpec> covariance;

    Eigen::Vector2d planar_x = Eigen::Vector2d::Zero();
    std::array<double, 2> planar_variances{1.0, 1.0};

    double hard_body_radius = 0.0; // m
    double safety_threshold = 0.0; // m
    std::vector<double> alpha_levels{0.05, 0.025};
    double epsilon = 1e-4;
    std::optional<PriorSpec> bayes_prior;

    void validate() const {
        if (!(hard_body_radius > 0.0))
            throw ValidationError("input: hard_body_radius must be positive");
        if (!(safety_threshold >= hard_body_radius))
            throw ValidationError(
                "input: safety_threshold must be >= hard_body_radius");
        if (alpha_levels.empty())
            throw ValidationError("input: alpha_levels must be nonempty");
        for (double a : alpha_levels)
            if (!(a > 0.0 && a < 0.5))
                throw ValidationError("input: alpha_levels must lie in (0, 0.5)");
        if (!(epsilon > 0.0 && epsilon < 1.0))
            throw ValidationError("input: epsilon must lie in (0, 1)");
        if (mode == Mode::six_dim) {
            if (!relative_state || !covariance)
                throw ValidationError(
                    "input: six_dim mode needs relative_state and covariance");
        } else if (!(planar_variances[0] > 0.0) || !(planar_variances[1] > 0.0)) {
            throw ValidationError("input: planar variances must be positive");
        }
    }
};

inline ConjunctionInput parse_conjunction_input(const json& j) {
    ConjunctionInput in;
    const std::string mode = j.value("mode", "six_dim");
    if (mode == "six_dim")
        in.mode = ConjunctionInput::Mode::six_dim;
    else if (mode == "planar")
        in.mode = ConjunctionInput::Mode::planar;
    else
        throw ValidationError("input: mode must be six_dim or planar");

    if (in.mode == ConjunctionInput::Mode::six_dim) {
        if (j.contains("relative_state")) {
            in.relative_state = detail::parse_state(j.at("relative_state"));
        } else if (j.contains("primary_state") && j.contains("secondary_state")) {
            const RelativeState p = detail::parse_state(j.at("primary_state"));
            const RelativeState s = detail::parse_state(j.at("secondary_state"));
            in.relative_state =
                RelativeState{s.position - p.position, s.velocity - p.velocity};
            in.relative_state->validate();
        } else {
            throw ValidationError("input: six_dim mode needs relative_state or "
                                  "primary_state+secondary_state");
        }
        if (!j.contains("covariance"))
            throw ValidationError("input: six_dim mode needs covariance");
        in.covariance = detail::parse_covariance(j.at("covariance"));
    } else {
        if (!j.contains("planar"))
            throw ValidationError("input: planar mode needs a 'planar' object");
        const auto& p = j.at("planar");
        if (!p.contains("x") || !p.at("x").is_array() || p.at("x").size() != 2)
            throw ValidationError("input: planar.x must be a 2-vector");
        in.planar_x = {p.at("x")[0].get<double>(), p.at("x")[1].get<double>()};
        if (!p.contains("variances") || !p.at("variances").is_array() ||
            p.at("variances").size() != 2)
            throw ValidationError("input: planar.variances must hold two entries");
        in.planar_variances = {p.at("variances")[0].get<double>(),
                               p.at("variances")[1].get<double>()};
    }

    in.hard_body_radius = detail::num_at(j, "hard_body_radius");
    in.safety_threshold = detail::num_at(j, "safety_threshold");
    if (j.contains("alpha_levels")) {
        in.alpha_levels.clear();
        for (const auto& a : j.at("alpha_levels"))
            in.alpha_levels.push_back(a.get<double>());
    }
    in.epsilon = j.value("epsilon", 1e-4);
    if (j.contains("bayes_prior")) {
        const std::string p = j.at("bayes_prior").get<std::string>();
        if (p == "jeffreys")
            in.bayes_prior = PriorSpec{PriorSpec::Kind::jeffreys};
        else if (p == "flat")
            in.bayes_prior = PriorSpec{PriorSpec::Kind::flat};
        else
            throw ValidationError("input: bayes_prior must be jeffreys or flat");
    }
    in.validate();
    return in;
}

// -----------------------------------------------------------------------------
// Assessment driver
// -----------------------------------------------------------------------------

inline PivotEngine make_engine(const ConjunctionInput& in) {
    if (in.mode == ConjunctionInput::Mode::six_dim)
        return PivotEngine(LikelihoodContext(*in.relative_state, *in.covariance),
                           in.bayes_prior);
    return PivotEngine(PlanarLikelihoodContext(in.planar_x, in.planar_variances),
                       in.bayes_prior);
}

inline AssessmentReport run_assessment(const ConjunctionInput& in) {
    in.validate();
    const PivotEngine engine = make_engine(in);

    double min_alpha = 0.5;
    for (double a : in.alpha_levels)
        min_alpha = std::min(min_alpha, a);
    const std::vector<double> grid =
        build_grid(engine.psi_hat(), engine.se_psi_hat(),
                   default_grid_alpha(min_alpha), kDefaultGridSize);
    const PivotCurve curve = evaluate_curve(grid, engine);

    AssessmentReport report;
    report.psi_hat = engine.psi_hat();
    report.se_psi_hat = engine.se_psi_hat();
    report.psi_hat_star = invert_curve(curve, PivotKind::modified, 0.0);
    report.psi0 = in.safety_threshold;
    report.epsilon = in.epsilon;
    report.hard_body_radius = in.hard_body_radius;
    report.curve_points = curve.grid.size();
    report.curve_exclusions = curve.excluded.size();

    std::vector<PivotKind> kinds{PivotKind::wald, PivotKind::root,
                                 PivotKind::modified};
    if (in.bayes_prior)
        kinds.push_back(PivotKind::modified_bayes);
    for (PivotKind k : kinds) {
        for (double a : in.alpha_levels)
            report.intervals.push_back(confidence_interval(curve, a, k, &engine));
        report.significance.push_back(
            {k, significance_probability(engine, in.safety_threshold, k)});
    }
    for (const auto& s : report.significance)
        if (s.kind == PivotKind::modified)
            report.decision_p_obs = s.p_obs;
    report.decision_pivot = PivotKind::modified;
    report.action_advised = report.decision_p_obs >= in.epsilon;

    if (in.mode == ConjunctionInput::Mode::planar) {
        report.pc_estimate =
            pc_estimate(in.planar_x, in.planar_variances, in.hard_body_radius);
    } else {
        const EncounterFrame frame =
            encounter_frame(*in.relative_state, *in.covariance);
        report.pc_estimate = pc_estimate(frame.planar_observation,
                                         frame.planar_variances, in.hard_body_radius);
    }
    return report;
}

inline json report_to_json(const AssessmentReport& r) {
    json j;
    j["psi_hat_m"] = r.psi_hat;
    j["psi_hat_star_m"] = r.psi_hat_star;
    j["se_psi_hat_m"] = r.se_psi_hat;
    j["psi0_m"] = r.psi0;
    j["epsilon"] = r.epsilon;
    j["hard_body_radius_m"] = r.hard_body_radius;
    j["pc_estimate"] = r.pc_estimate;
    j["curve_points"] = r.curve_points;
    j["curve_exclusions"] = r.curve_exclusions;
    j["intervals"] = json::array();
    for (const auto& ci : r.intervals)
        j["intervals"].push_back({{"pivot", pivot_name(ci.pivot_kind)},
                                  {"level", ci.level},
                                  {"lower_m", ci.lower},
                                  {"upper_m", ci.upper},
                                  {"lower_clamped", ci.lower_clamped}});
    j["significance"] = json::array();
    for (const auto& s : r.significance)
        j["significance"].push_back(
            {{"pivot", pivot_name(s.kind)}, {"p_obs", s.p_obs}});
    j["decision"] = {{"pivot", pivot_name(r.decision_pivot)},
                     {"p_obs", r.decision_p_obs},
                     {"epsilon", r.epsilon},
                     {"action_advised", r.action_advised}};
    return j;
}

// -----------------------------------------------------------------------------
// Curve CSV
// -----------------------------------------------------------------------------

/// Significance-function table: psi ascending, one column of Phi(pivot) per
/// pivot; rows in the modified-root exclusion window are dropped.
inline std::string curve_to_csv(const PivotCurve& curve, bool with_bayes) {
    std::ostringstream out;
    out << "psi,Phi_w,Phi_r,Phi_rstar";
    if (with_bayes)
        out << ",Phi_rstar_bayes";
    out << "\n";
    for (std::size_t i = 0; i < curve.grid.size(); ++i) {
        if (curve.is_excluded(i))
            continue;
        const PivotSet& p = curve.pivots[i];
        out << detail::format_full(curve.grid[i]) << ','
            << detail::format_full(normal_cdf(p.wald)) << ','
            << detail::format_full(normal_cdf(p.root)) << ','
            << detail::format_full(normal_cdf(p.modified));
        if (with_bayes)
            out << ',' << detail::format_full(normal_cdf(p.modified_bayes.value_or(
                       std::numeric_limits<double>::quiet_NaN())));
        out << "\n";
    }
    return out.str();
}

// -----------------------------------------------------------------------------
// Calibration config and report serialization
// -----------------------------------------------------------------------------

inline CalibrationConfig parse_calibration_config(const json& j) {
    CalibrationConfig cfg;
    const std::string mode = j.value("mode", "six_dim");
    if (mode == "planar")
        cfg.mode = CalibrationConfig::Mode::planar;
    else if (mode != "six_dim")
        throw ValidationError("calibration: mode must be six_dim or planar");

    if (cfg.mode == CalibrationConfig::Mode::six_dim) {
        if (!j.contains("truth"))
            throw ValidationError("calibration: six_dim mode needs truth");
        const auto& t = j.at("truth");
        if (t.contains("state"))
            cfg.truth = state_to_spherical(detail::parse_state(t.at("state")));
        else if (t.contains("params")) {
            const auto& p = t.at("params");
            cfg.truth = ConjunctionParams{
                detail::num_at(p, "psi"),    detail::num_at(p, "theta1"),
                detail::num_at(p, "phi1"),   detail::num_at(p, "speed"),
                detail::num_at(p, "theta2"), detail::num_at(p, "phi2")};
            cfg.truth->validate();
        } else {
            throw ValidationError("calibration: truth needs state or params");
        }
        if (!j.contains("noise"))
            throw ValidationError("calibration: six_dim mode needs noise");
        cfg.noise = detail::parse_covariance(j.at("noise"));
    } else {
        if (!j.contains("xi") || !j.at("xi").is_array() || j.at("xi").size() != 2)
            throw ValidationError("calibration: planar mode needs xi");
        cfg.xi = {j.at("xi")[0].get<double>(), j.at("xi")[1].get<double>()};
        if (!j.contains("variances") || j.at("variances").size() != 2)
            throw ValidationError("calibration: planar mode needs variances");
        cfg.variances = {j.at("variances")[0].get<double>(),
                         j.at("variances")[1].get<double>()};
        cfg.c2 = j.value("c2", 1.0);
        cfg.cprime = j.value("cprime", 1.0);
    }
    if (j.contains("replicates"))
        cfg.replicates = j.at("replicates").get<int>();
    if (j.contains("alphas")) {
        cfg.alphas.clear();
        for (const auto& a : j.at("alphas"))
            cfg.alphas.push_back(a.get<double>());
    }
    if (j.contains("seed"))
        cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("workers"))
        cfg.workers = j.at("workers").get<int>();
    cfg.validate();
    return cfg;
}

/// CSV table of left/right error rates per statistic, one column per level,
/// with a trailing Monte Carlo standard error row.
inline std::string calibration_to_csv(const CalibrationReport& r) {
    std::ostringstream out;
    out << "statistic";
    for (double a : r.alphas)
        out << ",left_" << detail::format_full(100.0 * a);
    for (double a : r.alphas)
        out << ",right_" << detail::format_full(100.0 * a);
    out << "\n";
    const auto short_name = [](PivotKind k) {
        switch (k) {
        case PivotKind::wald:
            return "w";
        case PivotKind::root:
            return "r";
        case PivotKind::modified:
            return "rstar";
        default:
            return "rstar_b";
        }
    };
    for (std::size_t p = 0; p < r.pivots.size(); ++p) {
        out << short_name(r.pivots[p]);
        for (const auto& tr : r.rates[p])
            out << ',' << detail::format_full(100.0 * tr.left_rate);
        for (const auto& tr : r.rates[p])
            out << ',' << detail::format_full(100.0 * tr.right_rate);
        out << "\n";
    }
    out << "se";
    for (int side = 0; side < 2; ++side)
        for (const auto& tr : r.rates.front())
            out << ',' << detail::format_full(100.0 * tr.mc_se);
    out << "\n";
    return out.str();
}

inline json calibration_to_json(const CalibrationReport& r,
                                const CalibrationConfig& cfg) {
    json j;
    j["psi0_m"] = r.psi0;
    j["replicates"] = r.replicates;
    j["failures"] = r.failures;
    j["seed"] = cfg.seed;
    j["alphas"] = r.alphas;
    j["rates"] = json::array();
    for (std::size_t p = 0; p < r.pivots.size(); ++p) {
        json block;
        block["statistic"] = pivot_name(r.pivots[p]);
        block["left"] = json::array();
        block["right"] = json::array();
        block["mc_se"] = json::array();
        for (const auto& tr : r.rates[p]) {
            block["left"].push_back(tr.left_rate);
            block["right"].push_back(tr.right_rate);
            block["mc_se"].push_back(tr.mc_se);
        }
        j["rates"].push_back(block);
    }
    return j;
}

// -----------------------------------------------------------------------------
// Bias study config and CSV
// -----------------------------------------------------------------------------

inline BiasStudyConfig parse_bias_config(const json& j) {
    BiasStudyConfig cfg;
    if (!j.contains("xi") || j.at("xi").size() != 2)
        throw ValidationError("bias study: needs xi");
    cfg.xi = {j.at("xi")[0].get<double>(), j.at("xi")[1].get<double>()};
    if (!j.contains("variances") || j.at("variances").size() != 2)
        throw ValidationError("bias study: needs variances");
    cfg.base_variances = {j.at("variances")[0].get<double>(),
                          j.at("variances")[1].get<double>()};
    if (!j.contains("scale_grid"))
        throw ValidationError("bias study: needs scale_grid");
    cfg.scale_grid.clear();
    for (const auto& s : j.at("scale_grid"))
        cfg.scale_grid.push_back(s.get<double>());
    cfg.replicates = j.value("replicates", 20000);
    cfg.radius = detail::num_at(j, "radius");
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.scale_position = j.value("scale_position", false);
    cfg.workers = j.value("workers", 0);
    cfg.validate();
    return cfg;
}

inline std::string bias_study_to_csv(const std::vector<BiasScaleSummary>& rows) {
    std::ostringstream out;
    out << "scale,pc_truth,q05,q25,q50,q75,q95,mean\n";
    for (const auto& r : rows) {
        out << detail::format_full(r.scale) << ',' << detail::format_full(r.pc_truth);
        for (double q : r.quantiles)
            out << ',' << detail::format_full(q);
        out << ',' << detail::format_full(r.mean) << "\n";
    }
    return out.str();
}

} // namespace conjassess
