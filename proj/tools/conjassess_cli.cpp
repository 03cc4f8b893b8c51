// Command-line surface for conjunction assessment: miss-distance inference,
// significance-function export, Monte Carlo calibration, and plug-in
// collision-probability studies.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "conjassess/io.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

int cmd_assess(const std::string& input_path, double psi0_override,
               double eps_override, const std::string& out_path) {
    using namespace conjassess;
    ConjunctionInput in = parse_conjunction_input(detail::read_json_file(input_path));
    if (psi0_override > 0.0)
        in.safety_threshold = psi0_override;
    if (eps_override > 0.0)
        in.epsilon = eps_override;
    in.validate();
    const AssessmentReport report = run_assessment(in);
    detail::write_text_file(out_path, report_to_json(report).dump(2) + "\n");
    return 0;
}

int cmd_curve(const std::string& input_path, double alpha_min,
              const std::string& out_path) {
    using namespace conjassess;
    const ConjunctionInput in =
        parse_conjunction_input(detail::read_json_file(input_path));
    const PivotEngine engine = make_engine(in);
    const std::vector<double> grid =
        build_grid(engine.psi_hat(), engine.se_psi_hat(),
                   default_grid_alpha(alpha_min), kDefaultGridSize);
    const PivotCurve curve = evaluate_curve(grid, engine);
    detail::write_text_file(out_path, curve_to_csv(curve, engine.bayes_enabled()));
    return 0;
}

int cmd_calibrate(const std::string& config_path, std::int64_t seed,
                  int replicates, int workers, const std::string& out_path) {
    using namespace conjassess;
    CalibrationConfig cfg =
        parse_calibration_config(detail::read_json_file(config_path));
    if (seed >= 0)
        cfg.seed = static_cast<std::uint64_t>(seed);
    if (replicates > 0)
        cfg.replicates = replicates;
    if (workers > 0)
        cfg.workers = workers;
    cfg.validate();
    const CalibrationReport report = cfg.mode == CalibrationConfig::Mode::planar
                                         ? planar_coverage_experiment(cfg)
                                         : coverage_experiment(cfg);
    detail::write_text_file(out_path, calibration_to_csv(report));
    std::string json_path = out_path;
    const auto dot = json_path.rfind('.');
    json_path = (dot == std::string::npos ? json_path : json_path.substr(0, dot)) +
                ".json";
    detail::write_text_file(json_path,
                            calibration_to_json(report, cfg).dump(2) + "\n");
    return 0;
}

int cmd_pc_study(const std::string& config_path, int workers,
                 const std::string& out_path) {
    using namespace conjassess;
    BiasStudyConfig cfg = parse_bias_config(detail::read_json_file(config_path));
    if (workers > 0)
        cfg.workers = workers;
    const auto rows = bias_study(cfg);
    detail::write_text_file(out_path, bias_study_to_csv(rows));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Likelihood-based satellite conjunction assessment"};
    app.require_subcommand(1);

    std::string input_path, config_path, out_path;
    double psi0 = -1.0, eps = -1.0, alpha_min = 1e-6;
    std::int64_t seed = -1;
    int replicates = 0, workers = 0;

    auto* assess = app.add_subcommand("assess", "Assess a conjunction input file");
    assess->add_option("--input", input_path, "conjunction JSON document")->required();
    assess->add_option("--psi0", psi0, "safety threshold override (m)");
    assess->add_option("--eps", eps, "decision threshold override");
    assess->add_option("--out", out_path, "report JSON path")->required();

    auto* curve = app.add_subcommand("curve", "Export the significance-function table");
    curve->add_option("--input", input_path, "conjunction JSON document")->required();
    curve->add_option("--alpha-min", alpha_min, "smallest one-sided level the grid must cover");
    curve->add_option("--out", out_path, "CSV path")->required();

    auto* calibrate =
        app.add_subcommand("calibrate", "Monte Carlo error-rate experiment");
    calibrate->add_option("--config", config_path, "calibration JSON config")->required();
    calibrate->add_option("--seed", seed, "RNG seed")->envname("CONJASSESS_SEED");
    calibrate->add_option("--replicates", replicates, "replicate count override");
    calibrate->add_option("--workers", workers, "worker thread count")
        ->envname("CONJASSESS_WORKERS");
    calibrate->add_option("--out", out_path, "CSV path (JSON written alongside)")->required();

    auto* pc_study = app.add_subcommand("pc-study", "Plug-in estimator bias study");
    pc_study->add_option("--config", config_path, "bias study JSON config")->required();
    pc_study->add_option("--workers", workers, "worker thread count")
        ->envname("CONJASSESS_WORKERS");
    pc_study->add_option("--out", out_path, "CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (assess->parsed())
            return cmd_assess(input_path, psi0, eps, out_path);
        if (curve->parsed())
            return cmd_curve(input_path, alpha_min, out_path);
        if (calibrate->parsed())
            return cmd_calibrate(config_path, seed, replicates, workers, out_path);
        if (pc_study->parsed())
            return cmd_pc_study(config_path, workers, out_path);
    } catch (const conjassess::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const conjassess::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    }
    return 0;
}
