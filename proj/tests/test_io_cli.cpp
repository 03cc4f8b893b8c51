#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>

#include "conjassess/io.hpp"

using namespace conjassess;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = CONJASSESS_FIXTURES;
const std::string kCli = CONJASSESS_CLI_PATH;

json load_fixture(const std::string& name) {
    return detail::read_json_file(kFixtures + "/" + name);
}

fs::path temp_dir() {
    const fs::path dir =
        fs::temp_directory_path() / ("conjassess_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const int rc = std::system((kCli + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("fixture inputs parse and validate") {
    for (const char* name : {"case_a.json", "case_b.json", "case_c_planar.json"}) {
        const ConjunctionInput in = parse_conjunction_input(load_fixture(name));
        CHECK(in.hard_body_radius > 0.0);
        CHECK(in.safety_threshold >= in.hard_body_radius);
    }
    const ConjunctionInput b = parse_conjunction_input(load_fixture("case_b.json"));
    REQUIRE(b.relative_state.has_value());
    CHECK(b.relative_state->velocity.x() == Approx(10580.0)); // km/s scaled to m/s
}

TEST_CASE("invalid inputs are rejected with field-level messages") {
    CHECK_THROWS_MATCHES(
        parse_conjunction_input(load_fixture("bad_covariance.json")), ValidationError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("positive definite")));

    json j = load_fixture("case_c_planar.json");
    j["safety_threshold"] = 1.0; // below the hard-body radius
    CHECK_THROWS_AS(parse_conjunction_input(j), ValidationError);

    j = load_fixture("case_c_planar.json");
    j.erase("planar");
    CHECK_THROWS_AS(parse_conjunction_input(j), ValidationError);

    j = load_fixture("case_a.json");
    j["alpha_levels"] = {0.9};
    CHECK_THROWS_AS(parse_conjunction_input(j), ValidationError);
}

TEST_CASE("states can be supplied as a primary/secondary pair") {
    json j = load_fixture("case_b.json");
    const json state = j["relative_state"];
    j.erase("relative_state");
    j["primary_state"] = {{"position", {100.0, 200.0, -50.0}},
                          {"position_unit", "m"},
                          {"velocity", {1.0, 2.0, 3.0}},
                          {"velocity_unit", "km/s"}};
    json secondary = state;
    secondary["position"] = {100.0 + state["position"][0].get<double>(),
                             200.0 + state["position"][1].get<double>(),
                             -50.0 + state["position"][2].get<double>()};
    secondary["velocity"] = {1.0 + state["velocity"][0].get<double>(),
                             2.0 + state["velocity"][1].get<double>(),
                             3.0 + state["velocity"][2].get<double>()};
    j["secondary_state"] = secondary;
    const ConjunctionInput in = parse_conjunction_input(j);
    CHECK(in.relative_state->position.x() == Approx(-258.909));
    CHECK(in.relative_state->velocity.y() == Approx(-3733.0));
}

TEST_CASE("assessment of the planar case study") {
    const ConjunctionInput in =
        parse_conjunction_input(load_fixture("case_c_planar.json"));
    const AssessmentReport rep = run_assessment(in);
    CHECK(rep.psi_hat == Approx(11.9179).margin(0.005));
    CHECK(rep.psi_hat_star < rep.psi_hat);
    for (const auto& s : rep.significance) {
        if (s.kind == PivotKind::wald || s.kind == PivotKind::root)
            CHECK(s.p_obs == Approx(0.4694).margin(0.01));
        if (s.kind == PivotKind::modified)
            CHECK(s.p_obs == Approx(0.5759).margin(0.01));
    }
    CHECK(rep.action_advised); // p_obs far above epsilon = 1e-4
    CHECK(rep.pc_estimate > 0.0);
    CHECK(rep.pc_estimate < 1.0);
    // intervals: per pivot kind and level, lower <= upper
    CHECK(rep.intervals.size() == 3 * in.alpha_levels.size());
    for (const auto& ci : rep.intervals)
        CHECK(ci.lower <= ci.upper);
}

TEST_CASE("assessment of the collision event geometry") {
    const ConjunctionInput in = parse_conjunction_input(load_fixture("case_b.json"));
    const AssessmentReport rep = run_assessment(in);
    CHECK(rep.psi_hat == Approx(698.011).margin(0.01));
    for (const auto& s : rep.significance) {
        if (s.kind == PivotKind::wald || s.kind == PivotKind::root)
            CHECK(s.p_obs == Approx(1.2e-3).epsilon(0.1));
        if (s.kind == PivotKind::modified)
            CHECK(s.p_obs == Approx(7.2e-3).epsilon(0.1));
    }
    CHECK(rep.action_advised);
}

TEST_CASE("curve CSV structure") {
    const ConjunctionInput in =
        parse_conjunction_input(load_fixture("case_c_planar.json"));
    const PivotEngine engine = make_engine(in);
    const PivotCurve curve = evaluate_curve(
        build_grid(engine.psi_hat(), engine.se_psi_hat(), default_grid_alpha(1e-6),
                   kDefaultGridSize),
        engine);
    const std::string csv = curve_to_csv(curve, false);

    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "psi,Phi_w,Phi_r,Phi_rstar");
    std::size_t rows = 0;
    double prev_psi = -1.0, prev_w = 2.0, prev_r = 2.0, prev_rs = 2.0;
    std::string line;
    while (std::getline(lines, line)) {
        ++rows;
        double psi, w, r, rs;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &psi, &w, &r, &rs) == 4);
        CHECK(psi > prev_psi);
        CHECK(w <= prev_w + 1e-12);
        CHECK(r <= prev_r + 1e-12);
        CHECK(rs <= prev_rs + 1e-12);
        prev_psi = psi;
        prev_w = w;
        prev_r = r;
        prev_rs = rs;
    }
    CHECK(rows == curve.grid.size() - curve.excluded.size());
}

TEST_CASE("cli: assess runs and is reproducible") {
    const fs::path dir = temp_dir();
    const std::string out1 = (dir / "report1.json").string();
    const std::string out2 = (dir / "report2.json").string();
    REQUIRE(run_cli("assess --input " + kFixtures + "/case_c_planar.json --out " +
                    out1) == 0);
    REQUIRE(run_cli("assess --input " + kFixtures + "/case_c_planar.json --out " +
                    out2) == 0);
    CHECK(slurp(out1) == slurp(out2));

    const json rep = detail::read_json_file(out1);
    CHECK(rep.at("psi_hat_m").get<double>() == Approx(11.9179).margin(0.005));
    CHECK(rep.at("decision").at("action_advised").get<bool>());
}

TEST_CASE("cli: validation failures exit with code 2") {
    const fs::path dir = temp_dir();
    const std::string out = (dir / "bad.json").string();
    CHECK(run_cli("assess --input " + kFixtures + "/bad_covariance.json --out " +
                  out) == 2);
    CHECK(run_cli("assess --input " + kFixtures + "/missing_file.json --out " +
                  out) == 2);
    // psi0 override below the hard-body radius
    CHECK(run_cli("assess --input " + kFixtures +
                  "/case_c_planar.json --psi0 1.0 --out " + out) == 2);
}

TEST_CASE("cli: curve export") {
    const fs::path dir = temp_dir();
    const std::string out = (dir / "curve.csv").string();
    REQUIRE(run_cli("curve --input " + kFixtures +
                    "/case_c_planar.json --alpha-min 1e-6 --out " + out) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.rfind("psi,Phi_w,Phi_r,Phi_rstar", 0) == 0);
}

TEST_CASE("cli: calibrate is byte-identical across worker counts") {
    const fs::path dir = temp_dir();
    const json cfg = {{"mode", "planar"},
                      {"xi", {11.84, -1.36}},
                      {"variances", {630.01, 134.7921}},
                      {"c2", 1.0},
                      {"replicates", 2000},
                      {"alphas", {0.025, 0.005}},
                      {"seed", 7}};
    const std::string cfg_path = (dir / "calib.json").string();
    detail::write_text_file(cfg_path, cfg.dump(2));

    std::vector<std::string> outputs;
    for (int workers : {1, 2, 4}) {
        const std::string out =
            (dir / ("rates_w" + std::to_string(workers) + ".csv")).string();
        REQUIRE(run_cli("calibrate --config " + cfg_path + " --workers " +
                        std::to_string(workers) + " --out " + out) == 0);
        outputs.push_back(slurp(out) + slurp(fs::path(out).replace_extension(".json")));
    }
    CHECK(outputs[0] == outputs[1]);
    CHECK(outputs[0] == outputs[2]);
}

TEST_CASE("cli: pc-study emits ordered quantiles") {
    const fs::path dir = temp_dir();
    const json cfg = {{"xi", {11.84, -1.36}},
                      {"variances", {630.01, 134.7921}},
                      {"scale_grid", {0.01}},
                      {"replicates", 500},
                      {"radius", 5.0},
                      {"seed", 3}};
    const std::string cfg_path = (dir / "bias.json").string();
    detail::write_text_file(cfg_path, cfg.dump(2));
    const std::string out = (dir / "bias.csv").string();
    REQUIRE(run_cli("pc-study --config " + cfg_path + " --out " + out) == 0);

    std::istringstream lines(slurp(out));
    std::string header, row;
    std::getline(lines, header);
    CHECK(header == "scale,pc_truth,q05,q25,q50,q75,q95,mean");
    REQUIRE(std::getline(lines, row));
    double scale, pc, q05, q25, q50, q75, q95, mean;
    REQUIRE(std::sscanf(row.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &scale, &pc,
                        &q05, &q25, &q50, &q75, &q95, &mean) == 8);
    CHECK(q05 <= q25);
    CHECK(q25 <= q50);
    CHECK(q50 <= q75);
    CHECK(q75 <= q95);
    CHECK_FALSE(std::getline(lines, row)); // single scale, single row
}

TEST_CASE("calibration config parsing") {
    const CalibrationConfig cfg =
        parse_calibration_config(load_fixture("calib_case_a_small.json"));
    CHECK(cfg.mode == CalibrationConfig::Mode::six_dim);
    REQUIRE(cfg.truth.has_value());
    CHECK(cfg.truth->psi == Approx(35267.0).margin(1.0));
    CHECK(cfg.replicates == 2000);

    const CalibrationConfig planar =
        parse_calibration_config(load_fixture("calib_case_c_planar.json"));
    CHECK(planar.mode == CalibrationConfig::Mode::planar);
    CHECK(planar.c2 == 1.0);
    CHECK(planar.replicates == 100000);
}
