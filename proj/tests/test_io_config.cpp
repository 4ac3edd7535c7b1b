#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "volqml/commands.hpp"

using namespace volqml;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("volqml_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(VOLQML_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json garch_config() {
    return json::parse(R"({
        "model": {"family": "garch", "p": 1, "q": 1},
        "theta": [0.1, 0.2, 0.5],
        "seed": 7,
        "simulate": {"n": 200, "burn_in": 100}
    })");
}

}  // namespace

TEST(Config, ParsesSimulate) {
    const auto c = parse_config(garch_config(), "simulate");
    EXPECT_EQ(c.simulate->n, 200u);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.theta_vector().coefficients()[2], 0.5);
}

TEST(Config, RejectsUnknownKeysAtEveryLevel) {
    auto j = garch_config();
    j["colour"] = "blue";
    EXPECT_THROW(parse_config(j, "simulate"), ConfigError);
    j = garch_config();
    j["simulate"]["steps"] = 3;
    EXPECT_THROW(parse_config(j, "simulate"), ConfigError);
    j = garch_config();
    j["model"]["order"] = 1;
    EXPECT_THROW(parse_config(j, "simulate"), ConfigError);
}

TEST(Config, ThetaByName) {
    auto j = garch_config();
    j["theta"] = {{"alpha0", 0.1}, {"alpha1", 0.2}, {"beta1", 0.5}};
    EXPECT_EQ(parse_config(j, "simulate").theta_vector().coefficients(),
              parse_config(garch_config(), "simulate").theta_vector().coefficients());
    j["theta"] = {{"alpha0", 0.1}, {"alpha1", 0.2}};
    EXPECT_THROW(parse_config(j, "simulate"), ConfigError);
}

TEST(Config, ThetaConstraintsEnforced) {
    auto j = garch_config();
    j["theta"] = {0.1, 0.6, 1.0};
    EXPECT_THROW(parse_config(j, "simulate"), std::invalid_argument);
}

TEST(Config, FixedNeedsInit) {
    auto j = garch_config();
    j["model"] = {{"family", "agarch"}, {"p", 1}, {"q", 1}};
    j.erase("theta");
    j["fit"] = {{"input", "x.csv"}, {"fixed", {"gamma"}}};
    EXPECT_THROW(parse_config(j, "fit"), ConfigError);
    j["fit"]["init"] = {0.1, 0.2, 0.5, 0.0};
    const auto c = parse_config(j, "fit");
    EXPECT_TRUE(c.fit->options.fixed[3]);
}

TEST(Config, HashIgnoresOutputDirAndThreads) {
    ConfigOverrides a, b;
    b.output_dir = "elsewhere";
    b.threads = 4;
    EXPECT_EQ(parse_config(garch_config(), "simulate", a).provenance().config_hash,
              parse_config(garch_config(), "simulate", b).provenance().config_hash);
    ConfigOverrides s;
    s.seed = 8;
    EXPECT_NE(parse_config(garch_config(), "simulate", a).provenance().config_hash,
              parse_config(garch_config(), "simulate", s).provenance().config_hash);
}

TEST(Config, McPlanValidationIsConfigError) {
    auto j = garch_config();
    j["mc"] = {{"kind", "consistency"}, {"sizes", {500, 200}}, {"replications", 2}};
    EXPECT_THROW(parse_config(j, "mc"), ConfigError);
}

TEST(Csv, RoundTripIsExact) {
    const auto dir = scratch("csv");
    const std::vector<std::vector<double>> rows{{1.0, 0.1, 1e-300}, {2.0, -1.0 / 3.0, 123456789.123456789}};
    write_csv(dir / "a.csv", {"abc", 3}, {"t", "X", "h"}, rows);
    const auto text = slurp(dir / "a.csv");
    EXPECT_EQ(text.rfind(std::string(kSchemaLine), 0), 0u);
    EXPECT_EQ(text.find('\r'), std::string::npos);
    const auto t = read_table(dir / "a.csv");
    ASSERT_EQ(t.rows.size(), 2u);
    for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(t.rows[r], rows[r]);
    EXPECT_EQ(read_observations(dir / "a.csv"), (std::vector<double>{0.1, -1.0 / 3.0}));
}

TEST(Csv, ErrorsCarryLineNumbers) {
    const auto dir = scratch("csv_bad");
    spit(dir / "b.csv", "t,X\n1,0.5\n2,abc\n");
    try {
        read_table(dir / "b.csv");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    spit(dir / "c.csv", "t,Y\n1,0.5\n");
    EXPECT_THROW(read_observations(dir / "c.csv"), InputError);
}

TEST(Csv, D2hSymmetry) {
    Table t;
    t.columns = {"d2h.a.a", "d2h.a.b", "d2h.b.a", "d2h.b.b"};
    t.rows = {{1.0, 2.0, 2.0, 3.0}};
    EXPECT_EQ(verify_d2h_symmetry(t, {"a", "b"}), 0.0);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    auto j = garch_config();
    spit(dir / "sim.json", j.dump());
    EXPECT_EQ(run_cli("simulate -c " + (dir / "sim.json").string() + " -o " + (dir / "o").string()), kExitOk);
    EXPECT_TRUE(fs::exists(dir / "o" / "path.csv"));

    j["bogus"] = 1;
    spit(dir / "bad.json", j.dump());
    EXPECT_EQ(run_cli("simulate -c " + (dir / "bad.json").string()), kExitInput);
    EXPECT_EQ(run_cli("simulate -c " + (dir / "missing.json").string()), kExitInput);
    EXPECT_EQ(run_cli("simulate"), kExitInput);
    EXPECT_EQ(run_cli("--help"), kExitOk);

    // explosive recursion (top Lyapunov exponent well above zero)
    auto boom = garch_config();
    boom["theta"] = {0.1, 20.0, 0.5};
    boom["simulate"] = {{"n", 5000}, {"burn_in", 1000}};
    spit(dir / "boom.json", boom.dump());
    EXPECT_EQ(run_cli("simulate -c " + (dir / "boom.json").string() + " -o " + (dir / "boom").string()),
              kExitDivergence);

    // every start overflows on these observations
    std::string huge = "t,X\n";
    for (int k = 1; k <= 100; ++k) huge += std::to_string(k) + (k % 2 ? ",1e200\n" : ",-1e200\n");
    spit(dir / "huge.csv", huge);
    json f = json::parse(R"({"model": {"family": "garch", "p": 1, "q": 1}, "fit": {}})");
    f["fit"]["input"] = (dir / "huge.csv").string();
    spit(dir / "fit.json", f.dump());
    EXPECT_EQ(run_cli("fit -c " + (dir / "fit.json").string() + " -o " + (dir / "fo").string()), kExitFitFailure);
}

TEST(Cli, FilterWritesSymmetricSecondDerivatives) {
    const auto dir = scratch("cli_filter");
    spit(dir / "sim.json", garch_config().dump());
    ASSERT_EQ(run_cli("simulate -c " + (dir / "sim.json").string() + " -o " + dir.string()), kExitOk);
    auto j = garch_config();
    j.erase("simulate");
    j["filter"] = {{"input", (dir / "path.csv").string()}, {"order", 2}};
    spit(dir / "filter.json", j.dump());
    ASSERT_EQ(run_cli("filter -c " + (dir / "filter.json").string() + " -o " + dir.string()), kExitOk);
    const auto t = read_table(dir / "filter.csv");
    EXPECT_EQ(t.rows.size(), 199u);
    EXPECT_EQ(verify_d2h_symmetry(t, {"alpha0", "alpha1", "beta1"}), 0.0);
}
