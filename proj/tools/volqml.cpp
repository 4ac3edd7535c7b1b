#include "volqml/commands.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("-c,--config", f.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "override the config seed");
    sub->add_option("-o,--output-dir", f.output_dir, "override the output directory (also VOLQML_OUTPUT_DIR)");
    sub->add_option("--threads", f.threads, "cap on worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quasi-maximum-likelihood estimation for GARCH, AGARCH and EGARCH volatility models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(volqml::kVersion));

    CommonFlags flags;
    const std::pair<const char*, const char*> commands[] = {
        {"simulate", "simulate a stationary path (path.csv)"},
        {"filter", "run the volatility filter on observations (filter.csv)"},
        {"fit", "quasi-maximum-likelihood fit (estimate.json, estimate.csv, residuals.csv)"},
        {"diagnose", "stationarity, invertibility, Lyapunov and spectral-radius report (diagnose.json)"},
        {"mc", "Monte-Carlo experiment (rows.csv, aggregate.csv, plan.json, summary.json)"},
    };
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return volqml::kExitInput;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    volqml::ConfigOverrides ov;
    ov.seed = flags.seed;
    ov.threads = flags.threads;
    if (flags.output_dir)
        ov.output_dir = flags.output_dir;
    else if (const char* env = std::getenv("VOLQML_OUTPUT_DIR"); env && *env)
        ov.output_dir = std::string(env);

    volqml::RunConfig config;
    try {
        config = volqml::parse_config(volqml::load_json_file(flags.config), command, ov);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return volqml::kExitInput;
    }
    return volqml::run_command(config, std::cout, std::cerr);
}
