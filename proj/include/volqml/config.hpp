#pragma once

#include "volqml/errors.hpp"
#include "volqml/filter.hpp"
#include "volqml/innovations.hpp"
#include "volqml/io.hpp"
#include "volqml/mc_experiments.hpp"
#include "volqml/models.hpp"
#include "volqml/qmle.hpp"
#include "volqml/sre.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace volqml {

using json = nlohmann::json;

/// Invalid configuration; maps to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SimulateSection {
    std::size_t n = 1000;
    SimulationOptions options;
    std::string output = "path.csv";
};

struct FilterSection {
    std::string input;
    std::string column = "X";
    int order = 0;
    FilterConfig config;
    std::string output = "filter.csv";
};

struct FitSection {
    std::string input;
    std::string column = "X";
    FitOptions options;
    std::optional<Eigen::VectorXd> init;
    std::optional<CompactRegion> region;
};

struct DiagnoseSection {
    std::size_t n_products = 10000;
    std::size_t n_replications = 50;
    MatrixNorm norm = MatrixNorm::frobenius;
    std::size_t invertibility_samples = 100000;
    std::size_t r_max = 64;
};

/// Fully parsed run configuration. Sections not used by a command may be absent.
struct RunConfig {
    std::string command;
    ModelSpec model = ModelSpec::garch(1, 1);
    std::optional<Eigen::VectorXd> theta;
    InnovationSpec innovation;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    std::size_t threads = 1;
    std::optional<SimulateSection> simulate;
    std::optional<FilterSection> filter;
    std::optional<FitSection> fit;
    std::optional<DiagnoseSection> diagnose;
    std::optional<ExperimentPlan> mc;
    /// Effective configuration after flag overrides, used for the provenance hash.
    json effective;

    [[nodiscard]] Provenance provenance() const { return {hex64(fnv1a64(effective.dump())), seed}; }
    [[nodiscard]] ThetaVector theta_vector() const {
        if (!theta) throw ConfigError("config needs 'theta'");
        try {
            return ThetaVector(model, *theta);
        } catch (const ConstraintError& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

inline void allow_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (auto key : keys) known = known || k == key;
        if (!known) throw ConfigError("unknown key '" + k + "' in " + std::string(where));
    }
}

template <class T>
T get_as(const json& j, std::string_view key, std::string_view where) {
    try {
        return j.at(std::string(key)).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(where) + "." + std::string(key) + " has the wrong type or is missing");
    }
}

template <class T>
void read_opt(const json& j, std::string_view key, std::string_view where, T& out) {
    if (j.contains(std::string(key))) out = get_as<T>(j, key, where);
}

inline std::size_t get_count(const json& j, std::string_view key, std::string_view where) {
    const auto& v = j.at(std::string(key));
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(std::string(where) + "." + std::string(key) + " must be a nonnegative integer");
    return v.get<std::size_t>();
}

inline void read_count(const json& j, std::string_view key, std::string_view where, std::size_t& out) {
    if (j.contains(std::string(key))) out = get_count(j, key, where);
}

inline Eigen::VectorXd real_vector(const json& v, std::string_view where) {
    if (!v.is_array()) throw ConfigError(std::string(where) + " must be an array of numbers");
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ConfigError(std::string(where) + " must be an array of numbers");
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
}

/// Coefficients as an array in model order or as an object keyed by coefficient name.
inline Eigen::VectorXd coefficient_vector(const json& v, const ModelSpec& model, std::string_view where) {
    const auto names = model.coefficient_names();
    if (v.is_array()) {
        auto out = real_vector(v, where);
        if (static_cast<std::size_t>(out.size()) != names.size())
            throw ConfigError(std::string(where) + " needs " + std::to_string(names.size()) + " values");
        return out;
    }
    if (!v.is_object()) throw ConfigError(std::string(where) + " must be an array or an object");
    Eigen::VectorXd out(static_cast<Eigen::Index>(names.size()));
    for (const auto& [k, x] : v.items())
        if (std::find(names.begin(), names.end(), k) == names.end())
            throw ConfigError("unknown coefficient '" + k + "' in " + std::string(where));
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!v.contains(names[i]) || !v[names[i]].is_number())
            throw ConfigError(std::string(where) + " is missing coefficient '" + names[i] + "'");
        out[static_cast<Eigen::Index>(i)] = v[names[i]].get<double>();
    }
    return out;
}

inline ModelSpec parse_model(const json& j) {
    allow_keys(j, "model", {"family", "p", "q"});
    ModelSpec m;
    try {
        m.family = parse_model_family(get_as<std::string>(j, "family", "model"));
    } catch (const ConstraintError& e) {
        throw ConfigError(e.what());
    }
    if (m.is_egarch()) {
        m.p = m.q = 1;
        if (j.contains("p") && get_count(j, "p", "model") != 1) throw ConfigError("egarch has p = 1");
        if (j.contains("q") && get_count(j, "q", "model") != 1) throw ConfigError("egarch has q = 1");
    } else {
        m.p = j.contains("p") ? get_count(j, "p", "model") : 1;
        m.q = j.contains("q") ? get_count(j, "q", "model") : 1;
    }
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return m;
}

inline InnovationSpec parse_innovation(const json& j) {
    allow_keys(j, "innovation", {"family", "nu"});
    InnovationSpec s;
    try {
        s.family = parse_innovation_family(get_as<std::string>(j, "family", "innovation"));
    } catch (const ConstraintError& e) {
        throw ConfigError(e.what());
    }
    read_opt(j, "nu", "innovation", s.nu);
    if (s.family == InnovationFamily::student_t && !j.contains("nu")) throw ConfigError("student-t innovation needs nu");
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return s;
}

inline CompactRegion parse_region(const json& j, const ModelSpec& model) {
    allow_keys(j, "region", {"lower", "upper", "beta_cap"});
    CompactRegion r = CompactRegion::default_for(model);
    if (!j.contains("lower") || !j.contains("upper")) throw ConfigError("region needs 'lower' and 'upper'");
    r.lower = coefficient_vector(j["lower"], model, "region.lower");
    r.upper = coefficient_vector(j["upper"], model, "region.upper");
    read_opt(j, "beta_cap", "region", r.beta_cap);
    try {
        r.validate(model);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return r;
}

inline std::vector<bool> parse_fixed(const json& v, const ModelSpec& model) {
    const auto names = model.coefficient_names();
    std::vector<bool> mask(names.size(), false);
    if (!v.is_array()) throw ConfigError("fit.fixed must be an array of coefficient names");
    for (const auto& e : v) {
        if (!e.is_string()) throw ConfigError("fit.fixed must be an array of coefficient names");
        const auto it = std::find(names.begin(), names.end(), e.get<std::string>());
        if (it == names.end()) throw ConfigError("fit.fixed: unknown coefficient '" + e.get<std::string>() + "'");
        mask[static_cast<std::size_t>(it - names.begin())] = true;
    }
    return mask;
}

inline void parse_fit_options(const json& j, std::string_view where, const ModelSpec& model, FitOptions& o) {
    read_count(j, "starts", where, o.starts);
    read_opt(j, "use_hessian", where, o.use_hessian);
    read_opt(j, "grad_tol", where, o.grad_tol);
    read_opt(j, "step_tol", where, o.step_tol);
    read_count(j, "max_iter", where, o.max_iter);
    read_count(j, "warmup_skip", where, o.filter.warmup_skip);
    if (j.contains("fixed")) o.fixed = parse_fixed(j["fixed"], model);
    if (o.starts < 1) throw ConfigError(std::string(where) + ".starts must be >= 1");
    if (!(o.grad_tol > 0.0) || !(o.step_tol > 0.0)) throw ConfigError(std::string(where) + " tolerances must be positive");
}

inline std::vector<double> initial_vector(const json& v, std::string_view where) {
    if (v.is_number()) return {v.get<double>()};
    const auto e = real_vector(v, where);
    return {e.data(), e.data() + e.size()};
}

inline SimulateSection parse_simulate(const json& j) {
    allow_keys(j, "simulate", {"n", "burn_in", "initial_variance", "certify", "output"});
    SimulateSection s;
    read_count(j, "n", "simulate", s.n);
    read_count(j, "burn_in", "simulate", s.options.burn_in);
    if (j.contains("initial_variance")) s.options.initial_variance = get_as<double>(j, "initial_variance", "simulate");
    read_opt(j, "certify", "simulate", s.options.certify);
    read_opt(j, "output", "simulate", s.output);
    return s;
}

inline FilterSection parse_filter(const json& j) {
    allow_keys(j, "filter", {"input", "column", "order", "initial", "warmup_skip", "output"});
    FilterSection s;
    s.input = get_as<std::string>(j, "input", "filter");
    read_opt(j, "column", "filter", s.column);
    read_opt(j, "order", "filter", s.order);
    if (s.order < 0 || s.order > 2) throw ConfigError("filter.order must be 0, 1 or 2");
    if (j.contains("initial")) s.config.initial = initial_vector(j["initial"], "filter.initial");
    read_count(j, "warmup_skip", "filter", s.config.warmup_skip);
    read_opt(j, "output", "filter", s.output);
    return s;
}

inline FitSection parse_fit(const json& j, const ModelSpec& model) {
    allow_keys(j, "fit", {"input", "column", "starts", "use_hessian", "grad_tol", "step_tol", "max_iter", "fixed",
                          "init", "region", "warmup_skip", "initial"});
    FitSection s;
    s.input = get_as<std::string>(j, "input", "fit");
    read_opt(j, "column", "fit", s.column);
    parse_fit_options(j, "fit", model, s.options);
    if (j.contains("initial")) s.options.filter.initial = initial_vector(j["initial"], "fit.initial");
    if (j.contains("init")) s.init = coefficient_vector(j["init"], model, "fit.init");
    if (j.contains("region")) s.region = parse_region(j["region"], model);
    if (!s.options.fixed.empty() && !s.init)
        throw ConfigError("fit.fixed needs fit.init to supply the held values");
    return s;
}

inline DiagnoseSection parse_diagnose(const json& j) {
    allow_keys(j, "diagnose", {"n_products", "n_replications", "norm", "invertibility_samples", "r_max"});
    DiagnoseSection s;
    read_count(j, "n_products", "diagnose", s.n_products);
    read_count(j, "n_replications", "diagnose", s.n_replications);
    read_count(j, "invertibility_samples", "diagnose", s.invertibility_samples);
    read_count(j, "r_max", "diagnose", s.r_max);
    if (j.contains("norm")) {
        const auto n = get_as<std::string>(j, "norm", "diagnose");
        if (n == "frobenius")
            s.norm = MatrixNorm::frobenius;
        else if (n == "operator")
            s.norm = MatrixNorm::operator_2;
        else
            throw ConfigError("diagnose.norm must be 'frobenius' or 'operator'");
    }
    if (s.n_products < 1 || s.n_replications < 1 || s.invertibility_samples < 1 || s.r_max < 1)
        throw ConfigError("diagnose counts must be >= 1");
    return s;
}

inline GridAxis parse_axis(const json& j, std::string_view where) {
    allow_keys(j, where, {"name", "values"});
    GridAxis a;
    a.name = get_as<std::string>(j, "name", where);
    if (!j.contains("values")) throw ConfigError(std::string(where) + " needs 'values'");
    const auto v = real_vector(j["values"], std::string(where) + ".values");
    a.values.assign(v.data(), v.data() + v.size());
    return a;
}

inline ExperimentPlan parse_mc(const json& j, const ModelSpec& model) {
    allow_keys(j, "mc", {"kind", "sizes", "replications", "burn_in", "coverage_level", "grid", "lyapunov_products",
                         "invertibility_samples", "filter_initial_variance", "alternative_initial_variance",
                         "equivalence_tolerance", "gap_table_steps", "decay_threshold", "fit", "region"});
    ExperimentPlan p;
    try {
        p.kind = parse_experiment_kind(get_as<std::string>(j, "kind", "mc"));
    } catch (const ConstraintError& e) {
        throw ConfigError(e.what());
    }
    if (j.contains("sizes")) {
        const auto& s = j["sizes"];
        if (!s.is_array()) throw ConfigError("mc.sizes must be an array of counts");
        for (const auto& e : s) {
            if (!e.is_number_integer() || e.get<long long>() < 1) throw ConfigError("mc.sizes must hold positive integers");
            p.sizes.push_back(e.get<std::size_t>());
        }
    }
    read_count(j, "replications", "mc", p.replications);
    read_count(j, "burn_in", "mc", p.burn_in);
    read_opt(j, "coverage_level", "mc", p.coverage_level);
    if (j.contains("grid")) {
        allow_keys(j["grid"], "mc.grid", {"x", "y"});
        if (!j["grid"].contains("x") || !j["grid"].contains("y")) throw ConfigError("mc.grid needs 'x' and 'y'");
        p.x_axis = parse_axis(j["grid"]["x"], "mc.grid.x");
        p.y_axis = parse_axis(j["grid"]["y"], "mc.grid.y");
    }
    read_count(j, "lyapunov_products", "mc", p.lyapunov_products);
    read_count(j, "invertibility_samples", "mc", p.invertibility_samples);
    if (j.contains("filter_initial_variance"))
        p.filter_initial_variance = get_as<double>(j, "filter_initial_variance", "mc");
    if (j.contains("alternative_initial_variance"))
        p.alternative_initial_variance = get_as<double>(j, "alternative_initial_variance", "mc");
    if (j.contains("equivalence_tolerance"))
        p.equivalence_tolerance = get_as<double>(j, "equivalence_tolerance", "mc");
    read_count(j, "gap_table_steps", "mc", p.gap_table_steps);
    read_opt(j, "decay_threshold", "mc", p.decay_threshold);
    if (j.contains("fit")) {
        allow_keys(j["fit"], "mc.fit", {"starts", "use_hessian", "grad_tol", "step_tol", "max_iter", "warmup_skip"});
        parse_fit_options(j["fit"], "mc.fit", model, p.fit);
    }
    if (j.contains("region")) p.region = parse_region(j["region"], model);
    return p;
}

}  // namespace detail

/// Overrides applied on top of the file (command-line flags).
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> threads;
};

/**
 * Validates `j` against the schema for `command` and applies overrides.
 * Unknown keys are rejected at every level.
 */
inline RunConfig parse_config(json j, const std::string& command, const ConfigOverrides& ov = {}) {
    detail::allow_keys(j, "config", {"command", "model", "theta", "innovation", "seed", "output_dir", "threads",
                                     "simulate", "filter", "fit", "diagnose", "mc"});
    if (ov.seed) j["seed"] = *ov.seed;
    if (ov.output_dir) j["output_dir"] = *ov.output_dir;
    if (ov.threads) j["threads"] = *ov.threads;

    RunConfig c;
    c.command = command;
    if (j.contains("command") && detail::get_as<std::string>(j, "command", "config") != command)
        throw ConfigError("config is for command '" + j["command"].get<std::string>() + "', not '" + command + "'");
    j["command"] = command;
    if (!j.contains("model")) throw ConfigError("config needs 'model'");
    c.model = detail::parse_model(j["model"]);
    if (j.contains("theta")) c.theta = detail::coefficient_vector(j["theta"], c.model, "theta");
    if (j.contains("innovation")) c.innovation = detail::parse_innovation(j["innovation"]);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0))
            throw ConfigError("seed must be a nonnegative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    detail::read_opt(j, "output_dir", "config", c.output_dir);
    detail::read_count(j, "threads", "config", c.threads);
    if (c.threads < 1) throw ConfigError("threads must be >= 1");

    if (command == "simulate") {
        c.simulate = detail::parse_simulate(j.contains("simulate") ? j["simulate"] : json::object());
        (void)c.theta_vector();
    } else if (command == "filter") {
        if (!j.contains("filter")) throw ConfigError("filter command needs a 'filter' section");
        c.filter = detail::parse_filter(j["filter"]);
        (void)c.theta_vector();
    } else if (command == "fit") {
        if (!j.contains("fit")) throw ConfigError("fit command needs a 'fit' section");
        c.fit = detail::parse_fit(j["fit"], c.model);
        c.fit->options.threads = c.threads;
    } else if (command == "diagnose") {
        c.diagnose = detail::parse_diagnose(j.contains("diagnose") ? j["diagnose"] : json::object());
        (void)c.theta_vector();
    } else if (command == "mc") {
        if (!j.contains("mc")) throw ConfigError("mc command needs an 'mc' section");
        auto p = detail::parse_mc(j["mc"], c.model);
        p.model = c.model;
        p.theta_true = c.theta_vector().coefficients();
        p.innovation = c.innovation;
        p.seed = c.seed;
        p.output_dir = c.output_dir;
        p.threads = c.threads;
        try {
            p.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("invalid plan: ") + e.what());
        }
        c.mc = std::move(p);
    } else {
        throw ConfigError("unknown command '" + command + "'");
    }
    // output_dir and threads do not change results
    json hashed = j;
    hashed.erase("output_dir");
    hashed.erase("threads");
    c.effective = hashed;
    return c;
}

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace volqml
