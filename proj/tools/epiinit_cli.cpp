// Command-line front end: simulation, initial-state estimation, ensemble
// error studies and the re-initialization study, with manifest-based
// reproducibility.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "epiinit/backcast.hpp"
#include "epiinit/config.hpp"
#include "epiinit/csv.hpp"
#include "epiinit/kalman.hpp"
#include "epiinit/simulate.hpp"
#include "epiinit/study.hpp"
#include "epiinit/version.hpp"

namespace fs = std::filesystem;
using namespace epiinit;

namespace {

struct Settings {
    ExperimentConfig experiment;
    ModelParams params;
    Vec5 x0 = (Vec5() << 0, 2, 2, 4, 2).finished();
    long long population = 1'000'000;
    double top_fraction = 2.0 / 3.0;
    NlsConfig nls;
    std::string source = "lti";
    std::string method = "all";
    std::string county;
    std::string data_path;
    std::string table_path;
    bool nonneg = false;
    bool svg = false;
};

Vec5 parse_vec5(const std::string& text, const std::string& what) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) values.push_back(std::stod(field));
    if (values.size() == 1) return Vec5::Constant(values[0]);
    if (values.size() != 5)
        throw InvalidParameterError(what + " needs one value or five comma-separated values");
    return Eigen::Map<const Vec5>(values.data());
}

std::string vec5_to_string(const Vec5& v) {
    std::string out;
    for (int i = 0; i < kStateDim; ++i) {
        if (i) out += ',';
        out += format_number(v[i]);
    }
    return out;
}

/// One CLI option with config-file fallback: flag beats config beats default.
template <typename T>
void resolve(const CLI::App& app, const std::string& flag, const KeyValueConfig& cfg,
             const std::string& key, T& target) {
    const CLI::Option* option = app.get_option_no_throw(flag);
    if (option && option->count() > 0) return;  // explicit flag already parsed into target
    if (!cfg.has(key)) return;
    std::istringstream in(cfg.get(key));
    if constexpr (std::is_same_v<T, std::string>) {
        target = cfg.get(key);
    } else if constexpr (std::is_same_v<T, bool>) {
        target = (cfg.get(key) == "1" || cfg.get(key) == "true");
    } else {
        in >> target;
        if (in.fail()) throw DataFormatError("config key '" + key + "' has invalid value");
    }
}

fs::path prepare_output_dir(const std::string& explicit_out, const std::string& command) {
    if (!explicit_out.empty()) {
        fs::create_directories(explicit_out);
        return explicit_out;
    }
    const char* env_root = std::getenv("EPIINIT_OUT_ROOT");
    const fs::path root = env_root ? fs::path(env_root) : fs::path("out");
    const std::time_t now = std::time(nullptr);
    std::tm tm_buf{};
    localtime_r(&now, &tm_buf);
    char stamp[32];
    std::snprintf(stamp, sizeof(stamp), "%04d%02d%02d-%02d%02d%02d", tm_buf.tm_year + 1900,
                  tm_buf.tm_mon + 1, tm_buf.tm_mday, tm_buf.tm_hour, tm_buf.tm_min, tm_buf.tm_sec);
    fs::path dir = root / command / stamp;
    for (int suffix = 1; fs::exists(dir); ++suffix)
        dir = root / command / (std::string(stamp) + "-" + std::to_string(suffix));
    fs::create_directories(dir);
    return dir;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
    if (!out) throw DataFormatError("cannot write to '" + path.string() + "'");
    return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const Settings& s,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::vector<std::pair<std::string, std::string>> entries;
    entries.emplace_back("command", command);
    entries.emplace_back("version", kVersion);
    entries.emplace_back("seed", std::to_string(s.experiment.seed));
    entries.emplace_back("d", std::to_string(s.experiment.d));
    entries.emplace_back("m", std::to_string(s.experiment.m));
    entries.emplace_back("k_min", std::to_string(s.experiment.k_min));
    entries.emplace_back("realizations", std::to_string(s.experiment.realizations));
    entries.emplace_back("threshold", std::to_string(s.experiment.threshold));
    entries.emplace_back("q0", vec5_to_string(s.experiment.q0_diag));
    entries.emplace_back("r", format_number(s.experiment.r));
    entries.emplace_back("sigma", format_number(s.params.sigma));
    entries.emplace_back("gamma_a", format_number(s.params.gamma_a));
    entries.emplace_back("gamma_i", format_number(s.params.gamma_i));
    entries.emplace_back("f0", format_number(s.params.f0));
    entries.emplace_back("f1", format_number(s.params.f1));
    entries.emplace_back("beta", format_number(s.params.beta));
    entries.emplace_back("rho", format_number(s.params.rho));
    entries.emplace_back("theta_a", format_number(s.params.theta_a));
    entries.emplace_back("theta_e", format_number(s.params.theta_e));
    entries.emplace_back("x0", vec5_to_string(s.x0));
    entries.emplace_back("population", std::to_string(s.population));
    entries.emplace_back("top_fraction", format_number(s.top_fraction));
    entries.emplace_back("nls_s_tol", format_number(s.nls.s_tol));
    entries.emplace_back("nls_max_iters", std::to_string(s.nls.max_iters));
    entries.emplace_back("nonneg", s.nonneg ? "1" : "0");
    for (const auto& e : extra) entries.push_back(e);
    auto out = open_output(dir / "manifest.cfg");
    write_key_values(out, entries);
}

std::vector<Method> methods_from(const std::string& spec) {
    if (spec == "all") return {Method::RTS, Method::OLS, Method::NLS};
    return {method_from_string(spec)};
}

int cmd_simulate(const Settings& s, const std::string& out_dir) {
    const fs::path dir = prepare_output_dir(out_dir, "simulate");
    std::vector<Trajectory> trajectories;
    for (int i = 0; i < s.experiment.realizations; ++i) {
        const std::uint64_t seed = stream_seed(s.experiment.seed, i);
        if (s.source == "lti") {
            trajectories.push_back(
                simulate_lti(s.params, s.x0, s.experiment.d, s.experiment.noise(), seed));
        } else if (s.source == "ctmc") {
            trajectories.push_back(simulate_ctmc(s.params, StateVector::from(s.x0), s.experiment.d,
                                                 s.population, seed)
                                       .trajectory);
        } else {
            throw InvalidParameterError("unknown source '" + s.source + "' (expected lti or ctmc)");
        }
    }
    auto out = open_output(dir / "trajectories.csv");
    export_trajectories(out, trajectories);
    write_manifest(dir, "simulate", s, {{"source", s.source}});
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_estimate(Settings s, const std::string& out_dir) {
    if (s.data_path.empty()) throw InvalidParameterError("estimate needs --data <incidence.csv>");
    const IncidenceData data = ingest_incidence_file(s.data_path, s.experiment.threshold);

    const fs::path dir = prepare_output_dir(out_dir, "estimate");
    std::vector<std::pair<std::string, SmoothedEstimate>> rows;
    for (const auto& [county, series] : data.by_county) {
        if (!s.county.empty() && county != s.county) continue;
        MeasurementSeries y = series;
        y.r = s.experiment.r;
        ExperimentConfig cfg = s.experiment;
        const int data_horizon = y.horizon();
        if (cfg.d > data_horizon)
            throw InvalidParameterError("county " + county + " has only " +
                                        std::to_string(data_horizon + 1) + " days, config needs " +
                                        std::to_string(cfg.d + 1));
        y.y.resize(cfg.d + 1);
        EstimateOptions options;
        options.nonneg = s.nonneg;
        options.nls = s.nls;
        for (Method method : methods_from(s.method))
            rows.emplace_back(county,
                              estimate_initial_state(method, y, s.params, s.experiment.noise(),
                                                     cfg, options));
    }
    if (rows.empty())
        throw InvalidParameterError(s.county.empty() ? "no counties in input"
                                                     : "county '" + s.county + "' not in input");
    auto out = open_output(dir / "estimates.csv");
    export_estimates(out, rows);
    write_manifest(dir, "estimate", s,
                   {{"method", s.method}, {"data", s.data_path}, {"county", s.county}});
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_study(const Settings& s, const std::string& out_dir) {
    const DataSource source = s.source == "ctmc" ? DataSource::CTMC : DataSource::LTI;
    if (s.source != "lti" && s.source != "ctmc")
        throw InvalidParameterError("unknown source '" + s.source + "' (expected lti or ctmc)");
    StudyOptions options;
    options.params = s.params;
    options.x0 = s.x0;
    options.population = s.population;
    options.ctmc_kept_fraction = s.top_fraction;
    options.nls = s.nls;
    const StudyResult result = run_error_study(s.experiment, PriorRanges{}, source, options);

    const fs::path dir = prepare_output_dir(out_dir, "study");
    const std::string study_name = std::string("errors-") + source_name(source);
    {
        auto out = open_output(dir / "errors.csv");
        out << "method,state,realization_index,error\n";
        for (const ErrorEnsemble& ens : result.ensembles)
            for (size_t i = 0; i < ens.errors.size(); ++i)
                out << method_name(ens.method) << ',' << kStateNames[ens.state_index] << ',' << i
                    << ',' << format_number(ens.errors[i]) << '\n';
    }
    {
        std::vector<std::tuple<std::string, std::string, std::string, const KdeCurve*>> curves;
        for (const auto& [key, curve] : result.kdes)
            curves.emplace_back(study_name, method_name(static_cast<Method>(key.first)),
                                kStateNames[key.second], &curve);
        auto out = open_output(dir / "kde.csv");
        export_kdes(out, curves);
    }
    {
        auto out = open_output(dir / "summary.csv");
        export_study_summary(out, result);
    }
    if (s.svg) {
        for (int state = 0; state < kStateDim; ++state) {
            std::vector<std::pair<std::string, const KdeCurve*>> curves;
            for (const auto& [key, curve] : result.kdes)
                if (key.second == state)
                    curves.emplace_back(method_name(static_cast<Method>(key.first)), &curve);
            if (curves.empty()) continue;
            auto out = open_output(dir / (std::string("kde_") + kStateNames[state] + ".svg"));
            export_kde_svg(out, curves);
        }
    }
    write_manifest(dir, "study", s, {{"source", s.source}});
    for (const std::string& warning : result.warnings) std::cerr << "warning: " << warning << "\n";
    std::cout << dir.string() << "\n";
    return 0;
}

std::vector<ReinitCondition> read_reinit_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataFormatError("cannot open table '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw DataFormatError("empty table '" + path + "'");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    // Accept the estimate export layout or a minimal county,method,I,E,A one.
    if (header.rfind("county,method,I,E,A", 0) != 0)
        throw DataFormatError("expected header starting with 'county,method,I,E,A'");
    std::vector<ReinitCondition> conditions;
    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string county, method, i, e, a;
        if (!std::getline(ss, county, ',') || !std::getline(ss, method, ',') ||
            !std::getline(ss, i, ',') || !std::getline(ss, e, ',') || !std::getline(ss, a, ','))
            throw DataFormatError("table line " + std::to_string(line_no) + ": expected at least 5 fields");
        conditions.push_back(ReinitCondition{county, method_from_string(method), std::stoll(i),
                                             std::stoll(e), std::stoll(a)});
    }
    if (conditions.empty()) throw DataFormatError("table '" + path + "' holds no rows");
    return conditions;
}

int cmd_reinit(const Settings& s, const std::string& out_dir) {
    if (s.table_path.empty()) throw InvalidParameterError("reinit needs --table <estimates.csv>");
    const std::vector<ReinitCondition> conditions = read_reinit_table(s.table_path);
    const ReinitResult result =
        run_reinit_study(conditions, s.params, s.experiment.realizations, s.experiment.d,
                         s.population, s.experiment.seed);

    const fs::path dir = prepare_output_dir(out_dir, "reinit");
    {
        std::vector<std::tuple<std::string, std::string, std::string, const KdeCurve*>> curves;
        for (const auto& entry : result.entries)
            if (entry.kde)
                curves.emplace_back("reinit:" + entry.condition.county,
                                    method_name(entry.condition.method),
                                    kStateNames[entry.state_index], &*entry.kde);
        auto out = open_output(dir / "kde.csv");
        export_kdes(out, curves);
    }
    {
        auto out = open_output(dir / "summary.csv");
        out << "county,method,state,median,q25,q75,n\n";
        for (const auto& entry : result.entries) {
            double median = 0, q25 = 0, q75 = 0;
            if (entry.kde) {
                median = kde_quantile(*entry.kde, 0.5);
                q25 = kde_quantile(*entry.kde, 0.25);
                q75 = kde_quantile(*entry.kde, 0.75);
            }
            out << entry.condition.county << ',' << method_name(entry.condition.method) << ','
                << kStateNames[entry.state_index] << ',' << format_number(median) << ','
                << format_number(q25) << ',' << format_number(q75) << ','
                << entry.log_populations.size() << '\n';
        }
    }
    if (s.svg) {
        for (int state : {kInfected, kExposed, kAsymptomatic}) {
            std::vector<std::pair<std::string, const KdeCurve*>> curves;
            for (const auto& entry : result.entries)
                if (entry.state_index == state && entry.kde)
                    curves.emplace_back(entry.condition.county + "/" +
                                            method_name(entry.condition.method),
                                        &*entry.kde);
            if (curves.empty()) continue;
            auto out = open_output(dir / (std::string("kde_") + kStateNames[state] + ".svg"));
            export_kde_svg(out, curves);
        }
    }
    write_manifest(dir, "reinit", s, {{"table", s.table_path}});
    for (const std::string& warning : result.warnings) std::cerr << "warning: " << warning << "\n";
    std::cout << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Initial-state estimation toolkit for epidemic compartment models"};
    app.set_version_flag("--version", std::string("epiinit ") + kVersion);
    app.require_subcommand(1);

    Settings s;
    std::string config_path, out_dir, x0_text, q0_text;
    double seed_double = -1;  // CLI11 handles uint64 poorly through text configs

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value configuration file");
        cmd->add_option("--out", out_dir, "output directory (default out/<cmd>/<timestamp>)");
        cmd->add_option("--seed", s.experiment.seed, "master seed");
        cmd->add_option("--d", s.experiment.d, "horizon (days 0..d)");
        cmd->add_option("--m", s.experiment.m, "initialization index");
        cmd->add_option("--k-min", s.experiment.k_min, "first batch-method measurement index");
        cmd->add_option("--realizations", s.experiment.realizations, "ensemble size");
        cmd->add_option("--threshold", s.experiment.threshold, "case threshold selecting day 0");
        cmd->add_option("--q0", q0_text, "process-noise floor diagonal (scalar or 5 values)");
        cmd->add_option("--r", s.experiment.r, "measurement variance");
        cmd->add_option("--sigma", s.params.sigma, "rate out of the exposed state");
        cmd->add_option("--gamma-a", s.params.gamma_a, "rate out of the asymptomatic state");
        cmd->add_option("--gamma-i", s.params.gamma_i, "rate out of the infected state");
        cmd->add_option("--f0", s.params.f0, "exposed-to-infected fraction");
        cmd->add_option("--f1", s.params.f1, "asymptomatic-to-infected fraction");
        cmd->add_option("--beta", s.params.beta, "indirect transmission rate");
        cmd->add_option("--rho", s.params.rho, "infectious pressure decay rate");
        cmd->add_option("--theta-a", s.params.theta_a, "asymptomatic shedding weight");
        cmd->add_option("--theta-e", s.params.theta_e, "exposed shedding weight");
        cmd->add_option("--x0", x0_text, "initial state (5 comma-separated values)");
        cmd->add_option("--population", s.population, "county population for the Markov chain");
        cmd->add_option("--top-fraction", s.top_fraction, "most-spread fraction kept (ctmc study)");
        cmd->add_option("--nls-s-tol", s.nls.s_tol, "reweighting convergence tolerance");
        cmd->add_option("--nls-max-iters", s.nls.max_iters, "reweighting iteration cap");
        (void)seed_double;
    };

    CLI::App* simulate = app.add_subcommand("simulate", "generate synthetic trajectories");
    add_common(simulate);
    simulate->add_option("--source", s.source, "lti or ctmc");

    CLI::App* estimate = app.add_subcommand("estimate", "estimate the initial state from incidence data");
    add_common(estimate);
    estimate->add_option("--method", s.method, "rts, ols, nls or all");
    estimate->add_option("--data", s.data_path, "incidence CSV (date,county,cumulative_cases)");
    estimate->add_option("--county", s.county, "restrict to one county");
    estimate->add_flag("--nonneg", s.nonneg, "enforce nonnegative estimates (OLS)");

    CLI::App* study = app.add_subcommand("study", "ensemble error study with density fits");
    add_common(study);
    study->add_option("--source", s.source, "lti or ctmc");
    study->add_flag("--svg", s.svg, "also render density curves as SVG");

    CLI::App* reinit = app.add_subcommand("reinit", "simulate onward from estimated initial states");
    add_common(reinit);
    reinit->add_option("--table", s.table_path, "estimates CSV (county,method,I,E,A,...)");
    reinit->add_flag("--svg", s.svg, "also render density curves as SVG");

    CLI11_PARSE(app, argc, argv);
    CLI::App* active = app.get_subcommands().front();
    const std::string command = active->get_name();

    try {
        if (!config_path.empty()) {
            const KeyValueConfig cfg = KeyValueConfig::parse_file(config_path);
            if (cfg.has("command") && cfg.get("command") != command)
                std::cerr << "note: config was written by '" << cfg.get("command") << "'\n";
            resolve(*active, "--seed", cfg, "seed", s.experiment.seed);
            resolve(*active, "--d", cfg, "d", s.experiment.d);
            resolve(*active, "--m", cfg, "m", s.experiment.m);
            resolve(*active, "--k-min", cfg, "k_min", s.experiment.k_min);
            resolve(*active, "--realizations", cfg, "realizations", s.experiment.realizations);
            resolve(*active, "--threshold", cfg, "threshold", s.experiment.threshold);
            resolve(*active, "--q0", cfg, "q0", q0_text);
            resolve(*active, "--r", cfg, "r", s.experiment.r);
            resolve(*active, "--sigma", cfg, "sigma", s.params.sigma);
            resolve(*active, "--gamma-a", cfg, "gamma_a", s.params.gamma_a);
            resolve(*active, "--gamma-i", cfg, "gamma_i", s.params.gamma_i);
            resolve(*active, "--f0", cfg, "f0", s.params.f0);
            resolve(*active, "--f1", cfg, "f1", s.params.f1);
            resolve(*active, "--beta", cfg, "beta", s.params.beta);
            resolve(*active, "--rho", cfg, "rho", s.params.rho);
            resolve(*active, "--theta-a", cfg, "theta_a", s.params.theta_a);
            resolve(*active, "--theta-e", cfg, "theta_e", s.params.theta_e);
            resolve(*active, "--x0", cfg, "x0", x0_text);
            resolve(*active, "--population", cfg, "population", s.population);
            resolve(*active, "--top-fraction", cfg, "top_fraction", s.top_fraction);
            resolve(*active, "--nls-s-tol", cfg, "nls_s_tol", s.nls.s_tol);
            resolve(*active, "--nls-max-iters", cfg, "nls_max_iters", s.nls.max_iters);
            resolve(*active, "--source", cfg, "source", s.source);
            resolve(*active, "--method", cfg, "method", s.method);
            resolve(*active, "--county", cfg, "county", s.county);
            resolve(*active, "--data", cfg, "data", s.data_path);
            resolve(*active, "--table", cfg, "table", s.table_path);
            resolve(*active, "--nonneg", cfg, "nonneg", s.nonneg);
        }
        if (!q0_text.empty()) s.experiment.q0_diag = parse_vec5(q0_text, "--q0");
        if (!x0_text.empty()) s.x0 = parse_vec5(x0_text, "--x0");
        s.params.validate();
        s.nls.validate();
        s.experiment.noise().validate();
        if (s.experiment.d < 1) throw InvalidParameterError("horizon d must be at least 1");
        if (s.experiment.realizations < 1)
            throw InvalidParameterError("realizations must be at least 1");
        // The smoothing indices only constrain the estimation commands.
        if (command == "estimate" || command == "study") s.experiment.validate();

        if (command == "simulate") return cmd_simulate(s, out_dir);
        if (command == "estimate") return cmd_estimate(s, out_dir);
        if (command == "study") return cmd_study(s, out_dir);
        if (command == "reinit") return cmd_reinit(s, out_dir);
        std::cerr << "epiinit: unknown command '" << command << "'\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "epiinit " << command << ": " << err.what() << "\n";
        return 1;
    }
}
