// Acceptance suite: one self-contained check per shipped guarantee, each
// printing a single PASS/FAIL line. Exits nonzero if any check fails.
//
// Usage: acceptance [path-to-epiinit-cli]
// The CLI path is only needed by the manifest-determinism check.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epiinit/backcast.hpp"
#include "epiinit/csv.hpp"
#include "epiinit/kalman.hpp"
#include "epiinit/kde.hpp"
#include "epiinit/model.hpp"
#include "epiinit/simulate.hpp"
#include "epiinit/study.hpp"

namespace fs = std::filesystem;
using namespace epiinit;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail,
            Clock::time_point started) {
    const double seconds =
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - started).count() /
        1000.0;
    std::printf("[%s] criterion %d: %s (%s; %.2fs)\n", pass ? "PASS" : "FAIL", index, name.c_str(),
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

ModelParams random_params(std::mt19937_64& engine) {
    auto u = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine);
    };
    return ModelParams{u(0, 1), u(0, 1), u(0, 1), u(0, 1), u(0, 1),
                       u(0, 2.5), u(0.05, 2), u(0, 1.5), u(0, 1.5)};
}

// ---------------------------------------------------------------------------
// 1. Channel decomposition reproduces the closed-form process covariance.
void criterion_channel_identity() {
    const auto started = Clock::now();
    std::mt19937_64 engine(101);
    const auto b = channel_stoichiometry();
    NoiseConfig no_floor;
    no_floor.q0_diag.setZero();
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const ModelParams p = random_params(engine);
        Vec5 x;
        for (int i = 0; i < kStateDim; ++i)
            x[i] = std::uniform_real_distribution<double>(0.0, 100.0)(engine);
        const Mat5 direct = process_noise_cov(p, x, no_floor);
        const Mat5 from_channels = b * channel_rates(p, x).asDiagonal() * b.transpose();
        worst = std::max(worst,
                         ((direct - from_channels).cwiseAbs() /
                          std::max(1.0, direct.cwiseAbs().maxCoeff()))
                             .maxCoeff());
    }
    report(1, "channel decomposition equals the closed-form noise covariance", worst <= 1e-12,
           "max relative deviation " + format_number(worst) + " over 100 draws", started);
}

// ---------------------------------------------------------------------------
// 2. One-step simulator increments match the model mean and covariance.
void criterion_simulator_moments() {
    const auto started = Clock::now();
    const ModelParams p{0.5, 0.25, 0.2, 0.6, 0.4, 1.2, 0.3, 0.5, 0.3};
    const Vec5 x0 = (Vec5() << 0, 10, 10, 10, 5).finished();
    NoiseConfig noise;
    noise.q0_diag.setZero();
    const Mat5 f = build_model_matrices(p).f;
    const Vec5 mean_expected = f * x0 - x0;
    const Mat5 cov_expected = process_noise_cov(p, x0, noise);

    const int n = 1'000'000;
    Eigen::Matrix<double, 5, Eigen::Dynamic> increments(5, n);
    for (int i = 0; i < n; ++i) {
        const Trajectory traj = simulate_lti(p, x0, 1, noise, 50'000 + i);
        increments.col(i) = traj.states[1] - traj.states[0];
    }
    const Vec5 mean = increments.rowwise().mean();
    bool pass = true;
    double worst_z = 0.0;  // over stochastic entries; deterministic ones use the flat slack
    for (int s = 0; s < kStateDim; ++s) {
        const auto centered = increments.row(s).array() - mean[s];
        const double se = std::sqrt(centered.square().sum() / (n - 1)) / std::sqrt(double(n));
        const double err = std::abs(mean[s] - mean_expected[s]);
        if (err > 3.0 * se + 1e-9) pass = false;
        if (se > 1e-9) worst_z = std::max(worst_z, err / se);
    }
    for (int a = 0; a < kStateDim; ++a)
        for (int c = a; c < kStateDim; ++c) {
            const auto products =
                (increments.row(a).array() - mean[a]) * (increments.row(c).array() - mean[c]);
            const double cov = products.sum() / (n - 1);
            const double se =
                std::sqrt((products - products.mean()).square().sum() / (n - 1)) / std::sqrt(double(n));
            const double err = std::abs(cov - cov_expected(a, c));
            if (err > 3.0 * se + 1e-9) pass = false;
            if (se > 1e-9) worst_z = std::max(worst_z, err / se);
        }
    report(2, "one-step increment moments match the linear model", pass,
           "10^6 draws, worst Monte-Carlo z-score " + format_number(worst_z), started);
}

// ---------------------------------------------------------------------------
// 3. Analytic residual covariance equals its Monte-Carlo estimate; this also
//    certifies the orientation of the piecewise power index in its elements.
void criterion_omega_monte_carlo() {
    const auto started = Clock::now();
    const ModelParams p{0.5, 0.25, 0.2, 0.6, 0.4, 1.2, 0.3, 0.5, 0.3};
    const ModelMatrices mats = build_model_matrices(p);
    const int d = 10, m = 5;
    NoiseConfig noise;
    noise.q0_diag = Vec5::Constant(0.3);
    const Mat5 q = process_noise_cov(p, (Vec5() << 0, 10, 10, 10, 5).finished(), noise);
    const double r = 0.25;
    const OmegaMatrix analytic =
        build_omega(std::vector<Eigen::MatrixXd>(d + 1, q), mats, m, 0, d, r);

    std::vector<RowVec5> rows(d + 1);
    const Mat5 f_inv = mats.f.inverse();
    for (int k = 0; k <= d; ++k) {
        RowVec5 row = mats.h;
        for (int step = 0; step < std::abs(k - m); ++step) row = row * (k >= m ? mats.f : f_inv);
        rows[k] = row;
    }

    const int n = 100'000;
    std::mt19937_64 engine(303);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::LLT<Mat5> chol(q);
    Eigen::MatrixXd residuals(d + 1, n);
    const Vec5 x0 = (Vec5() << 0, 10, 10, 10, 5).finished();
    for (int i = 0; i < n; ++i) {
        Vec5 x = x0;
        std::vector<Vec5> states;
        std::vector<double> y;
        for (int k = 0; k <= d; ++k) {
            states.push_back(x);
            y.push_back(x[kCumIncidence] + std::sqrt(r) * gauss(engine));
            Vec5 z;
            for (int j = 0; j < kStateDim; ++j) z[j] = gauss(engine);
            x = mats.f * x + chol.matrixL() * z;
        }
        for (int k = 0; k <= d; ++k) residuals(k, i) = y[k] - rows[k].dot(states[m]);
    }
    const Eigen::VectorXd mean = residuals.rowwise().mean();
    bool pass = true;
    double worst_z = 0.0;
    for (int k = 0; k <= d; ++k)
        for (int l = k; l <= d; ++l) {
            const auto products =
                (residuals.row(k).array() - mean[k]) * (residuals.row(l).array() - mean[l]);
            const double cov = products.sum() / (n - 1);
            const double se =
                std::sqrt((products - products.mean()).square().sum() / (n - 1)) / std::sqrt(double(n));
            const double err = std::abs(cov - analytic.omega(k, l));
            if (err > 3.0 * se + 1e-9) pass = false;
            if (se > 0) worst_z = std::max(worst_z, err / se);
        }
    report(3, "residual covariance matches Monte-Carlo (constant Q, d=10, m=5)", pass,
           "10^5 trajectories, worst z-score " + format_number(worst_z), started);
}

// ---------------------------------------------------------------------------
// 4. Smoother equals the weighted batch estimate under constant noise.
void criterion_linear_gaussian_equivalence() {
    const auto started = Clock::now();
    PriorRanges ranges;
    std::mt19937_64 engine(2718);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int d = 12, m = 6, k_min = 1;
    const Mat5 q = 1e-3 * Mat5::Identity();
    NoiseConfig noise;
    noise.q0_diag = Vec5::Constant(1e-3);
    noise.r = 0.1;

    int checked = 0, skipped = 0;
    double worst = 0.0;
    int draw = 0;
    while (checked < 20 && draw < 100) {
        const ModelParams p = sample_prior(ranges, 9000 + draw++);
        const ModelMatrices mats = build_model_matrices(p);
        MeasurementSeries y;
        y.r = noise.r;
        Vec5 x = (Vec5() << 0, 500, 500, 1000, 500).finished();
        for (int k = 0; k <= d; ++k) {
            y.y.push_back(x[kCumIncidence] + std::sqrt(noise.r) * gauss(engine));
            Vec5 z;
            for (int j = 0; j < kStateDim; ++j) z[j] = gauss(engine);
            x = mats.f * x + std::sqrt(1e-3) * z;
        }
        PhiSystem sys = build_phi(mats, m, d, k_min, SpectralReport{});
        sys.y = Eigen::Map<const Eigen::VectorXd>(y.y.data() + k_min, d - k_min + 1);
        const OmegaMatrix omega =
            build_omega(std::vector<Eigen::MatrixXd>(d + 1, q), mats, m, k_min, d, noise.r);

        // Instances too ill-conditioned for double precision to certify 1e-6
        // agreement are skipped (and counted).
        Eigen::LLT<Eigen::MatrixXd> chol(omega.omega);
        const Eigen::MatrixXd whitened =
            Eigen::MatrixXd(chol.matrixL()).triangularView<Eigen::Lower>().solve(sys.phi);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(whitened);
        if (svd.singularValues()[0] > 1e3 * svd.singularValues()[4]) {
            ++skipped;
            continue;
        }

        const GlsSolution gls = gls_solve(sys.phi, sys.y, omega.omega);
        KalmanOptions kopts;
        kopts.fixed_q = q;
        const KalmanPass pass = kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]),
                                               1e10 * Mat5::Identity(), kopts);
        const Vec5 smoothed = rts_backward(pass, mats)[m].x;
        for (int s = 0; s < kStateDim; ++s)
            worst = std::max(worst, std::abs(smoothed[s] - gls.x[s]) /
                                        std::max(1.0, std::abs(gls.x[s])));
        ++checked;
    }
    report(4, "smoother equals the weighted batch estimate (constant Q)",
           checked == 20 && worst <= 1e-6,
           std::to_string(checked) + " instances (" + std::to_string(skipped) +
               " ill-conditioned skipped), worst relative gap " + format_number(worst),
           started);
}

// ---------------------------------------------------------------------------
// 5. Unweighted batch estimation recovers the state from noise-free data.
void criterion_ols_recovery() {
    const auto started = Clock::now();
    PriorRanges ranges;
    std::mt19937_64 engine(515);
    double worst = 0.0;
    int done = 0, skipped = 0, draw = 0;
    while (done < 50 && draw < 200) {
        const ModelParams p = sample_prior(ranges, 70'000 + draw++);
        const ModelMatrices mats = build_model_matrices(p);
        PhiSystem sys = build_phi(mats, 12, 24, 6, spectral_report(mats));
        if (numerical_rank(sys.phi) < sys.phi.cols()) {
            ++skipped;  // not a full-rank instance
            continue;
        }
        Eigen::VectorXd x_true(5);
        for (int s = 0; s < kStateDim; ++s)
            x_true[s] = std::uniform_real_distribution<double>(1.0, 50.0)(engine);
        sys.y = sys.phi * x_true;
        const SmoothedEstimate est = ols_estimate(sys);
        for (int s = 0; s < kStateDim; ++s)
            worst = std::max(worst, std::abs(est.x[s] - x_true[s]) /
                                        std::max(1.0, std::abs(x_true[s])));
        ++done;
    }
    report(5, "noise-free batch estimation recovers the initialization state",
           done == 50 && worst <= 1e-8,
           std::to_string(done) + " full-rank instances (" + std::to_string(skipped) +
               " rank-deficient skipped), worst relative error " + format_number(worst),
           started);
}

// ---------------------------------------------------------------------------
// 6. Observability: rank collapses without inflow to I, full rank generically.
void criterion_observability() {
    const auto started = Clock::now();
    ModelParams decoupled{0.5, 0.25, 0.2, 0.0, 0.0, 1.2, 0.3, 0.5, 0.3};
    const int degenerate_rank = numerical_rank(observability_matrix(build_model_matrices(decoupled)));
    bool generic_ok = true;
    PriorRanges ranges;
    for (int trial = 0; trial < 100; ++trial) {
        const ModelParams p = sample_prior(ranges, 31'000 + trial);
        if (numerical_rank(observability_matrix(build_model_matrices(p))) != 5) generic_ok = false;
    }
    report(6, "observability rank: 1 when decoupled, 5 on generic draws",
           degenerate_rank == 1 && generic_ok,
           "decoupled rank " + std::to_string(degenerate_rank) + ", 100 prior draws", started);
}

// ---------------------------------------------------------------------------
// 7. Linear-data protocol: ensemble error spreads order as published.
void criterion_lti_protocol() {
    const auto started = Clock::now();
    ExperimentConfig cfg;
    cfg.d = 42;
    cfg.m = 30;
    cfg.k_min = 19;
    cfg.realizations = 100;
    cfg.q0_diag = Vec5::Constant(0.1);
    cfg.r = 0.1;
    cfg.seed = 7;
    StudyOptions options;
    options.params = ModelParams{};  // default parametrization
    options.x0 = (Vec5() << 0, 2, 2, 4, 2).finished();
    const StudyResult result = run_error_study(cfg, PriorRanges{}, DataSource::LTI, options);

    std::map<std::pair<int, int>, double> stds;
    for (const StudySummaryRow& row : result.summary)
        stds[{static_cast<int>(row.method), row.state_index}] = row.std_err;
    const double rts_i = stds[{0, kInfected}];
    const double ols_i = stds[{1, kInfected}];
    const double nls_i = stds[{2, kInfected}];
    const double ols_ic = stds[{1, kCumIncidence}];
    const double nls_ic = stds[{2, kCumIncidence}];
    const bool pass = rts_i <= ols_i && rts_i <= nls_i && ols_ic > nls_ic;
    report(7, "ensemble protocol on linear data reproduces the error ordering", pass,
           "std I: RTS " + format_number(rts_i) + " vs OLS " + format_number(ols_i) + " / NLS " +
               format_number(nls_i) + "; std I_c: OLS " + format_number(ols_ic) + " vs NLS " +
               format_number(nls_ic),
           started);
}

// ---------------------------------------------------------------------------
// 8. Markov-chain study and re-initialization study run end to end.
void criterion_ctmc_and_reinit() {
    const auto started = Clock::now();
    bool pass = true;
    std::string detail;

    // Markov-chain ensemble study, exact incidence measurements.
    ExperimentConfig cfg;
    cfg.d = 42;
    cfg.m = 30;
    cfg.k_min = 19;
    cfg.realizations = 50;
    cfg.q0_diag = Vec5::Constant(2.0);
    cfg.r = 0.5;
    cfg.seed = 7;
    StudyOptions options;
    options.params = ModelParams{};
    options.x0 = (Vec5() << 0, 2, 2, 4, 2).finished();
    options.population = 1'000'000;
    const StudyResult study = run_error_study(cfg, PriorRanges{}, DataSource::CTMC, options);

    // Emit the density export end-to-end and check normalization from disk.
    const fs::path dir = fs::temp_directory_path() / "epiinit-acceptance-kde";
    fs::create_directories(dir);
    {
        std::vector<std::tuple<std::string, std::string, std::string, const KdeCurve*>> curves;
        for (const auto& [key, curve] : study.kdes)
            curves.emplace_back("errors-ctmc", method_name(static_cast<Method>(key.first)),
                                kStateNames[key.second], &curve);
        std::ofstream out(dir / "kde.csv", std::ios::binary);
        export_kdes(out, curves);
    }
    {
        std::ifstream in(dir / "kde.csv");
        std::string line;
        std::getline(in, line);  // header
        std::map<std::string, std::vector<std::pair<double, double>>> curves;
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string study_name, method, state, grid, density;
            std::getline(ss, study_name, ',');
            std::getline(ss, method, ',');
            std::getline(ss, state, ',');
            std::getline(ss, grid, ',');
            std::getline(ss, density, ',');
            curves[method + "/" + state].emplace_back(std::stod(grid), std::stod(density));
        }
        if (curves.empty()) pass = false;
        double worst_integral_gap = 0.0;
        for (const auto& [name, points] : curves) {
            double integral = 0.0;
            for (size_t i = 1; i < points.size(); ++i)
                integral += 0.5 * (points[i].second + points[i - 1].second) *
                            (points[i].first - points[i - 1].first);
            worst_integral_gap = std::max(worst_integral_gap, std::abs(integral - 1.0));
        }
        if (worst_integral_gap > 0.01) pass = false;
        detail += std::to_string(curves.size()) + " exported densities, worst |integral-1| " +
                  format_number(worst_integral_gap);
    }

    // Re-initialization from published-style estimates; a slow-growth
    // parametrization keeps simulation stochasticity comparable to the
    // estimator differences, matching the regime of the original experiment.
    ModelParams reinit_params;
    reinit_params.beta = 0.3;
    const std::vector<ReinitCondition> conditions{{"Skåne", Method::RTS, 24, 28, 24},
                                                  {"Skåne", Method::OLS, 7, 30, 31},
                                                  {"Skåne", Method::NLS, 12, 30, 29}};
    const ReinitResult reinit = run_reinit_study(conditions, reinit_params, 50, 42, 1'000'000, 7);
    double worst_ratio = 0.0;
    for (int s : {kInfected, kExposed, kAsymptomatic}) {
        std::vector<double> medians, pooled;
        for (const auto& entry : reinit.entries)
            if (entry.state_index == s && entry.kde) {
                medians.push_back(kde_quantile(*entry.kde, 0.5));
                pooled.insert(pooled.end(), entry.log_populations.begin(),
                              entry.log_populations.end());
            }
        if (medians.size() != 3) {
            pass = false;
            continue;
        }
        std::sort(pooled.begin(), pooled.end());
        const double iqr = pooled[(3 * pooled.size()) / 4] - pooled[pooled.size() / 4];
        const double spread = *std::max_element(medians.begin(), medians.end()) -
                              *std::min_element(medians.begin(), medians.end());
        worst_ratio = std::max(worst_ratio, spread / iqr);
        if (spread >= iqr) pass = false;
    }
    detail += "; day-42 median spread / inter-realization IQR worst " + format_number(worst_ratio);
    report(8, "markov-chain study and re-initialization run end to end", pass, detail, started);
}

// ---------------------------------------------------------------------------
// 9. Repeating a command from its manifest reproduces outputs byte for byte.
void criterion_manifest_determinism(const std::string& cli) {
    const auto started = Clock::now();
    if (cli.empty()) {
        report(9, "manifest reproducibility", false, "no CLI path given", started);
        return;
    }
    const fs::path base = fs::temp_directory_path() / "epiinit-acceptance-determinism";
    fs::remove_all(base);
    fs::create_directories(base);
    const fs::path first = base / "first";
    const fs::path second = base / "second";

    auto run = [&](const std::string& args) {
        const std::string command = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
        return std::system(command.c_str()) == 0;
    };
    bool pass = run("study --source lti --realizations 20 --d 30 --m 20 --k-min 10 --seed 99 --out " +
                    first.string());
    pass = pass && run("study --config " + (first / "manifest.cfg").string() + " --out " +
                       second.string());
    std::string detail = "study outputs";
    if (pass) {
        for (const char* name : {"errors.csv", "kde.csv", "summary.csv", "manifest.cfg"}) {
            std::ifstream a(first / name, std::ios::binary);
            std::ifstream b(second / name, std::ios::binary);
            std::stringstream sa, sb;
            sa << a.rdbuf();
            sb << b.rdbuf();
            if (!a || !b || sa.str() != sb.str()) {
                pass = false;
                detail = std::string(name) + " differs or is missing";
            }
        }
    } else {
        detail = "CLI invocation failed";
    }
    const fs::path sim_first = base / "sim-first";
    const fs::path sim_second = base / "sim-second";
    pass = pass && run("simulate --source ctmc --realizations 5 --d 20 --seed 31 --out " +
                       sim_first.string());
    pass = pass && run("simulate --config " + (sim_first / "manifest.cfg").string() + " --out " +
                       sim_second.string());
    if (pass) {
        std::ifstream a(sim_first / "trajectories.csv", std::ios::binary);
        std::ifstream b(sim_second / "trajectories.csv", std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        if (sa.str() != sb.str()) {
            pass = false;
            detail = "trajectories differ";
        } else {
            detail = "study and simulate outputs byte-identical";
        }
    }
    report(9, "manifest reproducibility", pass, detail, started);
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    criterion_channel_identity();
    criterion_simulator_moments();
    criterion_omega_monte_carlo();
    criterion_linear_gaussian_equivalence();
    criterion_ols_recovery();
    criterion_observability();
    criterion_lti_protocol();
    criterion_ctmc_and_reinit();
    criterion_manifest_determinism(cli);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
