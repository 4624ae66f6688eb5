#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "epiinit/backcast.hpp"
#include "epiinit/kde.hpp"
#include "epiinit/rng.hpp"
#include "epiinit/simulate.hpp"
#include "epiinit/types.hpp"

namespace epiinit {

enum class DataSource { LTI, CTMC };

inline const char* source_name(DataSource s) { return s == DataSource::LTI ? "lti" : "ctmc"; }

/// Estimation errors (estimate minus truth at index m) for one method/state.
struct ErrorEnsemble {
    Method method = Method::RTS;
    int state_index = 0;
    std::vector<double> errors;
};

struct StudyOptions {
    std::optional<ModelParams> params;  // fixed parametrization; sampled from the prior when absent
    Vec5 x0 = (Vec5() << 0, 2, 2, 4, 2).finished();
    long long population = 1'000'000;
    double ctmc_kept_fraction = 2.0 / 3.0;  // most-spread realizations analyzed for CTMC data
    NlsConfig nls{};
    int kde_grid_size = 512;
};

struct StudySummaryRow {
    Method method;
    int state_index;
    double mean_err = 0.0;
    double std_err = 0.0;
    double mae = 0.0;  // median absolute error
    int n_failed = 0;
    int n_used = 0;
};

struct StudyResult {
    ModelParams params;
    DataSource source = DataSource::LTI;
    std::vector<ErrorEnsemble> ensembles;                   // method-major, state-minor
    std::map<std::pair<int, int>, KdeCurve> kdes;           // (method, state) -> curve
    std::vector<StudySummaryRow> summary;
    std::vector<std::string> warnings;
    int realizations_kept = 0;
};

namespace detail {

inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / double(v.size() - 1));
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
    return 0.5 * (hi + v[mid - 1]);
}

}  // namespace detail

/**
 * Ensemble error study: repeatedly simulate (linear model with Poisson-channel
 * noise, or the Markov-chain stand-in), measure, run all three estimators at
 * index m, and collect per-state estimation errors with kernel density fits.
 *
 * Parameters are drawn once per study (or passed in) and shared by every
 * realization. Markov-chain data uses exact cumulative-incidence measurements
 * and keeps the most-spread fraction of realizations, ranked by final
 * incidence. Estimator failures are recorded and excluded per method.
 */
inline StudyResult run_error_study(const ExperimentConfig& cfg, const PriorRanges& ranges,
                                   DataSource source, const StudyOptions& options = {}) {
    cfg.validate();
    StudyResult result;
    result.source = source;
    result.params = options.params ? *options.params : sample_prior(ranges, stream_seed(cfg.seed, 0));
    result.params.validate();
    const NoiseConfig noise = cfg.noise();

    // Simulate the ensemble.
    std::vector<Trajectory> trajectories;
    trajectories.reserve(cfg.realizations);
    for (int i = 0; i < cfg.realizations; ++i) {
        const std::uint64_t seed = stream_seed(cfg.seed, 1 + 2 * static_cast<std::uint64_t>(i));
        if (source == DataSource::LTI) {
            trajectories.push_back(simulate_lti(result.params, options.x0, cfg.d, noise, seed));
        } else {
            trajectories.push_back(simulate_ctmc(result.params, StateVector::from(options.x0),
                                                 cfg.d, options.population, seed)
                                       .trajectory);
        }
    }

    std::vector<int> kept(cfg.realizations);
    std::iota(kept.begin(), kept.end(), 0);
    if (source == DataSource::CTMC && cfg.realizations > 1) {
        std::stable_sort(kept.begin(), kept.end(), [&](int a, int b) {
            return trajectories[a].states.back()[kCumIncidence] >
                   trajectories[b].states.back()[kCumIncidence];
        });
        const int n_keep = std::max(1, static_cast<int>(
                                           std::lround(options.ctmc_kept_fraction * cfg.realizations)));
        kept.resize(std::min<size_t>(kept.size(), n_keep));
        std::sort(kept.begin(), kept.end());
    }
    result.realizations_kept = static_cast<int>(kept.size());

    const Method methods[] = {Method::RTS, Method::OLS, Method::NLS};
    std::map<Method, int> failures;
    for (Method method : methods)
        for (int s = 0; s < kStateDim; ++s)
            result.ensembles.push_back(ErrorEnsemble{method, s, {}});
    auto ensemble = [&](Method method, int s) -> ErrorEnsemble& {
        return result.ensembles[static_cast<size_t>(method == Method::RTS ? 0 : method == Method::OLS ? 1 : 2) *
                                    kStateDim +
                                s];
    };

    EstimateOptions est_options;
    est_options.nls = options.nls;
    for (int idx : kept) {
        const std::uint64_t measurement_seed =
            stream_seed(cfg.seed, 2 + 2 * static_cast<std::uint64_t>(idx));
        // Markov-chain incidence is reported exactly; the linear data carries
        // Gaussian measurement noise of variance r.
        NoiseConfig measurement_noise = noise;
        if (source == DataSource::CTMC) measurement_noise.r = 0.0;
        const MeasurementSeries y =
            generate_measurements(trajectories[idx], measurement_noise, measurement_seed);
        const Vec5 truth = trajectories[idx].states[cfg.m];
        for (Method method : methods) {
            try {
                const SmoothedEstimate est =
                    estimate_initial_state(method, y, result.params, noise, cfg, est_options);
                for (int s = 0; s < kStateDim; ++s)
                    ensemble(method, s).errors.push_back(est.x[s] - truth[s]);
            } catch (const std::exception& ex) {
                ++failures[method];
                result.warnings.push_back(std::string(method_name(method)) + " failed on realization " +
                                          std::to_string(idx) + ": " + ex.what());
            }
        }
    }

    for (const ErrorEnsemble& ens : result.ensembles) {
        StudySummaryRow row;
        row.method = ens.method;
        row.state_index = ens.state_index;
        row.n_used = static_cast<int>(ens.errors.size());
        row.n_failed = failures[ens.method];
        if (!ens.errors.empty()) {
            row.mean_err = std::accumulate(ens.errors.begin(), ens.errors.end(), 0.0) /
                           double(ens.errors.size());
            row.std_err = detail::sample_std(ens.errors);
            std::vector<double> abs_errors(ens.errors.size());
            std::transform(ens.errors.begin(), ens.errors.end(), abs_errors.begin(),
                           [](double v) { return std::abs(v); });
            row.mae = detail::median(abs_errors);
        }
        result.summary.push_back(row);

        try {
            result.kdes.emplace(std::make_pair(static_cast<int>(ens.method), ens.state_index),
                                kde_fit(ens.errors, options.kde_grid_size));
        } catch (const std::exception& ex) {
            result.warnings.push_back(std::string("KDE skipped for ") + method_name(ens.method) +
                                      "/" + kStateNames[ens.state_index] + ": " + ex.what());
        }
    }
    return result;
}

/// One set of initial conditions for the re-initialization study.
struct ReinitCondition {
    std::string county;
    Method method = Method::RTS;
    long long i = 0;
    long long e = 0;
    long long a = 0;
};

struct ReinitResult {
    struct Entry {
        ReinitCondition condition;
        int state_index = 0;
        std::vector<double> log_populations;  // log10(count + 1) at day d
        std::optional<KdeCurve> kde;
    };
    std::vector<Entry> entries;
    std::vector<std::string> warnings;
};

/**
 * Re-initialization study: simulate the Markov-chain model n times from each
 * estimated initial condition and fit kernel densities of log10(population+1)
 * for I, E and A at the final day. Realization seeds are paired across
 * conditions so identical initial conditions yield identical trajectories.
 */
inline ReinitResult run_reinit_study(const std::vector<ReinitCondition>& conditions,
                                     const ModelParams& params, int n, int d,
                                     long long population, std::uint64_t seed,
                                     int kde_grid_size = 512) {
    if (n < 1) throw InvalidParameterError("run_reinit_study: need at least one realization");
    ReinitResult result;
    const int tracked[] = {kInfected, kExposed, kAsymptomatic};
    for (const ReinitCondition& cond : conditions) {
        if (cond.i < 0 || cond.e < 0 || cond.a < 0)
            throw InvalidParameterError("run_reinit_study: initial conditions must be nonnegative");
        StateVector x0;
        x0.i = static_cast<double>(cond.i);
        x0.e = static_cast<double>(cond.e);
        x0.a = static_cast<double>(cond.a);
        x0.i_c = static_cast<double>(cond.i);
        // Infectious pressure starts at its quasi-stationary level for the
        // given populations.
        x0.phi = x0.i + params.theta_a * x0.a + params.theta_e * x0.e;

        std::vector<std::vector<double>> logs(kStateDim);
        for (int real = 0; real < n; ++real) {
            const std::uint64_t run_seed = stream_seed(seed, static_cast<std::uint64_t>(real));
            const CtmcResult sim = simulate_ctmc(params, x0, d, population, run_seed);
            const Vec5& final_state = sim.trajectory.states.back();
            for (int s : tracked) logs[s].push_back(std::log10(final_state[s] + 1.0));
        }
        for (int s : tracked) {
            ReinitResult::Entry entry;
            entry.condition = cond;
            entry.state_index = s;
            entry.log_populations = logs[s];
            try {
                entry.kde = kde_fit(entry.log_populations, kde_grid_size);
            } catch (const std::exception& ex) {
                result.warnings.push_back("KDE skipped for " + cond.county + "/" +
                                          method_name(cond.method) + "/" + kStateNames[s] + ": " +
                                          ex.what());
            }
            result.entries.push_back(std::move(entry));
        }
    }
    return result;
}

}  // namespace epiinit
