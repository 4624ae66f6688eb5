#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "epiinit/model.hpp"
#include "epiinit/rng.hpp"
#include "epiinit/types.hpp"

namespace epiinit {

inline constexpr int kNumChannels = 6;

/**
 * Stoichiometry of the six transition channels, columns ordered as
 *   E->I, E->A, A->I, A->recovered, I->removed, exposure (S->E).
 * Rows are state increments per event; the infectious-pressure row is zero
 * because phi evolves deterministically.
 */
inline Eigen::Matrix<double, 5, kNumChannels> channel_stoichiometry() {
    Eigen::Matrix<double, 5, kNumChannels> b;
    // I_c, I, A, E rows; one column per channel.
    b << 1, 0, 1, 0, 0, 0,
        1, 0, 1, 0, -1, 0,
        0, 1, -1, -1, 0, 0,
        -1, -1, 0, 0, 0, 1,
        0, 0, 0, 0, 0, 0;
    return b;
}

/// Per-channel event rates at state x (expected events over one day).
inline Eigen::Matrix<double, kNumChannels, 1> channel_rates(const ModelParams& p, const Vec5& x) {
    Eigen::Matrix<double, kNumChannels, 1> r;
    r << p.sigma * p.f0 * x[kExposed],
        p.sigma * (1 - p.f0) * x[kExposed],
        p.gamma_a * p.f1 * x[kAsymptomatic],
        p.gamma_a * (1 - p.f1) * x[kAsymptomatic],
        p.gamma_i * x[kInfected],
        p.beta * x[kPressure];
    return r;
}

/// Deterministic infectious-pressure update shared by both simulators.
inline double pressure_step(const ModelParams& p, const Vec5& x) {
    const double decay = std::exp(-p.rho);
    return decay * x[kPressure] +
           (1 - decay) * (x[kInfected] + p.theta_a * x[kAsymptomatic] + p.theta_e * x[kExposed]);
}

/// Simulated state path over days 0..d together with its generator settings.
struct Trajectory {
    std::vector<Vec5> states;
    ModelParams params;
    std::uint64_t seed = 0;

    int horizon() const { return static_cast<int>(states.size()) - 1; }
};

/// Scalar cumulative-incidence observations matching a trajectory.
struct MeasurementSeries {
    std::vector<double> y;
    double r = 0.0;

    int horizon() const { return static_cast<int>(y.size()) - 1; }
};

namespace detail {

inline long long draw_poisson(std::mt19937_64& engine, double rate) {
    if (rate <= 0.0) return 0;
    std::poisson_distribution<long long> dist(rate);
    return dist(engine);
}

}  // namespace detail

/**
 * Linear-model trajectory driven by zero-mean shifted-Poisson channel noise
 * plus an independent Gaussian perturbation with covariance diag(q0).
 *
 * Each step draws event counts N_i ~ Poisson(rate_i(x_k)) and applies
 *   x_{k+1} = F x_k + B (N - rate(x_k)) + eta_k,
 * which keeps E[x_{k+1} | x_k] = F x_k and Cov = Q1(x_k) + Q0 exactly.
 * Components driven negative by the Gaussian term are clamped to zero to
 * preserve the positivity of the reference model.
 */
inline Trajectory simulate_lti(const ModelParams& params, const Vec5& x0, int d,
                               const NoiseConfig& noise, std::uint64_t seed) {
    params.validate();
    noise.validate();
    if (d < 1) throw InvalidParameterError("simulate_lti: horizon d must be at least 1");
    if ((x0.array() < 0.0).any())
        throw InvalidParameterError("simulate_lti: initial state must be nonnegative");

    const ModelMatrices mats = build_model_matrices(params);
    const auto b = channel_stoichiometry();
    std::mt19937_64 engine = make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Trajectory traj;
    traj.params = params;
    traj.seed = seed;
    traj.states.reserve(d + 1);
    traj.states.push_back(x0);

    Vec5 x = x0;
    for (int k = 0; k < d; ++k) {
        const auto rates = channel_rates(params, x);
        Vec5 w = Vec5::Zero();
        for (int c = 0; c < kNumChannels; ++c) {
            const double n = static_cast<double>(detail::draw_poisson(engine, rates[c]));
            w += b.col(c) * (n - rates[c]);
        }
        for (int j = 0; j < kStateDim; ++j)
            if (noise.q0_diag[j] > 0.0) w[j] += std::sqrt(noise.q0_diag[j]) * gauss(engine);
        x = (mats.f * x + w).cwiseMax(0.0);
        traj.states.push_back(x);
    }
    return traj;
}

/**
 * Discrete-day Markov-chain (tau-leap) trajectory with integer compartments.
 *
 * Channels fire Poisson(rate) times with rates evaluated at the start-of-day
 * state; event counts are applied in channel order and capped so no
 * compartment goes negative. The exposure rate carries the susceptible
 * depletion factor S/population, with S = population minus everyone who ever
 * left the susceptible compartment.
 */
struct CtmcResult {
    Trajectory trajectory;
    std::vector<long long> susceptible;
    std::vector<long long> removed;
    std::vector<long long> recovered;
    long long population = 0;
};

inline CtmcResult simulate_ctmc(const ModelParams& params, const StateVector& x0, int d,
                                long long population, std::uint64_t seed) {
    params.validate();
    if (d < 1) throw InvalidParameterError("simulate_ctmc: horizon d must be at least 1");
    if (!x0.nonnegative()) throw InvalidParameterError("simulate_ctmc: initial state must be nonnegative");
    auto as_count = [](double v, const char* name) {
        long long n = static_cast<long long>(std::llround(v));
        if (std::abs(v - static_cast<double>(n)) > 1e-9)
            throw InvalidParameterError(std::string("simulate_ctmc: ") + name + " must be integer-valued");
        return n;
    };
    long long ic = as_count(x0.i_c, "I_c");
    long long inf = as_count(x0.i, "I");
    long long asym = as_count(x0.a, "A");
    long long exp_ = as_count(x0.e, "E");
    double phi = x0.phi;
    // Individuals counted in I_c but no longer in I have already been removed.
    long long removed = std::max(0ll, ic - inf);
    long long recovered = 0;
    long long susceptible = population - inf - asym - exp_ - removed;
    if (susceptible < 0)
        throw InvalidParameterError("simulate_ctmc: compartments exceed population");

    std::mt19937_64 engine = make_engine(seed);
    CtmcResult result;
    result.population = population;
    result.trajectory.params = params;
    result.trajectory.seed = seed;
    auto record = [&](void) {
        Vec5 v;
        v << static_cast<double>(ic), static_cast<double>(inf), static_cast<double>(asym),
            static_cast<double>(exp_), phi;
        result.trajectory.states.push_back(v);
        result.susceptible.push_back(susceptible);
        result.removed.push_back(removed);
        result.recovered.push_back(recovered);
    };
    record();

    for (int k = 0; k < d; ++k) {
        Vec5 start = result.trajectory.states.back();
        auto rates = channel_rates(params, start);
        rates[5] *= static_cast<double>(susceptible) / static_cast<double>(population);

        long long n_ei = std::min(detail::draw_poisson(engine, rates[0]), exp_);
        exp_ -= n_ei;
        inf += n_ei;
        ic += n_ei;
        long long n_ea = std::min(detail::draw_poisson(engine, rates[1]), exp_);
        exp_ -= n_ea;
        asym += n_ea;
        long long n_ai = std::min(detail::draw_poisson(engine, rates[2]), asym);
        asym -= n_ai;
        inf += n_ai;
        ic += n_ai;
        long long n_ar = std::min(detail::draw_poisson(engine, rates[3]), asym);
        asym -= n_ar;
        recovered += n_ar;
        long long n_ir = std::min(detail::draw_poisson(engine, rates[4]), inf);
        inf -= n_ir;
        removed += n_ir;
        long long n_se = std::min(detail::draw_poisson(engine, rates[5]), susceptible);
        susceptible -= n_se;
        exp_ += n_se;

        phi = pressure_step(params, start);
        record();
    }
    return result;
}

/**
 * Observations y_k = I_c(k) + v_k with v_k ~ N(0, r). With r = 0 the series
 * reproduces the cumulative incidence exactly (full-testing assumption).
 */
inline MeasurementSeries generate_measurements(const Trajectory& traj, const NoiseConfig& noise,
                                               std::uint64_t seed) {
    MeasurementSeries series;
    series.r = noise.r;
    series.y.reserve(traj.states.size());
    std::mt19937_64 engine = make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sd = std::sqrt(noise.r);
    for (const Vec5& x : traj.states)
        series.y.push_back(x[kCumIncidence] + (sd > 0.0 ? sd * gauss(engine) : 0.0));
    return series;
}

/// Independent uniform draw of every parameter; deterministic given the seed.
inline ModelParams sample_prior(const PriorRanges& ranges, std::uint64_t seed) {
    ranges.validate();
    std::mt19937_64 engine = make_engine(seed);
    auto draw = [&](PriorRanges::Interval iv) {
        if (iv.lo == iv.hi) return iv.lo;
        return std::uniform_real_distribution<double>(iv.lo, iv.hi)(engine);
    };
    ModelParams p;
    p.sigma = draw(ranges.sigma);
    p.gamma_a = draw(ranges.gamma_a);
    p.gamma_i = draw(ranges.gamma_i);
    p.f0 = draw(ranges.f0);
    p.f1 = draw(ranges.f1);
    p.beta = draw(ranges.beta);
    p.rho = draw(ranges.rho);
    p.theta_a = draw(ranges.theta_a);
    p.theta_e = draw(ranges.theta_e);
    return p;
}

}  // namespace epiinit
