#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace epiinit {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using RowVec5 = Eigen::Matrix<double, 1, 5>;

inline constexpr int kStateDim = 5;

/// State component indices: cumulative incidence, infected, asymptomatic,
/// exposed, environmental infectious pressure.
enum StateIndex : int {
    kCumIncidence = 0,
    kInfected = 1,
    kAsymptomatic = 2,
    kExposed = 3,
    kPressure = 4,
};

inline constexpr const char* kStateNames[kStateDim] = {"I_c", "I", "A", "E", "phi"};

struct InvalidParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DataFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Epidemiological rates and fractions of the daily-sampled transmission model.
 *
 * sigma, gamma_a and gamma_i are per-day transition probabilities out of the
 * exposed, asymptomatic and infected compartments; f0 and f1 split those
 * transitions between destinations; beta drives indirect transmission from the
 * infectious pressure, which decays at rate rho and is fed by shedding weights
 * theta_a and theta_e (the infected compartment sheds with weight 1).
 */
struct ModelParams {
    double sigma = 0.5;
    double gamma_a = 0.25;
    double gamma_i = 0.2;
    double f0 = 0.6;
    double f1 = 0.4;
    double beta = 0.5;
    double rho = 0.3;
    double theta_a = 0.5;
    double theta_e = 0.3;

    void validate() const {
        auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in_unit(sigma) || !in_unit(gamma_a) || !in_unit(gamma_i))
            throw InvalidParameterError("sigma, gamma_a, gamma_i must lie in [0, 1]");
        if (!in_unit(f0) || !in_unit(f1))
            throw InvalidParameterError("f0, f1 must lie in [0, 1]");
        if (beta < 0.0 || rho < 0.0 || theta_a < 0.0 || theta_e < 0.0)
            throw InvalidParameterError("beta, rho, theta_a, theta_e must be nonnegative");
    }
};

/// Named view of the 5-dimensional model state.
struct StateVector {
    double i_c = 0.0;
    double i = 0.0;
    double a = 0.0;
    double e = 0.0;
    double phi = 0.0;

    Vec5 vec() const {
        Vec5 v;
        v << i_c, i, a, e, phi;
        return v;
    }

    static StateVector from(const Vec5& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

    bool nonnegative() const { return i_c >= 0 && i >= 0 && a >= 0 && e >= 0 && phi >= 0; }
};

/// Constant diagonal model-uncertainty covariance Q0 and measurement variance R.
struct NoiseConfig {
    Vec5 q0_diag = Vec5::Constant(0.1);
    double r = 0.1;

    void validate() const {
        if ((q0_diag.array() < 0.0).any())
            throw InvalidParameterError("q0 diagonal entries must be nonnegative");
        if (r < 0.0) throw InvalidParameterError("measurement variance r must be nonnegative");
    }
};

/**
 * Per-parameter uniform sampling intervals. These defaults are implementer
 * choices for synthetic studies, not published estimates.
 */
struct PriorRanges {
    struct Interval {
        double lo;
        double hi;
    };

    Interval sigma{0.2, 0.8};
    Interval gamma_a{0.1, 0.5};
    Interval gamma_i{0.1, 0.5};
    Interval f0{0.3, 0.9};
    Interval f1{0.1, 0.7};
    Interval beta{0.5, 2.0};
    Interval rho{0.2, 1.0};
    Interval theta_a{0.2, 1.0};
    Interval theta_e{0.2, 1.0};

    void validate() const {
        for (const Interval* iv : {&sigma, &gamma_a, &gamma_i, &f0, &f1, &beta, &rho, &theta_a, &theta_e})
            if (iv->lo > iv->hi) throw InvalidParameterError("prior interval has lo > hi");
        ModelParams lo{sigma.lo, gamma_a.lo, gamma_i.lo, f0.lo, f1.lo, beta.lo, rho.lo, theta_a.lo, theta_e.lo};
        ModelParams hi{sigma.hi, gamma_a.hi, gamma_i.hi, f0.hi, f1.hi, beta.hi, rho.hi, theta_a.hi, theta_e.hi};
        lo.validate();
        hi.validate();
    }
};

enum class Method { RTS, OLS, NLS };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::RTS: return "RTS";
        case Method::OLS: return "OLS";
        case Method::NLS: return "NLS";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "RTS" || s == "rts") return Method::RTS;
    if (s == "OLS" || s == "ols") return Method::OLS;
    if (s == "NLS" || s == "nls") return Method::NLS;
    throw InvalidParameterError("unknown method '" + s + "' (expected rts, ols or nls)");
}

/// State estimate at the initialization index m given the full interval [0, d].
struct SmoothedEstimate {
    int m = 0;
    Vec5 x = Vec5::Zero();
    std::optional<Mat5> cov;  // present for RTS only
    Method method = Method::RTS;
    int iterations = 0;                    // reweighting passes (NLS only)
    bool converged = true;
    std::vector<double> objective_history;  // weighted objective per pass (NLS only)
};

/// Stopping rule for the iteratively reweighted least-squares loop.
struct NlsConfig {
    double s_tol = 1e-6;
    int max_iters = 50;

    void validate() const {
        if (s_tol <= 0.0) throw InvalidParameterError("s_tol must be positive");
        if (max_iters < 1) throw InvalidParameterError("max_iters must be at least 1");
    }
};

/**
 * Shared experiment settings: horizon d (measurements at days 0..d),
 * initialization index m, first measurement index k_min used by the batch
 * estimators, ensemble size, noise levels, master seed, and the reported-case
 * threshold that selects day 0 when ingesting incidence data.
 */
struct ExperimentConfig {
    int d = 42;
    int m = 30;
    int k_min = 19;
    int realizations = 100;
    Vec5 q0_diag = Vec5::Constant(0.1);
    double r = 0.1;
    std::uint64_t seed = 1;
    long threshold = 100;

    NoiseConfig noise() const { return NoiseConfig{q0_diag, r}; }

    void validate() const {
        if (d < 1) throw InvalidParameterError("horizon d must be at least 1");
        if (k_min < 0 || k_min > m || m > d)
            throw InvalidParameterError("indices must satisfy 0 <= k_min <= m <= d");
        if (realizations < 1) throw InvalidParameterError("realizations must be at least 1");
        noise().validate();
    }
};

}  // namespace epiinit
