#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>

#include "epiinit/types.hpp"

namespace epiinit {

/// Discrete-time state matrix F and scalar output map H of the linear model.
struct ModelMatrices {
    Mat5 f = Mat5::Identity();
    RowVec5 h = (RowVec5() << 1, 0, 0, 0, 0).finished();
};

/**
 * Builds the daily state-transition matrix for the five-compartment model
 *
 *   x = (I_c, I, A, E, phi),   x_{k+1} = F x_k + w_k,   y_k = H x_k + v_k.
 *
 * Cumulative incidence accumulates the inflows into I; the infectious
 * pressure row is the exact one-day discretization of exponential decay at
 * rate rho driven by shedding from I, A and E.
 */
inline ModelMatrices build_model_matrices(const ModelParams& p) {
    p.validate();
    const double decay = std::exp(-p.rho);
    ModelMatrices mats;
    mats.f << 1, 0, p.gamma_a * p.f1, p.sigma * p.f0, 0,
        0, 1 - p.gamma_i, p.gamma_a * p.f1, p.sigma * p.f0, 0,
        0, 0, 1 - p.gamma_a, p.sigma * (1 - p.f0), 0,
        0, 0, 0, 1 - p.sigma, p.beta,
        0, 1 - decay, p.theta_a * (1 - decay), p.theta_e * (1 - decay), decay;
    mats.h << 1, 0, 0, 0, 0;
    return mats;
}

/**
 * State-dependent process-noise covariance Q(x) = Q1(x) + diag(q0).
 *
 * Q1 is the covariance of the zero-mean shifted-Poisson channel noise of the
 * compartment transitions, evaluated at populations x; its infectious-pressure
 * row and column are zero because that component evolves deterministically.
 * Requires x >= 0 componentwise, otherwise Q1 loses positive semidefiniteness.
 */
inline Mat5 process_noise_cov(const ModelParams& p, const Vec5& x, const NoiseConfig& noise) {
    if ((x.array() < 0.0).any())
        throw InvalidParameterError("process_noise_cov: state has a negative component");
    const double a = p.gamma_a * p.f1 * x[kAsymptomatic];
    const double e0 = p.sigma * p.f0 * x[kExposed];
    const double e1 = p.sigma * (1 - p.f0) * x[kExposed];
    const double i = p.gamma_i * x[kInfected];
    const double ex = p.beta * x[kPressure];
    Mat5 q;
    q << a + e0, a + e0, -a, -e0, 0,
        a + e0, a + e0 + i, -a, -e0, 0,
        -a, -a, p.gamma_a * x[kAsymptomatic] + e1, -e1, 0,
        -e0, -e0, -e1, p.sigma * x[kExposed] + ex, 0,
        0, 0, 0, 0, 0;
    q += noise.q0_diag.asDiagonal();
    return q;
}

/// Stacked observability matrix [H; HF; HF^2; HF^3; HF^4].
inline Mat5 observability_matrix(const ModelMatrices& mats) {
    Mat5 obs;
    RowVec5 row = mats.h;
    for (int i = 0; i < kStateDim; ++i) {
        obs.row(i) = row;
        row = row * mats.f;
    }
    return obs;
}

/// Rank from singular values with a relative threshold on the largest one.
inline int numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > rel_tol * sv[0]) ++rank;
    return rank;
}

/**
 * Eigenvalue summary of F: instability flag (outbreak growth shows up as one
 * eigenvalue of magnitude above one) and detection of a near-zero mode.
 *
 * A near-zero eigenvalue makes negative powers of F overflow, so batch
 * estimation removes the state carrying that mode. The state is identified
 * from the left eigenvector (eigenvector of F^T): a left eigenvector aligned
 * with e_j and eigenvalue ~0 means row j of F is ~0, i.e. the dynamics drive
 * component j to zero regardless of the rest of the state.
 */
struct SpectralReport {
    std::array<std::complex<double>, kStateDim> eigenvalues{};
    bool unstable = false;
    std::optional<int> near_zero_state;
    double tau_zero = 1e-6;
};

inline SpectralReport spectral_report(const ModelMatrices& mats, double tau_zero = 1e-6) {
    SpectralReport report;
    report.tau_zero = tau_zero;
    Eigen::EigenSolver<Mat5> solver(mats.f.transpose());
    double min_abs = std::numeric_limits<double>::infinity();
    int min_index = -1;
    for (int i = 0; i < kStateDim; ++i) {
        const std::complex<double> lambda = solver.eigenvalues()[i];
        report.eigenvalues[i] = lambda;
        if (std::abs(lambda) > 1.0) report.unstable = true;
        if (std::abs(lambda) < min_abs) {
            min_abs = std::abs(lambda);
            min_index = i;
        }
    }
    if (min_abs < tau_zero) {
        Eigen::Matrix<std::complex<double>, 5, 1> v = solver.eigenvectors().col(min_index);
        int state = 0;
        for (int j = 1; j < kStateDim; ++j)
            if (std::abs(v[j]) > std::abs(v[state])) state = j;
        report.near_zero_state = state;
    }
    return report;
}

}  // namespace epiinit
