#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epiinit/kalman.hpp"
#include "epiinit/lsq.hpp"
#include "epiinit/model.hpp"
#include "epiinit/types.hpp"

namespace epiinit {

/**
 * The model actually used by the batch estimators: either the full five-state
 * system or, when the spectral report flags a near-zero mode, the reduced
 * system with that state removed and treated as identically zero.
 */
struct ActiveModel {
    Eigen::MatrixXd f;
    Eigen::RowVectorXd h;
    std::vector<int> active;
    std::optional<int> truncated_state;

    static ActiveModel from(const ModelMatrices& mats, const SpectralReport& spectral) {
        ActiveModel am;
        if (!spectral.near_zero_state) {
            am.f = mats.f;
            am.h = mats.h;
            am.active = {0, 1, 2, 3, 4};
            return am;
        }
        const int cut = *spectral.near_zero_state;
        if (cut == kCumIncidence)
            throw NumericalError("truncation would remove the measured state");
        am.truncated_state = cut;
        for (int j = 0; j < kStateDim; ++j)
            if (j != cut) am.active.push_back(j);
        const auto n = static_cast<Eigen::Index>(am.active.size());
        am.f.resize(n, n);
        am.h.resize(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            am.h[r] = mats.h[am.active[r]];
            for (Eigen::Index c = 0; c < n; ++c) am.f(r, c) = mats.f(am.active[r], am.active[c]);
        }
        return am;
    }

    Eigen::Index dim() const { return static_cast<Eigen::Index>(active.size()); }

    Vec5 expand(const Eigen::VectorXd& x) const {
        Vec5 full = Vec5::Zero();
        for (size_t r = 0; r < active.size(); ++r) full[active[r]] = x[static_cast<Eigen::Index>(r)];
        return full;
    }

    Eigen::VectorXd reduce(const Vec5& x) const {
        Eigen::VectorXd out(dim());
        for (size_t r = 0; r < active.size(); ++r) out[static_cast<Eigen::Index>(r)] = x[active[r]];
        return out;
    }

    Eigen::MatrixXd reduce_cov(const Mat5& q) const {
        Eigen::MatrixXd out(dim(), dim());
        for (size_t r = 0; r < active.size(); ++r)
            for (size_t c = 0; c < active.size(); ++c)
                out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    q(active[r], active[c]);
        return out;
    }
};

/**
 * Cache of the output rows H F^p for arbitrary integer p. Positive powers are
 * built by repeated multiplication; negative ones by back-substitution against
 * a single full-pivot LU factorization of F^T, never by forming F^{-1}
 * explicitly.
 */
class RowPowerCache {
  public:
    RowPowerCache(Eigen::MatrixXd f, Eigen::RowVectorXd h) : f_(std::move(f)) {
        rows_[0] = std::move(h);
    }

    const Eigen::RowVectorXd& row(int p) {
        auto it = rows_.find(p);
        if (it != rows_.end()) return it->second;
        if (p > 0) {
            int q = p;
            while (!rows_.count(q)) --q;
            for (; q < p; ++q) rows_[q + 1] = rows_[q] * f_;
        } else {
            ensure_factorization();
            int q = p;
            while (!rows_.count(q)) ++q;
            for (; q > p; --q)
                rows_[q - 1] = lu_->solve(rows_[q].transpose()).transpose();
        }
        return rows_[p];
    }

  private:
    void ensure_factorization() {
        if (lu_) return;
        lu_.emplace(f_.transpose());
        if (!lu_->isInvertible())
            throw NumericalError(
                "state matrix is numerically singular; negative powers unavailable");
    }

    Eigen::MatrixXd f_;
    std::map<int, Eigen::RowVectorXd> rows_;
    std::optional<Eigen::FullPivLU<Eigen::MatrixXd>> lu_;
};

/**
 * Linear backcasting system Y = Phi x_m + W over the measurement window
 * [k_min, d]: row k of Phi is H F^{k-m} in the (possibly truncated) model.
 * The measurement vector y is attached by the caller.
 */
struct PhiSystem {
    Eigen::MatrixXd phi;
    Eigen::VectorXd y;
    int k_min = 0;
    int m = 0;
    int d = 0;
    std::optional<int> truncated_state;
    std::vector<int> active;
};

inline PhiSystem build_phi(const ModelMatrices& mats, int m, int d, int k_min,
                           const SpectralReport& spectral) {
    if (!(0 <= k_min && k_min <= m && m <= d))
        throw InvalidParameterError("build_phi: need 0 <= k_min <= m <= d");
    const ActiveModel am = ActiveModel::from(mats, spectral);
    RowPowerCache powers(am.f, am.h);

    PhiSystem sys;
    sys.k_min = k_min;
    sys.m = m;
    sys.d = d;
    sys.truncated_state = am.truncated_state;
    sys.active = am.active;
    sys.phi.resize(d - k_min + 1, am.dim());
    for (int k = k_min; k <= d; ++k) {
        const Eigen::RowVectorXd& row = powers.row(k - m);
        if (!row.allFinite()) throw NumericalError("build_phi: non-finite entries in row " +
                                                   std::to_string(k));
        sys.phi.row(k - k_min) = row;
    }
    return sys;
}

/// Unweighted (or nonnegativity-constrained) solve of the backcasting system.
inline SmoothedEstimate ols_estimate(const PhiSystem& sys, bool nonneg = false) {
    if (sys.y.size() != sys.phi.rows())
        throw InvalidParameterError("ols_estimate: measurement window does not match Phi");
    const int rank = numerical_rank(sys.phi);
    if (rank < sys.phi.cols())
        throw NumericalError("ols_estimate: rank-deficient system (numerical rank " +
                             std::to_string(rank) + " of " + std::to_string(sys.phi.cols()) +
                             " columns)");
    Eigen::VectorXd x = nonneg ? nnls_solve(sys.phi, sys.y)
                               : Eigen::VectorXd(sys.phi.colPivHouseholderQr().solve(sys.y));
    ActiveModel am;
    am.active = sys.active;
    SmoothedEstimate est;
    est.m = sys.m;
    est.x = am.expand(x);
    est.method = Method::OLS;
    return est;
}

/**
 * Covariance matrix Omega of the backcasting residuals W over the window
 * [k_min, d], given the schedule S_Q = {Q_0, ..., Q_d}. Entries follow
 *
 *   omega_{k,l} = sum_{n=0}^{r1-1} H F^{r2} Q_{r3} (F^T)^{ntilde} H^T
 *                 + delta_{kl} R
 *
 * with ntilde = n for k >= m and ntilde = -n-1 for k < m; the branch keeps the
 * one-step entries consistent with the model recursion on both sides of m
 * (omega_{m+1,m+1} = H Q_m H^T + R and omega_{m-1,m-1} = H F^{-1} Q_{m-1}
 * F^{-T} H^T + R); a Monte-Carlo residual-covariance check pins it down in the
 * test suite.
 */
struct OmegaMatrix {
    Eigen::MatrixXd omega;
    std::vector<Eigen::MatrixXd> schedule;
    int k_min = 0;
    int m = 0;
    double r = 0.0;
};

inline double omega_element(RowPowerCache& powers, const std::vector<Eigen::MatrixXd>& schedule,
                            int k, int l, int m, double r) {
    double value = (k == l) ? r : 0.0;
    const long side = static_cast<long>(k - m) * static_cast<long>(l - m);
    if (side < 0) return value;
    const int r1 = std::min(std::abs(k - m), std::abs(l - m));
    const bool k_closer = std::abs(k - m) <= std::abs(l - m);
    for (int n = 0; n < r1; ++n) {
        const int ntilde = (k >= m) ? n : -n - 1;
        const int r2 = k_closer ? ntilde - k + l : ntilde - l + k;
        const int r3 = k_closer ? k - 1 - ntilde : l - 1 - ntilde;
        value += powers.row(r2) * schedule[static_cast<size_t>(r3)] * powers.row(ntilde).transpose();
    }
    return value;
}

inline OmegaMatrix build_omega(const std::vector<Eigen::MatrixXd>& schedule, const ActiveModel& am,
                               int m, int k_min, int d, double r) {
    if (static_cast<int>(schedule.size()) != d + 1)
        throw InvalidParameterError("build_omega: schedule must cover indices 0..d");
    RowPowerCache powers(am.f, am.h);
    OmegaMatrix result;
    result.schedule = schedule;
    result.k_min = k_min;
    result.m = m;
    result.r = r;
    const int n = d - k_min + 1;
    result.omega.resize(n, n);
    for (int k = k_min; k <= d; ++k)
        for (int l = k; l <= d; ++l) {
            const double v = omega_element(powers, schedule, k, l, m, r);
            result.omega(k - k_min, l - k_min) = v;
            result.omega(l - k_min, k - k_min) = v;
        }
    return result;
}

inline OmegaMatrix build_omega(const std::vector<Eigen::MatrixXd>& schedule,
                               const ModelMatrices& mats, int m, int k_min, int d, double r) {
    return build_omega(schedule, ActiveModel::from(mats, SpectralReport{}), m, k_min, d, r);
}

/**
 * Approximated covariance schedule {Q(F^{k-m} x_m)}_{k=0..d} for a candidate
 * initialization state. Propagation runs forward by multiplication and
 * backward through LU solves; any propagated state with a negative element is
 * replaced by the zero state before evaluating Q, which truncates the
 * covariance to the constant Q0 floor there.
 */
inline std::vector<Eigen::MatrixXd> approx_q_schedule(const ActiveModel& am,
                                                      const ModelParams& params,
                                                      const NoiseConfig& noise,
                                                      const Eigen::VectorXd& x_m, int m, int d) {
    std::vector<Eigen::VectorXd> states(d + 1);
    states[m] = x_m;
    for (int k = m + 1; k <= d; ++k) states[k] = am.f * states[k - 1];
    if (m > 0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(am.f);
        if (!lu.isInvertible())
            throw NumericalError("approx_q_schedule: state matrix singular, cannot backcast");
        for (int k = m - 1; k >= 0; --k) states[k] = lu.solve(states[k + 1]);
    }
    std::vector<Eigen::MatrixXd> schedule(d + 1);
    for (int k = 0; k <= d; ++k) {
        Eigen::VectorXd x = states[k];
        if ((x.array() < 0.0).any()) x.setZero();
        ActiveModel tmp;
        tmp.active = am.active;
        schedule[k] = am.reduce_cov(process_noise_cov(params, tmp.expand(x), noise));
    }
    return schedule;
}

/**
 * Iteratively reweighted least squares: seed with the unweighted solution,
 * then alternate between rebuilding Omega from the covariance schedule at the
 * current iterate and solving the weighted problem, until the weighted
 * objective changes by less than s_tol or the iteration cap is reached (the
 * result is then flagged as non-converged).
 */
inline SmoothedEstimate nls_estimate(const PhiSystem& sys, const ModelMatrices& mats,
                                     const ModelParams& params, const NoiseConfig& noise,
                                     const NlsConfig& cfg = {},
                                     const std::optional<Mat5>& fixed_q = std::nullopt) {
    cfg.validate();
    SmoothedEstimate seed = ols_estimate(sys, false);

    ActiveModel am;
    if (sys.truncated_state) {
        SpectralReport fake;
        fake.near_zero_state = sys.truncated_state;
        am = ActiveModel::from(mats, fake);
    } else {
        am = ActiveModel::from(mats, SpectralReport{});
    }

    Eigen::VectorXd x = am.reduce(seed.x);
    double s = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    std::vector<double> history;
    while (iterations < cfg.max_iters) {
        const double s_prev = s;
        std::vector<Eigen::MatrixXd> schedule;
        if (fixed_q) {
            schedule.assign(sys.d + 1, am.reduce_cov(*fixed_q));
        } else {
            schedule = approx_q_schedule(am, params, noise, x, sys.m, sys.d);
        }
        const OmegaMatrix omega = build_omega(schedule, am, sys.m, sys.k_min, sys.d, noise.r);
        const GlsSolution sol = gls_solve(sys.phi, sys.y, omega.omega);
        x = sol.x;
        s = sol.objective;
        history.push_back(s);
        ++iterations;
        if (std::abs(s_prev - s) < cfg.s_tol) {
            converged = true;
            break;
        }
    }

    SmoothedEstimate est;
    est.m = sys.m;
    est.x = am.expand(x);
    est.method = Method::NLS;
    est.iterations = iterations;
    est.converged = converged;
    est.objective_history = std::move(history);
    return est;
}

/// Knobs for the estimation facade; defaults reproduce the standard setup.
struct EstimateOptions {
    bool nonneg = false;
    NlsConfig nls{};
    std::optional<Vec5> init_state;   // Kalman x0; default fills every state with y_0
    std::optional<Mat5> init_cov;     // Kalman P0; default diffuse 1e4 * I
    RtsOptions rts{};
    std::optional<Mat5> fixed_q;      // force a constant process-noise covariance
};

/**
 * Uniform entry point for the three smoothing methods. The recursive smoother
 * consumes the full series; the batch methods drop measurements before k_min
 * and remove a near-zero mode when the spectral report flags one.
 */
inline SmoothedEstimate estimate_initial_state(Method method, const MeasurementSeries& y,
                                               const ModelParams& params, const NoiseConfig& noise,
                                               const ExperimentConfig& cfg,
                                               const EstimateOptions& options = {}) {
    cfg.validate();
    noise.validate();
    const int d = y.horizon();
    if (cfg.d != d)
        throw InvalidParameterError("estimate_initial_state: config horizon " +
                                    std::to_string(cfg.d) + " does not match series horizon " +
                                    std::to_string(d));
    const ModelMatrices mats = build_model_matrices(params);

    if (method == Method::RTS) {
        const Vec5 init_state = options.init_state.value_or(Vec5::Constant(y.y.front()));
        const Mat5 init_cov = options.init_cov.value_or(1e4 * Mat5::Identity());
        const KalmanPass pass = kalman_forward(mats, params, noise, y, init_state, init_cov,
                                               KalmanOptions{options.fixed_q});
        return rts_backward(pass, mats, options.rts)[cfg.m];
    }

    const SpectralReport spectral = spectral_report(mats);
    PhiSystem sys = build_phi(mats, cfg.m, d, cfg.k_min, spectral);
    sys.y = Eigen::Map<const Eigen::VectorXd>(y.y.data() + cfg.k_min, d - cfg.k_min + 1);
    if (method == Method::OLS) return ols_estimate(sys, options.nonneg);
    return nls_estimate(sys, mats, params, noise, options.nls, options.fixed_q);
}

}  // namespace epiinit
