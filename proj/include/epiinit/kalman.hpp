#pragma once

#include <optional>
#include <string>
#include <vector>

#include "epiinit/model.hpp"
#include "epiinit/simulate.hpp"
#include "epiinit/types.hpp"

namespace epiinit {

/**
 * Stored quantities of one forward Kalman pass over measurements y_0..y_d.
 * Index 0 holds the initial condition (x_post[0] = init_state,
 * p_post[0] = init_cov); innovation, gain and innovation variance are defined
 * for steps 1..d and zero-filled at index 0.
 */
struct KalmanPass {
    std::vector<Vec5> x_prior, x_post;
    std::vector<Mat5> p_prior, p_post;
    std::vector<double> innovations;
    std::vector<Vec5> gains;
    std::vector<double> innovation_vars;
    Vec5 init_state = Vec5::Zero();
    Mat5 init_cov = Mat5::Identity();

    int horizon() const { return static_cast<int>(x_post.size()) - 1; }
};

struct KalmanOptions {
    /// Use this constant covariance instead of the state-dependent Q(x).
    std::optional<Mat5> fixed_q;
};

namespace detail {

inline Mat5 symmetrized(const Mat5& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/**
 * Forward Kalman filter for the linear model with process noise approximated
 * by Q(x_prior) evaluated at the clamped a-priori state estimate (the true
 * covariance depends on the unknown state). Covariances are symmetrized after
 * every update. Throws when an innovation variance is numerically
 * non-positive, naming the step.
 */
inline KalmanPass kalman_forward(const ModelMatrices& mats, const ModelParams& params,
                                 const NoiseConfig& noise, const MeasurementSeries& y,
                                 const Vec5& init_state, const Mat5& init_cov,
                                 const KalmanOptions& options = {}) {
    const int d = y.horizon();
    if (d < 1) throw InvalidParameterError("kalman_forward: need measurements for at least day 0 and 1");

    KalmanPass pass;
    pass.init_state = init_state;
    pass.init_cov = detail::symmetrized(init_cov);
    const int len = d + 1;
    pass.x_prior.assign(len, init_state);
    pass.x_post.assign(len, init_state);
    pass.p_prior.assign(len, pass.init_cov);
    pass.p_post.assign(len, pass.init_cov);
    pass.innovations.assign(len, 0.0);
    pass.gains.assign(len, Vec5::Zero());
    pass.innovation_vars.assign(len, 0.0);

    const Mat5& f = mats.f;
    const RowVec5& h = mats.h;
    for (int k = 1; k <= d; ++k) {
        const Vec5 x_prior = f * pass.x_post[k - 1];
        const Mat5 q = options.fixed_q
                           ? *options.fixed_q
                           : process_noise_cov(params, x_prior.cwiseMax(0.0), noise);
        const Mat5 p_prior = detail::symmetrized(f * pass.p_post[k - 1] * f.transpose() + q);

        const double innovation = y.y[k] - h * x_prior;
        const double s = (h * p_prior * h.transpose())(0) + noise.r;
        if (!(s > 0.0))
            throw NumericalError("kalman_forward: innovation variance not positive at step " +
                                 std::to_string(k));
        const Vec5 gain = p_prior * h.transpose() / s;
        pass.x_prior[k] = x_prior;
        pass.p_prior[k] = p_prior;
        pass.innovations[k] = innovation;
        pass.innovation_vars[k] = s;
        pass.gains[k] = gain;
        pass.x_post[k] = x_prior + gain * innovation;
        pass.p_post[k] = detail::symmetrized((Mat5::Identity() - gain * h) * p_prior);
    }
    return pass;
}

struct RtsOptions {
    /// Invert rank-deficient predicted covariances with a tolerance-based
    /// pseudo-inverse instead of failing.
    bool pseudo_inverse = false;
};

namespace detail {

inline Mat5 invert_spd_or_throw(const Mat5& m, bool pseudo, int step) {
    if (pseudo) {
        Eigen::JacobiSVD<Mat5> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        const double cutoff = sv[0] * 1e-12;
        Vec5 inv_sv = Vec5::Zero();
        for (int i = 0; i < kStateDim; ++i)
            if (sv[i] > cutoff) inv_sv[i] = 1.0 / sv[i];
        return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
    }
    Eigen::FullPivLU<Mat5> lu(m);
    if (!lu.isInvertible())
        throw NumericalError("rts_backward: singular predicted covariance at step " +
                             std::to_string(step));
    return lu.inverse();
}

}  // namespace detail

/**
 * Backward smoothing pass. From the stored filter quantities it computes
 *
 *   C_k = P_{k|k} F^T P_{k+1|k}^{-1}
 *   x_{k|d} = x_{k|k} + C_k (x_{k+1|d} - x_{k+1|k})
 *   P_{k|d} = P_{k|k} + C_k (P_{k+1|d} - P_{k+1|k}) C_k^T
 *
 * i.e. the standard fixed-interval smoother recursion, whose covariance
 * correction subtracts the predicted covariance. Returns one estimate per
 * index 0..d; at k = d the smoothed state equals the filtered one.
 */
inline std::vector<SmoothedEstimate> rts_backward(const KalmanPass& pass, const ModelMatrices& mats,
                                                  const RtsOptions& options = {}) {
    const int d = pass.horizon();
    if (d < 1) throw InvalidParameterError("rts_backward: incomplete forward pass");

    std::vector<SmoothedEstimate> smoothed(d + 1);
    smoothed[d] = SmoothedEstimate{d, pass.x_post[d], detail::symmetrized(pass.p_post[d]),
                                   Method::RTS, 0, true};
    for (int k = d - 1; k >= 0; --k) {
        const Mat5 p_pred_inv =
            detail::invert_spd_or_throw(pass.p_prior[k + 1], options.pseudo_inverse, k + 1);
        const Mat5 c = pass.p_post[k] * mats.f.transpose() * p_pred_inv;
        const Vec5 x = pass.x_post[k] + c * (smoothed[k + 1].x - pass.x_prior[k + 1]);
        const Mat5 p = detail::symmetrized(
            pass.p_post[k] + c * (*smoothed[k + 1].cov - pass.p_prior[k + 1]) * c.transpose());
        smoothed[k] = SmoothedEstimate{k, x, p, Method::RTS, 0, true};
    }
    return smoothed;
}

}  // namespace epiinit
