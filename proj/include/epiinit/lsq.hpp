#pragma once

#include <Eigen/Dense>

#include <vector>

#include "epiinit/types.hpp"

namespace epiinit {

/**
 * Lawson-Hanson active-set solver for min ||a x - b|| subject to x >= 0.
 * The unknowns here are at most five states, so the passive-set least-squares
 * subproblems are solved densely with column-pivoted QR.
 */
inline Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                  int max_outer = 0) {
    const Eigen::Index n = a.cols();
    if (max_outer <= 0) max_outer = static_cast<int>(3 * n + 15);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(n, false);
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() *
                       a.colwise().norm().maxCoeff() * b.norm();

    auto solve_passive = [&](const std::vector<bool>& mask) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (mask[j]) idx.push_back(j);
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
        if (idx.empty()) return z;
        Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
        for (size_t c = 0; c < idx.size(); ++c) ap.col(c) = a.col(idx[c]);
        Eigen::VectorXd zp = ap.colPivHouseholderQr().solve(b);
        for (size_t c = 0; c < idx.size(); ++c) z[idx[c]] = zp[c];
        return z;
    };

    for (int outer = 0; outer < max_outer; ++outer) {
        Eigen::VectorXd gradient = a.transpose() * (b - a * x);
        Eigen::Index best = -1;
        double best_val = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[j] && gradient[j] > best_val) {
                best_val = gradient[j];
                best = j;
            }
        if (best < 0) break;  // KKT satisfied
        passive[best] = true;

        Eigen::VectorXd z = solve_passive(passive);
        while (true) {
            bool feasible = true;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[j] && z[j] <= 0.0) feasible = false;
            if (feasible) break;
            // step toward z until the first passive variable hits zero
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[j] && z[j] <= 0.0 && x[j] - z[j] > 0.0)
                    alpha = std::min(alpha, x[j] / (x[j] - z[j]));
            x += alpha * (z - x);
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[j] && x[j] <= 1e-14) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            z = solve_passive(passive);
        }
        x = z;
    }
    return x.cwiseMax(0.0);
}

/// Result of a generalized least-squares solve.
struct GlsSolution {
    Eigen::VectorXd x;
    double objective = 0.0;  // (y - phi x)^T Omega^{-1} (y - phi x)
    bool ridged = false;     // Omega needed ridge regularization
};

/**
 * Solves min_x (y - phi x)^T Omega^{-1} (y - phi x) by whitening with the
 * Cholesky factor of Omega. A numerically non-positive-definite Omega gets one
 * ridge-regularized retry (lambda = 1e-8 times its largest diagonal entry).
 */
inline GlsSolution gls_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& omega) {
    GlsSolution sol;
    Eigen::LLT<Eigen::MatrixXd> chol(omega);
    if (chol.info() != Eigen::Success) {
        const double ridge = 1e-8 * omega.diagonal().maxCoeff();
        Eigen::MatrixXd regularized = omega;
        regularized.diagonal().array() += ridge;
        chol.compute(regularized);
        sol.ridged = true;
        if (chol.info() != Eigen::Success)
            throw NumericalError("gls_solve: weighting matrix is numerically singular");
    }
    const Eigen::MatrixXd l = chol.matrixL();
    Eigen::MatrixXd phi_w = l.triangularView<Eigen::Lower>().solve(phi);
    Eigen::VectorXd y_w = l.triangularView<Eigen::Lower>().solve(y);
    sol.x = phi_w.colPivHouseholderQr().solve(y_w);
    sol.objective = (y_w - phi_w * sol.x).squaredNorm();
    return sol;
}

}  // namespace epiinit
