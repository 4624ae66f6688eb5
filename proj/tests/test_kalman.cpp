#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "epiinit/kalman.hpp"
#include "epiinit/simulate.hpp"

using namespace epiinit;

namespace {

ModelParams generic_params() {
    return ModelParams{0.5, 0.25, 0.2, 0.6, 0.4, 1.2, 0.3, 0.5, 0.3};
}

// Straight transcription of the filter recursions on plain arrays, kept
// independent of the library implementation on purpose.
struct NaiveFilter {
    double x[5];
    double p[5][5];

    static void symmetrize(double m[5][5]) {
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < i; ++j) {
                const double v = 0.5 * (m[i][j] + m[j][i]);
                m[i][j] = v;
                m[j][i] = v;
            }
    }

    void step(const ModelParams& mp, const NoiseConfig& noise, double y) {
        double f[5][5];
        const double decay = std::exp(-mp.rho);
        const double f_init[5][5] = {
            {1, 0, mp.gamma_a * mp.f1, mp.sigma * mp.f0, 0},
            {0, 1 - mp.gamma_i, mp.gamma_a * mp.f1, mp.sigma * mp.f0, 0},
            {0, 0, 1 - mp.gamma_a, mp.sigma * (1 - mp.f0), 0},
            {0, 0, 0, 1 - mp.sigma, mp.beta},
            {0, 1 - decay, mp.theta_a * (1 - decay), mp.theta_e * (1 - decay), decay}};
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) f[i][j] = f_init[i][j];

        double x_prior[5] = {0, 0, 0, 0, 0};
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) x_prior[i] += f[i][j] * x[j];

        double xc[5];
        for (int i = 0; i < 5; ++i) xc[i] = x_prior[i] > 0 ? x_prior[i] : 0.0;
        const double a = mp.gamma_a * mp.f1 * xc[2];
        const double e0 = mp.sigma * mp.f0 * xc[3];
        const double e1 = mp.sigma * (1 - mp.f0) * xc[3];
        const double irem = mp.gamma_i * xc[1];
        const double expo = mp.beta * xc[4];
        double q[5][5] = {{a + e0, a + e0, -a, -e0, 0},
                          {a + e0, a + e0 + irem, -a, -e0, 0},
                          {-a, -a, mp.gamma_a * xc[2] + e1, -e1, 0},
                          {-e0, -e0, -e1, mp.sigma * xc[3] + expo, 0},
                          {0, 0, 0, 0, 0}};
        for (int i = 0; i < 5; ++i) q[i][i] += noise.q0_diag[i];

        double fp[5][5] = {};
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                for (int k = 0; k < 5; ++k) fp[i][j] += f[i][k] * p[k][j];
        double p_prior[5][5];
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                double acc = q[i][j];
                for (int k = 0; k < 5; ++k) acc += fp[i][k] * f[j][k];
                p_prior[i][j] = acc;
            }
        symmetrize(p_prior);

        const double innovation = y - x_prior[0];
        const double s = p_prior[0][0] + noise.r;
        double gain[5];
        for (int i = 0; i < 5; ++i) gain[i] = p_prior[i][0] / s;
        for (int i = 0; i < 5; ++i) x[i] = x_prior[i] + gain[i] * innovation;
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) p[i][j] = p_prior[i][j] - gain[i] * p_prior[0][j];
        symmetrize(p);
    }
};

MeasurementSeries series_from(std::initializer_list<double> values) {
    MeasurementSeries y;
    y.y.assign(values);
    return y;
}

}  // namespace

TEST_CASE("huge measurement variance reduces the filter to pure prediction") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    NoiseConfig noise;
    noise.r = 1e12;
    noise.q0_diag.setZero();
    KalmanOptions options;
    options.fixed_q = Mat5::Zero();

    Vec5 x0;
    x0 << 3, 5, 4, 8, 2;
    MeasurementSeries y;
    for (int k = 0; k <= 20; ++k) y.y.push_back(100.0 + k);  // arbitrary data
    const KalmanPass pass = kalman_forward(mats, p, noise, y, x0, Mat5::Identity(), options);

    Vec5 expected = x0;
    for (int k = 0; k <= 20; ++k) {
        for (int s = 0; s < kStateDim; ++s)
            CHECK(pass.x_post[k][s] == Catch::Approx(expected[s]).epsilon(1e-6));
        expected = mats.f * expected;
    }
}

TEST_CASE("tiny measurement variance pins the observed state to the data") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    NoiseConfig noise;
    noise.r = 1e-12;
    const Trajectory traj = simulate_lti(p, (Vec5() << 0, 5, 5, 10, 5).finished(), 25, noise, 21);
    const MeasurementSeries y = generate_measurements(traj, noise, 22);

    const KalmanPass pass = kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]),
                                           1e4 * Mat5::Identity());
    for (int k = 1; k <= 25; ++k)
        CHECK(std::abs(pass.x_post[k][kCumIncidence] - y.y[k]) < 1e-6);
}

TEST_CASE("filter matches an independent transcription of the recursions") {
    std::mt19937_64 engine(515151);
    std::uniform_real_distribution<double> u01(0.05, 0.95);
    for (int trial = 0; trial < 10; ++trial) {
        ModelParams p{u01(engine), u01(engine), u01(engine), u01(engine), u01(engine),
                      2.0 * u01(engine), u01(engine), u01(engine), u01(engine)};
        NoiseConfig noise;
        noise.q0_diag = Vec5::Constant(0.1 + u01(engine));
        noise.r = 0.1 + u01(engine);

        const Trajectory traj =
            simulate_lti(p, (Vec5() << 0, 6, 6, 9, 4).finished(), 15, noise, 900 + trial);
        const MeasurementSeries y = generate_measurements(traj, noise, 901 + trial);

        const ModelMatrices mats = build_model_matrices(p);
        const Vec5 init = Vec5::Constant(y.y[0]);
        const Mat5 init_cov = 1e4 * Mat5::Identity();
        const KalmanPass pass = kalman_forward(mats, p, noise, y, init, init_cov);

        NaiveFilter naive;
        for (int i = 0; i < 5; ++i) {
            naive.x[i] = init[i];
            for (int j = 0; j < 5; ++j) naive.p[i][j] = init_cov(i, j);
        }
        for (int k = 1; k <= 15; ++k) {
            naive.step(p, noise, y.y[k]);
            for (int i = 0; i < 5; ++i) {
                REQUIRE(pass.x_post[k][i] ==
                        Catch::Approx(naive.x[i]).epsilon(1e-9).margin(1e-9));
                for (int j = 0; j < 5; ++j)
                    REQUIRE(pass.p_post[k](i, j) ==
                            Catch::Approx(naive.p[i][j]).epsilon(1e-9).margin(1e-9));
            }
        }
    }
}

TEST_CASE("filter reports the step of a degenerate innovation variance") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    NoiseConfig noise;
    noise.r = 0.0;
    noise.q0_diag.setZero();
    KalmanOptions options;
    options.fixed_q = Mat5::Zero();
    const MeasurementSeries y = series_from({1, 2, 3});
    try {
        kalman_forward(mats, p, noise, y, Vec5::Zero(), Mat5::Zero(), options);
        FAIL("expected a NumericalError");
    } catch (const NumericalError& err) {
        CHECK(std::string(err.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("filter covariances stay symmetric positive semidefinite") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    const NoiseConfig noise;
    const Trajectory traj = simulate_lti(p, (Vec5() << 0, 5, 5, 10, 5).finished(), 42, noise, 31);
    const MeasurementSeries y = generate_measurements(traj, noise, 32);
    const KalmanPass pass =
        kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]), 1e4 * Mat5::Identity());
    for (int k = 0; k <= 42; ++k) {
        for (const Mat5& cov : {pass.p_prior[k], pass.p_post[k]}) {
            CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-10 * (1 + cov.trace()));
            Eigen::SelfAdjointEigenSolver<Mat5> eig(cov);
            CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * cov.trace());
        }
    }
}

TEST_CASE("smoothed estimate at the last index equals the filtered one") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    const NoiseConfig noise;
    const Trajectory traj = simulate_lti(p, (Vec5() << 0, 5, 5, 10, 5).finished(), 20, noise, 41);
    const MeasurementSeries y = generate_measurements(traj, noise, 42);
    const KalmanPass pass =
        kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]), 1e4 * Mat5::Identity());
    const auto smoothed = rts_backward(pass, mats);
    REQUIRE(smoothed.size() == 21);
    CHECK(smoothed[20].x == pass.x_post[20]);
    CHECK(smoothed[20].m == 20);
    for (const auto& est : smoothed) {
        REQUIRE(est.cov.has_value());
        Eigen::SelfAdjointEigenSolver<Mat5> eig(*est.cov);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * est.cov->trace());
    }
}

TEST_CASE("smoothing recovers a noise-free deterministic trajectory") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    Vec5 x0;
    x0 << 0, 5, 5, 10, 5;

    // Deterministic data: y_k = (F^k x0)[0] exactly.
    MeasurementSeries y;
    std::vector<Vec5> truth;
    Vec5 x = x0;
    for (int k = 0; k <= 42; ++k) {
        truth.push_back(x);
        y.y.push_back(x[kCumIncidence]);
        x = mats.f * x;
    }

    NoiseConfig noise;
    noise.q0_diag.setZero();
    noise.r = 1e-12;
    KalmanOptions options;
    options.fixed_q = Mat5::Zero();
    const KalmanPass pass =
        kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]), 1e4 * Mat5::Identity(), options);
    RtsOptions rts;
    rts.pseudo_inverse = true;
    const auto smoothed = rts_backward(pass, mats, rts);
    for (int k = 0; k <= 42; ++k)
        for (int s = 0; s < kStateDim; ++s) {
            INFO("k=" << k << " state " << kStateNames[s]);
            CHECK(std::abs(smoothed[k].x[s] - truth[k][s]) <=
                  1e-4 * std::max(1.0, std::abs(truth[k][s])));
        }
}

TEST_CASE("backward pass without the pseudo-inverse flag rejects singular predictions") {
    const ModelParams p = generic_params();
    const ModelMatrices mats = build_model_matrices(p);
    NoiseConfig noise;
    noise.q0_diag.setZero();
    noise.r = 1e-12;
    KalmanOptions options;
    options.fixed_q = Mat5::Zero();
    MeasurementSeries y;
    Vec5 x = (Vec5() << 0, 5, 5, 10, 5).finished();
    for (int k = 0; k <= 42; ++k) {
        y.y.push_back(x[kCumIncidence]);
        x = mats.f * x;
    }
    const KalmanPass pass =
        kalman_forward(mats, p, noise, y, Vec5::Constant(y.y[0]), 1e4 * Mat5::Identity(), options);
    CHECK_THROWS_AS(rts_backward(pass, mats), NumericalError);
}
