#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "structgp/oracle.hpp"
#include "unit/test_helpers.hpp"

using namespace structgp;
using testutil::random_matrix;
using testutil::random_normal_vector;

TEST_SUITE("oracle") {

TEST_CASE("single-point predictive variance") {
    // Eq. for N = 1: var = sf2 - sf2^2 / (sf2 + sn2)
    const double sf2 = 1.7, sn2 = 0.4;
    const Kernel k{Matern::nu32, {1.0, sf2}};
    Eigen::MatrixXd X(1, 1);
    X << 0.3;
    Eigen::VectorXd y(1);
    y << 0.9;
    const DenseGPResult r = full_gp(X, y, X, k, sn2);
    CHECK(r.covariance(0, 0) == doctest::Approx(sf2 - sf2 * sf2 / (sf2 + sn2)).epsilon(1e-12));
}

TEST_CASE("interpolation limit at vanishing noise") {
    Philox rng(21);
    const Eigen::MatrixXd X = random_matrix(rng, 12, 2);
    const Eigen::VectorXd y = random_normal_vector(rng, 12);
    const std::vector<Kernel> ks{{Matern::nu52, {0.8, 1.0}}, {Matern::nu32, {1.2, 0.7}}};
    const DenseGPResult r = full_gp(X, y, X, ks, 1e-10);
    CHECK((r.mean - y).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("logZ for zero targets is the determinant term") {
    Philox rng(22);
    const long n = 20;
    const Eigen::MatrixXd X = random_matrix(rng, n, 1);
    const Kernel k{Matern::nu72, {0.9, 1.3}};
    const double sn2 = 0.2;
    const DenseGPResult r = full_gp(X, Eigen::VectorXd::Zero(n), X, k, sn2);

    Eigen::MatrixXd K = gram_isotropic(k, X, X);
    K.diagonal().array() += sn2;
    const double logdet = std::log(K.determinant());
    CHECK(r.logZ == doctest::Approx(-0.5 * (logdet + n * std::log(2 * M_PI))).epsilon(1e-9));
}

TEST_CASE("cholesky solve residual is tiny") {
    Philox rng(23);
    const long n = 60;
    const Eigen::MatrixXd X = random_matrix(rng, n, 3);
    const Eigen::VectorXd y = random_normal_vector(rng, n);
    const std::vector<Kernel> ks{{Matern::nu32, {0.7, 1.0}},
                                 {Matern::nu52, {0.9, 0.8}},
                                 {Matern::nu72, {1.1, 1.2}}};
    const double sn2 = 0.3;
    Eigen::MatrixXd Ky = gram_additive(ks, X, X);
    Ky.diagonal().array() += sn2;
    const Eigen::VectorXd alpha = Ky.llt().solve(y);
    CHECK((Ky * alpha - y).norm() / y.norm() < 1e-9);
}

TEST_CASE("dense laplace: one confident observation") {
    Eigen::MatrixXd X(1, 1);
    X << 0.0;
    Eigen::VectorXi y(1);
    y << 1;
    const std::vector<Kernel> ks{{Matern::nu52, {1.0, 100.0}}};
    const DenseLaplaceFit fit = full_gp_laplace(X, y, ks);
    CHECK(fit.f_hat(0) > 3.0);  // MAP probability sigmoid(f_hat) -> 1
    CHECK(1.0 / (1.0 + std::exp(-fit.f_hat(0))) > 0.95);
    const Eigen::VectorXd p = full_gp_laplace_predict(fit, X, X, ks);
    CHECK(p(0) > 0.5);  // integrated probability keeps the sign
    // objective trace non-decreasing (damped Newton contract)
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
        CHECK(fit.objective_trace[i] >=
              fit.objective_trace[i - 1] - 1e-10 * std::abs(fit.objective_trace[i - 1]));
}

TEST_CASE("dense laplace components sum to the MAP") {
    Philox rng(24);
    const long n = 40;
    const Eigen::MatrixXd X = random_matrix(rng, n, 2);
    Eigen::VectorXi y(n);
    for (long i = 0; i < n; ++i) y(i) = rng.bernoulli(0.5) ? 1 : 0;
    const std::vector<Kernel> ks{{Matern::nu32, {0.6, 1.5}}, {Matern::nu52, {0.8, 1.0}}};
    const DenseLaplaceFit fit = full_gp_laplace(X, y, ks);
    CHECK((fit.F_hat.rowwise().sum() - fit.f_hat).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.W.minCoeff() >= 1e-6);
}

TEST_CASE("dense GP cap is enforced") {
    Eigen::MatrixXd X(5, 1);
    X.setZero();
    Eigen::VectorXd y = Eigen::VectorXd::Zero(5);
    const Kernel k{Matern::nu12, {1.0, 1.0}};
    CHECK_THROWS_AS(full_gp(X, y, X, k, 0.1, 4), std::invalid_argument);
}

}  // TEST_SUITE
