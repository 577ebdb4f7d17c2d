#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "structgp/kernels.hpp"

using namespace structgp;

namespace {

const Matern kAllOrders[] = {Matern::nu12, Matern::nu32, Matern::nu52, Matern::nu72};

// Independent matrix exponential: scaling and squaring over a plain Taylor
// series. Slow but obviously correct for the tiny matrices used here.
Eigen::MatrixXd expm_taylor(const Eigen::MatrixXd& A) {
    int scale = 0;
    double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
    while (norm > 0.5) {
        norm /= 2.0;
        ++scale;
    }
    const Eigen::MatrixXd As = A / std::pow(2.0, scale);
    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(A.rows(), A.cols());
    Eigen::MatrixXd term = result;
    for (int k = 1; k <= 25; ++k) {
        term = term * As / k;
        result += term;
    }
    for (int i = 0; i < scale; ++i) result = result * result;
    return result;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("closed-form covariance values") {
    Kernel k12{Matern::nu12, {1.0, 1.0}};
    CHECK(covariance(k12, 1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(covariance(k12, 0.0) == doctest::Approx(1.0));

    Kernel k32{Matern::nu32, {1.0, 1.0}};
    const double s3 = std::sqrt(3.0);
    CHECK(covariance(k32, 1.0) == doctest::Approx((1.0 + s3) * std::exp(-s3)).epsilon(1e-12));
    CHECK(covariance(k32, 1.0) == doctest::Approx(0.4833577).epsilon(1e-6));

    for (Matern fam : kAllOrders) {
        Kernel k{fam, {0.7, 2.5}};
        CHECK(covariance(k, 0.0) == doctest::Approx(2.5));
        // monotone non-increasing in r
        double prev = covariance(k, 0.0);
        for (double r = 0.1; r < 4.0; r += 0.1) {
            const double cur = covariance(k, r);
            CHECK(cur <= prev + 1e-15);
            prev = cur;
        }
    }
}

TEST_CASE("covariance rejects bad arguments") {
    Kernel k{Matern::nu32, {1.0, 1.0}};
    CHECK_THROWS_AS(covariance(k, -0.5), std::invalid_argument);
    CHECK_THROWS_AS(covariance(k, std::nan("")), std::invalid_argument);
    Kernel bad{Matern::nu32, {-1.0, 1.0}};
    CHECK_THROWS_AS(covariance(bad, 1.0), std::invalid_argument);
}

TEST_CASE("covariance lengthscale derivative matches central differences") {
    for (Matern fam : kAllOrders) {
        Kernel k{fam, {0.9, 1.7}};
        for (double r : {0.05, 0.3, 1.0, 2.7}) {
            const double h = 1e-5;
            Kernel kp = k, km = k;
            kp.hypers.lengthscale += h;
            km.hypers.lengthscale -= h;
            const double fd = (covariance(kp, r) - covariance(km, r)) / (2 * h);
            const double an = covariance_dlengthscale(k, r);
            CHECK(an == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("first-order state space is the OU process") {
    const StateSpaceModel ssm = to_state_space(Kernel{Matern::nu12, {1.0, 1.0}});
    CHECK(ssm.m == 1);
    CHECK(ssm.A(0, 0) == doctest::Approx(-1.0));
    CHECK(ssm.Pinf(0, 0) == doctest::Approx(1.0));
    CHECK(ssm.h(0) == 1.0);
    CHECK(ssm.q == doctest::Approx(2.0));
}

TEST_CASE("matern32 stationary covariance is diag(1, 3)") {
    // analytic solution of the Lyapunov equation at lambda = sqrt(3)
    const StateSpaceModel ssm = to_state_space(Kernel{Matern::nu32, {1.0, 1.0}});
    CHECK(ssm.Pinf(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ssm.Pinf(1, 1) == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(std::abs(ssm.Pinf(0, 1)) < 1e-10);
    CHECK(std::abs(ssm.Pinf(1, 0)) < 1e-10);
}

TEST_CASE("state-space realization invariants") {
    for (Matern fam : kAllOrders) {
        Kernel k{fam, {0.6, 1.9}};
        const StateSpaceModel ssm = to_state_space(k);

        CHECK(ssm.h.dot(ssm.Pinf * ssm.h) == doctest::Approx(1.9).epsilon(1e-10));
        CHECK((ssm.Pinf - ssm.Pinf.transpose()).cwiseAbs().maxCoeff() < 1e-10);

        // Lyapunov residual: A Pinf + Pinf A' + q L L' = 0
        const Eigen::MatrixXd resid = ssm.A * ssm.Pinf + ssm.Pinf * ssm.A.transpose() +
                                      ssm.q * ssm.L * ssm.L.transpose();
        CHECK(resid.cwiseAbs().maxCoeff() < 1e-8 * ssm.q);

        // drift eigenvalues strictly in the left half plane
        const Eigen::VectorXcd eigs = ssm.A.eigenvalues();
        for (int i = 0; i < eigs.size(); ++i) CHECK(eigs(i).real() < 0.0);

        // Pinf PSD
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ssm.Pinf);
        CHECK(es.eigenvalues().minCoeff() > -1e-10);
    }
}

TEST_CASE("discretize identity and scalar closed form") {
    const StateSpaceModel ou = to_state_space(Kernel{Matern::nu12, {1.0, 1.0}});
    const Discretization d0 = discretize(ou, 0.0);
    CHECK(d0.Phi(0, 0) == 1.0);
    CHECK(d0.Q(0, 0) == 0.0);

    const Discretization d1 = discretize(ou, 1.0);
    CHECK(d1.Phi(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(d1.Q(0, 0) == doctest::Approx(1.0 - std::exp(-2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(discretize(ou, -0.1), std::invalid_argument);
}

TEST_CASE("discretize agrees with a Taylor expm oracle and stays stationary") {
    const StateSpaceModel ssm = to_state_space(Kernel{Matern::nu72, {1.0, 1.0}});
    const double delta = 0.37;
    const Discretization d = discretize(ssm, delta);

    const Eigen::MatrixXd phi_oracle = expm_taylor(ssm.A * delta);
    CHECK((d.Phi - phi_oracle).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.Q);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);

    const double var = ssm.h.dot((d.Phi * ssm.Pinf * d.Phi.transpose() + d.Q) * ssm.h);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("stationarity: Phi Pinf Phi' + Q = Pinf for every gap") {
    for (Matern fam : kAllOrders) {
        const StateSpaceModel ssm = to_state_space(Kernel{fam, {0.8, 1.3}});
        for (double delta : {0.0, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0}) {
            const Discretization d = discretize(ssm, delta);
            const Eigen::MatrixXd back = d.Phi * ssm.Pinf * d.Phi.transpose() + d.Q;
            CHECK((back - ssm.Pinf).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("state-space realization reproduces the kernel") {
    // h' Phi(delta) Pinf h = k(delta) over a grid of gaps, all orders
    for (Matern fam : kAllOrders) {
        Kernel k{fam, {1.4, 0.7}};
        const StateSpaceModel ssm = to_state_space(k);
        for (double delta = 0.0; delta <= 5.0; delta += 0.25) {
            const Discretization d = discretize(ssm, delta);
            const double cov_ss = ssm.h.dot(d.Phi * ssm.Pinf * ssm.h);
            CHECK(cov_ss == doctest::Approx(covariance(k, delta)).epsilon(1e-8));
        }
    }
}

TEST_CASE("discretization gradients match finite differences") {
    for (Matern fam : {Matern::nu32, Matern::nu72}) {
        const Kernel k{fam, {0.9, 1.6}};
        const StateSpaceModel ssm = to_state_space(k);
        const double delta = 0.43;
        const DiscretizationGrad g = discretize_with_grad(ssm, delta, true);
        const double h = 1e-6;

        // log-lengthscale direction
        auto at_log_ell = [&](double log_ell) {
            Kernel kk = k;
            kk.hypers.lengthscale = std::exp(log_ell);
            return discretize(to_state_space(kk), delta);
        };
        const double le = k.hypers.log_lengthscale();
        const Discretization dp = at_log_ell(le + h), dm = at_log_ell(le - h);
        const double phi_scale = std::max(1.0, g.dPhi_dlog_ell.cwiseAbs().maxCoeff());
        const double q_scale = std::max(1.0, g.dQ_dlog_ell.cwiseAbs().maxCoeff());
        CHECK((g.dPhi_dlog_ell - (dp.Phi - dm.Phi) / (2 * h)).cwiseAbs().maxCoeff() <
              1e-6 * phi_scale);
        CHECK((g.dQ_dlog_ell - (dp.Q - dm.Q) / (2 * h)).cwiseAbs().maxCoeff() < 1e-6 * q_scale);

        // log-amplitude direction: Q scales, Phi fixed
        CHECK((g.dQ_dlog_sf2 - g.Q).cwiseAbs().maxCoeff() == 0.0);

        // gap direction
        const Discretization gp = discretize(ssm, delta + h), gm = discretize(ssm, delta - h);
        CHECK((g.dPhi_ddelta - (gp.Phi - gm.Phi) / (2 * h)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((g.dQ_ddelta - (gp.Q - gm.Q) / (2 * h)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("kernel spec string round trip") {
    const Kernel k = parse_kernel_spec("matern72(lengthscale=0.5, amplitude=2.0)");
    CHECK(k.family == Matern::nu72);
    CHECK(k.hypers.lengthscale == doctest::Approx(0.5));
    CHECK(k.hypers.amplitude == doctest::Approx(2.0));

    const Kernel k2 = parse_kernel_spec(format_kernel_spec(k));
    CHECK(k2.hypers.lengthscale == k.hypers.lengthscale);
    CHECK(k2.hypers.amplitude == k.hypers.amplitude);

    CHECK(parse_kernel_spec("matern12").family == Matern::nu12);
    CHECK(parse_kernel_spec("matern32(amplitude=3)").hypers.lengthscale == 1.0);
    CHECK_THROWS_AS(parse_kernel_spec("rbf(lengthscale=1)"), std::invalid_argument);
    CHECK_THROWS_AS(parse_kernel_spec("matern32(lengthscale=-1)"), std::invalid_argument);
}

}  // TEST_SUITE
