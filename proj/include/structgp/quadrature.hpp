#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace structgp {

/// Gauss-Hermite nodes/weights for the physicists' weight exp(-x^2),
/// computed by Golub-Welsch from the Jacobi matrix.
struct GaussHermite {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;

    explicit GaussHermite(int n) {
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) {
            const double b = std::sqrt(i / 2.0);
            J(i, i - 1) = b;
            J(i - 1, i) = b;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
        nodes = es.eigenvalues();
        weights.resize(n);
        const double sqrt_pi = std::sqrt(M_PI);
        for (int i = 0; i < n; ++i) {
            const double v0 = es.eigenvectors()(0, i);
            weights(i) = sqrt_pi * v0 * v0;
        }
    }

    /// E[g(F)] for F ~ N(mean, var) and the logistic link g.
    double logistic_gaussian(double mean, double var) const {
        if (var <= 0.0) return 1.0 / (1.0 + std::exp(-mean));
        const double scale = std::sqrt(2.0 * var);
        double acc = 0.0;
        for (int i = 0; i < nodes.size(); ++i) {
            const double f = mean + scale * nodes(i);
            acc += weights(i) / (1.0 + std::exp(-f));
        }
        return acc / std::sqrt(M_PI);
    }
};

}  // namespace structgp
