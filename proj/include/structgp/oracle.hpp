#pragma once

#include <Eigen/Dense>
#include <vector>

#include "structgp/kernels.hpp"

namespace structgp {

/// Naive dense GP regression result (cubic cost).
struct DenseGPResult {
    Eigen::VectorXd mean;        // predictive mean at the test inputs
    Eigen::MatrixXd covariance;  // full predictive covariance
    double logZ = 0.0;
    Eigen::MatrixXd chol;        // lower factor of K + noise
};

/// Gram matrix of an isotropic kernel on R^D rows.
Eigen::MatrixXd gram_isotropic(const Kernel& kernel, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B);

/// Sum of per-dimension Gram matrices (additive kernel).
Eigen::MatrixXd gram_additive(const std::vector<Kernel>& kernels, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B);

/// Exact GP regression from explicit Gram blocks. noise_vars is the diagonal
/// added to K; prior_diag is k(x*, x*) per test point.
DenseGPResult full_gp_from_gram(const Eigen::MatrixXd& K, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& K_star_train,
                                const Eigen::VectorXd& prior_diag,
                                const Eigen::VectorXd& noise_vars);

/// Isotropic kernel over R^D.
DenseGPResult full_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& X_star, const Kernel& kernel, double noise_var,
                      long n_cap = 3000);

/// Additive kernel (one Kernel per input dimension).
DenseGPResult full_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& X_star, const std::vector<Kernel>& kernels,
                      double noise_var, long n_cap = 3000);

/// Per-dimension posterior moments of the additive model, evaluated densely.
/// mean_d = K_d alpha with alpha = (K_add + noise)^-1 y; var_d the diagonal of
/// K_d - K_d (K_add + noise)^-1 K_d.
struct DenseAdditivePosterior {
    Eigen::MatrixXd means;  // N x D, column d = posterior mean of f_d
    Eigen::MatrixXd vars;   // N x D marginal variances
    double logZ = 0.0;
};

DenseAdditivePosterior additive_posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const std::vector<Kernel>& kernels,
                                          const Eigen::VectorXd& noise_vars);

/// Dense Laplace classification on the additive kernel (reference path).
struct DenseLaplaceFit {
    Eigen::VectorXd f_hat;          // MAP of the summed latent function
    Eigen::MatrixXd F_hat;          // N x D per-dimension components
    Eigen::VectorXd W;              // likelihood curvatures at f_hat
    Eigen::VectorXd alpha;          // y - sigmoid(f_hat); f_hat = K_add alpha
    double evidence = 0.0;          // block-tiled Laplace marginal likelihood
    std::vector<double> objective_trace;
};

DenseLaplaceFit full_gp_laplace(const Eigen::MatrixXd& X, const Eigen::VectorXi& y,
                                const std::vector<Kernel>& kernels, double tol = 1e-10,
                                int max_newton = 50, long n_cap = 3000);

/// Class-1 probabilities for a dense Laplace fit; per-dimension latent
/// moments are evaluated densely and summed (mirrors the structured path).
Eigen::VectorXd full_gp_laplace_predict(const DenseLaplaceFit& fit, const Eigen::MatrixXd& X,
                                        const Eigen::MatrixXd& X_star,
                                        const std::vector<Kernel>& kernels);

}  // namespace structgp
