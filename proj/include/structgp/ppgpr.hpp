#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "structgp/additive.hpp"
#include "structgp/kernels.hpp"

namespace structgp {

/// Scalar-GP hypers for one projection (the noise rides along because each
/// greedy stage fits a complete scalar GP on the residual).
struct ProjectionFit {
    Eigen::VectorXd w;   // unit norm
    Kernel kernel;
    double noise_var = 0.0;
    double logZ = 0.0;
};

/// Projected additive GP: y = sum_m f_m(x' w_m) + noise, learned greedily.
struct ProjectedAdditiveModel {
    Eigen::MatrixXd W;               // D x M, unit-norm columns
    std::vector<Kernel> kernels;     // per projection
    double noise_var = 0.0;
    double offset = 0.0;
    Eigen::VectorXd column_means;    // input standardization
    Eigen::VectorXd column_scales;
    std::vector<double> nmse_trace;  // training NMSE after each added projection
    std::vector<double> logZ_trace;
    std::shared_ptr<const AdditiveModel> predictor;  // fixed-theta E-step state

    long projections() const { return W.cols(); }
    bool fitted() const { return predictor != nullptr; }

    Eigen::MatrixXd project(const Eigen::MatrixXd& X) const;
};

struct FitProjectionOptions {
    int max_iters = 200;
    double grad_tol = 1e-5;
};

/// Jointly optimize (w, log theta) of a scalar GP on inputs X w against the
/// Kalman-filter marginal likelihood; w is renormalized to unit norm with the
/// lengthscale absorbing the scale.
ProjectionFit fit_projection(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual,
                             const Eigen::VectorXd& w_init, const Kernel& kernel_init,
                             double noise_var_init, const FitProjectionOptions& opts = {});

struct PpgprOptions {
    int max_projections = 10;
    double nmse_tol = 1e-3;       // stop when the improvement drops below this
    FitProjectionOptions inner;
    Matern family = Matern::nu72;
    double ridge = 1e-6;          // fallback regularizer for the LS initialization
};

/// Greedy projection pursuit: least-squares initialization on the current
/// residual, joint (w, theta) refinement, residual update; final fixed-theta
/// VB E-step over the projected coordinates for predictions.
ProjectedAdditiveModel ppgpr_greedy(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const PpgprOptions& opts = {});

void ppgpr_predict(const ProjectedAdditiveModel& model, const Eigen::MatrixXd& X_star,
                   Eigen::VectorXd& mean, Eigen::VectorXd& variance,
                   bool include_noise = false);

}  // namespace structgp
