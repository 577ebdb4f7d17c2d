#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace structgp {

/// Half-integer Matern orders with an exact state-space realization.
enum class Matern { nu12, nu32, nu52, nu72 };

/// State dimension m = nu + 1/2.
int state_dim(Matern family);
Matern matern_from_order(int m);

/// Kernel hyperparameters. Stored in natural units; optimizers work on
/// (log lengthscale, log amplitude) to keep both positive.
struct Hyperparameters {
    double lengthscale = 1.0;   // input units
    double amplitude = 1.0;     // sigma_f^2, target-variance units

    double log_lengthscale() const;
    double log_amplitude() const;
    static Hyperparameters from_log(double log_ell, double log_sf2);
};

struct Kernel {
    Matern family = Matern::nu72;
    Hyperparameters hypers;

    /// k(r) for a separation r >= 0.
    double operator()(double r) const;
};

double covariance(const Kernel& kernel, double r);

/// dk(r)/d lengthscale at fixed r.
double covariance_dlengthscale(const Kernel& kernel, double r);

/// SDE realization dz = A z dx + L w(x), f = h' z, with stationary
/// covariance Pinf solving A Pinf + Pinf A' + q L L' = 0.
struct StateSpaceModel {
    Eigen::MatrixXd A;      // m x m companion drift, char. poly (s + lambda)^m
    Eigen::VectorXd L;      // noise loading [0, ..., 1]
    double q = 0.0;         // white-noise spectral density
    Eigen::MatrixXd Pinf;   // stationary state covariance
    Eigen::VectorXd h;      // emission, picks f out of z
    double lambda = 0.0;    // sqrt(2 nu) / lengthscale
    int m = 0;

    // Sensitivities w.r.t. (log lengthscale, log amplitude).
    Eigen::MatrixXd dA_dlog_ell;
    Eigen::MatrixXd dPinf_dlog_ell;

    // Powers of the nilpotent part N = A + lambda I (N^m = 0). They give the
    // exact transition expm(A delta) = e^{-lambda delta} sum delta^k N^k / k!.
    std::vector<Eigen::MatrixXd> n_powers;
    Eigen::MatrixXd dN_dlog_ell;
};

StateSpaceModel to_state_space(const Kernel& kernel);

/// Transition/process-noise pair for an input gap delta >= 0:
/// Phi = expm(A delta), Q = Pinf - Phi Pinf Phi'.
struct Discretization {
    Eigen::MatrixXd Phi;
    Eigen::MatrixXd Q;
};

Discretization discretize(const StateSpaceModel& ssm, double delta);

/// Discretization plus its derivatives w.r.t. log lengthscale, log
/// amplitude, and the gap itself (needed for projection-weight gradients).
struct DiscretizationGrad {
    Eigen::MatrixXd Phi, Q;
    Eigen::MatrixXd dPhi_dlog_ell, dQ_dlog_ell;
    Eigen::MatrixXd dQ_dlog_sf2;            // dPhi/dlog sf2 = 0
    Eigen::MatrixXd dPhi_ddelta, dQ_ddelta;
};

DiscretizationGrad discretize_with_grad(const StateSpaceModel& ssm, double delta,
                                        bool with_delta = false);

/// Parse/format the CLI kernel spec, e.g. "matern72(lengthscale=1.0, amplitude=1.0)".
Kernel parse_kernel_spec(const std::string& spec);
std::string format_kernel_spec(const Kernel& kernel);

}  // namespace structgp
