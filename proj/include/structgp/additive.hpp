#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "structgp/kernels.hpp"
#include "structgp/rng.hpp"
#include "structgp/statespace.hpp"

namespace structgp {

struct VbOptions;
struct VbResult;

/// Additive GP over D input dimensions: y = sum_d f_d(X_{:,d}) + noise.
/// Fitting populates the per-dimension posterior moments; fitted models are
/// immutable and safe to share.
class AdditiveModel {
public:
    AdditiveModel(std::vector<Kernel> kernels, double noise_var);

    long dims() const { return static_cast<long>(kernels_.size()); }
    const std::vector<Kernel>& kernels() const { return kernels_; }
    double noise_var() const { return noise_var_; }
    bool fitted() const { return fitted_; }
    double offset() const { return offset_; }

    /// Per-dimension posterior means at the training inputs, original row
    /// order (N x D).
    const Eigen::MatrixXd& component_means() const;
    const Eigen::MatrixXd& component_vars() const;
    const Eigen::MatrixXd& training_inputs() const { return X_; }

    /// Predictive moments at new rows. Latent-f variance by default; add
    /// noise_var for target variance.
    void predict(const Eigen::MatrixXd& X_star, Eigen::VectorXd& mean,
                 Eigen::VectorXd& variance, bool include_noise = false) const;

    friend VbResult vbem_fit(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                             std::vector<Kernel>, double, const Eigen::MatrixXd&,
                             const VbOptions&);

private:
    std::vector<Kernel> kernels_;
    double noise_var_;
    bool fitted_ = false;
    double offset_ = 0.0;
    Eigen::MatrixXd X_;
    Eigen::MatrixXd mu_;   // N x D component means
    Eigen::MatrixXd var_;  // N x D component variances
    Eigen::VectorXd noise_vars_;  // per-observation (heteroscedastic allowed)
    Eigen::VectorXd resid_base_;  // centered targets minus fitted total
};

struct BackfitOptions {
    double tol = 1e-8;
    int max_sweeps = 100;
    bool zero_mean = true;  // subtract the target mean and record it
};

struct BackfitResult {
    Eigen::MatrixXd component_means;  // N x D, original row order
    double offset = 0.0;
    int sweeps = 0;
    std::vector<double> sweep_changes;  // max relative change per sweep
};

/// Algorithm: cyclic per-dimension smoothing of residuals (a Gauss-Seidel
/// pass over the exact posterior-mean system). Converges to the exact
/// additive posterior mean.
BackfitResult backfit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<Kernel>& kernels, double noise_var,
                      const BackfitOptions& opts = {});

/// Heteroscedastic variant (used by the classifier's inner solves).
BackfitResult backfit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<Kernel>& kernels, const Eigen::VectorXd& noise_vars,
                      const BackfitOptions& opts = {});

struct VbOptions {
    int outer_iters = 10;      // capped VBEM rounds
    BackfitOptions e_step{1e-8, 300, true};  // warm-started inner sweeps
    int m_step_iters = 50;     // conjugate-gradient budget per dimension
    bool learn_hypers = true;  // false = single converged E-step at fixed theta
};

struct VbResult {
    AdditiveModel model;             // fitted, carries theta* and moments
    std::vector<double> elbo_trace;  // evidence lower bound per outer iteration
    Eigen::VectorXd predictive_mean;
    Eigen::VectorXd predictive_var;
};

/// Variational-Bayes EM: E-step cycles per-dimension smoothers over residual
/// pseudo-observations (identical updates to backfit); M-step maximizes the
/// expected complete-data log-likelihood over each theta_d and the noise.
VbResult vbem_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::vector<Kernel> initial_kernels, double initial_noise_var,
                  const Eigen::MatrixXd& X_star, const VbOptions& opts = {});

/// Data-driven starting hypers (lengthscale = range/sqrt(N), sf2 = var/D).
std::vector<Kernel> default_additive_kernels(const Eigen::MatrixXd& X,
                                             const Eigen::VectorXd& y, Matern family);

struct HyperPrior {
    double mu_log_ell = 0.0;      // log-normal prior on lengthscale
    double var_log_ell = 1.0;
    double alpha_amp = 2.0;       // Gamma(shape, rate) on amplitude precision
    double beta_amp = 2.0;
    double alpha_noise = 2.0;     // Gamma(shape, rate) on noise precision
    double beta_noise = 2.0;

    void validate() const;
};

struct McmcOptions {
    int n_samples = 1000;   // post burn-in
    int burn_in = 200;
    std::uint64_t seed = 0;
    bool sample_hypers = true;  // false = fixed-hyper Gibbs (degenerate prior)
    double divergence_guard = 1e6;
};

struct McmcTrace {
    Eigen::MatrixXd lengthscales;   // n_samples x D
    Eigen::MatrixXd amplitudes;     // n_samples x D
    Eigen::VectorXd noise_vars;     // n_samples
    std::uint64_t seed = 0;
    long slice_evals = 0;
};

struct McmcResult {
    McmcTrace trace;
    Eigen::VectorXd predictive_mean;     // at X_star, averaged over samples
    Eigen::VectorXd predictive_var;      // latent-f sample variance
    Eigen::MatrixXd predictive_samples;  // n_samples x M latent draws
    Eigen::VectorXd train_mean;          // posterior mean of sum_d f_d at X
};

/// Gibbs sampler: FFBS block draws of each latent chain, slice-sampled
/// kernel hypers, conjugate Gamma noise-precision updates.
McmcResult mcmc_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const std::vector<Kernel>& initial_kernels, const HyperPrior& prior,
                    const Eigen::MatrixXd& X_star, const McmcOptions& opts);

}  // namespace structgp
