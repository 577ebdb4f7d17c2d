#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "structgp/kernels.hpp"
#include "structgp/rng.hpp"

namespace structgp {

/// Observations ordered along one axis. Targets may be pseudo-observations;
/// an infinite noise variance marks a latent-only step (e.g. a test input).
struct SortedSeries {
    Eigen::VectorXd inputs;       // non-decreasing
    Eigen::VectorXd targets;
    Eigen::VectorXd noise_vars;   // per-step; +inf = no observation
    std::vector<int> to_original; // sorted index -> original index
    std::vector<int> to_sorted;   // original index -> sorted index

    long size() const { return inputs.size(); }

    /// Stable sort by input value; noise broadcast if scalar.
    static SortedSeries from_unsorted(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& noise_vars);
    static SortedSeries from_unsorted(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                      double noise_var);

    /// Overwrite targets given in original order.
    void set_targets_original(const Eigen::VectorXd& y_original);
};

struct FilterResult {
    // indices follow the sorted order of the series
    std::vector<Eigen::VectorXd> pred_means;   // m_t^- (prior to update)
    std::vector<Eigen::MatrixXd> pred_covs;    // P_t^-
    std::vector<Eigen::VectorXd> means;        // m_t (posterior to update)
    std::vector<Eigen::MatrixXd> covs;         // P_t
    std::vector<Eigen::MatrixXd> phis;         // Phi_t maps state t -> t+1
    std::vector<Eigen::MatrixXd> qs;
    double logZ = 0.0;
};

struct SmootherResult {
    std::vector<Eigen::VectorXd> means;        // E[z_t | all obs]
    std::vector<Eigen::MatrixXd> covs;         // V[z_t | all obs]
    std::vector<Eigen::MatrixXd> lag_one;      // E[z_t z_{t+1}'] (cross moment)
    double logZ = 0.0;

    /// h' moments in sorted order.
    Eigen::VectorXd function_means(const Eigen::VectorXd& h) const;
    Eigen::VectorXd function_vars(const Eigen::VectorXd& h) const;
};

FilterResult kalman_filter(const SortedSeries& series, const StateSpaceModel& ssm);

/// Per-gap (Phi, Q) pairs. Independent across gaps, so the map runs on the
/// worker pool; output is schedule-independent.
std::vector<Discretization> precompute_discretizations(const SortedSeries& series,
                                                       const StateSpaceModel& ssm,
                                                       bool parallel = true);

/// Filter reusing precomputed discretizations (cyclic sweeps rewrite targets
/// but keep inputs and hypers fixed).
FilterResult kalman_filter(const SortedSeries& series, const StateSpaceModel& ssm,
                           const std::vector<Discretization>& discs);

SmootherResult rts_smooth(const SortedSeries& series, const StateSpaceModel& ssm);
SmootherResult rts_smooth(const FilterResult& filter, const StateSpaceModel& ssm);

/// Predictive latent moments at arbitrary test inputs: the test points join
/// the chain as infinite-noise observations and the smoother is reused.
void predict_1d(const SortedSeries& series, const StateSpaceModel& ssm,
                const Eigen::VectorXd& test_inputs, Eigen::VectorXd& means,
                Eigen::VectorXd& variances);

/// Joint posterior draw of the latent chain (forward filter, backward
/// sampling). Returns one state row per sorted step.
Eigen::MatrixXd ffbs_sample(const SortedSeries& series, const StateSpaceModel& ssm,
                            Philox& rng);
Eigen::MatrixXd ffbs_sample(const FilterResult& filter, const StateSpaceModel& ssm,
                            Philox& rng);

/// Differential entropy of the chain posterior via its backward Markov
/// factorization. Deterministic (zero-gap) links are skipped.
double chain_entropy(const FilterResult& filter);

/// Scalar-GP marginal-likelihood objective over parameters
///   [w (optional, D entries), log ell, log sf2, log sn2].
/// The chain inputs are X w (or the given 1-d inputs when D = 0); gap
/// gradients hold the sort permutation fixed, so the objective is piecewise
/// smooth in w.
class ScalarGpObjective {
public:
    // 1-d inputs, parameters are the three log-hypers
    ScalarGpObjective(Eigen::VectorXd inputs, Eigen::VectorXd targets, Matern family);
    // projected inputs, parameters are [w, log ell, log sf2, log sn2]
    ScalarGpObjective(Eigen::MatrixXd X, Eigen::VectorXd targets, Matern family,
                      bool with_projection);

    int dim() const { return n_params_; }
    int weight_count() const { return n_weights_; }

    /// logZ(params); grad may be null.
    double value(const Eigen::VectorXd& params, Eigen::VectorXd* grad) const;

private:
    Eigen::MatrixXd X_;        // empty in the 1-d case
    Eigen::VectorXd inputs_;   // used when X_ is empty
    Eigen::VectorXd targets_;
    Matern family_;
    int n_weights_ = 0;
    int n_params_ = 0;
};

/// Convenience wrapper: d logZ / d [log ell, log sf2, log sn2] at theta.
Eigen::VectorXd logZ_gradient(const Eigen::VectorXd& inputs, const Eigen::VectorXd& targets,
                              const Kernel& kernel, double noise_var, double* logZ = nullptr);

}  // namespace structgp
