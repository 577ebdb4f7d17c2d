#include "structgp/additive.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "structgp/errors.hpp"
#include "structgp/optim.hpp"

namespace structgp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

void check_training_arrays(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           std::size_t n_kernels) {
    if (X.rows() != y.size()) throw ShapeError("X rows must match y length");
    if (X.rows() == 0) throw std::invalid_argument("empty training set");
    if (static_cast<long>(n_kernels) != X.cols())
        throw ShapeError("need one kernel per input dimension");
    if (!X.allFinite() || !y.allFinite())
        throw std::invalid_argument("training data must be finite");
}

// Fixed-hypers bookkeeping for one dimension's chain.
struct DimChain {
    SortedSeries series;
    StateSpaceModel ssm;
    std::vector<Discretization> discs;

    void rebuild(const Kernel& kernel) {
        ssm = to_state_space(kernel);
        discs = precompute_discretizations(series, ssm);
    }
};

std::vector<DimChain> build_chains(const Eigen::MatrixXd& X,
                                   const std::vector<Kernel>& kernels,
                                   const Eigen::VectorXd& noise_vars) {
    std::vector<DimChain> chains(X.cols());
    for (long d = 0; d < X.cols(); ++d) {
        chains[d].series =
            SortedSeries::from_unsorted(X.col(d), Eigen::VectorXd::Zero(X.rows()), noise_vars);
        chains[d].rebuild(kernels[d]);
    }
    return chains;
}

// One Gauss-Seidel sweep: refresh each mu_d from the residual smoother.
// Returns the largest componentwise change. Optionally captures the final
// smoother state per dimension and the mean of each applied update (the
// constant component of the per-dimension fixed-point residual).
double backfit_sweep(std::vector<DimChain>& chains, const Eigen::VectorXd& y_centered,
                     Eigen::MatrixXd& mu, Eigen::VectorXd& total,
                     std::vector<SmootherResult>* moments,
                     std::vector<FilterResult>* filters,
                     Eigen::VectorXd* change_means = nullptr) {
    const long n = y_centered.size();
    const long D = static_cast<long>(chains.size());
    double max_change = 0.0;
    for (long d = 0; d < D; ++d) {
        DimChain& chain = chains[d];
        for (long i = 0; i < n; ++i) {
            const int src = chain.series.to_original[i];
            chain.series.targets(i) = y_centered(src) - total(src) + mu(src, d);
        }
        FilterResult filter = kalman_filter(chain.series, chain.ssm, chain.discs);
        SmootherResult smooth = rts_smooth(filter, chain.ssm);
        double change_sum = 0.0;
        for (long i = 0; i < n; ++i) {
            const int src = chain.series.to_original[i];
            const double value = chain.ssm.h.dot(smooth.means[i]);
            const double change = std::abs(value - mu(src, d));
            if (change > max_change) max_change = change;
            change_sum += value - mu(src, d);
            total(src) += value - mu(src, d);
            mu(src, d) = value;
        }
        if (change_means) (*change_means)(d) = change_sum / n;
        if (moments) (*moments)[d] = std::move(smooth);
        if (filters) (*filters)[d] = std::move(filter);
    }
    return max_change;
}

// The one Gauss-Seidel mode shared by every pair of dimensions is the
// constant function (any non-constant vector that is smooth along one
// coordinate ordering looks rough along another). Its contraction factor
// approaches 1 with N, so the cyclic sweeps alone can need thousands of
// iterations. Solving the D x D constant-exchange system after each sweep
// removes that mode exactly and leaves the fixed point untouched.
class ConstantModeCorrector {
public:
    ConstantModeCorrector(std::vector<DimChain>& chains, long n) {
        const long D = static_cast<long>(chains.size());
        gains_.resize(D);
        for (long d = 0; d < D; ++d) {
            DimChain& chain = chains[d];
            chain.series.targets.setOnes();
            const SmootherResult sm = rts_smooth(
                kalman_filter(chain.series, chain.ssm, chain.discs), chain.ssm);
            double acc = 0.0;
            for (long i = 0; i < n; ++i) acc += chain.ssm.h.dot(sm.means[i]);
            gains_(d) = acc / n;
        }
        system_.resize(D, D);
        for (long d = 0; d < D; ++d)
            for (long j = 0; j < D; ++j) system_(d, j) = d == j ? 1.0 : gains_(d);
        lu_.compute(system_);
    }

    // Shifts that zero the constant component of every residual. The system
    // inverse is large on anti-symmetric modes, so the residual means must be
    // a simultaneous post-sweep snapshot, not the stale per-update changes.
    Eigen::VectorXd shifts(std::vector<DimChain>& chains, const Eigen::VectorXd& y_centered,
                           const Eigen::MatrixXd& mu, const Eigen::VectorXd& total) const {
        const long n = y_centered.size();
        const long D = static_cast<long>(chains.size());
        Eigen::VectorXd residual_means(D);
        for (long d = 0; d < D; ++d) {
            DimChain& chain = chains[d];
            for (long i = 0; i < n; ++i) {
                const int src = chain.series.to_original[i];
                chain.series.targets(i) = y_centered(src) - total(src) + mu(src, d);
            }
            const SmootherResult sm = rts_smooth(
                kalman_filter(chain.series, chain.ssm, chain.discs), chain.ssm);
            double acc = 0.0;
            for (long i = 0; i < n; ++i)
                acc += chain.ssm.h.dot(sm.means[i]) - mu(chain.series.to_original[i], d);
            residual_means(d) = acc / n;
        }
        return lu_.solve(residual_means);
    }

private:
    Eigen::VectorXd gains_;   // mean of S_d applied to the all-ones vector
    Eigen::MatrixXd system_;
    Eigen::FullPivLU<Eigen::MatrixXd> lu_;
};

struct CycleResult {
    Eigen::MatrixXd mu;
    Eigen::VectorXd total;
    int sweeps = 0;
    std::vector<double> sweep_changes;
    std::vector<SmootherResult> moments;  // per dim, sorted order
    std::vector<FilterResult> filters;
};

CycleResult run_cycles(std::vector<DimChain>& chains, const Eigen::VectorXd& y_centered,
                       const BackfitOptions& opts, bool collect_moments,
                       const Eigen::MatrixXd* warm_start = nullptr) {
    const long n = y_centered.size();
    const long D = static_cast<long>(chains.size());
    CycleResult out;
    if (warm_start && warm_start->rows() == n) {
        out.mu = *warm_start;
        out.total = warm_start->rowwise().sum();
    } else {
        out.mu = Eigen::MatrixXd::Zero(n, D);
        out.total = Eigen::VectorXd::Zero(n);
    }
    if (collect_moments) {
        out.moments.resize(D);
        out.filters.resize(D);
    }
    const double y_scale = y_centered.lpNorm<Eigen::Infinity>() + 1e-12;
    const ConstantModeCorrector corrector(chains, n);
    bool converged = false;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        double change = backfit_sweep(chains, y_centered, out.mu, out.total, nullptr, nullptr);
        if (D > 1) {
            const Eigen::VectorXd shifts =
                corrector.shifts(chains, y_centered, out.mu, out.total);
            for (long d = 0; d < D; ++d) {
                out.mu.col(d).array() += shifts(d);
                change = std::max(change, std::abs(shifts(d)));
            }
            out.total.array() += shifts.sum();
        }
        ++out.sweeps;
        out.sweep_changes.push_back(change / y_scale);
        if (change / y_scale < opts.tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("backfit did not converge in " +
                                   std::to_string(opts.max_sweeps) + " sweeps",
                               out.sweep_changes.back());
    if (collect_moments) {
        // one plain sweep so the captured moments are the smoother state that
        // produced the final means
        backfit_sweep(chains, y_centered, out.mu, out.total, &out.moments, &out.filters);
        ++out.sweeps;
    }
    return out;
}

// Expected complete-data log-likelihood of one chain given smoothed moments,
// as a function of (log ell, log sf2); gradient via the exact transition
// derivatives. Zero-gap links are theta-free and skipped.
class MStepObjective {
public:
    MStepObjective(const SortedSeries& series, const SmootherResult& smooth, Matern family)
        : family_(family) {
        const long n = series.size();
        gaps_.reserve(n - 1);
        S_.reserve(n);
        C_.reserve(n - 1);
        for (long t = 0; t < n; ++t)
            S_.push_back(smooth.covs[t] + smooth.means[t] * smooth.means[t].transpose());
        for (long t = 0; t + 1 < n; ++t) {
            gaps_.push_back(series.inputs(t + 1) - series.inputs(t));
            C_.push_back(smooth.lag_one[t]);
        }
    }

    // negative expected log-likelihood (minimized)
    double operator()(const Eigen::VectorXd& params, Eigen::VectorXd& grad) const {
        const Kernel kernel{family_, Hyperparameters::from_log(params(0), params(1))};
        const StateSpaceModel ssm = to_state_space(kernel);
        const int m = ssm.m;
        double value = 0.0;
        grad.setZero(2);

        // initial state: -1/2 [logdet Pinf + tr(Pinf^-1 S_1)]
        {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ssm.Pinf);
            const double floor = 1e-13 * es.eigenvalues().maxCoeff();
            Eigen::VectorXd inv = es.eigenvalues();
            double logdet = 0.0;
            for (int i = 0; i < m; ++i) {
                const double lam = std::max(inv(i), floor);
                logdet += std::log(lam);
                inv(i) = 1.0 / lam;
            }
            const Eigen::MatrixXd Pinv =
                es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
            value -= 0.5 * (logdet + (Pinv * S_[0]).trace());
            const Eigen::MatrixXd dP_ell = ssm.dPinf_dlog_ell;
            const Eigen::MatrixXd PinvS = Pinv * S_[0];
            grad(0) -= 0.5 * ((Pinv * dP_ell).trace() - (Pinv * dP_ell * PinvS).trace());
            // dPinf/dlog sf2 = Pinf
            grad(1) -= 0.5 * (m - PinvS.trace());
        }

        for (std::size_t t = 0; t < gaps_.size(); ++t) {
            if (gaps_[t] == 0.0) continue;
            const DiscretizationGrad disc = discretize_with_grad(ssm, gaps_[t]);
            const Eigen::MatrixXd& Phi = disc.Phi;
            const Eigen::MatrixXd M = S_[t + 1] - C_[t].transpose() * Phi.transpose() -
                                      Phi * C_[t] + Phi * S_[t] * Phi.transpose();

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(disc.Q);
            const double floor =
                std::max(1e-300, 1e-13 * std::abs(es.eigenvalues().maxCoeff()));
            Eigen::VectorXd inv = es.eigenvalues();
            double logdet = 0.0;
            for (int i = 0; i < m; ++i) {
                const double lam = std::max(inv(i), floor);
                logdet += std::log(lam);
                inv(i) = 1.0 / lam;
            }
            const Eigen::MatrixXd Qinv =
                es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
            value -= 0.5 * (logdet + (Qinv * M).trace());

            const Eigen::MatrixXd QinvM = Qinv * M;
            // dM picks up the Phi dependence; dQ both terms
            const Eigen::MatrixXd dM_common = Phi * S_[t] - C_[t].transpose();
            const Eigen::MatrixXd dPhi[2] = {disc.dPhi_dlog_ell,
                                             Eigen::MatrixXd::Zero(m, m)};
            const Eigen::MatrixXd dQ[2] = {disc.dQ_dlog_ell, disc.dQ_dlog_sf2};
            for (int k = 0; k < 2; ++k) {
                const Eigen::MatrixXd dM =
                    dPhi[k] * dM_common.transpose() + dM_common * dPhi[k].transpose();
                grad(k) -= 0.5 * ((Qinv * dQ[k]).trace() - (Qinv * dQ[k] * QinvM).trace() +
                                  (Qinv * dM).trace());
            }
        }
        grad = -grad;
        return -value;
    }

private:
    Matern family_;
    std::vector<double> gaps_;
    std::vector<Eigen::MatrixXd> S_;  // E[z_t z_t']
    std::vector<Eigen::MatrixXd> C_;  // E[z_t z_{t+1}']
};

// E_q log p(Z_d | theta_d): the value part of the M-step objective.
double expected_chain_loglik(const SortedSeries& series, const SmootherResult& smooth,
                             const Kernel& kernel) {
    MStepObjective obj(series, smooth, kernel.family);
    Eigen::VectorXd params(2), grad(2);
    params << kernel.hypers.log_lengthscale(), kernel.hypers.log_amplitude();
    double value = -obj(params, grad);
    // constant terms: (m/2) log 2pi per stochastic link
    const StateSpaceModel ssm = to_state_space(kernel);
    long links = 1;
    for (long t = 0; t + 1 < series.size(); ++t)
        if (series.inputs(t + 1) != series.inputs(t)) ++links;
    return value - 0.5 * ssm.m * kLog2Pi * links;
}

}  // namespace

// ---------------------------------------------------------------------------

AdditiveModel::AdditiveModel(std::vector<Kernel> kernels, double noise_var)
    : kernels_(std::move(kernels)), noise_var_(noise_var) {
    if (kernels_.empty()) throw std::invalid_argument("additive model needs D >= 1 kernels");
    if (!(noise_var_ > 0.0) || !std::isfinite(noise_var_))
        throw std::invalid_argument("noise variance must be positive");
}

const Eigen::MatrixXd& AdditiveModel::component_means() const {
    if (!fitted_) throw NotFittedError("additive model is not fitted");
    return mu_;
}

const Eigen::MatrixXd& AdditiveModel::component_vars() const {
    if (!fitted_) throw NotFittedError("additive model is not fitted");
    return var_;
}

void AdditiveModel::predict(const Eigen::MatrixXd& X_star, Eigen::VectorXd& mean,
                            Eigen::VectorXd& variance, bool include_noise) const {
    if (!fitted_) throw NotFittedError("additive model is not fitted");
    if (X_star.cols() != dims()) throw ShapeError("X_star column count mismatch");
    const long q = X_star.rows();
    mean = Eigen::VectorXd::Constant(q, offset_);
    variance = Eigen::VectorXd::Zero(q);
    const Eigen::VectorXd resid_base = resid_base_;
    for (long d = 0; d < dims(); ++d) {
        const Eigen::VectorXd targets = resid_base + mu_.col(d);
        const SortedSeries series = SortedSeries::from_unsorted(X_.col(d), targets, noise_vars_);
        const StateSpaceModel ssm = to_state_space(kernels_[d]);
        Eigen::VectorXd md, vd;
        predict_1d(series, ssm, X_star.col(d), md, vd);
        mean += md;
        variance += vd;
    }
    if (include_noise) variance.array() += noise_var_;
}

BackfitResult backfit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<Kernel>& kernels, double noise_var,
                      const BackfitOptions& opts) {
    return backfit(X, y, kernels, Eigen::VectorXd::Constant(y.size(), noise_var), opts);
}

BackfitResult backfit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<Kernel>& kernels, const Eigen::VectorXd& noise_vars,
                      const BackfitOptions& opts) {
    check_training_arrays(X, y, kernels.size());
    BackfitResult out;
    out.offset = opts.zero_mean ? y.mean() : 0.0;
    const Eigen::VectorXd yc = y.array() - out.offset;
    std::vector<DimChain> chains = build_chains(X, kernels, noise_vars);
    CycleResult cycle = run_cycles(chains, yc, opts, false);
    out.component_means = std::move(cycle.mu);
    out.sweeps = cycle.sweeps;
    out.sweep_changes = std::move(cycle.sweep_changes);
    return out;
}

std::vector<Kernel> default_additive_kernels(const Eigen::MatrixXd& X,
                                             const Eigen::VectorXd& y, Matern family) {
    const long D = X.cols();
    const double n = static_cast<double>(X.rows());
    const double var_y = (y.array() - y.mean()).square().sum() / std::max(1.0, n - 1);
    std::vector<Kernel> kernels;
    kernels.reserve(D);
    for (long d = 0; d < D; ++d) {
        const double range = X.col(d).maxCoeff() - X.col(d).minCoeff();
        Kernel k;
        k.family = family;
        k.hypers.lengthscale = std::max(1e-6, range / std::sqrt(n));
        k.hypers.amplitude = std::max(1e-12, var_y / D);
        kernels.push_back(k);
    }
    return kernels;
}

VbResult vbem_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  std::vector<Kernel> kernels, double noise_var,
                  const Eigen::MatrixXd& X_star, const VbOptions& opts) {
    check_training_arrays(X, y, kernels.size());
    const long n = X.rows();
    const long D = X.cols();
    const double offset = y.mean();
    const Eigen::VectorXd yc = y.array() - offset;

    std::vector<DimChain> chains =
        build_chains(X, kernels, Eigen::VectorXd::Constant(n, noise_var));
    std::vector<double> elbo_trace;
    CycleResult cycle;

    bool have_warm_start = false;
    auto e_step_and_elbo = [&]() {
        for (auto& c : chains)
            for (long i = 0; i < n; ++i) c.series.noise_vars(i) = noise_var;
        cycle = run_cycles(chains, yc, opts.e_step, true,
                           have_warm_start ? &cycle.mu : nullptr);
        have_warm_start = true;

        // ELBO = E_q log p(y, Z | theta) + H[q]
        double elbo = 0.0;
        for (long i = 0; i < n; ++i) {
            double var_sum = 0.0;
            for (long d = 0; d < D; ++d) {
                const DimChain& c = chains[d];
                var_sum += c.ssm.h.dot(cycle.moments[d].covs[c.series.to_sorted[i]] * c.ssm.h);
            }
            const double r = yc(i) - cycle.total(i);
            elbo -= 0.5 * (kLog2Pi + std::log(noise_var) + (r * r + var_sum) / noise_var);
        }
        for (long d = 0; d < D; ++d) {
            elbo += expected_chain_loglik(chains[d].series, cycle.moments[d], kernels[d]);
            elbo += chain_entropy(cycle.filters[d]);
        }
        elbo_trace.push_back(elbo);
    };

    const int rounds = opts.learn_hypers ? std::max(1, opts.outer_iters) : 1;
    for (int outer = 0; outer < rounds; ++outer) {
        e_step_and_elbo();
        if (!opts.learn_hypers) break;

        // M-step: per-dimension hypers by conjugate gradient on the expected
        // complete-data log-likelihood, then the closed-form noise update.
        for (long d = 0; d < D; ++d) {
            MStepObjective mobj(chains[d].series, cycle.moments[d], kernels[d].family);
            Eigen::VectorXd p0(2);
            p0 << kernels[d].hypers.log_lengthscale(), kernels[d].hypers.log_amplitude();
            const auto res = optim::minimize_ncg(
                [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) { return mobj(p, g); }, p0,
                opts.m_step_iters, 1e-7);
            kernels[d].hypers = Hyperparameters::from_log(res.x(0), res.x(1));
            chains[d].rebuild(kernels[d]);
        }
        double acc = 0.0;
        for (long i = 0; i < n; ++i) {
            double var_sum = 0.0;
            for (long d = 0; d < D; ++d) {
                const DimChain& c = chains[d];
                var_sum += c.ssm.h.dot(cycle.moments[d].covs[c.series.to_sorted[i]] * c.ssm.h);
            }
            const double r = yc(i) - cycle.total(i);
            acc += r * r + var_sum;
        }
        noise_var = std::max(1e-12, acc / n);
    }
    if (opts.learn_hypers) e_step_and_elbo();  // refresh moments at theta*

    VbResult result{AdditiveModel(kernels, noise_var), std::move(elbo_trace), {}, {}};
    AdditiveModel& model = result.model;
    model.fitted_ = true;
    model.offset_ = offset;
    model.X_ = X;
    model.noise_vars_ = Eigen::VectorXd::Constant(n, noise_var);
    model.mu_ = cycle.mu;
    model.var_.resize(n, D);
    for (long d = 0; d < D; ++d) {
        const DimChain& c = chains[d];
        for (long i = 0; i < n; ++i)
            model.var_(i, d) =
                c.ssm.h.dot(cycle.moments[d].covs[c.series.to_sorted[i]] * c.ssm.h);
    }
    model.resid_base_ = yc - cycle.total;
    if (X_star.rows() > 0)
        model.predict(X_star, result.predictive_mean, result.predictive_var);
    return result;
}

// ---------------------------------------------------------------------------
// MCMC

void HyperPrior::validate() const {
    if (!(var_log_ell > 0) || !(alpha_amp > 0) || !(beta_amp > 0) || !(alpha_noise > 0) ||
        !(beta_noise > 0))
        throw std::invalid_argument("prior shape/rate/variance parameters must be positive");
}

namespace {

// log N(z; mean, Cov) with eigenvalue flooring for near-deterministic links
double mvn_logpdf(const Eigen::VectorXd& resid, const Eigen::MatrixXd& cov) {
    const int m = static_cast<int>(resid.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double floor = std::max(1e-300, 1e-13 * std::abs(es.eigenvalues().maxCoeff()));
    double logdet = 0.0, quad = 0.0;
    const Eigen::VectorXd proj = es.eigenvectors().transpose() * resid;
    for (int i = 0; i < m; ++i) {
        const double lam = std::max(es.eigenvalues()(i), floor);
        logdet += std::log(lam);
        quad += proj(i) * proj(i) / lam;
    }
    return -0.5 * (m * kLog2Pi + logdet + quad);
}

// chain prior density of sampled states (sorted order) under theta
double chain_states_loglik(const Eigen::MatrixXd& states, const SortedSeries& series,
                           const Kernel& kernel) {
    const StateSpaceModel ssm = to_state_space(kernel);
    double acc = mvn_logpdf(states.row(0).transpose(), ssm.Pinf);
    for (long t = 0; t + 1 < series.size(); ++t) {
        const double gap = series.inputs(t + 1) - series.inputs(t);
        if (gap == 0.0) continue;  // deterministic copy, theta-free
        const Discretization disc = discretize(ssm, gap);
        const Eigen::VectorXd resid =
            states.row(t + 1).transpose() - disc.Phi * states.row(t).transpose();
        acc += mvn_logpdf(resid, disc.Q);
    }
    return acc;
}

double log_gamma_pdf(double x, double shape, double rate) {
    if (!(x > 0)) return -kInf;
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
           rate * x;
}

// Univariate slice sampler with stepping out (Neal 2003).
double slice_sample(const std::function<double(double)>& logp, double x0, double width,
                    Philox& rng, long& evals) {
    const double logy = logp(x0) + std::log(std::max(rng.uniform(), 1e-300));
    ++evals;
    double L = x0 - width * rng.uniform();
    double R = L + width;
    for (int i = 0; i < 30 && logp(L) > logy; ++i) L -= width, ++evals;
    for (int i = 0; i < 30 && logp(R) > logy; ++i) R += width, ++evals;
    evals += 2;
    for (int i = 0; i < 100; ++i) {
        const double x = L + (R - L) * rng.uniform();
        ++evals;
        if (logp(x) > logy) return x;
        if (x < x0)
            L = x;
        else
            R = x;
    }
    return x0;  // shrunk to a point; keep the current value
}

}  // namespace

McmcResult mcmc_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const std::vector<Kernel>& initial_kernels, const HyperPrior& prior,
                    const Eigen::MatrixXd& X_star, const McmcOptions& opts) {
    prior.validate();
    const long n = X.rows();
    const long q = X_star.rows();
    const long D = static_cast<long>(initial_kernels.size());
    if (n > 0) check_training_arrays(X, y, initial_kernels.size());
    if (q > 0 && X_star.cols() != D) throw ShapeError("X_star column count mismatch");

    Philox rng(opts.seed);
    std::vector<Kernel> kernels = initial_kernels;
    double tau_noise = prior.alpha_noise / prior.beta_noise;
    const double offset = n > 0 ? y.mean() : 0.0;
    const Eigen::VectorXd yc = n > 0 ? Eigen::VectorXd(y.array() - offset) : Eigen::VectorXd();

    // merged chains: training slots carry data noise, test slots are latent
    std::vector<DimChain> chains(D);
    for (long d = 0; d < D; ++d) {
        Eigen::VectorXd inputs(n + q), targets = Eigen::VectorXd::Zero(n + q),
                        noise(n + q);
        if (n > 0) inputs.head(n) = X.col(d);
        if (q > 0) inputs.tail(q) = X_star.col(d);
        noise.head(n).setConstant(1.0 / tau_noise);
        noise.tail(q).setConstant(kInf);
        if (inputs.size() == 0) continue;
        chains[d].series = SortedSeries::from_unsorted(inputs, targets, noise);
        chains[d].rebuild(kernels[d]);
    }

    Eigen::MatrixXd f_train = Eigen::MatrixXd::Zero(n, D);   // h'z at training slots
    Eigen::MatrixXd f_test = Eigen::MatrixXd::Zero(q, D);
    std::vector<Eigen::MatrixXd> states(D);  // full sampled states, sorted order

    McmcResult out;
    out.trace.seed = opts.seed;
    out.trace.lengthscales.resize(opts.n_samples, D);
    out.trace.amplitudes.resize(opts.n_samples, D);
    out.trace.noise_vars.resize(opts.n_samples);
    out.predictive_samples.resize(opts.n_samples, q);
    Eigen::VectorXd train_acc = Eigen::VectorXd::Zero(n);

    const int total_sweeps = opts.burn_in + opts.n_samples;
    for (int sweep = 0; sweep < total_sweeps; ++sweep) {
        // block-sample each latent chain given the others (FFBS)
        for (long d = 0; d < D; ++d) {
            if (n + q == 0) continue;
            DimChain& chain = chains[d];
            for (long i = 0; i < n + q; ++i) {
                const int src = chain.series.to_original[i];
                if (src < n) {
                    const double resid =
                        yc(src) - (f_train.row(src).sum() - f_train(src, d));
                    chain.series.targets(i) = resid;
                    chain.series.noise_vars(i) = 1.0 / tau_noise;
                }
            }
            const FilterResult filter = kalman_filter(chain.series, chain.ssm, chain.discs);
            states[d] = ffbs_sample(filter, chain.ssm, rng);
            for (long i = 0; i < n + q; ++i) {
                const int src = chain.series.to_original[i];
                const double value = chain.ssm.h.dot(states[d].row(i).transpose());
                if (!std::isfinite(value) || std::abs(value) > opts.divergence_guard)
                    throw std::runtime_error("diverging latent chain in Gibbs sweep " +
                                             std::to_string(sweep));
                if (src < n)
                    f_train(src, d) = value;
                else
                    f_test(src - n, d) = value;
            }
        }

        if (opts.sample_hypers) {
            for (long d = 0; d < D; ++d) {
                // lengthscale: log-normal prior, slice sample on log ell
                auto logp_ell = [&](double log_ell) {
                    Kernel k = kernels[d];
                    k.hypers.lengthscale = std::exp(log_ell);
                    double lp = -0.5 * (log_ell - prior.mu_log_ell) *
                                (log_ell - prior.mu_log_ell) / prior.var_log_ell;
                    if (n + q > 0)
                        lp += chain_states_loglik(states[d], chains[d].series, k);
                    return lp;
                };
                const double new_log_ell =
                    slice_sample(logp_ell, kernels[d].hypers.log_lengthscale(), 1.0, rng,
                                 out.trace.slice_evals);
                kernels[d].hypers.lengthscale = std::exp(new_log_ell);

                // amplitude precision: Gamma prior, slice sample on log tau
                auto logp_tau = [&](double log_tau) {
                    const double tau = std::exp(log_tau);
                    Kernel k = kernels[d];
                    k.hypers.amplitude = 1.0 / tau;
                    double lp = log_gamma_pdf(tau, prior.alpha_amp, prior.beta_amp) + log_tau;
                    if (n + q > 0)
                        lp += chain_states_loglik(states[d], chains[d].series, k);
                    return lp;
                };
                const double new_log_tau =
                    slice_sample(logp_tau, -kernels[d].hypers.log_amplitude(), 1.0, rng,
                                 out.trace.slice_evals);
                kernels[d].hypers.amplitude = std::exp(-new_log_tau);
                if (n + q > 0) chains[d].rebuild(kernels[d]);
            }
        }

        // conjugate noise precision update
        double rate = prior.beta_noise;
        if (n > 0) {
            const Eigen::VectorXd resid = yc - f_train.rowwise().sum();
            rate += 0.5 * resid.squaredNorm();
        }
        tau_noise = rng.gamma(prior.alpha_noise + 0.5 * n, rate);

        if (sweep >= opts.burn_in) {
            const int s = sweep - opts.burn_in;
            for (long d = 0; d < D; ++d) {
                out.trace.lengthscales(s, d) = kernels[d].hypers.lengthscale;
                out.trace.amplitudes(s, d) = kernels[d].hypers.amplitude;
            }
            out.trace.noise_vars(s) = 1.0 / tau_noise;
            if (q > 0)
                out.predictive_samples.row(s) =
                    (f_test.rowwise().sum().array() + offset).transpose();
            if (n > 0) train_acc += f_train.rowwise().sum();
        }
    }

    if (q > 0) {
        out.predictive_mean = out.predictive_samples.colwise().mean();
        Eigen::VectorXd sq = Eigen::VectorXd::Zero(q);
        for (int s = 0; s < opts.n_samples; ++s)
            sq += (out.predictive_samples.row(s).transpose() - out.predictive_mean)
                      .array()
                      .square()
                      .matrix();
        out.predictive_var = sq / std::max(1, opts.n_samples - 1);
    }
    if (n > 0) out.train_mean = (train_acc / opts.n_samples).array() + offset;
    return out;
}

}  // namespace structgp
