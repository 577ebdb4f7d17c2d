#include "structgp/statespace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "structgp/errors.hpp"
#include "structgp/parallel.hpp"

namespace structgp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

// Symmetric PSD solve with eigen-clamp fallback for singular blocks.
Eigen::MatrixXd psd_solve(const Eigen::MatrixXd& S, const Eigen::MatrixXd& B) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        Eigen::MatrixXd X = ldlt.solve(B);
        if (X.allFinite()) return X;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const double floor = 1e-14 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd inv = es.eigenvalues();
    for (int i = 0; i < inv.size(); ++i) inv(i) = inv(i) > floor ? 1.0 / inv(i) : 0.0;
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * B;
}

// Square root factor with eigenvalue clamping (handles Q = 0 exactly).
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Backward gain G = P Phi' (Ppred)^-1 in extended precision: Ppred can be
// extremely ill conditioned when a near-noiseless update meets a tiny gap.
Eigen::MatrixXd backward_gain(const Eigen::MatrixXd& Ppred, const Eigen::MatrixXd& Phi,
                              const Eigen::MatrixXd& P) {
    const MatrixXld S = Ppred.cast<long double>();
    const MatrixXld B = (Phi * P.transpose()).cast<long double>();
    Eigen::LDLT<MatrixXld> ldlt(S);
    if (ldlt.info() == Eigen::Success) {
        MatrixXld X = ldlt.solve(B);
        X += ldlt.solve(B - S * X);  // one refinement step
        if (X.allFinite()) return X.transpose().cast<double>();
    }
    return psd_solve(Ppred, Phi * P.transpose()).transpose();
}

}  // namespace

SortedSeries SortedSeries::from_unsorted(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& noise_vars) {
    const long n = x.size();
    if (y.size() != n || noise_vars.size() != n)
        throw ShapeError("series arrays must share one length");
    for (long i = 0; i < n; ++i) {
        if (!std::isfinite(x(i))) throw std::invalid_argument("series inputs must be finite");
        if (std::isnan(noise_vars(i)) || noise_vars(i) <= 0.0)
            throw std::invalid_argument("noise variances must be positive");
    }
    SortedSeries s;
    s.to_original.resize(n);
    std::iota(s.to_original.begin(), s.to_original.end(), 0);
    std::stable_sort(s.to_original.begin(), s.to_original.end(),
                     [&](int a, int b) { return x(a) < x(b); });
    s.inputs.resize(n);
    s.targets.resize(n);
    s.noise_vars.resize(n);
    s.to_sorted.resize(n);
    for (long i = 0; i < n; ++i) {
        const int src = s.to_original[i];
        s.inputs(i) = x(src);
        s.targets(i) = y(src);
        s.noise_vars(i) = noise_vars(src);
        s.to_sorted[src] = static_cast<int>(i);
    }
    return s;
}

SortedSeries SortedSeries::from_unsorted(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         double noise_var) {
    return from_unsorted(x, y, Eigen::VectorXd::Constant(x.size(), noise_var));
}

void SortedSeries::set_targets_original(const Eigen::VectorXd& y_original) {
    if (y_original.size() != targets.size()) throw ShapeError("target length mismatch");
    for (long i = 0; i < targets.size(); ++i) targets(i) = y_original(to_original[i]);
}

std::vector<Discretization> precompute_discretizations(const SortedSeries& series,
                                                       const StateSpaceModel& ssm,
                                                       bool parallel) {
    const long n = series.size();
    std::vector<Discretization> discs(n > 0 ? n - 1 : 0);
    auto work = [&](long t) {
        discs[t] = discretize(ssm, series.inputs(t + 1) - series.inputs(t));
    };
    if (parallel)
        parallel_for(static_cast<long>(discs.size()), work);
    else
        for (long t = 0; t + 1 < n; ++t) work(t);
    return discs;
}

FilterResult kalman_filter(const SortedSeries& series, const StateSpaceModel& ssm) {
    return kalman_filter(series, ssm, precompute_discretizations(series, ssm, false));
}

FilterResult kalman_filter(const SortedSeries& series, const StateSpaceModel& ssm,
                           const std::vector<Discretization>& discs) {
    const long n = series.size();
    if (n == 0) throw std::invalid_argument("kalman_filter: empty series");
    if (static_cast<long>(discs.size()) != n - 1)
        throw ShapeError("discretization cache does not match the series length");
    const int m = ssm.m;
    const Eigen::VectorXd& h = ssm.h;

    FilterResult out;
    out.pred_means.resize(n);
    out.pred_covs.resize(n);
    out.means.resize(n);
    out.covs.resize(n);
    out.phis.resize(n - 1);
    out.qs.resize(n - 1);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd cov = ssm.Pinf;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);

    for (long t = 0; t < n; ++t) {
        out.pred_means[t] = mean;
        out.pred_covs[t] = cov;
        const double sn2 = series.noise_vars(t);
        if (std::isfinite(sn2)) {
            const double s = h.dot(cov * h) + sn2;
            if (!(s > 0.0) || !std::isfinite(s))
                throw IllConditionedError("non-positive innovation variance", t);
            const double v = series.targets(t) - h.dot(mean);
            out.logZ -= 0.5 * (kLog2Pi + std::log(s) + v * v / s);
            const Eigen::VectorXd gain = cov * h / s;
            mean += gain * v;
            const Eigen::MatrixXd U = I - gain * h.transpose();
            cov = U * cov * U.transpose() + sn2 * gain * gain.transpose();
            cov = 0.5 * (cov + cov.transpose()).eval();
        }
        out.means[t] = mean;
        out.covs[t] = cov;
        if (t + 1 < n) {
            const Discretization& disc = discs[t];
            mean = disc.Phi * mean;
            cov = disc.Phi * cov * disc.Phi.transpose() + disc.Q;
            cov = 0.5 * (cov + cov.transpose()).eval();
            out.phis[t] = disc.Phi;
            out.qs[t] = disc.Q;
        }
    }
    return out;
}

double chain_entropy(const FilterResult& filter) {
    const long n = static_cast<long>(filter.means.size());
    const int m = static_cast<int>(filter.means[0].size());
    constexpr double kLog2PiE = 2.8378770664093454836;  // log(2 pi e)
    auto half_logdet = [&](const Eigen::MatrixXd& C) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        const double floor = std::max(1e-300, 1e-15 * es.eigenvalues().cwiseAbs().maxCoeff());
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += std::log(std::max(es.eigenvalues()(i), floor));
        return 0.5 * acc;
    };
    double H = 0.5 * m * kLog2PiE + half_logdet(filter.covs[n - 1]);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    for (long t = 0; t + 1 < n; ++t) {
        if (filter.qs[t].isZero(0.0)) continue;  // deterministic zero-gap link
        const Eigen::MatrixXd G = backward_gain(filter.pred_covs[t + 1], filter.phis[t],
                                                filter.covs[t]);
        const Eigen::MatrixXd U = I - G * filter.phis[t];
        const Eigen::MatrixXd C =
            U * filter.covs[t] * U.transpose() + G * filter.qs[t] * G.transpose();
        H += 0.5 * m * kLog2PiE + half_logdet(C);
    }
    return H;
}

SmootherResult rts_smooth(const FilterResult& filter, const StateSpaceModel&) {
    const long n = static_cast<long>(filter.means.size());
    SmootherResult out;
    out.logZ = filter.logZ;
    out.means.resize(n);
    out.covs.resize(n);
    out.lag_one.assign(n > 0 ? n - 1 : 0, Eigen::MatrixXd());

    out.means[n - 1] = filter.means[n - 1];
    out.covs[n - 1] = filter.covs[n - 1];
    for (long t = n - 2; t >= 0; --t) {
        // G = P_t Phi' (P_{t+1}^-)^{-1}
        const Eigen::MatrixXd G =
            backward_gain(filter.pred_covs[t + 1], filter.phis[t], filter.covs[t]);
        out.means[t] = filter.means[t] + G * (out.means[t + 1] - filter.pred_means[t + 1]);
        Eigen::MatrixXd cov = filter.covs[t] +
                              G * (out.covs[t + 1] - filter.pred_covs[t + 1]) * G.transpose();
        out.covs[t] = 0.5 * (cov + cov.transpose());
        out.lag_one[t] = out.means[t] * out.means[t + 1].transpose() + G * out.covs[t + 1];
    }
    return out;
}

SmootherResult rts_smooth(const SortedSeries& series, const StateSpaceModel& ssm) {
    return rts_smooth(kalman_filter(series, ssm), ssm);
}

Eigen::VectorXd SmootherResult::function_means(const Eigen::VectorXd& h) const {
    Eigen::VectorXd out(means.size());
    for (std::size_t t = 0; t < means.size(); ++t) out(t) = h.dot(means[t]);
    return out;
}

Eigen::VectorXd SmootherResult::function_vars(const Eigen::VectorXd& h) const {
    Eigen::VectorXd out(covs.size());
    for (std::size_t t = 0; t < covs.size(); ++t) out(t) = h.dot(covs[t] * h);
    return out;
}

void predict_1d(const SortedSeries& series, const StateSpaceModel& ssm,
                const Eigen::VectorXd& test_inputs, Eigen::VectorXd& means,
                Eigen::VectorXd& variances) {
    for (long i = 0; i < test_inputs.size(); ++i)
        if (!std::isfinite(test_inputs(i)))
            throw std::invalid_argument("test inputs must be finite");
    const long n = series.size(), q = test_inputs.size();
    Eigen::VectorXd x(n + q), y(n + q), noise(n + q);
    for (long i = 0; i < n; ++i) {
        x(i) = series.inputs(i);
        y(i) = series.targets(i);
        noise(i) = series.noise_vars(i);
    }
    for (long j = 0; j < q; ++j) {
        x(n + j) = test_inputs(j);
        y(n + j) = 0.0;
        noise(n + j) = kInf;
    }
    const SortedSeries merged = SortedSeries::from_unsorted(x, y, noise);
    const SmootherResult sm = rts_smooth(merged, ssm);
    means.resize(q);
    variances.resize(q);
    for (long j = 0; j < q; ++j) {
        const int t = merged.to_sorted[n + j];
        means(j) = ssm.h.dot(sm.means[t]);
        variances(j) = ssm.h.dot(sm.covs[t] * ssm.h);
    }
}

Eigen::MatrixXd ffbs_sample(const FilterResult& filter, const StateSpaceModel& ssm,
                            Philox& rng) {
    const long n = static_cast<long>(filter.means.size());
    const int m = ssm.m;
    Eigen::MatrixXd sample(n, m);
    auto draw = [&](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
        Eigen::VectorXd xi(m);
        for (int i = 0; i < m; ++i) xi(i) = rng.normal();
        return (mean + psd_sqrt(cov) * xi).eval();
    };
    Eigen::VectorXd z = draw(filter.means[n - 1], filter.covs[n - 1]);
    sample.row(n - 1) = z.transpose();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    for (long t = n - 2; t >= 0; --t) {
        const Eigen::MatrixXd G =
            backward_gain(filter.pred_covs[t + 1], filter.phis[t], filter.covs[t]);
        const Eigen::VectorXd mean =
            filter.means[t] + G * (z - filter.pred_means[t + 1]);
        // Joseph-style conditional covariance (I-G Phi) P (I-G Phi)' + G Q G'
        // avoids the cancellation in P - G Ppred G'
        const Eigen::MatrixXd U = I - G * filter.phis[t];
        Eigen::MatrixXd cov =
            U * filter.covs[t] * U.transpose() + G * filter.qs[t] * G.transpose();
        cov = 0.5 * (cov + cov.transpose()).eval();
        z = draw(mean, cov);
        sample.row(t) = z.transpose();
    }
    return sample;
}

Eigen::MatrixXd ffbs_sample(const SortedSeries& series, const StateSpaceModel& ssm,
                            Philox& rng) {
    return ffbs_sample(kalman_filter(series, ssm), ssm, rng);
}

// ---------------------------------------------------------------------------
// Marginal likelihood with forward sensitivities.

ScalarGpObjective::ScalarGpObjective(Eigen::VectorXd inputs, Eigen::VectorXd targets,
                                     Matern family)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), family_(family) {
    if (inputs_.size() != targets_.size()) throw ShapeError("inputs/targets length mismatch");
    n_weights_ = 0;
    n_params_ = 3;
}

ScalarGpObjective::ScalarGpObjective(Eigen::MatrixXd X, Eigen::VectorXd targets, Matern family,
                                     bool with_projection)
    : X_(std::move(X)), targets_(std::move(targets)), family_(family) {
    if (!with_projection) throw std::invalid_argument("use the 1-d constructor instead");
    if (X_.rows() != targets_.size()) throw ShapeError("inputs/targets length mismatch");
    n_weights_ = static_cast<int>(X_.cols());
    n_params_ = n_weights_ + 3;
}

double ScalarGpObjective::value(const Eigen::VectorXd& params, Eigen::VectorXd* grad) const {
    if (params.size() != n_params_) throw ShapeError("parameter vector has wrong length");
    const int nw = n_weights_;
    const double log_ell = params(nw), log_sf2 = params(nw + 1), log_sn2 = params(nw + 2);
    const double sn2 = std::exp(log_sn2);

    Kernel kernel{family_, Hyperparameters::from_log(log_ell, log_sf2)};
    const StateSpaceModel ssm = to_state_space(kernel);
    const int m = ssm.m;
    const Eigen::VectorXd& h = ssm.h;

    Eigen::VectorXd chain_inputs;
    if (nw > 0)
        chain_inputs = X_ * params.head(nw);
    else
        chain_inputs = inputs_;
    const SortedSeries series = SortedSeries::from_unsorted(chain_inputs, targets_, sn2);
    const long n = series.size();

    if (!grad) {
        return kalman_filter(series, ssm).logZ;
    }

    // parameter layout for sensitivities: [w..., log ell, log sf2, log sn2]
    const int np = n_params_;
    grad->setZero(np);
    double logZ = 0.0;

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd cov = ssm.Pinf;
    std::vector<Eigen::VectorXd> dmean(np, Eigen::VectorXd::Zero(m));
    std::vector<Eigen::MatrixXd> dcov(np, Eigen::MatrixXd::Zero(m, m));
    dcov[nw] = ssm.dPinf_dlog_ell;
    dcov[nw + 1] = ssm.Pinf;  // Pinf scales linearly with sf2

    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    for (long t = 0; t < n; ++t) {
        // update (all steps observed here)
        const double s = h.dot(cov * h) + sn2;
        if (!(s > 0.0) || !std::isfinite(s))
            throw IllConditionedError("non-positive innovation variance", t);
        const double v = series.targets(t) - h.dot(mean);
        logZ -= 0.5 * (kLog2Pi + std::log(s) + v * v / s);
        const Eigen::VectorXd gain = cov * h / s;
        const Eigen::MatrixXd U = I - gain * h.transpose();

        Eigen::VectorXd new_mean = mean + gain * v;
        Eigen::MatrixXd new_cov = U * cov * U.transpose() + sn2 * gain * gain.transpose();
        new_cov = 0.5 * (new_cov + new_cov.transpose()).eval();

        for (int k = 0; k < np; ++k) {
            const double dsn2 = (k == nw + 2) ? sn2 : 0.0;
            const double dv = -h.dot(dmean[k]);
            const double ds = h.dot(dcov[k] * h) + dsn2;
            (*grad)(k) -= 0.5 * (ds / s + 2.0 * v * dv / s - v * v * ds / (s * s));
            const Eigen::VectorXd dgain = dcov[k] * h / s - gain * (ds / s);
            Eigen::VectorXd dm = dmean[k] + dgain * v + gain * dv;
            const Eigen::MatrixXd dU = -dgain * h.transpose();
            Eigen::MatrixXd dP = dU * cov * U.transpose() + U * dcov[k] * U.transpose() +
                                 U * cov * dU.transpose() + dsn2 * gain * gain.transpose() +
                                 sn2 * (dgain * gain.transpose() + gain * dgain.transpose());
            dmean[k] = std::move(dm);
            dcov[k] = 0.5 * (dP + dP.transpose());
        }
        mean = std::move(new_mean);
        cov = std::move(new_cov);

        if (t + 1 < n) {
            const double delta = series.inputs(t + 1) - series.inputs(t);
            const DiscretizationGrad disc = discretize_with_grad(ssm, delta, nw > 0);

            // propagate sensitivities before overwriting mean/cov
            const Eigen::MatrixXd PhiCov = disc.Phi * cov;
            Eigen::VectorXd dPhi_m_ell = disc.dPhi_dlog_ell * mean;
            Eigen::MatrixXd dPhi_P_PhiT_ell = disc.dPhi_dlog_ell * PhiCov.transpose();

            for (int k = 0; k < np; ++k) {
                Eigen::VectorXd dm = disc.Phi * dmean[k];
                Eigen::MatrixXd dP = disc.Phi * dcov[k] * disc.Phi.transpose();
                if (k == nw) {  // log lengthscale
                    dm += dPhi_m_ell;
                    dP += dPhi_P_PhiT_ell + dPhi_P_PhiT_ell.transpose() + disc.dQ_dlog_ell;
                } else if (k == nw + 1) {  // log amplitude
                    dP += disc.dQ_dlog_sf2;
                } else if (k < nw) {  // projection weight: chain rule through the gap
                    const int lo = series.to_original[t], hi = series.to_original[t + 1];
                    const double dgap = X_(hi, k) - X_(lo, k);
                    if (dgap != 0.0) {
                        dm += dgap * (disc.dPhi_ddelta * mean);
                        const Eigen::MatrixXd T = disc.dPhi_ddelta * PhiCov.transpose();
                        dP += dgap * (T + T.transpose() + disc.dQ_ddelta);
                    }
                }
                dmean[k] = std::move(dm);
                dcov[k] = 0.5 * (dP + dP.transpose()).eval();
            }
            mean = disc.Phi * mean;
            cov = disc.Phi * cov * disc.Phi.transpose() + disc.Q;
            cov = 0.5 * (cov + cov.transpose()).eval();
        }
    }
    if (!grad->allFinite()) {
        int bad = 0;
        for (int k = 0; k < np; ++k)
            if (!std::isfinite((*grad)(k))) bad = k;
        throw std::runtime_error("non-finite logZ gradient at parameter index " +
                                 std::to_string(bad));
    }
    return logZ;
}

Eigen::VectorXd logZ_gradient(const Eigen::VectorXd& inputs, const Eigen::VectorXd& targets,
                              const Kernel& kernel, double noise_var, double* logZ) {
    ScalarGpObjective obj(inputs, targets, kernel.family);
    Eigen::VectorXd params(3);
    params << kernel.hypers.log_lengthscale(), kernel.hypers.log_amplitude(),
        std::log(noise_var);
    Eigen::VectorXd grad(3);
    const double value = obj.value(params, &grad);
    if (logZ) *logZ = value;
    return grad;
}

}  // namespace structgp
