#include "structgp/oracle.hpp"

#include <cmath>
#include <stdexcept>

#include "structgp/errors.hpp"
#include "structgp/quadrature.hpp"

namespace structgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Cholesky with a jitter ladder; standard dense-GP practice.
Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(Eigen::MatrixXd M) {
    const double scale = std::max(1e-300, M.diagonal().mean());
    double jitter = 0.0;
    for (int attempt = 0; attempt <= 7; ++attempt) {
        Eigen::LLT<Eigen::MatrixXd> llt(M + jitter * scale *
                                            Eigen::MatrixXd::Identity(M.rows(), M.cols()));
        if (llt.info() == Eigen::Success) return llt;
        jitter = (jitter == 0.0) ? 1e-12 : jitter * 10.0;
    }
    throw IllConditionedError("dense kernel matrix is not positive definite after jitter", -1);
}

void check_cap(long n, long cap) {
    if (n > cap)
        throw std::invalid_argument("dense GP capped at N=" + std::to_string(cap) +
                                    " (got " + std::to_string(n) + ")");
}

double log_sigmoid(double f) {
    // stable log(1/(1+e^-f))
    return f > 0.0 ? -std::log1p(std::exp(-f)) : f - std::log1p(std::exp(f));
}

}  // namespace

Eigen::MatrixXd gram_isotropic(const Kernel& kernel, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B) {
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (long i = 0; i < A.rows(); ++i)
        for (long j = 0; j < B.rows(); ++j)
            K(i, j) = covariance(kernel, (A.row(i) - B.row(j)).norm());
    return K;
}

Eigen::MatrixXd gram_additive(const std::vector<Kernel>& kernels, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
    if (static_cast<long>(kernels.size()) != A.cols())
        throw ShapeError("need one kernel per input dimension");
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(A.rows(), B.rows());
    for (std::size_t d = 0; d < kernels.size(); ++d)
        for (long i = 0; i < A.rows(); ++i)
            for (long j = 0; j < B.rows(); ++j)
                K(i, j) += covariance(kernels[d], std::abs(A(i, d) - B(j, d)));
    return K;
}

DenseGPResult full_gp_from_gram(const Eigen::MatrixXd& K, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& K_star_train,
                                const Eigen::VectorXd& prior_diag,
                                const Eigen::VectorXd& noise_vars) {
    const long n = K.rows();
    Eigen::MatrixXd Ky = K;
    Ky.diagonal() += noise_vars;
    DenseGPResult out;
    const auto llt = chol_with_jitter(Ky);
    out.chol = llt.matrixL();
    const Eigen::VectorXd alpha = llt.solve(y);
    out.mean = K_star_train * alpha;
    const Eigen::MatrixXd V = llt.solve(K_star_train.transpose());
    out.covariance = -K_star_train * V;
    out.covariance.diagonal() += prior_diag;
    // full predictive covariance needs K(star, star); callers that only use
    // the diagonal pass prior_diag and read covariance.diagonal()
    double logdet = 0.0;
    for (long i = 0; i < n; ++i) logdet += 2.0 * std::log(out.chol(i, i));
    out.logZ = -0.5 * (y.dot(alpha) + logdet + n * kLog2Pi);
    return out;
}

DenseGPResult full_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& X_star, const Kernel& kernel, double noise_var,
                      long n_cap) {
    check_cap(X.rows(), n_cap);
    const Eigen::MatrixXd K = gram_isotropic(kernel, X, X);
    const Eigen::MatrixXd Ks = gram_isotropic(kernel, X_star, X);
    const Eigen::VectorXd diag =
        Eigen::VectorXd::Constant(X_star.rows(), kernel.hypers.amplitude);
    DenseGPResult out = full_gp_from_gram(
        K, y, Ks, diag, Eigen::VectorXd::Constant(X.rows(), noise_var));
    out.covariance += gram_isotropic(kernel, X_star, X_star) -
                      Eigen::MatrixXd(diag.asDiagonal());
    return out;
}

DenseGPResult full_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& X_star, const std::vector<Kernel>& kernels,
                      double noise_var, long n_cap) {
    check_cap(X.rows(), n_cap);
    const Eigen::MatrixXd K = gram_additive(kernels, X, X);
    const Eigen::MatrixXd Ks = gram_additive(kernels, X_star, X);
    double amp = 0.0;
    for (const auto& k : kernels) amp += k.hypers.amplitude;
    const Eigen::VectorXd diag = Eigen::VectorXd::Constant(X_star.rows(), amp);
    DenseGPResult out = full_gp_from_gram(
        K, y, Ks, diag, Eigen::VectorXd::Constant(X.rows(), noise_var));
    out.covariance += gram_additive(kernels, X_star, X_star) -
                      Eigen::MatrixXd(diag.asDiagonal());
    return out;
}

DenseAdditivePosterior additive_posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const std::vector<Kernel>& kernels,
                                          const Eigen::VectorXd& noise_vars) {
    const long n = X.rows();
    const long D = X.cols();
    check_cap(n, 3000);
    std::vector<Eigen::MatrixXd> Kd(D);
    Eigen::MatrixXd K_add = Eigen::MatrixXd::Zero(n, n);
    for (long d = 0; d < D; ++d) {
        Kd[d].resize(n, n);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j)
                Kd[d](i, j) = covariance(kernels[d], std::abs(X(i, d) - X(j, d)));
        K_add += Kd[d];
    }
    Eigen::MatrixXd Ky = K_add;
    Ky.diagonal() += noise_vars;
    const auto llt = chol_with_jitter(Ky);
    const Eigen::VectorXd alpha = llt.solve(y);

    DenseAdditivePosterior out;
    out.means.resize(n, D);
    out.vars.resize(n, D);
    for (long d = 0; d < D; ++d) {
        out.means.col(d) = Kd[d] * alpha;
        const Eigen::MatrixXd V = llt.solve(Kd[d]);
        out.vars.col(d) = Kd[d].diagonal() - (Kd[d].cwiseProduct(V.transpose())).rowwise().sum();
    }
    double logdet = 0.0;
    const Eigen::MatrixXd L = llt.matrixL();
    for (long i = 0; i < n; ++i) logdet += 2.0 * std::log(L(i, i));
    out.logZ = -0.5 * (y.dot(alpha) + logdet + n * kLog2Pi);
    return out;
}

DenseLaplaceFit full_gp_laplace(const Eigen::MatrixXd& X, const Eigen::VectorXi& y,
                                const std::vector<Kernel>& kernels, double tol, int max_newton,
                                long n_cap) {
    const long n = X.rows();
    const long D = X.cols();
    check_cap(n, n_cap);
    for (long i = 0; i < n; ++i)
        if (y(i) != 0 && y(i) != 1)
            throw std::invalid_argument("labels must be 0/1");

    std::vector<Eigen::MatrixXd> Kd(D);
    Eigen::MatrixXd K_add = Eigen::MatrixXd::Zero(n, n);
    for (long d = 0; d < D; ++d) {
        Kd[d] = gram_isotropic(kernels[d], X.col(d), X.col(d));
        K_add += Kd[d];
    }

    const auto loglik = [&](const Eigen::VectorXd& f) {
        double acc = 0.0;
        for (long i = 0; i < n; ++i) acc += y(i) == 1 ? log_sigmoid(f(i)) : log_sigmoid(-f(i));
        return acc;
    };
    // every iterate is K_add * c, so the prior quadratic is c' K_add c
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    DenseLaplaceFit fit;
    double omega = loglik(f);
    fit.objective_trace.push_back(omega);
    Eigen::VectorXd W(n);

    for (int it = 0; it < max_newton; ++it) {
        Eigen::VectorXd grad(n);
        for (long i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-f(i)));
            grad(i) = y(i) - p;
            W(i) = std::max(p * (1.0 - p), 1e-6);
        }
        const Eigen::VectorXd t = f + grad.cwiseQuotient(W);
        Eigen::MatrixXd Kw = K_add;
        Kw.diagonal() += W.cwiseInverse();
        const Eigen::VectorXd alpha = chol_with_jitter(Kw).solve(t);

        // damped step with halving on objective decrease
        double step = 1.0;
        Eigen::VectorXd c_new, f_new;
        double omega_new = -std::numeric_limits<double>::infinity();
        for (int halvings = 0; halvings < 20; ++halvings) {
            c_new = (1.0 - step) * c + step * alpha;
            f_new = K_add * c_new;
            omega_new = loglik(f_new) - 0.5 * c_new.dot(f_new);
            if (omega_new >= omega - 1e-12 * std::abs(omega)) break;
            step *= 0.5;
        }
        const double change = (f_new - f).lpNorm<Eigen::Infinity>();
        c = c_new;
        f = f_new;
        omega = omega_new;
        fit.objective_trace.push_back(omega);
        if (change < tol) break;
    }

    fit.alpha.resize(n);
    for (long i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-f(i)));
        W(i) = std::max(p * (1.0 - p), 1e-6);
        fit.alpha(i) = y(i) - p;
    }
    fit.f_hat = f;
    fit.W = W;
    fit.F_hat.resize(n, D);
    for (long d = 0; d < D; ++d) fit.F_hat.col(d) = Kd[d] * c;

    // block-tiled Laplace evidence: logdet via B_d = I + W^1/2 K_d W^1/2
    double logdet = 0.0;
    const Eigen::VectorXd w_sqrt = W.cwiseSqrt();
    for (long d = 0; d < D; ++d) {
        Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n) +
                            w_sqrt.asDiagonal() * Kd[d] * w_sqrt.asDiagonal();
        const Eigen::MatrixXd L = chol_with_jitter(B).matrixL();
        for (long i = 0; i < n; ++i) logdet += 2.0 * std::log(L(i, i));
    }
    fit.evidence = loglik(f) - 0.5 * c.dot(f) - 0.5 * logdet;
    return fit;
}

Eigen::VectorXd full_gp_laplace_predict(const DenseLaplaceFit& fit, const Eigen::MatrixXd& X,
                                        const Eigen::MatrixXd& X_star,
                                        const std::vector<Kernel>& kernels) {
    const long n = X.rows();
    const long D = X.cols();
    const long q = X_star.rows();

    std::vector<Eigen::LLT<Eigen::MatrixXd>> solvers;
    solvers.reserve(D);
    for (long d = 0; d < D; ++d) {
        Eigen::MatrixXd Kwd = gram_isotropic(kernels[d], X.col(d), X.col(d));
        Kwd.diagonal() += fit.W.cwiseInverse();
        solvers.push_back(chol_with_jitter(Kwd));
    }

    const GaussHermite gh(32);
    Eigen::VectorXd probs(q);
    Eigen::VectorXd ks(n);
    for (long s = 0; s < q; ++s) {
        double mu = 0.0, var = 0.0;
        for (long d = 0; d < D; ++d) {
            for (long i = 0; i < n; ++i)
                ks(i) = covariance(kernels[d], std::abs(X_star(s, d) - X(i, d)));
            // at the MAP, f_hat = K_add alpha with alpha = y - sigmoid(f_hat)
            mu += ks.dot(fit.alpha);
            var += kernels[d].hypers.amplitude - ks.dot(solvers[d].solve(ks));
        }
        probs(s) = gh.logistic_gaussian(mu, std::max(var, 0.0));
    }
    return probs;
}

}  // namespace structgp
