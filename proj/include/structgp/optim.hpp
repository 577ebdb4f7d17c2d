#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

namespace structgp::optim {

using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;
using ValueOnly = std::function<double(const Eigen::VectorXd&)>;

struct Result {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

// Armijo backtracking from unit step. Returns the accepted step length,
// or 0 if no decrease was found down to min_step.
inline double backtrack(const Objective& f, const Eigen::VectorXd& x, double fx,
                        const Eigen::VectorXd& grad, const Eigen::VectorXd& dir,
                        Eigen::VectorXd& x_new, double& f_new, Eigen::VectorXd& g_new,
                        int& evals, double min_step = 1e-14) {
    const double slope = grad.dot(dir);
    if (!(slope < 0)) return 0.0;
    double step = 1.0;
    const double c1 = 1e-4;
    while (step > min_step) {
        x_new = x + step * dir;
        f_new = f(x_new, g_new);
        ++evals;
        if (std::isfinite(f_new) && f_new <= fx + c1 * step * slope) return step;
        step *= 0.5;
    }
    return 0.0;
}

}  // namespace detail

/// Limited-memory BFGS (two-loop recursion) with Armijo backtracking.
inline Result minimize_lbfgs(const Objective& f, const Eigen::VectorXd& x0, int max_iters = 200,
                             double grad_tol = 1e-5, int memory = 8) {
    const auto n = x0.size();
    Result res;
    res.x = x0;
    Eigen::VectorXd grad(n), x_new(n), g_new(n);
    res.value = f(res.x, grad);
    ++res.evaluations;

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int it = 0; it < max_iters; ++it) {
        res.iterations = it;
        if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
            res.converged = true;
            return res;
        }
        // two-loop recursion
        Eigen::VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const auto& s = s_hist.back();
            const auto& y = y_hist.back();
            q *= s.dot(y) / y.squaredNorm();
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd dir = -q;
        double f_new;
        double step = detail::backtrack(f, res.x, res.value, grad, dir, x_new, f_new, g_new,
                                        res.evaluations);
        if (step == 0.0) {
            // curvature memory went stale; retry along steepest descent
            dir = -grad;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            step = detail::backtrack(f, res.x, res.value, grad, dir, x_new, f_new, g_new,
                                     res.evaluations);
            if (step == 0.0) return res;
        }
        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd y = g_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        res.x = x_new;
        res.value = f_new;
        grad = g_new;
    }
    return res;
}

/// Polak-Ribiere+ nonlinear conjugate gradient with Armijo backtracking.
inline Result minimize_ncg(const Objective& f, const Eigen::VectorXd& x0, int max_iters = 50,
                           double grad_tol = 1e-6) {
    Result res;
    res.x = x0;
    Eigen::VectorXd grad(x0.size()), x_new(x0.size()), g_new(x0.size());
    res.value = f(res.x, grad);
    ++res.evaluations;
    Eigen::VectorXd dir = -grad;

    for (int it = 0; it < max_iters; ++it) {
        res.iterations = it;
        if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
            res.converged = true;
            return res;
        }
        if (!(grad.dot(dir) < 0)) dir = -grad;  // restart on a non-descent direction
        double f_new;
        const double step = detail::backtrack(f, res.x, res.value, grad, dir, x_new, f_new,
                                              g_new, res.evaluations);
        if (step == 0.0) return res;
        const double beta =
            std::max(0.0, g_new.dot(g_new - grad) / std::max(grad.squaredNorm(), 1e-300));
        dir = -g_new + beta * dir;
        res.x = x_new;
        res.value = f_new;
        grad = g_new;
    }
    return res;
}

/// Nelder-Mead simplex, value-only, capped by an evaluation budget.
inline Result minimize_nelder_mead(const ValueOnly& f, const Eigen::VectorXd& x0,
                                   int max_evals = 200, double init_step = 0.5,
                                   double tol = 1e-8) {
    const int n = static_cast<int>(x0.size());
    Result res;
    std::vector<Eigen::VectorXd> pts(n + 1, x0);
    std::vector<double> vals(n + 1);
    for (int i = 1; i <= n; ++i) pts[i](i - 1) += init_step;
    for (int i = 0; i <= n; ++i) {
        vals[i] = f(pts[i]);
        ++res.evaluations;
    }
    auto order = [&] {
        for (int i = 1; i <= n; ++i)
            for (int j = i; j > 0 && vals[j] < vals[j - 1]; --j) {
                std::swap(vals[j], vals[j - 1]);
                std::swap(pts[j], pts[j - 1]);
            }
    };
    order();
    while (res.evaluations < max_evals) {
        ++res.iterations;
        if (std::abs(vals[n] - vals[0]) < tol * (std::abs(vals[0]) + tol)) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) centroid += pts[i];
        centroid /= n;

        Eigen::VectorXd xr = centroid + (centroid - pts[n]);
        double fr = f(xr);
        ++res.evaluations;
        if (fr < vals[0]) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[n]);
            double fe = f(xe);
            ++res.evaluations;
            if (fe < fr) {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if (fr < vals[n - 1]) {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            Eigen::VectorXd xc = centroid + 0.5 * (pts[n] - centroid);
            double fc = f(xc);
            ++res.evaluations;
            if (fc < vals[n]) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for (int i = 1; i <= n; ++i) {
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
                    vals[i] = f(pts[i]);
                    ++res.evaluations;
                }
            }
        }
        order();
    }
    res.x = pts[0];
    res.value = vals[0];
    return res;
}

/// Golden-section minimization on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi,
                             int iters = 20) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return fc < fd ? c : d;
}

}  // namespace structgp::optim
