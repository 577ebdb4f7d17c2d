#include "structgp/kernels.hpp"

#include <cmath>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "structgp/errors.hpp"

namespace structgp {

int state_dim(Matern family) {
    switch (family) {
        case Matern::nu12: return 1;
        case Matern::nu32: return 2;
        case Matern::nu52: return 3;
        case Matern::nu72: return 4;
    }
    throw std::invalid_argument("unsupported kernel family");
}

Matern matern_from_order(int m) {
    switch (m) {
        case 1: return Matern::nu12;
        case 2: return Matern::nu32;
        case 3: return Matern::nu52;
        case 4: return Matern::nu72;
    }
    throw std::invalid_argument("unsupported Matern state order " + std::to_string(m));
}

double Hyperparameters::log_lengthscale() const { return std::log(lengthscale); }
double Hyperparameters::log_amplitude() const { return std::log(amplitude); }

Hyperparameters Hyperparameters::from_log(double log_ell, double log_sf2) {
    return {std::exp(log_ell), std::exp(log_sf2)};
}

namespace {

void check_hypers(const Hyperparameters& h) {
    if (!std::isfinite(h.lengthscale) || h.lengthscale <= 0.0)
        throw std::invalid_argument("lengthscale must be positive and finite");
    if (!std::isfinite(h.amplitude) || h.amplitude <= 0.0)
        throw std::invalid_argument("amplitude must be positive and finite");
}

// Matern(p + 1/2) polynomial part: k = sf2 * exp(-s) * poly(s), s = lambda r.
double matern_poly(int m, double s) {
    switch (m) {
        case 1: return 1.0;
        case 2: return 1.0 + s;
        case 3: return 1.0 + s + s * s / 3.0;
        case 4: return 1.0 + s + 2.0 * s * s / 5.0 + s * s * s / 15.0;
    }
    return 0.0;
}

double matern_poly_ds(int m, double s) {
    switch (m) {
        case 1: return 0.0;
        case 2: return 1.0;
        case 3: return 1.0 + 2.0 * s / 3.0;
        case 4: return 1.0 + 4.0 * s / 5.0 + s * s / 5.0;
    }
    return 0.0;
}

double binom(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Solve A P + P A' = -RHS by Kronecker vectorization (m <= 4).
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& rhs) {
    const int m = static_cast<int>(A.rows());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m * m, m * m);
    // vec(AP) = (I kron A) vec(P); vec(PA') = (A kron I) vec(P)  [col-major vec]
    for (int i = 0; i < m; ++i) {
        M.block(i * m, i * m, m, m) += A;
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < m; ++k) M(j * m + k, i * m + k) += A(j, i);
    }
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(rhs.data(), m * m);
    Eigen::VectorXd p = M.fullPivLu().solve(-b);
    Eigen::MatrixXd P = Eigen::Map<const Eigen::MatrixXd>(p.data(), m, m);
    return 0.5 * (P + P.transpose());
}

}  // namespace

double Kernel::operator()(double r) const { return covariance(*this, r); }

double covariance(const Kernel& kernel, double r) {
    check_hypers(kernel.hypers);
    if (!std::isfinite(r) || r < 0.0)
        throw std::invalid_argument("covariance: separation must be finite and >= 0");
    const int m = state_dim(kernel.family);
    const double lambda = std::sqrt(2.0 * m - 1.0) / kernel.hypers.lengthscale;
    const double s = lambda * r;
    return kernel.hypers.amplitude * std::exp(-s) * matern_poly(m, s);
}

double covariance_dlengthscale(const Kernel& kernel, double r) {
    check_hypers(kernel.hypers);
    if (!std::isfinite(r) || r < 0.0)
        throw std::invalid_argument("covariance: separation must be finite and >= 0");
    const int m = state_dim(kernel.family);
    const double ell = kernel.hypers.lengthscale;
    const double lambda = std::sqrt(2.0 * m - 1.0) / ell;
    const double s = lambda * r;
    // ds/dell = -s/ell
    const double dk_ds = kernel.hypers.amplitude * std::exp(-s) *
                         (matern_poly_ds(m, s) - matern_poly(m, s));
    return dk_ds * (-s / ell);
}

StateSpaceModel to_state_space(const Kernel& kernel) {
    check_hypers(kernel.hypers);
    const int m = state_dim(kernel.family);
    const double sf2 = kernel.hypers.amplitude;
    const double lambda = std::sqrt(2.0 * m - 1.0) / kernel.hypers.lengthscale;

    StateSpaceModel ssm;
    ssm.m = m;
    ssm.lambda = lambda;
    ssm.A = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i + 1 < m; ++i) ssm.A(i, i + 1) = 1.0;
    for (int j = 0; j < m; ++j) ssm.A(m - 1, j) = -binom(m, j) * std::pow(lambda, m - j);
    ssm.L = Eigen::VectorXd::Zero(m);
    ssm.L(m - 1) = 1.0;
    ssm.h = Eigen::VectorXd::Zero(m);
    ssm.h(0) = 1.0;

    // Unit-lambda, unit-q Lyapunov solve; the scaling z_j -> lambda^j z_j
    // carries it to general lambda, and q normalizes h' Pinf h = sf2.
    Eigen::MatrixXd A1 = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i + 1 < m; ++i) A1(i, i + 1) = 1.0;
    for (int j = 0; j < m; ++j) A1(m - 1, j) = -binom(m, j);
    const Eigen::MatrixXd P1 = solve_lyapunov(A1, ssm.L * ssm.L.transpose());
    const double c0 = P1(0, 0);
    ssm.q = sf2 * std::pow(lambda, 2 * m - 1) / c0;

    ssm.Pinf = Eigen::MatrixXd(m, m);
    ssm.dPinf_dlog_ell = Eigen::MatrixXd(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            ssm.Pinf(i, j) = sf2 / c0 * P1(i, j) * std::pow(lambda, i + j);
            ssm.dPinf_dlog_ell(i, j) = -static_cast<double>(i + j) * ssm.Pinf(i, j);
        }

    ssm.dA_dlog_ell = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) ssm.dA_dlog_ell(m - 1, j) = -(m - j) * ssm.A(m - 1, j);

    const Eigen::MatrixXd N = ssm.A + lambda * Eigen::MatrixXd::Identity(m, m);
    ssm.n_powers.resize(m);
    ssm.n_powers[0] = Eigen::MatrixXd::Identity(m, m);
    for (int k = 1; k < m; ++k) ssm.n_powers[k] = ssm.n_powers[k - 1] * N;
    ssm.dN_dlog_ell = ssm.dA_dlog_ell - lambda * Eigen::MatrixXd::Identity(m, m);
    return ssm;
}

namespace {

// expm(A delta) for the companion drift: A + lambda I is nilpotent, so the
// series terminates after m terms. Exact, no Pade approximation involved.
Eigen::MatrixXd transition_exact(const StateSpaceModel& ssm, double delta) {
    const int m = ssm.m;
    const double u = ssm.lambda * delta;
    if (u > 700.0) return Eigen::MatrixXd::Zero(m, m);  // exp underflow: decorrelated
    Eigen::MatrixXd S = ssm.n_powers[0];
    double coeff = 1.0;
    for (int k = 1; k < m; ++k) {
        coeff *= delta / k;
        S += coeff * ssm.n_powers[k];
    }
    return std::exp(-u) * S;
}

// d expm(A delta) / d log(ell) by the product rule over the terminated series.
Eigen::MatrixXd transition_exact_dlog_ell(const StateSpaceModel& ssm, double delta,
                                          const Eigen::MatrixXd& Phi) {
    const int m = ssm.m;
    const double u = ssm.lambda * delta;
    if (u > 700.0) return Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(m, m);
    double coeff = 1.0;
    for (int k = 1; k < m; ++k) {
        coeff *= delta / k;
        Eigen::MatrixXd dNk = Eigen::MatrixXd::Zero(m, m);
        for (int j = 0; j < k; ++j)
            dNk += ssm.n_powers[j] * ssm.dN_dlog_ell * ssm.n_powers[k - 1 - j];
        dS += coeff * dNk;
    }
    // du/dlog ell = -u
    return u * Phi + std::exp(-u) * dS;
}

}  // namespace

Discretization discretize(const StateSpaceModel& ssm, double delta) {
    if (!std::isfinite(delta) || delta < 0.0)
        throw std::invalid_argument("discretize: gap must be finite and >= 0");
    Discretization d;
    if (delta == 0.0) {
        d.Phi = Eigen::MatrixXd::Identity(ssm.m, ssm.m);
        d.Q = Eigen::MatrixXd::Zero(ssm.m, ssm.m);
        return d;
    }
    d.Phi = transition_exact(ssm, delta);
    d.Q = ssm.Pinf - d.Phi * ssm.Pinf * d.Phi.transpose();
    d.Q = 0.5 * (d.Q + d.Q.transpose()).eval();
    return d;
}

DiscretizationGrad discretize_with_grad(const StateSpaceModel& ssm, double delta,
                                        bool with_delta) {
    if (!std::isfinite(delta) || delta < 0.0)
        throw std::invalid_argument("discretize: gap must be finite and >= 0");
    const int m = ssm.m;
    DiscretizationGrad g;
    if (delta == 0.0) {
        g.Phi = Eigen::MatrixXd::Identity(m, m);
        g.Q = Eigen::MatrixXd::Zero(m, m);
        g.dPhi_dlog_ell = g.dQ_dlog_ell = g.dQ_dlog_sf2 = Eigen::MatrixXd::Zero(m, m);
        g.dPhi_ddelta = g.dQ_ddelta = Eigen::MatrixXd::Zero(m, m);
        return g;
    }
    g.Phi = transition_exact(ssm, delta);
    g.dPhi_dlog_ell = transition_exact_dlog_ell(ssm, delta, g.Phi);

    const Eigen::MatrixXd PinfPhiT = ssm.Pinf * g.Phi.transpose();
    g.Q = ssm.Pinf - g.Phi * PinfPhiT;
    g.Q = 0.5 * (g.Q + g.Q.transpose()).eval();

    Eigen::MatrixXd dQ = ssm.dPinf_dlog_ell - g.dPhi_dlog_ell * PinfPhiT -
                         g.Phi * ssm.dPinf_dlog_ell * g.Phi.transpose() -
                         g.Phi * ssm.Pinf * g.dPhi_dlog_ell.transpose();
    g.dQ_dlog_ell = 0.5 * (dQ + dQ.transpose());
    g.dQ_dlog_sf2 = g.Q;  // Pinf scales with sf2, Phi does not depend on it

    if (with_delta) {
        g.dPhi_ddelta = ssm.A * g.Phi;
        const Eigen::MatrixXd S = g.Phi * PinfPhiT;
        Eigen::MatrixXd dQd = -(ssm.A * S + S * ssm.A.transpose());
        g.dQ_ddelta = 0.5 * (dQd + dQd.transpose());
    }
    return g;
}

Kernel parse_kernel_spec(const std::string& spec) {
    static const std::regex re(
        R"(^\s*matern(12|32|52|72)\s*(?:\(\s*(.*?)\s*\))?\s*$)");
    std::smatch match;
    if (!std::regex_match(spec, match, re))
        throw std::invalid_argument("cannot parse kernel spec: '" + spec + "'");
    Kernel kernel;
    const std::string order = match[1];
    kernel.family = matern_from_order((order[0] - '0' + 1) / 2);
    if (match[2].matched && match[2].length() > 0) {
        static const std::regex kv(R"(\s*(lengthscale|amplitude)\s*=\s*([^,\s]+)\s*)");
        std::string args = match[2];
        auto begin = std::sregex_iterator(args.begin(), args.end(), kv);
        std::size_t consumed = 0;
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
            const double value = std::stod((*it)[2]);
            if ((*it)[1] == "lengthscale")
                kernel.hypers.lengthscale = value;
            else
                kernel.hypers.amplitude = value;
            consumed += it->length();
        }
        // commas between pairs
        std::size_t commas = static_cast<std::size_t>(std::count(args.begin(), args.end(), ','));
        if (consumed + commas != args.size())
            throw std::invalid_argument("cannot parse kernel arguments: '" + args + "'");
    }
    check_hypers(kernel.hypers);
    return kernel;
}

std::string format_kernel_spec(const Kernel& kernel) {
    std::ostringstream out;
    out.precision(17);
    out << "matern" << 2 * state_dim(kernel.family) - 1 << "2(lengthscale="
        << kernel.hypers.lengthscale << ", amplitude=" << kernel.hypers.amplitude << ")";
    return out.str();
}

}  // namespace structgp
