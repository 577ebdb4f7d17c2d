#pragma once

#include <Eigen/Dense>
#include <vector>

#include "structgp/kernels.hpp"
#include "structgp/rng.hpp"

namespace testutil {

inline Eigen::VectorXd random_vector(structgp::Philox& rng, long n, double lo = 0.0,
                                     double hi = 1.0) {
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
    return v;
}

inline Eigen::MatrixXd random_matrix(structgp::Philox& rng, long rows, long cols,
                                     double lo = 0.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

inline Eigen::VectorXd random_normal_vector(structgp::Philox& rng, long n) {
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

inline structgp::Kernel random_kernel(structgp::Philox& rng, double ell_lo = 0.3,
                                      double ell_hi = 2.0) {
    const structgp::Matern fams[] = {structgp::Matern::nu12, structgp::Matern::nu32,
                                     structgp::Matern::nu52, structgp::Matern::nu72};
    return {fams[rng.below(4)], {rng.uniform(ell_lo, ell_hi), rng.uniform(0.5, 2.0)}};
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

}  // namespace testutil
