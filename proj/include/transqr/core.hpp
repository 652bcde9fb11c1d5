#pragma once

// Check loss, quantile objective, and estimation-error metrics.

#include <cmath>

#include "transqr/types.hpp"

namespace transqr {

// rho_tau(x) = x * (tau - I(x <= 0)); non-strict indicator, loss 0 at x = 0.
inline double check_loss(double x, QuantileLevel tau) {
    return x * (tau.value - (x <= 0.0 ? 1.0 : 0.0));
}

inline double quantile_objective(const Study& study, const CoefficientVector& beta,
                                 QuantileLevel tau) {
    if (beta.size() != study.p())
        throw InputError("quantile_objective: beta has " + std::to_string(beta.size()) +
                         " entries for p=" + std::to_string(study.p()));
    const Vector r = study.y - study.X * beta;
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) total += check_loss(r[i], tau);
    return total;
}

inline ErrorMetrics compute_metrics(const CoefficientVector& beta_hat,
                                    const CoefficientVector& beta_true,
                                    const Matrix& X_test) {
    if (beta_hat.size() != beta_true.size())
        throw InputError("compute_metrics: estimate/truth dimension mismatch");
    if (X_test.cols() != beta_hat.size())
        throw InputError("compute_metrics: test design has wrong column count");
    const Vector diff = beta_hat - beta_true;
    ErrorMetrics m;
    m.l1_error = diff.lpNorm<1>();
    m.l2_error = diff.norm();
    m.prediction_error = (X_test * diff).squaredNorm() / static_cast<double>(X_test.rows());
    return m;
}

}  // namespace transqr
