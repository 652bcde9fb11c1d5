#pragma once

// Penalized quantile-regression solver (ADMM), weighted lasso (coordinate
// descent), simulated pivotal tuning level, and the Dantzig-constraint
// feasibility diagnostic.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "transqr/core.hpp"
#include "transqr/rng.hpp"
#include "transqr/stats.hpp"
#include "transqr/types.hpp"

namespace transqr {

struct PenaltySpec {
    double lambda = 0.0;
    Vector weights;          // per-coordinate multipliers; empty means all ones
    bool tau_scale = false;  // multiply penalties by sqrt(tau(1-tau))
};

struct SolverSettings {
    int max_iterations = 5000;
    double tolerance = 1e-6;
    double admm_rho = 1.0;
    std::uint64_t seed = 0;
};

struct QuantileFit {
    CoefficientVector beta;
    double lambda_used = 0.0;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    bool offset_used = false;
    double kkt_residual = 0.0;  // per-observation scale, subdifferential-aware
};

struct PivotalLambdaSpec {
    double alpha_star = 0.05;
    double c_star = 1.0;
    int n_draws = 500;
    std::uint64_t seed = 0;
};

namespace detail {

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

// Per-coordinate range of the check-loss subgradient sum_i -x_ij * g_i with
// g_i in d(rho_tau)(r_i): a point for |r_i| > tie_eps, the full [tau-1, tau]
// interval at ties.
inline void subgradient_intervals(const Eigen::MatrixXd& Xc, const Vector& r, double tau,
                                  double tie_eps, Vector& lo, Vector& hi) {
    const Eigen::Index n = Xc.rows(), p = Xc.cols();
    lo.setZero(p);
    hi.setZero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(r[i]) <= tie_eps) {
            for (Eigen::Index j = 0; j < p; ++j) {
                const double a = -Xc(i, j) * (tau - 1.0);
                const double b = -Xc(i, j) * tau;
                lo[j] += std::min(a, b);
                hi[j] += std::max(a, b);
            }
        } else {
            const double g = tau - (r[i] <= 0.0 ? 1.0 : 0.0);
            for (Eigen::Index j = 0; j < p; ++j) {
                const double v = -Xc(i, j) * g;
                lo[j] += v;
                hi[j] += v;
            }
        }
    }
}

inline double interval_distance_to_zero(double lo, double hi) {
    if (lo > 0.0) return lo;
    if (hi < 0.0) return -hi;
    return 0.0;
}

// KKT residual of the penalized problem at beta, per observation. For
// beta_j != 0 the penalty subgradient is the point lam_j*sign; at zero it is
// the interval [-lam_j, lam_j].
inline double kkt_residual_l1qr(const Eigen::MatrixXd& Xc, const Vector& r, double tau,
                                const Vector& lam, const Vector& beta, double tie_eps) {
    Vector lo, hi;
    subgradient_intervals(Xc, r, tau, tie_eps, lo, hi);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        double d;
        if (beta[j] > 0.0)
            d = interval_distance_to_zero(lo[j] + lam[j], hi[j] + lam[j]);
        else if (beta[j] < 0.0)
            d = interval_distance_to_zero(lo[j] - lam[j], hi[j] - lam[j]);
        else
            d = interval_distance_to_zero(lo[j] - lam[j], hi[j] + lam[j]);
        worst = std::max(worst, d);
    }
    return worst / static_cast<double>(r.size());
}

// Stationarity gap using a certified subgradient selection g (one element of
// the check-loss subdifferential per observation): distance of X'g from the
// penalty subdifferential, per observation.
inline double kkt_from_selection(const Eigen::MatrixXd& Xc, const Vector& g,
                                 const Vector& lam, const Vector& beta) {
    const Vector sg = Xc.transpose() * g;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        double d;
        if (beta[j] > 0.0)
            d = std::abs(sg[j] - lam[j]);
        else if (beta[j] < 0.0)
            d = std::abs(sg[j] + lam[j]);
        else
            d = std::max(std::abs(sg[j]) - lam[j], 0.0);
        worst = std::max(worst, d);
    }
    return worst / static_cast<double>(g.size());
}

inline Vector effective_penalties(const PenaltySpec& penalty, QuantileLevel tau,
                                  Eigen::Index p) {
    if (penalty.lambda < 0.0) throw InputError("penalty lambda must be >= 0");
    Vector lam;
    if (penalty.weights.size() == 0) {
        lam = Vector::Constant(p, penalty.lambda);
    } else {
        if (penalty.weights.size() != p)
            throw InputError("penalty weights length does not match p");
        if ((penalty.weights.array() < 0.0).any())
            throw InputError("penalty weights must be non-negative");
        lam = penalty.lambda * penalty.weights;
    }
    if (penalty.tau_scale) lam *= std::sqrt(tau.value * (1.0 - tau.value));
    return lam;
}

}  // namespace detail

// l1-penalized quantile regression: minimize
//   sum_i rho_tau(y_i - offset_i - x_i'beta) + sum_j lam_j |beta_j|
// by ADMM on the split z = y' - X beta. The z-update is the closed-form
// shifted soft-threshold prox of rho_tau; the beta-update is a lasso-penalized
// quadratic solved by a few coordinate-descent sweeps. Returns the best
// iterate by objective, so the reported objective trace is non-increasing.
inline QuantileFit solve_l1qr(const Study& study, QuantileLevel tau,
                              const PenaltySpec& penalty, const SolverSettings& settings,
                              const Vector* offset = nullptr) {
    study.validate();
    const Eigen::Index n = study.n(), p = study.p();
    if (offset && offset->size() != n)
        throw InputError("offset length does not match study rows");
    if (offset) require_finite(*offset, "offset");
    if (settings.tolerance <= 0.0 || settings.max_iterations < 1 || settings.admm_rho <= 0.0)
        throw InputError("invalid solver settings");

    const Vector lam = detail::effective_penalties(penalty, tau, p);
    Vector yw = study.y;
    if (offset) yw -= *offset;

    // Column-major copy for contiguous column access in coordinate descent.
    const Eigen::MatrixXd Xc = study.X;
    Vector col_sq(p);
    for (Eigen::Index j = 0; j < p; ++j) col_sq[j] = Xc.col(j).squaredNorm();

    const double tol = settings.tolerance;
    const double relax = 1.5;
    const double y_scale = 1.0 + yw.cwiseAbs().maxCoeff();
    // The prox thresholds tau/rho are absolute while residuals live on the
    // scale of y, so the working rho is taken relative to that scale. This
    // also makes the iterate path (nearly) equivariant under y -> c*y.
    const double rho = settings.admm_rho / y_scale;
    const double t = tau.value;

    // Exact beta-update is available when the problem is unpenalized and
    // the Gram matrix is well-conditioned (the post-selection refit path).
    bool direct = (lam.maxCoeff() == 0.0) && p <= n;
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (direct) {
        Eigen::MatrixXd gram = Xc.transpose() * Xc;
        llt.compute(gram);
        if (llt.info() != Eigen::Success) direct = false;
    }

    Vector beta = Vector::Zero(p);
    Vector xbeta = Vector::Zero(n);
    Vector z = yw;
    Vector u = Vector::Zero(n);
    Vector res(n), v(n), q(n);

    auto objective_at = [&](const Vector& fit_vec, const Vector& b) {
        double o = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = yw[i] - fit_vec[i];
            o += r * (t - (r <= 0.0 ? 1.0 : 0.0));
        }
        for (Eigen::Index j = 0; j < p; ++j) o += lam[j] * std::abs(b[j]);
        return o;
    };

    Vector best_beta = beta;
    Vector best_u = u;
    double best_obj = objective_at(xbeta, beta);
    double prev_obj = best_obj;
    int stagnant = 0;
    int iter = 0;
    bool residuals_ok = false;

    for (iter = 1; iter <= settings.max_iterations; ++iter) {
        // beta-update: minimize (rho/2)||b - X beta||^2 + sum lam_j |beta_j|.
        Vector b = yw - z - u;
        if (direct) {
            beta = llt.solve(Xc.transpose() * b);
            xbeta.noalias() = Xc * beta;
        } else {
            res = b - xbeta;
            for (int sweep = 0; sweep < 5; ++sweep) {
                double max_change = 0.0;
                for (Eigen::Index j = 0; j < p; ++j) {
                    if (col_sq[j] <= 0.0) continue;
                    const double old = beta[j];
                    const double g = Xc.col(j).dot(res) + col_sq[j] * old;
                    const double nb = detail::soft_threshold(g, lam[j] / rho) / col_sq[j];
                    if (nb != old) {
                        res -= Xc.col(j) * (nb - old);
                        beta[j] = nb;
                        max_change = std::max(max_change, std::abs(nb - old) * std::sqrt(col_sq[j]));
                    }
                }
                if (max_change <= 0.1 * tol * y_scale) break;
            }
            xbeta = b - res;
        }

        // Over-relaxed z-update (prox of rho_tau) and scaled dual update.
        q = relax * xbeta - (1.0 - relax) * (z - yw);
        v = yw - q - u;
        const Vector z_old = z;
        const double up = t / rho, down = -(1.0 - t) / rho;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double vi = v[i];
            z[i] = vi > up ? vi - up : (vi < down ? vi - down : 0.0);
        }
        const Vector pri = q + z - yw;
        u += pri;

        const double obj = objective_at(xbeta, beta);
        if (obj < best_obj) {
            best_obj = obj;
            best_beta = beta;
            best_u = u;
        }
        stagnant = (std::abs(obj - prev_obj) <= tol) ? stagnant + 1 : 0;
        prev_obj = obj;

        const double r_pri = pri.cwiseAbs().maxCoeff();
        const double r_dual = rho * (Xc.transpose() * (z - z_old)).cwiseAbs().maxCoeff() /
                              static_cast<double>(n);
        if (r_pri <= tol * y_scale && r_dual <= tol * y_scale) {
            residuals_ok = true;
            break;
        }
        if (stagnant >= 10) break;
    }

    QuantileFit fit;
    fit.beta = best_beta;
    fit.lambda_used = penalty.lambda;
    fit.iterations = std::min(iter, settings.max_iterations);
    fit.objective = best_obj;
    fit.offset_used = offset != nullptr;
    // The dual iterate certifies a check-loss subgradient selection exactly
    // (z-prox optimality gives -rho*u in the subdifferential at z), so the
    // stationarity gap it yields is meaningful even between vertices, where
    // residual-based tie detection is not.
    fit.kkt_residual = detail::kkt_from_selection(Xc, Vector(-rho * best_u), lam, best_beta);
    fit.converged = (residuals_ok || stagnant >= 10) && fit.kkt_residual <= 10.0 * tol * y_scale;
    return fit;
}

// Unpenalized quantile regression for the low-dimensional refit steps. Runs
// the same ADMM path with lambda = 0, then polishes onto the best basic
// solution (p zero-residual rows) when that does not worsen the objective,
// which makes the sign-count optimality conditions exact.
inline QuantileFit solve_unpenalized_qr(const Study& study, QuantileLevel tau,
                                        const SolverSettings& settings) {
    study.validate();
    const Eigen::Index n = study.n(), p = study.p();
    if (n <= p) throw InputError("unpenalized QR requires n > p");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(study.X));
    if (qr.rank() < p) {
        const auto perm = qr.colsPermutation().indices();
        std::string cols;
        for (Eigen::Index k = qr.rank(); k < p; ++k)
            cols += (cols.empty() ? "" : ", ") + std::to_string(perm[k] + 1);
        throw InputError("rank-deficient design; dependent columns: " + cols);
    }

    PenaltySpec none;
    QuantileFit fit = solve_l1qr(study, tau, none, settings);

    // Vertex polish: interpolate the p rows with the smallest |residual|.
    Vector r = study.y - study.X * fit.beta;
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(r[a]) < std::abs(r[b]);
    });
    Eigen::MatrixXd Xb(p, p);
    Vector yb(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        Xb.row(k) = study.X.row(idx[k]);
        yb[k] = study.y[idx[k]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> basis(Xb);
    if (basis.rank() == p) {
        const Vector cand = basis.solve(yb);
        const double cand_obj = quantile_objective(study, cand, tau);
        if (cand_obj <= fit.objective + 1e-12 * (1.0 + fit.objective)) {
            fit.beta = cand;
            fit.objective = cand_obj;
            const Vector r2 = study.y - study.X * cand;
            const double y_scale = 1.0 + study.y.cwiseAbs().maxCoeff();
            fit.kkt_residual = detail::kkt_residual_l1qr(
                Eigen::MatrixXd(study.X), r2, tau.value, Vector::Zero(p), cand,
                10.0 * settings.tolerance * y_scale);
            fit.converged = fit.kkt_residual <= 10.0 * settings.tolerance * y_scale;
        }
    }
    return fit;
}

// Simulated pivotal tuning level (conditional on the design):
//   Lambda = max_j | n^-1 sum_i (tau - 1{U_i <= tau}) x_ij / sqrt(tau(1-tau) s2_j) |
// with s2_j = n^-1 sum_i x_ij^2, U ~ Uniform(0,1). Returns c_star times the
// (1 - alpha_star) empirical quantile over n_draws replicates. Zero-variance
// columns are excluded from the max. Note the returned level carries the
// n^-1 normalization of the display; penalties for the sum-form objective
// scale it back by n (see make_pivotal_penalty).
inline double simulate_pivotal_lambda(const Study& study, QuantileLevel tau,
                                      const PivotalLambdaSpec& spec) {
    study.validate();
    if (!(spec.alpha_star > 0.0 && spec.alpha_star < 1.0))
        throw InputError("alpha_star must lie in (0,1)");
    if (spec.n_draws < 1) throw InputError("n_draws must be >= 1");
    const Eigen::Index n = study.n(), p = study.p();
    Vector sigma(p);
    bool any_valid = false;
    for (Eigen::Index j = 0; j < p; ++j) {
        sigma[j] = std::sqrt(study.X.col(j).squaredNorm() / static_cast<double>(n));
        if (sigma[j] > 0.0) any_valid = true;
    }
    if (!any_valid) throw NumericalError("pivotal lambda: all columns zero-variance");

    const double t = tau.value;
    const double denom = static_cast<double>(n) * std::sqrt(t * (1.0 - t));
    Rng rng(spec.seed);
    Vector score(n);
    std::vector<double> draws(static_cast<size_t>(spec.n_draws));
    for (int d = 0; d < spec.n_draws; ++d) {
        for (Eigen::Index i = 0; i < n; ++i)
            score[i] = t - (uniform01(rng) <= t ? 1.0 : 0.0);
        const Vector w = study.X.transpose() * score;
        double mx = 0.0;
        for (Eigen::Index j = 0; j < p; ++j)
            if (sigma[j] > 0.0) mx = std::max(mx, std::abs(w[j]) / (denom * sigma[j]));
        draws[static_cast<size_t>(d)] = mx;
    }
    return spec.c_star * order_stat_quantile(std::move(draws), 1.0 - spec.alpha_star);
}

// Builds the sum-form penalty matching the scaled-penalty convention:
// lambda = n * pivotal level, weights sigma_j, with the sqrt(tau(1-tau))
// factor applied by the solver. Zero-variance columns get the mean of the
// nonzero sigma values.
inline PenaltySpec make_pivotal_penalty(const Study& study, QuantileLevel tau,
                                        const PivotalLambdaSpec& spec) {
    const double level = simulate_pivotal_lambda(study, tau, spec);
    const Eigen::Index n = study.n(), p = study.p();
    Vector sigma(p);
    double nz_sum = 0.0;
    Eigen::Index nz_count = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        sigma[j] = std::sqrt(study.X.col(j).squaredNorm() / static_cast<double>(n));
        if (sigma[j] > 0.0) {
            nz_sum += sigma[j];
            ++nz_count;
        }
    }
    const double fill = nz_count > 0 ? nz_sum / static_cast<double>(nz_count) : 1.0;
    for (Eigen::Index j = 0; j < p; ++j)
        if (sigma[j] == 0.0) sigma[j] = fill;
    PenaltySpec penalty;
    penalty.lambda = static_cast<double>(n) * level;
    penalty.weights = sigma;
    penalty.tau_scale = true;
    return penalty;
}

// Weighted lasso: minimize sum_i (resp_i - d_i'theta)^2 + lambda ||theta||_1
// by cyclic coordinate descent with an exactly maintained residual.
inline CoefficientVector solve_weighted_lasso(const Vector& responses, const Matrix& design,
                                              double lambda_theta,
                                              const SolverSettings& settings) {
    if (responses.size() != design.rows())
        throw InputError("weighted lasso: responses length != design rows");
    if (!responses.allFinite() || !design.allFinite())
        throw InputError("weighted lasso: non-finite inputs");
    if (lambda_theta < 0.0) throw InputError("weighted lasso: negative lambda");

    const Eigen::Index q = design.cols();
    const Eigen::MatrixXd Dc = design;
    Vector col_sq(q);
    for (Eigen::Index j = 0; j < q; ++j) col_sq[j] = Dc.col(j).squaredNorm();

    Vector theta = Vector::Zero(q);
    Vector res = responses;
    // Sweep threshold sits two orders below the solver tolerance so the
    // coefficient error (which the KKT contract is stated in) lands within it.
    const double stop = 0.01 * settings.tolerance * (1.0 + responses.cwiseAbs().maxCoeff());
    for (int sweep = 0; sweep < settings.max_iterations; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < q; ++j) {
            if (col_sq[j] <= 0.0) continue;
            const double old = theta[j];
            const double g = Dc.col(j).dot(res) + col_sq[j] * old;
            const double nt = detail::soft_threshold(g, 0.5 * lambda_theta) / col_sq[j];
            if (nt != old) {
                res -= Dc.col(j) * (nt - old);
                theta[j] = nt;
                max_change = std::max(max_change, std::abs(nt - old) * std::sqrt(col_sq[j]));
            }
        }
        if (max_change <= stop) break;
    }
    return theta;
}

struct FeasibilityReport {
    std::vector<double> study_norms;  // ||S_nk(beta + delta_k)||_inf, tau-1 tie selection
    double pooled_norm = 0.0;
    std::vector<bool> study_feasible;
    bool pooled_feasible = false;
    bool feasible = false;
};

// Diagnostic for the Dantzig-form constraints: per-study subgradient norms
// ||S_nk(beta + delta_k)||_inf <= lambda_k and the pooled-sum constraint
// <= lambda_beta. Reported norms use the documented tie selection tau-1 at
// exactly-zero residuals; feasibility booleans use the subdifferential range
// at near-zero residuals so exact vertex solutions test feasible.
inline FeasibilityReport check_dantzig_feasibility(const std::vector<Study>& studies,
                                                   QuantileLevel tau,
                                                   const CoefficientVector& beta,
                                                   const std::vector<CoefficientVector>& deltas,
                                                   const std::vector<double>& lambdas,
                                                   double lambda_beta, double slack = 0.0) {
    if (studies.empty()) throw InputError("feasibility check: no studies");
    if (deltas.size() != studies.size() || lambdas.size() != studies.size())
        throw InputError("feasibility check: deltas/lambdas must match studies");
    const Eigen::Index p = studies[0].p();
    if (beta.size() != p) throw InputError("feasibility check: beta dimension mismatch");

    FeasibilityReport report;
    Vector pooled_lo = Vector::Zero(p), pooled_hi = Vector::Zero(p);
    Vector pooled_fixed = Vector::Zero(p);
    report.feasible = true;
    for (size_t k = 0; k < studies.size(); ++k) {
        const Study& s = studies[k];
        if (s.p() != p || deltas[k].size() != p)
            throw InputError("feasibility check: dimension mismatch in study " + s.id);
        const Vector theta = beta + deltas[k];
        const Vector r = s.y - s.X * theta;
        const double tie_eps = 1e-5 * (1.0 + s.y.cwiseAbs().maxCoeff());

        Vector fixed = Vector::Zero(p);
        for (Eigen::Index i = 0; i < s.n(); ++i) {
            const double g = tau.value - (r[i] <= 0.0 ? 1.0 : 0.0);
            fixed -= s.X.row(i).transpose() * g;
        }
        report.study_norms.push_back(fixed.cwiseAbs().maxCoeff());
        pooled_fixed += fixed;

        Vector lo, hi;
        detail::subgradient_intervals(Eigen::MatrixXd(s.X), r, tau.value, tie_eps, lo, hi);
        double dist = 0.0;
        for (Eigen::Index j = 0; j < p; ++j)
            dist = std::max(dist, detail::interval_distance_to_zero(lo[j], hi[j]));
        const bool ok = dist <= lambdas[k] + slack;
        report.study_feasible.push_back(ok);
        report.feasible = report.feasible && ok;
        pooled_lo += lo;
        pooled_hi += hi;
    }
    report.pooled_norm = pooled_fixed.cwiseAbs().maxCoeff();
    double pooled_dist = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
        pooled_dist =
            std::max(pooled_dist, detail::interval_distance_to_zero(pooled_lo[j], pooled_hi[j]));
    report.pooled_feasible = pooled_dist <= lambda_beta + slack;
    report.feasible = report.feasible && report.pooled_feasible;
    return report;
}

}  // namespace transqr
