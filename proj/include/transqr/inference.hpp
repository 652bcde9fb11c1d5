#pragma once

// Debiased inference for a single coefficient: quantile-spacing density
// estimates, a weighted-lasso projection of the regressor of interest onto
// the rest, post-selected refits, and a grid search for the root of the
// aggregated orthogonal score. Coefficient indices are 1-based throughout
// this module (the first column is coefficient 1), matching how results are
// reported.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "transqr/rng.hpp"
#include "transqr/solver.hpp"
#include "transqr/transfer.hpp"
#include "transqr/types.hpp"

namespace transqr {

struct InferenceSettings {
    int coefficient_index = 1;          // in [1, p]
    double post_select_threshold = 0.01;  // lambda-bar
    double c_theta = 0.1;
    int grid_points = 201;  // odd, >= 3
    // Pivotal multiplier for the two spacing fits, keyed by the quantile
    // level under study; unlisted levels use 1.0.
    std::map<double, double> lambda_tau_cstar = {{0.5, 1.0}, {0.7, 0.95}, {0.2, 0.9}};
    PivotalLambdaSpec pivotal;
};

struct StudyScoreState {
    Vector f_hat;               // per-observation density estimates
    CoefficientVector theta_hat;  // projection coefficients, length p-1
    Vector v_hat;               // projection residuals
    CoefficientVector w_tilde;  // post-selected refit, zeros off support
    std::set<int> selected;     // 1-based support of the refit
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

struct DebiasedResult {
    double alpha_hat = 0.0;
    double sigma_hat_sq = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    Interval search_region;
    Eigen::Index n_total = 0;
    double score_at_solution = 0.0;
};

inline double inference_bandwidth(Eigen::Index n, QuantileLevel tau) {
    const double rate = std::pow(static_cast<double>(n), -1.0 / 6.0);
    return std::min(rate, tau.value * (1.0 - tau.value) / 2.0);
}

inline double cstar_for_tau(const InferenceSettings& settings, QuantileLevel tau) {
    const auto it = settings.lambda_tau_cstar.find(tau.value);
    return it == settings.lambda_tau_cstar.end() ? 1.0 : it->second;
}

namespace detail {

inline void check_inference_settings(const InferenceSettings& settings, Eigen::Index p) {
    if (settings.coefficient_index < 1 || settings.coefficient_index > p)
        throw InputError("coefficient index must lie in [1, p]");
    if (!(settings.post_select_threshold > 0.0))
        throw InputError("post-selection threshold must be positive");
    if (!(settings.c_theta > 0.0)) throw InputError("c_theta must be positive");
    if (settings.grid_points < 3 || settings.grid_points % 2 == 0)
        throw InputError("grid_points must be odd and at least 3");
}

// Splits the design into the column of interest and the rest, preserving the
// order of the remaining columns.
inline void split_design(const Matrix& X, int index1, Vector* x1, Matrix* rest) {
    const Eigen::Index p = X.cols(), j0 = index1 - 1;
    *x1 = X.col(j0);
    rest->resize(X.rows(), p - 1);
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (j == j0) continue;
        rest->col(at++) = X.col(j);
    }
}

// Spacing-to-density conversion. An inverted or collapsed spacing means the
// two quantile fits crossed at this observation; following the sandwich
// convention the observation gets zero density weight (dropping it from the
// projection and the score) instead of the enormous weight a reciprocal of
// the clip would assign.
inline double spacing_density(double spacing, double h) {
    if (spacing <= 1e-6) return 0.0;
    return 2.0 * h / spacing;
}

}  // namespace detail

// Per-observation density estimates from the quantile-spacing rule: two
// auxiliary fits at tau +- h and f_i = 2h / (x_i'(beta_up - beta_down));
// observations where the fits cross get zero weight. The auxiliary fits
// carry an unpenalized intercept: without one a centered design cannot
// express the vertical shift between the two quantile levels, and the
// population spacing would be identically zero.
inline Vector estimate_density_spacing(const Study& study, QuantileLevel tau,
                                       const InferenceSettings& settings,
                                       const SolverSettings& solver_settings) {
    study.validate();
    const double h = inference_bandwidth(study.n(), tau);
    const QuantileLevel up(tau.value + h), down(tau.value - h);

    Study aug;
    aug.id = study.id + ":density";
    aug.role = study.role;
    aug.y = study.y;
    aug.X.resize(study.n(), study.p() + 1);
    aug.X.col(0).setOnes();
    aug.X.rightCols(study.p()) = study.X;

    PivotalLambdaSpec pivotal = settings.pivotal;
    pivotal.c_star = cstar_for_tau(settings, tau);
    const auto penalty_at = [&](QuantileLevel level, std::string_view side) {
        // Pivotal level and weights come from the penalized columns only.
        PivotalLambdaSpec spec = pivotal;
        spec.seed =
            derive_seed(settings.pivotal.seed, "density:" + study.id + ":" + std::string(side));
        const PenaltySpec base = make_pivotal_penalty(study, level, spec);
        PenaltySpec withered = base;
        withered.weights = Vector::Zero(study.p() + 1);
        withered.weights.tail(study.p()) =
            base.weights.size() ? base.weights : Vector::Ones(study.p());
        return withered;
    };

    const QuantileFit fit_up = solve_l1qr(aug, up, penalty_at(up, "up"), solver_settings);
    const QuantileFit fit_down =
        solve_l1qr(aug, down, penalty_at(down, "down"), solver_settings);

    const Vector spacing = aug.X * (fit_up.beta - fit_down.beta);
    Vector f(study.n());
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = detail::spacing_density(spacing[i], h);
    return f;
}

// Weighted-lasso projection of the (density-weighted) column of interest on
// the remaining columns; v_hat is the residual of that projection.
inline StudyScoreState fit_projection(const Study& study, const Vector& f_hat,
                                      int coefficient_index, double lambda_theta,
                                      const SolverSettings& solver_settings) {
    study.validate();
    if (coefficient_index < 1 || coefficient_index > study.p())
        throw InputError("coefficient index must lie in [1, p]");
    if (f_hat.size() != study.n())
        throw InputError("density vector length does not match the study");
    if ((f_hat.array() < 0.0).any())
        throw InputError("density estimates must be non-negative");

    Vector x1;
    Matrix rest;
    detail::split_design(study.X, coefficient_index, &x1, &rest);

    StudyScoreState state;
    state.f_hat = f_hat;
    const Vector response = f_hat.cwiseProduct(x1);
    const Matrix design = f_hat.asDiagonal() * rest;
    state.theta_hat = solve_weighted_lasso(response, design, lambda_theta, solver_settings);
    state.v_hat = response - design * state.theta_hat;
    return state;
}

// Post-selection refit: keep coordinates where |beta_hat + delta_tilde|
// clears the threshold, refit those columns by unpenalized QR, and re-embed
// into p dimensions. An empty selection falls back to the coefficient of
// interest alone so the score always has a pilot.
inline StudyScoreState post_select_and_refit(const Study& study,
                                             const CoefficientVector& beta_hat,
                                             const CoefficientVector& delta_tilde,
                                             QuantileLevel tau, double lambda_bar,
                                             const SolverSettings& solver_settings,
                                             int coefficient_index) {
    study.validate();
    if (!(lambda_bar > 0.0)) throw InputError("post-selection threshold must be positive");
    if (beta_hat.size() != study.p() || delta_tilde.size() != study.p())
        throw InputError("pilot coefficient length does not match the study");
    if (coefficient_index < 1 || coefficient_index > study.p())
        throw InputError("coefficient index must lie in [1, p]");

    const CoefficientVector pilot = beta_hat + delta_tilde;
    StudyScoreState state;
    for (Eigen::Index j = 0; j < pilot.size(); ++j)
        if (std::abs(pilot[j]) > lambda_bar) state.selected.insert(static_cast<int>(j) + 1);
    if (state.selected.empty()) state.selected.insert(coefficient_index);
    if (2 * static_cast<Eigen::Index>(state.selected.size()) > study.n())
        throw NumericalError("post-selection kept more than n/2 coordinates");

    Study sub;
    sub.id = study.id + ":post";
    sub.role = study.role;
    sub.y = study.y;
    sub.X.resize(study.n(), static_cast<Eigen::Index>(state.selected.size()));
    Eigen::Index at = 0;
    for (int j : state.selected) sub.X.col(at++) = study.X.col(j - 1);

    const QuantileFit refit = solve_unpenalized_qr(sub, tau, solver_settings);
    state.w_tilde = Vector::Zero(study.p());
    at = 0;
    for (int j : state.selected) state.w_tilde[j - 1] = refit.beta[at++];
    return state;
}

// Sum of empirical scores for one study: (I{y <= x_1 alpha + x_{-1}'w_{-1}}
// - tau) * v_i. The coefficient of interest contributes through alpha only.
inline double empirical_score(const Study& study, const StudyScoreState& state, double alpha,
                              QuantileLevel tau, int coefficient_index) {
    const Eigen::Index j0 = coefficient_index - 1;
    CoefficientVector w = state.w_tilde;
    w[j0] = 0.0;
    const Vector base = study.X * w;
    double total = 0.0;
    for (Eigen::Index i = 0; i < study.n(); ++i) {
        const double threshold = study.X(i, j0) * alpha + base[i];
        const double indicator = study.y[i] <= threshold ? 1.0 : 0.0;
        total += (indicator - tau.value) * state.v_hat[i];
    }
    return total;
}

inline DebiasedResult debias(const Study& target, const std::vector<Study>& sources_in_set,
                             const TransferEstimate& transfer_estimate, QuantileLevel tau,
                             const InferenceSettings& settings,
                             const SolverSettings& solver_settings) {
    target.validate();
    detail::check_inference_settings(settings, target.p());
    const int index = settings.coefficient_index;

    std::vector<const Study*> studies = {&target};
    for (const auto& s : sources_in_set) {
        s.validate();
        if (s.p() != target.p())
            throw InputError("source " + s.id + " column count differs from target");
        if (!transfer_estimate.contrasts.count(s.id))
            throw InputError("no contrast available for source " + s.id);
        studies.push_back(&s);
    }
    if (transfer_estimate.beta_hat.size() != target.p())
        throw InputError("transfer estimate dimension does not match the studies");

    const CoefficientVector zero = Vector::Zero(target.p());
    std::vector<StudyScoreState> states;
    Eigen::Index n_total = 0;
    double sum_x1_sq = 0.0, sum_v_sq = 0.0;
    for (const Study* s : studies) {
        const Vector f = estimate_density_spacing(*s, tau, settings, solver_settings);
        const double lambda_theta =
            static_cast<double>(s->n()) * settings.c_theta *
            std::sqrt(std::log(static_cast<double>(s->p())) / static_cast<double>(s->n()));
        StudyScoreState state = fit_projection(*s, f, index, lambda_theta, solver_settings);

        const CoefficientVector& delta =
            s == &target ? zero : transfer_estimate.contrasts.at(s->id);
        StudyScoreState post =
            post_select_and_refit(*s, transfer_estimate.beta_hat, delta, tau,
                                  settings.post_select_threshold, solver_settings, index);
        state.w_tilde = std::move(post.w_tilde);
        state.selected = std::move(post.selected);

        n_total += s->n();
        sum_x1_sq += s->X.col(index - 1).squaredNorm();
        sum_v_sq += state.v_hat.squaredNorm();
        states.push_back(std::move(state));
    }
    if (sum_v_sq <= 0.0)
        throw NumericalError("projection residuals are all zero; the score is degenerate");

    const double beta1 = transfer_estimate.beta_hat[index - 1];
    const double mean_x1_sq = sum_x1_sq / static_cast<double>(n_total);
    const double half_width =
        10.0 / std::sqrt(mean_x1_sq) / std::log(static_cast<double>(n_total));

    DebiasedResult out;
    out.search_region = {beta1 - half_width, beta1 + half_width};
    out.n_total = n_total;

    const auto aggregate = [&](double alpha) {
        double s = 0.0;
        for (size_t k = 0; k < states.size(); ++k)
            s += empirical_score(*studies[k], states[k], alpha, tau, index);
        return s;
    };

    // Coarse pass over the region, then one pass at a tenth of the spacing
    // around the winner. Ties go to the candidate nearest the pilot value.
    double best_alpha = beta1;
    double best_score = 0.0;
    bool have_best = false;
    const auto consider = [&](double alpha) {
        const double score = aggregate(alpha);
        const double mag = std::abs(score);
        const double best_mag = std::abs(best_score);
        const bool better =
            !have_best || mag < best_mag ||
            (mag == best_mag && std::abs(alpha - beta1) < std::abs(best_alpha - beta1));
        if (better) {
            best_alpha = alpha;
            best_score = score;
            have_best = true;
        }
    };

    const int g = settings.grid_points;
    const double spacing = 2.0 * half_width / static_cast<double>(g - 1);
    for (int i = 0; i < g; ++i) consider(out.search_region.lower + spacing * i);
    const double coarse_best = best_alpha;
    for (int i = -10; i <= 10; ++i) {
        const double alpha = coarse_best + spacing / 10.0 * i;
        if (alpha < out.search_region.lower || alpha > out.search_region.upper) continue;
        consider(alpha);
    }

    out.alpha_hat = best_alpha;
    out.score_at_solution = best_score;
    out.sigma_hat_sq = tau.value * (1.0 - tau.value) * static_cast<double>(n_total) / sum_v_sq;
    const double half_ci = 1.959964 * std::sqrt(out.sigma_hat_sq / static_cast<double>(n_total));
    out.ci_lower = out.alpha_hat - half_ci;
    out.ci_upper = out.alpha_hat + half_ci;
    return out;
}

}  // namespace transqr
