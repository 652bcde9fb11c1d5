#pragma once

// Multi-study transfer estimation: contrast fits against the target pilot,
// Powell-bandwidth density screening, transferable-set detection, and the
// pooled fit over the retained studies.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "transqr/rng.hpp"
#include "transqr/solver.hpp"
#include "transqr/stats.hpp"
#include "transqr/types.hpp"

namespace transqr {

struct DetectionThresholds {
    double t1 = 5.0;  // contrast budget: keep k when ||delta_k||_1 <= t1*sqrt(log p / n0)
    double t2 = 0.3;  // density floor: keep k when f_k >= t2 * f_0
    std::map<std::string, double> bandwidths;  // per-study override; computed when absent
};

struct DensityEstimate {
    double value = 0.0;
    double bandwidth = 0.0;
    int n_inside = 0;
};

struct TransferEstimate {
    CoefficientVector beta_hat;
    std::map<std::string, CoefficientVector> contrasts;
    std::set<std::string> detected_set;
    std::set<std::string> set_c1;
    std::set<std::string> set_c2;
    std::map<std::string, DensityEstimate> densities;
    std::map<std::string, double> lambdas_used;
    int rounds_used = 0;
};

struct OracleSetSpec {
    std::set<std::string> set_ids;
    std::optional<double> h1;  // bookkeeping only; the fit never reads these
    std::optional<double> h2;
};

// Penalty plan for the three fit stages. Explicit entries win; anything left
// unset is built by the pivotal simulation with the stage's multiplier
// (1.0 for the target and pooled stages, 1.5 for contrasts).
struct TransferLambdas {
    std::optional<PenaltySpec> target;
    std::map<std::string, PenaltySpec> contrasts;
    std::optional<PenaltySpec> pooled;
    PivotalLambdaSpec pivotal;  // seed is re-derived per stage and study id
};

inline double contrast_budget(double t1, Eigen::Index p, Eigen::Index n0) {
    return t1 * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n0));
}

inline DensityEstimate estimate_density_powell(const Study& study,
                                               const CoefficientVector& beta_plus_delta,
                                               double bandwidth) {
    study.validate();
    if (!(bandwidth > 0.0)) throw InputError("density bandwidth must be positive");
    if (beta_plus_delta.size() != study.p())
        throw InputError("density coefficient length does not match the study");
    const Vector resid = study.y - study.X * beta_plus_delta;
    DensityEstimate out;
    out.bandwidth = bandwidth;
    for (Eigen::Index i = 0; i < resid.size(); ++i)
        if (std::abs(resid[i]) <= bandwidth) ++out.n_inside;
    out.value = static_cast<double>(out.n_inside) /
                (2.0 * bandwidth * static_cast<double>(study.n()));
    return out;
}

inline double compute_detection_bandwidth(const Study& study, const Vector& residuals) {
    if (residuals.size() != study.n())
        throw InputError("bandwidth residuals length does not match the study");
    if (residuals.size() < 10) throw InputError("bandwidth rule needs n >= 10 residuals");
    std::vector<double> r(residuals.data(), residuals.data() + residuals.size());
    const double scale = mad(r);
    const double rate = std::pow(static_cast<double>(residuals.size()), -0.2);
    return std::max(1.0 * scale * rate, 1e-3);
}

namespace detail {

inline void check_thresholds(const DetectionThresholds& thresholds) {
    if (!(thresholds.t1 >= 0.0)) throw InputError("detection threshold t1 must be >= 0");
    if (!(thresholds.t2 > 0.0)) throw InputError("detection threshold t2 must be positive");
    for (const auto& [id, b] : thresholds.bandwidths)
        if (!(b > 0.0)) throw InputError("bandwidth for study " + id + " must be positive");
}

inline void check_sources(const std::vector<Study>& sources, Eigen::Index p) {
    std::set<std::string> seen;
    for (const auto& s : sources) {
        s.validate();
        if (s.p() != p) throw InputError("source " + s.id + " column count differs from target");
        if (!seen.insert(s.id).second) throw InputError("duplicate source id " + s.id);
        if (s.id == "target" || s.id.empty())
            throw InputError("source studies need non-empty ids distinct from 'target'");
    }
}

inline PenaltySpec stage_penalty(const std::optional<PenaltySpec>& overridden,
                                 const Study& data, QuantileLevel tau,
                                 const TransferLambdas& lambdas, double c_star,
                                 std::string_view stage_tag) {
    if (overridden) return *overridden;
    PivotalLambdaSpec spec = lambdas.pivotal;
    spec.c_star = c_star;
    spec.seed = derive_seed(lambdas.pivotal.seed, stage_tag);
    return make_pivotal_penalty(data, tau, spec);
}

inline PenaltySpec contrast_penalty(const Study& source, QuantileLevel tau,
                                    const TransferLambdas& lambdas) {
    const auto it = lambdas.contrasts.find(source.id);
    if (it != lambdas.contrasts.end()) return it->second;
    return stage_penalty(std::nullopt, source, tau, lambdas, 1.5,
                         "pivotal:contrast:" + source.id);
}

// Contrast fit: l1-QR on the source with the current target estimate as a
// fixed offset, so the coefficient solves for delta alone.
inline QuantileFit fit_contrast(const Study& source, const CoefficientVector& beta,
                                QuantileLevel tau, const PenaltySpec& penalty,
                                SolverSettings settings) {
    settings.seed = derive_seed(settings.seed, "contrast:" + source.id);
    const Vector offset = source.X * beta;
    return solve_l1qr(source, tau, penalty, settings, &offset);
}

// Algorithm core shared by the oracle-set and detected-set paths: T rounds of
// contrast refits for the set members followed by the pooled fit, starting
// from a given pilot fit and first-round contrasts. The stacked design never
// changes across rounds, only the contrast offsets do, so rows and the pooled
// penalty are assembled once.
inline TransferEstimate iterate_transfer(const Study& target,
                                         const std::vector<Study>& sources,
                                         const std::set<std::string>& set_ids,
                                         QuantileLevel tau, const TransferLambdas& lambdas,
                                         const SolverSettings& settings, int rounds,
                                         TransferEstimate state) {
    if (rounds < 1) throw InputError("transfer rounds must be >= 1");
    if (set_ids.empty()) {
        // Nothing to pool with; the pilot fit is the answer.
        state.rounds_used = 0;
        return state;
    }

    Eigen::Index rows = target.n();
    std::vector<const Study*> members;
    for (const auto& id : set_ids) {  // std::set iterates in id order
        const Study* found = nullptr;
        for (const auto& s : sources)
            if (s.id == id) found = &s;
        if (!found) throw InputError("transfer set references unknown study " + id);
        members.push_back(found);
        rows += found->n();
    }
    Study pooled;
    pooled.id = "pooled";
    pooled.role = StudyRole::Target;
    pooled.X.resize(rows, target.p());
    pooled.y.resize(rows);
    pooled.X.topRows(target.n()) = target.X;
    pooled.y.head(target.n()) = target.y;
    Eigen::Index at = target.n();
    for (const Study* s : members) {
        pooled.X.middleRows(at, s->n()) = s->X;
        pooled.y.segment(at, s->n()) = s->y;
        at += s->n();
    }

    const PenaltySpec pen =
        stage_penalty(lambdas.pooled, pooled, tau, lambdas, 1.0, "pivotal:pooled");
    state.lambdas_used["pooled"] = pen.lambda;
    SolverSettings pooled_settings = settings;
    pooled_settings.seed = derive_seed(settings.seed, "pooled");

    for (int t = 0; t < rounds; ++t) {
        if (t > 0) {
            // Refresh set-member contrasts against the updated estimate.
            for (const Study* s : members) {
                const PenaltySpec cp = contrast_penalty(*s, tau, lambdas);
                state.contrasts[s->id] =
                    fit_contrast(*s, state.beta_hat, tau, cp, settings).beta;
            }
        }
        Vector offset = Vector::Zero(rows);
        at = target.n();
        for (const Study* s : members) {
            offset.segment(at, s->n()) = s->X * state.contrasts.at(s->id);
            at += s->n();
        }
        const QuantileFit fit = solve_l1qr(pooled, tau, pen, pooled_settings, &offset);
        const double step = (fit.beta - state.beta_hat).lpNorm<Eigen::Infinity>();
        state.beta_hat = fit.beta;
        state.rounds_used = t + 1;
        if (step < 1e-4) break;
    }
    return state;
}

// Pilot fit plus one contrast fit per source (every source, so the contrast
// map is complete whichever subset later pools).
inline TransferEstimate pilot_and_contrasts(const Study& target,
                                            const std::vector<Study>& sources,
                                            QuantileLevel tau,
                                            const TransferLambdas& lambdas,
                                            const SolverSettings& settings) {
    target.validate();
    if (target.n() == 0) throw InputError("target study is empty");
    check_sources(sources, target.p());

    TransferEstimate out;
    const PenaltySpec pen0 =
        stage_penalty(lambdas.target, target, tau, lambdas, 1.0, "pivotal:target");
    out.lambdas_used["target"] = pen0.lambda;
    SolverSettings target_settings = settings;
    target_settings.seed = derive_seed(settings.seed, "target");
    out.beta_hat = solve_l1qr(target, tau, pen0, target_settings).beta;

    for (const auto& s : sources) {
        const PenaltySpec pen = contrast_penalty(s, tau, lambdas);
        out.lambdas_used["contrast:" + s.id] = pen.lambda;
        out.contrasts[s.id] = fit_contrast(s, out.beta_hat, tau, pen, settings).beta;
    }
    return out;
}

}  // namespace detail

inline TransferEstimate fit_with_known_set(const Study& target,
                                           const std::vector<Study>& sources,
                                           const OracleSetSpec& set, QuantileLevel tau,
                                           const TransferLambdas& lambdas,
                                           const SolverSettings& settings, int T = 1) {
    for (const auto& id : set.set_ids) {
        bool known = false;
        for (const auto& s : sources)
            if (s.id == id) known = true;
        if (!known) throw InputError("oracle set references unknown study " + id);
    }
    TransferEstimate state = detail::pilot_and_contrasts(target, sources, tau, lambdas, settings);
    state.detected_set = set.set_ids;
    return detail::iterate_transfer(target, sources, set.set_ids, tau, lambdas, settings, T,
                                    std::move(state));
}

inline TransferEstimate detect_transferable_set(const Study& target,
                                                const std::vector<Study>& sources,
                                                QuantileLevel tau,
                                                const DetectionThresholds& thresholds,
                                                const SolverSettings& settings,
                                                const TransferLambdas& lambdas = {}) {
    detail::check_thresholds(thresholds);
    TransferEstimate out = detail::pilot_and_contrasts(target, sources, tau, lambdas, settings);

    const auto bandwidth_for = [&](const Study& study, const Vector& resid) {
        const auto it = thresholds.bandwidths.find(study.id);
        return it != thresholds.bandwidths.end() ? it->second
                                                 : compute_detection_bandwidth(study, resid);
    };

    const Vector target_resid = target.y - target.X * out.beta_hat;
    const double b0 = bandwidth_for(target, target_resid);
    const DensityEstimate f0 = estimate_density_powell(target, out.beta_hat, b0);
    out.densities["target"] = f0;
    if (f0.value <= 0.0)
        throw NumericalError(
            "target density estimate is zero; the detection bandwidth is too small");

    const double budget = contrast_budget(thresholds.t1, target.p(), target.n());
    for (const auto& s : sources) {
        const CoefficientVector& delta = out.contrasts.at(s.id);
        if (delta.lpNorm<1>() <= budget) out.set_c1.insert(s.id);

        const CoefficientVector combined = out.beta_hat + delta;
        const Vector resid = s.y - s.X * combined;
        const DensityEstimate fk = estimate_density_powell(s, combined, bandwidth_for(s, resid));
        out.densities[s.id] = fk;
        if (fk.value >= thresholds.t2 * f0.value) out.set_c2.insert(s.id);
    }
    for (const auto& id : out.set_c1)
        if (out.set_c2.count(id)) out.detected_set.insert(id);
    return out;
}

inline TransferEstimate fit_transfer(const Study& target, const std::vector<Study>& sources,
                                     QuantileLevel tau, const DetectionThresholds& thresholds,
                                     const TransferLambdas& lambdas,
                                     const SolverSettings& settings, int rounds = 1) {
    TransferEstimate state =
        detect_transferable_set(target, sources, tau, thresholds, settings, lambdas);
    // Copy the set out before the move; passing state.detected_set by
    // reference alongside std::move(state) would race argument evaluation.
    const std::set<std::string> set_ids = state.detected_set;
    return detail::iterate_transfer(target, sources, set_ids, tau, lambdas, settings, rounds,
                                    std::move(state));
}

}  // namespace transqr
