#pragma once

// Quality control for the debiased transfer estimate: prune sources whose
// contrast moves the coefficient of interest, pair-bootstrap the debiased
// estimate within each study, and gate the final transfer-or-not decision on
// a Shapiro-Wilk normality test of the bootstrap replicates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "transqr/inference.hpp"
#include "transqr/parallel.hpp"
#include "transqr/rng.hpp"
#include "transqr/stats.hpp"
#include "transqr/transfer.hpp"
#include "transqr/types.hpp"

namespace transqr {

enum class QcDecision { TransferDebias, TargetOnlyDebias };

inline std::string qc_decision_name(QcDecision d) {
    return d == QcDecision::TransferDebias ? "TransferDebias" : "TargetOnlyDebias";
}

struct QcSettings {
    int R = 200;                     // bootstrap replicates
    double sw_alpha = 0.05;          // normality rejection level
    double contrast_cutoff = 0.05;   // pre-control bound on |delta_1|
    std::uint64_t seed = 0;
    int threads = 0;                 // 0 resolves TRANSQR_THREADS, then hardware
    bool identity_resample = false;  // test hook: replicates see the original rows
};

struct QcReport {
    std::set<std::string> pruned_set;
    Vector replicates;  // length R; NaN marks a replicate that failed twice
    double sw_statistic = 0.0;
    double p_value = 0.0;
    QcDecision decision = QcDecision::TransferDebias;
    bool fallback_forced = false;  // pre-control emptied the set, test outcome moot
};

struct ShapiroWilkResult {
    double statistic = 0.0;
    double p_value = 0.0;
};

namespace detail {

inline void check_qc_settings(const QcSettings& settings) {
    if (settings.R < 20) throw InputError("bootstrap replicate count must be at least 20");
    if (!(settings.sw_alpha > 0.0 && settings.sw_alpha < 1.0))
        throw InputError("sw_alpha must lie in (0,1)");
}

// Polynomial with ascending coefficients c[0] + c[1]x + ...
inline double as_poly(const double* c, int nord, double x) {
    double p = c[nord - 1];
    for (int i = nord - 2; i >= 0; --i) p = p * x + c[i];
    return p;
}

// Row resample with replacement, keeping (x, y) pairs together. Streams are
// keyed by (seed, attempt tag, study id, replicate) so a replicate's draw is
// the same whichever thread runs it.
inline Study resample_study(const Study& study, std::uint64_t seed, std::string_view tag,
                            std::uint64_t replicate, bool identity) {
    Study out;
    out.id = study.id;
    out.role = study.role;
    if (identity) {
        out.X = study.X;
        out.y = study.y;
        return out;
    }
    Rng g(derive_seed(seed, std::string(tag) + ":" + study.id, replicate));
    const Eigen::Index n = study.n();
    out.X.resize(n, study.p());
    out.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(uniform_below(g, static_cast<std::size_t>(n)));
        out.X.row(i) = study.X.row(row);
        out.y[i] = study.y[row];
    }
    return out;
}

}  // namespace detail

// Pre-control: drop detected sources whose contrast at the coefficient of
// interest exceeds the cutoff. Those are exactly the sources that would
// shift the debiased coordinate itself rather than just lending samples.
inline std::set<std::string> pre_control(const TransferEstimate& estimate, double cutoff,
                                         int coefficient_index = 1) {
    if (!(cutoff > 0.0)) throw InputError("pre-control cutoff must be positive");
    if (coefficient_index < 1) throw InputError("coefficient index must be at least 1");
    std::set<std::string> kept;
    for (const std::string& id : estimate.detected_set) {
        const auto it = estimate.contrasts.find(id);
        if (it == estimate.contrasts.end())
            throw InputError("no contrast available for source " + id);
        if (coefficient_index > it->second.size())
            throw InputError("coefficient index exceeds the contrast length");
        if (std::abs(it->second[coefficient_index - 1]) > cutoff) continue;
        kept.insert(id);
    }
    return kept;
}

// Shapiro-Wilk W and its significance level via Royston's AS R94
// approximation, complete samples, 3 <= n <= 5000. The sample is sorted
// internally; ties are fine, zero range is not.
inline ShapiroWilkResult shapiro_wilk(const Vector& sample) {
    const Eigen::Index n = sample.size();
    if (n < 3 || n > 5000) throw InputError("shapiro_wilk: sample size must lie in [3, 5000]");
    require_finite(sample, "shapiro_wilk");
    std::vector<double> x(sample.data(), sample.data() + n);
    std::sort(x.begin(), x.end());
    const double range = x.back() - x.front();
    if (!(range > 0.0)) throw InputError("shapiro_wilk: sample has zero variance");

    // Half-length weights: Blom scores normalized, with the one or two
    // largest replaced by Royston's polynomial corrections in 1/sqrt(n).
    const Eigen::Index n2 = n / 2;
    std::vector<double> a(static_cast<std::size_t>(n2));
    if (n == 3) {
        a[0] = std::sqrt(0.5);
    } else {
        static const double c1[6] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
        static const double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
        const double an25 = static_cast<double>(n) + 0.25;
        double summ2 = 0.0;
        for (Eigen::Index i = 0; i < n2; ++i) {
            a[i] = normal_quantile((static_cast<double>(i) + 1.0 - 0.375) / an25);
            summ2 += a[i] * a[i];
        }
        summ2 *= 2.0;
        const double ssumm2 = std::sqrt(summ2);
        const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
        const double a1 = detail::as_poly(c1, 6, rsn) - a[0] / ssumm2;
        Eigen::Index first_raw;
        double fac;
        if (n > 5) {
            const double a2 = -a[1] / ssumm2 + detail::as_poly(c2, 6, rsn);
            fac = std::sqrt((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1]) /
                            (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
            a[0] = a1;
            a[1] = a2;
            first_raw = 2;
        } else {
            fac = std::sqrt((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1));
            a[0] = a1;
            first_raw = 1;
        }
        for (Eigen::Index i = first_raw; i < n2; ++i) a[i] = -a[i] / fac;
    }

    // W as the squared correlation between the sorted sample and the
    // antisymmetric weight vector, computed through 1 - W for stability.
    const auto signed_a = [&](Eigen::Index i) {
        const Eigen::Index mirror = n - 1 - i;
        if (i < mirror) return -a[static_cast<std::size_t>(i)];
        if (i > mirror) return a[static_cast<std::size_t>(mirror)];
        return 0.0;
    };
    double sx = 0.0, sa = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        sx += x[static_cast<std::size_t>(i)] / range;
        sa += signed_a(i);
    }
    sx /= static_cast<double>(n);
    sa /= static_cast<double>(n);
    double ssa = 0.0, ssx = 0.0, sax = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double da = signed_a(i) - sa;
        const double dx = x[static_cast<std::size_t>(i)] / range - sx;
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    const double ssassx = std::sqrt(ssa * ssx);
    const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);

    ShapiroWilkResult out;
    out.statistic = std::clamp(1.0 - w1, std::numeric_limits<double>::min(), 1.0);

    if (n == 3) {
        const double pi6 = 1.90985931710274;   // 6/pi
        const double stqr = 1.04719755119660;  // asin(sqrt(3/4))
        out.p_value = std::clamp(pi6 * (std::asin(std::sqrt(out.statistic)) - stqr), 0.0, 1.0);
        return out;
    }

    static const double c3[4] = {0.544, -0.39978, 0.025054, -6.714e-4};
    static const double c4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
    static const double c5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
    static const double c6[3] = {-0.4803, -0.082676, 0.0030302};
    static const double gcoef[2] = {-2.273, 0.459};
    const double an = static_cast<double>(n);
    double y = std::log(w1);
    double m, s;
    if (n <= 11) {
        const double gamma = detail::as_poly(gcoef, 2, an);
        if (y >= gamma) {
            out.p_value = 1e-19;
            return out;
        }
        y = -std::log(gamma - y);
        m = detail::as_poly(c3, 4, an);
        s = std::exp(detail::as_poly(c4, 4, an));
    } else {
        const double la = std::log(an);
        m = detail::as_poly(c5, 4, la);
        s = std::exp(detail::as_poly(c6, 3, la));
    }
    out.p_value = std::clamp(1.0 - normal_cdf((y - m) / s), 0.0, 1.0);
    return out;
}

// Within-study pair bootstrap of the debiased estimate: each replicate
// resamples rows with replacement separately per study (sizes preserved) and
// reruns the debias pipeline end to end. A replicate that throws or returns
// a non-finite estimate is retried once on a fresh resample, then recorded
// as NaN; more than 10% missing aborts.
inline Vector pair_bootstrap_debias(const Study& target, const std::vector<Study>& sources_in_set,
                                    const TransferEstimate& transfer_estimate, QuantileLevel tau,
                                    const QcSettings& settings,
                                    const InferenceSettings& inference_settings,
                                    const SolverSettings& solver_settings) {
    detail::check_qc_settings(settings);
    target.validate();
    for (const Study& s : sources_in_set) s.validate();

    Vector replicates = Vector::Constant(settings.R, std::numeric_limits<double>::quiet_NaN());
    const auto attempt = [&](std::uint64_t r, std::string_view tag) {
        const Study bt =
            detail::resample_study(target, settings.seed, tag, r, settings.identity_resample);
        std::vector<Study> bs;
        bs.reserve(sources_in_set.size());
        for (const Study& s : sources_in_set)
            bs.push_back(
                detail::resample_study(s, settings.seed, tag, r, settings.identity_resample));
        return debias(bt, bs, transfer_estimate, tau, inference_settings, solver_settings)
            .alpha_hat;
    };
    parallel_for(static_cast<std::size_t>(settings.R), settings.threads, [&](std::size_t r) {
        double alpha = std::numeric_limits<double>::quiet_NaN();
        try {
            alpha = attempt(r, "boot");
        } catch (const NumericalError&) {
        }
        if (!std::isfinite(alpha)) {
            try {
                alpha = attempt(r, "boot:retry");
            } catch (const NumericalError&) {
            }
        }
        if (std::isfinite(alpha)) replicates[static_cast<Eigen::Index>(r)] = alpha;
    });

    const auto missing = static_cast<double>(replicates.array().isNaN().count());
    if (missing > 0.1 * static_cast<double>(settings.R))
        throw NumericalError("pair bootstrap lost more than 10% of its replicates");
    return replicates;
}

// Full quality-control pass: prune, bootstrap, test, decide. The returned
// result is the transfer debias on the pruned set when normality stands and
// the target-only debias otherwise. An empty pruned set forces the
// target-only path no matter what the test says.
inline std::pair<QcReport, DebiasedResult> quality_control(
    const Study& target, const std::vector<Study>& sources,
    const TransferEstimate& transfer_estimate, QuantileLevel tau, const QcSettings& settings,
    const InferenceSettings& inference_settings, const SolverSettings& solver_settings) {
    detail::check_qc_settings(settings);
    QcReport report;
    report.pruned_set = pre_control(transfer_estimate, settings.contrast_cutoff,
                                    inference_settings.coefficient_index);

    std::vector<Study> pruned;
    pruned.reserve(report.pruned_set.size());
    for (const Study& s : sources)
        if (report.pruned_set.count(s.id)) pruned.push_back(s);
    if (pruned.size() != report.pruned_set.size())
        throw InputError("pruned set references studies missing from the source list");

    report.fallback_forced = report.pruned_set.empty();
    report.replicates = pair_bootstrap_debias(target, pruned, transfer_estimate, tau, settings,
                                              inference_settings, solver_settings);

    std::vector<double> finite;
    finite.reserve(static_cast<std::size_t>(report.replicates.size()));
    for (Eigen::Index i = 0; i < report.replicates.size(); ++i)
        if (std::isfinite(report.replicates[i])) finite.push_back(report.replicates[i]);
    const ShapiroWilkResult sw = shapiro_wilk(
        Eigen::Map<const Vector>(finite.data(), static_cast<Eigen::Index>(finite.size())));
    report.sw_statistic = sw.statistic;
    report.p_value = sw.p_value;

    const bool reject = report.p_value < settings.sw_alpha;
    report.decision = (reject || report.fallback_forced) ? QcDecision::TargetOnlyDebias
                                                         : QcDecision::TransferDebias;

    const std::vector<Study> none;
    const DebiasedResult result =
        debias(target, report.decision == QcDecision::TransferDebias ? pruned : none,
               transfer_estimate, tau, inference_settings, solver_settings);
    return {report, result};
}

}  // namespace transqr
