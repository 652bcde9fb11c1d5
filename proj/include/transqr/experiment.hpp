#pragma once

// Simulation experiment harness: the named estimation and inference methods
// from the study designs, per-cell seed derivation, parallel execution over
// (method, replication) cells, and tidy CSV plus aggregate serialization.

#include <chrono>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "transqr/core.hpp"
#include "transqr/inference.hpp"
#include "transqr/parallel.hpp"
#include "transqr/rng.hpp"
#include "transqr/simgen.hpp"
#include "transqr/solver.hpp"
#include "transqr/transfer.hpp"
#include "transqr/types.hpp"

namespace transqr {

// Estimation methods fit the full coefficient vector and score it against the
// generating truth; the Debias* methods build a confidence interval for one
// coordinate. Pooling stacks every study into one design with no contrast
// correction, which is the naive baseline the transfer fits are measured
// against. The oracle variants pool the true transferable set (OracleSet) or
// the parameter-transferable set only (OraclePS); the Debias* pilots use the
// oracle set as well, matching the inference tables where the set is treated
// as known.
enum class Method {
    L1QR,
    Pooling,
    OracleSet,
    TransQR,
    OraclePS,
    DebiasTrans,
    DebiasTar,
    DebiasTransTar,
};

inline std::string method_name(Method m) {
    switch (m) {
        case Method::L1QR: return "L1QR";
        case Method::Pooling: return "Pooling";
        case Method::OracleSet: return "OracleSet";
        case Method::TransQR: return "TransQR";
        case Method::OraclePS: return "OraclePS";
        case Method::DebiasTrans: return "Debias_trans";
        case Method::DebiasTar: return "Debias_tar";
        case Method::DebiasTransTar: return "Debias_trans_tar";
    }
    return "unknown";
}

inline Method method_from_name(const std::string& name) {
    if (name == "L1QR") return Method::L1QR;
    if (name == "Pooling") return Method::Pooling;
    if (name == "OracleSet") return Method::OracleSet;
    if (name == "TransQR") return Method::TransQR;
    if (name == "OraclePS") return Method::OraclePS;
    if (name == "Debias_trans") return Method::DebiasTrans;
    if (name == "Debias_tar") return Method::DebiasTar;
    if (name == "Debias_trans_tar") return Method::DebiasTransTar;
    if (name == "TransQR_2step" || name == "TransSQR_2step")
        throw InputError(name +
                         " is an external two-step baseline with no implementation "
                         "here; drop it from the recipe or plug in your own results");
    throw InputError("unknown method name: " + name);
}

inline bool is_inference_method(Method m) {
    return m == Method::DebiasTrans || m == Method::DebiasTar ||
           m == Method::DebiasTransTar;
}

struct ExperimentRecipe {
    std::string name;
    ScenarioConfig scenario;  // scenario.seed is the master seed for the run
    std::vector<Method> methods;
    int replications = 1;
    // Metric columns to keep; empty keeps everything a method produces.
    std::vector<std::string> metrics;
    std::string output_path;  // basename; the CLI writes <path>.csv and <path>.json

    DetectionThresholds thresholds;  // TransQR detection knobs
    int rounds = 1;                  // contrast refit rounds for the transfer fits
    int coefficient_index = 1;       // coordinate under test for the Debias* methods
    SolverSettings solver;
    PivotalLambdaSpec pivotal;  // n_draws and quantile; the seed comes from the cell
    int threads = 0;            // 0 defers to TRANSQR_THREADS, then the hardware
};

struct ResultRecord {
    std::string recipe;
    std::string method;
    int replication = 0;
    std::uint64_t seed = 0;  // cell seed, for replaying a single cell
    std::map<std::string, double> metrics;
    std::set<std::string> detected_set;
    // Wall-clock cost of the cell. Kept out of the serialized outputs so that
    // reruns with one seed stay byte-identical.
    double elapsed_seconds = 0.0;
    bool ok = true;
    std::string error;
};

struct ExperimentResult {
    std::vector<ResultRecord> records;  // method-major, replication-minor
    int n_cells = 0;
    int n_failed = 0;
    // The run counts as usable when at least 95% of cells succeeded.
    bool acceptable() const { return 20 * n_failed <= n_cells; }
};

namespace detail {

inline void check_recipe(const ExperimentRecipe& recipe) {
    if (recipe.replications < 1) throw InputError("experiment: replications must be >= 1");
    if (recipe.methods.empty()) throw InputError("experiment: methods must be non-empty");
    std::set<std::string> seen;
    for (const Method m : recipe.methods)
        if (!seen.insert(method_name(m)).second)
            throw InputError("experiment: duplicate method " + method_name(m));
    if (recipe.coefficient_index < 1)
        throw InputError("experiment: coefficient index must be >= 1");
}

// Every method inside one replication sees the same generated data; only the
// method-private randomness (pivotal draws, solver tie-breaks) differs.
inline std::uint64_t scenario_seed(std::uint64_t master, int replication) {
    return derive_seed(master, "scenario", static_cast<std::uint64_t>(replication));
}

inline std::uint64_t cell_seed(std::uint64_t master, Method method, int replication) {
    return derive_seed(master, "cell:" + method_name(method),
                       static_cast<std::uint64_t>(replication));
}

inline Study stack_all_studies(const GeneratedScenario& g) {
    Eigen::Index rows = g.target.n();
    for (const auto& s : g.sources) rows += s.n();
    Study stacked;
    stacked.id = "stacked";
    stacked.role = StudyRole::Target;
    stacked.X.resize(rows, g.target.p());
    stacked.y.resize(rows);
    stacked.X.topRows(g.target.n()) = g.target.X;
    stacked.y.head(g.target.n()) = g.target.y;
    Eigen::Index at = g.target.n();
    for (const auto& s : g.sources) {
        stacked.X.middleRows(at, s.n()) = s.X;
        stacked.y.segment(at, s.n()) = s.y;
        at += s.n();
    }
    return stacked;
}

inline std::vector<Study> studies_in_set(const GeneratedScenario& g,
                                         const std::set<std::string>& ids) {
    std::vector<Study> out;
    for (const auto& s : g.sources)
        if (ids.count(s.id)) out.push_back(s);
    return out;
}

inline ResultRecord run_cell(const ExperimentRecipe& recipe, Method method,
                             int replication) {
    ResultRecord rec;
    rec.recipe = recipe.name;
    rec.method = method_name(method);
    rec.replication = replication;
    rec.seed = cell_seed(recipe.scenario.seed, method, replication);

    ScenarioConfig config = recipe.scenario;
    config.seed = scenario_seed(recipe.scenario.seed, replication);
    const GeneratedScenario g = generate_scenario(config);
    const QuantileLevel tau(config.tau);

    SolverSettings solver = recipe.solver;
    solver.seed = rec.seed;
    TransferLambdas lambdas;
    lambdas.pivotal = recipe.pivotal;
    lambdas.pivotal.seed = rec.seed;

    if (!is_inference_method(method)) {
        // Fresh rows from the target covariate law score the prediction error;
        // shared across methods so the comparison is paired.
        const Matrix x_test = sample_toeplitz_gaussian(
            config.n0, config.p, config.rho,
            derive_seed(recipe.scenario.seed, "xtest",
                        static_cast<std::uint64_t>(replication)));

        CoefficientVector beta_hat;
        switch (method) {
            case Method::L1QR: {
                const TransferEstimate est =
                    fit_with_known_set(g.target, {}, {}, tau, lambdas, solver);
                beta_hat = est.beta_hat;
                break;
            }
            case Method::Pooling: {
                const Study stacked = stack_all_studies(g);
                PivotalLambdaSpec pivotal = recipe.pivotal;
                pivotal.c_star = 1.0;
                pivotal.seed = derive_seed(rec.seed, "pivotal:stacked");
                const PenaltySpec pen = make_pivotal_penalty(stacked, tau, pivotal);
                beta_hat = solve_l1qr(stacked, tau, pen, solver).beta;
                break;
            }
            case Method::OracleSet:
            case Method::OraclePS: {
                OracleSetSpec oracle;
                oracle.set_ids =
                    method == Method::OracleSet ? g.oracle_c_h : g.oracle_c_h1;
                const TransferEstimate est = fit_with_known_set(
                    g.target, g.sources, oracle, tau, lambdas, solver, recipe.rounds);
                rec.detected_set = est.detected_set;
                beta_hat = est.beta_hat;
                break;
            }
            case Method::TransQR: {
                const TransferEstimate est =
                    fit_transfer(g.target, g.sources, tau, recipe.thresholds, lambdas,
                                 solver, recipe.rounds);
                rec.detected_set = est.detected_set;
                beta_hat = est.beta_hat;
                break;
            }
            default:
                throw InputError("unhandled estimation method");
        }
        const ErrorMetrics m = compute_metrics(beta_hat, g.beta_star, x_test);
        rec.metrics["l1_error"] = m.l1_error;
        rec.metrics["l2_error"] = m.l2_error;
        rec.metrics["prediction_error"] = m.prediction_error;
        return rec;
    }

    InferenceSettings inference;
    inference.coefficient_index = recipe.coefficient_index;
    inference.pivotal = recipe.pivotal;
    inference.pivotal.seed = rec.seed;

    TransferEstimate est;
    std::vector<Study> debias_sources;
    if (method == Method::DebiasTar) {
        est = fit_with_known_set(g.target, {}, {}, tau, lambdas, solver);
    } else {
        OracleSetSpec oracle;
        oracle.set_ids = g.oracle_c_h;
        est = fit_with_known_set(g.target, g.sources, oracle, tau, lambdas, solver,
                                 recipe.rounds);
        rec.detected_set = est.detected_set;
        if (method == Method::DebiasTrans)
            debias_sources = studies_in_set(g, g.oracle_c_h);
    }
    const DebiasedResult r =
        debias(g.target, debias_sources, est, tau, inference, solver);

    const double truth = g.beta_star[recipe.coefficient_index - 1];
    rec.metrics["alpha_hat"] = r.alpha_hat;
    rec.metrics["sigma_hat_sq"] = r.sigma_hat_sq;
    rec.metrics["ci_lower"] = r.ci_lower;
    rec.metrics["ci_upper"] = r.ci_upper;
    rec.metrics["ci_length"] = r.ci_upper - r.ci_lower;
    rec.metrics["covered"] =
        (r.ci_lower <= truth && truth <= r.ci_upper) ? 1.0 : 0.0;
    rec.metrics["abs_error"] = std::abs(r.alpha_hat - truth);
    return rec;
}

inline void apply_metric_filter(ResultRecord& rec,
                                const std::vector<std::string>& keep) {
    if (keep.empty()) return;
    std::map<std::string, double> filtered;
    for (const auto& name : keep) {
        const auto it = rec.metrics.find(name);
        if (it != rec.metrics.end()) filtered.insert(*it);
    }
    rec.metrics = std::move(filtered);
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentRecipe& recipe) {
    detail::check_recipe(recipe);
    ExperimentResult out;
    out.n_cells = static_cast<int>(recipe.methods.size()) * recipe.replications;
    out.records.resize(static_cast<std::size_t>(out.n_cells));

    parallel_for(static_cast<std::size_t>(out.n_cells), recipe.threads,
                 [&](std::size_t cell) {
                     const Method method =
                         recipe.methods[cell / static_cast<std::size_t>(recipe.replications)];
                     const int rep =
                         static_cast<int>(cell % static_cast<std::size_t>(recipe.replications));
                     ResultRecord& rec = out.records[cell];
                     const auto start = std::chrono::steady_clock::now();
                     try {
                         rec = detail::run_cell(recipe, method, rep);
                     } catch (const std::exception& e) {
                         rec.recipe = recipe.name;
                         rec.method = method_name(method);
                         rec.replication = rep;
                         rec.seed = detail::cell_seed(recipe.scenario.seed, method, rep);
                         rec.ok = false;
                         rec.error = e.what();
                     }
                     detail::apply_metric_filter(rec, recipe.metrics);
                     rec.elapsed_seconds =
                         std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       start)
                             .count();
                 });

    for (const auto& rec : out.records)
        if (!rec.ok) ++out.n_failed;
    return out;
}

struct MethodAggregate {
    std::string method;
    int n_ok = 0;
    int n_failed = 0;
    std::map<std::string, double> means;
    std::map<std::string, double> sds;  // sample standard deviation; 0 when n_ok < 2
};

// Per-method means and sds over the successful cells, keyed in method order of
// first appearance. Coverage proportions come out as the mean of the 0/1
// `covered` metric.
inline std::vector<MethodAggregate> aggregate_results(
    const std::vector<ResultRecord>& records) {
    std::vector<MethodAggregate> out;
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::map<std::string, std::vector<double>>> samples;
    for (const auto& rec : records) {
        if (!index.count(rec.method)) {
            index[rec.method] = out.size();
            out.push_back(MethodAggregate{rec.method, 0, 0, {}, {}});
        }
        MethodAggregate& agg = out[index[rec.method]];
        if (!rec.ok) {
            ++agg.n_failed;
            continue;
        }
        ++agg.n_ok;
        for (const auto& [name, value] : rec.metrics)
            samples[rec.method][name].push_back(value);
    }
    for (auto& agg : out) {
        for (const auto& [name, values] : samples[agg.method]) {
            double sum = 0.0;
            for (const double v : values) sum += v;
            const double mean = sum / static_cast<double>(values.size());
            agg.means[name] = mean;
            double ss = 0.0;
            for (const double v : values) ss += (v - mean) * (v - mean);
            agg.sds[name] = values.size() > 1
                                ? std::sqrt(ss / static_cast<double>(values.size() - 1))
                                : 0.0;
        }
    }
    return out;
}

namespace detail {

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join_ids(const std::set<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ';';
        out += id;
    }
    return out;
}

}  // namespace detail

// Tidy long format: one row per cell, metric columns taken as the sorted
// union over all records so mixed estimation/inference runs still line up.
// Failed cells keep their metric fields empty and carry the error text.
inline std::string results_to_csv(const std::vector<ResultRecord>& records) {
    std::set<std::string> metric_names;
    for (const auto& rec : records)
        for (const auto& [name, value] : rec.metrics) metric_names.insert(name);

    std::string out = "recipe,method,replication,seed";
    for (const auto& name : metric_names) out += "," + detail::csv_escape(name);
    out += ",detected_set,status,error\n";

    for (const auto& rec : records) {
        out += detail::csv_escape(rec.recipe);
        out += ',';
        out += detail::csv_escape(rec.method);
        out += ',';
        out += std::to_string(rec.replication);
        out += ',';
        out += std::to_string(rec.seed);
        for (const auto& name : metric_names) {
            out += ',';
            const auto it = rec.metrics.find(name);
            if (it != rec.metrics.end()) out += detail::format_double(it->second);
        }
        out += ',';
        out += detail::csv_escape(detail::join_ids(rec.detected_set));
        out += ',';
        out += rec.ok ? "ok" : "failed";
        out += ',';
        out += detail::csv_escape(rec.error);
        out += '\n';
    }
    return out;
}

}  // namespace transqr
