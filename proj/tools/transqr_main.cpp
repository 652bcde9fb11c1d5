// transqr command line front end.
//
// Subcommands: simulate (scenario generation), fit (transfer estimation with
// set detection), detect (detection diagnostics only), infer (debiased
// confidence interval, optionally gated by the bootstrap quality control),
// experiment (recipe-driven simulation grids).
//
// Exit codes: 0 success, 2 input error, 3 numerical failure, 4 experiment
// finished with more than 5% of cells failing. Outputs are deterministic for
// a fixed seed, including multi-threaded experiment runs; the worker count
// comes from --threads or the TRANSQR_THREADS environment variable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "transqr/csv.hpp"
#include "transqr/experiment.hpp"
#include "transqr/inference.hpp"
#include "transqr/qc.hpp"
#include "transqr/simgen.hpp"
#include "transqr/solver.hpp"
#include "transqr/transfer.hpp"
#include "transqr/types.hpp"

using json = nlohmann::json;
using namespace transqr;

namespace {

constexpr const char* kScenarioSchema = "transqr/scenario/v1";
constexpr const char* kFitSchema = "transqr/fit/v1";
constexpr const char* kDetectSchema = "transqr/detect/v1";
constexpr const char* kInferSchema = "transqr/infer/v1";
constexpr const char* kAggregateSchema = "transqr/experiment-aggregate/v1";

// ---------------------------------------------------------------------------
// Small JSON and file helpers
// ---------------------------------------------------------------------------

std::vector<double> to_std(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

json vector_to_json(const Vector& v) { return json(to_std(v)); }

Vector vector_from_json(const json& j) {
    if (!j.is_array()) throw InputError("expected a numeric array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

json set_to_json(const std::set<std::string>& s) {
    return json(std::vector<std::string>(s.begin(), s.end()));
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path + ": " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << content;
    if (!out) throw InputError("failed while writing " + path);
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// Require that every key of the object is known; catches config typos early.
void check_known_keys(const json& j, const std::set<std::string>& known,
                      const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw InputError(where + ": unknown field '" + key + "'");
}

// ---------------------------------------------------------------------------
// ScenarioConfig <-> JSON (field names mirror the struct)
// ---------------------------------------------------------------------------

ScenarioConfig scenario_from_json(const json& j) {
    if (!j.is_object()) throw InputError("scenario: expected an object");
    check_known_keys(j,
                     {"p", "s", "n0", "K", "n_k", "tau", "model_type",
                      "beta_star_value", "rho", "covariate_shift", "h1",
                      "informative_ids", "residual_laws", "seed", "delta1_override",
                      "mixed_sd_mode", "h_card", "noise_scale"},
                     "scenario");
    ScenarioConfig config;
    if (j.contains("p")) config.p = j["p"].get<int>();
    if (j.contains("s")) config.s = j["s"].get<int>();
    if (j.contains("n0")) config.n0 = j["n0"].get<int>();
    if (j.contains("K")) config.K = j["K"].get<int>();
    if (j.contains("n_k")) config.n_k = j["n_k"].get<std::vector<int>>();
    if (j.contains("tau")) config.tau = j["tau"].get<double>();
    if (j.contains("model_type")) {
        const std::string name = j["model_type"].get<std::string>();
        if (name == "homogeneous") config.model_type = ModelType::Homogeneous;
        else if (name == "heterogeneous") config.model_type = ModelType::Heterogeneous;
        else throw InputError("scenario: model_type must be homogeneous or heterogeneous");
    }
    if (j.contains("beta_star_value"))
        config.beta_star_value = j["beta_star_value"].get<double>();
    if (j.contains("rho")) config.rho = j["rho"].get<double>();
    if (j.contains("covariate_shift"))
        config.covariate_shift = j["covariate_shift"].get<bool>();
    if (j.contains("h1")) config.h1 = j["h1"].get<double>();
    if (j.contains("informative_ids")) {
        config.informative_ids.clear();
        for (const auto& v : j["informative_ids"]) config.informative_ids.insert(v.get<int>());
    }
    if (j.contains("residual_laws")) {
        for (const auto& [id, law] : j["residual_laws"].items())
            config.residual_laws[id] = residual_law_from_name(law.get<std::string>());
    }
    if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("delta1_override"))
        config.delta1_override = j["delta1_override"].get<double>();
    if (j.contains("mixed_sd_mode")) config.mixed_sd_mode = j["mixed_sd_mode"].get<bool>();
    if (j.contains("h_card")) config.h_card = j["h_card"].get<int>();
    if (j.contains("noise_scale")) config.noise_scale = j["noise_scale"].get<double>();
    return config;
}

json scenario_to_json(const ScenarioConfig& config) {
    json j;
    j["p"] = config.p;
    j["s"] = config.s;
    j["n0"] = config.n0;
    j["K"] = config.K;
    j["n_k"] = config.n_k;
    j["tau"] = config.tau;
    j["model_type"] =
        config.model_type == ModelType::Homogeneous ? "homogeneous" : "heterogeneous";
    j["beta_star_value"] = config.beta_star_value;
    j["rho"] = config.rho;
    j["covariate_shift"] = config.covariate_shift;
    j["h1"] = config.h1;
    j["informative_ids"] = std::vector<int>(config.informative_ids.begin(),
                                            config.informative_ids.end());
    json laws = json::object();
    for (const auto& [id, law] : config.residual_laws) laws[id] = residual_law_name(law);
    j["residual_laws"] = laws;
    j["seed"] = config.seed;
    if (std::isfinite(config.delta1_override))
        j["delta1_override"] = config.delta1_override;
    j["mixed_sd_mode"] = config.mixed_sd_mode;
    j["h_card"] = config.h_card;
    j["noise_scale"] = config.noise_scale;
    return j;
}

// ---------------------------------------------------------------------------
// Study loading
// ---------------------------------------------------------------------------

std::string study_id_from_path(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

Study load_target(const std::string& path) {
    return read_study_csv(path, "target", StudyRole::Target);
}

std::vector<Study> load_sources(const std::vector<std::string>& paths) {
    std::vector<Study> sources;
    sources.reserve(paths.size());
    for (const auto& path : paths)
        sources.push_back(read_study_csv(path, study_id_from_path(path), StudyRole::Source));
    return sources;
}

// ---------------------------------------------------------------------------
// Shared option blocks
// ---------------------------------------------------------------------------

struct FitOptions {
    std::string target_path;
    std::vector<std::string> source_paths;
    double tau = 0.5;
    double t1 = 5.0;
    double t2 = 0.3;
    int rounds = 1;
    std::uint64_t seed = 0;
    int pivotal_draws = 500;
    double tolerance = 1e-6;
    int max_iterations = 5000;
    std::string out_path;
};

void add_fit_options(CLI::App* cmd, FitOptions& opt, bool with_detection) {
    cmd->add_option("--target", opt.target_path, "target study CSV")->required();
    cmd->add_option("--source", opt.source_paths,
                    "source study CSV (repeatable; the file stem names the study)");
    cmd->add_option("--tau", opt.tau, "quantile level in (0,1)")
        ->capture_default_str();
    if (with_detection) {
        cmd->add_option("--t1", opt.t1, "contrast threshold t1")->capture_default_str();
        cmd->add_option("--t2", opt.t2, "density-ratio threshold t2")
            ->capture_default_str();
    }
    cmd->add_option("--rounds", opt.rounds, "contrast refit rounds")
        ->capture_default_str();
    cmd->add_option("--seed", opt.seed, "random seed")->capture_default_str();
    cmd->add_option("--pivotal-draws", opt.pivotal_draws,
                    "simulation draws for the pivotal penalty")
        ->capture_default_str();
    cmd->add_option("--tolerance", opt.tolerance, "solver tolerance")
        ->capture_default_str();
    cmd->add_option("--max-iterations", opt.max_iterations, "solver iteration cap")
        ->capture_default_str();
    cmd->add_option("--out", opt.out_path, "output JSON path (default: stdout)");
}

SolverSettings solver_from(const FitOptions& opt) {
    SolverSettings settings;
    settings.tolerance = opt.tolerance;
    settings.max_iterations = opt.max_iterations;
    settings.seed = opt.seed;
    return settings;
}

TransferLambdas lambdas_from(const FitOptions& opt) {
    TransferLambdas lambdas;
    lambdas.pivotal.n_draws = opt.pivotal_draws;
    lambdas.pivotal.seed = opt.seed;
    return lambdas;
}

void emit(const std::string& out_path, const json& j) {
    if (out_path.empty())
        std::fputs((j.dump(2) + "\n").c_str(), stdout);
    else
        write_json_file(out_path, j);
}

json densities_to_json(const std::map<std::string, DensityEstimate>& densities) {
    json out = json::object();
    for (const auto& [id, d] : densities)
        out[id] = {{"value", d.value}, {"bandwidth", d.bandwidth}, {"n_inside", d.n_inside}};
    return out;
}

json estimate_to_json(const TransferEstimate& est) {
    json j;
    j["beta_hat"] = vector_to_json(est.beta_hat);
    json contrasts = json::object();
    for (const auto& [id, delta] : est.contrasts) contrasts[id] = vector_to_json(delta);
    j["contrasts"] = contrasts;
    j["detected_set"] = set_to_json(est.detected_set);
    j["set_c1"] = set_to_json(est.set_c1);
    j["set_c2"] = set_to_json(est.set_c2);
    j["densities"] = densities_to_json(est.densities);
    j["lambdas"] = json(est.lambdas_used);
    j["rounds_used"] = est.rounds_used;
    return j;
}

TransferEstimate estimate_from_json(const json& j) {
    TransferEstimate est;
    if (!j.contains("beta_hat"))
        throw InputError("fit JSON: missing beta_hat");
    est.beta_hat = vector_from_json(j["beta_hat"]);
    if (j.contains("contrasts"))
        for (const auto& [id, delta] : j["contrasts"].items())
            est.contrasts[id] = vector_from_json(delta);
    if (j.contains("detected_set"))
        for (const auto& id : j["detected_set"]) est.detected_set.insert(id.get<std::string>());
    if (j.contains("rounds_used")) est.rounds_used = j["rounds_used"].get<int>();
    return est;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int run_simulate(const std::string& config_path, const json& overrides,
                 const std::string& out_dir) {
    json merged = config_path.empty() ? json::object() : read_json_file(config_path);
    if (!merged.is_object()) throw InputError("scenario config: expected a JSON object");
    for (const auto& [key, value] : overrides.items()) merged[key] = value;

    const ScenarioConfig config = scenario_from_json(merged);
    const GeneratedScenario g = generate_scenario(config);

    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    write_study_csv(g.target, (dir / "target.csv").string());
    for (const auto& s : g.sources) write_study_csv(s, (dir / (s.id + ".csv")).string());

    json sidecar;
    sidecar["schema_version"] = kScenarioSchema;
    sidecar["config"] = scenario_to_json(config);
    sidecar["beta_star"] = vector_to_json(g.beta_star);
    json w = json::object();
    for (const auto& [id, coef] : g.w) w[id] = vector_to_json(coef);
    sidecar["w"] = w;
    sidecar["oracle_c_h1"] = set_to_json(g.oracle_c_h1);
    sidecar["oracle_c_h2"] = set_to_json(g.oracle_c_h2);
    sidecar["oracle_c_h"] = set_to_json(g.oracle_c_h);
    write_json_file((dir / "scenario.json").string(), sidecar);

    std::printf("wrote target + %d source studies to %s\n", config.K, out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// fit / detect
// ---------------------------------------------------------------------------

int run_fit(const FitOptions& opt) {
    const Study target = load_target(opt.target_path);
    const std::vector<Study> sources = load_sources(opt.source_paths);
    const QuantileLevel tau(opt.tau);
    DetectionThresholds thresholds;
    thresholds.t1 = opt.t1;
    thresholds.t2 = opt.t2;

    const TransferEstimate est =
        sources.empty()
            ? fit_with_known_set(target, sources, {}, tau, lambdas_from(opt),
                                 solver_from(opt), opt.rounds)
            : fit_transfer(target, sources, tau, thresholds, lambdas_from(opt),
                           solver_from(opt), opt.rounds);

    json j;
    j["schema_version"] = kFitSchema;
    j["tau"] = opt.tau;
    j["seed"] = opt.seed;
    j["thresholds"] = {{"t1", opt.t1}, {"t2", opt.t2}};
    j["rounds"] = opt.rounds;
    j.update(estimate_to_json(est));
    emit(opt.out_path, j);
    return 0;
}

int run_detect(const FitOptions& opt) {
    const Study target = load_target(opt.target_path);
    const std::vector<Study> sources = load_sources(opt.source_paths);
    if (sources.empty()) throw InputError("detect: at least one --source is required");
    const QuantileLevel tau(opt.tau);
    DetectionThresholds thresholds;
    thresholds.t1 = opt.t1;
    thresholds.t2 = opt.t2;

    const TransferEstimate est = detect_transferable_set(
        target, sources, tau, thresholds, solver_from(opt), lambdas_from(opt));

    json j;
    j["schema_version"] = kDetectSchema;
    j["tau"] = opt.tau;
    j["seed"] = opt.seed;
    j["thresholds"] = {{"t1", opt.t1}, {"t2", opt.t2}};
    j["contrast_budget"] = contrast_budget(opt.t1, target.p(), target.n());
    json norms = json::object();
    for (const auto& [id, delta] : est.contrasts) norms[id] = delta.lpNorm<1>();
    j["contrast_l1_norms"] = norms;
    j["detected_set"] = set_to_json(est.detected_set);
    j["set_c1"] = set_to_json(est.set_c1);
    j["set_c2"] = set_to_json(est.set_c2);
    j["densities"] = densities_to_json(est.densities);
    j["lambdas"] = json(est.lambdas_used);
    emit(opt.out_path, j);
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int run_infer(const FitOptions& opt, int index, const std::string& qc_mode,
              int bootstrap_r, const std::string& fit_json_path, int threads) {
    const Study target = load_target(opt.target_path);
    const std::vector<Study> sources = load_sources(opt.source_paths);
    const QuantileLevel tau(opt.tau);
    const SolverSettings solver = solver_from(opt);

    TransferEstimate est;
    if (!fit_json_path.empty()) {
        est = estimate_from_json(read_json_file(fit_json_path));
    } else if (sources.empty()) {
        est = fit_with_known_set(target, sources, {}, tau, lambdas_from(opt),
                                 solver, opt.rounds);
    } else {
        DetectionThresholds thresholds;
        thresholds.t1 = opt.t1;
        thresholds.t2 = opt.t2;
        est = fit_transfer(target, sources, tau, thresholds, lambdas_from(opt), solver,
                           opt.rounds);
    }
    for (const auto& id : est.detected_set) {
        bool found = false;
        for (const auto& s : sources) found = found || s.id == id;
        if (!found)
            throw InputError("detected set references study " + id +
                             " but no matching --source was given");
    }

    InferenceSettings inference;
    inference.coefficient_index = index;
    inference.pivotal.n_draws = opt.pivotal_draws;
    inference.pivotal.seed = opt.seed;

    json j;
    j["schema_version"] = kInferSchema;
    j["tau"] = opt.tau;
    j["seed"] = opt.seed;
    j["coefficient_index"] = index;
    j["detected_set"] = set_to_json(est.detected_set);

    DebiasedResult result;
    if (qc_mode == "on") {
        QcSettings qc;
        qc.R = bootstrap_r;
        qc.seed = derive_seed(opt.seed, "qc");
        qc.threads = threads;
        const auto [report, gated] =
            quality_control(target, sources, est, tau, qc, inference, solver);
        result = gated;
        j["decision"] = qc_decision_name(report.decision);
        j["sw_p_value"] = report.p_value;
        j["qc"] = {{"sw_statistic", report.sw_statistic},
                   {"sw_p_value", report.p_value},
                   {"pruned_set", set_to_json(report.pruned_set)},
                   {"fallback_forced", report.fallback_forced},
                   {"bootstrap_r", qc.R}};
    } else {
        std::vector<Study> in_set;
        for (const auto& s : sources)
            if (est.detected_set.count(s.id)) in_set.push_back(s);
        result = debias(target, in_set, est, tau, inference, solver);
        j["decision"] = "TransferDebias";
    }

    j["alpha_hat"] = result.alpha_hat;
    j["sigma_hat_sq"] = result.sigma_hat_sq;
    j["ci"] = {{"lower", result.ci_lower}, {"upper", result.ci_upper}, {"level", 0.95}};
    j["n_total"] = static_cast<std::int64_t>(result.n_total);
    j["search_region"] = {{"lower", result.search_region.lower},
                          {"upper", result.search_region.upper}};
    emit(opt.out_path, j);
    return 0;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

ExperimentRecipe recipe_from_json(const json& j) {
    if (!j.is_object()) throw InputError("recipe: expected a JSON object");
    check_known_keys(j,
                     {"schema_version", "name", "scenario", "methods", "replications",
                      "metrics", "output_path", "thresholds", "rounds",
                      "coefficient_index", "solver", "pivotal", "threads", "arms",
                      "notes"},
                     "recipe");
    ExperimentRecipe recipe;
    if (!j.contains("name")) throw InputError("recipe: missing name");
    recipe.name = j["name"].get<std::string>();
    if (!j.contains("scenario")) throw InputError("recipe: missing scenario");
    recipe.scenario = scenario_from_json(j["scenario"]);
    if (!j.contains("methods")) throw InputError("recipe: missing methods");
    for (const auto& name : j["methods"])
        recipe.methods.push_back(method_from_name(name.get<std::string>()));
    if (j.contains("replications")) recipe.replications = j["replications"].get<int>();
    if (j.contains("metrics"))
        recipe.metrics = j["metrics"].get<std::vector<std::string>>();
    if (j.contains("output_path")) recipe.output_path = j["output_path"].get<std::string>();
    if (j.contains("thresholds")) {
        const json& t = j["thresholds"];
        check_known_keys(t, {"t1", "t2"}, "recipe.thresholds");
        if (t.contains("t1")) recipe.thresholds.t1 = t["t1"].get<double>();
        if (t.contains("t2")) recipe.thresholds.t2 = t["t2"].get<double>();
    }
    if (j.contains("rounds")) recipe.rounds = j["rounds"].get<int>();
    if (j.contains("coefficient_index"))
        recipe.coefficient_index = j["coefficient_index"].get<int>();
    if (j.contains("solver")) {
        const json& s = j["solver"];
        check_known_keys(s, {"tolerance", "max_iterations", "admm_rho"}, "recipe.solver");
        if (s.contains("tolerance")) recipe.solver.tolerance = s["tolerance"].get<double>();
        if (s.contains("max_iterations"))
            recipe.solver.max_iterations = s["max_iterations"].get<int>();
        if (s.contains("admm_rho")) recipe.solver.admm_rho = s["admm_rho"].get<double>();
    }
    if (j.contains("pivotal")) {
        const json& p = j["pivotal"];
        check_known_keys(p, {"alpha_star", "n_draws"}, "recipe.pivotal");
        if (p.contains("alpha_star")) recipe.pivotal.alpha_star = p["alpha_star"].get<double>();
        if (p.contains("n_draws")) recipe.pivotal.n_draws = p["n_draws"].get<int>();
    }
    if (j.contains("threads")) recipe.threads = j["threads"].get<int>();
    return recipe;
}

// An arm overrides scenario fields (and optionally the method list) on top of
// the base recipe; the grid sweeps in the bundled recipes are arms over one
// shared base.
std::vector<ExperimentRecipe> expand_arms(const json& j, const ExperimentRecipe& base) {
    std::vector<ExperimentRecipe> runs;
    if (!j.contains("arms")) {
        runs.push_back(base);
        return runs;
    }
    if (!j["arms"].is_array() || j["arms"].empty())
        throw InputError("recipe: arms must be a non-empty array");
    json base_scenario = j["scenario"];
    for (const auto& arm : j["arms"]) {
        check_known_keys(arm, {"name", "scenario", "methods"}, "recipe.arms[]");
        if (!arm.contains("name")) throw InputError("recipe: every arm needs a name");
        ExperimentRecipe run = base;
        run.name = base.name + ":" + arm["name"].get<std::string>();
        if (arm.contains("scenario")) {
            json merged = base_scenario;
            for (const auto& [key, value] : arm["scenario"].items()) merged[key] = value;
            run.scenario = scenario_from_json(merged);
        }
        if (arm.contains("methods")) {
            run.methods.clear();
            for (const auto& name : arm["methods"])
                run.methods.push_back(method_from_name(name.get<std::string>()));
        }
        runs.push_back(std::move(run));
    }
    return runs;
}

int run_experiment_cmd(const std::string& recipe_path, const std::string& out_dir,
                       int threads_override) {
    const json j = read_json_file(recipe_path);
    ExperimentRecipe base = recipe_from_json(j);
    if (threads_override > 0) base.threads = threads_override;
    const std::vector<ExperimentRecipe> runs = expand_arms(j, base);

    std::vector<ResultRecord> all_records;
    json per_run = json::array();
    int n_cells = 0;
    int n_failed = 0;
    for (const ExperimentRecipe& run : runs) {
        const ExperimentResult result = run_experiment(run);
        n_cells += result.n_cells;
        n_failed += result.n_failed;
        for (const auto& agg : aggregate_results(result.records)) {
            json entry;
            entry["recipe"] = run.name;
            entry["method"] = agg.method;
            entry["n_ok"] = agg.n_ok;
            entry["n_failed"] = agg.n_failed;
            entry["means"] = json(agg.means);
            entry["sds"] = json(agg.sds);
            per_run.push_back(entry);
        }
        all_records.insert(all_records.end(), result.records.begin(),
                           result.records.end());
    }

    std::string stem = base.output_path.empty() ? base.name : base.output_path;
    std::filesystem::path out_base(stem);
    if (!out_dir.empty()) out_base = std::filesystem::path(out_dir) / out_base;

    json aggregate;
    aggregate["schema_version"] = kAggregateSchema;
    aggregate["recipe"] = base.name;
    aggregate["master_seed"] = base.scenario.seed;
    aggregate["replications"] = base.replications;
    aggregate["n_cells"] = n_cells;
    aggregate["n_failed"] = n_failed;
    aggregate["results"] = per_run;

    write_text_file(out_base.string() + ".csv", results_to_csv(all_records));
    write_json_file(out_base.string() + ".json", aggregate);
    std::printf("%d cells, %d failed; results in %s.csv / %s.json\n", n_cells, n_failed,
                out_base.string().c_str(), out_base.string().c_str());
    return 20 * n_failed <= n_cells ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transfer learning for high-dimensional quantile regression"};
    app.require_subcommand(1);

    // simulate ---------------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-study scenario");
    std::string sim_config;
    std::string sim_out = "scenario_out";
    sim->add_option("--config", sim_config, "scenario config JSON (flags override it)");
    sim->add_option("--out", sim_out, "output directory")->capture_default_str();
    struct {
        std::optional<int> p, s, n0, K, h_card;
        std::optional<double> tau, h1, rho, beta_star_value, delta1_override, noise_scale;
        std::optional<std::uint64_t> seed;
        std::optional<std::string> model_type;
        std::optional<bool> covariate_shift;
        std::vector<int> informative_ids, n_k;
        std::vector<std::string> laws;
    } sv;
    sim->add_option("--p", sv.p, "covariate dimension");
    sim->add_option("--s", sv.s, "sparsity of beta*");
    sim->add_option("--n0", sv.n0, "target sample size");
    sim->add_option("--k", sv.K, "number of source studies");
    sim->add_option("--n-k", sv.n_k, "per-source sample sizes");
    sim->add_option("--tau", sv.tau, "quantile level");
    sim->add_option("--model", sv.model_type, "homogeneous or heterogeneous");
    sim->add_option("--beta-value", sv.beta_star_value, "value of nonzero beta* entries");
    sim->add_option("--rho", sv.rho, "Toeplitz correlation base");
    sim->add_flag("--covariate-shift", [&sv](std::int64_t) { sv.covariate_shift = true; },
                  "perturb source covariate laws");
    sim->add_option("--h1", sv.h1, "parameter-shift oracle level");
    sim->add_option("--informative", sv.informative_ids, "source numbers in C_h1");
    sim->add_option("--law", sv.laws,
                    "per-study residual law as id=name (normal, cauchy, mixed, noisy, t3)");
    sim->add_option("--seed", sv.seed, "scenario seed");
    sim->add_option("--delta1-override", sv.delta1_override,
                    "pin every source contrast on coordinate 1");
    sim->add_option("--h-card", sv.h_card, "size of the random shift block");
    sim->add_option("--noise-scale", sv.noise_scale, "residual scale multiplier");

    // fit / detect -----------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "transfer fit with transferable-set detection");
    FitOptions fit_opt;
    add_fit_options(fit, fit_opt, true);

    auto* det = app.add_subcommand("detect", "run set detection and report diagnostics");
    FitOptions det_opt;
    add_fit_options(det, det_opt, true);

    // infer ------------------------------------------------------------------
    auto* inf = app.add_subcommand("infer", "debiased confidence interval for one coefficient");
    FitOptions inf_opt;
    add_fit_options(inf, inf_opt, true);
    int inf_index = 1;
    std::string inf_qc = "off";
    int inf_bootstrap_r = 200;
    std::string inf_fit_json;
    int inf_threads = 0;
    inf->add_option("--index", inf_index, "1-based coefficient index")
        ->capture_default_str();
    inf->add_option("--qc", inf_qc, "bootstrap quality-control gate: on or off")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    inf->add_option("--bootstrap-r", inf_bootstrap_r, "bootstrap replicates for qc")
        ->capture_default_str();
    inf->add_option("--fit", inf_fit_json, "reuse a prior fit JSON instead of refitting");
    inf->add_option("--threads", inf_threads, "qc bootstrap workers (0: TRANSQR_THREADS)");

    // experiment ---------------------------------------------------------------
    auto* exp = app.add_subcommand("experiment", "run a recipe of simulation cells");
    std::string exp_recipe;
    std::string exp_out_dir;
    int exp_threads = 0;
    exp->add_option("--recipe", exp_recipe, "experiment recipe JSON")->required();
    exp->add_option("--out-dir", exp_out_dir, "directory prefix for outputs");
    exp->add_option("--threads", exp_threads, "worker threads (0: TRANSQR_THREADS)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) {
            json overrides = json::object();
            if (sv.p) overrides["p"] = *sv.p;
            if (sv.s) overrides["s"] = *sv.s;
            if (sv.n0) overrides["n0"] = *sv.n0;
            if (sv.K) overrides["K"] = *sv.K;
            if (!sv.n_k.empty()) overrides["n_k"] = sv.n_k;
            if (sv.tau) overrides["tau"] = *sv.tau;
            if (sv.model_type) overrides["model_type"] = *sv.model_type;
            if (sv.beta_star_value) overrides["beta_star_value"] = *sv.beta_star_value;
            if (sv.rho) overrides["rho"] = *sv.rho;
            if (sv.covariate_shift) overrides["covariate_shift"] = *sv.covariate_shift;
            if (sv.h1) overrides["h1"] = *sv.h1;
            if (!sv.informative_ids.empty()) overrides["informative_ids"] = sv.informative_ids;
            if (!sv.laws.empty()) {
                json laws = json::object();
                for (const auto& spec : sv.laws) {
                    const auto eq = spec.find('=');
                    if (eq == std::string::npos)
                        throw InputError("--law expects id=name, got " + spec);
                    laws[spec.substr(0, eq)] = spec.substr(eq + 1);
                }
                overrides["residual_laws"] = laws;
            }
            if (sv.seed) overrides["seed"] = *sv.seed;
            if (sv.delta1_override) overrides["delta1_override"] = *sv.delta1_override;
            if (sv.h_card) overrides["h_card"] = *sv.h_card;
            if (sv.noise_scale) overrides["noise_scale"] = *sv.noise_scale;
            return run_simulate(sim_config, overrides, sim_out);
        }
        if (fit->parsed()) return run_fit(fit_opt);
        if (det->parsed()) return run_detect(det_opt);
        if (inf->parsed())
            return run_infer(inf_opt, inf_index, inf_qc, inf_bootstrap_r, inf_fit_json,
                             inf_threads);
        if (exp->parsed()) return run_experiment_cmd(exp_recipe, exp_out_dir, exp_threads);
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    }
    return 0;
}
