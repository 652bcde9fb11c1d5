#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "transqr/simgen.hpp"
#include "transqr/stats.hpp"

using namespace transqr;

namespace {

double column_correlation(const Matrix& X, int a, int b) {
    const auto n = static_cast<double>(X.rows());
    const Vector ca = X.col(a).array() - X.col(a).mean();
    const Vector cb = X.col(b).array() - X.col(b).mean();
    return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm()) * (n / n);
}

// Fraction of entries <= 0; the centered residual laws should put mass tau
// below zero.
double frac_nonpositive(const Vector& v) {
    double count = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (v[i] <= 0.0) count += 1.0;
    return count / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("toeplitz sampler is deterministic and validates input", "[simgen]") {
    const Matrix a = sample_toeplitz_gaussian(50, 8, 0.7, 42);
    const Matrix b = sample_toeplitz_gaussian(50, 8, 0.7, 42);
    REQUIRE(a.rows() == 50);
    REQUIRE(a.cols() == 8);
    CHECK(a == b);
    CHECK(sample_toeplitz_gaussian(50, 8, 0.7, 43) != a);

    CHECK_THROWS_AS(sample_toeplitz_gaussian(0, 3, 0.5, 1), InputError);
    CHECK_THROWS_AS(sample_toeplitz_gaussian(3, 0, 0.5, 1), InputError);
    CHECK_THROWS_AS(sample_toeplitz_gaussian(3, 3, 1.0, 1), InputError);
    CHECK_THROWS_AS(sample_toeplitz_gaussian(3, 3, -1.2, 1), InputError);
}

TEST_CASE("toeplitz sampler with rho 0 gives near-independent unit-variance columns",
          "[simgen]") {
    const int n = 4000;
    const Matrix X = sample_toeplitz_gaussian(n, 4, 0.0, 7);
    const double band = 4.0 / std::sqrt(static_cast<double>(n));
    for (int a = 0; a < 4; ++a) {
        CHECK(std::abs(X.col(a).mean()) < band);
        CHECK(X.col(a).squaredNorm() / n == Catch::Approx(1.0).margin(0.08));
        for (int b = a + 1; b < 4; ++b)
            CHECK(std::abs(column_correlation(X, a, b)) < band);
    }
}

TEST_CASE("toeplitz sampler realizes the geometric correlation profile", "[simgen]") {
    const Matrix X = sample_toeplitz_gaussian(20000, 3, 0.7, 11);
    CHECK(column_correlation(X, 0, 1) == Catch::Approx(0.7).margin(0.02));
    CHECK(column_correlation(X, 1, 2) == Catch::Approx(0.7).margin(0.02));
    CHECK(column_correlation(X, 0, 2) == Catch::Approx(0.49).margin(0.02));
}

TEST_CASE("covariate shift with zero amplitude reproduces the base sampler exactly",
          "[simgen]") {
    const Matrix base = sample_toeplitz_gaussian(40, 6, 0.7, 99);
    const Matrix shifted = sample_covariate_shifted(40, 6, 0.7, 99, 0.0);
    CHECK(base == shifted);
}

TEST_CASE("covariate shift adds a rank-one component to the covariance", "[simgen]") {
    const int n = 120000, p = 5;
    const double rho = 0.5;
    Vector eps;
    const Matrix X = sample_covariate_shifted(n, p, rho, 314, 0.3, &eps);
    REQUIRE(eps.size() == p);

    Matrix sigma(p, p);
    for (int a = 0; a < p; ++a)
        for (int b = 0; b < p; ++b) sigma(a, b) = std::pow(rho, std::abs(a - b));
    const Matrix diff = X.transpose() * X / static_cast<double>(n) - sigma;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
    const double top = es.eigenvalues().maxCoeff();
    CHECK(top == Catch::Approx(eps.squaredNorm()).epsilon(0.15));
}

TEST_CASE("residual quantile shifts match frozen reference values", "[simgen]") {
    CHECK(residual_quantile_shift(ResidualLaw::Normal, QuantileLevel(0.5)) ==
          Catch::Approx(0.0).margin(1e-12));
    CHECK(residual_quantile_shift(ResidualLaw::Normal, QuantileLevel(0.2)) ==
          Catch::Approx(-0.8416212335729142).margin(1e-12));
    CHECK(residual_quantile_shift(ResidualLaw::Noisy, QuantileLevel(0.2)) ==
          Catch::Approx(-4.208106167864571).margin(1e-12));
    CHECK(residual_quantile_shift(ResidualLaw::Cauchy, QuantileLevel(0.5)) ==
          Catch::Approx(0.0).margin(1e-12));
    CHECK(residual_quantile_shift(ResidualLaw::Cauchy, QuantileLevel(0.2)) ==
          Catch::Approx(-4.12914576141352).margin(1e-9));
    CHECK(residual_quantile_shift(ResidualLaw::StudentT3, QuantileLevel(0.2)) ==
          Catch::Approx(-0.9784723123633045).margin(1e-8));
    CHECK(residual_quantile_shift(ResidualLaw::StudentT3, QuantileLevel(0.7)) ==
          Catch::Approx(0.5843897274398184).margin(1e-8));
    CHECK(residual_quantile_shift(ResidualLaw::MixedGaussian, QuantileLevel(0.5)) ==
          Catch::Approx(0.0).margin(1e-9));
    CHECK(residual_quantile_shift(ResidualLaw::MixedGaussian, QuantileLevel(0.2)) ==
          Catch::Approx(-0.10995628276982537).margin(1e-8));
}

TEST_CASE("mixture quantile shift is a fixed point of the mixture cdf", "[simgen]") {
    for (double t : {0.2, 0.35, 0.5, 0.7}) {
        for (bool sd_mode : {false, true}) {
            const double q =
                residual_quantile_shift(ResidualLaw::MixedGaussian, QuantileLevel(t), sd_mode);
            const double sd = sd_mode ? 0.5 : std::sqrt(0.5);
            CHECK(detail::mixture_cdf(q, t, sd) == Catch::Approx(t).margin(1e-9));
        }
    }
}

TEST_CASE("centered residual draws put mass tau below zero for every law", "[simgen]") {
    const int n = 40000;
    const ResidualLaw laws[] = {ResidualLaw::Normal, ResidualLaw::Cauchy,
                                ResidualLaw::MixedGaussian, ResidualLaw::Noisy,
                                ResidualLaw::StudentT3};
    for (double t : {0.2, 0.5, 0.7}) {
        const QuantileLevel tau(t);
        for (ResidualLaw law : laws) {
            const double shift = residual_quantile_shift(law, tau);
            Rng g(derive_seed(2024, residual_law_name(law), static_cast<std::uint64_t>(t * 10)));
            Vector eps(n);
            for (int i = 0; i < n; ++i) eps[i] = sample_raw_residual(law, tau, g) - shift;
            CHECK(frac_nonpositive(eps) == Catch::Approx(t).margin(0.01));
        }
    }
}

TEST_CASE("raw residual draws track the first moments of their laws", "[simgen]") {
    const int n = 60000;
    const QuantileLevel tau(0.2);
    Rng g(5150);

    Vector normal(n), noisy(n), mixed(n);
    for (int i = 0; i < n; ++i) normal[i] = sample_raw_residual(ResidualLaw::Normal, tau, g);
    for (int i = 0; i < n; ++i) noisy[i] = sample_raw_residual(ResidualLaw::Noisy, tau, g);
    for (int i = 0; i < n; ++i)
        mixed[i] = sample_raw_residual(ResidualLaw::MixedGaussian, tau, g);

    CHECK(normal.mean() == Catch::Approx(0.0).margin(0.02));
    CHECK(normal.squaredNorm() / n == Catch::Approx(1.0).margin(0.03));
    CHECK(noisy.mean() == Catch::Approx(0.0).margin(0.1));
    CHECK(noisy.squaredNorm() / n == Catch::Approx(25.0).margin(0.6));
    // Mixture mean is -3*tau + 3*(1-tau) = 1.8 at tau = 0.2.
    CHECK(mixed.mean() == Catch::Approx(1.8).margin(0.06));
}

TEST_CASE("student t3 draws have heavier tails than normal ones", "[simgen]") {
    const int n = 60000;
    const QuantileLevel tau(0.5);
    Rng g(616);
    int beyond3 = 0;
    for (int i = 0; i < n; ++i)
        if (std::abs(sample_raw_residual(ResidualLaw::StudentT3, tau, g)) > 3.0) ++beyond3;
    // P(|t3| > 3) ~ 0.0577 versus 0.0027 for the normal.
    CHECK(static_cast<double>(beyond3) / n == Catch::Approx(0.0577).margin(0.006));
}

TEST_CASE("parameter shift hits the prescribed l1 norms", "[simgen]") {
    const int p = 200, s = 10;
    const double h1 = 5.0;
    Vector beta_star = Vector::Zero(p);
    for (int j = 0; j < s; ++j) beta_star[j] = 0.5;

    const CoefficientVector w_inf = build_parameter_shift(p, s, h1, true, 77, 0.5);
    const CoefficientVector w_non = build_parameter_shift(p, s, h1, false, 77, 0.5);
    // 55 perturbed coordinates (s/2 leading plus a 50-index block) at
    // magnitude h1/100 or h1/10.
    CHECK((w_inf - beta_star).lpNorm<1>() == Catch::Approx(2.75).margin(1e-12));
    CHECK((w_non - beta_star).lpNorm<1>() == Catch::Approx(27.5).margin(1e-12));
    CHECK((w_inf - beta_star).lpNorm<1>() < h1);
    CHECK((w_non - beta_star).lpNorm<1>() > h1);

    int moved = 0, moved_leading = 0;
    for (int j = 0; j < p; ++j) {
        if (w_inf[j] != beta_star[j]) {
            ++moved;
            if (j < s / 2) ++moved_leading;
            CHECK(std::abs(w_inf[j] - beta_star[j]) == Catch::Approx(0.05).margin(1e-15));
        }
    }
    CHECK(moved == 55);
    CHECK(moved_leading == s / 2);
}

TEST_CASE("parameter shift edge cases", "[simgen]") {
    // Zero shift returns beta* unchanged on both branches.
    Vector beta_star = Vector::Zero(60);
    for (int j = 0; j < 6; ++j) beta_star[j] = 1.25;
    CHECK(build_parameter_shift(60, 6, 0.0, true, 3, 1.25) == beta_star);
    CHECK(build_parameter_shift(60, 6, 0.0, false, 3, 1.25) == beta_star);

    // Too few coordinates for the default block, unless h_card scales it down.
    CHECK_THROWS_AS(build_parameter_shift(30, 10, 5.0, true, 3, 0.5), InputError);
    CHECK_THROWS_AS(build_parameter_shift(30, 10, 5.0, true, 3, 0.5, 40), InputError);
    const CoefficientVector w = build_parameter_shift(30, 10, 5.0, true, 3, 0.5, 10);
    Vector b30 = Vector::Zero(30);
    for (int j = 0; j < 10; ++j) b30[j] = 0.5;
    CHECK((w - b30).lpNorm<1>() == Catch::Approx(15 * 0.05).margin(1e-12));

    // Deterministic in the seed.
    CHECK(build_parameter_shift(200, 10, 5.0, true, 8, 0.5) ==
          build_parameter_shift(200, 10, 5.0, true, 8, 0.5));
    CHECK(build_parameter_shift(200, 10, 5.0, true, 8, 0.5) !=
          build_parameter_shift(200, 10, 5.0, true, 9, 0.5));

    CHECK_THROWS_AS(build_parameter_shift(10, 12, 1.0, true, 1, 0.5), InputError);
    CHECK_THROWS_AS(build_parameter_shift(10, 2, -1.0, true, 1, 0.5), InputError);
}

TEST_CASE("scenario generation is deterministic and shaped by the config", "[simgen]") {
    ScenarioConfig config;
    config.p = 40;
    config.s = 6;
    config.n0 = 30;
    config.K = 3;
    config.tau = 0.3;
    config.h1 = 2.0;
    config.h_card = 10;
    config.informative_ids = {1, 2};
    config.residual_laws = {{"source_01", ResidualLaw::Cauchy},
                            {"source_03", ResidualLaw::StudentT3}};
    config.seed = 12345;

    const GeneratedScenario a = generate_scenario(config);
    const GeneratedScenario b = generate_scenario(config);

    REQUIRE(a.sources.size() == 3);
    CHECK(a.target.id == "target");
    CHECK(a.target.role == StudyRole::Target);
    CHECK(a.target.n() == 30);
    CHECK(a.target.p() == 40);
    CHECK(a.sources[0].id == "source_01");
    CHECK(a.sources[2].id == "source_03");
    CHECK(a.sources[1].role == StudyRole::Source);

    CHECK(a.target.X == b.target.X);
    CHECK(a.target.y == b.target.y);
    CHECK(a.sources[1].y == b.sources[1].y);
    CHECK(a.w.at("source_02") == b.w.at("source_02"));

    // Laws: 1 Cauchy, 2 Normal (default), 3 t3.
    CHECK(a.oracle_c_h1 == std::set<std::string>{"source_01", "source_02"});
    CHECK(a.oracle_c_h2 == std::set<std::string>{"source_02", "source_03"});
    CHECK(a.oracle_c_h == std::set<std::string>{"source_02"});

    // Default sizes: 100 rows inside C_h2, 200 outside.
    CHECK(a.sources[0].n() == 200);
    CHECK(a.sources[1].n() == 100);
    CHECK(a.sources[2].n() == 100);

    // Different seeds give different data.
    config.seed = 54321;
    const GeneratedScenario c = generate_scenario(config);
    CHECK(c.target.y != a.target.y);
}

TEST_CASE("scenario generation honors explicit source sizes and validates input",
          "[simgen]") {
    ScenarioConfig config;
    config.p = 20;
    config.s = 4;
    config.n0 = 10;
    config.K = 2;
    config.h1 = 0.0;
    config.seed = 7;

    config.n_k = {15, 25};
    const GeneratedScenario g = generate_scenario(config);
    CHECK(g.sources[0].n() == 15);
    CHECK(g.sources[1].n() == 25);

    config.n_k = {15};
    CHECK_THROWS_AS(generate_scenario(config), InputError);
    config.n_k.clear();

    config.informative_ids = {3};
    CHECK_THROWS_AS(generate_scenario(config), InputError);
    config.informative_ids.clear();

    config.s = 25;
    CHECK_THROWS_AS(generate_scenario(config), InputError);
    config.s = 4;

    config.tau = 1.2;
    CHECK_THROWS_AS(generate_scenario(config), InputError);
}

TEST_CASE("zero noise scale makes responses exactly linear", "[simgen]") {
    ScenarioConfig config;
    config.p = 15;
    config.s = 3;
    config.n0 = 12;
    config.K = 1;
    config.h1 = 1.0;
    config.h_card = 5;
    config.noise_scale = 0.0;
    config.seed = 88;

    const GeneratedScenario g = generate_scenario(config);
    CHECK((g.target.y - g.target.X * g.beta_star).lpNorm<Eigen::Infinity>() == 0.0);
    const Vector fitted = g.sources[0].X * g.w.at("source_01");
    CHECK((g.sources[0].y - fitted).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("generated responses sit at the requested conditional quantile", "[simgen]") {
    ScenarioConfig config;
    config.p = 5;
    config.s = 2;
    config.n0 = 20000;
    config.K = 0;
    config.tau = 0.2;
    config.seed = 404;

    for (ResidualLaw law : {ResidualLaw::Normal, ResidualLaw::Cauchy, ResidualLaw::Noisy}) {
        config.residual_laws = {{"target", law}};
        const GeneratedScenario g = generate_scenario(config);
        const Vector resid = g.target.y - g.target.X * g.beta_star;
        CHECK(frac_nonpositive(resid) == Catch::Approx(0.2).margin(0.01));
    }
}

TEST_CASE("heterogeneous model scales residuals by the first covariate", "[simgen]") {
    ScenarioConfig config;
    config.p = 4;
    config.s = 2;
    config.n0 = 20000;
    config.K = 0;
    config.tau = 0.5;
    config.model_type = ModelType::Heterogeneous;
    config.seed = 31;

    const GeneratedScenario g = generate_scenario(config);
    const Vector resid = g.target.y - g.target.X * g.beta_star;
    // Multiplying by |x_1| > 0 preserves the sign, so the quantile constraint
    // still holds, and dividing it out plus re-adding the centering shift
    // recovers the raw law.
    CHECK(frac_nonpositive(resid) == Catch::Approx(0.5).margin(0.01));

    const double shift = residual_quantile_shift(ResidualLaw::Normal, QuantileLevel(0.5));
    std::vector<double> raw(static_cast<size_t>(config.n0));
    for (int i = 0; i < config.n0; ++i)
        raw[static_cast<size_t>(i)] = resid[i] / std::abs(g.target.X(i, 0)) + shift;
    std::sort(raw.begin(), raw.end());
    double ks = 0.0;
    for (size_t i = 0; i < raw.size(); ++i) {
        const double emp = static_cast<double>(i + 1) / static_cast<double>(raw.size());
        ks = std::max(ks, std::abs(emp - normal_cdf(raw[i])));
    }
    CHECK(ks < 0.02);
}

TEST_CASE("delta override pins the first source coefficient", "[simgen]") {
    ScenarioConfig config;
    config.p = 150;
    config.s = 10;
    config.n0 = 10;
    config.K = 2;
    config.h1 = 0.0;
    config.delta1_override = 0.01;
    config.seed = 9;

    const GeneratedScenario g = generate_scenario(config);
    for (const auto& [id, w] : g.w) {
        CHECK(w[0] == Catch::Approx(0.51).margin(1e-15));
        for (int j = 1; j < config.p; ++j) CHECK(w[j] == g.beta_star[j]);
    }
}

TEST_CASE("divergent law assignment is a seeded bernoulli per source", "[simgen]") {
    const auto laws = assign_divergent_laws(20, ResidualLaw::Cauchy, 0.5, 123);
    REQUIRE(laws.size() == 20);
    CHECK(laws == assign_divergent_laws(20, ResidualLaw::Cauchy, 0.5, 123));
    int divergent = 0;
    for (const auto& [id, law] : laws)
        if (law == ResidualLaw::Cauchy) ++divergent;
    CHECK(divergent > 0);
    CHECK(divergent < 20);

    const auto all = assign_divergent_laws(10, ResidualLaw::Noisy, 1.0, 5);
    for (const auto& [id, law] : all) CHECK(law == ResidualLaw::Noisy);
    CHECK_THROWS_AS(assign_divergent_laws(5, ResidualLaw::Noisy, 1.5, 5), InputError);
}

TEST_CASE("residual law names round-trip", "[simgen]") {
    for (ResidualLaw law : {ResidualLaw::Normal, ResidualLaw::Cauchy,
                            ResidualLaw::MixedGaussian, ResidualLaw::Noisy,
                            ResidualLaw::StudentT3})
        CHECK(residual_law_from_name(residual_law_name(law)) == law);
    CHECK_THROWS_AS(residual_law_from_name("weibull"), InputError);
}
