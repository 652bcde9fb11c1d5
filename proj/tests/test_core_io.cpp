#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "transqr/core.hpp"
#include "transqr/csv.hpp"
#include "transqr/rng.hpp"

using namespace transqr;

namespace {

Study random_study(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    Rng g(seed);
    Study s;
    s.id = "random";
    s.X = Matrix(n, p);
    s.y = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) s.X(i, j) = normal01(g);
        s.y[i] = normal01(g);
    }
    return s;
}

}  // namespace

TEST_CASE("check loss evaluates the asymmetric absolute deviation", "[core]") {
    CHECK(check_loss(2.0, QuantileLevel(0.5)) == Catch::Approx(1.0));
    CHECK(check_loss(-1.0, QuantileLevel(0.2)) == Catch::Approx(0.8));
    CHECK(check_loss(0.0, QuantileLevel(0.7)) == Catch::Approx(0.0));
    CHECK(check_loss(1.5, QuantileLevel(0.3)) == Catch::Approx(0.45));
}

TEST_CASE("check loss is non-negative, convex, and satisfies the reflection identity",
          "[core]") {
    Rng g(11);
    for (int rep = 0; rep < 200; ++rep) {
        const double tau = 0.05 + 0.9 * uniform01(g);
        const QuantileLevel q(tau), q1(1.0 - tau);
        const double a = 6.0 * (uniform01(g) - 0.5);
        const double b = 6.0 * (uniform01(g) - 0.5);
        CHECK(check_loss(a, q) >= 0.0);
        // Reflection: rho_tau(x) = rho_{1-tau}(-x); complement sum gives |x|.
        CHECK(check_loss(a, q) == Catch::Approx(check_loss(-a, q1)).margin(1e-12));
        CHECK(check_loss(a, q) + check_loss(-a, q) == Catch::Approx(std::abs(a)).margin(1e-12));
        // Midpoint convexity.
        const double mid = check_loss(0.5 * (a + b), q);
        CHECK(mid <= 0.5 * check_loss(a, q) + 0.5 * check_loss(b, q) + 1e-12);
    }
}

TEST_CASE("quantile objective sums row check losses", "[core]") {
    Study s;
    s.X = Matrix(2, 1);
    s.X << 1.0, 1.0;
    s.y = Vector(2);
    s.y << 0.0, 2.0;
    CoefficientVector beta = Vector::Zero(1);
    CHECK(quantile_objective(s, beta, QuantileLevel(0.5)) == Catch::Approx(1.0));

    Study one;
    one.X = Matrix(1, 1);
    one.X << 1.0;
    one.y = Vector(1);
    one.y << 3.0;
    Vector b3(1);
    b3 << 3.0;
    CHECK(quantile_objective(one, b3, QuantileLevel(0.3)) == Catch::Approx(0.0));
}

TEST_CASE("quantile objective matches brute-force recomputation", "[core]") {
    const Study s = random_study(5, 3, 97);
    Rng g(98);
    Vector beta(3);
    for (int j = 0; j < 3; ++j) beta[j] = normal01(g);
    const QuantileLevel tau(0.35);
    double brute = 0.0;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        double fit = 0.0;
        for (Eigen::Index j = 0; j < s.p(); ++j) fit += s.X(i, j) * beta[j];
        const double r = s.y[i] - fit;
        brute += r * (tau.value - (r <= 0.0 ? 1.0 : 0.0));
    }
    CHECK(quantile_objective(s, beta, tau) == Catch::Approx(brute).margin(1e-12));
}

TEST_CASE("quantile objective is invariant under row permutation", "[core]") {
    const Study s = random_study(12, 2, 55);
    Study perm = s;
    std::vector<Eigen::Index> order = {7, 2, 11, 0, 4, 9, 1, 10, 3, 6, 8, 5};
    for (Eigen::Index i = 0; i < 12; ++i) {
        perm.X.row(i) = s.X.row(order[static_cast<size_t>(i)]);
        perm.y[i] = s.y[order[static_cast<size_t>(i)]];
    }
    Vector beta(2);
    beta << 0.4, -1.1;
    CHECK(quantile_objective(perm, beta, QuantileLevel(0.2)) ==
          Catch::Approx(quantile_objective(s, beta, QuantileLevel(0.2))).margin(1e-12));
}

TEST_CASE("quantile objective rejects dimension mismatch", "[core]") {
    const Study s = random_study(4, 2, 1);
    CHECK_THROWS_AS(quantile_objective(s, Vector::Zero(3), QuantileLevel(0.5)), InputError);
}

TEST_CASE("quantile level enforces the open interval", "[core]") {
    CHECK_THROWS_AS(QuantileLevel(0.0), InputError);
    CHECK_THROWS_AS(QuantileLevel(1.0), InputError);
    CHECK_THROWS_AS(QuantileLevel(-0.1), InputError);
    CHECK_NOTHROW(QuantileLevel(0.5));
}

TEST_CASE("compute_metrics has exact arithmetic on simple cases", "[core]") {
    Vector truth(2), est(2);
    truth << 1.0, -2.0;
    est = truth;
    Matrix id = Matrix::Identity(2, 2);
    auto m = compute_metrics(est, truth, id);
    CHECK(m.l1_error == 0.0);
    CHECK(m.l2_error == 0.0);
    CHECK(m.prediction_error == 0.0);

    est[0] += 1.0;
    m = compute_metrics(est, truth, id);
    CHECK(m.l1_error == Catch::Approx(1.0));
    CHECK(m.l2_error == Catch::Approx(1.0));
    CHECK(m.prediction_error == Catch::Approx(0.5));
}

TEST_CASE("compute_metrics matches naive recomputation on a random instance", "[core]") {
    Rng g(321);
    Vector a(4), b(4);
    Matrix X(6, 4);
    for (int j = 0; j < 4; ++j) {
        a[j] = normal01(g);
        b[j] = normal01(g);
    }
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) X(i, j) = normal01(g);
    const auto m = compute_metrics(a, b, X);
    double l1 = 0.0, l2 = 0.0, pred = 0.0;
    for (int j = 0; j < 4; ++j) {
        l1 += std::abs(a[j] - b[j]);
        l2 += (a[j] - b[j]) * (a[j] - b[j]);
    }
    for (int i = 0; i < 6; ++i) {
        double ip = 0.0;
        for (int j = 0; j < 4; ++j) ip += X(i, j) * (a[j] - b[j]);
        pred += ip * ip;
    }
    CHECK(m.l1_error == Catch::Approx(l1).margin(1e-12));
    CHECK(m.l2_error == Catch::Approx(std::sqrt(l2)).margin(1e-12));
    CHECK(m.prediction_error == Catch::Approx(pred / 6.0).margin(1e-12));
}

TEST_CASE("l2 metric satisfies the triangle inequality", "[core]") {
    Rng g(77);
    Matrix X = Matrix::Identity(3, 3);
    for (int rep = 0; rep < 50; ++rep) {
        Vector a(3), b(3), c(3);
        for (int j = 0; j < 3; ++j) {
            a[j] = normal01(g);
            b[j] = normal01(g);
            c[j] = normal01(g);
        }
        const auto ac = compute_metrics(a, c, X);
        const auto ab = compute_metrics(a, b, X);
        const auto bc = compute_metrics(b, c, X);
        CHECK(ac.l2_error <= ab.l2_error + bc.l2_error + 1e-12);
        CHECK(ac.l1_error <= ab.l1_error + bc.l1_error + 1e-12);
    }
}

TEST_CASE("study validation catches shape and finiteness problems", "[core]") {
    Study s = random_study(3, 2, 9);
    CHECK_NOTHROW(s.validate());
    Study bad = s;
    bad.y = Vector(2);
    CHECK_THROWS_AS(bad.validate(), InputError);
    Study nan_study = s;
    nan_study.X(1, 1) = std::nan("");
    CHECK_THROWS_AS(nan_study.validate(), InputError);
}

TEST_CASE("CSV round trip preserves study data exactly", "[io]") {
    const Study s = random_study(7, 3, 2025);
    const std::string path = "roundtrip_test.csv";
    write_study_csv(s, path);
    const Study back = read_study_csv(path, "random", StudyRole::Source);
    REQUIRE(back.n() == s.n());
    REQUIRE(back.p() == s.p());
    CHECK((back.X - s.X).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.y - s.y).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.role == StudyRole::Source);
    std::remove(path.c_str());
}

TEST_CASE("CSV reader reports malformed input with row/column context", "[io]") {
    const std::string path = "malformed_test.csv";
    {
        std::ofstream out(path);
        out << "y,x1,x2\n1.0,2.0,3.0\n4.0,oops,6.0\n";
    }
    try {
        read_study_csv(path, "m", StudyRole::Target);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 3") != std::string::npos);
        CHECK(msg.find("column 2") != std::string::npos);
        CHECK(msg.find("oops") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("CSV reader enforces the header contract", "[io]") {
    const std::string path = "badheader_test.csv";
    {
        std::ofstream out(path);
        out << "resp,x1\n1.0,2.0\n";
    }
    CHECK_THROWS_AS(read_study_csv(path, "h", StudyRole::Target), InputError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_study_csv("does_not_exist_anywhere.csv", "x", StudyRole::Target),
                    InputError);
}

TEST_CASE("CSV reader rejects ragged rows", "[io]") {
    const std::string path = "ragged_test.csv";
    {
        std::ofstream out(path);
        out << "y,x1,x2\n1.0,2.0,3.0\n4.0,5.0\n";
    }
    try {
        read_study_csv(path, "r", StudyRole::Target);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
    std::remove(path.c_str());
}
