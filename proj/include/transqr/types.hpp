#pragma once

// Shared data model: studies, quantile levels, coefficient vectors, metrics.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace transqr {

// Row-major dense storage; the designs here stay small (p <= 500).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using CoefficientVector = Eigen::VectorXd;

// Bad user input: dimensions, malformed files, invalid parameters. CLI exit 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Degenerate numerics: zero variance, singular refits, failed bootstrap. CLI exit 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class StudyRole { Target, Source };

struct Study {
    std::string id;
    Matrix X;      // n x p design
    Vector y;      // n responses
    StudyRole role = StudyRole::Target;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }

    void validate() const {
        if (X.rows() < 1 || X.cols() < 1)
            throw InputError("study '" + id + "': empty design matrix");
        if (X.rows() != y.size())
            throw InputError("study '" + id + "': X has " + std::to_string(X.rows()) +
                             " rows but y has " + std::to_string(y.size()) + " entries");
        if (!X.allFinite() || !y.allFinite())
            throw InputError("study '" + id + "': non-finite entries in data");
    }
};

struct QuantileLevel {
    double value;

    explicit QuantileLevel(double v) : value(v) {
        if (!(v > 0.0 && v < 1.0) || !std::isfinite(v))
            throw InputError("quantile level must lie in (0,1), got " + std::to_string(v));
    }
};

struct ErrorMetrics {
    double l1_error = 0.0;
    double l2_error = 0.0;
    double prediction_error = 0.0;
};

inline void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw InputError(std::string(what) + ": non-finite entries");
}

}  // namespace transqr
