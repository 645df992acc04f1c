#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kolmoparam {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when a computation leaves the numerically trustworthy regime
/// (non-SPD covariance, interval below the evaluation floor, blown-up state).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

enum class Provenance { ClosedForm, Parametrix, Kde };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::ClosedForm: return "closed-form";
        case Provenance::Parametrix: return "parametrix";
        case Provenance::Kde: return "kde";
    }
    return "unknown";
}

/// A density value together with its statistical error and origin.
/// Deterministic routes carry std_error = 0.
struct DensityEstimate {
    double value = 0.0;
    double std_error = 0.0;
    Provenance provenance = Provenance::ClosedForm;
    int order = 0;  // highest correction order entering a series value
};

}  // namespace kolmoparam
