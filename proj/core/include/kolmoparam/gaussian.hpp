#pragma once

#include "kolmoparam/flow.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/rng.hpp"
#include "kolmoparam/types.hpp"

#include <Eigen/Cholesky>

#include <vector>

namespace kolmoparam {

/// Covariance of the frozen Gaussian over [s, t]. All conditioning-sensitive
/// work runs on the rescaled matrix K_hat = (t-s) T^{-1} K T^{-1}, whose
/// spectrum stays O(1) where the raw K degenerates like (t-s)^{2n-1}.
struct CovarianceOperator {
    double s = 0.0;
    double t = 0.0;
    int n = 0;
    int d = 0;
    Mat raw;       // K(s, t)
    Mat rescaled;  // K_hat
    Eigen::LLT<Mat> chol;  // factor of K_hat
    double log_det_rescaled = 0.0;
    Vec scale_diag;  // diagonal of T_{t-s}

    double interval() const { return t - s; }
    double log_det() const;  // log det of the raw K

    /// <K^{-1} u, u> evaluated through the rescaled factor.
    double quad_form(const Vec& u) const;
    Vec solve(const Vec& u) const;  // K^{-1} u
    Mat inverse() const;            // K^{-1}
    /// Zero-mean sample with covariance K (raw coordinates).
    Vec sample(RngStream& rng) const;
};

/// Composite Gauss-Legendre assembly of
/// K(s,t) = int_s^t R(t,u) B a(u, theta_u) B^T R(t,u)^T du,
/// `quad_order` nodes per panel, panels aligned with the cached grid so the
/// interpolated integrand is polynomial inside each panel. Throws
/// NumericError when the rescaled matrix is not positive definite.
CovarianceOperator covariance(const LinearizedSystem& lin, double s, double t,
                              int quad_order = 16);

/// Same operator assembled from the cached running integral; used by the
/// sampling loops where thousands of covariances per second are needed.
/// Agrees with the quadrature route to integrator accuracy.  Intervals
/// shorter than 1e-3 are integrated freshly: there the running-integral
/// subtraction would cancel below double precision.
CovarianceOperator covariance_cached(const LinearizedSystem& lin, double s, double t);

/// Smallest constant C >= 1 with spec(K_hat) in [1/C, C]: the two-sided
/// comparison constant between <K u, u> and the intrinsic scaled norm.
double gsp_constant(const CovarianceOperator& cov);

/// Gaussian density with the given mean under the operator's covariance.
double gaussian_density(const CovarianceOperator& cov, const Vec& mean, const Vec& z);

/// Density at z at time t of the frozen process started at x at time s.
/// Deterministic; provenance closed-form. Intervals below 1e-10 are refused.
/// `quad_order <= 0` selects the cached running-integral covariance instead
/// of fresh quadrature (same result to interpolation accuracy, O(1) per call).
DensityEstimate frozen_density(const LinearizedSystem& lin, double s, double t, const Vec& x,
                               const Vec& z, int quad_order = 16);

struct DensityDerivatives {
    double value = 0.0;
    Vec gradient;      // d/dx of the density, length nd
    Mat hessian_block; // first d x d block of the Hessian in x
};

/// Closed-form gradient and leading Hessian block of the frozen density with
/// respect to the starting point x.
DensityDerivatives frozen_density_derivatives(const LinearizedSystem& lin, double s, double t,
                                              const Vec& x, const Vec& z, int quad_order = 16);

/// Smallest C >= 1 with p-tilde(t, T, x, y) <= C g_{C, T-t}(x - theta_{t,T}(y))
/// across the grid, where g_{a,t}(v) = t^{-n^2 d/2} exp(-t |T_t^{-1} v|^2 / a).
/// Solved per point by bisection, maximised over the grid.
struct DensityBoundPoint {
    double t;
    Vec x;
    Vec y;
};
double density_bound_constant(const ChainModel& model, double T,
                              const std::vector<DensityBoundPoint>& grid,
                              const FlowOptions& opts = {});

/// Independent diagonal Gaussian, used as importance proposal.
struct DiagGaussian {
    Vec mean;
    Vec sd;

    Vec sample(RngStream& rng) const {
        Vec z(mean.size());
        for (Eigen::Index i = 0; i < mean.size(); ++i) z[i] = mean[i] + sd[i] * rng.normal();
        return z;
    }
    double density(const Vec& z) const {
        double q = 0.0, logdet = 0.0;
        for (Eigen::Index i = 0; i < mean.size(); ++i) {
            const double r = (z[i] - mean[i]) / sd[i];
            q += r * r;
            logdet += std::log(sd[i]);
        }
        constexpr double half_log_2pi = 0.91893853320467274178;
        return std::exp(-0.5 * q - logdet - half_log_2pi * static_cast<double>(mean.size()));
    }
};

/// Proposal matched to the intrinsic scales: block i standard deviation
/// sqrt(inflation) * delta^{(2i-1)/2} around the given center.
DiagGaussian scaled_proposal(const Vec& center, int n, int d, double delta, double inflation);

}  // namespace kolmoparam
