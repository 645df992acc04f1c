#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kolmoparam/flow.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/parametrix.hpp"
#include "kolmoparam/types.hpp"

namespace kolmoparam {

/// Terminal states of a weak Euler-Maruyama ensemble over [s, t].
struct PathEnsemble {
    int n = 0;
    int d = 0;
    double s = 0.0;
    double t = 0.0;
    int n_steps = 0;  ///< 0 when the ensemble was loaded from disk
    std::uint64_t seed = 0;
    std::uint64_t budget = 0;
    std::vector<double> terminal_states;  ///< row-major, budget x (n*d)

    int dim() const { return n * d; }
    Vec state(std::uint64_t i) const;
};

/// Explicit Euler-Maruyama with step (t-s)/n_steps; noise enters level 1
/// only, through sigma.  Path i uses counter stream (seed, i), so the
/// ensemble is identical for a fixed seed at any thread count.  A path that
/// leaves the finite range raises NumericError naming the path index.
PathEnsemble euler_paths(const ChainModel& model, double s, const Vec& x, double t, int n_steps,
                         std::uint64_t budget, std::uint64_t seed);

/// Flat binary ensemble file: header {magic "KPEN", version u32, n u32,
/// d u32, budget u64, s f64, t f64, seed u64}, then budget * n * d
/// little-endian doubles, row-major.  The step count is not persisted.
void save_ensemble(const std::string& path, const PathEnsemble& ensemble);
PathEnsemble load_ensemble(const std::string& path);

/// Gaussian-product kernel density estimate of the ensemble's terminal law
/// at y, computed in rescaled coordinates: samples and y are mapped through
/// sqrt(t-s) T_{t-s}^{-1} so every block fluctuates at unit scale, Silverman
/// bandwidths are taken per coordinate there, and the value is mapped back
/// by the transform's Jacobian (t-s)^{-n^2 d/2}.  The standard error comes
/// from 200 bootstrap resamples on the precomputed kernel weights, seeded
/// from the ensemble seed; value and stderr are thread-count invariant.
DensityEstimate kde_density(const PathEnsemble& ensemble, const Vec& y, const ChainModel& model);

/// Shape of the 16-point averaging stencil used by `mollify`.
enum class StencilKind {
    Spherical,    ///< 8 antipodal unit-vector pairs from a fixed counter stream
    AxisAligned,  ///< +/- coordinate axes, cycled to 16 points
};

/// Coefficients replaced by their averages over a fixed 16-point stencil of
/// the given radius: every drift level and the diffusion square a = sigma
/// sigma^T are averaged (the new sigma is the Cholesky factor of the
/// averaged a).  The stencil is symmetric, so linear drifts are exactly
/// invariant; block dependence is unchanged.  Analytic drift Jacobians are
/// averaged alongside when the base model carries them.
ChainModel mollify(const ChainModel& model, double radius,
                   StencilKind kind = StencilKind::Spherical);

struct UniquenessPointRow {
    double radius = 0.0;
    Vec y;
    double kde_a = 0.0;
    double se_a = 0.0;
    double kde_b = 0.0;
    double se_b = 0.0;
};

struct UniquenessRow {
    double radius = 0.0;
    double gap = 0.0;              ///< max over the grid of |kde_a - kde_b|
    double combined_stderr = 0.0;  ///< quadrature stderr at the maximizing point
    bool within_3sigma = false;
};

struct UniquenessReport {
    std::vector<UniquenessRow> rows;         ///< one per radius, input order
    std::vector<UniquenessPointRow> points;  ///< radius-major detail
};

/// Weak-uniqueness probe: for each radius, simulate the model mollified by
/// each of the two stencil families from (s, x) to t, estimate the terminal
/// density on the grid by KDE, and compare.  Simulation seeds are derived
/// from (seed, radius index, stencil kind), so swapping the two families
/// permutes the report without changing any number.
UniquenessReport uniqueness_experiment(const ChainModel& model, StencilKind family_a,
                                       StencilKind family_b, const std::vector<double>& radii,
                                       std::uint64_t budget, const std::vector<Vec>& grid,
                                       std::uint64_t seed, double s, const Vec& x, double t,
                                       int n_steps);

struct XiEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo estimate of the short-time smoothing functional
///   Xi^eps(s, x) = int h(s, y) ptilde^{(s+eps, y)}(s, s+eps, x, y) dy,
/// which converges to h(s, x) as eps -> 0.  y is drawn from one fixed
/// Gaussian proposal centered at the forward flow of x with the eps-scaled
/// block variances inflated by 4; the freeze point varies with y, so every
/// draw rebuilds its linearization at (s + eps, y).  Requires budget >= 100.
XiEstimate xi_epsilon(const ChainModel& model, const TestFunction& h, double s, const Vec& x,
                      double eps, std::uint64_t budget, std::uint64_t seed,
                      const FlowOptions& mc_flow = FlowOptions{250.0, 16, 4000000});

struct AronsonSample {
    Vec x;
    Vec y;
    double p = 0.0;  ///< density value at (x, y); must be positive
};

struct AronsonFit {
    double c_lower = 1.0;
    double c_upper = 1.0;
};

/// Smallest constants (found by per-side bisection, each >= 1) such that
///   C_l^{-1} t^{-n^2 d/2} exp(-C_l q) <= p <= C_u t^{-n^2 d/2} exp(-q / C_u)
/// holds at every sample, with q = t |T_t^{-1}(theta_t(x) - y)|^2 and
/// theta_t(x) the drift flow of x from time 0 to t.  Enlarging the grid can
/// only increase the constants.  Non-positive density values are rejected.
AronsonFit aronson_fit(const std::vector<AronsonSample>& samples, const ChainModel& model,
                       double t, const FlowOptions& opts = {});

}  // namespace kolmoparam
