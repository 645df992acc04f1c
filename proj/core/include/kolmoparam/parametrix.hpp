#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kolmoparam/flow.hpp"
#include "kolmoparam/gaussian.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/types.hpp"

namespace kolmoparam {

/// Correction kernel H(s, t, z, y): the true generator applied to the frozen
/// density minus the frozen generator applied to it, evaluated at the start
/// point z.  `lin` must be anchored at (t, y) — the freeze that defines the
/// frozen density — and its span must contain s.
///
///   H = <F(s,z) - [F(s,theta_s) + DF(s,theta_s)(z - theta_s)], grad_x ptilde>
///       + 1/2 Tr[ (a(s,z) - a(s,theta_s)) Hess_x1 ptilde ]
///
/// where theta is the reference path of `lin`.  `quad_order <= 0` uses the
/// cached covariance route (the choice for Monte Carlo inner loops).
double kernel_H(const ChainModel& model, const LinearizedSystem& lin, double s, double t,
                const Vec& z, const Vec& y, int quad_order = 16);

/// One row of a kernel-vs-Gaussian-envelope scan.
struct KernelProfileRow {
    double delta = 0.0;      ///< time to the terminal point, t = T - delta
    double h_abs = 0.0;      ///< |H(t, T, z_delta, y)|
    double envelope = 0.0;   ///< delta^{-n^2 d/2} exp(-rescaled_sqnorm / c_hat)
    double ratio = 0.0;      ///< h_abs / envelope
};

struct KernelProfile {
    std::vector<KernelProfileRow> rows;
    double c_hat = 0.0;            ///< envelope constant, fixed across the scan
    double fitted_exponent = 0.0;  ///< least-squares slope of log(ratio) vs log(delta)
    bool degenerate = false;       ///< kernel vanished somewhere on the grid; no fit
};

/// Scan |H| against the scaled Gaussian envelope along the family of start
/// points z_delta = theta_{t,T}(y) + T_delta w / sqrt(delta), t = T - delta.
/// The offset `w` is held fixed in rescaled coordinates so every row probes
/// the same spatial regime.  The envelope constant c_hat is computed once
/// from the covariance at the first delta and reused for every row: the
/// fitted exponent measures the delta-power gained by H over the envelope.
KernelProfile kernel_exponent_profile(const ChainModel& model, const Vec& y, const Vec& w_offset,
                                      double T, const std::vector<double>& deltas,
                                      const FlowOptions& opts = {});

/// How intermediate convolution times are drawn in `convolve_chain`.
enum class TimeSampling {
    Uniform,     ///< ordered uniforms on (s,t); weight (t-s)^k / k!
    BetaWarped,  ///< Dirichlet(1, eta/2, ..., eta/2) gaps; concentrates near t
};

struct ConvolveOptions {
    TimeSampling time_sampling = TimeSampling::Uniform;
    /// Resolution of the per-draw linearizations built inside the Monte
    /// Carlo loop.  Coarser than the default: each draw rebuilds from
    /// scratch, and the chain integrand only needs a few digits per draw.
    FlowOptions mc_flow{250.0, 16, 4000000};
    /// Resolution of the single shared linearization anchored at (t, y).
    FlowOptions anchor_flow{};
};

/// One Monte Carlo estimate of a term of the parametrix series.
struct SeriesTerm {
    int order = 0;  ///< number of kernel factors k
    DensityEstimate estimate;
    std::uint64_t budget = 0;
};

/// Monte Carlo estimate of the k-fold smoothing-kernel convolution
///   (ptilde (x) H^{(x) k})(s, t, x, y),  k >= 1:
/// ordered times s < u_1 < ... < u_k < t are drawn per `time_sampling`,
/// intermediate points from forward frozen Gaussian proposals, and the
/// telescoping integrand ptilde * H * ... * H is importance-weighted by the
/// sampling densities.  Deterministic for fixed (seed, budget) at any thread
/// count.
SeriesTerm convolve_chain(const ChainModel& model, double s, double t, const Vec& x, const Vec& y,
                          int k, std::uint64_t budget, std::uint64_t seed,
                          const ConvolveOptions& opts = {});

struct SeriesResult {
    DensityEstimate total;          ///< order-0 value + all sampled corrections
    std::vector<SeriesTerm> terms;  ///< terms[k] is the k-kernel correction; terms[0] is exact
};

/// Partial sum of the parametrix series up to `k_max` kernel factors.  The
/// order-0 term is the closed-form frozen density; each higher term is an
/// independent `convolve_chain` run with a seed derived from (seed, k).
/// Standard errors combine in quadrature.
SeriesResult series_partial_sum(const ChainModel& model, double s, double t, const Vec& x,
                                const Vec& y, int k_max, std::uint64_t budget, std::uint64_t seed,
                                const ConvolveOptions& opts = {});

/// Closed-form majorant of the k-th series term produced by the beta-integral
/// recursion: C for k = 0, else
///   C^{k+1} (t-s)^{k eta/2} prod_{i=1}^{k+1} B(1 + (i-1) eta/2, eta/2).
/// Evaluated with log-gamma; decays super-geometrically in k once the beta
/// factors take over.
double beta_tail_bound(int k, double eta, double dt, double C);

/// Scalar observable h(t, y) with a known sup norm, for remainder and
/// martingale-defect probes.
struct TestFunction {
    std::function<double(double, const Vec&)> fn;
    double sup_norm = 1.0;
    std::string name;
};

/// Named observables: "constant-one", "gaussian-bump" (exp(-|y|^2)),
/// "odd-bump" (y_1 exp(-|y|^2)), "cosine" (cos y_1), "clipped-y1"
/// (y_1 clipped to [-10, 10]).  Throws on unknown names.
TestFunction make_test_function(const std::string& name);

struct GreenRemainder {
    double value = 0.0;
    double std_error = 0.0;
    double h_sup = 1.0;  ///< sup norm of the observable, for bound checks
};

/// Monte Carlo estimate of the Green-kernel defect
///   int_s^T int H(s, t+eps, x, y) h(t, y) dy dt
/// with t uniform on (s, T) and y drawn from an inflated scaled Gaussian
/// proposal around the forward flow of x.  eps = 0 is allowed; the time
/// variable is kept at least 1e-9 above s so the density floor is respected.
GreenRemainder green_remainder(const ChainModel& model, double s, double T, const Vec& x,
                               double eps, const TestFunction& h, std::uint64_t budget,
                               std::uint64_t seed, const ConvolveOptions& opts = {});

}  // namespace kolmoparam
