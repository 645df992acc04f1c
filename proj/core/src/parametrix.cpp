#include "kolmoparam/parametrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "kolmoparam/parallel.hpp"
#include "kolmoparam/rng.hpp"
#include "kolmoparam/scaling.hpp"

namespace kolmoparam {

namespace {

constexpr double kMinGap = 1e-9;       // keeps every factor interval above the density floor
constexpr std::uint64_t kChunk = 256;  // reduction granularity, fixed for determinism
constexpr int kMaxTimeAttempts = 200;  // rejection budget for degenerate gap draws

void check_anchor(const LinearizedSystem& lin, double t, const Vec& y, const char* where) {
    if (std::abs(t - lin.freeze_time) > 1e-9 * std::max(1.0, std::abs(t)))
        throw std::invalid_argument(std::string(where) +
                                    ": terminal time must match the linearization anchor");
    if ((y - lin.freeze_point).norm() > 1e-9 * (1.0 + y.norm()))
        throw std::invalid_argument(std::string(where) +
                                    ": terminal point must match the linearization anchor");
}

/// Ordered interior times s < u_1 < ... < u_k < t together with the log of
/// their sampling density.  Rejection keeps every gap (boundary gaps
/// included) at least kMinGap; the excluded sliver of the time simplex
/// carries O(kMinGap^{eta/2}) of the integral, far below Monte Carlo noise
/// at the budgets this library targets.
struct TimeDraw {
    std::vector<double> times;
    double log_density = 0.0;
};

TimeDraw draw_times(RngStream& rng, double s, double t, int k, TimeSampling sampling, double eta) {
    const double span = t - s;
    TimeDraw out;
    out.times.resize(static_cast<std::size_t>(k));
    std::vector<double> g(static_cast<std::size_t>(k) + 1);
    for (int attempt = 0; attempt < kMaxTimeAttempts; ++attempt) {
        if (sampling == TimeSampling::Uniform) {
            for (int j = 0; j < k; ++j) out.times[j] = s + span * rng.uniform();
            std::sort(out.times.begin(), out.times.end());
            out.log_density = std::lgamma(k + 1.0) - k * std::log(span);
        } else {
            // Dirichlet(1, eta/2, ..., eta/2) gaps: the first gap carries the
            // smooth density factor, each later gap matches the (gap)^{eta/2-1}
            // singularity of one kernel factor.
            g[0] = rng.gamma(1.0);
            for (int j = 1; j <= k; ++j) g[j] = rng.gamma(0.5 * eta);
            const double total = std::accumulate(g.begin(), g.end(), 0.0);
            double acc = 0.0;
            double logq =
                std::lgamma(1.0 + 0.5 * eta * k) - k * std::lgamma(0.5 * eta) - k * std::log(span);
            for (int j = 0; j < k; ++j) {
                acc += g[j] / total * span;
                out.times[j] = s + acc;
            }
            for (int j = 1; j <= k; ++j) logq += (0.5 * eta - 1.0) * std::log(g[j] / total);
            out.log_density = logq;
        }
        double lo = s;
        bool ok = true;
        for (int j = 0; j < k; ++j) {
            if (out.times[j] - lo < kMinGap) {
                ok = false;
                break;
            }
            lo = out.times[j];
        }
        if (ok && t - lo >= kMinGap) return out;
    }
    throw NumericError("convolve_chain: could not draw interior times with nonzero gaps");
}

/// One importance-sampled realization of the k-fold chain integrand.
double replica_value(const ChainModel& model, double s, double t, const Vec& x, const Vec& y,
                     int k, const LinearizedSystem& lin_x, const LinearizedSystem& lin_y,
                     const ConvolveOptions& opts, RngStream& rng) {
    const TimeDraw td = draw_times(rng, s, t, k, opts.time_sampling, model.eta);
    double value = 1.0;
    Vec w_prev = x;
    double u_prev = s;
    const LinearizedSystem* fwd = &lin_x;  // proposal system anchored at (u_prev, w_prev)
    LinearizedSystem fwd_store;
    for (int j = 0; j < k; ++j) {
        const double u = td.times[j];
        const CovarianceOperator prop_cov = covariance_cached(*fwd, u_prev, u);
        const Vec mean = fwd->theta_at(u);
        const Vec w = mean + prop_cov.sample(rng);
        const double q = gaussian_density(prop_cov, mean, w);
        const LinearizedSystem back = linearize(model, u, w, u_prev, opts.mc_flow);
        const double numer = (j == 0) ? frozen_density(back, u_prev, u, x, w, 0).value
                                      : kernel_H(model, back, u_prev, u, w_prev, w, 0);
        value *= numer / q;
        if (j + 1 < k) {
            fwd_store = linearize(model, u, w, u, td.times[j + 1], opts.mc_flow);
            fwd = &fwd_store;
        }
        w_prev = w;
        u_prev = u;
    }
    value *= kernel_H(model, lin_y, u_prev, t, w_prev, y, 0);
    return value * std::exp(-td.log_density);
}

}  // namespace

double kernel_H(const ChainModel& model, const LinearizedSystem& lin, double s, double t,
                const Vec& z, const Vec& y, int quad_order) {
    check_anchor(lin, t, y, "kernel_H");
    if (!(s < t)) throw std::invalid_argument("kernel_H: requires s < t");
    const Vec theta_s = lin.theta_at(s);
    const Vec drift_gap =
        model.drift_full(s, z) - lin.drift_at(s) - lin.jac_at(s) * (z - theta_s);
    const Mat a_gap = model.diffusion_a(s, z) - lin.a_at(s);
    const DensityDerivatives der = frozen_density_derivatives(lin, s, t, z, y, quad_order);
    return drift_gap.dot(der.gradient) + 0.5 * (a_gap * der.hessian_block).trace();
}

KernelProfile kernel_exponent_profile(const ChainModel& model, const Vec& y, const Vec& w_offset,
                                      double T, const std::vector<double>& deltas,
                                      const FlowOptions& opts) {
    if (deltas.empty()) throw std::invalid_argument("kernel_exponent_profile: empty delta grid");
    for (double dl : deltas)
        if (!(dl > 0.0) || !(dl < T))
            throw std::invalid_argument("kernel_exponent_profile: deltas must lie in (0, T)");
    if (y.size() != model.dim() || w_offset.size() != model.dim())
        throw std::invalid_argument("kernel_exponent_profile: dimension mismatch");

    KernelProfile prof;
    prof.rows.reserve(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const double delta = deltas[i];
        const double t = T - delta;
        const LinearizedSystem lin = linearize(model, T, y, t, opts);
        if (i == 0) prof.c_hat = gsp_constant(covariance(lin, t, T));
        const TimeScaler scaler(model.n, model.d, delta);
        const Vec theta_t = lin.theta_at(t);
        const Vec z = theta_t + scaler.apply(w_offset) / std::sqrt(delta);
        KernelProfileRow row;
        row.delta = delta;
        row.h_abs = std::abs(kernel_H(model, lin, t, T, z, y));
        const double q = scaler.rescaled_sqnorm(z - theta_t);
        row.envelope = std::pow(delta, -0.5 * model.n * model.n * model.d) *
                       std::exp(-q / prof.c_hat);
        row.ratio = row.h_abs / row.envelope;
        prof.rows.push_back(row);
    }

    prof.degenerate = std::any_of(prof.rows.begin(), prof.rows.end(),
                                  [](const KernelProfileRow& r) { return r.h_abs < 1e-300; });
    if (prof.degenerate || prof.rows.size() < 2) {
        prof.fitted_exponent = std::numeric_limits<double>::quiet_NaN();
        return prof;
    }
    // least-squares slope of log(ratio) against log(delta)
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double m = static_cast<double>(prof.rows.size());
    for (const KernelProfileRow& r : prof.rows) {
        const double lx = std::log(r.delta);
        const double ly = std::log(r.ratio);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = m * sxx - sx * sx;
    if (std::abs(denom) < 1e-14) {
        prof.fitted_exponent = std::numeric_limits<double>::quiet_NaN();
        return prof;
    }
    prof.fitted_exponent = (m * sxy - sx * sy) / denom;
    return prof;
}

SeriesTerm convolve_chain(const ChainModel& model, double s, double t, const Vec& x, const Vec& y,
                          int k, std::uint64_t budget, std::uint64_t seed,
                          const ConvolveOptions& opts) {
    if (k < 1) throw std::invalid_argument("convolve_chain: k must be >= 1");
    if (budget < 100) throw std::invalid_argument("convolve_chain: budget must be >= 100");
    if (!(t > s + 1e-8)) throw std::invalid_argument("convolve_chain: interval too short");
    if (x.size() != model.dim() || y.size() != model.dim())
        throw std::invalid_argument("convolve_chain: dimension mismatch");

    const LinearizedSystem lin_y = linearize(model, t, y, s, opts.anchor_flow);
    const LinearizedSystem lin_x = linearize(model, s, x, s, t, opts.anchor_flow);

    std::vector<MeanAccumulator> acc(chunk_count(budget, kChunk));
    parallel_chunks(budget, kChunk,
                    [&](std::uint64_t begin, std::uint64_t end, std::uint64_t chunk) {
                        MeanAccumulator local;
                        for (std::uint64_t r = begin; r < end; ++r) {
                            RngStream rng(seed, r);
                            local.add(replica_value(model, s, t, x, y, k, lin_x, lin_y, opts, rng));
                        }
                        acc[chunk] = local;
                    });
    MeanAccumulator total;
    for (const MeanAccumulator& a : acc) total.merge(a);

    SeriesTerm term;
    term.order = k;
    term.budget = budget;
    term.estimate = DensityEstimate{total.mean(), total.std_error(), Provenance::Parametrix, k};
    return term;
}

SeriesResult series_partial_sum(const ChainModel& model, double s, double t, const Vec& x,
                                const Vec& y, int k_max, std::uint64_t budget, std::uint64_t seed,
                                const ConvolveOptions& opts) {
    if (k_max < 0) throw std::invalid_argument("series_partial_sum: k_max must be >= 0");

    SeriesResult res;
    const LinearizedSystem lin_y = linearize(model, t, y, s, opts.anchor_flow);
    SeriesTerm base;
    base.order = 0;
    base.budget = 0;
    base.estimate = frozen_density(lin_y, s, t, x, y);
    res.terms.push_back(base);

    for (int k = 1; k <= k_max; ++k)
        res.terms.push_back(convolve_chain(model, s, t, x, y, k, budget,
                                           derive_seed(seed, static_cast<std::uint64_t>(k)),
                                           opts));

    double total = 0.0;
    double var = 0.0;
    for (const SeriesTerm& term : res.terms) {
        total += term.estimate.value;
        var += term.estimate.std_error * term.estimate.std_error;
    }
    res.total = DensityEstimate{total, std::sqrt(var), Provenance::Parametrix, k_max};
    return res;
}

double beta_tail_bound(int k, double eta, double dt, double C) {
    if (k < 0) throw std::invalid_argument("beta_tail_bound: k must be >= 0");
    if (!(eta > 0.0) || eta > 1.0)
        throw std::invalid_argument("beta_tail_bound: eta must lie in (0, 1]");
    if (!(dt > 0.0)) throw std::invalid_argument("beta_tail_bound: dt must be positive");
    if (!(C > 0.0)) throw std::invalid_argument("beta_tail_bound: C must be positive");
    if (k == 0) return C;
    double log_bound = (k + 1.0) * std::log(C) + 0.5 * k * eta * std::log(dt);
    for (int i = 1; i <= k + 1; ++i) {
        const double a = 1.0 + 0.5 * eta * (i - 1);
        const double b = 0.5 * eta;
        log_bound += std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    }
    return std::exp(log_bound);
}

TestFunction make_test_function(const std::string& name) {
    TestFunction h;
    h.name = name;
    if (name == "constant-one") {
        h.fn = [](double, const Vec&) { return 1.0; };
        h.sup_norm = 1.0;
    } else if (name == "gaussian-bump") {
        h.fn = [](double, const Vec& y) { return std::exp(-y.squaredNorm()); };
        h.sup_norm = 1.0;
    } else if (name == "odd-bump") {
        h.fn = [](double, const Vec& y) { return y[0] * std::exp(-y.squaredNorm()); };
        h.sup_norm = std::exp(-0.5) / std::sqrt(2.0);
    } else if (name == "cosine") {
        h.fn = [](double, const Vec& y) { return std::cos(y[0]); };
        h.sup_norm = 1.0;
    } else if (name == "clipped-y1") {
        h.fn = [](double, const Vec& y) { return std::clamp(y[0], -10.0, 10.0); };
        h.sup_norm = 10.0;
    } else {
        throw std::invalid_argument("make_test_function: unknown observable '" + name + "'");
    }
    return h;
}

GreenRemainder green_remainder(const ChainModel& model, double s, double T, const Vec& x,
                               double eps, const TestFunction& h, std::uint64_t budget,
                               std::uint64_t seed, const ConvolveOptions& opts) {
    if (!(T > s)) throw std::invalid_argument("green_remainder: requires T > s");
    if (eps < 0.0) throw std::invalid_argument("green_remainder: eps must be >= 0");
    if (budget < 100) throw std::invalid_argument("green_remainder: budget must be >= 100");
    if (!h.fn) throw std::invalid_argument("green_remainder: observable is empty");
    if (x.size() != model.dim()) throw std::invalid_argument("green_remainder: dimension mismatch");

    const double span = T - s;
    const LinearizedSystem lin_fwd = linearize(model, s, x, s, T + eps, opts.anchor_flow);

    std::vector<MeanAccumulator> acc(chunk_count(budget, kChunk));
    parallel_chunks(
        budget, kChunk, [&](std::uint64_t begin, std::uint64_t end, std::uint64_t chunk) {
            MeanAccumulator local;
            for (std::uint64_t r = begin; r < end; ++r) {
                RngStream rng(seed, r);
                const double t_mid = s + std::max(rng.uniform() * span, kMinGap);
                const double delta = t_mid + eps - s;
                const Vec center = lin_fwd.theta_at(t_mid + eps);
                const DiagGaussian prop = scaled_proposal(center, model.n, model.d, delta, 4.0);
                const Vec yq = prop.sample(rng);
                const double q = prop.density(yq);
                const LinearizedSystem back = linearize(model, t_mid + eps, yq, s, opts.mc_flow);
                const double hker = kernel_H(model, back, s, t_mid + eps, x, yq, 0);
                local.add(span * hker * h.fn(t_mid, yq) / q);
            }
            acc[chunk] = local;
        });
    MeanAccumulator total;
    for (const MeanAccumulator& a : acc) total.merge(a);

    GreenRemainder out;
    out.value = total.mean();
    out.std_error = total.std_error();
    out.h_sup = h.sup_norm;
    return out;
}

}  // namespace kolmoparam
