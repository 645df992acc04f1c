#include "kolmoparam/simulate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "kolmoparam/gaussian.hpp"
#include "kolmoparam/parallel.hpp"
#include "kolmoparam/rng.hpp"
#include "kolmoparam/scaling.hpp"

namespace kolmoparam {

namespace {

constexpr std::uint64_t kPathChunk = 64;
constexpr std::uint64_t kReplicaChunk = 256;
constexpr int kBootstrapResamples = 200;
constexpr std::uint64_t kStencilSeed = 0x4D4F4C4Cull;   // fixed: the stencil is part of the mollifier's definition, not a tunable
constexpr std::uint64_t kBootstrapTag = 0xB007ull;

void put_bytes(std::ostream& os, std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, bytes);
}

std::uint64_t get_bytes(std::istream& is, int bytes) {
    char buf[8] = {};
    is.read(buf, bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double v) { put_bytes(os, std::bit_cast<std::uint64_t>(v), 8); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_bytes(is, 8)); }

/// 16 offsets of unit length: 8 antipodal pairs.  The spherical family draws
/// its directions from one fixed counter stream so the stencil is a constant
/// of the library; the axis family walks +/- e_j cyclically.
std::vector<Vec> stencil_offsets(StencilKind kind, int dim) {
    std::vector<Vec> offs;
    offs.reserve(16);
    if (kind == StencilKind::Spherical) {
        RngStream rng(kStencilSeed, 0);
        for (int k = 0; k < 8; ++k) {
            Vec v(dim);
            double norm = 0.0;
            do {
                for (int j = 0; j < dim; ++j) v[j] = rng.normal();
                norm = v.norm();
            } while (norm < 1e-8);
            v /= norm;
            offs.push_back(v);
            offs.push_back(-v);
        }
    } else {
        for (int k = 0; k < 8; ++k) {
            Vec v = Vec::Zero(dim);
            v[k % dim] = 1.0;
            offs.push_back(v);
            offs.push_back(-v);
        }
    }
    return offs;
}

/// Monotone bisection: smallest C >= 1 with sat(C) true, given sat monotone
/// (false then true) in C.  Doubles the bracket first, then 200 halvings.
double smallest_constant(const std::function<bool(double)>& sat) {
    if (sat(1.0)) return 1.0;
    double lo = 1.0, hi = 2.0;
    while (!sat(hi)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e15) throw NumericError("aronson_fit: bound constant diverged");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (sat(mid) ? hi : lo) = mid;
    }
    return hi;
}

}  // namespace

Vec PathEnsemble::state(std::uint64_t i) const {
    if (i >= budget) throw std::invalid_argument("PathEnsemble: path index out of range");
    const int nd = dim();
    Vec out(nd);
    for (int j = 0; j < nd; ++j) out[j] = terminal_states[i * nd + j];
    return out;
}

PathEnsemble euler_paths(const ChainModel& model, double s, const Vec& x, double t, int n_steps,
                         std::uint64_t budget, std::uint64_t seed) {
    if (!(s < t)) throw std::invalid_argument("euler_paths: requires s < t");
    if (n_steps < 1) throw std::invalid_argument("euler_paths: n_steps must be >= 1");
    if (budget < 1) throw std::invalid_argument("euler_paths: budget must be >= 1");
    if (x.size() != model.dim()) throw std::invalid_argument("euler_paths: dimension mismatch");

    const int nd = model.dim();
    const int d = model.d;
    const double dt = (t - s) / n_steps;
    const double sq_dt = std::sqrt(dt);

    PathEnsemble ens;
    ens.n = model.n;
    ens.d = model.d;
    ens.s = s;
    ens.t = t;
    ens.n_steps = n_steps;
    ens.seed = seed;
    ens.budget = budget;
    ens.terminal_states.resize(budget * static_cast<std::uint64_t>(nd));

    parallel_chunks(budget, kPathChunk,
                    [&](std::uint64_t begin, std::uint64_t end, std::uint64_t) {
                        Vec state(nd), xi(d);
                        for (std::uint64_t i = begin; i < end; ++i) {
                            RngStream rng(seed, i);
                            state = x;
                            for (int m = 0; m < n_steps; ++m) {
                                const double u = s + m * dt;
                                const Vec drift = model.drift_full(u, state);
                                const Mat sg = model.sigma(u, state);
                                for (int j = 0; j < d; ++j) xi[j] = rng.normal();
                                state += dt * drift;
                                state.head(d) += sq_dt * (sg * xi);
                            }
                            if (!state.allFinite())
                                throw NumericError("euler_paths: non-finite state on path " +
                                                   std::to_string(i));
                            for (int j = 0; j < nd; ++j)
                                ens.terminal_states[i * nd + j] = state[j];
                        }
                    });
    return ens;
}

void save_ensemble(const std::string& path, const PathEnsemble& ensemble) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_ensemble: cannot open " + path);
    os.write("KPEN", 4);
    put_bytes(os, 1u, 4);  // version
    put_bytes(os, static_cast<std::uint32_t>(ensemble.n), 4);
    put_bytes(os, static_cast<std::uint32_t>(ensemble.d), 4);
    put_bytes(os, ensemble.budget, 8);
    put_f64(os, ensemble.s);
    put_f64(os, ensemble.t);
    put_bytes(os, ensemble.seed, 8);
    for (double v : ensemble.terminal_states) put_f64(os, v);
    if (!os) throw std::runtime_error("save_ensemble: write failed for " + path);
}

PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_ensemble: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "KPEN")
        throw std::runtime_error("load_ensemble: bad magic in " + path);
    const std::uint64_t version = get_bytes(is, 4);
    if (version != 1) throw std::runtime_error("load_ensemble: unsupported version");
    PathEnsemble ens;
    ens.n = static_cast<int>(get_bytes(is, 4));
    ens.d = static_cast<int>(get_bytes(is, 4));
    ens.budget = get_bytes(is, 8);
    ens.s = get_f64(is);
    ens.t = get_f64(is);
    ens.seed = get_bytes(is, 8);
    ens.n_steps = 0;
    if (!is || ens.n < 1 || ens.d < 1 || ens.budget < 1)
        throw std::runtime_error("load_ensemble: corrupt header in " + path);
    const std::uint64_t count = ens.budget * static_cast<std::uint64_t>(ens.dim());
    ens.terminal_states.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) ens.terminal_states[i] = get_f64(is);
    if (!is) throw std::runtime_error("load_ensemble: truncated data in " + path);
    return ens;
}

DensityEstimate kde_density(const PathEnsemble& ensemble, const Vec& y, const ChainModel& model) {
    if (ensemble.budget == 0) throw std::invalid_argument("kde_density: empty ensemble");
    if (y.size() != ensemble.dim() || model.dim() != ensemble.dim())
        throw std::invalid_argument("kde_density: dimension mismatch");
    const double delta = ensemble.t - ensemble.s;
    if (!(delta > 0.0)) throw std::invalid_argument("kde_density: ensemble interval is empty");

    const int nd = ensemble.dim();
    const int d = ensemble.d;
    const std::uint64_t N = ensemble.budget;

    // per-coordinate rescaling factor: block i carries delta^{1/2 - i}
    Vec factor(nd);
    for (int i = 0; i < ensemble.n; ++i)
        factor.segment(i * d, d).setConstant(std::pow(delta, 0.5 - (i + 1)));

    std::vector<double> u(N * static_cast<std::uint64_t>(nd));
    parallel_chunks(N, 4096, [&](std::uint64_t begin, std::uint64_t end, std::uint64_t) {
        for (std::uint64_t i = begin; i < end; ++i)
            for (int j = 0; j < nd; ++j)
                u[i * nd + j] = factor[j] * ensemble.terminal_states[i * nd + j];
    });

    Vec mean = Vec::Zero(nd);
    for (std::uint64_t i = 0; i < N; ++i)
        for (int j = 0; j < nd; ++j) mean[j] += u[i * nd + j];
    mean /= static_cast<double>(N);
    Vec var = Vec::Zero(nd);
    for (std::uint64_t i = 0; i < N; ++i)
        for (int j = 0; j < nd; ++j) {
            const double dev = u[i * nd + j] - mean[j];
            var[j] += dev * dev;
        }
    var /= std::max<double>(1.0, static_cast<double>(N) - 1.0);

    // per-coordinate Silverman bandwidth in the rescaled coordinates
    const double silverman =
        std::pow(4.0 / 3.0, 0.2) * std::pow(static_cast<double>(N), -0.2);
    Vec bandwidth(nd);
    for (int j = 0; j < nd; ++j) {
        const double sd = std::sqrt(var[j]);
        if (!(sd > 1e-300)) throw NumericError("kde_density: degenerate ensemble coordinate");
        bandwidth[j] = silverman * sd;
    }

    Vec uy(nd);
    for (int j = 0; j < nd; ++j) uy[j] = factor[j] * y[j];
    double log_norm = 0.0;
    for (int j = 0; j < nd; ++j) log_norm -= std::log(bandwidth[j] * std::sqrt(2.0 * M_PI));

    std::vector<double> weights(N);
    parallel_chunks(N, 4096, [&](std::uint64_t begin, std::uint64_t end, std::uint64_t) {
        for (std::uint64_t i = begin; i < end; ++i) {
            double e = 0.0;
            for (int j = 0; j < nd; ++j) {
                const double z = (uy[j] - u[i * nd + j]) / bandwidth[j];
                e -= 0.5 * z * z;
            }
            weights[i] = std::exp(e + log_norm);
        }
    });

    double wsum = 0.0;
    for (std::uint64_t i = 0; i < N; ++i) wsum += weights[i];
    const double jac = std::pow(delta, -0.5 * ensemble.n * ensemble.n * ensemble.d);
    const double value = wsum / static_cast<double>(N) * jac;

    // bootstrap the mean kernel weight; resample r owns stream (seed', r)
    const std::uint64_t boot_seed = derive_seed(ensemble.seed, kBootstrapTag);
    std::vector<double> boot_means(kBootstrapResamples);
    parallel_chunks(kBootstrapResamples, 1,
                    [&](std::uint64_t begin, std::uint64_t end, std::uint64_t) {
                        for (std::uint64_t r = begin; r < end; ++r) {
                            RngStream rng(boot_seed, r);
                            double sum = 0.0;
                            for (std::uint64_t i = 0; i < N; ++i)
                                sum += weights[rng.uniform_index(N)];
                            boot_means[r] = sum / static_cast<double>(N);
                        }
                    });
    double bmean = 0.0;
    for (double m : boot_means) bmean += m;
    bmean /= kBootstrapResamples;
    double bvar = 0.0;
    for (double m : boot_means) bvar += (m - bmean) * (m - bmean);
    bvar /= (kBootstrapResamples - 1.0);
    const double std_error = std::sqrt(bvar) * jac;

    return DensityEstimate{value, std_error, Provenance::Kde, 0};
}

ChainModel mollify(const ChainModel& model, double radius, StencilKind kind) {
    if (!(radius > 0.0)) throw std::invalid_argument("mollify: radius must be positive");
    const std::vector<Vec> offsets = stencil_offsets(kind, model.dim());
    const double w = 1.0 / static_cast<double>(offsets.size());

    ChainModel out = model;
    out.name = model.name + "+moll(" +
               (kind == StencilKind::Spherical ? "spherical" : "axis") + "," +
               std::to_string(radius) + ")";

    for (std::size_t i = 0; i < out.drift.size(); ++i) {
        DriftFn base = model.drift[i];
        out.drift[i] = [base, offsets, radius, w](double t, const Vec& x) -> Vec {
            Vec acc = w * base(t, x + radius * offsets[0]);
            for (std::size_t k = 1; k < offsets.size(); ++k)
                acc += w * base(t, x + radius * offsets[k]);
            return acc;
        };
    }
    for (std::size_t i = 0; i < out.jacobian.size(); ++i) {
        if (!model.jacobian[i]) continue;
        JacobianFn base = model.jacobian[i];
        out.jacobian[i] = [base, offsets, radius, w](double t, const Vec& x) -> Mat {
            Mat acc = w * base(t, x + radius * offsets[0]);
            for (std::size_t k = 1; k < offsets.size(); ++k)
                acc += w * base(t, x + radius * offsets[k]);
            return acc;
        };
    }
    DiffusionFn base_sigma = model.sigma;
    out.sigma = [base_sigma, offsets, radius, w](double t, const Vec& x) -> Mat {
        Mat acc;
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            const Mat sg = base_sigma(t, x + radius * offsets[k]);
            const Mat a = sg * sg.transpose();
            acc = (k == 0) ? Mat(w * a) : Mat(acc + w * a);
        }
        Eigen::LLT<Mat> llt(acc);
        if (llt.info() != Eigen::Success)
            throw NumericError("mollify: averaged diffusion is not positive definite");
        return llt.matrixL();
    };
    return out;
}

UniquenessReport uniqueness_experiment(const ChainModel& model, StencilKind family_a,
                                       StencilKind family_b, const std::vector<double>& radii,
                                       std::uint64_t budget, const std::vector<Vec>& grid,
                                       std::uint64_t seed, double s, const Vec& x, double t,
                                       int n_steps) {
    if (family_a == family_b)
        throw std::invalid_argument("uniqueness_experiment: families must be distinct");
    if (radii.empty() || grid.empty())
        throw std::invalid_argument("uniqueness_experiment: radii and grid must be nonempty");

    UniquenessReport rep;
    for (std::size_t ri = 0; ri < radii.size(); ++ri) {
        const double radius = radii[ri];
        // seed follows the stencil kind, not the argument slot: swapping the
        // families permutes columns without changing any value
        const auto run = [&](StencilKind kind) {
            const ChainModel mm = mollify(model, radius, kind);
            const std::uint64_t fam_seed =
                derive_seed(seed, ri * 4 + static_cast<std::uint64_t>(kind));
            const PathEnsemble ens = euler_paths(mm, s, x, t, n_steps, budget, fam_seed);
            std::vector<DensityEstimate> out;
            out.reserve(grid.size());
            for (const Vec& yy : grid) out.push_back(kde_density(ens, yy, mm));
            return out;
        };
        const std::vector<DensityEstimate> kde_a = run(family_a);
        const std::vector<DensityEstimate> kde_b = run(family_b);

        UniquenessRow row;
        row.radius = radius;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            UniquenessPointRow pr;
            pr.radius = radius;
            pr.y = grid[j];
            pr.kde_a = kde_a[j].value;
            pr.se_a = kde_a[j].std_error;
            pr.kde_b = kde_b[j].value;
            pr.se_b = kde_b[j].std_error;
            rep.points.push_back(pr);
            const double gap = std::abs(pr.kde_a - pr.kde_b);
            if (gap >= row.gap) {
                row.gap = gap;
                row.combined_stderr = std::sqrt(pr.se_a * pr.se_a + pr.se_b * pr.se_b);
            }
        }
        row.within_3sigma = row.gap <= 3.0 * row.combined_stderr;
        rep.rows.push_back(row);
    }
    return rep;
}

XiEstimate xi_epsilon(const ChainModel& model, const TestFunction& h, double s, const Vec& x,
                      double eps, std::uint64_t budget, std::uint64_t seed,
                      const FlowOptions& mc_flow) {
    if (!(eps > 0.0)) throw std::invalid_argument("xi_epsilon: eps must be positive");
    if (s + eps > model.horizon + 1e-12)
        throw std::invalid_argument("xi_epsilon: s + eps exceeds the model horizon");
    if (budget < 100) throw std::invalid_argument("xi_epsilon: budget must be >= 100");
    if (!h.fn) throw std::invalid_argument("xi_epsilon: observable is empty");
    if (x.size() != model.dim()) throw std::invalid_argument("xi_epsilon: dimension mismatch");

    const Vec center = forward_flow(model, s, s + eps, x);
    const DiagGaussian prop = scaled_proposal(center, model.n, model.d, eps, 4.0);

    std::vector<MeanAccumulator> acc(chunk_count(budget, kReplicaChunk));
    parallel_chunks(budget, kReplicaChunk,
                    [&](std::uint64_t begin, std::uint64_t end, std::uint64_t chunk) {
                        MeanAccumulator local;
                        for (std::uint64_t r = begin; r < end; ++r) {
                            RngStream rng(seed, r);
                            const Vec yq = prop.sample(rng);
                            const double q = prop.density(yq);
                            // the freeze point moves with y: rebuild per draw
                            const LinearizedSystem lin =
                                linearize(model, s + eps, yq, s, mc_flow);
                            const double pt = frozen_density(lin, s, s + eps, x, yq, 0).value;
                            local.add(h.fn(s, yq) * pt / q);
                        }
                        acc[chunk] = local;
                    });
    MeanAccumulator total;
    for (const MeanAccumulator& a : acc) total.merge(a);
    return XiEstimate{total.mean(), total.std_error()};
}

AronsonFit aronson_fit(const std::vector<AronsonSample>& samples, const ChainModel& model,
                       double t, const FlowOptions& opts) {
    if (samples.empty()) throw std::invalid_argument("aronson_fit: empty sample grid");
    if (!(t > 0.0)) throw std::invalid_argument("aronson_fit: t must be positive");

    const TimeScaler scaler(model.n, model.d, t);
    const double pref = std::pow(t, 0.5 * model.n * model.n * model.d);

    AronsonFit fit;
    for (const AronsonSample& sm : samples) {
        if (!(sm.p > 0.0))
            throw std::invalid_argument("aronson_fit: density values must be positive");
        if (sm.x.size() != model.dim() || sm.y.size() != model.dim())
            throw std::invalid_argument("aronson_fit: dimension mismatch");
        const Vec theta = forward_flow(model, 0.0, t, sm.x, opts);
        const double q = scaler.rescaled_sqnorm(theta - sm.y);
        const double ph = sm.p * pref;
        const double c_up =
            smallest_constant([&](double c) { return c * std::exp(-q / c) >= ph; });
        const double c_lo =
            smallest_constant([&](double c) { return std::exp(-c * q) / c <= ph; });
        fit.c_upper = std::max(fit.c_upper, c_up);
        fit.c_lower = std::max(fit.c_lower, c_lo);
    }
    return fit;
}

}  // namespace kolmoparam
