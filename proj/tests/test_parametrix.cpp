#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kolmoparam/flow.hpp"
#include "kolmoparam/gaussian.hpp"
#include "kolmoparam/model.hpp"
#include "kolmoparam/parallel.hpp"
#include "kolmoparam/parametrix.hpp"
#include "kolmoparam/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

using namespace kolmoparam;

namespace {

Vec vec1(double a) {
    Vec v(1);
    v << a;
    return v;
}

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

/// Gauss-Legendre rule on [lo, hi] via the Jacobi-matrix eigenproblem.
struct Quadrature {
    std::vector<double> nodes, weights;
};

Quadrature gauss_legendre(int m, double lo, double hi) {
    Mat jac = Mat::Zero(m, m);
    for (int k = 1; k < m; ++k) {
        const double b = k / std::sqrt(4.0 * k * k - 1.0);
        jac(k, k - 1) = b;
        jac(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(jac);
    Quadrature q;
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (int i = 0; i < m; ++i) {
        q.nodes.push_back(mid + half * es.eigenvalues()[i]);
        const double v0 = es.eigenvectors()(0, i);
        q.weights.push_back(2.0 * v0 * v0 * half);
    }
    return q;
}

// --- scalar rough-diffusion test model: a(w) = 1 + 1/2 min(1, |w - 7/10|) ---

constexpr double kCenter = 0.7;

double a_of(double w) { return 1.0 + 0.5 * std::min(1.0, std::abs(w - kCenter)); }

double normal_pdf(double u, double var) {
    return std::exp(-0.5 * u * u / var) / std::sqrt(2.0 * M_PI * var);
}

/// Scalar correction kernel by hand: with zero drift and the coefficient
/// frozen at the terminal point y, only the diffusion mismatch acts on the
/// Gaussian, H = 1/2 (a(w) - a(y)) d^2/dw^2 N(y - w; a(y)(t - u)).
double hand_kernel(double u, double t, double w, double y) {
    const double v = a_of(y) * (t - u);
    const double gap = y - w;
    return 0.5 * (a_of(w) - a_of(y)) * normal_pdf(gap, v) * (gap * gap - v) / (v * v);
}

/// Deterministic tensor-grid quadrature of the first correction term
///   int_s^t du int dw N(w - x; a(w)(u-s)) H(u, t, w, y)
/// on the scalar model. Each half-interval is regularized by the substitution
/// matched to its vanishing Gaussian: w = x + sqrt(u-s) xi on the left half,
/// (tau, zeta) = (sqrt(t-u), (w-y)/sqrt(a(y)(t-u))) on the right half, where
/// the symmetric zeta rule cancels the odd 1/tau component exactly.
double oracle_first_term(double s, double t, double x, double y, int nu, int nxi) {
    const double mid = 0.5 * (s + t);
    double total = 0.0;

    const Quadrature qu = gauss_legendre(nu, 0.0, mid - s);
    const Quadrature qxi = gauss_legendre(nxi, -9.0, 9.0);
    for (int i = 0; i < nu; ++i) {
        const double du = qu.nodes[i];  // u - s
        double inner = 0.0;
        for (int j = 0; j < nxi; ++j) {
            const double w = x + std::sqrt(du) * qxi.nodes[j];
            const double aw = a_of(w);
            const double first = std::exp(-0.5 * qxi.nodes[j] * qxi.nodes[j] / aw) /
                                 std::sqrt(2.0 * M_PI * aw);
            inner += qxi.weights[j] * first * hand_kernel(s + du, t, w, y);
        }
        total += qu.weights[i] * inner;
    }

    const Quadrature qtau = gauss_legendre(nu, 0.0, std::sqrt(t - mid));
    const Quadrature qz = gauss_legendre(nxi, -9.0, 9.0);
    const double ay = a_of(y);
    for (int i = 0; i < nu; ++i) {
        const double tau = qtau.nodes[i];
        const double u = t - tau * tau;
        const double v = ay * tau * tau;
        double inner = 0.0;
        for (int j = 0; j < nxi; ++j) {
            const double w = y + std::sqrt(v) * qz.nodes[j];
            const double first = normal_pdf(w - x, a_of(w) * (u - s));
            const double zeta = qz.nodes[j];
            const double hker = 0.5 * (a_of(w) - ay) * (zeta * zeta - 1.0) / v *
                                std::exp(-0.5 * zeta * zeta) / std::sqrt(2.0 * M_PI);
            inner += qz.weights[j] * first * hker;
        }
        total += qtau.weights[i] * 2.0 * tau * inner;
    }
    return total;
}

ChainModel rough_scalar_model() {
    return build_model("elliptic",
                       {{"sigma", 1.0}, {"amp", 0.5}, {"center", kCenter}, {"d", 1}});
}

}  // namespace

TEST_CASE("kernel vanishes identically on the linear chain") {
    const ChainModel m = build_model("kolmogorov-chain");
    const LinearizedSystem lin = linearize(m, 1.0, vec2(0.1, -0.2), 0.0);
    RngStream rng(2, 0);
    for (int rep = 0; rep < 10; ++rep) {
        const Vec z = vec2(rng.normal(), rng.normal());
        CHECK(std::abs(kernel_H(m, lin, 0.4, 1.0, z, vec2(0.1, -0.2))) < 1e-13);
    }
}

TEST_CASE("kernel matches the hand-coded scalar formula") {
    const ChainModel m = rough_scalar_model();
    const double t = 0.5;
    const Vec y = vec1(0.3);
    const LinearizedSystem lin = linearize(m, t, y, 0.0);
    RngStream rng(4, 0);
    for (int rep = 0; rep < 25; ++rep) {
        const double u = 0.45 * rng.uniform();
        const double w = 2.0 * rng.normal();
        const double lib = kernel_H(m, lin, u, t, vec1(w), y);
        const double hand = hand_kernel(u, t, w, 0.3);
        CHECK(std::abs(lib - hand) < 1e-10 * (1.0 + std::abs(hand)));
    }
}

TEST_CASE("kernel evaluation enforces the anchor and the time order") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.2}});
    const LinearizedSystem lin = linearize(m, 1.0, vec2(0.0, 0.0), 0.0);
    CHECK_THROWS_AS((void)kernel_H(m, lin, 0.2, 0.9, vec2(0.1, 0.1), vec2(0.0, 0.0)),
                    std::invalid_argument);  // y is not the anchor point of lin at 0.9
    CHECK_THROWS_AS((void)kernel_H(m, lin, 1.0, 1.0, vec2(0.1, 0.1), vec2(0.0, 0.0)),
                    std::invalid_argument);  // s == t
}

TEST_CASE("kernel profile: exponent bounds and the degenerate flag") {
    const std::vector<double> deltas = {1e-3, 1e-2, 1e-1};

    const ChainModel pert = build_model("perturbed-chain", {{"amp", 0.3}});
    const KernelProfile pp =
        kernel_exponent_profile(pert, vec2(0.1, 0.2), vec2(0.6, 0.4), 1.0, deltas);
    REQUIRE_FALSE(pp.degenerate);
    REQUIRE(pp.rows.size() == 3);
    CHECK(pp.c_hat >= 1.0);
    CHECK(pp.fitted_exponent >= -0.6);  // eta = 1: theory -1/2

    ModelSpec rough;
    rough.preset = "elliptic";
    rough.params = {{"sigma", 1.0}, {"amp", 0.5}};
    rough.eta = 0.5;
    const KernelProfile ep =
        kernel_exponent_profile(build_model(rough), vec1(0.0), vec1(0.8), 1.0, deltas);
    REQUIRE_FALSE(ep.degenerate);
    CHECK(ep.fitted_exponent >= -0.85);  // eta = 1/2: theory -3/4

    const KernelProfile kp = kernel_exponent_profile(build_model("kolmogorov-chain"),
                                                     vec2(0.0, 0.0), vec2(0.5, 0.5), 1.0, deltas);
    CHECK(kp.degenerate);
    CHECK(std::isnan(kp.fitted_exponent));

    CHECK_THROWS_AS((void)kernel_exponent_profile(pert, vec2(0.0, 0.0), vec2(0.5, 0.5), 1.0,
                                                  std::vector<double>{0.5, 2.0}),
                    std::invalid_argument);  // delta beyond the terminal time
}

TEST_CASE("series terms vanish on the linear chain at machine precision") {
    const ChainModel m = build_model("kolmogorov-chain");
    const SeriesResult sr =
        series_partial_sum(m, 0.0, 1.0, vec2(0.0, 0.0), vec2(0.0, 0.0), 2, 500, 99);
    REQUIRE(sr.terms.size() == 3);
    const double exact = std::sqrt(3.0) / M_PI;
    CHECK(sr.terms[0].estimate.value == doctest::Approx(exact).epsilon(1e-12));
    CHECK(sr.terms[0].estimate.std_error == 0.0);
    CHECK(sr.terms[0].budget == 0);
    for (int k : {1, 2}) {
        CHECK(std::abs(sr.terms[k].estimate.value) < 1e-12);
        CHECK(sr.terms[k].estimate.std_error < 1e-12);
        CHECK(sr.terms[k].order == k);
    }
    CHECK(std::abs(sr.total.value - exact) < 1e-8 * exact);

    // a second linear configuration, off the diagonal
    const SeriesResult off =
        series_partial_sum(m, 0.1, 0.7, vec2(0.5, -0.2), vec2(0.3, 0.1), 2, 500, 7);
    const LinearizedSystem lin = linearize(m, 0.7, vec2(0.3, 0.1), 0.1);
    const double target = frozen_density(lin, 0.1, 0.7, vec2(0.5, -0.2), vec2(0.3, 0.1)).value;
    CHECK(std::abs(off.total.value - target) < 1e-8 * target);
}

TEST_CASE("order zero of the series is the frozen density, exactly") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.2}});
    const SeriesResult sr =
        series_partial_sum(m, 0.0, 0.5, vec2(0.1, 0.0), vec2(0.0, 0.2), 0, 500, 3);
    REQUIRE(sr.terms.size() == 1);
    const LinearizedSystem lin = linearize(m, 0.5, vec2(0.0, 0.2), 0.0);
    CHECK(sr.total.value == frozen_density(lin, 0.0, 0.5, vec2(0.1, 0.0), vec2(0.0, 0.2)).value);
    CHECK(sr.total.std_error == 0.0);
}

TEST_CASE("first correction term matches the deterministic quadrature oracle") {
    const ChainModel m = rough_scalar_model();
    const double s = 0.0, t = 0.5, x = 0.0, y = 0.3;

    const double coarse = oracle_first_term(s, t, x, y, 80, 240);
    const double fine = oracle_first_term(s, t, x, y, 160, 480);
    REQUIRE(std::abs(fine) > 1e-6);                       // a nontrivial target
    REQUIRE(std::abs(coarse - fine) < 1e-4 * std::abs(fine));  // grid-converged

    const SeriesTerm mc = convolve_chain(m, s, t, vec1(x), vec1(y), 1, 1000000, 2024);
    CHECK(std::abs(mc.estimate.value - fine) <=
          3.0 * mc.estimate.std_error + 1e-3 * std::abs(fine));
}

TEST_CASE("independent seeds agree on the first correction") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.3}});
    const SeriesTerm a = convolve_chain(m, 0.0, 1.0, vec2(0.0, 0.0), vec2(0.0, 0.0), 1, 30000, 1);
    const SeriesTerm b = convolve_chain(m, 0.0, 1.0, vec2(0.0, 0.0), vec2(0.0, 0.0), 1, 30000, 2);
    const double comb = std::hypot(a.estimate.std_error, b.estimate.std_error);
    CHECK(std::abs(a.estimate.value - b.estimate.value) <= 3.0 * comb);
    CHECK(a.estimate.value != b.estimate.value);  // genuinely different randomness
}

TEST_CASE("uniform and warped time sampling estimate the same integral") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.3}});
    ConvolveOptions warped;
    warped.time_sampling = TimeSampling::BetaWarped;
    const SeriesTerm u = convolve_chain(m, 0.0, 0.5, vec2(0.0, 0.0), vec2(0.1, 0.0), 1, 40000, 5);
    const SeriesTerm w =
        convolve_chain(m, 0.0, 0.5, vec2(0.0, 0.0), vec2(0.1, 0.0), 1, 40000, 5, warped);
    const double comb = std::hypot(u.estimate.std_error, w.estimate.std_error);
    CHECK(std::abs(u.estimate.value - w.estimate.value) <= 3.0 * comb);
}

TEST_CASE("sampled corrections respect the smoothing tail bound") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.3}});
    const double s = 0.0, t = 0.25;
    const Vec x = vec2(0.0, 0.0), y = vec2(0.0, 0.0);

    // empirical comparison constant: the larger of the covariance-comparison
    // constant and the frozen-density envelope constant over a small grid
    const LinearizedSystem lin = linearize(m, t, y, s);
    double c_hat = gsp_constant(covariance(lin, s, t));
    std::vector<DensityBoundPoint> grid;
    RngStream rng(12, 0);
    for (int i = 0; i < 20; ++i)
        grid.push_back({t * rng.uniform(), vec2(rng.normal(), rng.normal()),
                        vec2(rng.normal(), rng.normal())});
    c_hat = std::max(c_hat, density_bound_constant(m, t, grid));

    const TimeScaler sc(m.n, m.d, t - s);
    const Vec gap = x - lin.theta_at(s);
    const double envelope = std::pow(t - s, -2.0) *  // n^2 d / 2 = 2
                            std::exp(-sc.rescaled_sqnorm(gap) / c_hat);

    const SeriesResult sr = series_partial_sum(m, s, t, x, y, 2, 50000, 21);
    for (int k : {1, 2}) {
        const double bound = beta_tail_bound(k, m.eta, t - s, c_hat) * envelope +
                             3.0 * sr.terms[k].estimate.std_error;
        CHECK(std::abs(sr.terms[k].estimate.value) <= bound);
    }
    // successive partial sums differ by exactly the next sampled term
    CHECK(std::abs(sr.terms[2].estimate.value) <=
          beta_tail_bound(2, m.eta, t - s, c_hat) + 3.0 * sr.terms[2].estimate.std_error);
}

TEST_CASE("series estimates are bit-identical across seeds and worker counts") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.2}});
    const int saved = thread_count();
    set_thread_count(1);
    const SeriesTerm one = convolve_chain(m, 0.0, 0.5, vec2(0.0, 0.0), vec2(0.0, 0.0), 2, 5000, 9);
    set_thread_count(4);
    const SeriesTerm four =
        convolve_chain(m, 0.0, 0.5, vec2(0.0, 0.0), vec2(0.0, 0.0), 2, 5000, 9);
    set_thread_count(saved);
    CHECK(one.estimate.value == four.estimate.value);
    CHECK(one.estimate.std_error == four.estimate.std_error);
}

TEST_CASE("convolution rejects bad arguments") {
    const ChainModel m = build_model("perturbed-chain");
    const Vec z = vec2(0.0, 0.0);
    CHECK_THROWS_AS((void)convolve_chain(m, 0.0, 0.5, z, z, 0, 1000, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)convolve_chain(m, 0.0, 0.5, z, z, 1, 99, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)convolve_chain(m, 0.5, 0.5, z, z, 1, 1000, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)convolve_chain(m, 0.0, 0.5, vec1(0.0), z, 1, 1000, 1),
                    std::invalid_argument);
}

TEST_CASE("tail bound closed forms") {
    // k = 1, eta = 1, dt = 1/4, C = 1: sqrt(dt) B(1, 1/2) B(3/2, 1/2) = pi/2
    CHECK(beta_tail_bound(1, 1.0, 0.25, 1.0) == doctest::Approx(M_PI / 2.0).epsilon(1e-12));
    CHECK(beta_tail_bound(0, 1.0, 0.25, 3.7) == doctest::Approx(3.7).epsilon(1e-15));
    CHECK(beta_tail_bound(0, 0.5, 9.0, 1.2) == doctest::Approx(1.2).epsilon(1e-15));
    // increasing in dt for k >= 1
    CHECK(beta_tail_bound(1, 0.5, 0.1, 2.0) < beta_tail_bound(1, 0.5, 0.4, 2.0));
    // eventually decaying in k at small dt
    CHECK(beta_tail_bound(3, 1.0, 0.01, 1.5) < beta_tail_bound(1, 1.0, 0.01, 1.5));
    CHECK_THROWS_AS((void)beta_tail_bound(-1, 1.0, 0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)beta_tail_bound(1, 0.0, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("named observables") {
    const TestFunction one = make_test_function("constant-one");
    const TestFunction bump = make_test_function("gaussian-bump");
    const TestFunction odd = make_test_function("odd-bump");
    const TestFunction cos_fn = make_test_function("cosine");
    const TestFunction clip = make_test_function("clipped-y1");
    const Vec z = vec2(0.5, -1.0);
    CHECK(one.fn(0.0, z) == 1.0);
    CHECK(one.sup_norm == 1.0);
    CHECK(bump.fn(0.0, z) == doctest::Approx(std::exp(-1.25)).epsilon(1e-14));
    CHECK(bump.sup_norm == 1.0);
    CHECK(odd.fn(0.0, z) == doctest::Approx(0.5 * std::exp(-1.25)).epsilon(1e-14));
    CHECK(odd.sup_norm == doctest::Approx(std::exp(-0.5) / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(cos_fn.fn(0.0, z) == doctest::Approx(std::cos(0.5)).epsilon(1e-14));
    CHECK(clip.fn(0.0, vec2(42.0, 0.0)) == 10.0);
    CHECK(clip.sup_norm == 10.0);
    CHECK_THROWS_AS((void)make_test_function("no-such-observable"), std::invalid_argument);
}

TEST_CASE("remainder term is exactly zero on the linear chain") {
    const ChainModel m = build_model("kolmogorov-chain");
    const GreenRemainder gr = green_remainder(m, 0.0, 0.05, vec2(0.0, 0.0), 0.0,
                                              make_test_function("gaussian-bump"), 500, 3);
    CHECK(gr.value == 0.0);
    CHECK(gr.std_error == 0.0);
}

TEST_CASE("remainder term stays below half the observable bound") {
    const ChainModel m = build_model("perturbed-chain", {{"amp", 0.3}});
    const TestFunction h = make_test_function("gaussian-bump");  // sup norm 1
    const GreenRemainder gr = green_remainder(m, 0.0, 0.05, vec2(0.0, 0.0), 0.0, h, 20000, 17);
    CHECK(std::abs(gr.value) <= 0.5 * gr.h_sup + 3.0 * gr.std_error);
    CHECK(gr.h_sup == 1.0);

    CHECK_THROWS_AS((void)green_remainder(m, 0.0, 0.05, vec2(0.0, 0.0), 0.0, h, 99, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)green_remainder(m, 0.05, 0.05, vec2(0.0, 0.0), 0.0, h, 500, 1),
                    std::invalid_argument);
}
