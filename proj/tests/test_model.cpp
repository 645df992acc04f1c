#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kolmoparam/model.hpp"
#include "kolmoparam/rng.hpp"
#include "kolmoparam/scaling.hpp"

#include <cmath>

using namespace kolmoparam;

TEST_CASE("time scaler applies block powers of t") {
    const TimeScaler sc(3, 2, 2.0);
    Vec v(6);
    v << 1, 1, 1, 1, 1, 1;
    const Vec w = sc.apply(v);
    // block i multiplied by t^i
    CHECK(w[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(w[2] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(w[4] == doctest::Approx(8.0).epsilon(1e-15));

    const Vec back = sc.apply_inverse(w);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(back[i] - v[i]) < 1e-14);
}

TEST_CASE("time scaler group law and rescaled norm") {
    const TimeScaler s2(2, 1, 2.0), s3(2, 1, 3.0), s6(2, 1, 6.0);
    RngStream rng(99, 0);
    for (int rep = 0; rep < 10; ++rep) {
        Vec v(2);
        v << rng.normal(), rng.normal();
        const Vec lhs = s2.apply(s3.apply(v));
        const Vec rhs = s6.apply(v);
        for (int i = 0; i < 2; ++i) CHECK(std::abs(lhs[i] - rhs[i]) < 1e-12 * std::abs(rhs[i]));
    }
    // t |T_t^{-1} v|^2 by hand at n=2, d=1, t=4, v=(1,1): 4*(1/16 + 1/256)
    const TimeScaler s4(2, 1, 4.0);
    Vec v(2);
    v << 1, 1;
    CHECK(s4.rescaled_sqnorm(v) == doctest::Approx(17.0 / 64.0).epsilon(1e-14));
}

TEST_CASE("presets build and expose the chain structure") {
    for (const char* preset : {"elliptic", "kolmogorov-chain", "langevin", "perturbed-chain"}) {
        const ChainModel m = build_model(preset);
        CHECK_NOTHROW(verify_structure(m));
        CHECK(m.dim() == m.n * m.d);
        CHECK(m.name == preset);
    }
    CHECK_THROWS_AS((void)build_model("no-such-preset"), std::invalid_argument);
}

TEST_CASE("kolmogorov chain drift shifts blocks down") {
    const ChainModel m = build_model("kolmogorov-chain", {{"n", 3}, {"d", 2}});
    Vec x(6);
    x << 1, 2, 3, 4, 5, 6;
    const Vec f = m.drift_full(0.3, x);
    CHECK(f.segment(0, 2).norm() == 0.0);
    CHECK((f.segment(2, 2) - x.segment(0, 2)).norm() == 0.0);
    CHECK((f.segment(4, 2) - x.segment(2, 2)).norm() == 0.0);
}

TEST_CASE("ModelSpec plumbs eta and horizon") {
    ModelSpec spec;
    spec.preset = "elliptic";
    spec.params = {{"sigma", 1.0}, {"amp", 0.5}};
    spec.eta = 0.5;
    spec.horizon = 2.0;
    const ChainModel m = build_model(spec);
    CHECK(m.eta == 0.5);
    CHECK(m.horizon == 2.0);
    // a(x) = 1 + 0.5 min(1, |x|^0.5)
    Vec x(1);
    x << 0.25;
    CHECK(m.diffusion_a(0.0, x)(0, 0) == doctest::Approx(1.25).epsilon(1e-14));
}

TEST_CASE("jacobian blocks: identity on the chain, analytic matches finite differences") {
    const ChainModel kolmo = build_model("kolmogorov-chain");
    Vec x(2);
    x << 0.7, -1.3;
    const Mat j = jacobian_block(kolmo, 2, 0.0, x);
    CHECK(j.rows() == 1);
    CHECK(j(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

    // perturbed chain has D_{x1}F_2 = 1 + drift_amp cos(x1); compare the
    // analytic block against the finite-difference fallback.
    const ChainModel pert = build_model("perturbed-chain", {{"amp", 0.2}, {"drift_amp", 0.3}});
    ChainModel fd = pert;
    fd.jacobian.assign(fd.jacobian.size(), JacobianFn{});  // force the FD route
    RngStream rng(7, 0);
    for (int rep = 0; rep < 20; ++rep) {
        Vec z(2);
        z << 2.0 * rng.normal(), 2.0 * rng.normal();
        const double hand = 1.0 + 0.3 * std::cos(z[0]);
        const double analytic = jacobian_block(pert, 2, 0.1, z)(0, 0);
        const double numeric = jacobian_block(fd, 2, 0.1, z)(0, 0);
        CHECK(std::abs(analytic - hand) < 1e-12);
        CHECK(std::abs(numeric - hand) < 1e-6);
    }
}

TEST_CASE("full drift jacobian is strictly subdiagonal") {
    const ChainModel m = build_model("perturbed-chain", {{"n", 3}, {"drift_amp", 0.4}});
    Vec x(3);
    x << 0.2, -0.8, 1.1;
    const Mat J = drift_jacobian(m, 0.0, x);
    REQUIRE(J.rows() == 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (c != r - 1) CHECK(J(r, c) == 0.0);
    CHECK(J(1, 0) == doctest::Approx(1.0 + 0.4 * std::cos(x[0])).epsilon(1e-12));
    CHECK(J(2, 1) == doctest::Approx(1.0 + 0.4 * std::cos(x[1])).epsilon(1e-12));
}

TEST_CASE("assumption validation passes for the well-posed presets") {
    const AssumptionReport rep = validate_assumptions(build_model("kolmogorov-chain"), 300, 11);
    CHECK(rep.all_pass());
    CHECK(rep.pass_ue);
    REQUIRE(rep.nd_min_singular.size() == 1);
    // D_{x1}F_2 is the identity, so the smallest singular value is exactly 1
    CHECK(rep.nd_min_singular[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.lambda_min == doctest::Approx(1.0).epsilon(1e-12));

    const AssumptionReport pert =
        validate_assumptions(build_model("perturbed-chain", {{"amp", 0.2}}), 300, 11);
    CHECK(pert.all_pass());
    CHECK(pert.lambda_min >= 1.0 - 1e-12);       // a = 1 + 0.2/(1+|x|^2) >= 1
    CHECK(pert.lambda_max <= 1.2 + 1e-12);
}

TEST_CASE("assumption validation flags vanishing ellipticity") {
    // sigma = 0 and amp = 0 make a identically zero, so random sampling
    // must flag the ellipticity floor (a merely degenerate center point
    // would be missed by any sampled check).
    const ChainModel flat = build_model("elliptic", {{"sigma", 0.0}, {"amp", 0.0}});
    const AssumptionReport rep = validate_assumptions(flat, 400, 11);
    CHECK_FALSE(rep.pass_ue);
    CHECK_FALSE(rep.all_pass());
}

TEST_CASE("assumption validation is reproducible") {
    const ChainModel m = build_model("perturbed-chain");
    const AssumptionReport a = validate_assumptions(m, 250, 42);
    const AssumptionReport b = validate_assumptions(m, 250, 42);
    CHECK(a.holder == b.holder);
    CHECK(a.lambda_min == b.lambda_min);
    CHECK(a.lipschitz == b.lipschitz);
    const AssumptionReport c = validate_assumptions(m, 250, 43);
    CHECK(a.holder != c.holder);
}
