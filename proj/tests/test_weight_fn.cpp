#include <gtest/gtest.h>

#include <random>

#include "normcount/weight_fn.hpp"

using namespace normcount;

namespace {

const FieldCtx& zeta8() {
    static FieldCtx K = build_field(zeta8_spec());
    return K;
}

WeightFn fixture_weight(double U = 10) { return build_weight(zeta8(), U, 4, {1, .1, .1, .1}, 2); }

Square random_square(const WeightFn& wf, std::mt19937_64& rng) {
    auto b = image_box(wf);
    double s = std::pow(wf.U, wf.n / 2.0);
    std::uniform_real_distribution<double> d(0, 1);
    double side = 1 + d(rng) * 0.4 * s;
    return {s * (b[0] + (b[1] - b[0]) * d(rng)) - side / 2, s * (b[2] + (b[3] - b[2]) * d(rng)) - side / 2, side};
}

}  // namespace

TEST(WeightFn, RealFormMatchesExact) {
    const auto& K = zeta8();
    RealForm f(K.dense_NKQ);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<i64> d(-20, 20);
    for (int t = 0; t < 200; ++t) {
        std::vector<i64> x(4);
        std::vector<double> xd(4);
        for (int i = 0; i < 4; ++i) xd[i] = static_cast<double>(x[i] = d(rng));
        double g[4];
        auto ex = norm_KQ(K, x);
        EXPECT_EQ(f.eval(xd.data(), g), static_cast<double>(ex.value));
        for (int i = 0; i < 4; ++i) EXPECT_EQ(g[i], static_cast<double>(ex.grad[i]));
    }
}

TEST(WeightFn, Build) {
    auto wf = fixture_weight();
    EXPECT_FALSE(wf.perturbed);
    EXPECT_GT(wf.J_min, 0);
    EXPECT_GT(wf.J_center, 0);
    EXPECT_EQ(wf.rest.size(), 2u);
    EXPECT_GT(wf.lambda, 0);
    EXPECT_LE(wf.lambda, 1);
    EXPECT_GE(wf.dv_dw, 0);
    EXPECT_DOUBLE_EQ(wf.mscale, 1.0 / 16);
    // the chosen pivot has the largest minor at the center
    double f[2], g1[4], g2[4];
    wf.F(wf.center.data(), f, g1, g2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_LE(std::abs(g1[i] * g2[j] - g1[j] * g2[i]), wf.J_center + 1e-12);
    // delta = 1 here, so F is the relative norm itself
    std::vector<i64> x{3, -1, 2, 5};
    std::vector<double> xd{3, -1, 2, 5};
    auto N = relnorm_KL(zeta8(), x);
    wf.F(xd.data(), f);
    EXPECT_EQ(f[0], static_cast<double>(N.c1));
    EXPECT_EQ(f[1], static_cast<double>(N.c2));
}

TEST(WeightFn, BuildPerturbsAndRejects) {
    auto wf = build_weight(zeta8(), 5, 4, {1, 0, 0, 0}, 1);
    EXPECT_TRUE(wf.perturbed);
    for (int i = 0; i < 4; ++i) EXPECT_LE(std::abs(wf.center[i] - (i == 0 ? 1.0 : 0.0)), 1e-6);
    try {
        build_weight(zeta8(), 5, 4, {0, 0, 0, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "SingularCenter");
    }
    EXPECT_THROW(build_weight(zeta8(), 5, 4, {1, 0, 0}), Error);
}

TEST(WeightFn, TwistedDelta) {
    auto s = zeta8_spec();
    s.delta = {2, 5, -1, 5};
    auto K = build_field(s);
    auto wf = build_weight(K, 5, 4, {1, .1, .1, .1});
    std::vector<i64> x{1, 2, -1, 3};
    std::vector<double> xd{1, 2, -1, 3};
    double f[2];
    wf.F(xd.data(), f);
    auto z = delta_relnorm(K, x);
    EXPECT_NEAR(f[0], to_double(z.c1), 1e-12);
    EXPECT_NEAR(f[1], to_double(z.c2), 1e-12);
}

TEST(WeightFn, SupportAndPositivity) {
    auto wf = fixture_weight();
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-1, 1);
    double R = wf.support_radius();
    for (int t = 0; t < 40; ++t) {
        double x[2] = {d(rng) * 1.5 * R, d(rng) * 1.5 * R};
        double w = omega(wf, x);
        EXPECT_GE(w, 0);
        if (std::hypot(x[0], x[1]) > R) {
            EXPECT_EQ(w, 0);
        }
    }
    double far[2] = {10 * R, 0};
    EXPECT_EQ(omega(wf, far), 0);
    // near the image of the center the weight is bounded below
    EXPECT_GT(center_lower_constant(wf), 0);
    // the sampled image lies inside the declared disc
    double u[4], f[2];
    for (int t = 0; t < 2000; ++t) {
        detail::sample_region(wf, rng, u);
        wf.F(u, f);
        EXPECT_LE(std::hypot(f[0], f[1]), R);
    }
}

TEST(WeightFn, NewtonSolvesOnTheSlice) {
    auto wf = fixture_weight();
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        double u[4], f[2];
        detail::sample_region(wf, rng, u);
        wf.F(u, f);
        double v[4];
        std::copy(u, u + 4, v);
        v[wf.piv[0]] = wf.U * wf.center[wf.piv[0]];
        v[wf.piv[1]] = wf.U * wf.center[wf.piv[1]];
        double J = 0;
        ASSERT_EQ(solve_pivot(wf, f, v, &J), 1);
        EXPECT_NEAR(v[wf.piv[0]], u[wf.piv[0]], 1e-6);
        EXPECT_NEAR(v[wf.piv[1]], u[wf.piv[1]], 1e-6);
        EXPECT_NEAR(J, std::abs(wf.J(u)), 1e-6 * J);
    }
}

TEST(WeightFn, MeasureIdentityOnSquares) {
    auto wf = fixture_weight();
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 5; ++t) {
        Square R = random_square(wf, rng);
        double q = omega_square_integral(wf, R, 10);
        auto mc = omega_box_mc(wf, R, 50000, 100 + t);
        double se = std::max(mc.se, 1e-12);
        EXPECT_LE(std::abs(q - mc.value), 3 * se + 0.02 * q) << t;
    }
}

TEST(WeightFn, MonteCarloTrivialCases) {
    auto wf = fixture_weight();
    double R = wf.support_radius();
    auto none = omega_box_mc(wf, {5 * R, 5 * R, 1}, 10000, 1);
    EXPECT_EQ(none.value, 0);
    EXPECT_EQ(none.se, 0);
    auto all = omega_box_mc(wf, {-2 * R, -2 * R, 4 * R}, 10000, 1);
    EXPECT_DOUBLE_EQ(all.value, wf.mscale * wf.region_measure());
    EXPECT_EQ(all.se, 0);
    auto a = omega_box_mc(wf, {0, 0, 50}, 10000, 3), b = omega_box_mc(wf, {0, 0, 50}, 10000, 3);
    EXPECT_EQ(a.value, b.value);
    EXPECT_THROW(omega_box_mc(wf, {0, 0, 1}, 100, 1), Error);
}

TEST(WeightFn, ScaleInvariance) {
    auto a = fixture_weight(5), b = fixture_weight(10);
    double xi[2] = {1.01, 0.2};
    double xa[2] = {25 * xi[0], 25 * xi[1]}, xb[2] = {100 * xi[0], 100 * xi[1]};
    EXPECT_NEAR(omega(a, xa), omega(b, xb), 1e-9);
}

TEST(WeightFn, TableAgreesWithQuadrature) {
    auto wf = fixture_weight();
    auto T = build_omega_table(wf, 128, 40);
    double mass = 0;
    for (double v : T.val) mass += v;
    mass *= T.h * T.h * T.scale * T.scale;
    EXPECT_NEAR(mass, wf.mscale * wf.region_measure(), 1e-9 * mass);
    auto b = image_box(wf);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(0, 1);
    double se = 0, sw = 0;
    for (int i = 0; i < 80; ++i) {
        double x[2] = {100 * (b[0] + (b[1] - b[0]) * d(rng)), 100 * (b[2] + (b[3] - b[2]) * d(rng))};
        double o = omega(wf, x), t = T(x[0], x[1]);
        se += (o - t) * (o - t);
        sw += o * o;
    }
    EXPECT_LT(std::sqrt(se / sw), 0.08);
    EXPECT_EQ(T(1e9, 0), 0);
}

TEST(WeightFn, LipschitzConstantFinite) {
    auto wf = fixture_weight();
    double c = lipschitz_constant(wf, 10, 3);
    EXPECT_TRUE(std::isfinite(c));
    EXPECT_GE(c, 0);
}
