#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "normcount/norm_forms.hpp"

using namespace normcount;

namespace {

FieldSpec zeta5_spec() { return {5, 4, power_basis_tensor({1, 1, 1, 1}), {0, 0, -1, -1}, {1, 1, 0, 1}}; }
FieldSpec zeta12_spec() { return {-3, 4, power_basis_tensor({1, 0, -1, 0}), {0, 0, 1, 0}, {1, 1, 0, 1}}; }

// (x1 + x3 i)^2 - i (x2 + x4 i)^2 in Z[i]
QuadElem zeta8_relnorm_oracle(const std::vector<i64>& x) {
    i64 a1 = x[0], a2 = x[2], b1 = x[1], b2 = x[3];
    i64 s1 = a1 * a1 - a2 * a2, s2 = 2 * a1 * a2;
    i64 t1 = b1 * b1 - b2 * b2, t2 = 2 * b1 * b2;
    return {s1 + t2, s2 - t1};
}

// product of the complex embeddings of a power-basis element of Q(zeta_m)
long double cyclotomic_norm_oracle(const std::vector<i64>& x, int m, const std::vector<int>& units) {
    std::complex<long double> prod = 1;
    for (int k : units) {
        std::complex<long double> s = 0;
        for (size_t j = 0; j < x.size(); ++j)
            s += static_cast<long double>(x[j]) * std::polar(1.0L, 2 * M_PI * k * static_cast<long double>(j) / m);
        prod *= s;
    }
    return prod.real();
}

std::vector<i64> rand_vec(std::mt19937_64& rng, int n, i64 r) {
    std::uniform_int_distribution<i64> d(-r, r);
    std::vector<i64> v(static_cast<size_t>(n));
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST(NormForms, BuildZeta8) {
    auto K = build_field(zeta8_spec());
    EXPECT_EQ(K.n, 4);
    EXPECT_EQ(K.N1.degree, 2);
    EXPECT_EQ(K.NKQ.degree, 4);
}

TEST(NormForms, BuildErrors) {
    auto s = zeta8_spec();
    s.tau_coords = {0, 1, 0, 0};
    try {
        build_field(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "TauNotEmbedded");
    }
    s = zeta8_spec();
    s.mul_tensor[(0 * 4 + 1) * 4 + 1] = 0;
    s.mul_tensor[(0 * 4 + 1) * 4 + 2] = 1;
    try {
        build_field(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "NotABasis");
    }
    s = zeta8_spec();
    s.delta = {0, 1, 0, 1};
    try {
        build_field(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "DeltaZero");
    }
}

TEST(NormForms, Zeta8Examples) {
    auto K = build_field(zeta8_spec());
    EXPECT_EQ(norm_KQ(K, {1, 0, 0, 0}).value, 1);
    EXPECT_EQ(norm_KQ(K, {1, 1, 0, 0}).value, 2);
    EXPECT_EQ(relnorm_KL(K, {1, 0, 0, 0}), (QuadElem{1, 0}));
    std::vector<i64> x{2, 1, -1, 3};
    EXPECT_EQ(norm(relnorm_KL(K, x), K.params), norm_KQ(K, x).value);
    // zeta + zeta^3 = i sqrt 2 has relative norm 2
    EXPECT_EQ(relnorm_KL(K, {0, 1, 0, 1}), (QuadElem{2, 0}));
}

TEST(NormForms, Zeta8ConjugateExpansion) {
    auto K = build_field(zeta8_spec());
    for (i64 a = -3; a <= 3; ++a)
        for (i64 b = -3; b <= 3; ++b)
            for (i64 c = -3; c <= 3; ++c)
                for (i64 d = -3; d <= 3; ++d) {
                    std::vector<i64> x{a, b, c, d};
                    ASSERT_EQ(relnorm_KL(K, x), zeta8_relnorm_oracle(x));
                }
    EXPECT_EQ(K.N1.coeffs.at({0, 1, 0, 1}), 2);
    EXPECT_EQ(K.N1.coeffs.at({2, 0, 0, 0}), 1);
    EXPECT_EQ(K.N1.coeffs.at({0, 0, 2, 0}), -1);
    EXPECT_EQ(K.N2.coeffs.at({1, 0, 1, 0}), 2);
    EXPECT_EQ(K.N2.coeffs.at({0, 2, 0, 0}), -1);
    EXPECT_EQ(K.N2.coeffs.at({0, 0, 0, 2}), 1);
    EXPECT_EQ(K.N1.coeffs.size(), 3u);
    EXPECT_EQ(K.N2.coeffs.size(), 3u);
}

TEST(NormForms, UnitVectorAndDegrees) {
    for (auto spec : {zeta8_spec(), zeta5_spec(), zeta12_spec()}) {
        auto K = build_field(spec);
        std::vector<i64> e{1, 0, 0, 0};
        EXPECT_EQ(K.N1(e), 1);
        EXPECT_EQ(K.N2(e), 0);
        EXPECT_EQ(K.NKQ(e), 1);
        for (auto& [m, c] : K.NKQ.coeffs) {
            int d = 0;
            for (int t : m) d += t;
            EXPECT_EQ(d, K.n);
        }
        for (auto& [m, c] : K.N1.coeffs) {
            int d = 0;
            for (int t : m) d += t;
            EXPECT_EQ(d, K.n / 2);
        }
    }
}

TEST(NormForms, EmbeddingOracle) {
    std::mt19937_64 rng(5);
    auto K8 = build_field(zeta8_spec());
    auto K5 = build_field(zeta5_spec());
    auto K12 = build_field(zeta12_spec());
    for (int t = 0; t < 200; ++t) {
        auto x = rand_vec(rng, 4, 20);
        EXPECT_EQ(norm_KQ(K8, x).value, std::llround(cyclotomic_norm_oracle(x, 8, {1, 3, 5, 7})));
        EXPECT_EQ(norm_KQ(K5, x).value, std::llround(cyclotomic_norm_oracle(x, 5, {1, 2, 3, 4})));
        EXPECT_EQ(norm_KQ(K12, x).value, std::llround(cyclotomic_norm_oracle(x, 12, {1, 5, 7, 11})));
    }
}

TEST(NormForms, TransitivityMultiplicativityHomogeneity) {
    std::mt19937_64 rng(7);
    for (auto spec : {zeta8_spec(), zeta5_spec(), zeta12_spec()}) {
        auto K = build_field(spec);
        for (int t = 0; t < 1000; ++t) {
            auto x = rand_vec(rng, K.n, 50);
            auto y = rand_vec(rng, K.n, 50);
            i64 nx = norm_KQ(K, x).value;
            ASSERT_EQ(norm(relnorm_KL(K, x), K.params), nx);
            ASSERT_EQ(K.NKQ(x), nx);
            auto xs = rand_vec(rng, K.n, 6), ys = rand_vec(rng, K.n, 6);
            ASSERT_EQ(norm_KQ(K, K.multiply(xs, ys)).value, norm_KQ(K, xs).value * norm_KQ(K, ys).value);
            i64 lam = 1 + t % 4;
            std::vector<i64> lx = x;
            for (auto& c : lx) c *= lam;
            ASSERT_EQ(K.N1(lx), ipow(lam, K.n / 2) * K.N1(x));
            ASSERT_EQ(K.NKQ(lx), ipow(lam, K.n) * nx);
        }
    }
}

TEST(NormForms, EulerIdentity) {
    std::mt19937_64 rng(9);
    auto K = build_field(zeta8_spec());
    for (int t = 0; t < 100; ++t) {
        auto x = rand_vec(rng, 4, 40);
        auto r = norm_KQ(K, x);
        i64 s = 0;
        for (int i = 0; i < 4; ++i) s += x[i] * r.grad[i];
        EXPECT_EQ(s, 4 * r.value);
    }
}

TEST(NormForms, GradientFiniteDifference) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> d(-2, 2);
    auto K = build_field(zeta5_spec());
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(4);
        for (auto& c : x) c = d(rng);
        for (int i = 0; i < 4; ++i) {
            double h = 1e-5;
            auto xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            double fd = (K.NKQ(xp) - K.NKQ(xm)) / (2 * h);
            double g = K.grad_NKQ[i](x);
            EXPECT_NEAR(fd, g, 1e-6 * std::max(1.0, std::abs(g)));
        }
    }
}

TEST(NormForms, FlatEvaluatorAgrees) {
    std::mt19937_64 rng(17);
    auto K = build_field(zeta12_spec());
    for (int t = 0; t < 300; ++t) {
        auto x = rand_vec(rng, 4, 30);
        for (i64 q : {2, 7, 9, 13, 100}) {
            EXPECT_EQ(K.flat_N1.eval_mod(x.data(), q), mod(K.N1(x), q));
            EXPECT_EQ(K.flat_NKQ.eval_mod(x.data(), q), mod(K.NKQ(x), q));
        }
        std::vector<double> xd(x.begin(), x.end());
        EXPECT_DOUBLE_EQ(K.flat_N2.eval(xd.data()), static_cast<double>(K.N2(x)));
    }
}

TEST(NormForms, JsonRoundTrip) {
    auto s = zeta8_spec();
    auto j = field_spec_json(s);
    auto t = parse_field_spec(j);
    EXPECT_EQ(t.mul_tensor, s.mul_tensor);
    auto f = load_field_spec(std::string(NORMCOUNT_FIXTURES) + "/zeta8.json");
    EXPECT_EQ(f.mul_tensor, s.mul_tensor);
    EXPECT_EQ(f.tau_coords, s.tau_coords);
}
