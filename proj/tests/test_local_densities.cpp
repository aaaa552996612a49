#include <gtest/gtest.h>

#include <random>

#include "normcount/local_densities.hpp"

using namespace normcount;

namespace {

FieldCtx zeta8() { return build_field(zeta8_spec()); }

std::vector<std::vector<i64>> all_vectors(int n, i64 q, i64 r = 1, const std::vector<i64>& cls = {}) {
    std::vector<std::vector<i64>> out;
    for_each_point(n, q, r, cls.empty() ? std::vector<i64>(static_cast<size_t>(n), 0) : cls,
                   [&](const i64* x) { out.emplace_back(x, x + n); });
    return out;
}

// 2^-kappa (tr(delta N(u) N(v)) - 2 N(w)) through the determinant norm and quad_ring arithmetic
BigInt F_oracle(const FieldCtx& K, const QuadElem& Nv, i64 NKQw, const QuadElem& Nu) {
    QuadElem d = K.delta_int();
    QuadElem z = mul(mul(d, Nu, K.params), Nv, K.params);
    i64 f = trace(z, K.params) - 2 * NKQw;
    int k = kappa(K.params);
    EXPECT_EQ(f % (k ? 2 : 1), 0);
    return BigInt(f / (k ? 2 : 1));
}

struct Block {
    std::vector<i64> x;
    QuadElem N;
    i64 NKQ;
};

std::vector<Block> blocks(const FieldCtx& K, i64 m, i64 r, const std::vector<i64>& cls) {
    std::vector<Block> b;
    for (auto& x : all_vectors(K.n, m, r, cls)) b.push_back({x, relnorm_KL(K, x), norm_KQ(K, x).value});
    return b;
}

// whole-space enumeration of M(p^beta, p^mu)
BigInt brute_M(const FieldCtx& K, const MData& md, i64 p, int beta) {
    MData l = local_mdata(md, p);
    i64 m = ipow(p, beta);
    auto V = blocks(K, m, l.M, l.v), W = blocks(K, m, l.M, l.w), U = blocks(K, m, l.M, l.u);
    BigInt cnt = 0;
    for (auto& v : V) {
        if (mod(v.N.c1, p) == 0 && mod(v.N.c2, p) == 0) continue;
        for (auto& w : W)
            for (auto& u : U)
                if (F_oracle(K, v.N, w.NKQ, u.N) % m == 0) ++cnt;
    }
    return cnt;
}

MData mdata2(const FieldCtx& K) { return default_mdata(K, augment_modulus(K.params, 1)); }

}  // namespace

TEST(LocalDensities, KappaAndAugment) {
    auto K = zeta8();
    EXPECT_EQ(kappa(K.params), 1);
    EXPECT_EQ(augment_modulus(K.params, 1), 2);
    EXPECT_EQ(augment_modulus(make_params(5), 3), 30);
    auto md = mdata2(K);
    EXPECT_EQ(md.M, 2);
    EXPECT_EQ(md.v, unit_vector(4));
    EXPECT_TRUE(mdata_consistent(K, md));
}

TEST(LocalDensities, HistogramMass) {
    auto K = zeta8();
    auto h = norm_histogram(K, false, 2);
    EXPECT_EQ(h.mass(), 16);
    std::vector<i64> brute(2, 0);
    for (auto& x : all_vectors(4, 2)) ++brute[static_cast<size_t>(mod(norm_KQ(K, x).value, 2))];
    EXPECT_EQ(h.table, brute);
    EXPECT_EQ(norm_histogram(K, true, 1).mass(), 1);
    EXPECT_EQ(norm_histogram(K, true, 2, std::make_pair(i64(2), unit_vector(4))).mass(), 1);
    EXPECT_EQ(norm_histogram(K, true, 9, std::make_pair(i64(3), unit_vector(4))).mass(), 81);
    EXPECT_THROW(norm_histogram(K, true, 101), Error);
}

TEST(LocalDensities, RhoSumsAndConsistency) {
    auto K = zeta8();
    for (i64 M : {1, 2}) {
        LocalDensities D(K, M == 1 ? MData{} : mdata2(K));
        EXPECT_EQ(D.rho({0, 0}, 1), Rat(1));
        for (i64 q = 1; q <= 8; ++q) {
            Rat s = 0;
            for (auto& r : D.rho_table(q)) s += r;
            EXPECT_EQ(s, Rat(1)) << q;
        }
        for (i64 r = 1; r <= 3; ++r)
            for (i64 s = 1; s <= 3; ++s) {
                auto big = D.rho_table(r * s), small = D.rho_table(r);
                for (i64 z1 = 0; z1 < r; ++z1)
                    for (i64 z2 = 0; z2 < r; ++z2) {
                        Rat acc = 0;
                        for (i64 y1 = z1; y1 < r * s; y1 += r)
                            for (i64 y2 = z2; y2 < r * s; y2 += r) acc += big[static_cast<size_t>(y1 * r * s + y2)];
                        EXPECT_EQ(acc, small[static_cast<size_t>(z1 * r + z2)]);
                    }
            }
    }
    // direct enumeration at q = 2
    LocalDensities D(K, MData{});
    i64 cnt = 0;
    for (auto& x : all_vectors(4, 2)) {
        auto N = relnorm_KL(K, x);
        if (mod(N.c1, 2) == 1 && mod(N.c2, 2) == 0) ++cnt;
    }
    EXPECT_EQ(D.rho({1, 0}, 2), rat(cnt, 16));
}

TEST(LocalDensities, RhoRationalDelta) {
    auto s = zeta8_spec();
    s.delta = {2, 5, -1, 5};
    auto K = build_field(s);
    LocalDensities D(K, MData{});
    Rat tot = 0;
    for (auto& r : D.rho_table(3)) tot += r;
    EXPECT_EQ(tot, Rat(1));
    EXPECT_THROW(D.rho_table(5), Error);
}

TEST(LocalDensities, CountR) {
    auto K = zeta8();
    LocalDensities D(K, MData{});
    EXPECT_EQ(D.count_R(1), 1);
    i64 brute = 0;
    for (auto& x : all_vectors(4, 2)) {
        auto N = relnorm_KL(K, x);
        if (mod(N.c1, 2) == 0 && mod(N.c2, 2) == 0) ++brute;
    }
    EXPECT_EQ(D.count_R(2), brute);
    EXPECT_LT(D.count_R(2), 16);
    // 3 is inert in Q(i) and splits in K: two primes of norm 81
    EXPECT_EQ(D.count_R(3), 17);
    EXPECT_EQ(D.count_R(5), 1);
}

TEST(LocalDensities, CountMAgainstWholeSpace) {
    auto K = zeta8();
    for (i64 M : {1, 2}) {
        MData md = M == 1 ? MData{} : mdata2(K);
        LocalDensities D(K, md);
        EXPECT_EQ(D.count_M(2, 1), brute_M(K, D.mdata(), 2, 1));
        EXPECT_EQ(D.count_M(3, 1), brute_M(K, D.mdata(), 3, 1));
    }
    LocalDensities D2(K, mdata2(K));
    EXPECT_EQ(D2.count_M(2, 2), brute_M(K, D2.mdata(), 2, 2));
    EXPECT_EQ(D2.count_M(2, 1), BigInt(1));
    // M(3,1) is close to 3^11
    BigInt m3 = D2.count_M(3, 1), main = pow(BigInt(3), 11);
    EXPECT_LE(abs(m3 - main) * 3, main);
}

TEST(LocalDensities, CountMRationalDeltaWholeSpace) {
    auto s = zeta8_spec();
    s.delta = {2, 1, 1, 1};
    auto K = build_field(s);
    LocalDensities D(K, MData{});
    EXPECT_EQ(D.count_M(3, 1), brute_M(K, D.mdata(), 3, 1));
}

TEST(LocalDensities, NMFactorization) {
    auto K = zeta8();
    LocalDensities D(K, MData{});
    EXPECT_EQ(D.count_NM(1, 1), BigInt(1));
    // k coprime to u M splits off as R(k) k^{2n}
    EXPECT_EQ(D.count_NM(3, 2), D.count_NM(1, 2) * D.count_R(3) * pow(BigInt(3), 8));
    EXPECT_EQ(D.count_NM(5, 3), D.count_NM(1, 3) * D.count_R(5) * pow(BigInt(5), 8));
    // with M = 1 and k = 1 the count is a sum over trace classes of histogram products
    BigInt brute = 0;
    auto V = all_vectors(4, 2);
    for (auto& v : V)
        for (auto& w : V)
            for (auto& u : V)
                if (F_oracle(K, relnorm_KL(K, v), norm_KQ(K, w).value, relnorm_KL(K, u)) % 2 == 0) ++brute;
    EXPECT_EQ(D.count_NM(1, 2), brute);
}

TEST(LocalDensities, F0Basics) {
    auto K = zeta8();
    LocalDensities D(K, MData{});
    EXPECT_EQ(D.f0(1), Rat(1));
    EXPECT_EQ(D.f0(6), D.f0(2) * D.f0(3));
    EXPECT_EQ(D.f0(10), D.f0(2) * D.f0(5));
    // f0(p, 1) from the level-one identity
    i64 p = 3;
    Rat R = rat(D.count_R(p), 81);
    Rat expect = Rat(D.count_M(p, 1)) / rpow(Rat(p), 11) / (1 - R) - 1;
    EXPECT_EQ(D.f0(3), expect);
}

TEST(LocalDensities, F0TwoVariableMultiplicativity) {
    auto K = zeta8();
    LocalDensities D(K, mdata2(K));
    MData l2 = local_mdata(D.mdata(), 2), l3 = local_mdata(D.mdata(), 3);
    EXPECT_EQ(D.f0(3), D.f0(1, &l2) * D.f0(3, &l3));
    EXPECT_EQ(D.f0(6), D.f0(2, &l2) * D.f0(3, &l3));
    EXPECT_EQ(D.f0(4), D.f0(4, &l2));
}

TEST(LocalDensities, LocalIdentity) {
    auto K = zeta8();
    for (i64 M : {1, 2}) {
        LocalDensities D(K, M == 1 ? MData{} : mdata2(K));
        for (i64 p : {2, 3})
            for (int beta : {1, 2}) {
                auto [lhs, rhs] = D.fsum_identity(p, beta);
                EXPECT_EQ(lhs, rhs) << "M=" << M << " p=" << p << " beta=" << beta;
            }
    }
}

TEST(LocalDensities, SigmaPAndHensel) {
    auto K = zeta8();
    LocalDensities D(K, MData{});
    auto s = D.sigma_p(3, 2);
    EXPECT_EQ(s.counts.size(), 2u);
    EXPECT_EQ(s.sigma, Rat(s.counts[1]) / rpow(Rat(3), 22));
    EXPECT_GT(s.sigma, 0);
    auto h = D.hensel_solvable(5);
    ASSERT_TRUE(h.solvable);
    // the witness is on the variety with p not dividing N(v)
    std::vector<i64> v(h.witness.begin(), h.witness.begin() + 4), w(h.witness.begin() + 4, h.witness.begin() + 8),
        u(h.witness.begin() + 8, h.witness.end());
    EXPECT_EQ(F_oracle(K, relnorm_KL(K, v), norm_KQ(K, w).value, relnorm_KL(K, u)) % 5, 0);
    EXPECT_EQ(D.F_exact(h.witness) % 5, 0);
    bool nz = false;
    for (i64 g : h.gradient_mod_p) nz |= g != 0;
    EXPECT_TRUE(nz);
    // all points forced to be singular by the congruence data
    MData bad{3, std::vector<i64>(4, 0), unit_vector(4), std::vector<i64>(4, 0)};
    LocalDensities B(K, bad);
    EXPECT_FALSE(B.hensel_solvable(3).solvable);
}

TEST(LocalDensities, FExactMatchesOracle) {
    auto K = zeta8();
    LocalDensities D(K, MData{});
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<i64> d(-9, 9);
    for (int t = 0; t < 200; ++t) {
        std::vector<i64> x(12);
        for (auto& c : x) c = d(rng);
        std::vector<i64> v(x.begin(), x.begin() + 4), w(x.begin() + 4, x.begin() + 8), u(x.begin() + 8, x.end());
        ASSERT_EQ(D.F_exact(x), F_oracle(K, relnorm_KL(K, v), norm_KQ(K, w).value, relnorm_KL(K, u)));
        ASSERT_EQ(F_mod(K, v.data(), w.data(), u.data(), 7), static_cast<i64>(mod(static_cast<i64>(D.F_exact(x) % 7), 7)));
    }
}

TEST(LocalDensities, SingularSeriesSmall) {
    auto K = zeta8();
    LocalDensities D(K, mdata2(K));
    auto r = singular_series(D, 2, 5, 2, 13, 8);
    EXPECT_GT(r.c.lo, 0);
    EXPECT_LE(r.c.hi, 1);
    EXPECT_LE(r.c.lo, r.c.hi);
    EXPECT_EQ(r.f0_values[0], D.f0(1));
    EXPECT_EQ(r.S_trunc_core, r.c_core * (D.f0(1) + D.f0(2)));
    EXPECT_TRUE(r.primes[0].sp.stabilized);
    EXPECT_EQ(r.primes[0].sp.sigma, rat(1, 1024));
    EXPECT_TRUE(r.consistent);
    auto j = to_json(r);
    EXPECT_EQ(j["primes"].size(), 3u);
}
