#include <gtest/gtest.h>

#include <random>

#include "normcount/counting.hpp"

using namespace normcount;

namespace {

const FieldCtx& zeta8() {
    static FieldCtx K = build_field(zeta8_spec());
    return K;
}

// exact tr(delta N(u) N(v))
i64 trace_lhs(const FieldCtx& K, const i64* u, const i64* v) {
    QuadElem x = mul(K.delta_int(), QuadElem{K.dense_N1.eval(u), K.dense_N2.eval(u)}, K.params);
    return trace(mul(x, QuadElem{K.dense_N1.eval(v), K.dense_N2.eval(v)}, K.params), K.params);
}

std::vector<double> unit_w(const FieldCtx& K, const std::vector<double>& u, const std::vector<double>& v) {
    return solve_w_center(K, u, v, {1, 0, 0, 0});
}

ExperimentConfig micro(i64 V, double G = 2) {
    const FieldCtx& K = zeta8();
    std::vector<double> u{1, .1, .1, .1}, v{1, 0, 0, 0};
    return make_experiment(K, V, 1, G, default_mdata(K, 2), u, v, unit_w(K, u, v), 1);
}

std::vector<std::vector<i64>> points(const std::vector<i64>& flat, int n) {
    std::vector<std::vector<i64>> out;
    for (size_t i = 0; i < flat.size(); i += static_cast<size_t>(n)) out.emplace_back(flat.begin() + static_cast<long>(i), flat.begin() + static_cast<long>(i) + n);
    return out;
}

}  // namespace

TEST(Counting, EnumerateBoxIsOpenAndRespectsClasses) {
    auto pts = points(enumerate_box({0.5, 2.0}, 1.5), 2);
    // x in (-1, 2), y in (0.5, 3.5)
    EXPECT_EQ(pts.size(), 2u * 3u);
    std::vector<i64> cls{1, 0};
    auto odd = points(enumerate_box({3.0, 3.0}, 3.0, 2, &cls), 2);
    for (auto& p : odd) {
        EXPECT_EQ(mod(p[0], 2), 1);
        EXPECT_EQ(mod(p[1], 2), 0);
        EXPECT_LT(std::abs(p[0] - 3.0), 3.0);
    }
    EXPECT_EQ(odd.size(), 3u * 2u);
}

TEST(Counting, SkewTraceMatchesCoefficients) {
    const FieldCtx& K = zeta8();
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<i64> d(-9, 9);
    for (int t = 0; t < 200; ++t) {
        std::vector<i64> v(4), w(4), u(4);
        for (auto* z : {&u, &v, &w})
            for (auto& c : *z) c = d(rng);
        AB ab = coeffs_ab(K, v, w);
        QuadElem x = mul(K.delta_int(), QuadElem{K.dense_N1.eval(u.data()), K.dense_N2.eval(u.data())}, K.params);
        QuadElem y = beta_key(K, v.data());
        i64 lhs = trace_lhs(K, u.data(), v.data());
        EXPECT_EQ(lhs, ab.a1 * x.c1 + ab.a2 * x.c2);
        EXPECT_EQ(lhs, x.c2 * y.c1 - x.c1 * y.c2);
        EXPECT_EQ(ab.b, 2 * K.dense_NKQ.eval(w.data()));
    }
}

TEST(Counting, LambdaIndexMatchesMap) {
    std::vector<std::pair<i64, i64>> lam{{-40, 3}, {-8, 1}, {0, 400}, {24, 2}, {1000, 7}};
    LambdaIndex idx(lam);
    std::map<i64, i64> m(lam.begin(), lam.end());
    for (i64 l = -60; l <= 1100; ++l) EXPECT_EQ(idx(l), m.count(l) ? m[l] : 0) << l;
    EXPECT_THROW(LambdaIndex({{0, 1}, {1, 1}, {i64{1} << 40, 1}}), Error);
}

TEST(Counting, ExperimentValidation) {
    const FieldCtx& K = zeta8();
    std::vector<double> u{1, .1, .1, .1}, v{1, 0, 0, 0};
    auto w = unit_w(K, u, v);
    auto md = default_mdata(K, 2);
    auto c = make_experiment(K, 7, 1, 2, md, u, v, w);
    EXPECT_EQ(c.H, 1);
    EXPECT_DOUBLE_EQ(c.U, 7);
    EXPECT_DOUBLE_EQ(c.W, 7);
    EXPECT_EQ(c.Q, 1);
    EXPECT_EQ(c.k_cut, 1);
    EXPECT_LT(std::abs(real_residual(K, c.uR, c.vR, c.wR)), 1e-12);
    EXPECT_THROW(make_experiment(K, 8, 1, 2, md, u, v, w), Error);
    EXPECT_THROW(make_experiment(K, 7, 3, 2, md, u, v, w), Error);  // H = 9 > V
    EXPECT_THROW(make_experiment(K, 7, 1, 2, default_mdata(K, 3), u, v, w), Error);
    auto bad = md;
    bad.v = {1, 1, 0, 0};
    try {
        make_experiment(K, 7, 1, 2, bad, u, v, w);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "BadCongruence");
    }
    try {
        make_experiment(K, 7, 1, 2, md, u, {0, 0, 0, 0}, w);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code, "CenterOnNullcone");
    }
    auto w2 = w;
    w2[0] *= 1.5;
    EXPECT_THROW(make_experiment(K, 7, 1, 2, md, u, v, w2), Error);
}

class Micro : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        cfg = new ExperimentConfig(micro(9));
        D = new LocalDensities(zeta8(), cfg->md);
        fam = new AlphaFamily(alpha_family(zeta8(), cfg->wf, cfg->md, 2, *D, 96, 24));
        bl = new BetaLambda(beta_lambda(*cfg));
    }
    static void TearDownTestSuite() {
        delete bl;
        delete fam;
        delete D;
        delete cfg;
    }
    static ExperimentConfig* cfg;
    static LocalDensities* D;
    static AlphaFamily* fam;
    static BetaLambda* bl;
};
ExperimentConfig* Micro::cfg = nullptr;
LocalDensities* Micro::D = nullptr;
AlphaFamily* Micro::fam = nullptr;
BetaLambda* Micro::bl = nullptr;

TEST_F(Micro, DirectCountMatchesTripleLoop) {
    const FieldCtx& K = zeta8();
    std::vector<std::vector<i64>> us;
    for_each_region_point(cfg->wf, cfg->md, [&](const i64* u) { us.emplace_back(u, u + 4); });
    auto vs = points(enumerate_box(cfg->v_center(), cfg->v_half(), 2, &cfg->md.v), 4);
    auto ws = points(enumerate_box(cfg->w_center(), cfg->w_half(), 2, &cfg->md.w), 4);
    ASSERT_FALSE(us.empty());
    ASSERT_FALSE(vs.empty());
    ASSERT_FALSE(ws.empty());
    std::map<i64, i64> lam;
    for (auto& w : ws) ++lam[2 * K.dense_NKQ.eval(w.data())];
    i64 all = 0, cop = 0;
    for (auto& v : vs) {
        bool e = std::gcd(K.dense_N1.eval(v.data()), K.dense_N2.eval(v.data())) == 1;
        for (auto& u : us) {
            auto it = lam.find(trace_lhs(K, u.data(), v.data()));
            if (it == lam.end()) continue;
            all += it->second;
            if (e) cop += it->second;
        }
    }
    auto dc = count_direct(*cfg, *bl, fam->pts, 2, 1e12, 16);
    EXPECT_EQ(dc.N, all);
    EXPECT_EQ(dc.N_bilinear, cop);
    EXPECT_GT(all, 0);
    EXPECT_EQ(bl->n_v_all, static_cast<i64>(vs.size()));
    EXPECT_EQ(bl->n_w, static_cast<i64>(ws.size()));
    ASSERT_FALSE(dc.samples.empty());
    for (auto& t : dc.samples) {
        EXPECT_EQ(trace_lhs(K, t.u.data(), t.v.data()), 2 * K.dense_NKQ.eval(t.w.data()));
        EXPECT_TRUE(cfg->wf.in_region(std::vector<double>(t.u.begin(), t.u.end()).data()));
    }
    EXPECT_THROW(count_direct(*cfg, *bl, fam->pts, 1, 1.0), Error);
}

TEST_F(Micro, GeneralBilinearAgreesWithKernel) {
    Z2Map<i64> alpha, beta;
    for (auto& p : fam->pts) alpha.push_back({{p.x1, p.x2}, p.count});
    for (auto& k : bl->keys)
        if (k.beta) beta.push_back({k.y, k.beta});
    std::unordered_map<i64, i64> lam(bl->lambda.begin(), bl->lambda.end());
    auto dc = count_direct(*cfg, *bl, fam->pts, 1, 1e12);
    EXPECT_EQ(bilinear_general(alpha, beta, lam, Mat2{0, -1, 1, 0}, INT64_MAX), dc.N_bilinear);
    // transposed form with swapped roles
    Z2Map<i64> beta_t;
    for (auto& [y, b] : beta) beta_t.push_back({{-y.c2, y.c1}, b});
    EXPECT_EQ(bilinear_general(alpha, beta_t, lam, Mat2{1, 0, 0, 1}, INT64_MAX), dc.N_bilinear);
    EXPECT_THROW(bilinear_general(alpha, beta, lam, Mat2{2, 0, 0, 1}, 1), Error);
    // the gcd cut removes keys
    i64 cut = bilinear_general(alpha, beta, lam, Mat2{0, -1, 1, 0}, 1);
    EXPECT_LE(std::abs(cut), std::abs(dc.N_bilinear) + 0);
}

TEST_F(Micro, LineSumsMatchPointwise) {
    IRect R = table_rect(fam->table);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto& k = bl->keys[rng() % bl->keys.size()];
        i64 a1 = -k.y.c2, a2 = k.y.c1;
        i64 l = bl->lambda[rng() % bl->lambda.size()].first;
        double brute = 0;
        for (i64 x1 = R.x1lo; x1 <= R.x1hi; ++x1) {
            if (a2 == 0) {
                if (a1 * x1 != l) continue;
                for (i64 x2 = R.x2lo; x2 <= R.x2hi; ++x2) brute += fam->alpha_hat(x1, x2);
                continue;
            }
            i64 r = l - a1 * x1;
            if (r % a2) continue;
            brute += fam->alpha_hat(x1, r / a2);
        }
        EXPECT_NEAR(line_sum(*fam, a1, a2, l), brute, 1e-9 * (1 + std::abs(brute)));
    }
    EXPECT_NEAR(line_sum(*fam, 0, 1, 0), [&] {
        double s = 0;
        for (i64 x1 = R.x1lo; x1 <= R.x1hi; ++x1) s += fam->alpha_hat(x1, 0);
        return s;
    }(), 1e-9);
    EXPECT_THROW(line_sum(*fam, 0, 0, 1), Error);
}

TEST_F(Micro, MainTermMatchesBruteForce) {
    auto dc = count_direct(*cfg, *bl, fam->pts, 1, 1e12);
    auto br = bilinear_count(*cfg, *fam, *bl, dc.S, 2);
    IRect R = table_rect(fam->table);
    std::unordered_map<i64, i64> lam(bl->lambda.begin(), bl->lambda.end());
    double M = 0;
    for (i64 x1 = R.x1lo; x1 <= R.x1hi; ++x1)
        for (i64 x2 = R.x2lo; x2 <= R.x2hi; ++x2) {
            double ah = fam->alpha_hat(x1, x2);
            if (ah == 0) continue;
            for (auto& k : bl->keys) {
                if (!k.beta) continue;
                auto it = lam.find(x2 * k.y.c1 - x1 * k.y.c2);
                if (it != lam.end()) M += ah * static_cast<double>(k.beta * it->second);
            }
        }
    EXPECT_NEAR(br.M, M, 1e-8 * (1 + std::abs(M)));
    EXPECT_EQ(br.N, dc.N_bilinear);
    EXPECT_LT(br.identity_residual, 1e-12);
    EXPECT_NEAR(br.M + br.E, static_cast<double>(br.N), 1e-6 * (1 + std::abs(static_cast<double>(br.N))));
}

TEST_F(Micro, IntegralMatchesRadonTable) {
    const FieldCtx& K = zeta8();
    const OmegaTable& T = fam->table;
    auto om = [&](double x, double y) { return T(x, y); };
    double radius = 0;
    for (double x : {T.x0, T.x0 + (T.nx - 1) * T.h})
        for (double y : {T.y0, T.y0 + (T.ny - 1) * T.h}) radius = std::max(radius, T.scale * std::hypot(x, y));
    auto vs = points(enumerate_box(cfg->v_center(), cfg->v_half()), 4);
    auto ws = points(enumerate_box(cfg->w_center(), cfg->w_half()), 4);
    double thl = 1e9, thh = -1e9;
    for (auto& v : vs) {
        AB ab = coeffs_ab(K, v, ws[0]);
        double th = canonical_angle(static_cast<double>(ab.a1), static_cast<double>(ab.a2));
        thl = std::min(thl, th);
        thh = std::max(thh, th);
    }
    RadonTable rad = build_radon(T, thl, thh);
    double brute = 0, tab = 0, peak = 0;
    for (size_t i = 0; i < vs.size(); i += 37)
        for (size_t j = 0; j < ws.size(); j += 53) {
            AB ab = coeffs_ab(K, vs[i], ws[j]);
            double a = integral_I(om, radius, ab.a1, ab.a2, static_cast<double>(ab.b));
            double b = rad.P(static_cast<double>(ab.a1), static_cast<double>(ab.a2), static_cast<double>(ab.b), T.scale);
            brute += a;
            tab += b;
            peak = std::max(peak, a);
        }
    ASSERT_GT(brute, 0);
    EXPECT_NEAR(tab / brute, 1.0, 0.02);
    // the line integral integrates back to the mass: int I(a, b) db = |a|-independent mass
    double mass = 0;
    for (int i = 0; i < T.nx; ++i)
        for (int j = 0; j < T.ny; ++j) mass += T.at(i, j);
    mass *= T.h * T.h * T.scale * T.scale;
    double tot = 0, db = radius / 400;
    for (double b = -5 * radius; b <= 5 * radius; b += db) tot += integral_I(om, radius, 3, 4, b) * db;
    EXPECT_NEAR(tot / mass, 1.0, 0.01);
    EXPECT_THROW(integral_I(om, radius, 0, 0, 1), Error);
    EXPECT_NEAR(integral_I(om, radius, 5, 0, 7.0), integral_I(om, radius, -5, 0, -7.0), 1e-12);
}

TEST(Counting, SingularIntegralMatchesPairSum) {
    const FieldCtx& K = zeta8();
    auto c = micro(5);
    auto T = build_omega_table(c.wf, 96, 24);
    auto om = [&](double x, double y) { return T(x, y); };
    double radius = 0;
    for (double x : {T.x0, T.x0 + (T.nx - 1) * T.h})
        for (double y : {T.y0, T.y0 + (T.ny - 1) * T.h}) radius = std::max(radius, T.scale * std::hypot(x, y));
    auto si = singular_integral(c, T, 2, 2);
    auto vs = points(enumerate_box(c.v_center(), c.v_half()), 4);
    auto ws = points(enumerate_box(c.w_center(), c.w_half()), 4);
    EXPECT_EQ(si.n_v, static_cast<i64>(vs.size()));
    EXPECT_EQ(si.n_w, static_cast<i64>(ws.size()));
    // I depends on v through a and on w through b only
    std::map<std::pair<i64, i64>, i64> as;
    std::map<i64, i64> bs;
    for (auto& v : vs) {
        AB ab = coeffs_ab(K, v, ws[0]);
        ++as[{ab.a1, ab.a2}];
    }
    for (auto& w : ws) ++bs[2 * K.dense_NKQ.eval(w.data())];
    double brute = 0;
    for (auto& [a, ca] : as)
        for (auto& [b, cb] : bs) brute += static_cast<double>(ca * cb) * integral_I(om, radius, a.first, a.second, static_cast<double>(b));
    EXPECT_NEAR(si.sigma / brute, 1.0, 0.02);
    double s = 0;
    for (double x : si.cls) s += x;
    EXPECT_NEAR(s, si.sigma, 1e-9 * si.sigma);
    EXPECT_EQ(si.cls.size(), 256u);
    EXPECT_NEAR(congruence_I_sum(si, 0, 0), si.cls[0], 0);
    EXPECT_THROW(congruence_I_sum(si, 16, 0), Error);
    auto s1 = singular_integral(c, T, 1, 1);
    EXPECT_NEAR(s1.sigma / si.sigma, 1.0, 1e-9);
}

TEST(Counting, TypeTwoSums) {
    Z2Map<i64> a{{{0, 0}, 2}, {{1, 0}, -1}, {{0, 1}, 3}, {{5, 5}, 1}};
    std::vector<IRect> one{{0, 5, 0, 5}};
    EXPECT_DOUBLE_EQ(T2_sum(a, 1, one), 25.0);
    // classes mod 2: (0,0) gets 2, (1,0) gets -1, (0,1) gets 3, (1,1) gets 1
    EXPECT_DOUBLE_EQ(T2_sum(a, 2, one), 4 + 1 + 9 + 1);
    auto sq = support_squares(a, 2);
    EXPECT_GE(T2_sum(a, 2, sq), 15.0);
    EXPECT_DOUBLE_EQ(T3_sum(a, 2, one), 25.0 + 4 * 15.0);
}

TEST(Counting, DirectCountGrowsAsBoxesGrow) {
    const FieldCtx& K = zeta8();
    i64 prev = -1;
    for (double G : {4.0, 3.0, 2.5, 2.0}) {
        auto c = micro(7, G);
        auto bl = beta_lambda(c);
        auto dc = count_direct(c, bl, alpha_points(K, c.wf, c.md), 1, 1e12);
        EXPECT_GE(dc.N, prev) << G;
        prev = dc.N;
    }
    EXPECT_GT(prev, 0);
}
