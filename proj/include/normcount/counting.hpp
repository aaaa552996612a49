#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "approx.hpp"

namespace normcount {

// integer points of the open sup-norm box |x - c| < h, optionally in the class cls mod M; flat, n per point
inline std::vector<i64> enumerate_box(const std::vector<double>& c, double h, i64 M = 1, const std::vector<i64>* cls = nullptr) {
    const size_t n = c.size();
    std::vector<i64> lo(n), hi(n), cur(n), out;
    for (size_t i = 0; i < n; ++i) {
        auto r = open_range(c[i] - h, c[i] + h);
        lo[i] = cls && M > 1 ? r.first + mod((*cls)[i] - r.first, M) : r.first;
        hi[i] = r.second;
        if (lo[i] > hi[i]) return out;
    }
    const i64 step = cls ? M : 1;
    cur = lo;
    for (;;) {
        out.insert(out.end(), cur.begin(), cur.end());
        size_t k = 0;
        while (k < n) {
            cur[k] += step;
            if (cur[k] <= hi[k]) break;
            cur[k] = lo[k];
            ++k;
        }
        if (k == n) return out;
    }
}

inline void real_relnorm(const FieldCtx& K, const std::vector<double>& x, double out[2]) {
    out[0] = RealForm(K.dense_N1).eval(x.data());
    out[1] = RealForm(K.dense_N2).eval(x.data());
}

struct ExperimentConfig {
    const FieldCtx* K = nullptr;
    i64 V = 1, H0 = 1, H = 1;
    double G = 1, U = 1, W = 1;
    i64 Q = 1, k_cut = 1;
    MData md;
    std::vector<double> uR, vR, wR;
    WeightFn wf;
    int kappa = 0;

    int n() const { return K->n; }
    std::vector<double> v_center() const {
        std::vector<double> c(vR);
        for (auto& x : c) x *= static_cast<double>(V);
        return c;
    }
    std::vector<double> w_center() const {
        std::vector<double> c(wR);
        for (auto& x : c) x *= W;
        return c;
    }
    double v_half() const { return static_cast<double>(V) / G; }
    double w_half() const { return W / G; }
};

// residual of the real equation at the unit-scale centers, relative to 2 N(w)
inline double real_residual(const FieldCtx& K, const std::vector<double>& u, const std::vector<double>& v, const std::vector<double>& w) {
    double nu[2], nv[2];
    real_relnorm(K, u, nu);
    real_relnorm(K, v, nv);
    const auto& P = K.params;
    double d1 = to_double(K.delta.c1), d2 = to_double(K.delta.c2);
    // z = delta N(u) N(v)
    double p1 = nu[0] * nv[0] - static_cast<double>(P.norm_tau) * nu[1] * nv[1];
    double p2 = nu[0] * nv[1] + nu[1] * nv[0] + static_cast<double>(P.tr_tau) * nu[1] * nv[1];
    double z1 = d1 * p1 - static_cast<double>(P.norm_tau) * d2 * p2;
    double z2 = d1 * p2 + d2 * p1 + static_cast<double>(P.tr_tau) * d2 * p2;
    double tr = 2 * z1 + static_cast<double>(P.tr_tau) * z2;
    double rhs = 2 * RealForm(K.dense_NKQ).eval(w.data());
    return (tr - rhs) / std::max(1e-300, std::abs(rhs));
}

// choose w on the ray through w_dir with 2 N(w) = tr(delta N(u) N(v))
inline std::vector<double> solve_w_center(const FieldCtx& K, const std::vector<double>& u, const std::vector<double>& v,
                                          std::vector<double> w_dir) {
    double r0 = real_residual(K, u, v, w_dir);
    // tr = 2 N(w_dir) (1 + r0); scale w_dir by (1 + r0)^(1/n)
    double f = 1 + r0;
    if (f <= 0) fail("CenterOnNullcone", "the w direction has the wrong sign of norm");
    double s = std::pow(f, 1.0 / K.n);
    for (auto& x : w_dir) x *= s;
    return w_dir;
}

inline ExperimentConfig make_experiment(const FieldCtx& K, i64 V, i64 H0, double G, const MData& md, std::vector<double> uR,
                                        std::vector<double> vR, std::vector<double> wR, i64 Q = 0, i64 k_cut = 0, int nodes = 32) {
    const int n = K.n;
    if (static_cast<int>(uR.size()) != n || static_cast<int>(vR.size()) != n || static_cast<int>(wR.size()) != n)
        fail("BadArgument", "centers must have n coordinates");
    if (V < 1 || H0 < 1 || G < 1) fail("BadArgument", "V, H0 and G must be at least 1");
    const i64 M = md.M;
    if (mod(V, M) != 1 % M || mod(H0, M) != 1 % M) fail("BadArgument", "V and H0 must be 1 modulo M");
    for (i64 p : prime_divisors(2 * std::abs(K.params.dl_sq)))
        if (M % p != 0) fail("BadArgument", "M must contain every prime divisor of 2 D_L^2");
    ExperimentConfig c;
    c.K = &K;
    c.V = V;
    c.H0 = H0;
    c.H = H0 * H0;
    if (c.H > V) fail("BadArgument", "H = H0^2 must not exceed V");
    c.G = G;
    c.U = static_cast<double>(c.H * V);
    c.W = std::sqrt(static_cast<double>(c.H)) * static_cast<double>(V);
    c.md = md;
    for (auto* x : {&md.u, &md.v, &md.w})
        if (static_cast<int>(x->size()) != n) fail("BadArgument", "congruence data must have n coordinates");
    for (int i = 0; i < n; ++i)
        if (mod(md.v[static_cast<size_t>(i)] - (i == 0 ? 1 : 0), M) != 0) fail("BadCongruence", "v^(M) must be (1,0,...,0)");
    if (!mdata_consistent(K, md)) fail("BadCongruence", "congruence data does not solve the equation modulo M");
    auto nkq = [&](const std::vector<double>& x) { return RealForm(K.dense_NKQ).eval(x.data()); };
    double scale_u = 0, scale_w = 0, nl[2];
    for (double x : uR) scale_u = std::max(scale_u, std::abs(x));
    for (double x : wR) scale_w = std::max(scale_w, std::abs(x));
    real_relnorm(K, vR, nl);
    if (std::abs(nkq(uR)) <= 1e-12 * std::pow(scale_u, n) || std::abs(nkq(wR)) <= 1e-12 * std::pow(scale_w, n) || (nl[0] == 0 && nl[1] == 0))
        fail("CenterOnNullcone", "a center has vanishing norm");
    if (std::abs(real_residual(K, uR, vR, wR)) > 1e-9) fail("BadArgument", "the real centers do not satisfy the equation");
    c.wf = build_weight(K, c.U, G, uR, M, nodes);
    // the weight may move the u center slightly; w follows it
    c.uR = c.wf.center;
    c.vR = vR;
    c.wR = solve_w_center(K, c.uR, vR, wR);
    c.kappa = kappa(K.params);
    c.Q = Q > 0 ? Q : static_cast<i64>(std::ceil(std::pow(static_cast<double>(c.H), (n - 1) / 12.0) - 1e-12));
    c.k_cut = k_cut > 0 ? k_cut : static_cast<i64>(std::ceil(std::pow(static_cast<double>(c.H), n / 2.0) / static_cast<double>(c.Q) - 1e-12));
    return c;
}

struct AB {
    i64 a1, a2, b;
    int kappa;
};

inline AB coeffs_ab(const FieldCtx& K, const std::vector<i64>& v, const std::vector<i64>& w) {
    const auto& P = K.params;
    i64 n1 = K.dense_N1.eval(v.data()), n2 = K.dense_N2.eval(v.data());
    return {2 * n1 + P.tr_tau * n2, P.tr_tau * n1 + P.tr_tau2 * n2, 2 * K.dense_NKQ.eval(w.data()), kappa(P)};
}

// (N_{K/L}(v) D_L)^sigma
inline QuadElem beta_key(const FieldCtx& K, const i64* v) {
    QuadElem nv{K.dense_N1.eval(v), K.dense_N2.eval(v)};
    return conj(mul(nv, different(K.params), K.params), K.params);
}

struct BetaKey {
    QuadElem y;
    i64 beta = 0;      // with the coprimality condition
    i64 beta_all = 0;  // without it
};

struct BetaLambda {
    std::vector<BetaKey> keys;               // sorted by (y1, y2)
    std::vector<std::pair<i64, i64>> lambda;  // sorted (l, count)
    i64 E_measured = 0;
    i64 n_v = 0, n_v_all = 0, n_w = 0;
};

inline BetaLambda beta_lambda(const ExperimentConfig& c) {
    const FieldCtx& K = *c.K;
    const int n = K.n;
    BetaLambda r;
    auto vs = enumerate_box(c.v_center(), c.v_half(), c.md.M, &c.md.v);
    std::map<std::pair<i64, i64>, std::pair<i64, i64>> km;
    for (size_t i = 0; i < vs.size(); i += static_cast<size_t>(n)) {
        const i64* v = &vs[i];
        i64 n1 = K.dense_N1.eval(v), n2 = K.dense_N2.eval(v);
        QuadElem y = beta_key(K, v);
        auto& e = km[{y.c1, y.c2}];
        ++e.second;
        ++r.n_v_all;
        if (std::gcd(n1, n2) == 1) {
            ++e.first;
            ++r.n_v;
            r.E_measured = std::max(r.E_measured, std::gcd(y.c1, y.c2));
        }
    }
    for (auto& [y, e] : km) r.keys.push_back({{y.first, y.second}, e.first, e.second});
    auto ws = enumerate_box(c.w_center(), c.w_half(), c.md.M, &c.md.w);
    std::vector<i64> ls;
    for (size_t i = 0; i < ws.size(); i += static_cast<size_t>(n)) ls.push_back(2 * K.dense_NKQ.eval(&ws[i]));
    r.n_w = static_cast<i64>(ls.size());
    std::sort(ls.begin(), ls.end());
    for (size_t i = 0; i < ls.size();) {
        size_t j = i;
        while (j < ls.size() && ls[j] == ls[i]) ++j;
        r.lambda.push_back({ls[i], static_cast<i64>(j - i)});
        i = j;
    }
    if (r.n_v_all == 0 || r.n_w == 0) fail("EmptyBox", "the v or w box has no point in its congruence class");
    return r;
}

// fast membership and multiplicity for a sparse integer histogram
class LambdaIndex {
public:
    explicit LambdaIndex(const std::vector<std::pair<i64, i64>>& lam, double max_cells = 2e9) {
        if (lam.empty()) return;
        lmin_ = lam.front().first;
        i64 g = 0;
        for (auto& [l, c] : lam) g = std::gcd(g, l - lmin_);
        while (g > 0 && g % 2 == 0 && shift_ < 40) {
            g /= 2;
            ++shift_;
        }
        mask_ = (i64{1} << shift_) - 1;
        span_ = lam.back().first - lmin_;
        double cells = static_cast<double>(span_ >> shift_) + 1;
        if (cells > max_cells) fail("Budget", "the lambda support is too spread out for a dense index");
        size_t m = static_cast<size_t>(span_ >> shift_) + 1;
        bits_.assign((m + 63) / 64, 0);
        cnt_.assign(m, 0);
        for (auto& [l, c] : lam) {
            size_t k = static_cast<size_t>((l - lmin_) >> shift_);
            bits_[k >> 6] |= u64{1} << (k & 63);
            if (c >= 255) big_[l] = c;
            cnt_[k] = static_cast<std::uint8_t>(std::min<i64>(c, 255));
        }
    }
    i64 operator()(i64 l) const {
        i64 d = l - lmin_;
        if (d < 0 || d > span_ || (d & mask_)) return 0;
        size_t k = static_cast<size_t>(d >> shift_);
        if (!((bits_[k >> 6] >> (k & 63)) & 1)) return 0;
        return cnt_[k] == 255 ? big_.at(l) : cnt_[k];
    }

private:
    i64 lmin_ = 0, span_ = -1, mask_ = 0;
    int shift_ = 0;
    std::vector<u64> bits_;
    std::vector<std::uint8_t> cnt_;
    std::unordered_map<i64, i64> big_;
};

struct Hit {
    i64 x1, x2;
    size_t key;
    i64 l;
};

struct KernelResult {
    std::vector<i64> S;  // per key: sum_x alpha(x) lambda(skew_trace(x, y))
    std::vector<Hit> hits;
};

// per-key sums over the alpha support, processed in spatial tiles so the lambda lookups stay local
inline KernelResult pair_kernel(const std::vector<AlphaPoint>& pts, const std::vector<QuadElem>& keys, const LambdaIndex& lam,
                                int threads = 1, size_t max_hits = 0) {
    KernelResult r;
    r.S.assign(keys.size(), 0);
    if (pts.empty() || keys.empty()) return r;
    i64 x1lo = INT64_MAX, x1hi = INT64_MIN, x2lo = INT64_MAX, x2hi = INT64_MIN;
    for (auto& p : pts) {
        x1lo = std::min(x1lo, p.x1);
        x1hi = std::max(x1hi, p.x1);
        x2lo = std::min(x2lo, p.x2);
        x2hi = std::max(x2hi, p.x2);
    }
    double area = static_cast<double>(x1hi - x1lo + 1) * static_cast<double>(x2hi - x2lo + 1);
    i64 T = std::max<i64>(1, static_cast<i64>(std::sqrt(area * 8192.0 / static_cast<double>(pts.size()))));
    i64 nty = (x2hi - x2lo) / T + 1;
    std::vector<std::pair<i64, std::uint32_t>> order;
    order.reserve(pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
        order.push_back({((pts[i].x1 - x1lo) / T) * nty + (pts[i].x2 - x2lo) / T, static_cast<std::uint32_t>(i)});
    std::sort(order.begin(), order.end());
    std::vector<size_t> starts;
    for (size_t i = 0; i < order.size(); ++i)
        if (i == 0 || order[i].first != order[i - 1].first) starts.push_back(i);
    starts.push_back(order.size());
    std::mutex mu;
    parallel_for(static_cast<long>(starts.size() - 1), threads, [&](long t) {
        size_t b = starts[static_cast<size_t>(t)], e = starts[static_cast<size_t>(t) + 1];
        std::vector<i64> X1, X2, C;
        for (size_t i = b; i < e; ++i) {
            const auto& p = pts[order[i].second];
            X1.push_back(p.x1);
            X2.push_back(p.x2);
            C.push_back(p.count);
        }
        std::vector<i64> local(keys.size(), 0);
        std::vector<Hit> found;
        const size_t m = X1.size();
        for (size_t k = 0; k < keys.size(); ++k) {
            const i64 y1 = keys[k].c1, y2 = keys[k].c2;
            i64 s = 0;
            for (size_t i = 0; i < m; ++i) {
                i64 l = X2[i] * y1 - X1[i] * y2;
                i64 c = lam(l);
                if (c) {
                    s += c * C[i];
                    if (found.size() < max_hits) found.push_back({X1[i], X2[i], k, l});
                }
            }
            local[k] = s;
        }
        std::lock_guard<std::mutex> g(mu);
        for (size_t k = 0; k < keys.size(); ++k) r.S[k] += local[k];
        for (auto& h : found)
            if (r.hits.size() < max_hits) r.hits.push_back(h);
    });
    return r;
}

struct Triple {
    std::vector<i64> u, v, w;
};

struct DirectCount {
    i64 N = 0;           // without the coprimality condition
    i64 N_bilinear = 0;  // with it
    std::vector<i64> S;  // per key of BetaLambda
    std::vector<Triple> samples;
    double pairs = 0;
};

// recover (u, v, w) for kernel hits
inline std::vector<Triple> resolve_hits(const ExperimentConfig& c, const BetaLambda& bl, const std::vector<Hit>& hits) {
    const FieldCtx& K = *c.K;
    const int n = K.n;
    std::vector<Triple> out(hits.size());
    std::vector<bool> have_u(hits.size(), false), have_v(hits.size(), false), have_w(hits.size(), false);
    std::map<std::pair<i64, i64>, std::vector<size_t>> by_x;
    std::map<std::pair<i64, i64>, std::vector<size_t>> by_y;
    std::map<i64, std::vector<size_t>> by_l;
    for (size_t i = 0; i < hits.size(); ++i) {
        by_x[{hits[i].x1, hits[i].x2}].push_back(i);
        by_y[{bl.keys[hits[i].key].y.c1, bl.keys[hits[i].key].y.c2}].push_back(i);
        by_l[hits[i].l].push_back(i);
    }
    QuadElem d = K.delta_int();
    for_each_region_point(c.wf, c.md, [&](const i64* u) {
        QuadElem x = mul(d, QuadElem{K.dense_N1.eval(u), K.dense_N2.eval(u)}, K.params);
        auto it = by_x.find({x.c1, x.c2});
        if (it == by_x.end()) return;
        for (size_t i : it->second)
            if (!have_u[i]) {
                out[i].u.assign(u, u + n);
                have_u[i] = true;
            }
    });
    auto vs = enumerate_box(c.v_center(), c.v_half(), c.md.M, &c.md.v);
    for (size_t k = 0; k < vs.size(); k += static_cast<size_t>(n)) {
        QuadElem y = beta_key(K, &vs[k]);
        auto it = by_y.find({y.c1, y.c2});
        if (it == by_y.end()) continue;
        for (size_t i : it->second)
            if (!have_v[i]) {
                out[i].v.assign(vs.begin() + static_cast<long>(k), vs.begin() + static_cast<long>(k) + n);
                have_v[i] = true;
            }
    }
    auto ws = enumerate_box(c.w_center(), c.w_half(), c.md.M, &c.md.w);
    for (size_t k = 0; k < ws.size(); k += static_cast<size_t>(n)) {
        auto it = by_l.find(2 * K.dense_NKQ.eval(&ws[k]));
        if (it == by_l.end()) continue;
        for (size_t i : it->second)
            if (!have_w[i]) {
                out[i].w.assign(ws.begin() + static_cast<long>(k), ws.begin() + static_cast<long>(k) + n);
                have_w[i] = true;
            }
    }
    for (size_t i = 0; i < hits.size(); ++i)
        if (!have_u[i] || !have_v[i] || !have_w[i]) fail("Internal", "a counted triple could not be reconstructed");
    return out;
}

inline DirectCount count_direct(const ExperimentConfig& c, const BetaLambda& bl, const std::vector<AlphaPoint>& pts, int threads = 1,
                                double budget = 1e9, size_t samples = 0) {
    DirectCount r;
    r.pairs = static_cast<double>(pts.size()) * static_cast<double>(bl.keys.size());
    if (r.pairs > budget) fail("Budget", "u-v pair count exceeds the iteration budget");
    std::vector<QuadElem> keys;
    for (auto& k : bl.keys) keys.push_back(k.y);
    LambdaIndex lam(bl.lambda);
    auto kr = pair_kernel(pts, keys, lam, threads, samples);
    r.S = kr.S;
    for (size_t k = 0; k < keys.size(); ++k) {
        r.N += bl.keys[k].beta_all * r.S[k];
        r.N_bilinear += bl.keys[k].beta * r.S[k];
    }
    if (!kr.hits.empty()) r.samples = resolve_hits(c, bl, kr.hits);
    return r;
}

namespace detail {

inline i64 ext_gcd(i64 a, i64 b, i64& x, i64& y) {
    if (b == 0) {
        x = a >= 0 ? 1 : -1;
        y = 0;
        return std::abs(a);
    }
    i64 x1, y1;
    i64 g = ext_gcd(b, a % b, x1, y1);
    x = y1;
    y = x1 - (a / b) * y1;
    return g;
}

inline i64 floor_div(i64 a, i64 b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }
inline i64 ceil_div(i64 a, i64 b) { return -floor_div(-a, b); }

}  // namespace detail

// sum of alpha_hat over x with a1 x1 + a2 x2 = l
inline double line_sum(const AlphaFamily& f, i64 a1, i64 a2, i64 l) {
    if (a1 == 0 && a2 == 0) fail("BothCoeffsZero", "line with zero normal");
    i64 s, t;
    i64 g = detail::ext_gcd(a1, a2, s, t);
    if (l % g != 0) return 0;
    i64 b1 = a1 / g, b2 = a2 / g, lp = l / g;
    const OmegaTable& T = f.table;
    const double sc = T.scale;
    // real extent of the table
    double X0 = sc * T.x0, X1 = sc * (T.x0 + (T.nx - 1) * T.h), Y0 = sc * T.y0, Y1 = sc * (T.y0 + (T.ny - 1) * T.h);
    // points p0 + m d with p0 = lp (s, t), d = (-b2, b1)
    const i128 p01 = static_cast<i128>(s) * lp, p02 = static_cast<i128>(t) * lp;
    const i64 d1 = -b2, d2 = b1;
    double mlo = -1e300, mhi = 1e300;
    auto clip = [&](i128 p, i64 d, double lo, double hi) {
        if (d == 0) {
            if (static_cast<double>(p) < lo || static_cast<double>(p) > hi) mlo = 1, mhi = 0;
            return;
        }
        double a = (lo - static_cast<double>(p)) / static_cast<double>(d), b = (hi - static_cast<double>(p)) / static_cast<double>(d);
        if (a > b) std::swap(a, b);
        mlo = std::max(mlo, a);
        mhi = std::min(mhi, b);
    };
    clip(p01, d1, X0, X1);
    clip(p02, d2, Y0, Y1);
    if (mlo > mhi) return 0;
    i64 m0 = static_cast<i64>(std::floor(mlo)) - 1, m1 = static_cast<i64>(std::ceil(mhi)) + 1;
    i128 q1 = p01 + static_cast<i128>(m0) * d1, q2 = p02 + static_cast<i128>(m0) * d2;
    const i64 L = f.g.L;
    // g along the line is periodic with period dividing L
    std::vector<double> gs(static_cast<size_t>(L));
    for (i64 k = 0; k < L; ++k) gs[static_cast<size_t>(k)] = f.g(mod128(q1 + static_cast<i128>(k) * d1, L), mod128(q2 + static_cast<i128>(k) * d2, L));
    const double inv = 1.0 / (sc * T.h);
    const double s0 = static_cast<double>(q1) * inv - T.x0 / T.h, t0 = static_cast<double>(q2) * inv - T.y0 / T.h;
    const double ds = static_cast<double>(d1) * inv, dt = static_cast<double>(d2) * inv;
    const double* val = T.val.data();
    const int nx = T.nx, ny = T.ny;
    double sum = 0;
    i64 gi = 0;
    for (i64 k = 0; k <= m1 - m0; ++k) {
        double sx = s0 + static_cast<double>(k) * ds, ty = t0 + static_cast<double>(k) * dt;
        double gv = gs[static_cast<size_t>(gi)];
        if (++gi == L) gi = 0;
        if (sx < 0 || ty < 0 || sx > nx - 1 || ty > ny - 1) continue;
        int i = std::min(static_cast<int>(sx), nx - 2), j = std::min(static_cast<int>(ty), ny - 2);
        double a = sx - i, b = ty - j;
        const double* r0 = val + static_cast<size_t>(j) * nx + i;
        const double* r1 = r0 + nx;
        double w = (1 - b) * ((1 - a) * r0[0] + a * r0[1]) + b * ((1 - a) * r1[0] + a * r1[1]);
        sum += w * gv;
    }
    return sum;
}

struct BilinearReport {
    i64 N = 0;                    // the bilinear count, exact
    double M = 0, E = 0;          // main and error parts
    std::vector<double> M_y, E_y;  // per key with beta > 0
    double identity_residual = 0;  // |N - M - E| / |N|
    double lines = 0;
};

// N = sum_y beta(y) S_y exactly; M from line sums of alpha_hat; E = N - M accumulated per key
inline BilinearReport bilinear_count(const ExperimentConfig& c, const AlphaFamily& fam, const BetaLambda& bl, const std::vector<i64>& S,
                                     int threads = 1) {
    (void)c;
    BilinearReport r;
    std::vector<size_t> idx;
    for (size_t k = 0; k < bl.keys.size(); ++k)
        if (bl.keys[k].beta > 0) idx.push_back(k);
    r.M_y.assign(idx.size(), 0);
    r.E_y.assign(idx.size(), 0);
    parallel_for(static_cast<long>(idx.size()), threads, [&](long i) {
        const auto& key = bl.keys[idx[static_cast<size_t>(i)]];
        // skew_trace(x, y) = x2 y1 - x1 y2
        double m = 0;
        for (auto& [l, cnt] : bl.lambda) m += static_cast<double>(cnt) * line_sum(fam, -key.y.c2, key.y.c1, l);
        r.M_y[static_cast<size_t>(i)] = m;
    });
    long double Nt = 0, Mt = 0, Et = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& key = bl.keys[idx[i]];
        i64 Ny = S[idx[i]];
        r.E_y[i] = static_cast<double>(Ny) - r.M_y[i];
        r.N += key.beta * Ny;
        Nt += static_cast<long double>(key.beta) * Ny;
        Mt += static_cast<long double>(key.beta) * r.M_y[i];
        Et += static_cast<long double>(key.beta) * r.E_y[i];
    }
    r.M = static_cast<double>(Mt);
    r.E = static_cast<double>(Et);
    r.identity_residual = r.N == 0 ? std::abs(static_cast<double>(Mt + Et)) : std::abs(static_cast<double>((Nt - Mt - Et) / Nt));
    r.lines = static_cast<double>(idx.size()) * static_cast<double>(bl.lambda.size());
    return r;
}

// ---------------------------------------------------------------- general bilinear forms

template <class T>
using Z2Map = std::vector<std::pair<QuadElem, T>>;

struct Mat2 {
    i64 a, b, c, d;
};

// sum_x sum_y alpha(x) beta(y) lambda(x^T M y), y restricted to gcd(y1, y2) <= E
template <class T>
T bilinear_general(const Z2Map<T>& alpha, const Z2Map<T>& beta, const std::unordered_map<i64, T>& lambda, const Mat2& Mm, i64 E) {
    i64 det = Mm.a * Mm.d - Mm.b * Mm.c;
    if (det != 1 && det != -1) fail("NotUnimodular", "the matrix must have determinant +-1");
    T s{};
    for (auto& [y, bv] : beta) {
        if (std::gcd(y.c1, y.c2) > E) continue;
        // x^T M y = x1 (a y1 + b y2) + x2 (c y1 + d y2)
        i64 m1 = Mm.a * y.c1 + Mm.b * y.c2, m2 = Mm.c * y.c1 + Mm.d * y.c2;
        T inner{};
        for (auto& [x, av] : alpha) {
            auto it = lambda.find(x.c1 * m1 + x.c2 * m2);
            if (it != lambda.end()) inner += av * it->second;
        }
        s += inner * bv;
    }
    return s;
}

// T2(alpha; q) = sum over classes u mod q of max over squares R of |sum_{x in R, x = u} alpha(x)|^2
template <class T>
double T2_sum(const Z2Map<T>& alpha, i64 q, const std::vector<IRect>& squares) {
    std::vector<double> best(static_cast<size_t>(q * q), 0.0);
    for (auto& R : squares) {
        std::vector<T> acc(static_cast<size_t>(q * q), T{});
        for (auto& [x, v] : alpha)
            if (x.c1 >= R.x1lo && x.c1 <= R.x1hi && x.c2 >= R.x2lo && x.c2 <= R.x2hi)
                acc[static_cast<size_t>(mod(x.c1, q) * q + mod(x.c2, q))] += v;
        for (size_t i = 0; i < acc.size(); ++i) best[i] = std::max(best[i], static_cast<double>(std::norm(std::complex<double>(acc[i]))));
    }
    double s = 0;
    for (double b : best) s += b;
    return s;
}

// dyadic squares over the bounding box of a support
template <class T>
std::vector<IRect> support_squares(const Z2Map<T>& alpha, int levels = 3) {
    std::vector<IRect> out;
    if (alpha.empty()) return out;
    i64 a = INT64_MAX, b = INT64_MIN, c = INT64_MAX, d = INT64_MIN;
    for (auto& [x, v] : alpha) {
        a = std::min(a, x.c1);
        b = std::max(b, x.c1);
        c = std::min(c, x.c2);
        d = std::max(d, x.c2);
    }
    i64 side0 = std::max(b - a, d - c) + 1;
    for (int j = 0; j < levels; ++j) {
        i64 side = std::max<i64>(1, side0 >> j), step = std::max<i64>(1, side / 2);
        for (i64 x = a; x <= b; x += step)
            for (i64 y = c; y <= d; y += step) out.push_back({x, x + side - 1, y, y + side - 1});
    }
    return out;
}

template <class T>
double T3_sum(const Z2Map<T>& alpha, i64 qmax, const std::vector<IRect>& squares) {
    double s = 0;
    for (i64 q = 1; q <= qmax; ++q) s += static_cast<double>(q * q) * T2_sum(alpha, q, squares);
    return s;
}

// ---------------------------------------------------------------- singular integral

// int omega(X) delta(a.X - b) dX along the line, by adaptive Gauss-Kronrod inside the support disc
inline double integral_I(const std::function<double(double, double)>& omega, double radius, i64 a1, i64 a2, double b) {
    if (a1 == 0 && a2 == 0) fail("BothCoeffsZero", "a1 and a2 both vanish");
    const double A1 = static_cast<double>(a1), A2 = static_cast<double>(a2);
    std::function<double(double)> f;
    double c2, c1, c0;  // |X(x)|^2 = c2 x^2 + c1 x + c0
    if (a2 != 0) {
        double o = b / A2;
        f = [&, o](double x) { return omega(A2 * x, -A1 * x + o); };
        c2 = A1 * A1 + A2 * A2;
        c1 = -2 * A1 * o;
        c0 = o * o - radius * radius;
    } else {
        double o = b / A1;
        f = [&, o](double x) { return omega(o, A1 * x); };
        c2 = A1 * A1;
        c1 = 0;
        c0 = o * o - radius * radius;
    }
    double disc = c1 * c1 - 4 * c2 * c0;
    if (disc <= 0) return 0;
    double r = std::sqrt(disc), lo = (-c1 - r) / (2 * c2), hi = (-c1 + r) / (2 * c2);
    double err = 0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 8, 1e-7, &err);
}

// R(theta, r) = integral of the unit-scale omega over the line e_theta . Y = r
struct RadonTable {
    double th0 = 0, dth = 1, r0 = 0, dr = 1;
    int nth = 1, nr = 1;
    std::vector<double> R;

    double at(double th, double r) const {
        double s = (th - th0) / dth, t = (r - r0) / dr;
        if (s < -1e-6 || s > nth - 1 + 1e-6) fail("Internal", "direction outside the tabulated range");
        s = std::clamp(s, 0.0, static_cast<double>(nth - 1));
        if (t < 0 || t > nr - 1) return 0;
        int i = std::min(static_cast<int>(s), std::max(0, nth - 2)), j = std::min(static_cast<int>(t), nr - 2);
        double a = nth == 1 ? 0 : s - i, b = t - j;
        const double* p = R.data() + static_cast<size_t>(i) * nr + j;
        double lo = (1 - b) * p[0] + b * p[1];
        if (nth == 1) return lo;
        const double* q = p + nr;
        return (1 - a) * lo + a * ((1 - b) * q[0] + b * q[1]);
    }
    // int omega_U delta(a.X - b) dX where omega_U(X) = omega_1(X / s)
    double P(double a1, double a2, double b, double s) const {
        if (a1 < 0 || (a1 == 0 && a2 < 0)) {
            a1 = -a1;
            a2 = -a2;
            b = -b;
        }
        double na = std::hypot(a1, a2);
        return s / na * at(std::atan2(a2, a1), b / (s * na));
    }
};

inline double canonical_angle(double a1, double a2) {
    if (a1 < 0 || (a1 == 0 && a2 < 0)) {
        a1 = -a1;
        a2 = -a2;
    }
    return std::atan2(a2, a1);
}

inline RadonTable build_radon(const OmegaTable& T, double th_lo, double th_hi, int sub = 2) {
    RadonTable r;
    double ymax = 0;
    for (double x : {T.x0, T.x0 + (T.nx - 1) * T.h})
        for (double y : {T.y0, T.y0 + (T.ny - 1) * T.h}) ymax = std::max(ymax, std::hypot(x, y));
    double pad = 1e-4 + 1e-3 * (th_hi - th_lo);
    th_lo -= pad;
    th_hi += pad;
    r.dr = T.h / 2;
    r.nth = std::max(2, static_cast<int>(std::ceil((th_hi - th_lo) * ymax / (T.h / 2))) + 1);
    r.th0 = th_lo;
    r.dth = (th_hi - th_lo) / (r.nth - 1);
    r.r0 = -ymax - 2 * r.dr;
    r.nr = static_cast<int>(std::ceil(2 * (ymax + 2 * r.dr) / r.dr)) + 1;
    r.R.assign(static_cast<size_t>(r.nth) * r.nr, 0.0);
    // sub-sampled cell masses
    std::vector<double> X, Y, Wt;
    const double hs = T.h / sub;
    for (int j = 0; j + 1 < T.ny; ++j)
        for (int i = 0; i + 1 < T.nx; ++i) {
            double f00 = T.at(i, j), f10 = T.at(i + 1, j), f01 = T.at(i, j + 1), f11 = T.at(i + 1, j + 1);
            if (f00 == 0 && f10 == 0 && f01 == 0 && f11 == 0) continue;
            for (int b = 0; b < sub; ++b)
                for (int a = 0; a < sub; ++a) {
                    double s = (a + 0.5) / sub, t = (b + 0.5) / sub;
                    double v = (1 - s) * (1 - t) * f00 + s * (1 - t) * f10 + (1 - s) * t * f01 + s * t * f11;
                    X.push_back(T.x0 + (i + s) * T.h);
                    Y.push_back(T.y0 + (j + t) * T.h);
                    Wt.push_back(v * hs * hs);
                }
        }
    for (int k = 0; k < r.nth; ++k) {
        double th = r.th0 + k * r.dth, c = std::cos(th), s = std::sin(th);
        double* row = r.R.data() + static_cast<size_t>(k) * r.nr;
        for (size_t p = 0; p < X.size(); ++p) {
            double u = (X[p] * c + Y[p] * s - r.r0) / r.dr;
            int j = static_cast<int>(std::floor(u));
            double f = u - j;
            row[j] += (1 - f) * Wt[p];
            row[j + 1] += f * Wt[p];
        }
        for (int j = 0; j < r.nr; ++j) row[j] /= r.dr;
    }
    return r;
}

struct SingularIntegral {
    i64 Delta = 1;
    double sigma = 0;  // I(1)
    std::vector<double> cls;  // I(p, q; Delta), index p * Delta^n + q
    i64 n_v = 0, n_w = 0;
    double upper_const = 0, lower_const = 0;  // sigma / (G^-2n H^n V^2n), sigma / (G^(1-3n) H^n V^2n)
    double lemJ_max = 0;  // max over classes |I(Delta) - Delta^-2n I(1)| / (Delta^(1-2n) H^n V^(2n-1))
    int bins = 0;
};

inline i64 class_index(const i64* x, int n, i64 D) {
    i64 k = 0;
    for (int i = 0; i < n; ++i) k = k * D + mod(x[i], D);
    return k;
}

// sum over v in the v-box and w in the w-box (no congruences) of I(v, w), and the split by classes mod Delta
inline SingularIntegral singular_integral(const ExperimentConfig& c, const OmegaTable& table, i64 Delta = 1, int threads = 1) {
    const FieldCtx& K = *c.K;
    const int n = K.n;
    const auto& P = K.params;
    SingularIntegral out;
    out.Delta = Delta;
    i64 ncls = 1;
    for (int i = 0; i < n; ++i) ncls *= Delta;
    auto vs = enumerate_box(c.v_center(), c.v_half());
    auto ws = enumerate_box(c.w_center(), c.w_half());
    out.n_v = static_cast<i64>(vs.size()) / n;
    out.n_w = static_cast<i64>(ws.size()) / n;
    if (out.n_v == 0 || out.n_w == 0) fail("EmptyBox", "empty v or w box");
    // v coefficients and classes
    struct VK {
        i64 a1, a2, cls;
    };
    std::vector<VK> vk;
    double thl = 1e9, thh = -1e9, amin = 1e300;
    for (size_t i = 0; i < vs.size(); i += static_cast<size_t>(n)) {
        i64 n1 = K.dense_N1.eval(&vs[i]), n2 = K.dense_N2.eval(&vs[i]);
        VK k{2 * n1 + P.tr_tau * n2, P.tr_tau * n1 + P.tr_tau2 * n2, class_index(&vs[i], n, Delta)};
        if (k.a1 == 0 && k.a2 == 0) fail("CenterOnNullcone", "N(v) vanishes inside the v box");
        double th = canonical_angle(static_cast<double>(k.a1), static_cast<double>(k.a2));
        thl = std::min(thl, th);
        thh = std::max(thh, th);
        amin = std::min(amin, std::hypot(static_cast<double>(k.a1), static_cast<double>(k.a2)));
        vk.push_back(k);
    }
    RadonTable rad = build_radon(table, thl, thh);
    // b = 2 N(w) on hat bins
    std::vector<double> bw(static_cast<size_t>(out.n_w));
    std::vector<i64> wc(static_cast<size_t>(out.n_w));
    double blo = 1e300, bhi = -1e300;
    for (i64 i = 0; i < out.n_w; ++i) {
        const i64* w = &ws[static_cast<size_t>(i * n)];
        bw[static_cast<size_t>(i)] = 2.0 * static_cast<double>(K.dense_NKQ.eval(w));
        wc[static_cast<size_t>(i)] = class_index(w, n, Delta);
        blo = std::min(blo, bw[static_cast<size_t>(i)]);
        bhi = std::max(bhi, bw[static_cast<size_t>(i)]);
    }
    const double s = table.scale;
    double db = s * amin * rad.dr / 4;
    int nb = static_cast<int>(std::ceil((bhi - blo) / db)) + 2;
    nb = std::clamp(nb, 2, 1 << 20);
    db = std::max(1.0, (bhi - blo) / (nb - 1));
    out.bins = nb;
    std::vector<double> hist(static_cast<size_t>(ncls) * nb, 0.0);
    for (i64 i = 0; i < out.n_w; ++i) {
        double u = (bw[static_cast<size_t>(i)] - blo) / db;
        int j = std::min(static_cast<int>(u), nb - 2);
        double f = u - j;
        double* h = hist.data() + static_cast<size_t>(wc[static_cast<size_t>(i)]) * nb;
        h[j] += 1 - f;
        h[j + 1] += f;
    }
    // per v: P_a(b_k) against each w-class histogram
    out.cls.assign(static_cast<size_t>(ncls * ncls), 0.0);
    std::mutex mu;
    const long chunk = 256;
    const long nchunks = (static_cast<long>(vk.size()) + chunk - 1) / chunk;
    parallel_for(nchunks, threads, [&](long ch) {
        std::vector<double> local(static_cast<size_t>(ncls * ncls), 0.0), pv(static_cast<size_t>(nb));
        for (long i = ch * chunk; i < std::min<long>((ch + 1) * chunk, static_cast<long>(vk.size())); ++i) {
            const auto& k = vk[static_cast<size_t>(i)];
            for (int j = 0; j < nb; ++j) pv[static_cast<size_t>(j)] = rad.P(static_cast<double>(k.a1), static_cast<double>(k.a2), blo + j * db, s);
            for (i64 q = 0; q < ncls; ++q) {
                const double* h = hist.data() + static_cast<size_t>(q) * nb;
                double acc = 0;
                for (int j = 0; j < nb; ++j) acc += h[j] * pv[static_cast<size_t>(j)];
                local[static_cast<size_t>(k.cls * ncls + q)] += acc;
            }
        }
        std::lock_guard<std::mutex> g(mu);
        for (size_t i = 0; i < local.size(); ++i) out.cls[i] += local[i];
    });
    for (double x : out.cls) out.sigma += x;
    const double H = static_cast<double>(c.H), V = static_cast<double>(c.V), G = c.G;
    out.upper_const = out.sigma / (std::pow(G, -2.0 * n) * std::pow(H, n) * std::pow(V, 2.0 * n));
    out.lower_const = out.sigma / (std::pow(G, 1.0 - 3 * n) * std::pow(H, n) * std::pow(V, 2.0 * n));
    if (Delta > 1) {
        double D = static_cast<double>(Delta);
        double main = std::pow(D, -2.0 * n) * out.sigma;
        double unit = std::pow(D, 1.0 - 2 * n) * std::pow(H, n) * std::pow(V, 2.0 * n - 1);
        for (double x : out.cls) out.lemJ_max = std::max(out.lemJ_max, std::abs(x - main) / unit);
    }
    return out;
}

// sum over the given classes only
inline double congruence_I_sum(const SingularIntegral& si, i64 p_class, i64 q_class) {
    i64 ncls = static_cast<i64>(std::llround(std::sqrt(static_cast<double>(si.cls.size()))));
    if (p_class < 0 || q_class < 0 || p_class >= ncls || q_class >= ncls) fail("BadArgument", "class index out of range");
    return si.cls[static_cast<size_t>(p_class * ncls + q_class)];
}

// ---------------------------------------------------------------- end to end

struct CountReport {
    ExperimentConfig cfg;
    i64 N_direct = 0, N_bilinear = 0;
    double M = 0, E = 0, identity_residual = 0;
    SingularIntegral si;
    DensityReport dens;
    double S_used = 0;
    double prediction = 0, ratio = 0;
    double prediction_product = 0, ratio_product = 0;
    double M_over_prediction = 0;
    i64 E_measured = 0;
    i64 n_u = 0, n_v = 0, n_v_all = 0, n_w = 0, n_alpha = 0;
    std::vector<Triple> samples;
    std::map<std::string, double> seconds;
};

struct CountOptions {
    int threads = 1;
    double budget = 2e10;
    size_t samples = 32;
    int table_res = 256, table_k = 64;
    i64 P0 = 13, PR = 47, extend = 81;
    int depth = 2;
    bool bilinear = true;
};

inline CountReport run_count(const ExperimentConfig& c, const CountOptions& o = {}) {
    using clock = std::chrono::steady_clock;
    auto tick = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
    CountReport r;
    r.cfg = c;
    const FieldCtx& K = *c.K;
    auto t0 = clock::now();
    LocalDensities D(K, c.md);
    r.dens = singular_series(D, c.Q, o.P0, o.depth, o.PR, o.extend);
    r.seconds["densities"] = tick(t0);
    t0 = clock::now();
    AlphaFamily fam = alpha_family(K, c.wf, c.md, c.Q, D, o.table_res, o.table_k, o.threads);
    r.n_alpha = static_cast<i64>(fam.pts.size());
    r.n_u = fam.total;
    r.seconds["alpha"] = tick(t0);
    t0 = clock::now();
    BetaLambda bl = beta_lambda(c);
    r.E_measured = bl.E_measured;
    r.n_v = bl.n_v;
    r.n_v_all = bl.n_v_all;
    r.n_w = bl.n_w;
    auto dc = count_direct(c, bl, fam.pts, o.threads, o.budget, o.samples);
    r.N_direct = dc.N;
    r.N_bilinear = dc.N_bilinear;
    r.samples = dc.samples;
    r.seconds["direct"] = tick(t0);
    if (o.bilinear) {
        t0 = clock::now();
        auto br = bilinear_count(c, fam, bl, dc.S, o.threads);
        r.M = br.M;
        r.E = br.E;
        r.identity_residual = br.identity_residual;
        r.seconds["main_term"] = tick(t0);
    }
    t0 = clock::now();
    r.si = singular_integral(c, fam.table, 1, o.threads);
    r.seconds["singular_integral"] = tick(t0);
    const double pref = std::pow(2.0, c.kappa) * std::pow(static_cast<double>(c.md.M), K.n) * r.si.sigma;
    r.S_used = r.dens.S_trunc.mid();
    r.prediction = pref * r.S_used;
    r.ratio = r.prediction > 0 ? static_cast<double>(r.N_direct) / r.prediction : 0;
    r.prediction_product = pref * r.dens.S_product.mid();
    r.ratio_product = r.prediction_product > 0 ? static_cast<double>(r.N_direct) / r.prediction_product : 0;
    r.M_over_prediction = r.prediction > 0 ? r.M / r.prediction : 0;
    return r;
}

inline nlohmann::json to_json(const SingularIntegral& s) {
    return {{"Delta", s.Delta}, {"sigma_inf", s.sigma}, {"n_v", s.n_v}, {"n_w", s.n_w}, {"upper_const", s.upper_const},
            {"lower_const", s.lower_const}, {"lemJ_const", s.lemJ_max}, {"bins", s.bins}};
}

inline nlohmann::json to_json(const CountReport& r) {
    const auto& c = r.cfg;
    nlohmann::json j;
    j["config"] = {{"V", c.V}, {"H0", c.H0}, {"H", c.H}, {"G", c.G}, {"U", c.U}, {"W", c.W}, {"Q", c.Q}, {"k_cut", c.k_cut},
                   {"M", c.md.M}, {"kappa", c.kappa}, {"u_center", c.uR}, {"v_center", c.vR}, {"w_center", c.wR},
                   {"epsilon_box", 1.0 / c.G}};
    j["N_direct"] = r.N_direct;
    j["N_bilinear"] = r.N_bilinear;
    j["M"] = r.M;
    j["E"] = r.E;
    j["E_over_M"] = r.M != 0 ? r.E / r.M : 0.0;
    j["identity_residual"] = r.identity_residual;
    j["singular_integral"] = to_json(r.si);
    j["S_trunc"] = to_json(r.dens.S_trunc);
    j["S_product"] = to_json(r.dens.S_product);
    j["prediction"] = r.prediction;
    j["ratio"] = r.ratio;
    j["prediction_product"] = r.prediction_product;
    j["ratio_product"] = r.ratio_product;
    j["M_over_prediction"] = r.M_over_prediction;
    j["E_gcd_measured"] = r.E_measured;
    j["sizes"] = {{"u", r.n_u}, {"alpha_support", r.n_alpha}, {"v", r.n_v}, {"v_all", r.n_v_all}, {"w", r.n_w}};
    nlohmann::json t = nlohmann::json::object();
    for (auto& [k, v] : r.seconds) t[k] = v;
    j["seconds"] = t;
    return j;
}

}  // namespace normcount
