#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "norm_forms.hpp"

namespace normcount {

inline int kappa(const FieldParams& P) { return P.tr_tau % 2 == 0 ? 1 : 0; }

// 2^-kappa tr(z) = c1 z1 + c2 z2
inline std::pair<i64, i64> half_trace_coeffs(const FieldParams& P) {
    if (kappa(P) == 1) return {1, P.tr_tau / 2};
    return {2, P.tr_tau};
}

// Congruence data: classes of the u-, v- and w-blocks modulo M.
struct MData {
    i64 M = 1;
    std::vector<i64> u, v, w;
};

inline std::vector<i64> unit_vector(int n) {
    std::vector<i64> e(static_cast<size_t>(n), 0);
    e[0] = 1;
    return e;
}

// multiplies in the primes of 2 D_L^2 that are missing from M
inline i64 augment_modulus(const FieldParams& P, i64 M) {
    for (i64 p : prime_divisors(2 * std::abs(P.dl_sq)))
        if (M % p) M *= p;
    return M;
}

inline QuadElem quad_mod(const QuadRat& x, i64 m) {
    if (m == 1) return {0, 0};
    auto chk = [&](const Rat& r) {
        if (std::gcd(static_cast<i64>(den(r) % BigInt(m)), m) != 1)
            fail("DeltaNotIntegralAtQ", "delta has a denominator sharing a factor with " + std::to_string(m));
        return rat_mod(r, m);
    };
    return {chk(x.c1), chk(x.c2)};
}

// 2^-kappa F(v; w; u) modulo m
inline i64 F_mod(const FieldCtx& K, const i64* v, const i64* w, const i64* u, i64 m) {
    const auto& P = K.params;
    auto [c1, c2] = half_trace_coeffs(P);
    QuadElem d = quad_mod(K.delta, m);
    QuadElem nv{mod(K.flat_N1.eval_mod(v, m), m), mod(K.flat_N2.eval_mod(v, m), m)};
    QuadElem nu{mod(K.flat_N1.eval_mod(u, m), m), mod(K.flat_N2.eval_mod(u, m), m)};
    auto mm = [&](QuadElem a, QuadElem b) {
        i128 z1 = static_cast<i128>(a.c1) * b.c1 - static_cast<i128>(P.norm_tau) * a.c2 * b.c2;
        i128 z2 = static_cast<i128>(a.c1) * b.c2 + static_cast<i128>(a.c2) * b.c1 + static_cast<i128>(P.tr_tau) * a.c2 * b.c2;
        return QuadElem{mod128(z1, m), mod128(z2, m)};
    };
    QuadElem z = mm(mm(d, nu), nv);
    i128 t = static_cast<i128>(c1) * z.c1 + static_cast<i128>(c2) * z.c2;
    i128 f = t - static_cast<i128>(kappa(P) ? 1 : 2) * K.flat_NKQ.eval_mod(w, m);
    return mod128(f, m);
}

inline bool mdata_consistent(const FieldCtx& K, const MData& md) {
    if (md.M == 1) return true;
    return F_mod(K, md.v.data(), md.w.data(), md.u.data(), md.M) == 0;
}

// v = e_1 and a search over u, w classes for a solution of the equation mod M
inline MData default_mdata(const FieldCtx& K, i64 M) {
    MData md{M, unit_vector(K.n), unit_vector(K.n), unit_vector(K.n)};
    if (mdata_consistent(K, md)) return md;
    const int n = K.n;
    double space = std::pow(static_cast<double>(M), 2.0 * n);
    if (space > 1e7) fail("BadCongruence", "no default class and the search space is too large");
    std::vector<i64> u(static_cast<size_t>(n), 0), w(static_cast<size_t>(n), 0);
    std::vector<i64> all(static_cast<size_t>(2 * n), 0);
    for (;;) {
        for (int i = 0; i < n; ++i) {
            u[static_cast<size_t>(i)] = all[static_cast<size_t>(i)];
            w[static_cast<size_t>(i)] = all[static_cast<size_t>(n + i)];
        }
        MData c{M, u, unit_vector(n), w};
        auto nn = norm_KQ(K, w).value;
        if (mod(nn, M) != 0 && mdata_consistent(K, c)) return c;
        int i = 0;
        while (i < 2 * n && ++all[static_cast<size_t>(i)] == M) all[static_cast<size_t>(i++)] = 0;
        if (i == 2 * n) break;
    }
    fail("BadCongruence", "no solution of the equation modulo M with v = e1");
}

// local data at p: classes modulo p^mu
inline MData local_mdata(const MData& md, i64 p) {
    int mu = valuation(md.M, p);
    i64 r = ipow(p, mu);
    MData l{r, md.u, md.v, md.w};
    for (auto* vec : {&l.u, &l.v, &l.w})
        for (auto& x : *vec) x = mod(x, r);
    if (r == 1) l.u.assign(md.u.size(), 0), l.v.assign(md.v.size(), 0), l.w.assign(md.w.size(), 0);
    return l;
}

constexpr double kHistogramLimit = 1e8;

// all x mod q with x = cls mod r
template <class F>
void for_each_point(int n, i64 q, i64 r, const std::vector<i64>& cls, F&& f) {
    if (q % r) fail("BadModulus", "restriction modulus must divide q");
    i64 steps = q / r;
    if (std::pow(static_cast<double>(steps), n) > kHistogramLimit)
        fail("TooLarge", "histogram over " + std::to_string(q) + "^" + std::to_string(n) + " points");
    std::vector<i64> x(static_cast<size_t>(n)), base(static_cast<size_t>(n));
    std::vector<i64> j(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = base[static_cast<size_t>(i)] = cls.empty() ? 0 : mod(cls[static_cast<size_t>(i)], r);
    for (;;) {
        f(x.data());
        int i = 0;
        while (i < n) {
            auto ii = static_cast<size_t>(i);
            if (++j[ii] < steps) {
                x[ii] += r;
                break;
            }
            j[ii] = 0;
            x[ii] = base[ii];
            ++i;
        }
        if (i == n) return;
    }
}

// Value histogram of a form over (Z/q)^n, optionally restricted to a class mod r.
struct NormHistogram {
    i64 q = 1;
    bool pair = false;  // QuadElem values (c1 * q + c2) or integers
    std::vector<i64> table;
    i64 mass() const {
        i64 s = 0;
        for (i64 c : table) s += c;
        return s;
    }
};

enum class VFilter { None, KDivides, PNotDivides };

namespace detail {

inline i64 eval_exact_or_mod(const DenseForm& d, const FlatForm& f, const i64* x, i64 m, bool fits) {
    return fits ? mod(d.eval(x), m) : f.eval_mod(x, m);
}

}  // namespace detail

// relative norm (times delta when twisted) over x mod m, keyed mod d | m
inline NormHistogram pair_histogram(const FieldCtx& K, i64 m, i64 r, const std::vector<i64>& cls, i64 d, bool twisted,
                                    VFilter filter = VFilter::None, i64 k = 1) {
    if (m % d) fail("BadModulus", "key modulus must divide m");
    NormHistogram h{d, true, std::vector<i64>(static_cast<size_t>(d * d), 0)};
    QuadElem dl = twisted ? quad_mod(K.delta, m) : QuadElem{1, 0};
    if (m == 1) dl = {0, 0};
    const auto& P = K.params;
    bool f1 = K.dense_N1.fits(m), f2 = K.dense_N2.fits(m);
    for_each_point(K.n, m, r, cls, [&](const i64* x) {
        i64 a = detail::eval_exact_or_mod(K.dense_N1, K.flat_N1, x, m, f1);
        i64 b = detail::eval_exact_or_mod(K.dense_N2, K.flat_N2, x, m, f2);
        if (filter == VFilter::KDivides && (a % k || b % k)) return;
        if (filter == VFilter::PNotDivides && a % k == 0 && b % k == 0) return;
        if (twisted && m > 1) {
            i128 z1 = static_cast<i128>(dl.c1) * a - static_cast<i128>(P.norm_tau) * dl.c2 * b;
            i128 z2 = static_cast<i128>(dl.c1) * b + static_cast<i128>(dl.c2) * a + static_cast<i128>(P.tr_tau) * dl.c2 * b;
            a = mod128(z1, m);
            b = mod128(z2, m);
        }
        ++h.table[static_cast<size_t>((a % d) * d + b % d)];
    });
    return h;
}

inline NormHistogram full_histogram(const FieldCtx& K, i64 m, i64 r, const std::vector<i64>& cls, i64 d) {
    if (m % d) fail("BadModulus", "key modulus must divide m");
    NormHistogram h{d, false, std::vector<i64>(static_cast<size_t>(d), 0)};
    bool fits = K.dense_NKQ.fits(m);
    for_each_point(K.n, m, r, cls, [&](const i64* x) {
        ++h.table[static_cast<size_t>(detail::eval_exact_or_mod(K.dense_NKQ, K.flat_NKQ, x, m, fits) % d)];
    });
    return h;
}

// histogram of N_{K/Q} or of the relative norm over (Z/q)^n
inline NormHistogram norm_histogram(const FieldCtx& K, bool pair, i64 q, std::optional<std::pair<i64, std::vector<i64>>> congruence = {}) {
    i64 r = 1;
    std::vector<i64> cls;
    if (congruence) {
        r = congruence->first;
        cls = congruence->second;
        if (q % r) fail("BadModulus", "congruence modulus must divide q");
    }
    return pair ? pair_histogram(K, q, r, cls, q, false) : full_histogram(K, q, r, cls, q);
}

// #{(A, B, C)}: HA(A) HB(B) HC(C) with 2^-kappa tr(AB) = 2^(1-kappa) C mod d
inline BigInt pair_count(const FieldParams& P, i64 d, const NormHistogram& HA, const NormHistogram& HB, const NormHistogram& HC) {
    if (std::pow(static_cast<double>(d), 4) > 4e8) fail("TooLarge", "trace pairing modulo " + std::to_string(d));
    auto [c1, c2] = half_trace_coeffs(P);
    i64 two = kappa(P) ? 1 : 2;
    std::vector<i128> hc(static_cast<size_t>(d), 0);
    for (i64 c = 0; c < d; ++c) hc[static_cast<size_t>(mod(two * c, d))] += HC.table[static_cast<size_t>(c)];
    struct Entry { i64 b1, b2, n; };
    std::vector<Entry> bs;
    for (i64 b1 = 0; b1 < d; ++b1)
        for (i64 b2 = 0; b2 < d; ++b2)
            if (i64 n = HB.table[static_cast<size_t>(b1 * d + b2)]) bs.push_back({b1, b2, n});
    i128 total = 0;
    for (i64 a1 = 0; a1 < d; ++a1)
        for (i64 a2 = 0; a2 < d; ++a2) {
            i64 na = HA.table[static_cast<size_t>(a1 * d + a2)];
            if (!na) continue;
            i64 l1 = mod(c1 * a1 + c2 * a2, d);
            i64 l2 = mod(-c1 * P.norm_tau * a2 + c2 * (a1 + P.tr_tau * a2), d);
            i128 inner = 0;
            for (auto& e : bs) inner += static_cast<i128>(e.n) * hc[static_cast<size_t>((l1 * e.b1 + l2 * e.b2) % d)];
            total += inner * na;
        }
    BigInt r = 0;
    bool neg = total < 0;
    i128 t = neg ? -total : total;
    BigInt scale = 1;
    while (t > 0) {
        r += scale * static_cast<i64>(t % 1000000000000000000LL);
        t /= 1000000000000000000LL;
        scale *= BigInt(1000000000000000000LL);
    }
    return neg ? BigInt(-r) : r;
}

// #{x = (v, w, u) mod m : x = x0 mod md.M, d | 2^-kappa F(x), filter on N(v)}
inline BigInt count_points(const FieldCtx& K, const MData& md, i64 m, i64 d, VFilter filter, i64 k) {
    auto HA = pair_histogram(K, m, md.M, md.v, d, false, filter, k);
    auto HB = pair_histogram(K, m, md.M, md.u, d, true);
    auto HC = full_histogram(K, m, md.M, md.w, d);
    return pair_count(K.params, d, HA, HB, HC);
}

struct SigmaP {
    i64 p = 0;
    int mu = 0, beta0 = 1;
    std::vector<BigInt> counts;  // M(p^beta, p^mu) for beta = beta0, beta0 + 1, ...
    Rat sigma;                   // p^{-(3n-1) beta} M(p^beta, p^mu) at the deepest level
    bool stabilized = false;
    int beta() const { return beta0 + static_cast<int>(counts.size()) - 1; }
};

struct HenselResult {
    bool solvable = false;
    std::vector<i64> witness;  // (v, w, u) modulo p^max(mu,1)
    i64 modulus = 1;
    std::vector<i64> gradient_mod_p;
    i64 candidates = 0;
};

struct Interval {
    double lo = 0, hi = 0;
    double mid() const { return 0.5 * (lo + hi); }
    double width() const { return hi - lo; }
};

struct PrimeDensity {
    SigmaP sp;
    i64 R = 0;
    std::vector<Rat> f0_local;  // f0(p^alpha, p^mu), alpha = 0..beta
    double tail = 0;            // bound on the omitted part of sigma_p*
    double abs_sum = 0;         // bound on sum_alpha |f0(p^alpha, p^mu)|
};

struct DensityReport {
    i64 M = 1, Q = 1, P0 = 13, PR = 47;
    int depth = 2;
    std::vector<PrimeDensity> primes;
    std::map<i64, i64> R_table;
    double C_R = 0, C_M = 0, C_s = 0;
    Rat c_core;
    Interval c;
    std::vector<Rat> f0_values;  // f0(q, M), q = 1..Q
    Rat S_trunc_core;            // c_core * sum_{q <= Q} f0(q, M)
    Interval S_trunc;
    double q_tail = 0;
    Rat product_core;  // prod_{p <= P0} sigma_p*
    Interval S_product;
    bool consistent = false;
    double max_lemma_ratio = 0;  // max_p |M(p,1) p^(1-3n) - 1| p^(3/2)
};

// Finite-place densities for a fixed field and congruence data. Caches are not synchronized.
class LocalDensities {
public:
    LocalDensities(const FieldCtx& K, MData md) : K_(K), md_(std::move(md)) {
        if (md_.M > 1 && !mdata_consistent(K_, md_)) fail("BadCongruence", "congruence data does not solve the equation mod M");
        if (md_.M == 1) md_.u = md_.v = md_.w = std::vector<i64>(static_cast<size_t>(K_.n), 0);
        build_F();
    }

    const FieldCtx& field() const { return K_; }
    const MData& mdata() const { return md_; }

    // rho(y, q) for all y mod q, indexed y1 * q + y2
    std::vector<Rat> rho_table(i64 q) const {
        i64 m = lcm(md_.M, q);
        auto h = pair_histogram(K_, m, md_.M, md_.u, q, true);
        Rat scale = rpow(rat(md_.M, m), K_.n);
        std::vector<Rat> out(h.table.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = scale * h.table[i];
        return out;
    }

    Rat rho(const QuadElem& y, i64 q) const {
        auto t = rho_table(q);
        return t[static_cast<size_t>(mod(y.c1, q) * q + mod(y.c2, q))];
    }

    i64 count_R(i64 k) {
        if (auto it = R_.find(k); it != R_.end()) return it->second;
        auto h = pair_histogram(K_, k, 1, {}, k, false, VFilter::KDivides, k);
        return R_[k] = h.mass();
    }

    BigInt count_M(i64 p, int beta) const {
        MData l = local_mdata(md_, p);
        int mu = valuation(l.M, p);
        if (beta < std::max(mu, 1)) fail("BadArgument", "beta must be at least max(mu, 1)");
        i64 m = ipow(p, beta);
        return count_points(K_, l, m, m, VFilter::PNotDivides, p);
    }

    // N_M(k, u) for this M, or for a supplied local M-data
    BigInt count_NM(i64 k, i64 u, const MData* md = nullptr) {
        const MData& d = md ? *md : md_;
        i64 delta = lcm(lcm(d.M, u), k);
        auto key = std::make_tuple(d.M, k, u);
        if (auto it = NM_.find(key); it != NM_.end()) return it->second;
        return NM_[key] = count_points(K_, d, delta, u, VFilter::KDivides, k);
    }

    Rat f0(i64 q, const MData* md = nullptr) {
        const MData& d = md ? *md : md_;
        const int n = K_.n;
        Rat total = 0;
        for (i64 u : divisors(q)) {
            int muq = moebius(q / u);
            if (!muq) continue;
            i64 Mu = lcm(d.M, u), uM = u * d.M;
            Rat prodR = 1;
            for (i64 p : prime_divisors(uM)) prodR /= (1 - rat(count_R(p), ipow(p, n)));
            Rat inner = 0;
            for (i64 k : divisors(uM)) {
                int mk = moebius(k);
                if (!mk) continue;
                inner += Rat(mk) * Rat(count_NM(k, u, &d));
            }
            total += Rat(u * muq) * inner * prodR / Rat(rpow(Rat(Mu), 3 * n));
        }
        return total;
    }

    Rat f0_local(i64 p, int alpha) {
        MData l = local_mdata(md_, p);
        return f0(ipow(p, alpha), &l);
    }

    // the two sides of the local identity at p, level beta
    std::pair<Rat, Rat> fsum_identity(i64 p, int beta) {
        const int n = K_.n;
        Rat lhs = 0;
        for (int a = 0; a <= beta; ++a) lhs += f0_local(p, a);
        Rat rhs = Rat(count_M(p, beta)) / rpow(Rat(p), (3 * n - 1) * beta) / (1 - rat(count_R(p), ipow(p, n)));
        return {lhs, rhs};
    }

    // levels beta0..depth; past depth, keeps going while unstabilized and p^beta <= extend
    SigmaP sigma_p(i64 p, int depth, i64 extend = 0) const {
        SigmaP s;
        s.p = p;
        s.mu = valuation(md_.M, p);
        s.beta0 = std::max(s.mu, 1);
        const int e = 3 * K_.n - 1;
        auto stable = [&] {
            size_t k = s.counts.size();
            return k >= 2 && s.counts[k - 1] == s.counts[k - 2] * pow(BigInt(p), static_cast<unsigned>(e));
        };
        for (int b = s.beta0;; ++b) {
            if (b > std::max(depth, s.beta0) && (stable() || static_cast<double>(ipow(p, 1)) * std::pow(p, b - 1) > extend)) break;
            try {
                s.counts.push_back(count_M(p, b));
            } catch (const Error& err) {
                if (!err.budget || s.counts.empty()) throw;
                break;
            }
        }
        s.sigma = Rat(s.counts.back()) / rpow(Rat(p), e * s.beta());
        s.stabilized = stable();
        return s;
    }

    // search for a point mod p^max(mu,1) on the variety with p not dividing N(v) and gradient nonzero mod p
    HenselResult hensel_solvable(i64 p, i64 budget = 100000000) const {
        MData l = local_mdata(md_, p);
        int mu = valuation(l.M, p);
        i64 m = ipow(p, std::max(mu, 1));
        const int n = K_.n;
        HenselResult res;
        res.modulus = m;
        auto grad = gradient_mod(p);
        // representatives per key
        std::map<std::pair<i64, i64>, std::vector<std::vector<i64>>> A, B;
        std::map<i64, std::vector<std::vector<i64>>> C;
        QuadElem dl = quad_mod(K_.delta, m);
        const auto& P = K_.params;
        for_each_point(n, m, l.M, l.v, [&](const i64* x) {
            i64 a = K_.flat_N1.eval_mod(x, m), b = K_.flat_N2.eval_mod(x, m);
            if (a % p == 0 && b % p == 0) return;
            A[{a, b}].emplace_back(x, x + n);
        });
        for_each_point(n, m, l.M, l.u, [&](const i64* x) {
            i64 a = K_.flat_N1.eval_mod(x, m), b = K_.flat_N2.eval_mod(x, m);
            i64 z1 = mod128(static_cast<i128>(dl.c1) * a - static_cast<i128>(P.norm_tau) * dl.c2 * b, m);
            i64 z2 = mod128(static_cast<i128>(dl.c1) * b + static_cast<i128>(dl.c2) * a + static_cast<i128>(P.tr_tau) * dl.c2 * b, m);
            B[{z1, z2}].emplace_back(x, x + n);
        });
        for_each_point(n, m, l.M, l.w, [&](const i64* x) { C[K_.flat_NKQ.eval_mod(x, m)].emplace_back(x, x + n); });
        auto [c1, c2] = half_trace_coeffs(P);
        i64 two = kappa(P) ? 1 : 2;
        std::map<i64, std::vector<i64>> Cby;  // residue of 2^(1-kappa) C -> keys
        for (auto& [c, reps] : C) Cby[mod(two * c, m)].push_back(c);
        std::vector<i64> x(static_cast<size_t>(3 * n));
        for (auto& [ka, ra] : A)
            for (auto& [kb, rb] : B) {
                i64 z1 = mod128(static_cast<i128>(ka.first) * kb.first - static_cast<i128>(P.norm_tau) * ka.second * kb.second, m);
                i64 z2 = mod128(static_cast<i128>(ka.first) * kb.second + static_cast<i128>(ka.second) * kb.first +
                                    static_cast<i128>(P.tr_tau) * ka.second * kb.second, m);
                i64 t = mod(c1 * z1 + c2 * z2, m);
                auto it = Cby.find(t);
                if (it == Cby.end()) continue;
                for (i64 ck : it->second)
                    for (auto& va : ra)
                        for (auto& wc : C[ck])
                            for (auto& ub : rb) {
                                if (++res.candidates > budget) fail("Budget", "Hensel search budget exhausted");
                                std::copy(va.begin(), va.end(), x.begin());
                                std::copy(wc.begin(), wc.end(), x.begin() + n);
                                std::copy(ub.begin(), ub.end(), x.begin() + 2 * n);
                                bool nonzero = false;
                                std::vector<i64> g(static_cast<size_t>(3 * n));
                                for (int i = 0; i < 3 * n; ++i) {
                                    g[static_cast<size_t>(i)] = grad[static_cast<size_t>(i)].eval_mod(x.data(), p);
                                    nonzero |= g[static_cast<size_t>(i)] != 0;
                                }
                                if (nonzero) {
                                    res.solvable = true;
                                    res.witness = x;
                                    res.gradient_mod_p = g;
                                    return res;
                                }
                            }
            }
        return res;
    }

    // exact 2^-kappa F at an integer point (v, w, u); requires integral delta
    BigInt F_exact(const std::vector<i64>& x) const {
        std::vector<BigInt> xb(x.begin(), x.end());
        BigInt r = 0;
        for (auto& [mono, c] : Fpoly_) {
            BigInt t = num(c);
            for (size_t i = 0; i < mono.size(); ++i)
                for (int e = 0; e < mono[i]; ++e) t *= xb[i];
            r += t;
        }
        return r;
    }

    const PolyMap<Rat>& F_polynomial() const { return Fpoly_; }

private:
    struct ModForm {
        std::vector<std::pair<Monomial, i64>> terms;
        i64 eval_mod(const i64* x, i64 p) const {
            i64 s = 0;
            for (auto& [m, c] : terms) {
                i64 v = c;
                for (size_t i = 0; i < m.size(); ++i)
                    for (int e = 0; e < m[i]; ++e) v = v * mod(x[i], p) % p;
                s = (s + v) % p;
            }
            return s;
        }
    };

    std::vector<ModForm> gradient_mod(i64 p) const {
        const int nv = 3 * K_.n;
        std::vector<ModForm> g(static_cast<size_t>(nv));
        for (auto& [mono, c] : Fpoly_)
            for (int i = 0; i < nv; ++i) {
                if (!mono[static_cast<size_t>(i)]) continue;
                Monomial d = mono;
                Rat cc = c * mono[static_cast<size_t>(i)];
                --d[static_cast<size_t>(i)];
                if (std::gcd(static_cast<i64>(den(cc) % BigInt(p)), p) != 1)
                    fail("DeltaNotIntegralAtQ", "gradient coefficient not p-integral");
                i64 r = rat_mod(cc, p);
                if (r) g[static_cast<size_t>(i)].terms.push_back({d, r});
            }
        return g;
    }

    void build_F() {
        const int n = K_.n, nv = 3 * n;
        auto shift = [&](const FormPoly& f, int off) {
            PolyMap<Rat> r;
            for (auto& [m, c] : f.coeffs) {
                Monomial mm(static_cast<size_t>(nv), 0);
                for (int i = 0; i < n; ++i) mm[static_cast<size_t>(off + i)] = m[static_cast<size_t>(i)];
                r[mm] += Rat(c);
            }
            return r;
        };
        const auto& P = K_.params;
        auto v1 = shift(K_.N1, 0), v2 = shift(K_.N2, 0);
        auto u1 = shift(K_.N1, 2 * n), u2 = shift(K_.N2, 2 * n);
        // delta N(u)
        PolyMap<Rat> d1, d2;
        poly_add_to(d1, u1, K_.delta.c1);
        poly_add_to(d1, u2, Rat(-P.norm_tau) * K_.delta.c2);
        poly_add_to(d2, u2, K_.delta.c1);
        poly_add_to(d2, u1, K_.delta.c2);
        poly_add_to(d2, u2, Rat(P.tr_tau) * K_.delta.c2);
        // z = delta N(u) N(v)
        PolyMap<Rat> z1 = poly_mul(d1, v1), z2 = poly_mul(d1, v2);
        poly_add_to(z1, poly_mul(d2, v2), Rat(-P.norm_tau));
        poly_add_to(z2, poly_mul(d2, v1));
        poly_add_to(z2, poly_mul(d2, v2), Rat(P.tr_tau));
        auto [c1, c2] = half_trace_coeffs(P);
        Fpoly_.clear();
        poly_add_to(Fpoly_, z1, Rat(c1));
        poly_add_to(Fpoly_, z2, Rat(c2));
        poly_add_to(Fpoly_, shift(K_.NKQ, n), Rat(kappa(P) ? -1 : -2));
        for (auto it = Fpoly_.begin(); it != Fpoly_.end();) it = it->second == 0 ? Fpoly_.erase(it) : std::next(it);
    }

    const FieldCtx& K_;
    MData md_;
    PolyMap<Rat> Fpoly_;
    std::map<i64, i64> R_;
    std::map<std::tuple<i64, i64, i64>, BigInt> NM_;
};

namespace detail {

// sum_{alpha >= from} p^(alpha - 3 floor(alpha/2) - 2)
inline double sscon_tail(i64 p, int from) {
    double s = 0;
    for (int a = std::max(from, 2); a < from + 200; ++a) s += std::pow(static_cast<double>(p), a - 3 * (a / 2) - 2);
    return s;
}

// sum over primes p > P of p^-s, primes up to X summed and integers beyond
inline double prime_zeta_tail(i64 P, double s, i64 X = 2000000) {
    static std::vector<i64> ps = primes_upto(2000000);
    double t = 0;
    for (i64 p : ps)
        if (p > P && p <= X) t += std::pow(static_cast<double>(p), -s);
    t += std::pow(static_cast<double>(X), 1 - s) / (s - 1);
    return t;
}

}  // namespace detail

// Singular series by truncated summation of c f0(q, M) and by the product of local densities.
inline DensityReport singular_series(LocalDensities& D, i64 Q, i64 P0 = 13, int depth = 2, i64 PR = 47, i64 extend = 81) {
    const FieldCtx& K = D.field();
    const int n = K.n;
    DensityReport rep;
    rep.M = D.mdata().M;
    rep.Q = Q;
    rep.P0 = P0;
    rep.PR = PR;
    rep.depth = depth;
    for (i64 p : prime_divisors(rep.M))
        if (p > P0) fail("BadArgument", "P0 must cover the primes of M");

    // c = prod (1 - R(p)/p^n)
    rep.c_core = 1;
    for (i64 p : primes_upto(PR)) {
        i64 R = D.count_R(p);
        rep.R_table[p] = R;
        rep.C_R = std::max(rep.C_R, static_cast<double>(R) / std::pow(static_cast<double>(p), n - 2));
        rep.c_core *= 1 - rat(R, ipow(p, n));
    }
    double cr_tail = rep.C_R * detail::prime_zeta_tail(PR, 2.0);
    double first = rep.C_R / (static_cast<double>(PR) * PR);
    rep.c = {to_double(rep.c_core) * std::exp(-cr_tail / (1 - first)), to_double(rep.c_core)};

    // local data for p <= P0
    for (i64 p : primes_upto(P0)) {
        PrimeDensity pd;
        pd.sp = D.sigma_p(p, depth, extend);
        pd.R = D.count_R(p);
        for (int a = 0; a <= pd.sp.beta(); ++a) pd.f0_local.push_back(D.f0_local(p, a));
        if (pd.sp.mu == 0) {
            Rat dev = Rat(pd.sp.counts[0]) / rpow(Rat(p), 3 * n - 1) - 1;
            double r = std::abs(to_double(dev)) * std::pow(static_cast<double>(p), 1.5);
            rep.max_lemma_ratio = std::max(rep.max_lemma_ratio, r);
        }
        rep.primes.push_back(pd);
    }
    rep.C_M = rep.max_lemma_ratio;
    // per-prime and global constants for the higher f0 terms
    for (auto& pd : rep.primes) {
        double cp = 0;
        for (int a = 2; a < static_cast<int>(pd.f0_local.size()); ++a)
            cp = std::max(cp, std::abs(to_double(pd.f0_local[static_cast<size_t>(a)])) /
                                  std::pow(static_cast<double>(pd.sp.p), a - 3 * (a / 2) - 2));
        if (pd.sp.mu == 0) rep.C_s = std::max(rep.C_s, cp);
        pd.tail = cp;  // provisional: per-prime constant
    }
    for (auto& pd : rep.primes) {
        i64 p = pd.sp.p;
        double cp = pd.tail;
        if (pd.f0_local.size() < 3) cp = pd.sp.mu == 0 ? rep.C_s : 0;
        if (pd.f0_local.size() < 3 && pd.sp.mu > 0) fail("BadArgument", "depth too small at a prime of M");
        double scale = 1 - static_cast<double>(pd.R) / std::pow(static_cast<double>(p), n);
        // a level that repeats exactly is taken as the limit
        pd.tail = pd.sp.stabilized ? 0.0 : scale * cp * detail::sscon_tail(p, pd.sp.beta() + 1);
        pd.abs_sum = cp * detail::sscon_tail(p, pd.sp.beta() + 1);
        for (auto& f : pd.f0_local) pd.abs_sum += std::abs(to_double(f));
    }

    // truncated sum
    Rat sf = 0;
    double sabs = 0;
    for (i64 q = 1; q <= Q; ++q) {
        rep.f0_values.push_back(D.f0(q));
        sf += rep.f0_values.back();
        sabs += std::abs(to_double(rep.f0_values.back()));
    }
    rep.S_trunc_core = rep.c_core * sf;
    double sfd = to_double(sf);
    rep.S_trunc = sfd >= 0 ? Interval{rep.c.lo * sfd, rep.c.hi * sfd} : Interval{rep.c.hi * sfd, rep.c.lo * sfd};

    // majorant for sum_{q > Q} |f0(q, M)|
    double logA = 0;
    for (auto& pd : rep.primes) logA += std::log(pd.abs_sum);
    double e_big = rep.C_M * detail::prime_zeta_tail(P0, 1.5) + rep.C_R * detail::prime_zeta_tail(P0, 2.0) +
                   rep.C_s * 2.0 * detail::prime_zeta_tail(P0, 2.0);
    double first_big = rep.C_R / (static_cast<double>(P0) * P0);
    logA += e_big / (1 - first_big);
    rep.q_tail = rep.c.hi * std::max(0.0, std::exp(logA) - sabs);

    // product of local densities
    rep.product_core = 1;
    double lo = 1, hi = 1;
    for (auto& pd : rep.primes) {
        rep.product_core *= pd.sp.sigma;
        double s = to_double(pd.sp.sigma);
        lo *= std::max(0.0, s - pd.tail);
        hi *= s + pd.tail;
    }
    double e_tail = rep.C_M * detail::prime_zeta_tail(P0, 1.5) + rep.C_s * 2.0 * detail::prime_zeta_tail(P0, 2.0);
    double e_first = rep.C_M * std::pow(static_cast<double>(P0), -1.5) + 2 * rep.C_s / (static_cast<double>(P0) * P0);
    rep.S_product = {lo * std::exp(-e_tail / std::max(1e-12, 1 - e_first)), hi * std::exp(e_tail)};
    rep.consistent = rep.S_trunc.hi + rep.q_tail >= rep.S_product.lo && rep.S_product.hi >= rep.S_trunc.lo - rep.q_tail;
    return rep;
}

inline nlohmann::json to_json(const Interval& i) { return {{"lo", i.lo}, {"hi", i.hi}}; }

inline nlohmann::json to_json(const DensityReport& r) {
    nlohmann::json j;
    j["M"] = r.M;
    j["Q"] = r.Q;
    j["P0"] = r.P0;
    j["PR"] = r.PR;
    j["depth"] = r.depth;
    nlohmann::json R = nlohmann::json::object();
    for (auto& [p, v] : r.R_table) R[std::to_string(p)] = v;
    j["R"] = R;
    j["C_R"] = r.C_R;
    j["C_M"] = r.C_M;
    j["C_s"] = r.C_s;
    j["c_core"] = to_string(r.c_core);
    j["c"] = to_json(r.c);
    nlohmann::json f = nlohmann::json::array();
    for (auto& v : r.f0_values) f.push_back(to_string(v));
    j["f0"] = f;
    j["S_trunc_core"] = to_string(r.S_trunc_core);
    j["S_trunc"] = to_json(r.S_trunc);
    j["q_tail"] = r.q_tail;
    j["product_core"] = to_string(r.product_core);
    j["S_product"] = to_json(r.S_product);
    j["consistent"] = r.consistent;
    j["max_lemma_ratio"] = r.max_lemma_ratio;
    nlohmann::json ps = nlohmann::json::array();
    for (auto& pd : r.primes) {
        nlohmann::json e;
        e["p"] = pd.sp.p;
        e["mu"] = pd.sp.mu;
        e["beta0"] = pd.sp.beta0;
        nlohmann::json cs = nlohmann::json::array();
        for (auto& c : pd.sp.counts) cs.push_back(c.str());
        e["M_counts"] = cs;
        e["sigma_star"] = to_string(pd.sp.sigma);
        e["stabilized"] = pd.sp.stabilized;
        e["R"] = pd.R;
        nlohmann::json fl = nlohmann::json::array();
        for (auto& v : pd.f0_local) fl.push_back(to_string(v));
        e["f0_local"] = fl;
        e["tail"] = pd.tail;
        ps.push_back(e);
    }
    j["primes"] = ps;
    return j;
}

}  // namespace normcount
