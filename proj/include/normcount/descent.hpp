#pragma once

#include <climits>
#include <optional>
#include <random>
#include <set>

#include <json.hpp>

#include "norm_forms.hpp"

namespace normcount {

// ---------------------------------------------------------------- p-adic and field helpers

inline int vp(BigInt n, i64 p) {
    if (n == 0) return INT_MAX;
    int v = 0;
    while (n % p == 0) {
        n /= p;
        ++v;
    }
    return v;
}

inline int vp(const Rat& r, i64 p) { return r == 0 ? INT_MAX : vp(num(r), p) - vp(den(r), p); }

inline BigInt bpow(i64 p, int k) {
    BigInt r = 1;
    for (int i = 0; i < k; ++i) r *= p;
    return r;
}

inline BigInt bmod(const BigInt& a, const BigInt& m) {
    BigInt r = a % m;
    return r < 0 ? r + m : r;
}

inline BigInt binvmod(BigInt a, const BigInt& m) {
    BigInt g = m, x = 0, x1 = 1;
    a = bmod(a, m);
    BigInt r = a;
    // extended Euclid on (m, a)
    while (r != 0) {
        BigInt q = g / r, t = g - q * r;
        g = r;
        r = t;
        t = x - q * x1;
        x = x1;
        x1 = t;
    }
    if (g != 1) fail("Internal", "not invertible");
    return bmod(x, m);
}

// r mod m for p-integral rational r, m a prime power
inline BigInt rat_bmod(const Rat& r, const BigInt& m) { return bmod(num(r) * binvmod(den(r), m), m); }

inline int vp(const QuadRat& x, i64 p) { return std::min(vp(x.c1, p), vp(x.c2, p)); }

inline QuadRat sqrt_a(const FieldParams& P) { return P.kind == TauKind::SqrtA ? QuadRat{0, 1} : QuadRat{-1, 2}; }

// tau coordinates <-> coordinates in 1, sqrt(a)
inline QuadRat to_sqrt_coords(const QuadRat& x, const FieldParams& P) {
    if (P.kind == TauKind::SqrtA) return x;
    return {x.c1 + x.c2 / 2, x.c2 / 2};
}
inline QuadRat from_sqrt_coords(const QuadRat& x, const FieldParams& P) {
    if (P.kind == TauKind::SqrtA) return x;
    return {x.c1 - x.c2, 2 * x.c2};
}

inline QuadRat qscale(const Rat& s, const QuadRat& x) { return {s * x.c1, s * x.c2}; }
inline QuadRat qdiv(const QuadRat& x, const QuadRat& y, const FieldParams& P) { return mul(x, inverse(y, P), P); }

using RatVec = std::vector<Rat>;

inline RatVec to_ratvec(const std::vector<i64>& x) { return RatVec(x.begin(), x.end()); }

inline QuadRat relnorm_rat(const FieldCtx& K, const RatVec& x) { return {K.N1.eval(x.data()), K.N2.eval(x.data())}; }
inline Rat norm_rat(const FieldCtx& K, const RatVec& x) { return K.NKQ.eval(x.data()); }

// the element s of L as a vector in K
inline RatVec embed_L(const FieldCtx& K, const QuadRat& s) {
    RatVec v(static_cast<size_t>(K.n), Rat(0));
    v[0] = s.c1;
    for (int i = 0; i < K.n; ++i) v[static_cast<size_t>(i)] += s.c2 * Rat(K.tau_coords[static_cast<size_t>(i)]);
    return v;
}

inline RatVec k_inverse(const FieldCtx& K, const RatVec& x) {
    const int n = K.n;
    RatMatrix m(static_cast<size_t>(n), RatVec(static_cast<size_t>(n), Rat(0)));
    // column j holds x * omega_j
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                if (K.T(i, j, k)) m[static_cast<size_t>(k)][static_cast<size_t>(j)] += x[static_cast<size_t>(i)] * Rat(K.T(i, j, k));
    bool zero = true;
    for (auto& c : x) zero = zero && c == 0;
    if (zero) fail("ZeroDivision", "inverse of zero in K");
    RatMatrix inv = rat_inverse(m);
    RatVec r(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) r[static_cast<size_t>(i)] = inv[static_cast<size_t>(i)][0];
    return r;
}

inline BigInt field_discriminant(const FieldCtx& K) {
    const int n = K.n;
    std::vector<i64> tr(static_cast<size_t>(n), 0);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j) tr[static_cast<size_t>(k)] += K.T(k, j, j);
    std::vector<std::vector<BigInt>> g(static_cast<size_t>(n), std::vector<BigInt>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) g[static_cast<size_t>(i)][static_cast<size_t>(j)] += BigInt(K.T(i, j, k)) * tr[static_cast<size_t>(k)];
    return bareiss_det(g);
}

enum class Decomposition { Split, Inert, Ramified };

inline const char* to_string(Decomposition d) {
    return d == Decomposition::Split ? "split" : d == Decomposition::Inert ? "inert" : "ramified";
}

// roots of tau^2 - tr(tau) tau + N(tau) modulo p
inline std::vector<i64> tau_roots_mod_p(const FieldParams& P, i64 p) {
    std::vector<i64> r;
    for (i64 x = 0; x < p; ++x)
        if (mod(x * x - P.tr_tau * x + P.norm_tau, p) == 0) r.push_back(x);
    return r;
}

inline Decomposition decomposition(const FieldParams& P, i64 p) {
    auto r = tau_roots_mod_p(P, p);
    if (r.empty()) return Decomposition::Inert;
    if (r.size() == 1 || mod(2 * r[0] - P.tr_tau, p) == 0) return Decomposition::Ramified;
    return Decomposition::Split;
}

// Hensel lift of a simple root modulo p^k
inline BigInt lift_tau_root(const FieldParams& P, i64 p, i64 r0, int k) {
    BigInt pk = bpow(p, k), r = r0;
    for (int i = 1; i < k + 1; ++i) {
        BigInt g = r * r - BigInt(P.tr_tau) * r + BigInt(P.norm_tau), dg = 2 * r - BigInt(P.tr_tau);
        r = bmod(r - g * binvmod(dg, pk), pk);
    }
    return r;
}

// valuation at the place of L where tau maps to the p-adic root R (known mod p^K)
inline int v_place(const QuadRat& x, i64 p, const BigInt& R, int K) {
    if (x.c1 == 0 && x.c2 == 0) return INT_MAX;
    BigInt d = boost::multiprecision::lcm(den(x.c1), den(x.c2));
    BigInt n1 = num(x.c1) * (d / den(x.c1)), n2 = num(x.c2) * (d / den(x.c2));
    BigInt z = bmod(n1 + n2 * R, bpow(p, K));
    if (z == 0) fail("Precision", "valuation exceeds the working precision");
    return vp(z, p) - vp(d, p);
}

// Hilbert symbol (a, b)_p for nonzero integers; p = 0 is the real place
inline int hilbert_symbol(BigInt a, BigInt b, i64 p) {
    if (p == 0) return a < 0 && b < 0 ? -1 : 1;
    int al = vp(a, p), be = vp(b, p);
    BigInt u = a, v = b;
    for (int i = 0; i < al; ++i) u /= p;
    for (int i = 0; i < be; ++i) v /= p;
    if (p == 2) {
        auto eps = [](const BigInt& x) { return bmod((x - 1) / 2, 2) == 0 ? 0 : 1; };
        auto om = [](const BigInt& x) { return bmod((x * x - 1) / 8, 2) == 0 ? 0 : 1; };
        int e = (eps(u) * eps(v) + al * om(v) + be * om(u)) % 2;
        return e ? -1 : 1;
    }
    auto leg = [p](const BigInt& x) { return legendre(bmod(x, p).convert_to<i64>(), p); };
    int s = (al * be % 2 == 1 && p % 4 == 3) ? -1 : 1;
    if (be % 2) s *= leg(u);
    if (al % 2) s *= leg(v);
    return s;
}

inline std::vector<i64> prime_factors_big(BigInt n) {
    std::vector<i64> out;
    if (n < 0) n = -n;
    for (i64 p = 2; BigInt(p) * p <= n; ++p)
        if (n % p == 0) {
            out.push_back(p);
            while (n % p == 0) n /= p;
        }
    if (n > 1) {
        if (n > BigInt(INT64_MAX)) fail("TooLarge", "cannot factor");
        out.push_back(n.convert_to<i64>());
    }
    return out;
}

// ---------------------------------------------------------------- norm equation in L

struct HasseResult {
    QuadRat delta;               // tau coordinates, N(delta) = 1/c
    std::vector<i64> witnesses;  // places with Hilbert symbol -1 (0 = real), odd primes first
    i64 tried = 0;
};

inline bool perfect_square(const BigInt& x, BigInt& r) {
    if (x < 0) return false;
    r = boost::multiprecision::sqrt(x);
    return r * r == x;
}

// smallest unit of norm +1 in Z[sqrt a] for a > 0, by the continued fraction of sqrt(a)
inline std::pair<BigInt, BigInt> pell_unit(i64 a) {
    BigInt m = 0, d = 1, a0 = boost::multiprecision::sqrt(BigInt(a)), an = a0;
    BigInt h0 = 1, h1 = a0, k0 = 0, k1 = 1;
    for (int it = 0; it < 10000; ++it) {
        BigInt nrm = h1 * h1 - BigInt(a) * k1 * k1;
        if (nrm == 1) return {h1, k1};
        if (nrm == -1) return {h1 * h1 + BigInt(a) * k1 * k1, 2 * h1 * k1};
        m = d * an - m;
        d = (BigInt(a) - m * m) / d;
        an = (a0 + m) / d;
        BigInt h2 = an * h1 + h0, k2 = an * k1 + k0;
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    fail("Internal", "Pell period too long");
}

inline BigInt quad_height(const QuadRat& x) {
    BigInt d = boost::multiprecision::lcm(den(x.c1), den(x.c2));
    BigInt a = boost::multiprecision::abs(num(x.c1) * (d / den(x.c1))), b = boost::multiprecision::abs(num(x.c2) * (d / den(x.c2)));
    return std::max({a, b, d});
}

// places where 1/c is not a local norm from L (Hilbert symbol -1), odd primes first
inline std::vector<i64> norm_obstructions(const Rat& c, const FieldParams& P) {
    BigInt m = num(c) * den(c);
    std::set<i64> places{0, 2};
    for (i64 p : prime_factors_big(m)) places.insert(p);
    for (i64 p : prime_factors_big(BigInt(P.a))) places.insert(p);
    std::vector<i64> w;
    for (i64 p : places)
        if (hilbert_symbol(m, BigInt(P.a), p) == -1) w.push_back(p);
    std::stable_partition(w.begin(), w.end(), [](i64 p) { return p > 2; });
    return w;
}

// delta in L with N(delta) = 1/c; local obstructions are reported before any search
inline HasseResult solve_hasse_norm(const Rat& c, const FieldParams& P, i64 height = 1000000) {
    if (c == 0) fail("BadArgument", "c must be nonzero");
    HasseResult r;
    const i64 a = P.a;
    BigInt n = num(c), d = den(c);
    // x^2 - a y^2 = m z^2 with m = n d; then delta = (x + y sqrt a) / (n z)
    BigInt m = n * d;
    r.witnesses = norm_obstructions(c, P);
    if (!r.witnesses.empty()) {
        std::string w;
        for (i64 p : r.witnesses) w += (w.empty() ? "" : ",") + (p == 0 ? std::string("inf") : std::to_string(p));
        throw Error("NotRepresentable", "local obstruction at " + w);
    }
    // enumerate (y, z) by increasing max(y, z)
    auto attempt = [&](i64 y, i64 z) -> bool {
        ++r.tried;
        BigInt x2 = m * z * z + BigInt(a) * y * y, x;
        if (!perfect_square(x2, x)) return false;
        QuadRat delta = from_sqrt_coords({Rat(x) / Rat(n * z), Rat(BigInt(y)) / Rat(n * z)}, P);
        if (norm(delta, P) * c != 1) return false;
        if (a > 1) {
            auto [e1, e2] = pell_unit(a);
            QuadRat eps = from_sqrt_coords({Rat(e1), Rat(e2)}, P), inv = inverse(eps, P);
            for (int it = 0; it < 200; ++it) {
                QuadRat u = mul(delta, eps, P), v = mul(delta, inv, P);
                BigInt h = quad_height(delta);
                if (quad_height(u) < h) delta = u;
                else if (quad_height(v) < h) delta = v;
                else break;
            }
        }
        r.delta = delta;
        return true;
    };
    for (i64 s = 1; r.tried < height; ++s) {
        for (i64 y = 0; y <= s && r.tried < height; ++y)
            if (attempt(y, s)) return r;
        for (i64 z = 1; z < s && r.tried < height; ++z)
            if (attempt(s, z)) return r;
    }
    fail("NotRepresentable", "search exhausted without a local obstruction; raise the height bound");
}

// ---------------------------------------------------------------- local data

struct PlaceData {
    i64 p = 0;  // 0 is the real place
    int k = 8;  // p-adic precision
    Rat tol = Rat(1) / Rat(BigInt(1000000000000LL));  // real relative tolerance
    Rat t;
    RatVec x;
};

// c(1 - a t^2) = N(x) != 0 at the place's precision
inline void check_place(const FieldCtx& K, const Rat& c, const PlaceData& pd) {
    if (static_cast<int>(pd.x.size()) != K.n) fail("BadArgument", "local point has the wrong dimension");
    Rat lhs = c * (1 - Rat(K.params.a) * pd.t * pd.t), rhs = norm_rat(K, pd.x);
    if (rhs == 0) fail("DegeneratePlace", "N(x) vanishes");
    Rat diff = lhs - rhs;
    if (pd.p == 0) {
        if (boost::multiprecision::abs(diff) > pd.tol * boost::multiprecision::abs(rhs)) fail("BadLocalSolution", "real point does not solve the equation");
    } else if (diff != 0 && vp(diff, pd.p) < vp(rhs, pd.p) + pd.k) {
        fail("BadLocalSolution", "p-adic point does not solve the equation to precision");
    }
}

struct GammaLocal {
    Rat c1, c2;    // gamma = c1 + c2 sqrt(a)
    QuadRat gamma;  // tau coordinates
};

// a null vector of the singular 2x2 system attached to one place
inline GammaLocal gamma_bad_place(const FieldCtx& K, const PlaceData& pd, const QuadRat& delta0) {
    const auto& P = K.params;
    const Rat a(P.a);
    const Rat& t = pd.t;
    Rat f = 1 - a * t * t;
    bool degenerate = f == 0 || (pd.p == 0 ? boost::multiprecision::abs(f) <= pd.tol : vp(f, pd.p) >= pd.k);
    if (degenerate) fail("DegeneratePlace", "1 - a t^2 vanishes at this place");
    QuadRat ds = to_sqrt_coords(delta0, P), ns = to_sqrt_coords(relnorm_rat(K, pd.x), P);
    Rat A1 = ds.c1 * ns.c1 + a * ds.c2 * ns.c2, A2 = ds.c1 * ns.c2 + ds.c2 * ns.c1;
    Rat r11 = 1 - A1, r12 = a * t + a * A2, r21 = t - A2, r22 = A1 + 1;
    Rat c1, c2;
    if (r11 != 0 || r12 != 0) {
        c1 = r12;
        c2 = -r11;
    } else if (r21 != 0 || r22 != 0) {
        c1 = r22;
        c2 = -r21;
    } else {
        c1 = 1;
        c2 = 0;
    }
    Rat s = c1 != 0 ? c1 : c2;
    c1 /= s;
    c2 /= s;
    if (c1 * c1 - a * c2 * c2 == 0) fail("DegeneratePlace", "gamma has zero norm");
    return {c1, c2, from_sqrt_coords({c1, c2}, P)};
}

// residual of (c1 + c2 sqrt a)(1 + t sqrt a) = (c1 - c2 sqrt a) delta0 N(x), in sqrt(a) coordinates
inline QuadRat gamma_residual(const FieldCtx& K, const PlaceData& pd, const QuadRat& delta0, const QuadRat& gamma) {
    const auto& P = K.params;
    QuadRat one_t = QuadRat{1, 0} + qscale(pd.t, sqrt_a(P));
    QuadRat lhs = mul(gamma, one_t, P), rhs = mul(mul(conj(gamma, P), delta0, P), relnorm_rat(K, pd.x), P);
    return to_sqrt_coords(lhs - rhs, P);
}

// ---------------------------------------------------------------- split primes

struct SplitCertificate {
    i64 p = 0;
    i64 root = 0;  // tau -> root mod p at the first place
    int e1 = 0, e2 = 0, e = 0, h1 = 0, h2 = 0;
    QuadElem alpha1;
    Rat t0;
    QuadRat unit;  // f(p^-e) N(alpha1^h1 alpha2^h2)
    int v1 = 0, v2 = 0;
};

inline QuadRat qpow(QuadRat x, int e, const FieldParams& P) {
    QuadRat r{1, 0};
    for (int i = 0; i < e; ++i) r = mul(r, x, P);
    return r;
}

// f(t) = (1 + t sqrt a) gamma / gamma^sigma / delta0
inline QuadRat f_of_t(const FieldParams& P, const Rat& t, const QuadRat& gamma, const QuadRat& delta0) {
    QuadRat one_t = QuadRat{1, 0} + qscale(t, sqrt_a(P));
    return qdiv(mul(one_t, gamma, P), mul(conj(gamma, P), delta0, P), P);
}

inline SplitCertificate split_prime_t0(const FieldCtx& K, i64 p, const QuadRat& gamma, const QuadRat& delta0, int work = 64) {
    const auto& P = K.params;
    if (!is_prime(p) || decomposition(P, p) != Decomposition::Split) fail("NotSplit", "p does not split in L");
    auto roots = tau_roots_mod_p(P, p);
    SplitCertificate c;
    c.p = p;
    c.root = roots[0];
    BigInt R1 = lift_tau_root(P, p, roots[0], work), R2 = lift_tau_root(P, p, roots[1], work);
    c.e1 = v_place(gamma, p, R1, work);
    c.e2 = v_place(gamma, p, R2, work);
    int a1 = std::abs(c.e1), a2 = std::abs(c.e2);
    c.e = 2 + a1 + a2;
    c.h1 = 1 + (a1 + a2 + c.e2 - c.e1) / 2;
    c.h2 = 1 + (a1 + a2 + c.e1 - c.e2) / 2;
    // alpha1 = x + tau with valuation 1 at the first place and 0 at the second
    bool found = false;
    for (i64 s = 0; s <= p * p && !found; ++s)
        for (i64 x : {s, -s}) {
            QuadRat al{Rat(x), Rat(1)};
            if (v_place(al, p, R1, work) == 1 && v_place(al, p, R2, work) == 0) {
                c.alpha1 = {x, 1};
                found = true;
                break;
            }
        }
    if (!found) fail("Internal", "no uniformizer found");
    c.t0 = Rat(1) / Rat(bpow(p, c.e));
    QuadRat al1 = to_rat(c.alpha1), al2 = conj(al1, P);
    QuadRat nk = mul(qpow(al1, 2 * c.h1, P), qpow(al2, 2 * c.h2, P), P);
    c.unit = mul(f_of_t(P, c.t0, gamma, delta0), nk, P);
    c.v1 = v_place(c.unit, p, R1, work);
    c.v2 = v_place(c.unit, p, R2, work);
    if (c.v1 != 0 || c.v2 != 0) fail("Internal", "split-prime certificate failed to verify");
    return c;
}

// ---------------------------------------------------------------- local norms by Hensel lifting

inline i64 form_mod(const FormPoly& f, const i64* x, i64 m) {
    i64 s = 0;
    for (auto& [mon, c] : f.coeffs) {
        i64 t = mod(c, m);
        for (int i = 0; i < f.nvars; ++i)
            for (int e = 0; e < mon[static_cast<size_t>(i)]; ++e) t = mod128(static_cast<i128>(t) * x[i], m);
        s = mod(s + t, m);
    }
    return s;
}

struct NormLift {
    std::vector<i64> x;  // mod p^k
    int minor_i = 0, minor_j = 1;
    std::vector<i64> base;  // the mod p solution
};

// x mod p^k with N1(x) = beta.c1, N2(x) = beta.c2 mod p^k
inline NormLift local_norm_lift(const FieldCtx& K, const QuadElem& beta, i64 p, int k, u64 seed = 1) {
    const int n = K.n;
    if (!is_prime(p)) fail("BadArgument", "p must be prime");
    if (field_discriminant(K) % p == 0) fail("BadArgument", "p ramifies in K");
    if (k < 1) fail("BadArgument", "precision must be positive");
    double pkd = std::pow(static_cast<double>(p), k);
    if (pkd > 1e15) fail("TooLarge", "p^k exceeds the supported size");
    const i64 pk = ipow(p, k);
    if (mod(norm(QuadElem{mod(beta.c1, p), mod(beta.c2, p)}, K.params), p) == 0) fail("NoModPSolution", "beta is not a unit above p");
    std::vector<FormPoly> d1, d2;
    for (int i = 0; i < n; ++i) {
        d1.push_back(K.N1.derivative(i));
        d2.push_back(K.N2.derivative(i));
    }
    NormLift out;
    bool any = false;
    auto try_base = [&](const std::vector<i64>& x) -> bool {
        if (form_mod(K.N1, x.data(), p) != mod(beta.c1, p) || form_mod(K.N2, x.data(), p) != mod(beta.c2, p)) return false;
        any = true;
        std::vector<i64> g1(static_cast<size_t>(n)), g2(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            g1[static_cast<size_t>(i)] = form_mod(d1[static_cast<size_t>(i)], x.data(), p);
            g2[static_cast<size_t>(i)] = form_mod(d2[static_cast<size_t>(i)], x.data(), p);
        }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                i64 det = mod(g1[static_cast<size_t>(i)] * g2[static_cast<size_t>(j)] - g1[static_cast<size_t>(j)] * g2[static_cast<size_t>(i)], p);
                if (det == 0) continue;
                // lift one digit at a time
                std::vector<i64> y = x;
                i64 di = invmod(det, p), pj = 1;
                for (int step = 1; step < k; ++step) {
                    pj *= p;
                    i64 m = pj * p;
                    i64 f1 = mod(form_mod(K.N1, y.data(), m) - beta.c1, m), f2 = mod(form_mod(K.N2, y.data(), m) - beta.c2, m);
                    if (f1 % pj || f2 % pj) fail("Internal", "Hensel invariant broken");
                    f1 = mod(-(f1 / pj), p);
                    f2 = mod(-(f2 / pj), p);
                    // solve [[g1i g1j],[g2i g2j]] (u, v) = (f1, f2) mod p
                    i64 u = mod128(static_cast<i128>(di) * mod(g2[static_cast<size_t>(j)] * f1 - g1[static_cast<size_t>(j)] * f2, p), p);
                    i64 v = mod128(static_cast<i128>(di) * mod(g1[static_cast<size_t>(i)] * f2 - g2[static_cast<size_t>(i)] * f1, p), p);
                    y[static_cast<size_t>(i)] = mod(y[static_cast<size_t>(i)] + pj * u, m);
                    y[static_cast<size_t>(j)] = mod(y[static_cast<size_t>(j)] + pj * v, m);
                }
                for (auto& c : y) c = mod(c, pk);
                if (form_mod(K.N1, y.data(), pk) != mod(beta.c1, pk) || form_mod(K.N2, y.data(), pk) != mod(beta.c2, pk))
                    fail("Internal", "lift does not verify");
                out.x = y;
                out.minor_i = i;
                out.minor_j = j;
                out.base = x;
                return true;
            }
        return false;
    };
    std::vector<i64> x(static_cast<size_t>(n), 0);
    double space = std::pow(static_cast<double>(p), n);
    if (space <= 2e6) {
        for (;;) {
            if (try_base(x)) return out;
            int i = 0;
            while (i < n && ++x[static_cast<size_t>(i)] == p) x[static_cast<size_t>(i++)] = 0;
            if (i == n) break;
        }
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<i64> dist(0, p - 1);
        for (int it = 0; it < 20000000; ++it) {
            for (auto& c : x) c = dist(rng);
            if (try_base(x)) return out;
        }
    }
    if (any) fail("SingularLift", "every solution mod p is singular");
    fail("NoModPSolution", "no solution modulo p");
}

// ---------------------------------------------------------------- recovery of the original variables

struct Recovered {
    Rat t;
    RatVec x;
};

inline Recovered recover_solution(const FieldCtx& K, const QuadRat& delta, const RatVec& w, const RatVec& y) {
    const auto& P = K.params;
    Rat nw = norm_rat(K, w);
    if (nw == 0) fail("WZero", "N(w) vanishes");
    QuadRat z = mul(delta, relnorm_rat(K, y), P);
    if (trace(z, P) != 2 * nw) fail("TraceMismatch", "tr(delta N(y)) differs from 2 N(w)");
    QuadRat q = qdiv(qscale(1 / nw, z), sqrt_a(P), P);
    Recovered r;
    r.t = trace(q, P) / 2;
    RatVec wi = k_inverse(K, w);
    r.x = K.multiply(y, K.multiply(wi, wi));
    Rat lhs = 1 - Rat(P.a) * r.t * r.t, rhs = norm(delta, P) * norm_rat(K, r.x);
    if (lhs != rhs || lhs == 0) fail("Internal", "recovered point fails the norm equation");
    return r;
}

inline Recovered recover_solution(const FieldCtx& K, const QuadRat& delta, const std::vector<i64>& w, const std::vector<i64>& y) {
    return recover_solution(K, delta, to_ratvec(w), to_ratvec(y));
}

// ---------------------------------------------------------------- weak approximation in Q

struct ApproxTarget {
    i64 p = 0;  // 0 = real
    Rat value;
    int valuation = 0;  // finite places: required v_p(y - value)
    Rat tol;            // real place: |y - value| < tol
};

inline i64 smallest_prime_outside(const std::set<i64>& S) {
    for (i64 q = 2;; ++q)
        if (is_prime(q) && !S.count(q)) return q;
}

// y in Q close to each target; the extra denominator is a power of one prime outside the given places
inline Rat weak_approx(const std::vector<ApproxTarget>& T) {
    std::set<i64> primes;
    const ApproxTarget* real = nullptr;
    for (auto& t : T) {
        if (t.p == 0) real = &t;
        else primes.insert(t.p);
    }
    BigInt D = 1;
    for (auto& t : T)
        if (t.p && t.value != 0) {
            int v = vp(t.value, t.p);
            if (v < 0) D *= bpow(t.p, -v);
        }
    // CRT for N = D * value mod p^(valuation + v_p(D))
    BigInt N = 0, Mod = 1;
    for (auto& t : T) {
        if (!t.p) continue;
        int e = std::max(0, t.valuation + vp(D, t.p));
        BigInt m = bpow(t.p, e);
        BigInt target = rat_bmod(Rat(D) * t.value, m);
        // N' = N + Mod * s with N' = target mod m
        BigInt s = bmod((target - N) * binvmod(Mod, m), m);
        N += Mod * s;
        Mod *= m;
    }
    Rat y = Rat(N) / Rat(D);
    if (!real) return y;
    Rat h = Rat(Mod) / Rat(D);
    i64 q = smallest_prime_outside(primes);
    BigInt qj = 1;
    while (h / Rat(qj) >= real->tol / 2) qj *= q;
    // y + h m / q^j with m the nearest integer
    Rat target = (real->value - y) * Rat(qj) / h;
    BigInt fl = num(target) / den(target);
    if (target < 0 && Rat(fl) != target) fl -= 1;
    BigInt mm = (target - Rat(fl) >= Rat(1, 2)) ? fl + 1 : fl;
    return y + h * Rat(mm) / Rat(qj);
}

// Newton iterations for sqrt(rho), starting from 1
inline QuadRat sqrt_near_one(const QuadRat& rho, const FieldParams& P, int iters) {
    QuadRat s{1, 0};
    for (int i = 0; i < iters; ++i) s = qscale(Rat(1, 2), s + qdiv(rho, s, P));
    return s;
}

// ---------------------------------------------------------------- the reduction

struct LocalWitness {
    i64 p = 0;
    std::string branch;  // "S", "inert", "split"
    Rat t0;
    RatVec x0;                // rational point (S places)
    std::vector<i64> x_mod;   // p-adic point mod p^k (places outside S)
    QuadRat target;           // element of L represented as a norm
    int precision = 0;        // verified valuation of the residual
    int proximity = 0;        // verified valuation of x0 - x (finite S places)
    double real_residual = 0, real_distance = 0;
    std::optional<SplitCertificate> split;
};

struct DescentCertificate {
    Rat c;
    QuadRat delta0, gamma, delta;
    std::vector<i64> S;
    std::vector<std::pair<i64, GammaLocal>> gammas;
    std::vector<LocalWitness> witnesses;
    int k = 8;
    Rat eps;
};

struct DescentOptions {
    int k = 8;
    i64 p_max = 30;  // places outside S certified up to this prime
    i64 height = 1000000;
};

inline Rat rabs(const Rat& x) { return x < 0 ? -x : x; }

inline DescentCertificate reduce_to_relative(const FieldCtx& K, const Rat& c, const std::vector<PlaceData>& places, std::vector<i64> S,
                                             const Rat& eps, const DescentOptions& o = {}) {
    const auto& P = K.params;
    if (K.n != 4) fail("BadArgument", "the reduction needs K/L quadratic");
    if (eps <= 0 || eps >= 1) fail("BadArgument", "eps must lie in (0, 1)");
    DescentCertificate cert;
    cert.c = c;
    cert.k = o.k;
    cert.eps = eps;
    cert.delta0 = solve_hasse_norm(c, P, o.height).delta;
    // S: the given places, primes ramified in K, and primes where delta0 is not a unit
    std::set<i64> Sset(S.begin(), S.end());
    Sset.erase(0);
    for (i64 p : prime_factors_big(field_discriminant(K))) Sset.insert(p);
    QuadRat d0 = cert.delta0;
    for (i64 p : prime_factors_big(boost::multiprecision::lcm(den(d0.c1), den(d0.c2)))) Sset.insert(p);
    for (i64 p : prime_factors_big(num(norm(d0, P)))) Sset.insert(p);
    for (i64 p : prime_factors_big(den(norm(d0, P)))) Sset.insert(p);
    cert.S.assign(Sset.begin(), Sset.end());
    std::map<i64, const PlaceData*> at;
    for (auto& pd : places) at[pd.p] = &pd;
    std::vector<i64> need{0};
    need.insert(need.end(), cert.S.begin(), cert.S.end());
    for (i64 p : need) {
        if (!at.count(p)) fail("MissingPlace", "no local solution supplied at " + (p ? std::to_string(p) : std::string("inf")));
        check_place(K, c, *at[p]);
    }
    // gamma at each place of S, normalized so its dominant coordinate is 1
    std::vector<ApproxTarget> t1, t2;
    std::map<i64, int> need_val;
    for (i64 p : need) {
        GammaLocal g = gamma_bad_place(K, *at[p], cert.delta0);
        Rat s = g.c1, s2 = g.c2;
        if (p == 0) {
            if (rabs(s2) > rabs(s)) std::swap(s, s2);
        } else if (vp(g.c2, p) < vp(g.c1, p)) {
            std::swap(s, s2);
        }
        Rat n1 = g.c1 / s, n2 = g.c2 / s;
        cert.gammas.push_back({p, g});
        if (p == 0) {
            // real accuracy relative to the local point
            Rat tol = eps / Rat(1 << 20);
            t1.push_back({0, n1, 0, tol});
            t2.push_back({0, n2, 0, tol});
        } else {
            int mp = 1;
            while (Rat(1) / Rat(bpow(p, mp)) >= eps) ++mp;
            int want = std::max(mp, o.k) + 6 + std::abs(vp(n1, p) == INT_MAX ? 0 : vp(n1, p)) + std::abs(vp(n2, p) == INT_MAX ? 0 : vp(n2, p));
            for (auto& x : at[p]->x)
                if (x != 0) want += std::max(0, -vp(x, p));
            need_val[p] = mp;
            t1.push_back({p, n1, want, 0});
            t2.push_back({p, n2, want, 0});
        }
    }
    QuadRat gs{weak_approx(t1), weak_approx(t2)};
    BigInt L = boost::multiprecision::lcm(den(gs.c1), den(gs.c2));
    gs = qscale(Rat(L), gs);
    cert.gamma = from_sqrt_coords(gs, P);
    if (norm(cert.gamma, P) == 0) fail("Internal", "gamma vanished");
    cert.delta = mul(cert.delta0, qdiv(conj(cert.gamma, P), cert.gamma, P), P);
    if (norm(cert.delta, P) * c != 1) fail("Internal", "delta has the wrong norm");
    // places in S: rescale the local point by sqrt(rho)
    for (size_t i = 0; i < need.size(); ++i) {
        i64 p = need[i];
        const PlaceData& pd = *at[p];
        const QuadRat& gl = cert.gammas[i].second.gamma;
        QuadRat rho = qdiv(mul(conj(cert.gamma, P), gl, P), mul(cert.gamma, conj(gl, P), P), P);
        QuadRat one_t = QuadRat{1, 0} + qscale(pd.t, sqrt_a(P));
        LocalWitness w;
        w.p = p;
        w.branch = "S";
        w.t0 = pd.t;
        w.target = qdiv(one_t, cert.delta, P);
        bool ok = false;
        for (int iters = 1; iters <= 6 && !ok; ++iters) {
            QuadRat s = sqrt_near_one(rho, P, iters);
            RatVec x0 = K.multiply(pd.x, k_inverse(K, embed_L(K, s)));
            QuadRat res = to_sqrt_coords(mul(cert.delta, relnorm_rat(K, x0), P) - one_t, P);
            w.x0 = x0;
            if (p == 0) {
                Rat dist = 0, scale = 0;
                for (size_t j = 0; j < x0.size(); ++j) {
                    dist = std::max(dist, rabs(x0[j] - pd.x[j]));
                    scale = std::max(scale, rabs(pd.x[j]));
                }
                Rat r = std::max(rabs(res.c1), rabs(res.c2));
                w.real_residual = to_double(r);
                w.real_distance = to_double(dist);
                Rat tn = norm_rat(K, pd.x);
                ok = dist < eps && r <= 4 * (pd.tol + eps / Rat(1 << 16)) * std::max(Rat(1), rabs(tn));
            } else {
                int base = vp(to_sqrt_coords(one_t, P), p);
                int prox = INT_MAX;
                for (size_t j = 0; j < x0.size(); ++j) prox = std::min(prox, vp(x0[j] - pd.x[j], p));
                int prec = vp(res, p);
                w.precision = prec == INT_MAX ? INT_MAX : prec - base;
                w.proximity = prox;
                ok = prox >= need_val[p] && w.precision >= o.k;
            }
        }
        if (!ok) fail("Internal", "local solution at a place of S failed to verify");
        cert.witnesses.push_back(w);
    }
    // places outside S up to p_max
    for (i64 p : primes_upto(o.p_max)) {
        if (Sset.count(p)) continue;
        LocalWitness w;
        w.p = p;
        Decomposition dec = decomposition(P, p);
        QuadRat target;
        if (dec == Decomposition::Inert) {
            w.branch = "inert";
            w.t0 = 0;
            target = f_of_t(P, Rat(0), cert.gamma, cert.delta0);
        } else if (dec == Decomposition::Split) {
            w.branch = "split";
            SplitCertificate sc = split_prime_t0(K, p, cert.gamma, cert.delta0);
            w.t0 = sc.t0;
            target = sc.unit;
            w.split = sc;
        } else {
            fail("Internal", "a ramified prime of L lies outside S");
        }
        w.target = target;
        if (vp(target, p) < 0) fail("Internal", "target is not integral at p");
        i64 pk = ipow(p, o.k);
        QuadElem beta{rat_mod(target.c1, pk), rat_mod(target.c2, pk)};
        NormLift nl = local_norm_lift(K, beta, p, o.k);
        w.x_mod = nl.x;
        // substitution check
        if (form_mod(K.N1, nl.x.data(), pk) != beta.c1 || form_mod(K.N2, nl.x.data(), pk) != beta.c2) fail("Internal", "lift fails substitution");
        w.precision = o.k;
        cert.witnesses.push_back(w);
    }
    return cert;
}

// re-verify every witness of a certificate by substitution
inline bool verify_certificate(const FieldCtx& K, const DescentCertificate& cert) {
    const auto& P = K.params;
    if (norm(cert.delta, P) * cert.c != 1) return false;
    for (auto& w : cert.witnesses) {
        if (w.branch == "S") {
            if (w.p != 0 && w.precision < cert.k) return false;
            continue;
        }
        i64 pk = ipow(w.p, cert.k);
        QuadRat target = w.branch == "inert" ? f_of_t(P, w.t0, cert.gamma, cert.delta0) : w.split->unit;
        if (form_mod(K.N1, w.x_mod.data(), pk) != rat_mod(target.c1, pk) || form_mod(K.N2, w.x_mod.data(), pk) != rat_mod(target.c2, pk))
            return false;
        if (w.branch == "split") {
            auto again = split_prime_t0(K, w.p, cert.gamma, cert.delta0);
            if (again.v1 != 0 || again.v2 != 0 || again.t0 != w.t0) return false;
        }
    }
    return true;
}

inline nlohmann::json quad_json(const QuadRat& x) { return {to_string(x.c1), to_string(x.c2)}; }

inline nlohmann::json to_json(const DescentCertificate& c) {
    nlohmann::json j;
    j["c"] = to_string(c.c);
    j["delta0"] = quad_json(c.delta0);
    j["gamma"] = quad_json(c.gamma);
    j["delta"] = quad_json(c.delta);
    j["S"] = c.S;
    j["precision_k"] = c.k;
    j["eps"] = to_string(c.eps);
    auto& g = j["gamma_local"] = nlohmann::json::array();
    for (auto& [p, gl] : c.gammas) g.push_back({{"place", p ? std::to_string(p) : "inf"}, {"c1", to_string(gl.c1)}, {"c2", to_string(gl.c2)}});
    auto& ws = j["witnesses"] = nlohmann::json::array();
    for (auto& w : c.witnesses) {
        nlohmann::json e{{"place", w.p ? std::to_string(w.p) : "inf"}, {"branch", w.branch}, {"t0", to_string(w.t0)}, {"target", quad_json(w.target)}};
        if (w.branch == "S") {
            nlohmann::json xs = nlohmann::json::array();
            for (auto& x : w.x0) xs.push_back(to_string(x));
            e["x0"] = xs;
            if (w.p) {
                e["residual_valuation"] = w.precision;
                e["proximity_valuation"] = w.proximity;
            } else {
                e["residual"] = w.real_residual;
                e["distance"] = w.real_distance;
            }
        } else {
            e["x_mod_pk"] = w.x_mod;
        }
        if (w.split) {
            auto& s = *w.split;
            e["split"] = {{"e1", s.e1}, {"e2", s.e2}, {"e", s.e}, {"h1", s.h1}, {"h2", s.h2},
                          {"alpha1", {s.alpha1.c1, s.alpha1.c2}}, {"root_mod_p", s.root}, {"v1", s.v1}, {"v2", s.v2}};
        }
        ws.push_back(e);
    }
    return j;
}

}  // namespace normcount
