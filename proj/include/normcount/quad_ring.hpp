#pragma once

#include <map>
#include <mutex>
#include <ostream>
#include <vector>

#include "errors.hpp"
#include "rational.hpp"

namespace normcount {

enum class TauKind { SqrtA, Half };

// L = Q(sqrt a); tau = sqrt a when a = 2,3 mod 4, (1 + sqrt a)/2 when a = 1 mod 4
struct FieldParams {
    i64 a = -1;
    TauKind kind = TauKind::SqrtA;
    i64 tr_tau = 0;
    i64 tr_tau2 = -2;
    i64 dl_sq = -4;
    i64 norm_tau = 1;  // tau^2 = tr_tau * tau - norm_tau
};

inline FieldParams make_params(i64 a) {
    if (a == 0 || a == 1 || !squarefree(a)) fail("BadField", "a must be squarefree and not 0 or 1");
    FieldParams p;
    p.a = a;
    if (mod(a, 4) == 1) {
        p.kind = TauKind::Half;
        p.tr_tau = 1;
        p.norm_tau = (1 - a) / 4;
    } else {
        p.kind = TauKind::SqrtA;
        p.tr_tau = 0;
        p.norm_tau = -a;
    }
    p.tr_tau2 = p.tr_tau * p.tr_tau - 2 * p.norm_tau;
    p.dl_sq = 2 * p.tr_tau2 - p.tr_tau * p.tr_tau;
    return p;
}

template <class T>
struct Quad {
    T c1{}, c2{};
    friend bool operator==(const Quad& x, const Quad& y) { return x.c1 == y.c1 && x.c2 == y.c2; }
    friend bool operator<(const Quad& x, const Quad& y) {
        return x.c1 < y.c1 || (x.c1 == y.c1 && x.c2 < y.c2);
    }
    friend Quad operator+(const Quad& x, const Quad& y) { return {x.c1 + y.c1, x.c2 + y.c2}; }
    friend Quad operator-(const Quad& x, const Quad& y) { return {x.c1 - y.c1, x.c2 - y.c2}; }
    friend Quad operator*(const T& s, const Quad& x) { return {s * x.c1, s * x.c2}; }
    friend std::ostream& operator<<(std::ostream& o, const Quad& x) {
        return o << "(" << x.c1 << "," << x.c2 << ")";
    }
};

using QuadElem = Quad<i64>;
using QuadRat = Quad<Rat>;

inline QuadRat to_rat(const QuadElem& x) { return {Rat(x.c1), Rat(x.c2)}; }

template <class T>
Quad<T> mul(const Quad<T>& x, const Quad<T>& y, const FieldParams& P) {
    T t = x.c2 * y.c2;
    return {x.c1 * y.c1 - T(P.norm_tau) * t, x.c1 * y.c2 + x.c2 * y.c1 + T(P.tr_tau) * t};
}

template <class T>
Quad<T> conj(const Quad<T>& x, const FieldParams& P) {
    return {x.c1 + T(P.tr_tau) * x.c2, -x.c2};
}

template <class T>
T norm(const Quad<T>& x, const FieldParams& P) {
    return x.c1 * x.c1 + T(P.tr_tau) * x.c1 * x.c2 + T(P.norm_tau) * x.c2 * x.c2;
}

template <class T>
T trace(const Quad<T>& x, const FieldParams& P) {
    return T(2) * x.c1 + T(P.tr_tau) * x.c2;
}

inline QuadRat inverse(const QuadRat& x, const FieldParams& P) {
    Rat n = norm(x, P);
    if (n == 0) fail("ZeroDivision", "inverse of zero in L");
    QuadRat c = conj(x, P);
    return {c.c1 / n, c.c2 / n};
}

struct ConjNormTrace {
    QuadElem conj;
    i64 norm;
    i64 trace;
};

inline ConjNormTrace conj_norm_trace(const QuadElem& x, const FieldParams& P) {
    return {conj(x, P), norm(x, P), trace(x, P)};
}

// D_L = tau - tau^sigma
inline QuadElem different(const FieldParams& P) { return {-P.tr_tau, 2}; }

// tr(x y^sigma / D_L) equals the tau-coordinate of x y^sigma
template <class T>
T skew_trace(const Quad<T>& x, const Quad<T>& y, const FieldParams& P) {
    return mul(x, conj(y, P), P).c2;
}

inline Rat frac_part(const Rat& r) {
    BigInt n = num(r), d = den(r);
    BigInt m = n % d;
    if (m < 0) m += d;
    return Rat(m, d);
}

inline Rat eL_q(const QuadElem& x, i64 q) { return rat(mod(x.c2, q), q); }
inline Rat eL_q(const QuadRat& x, i64 q) { return frac_part(x.c2 / Rat(q)); }

inline std::vector<QuadElem> star_residues(i64 q) {
    std::vector<QuadElem> r;
    for (i64 a = 0; a < q; ++a)
        for (i64 b = 0; b < q; ++b)
            if (gcd3(q, a, b) == 1) r.push_back({a, b});
    return r;
}

// cyclotomic polynomial, coefficients low to high
inline std::vector<i64> cyclotomic(i64 q) {
    static std::map<i64, std::vector<i64>> cache;
    static std::recursive_mutex mu;
    std::lock_guard<std::recursive_mutex> lock(mu);
    if (auto it = cache.find(q); it != cache.end()) return it->second;
    std::vector<i64> p(static_cast<size_t>(q + 1), 0);
    p[0] = -1;
    p[q] = 1;
    for (i64 d : divisors(q)) {
        if (d == q) continue;
        auto f = cyclotomic(d);
        i64 df = static_cast<i64>(f.size()) - 1;
        std::vector<i64> quo(p.size() - static_cast<size_t>(df), 0);
        for (i64 i = static_cast<i64>(p.size()) - 1; i >= df; --i) {
            i64 c = p[i];
            quo[i - df] = c;
            if (c)
                for (i64 j = 0; j <= df; ++j) p[i - df + j] -= c * f[j];
        }
        p = quo;
    }
    cache[q] = p;
    return p;
}

// exact value of sum_k counts[k] e(k/q); must be a rational integer
inline i64 root_sum_exact(std::vector<i64> c, i64 q) {
    auto f = cyclotomic(q);
    i64 deg = static_cast<i64>(f.size()) - 1;
    for (i64 i = static_cast<i64>(c.size()) - 1; i >= deg; --i) {
        i64 t = c[i];
        if (t)
            for (i64 j = 0; j <= deg; ++j) c[i - deg + j] -= t * f[j];
    }
    for (i64 i = 1; i < std::min<i64>(deg, static_cast<i64>(c.size())); ++i)
        if (c[i] != 0) fail("NotRational", "exponential sum is not a rational integer");
    return c.empty() ? 0 : c[0];
}

inline i64 ramanujan_L_closed(i64 q, const QuadElem& y) {
    i64 g = gcd3(q, y.c1, y.c2), s = 0;
    for (i64 d : divisors(g)) s += d * d * moebius(q / d);
    return s;
}

inline i64 ramanujan_L_direct(i64 q, const QuadElem& y, const FieldParams& P) {
    std::vector<i64> c(static_cast<size_t>(q), 0);
    for (auto& x : star_residues(q)) c[mod(mul(x, y, P).c2, q)]++;
    return root_sum_exact(c, q);
}

inline i64 ramanujan_L(i64 q, const QuadElem& y, const FieldParams& P) {
    i64 d = ramanujan_L_direct(q, y, P), c = ramanujan_L_closed(q, y);
    if (d != c) fail("Internal", "Ramanujan sum mismatch");
    return c;
}

}  // namespace normcount
