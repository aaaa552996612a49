#pragma once

#include <algorithm>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "local_densities.hpp"
#include "weight_fn.hpp"

namespace normcount {

using cplx = std::complex<double>;

// c_q(m) = sum over d | gcd(q, m) of d mu(q/d)
inline i64 ramanujan(i64 q, i64 m) {
    i64 g = std::gcd(q, std::abs(m)), s = 0;
    if (m == 0) g = q;
    for (i64 d : divisors(g)) s += d * moebius(q / d);
    return s;
}

// sum over d | gcd(q, y1, y2) of d^2 mu(q/d)
inline i64 ramanujan_L_fast(i64 q, i64 y1, i64 y2) {
    i64 g = std::gcd(std::gcd(q, std::abs(y1)), std::abs(y2)), s = 0;
    for (i64 d : divisors(g)) s += d * d * moebius(q / d);
    return s;
}

inline i64 lcm_upto(i64 Q) {
    i64 L = 1;
    for (i64 q = 2; q <= Q; ++q) L = lcm(L, q);
    return L;
}

// rho tables for q = 1..Q with a common denominator: rho(a, q) = num[q][a] / den
struct RhoTables {
    i64 Q = 0;
    BigInt den = 1;
    std::vector<std::vector<i64>> num;  // index q, then residue (a, or y1 * q + y2)
};

inline RhoTables common_denominator(const std::vector<std::vector<Rat>>& t) {
    RhoTables r;
    r.Q = static_cast<i64>(t.size()) - 1;
    BigInt d = 1;
    for (auto& row : t)
        for (auto& v : row) d = boost::multiprecision::lcm(d, den(v));
    r.den = d;
    r.num.resize(t.size());
    for (size_t q = 0; q < t.size(); ++q)
        for (auto& v : t[q]) {
            BigInt n = num(v) * (d / den(v));
            if (abs(n) > BigInt(INT64_MAX / 4)) fail("TooLarge", "rho numerators overflow");
            r.num[q].push_back(n.convert_to<i64>());
        }
    return r;
}

// ---------------------------------------------------------------- over Z

using RhoZ = std::function<Rat(i64, i64)>;

struct ApproxSchemeZ {
    i64 N = 0;
    std::vector<cplx> k;  // k[n - 1] for n = 1..N
    RhoZ rho;
    std::function<double(i64)> omega;
    i64 Q = 1;
    double E = 0, W = 0;  // declared bounds
};

// (comb) on all b mod r with r s <= limit, and (one)
inline void check_rho_Z(const RhoZ& rho, i64 limit) {
    if (rho(0, 1) != 1) fail("BadRho", "rho(0,1) must be 1");
    for (i64 r = 1; r <= limit; ++r)
        for (i64 s = 1; r * s <= limit; ++s)
            for (i64 b = 0; b < r; ++b) {
                Rat acc = 0;
                for (i64 a = b; a < r * s; a += r) {
                    Rat v = rho(a, r * s);
                    if (v < 0) fail("BadRho", "rho must be nonnegative");
                    acc += v;
                }
                if (acc != rho(b, r)) fail("BadRho", "rho violates the consistency condition");
            }
}

// g(n) = sum_{q <= Q} sum_c rho(c, q) c_q(c - n) over n mod lcm(1..Q), exact
inline std::vector<Rat> g_table_Z(const RhoZ& rho, i64 Q) {
    i64 L = lcm_upto(Q);
    std::vector<std::vector<Rat>> t(static_cast<size_t>(Q + 1));
    for (i64 q = 1; q <= Q; ++q)
        for (i64 c = 0; c < q; ++c) t[static_cast<size_t>(q)].push_back(rho(c, q));
    auto R = common_denominator(t);
    std::vector<Rat> g(static_cast<size_t>(L));
    for (i64 n = 0; n < L; ++n) {
        i128 s = 0;
        for (i64 q = 1; q <= Q; ++q)
            for (i64 c = 0; c < q; ++c) {
                i64 w = R.num[static_cast<size_t>(q)][static_cast<size_t>(c)];
                if (w) s += static_cast<i128>(w) * ramanujan(q, c - n);
            }
        g[static_cast<size_t>(n)] = Rat(BigInt(s)) / Rat(R.den);
    }
    return g;
}

inline std::vector<cplx> khat_Z(const ApproxSchemeZ& s) {
    auto g = g_table_Z(s.rho, s.Q);
    i64 L = static_cast<i64>(g.size());
    std::vector<double> gd;
    for (auto& v : g) gd.push_back(to_double(v));
    std::vector<cplx> out(static_cast<size_t>(s.N));
    for (i64 n = 1; n <= s.N; ++n) out[static_cast<size_t>(n - 1)] = s.omega(n) * gd[static_cast<size_t>(n % L)];
    return out;
}

struct DefectRow {
    i64 h;
    i64 c1, c2;  // class (c2 unused over Z)
    cplx S, Shat;
    double defect;
};

struct DefectReport {
    std::string domain;
    i64 Q = 1;
    double E_declared = 0, W_declared = 0, E_measured = 0, W_measured = 0;
    double E = 0, W = 0;  // used in the cap
    double cap = 0, max_defect = 0;
    bool declared_valid = true, ok = true;
    std::vector<DefectRow> rows;
};

inline DefectReport defect_Z(const ApproxSchemeZ& s) {
    DefectReport r;
    r.domain = "Z";
    r.Q = s.Q;
    check_rho_Z(s.rho, s.Q);
    auto kh = khat_Z(s);
    double S = 0;
    for (i64 n = 1; n <= s.N; ++n) S += s.omega(n);
    // E over q <= Q, W over q <= Q^2
    for (i64 q = 1; q <= s.Q; ++q) {
        std::vector<cplx> Sq(static_cast<size_t>(q), 0);
        for (i64 n = 1; n <= s.N; ++n) Sq[static_cast<size_t>(n % q)] += s.k[static_cast<size_t>(n - 1)];
        for (i64 a = 0; a < q; ++a) r.E_measured = std::max(r.E_measured, std::abs(Sq[static_cast<size_t>(a)] - to_double(s.rho(a, q)) * S));
    }
    for (i64 q = 1; q <= s.Q * s.Q; ++q) {
        std::vector<double> Wq(static_cast<size_t>(q), 0);
        for (i64 n = 1; n <= s.N; ++n) Wq[static_cast<size_t>(n % q)] += s.omega(n);
        for (double v : Wq) r.W_measured = std::max(r.W_measured, std::abs(v - S / static_cast<double>(q)));
    }
    r.E_declared = s.E;
    r.W_declared = s.W;
    r.declared_valid = s.E >= r.E_measured - 1e-9 * std::abs(S) && s.W >= r.W_measured - 1e-9 * std::abs(S);
    r.E = std::max(s.E, r.E_measured);
    r.W = std::max(s.W, r.W_measured);
    r.cap = r.W * std::pow(static_cast<double>(s.Q), 3) + r.E;
    for (i64 h = 1; h <= s.Q; ++h) {
        std::vector<cplx> A(static_cast<size_t>(h), 0), B(static_cast<size_t>(h), 0);
        for (i64 n = 1; n <= s.N; ++n) {
            A[static_cast<size_t>(n % h)] += s.k[static_cast<size_t>(n - 1)];
            B[static_cast<size_t>(n % h)] += kh[static_cast<size_t>(n - 1)];
        }
        for (i64 b = 0; b < h; ++b) {
            double d = std::abs(A[static_cast<size_t>(b)] - B[static_cast<size_t>(b)]);
            r.rows.push_back({h, b, 0, A[static_cast<size_t>(b)], B[static_cast<size_t>(b)], d});
            r.max_defect = std::max(r.max_defect, d);
        }
    }
    r.ok = r.max_defect <= r.cap * (1 + 1e-9) + 1e-9;
    return r;
}

// exact-density instance: k(n) = w(n mod P) with P a multiple of lcm(1..Q), N a multiple of P, omega constant
inline ApproxSchemeZ synthetic_Z(i64 Q, std::uint64_t seed, i64 periods = 3) {
    std::mt19937_64 rng(seed);
    i64 P = lcm_upto(Q) * std::uniform_int_distribution<i64>(1, 3)(rng);
    auto w = std::make_shared<std::vector<i64>>(static_cast<size_t>(P));
    std::uniform_int_distribution<i64> d(0, 6);
    i64 T = 0;
    for (auto& x : *w) T += (x = d(rng) * d(rng));
    if (T == 0) T += ((*w)[0] = 1);
    ApproxSchemeZ s;
    s.N = P * periods;
    s.Q = Q;
    for (i64 n = 1; n <= s.N; ++n) s.k.emplace_back(static_cast<double>((*w)[static_cast<size_t>(n % P)]), 0.0);
    double mean = static_cast<double>(T) / static_cast<double>(P);
    s.omega = [mean](i64) { return mean; };
    s.rho = [w, P, T](i64 a, i64 q) {
        i64 m = lcm(P, q), acc = 0;
        for (i64 r = mod(a, q); r < m; r += q) acc += (*w)[static_cast<size_t>(r % P)];
        return rat(acc, T * (m / P));
    };
    s.E = 0;
    s.W = 1.0 * mean;  // counts in a class differ from N/q by less than one
    return s;
}

// Lambda_Q(n) = sum_{q <= Q} mu(q)/phi(q) c_q(n), exact
inline Rat lambda_Q(i64 n, i64 Q) {
    Rat s = 0;
    for (i64 q = 1; q <= Q; ++q) {
        int mu = moebius(q);
        if (mu) s += rat(mu * ramanujan(q, n), euler_phi(q));
    }
    return s;
}

inline RhoZ coprime_rho() {
    return [](i64 a, i64 q) { return std::gcd(mod(a, q), q) == 1 ? rat(1, euler_phi(q)) : Rat(0); };
}

struct VonMangoldtReport {
    i64 N = 0, Q = 0;
    double A = 0;
    double psi = 0, psi_Q = 0;  // h = 1 sums
    double max_dev = 0;         // over h <= Q and b mod h
    i64 worst_h = 1, worst_b = 0;
};

inline VonMangoldtReport vonmangoldt_demo(i64 N, double A, i64 Qcap = 24) {
    if (N > 10000000 || N < 2) fail("BadArgument", "N must lie in [2, 10^7]");
    VonMangoldtReport r;
    r.N = N;
    r.A = A;
    r.Q = std::max<i64>(1, std::min<i64>(Qcap, static_cast<i64>(std::floor(std::pow(std::log(static_cast<double>(N)), A)))));
    std::vector<double> Lam(static_cast<size_t>(N + 1), 0.0);
    {
        std::vector<bool> comp(static_cast<size_t>(N + 1), false);
        for (i64 p = 2; p <= N; ++p) {
            if (comp[static_cast<size_t>(p)]) continue;
            for (i64 m = p * p; m <= N; m += p) comp[static_cast<size_t>(m)] = true;
            double lp = std::log(static_cast<double>(p));
            for (i64 pk = p; pk <= N; pk *= p) {
                Lam[static_cast<size_t>(pk)] = lp;
                if (pk > N / p) break;
            }
        }
    }
    auto g = g_table_Z(coprime_rho(), r.Q);
    i64 L = static_cast<i64>(g.size());
    std::vector<double> gd;
    for (auto& v : g) gd.push_back(to_double(v));
    for (i64 h = 1; h <= r.Q; ++h) {
        std::vector<double> a(static_cast<size_t>(h), 0), b(static_cast<size_t>(h), 0);
        for (i64 n = 1; n <= N; ++n) {
            a[static_cast<size_t>(n % h)] += Lam[static_cast<size_t>(n)];
            b[static_cast<size_t>(n % h)] += gd[static_cast<size_t>(n % L)];
        }
        if (h == 1) {
            r.psi = a[0];
            r.psi_Q = b[0];
        }
        for (i64 c = 0; c < h; ++c) {
            double d = std::abs(a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)]);
            if (d > r.max_dev) {
                r.max_dev = d;
                r.worst_h = h;
                r.worst_b = c;
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------- over o_L

// rho(y, q) with y = (y1, y2)
using RhoL = std::function<Rat(i64, i64, i64)>;

struct ApproxSchemeL {
    i64 x0 = 0, y0 = 0, side = 1;  // R = [x0, x0 + side) x [y0, y0 + side)
    std::vector<double> alpha;      // row-major, alpha[(x2 - y0) * side + (x1 - x0)]
    RhoL rho;
    std::function<double(i64, i64)> omega;
    i64 Q = 1;
    double E = 0, W = 0;
};

inline std::vector<std::vector<Rat>> rho_tables_L(const RhoL& rho, i64 Q) {
    std::vector<std::vector<Rat>> t(static_cast<size_t>(Q + 1));
    for (i64 q = 1; q <= Q; ++q)
        for (i64 a = 0; a < q; ++a)
            for (i64 b = 0; b < q; ++b) t[static_cast<size_t>(q)].push_back(rho(a, b, q));
    return t;
}

// (comb2) for r s <= limit and (one2)
inline void check_rho_L(const std::vector<std::vector<Rat>>& t) {
    i64 Q = static_cast<i64>(t.size()) - 1;
    if (Q < 1 || t[1][0] != 1) fail("BadRho", "rho(0,1) must be 1");
    for (i64 r = 1; r <= Q; ++r)
        for (i64 s = 1; r * s <= Q; ++s) {
            i64 q = r * s;
            for (i64 a = 0; a < r; ++a)
                for (i64 b = 0; b < r; ++b) {
                    Rat acc = 0;
                    for (i64 x = a; x < q; x += r)
                        for (i64 y = b; y < q; y += r) {
                            const Rat& v = t[static_cast<size_t>(q)][static_cast<size_t>(x * q + y)];
                            if (v < 0) fail("BadRho", "rho must be nonnegative");
                            acc += v;
                        }
                    if (acc != t[static_cast<size_t>(r)][static_cast<size_t>(a * r + b)]) fail("BadRho", "rho violates the consistency condition");
                }
        }
}

// g(x) = sum_{q <= Q} sum_z rho(z, q) r_q(z - x) over x mod lcm(1..Q): numerators over a common denominator
struct GTableL {
    i64 L = 1;
    BigInt den = 1;
    std::vector<i64> num;  // x1 * L + x2
    std::vector<double> val;
    Rat exact(i64 x1, i64 x2) const { return Rat(BigInt(num[static_cast<size_t>(mod(x1, L) * L + mod(x2, L))])) / Rat(den); }
    double operator()(i64 x1, i64 x2) const { return val[static_cast<size_t>(mod(x1, L) * L + mod(x2, L))]; }
};

inline GTableL g_table_L(const std::vector<std::vector<Rat>>& rho, int threads = 1) {
    i64 Q = static_cast<i64>(rho.size()) - 1;
    auto R = common_denominator(rho);
    GTableL g;
    g.L = lcm_upto(Q);
    g.den = R.den;
    const i64 L = g.L;
    g.num.assign(static_cast<size_t>(L * L), 0);
    // r_q depends on gcd(q, z - x), tabulated per q
    std::vector<std::vector<i64>> rq(static_cast<size_t>(Q + 1));
    for (i64 q = 1; q <= Q; ++q) {
        rq[static_cast<size_t>(q)].resize(static_cast<size_t>(q * q));
        for (i64 a = 0; a < q; ++a)
            for (i64 b = 0; b < q; ++b) rq[static_cast<size_t>(q)][static_cast<size_t>(a * q + b)] = ramanujan_L_fast(q, a, b);
    }
    parallel_for(L * L, threads, [&](long id) {
        i64 x1 = id / L, x2 = id % L;
        i128 s = 0;
        for (i64 q = 1; q <= Q; ++q) {
            const auto& w = R.num[static_cast<size_t>(q)];
            const auto& r = rq[static_cast<size_t>(q)];
            i64 m1 = x1 % q, m2 = x2 % q;
            for (i64 a = 0; a < q; ++a) {
                i64 d1 = mod(a - m1, q) * q;
                for (i64 b = 0; b < q; ++b) {
                    i64 c = w[static_cast<size_t>(a * q + b)];
                    if (c) s += static_cast<i128>(c) * r[static_cast<size_t>(d1 + mod(b - m2, q))];
                }
            }
        }
        if (s > INT64_MAX || s < -INT64_MAX) fail("TooLarge", "g numerator overflow");
        g.num[static_cast<size_t>(id)] = static_cast<i64>(s);
    });
    double dd = g.den.convert_to<double>();
    for (i64 v : g.num) g.val.push_back(static_cast<double>(v) / dd);
    return g;
}

inline DefectReport defect_L(const ApproxSchemeL& s, int threads = 1) {
    DefectReport r;
    r.domain = "OL";
    r.Q = s.Q;
    auto rt = rho_tables_L(s.rho, s.Q);
    check_rho_L(rt);
    auto g = g_table_L(rt, threads);
    const i64 n = s.side;
    std::vector<double> om(static_cast<size_t>(n * n)), ah(static_cast<size_t>(n * n));
    double S = 0;
    for (i64 j = 0; j < n; ++j)
        for (i64 i = 0; i < n; ++i) {
            i64 x1 = s.x0 + i, x2 = s.y0 + j;
            double w = s.omega(x1, x2);
            om[static_cast<size_t>(j * n + i)] = w;
            ah[static_cast<size_t>(j * n + i)] = w * g(x1, x2);
            S += w;
        }
    auto class_sums = [&](const std::vector<double>& f, i64 q) {
        std::vector<double> out(static_cast<size_t>(q * q), 0);
        for (i64 j = 0; j < n; ++j)
            for (i64 i = 0; i < n; ++i)
                out[static_cast<size_t>(mod(s.x0 + i, q) * q + mod(s.y0 + j, q))] += f[static_cast<size_t>(j * n + i)];
        return out;
    };
    for (i64 q = 1; q <= s.Q; ++q) {
        auto a = class_sums(s.alpha, q);
        for (size_t y = 0; y < a.size(); ++y)
            r.E_measured = std::max(r.E_measured, std::abs(a[y] - to_double(rt[static_cast<size_t>(q)][y]) * S));
    }
    for (i64 q = 1; q <= s.Q * s.Q; ++q) {
        auto w = class_sums(om, q);
        for (double v : w) r.W_measured = std::max(r.W_measured, std::abs(v - S / static_cast<double>(q * q)));
    }
    r.E_declared = s.E;
    r.W_declared = s.W;
    r.declared_valid = s.E >= r.E_measured - 1e-9 * std::abs(S) && s.W >= r.W_measured - 1e-9 * std::abs(S);
    r.E = std::max(s.E, r.E_measured);
    r.W = std::max(s.W, r.W_measured);
    r.cap = r.W * std::pow(static_cast<double>(s.Q), 4) + r.E;
    for (i64 h = 1; h <= s.Q; ++h) {
        auto A = class_sums(s.alpha, h), B = class_sums(ah, h);
        for (i64 y = 0; y < h * h; ++y) {
            double d = std::abs(A[static_cast<size_t>(y)] - B[static_cast<size_t>(y)]);
            r.rows.push_back({h, y / h, y % h, A[static_cast<size_t>(y)], B[static_cast<size_t>(y)], d});
            r.max_defect = std::max(r.max_defect, d);
        }
    }
    r.ok = r.max_defect <= r.cap * (1 + 1e-9) + 1e-9;
    return r;
}

// exact-density instance over o_L: alpha(x) = w(x mod P) on a square of whole periods, omega constant
inline ApproxSchemeL synthetic_L(i64 Q, std::uint64_t seed, i64 periods = 1) {
    std::mt19937_64 rng(seed);
    i64 P = lcm_upto(Q);
    if (P < 8) P *= std::uniform_int_distribution<i64>(2, 4)(rng);
    auto w = std::make_shared<std::vector<i64>>(static_cast<size_t>(P * P));
    std::uniform_int_distribution<i64> d(0, 4);
    i64 T = 0;
    for (auto& x : *w) T += (x = d(rng) * d(rng));
    if (T == 0) T += ((*w)[0] = 1);
    ApproxSchemeL s;
    s.Q = Q;
    s.side = P * periods;
    s.x0 = std::uniform_int_distribution<i64>(-1000, 1000)(rng);
    s.y0 = std::uniform_int_distribution<i64>(-1000, 1000)(rng);
    s.alpha.resize(static_cast<size_t>(s.side * s.side));
    for (i64 j = 0; j < s.side; ++j)
        for (i64 i = 0; i < s.side; ++i)
            s.alpha[static_cast<size_t>(j * s.side + i)] =
                static_cast<double>((*w)[static_cast<size_t>(mod(s.x0 + i, P) * P + mod(s.y0 + j, P))]);
    double mean = static_cast<double>(T) / static_cast<double>(P * P);
    s.omega = [mean](i64, i64) { return mean; };
    s.rho = [w, P, T](i64 a, i64 b, i64 q) {
        i64 m = lcm(P, q), acc = 0;
        for (i64 x = mod(a, q); x < m; x += q)
            for (i64 y = mod(b, q); y < m; y += q) acc += (*w)[static_cast<size_t>((x % P) * P + y % P)];
        return rat(acc, T * (m / P) * (m / P));
    };
    s.E = 0;
    s.W = 2.0 * static_cast<double>(s.side) * mean;  // a class count differs from side^2/q^2 by under 2 side/q + 1
    return s;
}

// sum_{q <= Q} sum*_{y mod q} |sum_x c_x e_q^L(x y)|^2 against (sqrt(2N) + Q)^4 sum |c|^2
struct LargeSieveCheck {
    double lhs = 0, rhs = 0;
    bool ok = true;
};

inline LargeSieveCheck large_sieve_L(const FieldParams& P, i64 N, i64 Q, std::uint64_t seed, i64 a0 = 0, i64 b0 = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<std::pair<QuadElem, cplx>> c;
    double mass = 0;
    for (i64 a = a0 - N + 1; a <= a0 + N - 1; ++a)
        for (i64 b = b0 - N + 1; b <= b0 + N - 1; ++b) {
            cplx v(d(rng), d(rng));
            c.push_back({{a, b}, v});
            mass += std::norm(v);
        }
    LargeSieveCheck r;
    const double tau = 2 * std::acos(-1.0);
    for (i64 q = 1; q <= Q; ++q)
        for (auto& y : star_residues(q)) {
            cplx s = 0;
            for (auto& [x, v] : c) s += v * std::polar(1.0, tau * static_cast<double>(mod(mul(x, y, P).c2, q)) / static_cast<double>(q));
            r.lhs += std::norm(s);
        }
    r.rhs = std::pow(std::sqrt(2.0 * static_cast<double>(N)) + static_cast<double>(Q), 4) * mass;
    r.ok = r.lhs <= r.rhs;
    return r;
}

// ---------------------------------------------------------------- the alpha family

struct IRect {
    i64 x1lo, x1hi, x2lo, x2hi;  // inclusive
};

namespace detail {

inline int table_col(const OmegaTable& t, double x, double origin) {
    return static_cast<int>(std::floor((x / t.scale - origin) / t.h));
}

// integers x in [lo, hi] with x = r mod m, split by table cell; power sums of the local coordinate
struct CellSums {
    std::vector<std::array<double, 5>> s;  // per cell, sum of local^e, e = 0..4
};

inline CellSums cell_sums(const OmegaTable& t, int cells, double origin, i64 m, i64 r, i64 lo, i64 hi) {
    CellSums out;
    out.s.assign(static_cast<size_t>(cells), {0, 0, 0, 0, 0});
    for (int i = 0; i < cells; ++i) {
        double X0 = t.scale * (origin + i * t.h), X1 = t.scale * (origin + (i + 1) * t.h);
        i64 a = static_cast<i64>(std::ceil(X0)), b = static_cast<i64>(std::ceil(X1)) - 1;
        // match the lookup's own cell assignment at the edges
        while (table_col(t, static_cast<double>(a), origin) < i) ++a;
        while (table_col(t, static_cast<double>(a - 1), origin) >= i) --a;
        while (table_col(t, static_cast<double>(b), origin) > i) --b;
        while (table_col(t, static_cast<double>(b + 1), origin) <= i) ++b;
        a = std::max(a, lo);
        b = std::min(b, hi);
        if (a > b) continue;
        i64 first = a + mod(r - a, m);
        if (first > b) continue;
        i64 K = (b - first) / m + 1;
        // local coordinate s_k = s0 + k ds
        double s0 = (static_cast<double>(first) / t.scale - origin) / t.h - i;
        double ds = static_cast<double>(m) / (t.scale * t.h);
        auto& e = out.s[static_cast<size_t>(i)];
        // power sums of k
        long double Kd = static_cast<long double>(K);
        long double p1 = Kd * (Kd - 1) / 2, p2 = (Kd - 1) * Kd * (2 * Kd - 1) / 6;
        long double p3 = p1 * p1, p4 = (Kd - 1) * Kd * (2 * Kd - 1) * (3 * (Kd - 1) * (Kd - 1) + 3 * (Kd - 1) - 1) / 30;
        long double S0 = s0, D = ds;
        e[0] = static_cast<double>(Kd);
        e[1] = static_cast<double>(Kd * S0 + D * p1);
        e[2] = static_cast<double>(Kd * S0 * S0 + 2 * S0 * D * p1 + D * D * p2);
        e[3] = static_cast<double>(Kd * S0 * S0 * S0 + 3 * S0 * S0 * D * p1 + 3 * S0 * D * D * p2 + D * D * D * p3);
        e[4] = static_cast<double>(Kd * S0 * S0 * S0 * S0 + 4 * S0 * S0 * S0 * D * p1 + 6 * S0 * S0 * D * D * p2 +
                                   4 * S0 * D * D * D * p3 + D * D * D * D * p4);
    }
    return out;
}

}  // namespace detail

// sum over integer x in rect with x = (r1, r2) mod m of omega(x)^p, p in {1, 2}, for the bilinear table
inline double lattice_sum(const OmegaTable& t, int p, i64 m, i64 r1, i64 r2, const IRect& rect) {
    if (p != 1 && p != 2) fail("BadArgument", "power must be 1 or 2");
    const int cx = t.nx - 1, cy = t.ny - 1;
    auto SX = detail::cell_sums(t, cx, t.x0, m, r1, rect.x1lo, rect.x1hi);
    auto SY = detail::cell_sums(t, cy, t.y0, m, r2, rect.x2lo, rect.x2hi);
    double total = 0;
    for (int j = 0; j < cy; ++j) {
        const auto& T = SY.s[static_cast<size_t>(j)];
        if (T[0] == 0) continue;
        for (int i = 0; i < cx; ++i) {
            const auto& S = SX.s[static_cast<size_t>(i)];
            if (S[0] == 0) continue;
            double f00 = t.at(i, j), f10 = t.at(i + 1, j), f01 = t.at(i, j + 1), f11 = t.at(i + 1, j + 1);
            if (f00 == 0 && f10 == 0 && f01 == 0 && f11 == 0) continue;
            double A = f00, B = f10 - f00, C = f01 - f00, D = f11 - f10 - f01 + f00;
            if (p == 1) {
                total += A * S[0] * T[0] + B * S[1] * T[0] + C * S[0] * T[1] + D * S[1] * T[1];
            } else {
                total += A * A * S[0] * T[0] + 2 * A * B * S[1] * T[0] + 2 * A * C * S[0] * T[1] +
                         (2 * A * D + 2 * B * C) * S[1] * T[1] + B * B * S[2] * T[0] + C * C * S[0] * T[2] +
                         2 * B * D * S[2] * T[1] + 2 * C * D * S[1] * T[2] + D * D * S[2] * T[2];
            }
        }
    }
    return total;
}

// integer rectangle covering the table's support
inline IRect table_rect(const OmegaTable& t) {
    return {static_cast<i64>(std::floor(t.scale * t.x0)) - 1, static_cast<i64>(std::ceil(t.scale * (t.x0 + (t.nx - 1) * t.h))) + 1,
            static_cast<i64>(std::floor(t.scale * t.y0)) - 1, static_cast<i64>(std::ceil(t.scale * (t.y0 + (t.ny - 1) * t.h))) + 1};
}

struct AlphaPoint {
    i64 x1, x2, count;
};

// alpha(x) = #{u in region, u = u^(M) mod M, delta N(u) = x}; alpha_hat = omega g; alpha_0 = alpha - alpha_hat
struct AlphaFamily {
    const FieldCtx* K = nullptr;
    WeightFn wf;
    OmegaTable table;
    MData md;
    i64 Q = 1;
    GTableL g;
    std::vector<AlphaPoint> pts;  // sorted by (x1, x2)
    i64 total = 0;                // number of u counted

    i64 alpha(i64 x1, i64 x2) const {
        auto it = std::lower_bound(pts.begin(), pts.end(), AlphaPoint{x1, x2, 0},
                                   [](const AlphaPoint& a, const AlphaPoint& b) { return a.x1 != b.x1 ? a.x1 < b.x1 : a.x2 < b.x2; });
        return it != pts.end() && it->x1 == x1 && it->x2 == x2 ? it->count : 0;
    }
    double omega(i64 x1, i64 x2) const { return table(static_cast<double>(x1), static_cast<double>(x2)); }
    double alpha_hat(i64 x1, i64 x2) const { return omega(x1, x2) * g(x1, x2); }
    double alpha0(i64 x1, i64 x2) const { return static_cast<double>(alpha(x1, x2)) - alpha_hat(x1, x2); }

    // sum of alpha_hat over x in rect with x = y mod q, by splitting into classes mod lcm(q, L)
    double alpha_hat_class_sum(const IRect& R, i64 q, i64 y1, i64 y2) const {
        i64 m = lcm(q, g.L);
        double s = 0;
        for (i64 a = mod(y1, q); a < m; a += q)
            for (i64 b = mod(y2, q); b < m; b += q) {
                double gv = g(a, b);
                if (gv != 0) s += gv * lattice_sum(table, 1, m, a, b, R);
            }
        return s;
    }
    i64 alpha_class_sum(const IRect& R, i64 q, i64 y1, i64 y2) const {
        i64 s = 0;
        for (auto& p : pts)
            if (p.x1 >= R.x1lo && p.x1 <= R.x1hi && p.x2 >= R.x2lo && p.x2 <= R.x2hi && mod(p.x1 - y1, q) == 0 && mod(p.x2 - y2, q) == 0)
                s += p.count;
        return s;
    }
};

// integers m with lo < m < hi
inline std::pair<i64, i64> open_range(double lo, double hi) {
    return {static_cast<i64>(std::floor(lo)) + 1, static_cast<i64>(std::ceil(hi)) - 1};
}

// enumerate u in the region with the congruence, calling f(u)
template <class F>
void for_each_region_point(const WeightFn& wf, const MData& md, F&& f) {
    const int n = wf.n;
    double c[16];
    wf.to_L(wf.center.data(), c);
    const double h = wf.half();
    const i64 M = md.M;
    std::vector<i64> cls(static_cast<size_t>(n), 0);
    if (M > 1)
        for (int i = 0; i < n; ++i) cls[static_cast<size_t>(i)] = mod(md.u[static_cast<size_t>(i)], M);
    auto first_in = [&](i64 lo, int coord) { return lo + mod(cls[static_cast<size_t>(coord)] - lo, M); };
    const int p0 = wf.piv[0], p1 = wf.piv[1];
    std::vector<std::pair<i64, i64>> rr;
    for (size_t k = 0; k < wf.rest.size(); ++k) rr.push_back(open_range(wf.U * c[k + 2] - h, wf.U * c[k + 2] + h));
    auto r0 = open_range(wf.U * c[0] - h, wf.U * c[0] + h);
    std::vector<i64> u(static_cast<size_t>(n));
    // odometer over the free coordinates
    const size_t m = wf.rest.size();
    std::vector<i64> cur(m);
    for (size_t k = 0; k < m; ++k) cur[k] = first_in(rr[k].first, wf.rest[k]);
    for (size_t k = 0; k < m; ++k)
        if (cur[k] > rr[k].second) return;
    for (;;) {
        for (size_t k = 0; k < m; ++k) u[static_cast<size_t>(wf.rest[k])] = cur[k];
        for (i64 a = first_in(r0.first, p0); a <= r0.second; a += M) {
            u[static_cast<size_t>(p0)] = a;
            double lo = (wf.U * c[1] - h - static_cast<double>(a)) / wf.lambda, hi = (wf.U * c[1] + h - static_cast<double>(a)) / wf.lambda;
            auto r1 = open_range(std::min(lo, hi), std::max(lo, hi));
            for (i64 b = first_in(r1.first, p1); b <= r1.second; b += M) {
                u[static_cast<size_t>(p1)] = b;
                f(u.data());
            }
        }
        size_t k = 0;
        while (k < m) {
            cur[k] += M;
            if (cur[k] <= rr[k].second) break;
            cur[k] = first_in(rr[k].first, wf.rest[k]);
            ++k;
        }
        if (k == m) return;
    }
}

// sorted (x, multiplicity) for x = delta N(u), u in the region with the congruence
inline std::vector<AlphaPoint> alpha_points(const FieldCtx& K, const WeightFn& wf, const MData& md) {
    QuadElem d = K.delta_int();
    double bmax = 0;
    {
        double c[16];
        wf.to_L(wf.center.data(), c);
        for (int i = 0; i < wf.n; ++i) bmax = std::max(bmax, std::abs(wf.U * c[i]) + wf.half());
        bmax = (2 * bmax) / wf.lambda + 2;
    }
    if (!K.dense_N1.fits(static_cast<i64>(bmax)) || !K.dense_N2.fits(static_cast<i64>(bmax)))
        fail("TooLarge", "region too large for 64-bit norm evaluation");
    std::vector<std::pair<i64, i64>> xs;
    const auto& P = K.params;
    for_each_region_point(wf, md, [&](const i64* u) {
        i64 a = K.dense_N1.eval(u), b = K.dense_N2.eval(u);
        i128 z1 = static_cast<i128>(d.c1) * a - static_cast<i128>(P.norm_tau) * d.c2 * b;
        i128 z2 = static_cast<i128>(d.c1) * b + static_cast<i128>(d.c2) * a + static_cast<i128>(P.tr_tau) * d.c2 * b;
        xs.emplace_back(static_cast<i64>(z1), static_cast<i64>(z2));
    });
    std::sort(xs.begin(), xs.end());
    std::vector<AlphaPoint> pts;
    for (size_t i = 0; i < xs.size();) {
        size_t j = i;
        while (j < xs.size() && xs[j] == xs[i]) ++j;
        pts.push_back({xs[i].first, xs[i].second, static_cast<i64>(j - i)});
        i = j;
    }
    return pts;
}

inline AlphaFamily alpha_family(const FieldCtx& K, const WeightFn& wf, const MData& md, i64 Q, const LocalDensities& D,
                                int table_res = 256, int table_k = 64, int threads = 1) {
    AlphaFamily fam;
    fam.K = &K;
    fam.wf = wf;
    fam.md = md;
    fam.Q = Q;
    fam.table = build_omega_table(wf, table_res, table_k, threads);
    std::vector<std::vector<Rat>> rt(static_cast<size_t>(Q + 1));
    for (i64 q = 1; q <= Q; ++q) rt[static_cast<size_t>(q)] = D.rho_table(q);
    fam.g = g_table_L(rt, threads);
    fam.pts = alpha_points(K, wf, md);
    if (fam.pts.empty()) fail("EmptyBox", "no lattice point of the u-region lies in the congruence class");
    for (auto& p : fam.pts) fam.total += p.count;
    return fam;
}

struct L2Report {
    BigInt alpha2 = 0;
    double alpha_hat2 = 0, alpha02 = 0, cross = 0;
    double Un = 1;
    i64 max_multiplicity = 0;
};

inline L2Report l2_report(const AlphaFamily& f) {
    L2Report r;
    r.Un = std::pow(f.wf.U, f.wf.n);
    for (auto& p : f.pts) {
        r.alpha2 += BigInt(p.count) * p.count;
        r.cross += static_cast<double>(p.count) * f.alpha_hat(p.x1, p.x2);
        r.max_multiplicity = std::max(r.max_multiplicity, p.count);
    }
    IRect R = table_rect(f.table);
    const i64 L = f.g.L;
    for (i64 a = 0; a < L; ++a)
        for (i64 b = 0; b < L; ++b) {
            double gv = f.g(a, b);
            if (gv != 0) r.alpha_hat2 += gv * gv * lattice_sum(f.table, 2, L, a, b, R);
        }
    r.alpha02 = r.alpha2.convert_to<double>() - 2 * r.cross + r.alpha_hat2;
    return r;
}

struct DispersionReport {
    i64 Q0 = 1;
    double value = 0;
    std::vector<double> per_q, trivial_per_q;  // index q - 1
    double trivial = 0;
    int squares = 0;
    std::vector<double> sides;
};

// dyadic family of squares: sides U^(n/2) * radius / 2^j for j < levels, anchors on a lattice of half the side
inline std::vector<IRect> square_family(const AlphaFamily& f, int levels, int max_per_level = 16) {
    std::vector<IRect> out;
    IRect B = table_rect(f.table);
    double W = static_cast<double>(std::max(B.x1hi - B.x1lo, B.x2hi - B.x2lo));
    for (int j = 0; j < levels; ++j) {
        i64 side = static_cast<i64>(W / std::pow(2.0, j));
        if (side < 1) break;
        i64 step = std::max<i64>(1, side / 2);
        int cnt = 0;
        for (i64 a = B.x1lo; a <= B.x1hi && cnt < max_per_level; a += step)
            for (i64 b = B.x2lo; b <= B.x2hi && cnt < max_per_level; b += step, ++cnt) out.push_back({a, a + side - 1, b, b + side - 1});
    }
    return out;
}

inline DispersionReport dispersion_sum(const AlphaFamily& f, i64 Q0, int levels = 3, int max_per_level = 16, int threads = 1) {
    if (Q0 < f.Q) fail("BadArgument", "Q0 must be at least Q");
    DispersionReport r;
    r.Q0 = Q0;
    auto sq = square_family(f, levels, max_per_level);
    r.squares = static_cast<int>(sq.size());
    for (auto& s : sq) r.sides.push_back(static_cast<double>(s.x1hi - s.x1lo + 1));
    auto l2 = l2_report(f);
    r.per_q.assign(static_cast<size_t>(Q0), 0);
    r.trivial_per_q.assign(static_cast<size_t>(Q0), 0);
    for (i64 q = 1; q <= Q0; ++q) {
        std::vector<double> best(static_cast<size_t>(q * q), 0);
        std::vector<std::vector<double>> per_square(sq.size(), std::vector<double>(static_cast<size_t>(q * q), 0));
        // alpha parts by one pass over the support
        for (auto& p : f.pts)
            for (size_t s = 0; s < sq.size(); ++s) {
                const auto& R = sq[s];
                if (p.x1 < R.x1lo || p.x1 > R.x1hi || p.x2 < R.x2lo || p.x2 > R.x2hi) continue;
                per_square[s][static_cast<size_t>(mod(p.x1, q) * q + mod(p.x2, q))] += static_cast<double>(p.count);
            }
        parallel_for(static_cast<long>(sq.size()), threads, [&](long s) {
            for (i64 y = 0; y < q * q; ++y)
                per_square[static_cast<size_t>(s)][static_cast<size_t>(y)] -= f.alpha_hat_class_sum(sq[static_cast<size_t>(s)], q, y / q, y % q);
        });
        for (auto& ps : per_square)
            for (size_t y = 0; y < ps.size(); ++y) best[y] = std::max(best[y], ps[y] * ps[y]);
        double acc = 0;
        for (double b : best) acc += b;
        r.per_q[static_cast<size_t>(q - 1)] = static_cast<double>(q * q) * acc;
        r.value += r.per_q[static_cast<size_t>(q - 1)];
        r.trivial_per_q[static_cast<size_t>(q - 1)] = l2.Un / static_cast<double>(q * q) * l2.alpha02;
        r.trivial += r.trivial_per_q[static_cast<size_t>(q - 1)];
    }
    return r;
}

// defect of the family over a square: class sums of alpha against alpha_hat for h <= Q,
// with E and W measured on the same square
inline DefectReport defect_family(const AlphaFamily& f, const IRect& R, const LocalDensities& D) {
    DefectReport r;
    r.domain = "family";
    r.Q = f.Q;
    double S = 0;
    {
        i64 L = 1;
        S = lattice_sum(f.table, 1, L, 0, 0, R);
    }
    for (i64 q = 1; q <= f.Q; ++q) {
        auto rt = D.rho_table(q);
        for (i64 y = 0; y < q * q; ++y) {
            double a = static_cast<double>(f.alpha_class_sum(R, q, y / q, y % q));
            r.E_measured = std::max(r.E_measured, std::abs(a - to_double(rt[static_cast<size_t>(y)]) * S));
        }
    }
    for (i64 q = 1; q <= f.Q * f.Q; ++q)
        for (i64 y = 0; y < q * q; ++y)
            r.W_measured = std::max(r.W_measured, std::abs(lattice_sum(f.table, 1, q, y / q, y % q, R) - S / static_cast<double>(q * q)));
    r.E = r.E_measured;
    r.W = r.W_measured;
    r.E_declared = r.W_declared = 0;
    r.declared_valid = false;
    r.cap = r.W * std::pow(static_cast<double>(f.Q), 4) + r.E;
    for (i64 h = 1; h <= f.Q; ++h)
        for (i64 y = 0; y < h * h; ++y) {
            double a = static_cast<double>(f.alpha_class_sum(R, h, y / h, y % h));
            double b = f.alpha_hat_class_sum(R, h, y / h, y % h);
            double d = std::abs(a - b);
            r.rows.push_back({h, y / h, y % h, a, b, d});
            r.max_defect = std::max(r.max_defect, d);
        }
    r.ok = r.max_defect <= r.cap * (1 + 1e-9) + 1e-9;
    return r;
}

inline nlohmann::json to_json(const DefectReport& r) {
    nlohmann::json j;
    j["domain"] = r.domain;
    j["Q"] = r.Q;
    j["E_declared"] = r.E_declared;
    j["W_declared"] = r.W_declared;
    j["E_measured"] = r.E_measured;
    j["W_measured"] = r.W_measured;
    j["cap"] = r.cap;
    j["max_defect"] = r.max_defect;
    j["declared_valid"] = r.declared_valid;
    j["ok"] = r.ok;
    return j;
}

inline std::string defect_csv(const DefectReport& r) {
    std::string s = "h,class,S,Shat,defect,cap\n";
    for (auto& row : r.rows) {
        std::string cls = r.domain == "Z" ? std::to_string(row.c1) : std::to_string(row.c1) + "+" + std::to_string(row.c2) + "t";
        s += std::to_string(row.h) + "," + cls + "," + std::to_string(row.S.real()) + "," + std::to_string(row.Shat.real()) + "," +
             std::to_string(row.defect) + "," + std::to_string(r.cap) + "\n";
    }
    return s;
}

inline nlohmann::json to_json(const L2Report& r) {
    return {{"sum_alpha_sq", r.alpha2.str()},
            {"sum_alpha_hat_sq", r.alpha_hat2},
            {"sum_alpha0_sq", r.alpha02},
            {"U_n", r.Un},
            {"alpha_sq_over_Un", r.alpha2.convert_to<double>() / r.Un},
            {"max_multiplicity", r.max_multiplicity}};
}

inline nlohmann::json to_json(const DispersionReport& r) {
    return {{"Q0", r.Q0}, {"value", r.value}, {"per_q", r.per_q}, {"trivial", r.trivial}, {"trivial_per_q", r.trivial_per_q},
            {"squares", r.squares}, {"note", "maximum over a finite dyadic family of squares; may undershoot the true maximum"}};
}

inline nlohmann::json to_json(const VonMangoldtReport& r) {
    return {{"N", r.N}, {"A", r.A}, {"Q", r.Q}, {"psi", r.psi}, {"psi_Q", r.psi_Q}, {"max_dev", r.max_dev}, {"worst_h", r.worst_h}, {"worst_b", r.worst_b}};
}

}  // namespace normcount
