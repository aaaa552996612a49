#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "poly.hpp"
#include "quad_ring.hpp"

namespace normcount {

using RatMatrix = std::vector<std::vector<Rat>>;

inline int rat_rank(RatMatrix m) {
    int rank = 0, rows = static_cast<int>(m.size());
    int cols = rows ? static_cast<int>(m[0].size()) : 0;
    for (int c = 0; c < cols && rank < rows; ++c) {
        int piv = -1;
        for (int r = rank; r < rows; ++r)
            if (m[r][c] != 0) { piv = r; break; }
        if (piv < 0) continue;
        std::swap(m[piv], m[rank]);
        for (int r = 0; r < rows; ++r) {
            if (r == rank || m[r][c] == 0) continue;
            Rat f = m[r][c] / m[rank][c];
            for (int k = c; k < cols; ++k) m[r][k] -= f * m[rank][k];
        }
        ++rank;
    }
    return rank;
}

inline RatMatrix rat_inverse(RatMatrix m) {
    size_t n = m.size();
    RatMatrix inv(n, std::vector<Rat>(n, 0));
    for (size_t i = 0; i < n; ++i) inv[i][i] = 1;
    for (size_t c = 0; c < n; ++c) {
        size_t piv = c;
        while (piv < n && m[piv][c] == 0) ++piv;
        if (piv == n) fail("NotABasis", "singular matrix");
        std::swap(m[piv], m[c]);
        std::swap(inv[piv], inv[c]);
        Rat d = m[c][c];
        for (size_t k = 0; k < n; ++k) { m[c][k] /= d; inv[c][k] /= d; }
        for (size_t r = 0; r < n; ++r) {
            if (r == c || m[r][c] == 0) continue;
            Rat f = m[r][c];
            for (size_t k = 0; k < n; ++k) { m[r][k] -= f * m[c][k]; inv[r][k] -= f * inv[c][k]; }
        }
    }
    return inv;
}

inline BigInt bareiss_det(std::vector<std::vector<BigInt>> a) {
    size_t n = a.size();
    BigInt prev = 1;
    int sign = 1;
    for (size_t k = 0; k + 1 < n; ++k) {
        if (a[k][k] == 0) {
            size_t r = k + 1;
            while (r < n && a[r][k] == 0) ++r;
            if (r == n) return 0;
            std::swap(a[r], a[k]);
            sign = -sign;
        }
        for (size_t i = k + 1; i < n; ++i)
            for (size_t j = k + 1; j < n; ++j)
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
        prev = a[k][k];
    }
    return sign * a[n - 1][n - 1];
}

struct FieldSpec {
    i64 a = -1;
    int n = 4;
    std::vector<i64> mul_tensor;
    std::vector<i64> tau_coords;
    std::array<i64, 4> delta{1, 1, 0, 1};
};

// K together with the quadratic subfield L and the twist delta
struct FieldCtx {
    FieldParams params;
    int n = 0;
    std::vector<i64> mul_tensor;
    std::vector<i64> tau_coords;
    QuadRat delta;
    FormPoly N1, N2, NKQ;
    std::vector<FormPoly> grad_NKQ;
    FlatForm flat_N1, flat_N2, flat_NKQ;
    DenseForm dense_N1, dense_N2, dense_NKQ;
    bool order_unverified = true;  // the basis is not checked to be maximal

    i64 T(int i, int j, int k) const { return mul_tensor[static_cast<size_t>((i * n + j) * n + k)]; }

    template <class S>
    std::vector<S> multiply(const std::vector<S>& x, const std::vector<S>& y) const {
        std::vector<S> z(static_cast<size_t>(n), S(0));
        for (int i = 0; i < n; ++i) {
            if (x[i] == S(0)) continue;
            for (int j = 0; j < n; ++j) {
                if (y[j] == S(0)) continue;
                S xy = x[i] * y[j];
                for (int k = 0; k < n; ++k)
                    if (T(i, j, k)) z[k] += S(T(i, j, k)) * xy;
            }
        }
        return z;
    }

    bool delta_integral() const { return is_integer(delta.c1) && is_integer(delta.c2); }
    QuadElem delta_int() const {
        if (!delta_integral()) fail("DeltaNotIntegral", "delta has denominators");
        return {num(delta.c1).convert_to<i64>(), num(delta.c2).convert_to<i64>()};
    }
};

namespace detail {

using LPoly = PolyMap<QuadRat>;

inline LPoly lpoly_mul(const LPoly& a, const LPoly& b, const FieldParams& P) {
    LPoly r;
    for (auto& [ma, ca] : a)
        for (auto& [mb, cb] : b) {
            Monomial m(ma.size());
            for (size_t i = 0; i < m.size(); ++i) m[i] = ma[i] + mb[i];
            QuadRat& t = r[m];
            t = t + mul(ca, cb, P);
        }
    for (auto it = r.begin(); it != r.end();)
        it = (it->second.c1 == 0 && it->second.c2 == 0) ? r.erase(it) : std::next(it);
    return r;
}

// N_{K/L} as the determinant of multiplication by x over an L-basis of K
inline std::pair<FormPoly, FormPoly> relative_norm_forms(const FieldCtx& K) {
    const int n = K.n, m = n / 2;
    std::vector<Rat> tau(K.tau_coords.begin(), K.tau_coords.end());
    RatMatrix cols;
    std::vector<std::vector<Rat>> lbasis;
    for (int i = 0; i < n && static_cast<int>(cols.size()) < n; ++i) {
        std::vector<Rat> e(static_cast<size_t>(n), 0);
        e[i] = 1;
        auto te = K.multiply(tau, e);
        RatMatrix trial = cols;
        trial.push_back(e);
        trial.push_back(te);
        if (rat_rank(trial) == static_cast<int>(cols.size()) + 2) {
            cols = trial;
            lbasis.push_back(e);
        }
    }
    if (static_cast<int>(cols.size()) != n) fail("NotABasis", "K is not a vector space over L");
    RatMatrix P(static_cast<size_t>(n), std::vector<Rat>(static_cast<size_t>(n)));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) P[r][c] = cols[c][r];
    RatMatrix Pinv = rat_inverse(P);

    std::vector<std::vector<LPoly>> A(static_cast<size_t>(m), std::vector<LPoly>(static_cast<size_t>(m)));
    for (int i = 0; i < n; ++i) {
        std::vector<Rat> wi(static_cast<size_t>(n), 0);
        wi[i] = 1;
        Monomial mono(static_cast<size_t>(n), 0);
        mono[i] = 1;
        for (int j = 0; j < m; ++j) {
            auto prod = K.multiply(wi, lbasis[j]);
            for (int k = 0; k < m; ++k) {
                Rat c1 = 0, c2 = 0;
                for (int t = 0; t < n; ++t) {
                    c1 += Pinv[2 * k][t] * prod[t];
                    c2 += Pinv[2 * k + 1][t] * prod[t];
                }
                if (c1 != 0 || c2 != 0) A[k][j][mono] = {c1, c2};
            }
        }
    }
    std::vector<int> perm(static_cast<size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    LPoly det;
    do {
        int inv = 0;
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) inv += perm[i] > perm[j];
        LPoly term;
        term[Monomial(static_cast<size_t>(n), 0)] = {Rat(inv % 2 ? -1 : 1), Rat(0)};
        for (int j = 0; j < m; ++j) term = lpoly_mul(term, A[perm[j]][j], K.params);
        for (auto& [mono, c] : term) det[mono] = det[mono] + c;
    } while (std::next_permutation(perm.begin(), perm.end()));
    PolyMap<Rat> p1, p2;
    for (auto& [mono, c] : det) {
        if (c.c1 != 0) p1[mono] = c.c1;
        if (c.c2 != 0) p2[mono] = c.c2;
    }
    return {to_form(p1, n, m), to_form(p2, n, m)};
}

}  // namespace detail

inline FieldCtx build_field(const FieldSpec& s) {
    FieldCtx K;
    K.params = make_params(s.a);
    K.n = s.n;
    const int n = s.n;
    if (n < 4 || n % 2) fail("NotABasis", "degree must be even and at least 4");
    if (s.mul_tensor.size() != static_cast<size_t>(n * n * n)) fail("NotABasis", "mul_tensor must have n^3 entries");
    if (s.tau_coords.size() != static_cast<size_t>(n)) fail("NotABasis", "tau_coords must have n entries");
    K.mul_tensor = s.mul_tensor;
    K.tau_coords = s.tau_coords;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
            if (K.T(0, j, k) != (j == k) || K.T(j, 0, k) != (j == k))
                fail("NotABasis", "first basis element is not 1");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                if (K.T(i, j, k) != K.T(j, i, k)) fail("NotABasis", "multiplication is not commutative");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < n; ++l) {
                std::vector<i64> ei(n, 0), ej(n, 0), el(n, 0);
                ei[i] = ej[j] = el[l] = 1;
                if (K.multiply(K.multiply(ei, ej), el) != K.multiply(ei, K.multiply(ej, el)))
                    fail("NotABasis", "multiplication is not associative");
            }
    auto t2 = K.multiply(K.tau_coords, K.tau_coords);
    for (int k = 0; k < n; ++k) {
        i64 want = K.params.tr_tau * K.tau_coords[k] - (k == 0 ? K.params.norm_tau : 0);
        if (t2[k] != want) fail("TauNotEmbedded", "tau_coords fails the minimal relation of tau");
    }
    if (s.delta[1] == 0 || s.delta[3] == 0) fail("DeltaZero", "zero denominator in delta");
    K.delta = {rat(s.delta[0], s.delta[1]), rat(s.delta[2], s.delta[3])};
    if (K.delta.c1 == 0 && K.delta.c2 == 0) fail("DeltaZero", "delta must be nonzero");

    auto [f1, f2] = detail::relative_norm_forms(K);
    K.N1 = f1;
    K.N2 = f2;
    PolyMap<i64> nkq = poly_mul(f1.coeffs, f1.coeffs);
    poly_add_to(nkq, poly_mul(f1.coeffs, f2.coeffs), K.params.tr_tau);
    poly_add_to(nkq, poly_mul(f2.coeffs, f2.coeffs), K.params.norm_tau);
    K.NKQ = FormPoly{n, n, nkq};
    for (int i = 0; i < n; ++i) K.grad_NKQ.push_back(K.NKQ.derivative(i));
    K.flat_N1 = FlatForm(K.N1);
    K.flat_N2 = FlatForm(K.N2);
    K.flat_NKQ = FlatForm(K.NKQ);
    K.dense_N1 = DenseForm(K.N1);
    K.dense_N2 = DenseForm(K.N2);
    K.dense_NKQ = DenseForm(K.NKQ);
    return K;
}

inline FieldSpec parse_field_spec(const nlohmann::json& j) {
    FieldSpec s;
    for (const char* key : {"a", "n", "mul_tensor", "tau_coords", "delta"})
        if (!j.contains(key)) fail("BadSpec", std::string("missing key ") + key);
    s.a = j.at("a").get<i64>();
    s.n = j.at("n").get<int>();
    s.mul_tensor = j.at("mul_tensor").get<std::vector<i64>>();
    s.tau_coords = j.at("tau_coords").get<std::vector<i64>>();
    auto d = j.at("delta").get<std::vector<i64>>();
    if (d.size() != 4) fail("BadSpec", "delta must have four integers");
    std::copy(d.begin(), d.end(), s.delta.begin());
    return s;
}

inline nlohmann::json field_spec_json(const FieldSpec& s) {
    return {{"a", s.a}, {"n", s.n}, {"mul_tensor", s.mul_tensor}, {"tau_coords", s.tau_coords},
            {"delta", std::vector<i64>(s.delta.begin(), s.delta.end())}};
}

inline FieldSpec load_field_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("BadSpec", "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("BadSpec", e.what());
    }
    return parse_field_spec(j);
}

// tensor of Q[X]/(f) in the basis 1, X, ..., X^{n-1}; f monic, coefficients low to high without the leading 1
inline std::vector<i64> power_basis_tensor(const std::vector<i64>& f) {
    int n = static_cast<int>(f.size());
    std::vector<std::vector<i64>> pw;  // X^k reduced, k < 2n-1
    for (int k = 0; k < 2 * n - 1; ++k) {
        std::vector<i64> v(static_cast<size_t>(n), 0);
        if (k < n) {
            v[k] = 1;
        } else {
            auto& prev = pw.back();
            i64 top = prev[n - 1];
            for (int i = n - 1; i > 0; --i) v[i] = prev[i - 1];
            v[0] = 0;
            for (int i = 0; i < n; ++i) v[i] -= top * f[i];
        }
        pw.push_back(v);
    }
    std::vector<i64> t(static_cast<size_t>(n * n * n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) t[static_cast<size_t>((i * n + j) * n + k)] = pw[i + j][k];
    return t;
}

inline FieldSpec zeta8_spec() {
    return FieldSpec{-1, 4, power_basis_tensor({1, 0, 0, 0}), {0, 0, 1, 0}, {1, 1, 0, 1}};
}

inline i64 checked_i64(const BigInt& b) {
    if (b > BigInt(std::numeric_limits<i64>::max()) || b < BigInt(std::numeric_limits<i64>::min()))
        fail("Overflow", "value exceeds 64 bits");
    return b.convert_to<i64>();
}

struct NormWithGradient {
    i64 value;
    std::vector<i64> grad;
};

// determinant of the regular representation, gradient from the form
inline NormWithGradient norm_KQ(const FieldCtx& K, const std::vector<i64>& x) {
    const int n = K.n;
    std::vector<std::vector<BigInt>> m(static_cast<size_t>(n), std::vector<BigInt>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                if (K.T(i, j, k)) m[k][j] += BigInt(x[i]) * K.T(i, j, k);
    NormWithGradient r{checked_i64(bareiss_det(m)), {}};
    for (auto& g : K.grad_NKQ) {
        std::vector<BigInt> xb(x.begin(), x.end());
        r.grad.push_back(checked_i64(g.eval(xb.data())));
    }
    return r;
}

inline QuadElem relnorm_KL(const FieldCtx& K, const std::vector<i64>& x) {
    std::vector<BigInt> xb(x.begin(), x.end());
    return {checked_i64(K.N1.eval(xb.data())), checked_i64(K.N2.eval(xb.data()))};
}

inline QuadRat delta_relnorm(const FieldCtx& K, const std::vector<i64>& x) {
    return mul(K.delta, to_rat(relnorm_KL(K, x)), K.params);
}

struct FormTriple {
    FormPoly N1, N2, NKQ;
};

inline FormTriple form_polynomials(const FieldCtx& K) { return {K.N1, K.N2, K.NKQ}; }

}  // namespace normcount
