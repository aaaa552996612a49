#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "errors.hpp"
#include "rational.hpp"

namespace normcount {

using Monomial = std::vector<int>;

template <class C>
using PolyMap = std::map<Monomial, C>;

template <class C>
void poly_add_to(PolyMap<C>& a, const PolyMap<C>& b, const C& s = C(1)) {
    for (auto& [m, c] : b) {
        C& t = a[m];
        t += s * c;
        if (t == C(0)) a.erase(m);
    }
}

template <class C>
PolyMap<C> poly_mul(const PolyMap<C>& a, const PolyMap<C>& b) {
    PolyMap<C> r;
    for (auto& [ma, ca] : a)
        for (auto& [mb, cb] : b) {
            Monomial m(ma.size());
            for (size_t i = 0; i < m.size(); ++i) m[i] = ma[i] + mb[i];
            C& t = r[m];
            t += ca * cb;
            if (t == C(0)) r.erase(m);
        }
    return r;
}

// homogeneous integer form in nvars variables
struct FormPoly {
    int nvars = 0;
    int degree = 0;
    PolyMap<i64> coeffs;

    template <class T>
    T eval(const T* x) const {
        T s = 0;
        for (auto& [m, c] : coeffs) {
            T t = T(c);
            for (int i = 0; i < nvars; ++i)
                for (int e = 0; e < m[i]; ++e) t *= x[i];
            s += t;
        }
        return s;
    }
    template <class V>
    auto operator()(const V& x) const { return eval(x.data()); }

    // partial derivative along variable k as a form of degree - 1
    FormPoly derivative(int k) const {
        FormPoly d{nvars, degree - 1, {}};
        for (auto& [m, c] : coeffs) {
            if (m[k] == 0) continue;
            Monomial mm = m;
            mm[k]--;
            d.coeffs[mm] += c * m[k];
        }
        return d;
    }
};

inline FormPoly to_form(const PolyMap<Rat>& p, int nvars, int degree) {
    FormPoly f{nvars, degree, {}};
    for (auto& [m, c] : p) {
        if (!is_integer(c)) fail("NotABasis", "norm form has non-integral coefficient");
        int d = 0;
        for (int e : m) d += e;
        if (d != degree) fail("NotABasis", "norm form is not homogeneous");
        f.coeffs[m] = num(c).convert_to<i64>();
    }
    return f;
}

inline PolyMap<i64> form_mul(const PolyMap<i64>& a, const PolyMap<i64>& b) { return poly_mul(a, b); }

// flat evaluator of a form, split by the power of the last variable
struct FlatForm {
    int nvars = 0, degree = 0;
    struct Term { i64 c; std::vector<int> e; };
    std::vector<std::vector<Term>> by_last;  // index = power of last variable

    FlatForm() = default;
    explicit FlatForm(const FormPoly& f) : nvars(f.nvars), degree(f.degree) {
        by_last.resize(static_cast<size_t>(degree + 1));
        for (auto& [m, c] : f.coeffs) {
            Term t{c, std::vector<int>(m.begin(), m.end() - 1)};
            by_last[static_cast<size_t>(m.back())].push_back(t);
        }
    }

    // coefficients of x_n^e mod q given the first n-1 coordinates
    void head_mod(const i64* x, i64 q, i64* out) const {
        i64 xr[16];
        for (int i = 0; i + 1 < nvars; ++i) xr[i] = mod(x[i], q);
        for (size_t e = 0; e < by_last.size(); ++e) {
            i64 s = 0;
            for (auto& t : by_last[e]) {
                i64 v = mod(t.c, q);
                for (int i = 0; i + 1 < nvars; ++i)
                    for (int k = 0; k < t.e[i]; ++k) v = v * xr[i] % q;
                s += v;
            }
            out[e] = s % q;
        }
    }

    i64 eval_mod(const i64* x, i64 q) const {
        i64 h[16];
        head_mod(x, q, h);
        i64 xn = mod(x[nvars - 1], q), r = 0;
        for (int e = degree; e >= 0; --e) r = (r * xn + h[e]) % q;
        return r;
    }

    double eval(const double* x) const {
        double r = 0;
        for (int e = degree; e >= 0; --e) {
            double s = 0;
            for (auto& t : by_last[static_cast<size_t>(e)]) {
                double v = static_cast<double>(t.c);
                for (int i = 0; i + 1 < nvars; ++i)
                    for (int k = 0; k < t.e[i]; ++k) v *= x[i];
                s += v;
            }
            r = r * x[nvars - 1] + s;
        }
        return r;
    }
};

// terms as flat arrays for tight integer loops; exponents at most 15
struct DenseForm {
    int nvars = 0, degree = 0;
    std::vector<i64> coef;
    std::vector<std::uint8_t> exps;  // nvars per term

    DenseForm() = default;
    explicit DenseForm(const FormPoly& f) : nvars(f.nvars), degree(f.degree) {
        for (auto& [m, c] : f.coeffs) {
            if (c == 0) continue;
            coef.push_back(c);
            for (int e : m) exps.push_back(static_cast<std::uint8_t>(e));
        }
    }

    i64 abs_coef_sum() const {
        i64 s = 0;
        for (i64 c : coef) s += c < 0 ? -c : c;
        return s;
    }

    // exact value when every |x_i| < bound and abs_coef_sum * bound^degree fits in 63 bits
    i64 eval(const i64* x) const {
        i64 pw[16][16];
        for (int i = 0; i < nvars; ++i) {
            pw[i][0] = 1;
            for (int e = 1; e <= degree; ++e) pw[i][e] = pw[i][e - 1] * x[i];
        }
        i64 r = 0;
        const std::uint8_t* e = exps.data();
        for (size_t t = 0; t < coef.size(); ++t, e += nvars) {
            i64 v = coef[t];
            for (int i = 0; i < nvars; ++i) v *= pw[i][e[i]];
            r += v;
        }
        return r;
    }

    bool fits(i64 bound) const {
        long double b = static_cast<long double>(abs_coef_sum());
        for (int e = 0; e < degree; ++e) b *= static_cast<long double>(bound);
        return b < 9.0e18L;
    }
};

}  // namespace normcount
