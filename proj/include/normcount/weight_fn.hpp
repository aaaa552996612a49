#pragma once

#include <array>
#include <memory>
#include <cmath>
#include <exception>
#include <random>
#include <vector>

#include <json.hpp>

#include "norm_forms.hpp"
#include "parallel.hpp"

namespace normcount {

// floating evaluation of an integer form with its gradient
struct RealForm {
    int nvars = 0, degree = 0;
    std::vector<double> coef;
    std::vector<std::uint8_t> exps;

    RealForm() = default;
    explicit RealForm(const DenseForm& d) : nvars(d.nvars), degree(d.degree), exps(d.exps) {
        for (i64 c : d.coef) coef.push_back(static_cast<double>(c));
    }

    double eval(const double* x, double* grad = nullptr) const {
        double pw[16][17];
        for (int i = 0; i < nvars; ++i) {
            pw[i][0] = 1;
            for (int e = 1; e <= degree; ++e) pw[i][e] = pw[i][e - 1] * x[i];
        }
        if (grad) std::fill(grad, grad + nvars, 0.0);
        double r = 0;
        const std::uint8_t* e = exps.data();
        for (size_t t = 0; t < coef.size(); ++t, e += nvars) {
            double v = coef[t];
            for (int i = 0; i < nvars; ++i) v *= pw[i][e[i]];
            r += v;
            if (!grad) continue;
            for (int i = 0; i < nvars; ++i) {
                if (!e[i]) continue;
                double g = coef[t] * e[i] * pw[i][e[i] - 1];
                for (int j = 0; j < nvars; ++j)
                    if (j != i) g *= pw[j][e[j]];
                grad[i] += g;
            }
        }
        return r;
    }

    // |f(x)| <= bound(b) when |x_i| <= b_i
    double bound(const double* b) const {
        double r = 0;
        const std::uint8_t* e = exps.data();
        for (size_t t = 0; t < coef.size(); ++t, e += nvars) {
            double v = std::abs(coef[t]);
            for (int i = 0; i < nvars; ++i) v *= std::pow(b[i], e[i]);
            r += v;
        }
        return r;
    }
};

struct Square {
    double x0 = 0, y0 = 0, side = 1;  // lower-left corner
    bool contains(double x, double y) const { return x >= x0 && x < x0 + side && y >= y0 && y < y0 + side; }
};

struct Estimate {
    double value = 0, se = 0;
};

struct OmegaStats {
    long nodes = 0, inside = 0, skipped = 0;
    double min_J = 0;  // smallest |J| / U^(n-2) met at an accepted node
};

// The weight over the u-region: |L_i(u) - U L_i(c)| < U/G with L = (v1, v1 + lambda v2, w...),
// (v1, v2) the pivot coordinates; the map is u -> delta N_{K/L}(u) in the (1, tau) basis.
struct WeightFn {
    const FieldCtx* K = nullptr;
    int n = 0;
    double U = 1, G = 1;
    i64 M = 1;
    double mscale = 1;  // M^-n
    int piv[2] = {0, 1};
    std::vector<int> rest;
    double lambda = 1;
    std::vector<double> center;
    bool perturbed = false;
    double A[2][2] = {{1, 0}, {0, 1}};  // delta multiplication on (N1, N2)
    RealForm N1, N2;
    int nodes = 32;
    double J_center = 0;      // |J(c)|
    double J_min = 0;         // min |J| / U^(n-2) over sampled region points
    int J_sign = 1;
    double radius = 0;        // support radius / U^(n/2)
    double dv_dw = 0;         // |d(v1 + lambda v2)/dw3| at the center
    // per w-node image of the slice boundary at unit scale, outline_pts points per node
    std::shared_ptr<const std::vector<double>> outlines;
    int outline_pts = 0;

    double half() const { return U / G; }

    // delta N(u) and optionally its Jacobian rows
    void F(const double* u, double out[2], double* g1 = nullptr, double* g2 = nullptr) const {
        double a1[16], a2[16];
        double n1 = N1.eval(u, g1 ? a1 : nullptr), n2 = N2.eval(u, g1 ? a2 : nullptr);
        out[0] = A[0][0] * n1 + A[0][1] * n2;
        out[1] = A[1][0] * n1 + A[1][1] * n2;
        if (g1)
            for (int i = 0; i < n; ++i) {
                g1[i] = A[0][0] * a1[i] + A[0][1] * a2[i];
                g2[i] = A[1][0] * a1[i] + A[1][1] * a2[i];
            }
    }

    double J(const double* u) const {
        double f[2], g1[16], g2[16];
        F(u, f, g1, g2);
        return g1[piv[0]] * g2[piv[1]] - g1[piv[1]] * g2[piv[0]];
    }

    // L coordinates, not yet centred or scaled
    void to_L(const double* u, double* l) const {
        l[0] = u[piv[0]];
        l[1] = u[piv[0]] + lambda * u[piv[1]];
        for (size_t k = 0; k < rest.size(); ++k) l[k + 2] = u[rest[k]];
    }
    void from_L(const double* l, double* u) const {
        u[piv[0]] = l[0];
        u[piv[1]] = (l[1] - l[0]) / lambda;
        for (size_t k = 0; k < rest.size(); ++k) u[rest[k]] = l[k + 2];
    }

    bool in_region(const double* u) const {
        double l[16], c[16];
        to_L(u, l);
        to_L(center.data(), c);
        for (int i = 0; i < n; ++i)
            if (std::abs(l[i] - U * c[i]) >= half()) return false;
        return true;
    }

    double region_measure() const { return std::pow(2 * half(), n) / lambda; }
    double support_radius() const { return radius * std::pow(U, n / 2.0); }

    WeightFn rescaled(double U2) const {
        WeightFn w = *this;
        w.U = U2;
        return w;
    }
};

namespace detail {

inline void delta_matrix(const FieldCtx& K, double A[2][2]) {
    double d1 = to_double(K.delta.c1), d2 = to_double(K.delta.c2);
    double nt = static_cast<double>(K.params.norm_tau), tt = static_cast<double>(K.params.tr_tau);
    // (d1 + d2 tau)(a + b tau) with tau^2 = tr tau - N tau
    A[0][0] = d1;
    A[0][1] = -nt * d2;
    A[1][0] = d2;
    A[1][1] = d1 + tt * d2;
}

// pivot solve: dv = -Jv^-1 dF/dw
inline std::array<double, 2> dv_dw(const WeightFn& wf, const double* u, int k) {
    double f[2], g1[16], g2[16];
    wf.F(u, f, g1, g2);
    int i = wf.piv[0], j = wf.piv[1];
    double det = g1[i] * g2[j] - g1[j] * g2[i];
    double b1 = -g1[k], b2 = -g2[k];
    return {(b1 * g2[j] - g1[j] * b2) / det, (g1[i] * b2 - b1 * g2[i]) / det};
}

inline void sample_region(const WeightFn& wf, std::mt19937_64& rng, double* u) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    double c[16] = {}, l[16] = {};
    wf.to_L(wf.center.data(), c);
    for (int i = 0; i < wf.n; ++i) l[i] = wf.U * c[i] + wf.half() * d(rng);
    wf.from_L(l, u);
}

}  // namespace detail

namespace detail {

// winding number of a closed polygon around (x, y)
inline int winding(const double* pts, int m, double x, double y) {
    int wn = 0;
    for (int i = 0; i < m; ++i) {
        const double* a = pts + 2 * i;
        const double* b = pts + 2 * ((i + 1) % m);
        double cr = (b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1]);
        if (a[1] <= y) {
            if (b[1] > y && cr > 0) ++wn;
        } else if (b[1] <= y && cr < 0) {
            --wn;
        }
    }
    return wn;
}

// w-node coordinates in the same order as the quadrature loop
inline void w_node(const WeightFn& wf, long id, const double* c, double* u) {
    const int k = wf.nodes;
    const double h = wf.half();
    long r = id;
    for (size_t t = 0; t < wf.rest.size(); ++t, r /= k)
        u[wf.rest[t]] = wf.U * c[t + 2] - h + (static_cast<double>(r % k) + 0.5) * 2 * h / k;
}

}  // namespace detail

// Images of the slice boundaries. With J of constant sign the number of preimages of x in a slice
// equals the winding number of the image boundary around x, so a zero lets the solver skip the node.
inline void build_outlines(WeightFn& wf) {
    long total = 1;
    for (size_t t = 0; t < wf.rest.size(); ++t) total *= wf.nodes;
    if (total > 4096) return;
    const int per_edge = 48;
    wf.outline_pts = 4 * per_edge;
    WeightFn w1 = wf.rescaled(1.0);
    auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(total) * wf.outline_pts * 2);
    double c[16], u[16], f[2];
    w1.to_L(w1.center.data(), c);
    const double h = w1.half();
    const double corner[5][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}, {-1, -1}};
    for (long id = 0; id < total; ++id) {
        detail::w_node(w1, id, c, u);
        double* dst = out->data() + static_cast<size_t>(id) * wf.outline_pts * 2;
        for (int e = 0; e < 4; ++e)
            for (int s = 0; s < per_edge; ++s) {
                double t = static_cast<double>(s) / per_edge;
                double a = corner[e][0] + t * (corner[e + 1][0] - corner[e][0]);
                double b = corner[e][1] + t * (corner[e + 1][1] - corner[e][1]);
                double l0 = c[0] + a * h, l1 = c[1] + b * h;
                u[w1.piv[0]] = l0;
                u[w1.piv[1]] = (l1 - l0) / w1.lambda;
                w1.F(u, f);
                *dst++ = f[0];
                *dst++ = f[1];
            }
    }
    wf.outlines = out;
}

inline WeightFn build_weight(const FieldCtx& K, double U, double G, std::vector<double> center, i64 M = 1,
                             int nodes = 32) {
    const int n = K.n;
    if (static_cast<int>(center.size()) != n) fail("BadArgument", "center has the wrong length");
    if (U <= 0 || G < 1) fail("BadArgument", "need U > 0 and G >= 1");
    if (n > 16 || n < 3) fail("BadArgument", "degree out of range");
    WeightFn wf;
    wf.K = &K;
    wf.n = n;
    wf.U = U;
    wf.G = G;
    wf.M = M;
    wf.mscale = std::pow(static_cast<double>(M), -n);
    wf.nodes = nodes;
    wf.N1 = RealForm(K.dense_N1);
    wf.N2 = RealForm(K.dense_N2);
    detail::delta_matrix(K, wf.A);
    RealForm NKQ(K.dense_NKQ);

    double scale = 0;
    for (double c : center) scale = std::max(scale, std::abs(c));
    double gN[16];
    double Nc = NKQ.eval(center.data(), gN);
    if (scale == 0 || std::abs(Nc) <= 1e-12 * std::pow(scale, n)) fail("SingularCenter", "N(center) vanishes");
    // push the center off coordinate hyperplanes of the gradient
    for (int round = 0; round < 8; ++round) {
        bool ok = true;
        for (int i = 0; i < n; ++i) ok = ok && std::abs(gN[i]) > 1e-9 * std::pow(scale, n - 1);
        if (ok) break;
        wf.perturbed = true;
        for (int i = 0; i < n; ++i) center[static_cast<size_t>(i)] += 1e-7 * scale * (i + 1) / (round + 1);
        Nc = NKQ.eval(center.data(), gN);
    }
    wf.center = center;

    // pivot pair with the largest minor
    double f[2], g1[16], g2[16];
    wf.F(center.data(), f, g1, g2);
    double best = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double m = g1[i] * g2[j] - g1[j] * g2[i];
            if (std::abs(m) > std::abs(best)) {
                best = m;
                wf.piv[0] = i;
                wf.piv[1] = j;
            }
        }
    if (std::abs(best) <= 1e-12 * std::pow(scale, n - 2)) fail("SingularCenter", "no nonsingular pivot pair");
    wf.rest.clear();
    for (int i = 0; i < n; ++i)
        if (i != wf.piv[0] && i != wf.piv[1]) wf.rest.push_back(i);

    // v1 is the pivot moving most with w3
    auto dv = detail::dv_dw(wf, center.data(), wf.rest[0]);
    if (std::abs(dv[1]) > std::abs(dv[0])) {
        std::swap(wf.piv[0], wf.piv[1]);
        std::swap(dv[0], dv[1]);
    }
    if (dv[0] == 0) fail("SingularCenter", "v does not move with w3");
    wf.lambda = 1;
    while (std::abs(dv[0] + wf.lambda * dv[1]) < 0.5 * std::abs(dv[0])) wf.lambda /= 2;
    wf.dv_dw = std::abs(dv[0] + wf.lambda * dv[1]);

    // Jacobian over the region at unit scale: corners, a coarse grid and random points
    WeightFn w1 = wf.rescaled(1.0);
    wf.J_sign = w1.J(center.data()) > 0 ? 1 : -1;
    wf.J_center = std::abs(wf.J(center.data()));
    double jmin = std::numeric_limits<double>::infinity();
    bool sign_change = false;
    auto probe = [&](const double* u) {
        double j = w1.J(u);
        if (j * wf.J_sign <= 0) sign_change = true;
        jmin = std::min(jmin, std::abs(j));
    };
    {
        double c[16], l[16], u[16];
        w1.to_L(center.data(), c);
        int pts = 1;
        for (int i = 0; i < n; ++i) pts *= 5;
        for (int id = 0; id < pts; ++id) {
            int r = id;
            for (int i = 0; i < n; ++i, r /= 5) l[i] = c[i] + w1.half() * (-1.0 + 0.5 * (r % 5));
            w1.from_L(l, u);
            probe(u);
        }
        std::mt19937_64 rng(12345);
        for (int t = 0; t < 20000; ++t) {
            detail::sample_region(w1, rng, u);
            probe(u);
        }
    }
    if (sign_change || jmin <= 0)
        fail("JacobianDegenerate", "the pivot Jacobian changes sign on the region; increase G");
    wf.J_min = jmin;

    // support radius at unit scale from coordinate bounds
    {
        double c[16], b[16];
        w1.to_L(center.data(), c);
        double lb[16];
        for (int i = 0; i < n; ++i) lb[i] = std::abs(c[i]) + w1.half();
        for (int i = 0; i < n; ++i) b[i] = 0;
        b[wf.piv[0]] = lb[0];
        b[wf.piv[1]] = (lb[0] + lb[1]) / wf.lambda;
        for (size_t k = 0; k < wf.rest.size(); ++k) b[wf.rest[k]] = lb[k + 2];
        double n1 = wf.N1.bound(b), n2 = wf.N2.bound(b);
        double f1 = std::abs(wf.A[0][0]) * n1 + std::abs(wf.A[0][1]) * n2;
        double f2 = std::abs(wf.A[1][0]) * n1 + std::abs(wf.A[1][1]) * n2;
        wf.radius = std::hypot(f1, f2);
    }
    build_outlines(wf);
    return wf;
}

// Newton for F(v, w) = x on the v-slice of the region, iterates kept in the slice.
// Returns 1 on convergence inside, 0 when the point is not in the slice image, -1 on failure.
inline int solve_pivot_from(const WeightFn& wf, const double x[2], double* u, double* Jout) {
    const double tol = 1e-10 * std::pow(wf.U, wf.n / 2.0);
    double c[16];
    wf.to_L(wf.center.data(), c);
    const int i = wf.piv[0], j = wf.piv[1];
    const double h = wf.half();
    auto clamp = [&](double* uu) {
        bool hit = false;
        double l0 = uu[i], l1 = uu[i] + wf.lambda * uu[j];
        double lo0 = wf.U * c[0] - h, hi0 = wf.U * c[0] + h, lo1 = wf.U * c[1] - h, hi1 = wf.U * c[1] + h;
        if (l0 < lo0) { l0 = lo0; hit = true; }
        if (l0 > hi0) { l0 = hi0; hit = true; }
        if (l1 < lo1) { l1 = lo1; hit = true; }
        if (l1 > hi1) { l1 = hi1; hit = true; }
        uu[i] = l0;
        uu[j] = (l1 - l0) / wf.lambda;
        return hit;
    };
    double f[2], g1[16], g2[16];
    auto resid = [&](const double* uu) {
        wf.F(uu, f, g1, g2);
        return std::hypot(f[0] - x[0], f[1] - x[1]);
    };
    double r = resid(u);
    int boundary_stalls = 0;
    for (int it = 0; it < 60; ++it) {
        if (r <= tol) break;
        double det = g1[i] * g2[j] - g1[j] * g2[i];
        if (det == 0) return -1;
        double e1 = x[0] - f[0], e2 = x[1] - f[1];
        double d0 = (e1 * g2[j] - g1[j] * e2) / det, d1 = (g1[i] * e2 - e1 * g2[i]) / det;
        double step = 1;
        double trial[16];
        bool improved = false, hit = false;
        for (int k = 0; k < 30; ++k, step *= 0.5) {
            std::copy(u, u + wf.n, trial);
            trial[i] += step * d0;
            trial[j] += step * d1;
            hit = clamp(trial);
            double rt = resid(trial);
            if (rt < r) {
                std::copy(trial, trial + wf.n, u);
                r = rt;
                improved = true;
                break;
            }
        }
        if (!improved || hit) {
            // pinned against the slice edge: the target lies outside the slice image
            if (!improved || ++boundary_stalls > 8) {
                r = resid(u);
                return r <= tol ? (wf.in_region(u) ? 1 : 0) : 0;
            }
        } else {
            boundary_stalls = 0;
        }
    }
    r = resid(u);
    if (r > tol) return -1;
    if (!wf.in_region(u)) return 0;
    if (Jout) *Jout = std::abs(g1[i] * g2[j] - g1[j] * g2[i]);
    return 1;
}

// the given start, then a 3x3 pattern of starts over the slice
inline int solve_pivot(const WeightFn& wf, const double x[2], double* u, double* Jout) {
    double start[16];
    std::copy(u, u + wf.n, start);
    int res = solve_pivot_from(wf, x, u, Jout);
    if (res == 1) return 1;
    double c[16];
    wf.to_L(wf.center.data(), c);
    const double h = 0.6 * wf.half();
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
            std::copy(start, start + wf.n, u);
            double l0 = wf.U * c[0] + a * h, l1 = wf.U * c[1] + b * h;
            u[wf.piv[0]] = l0;
            u[wf.piv[1]] = (l1 - l0) / wf.lambda;
            int r = solve_pivot_from(wf, x, u, Jout);
            if (r == 1) return 1;
            res = std::max(res, r);
        }
    return res;
}

// omega(x) = M^-n * integral over the w-slice of |J|^-1
inline double omega(const WeightFn& wf, const double x[2], OmegaStats* st = nullptr) {
    OmegaStats s;
    if (std::hypot(x[0], x[1]) > wf.support_radius()) {
        if (st) *st = s;
        return 0;
    }
    const int m = wf.n - 2, k = wf.nodes;
    long total = 1;
    for (int t = 0; t < m; ++t) total *= k;
    double c[16];
    wf.to_L(wf.center.data(), c);
    const double h = wf.half(), cell = std::pow(2 * h / k, m);
    double u[16], warm[2] = {wf.U * wf.center[wf.piv[0]], wf.U * wf.center[wf.piv[1]]};
    double acc = 0;
    s.min_J = std::numeric_limits<double>::infinity();
    const double jscale = std::pow(wf.U, wf.n - 2);
    const double xs = std::pow(wf.U, wf.n / 2.0), tol = 0.02 * wf.radius / wf.G;
    for (long id = 0; id < total; ++id) {
        detail::w_node(wf, id, c, u);
        ++s.nodes;
        bool inside = true;
        if (wf.outlines) {
            const double* poly = wf.outlines->data() + static_cast<size_t>(id) * wf.outline_pts * 2;
            const double X = x[0] / xs, Y = x[1] / xs;
            inside = detail::winding(poly, wf.outline_pts, X, Y) != 0;
            // within the margin of the outline the solver still runs from the warm start
            if (!inside && detail::winding(poly, wf.outline_pts, X + tol, Y) == 0 &&
                detail::winding(poly, wf.outline_pts, X - tol, Y) == 0 &&
                detail::winding(poly, wf.outline_pts, X, Y + tol) == 0 &&
                detail::winding(poly, wf.outline_pts, X, Y - tol) == 0)
                continue;
        }
        u[wf.piv[0]] = warm[0];
        u[wf.piv[1]] = warm[1];
        double J = 0;
        int res = inside ? solve_pivot(wf, x, u, &J) : solve_pivot_from(wf, x, u, &J);
        if (res < 0) {
            ++s.skipped;
            continue;
        }
        if (res == 1) {
            ++s.inside;
            acc += cell / J;
            s.min_J = std::min(s.min_J, J / jscale);
            warm[0] = u[wf.piv[0]];
            warm[1] = u[wf.piv[1]];
        }
    }
    if (s.inside == 0) s.min_J = 0;
    if (st) *st = s;
    if (s.skipped * 100 > s.nodes) fail("NewtonDivergence", std::to_string(s.skipped) + " of " + std::to_string(s.nodes) + " nodes failed");
    return wf.mscale * acc;
}

// M^-n * meas{u in region : delta N(u) in R} by uniform sampling
inline Estimate omega_box_mc(const WeightFn& wf, const Square& R, long samples, std::uint64_t seed) {
    if (samples < 10000) fail("BadArgument", "at least 10^4 samples");
    std::mt19937_64 rng(seed);
    long hits = 0;
    double u[16], f[2];
    for (long t = 0; t < samples; ++t) {
        detail::sample_region(wf, rng, u);
        wf.F(u, f);
        if (R.contains(f[0], f[1])) ++hits;
    }
    double p = static_cast<double>(hits) / static_cast<double>(samples);
    double scale = wf.mscale * wf.region_measure();
    return {scale * p, scale * std::sqrt(p * (1 - p) / static_cast<double>(samples))};
}

// midpoint rule for the integral of omega over a square
inline double omega_square_integral(const WeightFn& wf, const Square& R, int k = 12, int threads = 1) {
    std::vector<double> vals(static_cast<size_t>(k * k));
    double h = R.side / k;
    parallel_for(k * k, threads, [&](long id) {
        double x[2] = {R.x0 + (static_cast<double>(id % k) + 0.5) * h, R.y0 + (static_cast<double>(id / k) + 0.5) * h};
        vals[static_cast<size_t>(id)] = omega(wf, x);
    });
    double s = 0;
    for (double v : vals) s += v;
    return s * h * h;
}

// Scale-free table of omega(U^(n/2) xi) on a grid covering the image, bilinear lookup.
struct OmegaTable {
    double x0 = 0, y0 = 0, h = 1;  // grid in scaled coordinates
    int nx = 0, ny = 0;
    std::vector<double> val;
    double scale = 1;  // U^(n/2) of the weight it is used with

    double at(int i, int j) const {
        if (i < 0 || j < 0 || i >= nx || j >= ny) return 0;
        return val[static_cast<size_t>(j * nx + i)];
    }
    double operator()(double x, double y) const {
        double s = (x / scale - x0) / h, t = (y / scale - y0) / h;
        if (s < 0 || t < 0 || s > nx - 1 || t > ny - 1) return 0;
        int i = std::min(static_cast<int>(s), nx - 2), j = std::min(static_cast<int>(t), ny - 2);
        double a = s - i, b = t - j;
        return (1 - a) * (1 - b) * at(i, j) + a * (1 - b) * at(i + 1, j) + (1 - a) * b * at(i, j + 1) + a * b * at(i + 1, j + 1);
    }
    double max() const { return val.empty() ? 0 : *std::max_element(val.begin(), val.end()); }
};

// image bounding box at unit scale from region samples
inline std::array<double, 4> image_box(const WeightFn& wf, long samples = 200000, std::uint64_t seed = 7) {
    WeightFn w1 = wf.rescaled(1.0);
    std::mt19937_64 rng(seed);
    double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300, u[16] = {}, f[2];
    for (long t = 0; t < samples; ++t) {
        detail::sample_region(w1, rng, u);
        w1.F(u, f);
        lo0 = std::min(lo0, f[0]);
        hi0 = std::max(hi0, f[0]);
        lo1 = std::min(lo1, f[1]);
        hi1 = std::max(hi1, f[1]);
    }
    return {lo0, hi0, lo1, hi1};
}

// Pushforward of the region measure onto the grid: a k^n midpoint lattice in L-coordinates,
// each point deposited on its four neighbouring nodes with bilinear weights.
inline OmegaTable build_omega_table(const WeightFn& wf, int res = 256, int k = 64, int threads = 1) {
    WeightFn w1 = wf.rescaled(1.0);
    const int n = wf.n;
    auto b = image_box(wf);
    double pad = 0.03 * std::max(b[1] - b[0], b[3] - b[2]);
    OmegaTable t;
    t.h = (std::max(b[1] - b[0], b[3] - b[2]) + 2 * pad) / (res - 1);
    t.x0 = b[0] - pad;
    t.y0 = b[2] - pad;
    t.nx = static_cast<int>(std::ceil((b[1] - b[0] + 2 * pad) / t.h)) + 2;
    t.ny = static_cast<int>(std::ceil((b[3] - b[2] + 2 * pad) / t.h)) + 2;
    t.scale = std::pow(wf.U, n / 2.0);
    const size_t cells = static_cast<size_t>(t.nx) * t.ny;
    double c[16];
    w1.to_L(w1.center.data(), c);
    const double hw = w1.half(), step = 2 * hw / k;
    const double vol = std::pow(step, n) / w1.lambda;
    long inner = 1;
    for (int i = 1; i < n; ++i) inner *= k;
    int nt = std::max(1, std::min(threads, k));
    std::vector<std::vector<double>> acc(static_cast<size_t>(nt), std::vector<double>(cells, 0.0));
    std::atomic<int> outside{0};
    std::atomic<long> next{0};
    auto work = [&](int tid) {
        auto& a = acc[static_cast<size_t>(tid)];
        double l[16], u[16], f[2];
        for (long i0; (i0 = next++) < k;) {
            l[0] = c[0] - hw + (static_cast<double>(i0) + 0.5) * step;
            for (long id = 0; id < inner; ++id) {
                long r = id;
                for (int i = 1; i < n; ++i, r /= k) l[i] = c[i] - hw + (static_cast<double>(r % k) + 0.5) * step;
                w1.from_L(l, u);
                w1.F(u, f);
                double s = (f[0] - t.x0) / t.h, q = (f[1] - t.y0) / t.h;
                int ix = static_cast<int>(std::floor(s)), iy = static_cast<int>(std::floor(q));
                if (ix < 0 || iy < 0 || ix >= t.nx - 1 || iy >= t.ny - 1) {
                    ++outside;
                    continue;
                }
                double ax = s - ix, ay = q - iy;
                size_t base = static_cast<size_t>(iy) * t.nx + ix;
                a[base] += (1 - ax) * (1 - ay);
                a[base + 1] += ax * (1 - ay);
                a[base + t.nx] += (1 - ax) * ay;
                a[base + t.nx + 1] += ax * ay;
            }
        }
    };
    if (nt == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nt; ++i) pool.emplace_back(work, i);
        for (auto& th : pool) th.join();
    }
    if (outside > 0) fail("Budget", "omega table does not cover the image");
    t.val.assign(cells, 0.0);
    const double norm = wf.mscale * vol / (t.h * t.h);
    for (auto& a : acc)
        for (size_t i = 0; i < cells; ++i) t.val[i] += a[i] * norm;
    return t;
}

// max |omega(x + h) - omega(x)| U^(n/2) / |h| over random pairs near the image
inline double lipschitz_constant(const WeightFn& wf, int pairs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    double s = std::pow(wf.U, wf.n / 2.0), best = 0, u[16], f[2];
    for (int t = 0; t < pairs; ++t) {
        detail::sample_region(wf, rng, u);
        wf.F(u, f);
        double hx = d(rng) * s * 0.02, hy = d(rng) * s * 0.02;
        double x2[2] = {f[0] + hx, f[1] + hy};
        double diff = std::abs(omega(wf, x2) - omega(wf, f));
        best = std::max(best, diff * s / std::hypot(hx, hy));
    }
    return best;
}

// omega at U^(n/2) delta N(c) times G^(n-2)
inline double center_lower_constant(const WeightFn& wf) {
    double f[2], c[16];
    for (int i = 0; i < wf.n; ++i) c[i] = wf.U * wf.center[static_cast<size_t>(i)];
    wf.F(c, f);
    return omega(wf, f) * std::pow(wf.G, wf.n - 2);
}

inline nlohmann::json to_json(const WeightFn& wf) {
    nlohmann::json j;
    j["U"] = wf.U;
    j["G"] = wf.G;
    j["M"] = wf.M;
    j["pivot"] = {wf.piv[0], wf.piv[1]};
    j["lambda"] = wf.lambda;
    j["center"] = wf.center;
    j["perturbed"] = wf.perturbed;
    j["J_center"] = wf.J_center;
    j["J_min_scaled"] = wf.J_min;
    j["support_radius"] = wf.support_radius();
    j["nodes"] = wf.nodes;
    return j;
}

}  // namespace normcount
