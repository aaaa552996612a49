#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace normcount {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using i128 = __int128;

inline i64 mod(i64 a, i64 m) {
    i64 r = a % m;
    return r < 0 ? r + m : r;
}

inline i64 mod128(i128 a, i64 m) {
    i128 r = a % m;
    return static_cast<i64>(r < 0 ? r + m : r);
}

inline i64 gcd3(i64 a, i64 b, i64 c) { return std::gcd(std::gcd(a, b), c); }

inline i64 ipow(i64 b, int e) {
    i64 r = 1;
    while (e-- > 0) r *= b;
    return r;
}

inline i64 powmod(i64 b, u64 e, i64 m) {
    i128 r = 1 % m, x = mod(b, m);
    while (e) {
        if (e & 1) r = r * x % m;
        x = x * x % m;
        e >>= 1;
    }
    return static_cast<i64>(r);
}

// inverse of a mod m, throws when gcd(a, m) != 1
inline i64 invmod(i64 a, i64 m) {
    i64 g = m, x = 0, x1 = 1, r = mod(a, m);
    while (r) {
        i64 q = g / r;
        g -= q * r; std::swap(g, r);
        x -= q * x1; std::swap(x, x1);
    }
    if (g != 1) throw std::domain_error("invmod: not invertible");
    return mod(x, m);
}

inline std::vector<std::pair<i64, int>> factorize(i64 n) {
    std::vector<std::pair<i64, int>> f;
    n = std::llabs(n);
    for (i64 p = 2; p * p <= n; ++p) {
        if (n % p) continue;
        int e = 0;
        while (n % p == 0) { n /= p; ++e; }
        f.emplace_back(p, e);
    }
    if (n > 1) f.emplace_back(n, 1);
    return f;
}

inline bool is_prime(i64 n) {
    if (n < 2) return false;
    for (i64 p = 2; p * p <= n; ++p)
        if (n % p == 0) return false;
    return true;
}

inline std::vector<i64> primes_upto(i64 n) {
    std::vector<char> s(static_cast<size_t>(std::max<i64>(n + 1, 2)), 1);
    std::vector<i64> ps;
    for (i64 i = 2; i <= n; ++i) {
        if (!s[i]) continue;
        ps.push_back(i);
        for (i64 j = i * i; j <= n; j += i) s[j] = 0;
    }
    return ps;
}

inline int moebius(i64 n) {
    int m = 1;
    for (auto [p, e] : factorize(n)) {
        if (e > 1) return 0;
        m = -m;
    }
    return m;
}

inline bool squarefree(i64 n) {
    if (n == 0) return false;
    for (auto [p, e] : factorize(n))
        if (e > 1) return false;
    return true;
}

inline std::vector<i64> divisors(i64 n) {
    std::vector<i64> d{1};
    for (auto [p, e] : factorize(n)) {
        size_t k = d.size();
        i64 pk = 1;
        for (int j = 1; j <= e; ++j) {
            pk *= p;
            for (size_t i = 0; i < k; ++i) d.push_back(d[i] * pk);
        }
    }
    std::sort(d.begin(), d.end());
    return d;
}

inline std::vector<i64> prime_divisors(i64 n) {
    std::vector<i64> r;
    for (auto [p, e] : factorize(n)) r.push_back(p);
    return r;
}

inline int valuation(i64 n, i64 p) {
    if (n == 0) return 1 << 20;
    int v = 0;
    while (n % p == 0) { n /= p; ++v; }
    return v;
}

inline i64 euler_phi(i64 n) {
    i64 r = n;
    for (auto [p, e] : factorize(n)) r = r / p * (p - 1);
    return r;
}

inline i64 lcm(i64 a, i64 b) { return a / std::gcd(a, b) * b; }

// Legendre symbol for odd prime p
inline int legendre(i64 a, i64 p) {
    i64 r = powmod(mod(a, p), static_cast<u64>((p - 1) / 2), p);
    return r == 0 ? 0 : (r == 1 ? 1 : -1);
}

// square root of a mod odd prime p (Tonelli-Shanks); a must be a nonzero square
inline i64 sqrt_mod_p(i64 a, i64 p) {
    a = mod(a, p);
    if (a == 0) return 0;
    if (p % 4 == 3) return powmod(a, static_cast<u64>((p + 1) / 4), p);
    i64 q = p - 1;
    int s = 0;
    while (q % 2 == 0) { q /= 2; ++s; }
    i64 z = 2;
    while (legendre(z, p) != -1) ++z;
    i64 m = s, c = powmod(z, q, p), t = powmod(a, q, p), r = powmod(a, (q + 1) / 2, p);
    while (t != 1) {
        i64 i = 0, tt = t;
        while (tt != 1) { tt = static_cast<i64>(static_cast<i128>(tt) * tt % p); ++i; }
        i64 b = c;
        for (i64 j = 0; j < m - i - 1; ++j) b = static_cast<i64>(static_cast<i128>(b) * b % p);
        m = i;
        c = static_cast<i64>(static_cast<i128>(b) * b % p);
        t = static_cast<i64>(static_cast<i128>(t) * c % p);
        r = static_cast<i64>(static_cast<i128>(r) * b % p);
    }
    return r;
}

}  // namespace normcount
