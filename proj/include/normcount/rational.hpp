#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <string>

#include "arith.hpp"

namespace normcount {

using BigInt = boost::multiprecision::cpp_int;
using Rat = boost::multiprecision::cpp_rational;

inline Rat rat(i64 n, i64 d = 1) { return Rat(BigInt(n), BigInt(d)); }

inline BigInt num(const Rat& r) { return boost::multiprecision::numerator(r); }
inline BigInt den(const Rat& r) { return boost::multiprecision::denominator(r); }

inline std::string to_string(const Rat& r) {
    return num(r).str() + "/" + den(r).str();
}

inline Rat rat_from_string(const std::string& s) {
    auto k = s.find('/');
    if (k == std::string::npos) return Rat(BigInt(s));
    return Rat(BigInt(s.substr(0, k)), BigInt(s.substr(k + 1)));
}

inline double to_double(const Rat& r) { return r.convert_to<double>(); }

inline Rat rpow(const Rat& b, int e) {
    Rat r = 1;
    if (e < 0) return 1 / rpow(b, -e);
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

inline bool is_integer(const Rat& r) { return den(r) == 1; }

// r mod m for r with denominator invertible mod m
inline i64 rat_mod(const Rat& r, i64 m) {
    BigInt n = num(r) % m, d = den(r) % m;
    i64 ni = n.convert_to<i64>(), di = d.convert_to<i64>();
    return mod128(static_cast<i128>(mod(ni, m)) * invmod(di, m), m);
}

}  // namespace normcount
