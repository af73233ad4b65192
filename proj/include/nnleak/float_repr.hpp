#pragma once

// 32-bit IEEE-754-style value split into sign / biased exponent / mantissa.
// The workbench only admits normal numbers and a canonical all-zero encoding:
// NaN, Inf and denormals are rejected everywhere.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace nnleak {

struct FloatRepr {
    std::uint8_t sign = 0;             // 0 = positive, 1 = negative
    std::uint8_t biased_exponent = 0;  // 1..254 for normals, 0 for zero
    std::uint32_t mantissa_frac = 0;   // 23 bits, fraction of 1.m

    static constexpr int exponent_bias = 127;

    bool is_zero() const { return biased_exponent == 0; }
    bool is_negative() const { return !is_zero() && sign != 0; }

    int unbiased_exponent() const { return int(biased_exponent) - exponent_bias; }

    // top 7 fraction bits, the part the device's arithmetic actually sees
    std::uint8_t mantissa7() const { return std::uint8_t(mantissa_frac >> 16); }
    // 8-bit significand 1.f7 scaled by 128, in [128, 255]
    int significand8() const { return 128 + mantissa7(); }

    double value() const {
        if (is_zero()) return 0.0;
        double m = 1.0 + double(mantissa_frac) / double(1u << 23);
        double v = std::ldexp(m, unbiased_exponent());
        return sign ? -v : v;
    }

    static FloatRepr zero() { return FloatRepr{}; }

    static FloatRepr from_parts(int sgn, int unbiased_exp, std::uint32_t frac23) {
        int be = unbiased_exp + exponent_bias;
        if (be < 1 || be > 254)
            throw std::domain_error("FloatRepr exponent out of normal range: 2^" +
                                    std::to_string(unbiased_exp));
        if (frac23 >= (1u << 23))
            throw std::domain_error("FloatRepr mantissa wider than 23 bits");
        return FloatRepr{std::uint8_t(sgn ? 1 : 0), std::uint8_t(be), frac23};
    }

    // nearest normal encoding; zero maps to the canonical zero
    static FloatRepr from_double(double x) {
        if (x == 0.0) return zero();
        if (!std::isfinite(x))
            throw std::domain_error("FloatRepr does not represent NaN/Inf");
        int sgn = x < 0 ? 1 : 0;
        int e;
        double m = std::frexp(std::fabs(x), &e);  // m in [0.5, 1)
        m *= 2.0;
        e -= 1;
        auto frac = std::int64_t(std::llround((m - 1.0) * double(1u << 23)));
        if (frac == (1 << 23)) { frac = 0; ++e; }
        return from_parts(sgn, e, std::uint32_t(frac));
    }

    std::uint32_t bits() const {
        return (std::uint32_t(sign) << 31) | (std::uint32_t(biased_exponent) << 23) |
               mantissa_frac;
    }

    static FloatRepr from_bits(std::uint32_t b) {
        FloatRepr r{std::uint8_t(b >> 31), std::uint8_t((b >> 23) & 0xff),
                    b & ((1u << 23) - 1)};
        if (r.biased_exponent == 255)
            throw std::domain_error("NaN/Inf encoding rejected");
        if (r.biased_exponent == 0 && (r.mantissa_frac != 0 || r.sign != 0))
            throw std::domain_error("denormal/non-canonical zero encoding rejected");
        return r;
    }

    friend bool operator==(const FloatRepr& a, const FloatRepr& b) {
        return a.bits() == b.bits();
    }
};

// 7-bit weight/input mantissa, 1.m = 1 + frac7/128
struct Mantissa7 {
    std::uint8_t frac7 = 0;

    double value() const { return 1.0 + double(frac7) / 128.0; }
    int significand8() const { return 128 + frac7; }

    static Mantissa7 of(const FloatRepr& f) { return Mantissa7{f.mantissa7()}; }

    friend bool operator==(Mantissa7 a, Mantissa7 b) { return a.frac7 == b.frac7; }
};

// signed fixed-point value, raw / 2^frac_bits
struct FixedQ {
    std::int32_t raw = 0;
    int frac_bits = 0;

    double value() const { return std::ldexp(double(raw), -frac_bits); }

    friend bool operator==(const FixedQ& a, const FixedQ& b) {
        return a.raw == b.raw && a.frac_bits == b.frac_bits;
    }
};

}  // namespace nnleak
