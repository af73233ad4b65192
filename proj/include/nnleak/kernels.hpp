#pragma once

// Bit-exact emulation of the device's arithmetic kernels. Every kernel
// returns (value, cycle count); the cycle count reproduces the platform's
// input-dependent timing and is the only thing the attacker ever sees.
//
// Float arithmetic runs on 8-bit significands (1.f7): operands are truncated
// to their top 7 fraction bits and results are rounded to nearest-even at
// 7 fraction bits. Exponent overflow is a hard error, underflow flushes to
// the canonical zero.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "nnleak/cost_profile.hpp"
#include "nnleak/float_repr.hpp"

namespace nnleak {

template <class T>
struct KernelResult {
    T value;
    long cycles = 0;
};

enum class ReluClass { negative, zero, positive };

namespace detail {

// Right-shifting 8x8 shift-and-add multiply, the structure behind the
// float-mul timing: each set multiplier bit costs an add, carrying out of
// the 8-bit accumulator costs extra, and the result may need one
// normalization shift and one round-up at 7 fraction bits.
struct SigMul {
    int product = 0;       // exact 16-bit significand product
    int adds = 0;          // set bits of the multiplier
    int carries = 0;       // adds that carried out of 8 bits
    bool normalized = false;
    bool rounded_up = false;
    int sig8 = 0;          // rounded significand, 128..256 (256 = renormalize)
};

inline SigMul sig_mul(int a, int b) {
    SigMul r;
    int hi = 0, lo = 0;
    for (int j = 0; j < 8; ++j) {
        int carry = 0;
        if ((b >> j) & 1) {
            int t = hi + a;
            hi = t & 0xff;
            carry = t >> 8;
            ++r.adds;
            r.carries += carry;
        }
        lo = ((lo >> 1) | ((hi & 1) << 7)) & 0xff;
        hi = ((hi >> 1) | (carry << 7)) & 0xff;
    }
    r.product = (hi << 8) | lo;
    r.normalized = r.product >= (1 << 15);
    int shift = r.normalized ? 8 : 7;
    int q = r.product >> shift;
    int rem = r.product & ((1 << shift) - 1);
    int half = 1 << (shift - 1);
    if (rem > half || (rem == half && (q & 1))) {
        ++q;
        r.rounded_up = true;
    }
    r.sig8 = q;
    return r;
}

// round |m| (an integer significand with t = bit_length-1) to an 8-bit
// significand; returns {sig8 in [128,255], exponent adjustment}
inline std::pair<int, int> round_sig(std::int64_t m) {
    int t = 63 - __builtin_clzll(std::uint64_t(m));
    int q;
    if (t <= 7) {
        q = int(m << (7 - t));
    } else {
        int sh = t - 7;
        q = int(m >> sh);
        std::int64_t rem = m & ((std::int64_t(1) << sh) - 1);
        std::int64_t half = std::int64_t(1) << (sh - 1);
        if (rem > half || (rem == half && (q & 1))) ++q;
    }
    if (q == 256) { q = 128; ++t; }
    return {q, t};
}

inline FloatRepr make_result(int sgn, int unbiased_exp, int sig8) {
    int be = unbiased_exp + FloatRepr::exponent_bias;
    if (be > 254) throw std::domain_error("float kernel: exponent overflow");
    if (be < 1) return FloatRepr::zero();  // flush to zero on underflow
    return FloatRepr{std::uint8_t(sgn), std::uint8_t(be),
                     std::uint32_t(sig8 - 128) << 16};
}

}  // namespace detail

// cycles depend only on the two operands' 7-bit mantissas, never on
// exponents or signs; a zero operand times like significand 1.0
inline long float_mul_cycles(Mantissa7 a, Mantissa7 b, const CostProfile& p) {
    auto m = detail::sig_mul(a.significand8(), b.significand8());
    long c = p.fmul_base + long(m.adds) * p.fmul_add + long(m.carries) * p.fmul_carry;
    if (m.normalized) c += p.fmul_norm;
    if (m.rounded_up) c += p.fmul_round;
    return c;
}

inline KernelResult<FloatRepr> leaky_float_mul(const FloatRepr& a, const FloatRepr& b,
                                               const CostProfile& p) {
    long cycles = float_mul_cycles(Mantissa7::of(a), Mantissa7::of(b), p);
    if (a.is_zero() || b.is_zero()) return {FloatRepr::zero(), cycles};
    auto m = detail::sig_mul(a.significand8(), b.significand8());
    int e = a.unbiased_exponent() + b.unbiased_exponent() + (m.normalized ? 1 : 0);
    int sig = m.sig8;
    if (sig == 256) { sig = 128; ++e; }
    return {detail::make_result(a.sign ^ b.sign, e, sig), cycles};
}

inline KernelResult<FloatRepr> leaky_float_add(const FloatRepr& a, const FloatRepr& b,
                                               const CostProfile& p) {
    if (a.is_zero()) return {b, p.fadd_base};
    if (b.is_zero()) return {a, p.fadd_base};
    int gap = a.unbiased_exponent() - b.unbiased_exponent();
    if (gap < 0) gap = -gap;
    long cycles = p.fadd_base + long(p.fadd_shift) * std::min(gap, 25);
    if (gap > 9) {
        // the smaller operand is strictly below half an ulp of the larger,
        // even across a power-of-two boundary
        const FloatRepr& big = a.unbiased_exponent() > b.unbiased_exponent() ? a : b;
        return {detail::make_result(big.sign, big.unbiased_exponent(), big.significand8()),
                cycles};
    }
    int emin = std::min(a.unbiased_exponent(), b.unbiased_exponent());
    auto val = [&](const FloatRepr& f) {
        std::int64_t v = std::int64_t(f.significand8())
                         << (8 + f.unbiased_exponent() - emin);
        return f.sign ? -v : v;
    };
    std::int64_t s = val(a) + val(b);
    if (s == 0) return {FloatRepr::zero(), cycles};
    int sgn = s < 0 ? 1 : 0;
    auto [sig, t] = detail::round_sig(s < 0 ? -s : s);
    return {detail::make_result(sgn, emin - 15 + t, sig), cycles};
}

inline ReluClass float_relu_class(const FloatRepr& pa) {
    if (pa.is_zero()) return ReluClass::zero;
    return pa.sign ? ReluClass::negative : ReluClass::positive;
}

inline KernelResult<FloatRepr> leaky_float_relu(const FloatRepr& pa, const CostProfile& p) {
    switch (float_relu_class(pa)) {
        case ReluClass::positive: return {pa, p.frelu_pos};
        case ReluClass::zero: return {FloatRepr::zero(), p.frelu_zero};
        default: return {FloatRepr::zero(), p.frelu_neg};
    }
}

// exact conversion of an 8-bit unsigned integer; for ip >= 1 the loop count
// is 7 - floor(log2 ip), zero takes a dedicated short path
inline KernelResult<FloatRepr> leaky_int2float(int ip, const CostProfile& p) {
    if (ip < 0 || ip > 255) throw std::domain_error("int2float input out of 0..255");
    if (ip == 0)
        return {FloatRepr::zero(), p.i2f_constant_time ? p.i2f_base : p.i2f_zero};
    int e = 7;
    while ((ip >> e) == 0) --e;  // e = floor(log2 ip)
    int iters = 7 - e;
    long cycles = p.i2f_constant_time ? p.i2f_base : p.i2f_base + long(p.i2f_iter) * iters;
    std::uint32_t frac = (std::uint32_t(ip) << (23 - e)) & ((1u << 23) - 1);
    return {FloatRepr::from_parts(0, e, frac), cycles};
}

inline KernelResult<FixedQ> fixed_mac(FixedQ acc, FixedQ ip, FixedQ wt, const CostProfile& p) {
    std::int64_t r = std::int64_t(acc.raw) + std::int64_t(ip.raw) * wt.raw;
    if (r > ((std::int64_t(1) << 23) - 1) || r < -(std::int64_t(1) << 23))
        throw std::overflow_error("fixed accumulator overflow (24-bit)");
    return {FixedQ{std::int32_t(r), acc.frac_bits}, p.fxmac};
}

// two timing classes decided by pa > 0; zero shares the short class with
// negative inputs, matching the measured hardware
inline KernelResult<FixedQ> fixed_relu(FixedQ pa, const CostProfile& p) {
    if (pa.raw > 0) return {pa, p.fxrelu_pos};
    return {FixedQ{0, pa.frac_bits}, p.fxrelu_nonpos};
}

struct Div255Result {
    FixedQ value;                       // Q0.15, floor(ip * 2^15 / 255) / 2^15
    std::array<int, 16> bit_durations;  // per quotient bit
    std::array<std::uint8_t, 16> bits;  // op_0 . op_-1 ... op_-15
    long cycles = 0;                    // base + sum of durations
};

// restoring long division of ip by 255: the divisor is subtracted only when
// the quotient bit is 1, which costs the extra subtract step
inline Div255Result leaky_normalize_div255(int ip, const CostProfile& p) {
    if (ip < 0 || ip > 255) throw std::domain_error("normalize input out of 0..255");
    Div255Result r;
    int rem = ip;
    std::int32_t raw = 0;
    long total = p.div_base;
    for (int i = 0; i < 16; ++i) {
        int bit;
        if (i == 0) {
            bit = rem >= 255;
        } else {
            rem <<= 1;
            bit = rem >= 255;
        }
        if (bit) rem -= 255;
        raw = (raw << 1) | bit;
        r.bits[std::size_t(i)] = std::uint8_t(bit);
        int dur = p.div_hardware ? p.div_hw_cycles
                                 : p.div_cmp + (bit ? p.div_sub : 0);
        r.bit_durations[std::size_t(i)] = dur;
        total += dur;
    }
    r.value = FixedQ{raw, 15};
    r.cycles = total;
    return r;
}

inline KernelResult<std::int64_t> bnn_mac(std::int64_t acc, int ip, int wt,
                                          const CostProfile& p) {
    if (wt != 1 && wt != -1) throw std::domain_error("binary weight must be +/-1");
    long cycles = p.bnn_mac_base + (wt < 0 ? p.bnn_negate : 0);
    return {acc + std::int64_t(wt) * ip, cycles};
}

}  // namespace nnleak
