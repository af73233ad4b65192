#include "doctest.h"

#include <cfenv>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "nnleak/kernels.hpp"

using namespace nnleak;

namespace {

const CostProfile kAtmega = CostProfile::atmega_like();

// independent rounding oracle: nearest 7-fraction-bit float, ties to even
double rne7(double x) {
    if (x == 0) return 0;
    int e;
    double m = std::frexp(std::fabs(x), &e);
    m *= 2;
    --e;
    double r = std::nearbyint(m * 128.0);  // default FE mode is ties-to-even
    if (r == 256) { r = 128; ++e; }
    return std::copysign(std::ldexp(r / 128.0, e), x);
}

FloatRepr fr(double x) { return FloatRepr::from_double(x); }

}  // namespace

TEST_CASE("float representation basics") {
    CHECK(fr(1.875).significand8() == 240);
    CHECK(fr(-0.25).unbiased_exponent() == -2);
    CHECK(fr(0.0).is_zero());
    CHECK(FloatRepr::from_bits(fr(3.25).bits()) == fr(3.25));
    CHECK_THROWS_AS(FloatRepr::from_bits(0x7f800000u), std::domain_error);  // Inf
    CHECK_THROWS_AS(FloatRepr::from_bits(0x7fc00000u), std::domain_error);  // NaN
    CHECK_THROWS_AS(FloatRepr::from_bits(0x00000001u), std::domain_error);  // denormal
    CHECK_THROWS_AS(FloatRepr::from_double(std::nan("")), std::domain_error);
    // truncation to the top 7 fraction bits
    CHECK(Mantissa7::of(fr(1.0390625)).frac7 == 5);
    CHECK(Mantissa7::of(fr(1.6702)).frac7 == 85);
}

TEST_CASE("float multiply value is correctly rounded at 7 fraction bits") {
    // exhaustive over significand pairs, sampled exponents
    for (int i = 0; i < 128; ++i)
        for (int w = 0; w < 128; w += 3) {
            FloatRepr a = FloatRepr::from_parts(0, -2, std::uint32_t(i) << 16);
            FloatRepr b = FloatRepr::from_parts(1, 3, std::uint32_t(w) << 16);
            auto r = leaky_float_mul(a, b, kAtmega);
            CHECK(r.value.value() == doctest::Approx(rne7(a.value() * b.value())).epsilon(0));
        }
    CHECK(leaky_float_mul(fr(1.5), fr(2.5), kAtmega).value.value() == 3.75);
    CHECK(leaky_float_mul(fr(0.0), fr(2.5), kAtmega).value.is_zero());
}

TEST_CASE("float multiply timing ignores exponents and signs") {
    const int exps[] = {-20, -3, 0, 7, 19};
    for (int i = 0; i < 128; i += 5)
        for (int w = 0; w < 128; w += 7) {
            long base = leaky_float_mul(FloatRepr::from_parts(0, 0, std::uint32_t(i) << 16),
                                        FloatRepr::from_parts(0, 0, std::uint32_t(w) << 16),
                                        kAtmega)
                            .cycles;
            for (int ea : exps)
                for (int eb : exps) {
                    auto r = leaky_float_mul(
                        FloatRepr::from_parts(1, ea, std::uint32_t(i) << 16),
                        FloatRepr::from_parts(0, eb, std::uint32_t(w) << 16), kAtmega);
                    CHECK(r.cycles == base);
                }
        }
}

TEST_CASE("mul timing table has pairwise distinct columns and rows") {
    for (const auto& prof : {CostProfile::atmega_like(), CostProfile::cortex_m0_like(),
                             CostProfile::riscv_like()}) {
        std::vector<std::vector<long>> t(128, std::vector<long>(128));
        for (int i = 0; i < 128; ++i)
            for (int w = 0; w < 128; ++w)
                t[std::size_t(i)][std::size_t(w)] =
                    float_mul_cycles(Mantissa7{std::uint8_t(i)}, Mantissa7{std::uint8_t(w)}, prof);
        std::set<std::vector<long>> rows(t.begin(), t.end());
        CHECK(rows.size() == 128);
        std::set<std::vector<long>> cols;
        for (int w = 0; w < 128; ++w) {
            std::vector<long> col(128);
            for (int i = 0; i < 128; ++i) col[std::size_t(i)] = t[std::size_t(i)][std::size_t(w)];
            cols.insert(col);
        }
        CHECK(cols.size() == 128);
    }
}

TEST_CASE("float add value and timing") {
    // exact example and zero fast path
    auto r = leaky_float_add(fr(1.0), fr(1.0), kAtmega);
    CHECK(r.value.value() == 2.0);
    r = leaky_float_add(FloatRepr::zero(), fr(-3.5), kAtmega);
    CHECK(r.value.value() == -3.5);
    CHECK(r.cycles == kAtmega.fadd_base);

    // alignment cost: base + gap * shift, capped at 25
    auto gap3 = leaky_float_add(fr(8.0), fr(1.0), kAtmega);
    CHECK(gap3.cycles == kAtmega.fadd_base + 3 * kAtmega.fadd_shift);
    auto far = leaky_float_add(FloatRepr::from_parts(0, 30, 0), fr(1.0), kAtmega);
    CHECK(far.cycles == kAtmega.fadd_base + 25 * kAtmega.fadd_shift);
    CHECK(far.value == FloatRepr::from_parts(0, 30, 0));

    // correctly rounded against the independent oracle
    std::mt19937_64 rng(7);
    for (int n = 0; n < 20000; ++n) {
        int ma = int(rng() % 128), mb = int(rng() % 128);
        int ea = int(rng() % 24) - 12, eb = int(rng() % 24) - 12;
        int sa = int(rng() % 2), sb = int(rng() % 2);
        FloatRepr a = FloatRepr::from_parts(sa, ea, std::uint32_t(ma) << 16);
        FloatRepr b = FloatRepr::from_parts(sb, eb, std::uint32_t(mb) << 16);
        auto sum = leaky_float_add(a, b, kAtmega);
        CHECK(sum.value.value() == doctest::Approx(rne7(a.value() + b.value())).epsilon(0));
    }
}

TEST_CASE("float ReLU classes") {
    CHECK(leaky_float_relu(fr(2.5), kAtmega).cycles == 68);
    CHECK(leaky_float_relu(FloatRepr::zero(), kAtmega).cycles == 56);
    auto r = leaky_float_relu(fr(-2.5), kAtmega);
    CHECK(r.cycles == 61);
    CHECK(r.value.is_zero());
}

TEST_CASE("int2float follows the conversion loop") {
    // 128 <= 200 <= 255 means zero loop iterations
    auto r = leaky_int2float(200, kAtmega);
    CHECK(r.cycles == kAtmega.i2f_base);
    CHECK(r.value.value() == 200.0);
    r = leaky_int2float(1, kAtmega);
    CHECK(r.cycles == kAtmega.i2f_base + 7 * kAtmega.i2f_iter);
    CHECK(r.value.value() == 1.0);
    r = leaky_int2float(0, kAtmega);
    CHECK(r.value.is_zero());
    CHECK(r.cycles == kAtmega.i2f_zero);

    // exact for the whole domain, nine pairwise distinct classes
    std::set<long> classes;
    long prev = -1;
    for (int ip = 0; ip <= 255; ++ip) {
        auto c = leaky_int2float(ip, kAtmega);
        CHECK(c.value.value() == double(ip));
        classes.insert(c.cycles);
        if (ip >= 1) {
            // nonzero cycles strictly decrease as the exponent grows
            if (prev >= 0) CHECK(c.cycles <= prev);
            prev = c.cycles;
        }
    }
    CHECK(classes.size() == 9);
}

TEST_CASE("fixed MAC") {
    auto r = fixed_mac(FixedQ{0, 0}, FixedQ{108, 0}, FixedQ{-1, 0}, kAtmega);
    CHECK(r.value.raw == -108);
    CHECK(fixed_mac(FixedQ{42, 0}, FixedQ{0, 0}, FixedQ{-7, 0}, kAtmega).value.raw == 42);
    // |108 + 200 * (-1)| = |-92|
    CHECK(fixed_mac(FixedQ{108, 0}, FixedQ{200, 0}, FixedQ{-1, 0}, kAtmega).value.raw == -92);
    CHECK_THROWS_AS(fixed_mac(FixedQ{(1 << 23) - 1, 0}, FixedQ{255, 0}, FixedQ{7, 0}, kAtmega),
                    std::overflow_error);
    // constant cycles
    CHECK(fixed_mac(FixedQ{0, 0}, FixedQ{1, 0}, FixedQ{1, 0}, kAtmega).cycles ==
          fixed_mac(FixedQ{999, 0}, FixedQ{255, 0}, FixedQ{-8, 0}, kAtmega).cycles);
}

TEST_CASE("fixed ReLU timing splits at pa > 0") {
    CHECK(fixed_relu(FixedQ{5, 0}, kAtmega).cycles == 10);
    CHECK(fixed_relu(FixedQ{-5, 0}, kAtmega).cycles == 7);
    CHECK(fixed_relu(FixedQ{-5, 0}, kAtmega).value.raw == 0);
    // zero shares the short class, as measured on the real parts; this is
    // what makes detected crossovers land exactly on the ceiling values
    CHECK(fixed_relu(FixedQ{0, 0}, kAtmega).cycles == 7);
    CHECK(fixed_relu(FixedQ{0, 0}, kAtmega).value.raw == 0);
}

TEST_CASE("restoring division by 255") {
    auto z = leaky_normalize_div255(0, kAtmega);
    for (int d : z.bit_durations) CHECK(d == kAtmega.div_cmp);
    CHECK(z.value.raw == 0);

    auto one = leaky_normalize_div255(255, kAtmega);
    CHECK(one.bits[0] == 1);
    for (int i = 1; i < 16; ++i) CHECK(one.bits[std::size_t(i)] == 0);
    CHECK(one.value.raw == 1 << 15);

    auto third = leaky_normalize_div255(85, kAtmega);  // 85/255 = 1/3
    CHECK(third.value.raw == 10922);                   // floor(2^15 / 3)
    CHECK(third.bits[0] == 0);
    CHECK(third.bits[1] == 0);
    CHECK(third.bits[2] == 1);
    CHECK(third.bits[3] == 0);
    CHECK(third.bits[4] == 1);

    // value matches the integer oracle and the bit pattern is injective
    std::set<std::int32_t> raws;
    for (int ip = 0; ip <= 255; ++ip) {
        auto r = leaky_normalize_div255(ip, kAtmega);
        CHECK(r.value.raw == std::int32_t((std::int64_t(ip) << 15) / 255));
        long dursum = 0;
        for (int d : r.bit_durations) dursum += d;
        CHECK(r.cycles == kAtmega.div_base + dursum);
        raws.insert(r.value.raw);
    }
    CHECK(raws.size() == 256);
}

TEST_CASE("binary MAC timing classes") {
    auto pos = bnn_mac(10, 42, 1, kAtmega);
    auto neg = bnn_mac(10, 42, -1, kAtmega);
    CHECK(pos.value == 52);
    CHECK(neg.value == -32);
    CHECK(neg.cycles == pos.cycles + kAtmega.bnn_negate);
    // a zero input still reveals the weight through timing
    CHECK(bnn_mac(7, 0, -1, kAtmega).value == 7);
    CHECK(bnn_mac(7, 0, -1, kAtmega).cycles == neg.cycles);
    CHECK_THROWS_AS(bnn_mac(0, 1, 2, kAtmega), std::domain_error);
}

TEST_CASE("kernels are deterministic") {
    for (int rep = 0; rep < 3; ++rep) {
        CHECK(leaky_float_mul(fr(1.34), fr(-0.77), kAtmega).cycles ==
              leaky_float_mul(fr(1.34), fr(-0.77), kAtmega).cycles);
        CHECK(leaky_normalize_div255(173, kAtmega).cycles ==
              leaky_normalize_div255(173, kAtmega).cycles);
    }
}
