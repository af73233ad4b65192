#include "doctest.h"

#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "nnleak/attack_input.hpp"

using namespace nnleak;

namespace {

const CostProfile kAtmega = CostProfile::atmega_like();

// single-input layer fanning out to `neurons` weights; the weight-mantissa
// set is what the row matching has to work with
NetworkModel fanout_net(int neurons, std::uint64_t seed) {
    RandomModelSpec spec;
    spec.dims = {1, neurons};
    spec.precision = Precision::float32;
    spec.seed = seed;
    return random_model(spec);
}

std::vector<std::vector<Mantissa7>> mantissas_of(const NetworkModel& m) {
    const Layer& L = m.layers[0];
    std::vector<std::vector<Mantissa7>> wm(std::size_t(L.out),
                                           std::vector<Mantissa7>(std::size_t(L.in)));
    for (int q = 0; q < L.out; ++q)
        for (int i = 0; i < L.in; ++i) wm[std::size_t(q)][std::size_t(i)] = Mantissa7::of(L.wf_at(q, i));
    return wm;
}

// first seed whose weight-mantissa set leaves no two input rows tied
std::uint64_t clean_fanout_seed(int neurons, int min_distinct) {
    MantissaTimingTable t = build_mul_lut(kAtmega);
    for (std::uint64_t seed = 1; seed < 400; ++seed) {
        NetworkModel m = fanout_net(neurons, seed);
        std::vector<Mantissa7> ws;
        std::set<int> distinct;
        for (const FloatRepr& w : m.layers[0].wf) {
            ws.push_back(Mantissa7::of(w));
            distinct.insert(ws.back().frac7);
        }
        if (int(distinct.size()) < min_distinct) continue;
        if (restricted_row_collisions(t, ws) == 0) return seed;
    }
    FAIL("no collision-free weight set found");
    return 0;
}

}  // namespace

TEST_CASE("float path recovers every input value exactly") {
    std::uint64_t seed = clean_fanout_seed(32, 16);
    NetworkModel m = fanout_net(32, seed);
    Oracle oracle(m, kAtmega);
    MantissaTimingTable t = build_mul_lut(kAtmega);
    auto wm = mantissas_of(m);

    // spot-check the worked value first: 200 = 1.5625 * 2^7
    auto r200 = oracle.run({200});
    auto est = recover_input_float(r200.trace, wm, t, kAtmega);
    REQUIRE(est.positions.size() == 1);
    CHECK(est.positions[0].exact);
    CHECK(est.positions[0].value == 200);

    for (int ip = 0; ip <= 255; ++ip) {
        auto r = oracle.run({ip});
        auto e = recover_input_float(r.trace, wm, t, kAtmega);
        REQUIRE(e.positions[0].exact);
        CHECK(e.positions[0].value == ip);
    }
}

TEST_CASE("restricted row collisions are measured, not assumed") {
    MantissaTimingTable t = build_mul_lut(kAtmega);
    // the full table has no colliding rows
    std::vector<Mantissa7> all;
    for (int i = 0; i < 128; ++i) all.push_back(Mantissa7{std::uint8_t(i)});
    CHECK(restricted_row_collisions(t, all) == 0);
    // one column cannot separate 128 rows
    CHECK(restricted_row_collisions(t, {Mantissa7{17}}) > 0);
}

TEST_CASE("flat conversion channel degrades to candidate sets") {
    const CostProfile cortex = CostProfile::cortex_m0_like();
    std::uint64_t seed = clean_fanout_seed(32, 16);
    NetworkModel m = fanout_net(32, seed);
    Oracle oracle(m, cortex);
    MantissaTimingTable t = build_mul_lut(cortex);
    auto wm = mantissas_of(m);

    auto r = oracle.run({3});  // mantissa 1.5, exponent hidden
    auto est = recover_input_float(r.trace, wm, t, cortex);
    CHECK_FALSE(est.positions[0].exact);
    std::vector<int> expect = {3, 6, 12, 24, 48, 96, 192};
    CHECK(est.positions[0].candidates == expect);
}

TEST_CASE("division path decodes every value exactly") {
    RandomModelSpec spec;
    spec.dims = {4, 3};
    spec.precision = Precision::float32;
    spec.seed = 77;
    NetworkModel m = random_model(spec);
    m.normalization = Normalization::div255;
    Oracle oracle(m, kAtmega);

    auto full = oracle.run({255, 85, 0, 31});
    auto est = recover_input_div255(full.trace, kAtmega);
    REQUIRE(est.positions.size() == 4);
    CHECK(est.positions[0].value == 255);
    CHECK(est.positions[1].value == 85);
    CHECK(est.positions[2].value == 0);
    CHECK(est.positions[3].value == 31);

    for (int ip = 0; ip <= 255; ++ip) {
        auto r = oracle.run({ip, 255 - ip, ip / 2, 128});
        auto e = recover_input_div255(r.trace, kAtmega);
        REQUIRE(e.positions[0].exact);
        CHECK(e.positions[0].value == ip);
    }
}

TEST_CASE("hardware divider leaves nothing to decode") {
    RandomModelSpec spec;
    spec.dims = {4, 3};
    spec.precision = Precision::float32;
    spec.seed = 78;
    NetworkModel m = random_model(spec);
    m.normalization = Normalization::div255;
    Oracle oracle(m, CostProfile::riscv_like());
    auto r = oracle.run({85, 17, 200, 0});
    auto est = recover_input_div255(r.trace, CostProfile::riscv_like());
    for (const auto& p : est.positions) {
        CHECK_FALSE(p.exact);
        CHECK(p.candidates.size() == 256);
    }
}

TEST_CASE("sparsity mask from zero-skipping traces") {
    RandomModelSpec spec;
    spec.dims = {50, 4};
    spec.precision = Precision::fixed;
    spec.seed = 13;
    NetworkModel m = random_model(spec);
    m.zero_skipping = true;
    Oracle oracle(m, kAtmega);

    std::mt19937_64 rng(99);
    std::vector<int> sparse(50, 0);
    for (auto& v : sparse)
        if (rng() % 5 == 0) v = 1 + int(rng() % 255);  // about 80% zeros
    auto r = oracle.run(sparse);
    auto est = recover_sparsity_mask(r.trace);
    REQUIRE(est.positions.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(est.positions[i].flag_only);
        CHECK(est.positions[i].nonzero == (sparse[i] != 0));
    }

    // all-nonzero and all-zero edge cases
    std::vector<int> ones(50, 1);
    auto e1 = recover_sparsity_mask(oracle.run(ones).trace);
    for (const auto& p : e1.positions) CHECK(p.nonzero);
    std::vector<int> zeros(50, 0);
    auto e0 = recover_sparsity_mask(oracle.run(zeros).trace);
    for (const auto& p : e0.positions) CHECK_FALSE(p.nonzero);
}

TEST_CASE("inconsistent traces are rejected") {
    // a hand-built trace whose conversion class and multiplication timings
    // cannot belong to the same integer input
    MantissaTimingTable t = build_mul_lut(kAtmega);
    std::vector<std::vector<Mantissa7>> wm;
    for (int q = 0; q < 8; ++q) wm.push_back({Mantissa7{std::uint8_t(q * 13 + 3)}});
    TimingTrace trace;
    for (int q = 0; q < 8; ++q) {
        // conversion says exponent 0 (only ip = 1 is integral)...
        trace.push(OpKind::int2float, 0, q, kAtmega.i2f_base + 7 * kAtmega.i2f_iter);
        // ...but the multiplications time like mantissa 1.5
        trace.push(OpKind::mul, 0, q, double(t.at(64, wm[std::size_t(q)][0].frac7)));
        trace.push(OpKind::add, 0, q, kAtmega.fadd_base);
        trace.push(OpKind::relu, 0, q, kAtmega.frelu_pos);
    }
    CHECK_THROWS_AS(recover_input_float(trace, wm, t, kAtmega), std::domain_error);
}

TEST_CASE("estimate CSV and PGM emission") {
    InputEstimate est;
    est.method = InputEstimate::Method::div255;
    InputEstimate::Position a;
    a.exact = true;
    a.value = 85;
    InputEstimate::Position b;
    b.candidates = {3, 6, 12};
    est.positions = {a, b};
    std::ostringstream out;
    write_input_estimate_csv(est, out);
    CHECK(out.str() == "position,kind,value\n0,div255,85\n1,div255,3|6|12\n");

    InputEstimate::Position c;
    c.flag_only = true;
    c.nonzero = true;
    est.positions = {a, c};
    std::ostringstream pgm;
    write_input_pgm(est, 2, 1, pgm);
    CHECK(pgm.str() == "P2\n2 1\n255\n85 255\n");
}
