#include "doctest.h"

#include <sstream>

#include "fixtures.hpp"
#include "nnleak/oracle.hpp"

using namespace nnleak;

namespace {
const CostProfile kAtmega = CostProfile::atmega_like();

NetworkModel small_float_net(std::uint64_t seed) {
    RandomModelSpec spec;
    spec.dims = {6, 4, 3};
    spec.precision = Precision::float32;
    spec.seed = seed;
    return random_model(spec);
}
}  // namespace

TEST_CASE("leaky execution matches the reference evaluator bit-exactly") {
    std::mt19937_64 rng(11);
    for (auto prec : {Precision::float32, Precision::fixed, Precision::binary}) {
        RandomModelSpec spec;
        spec.dims = {6, 4, 3};
        spec.precision = prec;
        spec.seed = 21;
        NetworkModel m = random_model(spec);
        Oracle oracle(m, kAtmega);
        for (int t = 0; t < 50; ++t) {
            std::vector<int> input(6);
            for (auto& v : input) v = int(rng() % 256);
            auto run = oracle.run(input);
            auto ref = reference_forward(m, input);
            REQUIRE(run.outputs.size() == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(run.outputs[i] == ref[i]);
        }
    }
}

TEST_CASE("traces are deterministic without jitter") {
    Oracle oracle(small_float_net(3), kAtmega);
    std::vector<int> input = {1, 200, 0, 77, 255, 13};
    auto a = oracle.run(input);
    auto b = oracle.run(input);
    REQUIRE(a.trace.events.size() == b.trace.events.size());
    for (std::size_t i = 0; i < a.trace.events.size(); ++i)
        CHECK(a.trace.events[i].cycles == b.trace.events[i].cycles);
    CHECK(a.trace.total_cycles == b.trace.total_cycles);
}

TEST_CASE("event counts per neuron: MACs plus activation plus conversions") {
    NetworkModel m = small_float_net(5);
    Oracle oracle(m, kAtmega);
    auto r = oracle.run({10, 20, 30, 40, 50, 60});
    for (int q = 0; q < 4; ++q) {
        CHECK(r.trace.all(OpKind::int2float, 0, q).size() == 6);
        CHECK(r.trace.all(OpKind::mul, 0, q).size() == 6);
        CHECK(r.trace.all(OpKind::add, 0, q).size() == 6);
        CHECK(r.trace.all(OpKind::relu, 0, q).size() == 1);
    }
    for (int q = 0; q < 3; ++q) {
        CHECK(r.trace.all(OpKind::int2float, 1, q).empty());  // already float
        CHECK(r.trace.all(OpKind::mul, 1, q).size() == 4);
        CHECK(r.trace.all(OpKind::relu, 1, q).size() == 1);
    }
    // total is the sum of the event cycles
    double sum = 0;
    for (const auto& e : r.trace.events) sum += e.cycles;
    CHECK(r.trace.total_cycles == doctest::Approx(sum).epsilon(0));
}

TEST_CASE("worked fixed neuron: zero input leaves the bias") {
    Oracle oracle(fixtures::table2_neuron(), kAtmega);
    auto r = oracle.run(std::vector<int>(9, 0));
    // pa = 108, strictly positive class
    CHECK(r.trace.nth(OpKind::relu, 0, 0)->cycles == kAtmega.fxrelu_pos);
    CHECK(r.outputs[0] == 108.0);
}

TEST_CASE("division events carry the per-bit structure") {
    NetworkModel m = small_float_net(7);
    m.normalization = Normalization::div255;
    Oracle oracle(m, kAtmega);
    auto r = oracle.run({85, 0, 255, 1, 2, 3});
    auto bits = r.trace.all(OpKind::div_bit, -1, 0);
    REQUIRE(bits.size() == 16);
    // 85/255 = 1/3: pattern 0,0,1,0,1,...
    CHECK(bits[0]->sub_durations.size() == 1);
    CHECK(bits[1]->sub_durations.size() == 1);
    CHECK(bits[2]->sub_durations.size() == 2);
    CHECK(bits[3]->sub_durations.size() == 1);
    CHECK(bits[4]->sub_durations.size() == 2);
    // setup cost rides on the first bit event
    CHECK(bits[0]->cycles == kAtmega.div_cmp + kAtmega.div_base);
    // no int2float events: the normalized values enter as floats
    CHECK(r.trace.all(OpKind::int2float, 0, 0).empty());

    // hardware divider: one flat event per input
    Oracle rv(m, CostProfile::riscv_like());
    auto r2 = rv.run({85, 0, 255, 1, 2, 3});
    auto hw = r2.trace.all(OpKind::div_bit, -1, 0);
    REQUIRE(hw.size() == 1);
    CHECK(hw[0]->cycles == CostProfile::riscv_like().div_hw_cycles);
}

TEST_CASE("zero skipping replaces suppressed work with skip events") {
    NetworkModel m = small_float_net(9);
    m.zero_skipping = true;
    Oracle oracle(m, kAtmega);
    auto r = oracle.run({0, 0, 0, 0, 0, 0});
    CHECK(r.trace.all(OpKind::skip, 0, 0).size() == 6);
    CHECK(r.trace.all(OpKind::mul, 0, 0).empty());
    CHECK(r.trace.all(OpKind::int2float, 0, 0).empty());
    // functional output unchanged by skipping
    m.zero_skipping = false;
    Oracle plain(m, kAtmega);
    auto p = plain.run({0, 0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < p.outputs.size(); ++i) CHECK(p.outputs[i] == r.outputs[i]);
}

TEST_CASE("probe_layer reproduces run() layer events") {
    NetworkModel m = small_float_net(13);
    Oracle oracle(m, kAtmega);
    std::vector<int> input = {5, 130, 250, 9, 61, 0};
    auto full = oracle.run(input);

    // layer 0 probe on the raw inputs
    auto l0 = oracle.probe_layer(0, {5, 130, 250, 9, 61, 0});
    auto full_l0 = full.trace.all(OpKind::mul, 0);
    auto probe_l0 = l0.all(OpKind::mul, 0);
    REQUIRE(full_l0.size() == probe_l0.size());
    for (std::size_t i = 0; i < full_l0.size(); ++i)
        CHECK(full_l0[i]->cycles == probe_l0[i]->cycles);

    // layer 1 probe on the true prefix outputs
    auto acts = reference_activations(m, input);
    auto l1 = oracle.probe_layer(1, acts[1]);
    auto full_l1 = full.trace.all(OpKind::mul, 1);
    auto probe_l1 = l1.all(OpKind::mul, 1);
    REQUIRE(full_l1.size() == probe_l1.size());
    for (std::size_t i = 0; i < full_l1.size(); ++i)
        CHECK(full_l1[i]->cycles == probe_l1[i]->cycles);
    auto relu_full = full.trace.all(OpKind::relu, 1);
    auto relu_probe = l1.all(OpKind::relu, 1);
    for (std::size_t i = 0; i < relu_full.size(); ++i)
        CHECK(relu_full[i]->cycles == relu_probe[i]->cycles);

    CHECK_THROWS_AS(oracle.probe_layer(5, {1.0}), std::domain_error);
    CHECK_THROWS_AS(oracle.probe_layer(0, {256, 0, 0, 0, 0, 0}), std::domain_error);
    CHECK_THROWS_AS(oracle.probe_layer(1, {-1.0, 0, 0, 0}), std::domain_error);
}

TEST_CASE("crafted probes scale by the declared reference chain") {
    NetworkModel m = small_float_net(17);
    Oracle oracle(m, kAtmega);
    std::vector<std::vector<int>> chain = {{0, 1, 2, 0}};
    auto kappa = oracle.prefix_scale(1, chain);
    REQUIRE(kappa.size() == 4);
    for (int q = 0; q < 4; ++q)
        CHECK(kappa[std::size_t(q)] ==
              m.layers[0].wf_at(q, chain[0][std::size_t(q)]).unbiased_exponent());

    // the materialized probe has the intent's mantissa and a shifted exponent
    std::vector<Oracle::ProbePoint> pts(4);
    pts[0] = {200, 0};
    auto t = oracle.probe_layer_crafted(1, pts, chain);
    // timing of the first mul equals mul(200 * 2^kappa, w) = mul-mantissa(200, w)
    FloatRepr expect = FloatRepr::from_parts(0, 7 + kappa[0], (200u - 128) << 16);
    auto direct = leaky_float_mul(expect, m.layers[1].wf_at(0, 0), kAtmega);
    CHECK(t.nth(OpKind::mul, 1, 0, 0)->cycles == double(direct.cycles));
}

TEST_CASE("jitter averages toward the true cycle counts") {
    JitterConfig j;
    j.sigma = 2.0;
    j.repeats = 64;
    j.seed = 42;
    NetworkModel m = small_float_net(23);
    Oracle noisy(m, kAtmega, j);
    Oracle clean(m, kAtmega);
    std::vector<int> input = {9, 8, 7, 6, 5, 4};
    auto a = noisy.run(input);
    auto b = clean.run(input);
    REQUIRE(a.trace.events.size() == b.trace.events.size());
    for (std::size_t i = 0; i < a.trace.events.size(); ++i) {
        CHECK(a.trace.events[i].cycles ==
              doctest::Approx(b.trace.events[i].cycles).epsilon(0.05));
        // functional outputs never change
    }
    for (std::size_t i = 0; i < a.outputs.size(); ++i) CHECK(a.outputs[i] == b.outputs[i]);
    // same seed, same ordinal: identical noise
    Oracle noisy2(m, kAtmega, j);
    auto c = noisy2.run(input);
    for (std::size_t i = 0; i < a.trace.events.size(); ++i)
        CHECK(a.trace.events[i].cycles == c.trace.events[i].cycles);
}

TEST_CASE("query counting") {
    Oracle oracle(small_float_net(29), kAtmega);
    CHECK(oracle.query_count() == 0);
    oracle.run({1, 2, 3, 4, 5, 6});
    CHECK(oracle.query_count() == 1);
    oracle.probe_layer(0, {1, 2, 3, 4, 5, 6});
    CHECK(oracle.query_count() == 2);
    oracle.reset_query_count();
    CHECK(oracle.query_count() == 0);
}

TEST_CASE("trace CSV round-trip") {
    NetworkModel m = small_float_net(31);
    m.normalization = Normalization::div255;
    Oracle oracle(m, kAtmega);
    auto r = oracle.run({85, 170, 255, 0, 1, 128});
    std::ostringstream out;
    write_trace_csv(r.trace, out);
    std::istringstream in(out.str());
    TimingTrace back = read_trace_csv(in);
    REQUIRE(back.events.size() == r.trace.events.size());
    for (std::size_t i = 0; i < back.events.size(); ++i) {
        CHECK(back.events[i].kind == r.trace.events[i].kind);
        CHECK(back.events[i].layer == r.trace.events[i].layer);
        CHECK(back.events[i].neuron == r.trace.events[i].neuron);
        CHECK(back.events[i].cycles == r.trace.events[i].cycles);
        CHECK(back.events[i].sub_durations == r.trace.events[i].sub_durations);
    }
}
