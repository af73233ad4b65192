#pragma once

// Constant-time countermeasures: layer weights renormalized against the
// layer's maximum exponent and stored as 24-bit sign/magnitude fixed point,
// a branch-free ReLU, a hardened executor built on those kernels, a timing
// leakage verifier, and the default-vs-hardened overhead report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nnleak/attack_fixed.hpp"
#include "nnleak/attack_float.hpp"
#include "nnleak/attack_input.hpp"
#include "nnleak/oracle.hpp"

namespace nnleak {

// ---------------------------------------------------------------------------
// normalized weight storage

struct NormalizedLayerWeights {
    struct Entry {
        std::int8_t sign = 0;      // 0 / 1
        std::uint32_t mag24 = 0;   // Q1.23 magnitude of 1.m * 2^(e - e_max)
    };
    int e_max = 0;
    std::vector<Entry> entries;    // row-major out x in
    int out = 0, in = 0;

    double dequantize(int o, int i) const {
        const Entry& e = entries[std::size_t(o) * in + i];
        double v = std::ldexp(double(e.mag24), e_max - 23);
        return e.sign ? -v : v;
    }

    // 3 bytes of magnitude per weight instead of a 4-byte float word
    std::size_t storage_bytes() const { return entries.size() * 3; }
};

inline NormalizedLayerWeights normalize_weights(const Layer& layer) {
    if (layer.precision != Precision::float32)
        throw std::domain_error("normalize_weights expects a float layer");
    NormalizedLayerWeights n;
    n.out = layer.out;
    n.in = layer.in;
    bool any = false;
    for (const FloatRepr& w : layer.wf)
        if (!w.is_zero()) {
            n.e_max = any ? std::max(n.e_max, w.unbiased_exponent()) : w.unbiased_exponent();
            any = true;
        }
    if (!any) n.e_max = 0;
    n.entries.reserve(layer.wf.size());
    for (const FloatRepr& w : layer.wf) {
        NormalizedLayerWeights::Entry e;
        if (!w.is_zero()) {
            e.sign = std::int8_t(w.sign);
            int shift = n.e_max - w.unbiased_exponent();
            std::uint64_t sig = (std::uint64_t(1) << 23) | w.mantissa_frac;  // Q1.23
            if (shift == 0) {
                e.mag24 = std::uint32_t(sig);
            } else if (shift < 40) {
                std::uint64_t half = std::uint64_t(1) << (shift - 1);
                std::uint64_t q = sig >> shift;
                std::uint64_t rem = sig & ((std::uint64_t(1) << shift) - 1);
                if (rem > half || (rem == half && (q & 1))) ++q;
                e.mag24 = std::uint32_t(q);
            }
        }
        n.entries.push_back(e);
    }
    return n;
}

// ---------------------------------------------------------------------------
// constant-time kernels

inline KernelResult<std::int64_t> ct_mul(std::int64_t a, std::int64_t b, const CostProfile& p) {
    return {a * b, p.ct_mul};
}

// integer multiply-accumulate over normalized operands; one cycle class for
// every operand value
inline KernelResult<std::int64_t> ct_mac(std::int64_t acc, std::int64_t ip_q, std::int64_t wt_q,
                                         const CostProfile& p) {
    std::int64_t prod = ip_q * wt_q;
    if ((acc > 0 && prod > (std::int64_t(1) << 62) - acc) ||
        (acc < 0 && prod < -(std::int64_t(1) << 62) - acc))
        throw std::overflow_error("ct_mac accumulator overflow");
    return {acc + prod, p.ct_mac};
}

// out = (~(pa >> (width-1))) & pa: the sign bit, arithmetically shifted
// across the word and inverted, masks negative inputs to zero branch-free
inline KernelResult<std::int64_t> ct_relu(std::int64_t pa, const CostProfile& p) {
    std::uint64_t mask = ~std::uint64_t(pa >> 63);
    return {std::int64_t(std::uint64_t(pa) & mask), p.ct_relu};
}

// ---------------------------------------------------------------------------
// division elimination

// folds the /255 normalization into the first layer's weights so the model
// takes raw 0..255 inputs and never divides
inline NetworkModel eliminate_normalization(const NetworkModel& m) {
    if (m.normalization != Normalization::div255)
        throw std::domain_error("model has no normalization to eliminate");
    NetworkModel out = m;
    out.normalization = Normalization::none;
    Layer& first = out.layers.front();
    for (FloatRepr& w : first.wf)
        if (!w.is_zero()) w = FloatRepr::from_double(w.value() / 255.0);
    return out;
}

// ---------------------------------------------------------------------------
// hardened executor

// runs a float network entirely on normalized fixed-point kernels; the trace
// it leaks has one cycle class per kernel regardless of the data
class HardenedExecutor {
  public:
    HardenedExecutor(NetworkModel model, CostProfile profile)
        : profile_(std::move(profile)) {
        if (model.normalization == Normalization::div255) model = eliminate_normalization(model);
        model_ = std::move(model);
        validate_model(model_);
        for (const Layer& L : model_.layers) {
            if (L.precision != Precision::float32)
                throw std::domain_error("the hardened executor covers float networks");
            weights_.push_back(normalize_weights(L));
        }
    }

    const NetworkModel& model() const { return model_; }

    struct RunResult {
        std::vector<double> outputs;
        TimingTrace trace;
    };

    RunResult run(const std::vector<int>& input) const {
        if (int(input.size()) != model_.input_width)
            throw std::domain_error("hardened executor: input width mismatch");
        TimingTrace trace;
        // activations as 24-bit quantities against a shared exponent
        std::vector<std::int64_t> act(input.size());
        for (std::size_t i = 0; i < input.size(); ++i) {
            if (input[i] < 0 || input[i] > 255)
                throw std::domain_error("input values must be 0..255");
            act[i] = input[i];
        }
        int act_exp = 0;  // activation value = q * 2^act_exp
        std::vector<double> out;
        for (std::size_t l = 0; l < model_.layers.size(); ++l) {
            const Layer& L = model_.layers[std::size_t(l)];
            const NormalizedLayerWeights& W = weights_[std::size_t(l)];
            int wt_exp = W.e_max - 23;  // weight value = mag * 2^wt_exp
            std::vector<std::int64_t> next(std::size_t(L.out));
            out.assign(std::size_t(L.out), 0.0);
            for (int q = 0; q < L.out; ++q) {
                // bias aligned into the accumulator scale
                double b = L.bf[std::size_t(q)].value();
                std::int64_t acc =
                    std::int64_t(std::llround(std::ldexp(b, -(act_exp + wt_exp))));
                for (int i = 0; i < L.in; ++i) {
                    const auto& e = W.entries[std::size_t(q) * L.in + i];
                    std::int64_t wq = e.sign ? -std::int64_t(e.mag24) : std::int64_t(e.mag24);
                    auto r = ct_mac(acc, act[std::size_t(i)], wq, profile_);
                    trace.push(OpKind::mac, int(l), q, double(r.cycles));
                    acc = r.value;
                }
                if (L.activation == Activation::relu) {
                    auto r = ct_relu(acc, profile_);
                    trace.push(OpKind::relu, int(l), q, double(r.cycles));
                    acc = r.value;
                }
                next[std::size_t(q)] = acc;
                out[std::size_t(q)] = std::ldexp(double(acc), act_exp + wt_exp);
            }
            // renormalize to 24-bit activations for the next layer
            std::int64_t peak = 0;
            for (std::int64_t v : next) peak = std::max(peak, v < 0 ? -v : v);
            int bits = peak ? 64 - __builtin_clzll(std::uint64_t(peak)) : 1;
            int shift = std::max(0, bits - 24);
            for (auto& v : next) v >>= shift;
            act = std::move(next);
            act_exp = act_exp + wt_exp + shift;
        }
        return {std::move(out), std::move(trace)};
    }

  private:
    NetworkModel model_;
    CostProfile profile_;
    std::vector<NormalizedLayerWeights> weights_;
};

// ---------------------------------------------------------------------------
// constant-time verification

struct LeakageReport {
    std::string kernel;
    long probes = 0;
    std::vector<long> classes;  // distinct cycle counts observed (capped)
    std::size_t class_count = 0;
    bool constant_time = false;
};

namespace detail {

template <class ProbeFn>
LeakageReport run_probes(const std::string& kernel, long count, ProbeFn&& fn) {
    LeakageReport rep;
    rep.kernel = kernel;
    rep.probes = count;
    std::set<long> classes;
    for (long i = 0; i < count; ++i) classes.insert(fn(i));
    rep.class_count = classes.size();
    for (long c : classes) {
        rep.classes.push_back(c);
        if (rep.classes.size() >= 16) break;
    }
    rep.constant_time = classes.size() == 1;
    return rep;
}

}  // namespace detail

// distinct-cycle-count sets per kernel over exhaustive or seeded probe sets;
// hardened kernels must collapse to a single class
inline LeakageReport verify_constant_time(const std::string& kernel, const CostProfile& p,
                                          std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    auto rnd_float = [&]() {
        std::uniform_int_distribution<int> m(0, 127), e(-8, 8), s(0, 1);
        return FloatRepr::from_parts(s(rng), e(rng), std::uint32_t(m(rng)) << 16);
    };
    if (kernel == "float-mul") {
        return detail::run_probes(kernel, 128 * 128, [&](long i) {
            return float_mul_cycles(Mantissa7{std::uint8_t(i / 128)},
                                    Mantissa7{std::uint8_t(i % 128)}, p);
        });
    }
    if (kernel == "float-add") {
        return detail::run_probes(kernel, 4096, [&](long) {
            return leaky_float_add(rnd_float(), rnd_float(), p).cycles;
        });
    }
    if (kernel == "float-relu") {
        return detail::run_probes(kernel, 4096, [&](long i) {
            FloatRepr v = i % 8 == 0 ? FloatRepr::zero() : rnd_float();
            return leaky_float_relu(v, p).cycles;
        });
    }
    if (kernel == "int2float") {
        return detail::run_probes(kernel, 256, [&](long i) {
            return leaky_int2float(int(i), p).cycles;
        });
    }
    if (kernel == "fixed-relu") {
        return detail::run_probes(kernel, 1 << 16, [&](long i) {
            return fixed_relu(FixedQ{std::int32_t(i) - 32768, 0}, p).cycles;
        });
    }
    if (kernel == "div255") {
        return detail::run_probes(kernel, 256, [&](long i) {
            return leaky_normalize_div255(int(i), p).cycles;
        });
    }
    if (kernel == "bnn-mac") {
        return detail::run_probes(kernel, 512, [&](long i) {
            return bnn_mac(0, int(i % 256), i < 256 ? 1 : -1, p).cycles;
        });
    }
    if (kernel == "zero-skip") {
        return detail::run_probes(kernel, 256, [&](long i) {
            return long(i == 0 ? p.skip : p.fxmac);
        });
    }
    if (kernel == "ct-mul") {
        return detail::run_probes(kernel, 10000, [&](long) {
            std::uniform_int_distribution<std::int64_t> d(-(1 << 30), 1 << 30);
            return ct_mul(d(rng), d(rng), p).cycles;
        });
    }
    if (kernel == "ct-mac") {
        return detail::run_probes(kernel, 10000, [&](long) {
            std::uniform_int_distribution<std::int64_t> d(-(std::int64_t(1) << 23),
                                                          std::int64_t(1) << 23);
            return ct_mac(d(rng), d(rng), d(rng), p).cycles;
        });
    }
    if (kernel == "ct-relu") {
        return detail::run_probes(kernel, (1 << 16) + 10000, [&](long i) {
            std::int64_t v;
            if (i < (1 << 16)) v = i - 32768;  // exhaustive 16-bit slice
            else {
                std::uniform_int_distribution<std::int64_t> d(INT64_MIN / 4, INT64_MAX / 4);
                v = d(rng);
            }
            return ct_relu(v, p).cycles;
        });
    }
    throw std::domain_error("unknown kernel id: " + kernel);
}

inline const std::vector<std::string>& default_leaky_kernels() {
    static const std::vector<std::string> k = {"float-mul", "float-add", "float-relu",
                                               "int2float", "fixed-relu", "div255",
                                               "bnn-mac", "zero-skip"};
    return k;
}

inline const std::vector<std::string>& hardened_kernels() {
    static const std::vector<std::string> k = {"ct-mul", "ct-mac", "ct-relu"};
    return k;
}

// ---------------------------------------------------------------------------
// attack resistance

struct ResistanceReport {
    double mantissa_hit_rate = 0;   // exact weight-mantissa recoveries
    int crossover_flips = 0;        // ReLU class changes seen in sweeps
    int div_events = 0;             // division events on the hardened path
    double sparsity_accuracy = 0;   // mask recovery accuracy
    double sparsity_prior = 0;      // accuracy of always answering "nonzero"
    bool all_defeated = false;
};

// rerun every attack channel against the hardened executor and verify each
// one comes back empty-handed
inline ResistanceReport attack_resistance_suite(const NetworkModel& model,
                                                const CostProfile& profile,
                                                std::uint64_t seed = 1) {
    HardenedExecutor exec(model, profile);
    const Layer& L0 = exec.model().layers.front();
    ResistanceReport rep;

    // mantissa recovery: observe "multiplication" timings over the probe set
    MantissaTimingTable lut = build_mul_lut(profile);
    int hits = 0, total = 0;
    {
        std::vector<std::vector<std::vector<double>>> obs(
            std::size_t(L0.out),
            std::vector<std::vector<double>>(std::size_t(L0.in), std::vector<double>(128)));
        for (int t = 128; t <= 255; ++t) {
            auto r = exec.run(std::vector<int>(std::size_t(L0.in), t));
            for (int q = 0; q < L0.out; ++q)
                for (int i = 0; i < L0.in; ++i) {
                    const OpEvent* e = r.trace.nth(OpKind::mac, 0, q, i);
                    obs[std::size_t(q)][std::size_t(i)][std::size_t(t - 128)] = e->cycles;
                }
        }
        for (int q = 0; q < L0.out; ++q)
            for (int i = 0; i < L0.in; ++i) {
                ++total;
                try {
                    auto m = recover_mantissa(obs[std::size_t(q)][std::size_t(i)], lut);
                    if (!m.ambiguous && m.mantissa == Mantissa7::of(L0.wf_at(q, i))) ++hits;
                } catch (const std::domain_error&) {
                    // no signal in the observation vector
                }
            }
    }
    rep.mantissa_hit_rate = total ? double(hits) / total : 0;

    // zero-crossover search: sweep the first input and watch for any ReLU
    // class change
    {
        std::vector<int> v(std::size_t(L0.in), 0);
        auto classify = [&](const TimingTrace& t, int q) {
            return t.nth(OpKind::relu, 0, q) ? t.nth(OpKind::relu, 0, q)->cycles : 0.0;
        };
        auto base = exec.run(v);
        for (int t = 1; t <= 255; ++t) {
            v[0] = t;
            auto r = exec.run(v);
            for (int q = 0; q < L0.out; ++q)
                if (classify(r.trace, q) != classify(base.trace, q)) ++rep.crossover_flips;
        }
    }

    // division decoding: the hardened pipeline folded the division away
    {
        auto r = exec.run(std::vector<int>(std::size_t(L0.in), 85));
        for (const OpEvent& e : r.trace.events)
            if (e.kind == OpKind::div_bit) ++rep.div_events;
    }

    // sparsity mask: with zero skipping disabled every slot is a full MAC
    {
        std::mt19937_64 rng(seed);
        std::vector<int> sparse(std::size_t(L0.in), 0);
        int nonzero = 0;
        for (auto& v : sparse)
            if (rng() % 5 == 0) { v = 1 + int(rng() % 255); ++nonzero; }
        auto r = exec.run(sparse);
        auto mask = recover_sparsity_mask(r.trace);
        int correct = 0;
        for (std::size_t i = 0; i < sparse.size(); ++i)
            if (mask.positions[i].nonzero == (sparse[i] != 0)) ++correct;
        rep.sparsity_accuracy = double(correct) / double(sparse.size());
        rep.sparsity_prior = double(nonzero) / double(sparse.size());
    }

    rep.all_defeated = rep.mantissa_hit_rate <= 2.0 / 128 && rep.crossover_flips == 0 &&
                       rep.div_events == 0 && rep.sparsity_accuracy <= rep.sparsity_prior + 1e-9;
    return rep;
}

// ---------------------------------------------------------------------------
// overhead report (default vs hardened)

struct OverheadRow {
    std::string metric;
    double base = 0;
    double hardened = 0;
};

inline std::vector<OverheadRow> overhead_report(const CostProfile& p, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::vector<OverheadRow> rows;

    double mul_avg = 0;
    for (int i = 0; i < 128; ++i)
        for (int w = 0; w < 128; ++w)
            mul_avg += double(float_mul_cycles(Mantissa7{std::uint8_t(i)},
                                               Mantissa7{std::uint8_t(w)}, p));
    mul_avg /= 128 * 128;
    rows.push_back({"multiplication cycles (avg)", mul_avg, double(p.ct_mul)});

    // 25-MAC ensemble, weights from (-1,1), inputs from (0,1)
    std::uniform_real_distribution<double> wd(-1.0, 1.0), id(0.0, 1.0);
    double mac_total = 0;
    FloatRepr acc = FloatRepr::zero();
    for (int i = 0; i < 25; ++i) {
        double w = wd(rng), x = id(rng);
        if (w == 0 || x == 0) { --i; continue; }
        auto prod = leaky_float_mul(FloatRepr::from_double(x), FloatRepr::from_double(w), p);
        auto sum = leaky_float_add(acc, prod.value, p);
        acc = sum.value;
        mac_total += double(prod.cycles + sum.cycles);
    }
    rows.push_back({"25 MAC op cycles", mac_total, 25.0 * p.ct_mac});

    rows.push_back({"weight storage ratio", 1.0, 0.75});
    rows.push_back({"float ReLU cycles (+/0/-)",
                    (p.frelu_pos + p.frelu_zero + p.frelu_neg) / 3.0, double(p.ct_relu)});
    rows.push_back({"fixed ReLU cycles (+/0/-)",
                    (p.fxrelu_pos + 2.0 * p.fxrelu_nonpos) / 3.0, double(p.ct_relu)});
    return rows;
}

inline void write_leakage_csv(const std::vector<LeakageReport>& reports, std::ostream& out) {
    out << "kernel,probes,classes,constant_time,class_values\n";
    for (const auto& r : reports) {
        out << r.kernel << ',' << r.probes << ',' << r.class_count << ','
            << (r.constant_time ? 1 : 0) << ',';
        for (std::size_t i = 0; i < r.classes.size(); ++i)
            out << (i ? "|" : "") << r.classes[i];
        if (r.class_count > r.classes.size()) out << "|...";
        out << '\n';
    }
}

}  // namespace nnleak
