#pragma once

// Executes inference on the leaky kernels and exposes the attacker-facing
// black box: chosen input -> per-operation timing trace. Functional outputs
// are bit-identical to the reference evaluator; only timing is interesting.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nnleak/network.hpp"

namespace nnleak {

enum class OpKind { mul, add, relu, int2float, div_bit, mac, skip };

inline const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::mul: return "mul";
        case OpKind::add: return "add";
        case OpKind::relu: return "relu";
        case OpKind::int2float: return "int2float";
        case OpKind::div_bit: return "div_bit";
        case OpKind::mac: return "mac";
        default: return "skip";
    }
}

struct OpEvent {
    int index = 0;
    OpKind kind = OpKind::mul;
    int layer = 0;    // -1 for the input-normalization stage
    int neuron = 0;   // for div_bit events: the input position
    double cycles = 0;
    std::vector<int> sub_durations;  // per-step durations (division bits)

    // duration used by SPA-style decoding: the step durations when present
    double duration() const {
        if (sub_durations.empty()) return cycles;
        long s = 0;
        for (int d : sub_durations) s += d;
        return double(s);
    }
};

struct TimingTrace {
    std::vector<OpEvent> events;
    double total_cycles = 0;

    void push(OpKind k, int layer, int neuron, double cycles,
              std::vector<int> sub = {}) {
        events.push_back({int(events.size()), k, layer, neuron, cycles, std::move(sub)});
        total_cycles += cycles;
    }

    // n-th event of a kind within (layer, neuron), in execution order
    const OpEvent* nth(OpKind k, int layer, int neuron, int n = 0) const {
        for (const OpEvent& e : events) {
            if (e.kind == k && e.layer == layer && e.neuron == neuron && n-- == 0) return &e;
        }
        return nullptr;
    }

    std::vector<const OpEvent*> all(OpKind k, int layer, int neuron = -1) const {
        std::vector<const OpEvent*> out;
        for (const OpEvent& e : events)
            if (e.kind == k && e.layer == layer && (neuron < 0 || e.neuron == neuron))
                out.push_back(&e);
        return out;
    }
};

struct JitterConfig {
    double sigma = 0;   // per-event integer Gaussian noise, cycles
    int repeats = 1;    // traces averaged per query
    std::uint64_t seed = 0;
};

inline void write_trace_csv(const TimingTrace& t, std::ostream& out) {
    out << "index,kind,layer,neuron,cycles,sub_durations\n";
    for (const OpEvent& e : t.events) {
        out << e.index << ',' << to_string(e.kind) << ',' << e.layer << ',' << e.neuron << ',';
        std::ostringstream c;
        c << e.cycles;
        out << c.str() << ',';
        for (std::size_t i = 0; i < e.sub_durations.size(); ++i)
            out << (i ? "|" : "") << e.sub_durations[i];
        out << '\n';
    }
}

inline void write_trace_csv(const TimingTrace& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    write_trace_csv(t, out);
}

inline TimingTrace read_trace_csv(std::istream& in) {
    TimingTrace t;
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,kind", 0) != 0)
        throw std::runtime_error("trace csv: missing header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() < 5)
            throw std::runtime_error("trace csv line " + std::to_string(lineno) + ": bad record");
        OpEvent e;
        e.index = std::stoi(fields[0]);
        const char* names[] = {"mul", "add", "relu", "int2float", "div_bit", "mac", "skip"};
        int ki = -1;
        for (int i = 0; i < 7; ++i)
            if (fields[1] == names[i]) ki = i;
        if (ki < 0) throw std::runtime_error("trace csv line " + std::to_string(lineno) +
                                             ": unknown kind " + fields[1]);
        e.kind = OpKind(ki);
        e.layer = std::stoi(fields[2]);
        e.neuron = std::stoi(fields[3]);
        e.cycles = std::stod(fields[4]);
        if (fields.size() > 5 && !fields[5].empty()) {
            std::istringstream ss(fields[5]);
            std::string d;
            while (std::getline(ss, d, '|')) e.sub_durations.push_back(std::stoi(d));
        }
        t.events.push_back(std::move(e));
        t.total_cycles += t.events.back().cycles;
    }
    return t;
}

inline TimingTrace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace: " + path);
    return read_trace_csv(in);
}

class Oracle {
  public:
    Oracle(NetworkModel model, CostProfile profile, JitterConfig jitter = {})
        : model_(std::move(model)), profile_(std::move(profile)), jitter_(jitter) {
        validate_model(model_);
        profile_.validate();
    }

    const NetworkModel& model() const { return model_; }
    const CostProfile& profile() const { return profile_; }
    long query_count() const { return queries_; }
    void reset_query_count() { queries_ = 0; }

    struct RunResult {
        std::vector<double> outputs;
        TimingTrace trace;
    };

    RunResult run(const std::vector<int>& input) {
        if (int(input.size()) != model_.input_width)
            throw std::domain_error("oracle: input width mismatch");
        for (int v : input)
            if (v < 0 || v > 255) throw std::domain_error("oracle: input values must be 0..255");
        Noise noise = begin_query();
        TimingTrace trace;
        LayerInput cur;
        if (model_.normalization == Normalization::div255) {
            cur.floats.resize(input.size());
            for (std::size_t i = 0; i < input.size(); ++i) {
                auto dv = leaky_normalize_div255(input[std::size_t(i)], profile_);
                emit_div(trace, noise, int(i), dv);
                cur.floats[i] = detail::div255_value(input[std::size_t(i)]);
            }
            cur.is_float = true;
        } else {
            cur.ints.assign(input.begin(), input.end());
        }
        std::vector<double> out;
        for (std::size_t l = 0; l < model_.layers.size(); ++l)
            out = forward_layer(trace, noise, int(l), cur);
        return {std::move(out), std::move(trace)};
    }

    // trace of a single layer on injected activations; layer 0 of an
    // unnormalized model takes raw 0..255 integers (as in a full run),
    // every other float layer takes device float values
    TimingTrace probe_layer(int layer, const std::vector<double>& activations) {
        const Layer& L = layer_at(layer);
        if (int(activations.size()) != L.in)
            throw std::domain_error("probe_layer: activation width mismatch");
        Noise noise = begin_query();
        TimingTrace trace;
        LayerInput cur = make_input(layer, activations);
        forward_layer(trace, noise, layer, cur);
        return trace;
    }

    // attack-facing probe for layers past the first: position i of the
    // intent vector is materialized as value * 2^(kappa_i + gain_i), where
    // kappa follows the declared per-neuron reference chain. This is the
    // activation an attacker sweeping through its recovered prefix would
    // impose on the device; the attacker never sees kappa itself.
    struct ProbePoint {
        int value = 0;  // 0..255
        int gain = 0;
    };

    TimingTrace probe_layer_crafted(int layer, const std::vector<ProbePoint>& intents,
                                    const std::vector<std::vector<int>>& ref_chain) {
        const Layer& L = layer_at(layer);
        if (layer < 1) throw std::domain_error("crafted probes address layers past the first");
        if (L.precision != Precision::float32)
            throw std::domain_error("crafted probes are for float layers");
        if (int(intents.size()) != L.in)
            throw std::domain_error("probe width mismatch");
        std::vector<int> kappa = prefix_scale(layer, ref_chain);
        Noise noise = begin_query();
        TimingTrace trace;
        LayerInput cur;
        cur.is_float = true;
        cur.floats.resize(intents.size());
        for (std::size_t i = 0; i < intents.size(); ++i) {
            const auto& pt = intents[i];
            if (pt.value < 0 || pt.value > 255)
                throw std::domain_error("probe values must be 0..255");
            if (pt.value == 0) continue;  // canonical zero
            int e = 7;
            while ((pt.value >> e) == 0) --e;
            std::uint32_t frac = (std::uint32_t(pt.value) << (23 - e)) & ((1u << 23) - 1);
            cur.floats[i] = FloatRepr::from_parts(0, e + kappa[i] + pt.gain, frac);
        }
        forward_layer(trace, noise, layer, cur);
        return trace;
    }

    // true accumulated scale exponents of a layer's inputs under the given
    // reference chain; exposed for harness-side verification only
    std::vector<int> prefix_scale(int layer, const std::vector<std::vector<int>>& ref_chain) const {
        ref_chain_check(layer, ref_chain);
        std::vector<int> kappa(std::size_t(model_.input_width), 0);
        for (int l = 0; l < layer; ++l) {
            const Layer& L = model_.layers[std::size_t(l)];
            const auto& refs = ref_chain[std::size_t(l)];
            if (int(refs.size()) != L.out)
                throw std::domain_error("reference chain layer width mismatch");
            std::vector<int> next(std::size_t(L.out));
            for (int q = 0; q < L.out; ++q) {
                int r = refs[std::size_t(q)];
                if (r < 0 || r >= L.in) throw std::domain_error("reference index out of range");
                const FloatRepr& w = L.wf_at(q, r);
                if (w.is_zero()) throw std::domain_error("reference weight is zero");
                next[std::size_t(q)] = kappa[std::size_t(r)] + w.unbiased_exponent();
            }
            kappa = std::move(next);
        }
        return kappa;
    }

  private:
    struct LayerInput {
        bool is_float = false;
        std::vector<FloatRepr> floats;
        std::vector<double> ints;
    };

    struct Noise {
        bool enabled = false;
        int repeats = 1;
        double sigma = 0;
        std::mt19937_64 rng;
    };

    const Layer& layer_at(int layer) const {
        if (layer < 0 || layer >= int(model_.layers.size()))
            throw std::domain_error("layer index out of range");
        return model_.layers[std::size_t(layer)];
    }

    void ref_chain_check(int layer, const std::vector<std::vector<int>>& rc) const {
        if (int(rc.size()) < layer)
            throw std::domain_error("reference chain shorter than probed depth");
    }

    Noise begin_query() {
        Noise n;
        std::uint64_t ordinal = std::uint64_t(queries_++);
        if (jitter_.sigma > 0) {
            n.enabled = true;
            n.repeats = std::max(1, jitter_.repeats);
            n.sigma = jitter_.sigma;
            std::uint64_t h = jitter_.seed * 0x9e3779b97f4a7c15ull + ordinal + 1;
            h ^= h >> 30; h *= 0xbf58476d1ce4e5b9ull;
            h ^= h >> 27; h *= 0x94d049bb133111ebull;
            h ^= h >> 31;
            n.rng.seed(h);
        }
        return n;
    }

    double observe(Noise& noise, long cycles) {
        if (!noise.enabled) return double(cycles);
        std::normal_distribution<double> d(0.0, noise.sigma);
        double sum = 0;
        for (int r = 0; r < noise.repeats; ++r) {
            double v = std::round(double(cycles) + d(noise.rng));
            sum += std::max(1.0, v);
        }
        return sum / noise.repeats;
    }

    void emit_div(TimingTrace& trace, Noise& noise, int input_index, const Div255Result& dv) {
        if (profile_.div_hardware) {
            trace.push(OpKind::div_bit, -1, input_index,
                       observe(noise, profile_.div_hw_cycles), {profile_.div_hw_cycles});
            return;
        }
        for (int i = 0; i < 16; ++i) {
            long cyc = dv.bit_durations[std::size_t(i)] + (i == 0 ? profile_.div_base : 0);
            std::vector<int> sub = {profile_.div_cmp};
            if (dv.bits[std::size_t(i)]) sub.push_back(profile_.div_sub);
            trace.push(OpKind::div_bit, -1, input_index, observe(noise, cyc), std::move(sub));
        }
    }

    LayerInput make_input(int layer, const std::vector<double>& activations) const {
        const Layer& L = layer_at(layer);
        LayerInput cur;
        bool int_domain = L.precision != Precision::float32 ||
                          (layer == 0 && model_.normalization == Normalization::none);
        if (int_domain) {
            cur.ints.resize(activations.size());
            for (std::size_t i = 0; i < activations.size(); ++i) {
                double v = activations[i];
                if (v < 0 || v > 255 || v != std::floor(v))
                    throw std::domain_error("activation out of the layer's 0..255 integer domain");
                cur.ints[i] = v;
            }
        } else {
            cur.is_float = true;
            cur.floats.resize(activations.size());
            for (std::size_t i = 0; i < activations.size(); ++i) {
                if (activations[i] < 0)
                    throw std::domain_error("float activations are ReLU outputs, must be >= 0");
                cur.floats[i] = FloatRepr::from_double(activations[i]);
                if (cur.floats[i].value() != activations[i])
                    throw std::domain_error("activation is not an exact device value");
            }
        }
        return cur;
    }

    // runs one layer, appends its events, replaces cur with its outputs
    std::vector<double> forward_layer(TimingTrace& trace, Noise& noise, int layer,
                                      LayerInput& cur) {
        const Layer& L = model_.layers[std::size_t(layer)];
        std::vector<double> out(std::size_t(L.out));
        LayerInput next;
        if (L.precision == Precision::float32) {
            next.is_float = true;
            next.floats.resize(std::size_t(L.out));
            bool from_ints = !cur.is_float;
            for (int q = 0; q < L.out; ++q) {
                FloatRepr acc = L.bf[std::size_t(q)];
                for (int i = 0; i < L.in; ++i) {
                    bool zero_in = from_ints ? cur.ints[std::size_t(i)] == 0
                                             : cur.floats[std::size_t(i)].is_zero();
                    if (model_.zero_skipping && zero_in) {
                        trace.push(OpKind::skip, layer, q, observe(noise, profile_.skip));
                        continue;
                    }
                    FloatRepr ip;
                    if (from_ints) {
                        auto conv = leaky_int2float(int(cur.ints[std::size_t(i)]), profile_);
                        trace.push(OpKind::int2float, layer, q, observe(noise, conv.cycles));
                        ip = conv.value;
                    } else {
                        ip = cur.floats[std::size_t(i)];
                    }
                    auto prod = leaky_float_mul(ip, L.wf_at(q, i), profile_);
                    trace.push(OpKind::mul, layer, q, observe(noise, prod.cycles));
                    auto sum = leaky_float_add(acc, prod.value, profile_);
                    trace.push(OpKind::add, layer, q, observe(noise, sum.cycles));
                    acc = sum.value;
                }
                FloatRepr o = acc;
                if (L.activation == Activation::relu) {
                    auto r = leaky_float_relu(acc, profile_);
                    trace.push(OpKind::relu, layer, q, observe(noise, r.cycles));
                    o = r.value;
                }
                next.floats[std::size_t(q)] = o;
                out[std::size_t(q)] = o.value();
            }
        } else {
            for (int q = 0; q < L.out; ++q) {
                std::int64_t acc = L.bi[std::size_t(q)];
                for (int i = 0; i < L.in; ++i) {
                    int ip = int(cur.ints[std::size_t(i)]);
                    if (model_.zero_skipping && ip == 0) {
                        trace.push(OpKind::skip, layer, q, observe(noise, profile_.skip));
                        continue;
                    }
                    if (L.precision == Precision::fixed) {
                        auto r = fixed_mac(FixedQ{std::int32_t(acc), 0}, FixedQ{ip, 0},
                                           FixedQ{L.wi_at(q, i), 0}, profile_);
                        trace.push(OpKind::mac, layer, q, observe(noise, r.cycles));
                        acc = r.value.raw;
                    } else {
                        auto r = bnn_mac(acc, ip, L.wi_at(q, i), profile_);
                        trace.push(OpKind::mac, layer, q, observe(noise, r.cycles));
                        acc = r.value;
                    }
                }
                std::int64_t o = acc;
                if (L.activation == Activation::relu) {
                    auto r = fixed_relu(FixedQ{std::int32_t(acc), 0}, profile_);
                    trace.push(OpKind::relu, layer, q, observe(noise, r.cycles));
                    o = r.value.raw;
                }
                out[std::size_t(q)] = double(o);
            }
        }
        // hand outputs to the next layer in its input domain
        if (layer + 1 < int(model_.layers.size())) {
            if (model_.layers[std::size_t(layer) + 1].precision != Precision::float32) {
                next.is_float = false;
                next.ints.resize(out.size());
                for (std::size_t i = 0; i < out.size(); ++i)
                    next.ints[i] = std::clamp(out[i], 0.0, 255.0);
            }
        }
        cur = std::move(next);
        return out;
    }

    NetworkModel model_;
    CostProfile profile_;
    JitterConfig jitter_;
    long queries_ = 0;
};

}  // namespace nnleak
