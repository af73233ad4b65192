#pragma once

// Float model recovery from the timing oracle: weight mantissas via LUT
// correlation over the multiplication channel, signs / relative exponents /
// bias via zero-crossover rounds on the ReLU channel, extended layer-wise
// through crafted probes. Everything is recovered up to one unknown
// power-of-two scale per neuron.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "nnleak/correlate.hpp"
#include "nnleak/oracle.hpp"

namespace nnleak {

// ---------------------------------------------------------------------------
// mantissa timing table

struct MantissaTimingTable {
    // rows: input mantissa, columns: weight mantissa
    std::array<std::array<int, 128>, 128> cycles{};

    int at(int input_m7, int weight_m7) const {
        return cycles[std::size_t(input_m7)][std::size_t(weight_m7)];
    }
};

// one-time, model-independent pre-characterization of the platform
inline MantissaTimingTable build_mul_lut(const CostProfile& p) {
    MantissaTimingTable t;
    for (int i = 0; i < 128; ++i)
        for (int w = 0; w < 128; ++w)
            t.cycles[std::size_t(i)][std::size_t(w)] =
                int(float_mul_cycles(Mantissa7{std::uint8_t(i)}, Mantissa7{std::uint8_t(w)}, p));
    return t;
}

struct MantissaMatch {
    Mantissa7 mantissa{};
    double score = 0;
    bool ambiguous = false;
};

// observed: 128 multiplication timings for probe inputs 128..255 (which
// realize exactly the probe mantissa set with constant exponent 7)
inline MantissaMatch recover_mantissa(std::span<const double> observed,
                                      const MantissaTimingTable& table) {
    if (observed.size() != 128)
        throw std::invalid_argument("recover_mantissa expects 128 observations");
    auto m = argmax_correlation(observed, 128, [&](int w, std::size_t i) {
        return double(table.at(int(i), w));
    });
    if (m.degenerate)
        throw std::domain_error("observed timing vector carries no signal (undefined correlation)");
    return {Mantissa7{std::uint8_t(m.best)}, m.score, m.ambiguous};
}

// ---------------------------------------------------------------------------
// recovered parameter containers

enum class CrossoverRound { none = 0, round1 = 1, round2 = 2, round3 = 3 };

struct RecoveredWeightF {
    Mantissa7 mantissa{};
    int rel_exp = 0;          // e_k - e_ref
    int sign = 0;             // +1 / -1; 0 when magnitude is below resolution
    CrossoverRound round = CrossoverRound::none;
    int reading = 0;          // crossover input of the round that produced it
    int gain = 0;             // probe gain applied to this weight's sweeps
    double score = 0;         // mantissa correlation
    bool ambiguous = false;   // mantissa correlation tie
    bool zero_magnitude = false;
    bool unresolved = false;  // no round produced a reading

    double value() const {
        if (sign == 0) return 0.0;
        return sign * std::ldexp(mantissa.value(), rel_exp);
    }
};

struct RecoveredNeuronF {
    std::vector<RecoveredWeightF> weights;
    double bias = 0;          // same unknown unit as the weights
    int ref_index = -1;
    int sgn_b = 0;
    bool bias_degenerate = false;   // pre-activation is exactly zero at rest
    bool unrecoverable = false;     // no zero-crossover exists for any weight
};

struct RecoveredModelF {
    std::vector<std::vector<RecoveredNeuronF>> layers;
    std::vector<std::vector<int>> ref_chain;  // per layer, per neuron
    NetworkModel assembled;                   // executable recovered network
    long queries = 0;
};

// ---------------------------------------------------------------------------
// probing

namespace detail {

inline ReluClass classify_float_relu(double cycles, const CostProfile& p) {
    double dp = std::abs(cycles - p.frelu_pos);
    double dz = std::abs(cycles - p.frelu_zero);
    double dn = std::abs(cycles - p.frelu_neg);
    if (dp <= dz && dp <= dn) return ReluClass::positive;
    if (dz <= dn) return ReluClass::zero;
    return ReluClass::negative;
}

// issues probes against one float layer, through run() for the input layer
// and through crafted probes (attacker units) for deeper ones
class FloatLayerProbe {
  public:
    FloatLayerProbe(Oracle& oracle, int layer, std::vector<std::vector<int>> ref_chain)
        : oracle_(oracle), layer_(layer), ref_chain_(std::move(ref_chain)),
          deep_(layer > 0) {
        const Layer& L = oracle.model().layers[std::size_t(layer)];
        fan_in_ = L.in;
        fan_out_ = L.out;
    }

    int fan_in() const { return fan_in_; }
    int fan_out() const { return fan_out_; }
    bool deep() const { return deep_; }

    int layer() const { return layer_; }

    TimingTrace probe(const std::vector<Oracle::ProbePoint>& pts) {
        if (!deep_) {
            std::vector<int> input(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (pts[i].gain != 0)
                    throw std::domain_error("the input layer only accepts raw 8-bit values");
                input[i] = pts[i].value;
            }
            return oracle_.run(input).trace;
        }
        return oracle_.probe_layer_crafted(layer_, pts, ref_chain_);
    }

    std::vector<ReluClass> relu_classes(const std::vector<Oracle::ProbePoint>& pts) {
        TimingTrace t = probe(pts);
        std::vector<ReluClass> out(std::size_t(fan_out_));
        for (int q = 0; q < fan_out_; ++q) {
            const OpEvent* e = t.nth(OpKind::relu, layer_, q);
            if (!e) throw std::domain_error("probed layer has no ReLU events");
            out[std::size_t(q)] = classify_float_relu(e->cycles, oracle_.profile());
        }
        return out;
    }

  private:
    Oracle& oracle_;
    int layer_;
    std::vector<std::vector<int>> ref_chain_;
    bool deep_;
    int fan_in_ = 0, fan_out_ = 0;
};

inline int ilog2_floor(int v) {
    int e = 0;
    while ((v >> (e + 1)) != 0) ++e;
    return e;
}

}  // namespace detail

struct FloatAttackOptions {
    // only the input layer is pinned to the 8-bit grid; deeper sweeps may
    // rescale their probes within these gain bounds
    int min_gain = -24;
    int max_gain = 24;
    int ref_band_lo = 32;   // preferred zero-crossover band for the reference
    int ref_band_hi = 192;
};

// ---------------------------------------------------------------------------
// per-layer recovery

namespace detail {

struct SweepResult {
    std::optional<int> flip;     // first probe value whose class differs
    ReluClass initial = ReluClass::zero;
};

class FloatNeuronAttack {
  public:
    FloatNeuronAttack(FloatLayerProbe& probe, const FloatAttackOptions& opt)
        : probe_(probe), opt_(opt) {}

    std::vector<RecoveredNeuronF> recover_layer(const MantissaTimingTable& lut) {
        int n = probe_.fan_in();
        int m = probe_.fan_out();
        std::vector<RecoveredNeuronF> neurons(std::size_t(m));
        for (auto& nr : neurons) nr.weights.resize(std::size_t(n));

        // Step I: mantissas, one probe per input mantissa serves every weight
        std::vector<std::vector<std::vector<double>>> obs(
            std::size_t(m), std::vector<std::vector<double>>(std::size_t(n), std::vector<double>(128)));
        for (int t = 128; t <= 255; ++t) {
            std::vector<Oracle::ProbePoint> pts(std::size_t(n), Oracle::ProbePoint{t, 0});
            TimingTrace tr = probe_.probe(pts);
            for (int q = 0; q < m; ++q)
                for (int i = 0; i < n; ++i) {
                    const OpEvent* e = tr.nth(OpKind::mul, probe_.layer(), q, i);
                    obs[std::size_t(q)][std::size_t(i)][std::size_t(t - 128)] = e ? e->cycles : 0;
                }
        }
        for (int q = 0; q < m; ++q)
            for (int i = 0; i < n; ++i) {
                auto match = recover_mantissa(obs[std::size_t(q)][std::size_t(i)], lut);
                auto& w = neurons[std::size_t(q)].weights[std::size_t(i)];
                w.mantissa = match.mantissa;
                w.score = match.score;
                w.ambiguous = match.ambiguous;
            }

        // sign of the bias from the all-zero probe
        auto base_classes = probe_.relu_classes(zeros(n));
        for (int q = 0; q < m; ++q) {
            auto& nr = neurons[std::size_t(q)];
            if (base_classes[std::size_t(q)] == ReluClass::zero) {
                nr.bias_degenerate = true;
                nr.sgn_b = 0;
            } else {
                nr.sgn_b = base_classes[std::size_t(q)] == ReluClass::positive ? 1 : -1;
            }
        }

        // Step II: first round of zero-crossovers, shared across neurons
        std::vector<std::vector<std::optional<int>>> r1(std::size_t(m),
                                                        std::vector<std::optional<int>>(std::size_t(n)));
        std::vector<std::vector<int>> g1(std::size_t(m), std::vector<int>(std::size_t(n), 0));
        for (int k = 0; k < n; ++k) {
            auto flips = sweep_all(k, 0);
            for (int q = 0; q < m; ++q) r1[std::size_t(q)][std::size_t(k)] = flips[std::size_t(q)];
        }
        if (probe_.deep()) {
            for (int q = 0; q < m; ++q)
                for (int k = 0; k < n; ++k)
                    adapt_round1(q, k, r1[std::size_t(q)][std::size_t(k)], g1[std::size_t(q)][std::size_t(k)]);
        }

        for (int q = 0; q < m; ++q)
            recover_neuron(neurons[std::size_t(q)], q, r1[std::size_t(q)], g1[std::size_t(q)]);
        return neurons;
    }

  private:
    std::vector<Oracle::ProbePoint> zeros(int n) {
        return std::vector<Oracle::ProbePoint>(std::size_t(n), Oracle::ProbePoint{0, 0});
    }

    // sweep position k upward from 0; flips per neuron, against the class at 0
    std::vector<std::optional<int>> sweep_all(int k, int gain) {
        int m = probe_.fan_out();
        auto pts = zeros(probe_.fan_in());
        pts[std::size_t(k)] = {0, gain};
        std::vector<ReluClass> init = probe_.relu_classes(pts);
        std::vector<std::optional<int>> flips(std::size_t(m));
        int remaining = m;
        for (int t = 1; t <= 255 && remaining > 0; ++t) {
            pts[std::size_t(k)] = {t, gain};
            auto cls = probe_.relu_classes(pts);
            for (int q = 0; q < m; ++q)
                if (!flips[std::size_t(q)] && cls[std::size_t(q)] != init[std::size_t(q)]) {
                    flips[std::size_t(q)] = t;
                    --remaining;
                }
        }
        return flips;
    }

    // sweep position `sweep_pos` with one other position held fixed,
    // watching a single neuron
    SweepResult sweep_one(int q, int sweep_pos, int sweep_gain, int fixed_pos, int fixed_val,
                          int fixed_gain) {
        auto pts = zeros(probe_.fan_in());
        if (fixed_pos >= 0) pts[std::size_t(fixed_pos)] = {fixed_val, fixed_gain};
        pts[std::size_t(sweep_pos)] = {0, sweep_gain};
        SweepResult r;
        r.initial = probe_.relu_classes(pts)[std::size_t(q)];
        for (int t = 1; t <= 255; ++t) {
            pts[std::size_t(sweep_pos)] = {t, sweep_gain};
            if (probe_.relu_classes(pts)[std::size_t(q)] != r.initial) {
                r.flip = t;
                return r;
            }
        }
        return r;
    }

    bool gain_feasible(int k, int gain) {
        auto pts = zeros(probe_.fan_in());
        pts[std::size_t(k)] = {255, gain};
        try {
            probe_.probe(pts);
            return true;
        } catch (const std::domain_error&) {
            return false;
        }
    }

    // deeper layers may rescale a sweep to move its crossover into a
    // well-conditioned band; the input layer has no such freedom
    void adapt_round1(int q, int k, std::optional<int>& flip, int& gain) {
        for (int step = 0; !flip && gain + 3 <= opt_.max_gain; ++step) {
            if (!gain_feasible(k, gain + 3)) break;
            gain += 3;
            flip = sweep_one(q, k, gain, -1, 0, 0).flip;
        }
        while (flip && *flip < 64 && gain - 1 >= opt_.min_gain) {
            int dec = std::max(1, 7 - detail::ilog2_floor(std::max(1, *flip)) - 1);
            int ng = std::max(opt_.min_gain, gain - dec);
            if (!gain_feasible(k, ng)) break;
            auto f = sweep_one(q, k, ng, -1, 0, 0).flip;
            if (!f) break;  // overshot the grid, keep the last good reading
            flip = f;
            gain = ng;
        }
    }

    void recover_neuron(RecoveredNeuronF& nr, int q, std::vector<std::optional<int>>& r1,
                        std::vector<int>& g1) {
        int n = probe_.fan_in();
        if (nr.bias_degenerate) {
            for (auto& w : nr.weights) w.unresolved = true;
            return;
        }
        for (int k = 0; k < n; ++k)
            if (r1[std::size_t(k)]) {
                auto& w = nr.weights[std::size_t(k)];
                w.round = CrossoverRound::round1;
                w.reading = *r1[std::size_t(k)];
                w.gain = g1[std::size_t(k)];
            }

        // reference: first weight whose crossover sits in the preferred band,
        // otherwise the first with any first-round crossover
        int ref = -1;
        for (int k = 0; k < n && ref < 0; ++k)
            if (r1[std::size_t(k)] && *r1[std::size_t(k)] >= opt_.ref_band_lo &&
                *r1[std::size_t(k)] <= opt_.ref_band_hi)
                ref = k;
        for (int k = 0; k < n && ref < 0; ++k)
            if (r1[std::size_t(k)]) ref = k;
        if (ref < 0) {
            nr.unrecoverable = true;
            for (auto& w : nr.weights) w.unresolved = true;
            return;
        }
        nr.ref_index = ref;
        int r_ref = *r1[std::size_t(ref)];
        int g_ref = g1[std::size_t(ref)];
        double m_ref = nr.weights[std::size_t(ref)].mantissa.value();

        // second round: remaining weights share the bias sign
        std::vector<std::optional<int>> r2(std::size_t(n));
        std::vector<int> g2(std::size_t(n), 0);
        if (r_ref < 255) {
            for (int k = 0; k < n; ++k) {
                if (r1[std::size_t(k)] || k == ref) continue;
                std::optional<int> flip = sweep_one(q, k, 0, ref, 255, g_ref).flip;
                int gain = 0;
                if (probe_.deep()) adapt_round2(q, k, ref, g_ref, flip, gain);
                if (flip) {
                    r2[std::size_t(k)] = flip;
                    g2[std::size_t(k)] = gain;
                }
            }
        }

        // third round: sweep the reference input against a full-scale ballast
        std::vector<std::optional<int>> r3(std::size_t(n));
        std::vector<int> g3(std::size_t(n), 0);
        for (int k = 0; k < n; ++k) {
            if (r1[std::size_t(k)] || r2[std::size_t(k)] || k == ref) continue;
            auto [flip, gain] = round3_reading(q, k, ref, g_ref, r_ref);
            r3[std::size_t(k)] = flip;
            g3[std::size_t(k)] = gain;
        }

        // solve signs and relative exponents
        for (int k = 0; k < n; ++k) {
            auto& w = nr.weights[std::size_t(k)];
            if (k == ref) {
                w.rel_exp = 0;
                w.sign = -nr.sgn_b;
                continue;
            }
            if (r1[std::size_t(k)]) {
                w.sign = -nr.sgn_b;
                w.rel_exp = round_log2((m_ref / w.mantissa.value()) *
                                       (double(r_ref) * pow2(g_ref)) /
                                       (double(w.reading) * pow2(w.gain)));
            } else if (r2[std::size_t(k)]) {
                w.round = CrossoverRound::round2;
                w.reading = *r2[std::size_t(k)];
                w.gain = g2[std::size_t(k)];
                w.sign = nr.sgn_b;
                w.rel_exp = round_log2((m_ref / w.mantissa.value()) *
                                       (double(255 - r_ref) * pow2(g_ref)) /
                                       (double(w.reading) * pow2(w.gain)));
            } else if (r3[std::size_t(k)]) {
                w.round = CrossoverRound::round3;
                w.reading = *r3[std::size_t(k)];
                w.gain = g3[std::size_t(k)];
                if (w.reading == r_ref) {
                    w.zero_magnitude = true;
                    w.sign = 0;
                    continue;
                }
                w.sign = (w.reading > r_ref ? 1 : -1) * nr.sgn_b;
                w.rel_exp = round_log2((m_ref / w.mantissa.value()) *
                                       (double(std::abs(w.reading - r_ref)) * pow2(g_ref)) /
                                       (255.0 * pow2(w.gain)));
            } else {
                w.unresolved = true;
            }
        }

        // bias from the widest well-conditioned first-round crossover
        int anchor = ref;
        for (int k = 0; k < n; ++k)
            if (r1[std::size_t(k)] && *r1[std::size_t(k)] <= 250 &&
                *r1[std::size_t(k)] > *r1[std::size_t(anchor)])
                anchor = k;
        const auto& aw = nr.weights[std::size_t(anchor)];
        nr.bias = nr.sgn_b * aw.mantissa.value() * std::ldexp(double(aw.reading), aw.rel_exp + aw.gain);
    }

    void adapt_round2(int q, int k, int ref, int g_ref, std::optional<int>& flip, int& gain) {
        for (; !flip && gain + 3 <= opt_.max_gain;) {
            if (!gain_feasible(k, gain + 3)) break;
            gain += 3;
            flip = sweep_one(q, k, gain, ref, 255, g_ref).flip;
        }
        while (flip && *flip < 64 && gain - 1 >= opt_.min_gain) {
            int dec = std::max(1, 7 - detail::ilog2_floor(std::max(1, *flip)) - 1);
            int ng = std::max(opt_.min_gain, gain - dec);
            if (!gain_feasible(k, ng)) break;
            auto f = sweep_one(q, k, ng, ref, 255, g_ref).flip;
            if (!f) break;
            flip = f;
            gain = ng;
        }
    }

    // ballast the target weight at full scale and sweep the reference input;
    // on deep layers grow the ballast until the shift is well-conditioned
    std::pair<std::optional<int>, int> round3_reading(int q, int k, int ref, int g_ref, int r_ref) {
        int gain = 0;
        auto sweep = [&](int g) { return sweep_one(q, ref, g_ref, k, 255, g).flip; };
        std::optional<int> flip = sweep(gain);
        while (!flip && gain - 1 >= opt_.min_gain) {
            --gain;
            if (!gain_feasible(k, gain)) return {std::nullopt, gain};
            flip = sweep(gain);
        }
        if (!probe_.deep()) return {flip, gain};
        while (flip && std::abs(*flip - r_ref) < 32 && gain + 1 <= opt_.max_gain) {
            if (!gain_feasible(k, gain + 1)) break;
            auto f = sweep(gain + 1);
            if (!f) break;  // larger ballast killed the crossover, keep last
            flip = f;
            ++gain;
        }
        return {flip, gain};
    }

    static double pow2(int e) { return std::ldexp(1.0, e); }

    static int round_log2(double ratio) {
        return int(std::lround(std::log2(ratio)));
    }

    FloatLayerProbe& probe_;
    const FloatAttackOptions& opt_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// whole-model recovery

inline std::vector<RecoveredNeuronF> recover_float_layer(Oracle& oracle, int layer,
                                                         const MantissaTimingTable& lut,
                                                         const std::vector<std::vector<int>>& ref_chain,
                                                         const FloatAttackOptions& opt = {}) {
    detail::FloatLayerProbe probe(oracle, layer, ref_chain);
    detail::FloatNeuronAttack attack(probe, opt);
    return attack.recover_layer(lut);
}

inline RecoveredModelF recover_float_model(Oracle& oracle, const FloatAttackOptions& opt = {}) {
    const NetworkModel& m = oracle.model();
    if (m.normalization != Normalization::none)
        throw std::domain_error("model recovery expects raw integer inputs");
    RecoveredModelF out;
    out.assembled.input_width = m.input_width;
    MantissaTimingTable lut = build_mul_lut(oracle.profile());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& L = m.layers[l];
        if (L.precision != Precision::float32)
            throw std::domain_error("recover_float_model needs a float network");
        if (L.activation != Activation::relu)
            break;  // no timing channel through the final comparison
        auto neurons = recover_float_layer(oracle, int(l), lut, out.ref_chain, opt);

        Layer rec;
        rec.precision = Precision::float32;
        rec.activation = L.activation;
        rec.in = L.in;
        rec.out = L.out;
        std::vector<int> refs(std::size_t(L.out), 0);
        for (int q = 0; q < L.out; ++q) {
            const auto& nr = neurons[std::size_t(q)];
            refs[std::size_t(q)] = nr.ref_index >= 0 ? nr.ref_index : 0;
            for (int i = 0; i < L.in; ++i) {
                double v = nr.weights[std::size_t(i)].value();
                rec.wf.push_back(FloatRepr::from_double(v));
            }
            rec.bf.push_back(FloatRepr::from_double(nr.bias));
        }
        out.assembled.layers.push_back(std::move(rec));
        out.ref_chain.push_back(std::move(refs));
        out.layers.push_back(std::move(neurons));
    }
    out.queries = oracle.query_count();
    return out;
}

// side report: one row per weight with round, reading and match quality
inline void write_float_report(const RecoveredModelF& r, std::ostream& out) {
    out << "layer,neuron,weight,mantissa,rel_exp,sign,round,reading,gain,score,flags\n";
    for (std::size_t l = 0; l < r.layers.size(); ++l)
        for (std::size_t q = 0; q < r.layers[l].size(); ++q) {
            const auto& nr = r.layers[l][q];
            for (std::size_t k = 0; k < nr.weights.size(); ++k) {
                const auto& w = nr.weights[k];
                out << l << ',' << q << ',' << k << ',' << w.mantissa.value() << ','
                    << w.rel_exp << ',' << w.sign << ',' << int(w.round) << ',' << w.reading
                    << ',' << w.gain << ',' << w.score << ',';
                if (w.zero_magnitude) out << "zero-magnitude";
                else if (w.unresolved) out << "unresolved";
                else if (w.ambiguous) out << "ambiguous";
                out << '\n';
            }
        }
}

}  // namespace nnleak
