#pragma once

// Fixed-point model recovery via the ceil(-b/wt) crossover table and binary
// network recovery via MAC timing classes plus a unit-step bias walk.
//
// The fixed ReLU exposes two timing classes split at pa > 0, so a crossover
// observed while descending through zero (bias positive, weight negative)
// lands exactly on ceil(|b|/|wt|), while one observed climbing through zero
// is first seen one step later when |b| divides the weight. Readings are
// therefore matched with the direction-appropriate function and reported in
// their canonical ceiling form.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "nnleak/oracle.hpp"

namespace nnleak {

// ---------------------------------------------------------------------------
// crossover lookup table

struct CrossoverLUT {
    // I[b][w] = ceil(b/w) for |b| in 1..128, |w| in 1..8
    int at(int b, int w) const {
        if (b < 1 || b > 128 || w < 1 || w > 8)
            throw std::domain_error("CrossoverLUT domain is b in 1..128, w in 1..8");
        return (b + w - 1) / w;
    }
};

inline CrossoverLUT build_crossover_lut() { return CrossoverLUT{}; }

namespace detail {

// first sweep value with pa <= 0 when descending through zero
inline int first_nonpos(int b_mag, int w_mag) { return (b_mag + w_mag - 1) / w_mag; }
// first sweep value with pa > 0 when climbing through zero
inline int first_pos(int b_mag, int w_mag) { return b_mag / w_mag + 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// recovered parameter containers

enum class FixedRound { none = 0, round1 = 1, round2 = 2, variant = 3 };

struct RecoveredWeightQ {
    int value = 0;                // signed weight; valid when resolved
    std::vector<int> candidates;  // signed candidates when not yet resolved
    bool resolved = true;
    FixedRound round = FixedRound::none;
    int reading = 0;              // canonical ceil crossover of its round
};

struct RecoveredNeuronQ {
    std::vector<RecoveredWeightQ> weights;
    int bias = 0;
    std::vector<int> bias_candidates;  // |b| candidates when ambiguous
    int sgn_b = 0;
    bool unrecoverable = false;
    std::vector<std::string> log;      // disambiguation steps taken
};

struct RecoveredModelQ {
    std::vector<std::vector<RecoveredNeuronQ>> layers;
    NetworkModel assembled;
    long queries = 0;
};

struct FixedAttackOptions {
    // probe point for the second round; negative means pick automatically
    // (the feasible point of largest shifted-bias magnitude)
    int ref_index = -1;
    int ip_ref = -1;
    long budget_factor = 10;  // times the exhaustive single-sweep cost
};

// ---------------------------------------------------------------------------
// probing

namespace detail {

class IntLayerProbe {
  public:
    IntLayerProbe(Oracle& oracle, int layer) : oracle_(oracle), layer_(layer) {
        const Layer& L = oracle.model().layers[std::size_t(layer)];
        fan_in_ = L.in;
        fan_out_ = L.out;
        precision_ = L.precision;
    }

    int fan_in() const { return fan_in_; }
    int fan_out() const { return fan_out_; }
    int layer() const { return layer_; }
    Precision precision() const { return precision_; }

    TimingTrace probe(const std::vector<int>& v) {
        if (layer_ == 0) return oracle_.run(v).trace;
        std::vector<double> acts(v.begin(), v.end());
        return oracle_.probe_layer(layer_, acts);
    }

    // true when the neuron's pre-activation is strictly positive
    std::vector<bool> relu_positive(const std::vector<int>& v) {
        TimingTrace t = probe(v);
        const CostProfile& p = oracle_.profile();
        std::vector<bool> out(std::size_t(fan_out_));
        for (int q = 0; q < fan_out_; ++q) {
            const OpEvent* e = t.nth(OpKind::relu, layer_, q);
            if (!e) throw std::domain_error("probed layer has no ReLU events");
            out[std::size_t(q)] = std::abs(e->cycles - p.fxrelu_pos) <
                                  std::abs(e->cycles - p.fxrelu_nonpos);
        }
        return out;
    }

    // binary MAC timing class per (neuron, input); true = negated (wt = -1)
    std::vector<std::vector<bool>> mac_negated(const std::vector<int>& v) {
        TimingTrace t = probe(v);
        const CostProfile& p = oracle_.profile();
        double long_class = p.bnn_mac_base + p.bnn_negate;
        std::vector<std::vector<bool>> out(std::size_t(fan_out_),
                                           std::vector<bool>(std::size_t(fan_in_)));
        for (int q = 0; q < fan_out_; ++q)
            for (int i = 0; i < fan_in_; ++i) {
                const OpEvent* e = t.nth(OpKind::mac, layer_, q, i);
                if (!e) throw std::domain_error("missing MAC event");
                out[std::size_t(q)][std::size_t(i)] =
                    std::abs(e->cycles - long_class) < std::abs(e->cycles - p.bnn_mac_base);
            }
        return out;
    }

  private:
    Oracle& oracle_;
    int layer_;
    int fan_in_ = 0, fan_out_ = 0;
    Precision precision_ = Precision::fixed;
};

struct RawCrossover {
    std::optional<int> flip;
    bool from_above = false;  // initial class was positive
};

}  // namespace detail

// first-round crossover of one input as the raw timing observation: the
// first sweep value whose ReLU class differs from the all-zeros probe, plus
// the crossing direction (descending sweeps read the ceiling directly,
// ascending ones overshoot it by one exactly on divisible pairs)
struct DetectedCrossover {
    std::optional<int> flip;
    bool from_above = false;
};

inline DetectedCrossover detect_crossover_round1(Oracle& oracle, int layer, int neuron, int k) {
    detail::IntLayerProbe probe(oracle, layer);
    std::vector<int> v(std::size_t(probe.fan_in()), 0);
    DetectedCrossover r;
    r.from_above = probe.relu_positive(v)[std::size_t(neuron)];
    for (int t = 1; t <= 255; ++t) {
        v[std::size_t(k)] = t;
        if (probe.relu_positive(v)[std::size_t(neuron)] != r.from_above) {
            r.flip = t;
            return r;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// fixed-point recovery

namespace detail {

class FixedNeuronAttack {
  public:
    FixedNeuronAttack(IntLayerProbe& probe, const FixedAttackOptions& opt)
        : probe_(probe), opt_(opt),
          budget_(opt.budget_factor * probe.fan_in() * 256) {}

    std::vector<RecoveredNeuronQ> recover_layer() {
        int n = probe_.fan_in();
        int m = probe_.fan_out();
        std::vector<RecoveredNeuronQ> neurons(std::size_t(m));
        for (auto& nr : neurons) nr.weights.resize(std::size_t(n));

        auto base = probe_.relu_positive(std::vector<int>(std::size_t(n), 0));
        for (int q = 0; q < m; ++q)
            neurons[std::size_t(q)].sgn_b = base[std::size_t(q)] ? 1 : -1;

        // round 1, shared sweep per input
        std::vector<std::vector<RawCrossover>> r1(std::size_t(m),
                                                  std::vector<RawCrossover>(std::size_t(n)));
        for (int k = 0; k < n; ++k) {
            auto flips = sweep_all(k, -1, 0);
            for (int q = 0; q < m; ++q) r1[std::size_t(q)][std::size_t(k)] = flips[std::size_t(q)];
        }
        for (int q = 0; q < m; ++q) recover_neuron(neurons[std::size_t(q)], q, r1[std::size_t(q)]);
        return neurons;
    }

  private:
    std::vector<RawCrossover> sweep_all(int k, int fixed_pos, int fixed_val) {
        int m = probe_.fan_out();
        std::vector<int> v(std::size_t(probe_.fan_in()), 0);
        if (fixed_pos >= 0) v[std::size_t(fixed_pos)] = fixed_val;
        auto init = probe_.relu_positive(v);
        std::vector<RawCrossover> out(std::size_t(m));
        for (int q = 0; q < m; ++q) out[std::size_t(q)].from_above = init[std::size_t(q)];
        int remaining = m;
        for (int t = 1; t <= 255 && remaining > 0; ++t) {
            v[std::size_t(k)] = t;
            spend(1);
            auto cls = probe_.relu_positive(v);
            for (int q = 0; q < m; ++q)
                if (!out[std::size_t(q)].flip && cls[std::size_t(q)] != init[std::size_t(q)]) {
                    out[std::size_t(q)].flip = t;
                    --remaining;
                }
        }
        return out;
    }

    RawCrossover sweep_one(int q, int k, int fixed_pos, int fixed_val) {
        std::vector<int> v(std::size_t(probe_.fan_in()), 0);
        if (fixed_pos >= 0) v[std::size_t(fixed_pos)] = fixed_val;
        RawCrossover r;
        r.from_above = probe_.relu_positive(v)[std::size_t(q)];
        for (int t = 1; t <= 255; ++t) {
            v[std::size_t(k)] = t;
            spend(1);
            if (probe_.relu_positive(v)[std::size_t(q)] != r.from_above) {
                r.flip = t;
                return r;
            }
        }
        return r;
    }

    // weight-magnitude candidates for a raw reading against |b_eff|
    static std::vector<int> match_rows(int b_mag, int raw, bool from_above) {
        std::vector<int> rows;
        for (int w = 1; w <= 8; ++w) {
            int expect = from_above ? first_nonpos(b_mag, w) : first_pos(b_mag, w);
            if (expect == raw) rows.push_back(w);
        }
        return rows;
    }

    void recover_neuron(RecoveredNeuronQ& nr, int q, const std::vector<RawCrossover>& r1) {
        int n = probe_.fan_in();
        std::vector<int> readings;
        for (int k = 0; k < n; ++k)
            if (r1[std::size_t(k)].flip) readings.push_back(*r1[std::size_t(k)].flip);
        if (readings.empty()) {
            // nothing opposes the bias strongly enough; weights of the bias
            // sign may still flip in round 2 once a reference is known, but
            // without a first-round reading the bias column is unknowable
            nr.unrecoverable = true;
            for (auto& w : nr.weights) w.resolved = false;
            return;
        }
        bool above = nr.sgn_b > 0;  // positive bias is crossed from above

        // locate the |b| column consistent with every reading
        std::vector<int> bias_cands;
        for (int b = 1; b <= 128; ++b) {
            bool all = true;
            for (int r : readings)
                if (match_rows(b, r, above).empty()) { all = false; break; }
            if (all) bias_cands.push_back(b);
        }
        if (bias_cands.empty())
            throw std::domain_error("inconsistent oracle: no bias column contains all crossovers");
        if (bias_cands.size() > 1) bias_cands = shrink_bias_candidates(nr, q, r1, bias_cands);
        nr.bias_candidates = bias_cands;
        if (bias_cands.size() > 1) {
            nr.log.push_back("bias ambiguous among " + std::to_string(bias_cands.size()) +
                             " columns");
            for (auto& w : nr.weights) w.resolved = false;
            return;
        }
        int b_mag = bias_cands.front();
        nr.bias = nr.sgn_b * b_mag;

        // round 1 weights: opposite sign to the bias
        for (int k = 0; k < n; ++k) {
            if (!r1[std::size_t(k)].flip) continue;
            auto& w = nr.weights[std::size_t(k)];
            int raw = *r1[std::size_t(k)].flip;
            auto rows = match_rows(b_mag, raw, above);
            w.round = FixedRound::round1;
            if (rows.size() == 1) {
                w.value = -nr.sgn_b * rows[0];
                w.reading = (b_mag + rows[0] - 1) / rows[0];
            } else {
                w.resolved = false;
                for (int r : rows) w.candidates.push_back(-nr.sgn_b * r);
            }
        }

        // round 2: weights sharing the bias sign, behind a shifted bias
        int ref = opt_.ref_index;
        if (ref < 0)
            for (int k = 0; k < n && ref < 0; ++k)
                if (nr.weights[std::size_t(k)].round == FixedRound::round1 &&
                    nr.weights[std::size_t(k)].resolved)
                    ref = k;
        if (ref >= 0 && nr.weights[std::size_t(ref)].resolved &&
            nr.weights[std::size_t(ref)].round == FixedRound::round1) {
            int wt_ref = nr.weights[std::size_t(ref)].value;
            int ip_ref = opt_.ip_ref;
            if (ip_ref < 0) ip_ref = pick_ip_ref(nr.bias, wt_ref);
            if (ip_ref >= 0) {
                int b_shift = nr.bias + ip_ref * wt_ref;
                if (b_shift != 0 && (b_shift > 0) != (nr.bias > 0) && std::abs(b_shift) <= 128) {
                    nr.log.push_back("round2 ref=" + std::to_string(ref) +
                                     " ip_ref=" + std::to_string(ip_ref) +
                                     " b'=" + std::to_string(b_shift));
                    for (int k = 0; k < n; ++k) {
                        auto& w = nr.weights[std::size_t(k)];
                        if (k == ref || w.round != FixedRound::none) continue;
                        auto res = sweep_one(q, k, ref, ip_ref);
                        if (!res.flip) continue;
                        auto rows = match_rows(std::abs(b_shift), *res.flip, res.from_above);
                        w.round = FixedRound::round2;
                        if (rows.size() == 1) {
                            w.value = nr.sgn_b * rows[0];
                            w.reading = (std::abs(b_shift) + rows[0] - 1) / rows[0];
                        } else {
                            w.resolved = false;
                            for (int r : rows) w.candidates.push_back(nr.sgn_b * r);
                        }
                    }
                }
            }
        }

        // anything that never flipped in any round is a zero weight
        for (auto& w : nr.weights)
            if (w.round == FixedRound::none && w.resolved) w.value = 0;

        disambiguate(nr, q, ref);
    }

    // feasible probe point maximizing the shifted-bias magnitude
    int pick_ip_ref(int bias, int wt_ref) const {
        int best = -1, best_mag = 0;
        for (int ip = 0; ip <= 255; ++ip) {
            int b2 = bias + ip * wt_ref;
            if (b2 == 0 || (b2 > 0) == (bias > 0) || std::abs(b2) > 128) continue;
            if (std::abs(b2) > best_mag) { best_mag = std::abs(b2); best = ip; }
        }
        return best;
    }

    // variant crossovers: shift the bias through the reference input until
    // the candidate weights predict different crossover points
    void disambiguate(RecoveredNeuronQ& nr, int q, int ref) {
        if (ref < 0 || !nr.weights[std::size_t(ref)].resolved) return;
        int wt_ref = nr.weights[std::size_t(ref)].value;
        for (std::size_t k = 0; k < nr.weights.size(); ++k) {
            auto& w = nr.weights[k];
            if (w.resolved || w.candidates.empty()) continue;
            for (int ip_m = 0; ip_m <= 255 && !w.resolved; ++ip_m) {
                if (budget_ <= 0) break;
                int b2 = nr.bias + ip_m * wt_ref;
                if (b2 == 0 || std::abs(b2) > 128) continue;
                // candidates share a sign; the shifted bias must oppose it
                if ((b2 > 0) == (w.candidates.front() > 0)) continue;
                bool above = b2 > 0;
                std::set<int> predictions;
                for (int c : w.candidates)
                    predictions.insert(above ? first_nonpos(std::abs(b2), std::abs(c))
                                             : first_pos(std::abs(b2), std::abs(c)));
                if (predictions.size() < 2) continue;
                auto res = sweep_one(int(q), int(k), ref, ip_m);
                if (!res.flip) continue;
                std::vector<int> kept;
                for (int c : w.candidates) {
                    int expect = above ? first_nonpos(std::abs(b2), std::abs(c))
                                       : first_pos(std::abs(b2), std::abs(c));
                    if (expect == *res.flip) kept.push_back(c);
                }
                nr.log.push_back("variant probe ip_m=" + std::to_string(ip_m) + " on weight " +
                                 std::to_string(k) + " kept " + std::to_string(kept.size()));
                if (kept.size() == 1) {
                    w.value = kept[0];
                    w.resolved = true;
                    w.round = FixedRound::variant;
                    w.reading = (std::abs(b2) + std::abs(kept[0]) - 1) / std::abs(kept[0]);
                } else if (!kept.empty()) {
                    w.candidates = kept;
                }
            }
        }
    }

    // joint probe over tied inputs narrows an ambiguous bias column
    std::vector<int> shrink_bias_candidates(RecoveredNeuronQ& nr, int q,
                                            const std::vector<RawCrossover>& r1,
                                            std::vector<int> cands) {
        int n = probe_.fan_in();
        bool above = nr.sgn_b > 0;
        for (int k1 = 0; k1 < n && cands.size() > 1; ++k1) {
            if (!r1[std::size_t(k1)].flip) continue;
            for (int k2 = k1 + 1; k2 < n && cands.size() > 1; ++k2) {
                if (!r1[std::size_t(k2)].flip || budget_ <= 0) continue;
                auto tied = sweep_tied(q, k1, k2);
                if (!tied.flip) continue;
                std::vector<int> kept;
                for (int b : cands) {
                    auto rows1 = match_rows(b, *r1[std::size_t(k1)].flip, above);
                    auto rows2 = match_rows(b, *r1[std::size_t(k2)].flip, above);
                    bool ok = false;
                    for (int w1 : rows1)
                        for (int w2 : rows2) {
                            int ws = w1 + w2;
                            int expect = above ? first_nonpos(b, ws) : first_pos(b, ws);
                            if (expect == *tied.flip) ok = true;
                        }
                    if (ok) kept.push_back(b);
                }
                nr.log.push_back("tied probe (" + std::to_string(k1) + "," + std::to_string(k2) +
                                 ") kept " + std::to_string(kept.size()) + " bias columns");
                if (!kept.empty()) cands = kept;
            }
        }
        return cands;
    }

    RawCrossover sweep_tied(int q, int k1, int k2) {
        std::vector<int> v(std::size_t(probe_.fan_in()), 0);
        RawCrossover r;
        r.from_above = probe_.relu_positive(v)[std::size_t(q)];
        for (int t = 1; t <= 255; ++t) {
            v[std::size_t(k1)] = t;
            v[std::size_t(k2)] = t;
            spend(1);
            if (probe_.relu_positive(v)[std::size_t(q)] != r.from_above) {
                r.flip = t;
                return r;
            }
        }
        return r;
    }

    void spend(long probes) { budget_ -= probes; }

    IntLayerProbe& probe_;
    const FixedAttackOptions& opt_;
    long budget_;
};

}  // namespace detail

inline std::vector<RecoveredNeuronQ> recover_fixed_layer(Oracle& oracle, int layer,
                                                         const FixedAttackOptions& opt = {}) {
    detail::IntLayerProbe probe(oracle, layer);
    if (probe.precision() != Precision::fixed)
        throw std::domain_error("recover_fixed_layer needs a fixed-point layer");
    detail::FixedNeuronAttack attack(probe, opt);
    return attack.recover_layer();
}

inline RecoveredModelQ recover_fixed_model(Oracle& oracle, const FixedAttackOptions& opt = {}) {
    const NetworkModel& m = oracle.model();
    RecoveredModelQ out;
    out.assembled.input_width = m.input_width;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& L = m.layers[l];
        if (L.activation != Activation::relu) break;
        auto neurons = recover_fixed_layer(oracle, int(l), opt);
        Layer rec;
        rec.precision = Precision::fixed;
        rec.activation = L.activation;
        rec.in = L.in;
        rec.out = L.out;
        for (int q = 0; q < L.out; ++q) {
            const auto& nr = neurons[std::size_t(q)];
            for (int i = 0; i < L.in; ++i)
                rec.wi.push_back(nr.weights[std::size_t(i)].resolved
                                     ? nr.weights[std::size_t(i)].value
                                     : 0);
            rec.bi.push_back(nr.bias);
        }
        out.assembled.layers.push_back(std::move(rec));
        out.layers.push_back(std::move(neurons));
    }
    out.queries = oracle.query_count();
    return out;
}

// ---------------------------------------------------------------------------
// binary network recovery

inline std::vector<RecoveredNeuronQ> recover_binary_layer(Oracle& oracle, int layer) {
    detail::IntLayerProbe probe(oracle, layer);
    if (probe.precision() != Precision::binary)
        throw std::domain_error("recover_binary_layer needs a binary layer");
    int n = probe.fan_in();
    int m = probe.fan_out();
    std::vector<RecoveredNeuronQ> neurons(std::size_t(m));

    // Step I: every weight from the MAC classes of a single trace
    auto negated = probe.mac_negated(std::vector<int>(std::size_t(n), 1));
    for (int q = 0; q < m; ++q) {
        auto& nr = neurons[std::size_t(q)];
        nr.weights.resize(std::size_t(n));
        for (int i = 0; i < n; ++i) {
            nr.weights[std::size_t(i)].value = negated[std::size_t(q)][std::size_t(i)] ? -1 : 1;
            nr.weights[std::size_t(i)].round = FixedRound::round1;
        }
    }

    // Step II: walk pa upward from its minimum in unit steps per neuron;
    // the first strictly-positive class puts pa at exactly +1, so the
    // preceding step is the zero crossing
    for (int q = 0; q < m; ++q) {
        auto& nr = neurons[std::size_t(q)];
        std::vector<int> v(std::size_t(n));
        for (int i = 0; i < n; ++i)
            v[std::size_t(i)] = nr.weights[std::size_t(i)].value < 0 ? 255 : 0;
        if (probe.relu_positive(v)[std::size_t(q)]) {
            nr.unrecoverable = true;  // pre-activation positive even at its minimum
            continue;
        }
        bool found = false;
        auto walk = [&](int i, int from, int to, int step) {
            for (int t = from + step; !found && t != to + step; t += step) {
                v[std::size_t(i)] = t;
                if (probe.relu_positive(v)[std::size_t(q)]) {
                    v[std::size_t(i)] = t - step;  // pa was exactly zero here
                    found = true;
                }
            }
        };
        for (int i = 0; i < n && !found; ++i)
            if (nr.weights[std::size_t(i)].value < 0) walk(i, 255, 0, -1);
        for (int i = 0; i < n && !found; ++i)
            if (nr.weights[std::size_t(i)].value > 0) walk(i, 0, 255, +1);
        if (!found) {
            nr.unrecoverable = true;
            continue;
        }
        long s = 0;
        for (int i = 0; i < n; ++i) s += nr.weights[std::size_t(i)].value * v[std::size_t(i)];
        nr.bias = int(-s);
        nr.sgn_b = nr.bias > 0 ? 1 : (nr.bias < 0 ? -1 : 0);
    }
    return neurons;
}

inline RecoveredModelQ recover_binary_model(Oracle& oracle) {
    const NetworkModel& m = oracle.model();
    RecoveredModelQ out;
    out.assembled.input_width = m.input_width;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& L = m.layers[l];
        if (L.activation != Activation::relu) break;
        auto neurons = recover_binary_layer(oracle, int(l));
        Layer rec;
        rec.precision = Precision::binary;
        rec.activation = L.activation;
        rec.in = L.in;
        rec.out = L.out;
        for (int q = 0; q < L.out; ++q) {
            const auto& nr = neurons[std::size_t(q)];
            for (int i = 0; i < L.in; ++i) rec.wi.push_back(nr.weights[std::size_t(i)].value);
            rec.bi.push_back(nr.bias);
        }
        out.assembled.layers.push_back(std::move(rec));
        out.layers.push_back(std::move(neurons));
    }
    out.queries = oracle.query_count();
    return out;
}

// shared report format with the float attack
inline void write_fixed_report(const RecoveredModelQ& r, std::ostream& out) {
    out << "layer,neuron,weight,value,round,reading,flags\n";
    for (std::size_t l = 0; l < r.layers.size(); ++l)
        for (std::size_t q = 0; q < r.layers[l].size(); ++q) {
            const auto& nr = r.layers[l][q];
            for (std::size_t k = 0; k < nr.weights.size(); ++k) {
                const auto& w = nr.weights[k];
                out << l << ',' << q << ',' << k << ',' << w.value << ',' << int(w.round)
                    << ',' << w.reading << ',';
                if (!w.resolved) {
                    out << "candidates:";
                    for (std::size_t c = 0; c < w.candidates.size(); ++c)
                        out << (c ? "|" : "") << w.candidates[c];
                }
                out << '\n';
            }
        }
}

}  // namespace nnleak
