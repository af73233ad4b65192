#pragma once

// Recovers unknown device inputs from a single inference trace: the float
// path reads the exponent off the int2float loop count and the mantissa off
// the multiplication timings; the normalization path decodes the restoring
// division's per-bit durations; the zero-skipping path reads the sparsity
// mask straight from the event kinds.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <set>
#include <vector>

#include "nnleak/attack_float.hpp"
#include "nnleak/oracle.hpp"

namespace nnleak {

struct InputEstimate {
    enum class Method { float_path, div255, sparsity };

    struct Position {
        bool exact = false;
        int value = 0;
        std::vector<int> candidates;  // possible values when not exact
        bool flag_only = false;       // sparsity path: value is 0 / nonzero
        bool nonzero = false;
    };

    Method method = Method::float_path;
    std::vector<Position> positions;
};

// ---------------------------------------------------------------------------
// float path

namespace detail {

// exponent class of an int2float event; -1 for the zero fast path,
// std::nullopt when the channel is flat on this platform
inline std::optional<int> int2float_exponent(double cycles, const CostProfile& p) {
    if (p.i2f_constant_time) return std::nullopt;
    int best_e = -1;
    double best_d = std::abs(cycles - p.i2f_zero);
    for (int e = 0; e <= 7; ++e) {
        double d = std::abs(cycles - (p.i2f_base + double(p.i2f_iter) * (7 - e)));
        if (d < best_d) { best_d = d; best_e = e; }
    }
    return best_e;
}

// per-neuron slots of the first layer in input order; each slot is either a
// skip event or the int2float/mul pair of that input position
struct FloatSlot {
    bool skipped = false;
    double i2f_cycles = 0;
    double mul_cycles = 0;
};

inline std::vector<std::vector<FloatSlot>> first_layer_slots(const TimingTrace& trace,
                                                             int neurons, int fan_in) {
    std::vector<std::vector<FloatSlot>> slots(std::size_t(neurons));
    for (auto& s : slots) s.reserve(std::size_t(fan_in));
    std::vector<bool> expecting_mul(std::size_t(neurons), false);
    for (const OpEvent& e : trace.events) {
        if (e.layer != 0 || e.neuron < 0 || e.neuron >= neurons) continue;
        auto& row = slots[std::size_t(e.neuron)];
        switch (e.kind) {
            case OpKind::skip:
                row.push_back({true, 0, 0});
                break;
            case OpKind::int2float:
                row.push_back({false, e.cycles, 0});
                expecting_mul[std::size_t(e.neuron)] = true;
                break;
            case OpKind::mul:
                if (expecting_mul[std::size_t(e.neuron)] && !row.empty()) {
                    row.back().mul_cycles = e.cycles;
                    expecting_mul[std::size_t(e.neuron)] = false;
                }
                break;
            default:
                break;
        }
    }
    for (const auto& row : slots)
        if (int(row.size()) != fan_in)
            throw std::domain_error("trace does not cover every first-layer input");
    return slots;
}

inline bool integral_input(int m7, int e, int* out) {
    // ip = (128 + m7) * 2^(e-7); integral when the shifted-out bits are zero
    int sig = 128 + m7;
    if (e >= 7) { *out = sig << (e - 7); return *out <= 255; }
    int shift = 7 - e;
    if (sig & ((1 << shift) - 1)) return false;
    *out = sig >> shift;
    return true;
}

}  // namespace detail

// how many of the 128 input-mantissa rows become indistinguishable when the
// table is restricted to the given weight-mantissa columns
inline int restricted_row_collisions(const MantissaTimingTable& table,
                                     const std::vector<Mantissa7>& weights) {
    if (weights.empty()) return 128 * 127 / 2;
    std::vector<std::vector<double>> rows(128, std::vector<double>(weights.size()));
    for (int i = 0; i < 128; ++i)
        for (std::size_t j = 0; j < weights.size(); ++j)
            rows[std::size_t(i)][j] = table.at(i, weights[j].frac7);
    int collisions = 0;
    for (int i = 0; i < 128; ++i)
        for (int j = i + 1; j < 128; ++j) {
            double r = pearson(rows[std::size_t(i)], rows[std::size_t(j)]);
            if (std::isnan(r) || r >= 1.0 - 1e-12) ++collisions;
        }
    return collisions;
}

// weight_mantissas: the first layer's weight mantissas, one row per neuron
// (known to the attacker or recovered beforehand)
inline InputEstimate recover_input_float(const TimingTrace& trace,
                                         const std::vector<std::vector<Mantissa7>>& weight_mantissas,
                                         const MantissaTimingTable& table,
                                         const CostProfile& profile) {
    int neurons = int(weight_mantissas.size());
    if (neurons == 0) throw std::domain_error("no first-layer weights given");
    int fan_in = int(weight_mantissas[0].size());
    auto slots = detail::first_layer_slots(trace, neurons, fan_in);

    InputEstimate est;
    est.method = InputEstimate::Method::float_path;
    est.positions.resize(std::size_t(fan_in));
    std::vector<double> observed(std::size_t(neurons));
    for (int k = 0; k < fan_in; ++k) {
        auto& pos = est.positions[std::size_t(k)];
        if (slots[0][std::size_t(k)].skipped) {  // zero-skipping device: free zero detector
            pos.exact = true;
            pos.value = 0;
            continue;
        }
        auto e_ip = detail::int2float_exponent(slots[0][std::size_t(k)].i2f_cycles, profile);
        if (e_ip && *e_ip == -1) {  // the dedicated zero path
            pos.exact = true;
            pos.value = 0;
            continue;
        }
        for (int q = 0; q < neurons; ++q)
            observed[std::size_t(q)] = slots[std::size_t(q)][std::size_t(k)].mul_cycles;

        // rows restricted to this position's weight columns; collect every
        // row tying the best correlation
        double best = -2;
        std::vector<int> best_rows;
        std::vector<double> tmpl(std::size_t(neurons));
        bool degenerate = false;
        for (int row = 0; row < 128; ++row) {
            for (int q = 0; q < neurons; ++q)
                tmpl[std::size_t(q)] =
                    table.at(row, weight_mantissas[std::size_t(q)][std::size_t(k)].frac7);
            double r = pearson(observed, tmpl);
            if (std::isnan(r)) { degenerate = true; break; }
            if (r > best + 1e-12) {
                best = r;
                best_rows.assign(1, row);
            } else if (r >= best - 1e-12) {
                best_rows.push_back(row);
            }
        }
        std::set<int> values;
        if (degenerate) {
            for (int v = 1; v <= 255; ++v) values.insert(v);
        } else {
            for (int m : best_rows) {
                if (e_ip) {
                    int v;
                    if (detail::integral_input(m, *e_ip, &v)) values.insert(v);
                } else {
                    // flat exponent channel: every integral placement of the
                    // mantissa is possible
                    for (int e = 0; e <= 7; ++e) {
                        int v;
                        if (detail::integral_input(m, e, &v)) values.insert(v);
                    }
                }
            }
        }
        if (values.empty())
            throw std::domain_error("input position " + std::to_string(k) +
                                    ": timing matched no integral input (inconsistent trace)");
        if (values.size() == 1 && !degenerate && e_ip) {
            pos.exact = true;
            pos.value = *values.begin();
        } else {
            pos.candidates.assign(values.begin(), values.end());
        }
    }
    return est;
}

// ---------------------------------------------------------------------------
// normalization (restoring division) path

inline InputEstimate recover_input_div255(const TimingTrace& trace, const CostProfile& profile) {
    // group division events by input position
    int width = -1;
    for (const OpEvent& e : trace.events)
        if (e.kind == OpKind::div_bit && e.layer == -1) width = std::max(width, e.neuron);
    if (width < 0) throw std::domain_error("trace has no division events to decode");
    ++width;

    InputEstimate est;
    est.method = InputEstimate::Method::div255;
    est.positions.resize(std::size_t(width));

    std::vector<std::vector<double>> durations(std::size_t(width));
    for (const OpEvent& e : trace.events) {
        if (e.kind != OpKind::div_bit || e.layer != -1) continue;
        auto& d = durations[std::size_t(e.neuron)];
        // the first division step of each input carries the setup cost
        d.push_back(e.cycles - (d.empty() ? profile.div_base : 0));
    }

    std::vector<double> pooled;
    for (const auto& d : durations) pooled.insert(pooled.end(), d.begin(), d.end());
    double threshold = two_means_threshold(pooled);

    for (int k = 0; k < width; ++k) {
        auto& pos = est.positions[std::size_t(k)];
        const auto& d = durations[std::size_t(k)];
        if (d.size() != 16 || std::isnan(threshold)) {
            // flat or hardware-divided channel: nothing to decode
            for (int v = 0; v <= 255; ++v) pos.candidates.push_back(v);
            continue;
        }
        int raw = 0;
        for (double dur : d) raw = (raw << 1) | (dur > threshold ? 1 : 0);
        bool found = false;
        for (int ip = 0; ip <= 255; ++ip) {
            if (int((std::int64_t(ip) << 15) / 255) == raw) {
                pos.exact = true;
                pos.value = ip;
                found = true;
                break;
            }
        }
        if (!found) {
            // noisy decode: keep the two nearest encodings as candidates
            int lo = int((std::int64_t(raw) * 255) >> 15);
            for (int ip = std::max(0, lo - 1); ip <= std::min(255, lo + 1); ++ip)
                pos.candidates.push_back(ip);
        }
    }
    return est;
}

// ---------------------------------------------------------------------------
// zero-skipping path

inline InputEstimate recover_sparsity_mask(const TimingTrace& trace) {
    InputEstimate est;
    est.method = InputEstimate::Method::sparsity;
    // slots of the first neuron, one per input position, in order; a slot
    // starts with skip, int2float, mac, or (for float-fed layers) mul
    bool has_i2f = false;
    for (const OpEvent& e : trace.events)
        if (e.layer == 0 && e.neuron == 0 && e.kind == OpKind::int2float) has_i2f = true;
    std::vector<bool> mask;
    for (const OpEvent& e : trace.events) {
        if (e.layer != 0 || e.neuron != 0) continue;
        if (e.kind == OpKind::skip) mask.push_back(false);
        else if (e.kind == OpKind::int2float || e.kind == OpKind::mac) mask.push_back(true);
        else if (e.kind == OpKind::mul && !has_i2f) mask.push_back(true);
    }
    if (mask.empty()) throw std::domain_error("trace has no first-layer events");
    for (bool nz : mask) {
        InputEstimate::Position pos;
        pos.flag_only = true;
        pos.nonzero = nz;
        est.positions.push_back(pos);
    }
    return est;
}

// ---------------------------------------------------------------------------
// emission

inline void write_input_estimate_csv(const InputEstimate& est, std::ostream& out) {
    out << "position,kind,value\n";
    const char* method = est.method == InputEstimate::Method::float_path ? "float"
                         : est.method == InputEstimate::Method::div255  ? "div255"
                                                                        : "sparsity";
    for (std::size_t k = 0; k < est.positions.size(); ++k) {
        const auto& p = est.positions[k];
        out << k << ',' << method << ',';
        if (p.flag_only) out << (p.nonzero ? "nonzero" : "0");
        else if (p.exact) out << p.value;
        else {
            for (std::size_t i = 0; i < p.candidates.size(); ++i)
                out << (i ? "|" : "") << p.candidates[i];
        }
        out << '\n';
    }
}

// plain PGM for eyeballing recovered 2-D inputs; unknown positions render
// mid-gray
inline void write_input_pgm(const InputEstimate& est, int width, int height, std::ostream& out) {
    if (width * height != int(est.positions.size()))
        throw std::domain_error("pgm dimensions do not match the estimate");
    out << "P2\n" << width << " " << height << "\n255\n";
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto& p = est.positions[std::size_t(y * width + x)];
            int v = p.flag_only ? (p.nonzero ? 255 : 0) : (p.exact ? p.value : 128);
            out << v << (x + 1 < width ? " " : "");
        }
        out << "\n";
    }
}

}  // namespace nnleak
