#pragma once

// Model container, construction and line-oriented text serialization for
// multi-layer networks in float / fixed / binary precisions, plus the
// straight (non-leaky) reference evaluator.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nnleak/kernels.hpp"

namespace nnleak {

enum class Precision { float32, fixed, binary };
enum class Activation { relu, argmax_final, none };
enum class Normalization { none, div255 };

inline const char* to_string(Precision p) {
    switch (p) {
        case Precision::float32: return "float";
        case Precision::fixed: return "fixed";
        default: return "binary";
    }
}

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::argmax_final: return "argmax";
        default: return "none";
    }
}

struct Layer {
    Precision precision = Precision::float32;
    Activation activation = Activation::relu;
    int out = 0;
    int in = 0;
    std::vector<FloatRepr> wf, bf;  // float32 layers, row-major out x in
    std::vector<int> wi, bi;        // fixed / binary layers

    FloatRepr& wf_at(int o, int i) { return wf[std::size_t(o) * in + i]; }
    const FloatRepr& wf_at(int o, int i) const { return wf[std::size_t(o) * in + i]; }
    int& wi_at(int o, int i) { return wi[std::size_t(o) * in + i]; }
    int wi_at(int o, int i) const { return wi[std::size_t(o) * in + i]; }

    double weight_value(int o, int i) const {
        return precision == Precision::float32 ? wf_at(o, i).value() : wi_at(o, i);
    }
    double bias_value(int o) const {
        return precision == Precision::float32 ? bf[std::size_t(o)].value() : bi[std::size_t(o)];
    }
};

struct NetworkModel {
    std::vector<Layer> layers;
    int input_width = 0;
    Normalization normalization = Normalization::none;
    bool zero_skipping = false;
};

inline void validate_model(const NetworkModel& m) {
    if (m.layers.empty()) throw std::domain_error("model has no layers");
    int prev = m.input_width;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& L = m.layers[l];
        if (L.out <= 0 || L.in <= 0)
            throw std::domain_error("layer " + std::to_string(l) + " has empty dimensions");
        if (L.in != prev)
            throw std::domain_error("layer " + std::to_string(l) + " input width " +
                                    std::to_string(L.in) + " does not match " +
                                    std::to_string(prev));
        std::size_t nw = std::size_t(L.out) * L.in;
        if (L.precision == Precision::float32) {
            if (L.wf.size() != nw || L.bf.size() != std::size_t(L.out))
                throw std::domain_error("layer " + std::to_string(l) + " float storage size mismatch");
        } else {
            if (L.wi.size() != nw || L.bi.size() != std::size_t(L.out))
                throw std::domain_error("layer " + std::to_string(l) + " integer storage size mismatch");
            for (int w : L.wi) {
                if (L.precision == Precision::fixed && (w < -8 || w > 7))
                    throw std::domain_error("fixed weight out of 4-bit range");
                if (L.precision == Precision::binary && w != 1 && w != -1)
                    throw std::domain_error("binary weight must be +/-1");
            }
            if (L.precision == Precision::fixed)
                for (int b : L.bi)
                    if (b < -128 || b > 127)
                        throw std::domain_error("fixed bias out of 8-bit range");
        }
        prev = L.out;
    }
    if (m.normalization == Normalization::div255 &&
        m.layers.front().precision != Precision::float32)
        throw std::domain_error("div255 normalization requires a float first layer");
}

// ---------------------------------------------------------------------------
// random construction

struct RandomModelSpec {
    std::vector<int> dims;  // input width followed by layer widths
    Precision precision = Precision::float32;
    std::uint64_t seed = 1;
    // float layers draw |w| from [min_mag, 1); first-layer biases from
    // +/-[12, 56), deeper biases from +/-[0.25, 2)
    double min_mag = 1.0 / 16;
};

inline NetworkModel random_model(const RandomModelSpec& spec) {
    if (spec.dims.size() < 2) throw std::domain_error("random_model needs at least one layer");
    for (int d : spec.dims)
        if (d <= 0) throw std::domain_error("random_model: dimensions must be positive");
    std::mt19937_64 rng(spec.seed);
    NetworkModel m;
    m.input_width = spec.dims[0];
    for (std::size_t l = 1; l < spec.dims.size(); ++l) {
        Layer L;
        L.precision = spec.precision;
        L.activation = Activation::relu;
        L.in = spec.dims[l - 1];
        L.out = spec.dims[l];
        std::size_t nw = std::size_t(L.out) * L.in;
        if (spec.precision == Precision::float32) {
            L.wf.resize(nw);
            L.bf.resize(std::size_t(L.out));
            bool first = (l == 1);
            std::uniform_real_distribution<double> mag(spec.min_mag, 1.0);
            std::uniform_real_distribution<double> bmag(first ? 12.0 : 0.25, first ? 56.0 : 2.0);
            for (int o = 0; o < L.out; ++o) {
                double b = (rng() & 1 ? -1 : 1) * bmag(rng);
                std::vector<double> ws(std::size_t(L.in));
                for (auto& w : ws) w = (rng() & 1 ? -1 : 1) * mag(rng);
                // recovery needs one weight opposing the bias; at the input
                // grid (layer 1) its zero-crossover must land mid-range
                auto crossover_ok = [&](double w) {
                    if (w * b >= 0) return false;
                    if (!first) return true;
                    double r = std::abs(b) / std::abs(w);
                    return r >= 32 && r <= 192;
                };
                if (std::none_of(ws.begin(), ws.end(), crossover_ok)) {
                    std::uniform_real_distribution<double> anchor(
                        first ? std::abs(b) / 160 : spec.min_mag,
                        first ? std::abs(b) / 40 : 1.0);
                    ws[rng() % ws.size()] = (b > 0 ? -1 : 1) * anchor(rng);
                }
                for (int i = 0; i < L.in; ++i)
                    L.wf_at(o, i) = FloatRepr::from_double(ws[std::size_t(i)]);
                L.bf[std::size_t(o)] = FloatRepr::from_double(b);
            }
        } else {
            L.wi.resize(nw);
            L.bi.resize(std::size_t(L.out));
            for (int o = 0; o < L.out; ++o) {
                if (spec.precision == Precision::fixed) {
                    std::uniform_int_distribution<int> wd(-8, 7);
                    std::uniform_int_distribution<int> bd(1, 127);
                    int b = (rng() & 1 ? -1 : 1) * bd(rng);
                    bool opposed = false;
                    for (int i = 0; i < L.in; ++i) {
                        int w;
                        do { w = wd(rng); } while (w == 0);
                        L.wi_at(o, i) = w;
                        opposed = opposed || w * b < 0;
                    }
                    if (!opposed) L.wi_at(o, 0) = -L.wi_at(o, 0);
                    L.bi[std::size_t(o)] = b;
                } else {
                    bool pos = false, neg = false;
                    for (int i = 0; i < L.in; ++i) {
                        int w = (rng() & 1) ? 1 : -1;
                        L.wi_at(o, i) = w;
                        (w > 0 ? pos : neg) = true;
                    }
                    if (!pos) L.wi_at(o, 0) = 1;
                    if (!neg) L.wi_at(o, L.in > 1 ? 1 : 0) = -1;
                    std::uniform_int_distribution<int> bd(1, 100);
                    L.bi[std::size_t(o)] = (rng() & 1 ? -1 : 1) * bd(rng);
                }
            }
        }
        m.layers.push_back(std::move(L));
    }
    if (!m.layers.empty()) m.layers.back().activation = Activation::relu;
    validate_model(m);
    return m;
}

// ---------------------------------------------------------------------------
// serialization: line-oriented text with hex float bit patterns

inline void save_model(const NetworkModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model: " + path);
    out << "net " << to_string(m.layers.front().precision) << " " << m.layers.size() << "\n";
    if (m.normalization == Normalization::div255) out << "normalize div255\n";
    if (m.zero_skipping) out << "zeroskip on\n";
    char hex[16];
    for (const Layer& L : m.layers) {
        out << "layer " << L.out << " " << L.in << " " << to_string(L.activation) << "\n";
        for (int o = 0; o < L.out; ++o) {
            out << "w";
            for (int i = 0; i < L.in; ++i) {
                if (L.precision == Precision::float32) {
                    std::snprintf(hex, sizeof hex, " %08x", L.wf_at(o, i).bits());
                    out << hex;
                } else {
                    out << " " << L.wi_at(o, i);
                }
            }
            out << "\n";
        }
        out << "bias";
        for (int o = 0; o < L.out; ++o) {
            if (L.precision == Precision::float32) {
                std::snprintf(hex, sizeof hex, " %08x", L.bf[std::size_t(o)].bits());
                out << hex;
            } else {
                out << " " << L.bi[std::size_t(o)];
            }
        }
        out << "\n";
    }
}

namespace detail {

struct ModelParser {
    std::istream& in;
    std::string path;
    int lineno = 0;
    std::vector<std::string> tok;

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + msg);
    }

    bool next_line() {
        std::string line;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::istringstream ls(line);
            tok.assign(std::istream_iterator<std::string>(ls), {});
            if (!tok.empty()) return true;
        }
        return false;
    }

    int to_int(const std::string& s) {
        try {
            std::size_t used = 0;
            int v = std::stoi(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail("expected integer, got '" + s + "'");
        }
    }

    FloatRepr to_float_bits(const std::string& s) {
        if (s.size() != 8 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
            fail("expected 8 hex digits, got '" + s + "'");
        try {
            return FloatRepr::from_bits(std::uint32_t(std::stoul(s, nullptr, 16)));
        } catch (const std::domain_error& e) {
            fail(e.what());
        }
    }
};

}  // namespace detail

inline NetworkModel load_model(std::istream& in, const std::string& path = "<stream>") {
    detail::ModelParser ps{in, path};
    if (!ps.next_line() || ps.tok[0] != "net" || ps.tok.size() != 3)
        ps.fail("expected header 'net <precision> <layers>'");
    Precision prec;
    if (ps.tok[1] == "float") prec = Precision::float32;
    else if (ps.tok[1] == "fixed") prec = Precision::fixed;
    else if (ps.tok[1] == "binary") prec = Precision::binary;
    else ps.fail("unknown precision '" + ps.tok[1] + "'");
    int nlayers = ps.to_int(ps.tok[2]);
    if (nlayers <= 0) ps.fail("model must have at least one layer");

    NetworkModel m;
    bool have_line = ps.next_line();
    while (have_line && (ps.tok[0] == "normalize" || ps.tok[0] == "zeroskip")) {
        if (ps.tok[0] == "normalize") {
            if (ps.tok.size() != 2 || ps.tok[1] != "div255") ps.fail("expected 'normalize div255'");
            m.normalization = Normalization::div255;
        } else {
            if (ps.tok.size() != 2 || ps.tok[1] != "on") ps.fail("expected 'zeroskip on'");
            m.zero_skipping = true;
        }
        have_line = ps.next_line();
    }
    for (int l = 0; l < nlayers; ++l) {
        if (!have_line) ps.fail("unexpected end of file, expected 'layer'");
        if (ps.tok[0] != "layer" || ps.tok.size() != 4) ps.fail("expected 'layer <out> <in> <activation>'");
        Layer L;
        L.precision = prec;
        L.out = ps.to_int(ps.tok[1]);
        L.in = ps.to_int(ps.tok[2]);
        if (L.out <= 0 || L.in <= 0) ps.fail("layer dimensions must be positive");
        if (ps.tok[3] == "relu") L.activation = Activation::relu;
        else if (ps.tok[3] == "argmax") L.activation = Activation::argmax_final;
        else if (ps.tok[3] == "none") L.activation = Activation::none;
        else ps.fail("unknown activation '" + ps.tok[3] + "'");
        for (int o = 0; o < L.out; ++o) {
            if (!ps.next_line() || ps.tok[0] != "w") ps.fail("expected weight row 'w ...'");
            if (int(ps.tok.size()) != L.in + 1) ps.fail("weight row needs " + std::to_string(L.in) + " entries");
            for (int i = 0; i < L.in; ++i) {
                if (prec == Precision::float32) L.wf.push_back(ps.to_float_bits(ps.tok[std::size_t(i) + 1]));
                else L.wi.push_back(ps.to_int(ps.tok[std::size_t(i) + 1]));
            }
        }
        if (!ps.next_line() || ps.tok[0] != "bias") ps.fail("expected 'bias ...' row");
        if (int(ps.tok.size()) != L.out + 1) ps.fail("bias row needs " + std::to_string(L.out) + " entries");
        for (int o = 0; o < L.out; ++o) {
            if (prec == Precision::float32) L.bf.push_back(ps.to_float_bits(ps.tok[std::size_t(o) + 1]));
            else L.bi.push_back(ps.to_int(ps.tok[std::size_t(o) + 1]));
        }
        if (l == 0) m.input_width = L.in;
        m.layers.push_back(std::move(L));
        have_line = ps.next_line();
    }
    if (have_line) ps.fail("trailing content after last layer");
    validate_model(m);
    return m;
}

inline NetworkModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model: " + path);
    return load_model(in, path);
}

// ---------------------------------------------------------------------------
// reference evaluation (device numerics, no timing)

namespace detail {

// normalized first-layer input value for div255 models: Q0.15 truncation
inline FloatRepr div255_value(int ip) {
    std::int32_t raw = std::int32_t((std::int64_t(ip) << 15) / 255);
    return FloatRepr::from_double(std::ldexp(double(raw), -15));
}

}  // namespace detail

// per-layer activations; activations[0] is the input presented to layer 0
// (after normalization for div255 models), activations[L] the final output
inline std::vector<std::vector<double>> reference_activations(const NetworkModel& m,
                                                              const std::vector<int>& input) {
    validate_model(m);
    if (int(input.size()) != m.input_width)
        throw std::domain_error("input width mismatch");
    for (int v : input)
        if (v < 0 || v > 255) throw std::domain_error("input values must be 0..255");
    static const CostProfile timing_free = CostProfile::atmega_like();  // values ignore it

    std::vector<std::vector<double>> acts;
    std::vector<double> cur(input.size());
    std::vector<FloatRepr> curf(input.size());
    bool cur_is_float = m.normalization == Normalization::div255;
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (cur_is_float) {
            curf[i] = detail::div255_value(input[i]);
            cur[i] = curf[i].value();
        } else {
            cur[i] = input[i];
        }
    }
    acts.push_back(cur);

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& L = m.layers[l];
        std::vector<double> next(std::size_t(L.out));
        std::vector<FloatRepr> nextf(std::size_t(L.out));
        bool next_is_float = L.precision == Precision::float32;
        for (int o = 0; o < L.out; ++o) {
            if (L.precision == Precision::float32) {
                FloatRepr acc = L.bf[std::size_t(o)];
                for (int i = 0; i < L.in; ++i) {
                    FloatRepr ip = cur_is_float
                                       ? curf[std::size_t(i)]
                                       : leaky_int2float(int(cur[std::size_t(i)]), timing_free).value;
                    FloatRepr prod = leaky_float_mul(ip, L.wf_at(o, i), timing_free).value;
                    acc = leaky_float_add(acc, prod, timing_free).value;
                }
                FloatRepr out = L.activation == Activation::relu
                                    ? leaky_float_relu(acc, timing_free).value
                                    : acc;
                nextf[std::size_t(o)] = out;
                next[std::size_t(o)] = out.value();
            } else {
                std::int64_t acc = L.bi[std::size_t(o)];
                for (int i = 0; i < L.in; ++i)
                    acc += std::int64_t(cur[std::size_t(i)]) * L.wi_at(o, i);
                if (L.activation == Activation::relu) acc = std::max<std::int64_t>(acc, 0);
                next[std::size_t(o)] = double(acc);
            }
        }
        // hidden-layer outputs feed the next layer in its input domain
        if (l + 1 < m.layers.size() && m.layers[l + 1].precision != Precision::float32) {
            for (auto& v : next) v = std::clamp(v, 0.0, 255.0);
            next_is_float = false;
        }
        cur = next;
        curf = nextf;
        cur_is_float = next_is_float;
        acts.push_back(cur);
    }
    return acts;
}

inline std::vector<double> reference_forward(const NetworkModel& m, const std::vector<int>& input) {
    return reference_activations(m, input).back();
}

inline int argmax_index(const std::vector<double>& v) {
    return int(std::max_element(v.begin(), v.end()) - v.begin());
}

// fraction of random inputs on which the two models' final argmax agrees
inline double equivalent_argmax(const NetworkModel& a, const NetworkModel& b, int trials,
                                std::uint64_t seed) {
    if (a.input_width != b.input_width || a.layers.size() != b.layers.size())
        throw std::domain_error("equivalent_argmax: topology mismatch");
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].out != b.layers[l].out || a.layers[l].in != b.layers[l].in)
            throw std::domain_error("equivalent_argmax: topology mismatch");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, 255);
    int agree = 0;
    std::vector<int> input(std::size_t(a.input_width));
    for (int t = 0; t < trials; ++t) {
        for (auto& v : input) v = dist(rng);
        if (argmax_index(reference_forward(a, input)) == argmax_index(reference_forward(b, input)))
            ++agree;
    }
    return double(agree) / trials;
}

// the positive per-layer rescaling that leaves every ReLU sign and the final
// argmax unchanged: weights of layer l scale by 2^k[l], biases by the
// accumulated 2^(k[0]+...+k[l])
inline NetworkModel scale_layers(const NetworkModel& m, const std::vector<int>& k) {
    if (k.size() != m.layers.size())
        throw std::domain_error("scale_layers: one exponent per layer required");
    NetworkModel s = m;
    int acc = 0;
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
        Layer& L = s.layers[l];
        if (L.precision != Precision::float32)
            throw std::domain_error("scale_layers: float layers only");
        acc += k[l];
        for (auto& w : L.wf)
            if (!w.is_zero()) w = FloatRepr::from_parts(w.sign, w.unbiased_exponent() + k[l], w.mantissa_frac);
        for (auto& b : L.bf)
            if (!b.is_zero()) b = FloatRepr::from_parts(b.sign, b.unbiased_exponent() + acc, b.mantissa_frac);
    }
    return s;
}

}  // namespace nnleak
