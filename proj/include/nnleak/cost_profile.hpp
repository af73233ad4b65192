#pragma once

// Cycle-cost constants for the emulated platforms. One profile per platform;
// every leaky kernel reads its constants from here, so a profile fully
// determines the timing behaviour of the device.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnleak {

struct CostProfile {
    std::string name = "custom";

    // float multiply: shift-and-add over 8-bit significands
    int fmul_base = 120;
    int fmul_add = 4;      // per set multiplier bit
    int fmul_carry = 2;    // extra when the running add carries out
    int fmul_norm = 6;     // post-normalization shift
    int fmul_round = 3;    // sticky-bit round-up step

    // float add: per-bit exponent alignment, gap capped at 25
    int fadd_base = 40;
    int fadd_shift = 2;

    // float ReLU classes
    int frelu_pos = 68;
    int frelu_zero = 56;
    int frelu_neg = 61;

    // integer-to-float conversion: base + iter * (7 - floor(log2 ip))
    int i2f_base = 23;
    int i2f_iter = 4;
    int i2f_zero = 14;             // dedicated zero fast path
    bool i2f_constant_time = false;

    // fixed point MAC (hardware multiplier) and ReLU
    int fxmac = 6;
    int fxrelu_pos = 10;      // pa > 0
    int fxrelu_nonpos = 7;    // pa <= 0, matches the measured 0-input row

    // restoring division for input normalization; a quotient bit of 1 adds
    // the subtract step on top of the compare step
    int div_cmp = 10;
    int div_sub = 6;
    int div_base = 8;
    bool div_hardware = false;     // constant-time hardware divider
    int div_hw_cycles = 32;

    // binary-net MAC: conditional negate for wt = -1
    int bnn_mac_base = 5;
    int bnn_negate = 3;

    int skip = 3;                  // zero-skipped MAC

    // hardened (constant-time) kernels
    int ct_mul = 300;
    int ct_mac = 342;
    int ct_relu = 19;

    void validate() const {
        auto pos = [](int v, const char* what) {
            if (v <= 0) throw std::domain_error(std::string("profile constant must be positive: ") + what);
        };
        pos(fmul_base, "fmul_base"); pos(fmul_add, "fmul_add"); pos(fmul_carry, "fmul_carry");
        pos(fmul_norm, "fmul_norm"); pos(fmul_round, "fmul_round");
        pos(fadd_base, "fadd_base"); pos(fadd_shift, "fadd_shift");
        pos(frelu_pos, "frelu_pos"); pos(frelu_zero, "frelu_zero"); pos(frelu_neg, "frelu_neg");
        pos(i2f_base, "i2f_base"); pos(i2f_iter, "i2f_iter"); pos(i2f_zero, "i2f_zero");
        pos(fxmac, "fxmac"); pos(fxrelu_pos, "fxrelu_pos"); pos(fxrelu_nonpos, "fxrelu_nonpos");
        pos(div_cmp, "div_cmp"); pos(div_sub, "div_sub"); pos(div_base, "div_base");
        pos(div_hw_cycles, "div_hw_cycles");
        pos(bnn_mac_base, "bnn_mac_base"); pos(bnn_negate, "bnn_negate");
        pos(skip, "skip"); pos(ct_mul, "ct_mul"); pos(ct_mac, "ct_mac"); pos(ct_relu, "ct_relu");

        if (frelu_pos == frelu_zero || frelu_pos == frelu_neg || frelu_zero == frelu_neg)
            throw std::domain_error("float ReLU classes must be pairwise distinct");
        if (fxrelu_pos == fxrelu_nonpos)
            throw std::domain_error("fixed ReLU classes must be distinct");
        if (!i2f_constant_time) {
            // nine classes: zero plus 0..7 loop iterations
            for (int k = 0; k <= 7; ++k)
                if (i2f_zero == i2f_base + k * i2f_iter)
                    throw std::domain_error("int2float zero class collides with a nonzero class");
        }
    }

    static CostProfile atmega_like() {
        CostProfile p;
        p.name = "atmega-like";
        return p;  // the defaults above are the atmega-like constants
    }

    static CostProfile cortex_m0_like() {
        CostProfile p;
        p.name = "cortex-m0-like";
        p.fmul_base = 180; p.fmul_add = 3; p.fmul_carry = 1; p.fmul_norm = 4; p.fmul_round = 2;
        p.fadd_base = 28; p.fadd_shift = 1;
        p.frelu_pos = 90; p.frelu_zero = 88; p.frelu_neg = 87;
        p.i2f_base = 20; p.i2f_iter = 2; p.i2f_zero = 12;
        p.i2f_constant_time = true;  // conversion leaks nothing on this platform
        p.fxmac = 3; p.fxrelu_pos = 2; p.fxrelu_nonpos = 1;
        p.div_cmp = 8; p.div_sub = 5; p.div_base = 6;
        p.bnn_mac_base = 4; p.bnn_negate = 2;
        p.skip = 2;
        p.ct_mul = 59; p.ct_mac = 90; p.ct_relu = 9;
        return p;
    }

    static CostProfile riscv_like() {
        CostProfile p;
        p.name = "riscv-like";
        p.fmul_base = 125; p.fmul_add = 4; p.fmul_carry = 1; p.fmul_norm = 4; p.fmul_round = 2;
        p.fadd_base = 30; p.fadd_shift = 1;
        p.frelu_pos = 56; p.frelu_zero = 77; p.frelu_neg = 57;
        p.i2f_base = 18; p.i2f_iter = 2; p.i2f_zero = 10;
        p.i2f_constant_time = true;   // conversion is constant time
        p.fxmac = 2; p.fxrelu_pos = 3; p.fxrelu_nonpos = 2;
        p.div_cmp = 6; p.div_sub = 4; p.div_base = 4;
        p.div_hardware = true;        // 32-cycle hardware divider, flat channel
        p.div_hw_cycles = 32;
        p.bnn_mac_base = 3; p.bnn_negate = 2;
        p.skip = 2;
        p.ct_mul = 8; p.ct_mac = 8; p.ct_relu = 6;
        return p;
    }

    static const std::vector<std::string>& builtin_names() {
        static const std::vector<std::string> names = {"atmega-like", "cortex-m0-like", "riscv-like"};
        return names;
    }

    static CostProfile builtin(const std::string& n) {
        if (n == "atmega-like") return atmega_like();
        if (n == "cortex-m0-like") return cortex_m0_like();
        if (n == "riscv-like") return riscv_like();
        throw std::domain_error("unknown builtin profile: " + n);
    }

    void save(const std::string& path) const;
    static CostProfile load(const std::string& path);

  private:
    template <class Fn> void for_each_field(Fn&& fn);
    template <class Fn> void for_each_field(Fn&& fn) const {
        const_cast<CostProfile*>(this)->for_each_field(
            [&](const char* k, auto& v) { fn(k, v); });
    }
};

template <class Fn>
void CostProfile::for_each_field(Fn&& fn) {
    fn("fmul_base", fmul_base); fn("fmul_add", fmul_add); fn("fmul_carry", fmul_carry);
    fn("fmul_norm", fmul_norm); fn("fmul_round", fmul_round);
    fn("fadd_base", fadd_base); fn("fadd_shift", fadd_shift);
    fn("frelu_pos", frelu_pos); fn("frelu_zero", frelu_zero); fn("frelu_neg", frelu_neg);
    fn("i2f_base", i2f_base); fn("i2f_iter", i2f_iter); fn("i2f_zero", i2f_zero);
    fn("i2f_constant_time", i2f_constant_time);
    fn("fxmac", fxmac); fn("fxrelu_pos", fxrelu_pos); fn("fxrelu_nonpos", fxrelu_nonpos);
    fn("div_cmp", div_cmp); fn("div_sub", div_sub); fn("div_base", div_base);
    fn("div_hardware", div_hardware); fn("div_hw_cycles", div_hw_cycles);
    fn("bnn_mac_base", bnn_mac_base); fn("bnn_negate", bnn_negate);
    fn("skip", skip);
    fn("ct_mul", ct_mul); fn("ct_mac", ct_mac); fn("ct_relu", ct_relu);
}

inline void CostProfile::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write profile: " + path);
    out << "name = " << name << "\n";
    for_each_field([&](const char* k, const auto& v) { out << k << " = " << v << "\n"; });
}

inline CostProfile CostProfile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open profile: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    std::string name_value;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, eq, value;
        if (!(ls >> key)) continue;
        if (!(ls >> eq >> value) || eq != "=")
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected 'key = value'");
        if (key == "name") { name_value = value; continue; }
        kv[key] = value;
    }
    CostProfile p;
    if (!name_value.empty()) p.name = name_value;
    p.for_each_field([&](const char* k, auto& v) {
        auto it = kv.find(k);
        if (it == kv.end()) return;  // missing keys keep defaults
        std::istringstream vs(it->second);
        if (!(vs >> v)) throw std::runtime_error("bad value for profile key " + std::string(k));
        kv.erase(it);
    });
    if (!kv.empty())
        throw std::runtime_error("unknown profile key: " + kv.begin()->first);
    p.validate();
    return p;
}

}  // namespace nnleak
