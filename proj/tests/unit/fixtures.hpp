#pragma once

// Shared single-neuron fixtures used across the attack tests. The float
// neuron stores weights whose top-7-bit mantissas are exactly the values the
// recovery should report; the fixed neuron is the worked 9-weight example.

#include "nnleak/network.hpp"

namespace fixtures {

inline nnleak::NetworkModel table1_neuron() {
    using namespace nnleak;
    NetworkModel m;
    m.input_width = 5;
    Layer L;
    L.precision = Precision::float32;
    L.activation = Activation::relu;
    L.out = 1;
    L.in = 5;
    L.wf = {FloatRepr::from_parts(0, -2, 5u << 16),   //  1.0390625 * 2^-2
            FloatRepr::from_parts(1, -3, 85u << 16),  // -1.6640625 * 2^-3
            FloatRepr::from_parts(1, -6, 11u << 16),  // -1.0859375 * 2^-6
            FloatRepr::from_parts(0, -2, 23u << 16),  //  1.1796875 * 2^-2
            FloatRepr::from_parts(0, -7, 16u << 16)}; //  1.1250000 * 2^-7
    L.bf = {FloatRepr::from_parts(1, 5, 76u << 16)};  // -1.59375 * 2^5 = -51
    m.layers.push_back(L);
    return m;
}

inline nnleak::NetworkModel table2_neuron() {
    using namespace nnleak;
    NetworkModel m;
    m.input_width = 9;
    Layer L;
    L.precision = Precision::fixed;
    L.activation = Activation::relu;
    L.out = 1;
    L.in = 9;
    L.wi = {-1, -3, 4, -7, -8, 2, -6, 5, 0};
    L.bi = {108};
    m.layers.push_back(L);
    return m;
}

inline nnleak::NetworkModel bnn_example_neuron() {
    using namespace nnleak;
    NetworkModel m;
    m.input_width = 2;
    Layer L;
    L.precision = Precision::binary;
    L.activation = Activation::relu;
    L.out = 1;
    L.in = 2;
    L.wi = {1, -1};
    L.bi = {-33};
    m.layers.push_back(L);
    return m;
}

}  // namespace fixtures
