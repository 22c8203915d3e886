#pragma once

#include "autodiff.hpp"

namespace tlra {

// The three reference pooling layers. Channel multipliers are fixed by the
// branch structure: pool_a consumes 4 groups and emits 3, pool_aa 8 -> 6,
// pool_ab 8 -> 5.
enum class PoolKind { A, AA, AB };

struct PoolInfo {
    int fan_in, fan_out, ndims;
};
PoolInfo pool_info(PoolKind kind);
const char* pool_name(PoolKind kind);
PoolKind pool_from_name(const std::string& name);

// fan-in linear -> pooling -> fan-out linear; both linears act on the
// channel axis only, so they never disturb the symmetric axes.
struct EquivariantLayerParams {
    Tensor w_in, b_in;    // (nh0*fan_in, in_ch), (nh0*fan_in)
    Tensor w_out, b_out;  // (out_ch, nh0*fan_out), (out_ch)
};

struct EinNetConfig {
    int ninput = 1;
    int nh0 = 16;
    int nh = 64;
    int noutput = 1;
    int nstacks = 2;
    PoolKind pool = PoolKind::AB;
    // Normalization epsilons as in the reference implementation. They differ
    // between the aa and ab pools; override knobs are exposed but the
    // defaults are authoritative for the golden tests.
    double eps_aa = 1e-1;
    double eps_ab = 1e-12;
};

struct EinNetParams {
    EinNetConfig cfg;
    std::vector<EquivariantLayerParams> layers;  // input, nstacks-1 hidden, output

    static EinNetParams init(const EinNetConfig& cfg, Rng& rng);
    void zero_output_head();
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

// Parameters bound onto a tape, either as trainable leaves (phase-3 and
// uncut training) or as constants (inference, phase 1).
struct BoundEinNet {
    EinNetConfig cfg;
    struct Layer {
        Tape::Id w_in, b_in, w_out, b_out;
    };
    std::vector<Layer> layers;
    std::vector<Tape::Id> leaf_ids;  // order matches named_params()
};

BoundEinNet bind_einnet(Tape& tape, const EinNetParams& params, bool as_leaf);

// Pooling over the trailing symmetric axes; leading axes are batch.
Tape::Id pool_forward(Tape& tape, PoolKind kind, Tape::Id x, double eps_aa = 1e-1, double eps_ab = 1e-12);

Tape::Id equivariant_layer(Tape& tape, const BoundEinNet& net, int layer, Tape::Id x);

// layer_0(x); h += layer_i(gelu(h)); layer_last(gelu(h))
Tape::Id einnet_forward(Tape& tape, const BoundEinNet& net, Tape::Id x);

// Mean over the listed axes (negative axes allowed), dropping them.
Tape::Id invariant_readout(Tape& tape, Tape::Id y, std::vector<int> axes);

}  // namespace tlra
