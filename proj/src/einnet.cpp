#include "einnet.hpp"

#include <cmath>

namespace tlra {

PoolInfo pool_info(PoolKind kind) {
    switch (kind) {
        case PoolKind::A: return {4, 3, 1};
        case PoolKind::AA: return {8, 6, 2};
        case PoolKind::AB: return {8, 5, 2};
    }
    fail("bad pool kind");
}

const char* pool_name(PoolKind kind) {
    switch (kind) {
        case PoolKind::A: return "a";
        case PoolKind::AA: return "aa";
        case PoolKind::AB: return "ab";
    }
    fail("bad pool kind");
}

PoolKind pool_from_name(const std::string& name) {
    if (name == "a") return PoolKind::A;
    if (name == "aa") return PoolKind::AA;
    if (name == "ab") return PoolKind::AB;
    fail_usage("unknown pool kind '" + name + "' (expected a, aa or ab)");
}

static Tensor linear_init(int64_t rows, int64_t cols, int64_t fan_in, Rng& rng) {
    double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_tensor(cols > 0 ? Shape{rows, cols} : Shape{rows}, -k, k);
}

EinNetParams EinNetParams::init(const EinNetConfig& cfg, Rng& rng) {
    EinNetParams p;
    p.cfg = cfg;
    auto info = pool_info(cfg.pool);
    auto make_layer = [&](int in_ch, int out_ch) {
        EquivariantLayerParams l;
        int64_t mid_in = static_cast<int64_t>(cfg.nh0) * info.fan_in;
        int64_t mid_out = static_cast<int64_t>(cfg.nh0) * info.fan_out;
        l.w_in = linear_init(mid_in, in_ch, in_ch, rng);
        l.b_in = linear_init(mid_in, 0, in_ch, rng);
        l.w_out = linear_init(out_ch, mid_out, mid_out, rng);
        l.b_out = linear_init(out_ch, 0, mid_out, rng);
        return l;
    };
    p.layers.push_back(make_layer(cfg.ninput, cfg.nh));
    for (int i = 1; i < cfg.nstacks; ++i) p.layers.push_back(make_layer(cfg.nh, cfg.nh));
    p.layers.push_back(make_layer(cfg.nh, cfg.noutput));
    return p;
}

void EinNetParams::zero_output_head() {
    auto& last = layers.back();
    last.w_out = Tensor::zeros(last.w_out.shape());
    last.b_out = Tensor::zeros(last.b_out.shape());
}

std::vector<std::pair<std::string, Tensor*>> EinNetParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        std::string base = "layer" + std::to_string(i) + ".";
        out.emplace_back(base + "w_in", &layers[i].w_in);
        out.emplace_back(base + "b_in", &layers[i].b_in);
        out.emplace_back(base + "w_out", &layers[i].w_out);
        out.emplace_back(base + "b_out", &layers[i].b_out);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> EinNetParams::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<EinNetParams*>(this)->named_params()) out.emplace_back(name, t);
    return out;
}

BoundEinNet bind_einnet(Tape& tape, const EinNetParams& params, bool as_leaf) {
    BoundEinNet net;
    net.cfg = params.cfg;
    for (const auto& l : params.layers) {
        BoundEinNet::Layer bl;
        auto bind = [&](const Tensor& t) { return as_leaf ? tape.leaf(t) : tape.constant(t); };
        bl.w_in = bind(l.w_in);
        bl.b_in = bind(l.b_in);
        bl.w_out = bind(l.w_out);
        bl.b_out = bind(l.b_out);
        if (as_leaf) {
            net.leaf_ids.push_back(bl.w_in);
            net.leaf_ids.push_back(bl.b_in);
            net.leaf_ids.push_back(bl.w_out);
            net.leaf_ids.push_back(bl.b_out);
        }
        net.layers.push_back(bl);
    }
    return net;
}

// x: (..., C_in) times w: (C_out, C_in) on the last axis
static Tape::Id linear_last_axis(Tape& tape, Tape::Id x, Tape::Id w, Tape::Id b) {
    int rank = tape.value(x).rank();
    std::string xl, ol;
    for (int i = 0; i + 1 < rank; ++i) {
        xl.push_back(static_cast<char>('a' + i));
        ol.push_back(static_cast<char>('a' + i));
    }
    xl.push_back('h');
    ol.push_back('o');
    EinsumSpec spec;
    spec.inputs = {xl, "oh"};
    spec.output = ol;
    return tape.add_bias(tape.einsum_op(spec, {x, w}), b);
}

static Tape::Id pool_a_forward(Tape& tape, Tape::Id x) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() < 2) fail_usage("pool_a input needs at least 2 axes");
    int64_t C = xv.shape().back();
    if (C % 4 != 0) fail_usage("pool_a channel count must be divisible by 4");
    int64_t H = C / 4;
    int64_t N = xv.shape()[static_cast<size_t>(xv.rank() - 2)];
    auto g = tape.split(x, -1, {H, H, H, H});
    Tape::Id y0 = g[0];
    Tape::Id y1 = tape.expand(tape.mean(g[1], -2, true), -2, N);
    Tape::Id y2 = tape.mul(g[2], g[3]);
    return tape.concat({y0, y1, y2}, -1);
}

// mean-subtract over the flattened N*M axis per channel, then L2-normalize
// along it; exactly the reference normalization
static Tape::Id normalized_view(Tape& tape, Tape::Id x4, int64_t B, int64_t N, int64_t M, int64_t C, double eps) {
    Tape::Id flat = tape.reshape(x4, {B, N * M, C});
    Tape::Id mu = tape.expand(tape.mean(flat, 1, true), 1, N * M);
    Tape::Id centered = tape.sub(flat, mu);
    Tape::Id normed = tape.l2_normalize(centered, 1, eps);
    return tape.reshape(normed, {B, N, M, C});
}

static Tape::Id pool_2d_forward(Tape& tape, PoolKind kind, Tape::Id x, double eps) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() < 3) fail_usage("2d pooling input needs at least 3 axes");
    int64_t C = xv.shape().back();
    int64_t M = xv.shape()[static_cast<size_t>(xv.rank() - 2)];
    int64_t N = xv.shape()[static_cast<size_t>(xv.rank() - 3)];
    if (C % 8 != 0) fail_usage("2d pooling channel count must be divisible by 8");
    if (kind == PoolKind::AA && N != M) fail_usage("pool_aa needs square symmetric axes");
    int64_t H = C / 8;
    Shape orig = xv.shape();
    int64_t B = xv.size() / (N * M * C);

    Tape::Id x4 = tape.reshape(x, {B, N, M, C});
    Tape::Id xn = normalized_view(tape, x4, B, N, M, C, eps);
    auto g = tape.split(x4, -1, std::vector<int64_t>(8, H));
    auto gn = tape.split(xn, -1, std::vector<int64_t>(8, H));

    std::vector<Tape::Id> ys;
    if (kind == PoolKind::AA) {
        ys.push_back(g[0]);
        ys.push_back(tape.diag_embed(tape.diag_extract(g[1], 1, 2), 1));
        ys.push_back(tape.transpose(g[2], 1, 2));
        ys.push_back(tape.expand(tape.mean(g[3], 2, true), 2, M));
        ys.push_back(tape.mul(g[4], g[5]));
        ys.push_back(tape.einsum_op("zabh,zbch->zach", {gn[6], g[7]}));
    } else {
        ys.push_back(g[0]);
        ys.push_back(tape.expand(tape.mean(g[1], 2, true), 2, M));
        ys.push_back(tape.expand(tape.mean(g[2], 1, true), 1, N));
        ys.push_back(tape.mul(gn[3], g[4]));
        ys.push_back(tape.einsum_op("zach,zbch,zadh->zbdh", {gn[5], gn[6], g[7]}));
    }
    Tape::Id y = tape.concat(ys, -1);
    Shape out_shape = orig;
    out_shape.back() = tape.value(y).shape().back();
    return tape.reshape(y, out_shape);
}

Tape::Id pool_forward(Tape& tape, PoolKind kind, Tape::Id x, double eps_aa, double eps_ab) {
    switch (kind) {
        case PoolKind::A: return pool_a_forward(tape, x);
        case PoolKind::AA: return pool_2d_forward(tape, kind, x, eps_aa);
        case PoolKind::AB: return pool_2d_forward(tape, kind, x, eps_ab);
    }
    fail("bad pool kind");
}

Tape::Id equivariant_layer(Tape& tape, const BoundEinNet& net, int layer, Tape::Id x) {
    const auto& l = net.layers[static_cast<size_t>(layer)];
    Tape::Id h = linear_last_axis(tape, x, l.w_in, l.b_in);
    h = pool_forward(tape, net.cfg.pool, h, net.cfg.eps_aa, net.cfg.eps_ab);
    return linear_last_axis(tape, h, l.w_out, l.b_out);
}

Tape::Id einnet_forward(Tape& tape, const BoundEinNet& net, Tape::Id x) {
    Tape::Id h = equivariant_layer(tape, net, 0, x);
    int n_layers = static_cast<int>(net.layers.size());
    for (int i = 1; i + 1 < n_layers; ++i) h = tape.add(h, equivariant_layer(tape, net, i, tape.gelu(h)));
    return equivariant_layer(tape, net, n_layers - 1, tape.gelu(h));
}

Tape::Id invariant_readout(Tape& tape, Tape::Id y, std::vector<int> axes) {
    int rank = tape.value(y).rank();
    for (auto& a : axes) {
        if (a < 0) a += rank;
        if (a < 0 || a >= rank) fail_usage("invariant_readout axis out of range");
    }
    std::sort(axes.rbegin(), axes.rend());
    Tape::Id cur = y;
    for (int a : axes) cur = tape.mean(cur, a, false);
    return cur;
}

}  // namespace tlra
