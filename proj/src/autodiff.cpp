#include "autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace tlra {

namespace {

int norm_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) fail_usage("axis out of range");
    return axis;
}

// outer/inner extents around an axis for strided loops
struct AxisSplit {
    int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit axis_split(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    s.n = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor concat_axis(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) fail_usage("concat of zero tensors");
    int rank = parts[0].rank();
    axis = norm_axis(axis, rank);
    Shape out_shape = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) fail_usage("concat rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
                fail_usage("concat shape mismatch off the concat axis");
        total += p.shape()[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out(out_shape);
    auto os = axis_split(out_shape, axis);
    int64_t offset = 0;
    for (const auto& p : parts) {
        auto ps = axis_split(p.shape(), axis);
        for (int64_t o = 0; o < ps.outer; ++o)
            std::memcpy(out.data() + (o * os.n + offset) * os.inner, p.data() + o * ps.n * ps.inner,
                        static_cast<size_t>(ps.n * ps.inner) * sizeof(float));
        offset += ps.n;
    }
    return out;
}

Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    if (start < 0 || len <= 0 || start + len > s.n) fail_usage("slice out of range");
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out(out_shape);
    for (int64_t o = 0; o < s.outer; ++o)
        std::memcpy(out.data() + o * len * s.inner, x.data() + (o * s.n + start) * s.inner,
                    static_cast<size_t>(len * s.inner) * sizeof(float));
    return out;
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    Shape out_shape = x.shape();
    if (keepdim)
        out_shape[static_cast<size_t>(axis)] = 1;
    else
        out_shape.erase(out_shape.begin() + axis);
    Tensor out(out_shape.empty() ? Shape{} : out_shape);
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            double acc = 0.0;
            for (int64_t k = 0; k < s.n; ++k) acc += x[(o * s.n + k) * s.inner + i];
            out[o * s.inner + i] = static_cast<float>(acc / static_cast<double>(s.n));
        }
    return out;
}

Tensor sum_axis_keepdim(const Tensor& x, int axis) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = 1;
    Tensor out(out_shape);
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            double acc = 0.0;
            for (int64_t k = 0; k < s.n; ++k) acc += x[(o * s.n + k) * s.inner + i];
            out[o * s.inner + i] = static_cast<float>(acc);
        }
    return out;
}

Tensor expand_axis(const Tensor& x, int axis, int64_t n) {
    axis = norm_axis(axis, x.rank());
    if (x.shape()[static_cast<size_t>(axis)] != 1) fail_usage("expand requires a unit axis");
    auto s = axis_split(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = n;
    Tensor out(out_shape);
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t k = 0; k < n; ++k)
            std::memcpy(out.data() + (o * n + k) * s.inner, x.data() + o * s.inner,
                        static_cast<size_t>(s.inner) * sizeof(float));
    return out;
}

Tensor diag_extract_t(const Tensor& x, int ax1, int ax2) {
    int rank = x.rank();
    ax1 = norm_axis(ax1, rank);
    ax2 = norm_axis(ax2, rank);
    if (ax1 == ax2) fail_usage("diag_extract needs two distinct axes");
    if (ax1 > ax2) std::swap(ax1, ax2);
    int64_t n = x.shape()[static_cast<size_t>(ax1)];
    if (x.shape()[static_cast<size_t>(ax2)] != n) fail_usage("diag_extract axes must have equal length");
    Shape out_shape;
    for (int i = 0; i < rank; ++i)
        if (i != ax2) out_shape.push_back(x.shape()[static_cast<size_t>(i)]);
    Tensor out(out_shape);
    auto xs = x.strides();
    std::vector<int64_t> idx(out_shape.size(), 0);
    for (int64_t flat = 0; flat < out.size(); ++flat) {
        int64_t off = 0;
        for (int i = 0, oi = 0; i < rank; ++i) {
            if (i == ax2) {
                off += idx[static_cast<size_t>(ax1 > ax2 ? ax1 - 1 : ax1)] * xs[static_cast<size_t>(i)];
            } else {
                off += idx[static_cast<size_t>(oi)] * xs[static_cast<size_t>(i)];
                ++oi;
            }
        }
        out[flat] = x[off];
        for (int i = static_cast<int>(idx.size()) - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

Tensor diag_embed_t(const Tensor& x, int ax) {
    int rank = x.rank();
    ax = norm_axis(ax, rank);
    int64_t n = x.shape()[static_cast<size_t>(ax)];
    Shape out_shape = x.shape();
    out_shape.insert(out_shape.begin() + ax + 1, n);
    Tensor out(out_shape);
    auto s = axis_split(x.shape(), ax);
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t k = 0; k < n; ++k)
            std::memcpy(out.data() + ((o * n + k) * n + k) * s.inner, x.data() + (o * n + k) * s.inner,
                        static_cast<size_t>(s.inner) * sizeof(float));
    return out;
}

Tensor take_rows_t(const Tensor& x, int axis, std::span<const int64_t> indices) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
    Tensor out(out_shape);
    for (int64_t o = 0; o < s.outer; ++o)
        for (size_t k = 0; k < indices.size(); ++k) {
            int64_t src = indices[k];
            if (src < 0 || src >= s.n) fail_usage("take_rows index out of range");
            std::memcpy(out.data() + (o * static_cast<int64_t>(indices.size()) + static_cast<int64_t>(k)) * s.inner,
                        x.data() + (o * s.n + src) * s.inner, static_cast<size_t>(s.inner) * sizeof(float));
        }
    return out;
}

static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
static constexpr double kGeluA = 0.044715;

Tensor gelu_t(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        out[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))));
    }
    return out;
}

Tensor softmax_t(const Tensor& x, int axis) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    Tensor out(x.shape());
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            double mx = -1e300;
            for (int64_t k = 0; k < s.n; ++k) mx = std::max(mx, static_cast<double>(x[(o * s.n + k) * s.inner + i]));
            double z = 0.0;
            for (int64_t k = 0; k < s.n; ++k) z += std::exp(static_cast<double>(x[(o * s.n + k) * s.inner + i]) - mx);
            for (int64_t k = 0; k < s.n; ++k)
                out[(o * s.n + k) * s.inner + i] =
                    static_cast<float>(std::exp(static_cast<double>(x[(o * s.n + k) * s.inner + i]) - mx) / z);
        }
    return out;
}

Tensor l2_normalize_t(const Tensor& x, int axis, double eps) {
    axis = norm_axis(axis, x.rank());
    auto s = axis_split(x.shape(), axis);
    Tensor out(x.shape());
    for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < s.inner; ++i) {
            double nrm = 0.0;
            for (int64_t k = 0; k < s.n; ++k) {
                double v = x[(o * s.n + k) * s.inner + i];
                nrm += v * v;
            }
            double d = std::max(std::sqrt(nrm), eps);
            for (int64_t k = 0; k < s.n; ++k)
                out[(o * s.n + k) * s.inner + i] = static_cast<float>(x[(o * s.n + k) * s.inner + i] / d);
        }
    return out;
}

// --- Tape ----------------------------------------------------------------

Tape::Id Tape::push(Tensor value, std::vector<Id> parents, Vjp vjp, const char* op) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_requires(parents);
    n.parents = std::move(parents);
    n.vjp = std::move(vjp);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

bool Tape::any_requires(const std::vector<Id>& ids) const {
    for (Id id : ids)
        if (nodes_[static_cast<size_t>(id)].requires_grad) return true;
    return false;
}

int64_t Tape::live_value_bytes() const {
    int64_t total = 0;
    for (const auto& n : nodes_) total += n.value.size() * static_cast<int64_t>(sizeof(float));
    return total;
}

Tape::Id Tape::leaf(Tensor value) {
    Id id = push(std::move(value), {}, nullptr, "leaf");
    nodes_[static_cast<size_t>(id)].requires_grad = true;
    return id;
}

Tape::Id Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr, "const"); }

Tape::Id Tape::add(Id a, Id b) {
    return push(tlra::add(value(a), value(b)), {a, b},
                [](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{g, g}; }, "add");
}

Tape::Id Tape::sub(Id a, Id b) {
    return push(tlra::sub(value(a), value(b)), {a, b},
                [](const Tensor& g, const Tape&, Id) {
                    return std::vector<Tensor>{g, tlra::scale(g, -1.0)};
                },
                "sub");
}

Tape::Id Tape::mul(Id a, Id b) {
    return push(tlra::mul(value(a), value(b)), {a, b},
                [](const Tensor& g, const Tape& t, Id self) {
                    const auto& node = t.nodes_[static_cast<size_t>(self)];
                    return std::vector<Tensor>{tlra::mul(g, t.value(node.parents[1])),
                                               tlra::mul(g, t.value(node.parents[0]))};
                },
                "mul");
}

Tape::Id Tape::scale(Id a, double c) {
    return push(tlra::scale(value(a), c), {a},
                [c](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{tlra::scale(g, c)}; }, "scale");
}

Tape::Id Tape::add_bias(Id x, Id bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (bv.rank() != 1 || bv.size() != xv.shape().back()) fail_usage("add_bias: bias must match last axis");
    Tensor out(xv.shape());
    int64_t cols = bv.size();
    for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % cols];
    return push(std::move(out), {x, bias},
                [cols](const Tensor& g, const Tape&, Id) {
                    Tensor gb({cols});
                    std::vector<double> acc(static_cast<size_t>(cols), 0.0);
                    for (int64_t i = 0; i < g.size(); ++i) acc[static_cast<size_t>(i % cols)] += g[i];
                    for (int64_t i = 0; i < cols; ++i) gb[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
                    return std::vector<Tensor>{g, gb};
                },
                "add_bias");
}

// Cotangent for one einsum operand: contract the upstream gradient with the
// other operands, then restore diagonals/broadcasts of the operand's term.
static Tensor einsum_operand_grad(const EinsumSpec& spec, const std::vector<Tensor>& values, size_t index,
                                  const Tensor& g) {
    std::vector<Shape> shapes;
    for (const auto& v : values) shapes.push_back(v.shape());
    auto sizes = spec.label_sizes(shapes);

    EinsumSpec vspec;
    std::vector<Tensor> vops;
    vspec.inputs.push_back(spec.output);
    vops.push_back(g);
    for (size_t j = 0; j < values.size(); ++j) {
        if (j == index) continue;
        vspec.inputs.push_back(spec.inputs[j]);
        vops.push_back(values[j]);
    }
    std::string present;
    for (const auto& t : vspec.inputs)
        for (char c : t)
            if (present.find(c) == std::string::npos) present.push_back(c);

    const std::string& term = spec.inputs[index];
    std::string target;
    for (char c : term)
        if (target.find(c) == std::string::npos && present.find(c) != std::string::npos) target.push_back(c);
    vspec.output = target;
    Tensor gu = contract(vspec, vops);
    return embed_to_term(gu, target, term, sizes);
}

Tape::Id Tape::einsum_op(const EinsumSpec& spec, std::vector<Id> operands) {
    std::vector<Tensor> vals;
    for (Id id : operands) vals.push_back(value(id));
    Tensor out = contract(spec, vals);
    return push(std::move(out), operands,
                [spec](const Tensor& g, const Tape& t, Id self) {
                    const auto& node = t.nodes_[static_cast<size_t>(self)];
                    std::vector<Tensor> vals;
                    for (Id p : node.parents) vals.push_back(t.value(p));
                    std::vector<Tensor> grads;
                    for (size_t i = 0; i < node.parents.size(); ++i) {
                        if (!t.nodes_[static_cast<size_t>(node.parents[i])].requires_grad) {
                            grads.emplace_back();  // skipped by accumulator
                        } else {
                            grads.push_back(einsum_operand_grad(spec, vals, i, g));
                        }
                    }
                    return grads;
                },
                "einsum");
}

Tape::Id Tape::einsum_op(std::string_view subscripts, std::vector<Id> operands) {
    return einsum_op(EinsumSpec::parse(subscripts), std::move(operands));
}

Tape::Id Tape::concat(const std::vector<Id>& parts, int axis) {
    std::vector<Tensor> vals;
    for (Id id : parts) vals.push_back(value(id));
    Tensor out = concat_axis(vals, axis);
    int ax = norm_axis(axis, out.rank());
    std::vector<int64_t> sizes;
    for (const auto& v : vals) sizes.push_back(v.shape()[static_cast<size_t>(ax)]);
    return push(std::move(out), parts,
                [ax, sizes](const Tensor& g, const Tape&, Id) {
                    std::vector<Tensor> grads;
                    int64_t off = 0;
                    for (int64_t n : sizes) {
                        grads.push_back(slice_axis(g, ax, off, n));
                        off += n;
                    }
                    return grads;
                },
                "concat");
}

std::vector<Tape::Id> Tape::split(Id x, int axis, const std::vector<int64_t>& sizes) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    int64_t total = 0;
    for (int64_t n : sizes) total += n;
    if (total != xv.shape()[static_cast<size_t>(ax)]) fail_usage("split sizes do not cover the axis");
    std::vector<Id> out;
    int64_t off = 0;
    for (int64_t n : sizes) {
        out.push_back(slice(x, ax, off, n));
        off += n;
    }
    return out;
}

Tape::Id Tape::slice(Id x, int axis, int64_t start, int64_t len) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    Shape full = xv.shape();
    return push(slice_axis(xv, ax, start, len), {x},
                [ax, start, full](const Tensor& g, const Tape&, Id) {
                    Tensor gx(full);
                    auto s = axis_split(full, ax);
                    int64_t len = g.shape()[static_cast<size_t>(ax)];
                    for (int64_t o = 0; o < s.outer; ++o)
                        std::memcpy(gx.data() + (o * s.n + start) * s.inner, g.data() + o * len * s.inner,
                                    static_cast<size_t>(len * s.inner) * sizeof(float));
                    return std::vector<Tensor>{gx};
                },
                "slice");
}

Tape::Id Tape::reshape(Id x, Shape shape) {
    Shape orig = value(x).shape();
    return push(value(x).reshape(std::move(shape)), {x},
                [orig](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{g.reshape(orig)}; }, "reshape");
}

Tape::Id Tape::permute(Id x, std::vector<int> perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return push(value(x).permute(perm), {x},
                [inv](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{g.permute(inv)}; }, "permute");
}

Tape::Id Tape::transpose(Id x, int a, int b) {
    int rank = value(x).rank();
    a = norm_axis(a, rank);
    b = norm_axis(b, rank);
    std::vector<int> perm(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(a)], perm[static_cast<size_t>(b)]);
    return permute(x, perm);
}

Tape::Id Tape::diag_extract(Id x, int ax1, int ax2) {
    int rank = value(x).rank();
    ax1 = norm_axis(ax1, rank);
    ax2 = norm_axis(ax2, rank);
    if (ax1 > ax2) std::swap(ax1, ax2);
    if (ax2 != ax1 + 1) fail_usage("diag_extract expects adjacent axes");  // all uses are adjacent
    return push(diag_extract_t(value(x), ax1, ax2), {x},
                [ax1](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{diag_embed_t(g, ax1)}; },
                "diag_extract");
}

Tape::Id Tape::diag_embed(Id x, int ax) {
    int rank = value(x).rank();
    ax = norm_axis(ax, rank);
    return push(diag_embed_t(value(x), ax), {x},
                [ax](const Tensor& g, const Tape&, Id) {
                    return std::vector<Tensor>{diag_extract_t(g, ax, ax + 1)};
                },
                "diag_embed");
}

Tape::Id Tape::take_rows(Id x, int axis, std::vector<int64_t> indices) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    Shape full = xv.shape();
    return push(take_rows_t(xv, ax, indices), {x},
                [ax, indices, full](const Tensor& g, const Tape&, Id) {
                    Tensor gx(full);  // zeros; scatter-add rows
                    auto s = axis_split(full, ax);
                    int64_t rn = static_cast<int64_t>(indices.size());
                    for (int64_t o = 0; o < s.outer; ++o)
                        for (int64_t k = 0; k < rn; ++k) {
                            float* dst = gx.data() + (o * s.n + indices[static_cast<size_t>(k)]) * s.inner;
                            const float* src = g.data() + (o * rn + k) * s.inner;
                            for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                        }
                    return std::vector<Tensor>{gx};
                },
                "take_rows");
}

Tape::Id Tape::mean(Id x, int axis, bool keepdim) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    auto s = axis_split(xv.shape(), ax);
    Shape full = xv.shape();
    return push(mean_axis(xv, ax, keepdim), {x},
                [ax, s, full, keepdim](const Tensor& g, const Tape&, Id) {
                    Tensor gk = g;
                    if (!keepdim) {
                        Shape withone = full;
                        withone[static_cast<size_t>(ax)] = 1;
                        gk = g.reshape(withone);
                    }
                    Tensor gx = expand_axis(gk, ax, s.n);
                    return std::vector<Tensor>{tlra::scale(gx, 1.0 / static_cast<double>(s.n))};
                },
                "mean");
}

Tape::Id Tape::expand(Id x, int axis, int64_t n) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    return push(expand_axis(xv, ax, n), {x},
                [ax](const Tensor& g, const Tape&, Id) { return std::vector<Tensor>{sum_axis_keepdim(g, ax)}; },
                "expand");
}

Tape::Id Tape::sum_all(Id x) {
    const Tensor& xv = value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
    Shape full = xv.shape();
    return push(Tensor::scalar(static_cast<float>(acc)), {x},
                [full](const Tensor& g, const Tape&, Id) {
                    return std::vector<Tensor>{Tensor::full(full, g.item())};
                },
                "sum_all");
}

Tape::Id Tape::mean_all(Id x) {
    Id s = sum_all(x);
    return scale(s, 1.0 / static_cast<double>(value(x).size()));
}

Tape::Id Tape::gelu(Id x) {
    return push(gelu_t(value(x)), {x},
                [](const Tensor& g, const Tape& t, Id self) {
                    const Tensor& xv = t.value(t.nodes_[static_cast<size_t>(self)].parents[0]);
                    Tensor gx(xv.shape());
                    for (int64_t i = 0; i < xv.size(); ++i) {
                        double v = xv[i];
                        double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                        double d = 0.5 * (1.0 + th) +
                                   0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                        gx[i] = static_cast<float>(g[i] * d);
                    }
                    return std::vector<Tensor>{gx};
                },
                "gelu");
}

Tape::Id Tape::l2_normalize(Id x, int axis, double eps) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    return push(l2_normalize_t(xv, ax, eps), {x},
                [ax, eps](const Tensor& g, const Tape& t, Id self) {
                    const Tensor& xv = t.value(t.nodes_[static_cast<size_t>(self)].parents[0]);
                    auto s = axis_split(xv.shape(), ax);
                    Tensor gx(xv.shape());
                    for (int64_t o = 0; o < s.outer; ++o)
                        for (int64_t i = 0; i < s.inner; ++i) {
                            double nrm2 = 0.0, dot = 0.0;
                            for (int64_t k = 0; k < s.n; ++k) {
                                int64_t off = (o * s.n + k) * s.inner + i;
                                nrm2 += static_cast<double>(xv[off]) * xv[off];
                                dot += static_cast<double>(xv[off]) * g[off];
                            }
                            double nrm = std::sqrt(nrm2);
                            if (nrm >= eps) {
                                for (int64_t k = 0; k < s.n; ++k) {
                                    int64_t off = (o * s.n + k) * s.inner + i;
                                    gx[off] = static_cast<float>(g[off] / nrm - xv[off] * dot / (nrm2 * nrm));
                                }
                            } else {
                                for (int64_t k = 0; k < s.n; ++k) {
                                    int64_t off = (o * s.n + k) * s.inner + i;
                                    gx[off] = static_cast<float>(g[off] / eps);
                                }
                            }
                        }
                    return std::vector<Tensor>{gx};
                },
                "l2_normalize");
}

Tape::Id Tape::softmax(Id x, int axis) {
    const Tensor& xv = value(x);
    int ax = norm_axis(axis, xv.rank());
    return push(softmax_t(xv, ax), {x},
                [ax](const Tensor& g, const Tape& t, Id self) {
                    const Tensor& y = t.value(self);
                    auto s = axis_split(y.shape(), ax);
                    Tensor gx(y.shape());
                    for (int64_t o = 0; o < s.outer; ++o)
                        for (int64_t i = 0; i < s.inner; ++i) {
                            double dot = 0.0;
                            for (int64_t k = 0; k < s.n; ++k) {
                                int64_t off = (o * s.n + k) * s.inner + i;
                                dot += static_cast<double>(g[off]) * y[off];
                            }
                            for (int64_t k = 0; k < s.n; ++k) {
                                int64_t off = (o * s.n + k) * s.inner + i;
                                gx[off] = static_cast<float>(y[off] * (g[off] - dot));
                            }
                        }
                    return std::vector<Tensor>{gx};
                },
                "softmax");
}

Tape::Id Tape::cross_entropy_logits(Id logits, std::vector<int64_t> targets, std::vector<float> weights) {
    const Tensor& z = value(logits);
    if (z.rank() < 1) fail_usage("cross_entropy_logits needs a class axis");
    int64_t vocab = z.shape().back();
    int64_t rows = z.size() / vocab;
    if (static_cast<int64_t>(targets.size()) != rows || static_cast<int64_t>(weights.size()) != rows)
        fail_usage("cross_entropy_logits: targets/weights must cover leading positions");
    double wsum = 0.0;
    for (float w : weights) wsum += w;
    if (wsum <= 0.0) fail_usage("cross_entropy_logits: no weighted positions");

    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (weights[static_cast<size_t>(r)] == 0.0f) continue;
        const float* row = z.data() + r * vocab;
        double mx = -1e300;
        for (int64_t v = 0; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
        double lse = 0.0;
        for (int64_t v = 0; v < vocab; ++v) lse += std::exp(row[v] - mx);
        lse = std::log(lse) + mx;
        int64_t tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= vocab) fail_usage("cross_entropy_logits: target out of range");
        loss += weights[static_cast<size_t>(r)] * (lse - row[tgt]);
    }
    loss /= wsum;

    return push(Tensor::scalar(static_cast<float>(loss)), {logits},
                [targets, weights, wsum, vocab, rows](const Tensor& g, const Tape& t, Id self) {
                    const Tensor& z = t.value(t.nodes_[static_cast<size_t>(self)].parents[0]);
                    Tensor gx(z.shape());
                    double gs = g.item();
                    for (int64_t r = 0; r < rows; ++r) {
                        float w = weights[static_cast<size_t>(r)];
                        if (w == 0.0f) continue;
                        const float* row = z.data() + r * vocab;
                        float* grow = gx.data() + r * vocab;
                        double mx = -1e300;
                        for (int64_t v = 0; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
                        double zsum = 0.0;
                        for (int64_t v = 0; v < vocab; ++v) zsum += std::exp(row[v] - mx);
                        double coef = gs * w / wsum;
                        for (int64_t v = 0; v < vocab; ++v)
                            grow[v] = static_cast<float>(coef * (std::exp(row[v] - mx) / zsum));
                        grow[targets[static_cast<size_t>(r)]] -= static_cast<float>(coef);
                    }
                    return std::vector<Tensor>{gx};
                },
                "cross_entropy");
}

Tape::GradMap Tape::backward(Id root, const std::vector<Id>& leaves) {
    if (value(root).size() != 1) fail_usage("backward root must be scalar");
    return backward_multi({root}, {Tensor::scalar(1.0f)}, leaves);
}

Tape::GradMap Tape::backward_multi(const std::vector<Id>& outputs, const std::vector<Tensor>& upstream,
                                   const std::vector<Id>& leaves) {
    if (outputs.size() != upstream.size()) fail_usage("backward_multi: outputs/upstream size mismatch");
    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> has_grad(nodes_.size(), false);
    for (size_t i = 0; i < outputs.size(); ++i) {
        Id id = outputs[i];
        if (!upstream[i].same_shape(value(id))) fail_usage("backward_multi: upstream shape mismatch");
        if (has_grad[static_cast<size_t>(id)])
            grads[static_cast<size_t>(id)] = tlra::add(grads[static_cast<size_t>(id)], upstream[i]);
        else {
            grads[static_cast<size_t>(id)] = upstream[i];
            has_grad[static_cast<size_t>(id)] = true;
        }
    }
    for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
        auto& node = nodes_[static_cast<size_t>(id)];
        if (!has_grad[static_cast<size_t>(id)] || !node.requires_grad || !node.vjp) continue;
        std::vector<Tensor> pgrads = node.vjp(grads[static_cast<size_t>(id)], *this, id);
        if (pgrads.size() != node.parents.size()) fail("vjp arity mismatch for op " + std::string(node.op));
        for (size_t p = 0; p < node.parents.size(); ++p) {
            Id pid = node.parents[p];
            if (!nodes_[static_cast<size_t>(pid)].requires_grad) continue;  // placeholder grads never land
            if (!pgrads[p].same_shape(value(pid))) fail("vjp shape mismatch for op " + std::string(node.op));
            if (has_grad[static_cast<size_t>(pid)])
                grads[static_cast<size_t>(pid)] = tlra::add(grads[static_cast<size_t>(pid)], pgrads[p]);
            else {
                grads[static_cast<size_t>(pid)] = std::move(pgrads[p]);
                has_grad[static_cast<size_t>(pid)] = true;
            }
        }
    }
    GradMap out;
    for (Id leaf : leaves) {
        if (has_grad[static_cast<size_t>(leaf)])
            out[leaf] = grads[static_cast<size_t>(leaf)];
        else
            out[leaf] = Tensor::zeros(value(leaf).shape());
    }
    return out;
}

Tape::GradMap vjp_through(const std::function<std::vector<Tape::Id>(Tape&, std::vector<Tape::Id>&)>& build,
                          const std::vector<Tensor>& inputs, const std::vector<Tensor>& upstream) {
    Tape tape;
    std::vector<Tape::Id> leaf_ids;
    for (const auto& t : inputs) leaf_ids.push_back(tape.leaf(t));
    std::vector<Tape::Id> input_ids = leaf_ids;
    std::vector<Tape::Id> outputs = build(tape, input_ids);
    if (outputs.size() != upstream.size()) fail_usage("vjp_through: upstream count mismatch");
    return tape.backward_multi(outputs, upstream, leaf_ids);
}

}  // namespace tlra
