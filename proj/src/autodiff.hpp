#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "einsum.hpp"
#include "tensor.hpp"

namespace tlra {

// Tape-based reverse-mode autodiff. Nodes are append-only, so reverse node
// order is a valid reverse topological order. Leaves are explicit cut
// points: backward accumulates into leaves and stops there, which is what
// the 3-phase training schedule needs. Constants never receive gradients
// and subgraphs that cannot reach a leaf are skipped entirely.
class Tape {
public:
    using Id = int32_t;
    using GradMap = std::map<Id, Tensor>;

    Id leaf(Tensor value);
    Id constant(Tensor value);

    const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    int64_t num_nodes() const { return static_cast<int64_t>(nodes_.size()); }
    int64_t live_value_bytes() const;

    // elementwise / scalar
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, double c);
    Id add_bias(Id x, Id bias);  // bias is rank 1 over the last axis

    // structure
    Id einsum_op(const EinsumSpec& spec, std::vector<Id> operands);
    Id einsum_op(std::string_view subscripts, std::vector<Id> operands);
    Id concat(const std::vector<Id>& parts, int axis);
    std::vector<Id> split(Id x, int axis, const std::vector<int64_t>& sizes);
    Id slice(Id x, int axis, int64_t start, int64_t len);
    Id reshape(Id x, Shape shape);
    Id permute(Id x, std::vector<int> perm);
    Id transpose(Id x, int a, int b);
    Id diag_extract(Id x, int ax1, int ax2);  // keeps ax1 as the diagonal index
    Id diag_embed(Id x, int ax);              // inserts a matching axis after ax
    Id take_rows(Id x, int axis, std::vector<int64_t> indices);

    // reductions / broadcasts
    Id mean(Id x, int axis, bool keepdim);
    Id expand(Id x, int axis, int64_t n);  // axis must currently have length 1
    Id sum_all(Id x);
    Id mean_all(Id x);

    // nonlinearities / losses
    Id gelu(Id x);  // tanh approximation
    Id l2_normalize(Id x, int axis, double eps);
    Id softmax(Id x, int axis);
    // logits (..., V); targets/weights flat over the leading positions
    Id cross_entropy_logits(Id logits, std::vector<int64_t> targets, std::vector<float> weights);

    GradMap backward(Id root, const std::vector<Id>& leaves);
    GradMap backward_multi(const std::vector<Id>& outputs, const std::vector<Tensor>& upstream,
                           const std::vector<Id>& leaves);

private:
    using Vjp = std::function<std::vector<Tensor>(const Tensor& g, const Tape& tape, Id self)>;
    struct Node {
        Tensor value;
        std::vector<Id> parents;
        Vjp vjp;
        bool requires_grad = false;
        const char* op = "";
    };
    std::vector<Node> nodes_;

    Id push(Tensor value, std::vector<Id> parents, Vjp vjp, const char* op);
    bool any_requires(const std::vector<Id>& ids) const;
};

// Gradient of upstream through a function built on a fresh tape: runs
// `build`, seeds its outputs with `upstream`, and returns gradients for the
// inputs `build` registered as leaves. This is the slice-of-backward used by
// phase 3 of the training schedule.
Tape::GradMap vjp_through(
    const std::function<std::vector<Tape::Id>(Tape&, std::vector<Tape::Id>&)>& build,
    const std::vector<Tensor>& inputs, const std::vector<Tensor>& upstream);

// Tensor-level helpers shared with forward-only code paths.
Tensor concat_axis(const std::vector<Tensor>& parts, int axis);
Tensor slice_axis(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim);
Tensor expand_axis(const Tensor& x, int axis, int64_t n);
Tensor sum_axis_keepdim(const Tensor& x, int axis);
Tensor diag_extract_t(const Tensor& x, int ax1, int ax2);
Tensor diag_embed_t(const Tensor& x, int ax);
Tensor take_rows_t(const Tensor& x, int axis, std::span<const int64_t> indices);
Tensor gelu_t(const Tensor& x);
Tensor softmax_t(const Tensor& x, int axis);
Tensor l2_normalize_t(const Tensor& x, int axis, double eps);

}  // namespace tlra
