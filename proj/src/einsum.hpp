#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tlra {

// Parsed einsum subscript like "ab,bc->ac". Labels are single letters.
// Repeated labels inside one input term read the generalized diagonal;
// repeated output labels are rejected.
struct EinsumSpec {
    std::vector<std::string> inputs;
    std::string output;

    static EinsumSpec parse(std::string_view subscripts);
    std::string str() const;
    int operand_count() const { return static_cast<int>(inputs.size()); }

    // Binds every label to an axis length; fails on inconsistent operands.
    std::map<char, int64_t> label_sizes(const std::vector<Shape>& shapes) const;
    Shape output_shape(const std::map<char, int64_t>& sizes) const;
};

// Full contraction. One operand: diagonal/reduce/transpose directly. Two
// operands: a single pairwise contraction. Three or more: the definitional
// sum over the whole joint index space with a 64-bit accumulator.
Tensor einsum(const EinsumSpec& spec, std::span<const Tensor> operands);
Tensor einsum(std::string_view subscripts, std::span<const Tensor> operands);
Tensor einsum(std::string_view subscripts, std::initializer_list<Tensor> operands);

struct ContractionStep {
    int lhs = 0, rhs = 0;          // slot indices (operands first, then intermediates)
    std::string lhs_labels, rhs_labels, out_labels;
};

struct ContractionPlan {
    EinsumSpec spec;
    std::vector<Shape> shapes;
    std::vector<ContractionStep> steps;  // result of each step appends a slot
    double est_flops = 0.0;
    double naive_flops = 0.0;            // left-to-right pairwise estimate
    int max_intermediate_rank = 0;
};

// Greedy pairwise plan minimizing the per-step joint index space. Falls back
// to the left-to-right order if greedy would somehow cost more, so the
// returned plan never estimates above naive.
ContractionPlan plan_contraction(const EinsumSpec& spec, const std::vector<Shape>& shapes);

Tensor execute_plan(const ContractionPlan& plan, std::span<const Tensor> operands);

// Planner-backed contraction used on hot paths (>=3 operands); equals
// einsum() up to float reassociation.
Tensor contract(const EinsumSpec& spec, std::span<const Tensor> operands);

// Single pairwise contraction: diagonals reduced, lone labels summed out,
// then a batched matmul over (batch, free-a, contracted, free-b).
Tensor pairwise_contract(const std::string& a_labels, const Tensor& a,
                         const std::string& b_labels, const Tensor& b,
                         const std::string& out_labels);

// One-operand form: diagonal extraction, summing out, axis permutation.
Tensor single_contract(const std::string& labels, const Tensor& x, const std::string& out_labels);

// Re-layouts a tensor with unique axis labels onto a term that may repeat
// labels (values scatter to the generalized diagonal, zero elsewhere) or
// mention labels absent from `labels` (broadcast copies along a new axis).
Tensor embed_to_term(const Tensor& x, const std::string& labels, const std::string& term,
                     const std::map<char, int64_t>& sizes);

}  // namespace tlra
