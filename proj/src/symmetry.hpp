#pragma once

#include <optional>
#include <string>
#include <vector>

#include "einsum.hpp"
#include "tensor.hpp"

namespace tlra {

enum class AxisKind { Perm, Latent, Batch };

struct SymmetryAxis {
    char label;
    AxisKind kind;
    int group = -1;  // permutation class; equal group ids permute jointly
};

// Parsed symmetry notation: lowercase letters are permutable axes (repeated
// letters permute jointly), 'H' is a latent axis, 'Z' a batch axis.
// Dependencies express "list of lists": child-axis indices are only
// comparable between terms that agree on the parent axis.
struct SymmetryType {
    std::string notation;
    std::vector<SymmetryAxis> axes;
    int num_groups = 0;
    std::vector<std::pair<int, int>> dependencies;  // parent group -> child group

    static SymmetryType parse(std::string_view s);
    void add_dependency(char parent, char child);

    std::vector<int> perm_slots() const;          // axis positions of perm axes
    std::vector<int> slot_groups() const;         // group id per perm slot
    int group_of(char label) const;
    bool has_latent() const;
    bool has_batch() const;
};

// Orbit basis of the order-k Taylor coefficient hypercube under the type's
// permutation action. Patterns are exact 0/1 orbit indicators over the
// (slots*order)-dimensional coefficient index space with every axis of
// length n. dof == number of orbits. When the flattened space is small
// enough, an independent numeric route (SVD null space of the constraint
// stack, threshold 1e-8) cross-checks the count.
struct CoefficientBasis {
    int order = 0;
    int64_t n = 0;
    Shape pattern_shape;
    std::vector<Tensor> patterns;
    int dof = 0;
    bool numeric_checked = false;
    int numeric_nullity = -1;
};

CoefficientBasis solve_coefficient_basis(const SymmetryType& sym, int order, int64_t n);

// Orbit counting with the full permutation group enumerated element by
// element; only feasible for small n, used to validate the generator route.
int orbit_count_full_group(const SymmetryType& sym, int order, int64_t n);

// Null-space dimension from constraints stacked over the full group instead
// of the transposition generating set.
int numeric_nullity_full_group(const SymmetryType& sym, int order, int64_t n);

// One admissible einsum pooling operation. Terms cover the perm slots only;
// notation() appends H/Z per the symmetry type. Output labels absent from
// the inputs broadcast; repeated output labels embed a diagonal.
struct PoolingOp {
    SymmetryType sym;
    std::vector<std::string> inputs;
    std::string output;

    int order() const { return static_cast<int>(inputs.size()); }
    std::string notation() const;   // e.g. "abH,cbH,cdH->adH"
    std::string key() const;        // terms only, e.g. "ab,cb,cd->ad"
};

// Steps 1-5 of the pooling-op recipe plus a bounded composition-minimality
// pass standing in for the open graph-homomorphism dedup. Rows the paper
// marks "No need" and the order-5 abH entries come from a static table.
std::vector<PoolingOp> enumerate_pooling_ops(const SymmetryType& sym, int max_order);

// Canonical form of a pooling-op key under per-class label renaming and
// input-term reordering; two keys denote the same op iff they canonicalize
// identically.
std::string canonical_pooling_key(const SymmetryType& sym, const std::string& key);

// Filter predicates, exposed for direct testing.
bool is_breakable(const SymmetryType& sym, const std::vector<std::string>& inputs, const std::string& output);
bool satisfies_dependency(const SymmetryType& sym, const std::vector<std::string>& inputs, const std::string& output,
                          char parent, char child);

// Sum-semantics evaluation of a pooling op on explicit operands (perm axes
// first, then the latent axis when the type has one).
Tensor apply_pooling_op(const PoolingOp& op, std::span<const Tensor> operands);

// Max over trials of ||P(op(x)) - op(P(x))||_inf on unit-scale inputs.
double check_equivariance(const PoolingOp& op, int trials, Rng& rng);

}  // namespace tlra
