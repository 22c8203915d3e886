#include "einsum.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace tlra {

EinsumSpec EinsumSpec::parse(std::string_view s) {
    EinsumSpec spec;
    auto arrow = s.find("->");
    if (arrow == std::string_view::npos) fail_usage("einsum spec needs '->': " + std::string(s));
    std::string_view lhs = s.substr(0, arrow);
    spec.output = std::string(s.substr(arrow + 2));
    std::string cur;
    for (char c : lhs) {
        if (c == ',') {
            spec.inputs.push_back(cur);
            cur.clear();
        } else if (std::isalpha(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            fail_usage(std::string("einsum spec has invalid character '") + c + "'");
        }
    }
    spec.inputs.push_back(cur);
    for (char c : spec.output)
        if (!std::isalpha(static_cast<unsigned char>(c)))
            fail_usage(std::string("einsum output has invalid character '") + c + "'");
    if (spec.inputs.empty()) fail_usage("einsum spec has no inputs");
    std::set<char> in_labels;
    for (const auto& t : spec.inputs) in_labels.insert(t.begin(), t.end());
    std::set<char> out_seen;
    for (char c : spec.output) {
        if (!in_labels.count(c)) fail_usage(std::string("einsum output label '") + c + "' not present in any input");
        if (!out_seen.insert(c).second) fail_usage(std::string("einsum output label '") + c + "' repeated");
    }
    return spec;
}

std::string EinsumSpec::str() const {
    std::string s;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (i) s += ',';
        s += inputs[i];
    }
    s += "->";
    s += output;
    return s;
}

std::map<char, int64_t> EinsumSpec::label_sizes(const std::vector<Shape>& shapes) const {
    if (shapes.size() != inputs.size())
        fail_usage("einsum '" + str() + "' expects " + std::to_string(inputs.size()) + " operands, got " +
                   std::to_string(shapes.size()));
    std::map<char, int64_t> sizes;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].size() != shapes[i].size())
            fail_usage("einsum operand " + std::to_string(i) + " rank " + std::to_string(shapes[i].size()) +
                       " does not match term '" + inputs[i] + "'");
        for (size_t k = 0; k < inputs[i].size(); ++k) {
            char c = inputs[i][k];
            int64_t d = shapes[i][k];
            auto [it, fresh] = sizes.emplace(c, d);
            if (!fresh && it->second != d)
                fail_usage(std::string("einsum label '") + c + "' binds to both " + std::to_string(it->second) +
                           " and " + std::to_string(d));
        }
    }
    return sizes;
}

Shape EinsumSpec::output_shape(const std::map<char, int64_t>& sizes) const {
    Shape out;
    for (char c : output) out.push_back(sizes.at(c));
    return out;
}

namespace {

// Extracts the generalized diagonal so every label appears once, preserving
// first-occurrence order. "iij" -> "ij" with x[i,i,j].
std::pair<std::string, Tensor> dedup_labels(const std::string& labels, const Tensor& x) {
    std::string uniq;
    for (char c : labels)
        if (uniq.find(c) == std::string::npos) uniq.push_back(c);
    if (uniq.size() == labels.size()) return {uniq, x};
    std::map<char, int64_t> sizes;
    for (size_t i = 0; i < labels.size(); ++i) sizes[labels[i]] = x.shape()[i];
    Shape out_shape;
    for (char c : uniq) out_shape.push_back(sizes[c]);
    Tensor out(out_shape);
    auto in_strides = x.strides();
    std::vector<int64_t> stride_of_uniq(uniq.size(), 0);
    for (size_t i = 0; i < labels.size(); ++i)
        stride_of_uniq[uniq.find(labels[i])] += in_strides[i];
    std::vector<int64_t> idx(uniq.size(), 0);
    for (int64_t flat = 0; flat < out.size(); ++flat) {
        int64_t off = 0;
        for (size_t i = 0; i < uniq.size(); ++i) off += idx[i] * stride_of_uniq[i];
        out[flat] = x[off];
        for (int i = static_cast<int>(uniq.size()) - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return {uniq, out};
}

// Sums out the axes whose labels are not in `keep`, then orders axes as in
// `keep` (labels must be unique already).
std::pair<std::string, Tensor> reduce_to(const std::string& labels, const Tensor& x, const std::string& keep) {
    std::string kept;
    std::vector<int> kept_axes, summed_axes;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (keep.find(labels[i]) != std::string::npos) {
            kept.push_back(labels[i]);
            kept_axes.push_back(static_cast<int>(i));
        } else {
            summed_axes.push_back(static_cast<int>(i));
        }
    }
    Tensor cur = x;
    std::string cur_labels = labels;
    if (!summed_axes.empty()) {
        // permute kept axes to the front, then sum the trailing block
        std::vector<int> perm = kept_axes;
        perm.insert(perm.end(), summed_axes.begin(), summed_axes.end());
        Tensor moved = x.permute(perm);
        int64_t outer = 1, inner = 1;
        for (size_t i = 0; i < kept_axes.size(); ++i) outer *= moved.shape()[i];
        for (size_t i = kept_axes.size(); i < labels.size(); ++i) inner *= moved.shape()[i];
        Shape out_shape(moved.shape().begin(), moved.shape().begin() + static_cast<long>(kept_axes.size()));
        Tensor summed(out_shape.empty() ? Shape{} : out_shape);
        for (int64_t o = 0; o < outer; ++o) {
            double acc = 0.0;
            const float* row = moved.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) acc += row[i];
            summed[o] = static_cast<float>(acc);
        }
        cur = summed;
        cur_labels = kept;
    }
    // permute to the order required by keep
    std::vector<int> perm;
    for (char c : keep) {
        auto pos = cur_labels.find(c);
        if (pos == std::string::npos) fail("reduce_to: label not found");
        perm.push_back(static_cast<int>(pos));
    }
    if (perm.size() != cur_labels.size()) fail("reduce_to: keep/label mismatch");
    bool ident = true;
    for (size_t i = 0; i < perm.size(); ++i) ident = ident && perm[i] == static_cast<int>(i);
    return {keep, ident ? cur : cur.permute(perm)};
}

}  // namespace

Tensor single_contract(const std::string& labels, const Tensor& x, const std::string& out_labels) {
    auto [uniq, diag] = dedup_labels(labels, x);
    return reduce_to(uniq, diag, out_labels).second;
}

Tensor pairwise_contract(const std::string& a_labels_in, const Tensor& a_in,
                         const std::string& b_labels_in, const Tensor& b_in,
                         const std::string& out_labels) {
    auto [a_labels0, a0] = dedup_labels(a_labels_in, a_in);
    auto [b_labels0, b0] = dedup_labels(b_labels_in, b_in);
    // Pre-sum labels that appear in one operand only and are not wanted.
    std::string a_keep, b_keep;
    for (char c : a_labels0)
        if (out_labels.find(c) != std::string::npos || b_labels0.find(c) != std::string::npos) a_keep.push_back(c);
    for (char c : b_labels0)
        if (out_labels.find(c) != std::string::npos || a_labels0.find(c) != std::string::npos) b_keep.push_back(c);
    auto [a_labels, a] = reduce_to(a_labels0, a0, a_keep);
    auto [b_labels, b] = reduce_to(b_labels0, b0, b_keep);

    std::string batch, contracted, a_free, b_free;
    for (char c : a_labels) {
        bool in_b = b_labels.find(c) != std::string::npos;
        bool in_out = out_labels.find(c) != std::string::npos;
        if (in_b && in_out) batch.push_back(c);
        else if (in_b) contracted.push_back(c);
        else a_free.push_back(c);
    }
    for (char c : b_labels)
        if (a_labels.find(c) == std::string::npos) b_free.push_back(c);
    for (char c : out_labels) {
        if (a_labels.find(c) == std::string::npos && b_labels.find(c) == std::string::npos)
            fail_usage(std::string("pairwise contraction output label '") + c + "' missing from operands");
    }

    std::map<char, int64_t> sizes;
    for (size_t i = 0; i < a_labels.size(); ++i) sizes[a_labels[i]] = a.shape()[i];
    for (size_t i = 0; i < b_labels.size(); ++i) {
        auto [it, fresh] = sizes.emplace(b_labels[i], b.shape()[i]);
        if (!fresh && it->second != b.shape()[i])
            fail_usage(std::string("einsum label '") + b_labels[i] + "' size mismatch between operands");
    }

    auto size_of = [&](const std::string& ls) {
        int64_t n = 1;
        for (char c : ls) n *= sizes[c];
        return n;
    };
    int64_t B = size_of(batch), I = size_of(a_free), K = size_of(contracted), J = size_of(b_free);

    Tensor a_m = reduce_to(a_labels, a, batch + a_free + contracted).second.reshape({B, I, K});
    Tensor b_m = reduce_to(b_labels, b, batch + contracted + b_free).second.reshape({B, K, J});

    Tensor out_m({B, I, J});
    std::vector<double> acc(static_cast<size_t>(J));
    for (int64_t bb = 0; bb < B; ++bb) {
        const float* A = a_m.data() + bb * I * K;
        const float* Bp = b_m.data() + bb * K * J;
        float* O = out_m.data() + bb * I * J;
        for (int64_t i = 0; i < I; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* Ai = A + i * K;
            for (int64_t k = 0; k < K; ++k) {
                double av = Ai[k];
                const float* Bk = Bp + k * J;
                for (int64_t j = 0; j < J; ++j) acc[static_cast<size_t>(j)] += av * Bk[j];
            }
            for (int64_t j = 0; j < J; ++j) O[i * J + j] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
    }

    std::string natural = batch + a_free + b_free;
    Shape natural_shape;
    for (char c : natural) natural_shape.push_back(sizes[c]);
    Tensor out = out_m.reshape(natural_shape);
    return reduce_to(natural, out, out_labels).second;
}

namespace {

// Definitional contraction: loop the full joint index space, accumulate in
// 64-bit. Used for >=3 operands and as the semantic reference.
Tensor naive_contract(const EinsumSpec& spec, std::span<const Tensor> operands) {
    std::vector<Shape> shapes;
    for (const auto& t : operands) shapes.push_back(t.shape());
    auto sizes = spec.label_sizes(shapes);

    std::string all_labels = spec.output;
    for (const auto& term : spec.inputs)
        for (char c : term)
            if (all_labels.find(c) == std::string::npos) all_labels.push_back(c);
    size_t n_out = spec.output.size();

    std::vector<int64_t> dims;
    for (char c : all_labels) dims.push_back(sizes.at(c));

    // per-operand flat stride for each joint label
    std::vector<std::vector<int64_t>> op_strides(operands.size(), std::vector<int64_t>(all_labels.size(), 0));
    for (size_t oi = 0; oi < operands.size(); ++oi) {
        auto st = operands[oi].strides();
        for (size_t k = 0; k < spec.inputs[oi].size(); ++k)
            op_strides[oi][all_labels.find(spec.inputs[oi][k])] += st[k];
    }

    Shape out_shape = spec.output_shape(sizes);
    Tensor out(out_shape.empty() ? Shape{} : out_shape);

    int64_t total_out = out.size();
    int64_t total_sum = 1;
    for (size_t i = n_out; i < all_labels.size(); ++i) total_sum *= dims[i];

    std::vector<int64_t> idx(all_labels.size(), 0);
    for (int64_t oflat = 0; oflat < total_out; ++oflat) {
        // decode output index
        int64_t rem = oflat;
        for (int i = static_cast<int>(n_out) - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)] = rem % dims[static_cast<size_t>(i)];
            rem /= dims[static_cast<size_t>(i)];
        }
        std::fill(idx.begin() + static_cast<long>(n_out), idx.end(), 0);
        double acc = 0.0;
        for (int64_t s = 0; s < total_sum; ++s) {
            double prod = 1.0;
            for (size_t oi = 0; oi < operands.size(); ++oi) {
                int64_t off = 0;
                for (size_t k = 0; k < all_labels.size(); ++k) off += idx[k] * op_strides[oi][k];
                prod *= operands[oi][off];
            }
            acc += prod;
            for (int i = static_cast<int>(all_labels.size()) - 1; i >= static_cast<int>(n_out); --i) {
                if (++idx[static_cast<size_t>(i)] < dims[static_cast<size_t>(i)]) break;
                idx[static_cast<size_t>(i)] = 0;
            }
        }
        out[oflat] = static_cast<float>(acc);
    }
    return out;
}

}  // namespace

Tensor einsum(const EinsumSpec& spec, std::span<const Tensor> operands) {
    std::vector<Shape> shapes;
    for (const auto& t : operands) shapes.push_back(t.shape());
    spec.label_sizes(shapes);  // validates
    if (operands.size() == 1) return single_contract(spec.inputs[0], operands[0], spec.output);
    if (operands.size() == 2)
        return pairwise_contract(spec.inputs[0], operands[0], spec.inputs[1], operands[1], spec.output);
    return naive_contract(spec, operands);
}

Tensor einsum(std::string_view subscripts, std::span<const Tensor> operands) {
    return einsum(EinsumSpec::parse(subscripts), operands);
}

Tensor einsum(std::string_view subscripts, std::initializer_list<Tensor> operands) {
    std::vector<Tensor> ops(operands);
    return einsum(EinsumSpec::parse(subscripts), std::span<const Tensor>(ops));
}

namespace {

struct Slot {
    std::string labels;  // unique labels after diagonal reduction
    bool alive = true;
};

double joint_space(const std::string& a, const std::string& b, const std::map<char, int64_t>& sizes) {
    std::string u = a;
    for (char c : b)
        if (u.find(c) == std::string::npos) u.push_back(c);
    double n = 1;
    for (char c : u) n *= static_cast<double>(sizes.at(c));
    return n;
}

// Labels the contraction of slots (i, j) must keep: anything the output or a
// still-alive third slot references.
std::string result_labels(const std::vector<Slot>& slots, size_t i, size_t j, const std::string& out_labels) {
    std::string keep;
    auto needed = [&](char c) {
        if (out_labels.find(c) != std::string::npos) return true;
        for (size_t k = 0; k < slots.size(); ++k)
            if (k != i && k != j && slots[k].alive && slots[k].labels.find(c) != std::string::npos) return true;
        return false;
    };
    for (char c : slots[i].labels)
        if (needed(c)) keep.push_back(c);
    for (char c : slots[j].labels)
        if (slots[i].labels.find(c) == std::string::npos && needed(c)) keep.push_back(c);
    return keep;
}

std::string uniq_labels(const std::string& s) {
    std::string u;
    for (char c : s)
        if (u.find(c) == std::string::npos) u.push_back(c);
    return u;
}

struct PlanBuild {
    std::vector<ContractionStep> steps;
    double flops = 0.0;
    int max_rank = 0;
};

PlanBuild build_left_to_right(std::vector<Slot> slots, const std::string& out_labels,
                              const std::map<char, int64_t>& sizes) {
    PlanBuild pb;
    size_t n = slots.size();
    int cur = 0;
    for (size_t j = 1; j < n; ++j) {
        std::string keep = result_labels(slots, static_cast<size_t>(cur), j, out_labels);
        pb.flops += joint_space(slots[static_cast<size_t>(cur)].labels, slots[j].labels, sizes);
        pb.steps.push_back({cur, static_cast<int>(j), slots[static_cast<size_t>(cur)].labels, slots[j].labels, keep});
        slots[static_cast<size_t>(cur)].alive = false;
        slots[j].alive = false;
        slots.push_back({keep, true});
        cur = static_cast<int>(slots.size()) - 1;
        pb.max_rank = std::max(pb.max_rank, static_cast<int>(keep.size()));
    }
    return pb;
}

PlanBuild build_greedy(std::vector<Slot> slots, const std::string& out_labels,
                       const std::map<char, int64_t>& sizes) {
    PlanBuild pb;
    size_t alive = slots.size();
    while (alive > 1) {
        double best_cost = 0.0;
        double best_result = 0.0;
        int bi = -1, bj = -1;
        for (size_t i = 0; i < slots.size(); ++i) {
            if (!slots[i].alive) continue;
            for (size_t j = i + 1; j < slots.size(); ++j) {
                if (!slots[j].alive) continue;
                double cost = joint_space(slots[i].labels, slots[j].labels, sizes);
                std::string keep = result_labels(slots, i, j, out_labels);
                double rsize = 1;
                for (char c : keep) rsize *= static_cast<double>(sizes.at(c));
                if (bi < 0 || cost < best_cost || (cost == best_cost && rsize < best_result)) {
                    best_cost = cost;
                    best_result = rsize;
                    bi = static_cast<int>(i);
                    bj = static_cast<int>(j);
                }
            }
        }
        std::string keep = result_labels(slots, static_cast<size_t>(bi), static_cast<size_t>(bj), out_labels);
        pb.steps.push_back({bi, bj, slots[static_cast<size_t>(bi)].labels, slots[static_cast<size_t>(bj)].labels, keep});
        pb.flops += best_cost;
        slots[static_cast<size_t>(bi)].alive = false;
        slots[static_cast<size_t>(bj)].alive = false;
        slots.push_back({keep, true});
        pb.max_rank = std::max(pb.max_rank, static_cast<int>(keep.size()));
        --alive;
    }
    return pb;
}

}  // namespace

ContractionPlan plan_contraction(const EinsumSpec& spec, const std::vector<Shape>& shapes) {
    if (spec.operand_count() < 2) fail_usage("plan_contraction needs at least 2 operands");
    auto sizes = spec.label_sizes(shapes);

    std::vector<Slot> slots;
    for (const auto& term : spec.inputs) slots.push_back({uniq_labels(term), true});

    PlanBuild naive = build_left_to_right(slots, spec.output, sizes);
    PlanBuild greedy = build_greedy(slots, spec.output, sizes);
    const PlanBuild& chosen = greedy.flops <= naive.flops ? greedy : naive;

    ContractionPlan plan;
    plan.spec = spec;
    plan.shapes = shapes;
    plan.steps = chosen.steps;
    plan.est_flops = chosen.flops;
    plan.naive_flops = naive.flops;
    plan.max_intermediate_rank = chosen.max_rank;
    return plan;
}

Tensor execute_plan(const ContractionPlan& plan, std::span<const Tensor> operands) {
    if (static_cast<int>(operands.size()) != plan.spec.operand_count())
        fail_usage("execute_plan: operand count mismatch");
    for (size_t i = 0; i < operands.size(); ++i)
        if (operands[i].shape() != plan.shapes[i])
            fail_usage("execute_plan: operand " + std::to_string(i) + " shape " + shape_str(operands[i].shape()) +
                       " does not match plan shape " + shape_str(plan.shapes[i]));

    // reduce diagonals up front so slot labels are unique
    std::vector<std::string> labels;
    std::vector<Tensor> slots;
    for (size_t i = 0; i < operands.size(); ++i) {
        labels.push_back(uniq_labels(plan.spec.inputs[i]));
        slots.push_back(single_contract(plan.spec.inputs[i], operands[i], labels.back()));
    }

    for (const auto& st : plan.steps) {
        Tensor r = pairwise_contract(labels[static_cast<size_t>(st.lhs)], slots[static_cast<size_t>(st.lhs)],
                                     labels[static_cast<size_t>(st.rhs)], slots[static_cast<size_t>(st.rhs)],
                                     st.out_labels);
        slots.push_back(std::move(r));
        labels.push_back(st.out_labels);
        // free dead intermediates
        slots[static_cast<size_t>(st.lhs)] = Tensor();
        slots[static_cast<size_t>(st.rhs)] = Tensor();
    }
    return single_contract(labels.back(), slots.back(), plan.spec.output);
}

Tensor contract(const EinsumSpec& spec, std::span<const Tensor> operands) {
    if (operands.size() <= 2) return einsum(spec, operands);
    std::vector<Shape> shapes;
    for (const auto& t : operands) shapes.push_back(t.shape());
    return execute_plan(plan_contraction(spec, shapes), operands);
}

Tensor embed_to_term(const Tensor& x, const std::string& labels, const std::string& term,
                     const std::map<char, int64_t>& sizes) {
    std::string uniq;
    for (char c : term)
        if (uniq.find(c) == std::string::npos) uniq.push_back(c);

    Tensor cur = x;
    std::string cur_labels = labels;
    for (char c : uniq) {
        if (cur_labels.find(c) != std::string::npos) continue;
        Shape s = cur.shape();
        s.push_back(1);
        cur = cur.reshape(s);
        int last = static_cast<int>(s.size()) - 1;
        int64_t n = sizes.at(c);
        // expand unit axis to n copies
        Shape expanded = s;
        expanded[static_cast<size_t>(last)] = n;
        Tensor e(expanded);
        int64_t outer = cur.size();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < n; ++k) e[o * n + k] = cur[o];
        cur = std::move(e);
        cur_labels.push_back(c);
    }
    std::vector<int> perm;
    for (char c : uniq) perm.push_back(static_cast<int>(cur_labels.find(c)));
    bool ident = perm.size() == cur_labels.size();
    for (size_t i = 0; i < perm.size() && ident; ++i) ident = ident && perm[i] == static_cast<int>(i);
    if (!ident) cur = cur.permute(perm);
    if (uniq.size() == term.size()) return cur;

    Shape term_shape;
    for (char c : term) term_shape.push_back(sizes.at(c));
    Tensor out(term_shape);
    auto out_strides = out.strides();
    std::vector<int64_t> stride_of_uniq(uniq.size(), 0);
    for (size_t i = 0; i < term.size(); ++i) stride_of_uniq[uniq.find(term[i])] += out_strides[i];
    std::vector<int64_t> idx(uniq.size(), 0);
    for (int64_t flat = 0; flat < cur.size(); ++flat) {
        int64_t off = 0;
        for (size_t i = 0; i < uniq.size(); ++i) off += idx[i] * stride_of_uniq[i];
        out[off] = cur[flat];
        for (int i = static_cast<int>(uniq.size()) - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < cur.shape()[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

}  // namespace tlra
