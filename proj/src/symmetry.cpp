#include "symmetry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace tlra {

// --- SymmetryType ----------------------------------------------------------

SymmetryType SymmetryType::parse(std::string_view s) {
    SymmetryType sym;
    sym.notation = std::string(s);
    std::map<char, int> group_of;
    for (char c : s) {
        SymmetryAxis ax;
        ax.label = c;
        if (c == 'Z') {
            ax.kind = AxisKind::Batch;
        } else if (c == 'H') {
            ax.kind = AxisKind::Latent;
        } else if (c >= 'a' && c <= 'z') {
            ax.kind = AxisKind::Perm;
            auto it = group_of.find(c);
            if (it == group_of.end()) {
                ax.group = sym.num_groups++;
                group_of[c] = ax.group;
            } else {
                ax.group = it->second;
            }
        } else {
            fail_usage(std::string("invalid symmetry notation character '") + c + "' in \"" + std::string(s) + "\"");
        }
        sym.axes.push_back(ax);
    }
    if (sym.num_groups == 0) fail_usage("symmetry type \"" + std::string(s) + "\" has no permutable axis");
    return sym;
}

void SymmetryType::add_dependency(char parent, char child) {
    dependencies.emplace_back(group_of(parent), group_of(child));
}

std::vector<int> SymmetryType::perm_slots() const {
    std::vector<int> out;
    for (size_t i = 0; i < axes.size(); ++i)
        if (axes[i].kind == AxisKind::Perm) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> SymmetryType::slot_groups() const {
    std::vector<int> out;
    for (const auto& ax : axes)
        if (ax.kind == AxisKind::Perm) out.push_back(ax.group);
    return out;
}

int SymmetryType::group_of(char label) const {
    for (const auto& ax : axes)
        if (ax.kind == AxisKind::Perm && ax.label == label) return ax.group;
    fail_usage(std::string("no permutable axis '") + label + "' in type " + notation);
}

bool SymmetryType::has_latent() const {
    for (const auto& ax : axes)
        if (ax.kind == AxisKind::Latent) return true;
    return false;
}

bool SymmetryType::has_batch() const {
    for (const auto& ax : axes)
        if (ax.kind == AxisKind::Batch) return true;
    return false;
}

// --- coefficient hypercube orbits ------------------------------------------

namespace {

int64_t ipow(int64_t b, int e) {
    int64_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

struct UnionFind {
    std::vector<int64_t> parent;
    explicit UnionFind(int64_t n) : parent(static_cast<size_t>(n)) {
        for (int64_t i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
    }
    int64_t find(int64_t x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int64_t a, int64_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
    }
};

// The coefficient hypercube for order k has one axis per (factor, perm slot),
// each of length n. An axis permutation of class g acts simultaneously on
// every hypercube axis whose slot belongs to g.
struct CoeffSpace {
    int slots;
    int order;
    int64_t n;
    std::vector<int> axis_group;  // per hypercube axis
    int64_t total;

    CoeffSpace(const SymmetryType& sym, int k, int64_t n_) {
        auto groups = sym.slot_groups();
        slots = static_cast<int>(groups.size());
        order = k;
        n = n_;
        for (int f = 0; f < k; ++f)
            for (int s = 0; s < slots; ++s) axis_group.push_back(groups[static_cast<size_t>(s)]);
        total = ipow(n, slots * k);
    }

    // image of flat index under a per-class value mapping
    int64_t map_index(int64_t flat, const std::vector<std::vector<int64_t>>& class_maps) const {
        int axes_n = slots * order;
        int64_t out = 0;
        std::vector<int64_t> digits(static_cast<size_t>(axes_n));
        for (int i = axes_n - 1; i >= 0; --i) {
            digits[static_cast<size_t>(i)] = flat % n;
            flat /= n;
        }
        for (int i = 0; i < axes_n; ++i) {
            int g = axis_group[static_cast<size_t>(i)];
            out = out * n + class_maps[static_cast<size_t>(g)][static_cast<size_t>(digits[static_cast<size_t>(i)])];
        }
        return out;
    }
};

void check_solvable(const SymmetryType& sym) {
    if (!sym.dependencies.empty())
        fail_usage("coefficient solving for dependent axis types is not supported");
}

std::vector<std::vector<std::vector<int64_t>>> transposition_generators(int num_groups, int64_t n) {
    // each generator: per-class value maps, identity except one adjacent swap
    std::vector<std::vector<std::vector<int64_t>>> gens;
    std::vector<int64_t> ident(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ident[static_cast<size_t>(i)] = i;
    for (int g = 0; g < num_groups; ++g)
        for (int64_t t = 0; t + 1 < n; ++t) {
            std::vector<std::vector<int64_t>> maps(static_cast<size_t>(num_groups), ident);
            std::swap(maps[static_cast<size_t>(g)][static_cast<size_t>(t)],
                      maps[static_cast<size_t>(g)][static_cast<size_t>(t + 1)]);
            gens.push_back(std::move(maps));
        }
    return gens;
}

std::vector<std::vector<int64_t>> all_perms(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    std::vector<std::vector<int64_t>> out;
    do {
        out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

std::vector<int64_t> orbit_representatives(const CoeffSpace& space,
                                           const std::vector<std::vector<std::vector<int64_t>>>& gens,
                                           std::vector<int64_t>* rep_of) {
    UnionFind uf(space.total);
    for (const auto& maps : gens)
        for (int64_t i = 0; i < space.total; ++i) uf.unite(i, space.map_index(i, maps));
    std::vector<int64_t> reps;
    if (rep_of) rep_of->assign(static_cast<size_t>(space.total), -1);
    std::map<int64_t, int64_t> seen;
    for (int64_t i = 0; i < space.total; ++i) {
        int64_t r = uf.find(i);
        auto [it, fresh] = seen.emplace(r, static_cast<int64_t>(reps.size()));
        if (fresh) reps.push_back(r);
        if (rep_of) (*rep_of)[static_cast<size_t>(i)] = it->second;
    }
    return reps;
}

int numeric_nullity(const CoeffSpace& space, const std::vector<std::vector<std::vector<int64_t>>>& gens) {
    // constraint rows c[i] - c[pi(i)] = 0, stacked over all generators
    std::vector<std::pair<int64_t, int64_t>> rows;
    for (const auto& maps : gens)
        for (int64_t i = 0; i < space.total; ++i) {
            int64_t j = space.map_index(i, maps);
            if (j != i) rows.emplace_back(i, j);
        }
    if (rows.empty()) return static_cast<int>(space.total);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(space.total));
    for (size_t r = 0; r < rows.size(); ++r) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].first)) = 1.0;
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(rows[r].second)) = -1.0;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    double tol = 1e-8 * std::max(1.0, sv.size() ? sv(0) : 0.0);
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++rank;
    return static_cast<int>(space.total) - rank;
}

}  // namespace

CoefficientBasis solve_coefficient_basis(const SymmetryType& sym, int order, int64_t n) {
    check_solvable(sym);
    if (order < 0 || order > 3) fail_usage("coefficient solving supports orders 0..3");
    if (n < 1 || n > 6) fail_usage("coefficient solving supports n in 1..6");

    CoefficientBasis basis;
    basis.order = order;
    basis.n = n;

    CoeffSpace space(sym, order, n);
    for (int i = 0; i < space.slots * order; ++i) basis.pattern_shape.push_back(n);

    if (order == 0) {
        basis.patterns.push_back(Tensor::scalar(1.0f));
        basis.dof = 1;
        basis.numeric_checked = true;
        basis.numeric_nullity = 1;
        return basis;
    }

    auto gens = transposition_generators(sym.num_groups, n);
    std::vector<int64_t> rep_of;
    auto reps = orbit_representatives(space, gens, &rep_of);
    basis.dof = static_cast<int>(reps.size());
    for (size_t r = 0; r < reps.size(); ++r) {
        Tensor pat(basis.pattern_shape);
        for (int64_t i = 0; i < space.total; ++i)
            if (rep_of[static_cast<size_t>(i)] == static_cast<int64_t>(r)) pat[i] = 1.0f;
        basis.patterns.push_back(std::move(pat));
    }

    // independent numeric route where the dense SVD stays small
    if (space.total <= 700) {
        basis.numeric_nullity = numeric_nullity(space, gens);
        basis.numeric_checked = true;
        if (basis.numeric_nullity != basis.dof)
            fail("null-space dimension " + std::to_string(basis.numeric_nullity) + " disagrees with orbit count " +
                 std::to_string(basis.dof));
    }
    return basis;
}

int orbit_count_full_group(const SymmetryType& sym, int order, int64_t n) {
    check_solvable(sym);
    CoeffSpace space(sym, order, n);
    if (order == 0) return 1;
    auto perms = all_perms(n);
    std::vector<std::vector<std::vector<int64_t>>> gens;
    // full group = direct product over classes; pad with identity per class
    std::vector<int64_t> ident(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ident[static_cast<size_t>(i)] = i;
    std::vector<size_t> pick(static_cast<size_t>(sym.num_groups), 0);
    while (true) {
        std::vector<std::vector<int64_t>> maps;
        for (int g = 0; g < sym.num_groups; ++g) maps.push_back(perms[pick[static_cast<size_t>(g)]]);
        gens.push_back(std::move(maps));
        int g = 0;
        for (; g < sym.num_groups; ++g) {
            if (++pick[static_cast<size_t>(g)] < perms.size()) break;
            pick[static_cast<size_t>(g)] = 0;
        }
        if (g == sym.num_groups) break;
    }
    return static_cast<int>(orbit_representatives(space, gens, nullptr).size());
}

int numeric_nullity_full_group(const SymmetryType& sym, int order, int64_t n) {
    check_solvable(sym);
    CoeffSpace space(sym, order, n);
    if (order == 0) return 1;
    if (sym.num_groups != 1) fail_usage("full-group numeric route implemented for single-class types");
    auto perms = all_perms(n);
    std::vector<std::vector<std::vector<int64_t>>> gens;
    for (const auto& p : perms) gens.push_back({p});
    return numeric_nullity(space, gens);
}

// --- pooling op enumeration --------------------------------------------------

namespace {

struct RawOp {
    std::vector<std::vector<int>> ins;  // label id per slot, per input term
    std::vector<int> out;
};

// Renders with letters assigned by first appearance, inputs first.
std::string render_terms(const std::vector<std::vector<int>>& ins, const std::vector<int>& out,
                         const std::vector<int>& slot_groups) {
    (void)slot_groups;
    std::map<int, char> letter;
    char next = 'a';
    auto render = [&](const std::vector<int>& term) {
        std::string s;
        for (int id : term) {
            auto [it, fresh] = letter.emplace(id, next);
            if (fresh) ++next;
            s.push_back(it->second);
        }
        return s;
    };
    std::string s;
    for (size_t t = 0; t < ins.size(); ++t) {
        if (t) s += ',';
        s += render(ins[t]);
    }
    s += "->";
    s += render(out);
    return s;
}

// Canonical string: minimum over input term orderings of the rendered form.
std::string canonical_string(const RawOp& op, const std::vector<int>& slot_groups) {
    std::vector<size_t> idx(op.ins.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::string best;
    std::sort(idx.begin(), idx.end());
    do {
        std::vector<std::vector<int>> perm_ins;
        for (size_t i : idx) perm_ins.push_back(op.ins[i]);
        std::string s = render_terms(perm_ins, op.out, slot_groups);
        if (best.empty() || s < best) best = s;
    } while (std::next_permutation(idx.begin(), idx.end()));
    return best;
}

std::vector<std::string> split_terms(const std::string& key, std::string* out_term) {
    auto arrow = key.find("->");
    std::vector<std::string> ins;
    std::string cur;
    for (char c : key.substr(0, arrow)) {
        if (c == ',') {
            ins.push_back(cur);
            cur.clear();
        } else
            cur.push_back(c);
    }
    ins.push_back(cur);
    *out_term = key.substr(arrow + 2);
    return ins;
}

// restricted growth strings: canonical set partitions of m positions
void rgs_enumerate(int m, std::vector<std::vector<int>>& out) {
    std::vector<int> a(static_cast<size_t>(m), 0);
    std::function<void(int, int)> rec = [&](int i, int mx) {
        if (i == m) {
            out.push_back(a);
            return;
        }
        for (int v = 0; v <= mx + 1; ++v) {
            a[static_cast<size_t>(i)] = v;
            rec(i + 1, std::max(mx, v));
        }
    };
    if (m == 0)
        out.push_back({});
    else
        rec(0, -1);
}

bool labels_class_consistent(const SymmetryType& sym, const std::vector<std::string>& ins, const std::string& out) {
    auto groups = sym.slot_groups();
    std::map<char, int> label_group;
    auto scan = [&](const std::string& term) {
        if (term.size() != groups.size()) return false;
        for (size_t s = 0; s < term.size(); ++s) {
            auto [it, fresh] = label_group.emplace(term[s], groups[s]);
            if (!fresh && it->second != groups[s]) return false;
        }
        return true;
    };
    for (const auto& t : ins)
        if (!scan(t)) return false;
    return scan(out);
}

}  // namespace

std::string PoolingOp::key() const {
    std::string s;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (i) s += ',';
        s += inputs[i];
    }
    return s + "->" + output;
}

std::string PoolingOp::notation() const {
    std::string pre, post;
    bool before = true;
    for (const auto& ax : sym.axes) {
        if (ax.kind == AxisKind::Perm) {
            before = false;
            continue;
        }
        (before ? pre : post).push_back(ax.label);
    }
    std::string s;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (i) s += ',';
        s += pre + inputs[i] + post;
    }
    s += "->" + pre + output + post;
    return s;
}

std::string canonical_pooling_key(const SymmetryType& sym, const std::string& key) {
    std::string out_term;
    auto ins = split_terms(key, &out_term);
    if (!labels_class_consistent(sym, ins, out_term)) fail_usage("pooling key violates class structure: " + key);
    RawOp raw;
    for (const auto& t : ins) {
        std::vector<int> term;
        for (char c : t) term.push_back(c);
        raw.ins.push_back(std::move(term));
    }
    for (char c : out_term) raw.out.push_back(c);
    return canonical_string(raw, sym.slot_groups());
}

bool is_breakable(const SymmetryType& sym, const std::vector<std::string>& ins, const std::string& out) {
    (void)sym;
    size_t k = ins.size();
    if (k < 2) return false;
    // exempt the plain pointwise product, the combinator itself
    if (k == 2 && ins[0] == ins[1] && ins[0] == out) {
        std::set<char> uniq(out.begin(), out.end());
        if (uniq.size() == out.size()) return false;
    }
    std::set<char> out_labels(out.begin(), out.end());
    for (uint32_t mask = 1; mask < (1u << k) - 1; ++mask) {
        if (mask & 1u << (k - 1)) continue;  // each bipartition once
        std::set<char> side1, side2;
        for (size_t t = 0; t < k; ++t) {
            auto& side = (mask >> t & 1u) ? side1 : side2;
            side.insert(ins[t].begin(), ins[t].end());
        }
        bool ok = true;
        for (char c : side1)
            if (side2.count(c) && !out_labels.count(c)) {
                ok = false;
                break;
            }
        if (ok) return true;
    }
    return false;
}

bool satisfies_dependency(const SymmetryType& sym, const std::vector<std::string>& ins, const std::string& out,
                          char parent, char child) {
    int pg = sym.group_of(parent), cg = sym.group_of(child);
    auto groups = sym.slot_groups();
    std::vector<std::string> terms = ins;
    terms.push_back(out);
    // slots of the parent/child classes within a term
    std::vector<size_t> pslots, cslots;
    for (size_t s = 0; s < groups.size(); ++s) {
        if (groups[s] == pg) pslots.push_back(s);
        if (groups[s] == cg) cslots.push_back(s);
    }
    for (size_t t1 = 0; t1 < terms.size(); ++t1)
        for (size_t t2 = t1 + 1; t2 < terms.size(); ++t2)
            for (size_t cs1 : cslots)
                for (size_t cs2 : cslots) {
                    if (terms[t1][cs1] != terms[t2][cs2]) continue;
                    // shared child label: parent labels must agree
                    for (size_t ps : pslots)
                        if (terms[t1][ps] != terms[t2][ps]) return false;
                }
    return true;
}

// --- evaluation ---------------------------------------------------------------

Tensor apply_pooling_op(const PoolingOp& op, std::span<const Tensor> operands) {
    const auto groups = op.sym.slot_groups();
    int slots = static_cast<int>(groups.size());
    if (operands.size() != op.inputs.size()) fail_usage("pooling op operand count mismatch");
    // trailing latent axis and leading batch axis are both optional
    int extra = operands[0].rank() - slots;
    bool latent = op.sym.has_latent() && extra >= 1;
    bool batch = extra == (latent ? 2 : 1);
    if (extra < 0 || extra > (latent ? 2 : 1)) fail_usage("pooling operand rank mismatch");

    std::map<char, int64_t> sizes;
    std::map<int, int64_t> group_size;
    for (size_t t = 0; t < operands.size(); ++t) {
        const auto& term = op.inputs[t];
        for (int s = 0; s < slots; ++s) {
            int64_t d = operands[t].shape()[static_cast<size_t>(s + (batch ? 1 : 0))];
            auto [it, fresh] = sizes.emplace(term[static_cast<size_t>(s)], d);
            if (!fresh && it->second != d) fail_usage("pooling operand size mismatch on label");
            auto [git, gfresh] = group_size.emplace(groups[static_cast<size_t>(s)], d);
            if (!gfresh && git->second != d) fail_usage("pooling operand class size mismatch");
        }
    }
    for (char c : op.output) {
        int g = -1;
        // class of an output label: via any occurrence, else by slot position
        for (const auto& term : op.inputs) {
            auto pos = term.find(c);
            if (pos != std::string::npos) g = groups[pos];
        }
        if (g < 0) g = groups[op.output.find(c)];
        sizes.emplace(c, group_size.at(g));
    }
    if (batch) sizes['Z'] = operands[0].shape()[0];
    if (latent) sizes['H'] = operands[0].shape().back();

    EinsumSpec spec;
    std::string present;
    for (char c : op.output)
        if (present.find(c) == std::string::npos) {
            bool found = false;
            for (const auto& term : op.inputs) found = found || term.find(c) != std::string::npos;
            if (found) present.push_back(c);
        }
    for (const auto& term : op.inputs)
        spec.inputs.push_back((batch ? "Z" : "") + term + (latent ? "H" : ""));
    spec.output = (batch ? "Z" : "") + present + (latent ? "H" : "");

    std::vector<Tensor> ops(operands.begin(), operands.end());
    Tensor core = contract(spec, ops);
    std::string target = (batch ? "Z" : "") + op.output + (latent ? "H" : "");
    return embed_to_term(core, spec.output, target, sizes);
}

double check_equivariance(const PoolingOp& op, int trials, Rng& rng) {
    if (trials < 1) fail_usage("check_equivariance needs trials >= 1");
    const auto groups = op.sym.slot_groups();
    int slots = static_cast<int>(groups.size());
    bool latent = op.sym.has_latent();
    std::map<int, int64_t> group_size;
    for (int s = 0; s < slots; ++s) group_size.emplace(groups[static_cast<size_t>(s)], groups[static_cast<size_t>(s)] == 0 ? 3 : 4);
    int64_t H = 2;

    Shape in_shape;
    for (int s = 0; s < slots; ++s) in_shape.push_back(group_size.at(groups[static_cast<size_t>(s)]));
    if (latent) in_shape.push_back(H);

    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<Tensor> xs;
        for (int t = 0; t < op.order(); ++t) xs.push_back(rng.uniform_tensor(in_shape, -1.0, 1.0));
        std::map<int, std::vector<int64_t>> perm_of_group;
        for (auto [g, n] : group_size) {
            std::vector<int64_t> p(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
            rng.shuffle(p);
            perm_of_group[g] = p;
        }
        auto permute_all = [&](const Tensor& x, const std::string& term) {
            Tensor cur = x;
            for (size_t s = 0; s < term.size(); ++s) {
                int g = -1;
                for (const auto& t2 : op.inputs) {
                    auto pos = t2.find(term[s]);
                    if (pos != std::string::npos) g = groups[pos];
                }
                if (g < 0) g = groups[s];
                cur = permute_axis(cur, static_cast<int>(s), perm_of_group.at(g));
            }
            return cur;
        };
        std::vector<Tensor> pxs;
        for (int t = 0; t < op.order(); ++t) pxs.push_back(permute_all(xs[static_cast<size_t>(t)], op.inputs[static_cast<size_t>(t)]));
        Tensor y = apply_pooling_op(op, xs);
        Tensor py_direct = apply_pooling_op(op, pxs);
        Tensor py_expect = permute_all(y, op.output);
        worst = std::max(worst, max_abs_diff(py_direct, py_expect));
    }
    return worst;
}

// --- enumeration ---------------------------------------------------------------

namespace {

// static table rows mirroring the published lookup table
std::optional<std::vector<std::string>> static_row(const SymmetryType& sym, int order) {
    auto groups = sym.slot_groups();
    std::string sig;
    if (groups.size() == 1) sig = "1";
    else if (groups.size() == 2 && groups[0] == groups[1]) sig = "2j";
    else if (groups.size() == 2) sig = "1,1";
    else return std::nullopt;
    if (!sym.dependencies.empty()) return std::nullopt;

    if (sig == "1" && order >= 3) return std::vector<std::string>{};
    if (sig == "2j" && order >= 3) return std::vector<std::string>{};
    if (sig == "1,1") {
        if (order == 4) return std::vector<std::string>{};
        if (order == 5)
            return std::vector<std::string>{"ab,ac,db,dc,de->ae", "ab,ac,db,dc,ec->eb"};
        if (order >= 6) return std::vector<std::string>{};
    }
    return std::nullopt;
}

struct EnumContext {
    const SymmetryType& sym;
    std::vector<int> groups;           // per slot
    int slots;
    std::vector<int64_t> probe_sizes;  // per group, two configurations

    explicit EnumContext(const SymmetryType& s) : sym(s), groups(s.slot_groups()) {
        slots = static_cast<int>(groups.size());
    }
};

PoolingOp make_op(const SymmetryType& sym, const std::string& key) {
    PoolingOp op;
    op.sym = sym;
    op.inputs = split_terms(key, &op.output);
    if (!labels_class_consistent(sym, op.inputs, op.output)) fail("pooling op labels violate class structure: " + key);
    return op;
}

// evaluate op as raw terms on given operands (perm axes only)
Tensor eval_terms(const SymmetryType& sym, const std::vector<std::string>& ins, const std::string& out,
                  std::span<const Tensor> xs) {
    PoolingOp op;
    op.sym = sym;
    op.inputs = ins;
    op.output = out;
    return apply_pooling_op(op, xs);
}

// order-1 op as a matrix acting on the flattened input space, per size config
using LinRep = std::vector<Eigen::MatrixXd>;

LinRep linear_rep(const SymmetryType& sym, const std::string& in_term, const std::string& out_term,
                  const std::vector<std::map<int, int64_t>>& size_cfgs) {
    LinRep rep;
    auto groups = sym.slot_groups();
    for (const auto& cfg : size_cfgs) {
        Shape shape;
        for (size_t s = 0; s < groups.size(); ++s) shape.push_back(cfg.at(groups[s]));
        int64_t d_in = numel(shape);
        // columns: op applied to basis vectors
        int64_t d_out = -1;
        Eigen::MatrixXd m;
        for (int64_t j = 0; j < d_in; ++j) {
            Tensor e(shape);
            e[j] = 1.0f;
            Tensor y = eval_terms(sym, {in_term}, out_term, std::vector<Tensor>{e});
            if (d_out < 0) {
                d_out = y.size();
                m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
            }
            for (int64_t i = 0; i < d_out; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[i];
        }
        rep.push_back(std::move(m));
    }
    return rep;
}

std::string rep_key(const LinRep& r) {
    std::ostringstream os;
    for (const auto& m : r) {
        os << m.rows() << 'x' << m.cols() << ':';
        for (Eigen::Index i = 0; i < m.size(); ++i) os << llround(m.data()[i] * 4096.0) << ',';
    }
    return os.str();
}

bool rep_equal(const LinRep& a, const LinRep& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
        if ((a[i] - b[i]).cwiseAbs().maxCoeff() > 1e-6) return false;
    }
    return true;
}

// closure of order-1 reps under composition, chains up to length `depth`;
// only square reps (same in/out space) can chain onto anything
std::vector<LinRep> composition_closure(const std::vector<LinRep>& seeds, int depth) {
    std::vector<LinRep> closure;
    std::set<std::string> seen;
    auto push = [&](const LinRep& r) {
        std::string key = rep_key(r);
        if (seen.insert(key).second) {
            closure.push_back(r);
            return true;
        }
        return false;
    };
    if (seeds.empty()) return closure;
    // identity over the input space
    LinRep ident;
    for (const auto& m : seeds[0]) ident.push_back(Eigen::MatrixXd::Identity(m.cols(), m.cols()));
    push(ident);
    for (const auto& s : seeds) push(s);
    std::vector<LinRep> frontier = closure;
    for (int d = 1; d < depth; ++d) {
        std::vector<LinRep> next;
        for (const auto& f : frontier)
            for (const auto& s : seeds) {
                if (s[0].cols() != f[0].rows()) continue;
                LinRep comp;
                for (size_t i = 0; i < s.size(); ++i) comp.push_back(s[i] * f[i]);
                if (push(comp)) next.push_back(comp);
            }
        frontier = std::move(next);
        if (frontier.empty()) break;
    }
    return closure;
}

struct Candidate {
    std::string key;
    std::vector<std::string> ins;
    std::string out;
    bool pure_rotation = false;
};

// rotation = swapping the two slots of a joint class in chosen terms
bool is_pure_rotation(const Candidate& c) {
    if (c.ins.size() != 1) return false;
    std::set<char> uniq(c.ins[0].begin(), c.ins[0].end());
    if (uniq.size() != c.ins[0].size()) return false;
    std::string sorted_in = c.ins[0], sorted_out = c.out;
    std::sort(sorted_in.begin(), sorted_in.end());
    std::sort(sorted_out.begin(), sorted_out.end());
    return sorted_in == sorted_out;
}

// badness of slot flow: kept labels want stable slots, contracted labels want
// to hop slots (the matrix-product reading the table uses)
int rotation_badness(const Candidate& c) {
    std::map<char, std::set<size_t>> pos;
    std::map<char, int> occur;
    std::set<char> out_labels(c.out.begin(), c.out.end());
    auto scan = [&](const std::string& term) {
        for (size_t s = 0; s < term.size(); ++s) {
            pos[term[s]].insert(s);
            occur[term[s]]++;
        }
    };
    for (const auto& t : c.ins) scan(t);
    scan(c.out);
    int bad = 0;
    for (auto& [label, slots] : pos) {
        if (occur[label] < 2) continue;
        if (out_labels.count(label))
            bad += static_cast<int>(slots.size()) - 1;
        else
            bad += 2 - static_cast<int>(slots.size());
    }
    return bad;
}

std::vector<size_t> action_slots(const Candidate& c) {
    std::set<char> in_labels, out_labels(c.out.begin(), c.out.end());
    for (const auto& t : c.ins) in_labels.insert(t.begin(), t.end());
    std::vector<size_t> v;
    auto scan = [&](const std::string& term) {
        for (size_t s = 0; s < term.size(); ++s) {
            char l = term[s];
            bool contracted = in_labels.count(l) && !out_labels.count(l);
            bool broadcast = !in_labels.count(l) && out_labels.count(l);
            if (contracted || broadcast) v.push_back(s);
        }
    };
    for (const auto& t : c.ins) scan(t);
    scan(c.out);
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

std::vector<PoolingOp> enumerate_pooling_ops(const SymmetryType& sym, int max_order) {
    auto groups = sym.slot_groups();
    int slots = static_cast<int>(groups.size());
    bool joint2 = slots == 2 && groups[0] == groups[1];

    // size configurations for numeric identity checks (sum semantics, ints)
    std::vector<std::map<int, int64_t>> size_cfgs;
    if (sym.num_groups == 1) {
        size_cfgs.push_back({{0, 3}});
        size_cfgs.push_back({{0, 4}});
    } else {
        std::map<int, int64_t> a, b;
        for (int g = 0; g < sym.num_groups; ++g) {
            a[g] = 3 + g;
            b[g] = 5 - g;
        }
        size_cfgs.push_back(a);
        size_cfgs.push_back(b);
    }

    std::vector<PoolingOp> result;
    std::vector<Candidate> kept_order1;
    std::vector<LinRep> kept_order1_reps;

    for (int order = 1; order <= max_order; ++order) {
        if (auto row = static_row(sym, order)) {
            for (const auto& key : *row) result.push_back(make_op(sym, key));
            continue;
        }
        if (order > 3) fail_usage("pooling enumeration supports order <= 3 (higher orders come from the static table)");

        // ---- step 1: all labelings up to renaming / term order -------------
        int terms_n = order + 1;
        std::vector<std::vector<size_t>> class_positions(static_cast<size_t>(sym.num_groups));
        for (int t = 0; t < terms_n; ++t)
            for (int s = 0; s < slots; ++s)
                class_positions[static_cast<size_t>(groups[static_cast<size_t>(s)])].push_back(
                    static_cast<size_t>(t * slots + s));
        std::vector<std::vector<std::vector<int>>> class_rgs(static_cast<size_t>(sym.num_groups));
        for (int g = 0; g < sym.num_groups; ++g)
            rgs_enumerate(static_cast<int>(class_positions[static_cast<size_t>(g)].size()),
                          class_rgs[static_cast<size_t>(g)]);

        std::set<std::string> canon_seen;
        std::vector<Candidate> candidates;
        std::vector<size_t> pick(static_cast<size_t>(sym.num_groups), 0);
        while (true) {
            std::vector<int> labels(static_cast<size_t>(terms_n * slots), -1);
            for (int g = 0; g < sym.num_groups; ++g) {
                const auto& rgs = class_rgs[static_cast<size_t>(g)][pick[static_cast<size_t>(g)]];
                for (size_t i = 0; i < class_positions[static_cast<size_t>(g)].size(); ++i)
                    labels[class_positions[static_cast<size_t>(g)][i]] = g * 64 + rgs[i];
            }
            RawOp raw;
            for (int t = 0; t < order; ++t) {
                std::vector<int> term;
                for (int s = 0; s < slots; ++s) term.push_back(labels[static_cast<size_t>(t * slots + s)]);
                raw.ins.push_back(std::move(term));
            }
            for (int s = 0; s < slots; ++s) raw.out.push_back(labels[static_cast<size_t>(order * slots + s)]);
            std::string canon = canonical_string(raw, groups);
            if (canon_seen.insert(canon).second) {
                Candidate c;
                c.key = canon;
                c.ins = split_terms(canon, &c.out);
                c.pure_rotation = is_pure_rotation(c);
                candidates.push_back(std::move(c));
            }
            int g = 0;
            for (; g < sym.num_groups; ++g) {
                if (++pick[static_cast<size_t>(g)] < class_rgs[static_cast<size_t>(g)].size()) break;
                pick[static_cast<size_t>(g)] = 0;
            }
            if (g == sym.num_groups) break;
        }
        std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) { return a.key < b.key; });

        // ---- step 2: dependency filter --------------------------------------
        if (!sym.dependencies.empty()) {
            std::vector<Candidate> ok;
            for (auto& c : candidates) {
                bool pass = true;
                for (auto [pg, cg] : sym.dependencies) {
                    char pl = 0, cl = 0;
                    for (const auto& ax : sym.axes) {
                        if (ax.kind != AxisKind::Perm) continue;
                        if (ax.group == pg && !pl) pl = ax.label;
                        if (ax.group == cg && !cl) cl = ax.label;
                    }
                    if (!satisfies_dependency(sym, c.ins, c.out, pl, cl)) pass = false;
                }
                if (pass) ok.push_back(std::move(c));
            }
            candidates = std::move(ok);
        }

        // ---- step 3: breakability filter ------------------------------------
        if (order >= 2) {
            std::vector<Candidate> ok;
            for (auto& c : candidates)
                if (!is_breakable(sym, c.ins, c.out)) ok.push_back(std::move(c));
            candidates = std::move(ok);
        }

        // ---- step 5: no new output dimensions for order 2+ ------------------
        if (order >= 2) {
            std::vector<Candidate> ok;
            for (auto& c : candidates) {
                std::set<char> in_labels;
                for (const auto& t : c.ins) in_labels.insert(t.begin(), t.end());
                bool expands = false;
                for (char l : c.out)
                    if (!in_labels.count(l)) expands = true;
                if (!expands) ok.push_back(std::move(c));
            }
            candidates = std::move(ok);
        }

        // ---- step 4: rotation normalization (joint two-slot classes) --------
        if (joint2) {
            std::map<std::string, Candidate> by_key;
            for (auto& c : candidates) by_key.emplace(c.key, c);
            std::set<std::string> drop;
            for (auto& [key, c] : by_key) {
                if (c.pure_rotation) continue;
                // orbit under slot swaps of any subset of terms
                std::vector<Candidate> orbit;
                int tn = static_cast<int>(c.ins.size()) + 1;
                for (uint32_t mask = 0; mask < (1u << tn); ++mask) {
                    RawOp raw;
                    for (size_t t = 0; t < c.ins.size(); ++t) {
                        std::string term = c.ins[t];
                        if (mask >> t & 1u) std::swap(term[0], term[1]);
                        raw.ins.push_back({term[0], term[1]});
                    }
                    std::string ot = c.out;
                    if (mask >> (tn - 1) & 1u) std::swap(ot[0], ot[1]);
                    raw.out = {ot[0], ot[1]};
                    std::string k2 = canonical_string(raw, groups);
                    Candidate m;
                    m.key = k2;
                    m.ins = split_terms(k2, &m.out);
                    m.pure_rotation = is_pure_rotation(m);
                    orbit.push_back(std::move(m));
                }
                // best member: (badness, action slots, key), skipping rotations
                const Candidate* best = nullptr;
                for (const auto& m : orbit) {
                    if (m.pure_rotation) continue;
                    if (!best) {
                        best = &m;
                        continue;
                    }
                    auto score = [](const Candidate& x) {
                        return std::make_tuple(rotation_badness(x), action_slots(x), x.key);
                    };
                    if (score(m) < score(*best)) best = &m;
                }
                if (best && best->key != key) drop.insert(key);
            }
            std::vector<Candidate> ok;
            for (auto& c : candidates)
                if (!drop.count(c.key)) ok.push_back(std::move(c));
            candidates = std::move(ok);
        }

        // ---- minimality: drop ops reproducible by composing the others -------
        // (bounded stand-in for the open dedup-through-composition problem)
        if (order == 1) {
            // fixpoint removal over linear maps
            std::map<std::string, LinRep> reps;
            for (auto& c : candidates) reps.emplace(c.key, linear_rep(sym, c.ins[0], c.out, size_cfgs));
            bool changed = true;
            while (changed) {
                changed = false;
                for (size_t i = 0; i < candidates.size(); ++i) {
                    if (candidates[i].pure_rotation) continue;
                    // closure of the other remaining square ops
                    std::vector<LinRep> seeds;
                    for (size_t j = 0; j < candidates.size(); ++j) {
                        if (j == i) continue;
                        const auto& r = reps.at(candidates[j].key);
                        if (r[0].rows() == r[0].cols()) seeds.push_back(r);
                    }
                    auto closure = composition_closure(seeds, 5);
                    const auto& target = reps.at(candidates[i].key);
                    bool found = false;
                    for (const auto& m : closure)
                        if (rep_equal(m, target)) {
                            found = true;
                            break;
                        }
                    if (found) {
                        candidates.erase(candidates.begin() + static_cast<long>(i));
                        changed = true;
                        break;
                    }
                }
            }
            kept_order1 = candidates;
            kept_order1_reps.clear();
            for (auto& c : kept_order1) kept_order1_reps.push_back(linear_rep(sym, c.ins[0], c.out, size_cfgs));
        } else {
            // single same-order core with order-1 pre chains (depth <=3) and a
            // post chain (depth <=2); probes are fixed small integer tensors so
            // polynomial identity holds exactly in double
            auto pre_set = composition_closure(kept_order1_reps, 3);
            auto post_set = composition_closure(kept_order1_reps, 2);

            const int ncfg = 2;
            std::vector<std::vector<Tensor>> probe_xs(ncfg);
            for (int cfg = 0; cfg < ncfg; ++cfg) {
                Rng rng(1234u + static_cast<unsigned>(cfg));
                Shape shape;
                for (int s = 0; s < slots; ++s)
                    shape.push_back(size_cfgs[static_cast<size_t>(cfg)].at(groups[static_cast<size_t>(s)]));
                for (int t = 0; t < order; ++t) {
                    Tensor x(shape);
                    for (int64_t e = 0; e < x.size(); ++e) x[e] = static_cast<float>(rng.uniform_int(7)) - 3.0f;
                    probe_xs[static_cast<size_t>(cfg)].push_back(std::move(x));
                }
            }
            auto apply_mat = [](const Eigen::MatrixXd& m, const Tensor& x) {
                Eigen::VectorXd v(x.size());
                for (int64_t e = 0; e < x.size(); ++e) v(static_cast<Eigen::Index>(e)) = x[e];
                Eigen::VectorXd w = m * v;
                Tensor out(x.shape());
                for (int64_t e = 0; e < out.size(); ++e) out[e] = static_cast<float>(w(static_cast<Eigen::Index>(e)));
                return out;
            };

            bool changed = true;
            while (changed) {
                changed = false;
                for (size_t i = 0; i < candidates.size() && !changed; ++i) {
                    const Candidate& cand = candidates[i];
                    int k = order;
                    std::vector<Tensor> want(ncfg);
                    for (int cfg = 0; cfg < ncfg; ++cfg)
                        want[static_cast<size_t>(cfg)] = eval_terms(sym, cand.ins, cand.out, probe_xs[static_cast<size_t>(cfg)]);

                    bool redundant = false;
                    for (size_t ci = 0; ci < candidates.size() && !redundant; ++ci) {
                        if (ci == i) continue;
                        const Candidate& core = candidates[ci];
                        std::vector<int> assign(static_cast<size_t>(k));
                        for (int t = 0; t < k; ++t) assign[static_cast<size_t>(t)] = t;
                        std::sort(assign.begin(), assign.end());
                        do {
                            std::vector<size_t> pre_pick(static_cast<size_t>(k), 0);
                            bool done = false;
                            while (!done && !redundant) {
                                // core output for this pre/assignment choice
                                std::vector<Tensor> mid(ncfg);
                                bool valid = true;
                                for (int cfg = 0; cfg < ncfg && valid; ++cfg) {
                                    std::vector<Tensor> core_in;
                                    for (int t = 0; t < k; ++t) {
                                        const Tensor& src =
                                            probe_xs[static_cast<size_t>(cfg)][static_cast<size_t>(assign[static_cast<size_t>(t)])];
                                        const auto& pm = pre_set[pre_pick[static_cast<size_t>(t)]][static_cast<size_t>(cfg)];
                                        if (pm.cols() != src.size()) {
                                            valid = false;
                                            break;
                                        }
                                        core_in.push_back(apply_mat(pm, src));
                                    }
                                    if (valid) mid[static_cast<size_t>(cfg)] = eval_terms(sym, core.ins, core.out, core_in);
                                }
                                if (valid) {
                                    for (const auto& post : post_set) {
                                        bool all_match = true;
                                        for (int cfg = 0; cfg < ncfg && all_match; ++cfg) {
                                            const auto& qm = post[static_cast<size_t>(cfg)];
                                            const Tensor& m = mid[static_cast<size_t>(cfg)];
                                            const Tensor& w = want[static_cast<size_t>(cfg)];
                                            if (qm.cols() != m.size() || qm.rows() != w.size()) {
                                                all_match = false;
                                                break;
                                            }
                                            Tensor got = apply_mat(qm, m);
                                            if (max_abs_diff(got.reshape(w.shape()), w) > 1e-6) all_match = false;
                                        }
                                        if (all_match) {
                                            redundant = true;
                                            break;
                                        }
                                    }
                                }
                                int t = 0;
                                for (; t < k; ++t) {
                                    if (++pre_pick[static_cast<size_t>(t)] < pre_set.size()) break;
                                    pre_pick[static_cast<size_t>(t)] = 0;
                                }
                                if (t == k) done = true;
                            }
                        } while (!redundant && std::next_permutation(assign.begin(), assign.end()));
                    }
                    if (redundant) {
                        candidates.erase(candidates.begin() + static_cast<long>(i));
                        changed = true;
                    }
                }
            }
        }

        for (auto& c : candidates) result.push_back(make_op(sym, c.key));
    }
    return result;
}

}  // namespace tlra
