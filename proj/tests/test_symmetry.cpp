#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "symmetry.hpp"
#include "testutil.hpp"

using namespace tlra;

namespace {

std::set<std::string> op_keys(const std::vector<PoolingOp>& ops, int order) {
    std::set<std::string> keys;
    for (const auto& op : ops)
        if (op.order() == order) keys.insert(op.key());
    return keys;
}

}  // namespace

TEST_CASE("symmetry type parsing") {
    auto t = SymmetryType::parse("abH");
    CHECK(t.num_groups == 2);
    CHECK(t.perm_slots() == std::vector<int>{0, 1});
    CHECK(t.has_latent());
    CHECK_FALSE(t.has_batch());

    auto aa = SymmetryType::parse("aaH");
    CHECK(aa.num_groups == 1);
    CHECK(aa.slot_groups() == std::vector<int>{0, 0});

    CHECK_THROWS_AS(SymmetryType::parse("a("), std::invalid_argument);
    CHECK_THROWS_AS(SymmetryType::parse("ZH"), std::invalid_argument);
}

TEST_CASE("1D invariance degrees of freedom match the worked example") {
    auto sym = SymmetryType::parse("a");
    auto b0 = solve_coefficient_basis(sym, 0, 3);
    auto b1 = solve_coefficient_basis(sym, 1, 3);
    auto b2 = solve_coefficient_basis(sym, 2, 3);
    CHECK(b0.dof == 1);
    CHECK(b1.dof == 1);  // all b_i equal
    CHECK(b2.dof == 2);  // diagonal vs off-diagonal
    CHECK(b0.dof + b1.dof + b2.dof == 4);  // vs 13 unconstrained (1 + 3 + 9)

    // order-2 patterns are the diagonal indicator and its complement
    CHECK(b2.patterns.size() == 2);
    Tensor diag({3, 3});
    for (int i = 0; i < 3; ++i) diag[i * 3 + i] = 1.0f;
    bool has_diag = max_abs_diff(b2.patterns[0], diag) == 0.0 || max_abs_diff(b2.patterns[1], diag) == 0.0;
    CHECK(has_diag);
    // patterns partition the index set
    Tensor total = add(b2.patterns[0], b2.patterns[1]);
    CHECK(total.max_abs() == 1.0f);
    for (int64_t i = 0; i < total.size(); ++i) CHECK(total[i] == 1.0f);
}

TEST_CASE("order-2 dof is 2 independently of n") {
    auto sym = SymmetryType::parse("a");
    for (int64_t n : {4, 5, 6}) {
        auto b = solve_coefficient_basis(sym, 2, n);
        CHECK(b.dof == 2);
        CHECK(b.dof == orbit_count_full_group(sym, 2, n));
    }
}

TEST_CASE("generator orbits equal brute-force orbit counting on the grid") {
    auto sym = SymmetryType::parse("a");
    for (int k = 0; k <= 3; ++k)
        for (int64_t n = 2; n <= 5; ++n) {
            auto b = solve_coefficient_basis(sym, k, n);
            int brute = orbit_count_full_group(sym, k, n);
            INFO("k=", k, " n=", n);
            CHECK(b.dof == brute);
            if (b.numeric_checked) CHECK(b.numeric_nullity == b.dof);
        }
}

TEST_CASE("numeric null space from transpositions equals full-group enumeration for n<=4") {
    auto sym = SymmetryType::parse("a");
    for (int k = 1; k <= 3; ++k)
        for (int64_t n = 2; n <= 4; ++n) {
            auto b = solve_coefficient_basis(sym, k, n);
            REQUIRE(b.numeric_checked);
            int full = numeric_nullity_full_group(sym, k, n);
            INFO("k=", k, " n=", n);
            CHECK(b.numeric_nullity == full);
        }
}

TEST_CASE("two-class and joint types solve coherently") {
    auto ab = SymmetryType::parse("ab");
    auto b = solve_coefficient_basis(ab, 1, 3);
    // order-1 coefficients over an n*m grid with independent row/col perms:
    // a single orbit
    CHECK(b.dof == 1);
    CHECK(b.dof == orbit_count_full_group(ab, 1, 3));

    auto b2 = solve_coefficient_basis(ab, 2, 3);
    CHECK(b2.dof == orbit_count_full_group(ab, 2, 3));

    auto aa = SymmetryType::parse("aa");
    auto c1 = solve_coefficient_basis(aa, 1, 3);
    CHECK(c1.dof == orbit_count_full_group(aa, 1, 3));
    CHECK(c1.dof == 2);  // diagonal and off-diagonal entries of one matrix
}

TEST_CASE("aH pooling table: orders 1-2") {
    auto sym = SymmetryType::parse("aH");
    auto ops = enumerate_pooling_ops(sym, 2);
    CHECK(op_keys(ops, 1) == std::set<std::string>{"a->a", "a->b"});
    CHECK(op_keys(ops, 2) == std::set<std::string>{"a,a->a"});
    // notation carries the latent axis
    bool found = false;
    for (const auto& op : ops)
        if (op.notation() == "aH,aH->aH") found = true;
    CHECK(found);
}

TEST_CASE("aH order 3+ is a no-need row") {
    auto sym = SymmetryType::parse("aH");
    auto ops = enumerate_pooling_ops(sym, 3);
    CHECK(op_keys(ops, 3).empty());
}

TEST_CASE("abH pooling table: orders 1-3") {
    auto sym = SymmetryType::parse("abH");
    auto ops = enumerate_pooling_ops(sym, 3);
    CHECK(op_keys(ops, 1) == std::set<std::string>{"ab->ab", "ab->cb", "ab->ac"});
    CHECK(op_keys(ops, 2) == std::set<std::string>{"ab,ab->ab"});
    // same op as the table's ab,cb,cd->ad up to per-class renaming
    CHECK(op_keys(ops, 3) == std::set<std::string>{canonical_pooling_key(sym, "ab,cb,cd->ad")});
}

TEST_CASE("aaH pooling table: orders 1-2") {
    auto sym = SymmetryType::parse("aaH");
    auto ops = enumerate_pooling_ops(sym, 2);
    CHECK(op_keys(ops, 1) == std::set<std::string>{"ab->ab", "aa->aa", "ab->ba", "ab->cb"});
    CHECK(op_keys(ops, 2) == std::set<std::string>{"ab,bc->ac", "ab,ab->ab"});
}

TEST_CASE("abH order-5 static entries and order-4 no-need row") {
    auto sym = SymmetryType::parse("abH");
    auto ops = enumerate_pooling_ops(sym, 5);
    CHECK(op_keys(ops, 4).empty());
    CHECK(op_keys(ops, 5) ==
          std::set<std::string>{"ab,ac,db,dc,de->ae", "ab,ac,db,dc,ec->eb"});
}

TEST_CASE("breakability filter matches the worked example") {
    auto sym = SymmetryType::parse("ab");
    // ab,cb,cd,ad->ad splits into (ab,cb,cd->ad) * (ad->ad)
    CHECK(is_breakable(sym, {"ab", "cb", "cd", "ad"}, "ad"));
    // the order-3 chain itself is not breakable
    CHECK_FALSE(is_breakable(sym, {"ab", "cb", "cd"}, "ad"));
    // the pointwise-product combinator is exempt
    CHECK_FALSE(is_breakable(sym, {"ab", "ab"}, "ab"));
}

TEST_CASE("dependency filter matches the worked example") {
    auto sym = SymmetryType::parse("ab");
    // ab,cb->cb aligns column labels across different rows
    CHECK(satisfies_dependency(sym, {"ab", "cb"}, "cb", 'b', 'a'));
    CHECK_FALSE(satisfies_dependency(sym, {"ab", "cb"}, "cb", 'a', 'b'));
}

TEST_CASE("dependency-filtered enumeration drops cross-parent ops") {
    auto sym = SymmetryType::parse("ab");
    sym.add_dependency('a', 'b');
    auto ops = enumerate_pooling_ops(sym, 1);
    // ab->cb pools over rows while keeping column identity: not allowed when
    // each row owns its private column ordering
    auto keys = op_keys(ops, 1);
    CHECK(keys.count("ab->ab"));
    CHECK_FALSE(keys.count("ab->cb"));
}

TEST_CASE("every enumerated op is numerically equivariant") {
    Rng rng(2025);
    for (const char* type : {"aH", "aaH", "abH"}) {
        auto sym = SymmetryType::parse(type);
        auto ops = enumerate_pooling_ops(sym, type == std::string("abH") ? 3 : 2);
        for (const auto& op : ops) {
            double dev = check_equivariance(op, 100, rng);
            INFO("type ", type, " op ", op.key());
            CHECK(dev <= 1e-5);
        }
    }
}

TEST_CASE("check_equivariance basics") {
    Rng rng(7);
    auto sym = SymmetryType::parse("aH");
    PoolingOp ident{sym, {"a"}, "a"};
    CHECK(check_equivariance(ident, 5, rng) == 0.0);

    PoolingOp meanb{sym, {"a"}, "b"};
    CHECK(check_equivariance(meanb, 20, rng) <= 1e-6);

    auto ab = SymmetryType::parse("abH");
    PoolingOp order3{ab, {"ac", "bc", "ad"}, "bd"};
    CHECK(check_equivariance(order3, 100, rng) <= 1e-5);
}

TEST_CASE("apply_pooling_op against the loop oracle") {
    Rng rng(17);
    auto ab = SymmetryType::parse("abH");
    PoolingOp order3{ab, {"ac", "bc", "ad"}, "bd"};
    Tensor x1 = rng.normal_tensor({2, 3, 2});
    Tensor x2 = rng.normal_tensor({2, 3, 2});
    Tensor x3 = rng.normal_tensor({2, 3, 2});
    Tensor got = apply_pooling_op(order3, std::vector<Tensor>{x1, x2, x3});
    Tensor want = testutil::oracle_einsum("acH,bcH,adH->bdH", {x1, x2, x3});
    CHECK(testutil::rel_err(got, want) < 1e-5);
}

TEST_CASE("apply_pooling_op broadcast and diagonal outputs") {
    auto aa = SymmetryType::parse("aa");
    // aa->aa extracts the diagonal and re-embeds it
    PoolingOp diag{aa, {"aa"}, "aa"};
    Tensor m({2, 2}, {1, 2, 3, 4});
    Tensor d = apply_pooling_op(diag, std::vector<Tensor>{m});
    CHECK(d.vec() == std::vector<float>{1, 0, 0, 4});

    // ab->cb sums over rows and broadcasts
    PoolingOp pool{aa, {"ab"}, "cb"};
    Tensor p = apply_pooling_op(pool, std::vector<Tensor>{m});
    CHECK(p.vec() == std::vector<float>{4, 6, 4, 6});
}
