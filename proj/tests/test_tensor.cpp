#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "einsum.hpp"
#include "tensor.hpp"
#include "testutil.hpp"

using namespace tlra;
using testutil::oracle_einsum;

TEST_CASE("tensor invariants") {
    Tensor s = Tensor::scalar(2.5f);
    CHECK(s.rank() == 0);
    CHECK(s.item() == doctest::Approx(2.5));
    CHECK_THROWS(Tensor({2, 0, 3}));
    CHECK_THROWS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}));

    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at(std::vector<int64_t>{1, 2}) == 6.0f);
    Tensor tt = t.transpose(0, 1);
    CHECK(tt.shape() == Shape{3, 2});
    CHECK(tt.at(std::vector<int64_t>{2, 1}) == 6.0f);
    CHECK(tt.at(std::vector<int64_t>{0, 1}) == 4.0f);
}

TEST_CASE("permute_axis semantics") {
    Tensor x({3, 1}, {1, 2, 3});
    SUBCASE("identity") {
        std::vector<int64_t> p{0, 1, 2};
        CHECK(max_abs_diff(permute_axis(x, 0, p), x) == 0.0);
    }
    SUBCASE("reversal moves slice i to perm(i)") {
        std::vector<int64_t> p{2, 1, 0};
        Tensor y = permute_axis(x, 0, p);
        CHECK(y.vec() == std::vector<float>{3, 2, 1});
    }
    SUBCASE("perm then inverse is identity") {
        Rng rng(7);
        Tensor r = rng.normal_tensor({5, 4});
        std::vector<int64_t> p{3, 0, 4, 1, 2};
        std::vector<int64_t> pinv(5);
        for (int64_t i = 0; i < 5; ++i) pinv[static_cast<size_t>(p[static_cast<size_t>(i)])] = i;
        CHECK(max_abs_diff(permute_axis(permute_axis(r, 0, p), 0, pinv), r) == 0.0);
    }
    SUBCASE("invalid permutation") {
        std::vector<int64_t> p{0, 0, 2};
        CHECK_THROWS(permute_axis(x, 0, p));
    }
}

TEST_CASE("einsum matches frozen examples") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor ab = einsum("ij,jk->ik", {a, b});
    CHECK(ab.vec() == std::vector<float>{19, 22, 43, 50});

    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(einsum("ii->", {eye}).item() == doctest::Approx(3.0));

    // X X^T X with a batch axis of one, against the loop oracle
    Rng rng(11);
    Tensor x = rng.normal_tensor({1, 3, 3});
    Tensor got = einsum("Zik,Zlk,Zlj->Zij", {x, x, x});
    Tensor want = oracle_einsum("Zik,Zlk,Zlj->Zij", {x, x, x});
    CHECK(testutil::rel_err(got, want) < 1e-5);
}

TEST_CASE("einsum validation errors") {
    Tensor a({2, 3}, std::vector<float>(6, 1.0f));
    Tensor b({4, 2}, std::vector<float>(8, 1.0f));
    CHECK_THROWS(einsum("ij,jk->ik", {a, b}));       // j binds 3 and 4
    CHECK_THROWS(einsum("ij->ii", {a}));             // repeated output label
    CHECK_THROWS(einsum("ij->ik", {a}));             // unknown output label
    CHECK_THROWS(einsum("ij,jk->ik", {a}));          // operand count
}

TEST_CASE("einsum diagonal extraction") {
    Tensor m({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor d = einsum("ii->i", {m});
    CHECK(d.vec() == std::vector<float>{1, 5, 9});
}

namespace {

// Random but valid spec over <=4 operands with axis sizes <=6. Occasionally
// produces in-operand repeated labels and summed-out labels.
struct RandomCase {
    std::string subscripts;
    std::vector<Tensor> ops;
};

RandomCase random_case(Rng& rng) {
    int n_ops = 2 + static_cast<int>(rng.uniform_int(3));
    std::string alphabet = "abcdef";
    std::map<char, int64_t> sizes;
    for (char c : alphabet) sizes[c] = 1 + rng.uniform_int(6);
    std::vector<std::string> terms;
    std::string present;
    for (int i = 0; i < n_ops; ++i) {
        int r = 1 + static_cast<int>(rng.uniform_int(3));
        std::string t;
        for (int k = 0; k < r; ++k) {
            char c = alphabet[static_cast<size_t>(rng.uniform_int(6))];
            t.push_back(c);
            if (present.find(c) == std::string::npos) present.push_back(c);
        }
        terms.push_back(t);
    }
    std::string out;
    for (char c : present)
        if (rng.uniform() < 0.5) out.push_back(c);
    RandomCase rc;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (i) rc.subscripts += ',';
        rc.subscripts += terms[i];
    }
    rc.subscripts += "->" + out;
    for (const auto& t : terms) {
        Shape s;
        for (char c : t) s.push_back(sizes[c]);
        rc.ops.push_back(rng.uniform_tensor(s, -1.0, 1.0));
    }
    return rc;
}

}  // namespace

TEST_CASE("einsum agrees with loop oracle on 200 random cases") {
    Rng rng(2024);
    for (int rep = 0; rep < 200; ++rep) {
        RandomCase rc = random_case(rng);
        Tensor got = einsum(rc.subscripts, std::span<const Tensor>(rc.ops));
        Tensor want = oracle_einsum(rc.subscripts, rc.ops);
        INFO("spec ", rc.subscripts);
        CHECK(testutil::rel_err(got, want) < 1e-5);
    }
}

TEST_CASE("plan_contraction on the reference five-operand spec") {
    // ab,dc,ae,ac,db->de with every axis of length n
    int64_t n = 4;
    std::vector<Shape> shapes{{n, n}, {n, n}, {n, n}, {n, n}, {n, n}};
    auto spec = EinsumSpec::parse("ab,dc,ae,ac,db->de");
    ContractionPlan plan = plan_contraction(spec, shapes);
    CHECK(plan.max_intermediate_rank <= 2);
    CHECK(plan.est_flops <= plan.naive_flops);

    Rng rng(5);
    std::vector<Tensor> ops;
    for (int i = 0; i < 5; ++i) ops.push_back(rng.normal_tensor({n, n}));
    Tensor got = execute_plan(plan, ops);
    Tensor want = oracle_einsum("ab,dc,ae,ac,db->de", ops);
    CHECK(testutil::rel_err(got, want) < 1e-5);
}

TEST_CASE("two-operand plan is the single naive step") {
    auto spec = EinsumSpec::parse("ij,jk->ik");
    std::vector<Shape> shapes{{3, 4}, {4, 5}};
    ContractionPlan plan = plan_contraction(spec, shapes);
    CHECK(plan.steps.size() == 1);
    CHECK(plan.est_flops == plan.naive_flops);
    Rng rng(9);
    std::vector<Tensor> ops{rng.normal_tensor({3, 4}), rng.normal_tensor({4, 5})};
    Tensor via_plan = execute_plan(plan, ops);
    Tensor direct = einsum(spec, ops);
    CHECK(max_abs_diff(via_plan, direct) == 0.0);  // identical bits
}

TEST_CASE("five-operand chain matches naive") {
    int64_t n = 5;
    auto spec = EinsumSpec::parse("ab,bc,cd,de,ef->af");
    std::vector<Shape> shapes(5, Shape{n, n});
    Rng rng(13);
    std::vector<Tensor> ops;
    for (int i = 0; i < 5; ++i) ops.push_back(rng.normal_tensor({n, n}));
    ContractionPlan plan = plan_contraction(spec, shapes);
    Tensor got = execute_plan(plan, ops);
    Tensor want = oracle_einsum("ab,bc,cd,de,ef->af", ops);
    CHECK(testutil::rel_err(got, want) < 1e-5);
}

TEST_CASE("plan equals einsum over random corpus, est never above naive") {
    Rng rng(77);
    int planned = 0;
    for (int rep = 0; rep < 200; ++rep) {
        RandomCase rc = random_case(rng);
        std::vector<Shape> shapes;
        for (const auto& t : rc.ops) shapes.push_back(t.shape());
        auto spec = EinsumSpec::parse(rc.subscripts);
        if (spec.operand_count() < 2) continue;
        ContractionPlan plan = plan_contraction(spec, shapes);
        CHECK(plan.est_flops <= plan.naive_flops);
        Tensor via_plan = execute_plan(plan, rc.ops);
        Tensor direct = einsum(spec, rc.ops);
        INFO("spec ", rc.subscripts);
        CHECK(testutil::rel_err(via_plan, direct) < 1e-5);
        ++planned;
    }
    CHECK(planned > 100);
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42);
    Rng child1 = c.split("zoo");
    Rng child2 = c.split("train");
    CHECK(child1.seed() != child2.seed());
    Rng child1b = Rng(42).split("zoo");
    CHECK(child1.next_u64() == child1b.next_u64());
}

TEST_CASE("rng helpers stay in range") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        int64_t k = rng.uniform_int(7);
        CHECK(k >= 0);
        CHECK(k < 7);
    }
    auto idx = rng.sample_indices(10, 10);
    for (int64_t i = 0; i < 10; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
    auto sub = rng.sample_indices(10, 4);
    CHECK(sub.size() == 4);
    CHECK(std::is_sorted(sub.begin(), sub.end()));
}
