#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "taskgen.hpp"

using namespace coped;
using namespace coped::taskgen;

namespace {

GenParams def_params(std::uint64_t seed = 7) {
    GenParams p;
    p.seed = seed;
    return p;
}

// Independent oracle: executes a rationale step list mod m and returns the
// final value, checking internal chaining along the way.
int run_steps(const Rationale& r, int m, bool check_exact) {
    REQUIRE(!r.steps.empty());
    int prev = r.steps.front().lhs;
    for (const Step& s : r.steps) {
        CHECK(s.lhs == prev);
        if (check_exact) {
            long long expect = 0;
            switch (s.op) {
                case Op::Add: expect = (long long)s.lhs + s.rhs; break;
                case Op::Sub: expect = (long long)s.lhs - s.rhs; break;
                case Op::Mul: expect = (long long)s.lhs * s.rhs; break;
            }
            CHECK(((expect % m) + m) % m == s.result);
        }
        prev = s.result;
    }
    return prev;
}

}  // namespace

TEST_CASE("gen_instance is a pure function of (seed, index)") {
    auto p = def_params();
    for (std::uint64_t i : {0ull, 1ull, 999ull}) {
        Instance a = gen_instance(p, i);
        Instance b = gen_instance(p, i);
        CHECK(a.id == b.id);
        CHECK(a.question == b.question);
        CHECK(a.rationale_plus.text() == b.rationale_plus.text());
        CHECK(a.rationale_minus.text() == b.rationale_minus.text());
        CHECK(a.answer == b.answer);
        CHECK(a.corrupted_step_index == b.corrupted_step_index);
    }
    Instance c = gen_instance(def_params(8), 0);
    CHECK(c.question != gen_instance(p, 0).question);
}

TEST_CASE("oracle re-execution over 10^4 instances") {
    auto p = def_params(123);
    for (std::uint64_t i = 0; i < 10000; ++i) {
        Instance inst = gen_instance(p, i);
        int k = (int)inst.rationale_plus.steps.size();
        CHECK(k >= p.num_steps.lo);
        CHECK(k <= p.num_steps.hi);
        CHECK(run_steps(inst.rationale_plus, p.modulus, true) == inst.answer);
        CHECK(inst.rationale_plus.conclusion() == inst.answer);
        // r- re-executes to its own (different) conclusion; steps past the
        // corruption point stay internally consistent mod m.
        CHECK(run_steps(inst.rationale_minus, p.modulus, false) ==
              inst.rationale_minus.conclusion());
        CHECK(inst.rationale_minus.conclusion() != inst.answer);
        // prefix agreement before the corrupted step (1-based)
        int j = inst.corrupted_step_index;
        REQUIRE(j >= 1);
        REQUIRE(j <= k);
        for (int s = 0; s + 1 < j; ++s) {
            CHECK(inst.rationale_plus.steps[s].result ==
                  inst.rationale_minus.steps[s].result);
        }
        CHECK(inst.rationale_plus.steps[j - 1].result !=
              inst.rationale_minus.steps[j - 1].result);
        // downstream of j, only the chained values differ, ops/operands agree
        for (int s = 0; s < k; ++s) {
            CHECK(inst.rationale_plus.steps[s].op ==
                  inst.rationale_minus.steps[s].op);
            CHECK(inst.rationale_plus.steps[s].rhs ==
                  inst.rationale_minus.steps[s].rhs);
        }
        CHECK(inst.answer >= 0);
        CHECK(inst.answer < p.modulus);
    }
}

TEST_CASE("question text matches the rationale") {
    auto p = def_params(55);
    Instance inst = gen_instance(p, 3);
    // "v0=<int>;<op1><c1>;...": first value and operand list must equal the
    // rationale's lhs/op/rhs sequence.
    std::string q = "v0=" + std::to_string(inst.rationale_plus.steps[0].lhs);
    for (const Step& s : inst.rationale_plus.steps) {
        char op = s.op == Op::Add ? '+' : s.op == Op::Sub ? '-' : '*';
        q += ";";
        q += op;
        q += std::to_string(s.rhs);
    }
    CHECK(inst.question == q);
}

TEST_CASE("k=1 identity case") {
    GenParams p;
    p.num_steps = {1, 1};
    p.operand = {0, 0};
    p.ops = {Op::Add};
    p.seed = 9;
    Instance inst = gen_instance(p, 0);
    REQUIRE(inst.rationale_plus.steps.size() == 1);
    const Step& s = inst.rationale_plus.steps[0];
    CHECK(s.rhs == 0);
    CHECK(s.result == s.lhs);
    CHECK(inst.answer == s.lhs);
    CHECK(inst.corrupted_step_index == 1);
    CHECK(inst.rationale_minus.conclusion() != inst.answer);
}

TEST_CASE("invalid params rejected") {
    GenParams p = def_params();
    p.num_steps = {0, 2};
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = def_params();
    p.modulus = 1;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = def_params();
    p.ops = {};
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = def_params();
    p.operand = {0, 100};  // must stay within [0, m)
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = def_params();
    p.num_steps = {0, 0};
    CHECK_THROWS_AS(gen_instance(p, 0), ConfigError);
}

TEST_CASE("build_corpus splits, OOD contract, determinism") {
    GenParams p = def_params(1);
    GenParams ood = p;
    ood.num_steps = {5, 6};
    ood.seed = 2;
    Corpus c = build_corpus(p, {200, 50, 50}, ood);
    CHECK(c.train.size() == 200);
    CHECK(c.test_ind.size() == 50);
    CHECK(c.test_ood.size() == 50);
    std::set<std::string> questions;
    for (const auto* split : {&c.train, &c.test_ind, &c.test_ood})
        for (const Instance& inst : *split) questions.insert(inst.question);
    CHECK(questions.size() == 300);  // disjoint across splits
    for (const Instance& inst : c.test_ood)
        CHECK(inst.rationale_plus.steps.size() >= 5);
    for (const Instance& inst : c.train) CHECK(inst.split == "train");

    Corpus c2 = build_corpus(p, {200, 50, 50}, ood);
    CHECK(c.hash() == c2.hash());

    Corpus tiny = build_corpus(p, {1, 1, 1}, ood);
    CHECK(tiny.train[0].question != tiny.test_ind[0].question);
    CHECK(tiny.train[0].question != tiny.test_ood[0].question);
}

TEST_CASE("duplicate exhaustion raises a generation error") {
    GenParams p;
    p.num_steps = {1, 1};
    p.operand = {0, 0};
    p.modulus = 2;  // only two possible questions: v0=0;+0 and v0=1;+0
    p.ops = {Op::Add};
    p.seed = 3;
    GenParams ood = p;
    ood.seed = 4;
    CHECK_THROWS_AS(build_corpus(p, {4, 4, 4}, ood), GenerationError);
}

TEST_CASE("inject_label_noise counts, swap semantics, identity") {
    GenParams p = def_params(1);
    GenParams ood = p;
    ood.num_steps = {5, 6};
    ood.seed = 2;
    Corpus c = build_corpus(p, {2000, 10, 10}, ood);

    Corpus same = inject_label_noise(c, 0.0, 99);
    CHECK(same.hash() == c.hash());

    Corpus noisy = inject_label_noise(c, 0.3, 99);
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < noisy.train.size(); ++i) {
        const Instance& before = c.train[i];
        const Instance& after = noisy.train[i];
        if (after.noisy) {
            ++flagged;
            CHECK(after.rationale_plus.text() == before.rationale_minus.text());
            CHECK(after.rationale_minus.text() == before.rationale_plus.text());
        } else {
            CHECK(after.rationale_plus.text() == before.rationale_plus.text());
        }
    }
    CHECK(flagged == 600);  // floor(0.3 * 2000)
    CHECK(noisy.train.size() == c.train.size());
    CHECK(noisy.test_ind.size() == c.test_ind.size());
    for (const Instance& inst : noisy.test_ind) CHECK(!inst.noisy);

    Corpus all = inject_label_noise(c, 1.0, 99);
    for (const Instance& inst : all.train) CHECK(inst.noisy);

    // deterministic in (corpus, rho, seed)
    CHECK(inject_label_noise(c, 0.3, 99).hash() == noisy.hash());
    CHECK(inject_label_noise(c, 0.3, 100).hash() != noisy.hash());
}

TEST_CASE("corpus serialization round trip") {
    GenParams p = def_params(1);
    GenParams ood = p;
    ood.num_steps = {5, 6};
    ood.seed = 2;
    Corpus c = build_corpus(p, {30, 10, 10}, ood);
    auto dir = std::filesystem::temp_directory_path() / "coped_taskgen_rt";
    std::filesystem::remove_all(dir);
    save_corpus(c, dir);
    Corpus back = load_corpus(dir);
    CHECK(back.hash() == c.hash());
    CHECK(back.train.size() == c.train.size());
    CHECK(back.train[0].question == c.train[0].question);
    CHECK(back.train[0].modulus == c.train[0].modulus);
    CHECK(back.test_ood[5].rationale_minus.text() ==
          c.test_ood[5].rationale_minus.text());
    CHECK_THROWS_AS(load_corpus(dir / "missing"), IoError);
    std::filesystem::remove_all(dir);
}
