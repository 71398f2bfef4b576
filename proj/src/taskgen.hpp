// Synthetic reasoning teacher: modular-arithmetic chains with correct and
// corrupted rationales.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "common.hpp"

namespace coped::taskgen {

enum class Op { Add, Sub, Mul };

char op_char(Op op);
Op op_from_char(char c);

struct IntRange {
    int lo = 0;
    int hi = 0;  // inclusive
};

struct GenParams {
    IntRange num_steps{2, 4};   // chain length k
    IntRange operand{0, 9};     // constants c_i and the start value v0
    int modulus = 100;          // all arithmetic is mod m
    std::vector<Op> ops{Op::Add, Op::Sub, Op::Mul};
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError naming the violated invariant
};

struct Step {
    int lhs = 0;
    Op op = Op::Add;
    int rhs = 0;
    int result = 0;
};

struct Rationale {
    std::vector<Step> steps;

    int conclusion() const;          // result of the last step
    std::string text() const;        // "7+5=12;12*3=36;36-4=32"
};

struct Instance {
    std::uint64_t id = 0;            // stable hash of the question text
    std::string question;            // "v0=7;+5;*3;-4"
    Rationale rationale_plus;
    Rationale rationale_minus;
    int answer = 0;
    int corrupted_step_index = 0;    // 1-based step where r- diverges
    int modulus = 0;                 // modulus the instance was built under
    bool noisy = false;              // set only by inject_label_noise
    std::string split;               // "train" | "test_ind" | "test_ood"
};

// Pure function of (params.seed, index); identical arguments yield a
// bit-identical Instance.
Instance gen_instance(const GenParams& params, std::uint64_t index);

// Picks a step j uniformly, replaces its result with a uniform value != the
// correct one, recomputes everything downstream, and redraws until the
// conclusion differs from the gold answer (corrupting the last step always
// qualifies, so the loop terminates).
Rationale corrupt_rationale(const Instance& inst, std::uint64_t rng_seed,
                            int* corrupted_index = nullptr);

struct CorpusSizes {
    std::size_t train = 2000;
    std::size_t test_ind = 500;
    std::size_t test_ood = 500;
};

struct Corpus {
    GenParams params;
    GenParams ood_params;
    std::vector<Instance> train;
    std::vector<Instance> test_ind;
    std::vector<Instance> test_ood;

    const std::vector<Instance>& split(const std::string& name) const;
    std::uint64_t hash() const;  // content hash over all three splits
};

// Three disjoint splits (no duplicate question strings anywhere); train and
// test_ind share params, test_ood uses ood_params.
Corpus build_corpus(const GenParams& params, const CorpusSizes& sizes,
                    const GenParams& ood_params);

// Swaps r+/r- on a floor(rho*|train|)-size uniform subset and flags it.
// The flag is telemetry only; training never reads it.
Corpus inject_label_noise(const Corpus& corpus, double rho,
                          std::uint64_t seed);

// One JSONL file per split: {id, question, rationale_plus, rationale_minus,
// answer, corrupted_step_index, noisy_flag, split}, stable field order.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

std::string to_json(const GenParams& p);

}  // namespace coped::taskgen
