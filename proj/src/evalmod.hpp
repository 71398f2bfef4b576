// Accuracy, oracle-based faithfulness/soundness, and the verify-then-correct
// inference studies.
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>

#include "model.hpp"
#include "taskgen.hpp"

namespace coped::eval {

enum class PredictMode { Plain, SelfVerifyCorrect, OracleVerifyCorrect };

const char* predict_mode_name(PredictMode m);
PredictMode predict_mode_from_name(const std::string& name);

enum class RsStatus { RsT, RsF, Absent };

struct Prediction {
    std::uint64_t instance_id = 0;
    std::string rationale_text;          // possibly malformed
    RsStatus status = RsStatus::Absent;  // model-emitted verdict (first pass)
    std::optional<int> answer;
    std::vector<int> raw_tokens;         // first-pass decode
    bool malformed = false;
    std::string failure_class = "ok";
    bool corrected = false;  // a correction round was performed
};

// Total parse of a rationale under the step grammar; nullopt on any
// malformation. Never throws.
std::optional<taskgen::Rationale> parse_rationale(const std::string& text);

// 1 iff the rationale parses and its final conclusion equals answer.
// Malformed rationales score 0.
int rationale_supports(const std::string& rationale_text, int answer);

// Greedy decode (+ at most one correction round in the verify modes).
Prediction predict(const model::Transformer<float>& model,
                   const taskgen::Instance& inst, PredictMode mode);

struct EvalReport {
    std::string split;
    int n = 0;
    double accuracy = 0.0;
    double faithfulness = 0.0;   // mean rationale_supports(r_hat, a_hat)
    double soundness = 0.0;      // mean rationale_supports(r_hat, a_gold)
    double step_validity = 0.0;  // every parsed step arithmetically correct
    std::map<std::string, int> failure_counts;  // sums to n
};

EvalReport evaluate(const model::Transformer<float>& model,
                    std::span<const taskgen::Instance> instances,
                    PredictMode mode, const std::string& split_name);

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace coped::eval
