#include "evalmod.hpp"

#include <algorithm>

#include "json.hpp"

namespace coped::eval {

using corpus::Vocab;

const char* predict_mode_name(PredictMode m) {
    switch (m) {
        case PredictMode::Plain: return "plain";
        case PredictMode::SelfVerifyCorrect: return "self_verify_correct";
        case PredictMode::OracleVerifyCorrect: return "oracle_verify_correct";
    }
    throw ContractError("unknown predict mode");
}

PredictMode predict_mode_from_name(const std::string& name) {
    if (name == "plain") return PredictMode::Plain;
    if (name == "self_verify_correct" || name == "self_verify")
        return PredictMode::SelfVerifyCorrect;
    if (name == "oracle_verify_correct" || name == "oracle_verify")
        return PredictMode::OracleVerifyCorrect;
    throw FormatError("unknown predict mode: " + name);
}

std::optional<taskgen::Rationale> parse_rationale(const std::string& text) {
    taskgen::Rationale r;
    std::size_t pos = 0;
    auto read_int = [&text, &pos]() -> std::optional<int> {
        std::size_t start = pos;
        while (pos < text.size() &&
               text[pos] >= '0' && text[pos] <= '9' && pos - start < 9)
            ++pos;
        if (pos == start) return std::nullopt;
        return std::stoi(text.substr(start, pos - start));
    };
    while (pos < text.size()) {
        taskgen::Step s;
        auto lhs = read_int();
        if (!lhs) return std::nullopt;
        s.lhs = *lhs;
        if (pos >= text.size()) return std::nullopt;
        const char opc = text[pos];
        if (opc != '+' && opc != '-' && opc != '*') return std::nullopt;
        s.op = taskgen::op_from_char(opc);
        ++pos;
        auto rhs = read_int();
        if (!rhs) return std::nullopt;
        s.rhs = *rhs;
        if (pos >= text.size() || text[pos] != '=') return std::nullopt;
        ++pos;
        auto res = read_int();
        if (!res) return std::nullopt;
        s.result = *res;
        r.steps.push_back(s);
        if (pos < text.size()) {
            if (text[pos] != ';') return std::nullopt;
            ++pos;
            if (pos == text.size()) return std::nullopt;  // trailing ';'
        }
    }
    if (r.steps.empty()) return std::nullopt;
    return r;
}

int rationale_supports(const std::string& rationale_text, int answer) {
    auto r = parse_rationale(rationale_text);
    if (!r) return 0;
    return r->conclusion() == answer ? 1 : 0;
}

namespace {

struct ParsedDecode {
    std::string rationale_text;
    RsStatus status = RsStatus::Absent;
    std::optional<int> answer;
    bool malformed = false;
    std::string failure_class = "ok";
};

// Splits a generated token stream into rationale text, status verdict, and
// answer digits following the fixed target grammar. Malformation is
// recorded, never repaired.
ParsedDecode parse_decode(const std::vector<int>& tokens, bool stopped) {
    const Vocab& v = Vocab::instance();
    ParsedDecode out;
    std::size_t i = 0;
    while (i < tokens.size()) {
        const int id = tokens[i];
        if (id == v.rs_t() || id == v.rs_f() || id == v.ans()) break;
        if (id >= v.bos()) {  // unexpected structural token
            out.malformed = true;
            out.failure_class = "bad_structure";
            return out;
        }
        out.rationale_text += v.token(id);
        ++i;
    }
    if (i < tokens.size() &&
        (tokens[i] == v.rs_t() || tokens[i] == v.rs_f())) {
        out.status = tokens[i] == v.rs_t() ? RsStatus::RsT : RsStatus::RsF;
        ++i;
    }
    if (i >= tokens.size() || tokens[i] != v.ans()) {
        out.malformed = true;
        out.failure_class = stopped ? "no_answer" : "no_stop";
        return out;
    }
    ++i;  // skip <ANS>
    std::string digits;
    for (; i < tokens.size(); ++i) {
        const std::string& tok = v.token(tokens[i]);
        if (tok.size() != 1 || tok[0] < '0' || tok[0] > '9') {
            out.malformed = true;
            out.failure_class = "bad_answer";
            return out;
        }
        digits += tok;
    }
    if (digits.empty() || digits.size() > 9) {
        out.malformed = true;
        out.failure_class = digits.empty() ? "no_answer" : "bad_answer";
        return out;
    }
    if (!stopped) {
        out.malformed = true;
        out.failure_class = "no_stop";
        return out;
    }
    out.answer = std::stoi(digits);
    return out;
}

std::vector<int> question_prefix(const taskgen::Instance& inst) {
    const Vocab& v = Vocab::instance();
    std::vector<int> ids;
    ids.push_back(v.bos());
    for (int id : v.encode(inst.question)) ids.push_back(id);
    ids.push_back(v.sep());
    return ids;
}

int decode_budget(std::size_t prefix_len) {
    return std::max(1, corpus::kContextLength - static_cast<int>(prefix_len));
}

// One correction round: regenerate the rationale conditioned on
// q + first_rationale + <RS_F>, then re-predict the answer from
// q + corrected_rationale + <RS_T> + <ANS>.
void correct_and_repredict(const model::Transformer<float>& model,
                           const taskgen::Instance& inst,
                           const std::string& first_rationale,
                           Prediction& pred) {
    const Vocab& v = Vocab::instance();
    pred.corrected = true;

    std::vector<int> corr_input = question_prefix(inst);
    for (int id : v.encode(first_rationale)) corr_input.push_back(id);
    corr_input.push_back(v.rs_f());
    if (static_cast<int>(corr_input.size()) >= corpus::kContextLength - 1)
        return;  // no room to decode; keep the first-pass outputs
    auto corr = model.generate(corr_input, decode_budget(corr_input.size()),
                               v.eos());
    std::string corrected;
    for (int id : corr.tokens) {
        if (id >= v.bos()) return;  // malformed correction; keep first pass
        corrected += v.token(id);
    }
    if (corrected.empty()) return;

    std::vector<int> answer_prefix = question_prefix(inst);
    for (int id : v.encode(corrected)) answer_prefix.push_back(id);
    answer_prefix.push_back(v.rs_t());
    answer_prefix.push_back(v.ans());
    if (static_cast<int>(answer_prefix.size()) >= corpus::kContextLength - 1)
        return;
    auto ans = model.generate(answer_prefix,
                              std::min(4, decode_budget(answer_prefix.size())),
                              v.eos());
    std::string digits;
    for (int id : ans.tokens) {
        const std::string& tok = v.token(id);
        if (tok.size() != 1 || tok[0] < '0' || tok[0] > '9') return;
        digits += tok;
    }
    if (digits.empty() || digits.size() > 9 || !ans.stopped) return;

    pred.rationale_text = corrected;
    pred.answer = std::stoi(digits);
    pred.malformed = false;
    pred.failure_class = "ok";
}

}  // namespace

Prediction predict(const model::Transformer<float>& model,
                   const taskgen::Instance& inst, PredictMode mode) {
    const Vocab& v = Vocab::instance();
    Prediction pred;
    pred.instance_id = inst.id;

    std::vector<int> input = question_prefix(inst);
    auto gen = model.generate(input, decode_budget(input.size()), v.eos());
    pred.raw_tokens = gen.tokens;

    ParsedDecode parsed = parse_decode(gen.tokens, gen.stopped);
    pred.rationale_text = parsed.rationale_text;
    pred.status = parsed.status;
    pred.answer = parsed.answer;
    pred.malformed = parsed.malformed;
    pred.failure_class = parsed.failure_class;

    switch (mode) {
        case PredictMode::Plain:
            break;
        case PredictMode::SelfVerifyCorrect:
            if (pred.status == RsStatus::RsF)
                correct_and_repredict(model, inst, pred.rationale_text, pred);
            break;
        case PredictMode::OracleVerifyCorrect:
            if (rationale_supports(pred.rationale_text, inst.answer) == 0)
                correct_and_repredict(model, inst, pred.rationale_text, pred);
            break;
    }
    return pred;
}

namespace {

int steps_all_valid(const std::string& rationale_text, int modulus) {
    auto r = parse_rationale(rationale_text);
    if (!r || modulus < 2) return 0;
    for (const taskgen::Step& s : r->steps) {
        long long v = 0;
        switch (s.op) {
            case taskgen::Op::Add: v = (long long)s.lhs + s.rhs; break;
            case taskgen::Op::Sub: v = (long long)s.lhs - s.rhs; break;
            case taskgen::Op::Mul: v = (long long)s.lhs * s.rhs; break;
        }
        long long m = v % modulus;
        if (m < 0) m += modulus;
        if (m != s.result) return 0;
    }
    return 1;
}

}  // namespace

EvalReport evaluate(const model::Transformer<float>& model,
                    std::span<const taskgen::Instance> instances,
                    PredictMode mode, const std::string& split_name) {
    if (instances.empty()) throw ContractError("evaluate: empty split");

    // Aggregation is order-independent; process in instance_id order.
    std::vector<const taskgen::Instance*> sorted;
    sorted.reserve(instances.size());
    for (const auto& inst : instances) sorted.push_back(&inst);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->id < b->id; });

    EvalReport report;
    report.split = split_name;
    report.n = static_cast<int>(instances.size());
    long correct = 0, faithful = 0, sound = 0, valid = 0;
    for (const taskgen::Instance* inst : sorted) {
        Prediction pred = predict(model, *inst, mode);
        if (pred.answer && *pred.answer == inst->answer) ++correct;
        if (pred.answer)
            faithful += rationale_supports(pred.rationale_text, *pred.answer);
        sound += rationale_supports(pred.rationale_text, inst->answer);
        valid += steps_all_valid(pred.rationale_text, inst->modulus);
        std::string cls = pred.failure_class;
        if (cls == "ok" && (!pred.answer || *pred.answer != inst->answer))
            cls = "wrong_answer";
        ++report.failure_counts[cls];
    }
    report.accuracy = static_cast<double>(correct) / report.n;
    report.faithfulness = static_cast<double>(faithful) / report.n;
    report.soundness = static_cast<double>(sound) / report.n;
    report.step_validity = static_cast<double>(valid) / report.n;
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j{{"split", report.split},
                             {"n", report.n},
                             {"accuracy", report.accuracy},
                             {"faithfulness", report.faithfulness},
                             {"soundness", report.soundness},
                             {"step_validity", report.step_validity},
                             {"failure_counts", report.failure_counts}};
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& report) {
    std::string out = "split,metric,value\n";
    auto row = [&out, &report](const std::string& metric, double value) {
        out += report.split + "," + metric + "," + std::to_string(value) + "\n";
    };
    row("n", report.n);
    row("accuracy", report.accuracy);
    row("faithfulness", report.faithfulness);
    row("soundness", report.soundness);
    row("step_validity", report.step_validity);
    for (const auto& [cls, count] : report.failure_counts)
        row("count_" + cls, count);
    return out;
}

}  // namespace coped::eval
