#include "corpus.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace coped::corpus {

using nlohmann::ordered_json;

Vocab::Vocab() {
    for (int& v : char_ids_) v = -1;
    auto add = [this](const std::string& tok) {
        int id = static_cast<int>(tokens_.size());
        tokens_.push_back(tok);
        if (tok.size() == 1)
            char_ids_[static_cast<unsigned char>(tok[0])] = id;
        return id;
    };
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
    for (char c : {'+', '-', '*', '=', ';', 'v'}) add(std::string(1, c));
    bos_ = add("<BOS>");
    eos_ = add("<EOS>");
    sep_ = add("<SEP>");
    ans_ = add("<ANS>");
    pad_ = add("<PAD>");
    rs_t_ = add("<RS_T>");
    rs_f_ = add("<RS_F>");
}

const Vocab& Vocab::instance() {
    static const Vocab vocab;
    return vocab;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size())
        throw ContractError("Vocab: id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& token) const {
    for (int i = 0; i < size(); ++i)
        if (tokens_[static_cast<std::size_t>(i)] == token) return i;
    throw ContractError("Vocab: unknown token: " + token);
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        int id = char_ids_[static_cast<unsigned char>(text[i])];
        if (id < 0)
            throw FormatError(std::string("encode: unknown character '") +
                              text[i] + "' at offset " + std::to_string(i));
        ids.push_back(id);
    }
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += token(id);
    return out;
}

const char* kind_name(ExampleKind k) {
    switch (k) {
        case ExampleKind::AnswerPrediction: return "answer_prediction";
        case ExampleKind::RationaleCorrection: return "rationale_correction";
        case ExampleKind::StdCot: return "std_cot";
    }
    throw ContractError("unknown example kind");
}

ExampleKind kind_from_name(const std::string& name) {
    if (name == "answer_prediction") return ExampleKind::AnswerPrediction;
    if (name == "rationale_correction") return ExampleKind::RationaleCorrection;
    if (name == "std_cot") return ExampleKind::StdCot;
    throw FormatError("unknown example kind: " + name);
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::StdCot: return "std_cot";
        case Variant::CopedT: return "coped_t";
        case Variant::CopedL: return "coped_l";
        case Variant::CopedTL: return "coped_tl";
    }
    throw ContractError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "std_cot") return Variant::StdCot;
    if (name == "coped_t") return Variant::CopedT;
    if (name == "coped_l") return Variant::CopedL;
    if (name == "coped_tl") return Variant::CopedTL;
    throw FormatError("unknown variant: " + name);
}

namespace {

void check_length(const TrainExample& ex) {
    const int total = static_cast<int>(ex.input_ids.size()) +
                      static_cast<int>(ex.target_ids.size());
    if (total > kContextLength)
        throw ContractError("example exceeds context length: " +
                            std::to_string(total) + " > " +
                            std::to_string(kContextLength));
}

std::vector<int> question_input(const taskgen::Instance& inst) {
    const Vocab& v = Vocab::instance();
    std::vector<int> input;
    input.push_back(v.bos());
    for (int id : v.encode(inst.question)) input.push_back(id);
    input.push_back(v.sep());
    return input;
}

}  // namespace

TrainExample make_answer_prediction_example(const taskgen::Instance& inst) {
    const Vocab& v = Vocab::instance();
    TrainExample ex;
    ex.kind = ExampleKind::AnswerPrediction;
    ex.instance_id = inst.id;
    ex.noisy = inst.noisy;
    ex.input_ids = question_input(inst);
    for (int id : v.encode(inst.rationale_plus.text()))
        ex.target_ids.push_back(id);
    ex.target_ids.push_back(v.rs_t());
    ex.rationale_span = {0, static_cast<int>(ex.target_ids.size())};
    ex.target_ids.push_back(v.ans());
    for (int id : v.encode(std::to_string(inst.answer)))
        ex.target_ids.push_back(id);
    ex.target_ids.push_back(v.eos());
    ex.answer_span = {ex.rationale_span.end,
                      static_cast<int>(ex.target_ids.size())};
    check_length(ex);
    return ex;
}

TrainExample make_correction_example(const taskgen::Instance& inst,
                                     CorrectionTarget target) {
    const Vocab& v = Vocab::instance();
    TrainExample ex;
    ex.kind = ExampleKind::RationaleCorrection;
    ex.instance_id = inst.id;
    ex.noisy = inst.noisy;
    ex.input_ids = question_input(inst);
    for (int id : v.encode(inst.rationale_minus.text()))
        ex.input_ids.push_back(id);
    ex.input_ids.push_back(v.rs_f());
    if (target == CorrectionTarget::CorrectRationale)
        for (int id : v.encode(inst.rationale_plus.text()))
            ex.target_ids.push_back(id);
    ex.target_ids.push_back(v.eos());
    ex.rationale_span = {0, static_cast<int>(ex.target_ids.size())};
    ex.answer_span = {ex.rationale_span.end, ex.rationale_span.end};
    check_length(ex);
    return ex;
}

TrainExample make_stdcot_example(const taskgen::Instance& inst) {
    const Vocab& v = Vocab::instance();
    TrainExample ex;
    ex.kind = ExampleKind::StdCot;
    ex.instance_id = inst.id;
    ex.noisy = inst.noisy;
    ex.input_ids = question_input(inst);
    for (int id : v.encode(inst.rationale_plus.text()))
        ex.target_ids.push_back(id);
    ex.rationale_span = {0, static_cast<int>(ex.target_ids.size())};
    ex.target_ids.push_back(v.ans());
    for (int id : v.encode(std::to_string(inst.answer)))
        ex.target_ids.push_back(id);
    ex.target_ids.push_back(v.eos());
    ex.answer_span = {ex.rationale_span.end,
                      static_cast<int>(ex.target_ids.size())};
    check_length(ex);
    return ex;
}

std::vector<TrainExample> build_training_set(const taskgen::Corpus& corpus,
                                             Variant variant,
                                             CorrectionTarget target) {
    std::vector<TrainExample> out;
    const bool dual =
        variant == Variant::CopedT || variant == Variant::CopedTL;
    out.reserve(corpus.train.size() * (dual ? 2 : 1));
    for (const taskgen::Instance& inst : corpus.train) {
        if (dual) {
            out.push_back(make_answer_prediction_example(inst));
            out.push_back(make_correction_example(inst, target));
        } else {
            out.push_back(make_stdcot_example(inst));
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TrainExample& a, const TrainExample& b) {
                         if (a.instance_id != b.instance_id)
                             return a.instance_id < b.instance_id;
                         return static_cast<int>(a.kind) <
                                static_cast<int>(b.kind);
                     });
    return out;
}

void save_examples(const std::vector<TrainExample>& examples,
                   const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot open " + file.string());
    for (const TrainExample& ex : examples) {
        ordered_json j{{"instance_id", ex.instance_id},
                       {"kind", kind_name(ex.kind)},
                       {"input_ids", ex.input_ids},
                       {"target_ids", ex.target_ids},
                       {"rationale_span", {ex.rationale_span.begin, ex.rationale_span.end}},
                       {"answer_span", {ex.answer_span.begin, ex.answer_span.end}},
                       {"noisy_flag", ex.noisy}};
        out << j.dump() << '\n';
    }
}

std::vector<TrainExample> load_examples(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<TrainExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        TrainExample ex;
        ex.instance_id = j.at("instance_id");
        ex.kind = kind_from_name(j.at("kind").get<std::string>());
        ex.input_ids = j.at("input_ids").get<std::vector<int>>();
        ex.target_ids = j.at("target_ids").get<std::vector<int>>();
        ex.rationale_span = {j.at("rationale_span").at(0),
                             j.at("rationale_span").at(1)};
        ex.answer_span = {j.at("answer_span").at(0), j.at("answer_span").at(1)};
        ex.noisy = j.at("noisy_flag");
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace coped::corpus
