// Tokenization and construction of the dual-task training examples, plus the
// Std-CoT baseline examples, with rationale/answer span bookkeeping.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "taskgen.hpp"

namespace coped::corpus {

// Fits every example the default generator parameters can produce.
inline constexpr int kContextLength = 160;

// Fixed character-level vocabulary: digits, operator symbols, special
// markers, and the two rationale-status tokens.
class Vocab {
public:
    static const Vocab& instance();

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    int id(const std::string& token) const;

    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int sep() const { return sep_; }
    int ans() const { return ans_; }
    int pad() const { return pad_; }
    int rs_t() const { return rs_t_; }
    int rs_f() const { return rs_f_; }

    // Character-level encoding of generator-grammar text. Throws FormatError
    // naming the offending character and offset.
    std::vector<int> encode(const std::string& text) const;

    // Inverse of encode; special tokens render as their bracketed names.
    std::string decode(const std::vector<int>& ids) const;

private:
    Vocab();
    std::vector<std::string> tokens_;
    int char_ids_[256];
    int bos_, eos_, sep_, ans_, pad_, rs_t_, rs_f_;
};

enum class ExampleKind { AnswerPrediction, RationaleCorrection, StdCot };

const char* kind_name(ExampleKind k);
ExampleKind kind_from_name(const std::string& name);

enum class CorrectionTarget { CorrectRationale, Empty };

enum class Variant { StdCot, CopedT, CopedL, CopedTL };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Half-open index interval into target_ids.
struct Span {
    int begin = 0;
    int end = 0;
    int size() const { return end - begin; }
    bool empty() const { return end <= begin; }
};

struct TrainExample {
    ExampleKind kind = ExampleKind::StdCot;
    std::vector<int> input_ids;
    std::vector<int> target_ids;
    Span rationale_span;
    Span answer_span;  // empty for rationale_correction
    std::uint64_t instance_id = 0;
    bool noisy = false;
};

// input = <BOS> q <SEP>; target = r+ <RS_T> <ANS> a <EOS>.
// rationale_span covers r+ and <RS_T>; answer_span covers <ANS>..<EOS>.
TrainExample make_answer_prediction_example(const taskgen::Instance& inst);

// input = <BOS> q <SEP> r- <RS_F>; target = r+ <EOS> (CorrectRationale) or
// <EOS> (Empty). answer_span empty, rationale_span covers the full target.
TrainExample make_correction_example(const taskgen::Instance& inst,
                                     CorrectionTarget target);

// input = <BOS> q <SEP>; target = r+ <ANS> a <EOS> (no status token).
TrainExample make_stdcot_example(const taskgen::Instance& inst);

// std_cot / coped_l: one std_cot example per instance.
// coped_t / coped_tl: one answer_prediction + one rationale_correction per
// instance, paired by instance_id. Order is stable: by instance_id, then kind.
std::vector<TrainExample> build_training_set(const taskgen::Corpus& corpus,
                                             Variant variant,
                                             CorrectionTarget target);

// Line-delimited serialization mirroring the corpus format with the added
// fields {kind, input_ids, target_ids, rationale_span, answer_span}.
void save_examples(const std::vector<TrainExample>& examples,
                   const std::filesystem::path& file);
std::vector<TrainExample> load_examples(const std::filesystem::path& file);

}  // namespace coped::corpus
