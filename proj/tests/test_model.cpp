#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "model.hpp"

using namespace coped;
using namespace coped::model;

namespace {

taskgen::Corpus small_corpus() {
    taskgen::GenParams p;
    p.seed = 21;
    taskgen::GenParams ood = p;
    ood.num_steps = {5, 6};
    ood.seed = 22;
    return taskgen::build_corpus(p, {120, 10, 10}, ood);
}

ModelConfig tiny_cfg(Precision prec = Precision::F64) {
    ModelConfig c = model::tiny_config();
    c.precision = prec;
    return c;
}

}  // namespace

TEST_CASE("initialization is deterministic and validated") {
    ModelConfig c;
    Transformer<float> a(c), b(c);
    CHECK(a.param_checksum() == b.param_checksum());
    CHECK(a.param_count() == b.param_count());
    CHECK(a.param_count() > 0);

    ModelConfig other = c;
    other.init_seed = 43;
    Transformer<float> d(other);
    CHECK(d.param_checksum() != a.param_checksum());

    ModelConfig bad = c;
    bad.heads = 3;  // 64 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.vocab_size = 0;
    CHECK_THROWS_AS((Transformer<float>{bad, OptimParams{}}), ConfigError);
}

TEST_CASE("log probabilities normalize at every position") {
    auto corpus_data = small_corpus();
    Transformer<float> m32{ModelConfig{}};
    ModelConfig c64;
    c64.precision = Precision::F64;
    Transformer<double> m64{c64};
    for (int i = 0; i < 10; ++i) {
        auto ex = corpus::make_answer_prediction_example(corpus_data.train[i]);
        for (const auto& [tol, table] :
             {std::pair{1e-6, m32.log_prob_table(ex)},
              std::pair{1e-12, m64.log_prob_table(ex)}}) {
            REQUIRE(table.rows() == (long)ex.target_ids.size());
            for (long r = 0; r < table.rows(); ++r) {
                double sum = 0;
                for (long v = 0; v < table.cols(); ++v)
                    sum += std::exp(table(r, v));
                CHECK(std::fabs(sum - 1.0) < tol);
            }
        }
    }
}

TEST_CASE("untrained mean CE is near ln(vocab) on a 100-example batch") {
    auto corpus_data = small_corpus();
    Transformer<float> m{ModelConfig{}};
    const double ln_v = std::log(23.0);
    double total = 0;
    int count = 0;
    for (int i = 0; i < 100; ++i) {
        auto ex = corpus::make_answer_prediction_example(corpus_data.train[i]);
        SpanLoss sl = m.span_losses(ex);
        int nr = ex.rationale_span.size(), na = ex.answer_span.size();
        total += (nr * sl.l_r + na * sl.l_a) / (nr + na);
        ++count;
    }
    const double mean = total / count;
    CHECK(mean > 0.8 * ln_v);
    CHECK(mean < 1.2 * ln_v);
}

TEST_CASE("loss decomposition identity") {
    auto corpus_data = small_corpus();
    Transformer<float> m{ModelConfig{}};
    for (int i = 0; i < 20; ++i) {
        auto ex = corpus::make_answer_prediction_example(corpus_data.train[i]);
        SpanLoss sl = m.span_losses(ex);
        CHECK(sl.has_answer);
        // full-target mean CE from the raw table
        auto table = m.log_prob_table(ex);
        double total = 0;
        for (long r = 0; r < table.rows(); ++r)
            total -= table(r, ex.target_ids[(std::size_t)r]);
        total /= (double)table.rows();
        int nr = ex.rationale_span.size(), na = ex.answer_span.size();
        double weighted = (nr * sl.l_r + na * sl.l_a) / (nr + na);
        CHECK(std::fabs(total - weighted) < 1e-6 * std::max(1.0, total));
    }
}

TEST_CASE("correction examples report only l_r") {
    auto corpus_data = small_corpus();
    Transformer<float> m{ModelConfig{}};
    auto ex = corpus::make_correction_example(
        corpus_data.train[0], corpus::CorrectionTarget::CorrectRationale);
    SpanLoss sl = m.span_losses(ex);
    CHECK(!sl.has_answer);
    CHECK(sl.l_r > 0);
    auto bad = ex;
    bad.rationale_span = {0, 0};
    CHECK_THROWS_AS(m.span_losses(bad), ContractError);
}

TEST_CASE("forward input contracts") {
    Transformer<float> m{ModelConfig{}};
    CHECK_THROWS_AS(m.forward({}, {1, 2}), ContractError);
    CHECK_THROWS_AS(m.forward({1, 99}, {2}), ContractError);
    std::vector<int> too_long(200, 1);
    CHECK_THROWS_AS(m.forward(too_long, {2}), ContractError);
}

TEST_CASE("gradient check on the tiny config") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[0]);
    double err = grad_check(tiny_cfg(), ex, 1e-5, 200, 77);
    CHECK(err < 1e-4);

    // correction-shaped example exercises the l_r-only path
    auto rc = corpus::make_correction_example(
        corpus_data.train[1], corpus::CorrectionTarget::CorrectRationale);
    CHECK(grad_check(tiny_cfg(), rc, 1e-5, 100, 78) < 1e-4);

    // halving epsilon must not blow the error up (second-order behavior)
    double e1 = grad_check(tiny_cfg(), ex, 1e-5, 50, 79);
    double e2 = grad_check(tiny_cfg(), ex, 5e-6, 50, 79);
    CHECK(e2 < std::max(4 * e1, 1e-4));

    CHECK_THROWS_AS(grad_check(tiny_cfg(), ex, 1e-5, 0, 1), ContractError);
    CHECK_THROWS_AS(grad_check(tiny_cfg(Precision::F32), ex, 1e-5, 10, 1),
                    ContractError);
}

TEST_CASE("default shipped config passes grad_check") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[2]);
    ModelConfig c;  // shipped defaults, f64 for checking
    c.precision = Precision::F64;
    CHECK(grad_check(c, ex, 1e-5, 50, 80) < 1e-4);
}

TEST_CASE("adam step determinism and lr=0 identity") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[0]);
    auto run_steps = [&](int n) {
        Transformer<float> m{ModelConfig{}};
        for (int i = 0; i < n; ++i) {
            auto cache = m.forward(ex.input_ids, ex.target_ids);
            m.zero_grads();
            m.backward(cache, ex, 1.0, 1.0);
            m.adam_step(3e-3);
        }
        return m.param_checksum();
    };
    CHECK(run_steps(3) == run_steps(3));
    CHECK(run_steps(3) != run_steps(2));

    Transformer<float> m{ModelConfig{}};
    auto before = m.param_checksum();
    auto cache = m.forward(ex.input_ids, ex.target_ids);
    m.zero_grads();
    m.backward(cache, ex, 1.0, 1.0);
    m.adam_step(0.0);
    CHECK(m.param_checksum() == before);

    // zero gradients leave parameters unchanged
    Transformer<float> z{ModelConfig{}};
    auto zbefore = z.param_checksum();
    z.zero_grads();
    z.adam_step(3e-3);
    CHECK(z.param_checksum() == zbefore);
}

TEST_CASE("training on one example drives its loss down") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[0]);
    Transformer<float> m{ModelConfig{}};
    double first = 0, last = 0;
    for (int i = 0; i < 60; ++i) {
        auto cache = m.forward(ex.input_ids, ex.target_ids);
        SpanLoss sl = m.span_losses(cache, ex);
        if (i == 0) first = sl.l_r + sl.l_a;
        last = sl.l_r + sl.l_a;
        m.zero_grads();
        m.backward(cache, ex, 1.0, 1.0);
        m.adam_step(3e-3);
    }
    CHECK(last < 0.2 * first);
}

TEST_CASE("greedy generation is deterministic and respects stop") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[0]);
    Transformer<float> m{ModelConfig{}};
    const int eos = corpus::Vocab::instance().eos();
    auto a = m.generate(ex.input_ids, 40, eos);
    auto b = m.generate(ex.input_ids, 40, eos);
    CHECK(a.tokens == b.tokens);
    CHECK((int)a.tokens.size() <= 40);
    for (int t : a.tokens) CHECK(t != eos);

    auto none = m.generate(ex.input_ids, 0, eos);
    CHECK(none.tokens.empty());

    // KV-cached generation agrees with argmax over repeated full forwards;
    // row i of log_probs predicts target position i, so append a dummy token
    // to read the next-token distribution after the current prefix.
    std::vector<int> target;
    for (int step = 0; step < 10; ++step) {
        std::vector<int> probe = target;
        probe.push_back(eos);
        auto cache = m.forward(ex.input_ids, probe);
        Eigen::Index argmax = 0;
        cache.log_probs.row((long)target.size()).maxCoeff(&argmax);
        if ((int)argmax == eos) break;
        target.push_back((int)argmax);
    }
    std::size_t n = std::min(a.tokens.size(), target.size());
    CHECK(std::vector<int>(a.tokens.begin(), a.tokens.begin() + n) ==
          std::vector<int>(target.begin(), target.begin() + n));
}

TEST_CASE("state serialization round trip") {
    auto corpus_data = small_corpus();
    auto ex = corpus::make_answer_prediction_example(corpus_data.train[0]);
    Transformer<float> m{ModelConfig{}};
    for (int i = 0; i < 3; ++i) {
        auto cache = m.forward(ex.input_ids, ex.target_ids);
        m.zero_grads();
        m.backward(cache, ex, 1.0, 1.0);
        m.adam_step(3e-3);
    }
    std::stringstream buf;
    m.save_state(buf);
    Transformer<float> back{ModelConfig{}};
    back.load_state(buf);
    CHECK(back.param_checksum() == m.param_checksum());
    CHECK(back.step_count() == m.step_count());

    // further identical updates stay in lockstep (optimizer state restored)
    auto c1 = m.forward(ex.input_ids, ex.target_ids);
    m.zero_grads();
    m.backward(c1, ex, 1.0, 1.0);
    m.adam_step(1e-3);
    auto c2 = back.forward(ex.input_ids, ex.target_ids);
    back.zero_grads();
    back.backward(c2, ex, 1.0, 1.0);
    back.adam_step(1e-3);
    CHECK(back.param_checksum() == m.param_checksum());
}
