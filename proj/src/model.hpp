// Tiny trainable decoder-only sequence model with explicit forward/backward,
// per-span losses, AdamW updates, KV-cached greedy decoding, and state
// (de)serialization. The input token sequence is prefix context; loss is
// computed on target positions only.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace coped::model {

enum class Precision { F32, F64 };

const char* precision_name(Precision p);
Precision precision_from_name(const std::string& name);

struct ModelConfig {
    int layers = 2;
    int heads = 2;
    int model_width = 64;
    int ff_width = 256;
    int context_length = corpus::kContextLength;
    int vocab_size = 23;
    Precision precision = Precision::F32;
    std::uint64_t init_seed = 42;

    void validate() const;  // throws ConfigError
};

// Shipped tiny configuration (1 layer, width 16) used for fast f64 gradient
// checking; the default configuration above is the training model.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.layers = 1;
    c.heads = 2;
    c.model_width = 16;
    c.ff_width = 32;
    return c;
}

struct OptimParams {
    double learning_rate = 3e-3;  // re-tuned for desk scale
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double gamma = 0.95;  // per-epoch exponential learning-rate decay
};

// Per-span mean cross-entropies for one example.
struct SpanLoss {
    double l_r = 0.0;
    double l_a = 0.0;
    bool has_answer = false;  // false for rationale_correction examples
};

struct GenerateResult {
    std::vector<int> tokens;  // generated tokens, stop token excluded
    bool stopped = false;     // true iff the stop token was emitted
};

template <typename T>
class Transformer {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    // All activations of one teacher-forced forward pass, kept so a weighted
    // backward pass can run after batch weights are known.
    struct Cache {
        std::vector<int> tokens;  // input ++ target
        int input_len = 0;
        int pos_offset = 0;
        struct LayerCache {
            Mat ln1_xhat, ln1_out;
            Eigen::VectorXd ln1_rstd;
            Mat q, k, v, att_concat;
            std::vector<Mat> att;  // per head: S x S softmax probabilities
            Mat ln2_xhat, ln2_out;
            Eigen::VectorXd ln2_rstd;
            Mat ff_act;  // post-ReLU, S x ff
        };
        std::vector<LayerCache> layers;
        Mat lnf_xhat, lnf_out;
        Eigen::VectorXd lnf_rstd;
        Eigen::MatrixXd log_probs;  // rows = target positions, cols = vocab
    };

    explicit Transformer(const ModelConfig& config,
                         const OptimParams& optim = {});
    Transformer(Transformer&&) noexcept;
    Transformer& operator=(Transformer&&) noexcept;
    Transformer(const Transformer&) = delete;
    Transformer& operator=(const Transformer&) = delete;
    ~Transformer();

    const ModelConfig& config() const { return config_; }
    const OptimParams& optim() const { return optim_; }
    std::size_t param_count() const;
    std::uint64_t param_checksum() const;

    // Teacher-forced pass over input ++ target. Throws ContractError on
    // empty input, unknown ids, or context overflow. pos_offset shifts the
    // positional embeddings by a constant; the trainer samples random shifts
    // so the learned step circuit becomes translation-invariant (this is
    // what lets it run longer chains than it was trained on). Evaluation
    // and decoding always use offset 0.
    Cache forward(const std::vector<int>& input_ids,
                  const std::vector<int>& target_ids,
                  int pos_offset = 0) const;

    // Per-position log-probability table over the vocabulary, one row per
    // target position.
    Eigen::MatrixXd log_prob_table(const corpus::TrainExample& ex) const;

    SpanLoss span_losses(const corpus::TrainExample& ex) const;
    SpanLoss span_losses(const Cache& cache,
                         const corpus::TrainExample& ex) const;

    // Accumulates gradients of
    //   coeff_r * l_r(ex) + coeff_a * l_a(ex)
    // into the internal gradient buffers. Call zero_grads() once per batch.
    void zero_grads();
    void backward(const Cache& cache, const corpus::TrainExample& ex,
                  double coeff_r, double coeff_a);

    // One AdamW step on the accumulated gradients. Throws NumericError if a
    // non-finite gradient is encountered.
    void adam_step(double learning_rate);

    // Greedy argmax decoding with a per-layer KV cache.
    GenerateResult generate(const std::vector<int>& input_ids, int max_new,
                            int stop_token) const;

    // Parameters + optimizer state + step counter, binary little-endian.
    void save_state(std::ostream& out) const;
    void load_state(std::istream& in);

    long step_count() const { return step_; }

private:
    struct State;  // parameters, gradients, optimizer moments

    friend double grad_check(const ModelConfig& config,
                             const corpus::TrainExample& ex, double epsilon,
                             int n_coords, std::uint64_t seed);

    ModelConfig config_;
    OptimParams optim_;
    long step_ = 0;
    std::unique_ptr<State> s_;
};

using TransformerF32 = Transformer<float>;
using TransformerF64 = Transformer<double>;

// Central finite differences over >= n_coords randomly chosen parameter
// coordinates of the total span loss (l_r + l_a). Returns the maximum
// relative error. f64 only.
double grad_check(const ModelConfig& config, const corpus::TrainExample& ex,
                  double epsilon, int n_coords, std::uint64_t seed);

}  // namespace coped::model
