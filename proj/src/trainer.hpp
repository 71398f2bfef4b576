// Correctness-aware weighted training loop for all four method variants,
// with warmup scheduling, per-batch weight telemetry, deterministic
// checkpointing, and resume.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evalmod.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "taskgen.hpp"

namespace coped::trainer {

struct Seeds {
    std::uint64_t data = 1;     // corpus generation + noise injection
    std::uint64_t model = 42;   // parameter initialization
    std::uint64_t shuffle = 7;  // epoch shuffling, independent of the model
};

struct RunConfig {
    corpus::Variant variant = corpus::Variant::CopedTL;
    double alpha = 0.5;     // task mixing
    double tau = 5.0;       // weighting temperature
    int warmup_epoch = 5;   // n: uniform weights while epoch < n
    int epochs = 20;        // N
    int batch_size = 16;    // B
    objective::WeightVariant weight_variant = objective::WeightVariant::Full;
    corpus::CorrectionTarget correction_target =
        corpus::CorrectionTarget::CorrectRationale;
    double noise_rho = 0.0;
    bool warmup_literal_sum = false;  // literal unweighted sum during warmup
    Seeds seeds;
    taskgen::GenParams gen;
    taskgen::GenParams ood_gen;
    taskgen::CorpusSizes sizes;
    model::ModelConfig model;
    model::OptimParams optim;

    void validate() const;
};

// Defaults: gen k in [2,4], ood k in [5,6], both mod 100 over {+,-,*}.
RunConfig default_config();

std::string config_to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& json_text);
// Flat key overrides ({"variant": "...", "tau": 2.5, "seeds.model": 3, ...})
// take precedence over file values.
RunConfig apply_overrides(RunConfig config, const std::string& overrides_json);

struct EpochMetrics {
    int epoch = 0;
    double mean_l_ra = 0.0;
    double mean_l_rc = 0.0;
    double mean_mixed = 0.0;
    double mean_weight_noisy = 0.0;  // 0 when no noisy examples were seen
    double mean_weight_clean = 0.0;
    double acc_ind = 0.0;
    double acc_ood = 0.0;
    double faithfulness = 0.0;
    double soundness = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::filesystem::path checkpoint_last;
    std::filesystem::path checkpoint_best;
    std::uint64_t final_param_checksum = 0;
};

// Runs the warmup-then-weighted training loop for config.epochs epochs. The corpus is the clean corpus;
// label noise (config.noise_rho) is injected deterministically inside.
// Artifacts written into run_dir: config.json, metrics.csv, metrics.json,
// telemetry.csv, checkpoints/last.ckpt, checkpoints/best.ckpt.
TrainResult train(const RunConfig& config, const taskgen::Corpus& corpus,
                  const std::filesystem::path& run_dir);

// Continues bit-identically from a checkpoint written by train().
TrainResult resume(const std::filesystem::path& checkpoint,
                   const RunConfig& config, const taskgen::Corpus& corpus,
                   const std::filesystem::path& run_dir);

// Checkpoint loading for evaluation / inference.
struct LoadedModel {
    RunConfig config;
    model::Transformer<float> model;
    std::uint64_t corpus_hash = 0;
};
LoadedModel load_checkpoint(const std::filesystem::path& checkpoint);

// Header-only read (no parameter tensors).
struct CheckpointInfo {
    RunConfig config;
    int completed_epochs = 0;
    std::uint64_t corpus_hash = 0;
    std::uint64_t param_checksum = 0;
    std::vector<EpochMetrics> metrics;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint);

std::string metrics_to_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace coped::trainer
