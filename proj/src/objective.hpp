// Loss algebra: per-batch confidence weights, the weighted answer-bearing
// loss, and the dual-task mixing coefficient.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "common.hpp"

namespace coped::objective {

enum class WeightVariant { Uniform, CompositeOnly, DiscrepancyOnly, Full };

const char* weight_variant_name(WeightVariant v);
WeightVariant weight_variant_from_name(const std::string& name);

// Per-sample (rationale, answer) cross-entropy means for one answer-bearing
// example of a batch.
struct SampleLossPair {
    double l_r = 0.0;
    double l_a = 0.0;
    std::uint64_t example_id = 0;
    bool noisy = false;
};

struct WeightVector {
    std::vector<double> weights;  // sums to 1, aligned with the input batch
    double tau = 1.0;
    WeightVariant variant = WeightVariant::Full;
};

// Batch-softmax confidence weights. Scores per variant:
//   full:             -(l_r + l_a + |l_r - l_a|) / tau
//   composite_only:   -(l_r + l_a) / tau
//   discrepancy_only: -|l_r - l_a| / tau
//   uniform:          all equal
// Softmax is stabilized by max-score subtraction.
WeightVector compute_weights(std::span<const SampleLossPair> losses,
                             double tau, WeightVariant variant);

// sum_i w_i * (l_r_i + l_a_i). With uniform weights this is the batch mean.
double weighted_batch_loss(std::span<const SampleLossPair> losses,
                           const WeightVector& weights);

// (1 - alpha) * l_ra + alpha * l_rc.
double mixed_loss(double l_ra, double l_rc, double alpha);

}  // namespace coped::objective
