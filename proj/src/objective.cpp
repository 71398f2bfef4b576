#include "objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace coped::objective {

const char* weight_variant_name(WeightVariant v) {
    switch (v) {
        case WeightVariant::Uniform: return "uniform";
        case WeightVariant::CompositeOnly: return "composite_only";
        case WeightVariant::DiscrepancyOnly: return "discrepancy_only";
        case WeightVariant::Full: return "full";
    }
    throw ContractError("unknown weight variant");
}

WeightVariant weight_variant_from_name(const std::string& name) {
    if (name == "uniform") return WeightVariant::Uniform;
    if (name == "composite_only") return WeightVariant::CompositeOnly;
    if (name == "discrepancy_only") return WeightVariant::DiscrepancyOnly;
    if (name == "full") return WeightVariant::Full;
    throw FormatError("unknown weight variant: " + name);
}

WeightVector compute_weights(std::span<const SampleLossPair> losses,
                             double tau, WeightVariant variant) {
    if (losses.empty())
        throw ContractError("compute_weights: empty loss sequence");
    if (!(tau > 0.0))
        throw ConfigError("compute_weights: tau must be positive");

    const std::size_t n = losses.size();
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SampleLossPair& p = losses[i];
        if (!std::isfinite(p.l_r) || !std::isfinite(p.l_a))
            throw NumericError("compute_weights: non-finite loss at index " +
                               std::to_string(i));
        switch (variant) {
            case WeightVariant::Uniform:
                scores[i] = 0.0;
                break;
            case WeightVariant::CompositeOnly:
                scores[i] = -(p.l_r + p.l_a) / tau;
                break;
            case WeightVariant::DiscrepancyOnly:
                scores[i] = -std::abs(p.l_r - p.l_a) / tau;
                break;
            case WeightVariant::Full:
                scores[i] =
                    -(p.l_r + p.l_a + std::abs(p.l_r - p.l_a)) / tau;
                break;
        }
    }

    const double max_score = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    WeightVector out;
    out.tau = tau;
    out.variant = variant;
    out.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.weights[i] = std::exp(scores[i] - max_score);
        sum += out.weights[i];
    }
    for (double& w : out.weights) w /= sum;
    return out;
}

double weighted_batch_loss(std::span<const SampleLossPair> losses,
                           const WeightVector& weights) {
    if (losses.size() != weights.weights.size())
        throw ContractError("weighted_batch_loss: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i)
        total += weights.weights[i] * (losses[i].l_r + losses[i].l_a);
    return total;
}

double mixed_loss(double l_ra, double l_rc, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ConfigError("mixed_loss: alpha must be in [0,1]");
    if (!std::isfinite(l_ra) || !std::isfinite(l_rc))
        throw NumericError("mixed_loss: non-finite input");
    return (1.0 - alpha) * l_ra + alpha * l_rc;
}

}  // namespace coped::objective
