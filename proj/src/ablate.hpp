// Ablation sweeps (temperature, task balance, weighting variant, data size,
// correction target) and side-by-side run comparison.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evalmod.hpp"
#include "trainer.hpp"

namespace coped::ablate {

enum class Axis { Tau, Alpha, WeightVariant, DataFraction, CorrectionTarget };

const char* axis_name(Axis a);
Axis axis_from_name(const std::string& name);

struct Cell {
    std::string axis;
    std::string value;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    std::map<std::string, eval::EvalReport> reports;  // by split
};

// Full train + evaluate per (value, seed). Failed cells are recorded with
// their error and the sweep continues. run_root receives one run directory
// per cell.
std::vector<Cell> run_sweep(const trainer::RunConfig& base,
                            const taskgen::Corpus& corpus, Axis axis,
                            const std::vector<std::string>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const std::filesystem::path& run_root);

// Long format: {axis, value, seed, split, metric, value}, with one
// median-over-seeds row per (value, split, metric) appended (seed column
// "median").
std::string sweep_to_csv(const std::vector<Cell>& cells,
                         const std::string& axis);

// Side-by-side table across completed run directories; refuses run
// directories with differing corpus hashes. Requires >= 2 directories.
std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs);

double median(std::vector<double> values);

// Applies one ablation value onto a config. For DataFraction the value is a
// fraction in (0,1]; the training set is truncated to a stable prefix of a
// seed-shuffled instance order.
trainer::RunConfig apply_axis_value(const trainer::RunConfig& base, Axis axis,
                                    const std::string& value);
taskgen::Corpus restrict_data_fraction(const taskgen::Corpus& corpus,
                                       double fraction, std::uint64_t seed);

}  // namespace coped::ablate
