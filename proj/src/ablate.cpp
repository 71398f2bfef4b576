#include "ablate.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace coped::ablate {

using trainer::RunConfig;

const char* axis_name(Axis a) {
    switch (a) {
        case Axis::Tau: return "tau";
        case Axis::Alpha: return "alpha";
        case Axis::WeightVariant: return "weight_variant";
        case Axis::DataFraction: return "data_fraction";
        case Axis::CorrectionTarget: return "correction_target";
    }
    throw ContractError("unknown axis");
}

Axis axis_from_name(const std::string& name) {
    if (name == "tau") return Axis::Tau;
    if (name == "alpha") return Axis::Alpha;
    if (name == "weight_variant") return Axis::WeightVariant;
    if (name == "data_fraction") return Axis::DataFraction;
    if (name == "correction_target") return Axis::CorrectionTarget;
    throw ConfigError("unknown ablation axis: " + name);
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2]
                 : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

RunConfig apply_axis_value(const RunConfig& base, Axis axis,
                           const std::string& value) {
    RunConfig c = base;
    switch (axis) {
        case Axis::Tau: c.tau = std::stod(value); break;
        case Axis::Alpha: c.alpha = std::stod(value); break;
        case Axis::WeightVariant:
            c.weight_variant = objective::weight_variant_from_name(value);
            break;
        case Axis::DataFraction:
            break;  // handled by corpus restriction, not config
        case Axis::CorrectionTarget:
            if (value == "correct_rationale")
                c.correction_target = corpus::CorrectionTarget::CorrectRationale;
            else if (value == "empty")
                c.correction_target = corpus::CorrectionTarget::Empty;
            else
                throw ConfigError("unknown correction_target value: " + value);
            break;
    }
    c.validate();
    return c;
}

taskgen::Corpus restrict_data_fraction(const taskgen::Corpus& corpus,
                                       double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("data_fraction must be in (0,1]");
    taskgen::Corpus out = corpus;
    const std::size_t n = corpus.train.size();
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(fraction * static_cast<double>(n)));
    // Stable prefix of a seed-shuffled id order.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t j = i + rng.below(n - i);
        std::swap(order[i], order[j]);
    }
    order.resize(keep);
    std::sort(order.begin(), order.end());
    out.train.clear();
    for (std::size_t i : order) out.train.push_back(corpus.train[i]);
    return out;
}

std::vector<Cell> run_sweep(const RunConfig& base,
                            const taskgen::Corpus& corpus, Axis axis,
                            const std::vector<std::string>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const std::filesystem::path& run_root) {
    if (values.empty()) throw ContractError("run_sweep: no values");
    if (seeds.empty()) throw ContractError("run_sweep: no seeds");

    std::vector<Cell> cells;
    for (const std::string& value : values) {
        for (std::uint64_t seed : seeds) {
            Cell cell;
            cell.axis = axis_name(axis);
            cell.value = value;
            cell.seed = seed;
            const auto run_dir =
                run_root / (std::string(axis_name(axis)) + "_" + value +
                            "_seed" + std::to_string(seed));
            try {
                RunConfig config = apply_axis_value(base, axis, value);
                config.seeds.model = seed;
                config.seeds.shuffle = seed ^ 0x9E3779B97F4A7C15ULL;
                config.model.init_seed = seed;
                const taskgen::Corpus cell_corpus =
                    axis == Axis::DataFraction
                        ? restrict_data_fraction(corpus, std::stod(value),
                                                 seed)
                        : corpus;
                trainer::train(config, cell_corpus, run_dir);
                auto loaded = trainer::load_checkpoint(
                    run_dir / "checkpoints" / "last.ckpt");
                cell.reports["test_ind"] =
                    eval::evaluate(loaded.model, cell_corpus.test_ind,
                                   eval::PredictMode::Plain, "test_ind");
                cell.reports["test_ood"] =
                    eval::evaluate(loaded.model, cell_corpus.test_ood,
                                   eval::PredictMode::Plain, "test_ood");
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

std::string sweep_to_csv(const std::vector<Cell>& cells,
                         const std::string& axis) {
    std::string out = "axis,value,seed,split,metric,value\n";
    auto row = [&out](const std::string& axis_, const std::string& value,
                      const std::string& seed, const std::string& split,
                      const std::string& metric, double v) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%.6g\n", axis_.c_str(),
                      value.c_str(), seed.c_str(), split.c_str(),
                      metric.c_str(), v);
        out += buf;
    };

    static const char* kMetrics[] = {"accuracy", "faithfulness", "soundness",
                                     "step_validity"};
    auto metric_of = [](const eval::EvalReport& r,
                        const std::string& m) -> double {
        if (m == "accuracy") return r.accuracy;
        if (m == "faithfulness") return r.faithfulness;
        if (m == "soundness") return r.soundness;
        return r.step_validity;
    };

    // Per-seed rows.
    for (const Cell& cell : cells) {
        if (cell.failed) {
            out += cell.axis + "," + cell.value + "," +
                   std::to_string(cell.seed) + ",-,error,nan # " + cell.error +
                   "\n";
            continue;
        }
        for (const auto& [split, report] : cell.reports)
            for (const char* m : kMetrics)
                row(cell.axis, cell.value, std::to_string(cell.seed), split, m,
                    metric_of(report, m));
    }

    // Median rows per (value, split, metric).
    std::vector<std::string> values;
    for (const Cell& cell : cells)
        if (std::find(values.begin(), values.end(), cell.value) ==
            values.end())
            values.push_back(cell.value);
    for (const std::string& value : values) {
        for (const char* split : {"test_ind", "test_ood"}) {
            for (const char* m : kMetrics) {
                std::vector<double> vals;
                for (const Cell& cell : cells) {
                    if (cell.failed || cell.value != value) continue;
                    auto it = cell.reports.find(split);
                    if (it != cell.reports.end())
                        vals.push_back(metric_of(it->second, m));
                }
                if (!vals.empty())
                    row(cells.front().axis, value, "median", split, m,
                        median(std::move(vals)));
            }
        }
    }
    return out;
}

std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs) {
    if (run_dirs.size() < 2)
        throw ContractError("compare: need at least two run directories");

    struct RunInfo {
        std::string variant;
        trainer::CheckpointInfo info;
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        trainer::CheckpointInfo info =
            trainer::read_checkpoint_info(dir / "checkpoints" / "last.ckpt");
        runs.push_back(
            {corpus::variant_name(info.config.variant), std::move(info)});
    }
    for (const RunInfo& r : runs)
        if (r.info.corpus_hash != runs.front().info.corpus_hash)
            throw ConfigError(
                "compare: corpus hash mismatch between run directories");

    std::string out = "run,variant,split,metric,value\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].info.metrics.empty()) continue;
        const trainer::EpochMetrics& last = runs[i].info.metrics.back();
        auto row = [&](const char* split, const char* metric, double v) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6g\n",
                          run_dirs[i].string().c_str(),
                          runs[i].variant.c_str(), split, metric, v);
            out += buf;
        };
        row("test_ind", "accuracy", last.acc_ind);
        row("test_ood", "accuracy", last.acc_ood);
        row("test_ind", "faithfulness", last.faithfulness);
        row("test_ind", "soundness", last.soundness);
    }
    return out;
}

}  // namespace coped::ablate
