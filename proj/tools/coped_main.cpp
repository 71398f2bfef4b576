// coped CLI: experiment orchestration over the C API.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "coped.h"

namespace {

std::string read_file_or_die(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot read config file: " << path << "\n";
        std::exit(1);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// COPED_OUTPUT_ROOT is the only environment override: it prefixes relative
// output directories.
std::string resolve_out(const std::string& dir) {
    const char* root = std::getenv("COPED_OUTPUT_ROOT");
    if (!root || !*root || dir.empty() || dir.front() == '/') return dir;
    return std::string(root) + "/" + dir;
}

int finish(coped_status status) {
    if (status != COPED_OK) {
        std::cerr << "error: " << coped_last_error() << "\n";
        return static_cast<int>(status);
    }
    return 0;
}

struct Overrides {
    std::string variant, weight_variant, correction_target;
    double tau = -1, alpha = -1, noise_rho = -1, learning_rate = -1;
    int warmup_epoch = -1, epochs = -1, batch_size = -1;
    static constexpr unsigned long long kNoSeed = ~0ULL;
    unsigned long long seed_data = kNoSeed, seed_model = kNoSeed,
                       seed_shuffle = kNoSeed;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--variant", variant,
                        "std_cot | coped_t | coped_l | coped_tl");
        cmd->add_option("--tau", tau,
                        "weighting temperature (default 5)");
        cmd->add_option("--alpha", alpha,
                        "task mixing fraction (default 0.5)");
        cmd->add_option("--warmup-epoch", warmup_epoch,
                        "uniform-weight warmup epochs n (default 5)");
        cmd->add_option("--epochs", epochs, "training epochs N (default 20)");
        cmd->add_option("--batch-size", batch_size, "batch size (default 16)");
        cmd->add_option("--weight-variant", weight_variant,
                        "uniform | composite_only | discrepancy_only | full");
        cmd->add_option("--correction-target", correction_target,
                        "correct_rationale | empty");
        cmd->add_option("--noise-rho", noise_rho,
                        "label noise fraction (default 0)");
        cmd->add_option("--learning-rate", learning_rate,
                        "AdamW learning rate (default 3e-3)");
        cmd->add_option("--seed.data", seed_data, "data seed (default 1)");
        cmd->add_option("--seed.model", seed_model, "model seed (default 42)");
        cmd->add_option("--seed.shuffle", seed_shuffle,
                        "shuffle seed (default 7)");
    }

    std::string to_json() const {
        std::ostringstream j;
        j << "{";
        bool first = true;
        auto put = [&](const std::string& key, const std::string& value,
                       bool quote) {
            if (!first) j << ",";
            first = false;
            j << "\"" << key << "\":";
            if (quote) j << "\"" << value << "\"";
            else j << value;
        };
        if (!variant.empty()) put("variant", variant, true);
        if (!weight_variant.empty())
            put("weight_variant", weight_variant, true);
        if (!correction_target.empty())
            put("correction_target", correction_target, true);
        if (tau >= 0) put("tau", std::to_string(tau), false);
        if (alpha >= 0) put("alpha", std::to_string(alpha), false);
        if (noise_rho >= 0) put("noise_rho", std::to_string(noise_rho), false);
        if (learning_rate >= 0)
            put("learning_rate", std::to_string(learning_rate), false);
        if (warmup_epoch >= 0)
            put("warmup_epoch", std::to_string(warmup_epoch), false);
        if (epochs >= 0) put("epochs", std::to_string(epochs), false);
        if (batch_size >= 0)
            put("batch_size", std::to_string(batch_size), false);
        if (seed_data != kNoSeed)
            put("seeds.data", std::to_string(seed_data), false);
        if (seed_model != kNoSeed)
            put("seeds.model", std::to_string(seed_model), false);
        if (seed_shuffle != kNoSeed)
            put("seeds.shuffle", std::to_string(seed_shuffle), false);
        j << "}";
        return j.str();
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "coped: correctness-aware CoT distillation lab.\n"
        "Defaults follow the reference protocol: temperature tau=5, warmup "
        "n=5, mixing alpha=0.5, N=20 epochs, batch size 16."};
    app.require_subcommand(1);

    std::string config_path, corpus_dir, out_dir, checkpoint;
    std::string split = "test_ind", mode = "plain";
    std::string axis, values, seeds, run_dirs, question;
    Overrides ov;

    auto* gen = app.add_subcommand(
        "generate", "Generate the synthetic modular-arithmetic corpus");
    gen->add_option("--config", config_path, "run config JSON");
    gen->add_option("out_dir", out_dir, "corpus output directory")->required();
    ov.add_flags(gen);

    auto* train = app.add_subcommand("train", "Train one run");
    train->add_option("--config", config_path, "run config JSON");
    train->add_option("corpus_dir", corpus_dir, "corpus directory")
        ->required();
    train->add_option("out_dir", out_dir, "run output directory")->required();
    ov.add_flags(train);

    auto* resume = app.add_subcommand(
        "resume", "Continue a run from checkpoints/last.ckpt");
    resume->add_option("run_dir", out_dir, "existing run directory")
        ->required();
    resume->add_option("corpus_dir", corpus_dir, "corpus directory")
        ->required();

    auto* evaluate =
        app.add_subcommand("evaluate", "Evaluate a checkpoint on one split");
    evaluate->add_option("checkpoint", checkpoint, "checkpoint file")
        ->required();
    evaluate->add_option("corpus_dir", corpus_dir, "corpus directory")
        ->required();
    evaluate->add_option("out_dir", out_dir, "report output directory")
        ->required();
    evaluate->add_option("--split", split, "train | test_ind | test_ood");
    evaluate->add_option("--mode", mode,
                         "plain | self_verify | oracle_verify");

    auto* ablate = app.add_subcommand(
        "ablate", "Sweep one axis over values x seeds (tau grid: 1,2.5,5,"
                  "7.5,10; alpha grid: 0.3,0.5,0.7)");
    ablate->add_option("--config", config_path, "run config JSON");
    ablate->add_option("corpus_dir", corpus_dir, "corpus directory")
        ->required();
    ablate->add_option("out_dir", out_dir, "sweep output directory")
        ->required();
    ablate
        ->add_option("--axis", axis,
                     "tau | alpha | weight_variant | data_fraction | "
                     "correction_target")
        ->required();
    ablate->add_option("--values", values, "comma-separated values")
        ->required();
    ablate->add_option("--seeds", seeds, "comma-separated seeds")->required();
    ov.add_flags(ablate);

    auto* compare = app.add_subcommand(
        "compare", "Side-by-side table over completed run directories");
    compare->add_option("run_dirs", run_dirs,
                        "comma-separated run directories (>= 2)")
        ->required();
    compare->add_option("out_dir", out_dir, "output directory")->required();

    auto* infer =
        app.add_subcommand("infer", "Single-question decode for debugging");
    infer->add_option("checkpoint", checkpoint, "checkpoint file")
        ->required();
    infer->add_option("question", question, "e.g. v0=7;+5;*3;-4")->required();
    infer->add_option("--mode", mode, "plain | self_verify | oracle_verify");

    CLI11_PARSE(app, argc, argv);

    const std::string config_json =
        config_path.empty() ? std::string() : read_file_or_die(config_path);
    const std::string overrides = ov.to_json();
    const char* cfg = config_json.empty() ? nullptr : config_json.c_str();
    const std::string out = resolve_out(out_dir);

    if (gen->parsed())
        return finish(coped_generate(cfg, overrides.c_str(), out.c_str()));
    if (train->parsed())
        return finish(coped_train(cfg, overrides.c_str(), corpus_dir.c_str(),
                                  out.c_str()));
    if (resume->parsed())
        return finish(coped_resume(out.c_str(), corpus_dir.c_str()));
    if (evaluate->parsed())
        return finish(coped_evaluate(checkpoint.c_str(), corpus_dir.c_str(),
                                     split.c_str(), mode.c_str(),
                                     out.c_str()));
    if (ablate->parsed())
        return finish(coped_ablate(cfg, overrides.c_str(), corpus_dir.c_str(),
                                   axis.c_str(), values.c_str(),
                                   seeds.c_str(), out.c_str()));
    if (compare->parsed())
        return finish(coped_compare(run_dirs.c_str(), out.c_str()));
    if (infer->parsed()) {
        coped_model* model = nullptr;
        coped_status status = coped_model_open(checkpoint.c_str(), &model);
        if (status != COPED_OK) return finish(status);
        char buf[65536];
        status = coped_model_infer(model, question.c_str(), mode.c_str(), buf,
                                   sizeof(buf));
        coped_model_close(model);
        if (status == COPED_OK) std::cout << buf << "\n";
        return finish(status);
    }
    return 1;
}
