#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "trainer.hpp"

using namespace coped;
using namespace coped::trainer;

namespace {

RunConfig tiny_config() {
    RunConfig c = default_config();
    c.epochs = 4;
    c.warmup_epoch = 2;
    c.batch_size = 8;
    c.sizes = {48, 8, 8};
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.model_width = 16;
    c.model.ff_width = 32;
    return c;
}

taskgen::Corpus corpus_for(const RunConfig& c) {
    taskgen::GenParams gen = c.gen;
    gen.seed = c.seeds.data;
    return taskgen::build_corpus(gen, c.sizes, c.ood_gen);
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("coped_tt_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TelemetryRow {
    int epoch, batch;
    std::uint64_t example_id;
    double l_r, l_a, weight;
    int noisy;
};

std::vector<TelemetryRow> read_telemetry(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "epoch,batch,example_id,l_r,l_a,weight,noisy_flag");
    std::vector<TelemetryRow> rows;
    while (std::getline(in, line)) {
        TelemetryRow r;
        char c;
        std::istringstream ss(line);
        ss >> r.epoch >> c >> r.batch >> c >> r.example_id >> c >> r.l_r >>
            c >> r.l_a >> c >> r.weight >> c >> r.noisy;
        REQUIRE(ss);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

TEST_CASE("config JSON and override plumbing") {
    RunConfig c = default_config();
    CHECK(c.tau == 5.0);
    CHECK(c.alpha == 0.5);
    CHECK(c.warmup_epoch == 5);
    CHECK(c.epochs == 20);
    CHECK(c.batch_size == 16);
    CHECK(c.optim.beta1 == 0.9);
    CHECK(c.optim.beta2 == 0.999);
    CHECK(c.optim.eps == 1e-8);
    CHECK(c.optim.weight_decay == 0.0);
    CHECK(c.optim.gamma == 0.95);

    RunConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));

    RunConfig ov = apply_overrides(
        c, R"({"variant":"std_cot","tau":2.5,"alpha":0.3,"seeds.model":9})");
    CHECK(ov.variant == corpus::Variant::StdCot);
    CHECK(ov.tau == 2.5);
    CHECK(ov.alpha == 0.3);
    CHECK(ov.seeds.model == 9);
    CHECK(ov.model.init_seed == 9);
    CHECK_THROWS_AS(apply_overrides(c, R"({"bogus":1})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{not json"), FormatError);

    RunConfig bad = c;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.tau = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train writes the full run directory and metric rows") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);
    auto dir = fresh_dir("basic");
    TrainResult res = train(c, corpus_data, dir);
    CHECK(res.metrics.size() == (std::size_t)c.epochs);
    for (int e = 0; e < c.epochs; ++e) {
        CHECK(res.metrics[e].epoch == e + 1);
        CHECK(std::isfinite(res.metrics[e].mean_l_ra));
        CHECK(res.metrics[e].mean_l_ra > 0);
        CHECK(res.metrics[e].mean_l_rc > 0);  // coped_tl trains both tasks
    }
    for (const char* f : {"config.json", "metrics.csv", "metrics.json",
                          "telemetry.csv", "checkpoints/last.ckpt",
                          "checkpoints/best.ckpt"})
        CHECK(std::filesystem::exists(dir / f));
    // loss goes down over training
    CHECK(res.metrics.back().mean_mixed < res.metrics.front().mean_mixed);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);
    auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
    TrainResult r1 = train(c, corpus_data, d1);
    TrainResult r2 = train(c, corpus_data, d2);
    CHECK(r1.final_param_checksum == r2.final_param_checksum);
    CHECK(slurp(d1 / "metrics.csv") == slurp(d2 / "metrics.csv"));
    CHECK(slurp(d1 / "telemetry.csv") == slurp(d2 / "telemetry.csv"));

    RunConfig other = c;
    other.seeds.shuffle = 1234;
    auto d3 = fresh_dir("det3");
    TrainResult r3 = train(other, corpus_data, d3);
    CHECK(r3.final_param_checksum != r1.final_param_checksum);
    for (auto* d : {&d1, &d2, &d3}) std::filesystem::remove_all(*d);
}

TEST_CASE("warmup boundary: uniform weights before n, softmax weights after") {
    RunConfig c = tiny_config();
    c.epochs = 4;
    c.warmup_epoch = 3;
    auto corpus_data = corpus_for(c);
    auto dir = fresh_dir("warmup");
    train(c, corpus_data, dir);
    auto rows = read_telemetry(dir / "telemetry.csv");
    REQUIRE(!rows.empty());
    std::map<std::pair<int, int>, std::vector<TelemetryRow>> batches;
    for (const auto& r : rows) batches[{r.epoch, r.batch}].push_back(r);
    bool saw_nonuniform_after = false;
    for (const auto& [key, batch] : batches) {
        const double uniform = 1.0 / (double)batch.size();
        bool is_uniform = true;
        for (const auto& r : batch)
            if (std::fabs(r.weight - uniform) > 1e-9) is_uniform = false;
        if (key.first < c.warmup_epoch) {
            CHECK(is_uniform);
        } else if (!is_uniform) {
            saw_nonuniform_after = true;
            // Recompute the confidence softmax over the logged losses
            double z = 0, mx = -1e300;
            for (const auto& r : batch)
                mx = std::max(mx, -(r.l_r + r.l_a + std::fabs(r.l_r - r.l_a)) /
                                      c.tau);
            for (const auto& r : batch)
                z += std::exp(-(r.l_r + r.l_a + std::fabs(r.l_r - r.l_a)) /
                                  c.tau -
                              mx);
            for (const auto& r : batch) {
                double s =
                    -(r.l_r + r.l_a + std::fabs(r.l_r - r.l_a)) / c.tau - mx;
                CHECK(r.weight ==
                      doctest::Approx(std::exp(s) / z).epsilon(1e-4));
            }
        }
    }
    CHECK(saw_nonuniform_after);
    std::filesystem::remove_all(dir);
}

TEST_CASE("variant separation in telemetry and losses") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);

    c.variant = corpus::Variant::StdCot;
    auto d1 = fresh_dir("var_std");
    TrainResult std_res = train(c, corpus_data, d1);
    for (const auto& m : std_res.metrics) CHECK(m.mean_l_rc == 0.0);
    for (const auto& r : read_telemetry(d1 / "telemetry.csv"))
        CHECK(r.weight == doctest::Approx(1.0 / c.batch_size).epsilon(1e-12));

    c.variant = corpus::Variant::CopedT;
    auto d2 = fresh_dir("var_t");
    TrainResult t_res = train(c, corpus_data, d2);
    for (const auto& m : t_res.metrics) CHECK(m.mean_l_rc > 0.0);
    for (const auto& r : read_telemetry(d2 / "telemetry.csv"))
        CHECK(r.weight == doctest::Approx(1.0 / c.batch_size).epsilon(1e-12));

    c.variant = corpus::Variant::CopedL;
    auto d3 = fresh_dir("var_l");
    TrainResult l_res = train(c, corpus_data, d3);
    for (const auto& m : l_res.metrics) CHECK(m.mean_l_rc == 0.0);

    for (auto* d : {&d1, &d2, &d3}) std::filesystem::remove_all(*d);
}

TEST_CASE("alpha=0 stops the correction task from changing parameters") {
    RunConfig c = tiny_config();
    c.epochs = 2;
    auto corpus_data = corpus_for(c);

    c.alpha = 0.0;
    auto d1 = fresh_dir("alpha0");
    TrainResult a0 = train(c, corpus_data, d1);

    c.correction_target = corpus::CorrectionTarget::Empty;
    auto d2 = fresh_dir("alpha0b");
    TrainResult a0b = train(c, corpus_data, d2);
    // with alpha=0 the RC task is computed but has zero gradient weight, so
    // changing its target cannot change the learned parameters
    CHECK(a0.final_param_checksum == a0b.final_param_checksum);
    for (auto* d : {&d1, &d2}) std::filesystem::remove_all(*d);
}

TEST_CASE("label noise is flagged in telemetry and weighed down later") {
    RunConfig c = tiny_config();
    c.noise_rho = 0.25;
    auto corpus_data = corpus_for(c);
    auto dir = fresh_dir("noise");
    TrainResult res = train(c, corpus_data, dir);
    auto rows = read_telemetry(dir / "telemetry.csv");
    std::size_t noisy = 0;
    for (const auto& r : rows) noisy += r.noisy;
    CHECK(noisy > 0);
    CHECK(noisy < rows.size());
    for (const auto& m : res.metrics) {
        CHECK(m.mean_weight_clean > 0);
        CHECK(m.mean_weight_noisy > 0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("resume reproduces the uninterrupted run bit for bit") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);

    auto full_dir = fresh_dir("full");
    TrainResult full = train(c, corpus_data, full_dir);

    RunConfig half = c;
    half.epochs = 2;
    auto part_dir = fresh_dir("part");
    train(half, corpus_data, part_dir);
    TrainResult resumed = resume(part_dir / "checkpoints" / "last.ckpt", c,
                                 corpus_data, part_dir);
    CHECK(resumed.final_param_checksum == full.final_param_checksum);
    CHECK(resumed.metrics.size() == full.metrics.size());
    CHECK(slurp(part_dir / "metrics.csv") == slurp(full_dir / "metrics.csv"));

    // resuming against a different corpus is refused
    taskgen::GenParams other_gen = c.gen;
    other_gen.seed = 999;
    auto other = taskgen::build_corpus(other_gen, c.sizes, c.ood_gen);
    CHECK_THROWS_AS(resume(part_dir / "checkpoints" / "last.ckpt", c, other,
                           fresh_dir("bad_resume")),
                    ConfigError);
    for (auto* d : {&full_dir, &part_dir}) std::filesystem::remove_all(*d);
}

TEST_CASE("checkpoints load for evaluation and expose header info") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);
    auto dir = fresh_dir("load");
    TrainResult res = train(c, corpus_data, dir);

    LoadedModel loaded = load_checkpoint(dir / "checkpoints" / "last.ckpt");
    CHECK(loaded.corpus_hash == corpus_data.hash());
    CHECK(loaded.model.param_checksum() == res.final_param_checksum);
    CHECK(config_to_json(loaded.config) == config_to_json(c));

    CheckpointInfo info = read_checkpoint_info(dir / "checkpoints" / "last.ckpt");
    CHECK(info.completed_epochs == c.epochs);
    CHECK(info.corpus_hash == corpus_data.hash());
    CHECK(info.param_checksum == res.final_param_checksum);
    CHECK(info.metrics.size() == (std::size_t)c.epochs);

    CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("best checkpoint tracks the best IND accuracy epoch") {
    RunConfig c = tiny_config();
    auto corpus_data = corpus_for(c);
    auto dir = fresh_dir("best");
    TrainResult res = train(c, corpus_data, dir);
    double best = 0;
    for (const auto& m : res.metrics) best = std::max(best, m.acc_ind);
    LoadedModel loaded = load_checkpoint(dir / "checkpoints" / "best.ckpt");
    CheckpointInfo info = read_checkpoint_info(dir / "checkpoints" / "best.ckpt");
    CHECK(!info.metrics.empty());
    CHECK(info.metrics.back().acc_ind == best);
    std::filesystem::remove_all(dir);
}
