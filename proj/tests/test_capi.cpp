#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "coped.h"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const char* kTinyOverrides =
    R"({"train_size":48,"test_ind_size":8,"test_ood_size":8,
        "epochs":2,"batch_size":8,"warmup_epoch":1})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("coped_capi_" + name);
    fs::remove_all(dir);
    return dir;
}

nlohmann::json manifest_of(const fs::path& dir) {
    return nlohmann::json::parse(slurp(dir / "manifest.json"));
}

}  // namespace

TEST_CASE("version and error channel") {
    CHECK(coped_version() != nullptr);
    CHECK(std::string(coped_version()).find('.') != std::string::npos);
    CHECK(coped_last_error() != nullptr);
}

TEST_CASE("generate: manifest, determinism, failure manifests") {
    auto d1 = fresh("gen1"), d2 = fresh("gen2");
    REQUIRE(coped_generate(nullptr, kTinyOverrides, d1.string().c_str()) ==
            COPED_OK);
    auto m = manifest_of(d1);
    CHECK(m.at("command") == "generate");
    CHECK(m.at("exit_status") == 0);
    CHECK(m.at("corpus_hash").get<std::uint64_t>() != 0);
    CHECK(m.at("seeds").at("data") == 1);
    for (const char* f : {"train.jsonl", "test_ind.jsonl", "test_ood.jsonl"})
        CHECK(fs::exists(d1 / f));

    REQUIRE(coped_generate(nullptr, kTinyOverrides, d2.string().c_str()) ==
            COPED_OK);
    CHECK(slurp(d1 / "train.jsonl") == slurp(d2 / "train.jsonl"));
    CHECK(manifest_of(d2).at("corpus_hash") == m.at("corpus_hash"));

    auto bad = fresh("gen_bad");
    coped_status s =
        coped_generate(nullptr, R"({"tau":-1})", bad.string().c_str());
    CHECK(s == COPED_ERR_CONFIG);
    CHECK(std::string(coped_last_error()).find("tau") != std::string::npos);
    CHECK(manifest_of(bad).at("exit_status") != 0);
    CHECK(!fs::exists(bad / "train.jsonl"));  // no partial corpus files

    CHECK(coped_generate("{not json", nullptr, fresh("g3").string().c_str()) ==
          COPED_ERR_FORMAT);
    for (auto* d : {&d1, &d2, &bad}) fs::remove_all(*d);
}

TEST_CASE("train, evaluate, compare, resume, ablate, infer") {
    auto corpus_dir = fresh("corpus");
    REQUIRE(coped_generate(nullptr, kTinyOverrides,
                           corpus_dir.string().c_str()) == COPED_OK);

    auto run_tl = fresh("run_tl");
    REQUIRE(coped_train(nullptr, kTinyOverrides, corpus_dir.string().c_str(),
                        run_tl.string().c_str()) == COPED_OK);
    CHECK(manifest_of(run_tl).at("command") == "train");
    CHECK(fs::exists(run_tl / "metrics.csv"));
    CHECK(fs::exists(run_tl / "checkpoints" / "last.ckpt"));

    // determinism across invocations
    auto run_tl2 = fresh("run_tl2");
    REQUIRE(coped_train(nullptr, kTinyOverrides, corpus_dir.string().c_str(),
                        run_tl2.string().c_str()) == COPED_OK);
    CHECK(slurp(run_tl / "metrics.csv") == slurp(run_tl2 / "metrics.csv"));

    // second variant for comparison
    std::string std_ov = std::string(kTinyOverrides);
    std_ov.insert(std_ov.size() - 1, R"(,"variant":"std_cot")");
    auto run_std = fresh("run_std");
    REQUIRE(coped_train(nullptr, std_ov.c_str(), corpus_dir.string().c_str(),
                        run_std.string().c_str()) == COPED_OK);

    // evaluate
    auto eval_dir = fresh("eval");
    REQUIRE(coped_evaluate((run_tl / "checkpoints" / "last.ckpt").c_str(),
                           corpus_dir.string().c_str(), "test_ind", "plain",
                           eval_dir.string().c_str()) == COPED_OK);
    auto report = nlohmann::json::parse(slurp(eval_dir / "report.json"));
    CHECK(report.at("split") == "test_ind");
    CHECK(report.at("n") == 8);
    CHECK(coped_evaluate((run_tl / "checkpoints" / "last.ckpt").c_str(),
                         corpus_dir.string().c_str(), "test_ind", "bogus",
                         fresh("eval_bad").string().c_str()) ==
          COPED_ERR_FORMAT);

    // compare
    auto cmp_dir = fresh("cmp");
    std::string dirs = run_tl.string() + "," + run_std.string();
    REQUIRE(coped_compare(dirs.c_str(), cmp_dir.string().c_str()) == COPED_OK);
    std::string table = slurp(cmp_dir / "compare.csv");
    CHECK(table.find("coped_tl") != std::string::npos);
    CHECK(table.find("std_cot") != std::string::npos);
    CHECK(coped_compare(run_tl.string().c_str(),
                        fresh("cmp_bad").string().c_str()) ==
          COPED_ERR_CONTRACT);

    // resume: extend run_tl2 is not possible (same epochs) but resume from a
    // truncated run must match the uninterrupted one
    std::string short_ov = std::string(kTinyOverrides);
    short_ov.insert(short_ov.size() - 1, R"(,"epochs":1)");
    // overrides apply left to right; the later key wins
    auto run_half = fresh("run_half");
    REQUIRE(coped_train(nullptr, short_ov.c_str(), corpus_dir.string().c_str(),
                        run_half.string().c_str()) == COPED_OK);
    // bump the config back to 2 epochs by rewriting config.json's epochs
    {
        auto cfg = nlohmann::json::parse(slurp(run_half / "config.json"));
        cfg["epochs"] = 2;
        std::ofstream out(run_half / "config.json");
        out << cfg.dump(2);
    }
    REQUIRE(coped_resume(run_half.string().c_str(),
                         corpus_dir.string().c_str()) == COPED_OK);
    CHECK(slurp(run_half / "metrics.csv") == slurp(run_tl / "metrics.csv"));

    // ablate: one value, one seed, tiny grid
    auto sweep_dir = fresh("sweep");
    REQUIRE(coped_ablate(nullptr, kTinyOverrides, corpus_dir.string().c_str(),
                         "tau", "5", "3",
                         sweep_dir.string().c_str()) == COPED_OK);
    std::string sweep = slurp(sweep_dir / "sweep.csv");
    CHECK(sweep.find("tau,5,3,test_ind,accuracy") != std::string::npos);
    CHECK(sweep.find("median") != std::string::npos);
    CHECK(coped_ablate(nullptr, kTinyOverrides, corpus_dir.string().c_str(),
                       "bogus_axis", "1", "1",
                       fresh("sweep_bad").string().c_str()) ==
          COPED_ERR_CONFIG);

    // infer
    coped_model* model = nullptr;
    REQUIRE(coped_model_open((run_tl / "checkpoints" / "last.ckpt").c_str(),
                             &model) == COPED_OK);
    REQUIRE(model != nullptr);
    char buf[65536];
    REQUIRE(coped_model_infer(model, "v0=7;+5;*3;-4", "plain", buf,
                              sizeof(buf)) == COPED_OK);
    auto out = nlohmann::json::parse(buf);
    CHECK(out.at("question") == "v0=7;+5;*3;-4");
    CHECK(out.contains("rationale"));
    CHECK(out.contains("answer"));
    char tiny[4];
    CHECK(coped_model_infer(model, "v0=7;+5", "plain", tiny, sizeof(tiny)) ==
          COPED_ERR_CONTRACT);
    CHECK(coped_model_infer(model, "garbage", "plain", buf, sizeof(buf)) ==
          COPED_ERR_FORMAT);
    coped_model_close(model);

    coped_model* missing = nullptr;
    CHECK(coped_model_open("/nonexistent.ckpt", &missing) != COPED_OK);
    CHECK(missing == nullptr);

    // bad paths surface as errors with diagnostics
    CHECK(coped_train(nullptr, kTinyOverrides, "/nonexistent_corpus",
                      fresh("run_bad").string().c_str()) != COPED_OK);
    CHECK(std::string(coped_last_error()).find("nonexistent") !=
          std::string::npos);

    for (auto d : {corpus_dir, run_tl, run_tl2, run_std, run_half, eval_dir,
                   cmp_dir, sweep_dir})
        fs::remove_all(d);
}
