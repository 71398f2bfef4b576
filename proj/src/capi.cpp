#include "coped.h"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ablate.hpp"
#include "json.hpp"
#include "trainer.hpp"

using nlohmann::json;
using namespace coped;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

int status_of_current_exception() {
    try {
        throw;
    } catch (const ConfigError& e) {
        set_error(e.what());
        return COPED_ERR_CONFIG;
    } catch (const IoError& e) {
        set_error(e.what());
        return COPED_ERR_IO;
    } catch (const FormatError& e) {
        set_error(e.what());
        return COPED_ERR_FORMAT;
    } catch (const NumericError& e) {
        set_error(e.what());
        return COPED_ERR_NUMERIC;
    } catch (const ContractError& e) {
        set_error(e.what());
        return COPED_ERR_CONTRACT;
    } catch (const json::exception& e) {
        set_error(e.what());
        return COPED_ERR_FORMAT;
    } catch (const std::filesystem::filesystem_error& e) {
        set_error(e.what());
        return COPED_ERR_IO;
    } catch (const std::exception& e) {
        set_error(e.what());
        return COPED_ERR_INTERNAL;
    } catch (...) {
        set_error("unknown error");
        return COPED_ERR_INTERNAL;
    }
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

struct Manifest {
    std::string command;
    std::string started_at = iso8601_now();
    std::uint64_t config_hash = 0;
    std::uint64_t corpus_hash = 0;
    json seeds = json::object();
    std::vector<std::string> artifacts;
    int exit_status = COPED_OK;
    std::string error;

    void write(const std::filesystem::path& dir) const {
        json j{{"command", command},
               {"config_hash", config_hash},
               {"corpus_hash", corpus_hash},
               {"seeds", seeds},
               {"started_at", started_at},
               {"ended_at", iso8601_now()},
               {"artifacts", artifacts},
               {"exit_status", exit_status},
               {"error", error}};
        write_text_atomic(dir / "manifest.json", j.dump(2) + "\n");
    }
};

trainer::RunConfig effective_config(const char* config_json,
                                    const char* overrides_json) {
    trainer::RunConfig config = (config_json && *config_json)
                                    ? trainer::config_from_json(config_json)
                                    : trainer::default_config();
    if (overrides_json && *overrides_json)
        config = trainer::apply_overrides(config, overrides_json);
    config.validate();
    return config;
}

void fill_seeds(Manifest& m, const trainer::RunConfig& config) {
    m.seeds = {{"data", config.seeds.data},
               {"model", config.seeds.model},
               {"shuffle", config.seeds.shuffle}};
    m.config_hash = fnv1a64(trainer::config_to_json(config));
}

// Runs body, then writes the manifest into dir whether body succeeded or
// not; a writable dir is the only hard requirement.
template <class Body>
coped_status with_manifest(const char* command, const char* dir, Body body) {
    if (!dir || !*dir) {
        set_error("output directory is required");
        return COPED_ERR_CONFIG;
    }
    Manifest manifest;
    manifest.command = command;
    coped_status status = COPED_OK;
    try {
        std::filesystem::create_directories(dir);
        body(manifest);
    } catch (...) {
        status = static_cast<coped_status>(status_of_current_exception());
        manifest.exit_status = status;
        manifest.error = g_last_error;
    }
    try {
        manifest.write(dir);
    } catch (...) {
        if (status == COPED_OK)
            status = static_cast<coped_status>(status_of_current_exception());
    }
    return status;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

extern "C" {

const char* coped_version(void) { return "0.1.0"; }

const char* coped_last_error(void) { return g_last_error.c_str(); }

coped_status coped_generate(const char* config_json,
                            const char* overrides_json, const char* out_dir) {
    return with_manifest("generate", out_dir, [&](Manifest& m) {
        const auto config = effective_config(config_json, overrides_json);
        fill_seeds(m, config);
        taskgen::GenParams gen = config.gen;
        gen.seed = config.seeds.data;
        taskgen::Corpus corpus =
            taskgen::build_corpus(gen, config.sizes, config.ood_gen);
        taskgen::save_corpus(corpus, out_dir);
        m.corpus_hash = corpus.hash();
        m.artifacts = {"train.jsonl", "test_ind.jsonl", "test_ood.jsonl",
                       "params.json"};
    });
}

coped_status coped_train(const char* config_json, const char* overrides_json,
                         const char* corpus_dir, const char* run_dir) {
    return with_manifest("train", run_dir, [&](Manifest& m) {
        if (!corpus_dir || !*corpus_dir)
            throw ConfigError("corpus directory is required");
        const auto config = effective_config(config_json, overrides_json);
        fill_seeds(m, config);
        taskgen::Corpus corpus = taskgen::load_corpus(corpus_dir);
        m.corpus_hash = corpus.hash();
        trainer::train(config, corpus, run_dir);
        m.artifacts = {"config.json", "metrics.csv", "metrics.json",
                       "telemetry.csv", "checkpoints/last.ckpt",
                       "checkpoints/best.ckpt"};
    });
}

coped_status coped_resume(const char* run_dir, const char* corpus_dir) {
    return with_manifest("resume", run_dir, [&](Manifest& m) {
        if (!corpus_dir || !*corpus_dir)
            throw ConfigError("corpus directory is required");
        const std::filesystem::path root(run_dir);
        const std::filesystem::path ckpt = root / "checkpoints" / "last.ckpt";
        auto info = trainer::read_checkpoint_info(ckpt);
        // The run directory's config snapshot wins: it is where a user
        // raises `epochs` to extend a finished run.
        if (std::filesystem::exists(root / "config.json")) {
            std::ifstream in(root / "config.json", std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            info.config = trainer::config_from_json(ss.str());
        }
        fill_seeds(m, info.config);
        taskgen::Corpus corpus = taskgen::load_corpus(corpus_dir);
        m.corpus_hash = corpus.hash();
        trainer::resume(ckpt, info.config, corpus, run_dir);
        m.artifacts = {"metrics.csv", "metrics.json", "telemetry.csv",
                       "checkpoints/last.ckpt", "checkpoints/best.ckpt"};
    });
}

coped_status coped_evaluate(const char* checkpoint_path,
                            const char* corpus_dir, const char* split,
                            const char* mode, const char* out_dir) {
    return with_manifest("evaluate", out_dir, [&](Manifest& m) {
        if (!checkpoint_path || !corpus_dir)
            throw ConfigError("checkpoint and corpus directory are required");
        const std::string split_name = split && *split ? split : "test_ind";
        const auto pmode = eval::predict_mode_from_name(
            mode && *mode ? mode : "plain");
        trainer::LoadedModel loaded = trainer::load_checkpoint(checkpoint_path);
        fill_seeds(m, loaded.config);
        taskgen::Corpus corpus = taskgen::load_corpus(corpus_dir);
        m.corpus_hash = corpus.hash();
        const auto report =
            eval::evaluate(loaded.model, corpus.split(split_name), pmode,
                           split_name);
        write_text_atomic(std::filesystem::path(out_dir) / "report.json",
                          eval::report_to_json(report));
        write_text_atomic(std::filesystem::path(out_dir) / "report.csv",
                          eval::report_to_csv(report));
        m.artifacts = {"report.json", "report.csv"};
    });
}

coped_status coped_ablate(const char* config_json, const char* overrides_json,
                          const char* corpus_dir, const char* axis,
                          const char* values, const char* seeds,
                          const char* out_dir) {
    return with_manifest("ablate", out_dir, [&](Manifest& m) {
        if (!corpus_dir || !axis || !values || !seeds)
            throw ConfigError("corpus_dir, axis, values, seeds are required");
        const auto config = effective_config(config_json, overrides_json);
        fill_seeds(m, config);
        taskgen::Corpus corpus = taskgen::load_corpus(corpus_dir);
        m.corpus_hash = corpus.hash();
        const ablate::Axis ax = ablate::axis_from_name(axis);
        std::vector<std::uint64_t> seed_list;
        for (const std::string& s : split_csv(seeds))
            seed_list.push_back(std::stoull(s));
        const auto cells = ablate::run_sweep(config, corpus, ax,
                                             split_csv(values), seed_list,
                                             out_dir);
        write_text_atomic(std::filesystem::path(out_dir) / "sweep.csv",
                          ablate::sweep_to_csv(cells, axis));
        m.artifacts = {"sweep.csv"};
        for (const auto& cell : cells)
            if (cell.failed)
                throw ContractError("sweep cell failed (" + cell.value +
                                    ", seed " + std::to_string(cell.seed) +
                                    "): " + cell.error);
    });
}

coped_status coped_compare(const char* run_dirs, const char* out_dir) {
    return with_manifest("compare", out_dir, [&](Manifest& m) {
        if (!run_dirs) throw ConfigError("run directories are required");
        std::vector<std::filesystem::path> dirs;
        for (const std::string& d : split_csv(run_dirs)) dirs.emplace_back(d);
        const std::string table = ablate::compare_runs(dirs);
        if (!dirs.empty()) {
            const auto info = trainer::read_checkpoint_info(
                dirs.front() / "checkpoints" / "last.ckpt");
            m.corpus_hash = info.corpus_hash;
            fill_seeds(m, info.config);
        }
        write_text_atomic(std::filesystem::path(out_dir) / "compare.csv",
                          table);
        m.artifacts = {"compare.csv"};
    });
}

struct coped_model {
    trainer::LoadedModel loaded;
};

coped_status coped_model_open(const char* checkpoint_path,
                              coped_model** out) {
    if (!checkpoint_path || !out) {
        set_error("checkpoint path and output handle are required");
        return COPED_ERR_CONFIG;
    }
    *out = nullptr;
    try {
        auto* handle =
            new coped_model{trainer::load_checkpoint(checkpoint_path)};
        *out = handle;
        return COPED_OK;
    } catch (...) {
        return static_cast<coped_status>(status_of_current_exception());
    }
}

coped_status coped_model_infer(coped_model* model, const char* question,
                               const char* mode, char* buf, size_t buf_len) {
    if (!model || !question || !buf || buf_len == 0) {
        set_error("model, question, and output buffer are required");
        return COPED_ERR_CONFIG;
    }
    try {
        taskgen::Instance inst;
        inst.question = question;
        inst.modulus = model->loaded.config.gen.modulus;
        inst.id = fnv1a64(inst.question);
        // Gold answer from the question itself, for the oracle-verify mode.
        auto parsed = eval::parse_rationale(std::string(question).substr(
            inst.question.find('=') + 1));
        int v = 0;
        {
            // question grammar: v0=<d>;<op><d>;...
            std::size_t pos = inst.question.find('=');
            if (pos == std::string::npos || inst.question.rfind("v0", 0) != 0)
                throw FormatError("question must look like v0=7;+5;*3");
            std::size_t next = inst.question.find(';', pos);
            v = std::stoi(inst.question.substr(
                pos + 1, next == std::string::npos ? std::string::npos
                                                   : next - pos - 1));
            v = ((v % inst.modulus) + inst.modulus) % inst.modulus;
            while (next != std::string::npos) {
                std::size_t end = inst.question.find(';', next + 1);
                std::string tok = inst.question.substr(
                    next + 1, end == std::string::npos ? std::string::npos
                                                       : end - next - 1);
                if (tok.size() < 2 ||
                    (tok[0] != '+' && tok[0] != '-' && tok[0] != '*'))
                    throw FormatError("bad question operation: " + tok);
                const int operand = std::stoi(tok.substr(1));
                long long r = v;
                if (tok[0] == '+') r = v + operand;
                else if (tok[0] == '-') r = v - operand;
                else r = static_cast<long long>(v) * operand;
                v = static_cast<int>(((r % inst.modulus) + inst.modulus) %
                                     inst.modulus);
                next = end;
            }
        }
        (void)parsed;
        inst.answer = v;

        const auto pmode = eval::predict_mode_from_name(
            mode && *mode ? mode : "plain");
        const eval::Prediction pred =
            eval::predict(model->loaded.model, inst, pmode);
        json j{{"question", inst.question},
               {"rationale", pred.rationale_text},
               {"answer", pred.answer ? json(*pred.answer) : json()},
               {"rationale_status",
                pred.status == eval::RsStatus::RsT   ? "rs_t"
                : pred.status == eval::RsStatus::RsF ? "rs_f"
                                                     : "absent"},
               {"corrected", pred.corrected},
               {"failure", pred.failure_class}};
        const std::string text = j.dump();
        if (text.size() + 1 > buf_len) {
            set_error("output buffer too small (need " +
                      std::to_string(text.size() + 1) + " bytes)");
            return COPED_ERR_CONTRACT;
        }
        std::memcpy(buf, text.c_str(), text.size() + 1);
        return COPED_OK;
    } catch (...) {
        return static_cast<coped_status>(status_of_current_exception());
    }
}

void coped_model_close(coped_model* model) { delete model; }

}  // extern "C"
