#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace coped::trainer {

using corpus::TrainExample;
using corpus::Variant;
using nlohmann::ordered_json;
using objective::SampleLossPair;
using objective::WeightVariant;

void RunConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0)
        throw ConfigError("RunConfig: alpha must be in [0,1]");
    if (!(tau > 0.0)) throw ConfigError("RunConfig: tau must be positive");
    if (warmup_epoch < 0)
        throw ConfigError("RunConfig: warmup_epoch must be >= 0");
    if (epochs < 1) throw ConfigError("RunConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("RunConfig: batch_size must be >= 1");
    if (noise_rho < 0.0 || noise_rho > 1.0)
        throw ConfigError("RunConfig: noise_rho must be in [0,1]");
    gen.validate();
    ood_gen.validate();
    model.validate();
}

RunConfig default_config() {
    RunConfig c;
    c.gen.num_steps = {2, 4};
    c.ood_gen.num_steps = {5, 6};
    c.gen.seed = 1;
    c.ood_gen.seed = 2;
    c.model.vocab_size = corpus::Vocab::instance().size();
    return c;
}

namespace {

ordered_json gen_params_json(const taskgen::GenParams& p) {
    return ordered_json::parse(taskgen::to_json(p));
}

taskgen::GenParams gen_params_from(const ordered_json& j) {
    taskgen::GenParams p;
    p.num_steps = {j.at("num_steps").at(0), j.at("num_steps").at(1)};
    p.operand = {j.at("operand").at(0), j.at("operand").at(1)};
    p.modulus = j.at("modulus");
    p.ops.clear();
    for (char c : j.at("ops").get<std::string>())
        p.ops.push_back(taskgen::op_from_char(c));
    p.seed = j.at("seed");
    return p;
}

ordered_json config_json(const RunConfig& c) {
    return ordered_json{
        {"variant", corpus::variant_name(c.variant)},
        {"alpha", c.alpha},
        {"tau", c.tau},
        {"warmup_epoch", c.warmup_epoch},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"weight_variant", objective::weight_variant_name(c.weight_variant)},
        {"correction_target",
         c.correction_target == corpus::CorrectionTarget::CorrectRationale
             ? "correct_rationale"
             : "empty"},
        {"noise_rho", c.noise_rho},
        {"warmup_literal_sum", c.warmup_literal_sum},
        {"seeds",
         {{"data", c.seeds.data},
          {"model", c.seeds.model},
          {"shuffle", c.seeds.shuffle}}},
        {"gen", gen_params_json(c.gen)},
        {"ood_gen", gen_params_json(c.ood_gen)},
        {"sizes", {c.sizes.train, c.sizes.test_ind, c.sizes.test_ood}},
        {"model",
         {{"layers", c.model.layers},
          {"heads", c.model.heads},
          {"model_width", c.model.model_width},
          {"ff_width", c.model.ff_width},
          {"context_length", c.model.context_length},
          {"vocab_size", c.model.vocab_size},
          {"precision", model::precision_name(c.model.precision)},
          {"init_seed", c.model.init_seed}}},
        {"optim",
         {{"learning_rate", c.optim.learning_rate},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps},
          {"weight_decay", c.optim.weight_decay},
          {"gamma", c.optim.gamma}}}};
}

RunConfig config_from(const ordered_json& j) {
    RunConfig c = default_config();
    c.variant = corpus::variant_from_name(j.at("variant").get<std::string>());
    c.alpha = j.at("alpha");
    c.tau = j.at("tau");
    c.warmup_epoch = j.at("warmup_epoch");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.weight_variant = objective::weight_variant_from_name(
        j.at("weight_variant").get<std::string>());
    const std::string ct = j.at("correction_target");
    if (ct == "correct_rationale")
        c.correction_target = corpus::CorrectionTarget::CorrectRationale;
    else if (ct == "empty")
        c.correction_target = corpus::CorrectionTarget::Empty;
    else
        throw FormatError("unknown correction_target: " + ct);
    c.noise_rho = j.at("noise_rho");
    c.warmup_literal_sum = j.value("warmup_literal_sum", false);
    c.seeds.data = j.at("seeds").at("data");
    c.seeds.model = j.at("seeds").at("model");
    c.seeds.shuffle = j.at("seeds").at("shuffle");
    c.gen = gen_params_from(j.at("gen"));
    c.ood_gen = gen_params_from(j.at("ood_gen"));
    c.sizes = {j.at("sizes").at(0), j.at("sizes").at(1), j.at("sizes").at(2)};
    const auto& m = j.at("model");
    c.model.layers = m.at("layers");
    c.model.heads = m.at("heads");
    c.model.model_width = m.at("model_width");
    c.model.ff_width = m.at("ff_width");
    c.model.context_length = m.at("context_length");
    c.model.vocab_size = m.at("vocab_size");
    c.model.precision =
        model::precision_from_name(m.at("precision").get<std::string>());
    c.model.init_seed = m.at("init_seed");
    const auto& o = j.at("optim");
    c.optim.learning_rate = o.at("learning_rate");
    c.optim.beta1 = o.at("beta1");
    c.optim.beta2 = o.at("beta2");
    c.optim.eps = o.at("eps");
    c.optim.weight_decay = o.at("weight_decay");
    c.optim.gamma = o.at("gamma");
    return c;
}

}  // namespace

std::string config_to_json(const RunConfig& config) {
    return config_json(config).dump(2);
}

RunConfig config_from_json(const std::string& json_text) {
    try {
        return config_from(ordered_json::parse(json_text));
    } catch (const ordered_json::exception& e) {
        throw FormatError(std::string("config parse error: ") + e.what());
    }
}

RunConfig apply_overrides(RunConfig config, const std::string& overrides_json) {
    ordered_json j;
    try {
        j = ordered_json::parse(overrides_json);
    } catch (const ordered_json::exception& e) {
        throw FormatError(std::string("override parse error: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "variant")
            config.variant = corpus::variant_from_name(value.get<std::string>());
        else if (key == "alpha") config.alpha = value;
        else if (key == "tau") config.tau = value;
        else if (key == "warmup_epoch") config.warmup_epoch = value;
        else if (key == "epochs") config.epochs = value;
        else if (key == "batch_size") config.batch_size = value;
        else if (key == "weight_variant")
            config.weight_variant =
                objective::weight_variant_from_name(value.get<std::string>());
        else if (key == "correction_target") {
            const std::string name = value.get<std::string>();
            if (name == "empty")
                config.correction_target = corpus::CorrectionTarget::Empty;
            else if (name == "correct_rationale")
                config.correction_target =
                    corpus::CorrectionTarget::CorrectRationale;
            else
                throw ConfigError("unknown correction_target: " + name);
        }
        else if (key == "noise_rho") config.noise_rho = value;
        else if (key == "warmup_literal_sum") config.warmup_literal_sum = value;
        else if (key == "seeds.data") config.seeds.data = value;
        else if (key == "seeds.model") {
            config.seeds.model = value;
            config.model.init_seed = value;
        } else if (key == "seeds.shuffle") config.seeds.shuffle = value;
        else if (key == "learning_rate") config.optim.learning_rate = value;
        else if (key == "train_size") config.sizes.train = value;
        else if (key == "test_ind_size") config.sizes.test_ind = value;
        else if (key == "test_ood_size") config.sizes.test_ood = value;
        else if (key == "gen.seed") config.gen.seed = value;
        else if (key == "ood_gen.seed") config.ood_gen.seed = value;
        else
            throw ConfigError("unknown override key: " + key);
    }
    return config;
}

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'O', 'P', 'E', 'D', 'C', 'K', '1'};

struct CheckpointHeader {
    RunConfig config;
    int completed_epochs = 0;
    std::uint64_t shuffle_rng_state = 0;
    std::uint64_t corpus_hash = 0;
    double best_ind_acc = -1.0;
    std::vector<EpochMetrics> metrics;
};

// Wall time stays out of every serialized artifact so identical runs are
// byte-identical; it lives in the in-memory metrics and the manifest.
ordered_json metrics_json(const EpochMetrics& m) {
    return ordered_json{{"epoch", m.epoch},
                        {"mean_l_ra", m.mean_l_ra},
                        {"mean_l_rc", m.mean_l_rc},
                        {"mean_mixed", m.mean_mixed},
                        {"mean_weight_noisy", m.mean_weight_noisy},
                        {"mean_weight_clean", m.mean_weight_clean},
                        {"acc_ind", m.acc_ind},
                        {"acc_ood", m.acc_ood},
                        {"faithfulness", m.faithfulness},
                        {"soundness", m.soundness}};
}

EpochMetrics metrics_from(const ordered_json& j) {
    EpochMetrics m;
    m.epoch = j.at("epoch");
    m.mean_l_ra = j.at("mean_l_ra");
    m.mean_l_rc = j.at("mean_l_rc");
    m.mean_mixed = j.at("mean_mixed");
    m.mean_weight_noisy = j.at("mean_weight_noisy");
    m.mean_weight_clean = j.at("mean_weight_clean");
    m.acc_ind = j.at("acc_ind");
    m.acc_ood = j.at("acc_ood");
    m.faithfulness = j.at("faithfulness");
    m.soundness = j.at("soundness");
    return m;
}

void write_checkpoint(const std::filesystem::path& path,
                      const CheckpointHeader& header,
                      const model::Transformer<float>& model) {
    ordered_json meta{{"config", config_json(header.config)},
                      {"completed_epochs", header.completed_epochs},
                      {"shuffle_rng_state", header.shuffle_rng_state},
                      {"corpus_hash", header.corpus_hash},
                      {"best_ind_acc", header.best_ind_acc},
                      {"param_checksum", model.param_checksum()},
                      {"metrics", ordered_json::array()}};
    for (const EpochMetrics& m : header.metrics)
        meta["metrics"].push_back(metrics_json(m));

    std::ostringstream body;
    body.write(kCheckpointMagic, 8);
    const std::string meta_str = meta.dump();
    std::uint64_t len = meta_str.size();
    body.write(reinterpret_cast<const char*>(&len), 8);
    body.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    model.save_state(body);
    const std::string payload = body.str();
    const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());

    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open checkpoint for write: " + tmp);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        out.write(reinterpret_cast<const char*>(&checksum), 8);
        if (!out) throw IoError("checkpoint write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint(const std::filesystem::path& path,
                                 model::Transformer<float>* model_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string payload((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    if (payload.size() < 24)
        throw FormatError("checkpoint corrupted (truncated): " + path.string());
    std::uint64_t stored;
    std::memcpy(&stored, payload.data() + payload.size() - 8, 8);
    const std::uint64_t actual =
        fnv1a64(payload.data(), payload.size() - 8);
    if (stored != actual)
        throw FormatError("checkpoint corrupted (checksum mismatch): " +
                          path.string());
    if (std::memcmp(payload.data(), kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint corrupted (bad magic): " +
                          path.string());
    std::uint64_t len;
    std::memcpy(&len, payload.data() + 8, 8);
    if (16 + len + 8 > payload.size())
        throw FormatError("checkpoint corrupted (bad header length): " +
                          path.string());
    ordered_json meta = ordered_json::parse(
        payload.substr(16, static_cast<std::size_t>(len)));

    CheckpointHeader header;
    header.config = config_from(meta.at("config"));
    header.completed_epochs = meta.at("completed_epochs");
    header.shuffle_rng_state = meta.at("shuffle_rng_state");
    header.corpus_hash = meta.at("corpus_hash");
    header.best_ind_acc = meta.at("best_ind_acc");
    for (const auto& mj : meta.at("metrics"))
        header.metrics.push_back(metrics_from(mj));

    if (model_out) {
        std::istringstream body(payload.substr(
            16 + static_cast<std::size_t>(len),
            payload.size() - 24 - static_cast<std::size_t>(len)));
        model_out->load_state(body);
    }
    return header;
}

struct TelemetryWriter {
    std::ofstream out;
    explicit TelemetryWriter(const std::filesystem::path& path, bool append) {
        out.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out) throw IoError("cannot open telemetry: " + path.string());
        if (!append)
            out << "epoch,batch,example_id,l_r,l_a,weight,noisy_flag\n";
    }
    void row(int epoch, int batch, std::uint64_t id, double l_r, double l_a,
             double w, bool noisy) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%d,%llu,%.9g,%.9g,%.12g,%d\n",
                      epoch, batch, static_cast<unsigned long long>(id), l_r,
                      l_a, w, noisy ? 1 : 0);
        out << buf;
    }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << text;
}

TrainResult run_training(const RunConfig& config,
                         const taskgen::Corpus& clean_corpus,
                         const std::filesystem::path& run_dir,
                         std::optional<CheckpointHeader> resume_header,
                         model::Transformer<float>* resume_model) {
    config.validate();
    std::filesystem::create_directories(run_dir / "checkpoints");

    const taskgen::Corpus corpus =
        config.noise_rho > 0.0
            ? taskgen::inject_label_noise(clean_corpus, config.noise_rho,
                                          config.seeds.data)
            : clean_corpus;
    const std::uint64_t corpus_hash = clean_corpus.hash();

    // Training examples in stable order; dual variants pair (AP, RC) per
    // instance contiguously.
    const bool dual = config.variant == Variant::CopedT ||
                      config.variant == Variant::CopedTL;
    const bool weighted = config.variant == Variant::CopedL ||
                          config.variant == Variant::CopedTL;
    const auto examples = corpus::build_training_set(
        corpus, config.variant, config.correction_target);
    const std::size_t per_instance = dual ? 2 : 1;
    const std::size_t n_instances = examples.size() / per_instance;

    model::ModelConfig mc = config.model;
    mc.init_seed = config.seeds.model;
    mc.vocab_size = corpus::Vocab::instance().size();
    model::Transformer<float> fresh(mc, config.optim);
    model::Transformer<float>& model = resume_model ? *resume_model : fresh;

    Rng shuffle_rng(config.seeds.shuffle);
    int start_epoch = 1;
    std::vector<EpochMetrics> metrics;
    double best_ind_acc = -1.0;
    if (resume_header) {
        shuffle_rng.set_state(resume_header->shuffle_rng_state);
        start_epoch = resume_header->completed_epochs + 1;
        metrics = resume_header->metrics;
        best_ind_acc = resume_header->best_ind_acc;
    }

    write_text(run_dir / "config.json", config_to_json(config) + "\n");
    TelemetryWriter telemetry(run_dir / "telemetry.csv",
                              resume_header.has_value());

    const auto ckpt_last = run_dir / "checkpoints" / "last.ckpt";
    const auto ckpt_best = run_dir / "checkpoints" / "best.ckpt";

    std::vector<std::size_t> order(n_instances);
    for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr =
            config.optim.learning_rate *
            std::pow(config.optim.gamma, static_cast<double>(epoch - 1));
        // Uniform weights during warmup ("epoch < n"), and always for
        // variants without the weighted loss.
        const bool uniform_epoch = !weighted || epoch < config.warmup_epoch;

        // Capped so the augmentation stays dense over the covered window;
        // a window wider than one OOD length extension is enough.
        constexpr int kMaxPosOffset = 32;
        // Per-epoch stream of random positional offsets. Training every
        // sequence at a shifted position makes the step circuit
        // translation-invariant, which is what lets the model run chains
        // longer than any it saw in training. Seeded from (shuffle seed,
        // epoch) so resumed runs reproduce the uninterrupted stream.
        Rng offset_rng(config.seeds.shuffle ^
                       (0x9E3779B97F4A7C15ULL *
                        static_cast<std::uint64_t>(epoch)));
        const int ctx = config.model.context_length;
        auto sample_offset = [&](const TrainExample& ex) {
            const int len = static_cast<int>(ex.input_ids.size() +
                                             ex.target_ids.size());
            const int room = std::min(ctx - len, kMaxPosOffset);
            return room > 0 ? static_cast<int>(offset_rng.below(
                                  static_cast<std::uint64_t>(room) + 1))
                            : 0;
        };

        for (std::size_t i = 0; i < n_instances; ++i) order[i] = i;
        for (std::size_t i = 0; i + 1 < n_instances; ++i) {
            std::size_t j = i + shuffle_rng.below(n_instances - i);
            std::swap(order[i], order[j]);
        }

        double epoch_l_ra = 0.0, epoch_l_rc = 0.0, epoch_mixed = 0.0;
        double w_noisy_sum = 0.0, w_clean_sum = 0.0;
        long w_noisy_n = 0, w_clean_n = 0;
        int n_batches = 0;

        for (std::size_t start = 0; start < n_instances;
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t bsz =
                std::min(static_cast<std::size_t>(config.batch_size),
                         n_instances - start);
            const int batch_index = n_batches++;

            // Answer-bearing pass.
            std::vector<SampleLossPair> pairs(bsz);
            std::vector<typename model::Transformer<float>::Cache> ap_caches(
                bsz);
            std::vector<const TrainExample*> ap_ex(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::size_t inst = order[start + b];
                const TrainExample& ex = examples[inst * per_instance];
                ap_ex[b] = &ex;
                ap_caches[b] = model.forward(ex.input_ids, ex.target_ids,
                                             sample_offset(ex));
                const model::SpanLoss sl =
                    model.span_losses(ap_caches[b], ex);
                if (!std::isfinite(sl.l_r) || !std::isfinite(sl.l_a))
                    throw NumericError(
                        "train: non-finite loss at epoch " +
                        std::to_string(epoch) + " batch " +
                        std::to_string(batch_index));
                pairs[b] = {sl.l_r, sl.l_a, ex.instance_id, ex.noisy};
            }

            objective::WeightVector weights =
                uniform_epoch
                    ? objective::compute_weights(pairs, config.tau,
                                                 WeightVariant::Uniform)
                    : objective::compute_weights(pairs, config.tau,
                                                 config.weight_variant);
            double sum_scale = 1.0;
            if (uniform_epoch && config.warmup_literal_sum)
                sum_scale = static_cast<double>(bsz);  // literal unweighted sum

            const double l_ra =
                objective::weighted_batch_loss(pairs, weights) * sum_scale;

            // Paired correction pass.
            double l_rc = 0.0;
            std::vector<typename model::Transformer<float>::Cache> rc_caches;
            std::vector<const TrainExample*> rc_ex;
            if (dual) {
                rc_caches.resize(bsz);
                rc_ex.resize(bsz);
                for (std::size_t b = 0; b < bsz; ++b) {
                    const std::size_t inst = order[start + b];
                    const TrainExample& ex =
                        examples[inst * per_instance + 1];
                    rc_ex[b] = &ex;
                    rc_caches[b] = model.forward(ex.input_ids, ex.target_ids,
                                                 sample_offset(ex));
                    const model::SpanLoss sl =
                        model.span_losses(rc_caches[b], ex);
                    if (!std::isfinite(sl.l_r))
                        throw NumericError(
                            "train: non-finite correction loss at epoch " +
                            std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
                    l_rc += sl.l_r;
                }
                l_rc /= static_cast<double>(bsz);
            }

            const double mixed =
                dual ? objective::mixed_loss(l_ra, l_rc, config.alpha) : l_ra;

            // Backward with the batch's final coefficients. Weights are
            // constants of the batch (no gradient through the softmax).
            model.zero_grads();
            const double ap_scale = dual ? (1.0 - config.alpha) : 1.0;
            for (std::size_t b = 0; b < bsz; ++b) {
                const double c =
                    ap_scale * weights.weights[b] * sum_scale;
                model.backward(ap_caches[b], *ap_ex[b], c, c);
            }
            if (dual && config.alpha > 0.0) {
                const double c = config.alpha / static_cast<double>(bsz);
                for (std::size_t b = 0; b < bsz; ++b)
                    model.backward(rc_caches[b], *rc_ex[b], c, 0.0);
            }
            model.adam_step(lr);

            for (std::size_t b = 0; b < bsz; ++b) {
                telemetry.row(epoch, batch_index, pairs[b].example_id,
                              pairs[b].l_r, pairs[b].l_a, weights.weights[b],
                              pairs[b].noisy);
                if (pairs[b].noisy) {
                    w_noisy_sum += weights.weights[b];
                    ++w_noisy_n;
                } else {
                    w_clean_sum += weights.weights[b];
                    ++w_clean_n;
                }
            }
            epoch_l_ra += l_ra;
            epoch_l_rc += l_rc;
            epoch_mixed += mixed;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.mean_l_ra = epoch_l_ra / n_batches;
        em.mean_l_rc = epoch_l_rc / n_batches;
        em.mean_mixed = epoch_mixed / n_batches;
        em.mean_weight_noisy = w_noisy_n ? w_noisy_sum / w_noisy_n : 0.0;
        em.mean_weight_clean = w_clean_n ? w_clean_sum / w_clean_n : 0.0;

        const eval::EvalReport ind = eval::evaluate(
            model, corpus.test_ind, eval::PredictMode::Plain, "test_ind");
        const eval::EvalReport ood = eval::evaluate(
            model, corpus.test_ood, eval::PredictMode::Plain, "test_ood");
        em.acc_ind = ind.accuracy;
        em.acc_ood = ood.accuracy;
        em.faithfulness = ind.faithfulness;
        em.soundness = ind.soundness;
        em.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        metrics.push_back(em);

        CheckpointHeader header;
        header.config = config;
        header.completed_epochs = epoch;
        header.shuffle_rng_state = shuffle_rng.state();
        header.corpus_hash = corpus_hash;
        header.metrics = metrics;
        if (em.acc_ind > best_ind_acc) {
            best_ind_acc = em.acc_ind;
            header.best_ind_acc = best_ind_acc;
            write_checkpoint(ckpt_best, header, model);
        }
        header.best_ind_acc = best_ind_acc;
        write_checkpoint(ckpt_last, header, model);

        write_text(run_dir / "metrics.csv", metrics_to_csv(metrics));
        ordered_json mj = ordered_json::array();
        for (const EpochMetrics& m : metrics) mj.push_back(metrics_json(m));
        write_text(run_dir / "metrics.json", mj.dump(2) + "\n");
    }

    TrainResult result;
    result.metrics = std::move(metrics);
    result.checkpoint_last = ckpt_last;
    result.checkpoint_best = ckpt_best;
    result.final_param_checksum = model.param_checksum();
    return result;
}

}  // namespace

TrainResult train(const RunConfig& config, const taskgen::Corpus& corpus,
                  const std::filesystem::path& run_dir) {
    return run_training(config, corpus, run_dir, std::nullopt, nullptr);
}

TrainResult resume(const std::filesystem::path& checkpoint,
                   const RunConfig& config, const taskgen::Corpus& corpus,
                   const std::filesystem::path& run_dir) {
    CheckpointHeader probe = read_checkpoint(checkpoint, nullptr);
    if (probe.config.model.vocab_size != config.model.vocab_size ||
        probe.config.model.layers != config.model.layers ||
        probe.config.model.model_width != config.model.model_width ||
        probe.config.model.heads != config.model.heads ||
        probe.config.model.ff_width != config.model.ff_width)
        throw ConfigError("resume: checkpoint model shape incompatible");
    if (probe.corpus_hash != corpus.hash())
        throw ConfigError("resume: corpus hash mismatch");

    model::ModelConfig mc = config.model;
    mc.init_seed = config.seeds.model;
    mc.vocab_size = corpus::Vocab::instance().size();
    model::Transformer<float> model(mc, config.optim);
    CheckpointHeader header = read_checkpoint(checkpoint, &model);
    return run_training(config, corpus, run_dir, header, &model);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& checkpoint) {
    std::ifstream in(checkpoint, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + checkpoint.string());
    CheckpointHeader header = read_checkpoint(checkpoint, nullptr);
    CheckpointInfo info;
    info.config = header.config;
    info.completed_epochs = header.completed_epochs;
    info.corpus_hash = header.corpus_hash;
    info.metrics = header.metrics;
    // Checksum lives in the JSON header; re-read it directly.
    {
        std::string payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        std::uint64_t len;
        std::memcpy(&len, payload.data() + 8, 8);
        ordered_json meta = ordered_json::parse(
            payload.substr(16, static_cast<std::size_t>(len)));
        info.param_checksum = meta.at("param_checksum");
    }
    return info;
}

LoadedModel load_checkpoint(const std::filesystem::path& checkpoint) {
    CheckpointHeader probe = read_checkpoint(checkpoint, nullptr);
    model::ModelConfig mc = probe.config.model;
    mc.init_seed = probe.config.seeds.model;
    model::Transformer<float> model(mc, probe.config.optim);
    read_checkpoint(checkpoint, &model);
    return LoadedModel{probe.config, std::move(model), probe.corpus_hash};
}

std::string metrics_to_csv(const std::vector<EpochMetrics>& metrics) {
    std::string out =
        "epoch,mean_l_ra,mean_l_rc,mean_mixed,mean_weight_noisy,"
        "mean_weight_clean,acc_ind,acc_ood,faithfulness,soundness\n";
    for (const EpochMetrics& m : metrics) {
        char buf[320];
        std::snprintf(buf, sizeof(buf),
                      "%d,%.9g,%.9g,%.9g,%.12g,%.12g,%.6g,%.6g,%.6g,%.6g\n",
                      m.epoch, m.mean_l_ra, m.mean_l_rc, m.mean_mixed,
                      m.mean_weight_noisy, m.mean_weight_clean, m.acc_ind,
                      m.acc_ood, m.faithfulness, m.soundness);
        out += buf;
    }
    return out;
}

}  // namespace coped::trainer
