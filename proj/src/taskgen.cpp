#include "taskgen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

#include "json.hpp"

namespace coped::taskgen {

using nlohmann::ordered_json;

char op_char(Op op) {
    switch (op) {
        case Op::Add: return '+';
        case Op::Sub: return '-';
        case Op::Mul: return '*';
    }
    throw ContractError("unknown op");
}

Op op_from_char(char c) {
    switch (c) {
        case '+': return Op::Add;
        case '-': return Op::Sub;
        case '*': return Op::Mul;
    }
    throw FormatError(std::string("unknown operator character: ") + c);
}

void GenParams::validate() const {
    if (num_steps.lo < 1)
        throw ConfigError("GenParams: num_steps_range.lo must be >= 1");
    if (num_steps.hi < num_steps.lo)
        throw ConfigError("GenParams: num_steps_range.hi < num_steps_range.lo");
    if (modulus < 2) throw ConfigError("GenParams: modulus must be >= 2");
    if (ops.empty()) throw ConfigError("GenParams: ops must be nonempty");
    if (operand.lo < 0 || operand.hi >= modulus || operand.hi < operand.lo)
        throw ConfigError(
            "GenParams: operand_range must lie within [0, modulus)");
}

int Rationale::conclusion() const {
    if (steps.empty()) throw ContractError("Rationale: no steps");
    return steps.back().result;
}

std::string Rationale::text() const {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) out += ';';
        const Step& s = steps[i];
        out += std::to_string(s.lhs);
        out += op_char(s.op);
        out += std::to_string(s.rhs);
        out += '=';
        out += std::to_string(s.result);
    }
    return out;
}

namespace {

int apply_op(Op op, int lhs, int rhs, int m) {
    long long v = 0;
    switch (op) {
        case Op::Add: v = static_cast<long long>(lhs) + rhs; break;
        case Op::Sub: v = static_cast<long long>(lhs) - rhs; break;
        case Op::Mul: v = static_cast<long long>(lhs) * rhs; break;
    }
    long long r = v % m;
    if (r < 0) r += m;
    return static_cast<int>(r);
}

int draw_operand(Rng& rng, const IntRange& range) {
    return range.lo +
           static_cast<int>(rng.below(
               static_cast<std::uint64_t>(range.hi - range.lo + 1)));
}

}  // namespace

Instance gen_instance(const GenParams& params, std::uint64_t index) {
    params.validate();
    Rng rng(stream_seed(params.seed, index));

    const int k = params.num_steps.lo +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(
                      params.num_steps.hi - params.num_steps.lo + 1)));

    Instance inst;
    int v = draw_operand(rng, params.operand);
    inst.question = "v0=" + std::to_string(v);
    for (int i = 0; i < k; ++i) {
        Op op = params.ops[rng.below(params.ops.size())];
        int c = draw_operand(rng, params.operand);
        Step s;
        s.lhs = v;
        s.op = op;
        s.rhs = c;
        s.result = apply_op(op, v, c, params.modulus);
        v = s.result;
        inst.rationale_plus.steps.push_back(s);
        inst.question += ';';
        inst.question += op_char(op);
        inst.question += std::to_string(c);
    }
    inst.answer = v;
    inst.id = fnv1a64(inst.question);

    inst.modulus = params.modulus;

    // r- from its own stream so corruption is independent of generation order.
    inst.rationale_minus = corrupt_rationale(
        inst, stream_seed(params.seed ^ 0x5EEDC0DE5EEDC0DEULL, index),
        &inst.corrupted_step_index);
    return inst;
}

Rationale corrupt_rationale(const Instance& inst, std::uint64_t rng_seed,
                            int* corrupted_index) {
    const auto& plus = inst.rationale_plus.steps;
    if (plus.empty()) throw ContractError("corrupt_rationale: empty rationale");
    const int k = static_cast<int>(plus.size());
    const int m = inst.modulus;
    if (m < 2) throw ContractError("corrupt_rationale: instance modulus < 2");
    Rng rng(rng_seed);
    for (;;) {
        const int j = 1 + static_cast<int>(rng.below(
                              static_cast<std::uint64_t>(k)));  // 1-based
        Rationale out;
        out.steps.assign(plus.begin(), plus.begin() + j);
        Step& corrupt = out.steps.back();
        // Replacement result drawn uniformly from [0, m) \ {correct}.
        int repl =
            static_cast<int>(rng.below(static_cast<std::uint64_t>(m - 1)));
        if (repl >= corrupt.result) ++repl;
        corrupt.result = repl;
        // Recompute downstream consistently from the corrupted value.
        int v = repl;
        for (int i = j; i < k; ++i) {
            Step s = plus[i];
            s.lhs = v;
            s.result = apply_op(s.op, v, s.rhs, m);
            v = s.result;
            out.steps.push_back(s);
        }
        if (out.conclusion() != inst.answer) {
            if (corrupted_index) *corrupted_index = j;
            return out;
        }
    }
}

const std::vector<Instance>& Corpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "test_ind") return test_ind;
    if (name == "test_ood") return test_ood;
    throw ContractError("unknown split: " + name);
}

std::uint64_t Corpus::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto* split : {&train, &test_ind, &test_ood}) {
        for (const Instance& inst : *split) {
            h = fnv1a64(inst.question, h);
            h = fnv1a64(inst.rationale_plus.text(), h);
            h = fnv1a64(inst.rationale_minus.text(), h);
            h = fnv1a64(std::to_string(inst.answer), h);
            const unsigned char noisy = inst.noisy ? 1 : 0;
            h = fnv1a64(&noisy, 1, h);
        }
    }
    return h;
}

Corpus build_corpus(const GenParams& params, const CorpusSizes& sizes,
                    const GenParams& ood_params) {
    params.validate();
    ood_params.validate();
    if (sizes.train < 1 || sizes.test_ind < 1 || sizes.test_ood < 1)
        throw ConfigError("build_corpus: all split sizes must be >= 1");

    Corpus corpus;
    corpus.params = params;
    corpus.ood_params = ood_params;

    std::unordered_set<std::string> seen;
    auto fill = [&seen](std::vector<Instance>& out, const GenParams& p,
                        std::size_t want, const char* split) {
        std::uint64_t index = 0;
        const std::uint64_t limit =
            200 * static_cast<std::uint64_t>(want) + 10000;
        while (out.size() < want) {
            if (index >= limit)
                throw GenerationError(
                    std::string("build_corpus: parameter space exhausted "
                                "while filling split ") +
                    split);
            Instance inst = gen_instance(p, index++);
            if (!seen.insert(inst.question).second) continue;
            inst.split = split;
            out.push_back(std::move(inst));
        }
    };

    fill(corpus.train, params, sizes.train, "train");
    fill(corpus.test_ind, params, sizes.test_ind, "test_ind");
    fill(corpus.test_ood, ood_params, sizes.test_ood, "test_ood");
    return corpus;
}

Corpus inject_label_noise(const Corpus& corpus, double rho,
                          std::uint64_t seed) {
    if (rho < 0.0 || rho > 1.0)
        throw ConfigError("inject_label_noise: rho must be in [0,1]");
    Corpus out = corpus;
    const std::size_t n = out.train.size();
    const std::size_t count = static_cast<std::size_t>(rho * n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + rng.below(n - i);
        std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < count; ++i) {
        Instance& inst = out.train[idx[i]];
        std::swap(inst.rationale_plus, inst.rationale_minus);
        inst.noisy = true;
    }
    return out;
}

namespace {

ordered_json rationale_to_json(const Rationale& r) { return r.text(); }

Rationale rationale_from_text(const std::string& text) {
    Rationale r;
    std::size_t pos = 0;
    auto read_int = [&text, &pos]() {
        std::size_t start = pos;
        while (pos < text.size() && std::isdigit(
                   static_cast<unsigned char>(text[pos])))
            ++pos;
        if (pos == start)
            throw FormatError("rationale parse: expected digits at offset " +
                              std::to_string(start));
        return std::stoi(text.substr(start, pos - start));
    };
    while (pos < text.size()) {
        Step s;
        s.lhs = read_int();
        if (pos >= text.size())
            throw FormatError("rationale parse: truncated step");
        s.op = op_from_char(text[pos++]);
        s.rhs = read_int();
        if (pos >= text.size() || text[pos] != '=')
            throw FormatError("rationale parse: expected '='");
        ++pos;
        s.result = read_int();
        r.steps.push_back(s);
        if (pos < text.size()) {
            if (text[pos] != ';')
                throw FormatError("rationale parse: expected ';'");
            ++pos;
        }
    }
    if (r.steps.empty()) throw FormatError("rationale parse: empty");
    return r;
}

std::string ops_string(const std::vector<Op>& ops) {
    std::string s;
    for (Op op : ops) s += op_char(op);
    return s;
}

std::vector<Op> ops_from_string(const std::string& s) {
    std::vector<Op> ops;
    for (char c : s) ops.push_back(op_from_char(c));
    return ops;
}

ordered_json params_to_json(const GenParams& p) {
    return ordered_json{{"num_steps", {p.num_steps.lo, p.num_steps.hi}},
                        {"operand", {p.operand.lo, p.operand.hi}},
                        {"modulus", p.modulus},
                        {"ops", ops_string(p.ops)},
                        {"seed", p.seed}};
}

GenParams params_from_json(const ordered_json& j) {
    GenParams p;
    p.num_steps = {j.at("num_steps").at(0), j.at("num_steps").at(1)};
    p.operand = {j.at("operand").at(0), j.at("operand").at(1)};
    p.modulus = j.at("modulus");
    p.ops = ops_from_string(j.at("ops").get<std::string>());
    p.seed = j.at("seed");
    return p;
}

}  // namespace

std::string to_json(const GenParams& p) { return params_to_json(p).dump(); }

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write_split = [&dir](const std::vector<Instance>& split,
                              const std::string& name) {
        std::ofstream out(dir / (name + ".jsonl"));
        if (!out) throw IoError("cannot open " + (dir / name).string());
        for (const Instance& inst : split) {
            ordered_json j{{"id", inst.id},
                           {"question", inst.question},
                           {"rationale_plus", rationale_to_json(inst.rationale_plus)},
                           {"rationale_minus", rationale_to_json(inst.rationale_minus)},
                           {"answer", inst.answer},
                           {"corrupted_step_index", inst.corrupted_step_index},
                           {"noisy_flag", inst.noisy},
                           {"split", inst.split}};
            out << j.dump() << '\n';
        }
    };
    write_split(corpus.train, "train");
    write_split(corpus.test_ind, "test_ind");
    write_split(corpus.test_ood, "test_ood");
    std::ofstream meta(dir / "params.json");
    meta << ordered_json{{"params", params_to_json(corpus.params)},
                         {"ood_params", params_to_json(corpus.ood_params)}}
                .dump(2)
         << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus corpus;
    {
        std::ifstream meta(dir / "params.json");
        if (!meta) throw IoError("cannot open " + (dir / "params.json").string());
        ordered_json j = ordered_json::parse(meta);
        corpus.params = params_from_json(j.at("params"));
        corpus.ood_params = params_from_json(j.at("ood_params"));
    }
    auto read_split = [&dir, &corpus](std::vector<Instance>& split,
                                      const std::string& name) {
        const int modulus = (name == "test_ood") ? corpus.ood_params.modulus
                                                 : corpus.params.modulus;
        std::ifstream in(dir / (name + ".jsonl"));
        if (!in)
            throw IoError("cannot open " + (dir / (name + ".jsonl")).string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ordered_json j = ordered_json::parse(line);
            Instance inst;
            inst.id = j.at("id");
            inst.question = j.at("question");
            inst.rationale_plus =
                rationale_from_text(j.at("rationale_plus").get<std::string>());
            inst.rationale_minus =
                rationale_from_text(j.at("rationale_minus").get<std::string>());
            inst.answer = j.at("answer");
            inst.corrupted_step_index = j.at("corrupted_step_index");
            inst.modulus = modulus;
            inst.noisy = j.at("noisy_flag");
            inst.split = j.at("split");
            split.push_back(std::move(inst));
        }
    };
    read_split(corpus.train, "train");
    read_split(corpus.test_ind, "test_ind");
    read_split(corpus.test_ood, "test_ood");
    return corpus;
}

}  // namespace coped::taskgen
