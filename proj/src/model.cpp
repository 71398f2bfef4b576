#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace coped::model {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
}  // namespace

const char* precision_name(Precision p) {
    return p == Precision::F32 ? "f32" : "f64";
}

Precision precision_from_name(const std::string& name) {
    if (name == "f32") return Precision::F32;
    if (name == "f64") return Precision::F64;
    throw FormatError("unknown precision: " + name);
}

void ModelConfig::validate() const {
    if (layers < 1) throw ConfigError("ModelConfig: layers must be >= 1");
    if (heads < 1) throw ConfigError("ModelConfig: heads must be >= 1");
    if (model_width < 1 || ff_width < 1)
        throw ConfigError("ModelConfig: widths must be >= 1");
    if (model_width % heads != 0)
        throw ConfigError("ModelConfig: model_width (" +
                          std::to_string(model_width) +
                          ") not divisible by heads (" +
                          std::to_string(heads) + ")");
    if (context_length < 2)
        throw ConfigError("ModelConfig: context_length must be >= 2");
    if (vocab_size < 2)
        throw ConfigError("ModelConfig: vocab_size must be >= 2");
}

template <typename T>
struct Transformer<T>::State {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    struct Layer {
        Mat wq, wk, wv, wo;      // d x d
        Mat ln1_g, ln1_b;        // d x 1
        Mat w1, b1;              // d x ff, ff x 1
        Mat w2, b2;              // ff x d, d x 1
        Mat ln2_g, ln2_b;        // d x 1
    };

    struct Params {
        Mat tok_emb;  // V x d
        Mat pos_emb;  // ctx x d
        std::vector<Layer> layers;
        Mat lnf_g, lnf_b;  // d x 1
        Mat wu, bu;        // d x V, V x 1

        template <typename F>
        void visit(F&& f) {
            f(tok_emb);
            f(pos_emb);
            for (Layer& l : layers) {
                f(l.wq); f(l.wk); f(l.wv); f(l.wo);
                f(l.ln1_g); f(l.ln1_b);
                f(l.w1); f(l.b1); f(l.w2); f(l.b2);
                f(l.ln2_g); f(l.ln2_b);
            }
            f(lnf_g);
            f(lnf_b);
            f(wu);
            f(bu);
        }
        template <typename F>
        void visit(F&& f) const {
            const_cast<Params*>(this)->visit(
                [&f](Mat& m) { f(static_cast<const Mat&>(m)); });
        }
    };

    Params params, grads, adam_m, adam_v;

    static void shape_like(Params& dst, const Params& src, bool zero) {
        dst.layers.resize(src.layers.size());
        auto src_mats = collect(const_cast<Params&>(src));
        auto dst_mats = collect(dst);
        for (std::size_t i = 0; i < dst_mats.size(); ++i) {
            dst_mats[i]->resize(src_mats[i]->rows(), src_mats[i]->cols());
            if (zero) dst_mats[i]->setZero();
        }
    }

    static std::vector<Mat*> collect(Params& p) {
        std::vector<Mat*> out;
        p.visit([&out](Mat& m) { out.push_back(&m); });
        return out;
    }
};

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config,
                            const OptimParams& optim)
    : config_(config), optim_(optim), s_(std::make_unique<State>()) {
    config_.validate();
    const int d = config_.model_width;
    const int ff = config_.ff_width;
    const int V = config_.vocab_size;
    const int ctx = config_.context_length;

    auto& p = s_->params;
    p.tok_emb.resize(V, d);
    p.pos_emb.resize(ctx, d);
    p.layers.resize(static_cast<std::size_t>(config_.layers));
    for (auto& l : p.layers) {
        l.wq.resize(d, d); l.wk.resize(d, d);
        l.wv.resize(d, d); l.wo.resize(d, d);
        l.ln1_g.resize(d, 1); l.ln1_b.resize(d, 1);
        l.w1.resize(d, ff); l.b1.resize(ff, 1);
        l.w2.resize(ff, d); l.b2.resize(d, 1);
        l.ln2_g.resize(d, 1); l.ln2_b.resize(d, 1);
    }
    p.lnf_g.resize(d, 1); p.lnf_b.resize(d, 1);
    p.wu.resize(d, V); p.bu.resize(V, 1);

    // Deterministic init: weights N(0, 0.02), biases 0, LayerNorm gain 1.
    Rng rng(config_.init_seed);
    auto fill_normal = [&rng](typename State::Mat& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                m(r, c) = static_cast<T>(rng.normal() * kInitStd);
    };
    fill_normal(p.tok_emb);
    fill_normal(p.pos_emb);
    for (auto& l : p.layers) {
        fill_normal(l.wq); fill_normal(l.wk);
        fill_normal(l.wv); fill_normal(l.wo);
        l.ln1_g.setOnes(); l.ln1_b.setZero();
        fill_normal(l.w1); l.b1.setZero();
        fill_normal(l.w2); l.b2.setZero();
        l.ln2_g.setOnes(); l.ln2_b.setZero();
    }
    p.lnf_g.setOnes(); p.lnf_b.setZero();
    fill_normal(p.wu); p.bu.setZero();

    State::shape_like(s_->grads, p, true);
    State::shape_like(s_->adam_m, p, true);
    State::shape_like(s_->adam_v, p, true);
}

template <typename T>
Transformer<T>::Transformer(Transformer&&) noexcept = default;
template <typename T>
Transformer<T>& Transformer<T>::operator=(Transformer&&) noexcept = default;
template <typename T>
Transformer<T>::~Transformer() = default;

template <typename T>
std::size_t Transformer<T>::param_count() const {
    std::size_t n = 0;
    s_->params.visit([&n](const auto& m) {
        n += static_cast<std::size_t>(m.size());
    });
    return n;
}

template <typename T>
std::uint64_t Transformer<T>::param_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    s_->params.visit([&h](const auto& m) {
        h = fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T),
                    h);
    });
    return h;
}

namespace {

// Row-wise LayerNorm. Writes xhat and the reciprocal stddev; returns the
// affine output.
template <typename Mat, typename MatP>
Mat layer_norm(const Mat& x, const MatP& g, const MatP& b, Mat& xhat,
               Eigen::VectorXd& rstd) {
    using T = typename Mat::Scalar;
    const Eigen::Index S = x.rows(), d = x.cols();
    xhat.resize(S, d);
    rstd.resize(S);
    Mat out(S, d);
    for (Eigen::Index i = 0; i < S; ++i) {
        double mean = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd(i) = r;
        for (Eigen::Index j = 0; j < d; ++j) {
            const T xh = static_cast<T>((x(i, j) - mean) * r);
            xhat(i, j) = xh;
            out(i, j) = xh * g(j, 0) + b(j, 0);
        }
    }
    return out;
}

// Backward through LayerNorm; accumulates into dg/db and returns dx.
template <typename Mat, typename MatP>
Mat layer_norm_backward(const Mat& dy, const Mat& xhat,
                        const Eigen::VectorXd& rstd, const MatP& g, MatP& dg,
                        MatP& db) {
    using T = typename Mat::Scalar;
    const Eigen::Index S = dy.rows(), d = dy.cols();
    Mat dx(S, d);
    for (Eigen::Index i = 0; i < S; ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dy(i, j)) * g(j, 0);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat(i, j);
            dg(j, 0) += static_cast<T>(dy(i, j) * xhat(i, j));
            db(j, 0) += dy(i, j);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dy(i, j)) * g(j, 0);
            dx(i, j) = static_cast<T>(
                rstd(i) * (dxh - inv_d * sum_dxhat -
                           static_cast<double>(xhat(i, j)) * inv_d *
                               sum_dxhat_xhat));
        }
    }
    return dx;
}

}  // namespace

template <typename T>
typename Transformer<T>::Cache Transformer<T>::forward(
    const std::vector<int>& input_ids,
    const std::vector<int>& target_ids, int pos_offset) const {
    if (input_ids.empty())
        throw ContractError("forward: input must be nonempty");
    const int S = static_cast<int>(input_ids.size() + target_ids.size());
    if (pos_offset < 0)
        throw ContractError("forward: pos_offset must be >= 0");
    if (S + pos_offset > config_.context_length)
        throw ContractError("forward: sequence length " + std::to_string(S) +
                            " + offset " + std::to_string(pos_offset) +
                            " exceeds context length " +
                            std::to_string(config_.context_length));

    Cache cache;
    cache.pos_offset = pos_offset;
    cache.input_len = static_cast<int>(input_ids.size());
    cache.tokens = input_ids;
    cache.tokens.insert(cache.tokens.end(), target_ids.begin(),
                        target_ids.end());
    for (int id : cache.tokens)
        if (id < 0 || id >= config_.vocab_size)
            throw ContractError("forward: token id out of range: " +
                                std::to_string(id));

    const auto& p = s_->params;
    const int d = config_.model_width;
    const int heads = config_.heads;
    const int dh = d / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat x(S, d);
    for (int i = 0; i < S; ++i)
        x.row(i) = p.tok_emb.row(cache.tokens[static_cast<std::size_t>(i)]) +
                   p.pos_emb.row(i + cache.pos_offset);

    cache.layers.resize(p.layers.size());
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const auto& l = p.layers[li];
        auto& c = cache.layers[li];

        c.ln1_out = layer_norm(x, l.ln1_g, l.ln1_b, c.ln1_xhat, c.ln1_rstd);
        c.q.noalias() = c.ln1_out * l.wq;
        c.k.noalias() = c.ln1_out * l.wk;
        c.v.noalias() = c.ln1_out * l.wv;

        c.att.resize(static_cast<std::size_t>(heads));
        c.att_concat.resize(S, d);
        for (int h = 0; h < heads; ++h) {
            auto qh = c.q.middleCols(h * dh, dh);
            auto kh = c.k.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            Mat& a = c.att[static_cast<std::size_t>(h)];
            a.noalias() = qh * kh.transpose();
            a *= scale;
            // Causal mask + row softmax with max subtraction.
            for (int i = 0; i < S; ++i) {
                T row_max = a(i, 0);
                for (int j = 1; j <= i; ++j)
                    row_max = std::max(row_max, a(i, j));
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    const T e = std::exp(a(i, j) - row_max);
                    a(i, j) = e;
                    sum += static_cast<double>(e);
                }
                const T inv = static_cast<T>(1.0 / sum);
                for (int j = 0; j <= i; ++j) a(i, j) *= inv;
                for (int j = i + 1; j < S; ++j) a(i, j) = T(0);
            }
            cache.layers[li].att_concat.middleCols(h * dh, dh).noalias() =
                a * vh;
        }
        x.noalias() += c.att_concat * l.wo;

        c.ln2_out = layer_norm(x, l.ln2_g, l.ln2_b, c.ln2_xhat, c.ln2_rstd);
        c.ff_act.noalias() = c.ln2_out * l.w1;
        c.ff_act.rowwise() += l.b1.col(0).transpose();
        c.ff_act = c.ff_act.cwiseMax(T(0));
        x.noalias() += c.ff_act * l.w2;
        x.rowwise() += l.b2.col(0).transpose();
    }

    cache.lnf_out =
        layer_norm(x, p.lnf_g, p.lnf_b, cache.lnf_xhat, cache.lnf_rstd);

    // Log-softmax rows for the positions that predict target tokens:
    // position input_len-1+t predicts target_ids[t].
    const int n_targets = static_cast<int>(target_ids.size());
    cache.log_probs.resize(n_targets, config_.vocab_size);
    if (n_targets > 0) {
        Mat logits(n_targets, config_.vocab_size);
        logits.noalias() =
            cache.lnf_out.middleRows(cache.input_len - 1, n_targets) * p.wu;
        logits.rowwise() += p.bu.col(0).transpose();
        for (int t = 0; t < n_targets; ++t) {
            double row_max = logits(t, 0);
            for (int j = 1; j < config_.vocab_size; ++j)
                row_max = std::max(row_max, static_cast<double>(logits(t, j)));
            double sum = 0.0;
            for (int j = 0; j < config_.vocab_size; ++j)
                sum += std::exp(static_cast<double>(logits(t, j)) - row_max);
            const double lse = row_max + std::log(sum);
            for (int j = 0; j < config_.vocab_size; ++j)
                cache.log_probs(t, j) =
                    static_cast<double>(logits(t, j)) - lse;
        }
    }
    return cache;
}

template <typename T>
Eigen::MatrixXd Transformer<T>::log_prob_table(
    const corpus::TrainExample& ex) const {
    return forward(ex.input_ids, ex.target_ids).log_probs;
}

template <typename T>
SpanLoss Transformer<T>::span_losses(const Cache& cache,
                                     const corpus::TrainExample& ex) const {
    if (ex.rationale_span.empty())
        throw ContractError("span_losses: empty rationale_span");
    auto span_mean = [&cache, &ex](const corpus::Span& span) {
        double total = 0.0;
        for (int t = span.begin; t < span.end; ++t)
            total -= cache.log_probs(t, ex.target_ids[static_cast<std::size_t>(t)]);
        return total / span.size();
    };
    SpanLoss out;
    out.l_r = span_mean(ex.rationale_span);
    out.has_answer = !ex.answer_span.empty();
    out.l_a = out.has_answer ? span_mean(ex.answer_span) : 0.0;
    return out;
}

template <typename T>
SpanLoss Transformer<T>::span_losses(const corpus::TrainExample& ex) const {
    return span_losses(forward(ex.input_ids, ex.target_ids), ex);
}

template <typename T>
void Transformer<T>::zero_grads() {
    s_->grads.visit([](auto& m) { m.setZero(); });
}

template <typename T>
void Transformer<T>::backward(const Cache& cache,
                              const corpus::TrainExample& ex, double coeff_r,
                              double coeff_a) {
    const auto& p = s_->params;
    auto& g = s_->grads;
    const int S = static_cast<int>(cache.tokens.size());
    const int n_targets = S - cache.input_len;
    const int d = config_.model_width;
    const int heads = config_.heads;
    const int dh = d / heads;
    const int V = config_.vocab_size;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    // Per-target-position loss weights: mean-CE spans scaled by coeffs.
    std::vector<double> pos_w(static_cast<std::size_t>(n_targets), 0.0);
    if (coeff_r != 0.0 && !ex.rationale_span.empty())
        for (int t = ex.rationale_span.begin; t < ex.rationale_span.end; ++t)
            pos_w[static_cast<std::size_t>(t)] +=
                coeff_r / ex.rationale_span.size();
    if (coeff_a != 0.0 && !ex.answer_span.empty())
        for (int t = ex.answer_span.begin; t < ex.answer_span.end; ++t)
            pos_w[static_cast<std::size_t>(t)] +=
                coeff_a / ex.answer_span.size();

    // d(loss)/d(logits) = w * (softmax - onehot) at loss rows.
    Mat dlnf_out = Mat::Zero(S, d);
    {
        Mat dlogits = Mat::Zero(n_targets, V);
        for (int t = 0; t < n_targets; ++t) {
            const double w = pos_w[static_cast<std::size_t>(t)];
            if (w == 0.0) continue;
            for (int j = 0; j < V; ++j)
                dlogits(t, j) =
                    static_cast<T>(w * std::exp(cache.log_probs(t, j)));
            dlogits(t, ex.target_ids[static_cast<std::size_t>(t)]) -=
                static_cast<T>(w);
        }
        auto rows = cache.lnf_out.middleRows(cache.input_len - 1, n_targets);
        g.wu.noalias() += rows.transpose() * dlogits;
        g.bu.col(0).noalias() += dlogits.colwise().sum().transpose();
        dlnf_out.middleRows(cache.input_len - 1, n_targets).noalias() =
            dlogits * p.wu.transpose();
    }

    Mat dx = layer_norm_backward(dlnf_out, cache.lnf_xhat, cache.lnf_rstd,
                                 p.lnf_g, g.lnf_g, g.lnf_b);

    for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
        const auto& l = p.layers[static_cast<std::size_t>(li)];
        auto& gl = g.layers[static_cast<std::size_t>(li)];
        const auto& c = cache.layers[static_cast<std::size_t>(li)];

        // FF block: x_out = x_mid + relu(ln2_out*W1 + b1)*W2 + b2
        Mat dff_act = dx * l.w2.transpose();
        gl.w2.noalias() += c.ff_act.transpose() * dx;
        gl.b2.col(0).noalias() += dx.colwise().sum().transpose();
        // ReLU mask.
        dff_act = (c.ff_act.array() > T(0))
                      .select(dff_act, Mat::Zero(S, config_.ff_width));
        gl.w1.noalias() += c.ln2_out.transpose() * dff_act;
        gl.b1.col(0).noalias() += dff_act.colwise().sum().transpose();
        Mat dln2_out = dff_act * l.w1.transpose();
        dx += layer_norm_backward(dln2_out, c.ln2_xhat, c.ln2_rstd, l.ln2_g,
                                  gl.ln2_g, gl.ln2_b);

        // Attention block: x_mid = x_in + att_concat*Wo
        Mat datt_concat = dx * l.wo.transpose();
        gl.wo.noalias() += c.att_concat.transpose() * dx;

        Mat dq(S, d), dk(S, d), dv(S, d);
        for (int h = 0; h < heads; ++h) {
            const Mat& a = c.att[static_cast<std::size_t>(h)];
            auto doh = datt_concat.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            auto qh = c.q.middleCols(h * dh, dh);
            auto kh = c.k.middleCols(h * dh, dh);

            Mat da;
            da.noalias() = doh * vh.transpose();
            dv.middleCols(h * dh, dh).noalias() = a.transpose() * doh;
            // Softmax backward per row (causal support only).
            Mat ds(S, S);
            for (int i = 0; i < S; ++i) {
                double dot = 0.0;
                for (int j = 0; j <= i; ++j)
                    dot += static_cast<double>(da(i, j)) * a(i, j);
                for (int j = 0; j <= i; ++j)
                    ds(i, j) = static_cast<T>(
                        a(i, j) *
                        (static_cast<double>(da(i, j)) - dot));
                for (int j = i + 1; j < S; ++j) ds(i, j) = T(0);
            }
            ds *= scale;
            dq.middleCols(h * dh, dh).noalias() = ds * kh;
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
        }

        gl.wq.noalias() += c.ln1_out.transpose() * dq;
        gl.wk.noalias() += c.ln1_out.transpose() * dk;
        gl.wv.noalias() += c.ln1_out.transpose() * dv;
        Mat dln1_out = dq * l.wq.transpose();
        dln1_out.noalias() += dk * l.wk.transpose();
        dln1_out.noalias() += dv * l.wv.transpose();
        dx += layer_norm_backward(dln1_out, c.ln1_xhat, c.ln1_rstd, l.ln1_g,
                                  gl.ln1_g, gl.ln1_b);
    }

    // Embedding gradients.
    for (int i = 0; i < S; ++i) {
        g.tok_emb.row(cache.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
        g.pos_emb.row(i + cache.pos_offset) += dx.row(i);
    }
}

template <typename T>
void Transformer<T>::adam_step(double learning_rate) {
    ++step_;
    const double b1 = optim_.beta1, b2 = optim_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));

    auto params = State::collect(s_->params);
    auto grads = State::collect(s_->grads);
    auto ms = State::collect(s_->adam_m);
    auto vs = State::collect(s_->adam_v);
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        auto& pm = *params[ti];
        auto& gm = *grads[ti];
        auto& mm = *ms[ti];
        auto& vm = *vs[ti];
        for (Eigen::Index i = 0; i < pm.size(); ++i) {
            const double gr = static_cast<double>(gm.data()[i]);
            if (!std::isfinite(gr))
                throw NumericError(
                    "adam_step: non-finite gradient encountered");
            double m = b1 * mm.data()[i] + (1.0 - b1) * gr;
            double v = b2 * vm.data()[i] + (1.0 - b2) * gr * gr;
            mm.data()[i] = static_cast<T>(m);
            vm.data()[i] = static_cast<T>(v);
            const double mhat = m / bias1;
            const double vhat = v / bias2;
            double update = mhat / (std::sqrt(vhat) + optim_.eps);
            if (optim_.weight_decay != 0.0)
                update += optim_.weight_decay * pm.data()[i];
            pm.data()[i] -= static_cast<T>(learning_rate * update);
        }
    }
}

template <typename T>
GenerateResult Transformer<T>::generate(const std::vector<int>& input_ids,
                                        int max_new, int stop_token) const {
    if (input_ids.empty())
        throw ContractError("generate: input must be nonempty");
    const auto& p = s_->params;
    const int d = config_.model_width;
    const int heads = config_.heads;
    const int dh = d / heads;
    const int ctx = config_.context_length;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    struct LayerKV {
        Mat k, v;  // ctx x d, filled up to pos
    };
    std::vector<LayerKV> kv(p.layers.size());
    for (auto& l : kv) {
        l.k.resize(ctx, d);
        l.v.resize(ctx, d);
    }

    Eigen::Matrix<T, 1, Eigen::Dynamic> x(1, d), xhat(1, d), buf(1, d);
    Eigen::Matrix<T, 1, Eigen::Dynamic> logits(1, config_.vocab_size);

    auto ln_row = [d](const Eigen::Matrix<T, 1, Eigen::Dynamic>& in,
                      const Mat& gm, const Mat& bm,
                      Eigen::Matrix<T, 1, Eigen::Dynamic>& out) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += in(0, j);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = in(0, j) - mean;
            var += c * c;
        }
        var /= d;
        const double r = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < d; ++j)
            out(0, j) = static_cast<T>((in(0, j) - mean) * r) * gm(j, 0) +
                        bm(j, 0);
    };

    // Runs one token through the stack at position pos; returns argmax id.
    auto step = [&](int token, int pos) {
        if (token < 0 || token >= config_.vocab_size)
            throw ContractError("generate: token id out of range");
        x = p.tok_emb.row(token) + p.pos_emb.row(pos);
        for (std::size_t li = 0; li < p.layers.size(); ++li) {
            const auto& l = p.layers[li];
            auto& c = kv[li];
            ln_row(x, l.ln1_g, l.ln1_b, xhat);
            Eigen::Matrix<T, 1, Eigen::Dynamic> q = xhat * l.wq;
            c.k.row(pos).noalias() = xhat * l.wk;
            c.v.row(pos).noalias() = xhat * l.wv;
            for (int h = 0; h < heads; ++h) {
                auto qh = q.middleCols(h * dh, dh);
                auto kh = c.k.topRows(pos + 1).middleCols(h * dh, dh);
                auto vh = c.v.topRows(pos + 1).middleCols(h * dh, dh);
                Eigen::Matrix<T, Eigen::Dynamic, 1> scores =
                    (kh * qh.transpose()) * scale;
                const T mx = scores.maxCoeff();
                double sum = 0.0;
                for (int j = 0; j <= pos; ++j) {
                    scores(j) = std::exp(scores(j) - mx);
                    sum += static_cast<double>(scores(j));
                }
                scores *= static_cast<T>(1.0 / sum);
                buf.middleCols(h * dh, dh).noalias() =
                    scores.transpose() * vh;
            }
            x.noalias() += (buf * l.wo).eval();
            ln_row(x, l.ln2_g, l.ln2_b, xhat);
            Eigen::Matrix<T, 1, Eigen::Dynamic> act = xhat * l.w1;
            act += l.b1.col(0).transpose();
            act = act.cwiseMax(T(0));
            x.noalias() += (act * l.w2).eval();
            x += l.b2.col(0).transpose();
        }
        ln_row(x, p.lnf_g, p.lnf_b, xhat);
        logits.noalias() = xhat * p.wu;
        logits += p.bu.col(0).transpose();
        int best = 0;
        for (int j = 1; j < config_.vocab_size; ++j)
            if (logits(0, j) > logits(0, best)) best = j;
        return best;
    };

    GenerateResult out;
    int pos = 0;
    int next = 0;
    for (int id : input_ids) {
        if (pos >= ctx) return out;  // overflow: nothing decodable
        next = step(id, pos++);
    }
    for (int i = 0; i < max_new; ++i) {
        if (next == stop_token) {
            out.stopped = true;
            return out;
        }
        out.tokens.push_back(next);
        if (pos >= ctx) return out;  // context exhausted, no stop token
        next = step(next, pos++);
    }
    if (next == stop_token) out.stopped = true;
    return out;
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError("model state: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

template <typename T>
void Transformer<T>::save_state(std::ostream& out) const {
    write_u64(out, static_cast<std::uint64_t>(step_));
    for (auto* set : {&s_->params, &s_->adam_m, &s_->adam_v}) {
        set->visit([&out](const auto& m) {
            // Row-major element order, little-endian doubles.
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    double v = static_cast<double>(m(r, c));
                    std::uint64_t bits;
                    std::memcpy(&bits, &v, 8);
                    write_u64(out, bits);
                }
        });
    }
}

template <typename T>
void Transformer<T>::load_state(std::istream& in) {
    step_ = static_cast<long>(read_u64(in));
    for (auto* set : {&s_->params, &s_->adam_m, &s_->adam_v}) {
        set->visit([&in](auto& m) {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    std::uint64_t bits = read_u64(in);
                    double v;
                    std::memcpy(&v, &bits, 8);
                    m(r, c) = static_cast<T>(v);
                }
        });
    }
}

double grad_check(const ModelConfig& config, const corpus::TrainExample& ex,
                  double epsilon, int n_coords, std::uint64_t seed) {
    if (n_coords < 1)
        throw ContractError("grad_check: n_coords must be >= 1");
    if (config.precision != Precision::F64)
        throw ContractError("grad_check: requires f64 precision");

    Transformer<double> model(config);
    auto loss_of = [&model, &ex]() {
        SpanLoss sl = model.span_losses(ex);
        return sl.l_r + sl.l_a;
    };

    auto cache = model.forward(ex.input_ids, ex.target_ids);
    model.zero_grads();
    model.backward(cache, ex, 1.0, ex.answer_span.empty() ? 0.0 : 1.0);

    // grad_check is a friend; it owns the model, so direct perturbation of
    // the parameter buffers is safe.
    auto params = Transformer<double>::State::collect(model.s_->params);
    auto grads = Transformer<double>::State::collect(model.s_->grads);

    std::size_t total = 0;
    for (auto* m : params) total += static_cast<std::size_t>(m->size());

    Rng rng(seed);
    double max_rel_err = 0.0;
    for (int c = 0; c < n_coords; ++c) {
        std::size_t flat = rng.below(total);
        std::size_t ti = 0;
        while (flat >= static_cast<std::size_t>(params[ti]->size())) {
            flat -= static_cast<std::size_t>(params[ti]->size());
            ++ti;
        }
        double& coord = params[ti]->data()[flat];
        const double analytic = grads[ti]->data()[flat];
        const double orig = coord;
        coord = orig + epsilon;
        const double lp = loss_of();
        coord = orig - epsilon;
        const double lm = loss_of();
        coord = orig;
        const double numeric = (lp - lm) / (2.0 * epsilon);
        const double denom =
            std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        max_rel_err = std::max(max_rel_err,
                               std::abs(analytic - numeric) / denom);
    }
    return max_rel_err;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace coped::model
