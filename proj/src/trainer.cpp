// SPDX-License-Identifier: Apache-2.0
#include "slicelab/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "slicelab/error.hpp"

namespace slicelab {

namespace ad = autodiff;

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "sgd") return OptimizerKind::sgd;
    throw ValidationError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

void TrainConfig::validate(const ModelConfig& model) const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("train: learning rate must be finite and non-negative");
    }
    if (steps == 0) throw ValidationError("train: steps must be >= 1");
    if (batch_len == 0 || batch_len > model.max_seq_len) {
        throw ValidationError("train: batch length must lie in [1, max_seq_len = " +
                              std::to_string(model.max_seq_len) + "]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw ValidationError("train: invalid Adam hyperparameters");
    }
}

double cross_entropy_loss(const DenseMatrix& logits, std::span<const TokenId> targets) {
    if (targets.size() != logits.rows()) {
        throw ValidationError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for logits " +
                              logits.shape());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto row = logits.row(i);
        if (targets[i] >= row.size()) {
            throw ValidationError("cross_entropy_loss: target id " + std::to_string(targets[i]) + " at position " +
                                  std::to_string(i) + " is outside " + std::to_string(row.size()) + " classes");
        }
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double x : row) sum += std::exp(x - mx);
        total += mx + std::log(sum) - row[targets[i]];
    }
    return total / static_cast<double>(targets.size());
}

RecordedForward record_forward(const ModelWeights& model, const ModelConfig& config,
                               std::span<const TokenId> inputs, std::span<const TokenId> targets) {
    check_shapes(model, config);
    check_tokens(inputs, config);
    if (targets.size() != inputs.size()) {
        throw ValidationError("record_forward: " + std::to_string(targets.size()) + " targets for " +
                              std::to_string(inputs.size()) + " inputs");
    }
    for (const auto& b : model.blocks) {
        if (b.adapter) throw ValidationError("record_forward: models with residual adapters are not trainable");
    }

    RecordedForward rec;
    ad::Tape& t = rec.tape;
    for (const auto& view : tensor_views(model)) {
        rec.params.push_back(
            t.parameter(DenseMatrix(view.rows, view.cols, std::vector<double>(view.values.begin(), view.values.end()))));
    }

    std::size_t next = 0;
    auto param = [&]() { return rec.params[next++]; };
    const ad::Var embedding = param();
    const std::size_t hd = config.head_dim;

    ad::Var e = ad::gather_rows(t, embedding, std::vector<TokenId>(inputs.begin(), inputs.end()));
    for (std::size_t blk = 0; blk < model.blocks.size(); ++blk) {
        const ad::Var w_norm1 = param(), w_q = param(), w_k = param(), w_v = param(), w_o = param();
        const ad::Var w_norm2 = param(), w_gate = param(), w_up = param(), w_down = param();

        const ad::Var n1 = ad::rmsnorm(t, e, w_norm1, config.norm_dim);
        const ad::Var q = ad::matmul(t, n1, w_q);
        const ad::Var k = ad::matmul(t, n1, w_k);
        const ad::Var v = ad::matmul(t, n1, w_v);
        std::vector<ad::Var> heads;
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            const std::size_t g = h * config.n_kv_heads / config.n_heads;
            const ad::Var scores = ad::scale(
                t, ad::matmul_transposed(t, ad::slice_cols(t, q, h * hd, hd), ad::slice_cols(t, k, g * hd, hd)),
                config.gamma);
            heads.push_back(ad::matmul(t, ad::causal_softmax(t, scores), ad::slice_cols(t, v, g * hd, hd)));
        }
        const ad::Var e1 = ad::add(t, e, ad::matmul(t, ad::concat_cols(t, heads), w_o));

        const ad::Var n2 = ad::rmsnorm(t, e1, w_norm2, config.norm_dim);
        const ad::Var hidden = ad::silu(t, ad::hadamard(t, ad::matmul(t, n2, w_gate), ad::matmul(t, n2, w_up)));
        e = ad::add(t, e1, ad::matmul(t, hidden, w_down));
    }
    const ad::Var w_norm_final = param();
    const ad::Var unembedding = param();
    rec.logits = ad::matmul(t, ad::rmsnorm(t, e, w_norm_final, config.norm_dim), unembedding);
    rec.loss = ad::cross_entropy(t, rec.logits, std::vector<TokenId>(targets.begin(), targets.end()));
    return rec;
}

LossAndGradients loss_and_gradients(const ModelWeights& model, const ModelConfig& config,
                                    std::span<const TokenId> inputs, std::span<const TokenId> targets) {
    RecordedForward rec = record_forward(model, config, inputs, targets);
    rec.tape.backward(rec.loss);

    LossAndGradients out{rec.tape.value(rec.loss)(0, 0), model};
    auto views = tensor_views(out.gradients);
    for (std::size_t i = 0; i < views.size(); ++i) {
        const DenseMatrix g = rec.tape.grad(rec.params[i]);
        std::copy(g.data().begin(), g.data().end(), views[i].values.begin());
    }
    return out;
}

std::vector<double> train(ModelWeights& model, const ModelConfig& config, std::span<const TokenId> corpus,
                          const TrainConfig& cfg) {
    cfg.validate(config);
    if (corpus.size() <= cfg.batch_len) {
        throw ValidationError("train: corpus of " + std::to_string(corpus.size()) +
                              " tokens must be longer than the batch length " + std::to_string(cfg.batch_len));
    }
    for (TokenId tok : corpus) {
        if (tok >= config.vocab_size) throw ValidationError("train: corpus token id outside vocabulary");
    }

    std::vector<std::vector<double>> first_moment, second_moment;
    for (const auto& view : tensor_views(std::as_const(model))) {
        first_moment.emplace_back(view.values.size(), 0.0);
        second_moment.emplace_back(view.values.size(), 0.0);
    }

    SeededRng rng(cfg.seed);
    std::vector<double> losses;
    losses.reserve(cfg.steps);
    double beta1_power = 1.0, beta2_power = 1.0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const std::size_t start = rng.uniform_index(corpus.size() - cfg.batch_len);
        const auto inputs = corpus.subspan(start, cfg.batch_len);
        const auto targets = corpus.subspan(start + 1, cfg.batch_len);

        LossAndGradients lg = loss_and_gradients(model, config, inputs, targets);
        if (!std::isfinite(lg.loss)) throw NumericalError("train: loss became non-finite at step " + std::to_string(step));
        losses.push_back(lg.loss);

        auto params = tensor_views(model);
        const auto grads = tensor_views(std::as_const(lg.gradients));
        beta1_power *= cfg.beta1;
        beta2_power *= cfg.beta2;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i].values;
            const auto g = grads[i].values;
            if (cfg.optimizer == OptimizerKind::sgd) {
                for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.learning_rate * g[j];
                continue;
            }
            auto& m = first_moment[i];
            auto& v = second_moment[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                const double m_hat = m[j] / (1.0 - beta1_power);
                const double v_hat = v[j] / (1.0 - beta2_power);
                p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
            }
        }
    }
    return losses;
}

}  // namespace slicelab
