// SPDX-License-Identifier: Apache-2.0
#include "slicelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slicelab/error.hpp"

namespace slicelab {

void McItem::validate() const {
    if (context.empty()) throw ValidationError("mc item: empty context");
    if (choices.size() < 2) throw ValidationError("mc item: needs at least 2 choices");
    for (const auto& c : choices) {
        if (c.empty()) throw ValidationError("mc item: empty choice");
    }
    if (gold_index >= choices.size()) {
        throw ValidationError("mc item: gold index " + std::to_string(gold_index) + " out of range for " +
                              std::to_string(choices.size()) + " choices");
    }
}

double kappa_gaussian(std::span<const double> samples) {
    if (samples.size() < 2) throw ValidationError("kappa_gaussian: need at least 2 samples");
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(samples.size() - 1);
    if (!(var > 0.0)) {
        throw ValidationError("kappa_gaussian: zero sample variance, differential entropy is -inf");
    }
    return 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e * var);
}

EntropyEstimate make_entropy_estimate(double kappa, std::size_t l, std::size_t d) {
    return EntropyEstimate{kappa, l, d, static_cast<double>(l) * static_cast<double>(d) * kappa};
}

EntropyEstimate embedding_entropy(const DenseMatrix& e) {
    if (e.size() < 2) throw ValidationError("embedding_entropy: need at least 2 entries");
    const double kappa = kappa_gaussian(e.data());
    return make_entropy_estimate(kappa, e.rows(), e.cols());
}

double log2_embedding_ppl(const EntropyEstimate& est) { return est.h_bits; }

double entropy_ratio(const DenseMatrix& e_sliced, const DenseMatrix& e) {
    if (e_sliced.rows() != e.rows() || e_sliced.cols() > e.cols()) {
        throw ValidationError("entropy_ratio: " + e_sliced.shape() + " is not a column subset of " + e.shape());
    }
    const EntropyEstimate full = embedding_entropy(e);
    if (full.h_bits == 0.0) throw NumericalError("entropy_ratio: reference entropy is exactly zero");
    return embedding_entropy(e_sliced).h_bits / full.h_bits;
}

double sequence_nll(const DenseMatrix& logits, std::span<const TokenId> tokens) {
    if (logits.rows() != tokens.size()) {
        throw ValidationError("sequence_nll: " + std::to_string(tokens.size()) + " tokens for logits " +
                              logits.shape());
    }
    double total = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        const auto row = logits.row(t - 1);
        if (tokens[t] >= row.size()) throw ValidationError("sequence_nll: token id out of range");
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double x : row) sum += std::exp(x - mx);
        total += mx + std::log(sum) - row[tokens[t]];
    }
    return total;
}

PplResult NllTotals::result() const {
    if (tokens == 0) throw ValidationError("perplexity: no predicted tokens");
    const double mean = nll_sum / static_cast<double>(tokens);
    return PplResult{mean, std::exp(mean), tokens};
}

PplResult perplexity_from_logits(const DenseMatrix& logits, std::span<const TokenId> tokens) {
    if (tokens.size() < 2) throw ValidationError("perplexity: need at least 2 tokens");
    return NllTotals{sequence_nll(logits, tokens), tokens.size() - 1}.result();
}

PplResult token_perplexity(const ModelWeights& model, std::span<const TokenId> tokens, const ModelConfig& config) {
    if (tokens.size() < 2) throw ValidationError("token_perplexity: need at least 2 tokens");
    return perplexity_from_logits(model_forward(model, tokens, config), tokens);
}

PplResult dataset_perplexity(const ModelWeights& model, std::span<const TokenId> stream, const ModelConfig& config,
                             std::size_t max_tokens) {
    const std::size_t limit = max_tokens == 0 ? stream.size() : std::min(max_tokens, stream.size());
    NllTotals totals;
    for (std::size_t start = 0; start < limit; start += config.max_seq_len) {
        const std::size_t len = std::min(config.max_seq_len, limit - start);
        if (len < 2) break;
        const auto chunk = stream.subspan(start, len);
        totals.merge(NllTotals{sequence_nll(model_forward(model, chunk, config), chunk), len - 1});
    }
    return totals.result();
}

double score_choice(const ModelWeights& model, const TokenSeq& context, const TokenSeq& choice,
                    const ModelConfig& config) {
    if (context.empty() || choice.empty()) throw ValidationError("score_choice: empty context or choice");
    if (choice.size() >= config.max_seq_len) {
        throw ValidationError("score_choice: choice of " + std::to_string(choice.size()) +
                              " tokens leaves no room for context within max_seq_len");
    }
    const std::size_t ctx_len = std::min(context.size(), config.max_seq_len - choice.size());
    TokenSeq seq(context.end() - static_cast<std::ptrdiff_t>(ctx_len), context.end());
    seq.insert(seq.end(), choice.begin(), choice.end());

    const DenseMatrix logits = model_forward(model, seq, config);
    double score = 0.0;
    for (std::size_t j = 0; j < choice.size(); ++j) {
        const std::size_t pos = ctx_len + j;
        const auto row = logits.row(pos - 1);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double x : row) sum += std::exp(x - mx);
        score += row[seq[pos]] - mx - std::log(sum);
    }
    return score;
}

std::size_t predict_choice(const ModelWeights& model, const McItem& item, const ModelConfig& config) {
    item.validate();
    std::size_t best = 0;
    double best_score = score_choice(model, item.context, item.choices[0], config);
    for (std::size_t i = 1; i < item.choices.size(); ++i) {
        const double s = score_choice(model, item.context, item.choices[i], config);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

double mc_accuracy(const ModelWeights& model, std::span<const McItem> items, const ModelConfig& config) {
    if (items.empty()) throw ValidationError("mc_accuracy: no items");
    std::size_t correct = 0;
    for (const auto& item : items) {
        if (predict_choice(model, item, config) == item.gold_index) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace slicelab
