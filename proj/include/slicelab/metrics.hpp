// SPDX-License-Identifier: Apache-2.0
//
// Entropy bookkeeping for embedding matrices and the usual evaluation
// metrics: token perplexity and multiple-choice exact-match accuracy.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "slicelab/linalg.hpp"
#include "slicelab/transformer.hpp"

namespace slicelab {

/// Differential entropy of an l x d embedding matrix under the i.i.d.
/// coordinate model: h_bits = l * d * kappa.
struct EntropyEstimate {
    double kappa = 0.0;  // bits per coordinate
    std::size_t l = 0;
    std::size_t d = 0;
    double h_bits = 0.0;
};

struct McItem {
    TokenSeq context;
    std::vector<TokenSeq> choices;
    std::size_t gold_index = 0;

    /// >= 2 non-empty choices, gold in range, non-empty context.
    void validate() const;
};

struct PplResult {
    double mean_nll = 0.0;  // nats per predicted token
    double ppl = 1.0;
    std::size_t token_count = 0;
};

/// Gaussian plug-in estimate 0.5 * log2(2 pi e var), unbiased sample variance.
double kappa_gaussian(std::span<const double> samples);
EntropyEstimate make_entropy_estimate(double kappa, std::size_t l, std::size_t d);
EntropyEstimate embedding_entropy(const DenseMatrix& e);
/// log2 of PPL(E) = 2^H; kept in the log domain.
double log2_embedding_ppl(const EntropyEstimate& est);
/// H(E_sliced) / H(E).
double entropy_ratio(const DenseMatrix& e_sliced, const DenseMatrix& e);

/// Sum of -ln p(tokens[t] | logits row t-1) over t = 1..l-1.
double sequence_nll(const DenseMatrix& logits, std::span<const TokenId> tokens);
PplResult perplexity_from_logits(const DenseMatrix& logits, std::span<const TokenId> tokens);

/// Token-weighted NLL accumulator; merging is commutative.
struct NllTotals {
    double nll_sum = 0.0;
    std::size_t tokens = 0;

    void merge(const NllTotals& other) noexcept {
        nll_sum += other.nll_sum;
        tokens += other.tokens;
    }
    PplResult result() const;
};

PplResult token_perplexity(const ModelWeights& model, std::span<const TokenId> tokens, const ModelConfig& config);
/// Splits `stream` into max_seq_len chunks (at most `max_tokens` tokens in
/// total when non-zero) and averages the NLL over every predicted token.
PplResult dataset_perplexity(const ModelWeights& model, std::span<const TokenId> stream, const ModelConfig& config,
                             std::size_t max_tokens = 0);

/// Sum of log-probabilities of the choice tokens after `context`. The
/// context is truncated from the left to fit max_seq_len.
double score_choice(const ModelWeights& model, const TokenSeq& context, const TokenSeq& choice,
                    const ModelConfig& config);
/// Argmax of choice scores, ties to the lowest index.
std::size_t predict_choice(const ModelWeights& model, const McItem& item, const ModelConfig& config);
double mc_accuracy(const ModelWeights& model, std::span<const McItem> items, const ModelConfig& config);

}  // namespace slicelab
