// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer forward pass: embedding lookup, pre-norm blocks of
// grouped-query causal attention and a gated MLP on a residual stream, a final
// RMSNorm and the unembedding product. Activations multiply weights on the
// right (E * W), so W_q is [d x h_attn*h_dim] and so on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicelab/linalg.hpp"

namespace slicelab {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

struct ModelConfig {
    std::size_t d = 0;            // residual stream width
    std::size_t m = 0;            // MLP intermediate width
    std::size_t n_heads = 0;      // h_attn
    std::size_t head_dim = 0;     // h_dim
    std::size_t n_kv_heads = 0;   // v
    std::size_t n_blocks = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;  // l
    double gamma = 0.0;           // attention logit scale
    // RMSNorm divides by sqrt(sum(x^2) / norm_dim). Equal to d for unsliced
    // models; slicing keeps the original value.
    std::size_t norm_dim = 0;

    /// Fills gamma = 1/sqrt(head_dim) and norm_dim = d.
    static ModelConfig make(std::size_t d, std::size_t m, std::size_t n_heads, std::size_t head_dim,
                            std::size_t n_kv_heads, std::size_t n_blocks, std::size_t vocab_size,
                            std::size_t max_seq_len);

    std::size_t q_width() const noexcept { return n_heads * head_dim; }
    std::size_t kv_width() const noexcept { return n_kv_heads * head_dim; }

    /// Throws ValidationError. `require_head_tie` enforces h_attn * h_dim == d,
    /// which only holds before slicing.
    void validate(bool require_head_tie) const;

    bool operator==(const ModelConfig&) const = default;
};

struct BlockWeights {
    std::vector<double> w_norm1;  // [d]
    DenseMatrix w_q;              // [d x h_attn*h_dim]
    DenseMatrix w_k;              // [d x v*h_dim]
    DenseMatrix w_v;              // [d x v*h_dim]
    DenseMatrix w_o;              // [h_attn*h_dim x d]
    std::vector<double> w_norm2;  // [d]
    DenseMatrix w_gate;           // [d x m]
    DenseMatrix w_up;             // [d x m]
    DenseMatrix w_down;           // [m x d]
    // Change of residual basis applied to the block output. Only present in
    // models rotated per block.
    std::optional<DenseMatrix> adapter;  // [d x d]

    bool operator==(const BlockWeights&) const = default;
};

struct ModelWeights {
    DenseMatrix embedding;             // [vocab x d]
    std::vector<BlockWeights> blocks;  // n_blocks
    std::vector<double> w_norm_final;  // [d]
    DenseMatrix unembedding;           // [d x vocab]

    bool operator==(const ModelWeights&) const = default;
};

/// Mutable and read-only views over every parameter tensor in a fixed order.
/// Norm vectors appear as 1 x d tensors. The order defines the model file
/// layout.
struct TensorView {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    std::span<double> values;
};
struct ConstTensorView {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    std::span<const double> values;
};
std::vector<TensorView> tensor_views(ModelWeights& model);
std::vector<ConstTensorView> tensor_views(const ModelWeights& model);

struct ActivationTrace {
    std::vector<DenseMatrix> block_inputs;  // n_blocks entries, [l x d]
    DenseMatrix final_states;               // residual stream after the last block, [l x d]
};

/// Stack of equally shaped [l x d] parts, indexed [h x l x d].
class DirectSum {
public:
    std::size_t depth() const noexcept { return depth_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<const double> flat() const noexcept { return data_; }
    DenseMatrix part(std::size_t i) const;

private:
    friend DirectSum direct_sum(std::span<const DenseMatrix> parts);
    std::size_t depth_ = 0, rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// Seeded Gaussian init (stddev `init_std`) for projections, ones for norms.
ModelWeights init_model(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02);
/// Shape check of every tensor against `config`. Throws ValidationError.
void check_shapes(const ModelWeights& model, const ModelConfig& config);

/// Row r -> r / sqrt(sum(r^2) / norm_dim) * w. norm_dim defaults to row length.
DenseMatrix rmsnorm_rows(const DenseMatrix& e, std::span<const double> w, std::size_t norm_dim = 0);

DenseMatrix attention(const BlockWeights& block, const DenseMatrix& e_norm, const ModelConfig& config);
/// Per-head causal attention probabilities, one [l x l] matrix per query head.
std::vector<DenseMatrix> attention_weights(const BlockWeights& block, const DenseMatrix& e_norm,
                                           const ModelConfig& config);
/// silu((A W_gate) . (A W_up)) W_down, the activation applied after the product.
DenseMatrix mlp(const BlockWeights& block, const DenseMatrix& a_norm);
DenseMatrix block_forward(const BlockWeights& block, const DenseMatrix& e, const ModelConfig& config);

DirectSum direct_sum(std::span<const DenseMatrix> parts);

DenseMatrix embed_tokens(const DenseMatrix& embedding, std::span<const TokenId> tokens);
/// Logits [l x vocab].
DenseMatrix model_forward(const ModelWeights& model, std::span<const TokenId> tokens, const ModelConfig& config);
ActivationTrace capture_trace(const ModelWeights& model, std::span<const TokenId> tokens,
                              const ModelConfig& config);
/// Logits computed from the residual stream after the last block.
DenseMatrix unembed(const ModelWeights& model, const DenseMatrix& final_states, const ModelConfig& config);

/// Rejects empty, overlong or out-of-vocabulary sequences.
void check_tokens(std::span<const TokenId> tokens, const ModelConfig& config);

}  // namespace slicelab
