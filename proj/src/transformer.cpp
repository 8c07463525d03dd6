// SPDX-License-Identifier: Apache-2.0
#include "slicelab/transformer.hpp"

#include <cmath>
#include <sstream>

#include "slicelab/error.hpp"

namespace slicelab {
namespace {

void expect_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << name << ": expected [" << rows << " x " << cols << "], got " << m.shape();
        throw ValidationError(os.str());
    }
}

void expect_length(const std::vector<double>& v, std::size_t n, const std::string& name) {
    if (v.size() != n) {
        throw ValidationError(name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
    }
}

template <typename Model, typename View>
std::vector<View> collect_views(Model& model) {
    std::vector<View> views;
    auto add_matrix = [&](std::string name, auto& m) { views.push_back({std::move(name), m.rows(), m.cols(), m.data()}); };
    auto add_vector = [&](std::string name, auto& v) { views.push_back({std::move(name), 1, v.size(), v}); };

    add_matrix("embedding", model.embedding);
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        auto& b = model.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        add_vector(p + "w_norm1", b.w_norm1);
        add_matrix(p + "w_q", b.w_q);
        add_matrix(p + "w_k", b.w_k);
        add_matrix(p + "w_v", b.w_v);
        add_matrix(p + "w_o", b.w_o);
        add_vector(p + "w_norm2", b.w_norm2);
        add_matrix(p + "w_gate", b.w_gate);
        add_matrix(p + "w_up", b.w_up);
        add_matrix(p + "w_down", b.w_down);
        if (b.adapter) add_matrix(p + "adapter", *b.adapter);
    }
    add_vector("w_norm_final", model.w_norm_final);
    add_matrix("unembedding", model.unembedding);
    return views;
}

}  // namespace

ModelConfig ModelConfig::make(std::size_t d, std::size_t m, std::size_t n_heads, std::size_t head_dim,
                              std::size_t n_kv_heads, std::size_t n_blocks, std::size_t vocab_size,
                              std::size_t max_seq_len) {
    ModelConfig c;
    c.d = d;
    c.m = m;
    c.n_heads = n_heads;
    c.head_dim = head_dim;
    c.n_kv_heads = n_kv_heads;
    c.n_blocks = n_blocks;
    c.vocab_size = vocab_size;
    c.max_seq_len = max_seq_len;
    c.gamma = head_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(head_dim)) : 0.0;
    c.norm_dim = d;
    return c;
}

void ModelConfig::validate(bool require_head_tie) const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ValidationError(std::string("config: ") + name + " must be >= 1");
    };
    positive(d, "d");
    positive(m, "m");
    positive(n_heads, "heads");
    positive(head_dim, "head-dim");
    positive(n_kv_heads, "kv-heads");
    positive(n_blocks, "blocks");
    positive(vocab_size, "vocab");
    positive(max_seq_len, "max-seq-len");
    positive(norm_dim, "norm_dim");
    if (n_heads % n_kv_heads != 0) {
        throw ValidationError("config: kv-heads (" + std::to_string(n_kv_heads) + ") must divide heads (" +
                              std::to_string(n_heads) + ")");
    }
    if (require_head_tie && n_heads * head_dim != d) {
        throw ValidationError("config: heads * head-dim must equal d (h_attn*h_dim = d); got " +
                              std::to_string(n_heads) + " * " + std::to_string(head_dim) +
                              " != " + std::to_string(d));
    }
    if (!std::isfinite(gamma) || gamma <= 0.0) throw ValidationError("config: gamma must be positive");
}

std::vector<TensorView> tensor_views(ModelWeights& model) {
    return collect_views<ModelWeights, TensorView>(model);
}

std::vector<ConstTensorView> tensor_views(const ModelWeights& model) {
    return collect_views<const ModelWeights, ConstTensorView>(model);
}

DenseMatrix DirectSum::part(std::size_t i) const {
    if (i >= depth_) throw ValidationError("DirectSum::part: index " + std::to_string(i) + " out of range");
    const std::size_t n = rows_ * cols_;
    return DenseMatrix(rows_, cols_, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                         data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

DirectSum direct_sum(std::span<const DenseMatrix> parts) {
    if (parts.empty()) throw ValidationError("direct_sum: no parts");
    DirectSum out;
    out.depth_ = parts.size();
    out.rows_ = parts.front().rows();
    out.cols_ = parts.front().cols();
    out.data_.reserve(out.depth_ * out.rows_ * out.cols_);
    for (const auto& p : parts) {
        if (p.rows() != out.rows_ || p.cols() != out.cols_) {
            throw ValidationError("direct_sum: part " + p.shape() + " differs from " + parts.front().shape());
        }
        out.data_.insert(out.data_.end(), p.data().begin(), p.data().end());
    }
    return out;
}

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed, double init_std) {
    config.validate(false);
    SeededRng rng(seed);
    auto g = [&](std::size_t r, std::size_t c) { return random_gaussian(r, c, init_std, rng); };
    const std::vector<double> ones(config.d, 1.0);

    DenseMatrix embedding = g(config.vocab_size, config.d);
    std::vector<BlockWeights> blocks;
    blocks.reserve(config.n_blocks);
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
        auto w_q = g(config.d, config.q_width());
        auto w_k = g(config.d, config.kv_width());
        auto w_v = g(config.d, config.kv_width());
        auto w_o = g(config.q_width(), config.d);
        auto w_gate = g(config.d, config.m);
        auto w_up = g(config.d, config.m);
        auto w_down = g(config.m, config.d);
        blocks.push_back(BlockWeights{ones, std::move(w_q), std::move(w_k), std::move(w_v), std::move(w_o), ones,
                                      std::move(w_gate), std::move(w_up), std::move(w_down), std::nullopt});
    }
    DenseMatrix unembedding = g(config.d, config.vocab_size);
    return ModelWeights{std::move(embedding), std::move(blocks), ones, std::move(unembedding)};
}

void check_shapes(const ModelWeights& model, const ModelConfig& config) {
    const std::size_t d = config.d;
    expect_shape(model.embedding, config.vocab_size, d, "embedding");
    if (model.blocks.size() != config.n_blocks) {
        throw ValidationError("model: " + std::to_string(model.blocks.size()) + " blocks, config says " +
                              std::to_string(config.n_blocks));
    }
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        const auto& b = model.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        expect_length(b.w_norm1, d, p + "w_norm1");
        expect_shape(b.w_q, d, config.q_width(), p + "w_q");
        expect_shape(b.w_k, d, config.kv_width(), p + "w_k");
        expect_shape(b.w_v, d, config.kv_width(), p + "w_v");
        expect_shape(b.w_o, config.q_width(), d, p + "w_o");
        expect_length(b.w_norm2, d, p + "w_norm2");
        expect_shape(b.w_gate, d, config.m, p + "w_gate");
        expect_shape(b.w_up, d, config.m, p + "w_up");
        expect_shape(b.w_down, config.m, d, p + "w_down");
        if (b.adapter) expect_shape(*b.adapter, d, d, p + "adapter");
    }
    expect_length(model.w_norm_final, d, "w_norm_final");
    expect_shape(model.unembedding, d, config.vocab_size, "unembedding");
}

DenseMatrix rmsnorm_rows(const DenseMatrix& e, std::span<const double> w, std::size_t norm_dim) {
    if (w.size() != e.cols()) {
        throw ValidationError("rmsnorm_rows: weight length " + std::to_string(w.size()) + " for " + e.shape());
    }
    const double n = static_cast<double>(norm_dim == 0 ? e.cols() : norm_dim);
    DenseMatrix out(e.rows(), e.cols());
    for (std::size_t i = 0; i < e.rows(); ++i) {
        const auto x = e.row(i);
        double ss = 0.0;
        for (double v : x) ss += v * v;
        if (ss == 0.0) throw ValidationError("rmsnorm_rows: row " + std::to_string(i) + " is all zeros");
        const double rms = std::sqrt(ss / n);
        auto o = out.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) o[j] = x[j] / rms * w[j];
    }
    return out;
}

std::vector<DenseMatrix> attention_weights(const BlockWeights& block, const DenseMatrix& e_norm,
                                           const ModelConfig& config) {
    if (e_norm.rows() > config.max_seq_len) {
        throw ValidationError("attention: sequence length " + std::to_string(e_norm.rows()) + " exceeds max " +
                              std::to_string(config.max_seq_len));
    }
    const DenseMatrix q = matmul(e_norm, block.w_q);
    const DenseMatrix k = matmul(e_norm, block.w_k);
    const std::size_t hd = config.head_dim;
    std::vector<DenseMatrix> probs;
    probs.reserve(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::size_t g = h * config.n_kv_heads / config.n_heads;
        const DenseMatrix scores = scale(matmul_transposed(slice_cols(q, h * hd, hd), slice_cols(k, g * hd, hd)),
                                         config.gamma);
        probs.push_back(causal_row_softmax(scores));
    }
    return probs;
}

DenseMatrix attention(const BlockWeights& block, const DenseMatrix& e_norm, const ModelConfig& config) {
    const std::vector<DenseMatrix> probs = attention_weights(block, e_norm, config);
    const DenseMatrix v = matmul(e_norm, block.w_v);
    const std::size_t hd = config.head_dim;
    std::vector<DenseMatrix> heads;
    heads.reserve(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::size_t g = h * config.n_kv_heads / config.n_heads;
        heads.push_back(matmul(probs[h], slice_cols(v, g * hd, hd)));
    }
    return matmul(concat_cols(heads), block.w_o);
}

DenseMatrix mlp(const BlockWeights& block, const DenseMatrix& a_norm) {
    const DenseMatrix gate = matmul(a_norm, block.w_gate);
    const DenseMatrix up = matmul(a_norm, block.w_up);
    return matmul(silu(hadamard(gate, up)), block.w_down);
}

DenseMatrix block_forward(const BlockWeights& block, const DenseMatrix& e, const ModelConfig& config) {
    const DenseMatrix e1 = add(e, attention(block, rmsnorm_rows(e, block.w_norm1, config.norm_dim), config));
    DenseMatrix out = add(e1, mlp(block, rmsnorm_rows(e1, block.w_norm2, config.norm_dim)));
    if (block.adapter) out = matmul(out, *block.adapter);
    return out;
}

void check_tokens(std::span<const TokenId> tokens, const ModelConfig& config) {
    if (tokens.empty()) throw ValidationError("tokens: empty sequence");
    if (tokens.size() > config.max_seq_len) {
        throw ValidationError("tokens: length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= config.vocab_size) {
            throw ValidationError("tokens: id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                                  " is outside vocabulary of " + std::to_string(config.vocab_size));
        }
    }
}

DenseMatrix embed_tokens(const DenseMatrix& embedding, std::span<const TokenId> tokens) {
    DenseMatrix out(tokens.size(), embedding.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= embedding.rows()) {
            throw ValidationError("embed_tokens: id " + std::to_string(tokens[i]) + " at position " +
                                  std::to_string(i) + " out of range");
        }
        const auto src = embedding.row(tokens[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

DenseMatrix unembed(const ModelWeights& model, const DenseMatrix& final_states, const ModelConfig& config) {
    return matmul(rmsnorm_rows(final_states, model.w_norm_final, config.norm_dim), model.unembedding);
}

ActivationTrace capture_trace(const ModelWeights& model, std::span<const TokenId> tokens,
                              const ModelConfig& config) {
    check_tokens(tokens, config);
    std::vector<DenseMatrix> inputs;
    inputs.reserve(model.blocks.size());
    DenseMatrix e = embed_tokens(model.embedding, tokens);
    for (const auto& block : model.blocks) {
        inputs.push_back(e);
        e = block_forward(block, e, config);
    }
    return ActivationTrace{std::move(inputs), std::move(e)};
}

DenseMatrix model_forward(const ModelWeights& model, std::span<const TokenId> tokens, const ModelConfig& config) {
    check_tokens(tokens, config);
    DenseMatrix e = embed_tokens(model.embedding, tokens);
    for (const auto& block : model.blocks) e = block_forward(block, e, config);
    return unembed(model, e, config);
}

}  // namespace slicelab
