// SPDX-License-Identifier: Apache-2.0
//
// Next-token training for the toy transformer: loss, gradients through the
// tape, and SGD / Adam updates on one sampled window per step.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slicelab/autodiff.hpp"
#include "slicelab/transformer.hpp"

namespace slicelab {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& text);
std::string to_string(OptimizerKind kind);

struct TrainConfig {
    double learning_rate = 3e-3;
    std::size_t steps = 2000;
    std::size_t batch_len = 64;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate(const ModelConfig& model) const;
};

/// Mean over rows of -ln softmax(logits_row)[target].
double cross_entropy_loss(const DenseMatrix& logits, std::span<const TokenId> targets);

/// The forward pass of `model` recorded on a tape, with one parameter node
/// per tensor in tensor_views() order.
struct RecordedForward {
    autodiff::Tape tape;
    std::vector<autodiff::Var> params;
    autodiff::Var logits{0};
    autodiff::Var loss{0};
};

RecordedForward record_forward(const ModelWeights& model, const ModelConfig& config,
                               std::span<const TokenId> inputs, std::span<const TokenId> targets);

struct LossAndGradients {
    double loss = 0.0;
    ModelWeights gradients;  // same layout as the model
};

LossAndGradients loss_and_gradients(const ModelWeights& model, const ModelConfig& config,
                                    std::span<const TokenId> inputs, std::span<const TokenId> targets);

/// Trains in place and returns the per-step losses. Each step draws one
/// window of batch_len + 1 tokens from `corpus` with the configured seed.
std::vector<double> train(ModelWeights& model, const ModelConfig& config, std::span<const TokenId> corpus,
                          const TrainConfig& cfg);

}  // namespace slicelab
