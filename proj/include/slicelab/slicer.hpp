// SPDX-License-Identifier: Apache-2.0
//
// Representation-dimension slicing. The residual stream is rotated into the
// eigenbasis of its calibration second moment (norm weights folded first so
// RMSNorm commutes with the rotation), then the trailing coordinates are
// dropped from every d-facing weight.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slicelab/linalg.hpp"
#include "slicelab/transformer.hpp"

namespace slicelab {

enum class RotationMode { global, per_block };

std::string to_string(RotationMode mode);
/// Accepts "global" and "per-block".
RotationMode parse_rotation_mode(const std::string& text);

struct SparsityLevel {
    double s = 0.0;
    std::size_t d = 0;
    std::size_t d_kept = 0;
};

/// Rotation matrices act on row activations: x -> x * Q.
struct RotationPlan {
    RotationMode mode = RotationMode::global;
    // global: one entry. per_block: n_blocks + 1 entries, entry i is the basis
    // of block i's input and the last one the basis of the final states.
    std::vector<DenseMatrix> rotations;
    std::vector<std::vector<double>> spectra;  // descending, one per rotation
};

struct SlicedModel {
    ModelWeights weights;
    ModelConfig config;
    SparsityLevel level;
    RotationMode mode = RotationMode::global;
};

/// Admissible iff (1 - s) * d is a positive integer and 0 <= s < 1.
/// A rejection names the two nearest admissible values.
SparsityLevel validate_sparsity(std::size_t d, double s);

ModelWeights fold_norm_weights(const ModelWeights& model);
bool norms_are_folded(const ModelWeights& model);

RotationPlan compute_rotation(const ModelWeights& model, const ModelConfig& config,
                              const std::vector<TokenSeq>& calibration, RotationMode mode);
/// Rotation plan built from explicit matrices (for example a random
/// orthogonal Q). Spectra are left empty.
RotationPlan make_plan(RotationMode mode, std::vector<DenseMatrix> rotations);
/// Inverse plan: every Q replaced by Q^T.
RotationPlan invert_plan(const RotationPlan& plan);

ModelWeights apply_rotation(const ModelWeights& model, const ModelConfig& config, const RotationPlan& plan);

SlicedModel slice_model(const ModelWeights& model, const ModelConfig& config, const RotationPlan& plan,
                        const SparsityLevel& level);

/// Share of eigenvalue mass held by the first `d_kept` coordinates.
double retained_spectrum_fraction(const std::vector<double>& spectrum, std::size_t d_kept);

/// Fixed-seed calibration windows of `length` tokens drawn from `corpus`.
std::vector<TokenSeq> sample_calibration(const TokenSeq& corpus, std::size_t count, std::size_t length,
                                         std::uint64_t seed);

}  // namespace slicelab
