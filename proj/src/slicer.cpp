// SPDX-License-Identifier: Apache-2.0
#include "slicelab/slicer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "slicelab/error.hpp"

namespace slicelab {
namespace {

std::string format_s(double s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", s);
    return buf;
}

void require_folded(const ModelWeights& model, const char* op) {
    if (!norms_are_folded(model)) {
        throw ValidationError(std::string(op) + ": norm weights must be folded first (all ones)");
    }
}

const DenseMatrix& rotation_for(const RotationPlan& plan, std::size_t index) {
    return plan.mode == RotationMode::global ? plan.rotations.front() : plan.rotations[index];
}

std::vector<double> keep_first(const std::vector<double>& v, std::size_t k) {
    return std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
}

}  // namespace

std::string to_string(RotationMode mode) {
    return mode == RotationMode::global ? "global" : "per-block";
}

RotationMode parse_rotation_mode(const std::string& text) {
    if (text == "global") return RotationMode::global;
    if (text == "per-block") return RotationMode::per_block;
    throw ValidationError("unknown rotation mode '" + text + "' (expected global or per-block)");
}

SparsityLevel validate_sparsity(std::size_t d, double s) {
    if (d == 0) throw ValidationError("sparsity: d must be >= 1");
    if (!(s >= 0.0 && s < 1.0)) {
        throw ValidationError("sparsity: s = " + format_s(s) + " outside [0, 1)");
    }
    const double dd = static_cast<double>(d);
    const double kept = (1.0 - s) * dd;
    const double nearest = std::round(kept);
    if (std::abs(kept - nearest) > 1e-9 * dd) {
        const double lo = std::floor(kept);
        const double hi = std::ceil(kept);
        std::string msg = "sparsity: (1 - s) * d = " + format_s(kept) + " is not an integer for d = " +
                          std::to_string(d) + ", s = " + format_s(s) + "; nearest admissible s: " +
                          format_s(1.0 - hi / dd);
        if (lo >= 1.0) msg += " and " + format_s(1.0 - lo / dd);
        throw ValidationError(msg);
    }
    if (nearest < 1.0) {
        throw ValidationError("sparsity: s = " + format_s(s) + " leaves no dimensions of d = " + std::to_string(d));
    }
    return SparsityLevel{s, d, static_cast<std::size_t>(nearest)};
}

bool norms_are_folded(const ModelWeights& model) {
    auto ones = [](const std::vector<double>& v) {
        for (double x : v) {
            if (x != 1.0) return false;
        }
        return true;
    };
    for (const auto& b : model.blocks) {
        if (!ones(b.w_norm1) || !ones(b.w_norm2)) return false;
    }
    return ones(model.w_norm_final);
}

ModelWeights fold_norm_weights(const ModelWeights& model) {
    ModelWeights out = model;
    for (auto& b : out.blocks) {
        b.w_q = scale_rows(b.w_q, b.w_norm1);
        b.w_k = scale_rows(b.w_k, b.w_norm1);
        b.w_v = scale_rows(b.w_v, b.w_norm1);
        b.w_gate = scale_rows(b.w_gate, b.w_norm2);
        b.w_up = scale_rows(b.w_up, b.w_norm2);
        std::fill(b.w_norm1.begin(), b.w_norm1.end(), 1.0);
        std::fill(b.w_norm2.begin(), b.w_norm2.end(), 1.0);
    }
    out.unembedding = scale_rows(out.unembedding, out.w_norm_final);
    std::fill(out.w_norm_final.begin(), out.w_norm_final.end(), 1.0);
    return out;
}

RotationPlan compute_rotation(const ModelWeights& model, const ModelConfig& config,
                              const std::vector<TokenSeq>& calibration, RotationMode mode) {
    require_folded(model, "compute_rotation");
    if (calibration.empty()) throw ValidationError("compute_rotation: calibration set is empty");

    const std::size_t scopes = mode == RotationMode::global ? 1 : config.n_blocks + 1;
    std::vector<DenseMatrix> moments(scopes, DenseMatrix(config.d, config.d));
    for (const auto& seq : calibration) {
        const ActivationTrace trace = capture_trace(model, seq, config);
        for (std::size_t i = 0; i < trace.block_inputs.size(); ++i) {
            auto& target = moments[mode == RotationMode::global ? 0 : i];
            target = add(target, second_moment(trace.block_inputs[i]));
        }
        if (mode == RotationMode::per_block) {
            moments.back() = add(moments.back(), second_moment(trace.final_states));
        }
    }

    RotationPlan plan;
    plan.mode = mode;
    for (const auto& c : moments) {
        SymmetricEigen eig = symmetric_eig(c);
        plan.rotations.push_back(std::move(eig.eigenvectors));
        plan.spectra.push_back(std::move(eig.eigenvalues));
    }
    return plan;
}

RotationPlan make_plan(RotationMode mode, std::vector<DenseMatrix> rotations) {
    RotationPlan plan;
    plan.mode = mode;
    plan.rotations = std::move(rotations);
    return plan;
}

RotationPlan invert_plan(const RotationPlan& plan) {
    RotationPlan inv;
    inv.mode = plan.mode;
    for (const auto& q : plan.rotations) inv.rotations.push_back(transpose(q));
    return inv;
}

ModelWeights apply_rotation(const ModelWeights& model, const ModelConfig& config, const RotationPlan& plan) {
    require_folded(model, "apply_rotation");
    const std::size_t expected = plan.mode == RotationMode::global ? 1 : config.n_blocks + 1;
    if (plan.rotations.size() != expected) {
        throw ValidationError("apply_rotation: " + to_string(plan.mode) + " plan needs " + std::to_string(expected) +
                              " rotations, got " + std::to_string(plan.rotations.size()));
    }
    for (const auto& q : plan.rotations) {
        if (q.rows() != config.d || q.cols() != config.d) {
            throw ValidationError("apply_rotation: rotation " + q.shape() + " does not match d = " +
                                  std::to_string(config.d));
        }
    }

    ModelWeights out = model;
    out.embedding = matmul(model.embedding, rotation_for(plan, 0));
    for (std::size_t i = 0; i < out.blocks.size(); ++i) {
        auto& b = out.blocks[i];
        const DenseMatrix& q = rotation_for(plan, i);
        const DenseMatrix& q_next = rotation_for(plan, i + 1);
        b.w_q = transposed_matmul(q, b.w_q);
        b.w_k = transposed_matmul(q, b.w_k);
        b.w_v = transposed_matmul(q, b.w_v);
        b.w_gate = transposed_matmul(q, b.w_gate);
        b.w_up = transposed_matmul(q, b.w_up);
        b.w_o = matmul(b.w_o, q);
        b.w_down = matmul(b.w_down, q);
        if (b.adapter) {
            b.adapter = matmul(transposed_matmul(q, *b.adapter), q_next);
        } else if (plan.mode == RotationMode::per_block) {
            b.adapter = transposed_matmul(q, q_next);
        }
    }
    out.unembedding = transposed_matmul(rotation_for(plan, config.n_blocks), model.unembedding);
    return out;
}

SlicedModel slice_model(const ModelWeights& model, const ModelConfig& config, const RotationPlan& plan,
                        const SparsityLevel& level) {
    require_folded(model, "slice_model");
    if (level.d != config.d) {
        throw ValidationError("slice_model: sparsity level was validated for d = " + std::to_string(level.d) +
                              ", model has d = " + std::to_string(config.d));
    }
    const SparsityLevel checked = validate_sparsity(config.d, level.s);
    const std::size_t k = checked.d_kept;

    SlicedModel out{model, config, checked, plan.mode};
    out.config.d = k;
    if (k == config.d) return out;

    ModelWeights& w = out.weights;
    w.embedding = slice_cols(w.embedding, 0, k);
    for (auto& b : w.blocks) {
        b.w_norm1 = keep_first(b.w_norm1, k);
        b.w_norm2 = keep_first(b.w_norm2, k);
        b.w_q = slice_rows(b.w_q, 0, k);
        b.w_k = slice_rows(b.w_k, 0, k);
        b.w_v = slice_rows(b.w_v, 0, k);
        b.w_gate = slice_rows(b.w_gate, 0, k);
        b.w_up = slice_rows(b.w_up, 0, k);
        b.w_o = slice_cols(b.w_o, 0, k);
        b.w_down = slice_cols(b.w_down, 0, k);
        if (b.adapter) b.adapter = slice_rows(slice_cols(*b.adapter, 0, k), 0, k);
    }
    w.w_norm_final = keep_first(w.w_norm_final, k);
    w.unembedding = slice_rows(w.unembedding, 0, k);
    check_shapes(w, out.config);
    return out;
}

double retained_spectrum_fraction(const std::vector<double>& spectrum, std::size_t d_kept) {
    if (d_kept > spectrum.size()) throw ValidationError("retained_spectrum_fraction: d_kept exceeds spectrum size");
    const double total = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
    if (!(total > 0.0)) throw ValidationError("retained_spectrum_fraction: spectrum has no positive mass");
    const double kept =
        std::accumulate(spectrum.begin(), spectrum.begin() + static_cast<std::ptrdiff_t>(d_kept), 0.0);
    return kept / total;
}

std::vector<TokenSeq> sample_calibration(const TokenSeq& corpus, std::size_t count, std::size_t length,
                                         std::uint64_t seed) {
    if (count == 0 || length == 0) throw ValidationError("calibration: count and length must be >= 1");
    if (corpus.size() < length) {
        throw ValidationError("calibration: corpus has " + std::to_string(corpus.size()) + " tokens, need " +
                              std::to_string(length));
    }
    SeededRng rng(seed);
    std::vector<TokenSeq> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t start = rng.uniform_index(corpus.size() - length + 1);
        out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                         corpus.begin() + static_cast<std::ptrdiff_t>(start + length));
    }
    return out;
}

}  // namespace slicelab
