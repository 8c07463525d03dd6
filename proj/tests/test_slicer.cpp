// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slicelab/error.hpp"
#include "slicelab/slicer.hpp"
#include "support.hpp"

using namespace slicelab;
using testing::gaussian;

namespace {

std::vector<TokenSeq> random_sequences(std::size_t count, std::size_t len, std::size_t vocab, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<TokenSeq> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(testing::random_tokens(len, vocab, rng));
    return out;
}

double max_logit_relative_diff(const ModelWeights& a, const ModelConfig& ca, const ModelWeights& b,
                               const ModelConfig& cb, const std::vector<TokenSeq>& seqs) {
    double worst = 0.0;
    for (const auto& s : seqs) {
        worst = std::max(worst, max_relative_diff(model_forward(b, s, cb), model_forward(a, s, ca)));
    }
    return worst;
}

std::vector<DenseMatrix> random_rotations(std::size_t count, std::size_t d, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<DenseMatrix> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_orthogonal(d, rng));
    return out;
}

// Model whose residual stream never leaves the span of the first `rank`
// coordinates of a random basis R: the embedding and every block's output
// projections write only into that span.
ModelWeights low_rank_model(const ModelConfig& c, std::size_t rank, std::uint64_t seed) {
    ModelWeights m = testing::toy_model(c, seed, 0.3);
    SeededRng rng(seed + 1);
    const DenseMatrix r = random_orthogonal(c.d, rng);
    DenseMatrix project(c.d, c.d);
    for (std::size_t i = 0; i < rank; ++i) project(i, i) = 1.0;
    const DenseMatrix to_span = matmul(project, r);  // rows of R beyond `rank` removed
    m.embedding = matmul(m.embedding, to_span);
    for (auto& b : m.blocks) {
        b.w_o = matmul(b.w_o, to_span);
        b.w_down = matmul(b.w_down, to_span);
    }
    return m;
}

}  // namespace

TEST_CASE("validate_sparsity") {
    CHECK(validate_sparsity(16, 0.25).d_kept == 12);
    CHECK(validate_sparsity(4096, 0.5).d_kept == 2048);
    CHECK(validate_sparsity(16, 0.0).d_kept == 16);
    try {
        validate_sparsity(10, 0.33);
        FAIL("expected a rejection");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("0.3") != std::string::npos);
        CHECK(msg.find("0.4") != std::string::npos);
    }
    CHECK_THROWS_AS(validate_sparsity(16, 1.0), ValidationError);
    CHECK_THROWS_AS(validate_sparsity(16, -0.125), ValidationError);
    CHECK_THROWS_AS(validate_sparsity(16, std::nan("")), ValidationError);
}

TEST_CASE("fold_norm_weights") {
    const auto c = ModelConfig::make(8, 16, 2, 4, 1, 2, 11, 6);
    SUBCASE("all-ones norms are already folded") {
        const ModelWeights m = init_model(c, 1);
        CHECK(norms_are_folded(m));
        CHECK(fold_norm_weights(m) == m);
    }
    SUBCASE("forward pass is preserved") {
        const ModelWeights m = testing::toy_model(c, 2);
        CHECK_FALSE(norms_are_folded(m));
        const ModelWeights f = fold_norm_weights(m);
        CHECK(norms_are_folded(f));
        double worst = 0.0;
        for (const auto& s : random_sequences(8, 6, 11, 3)) worst = std::max(worst, max_abs_diff(model_forward(f, s, c), model_forward(m, s, c)));
        CHECK(worst < 1e-10);
    }
    SUBCASE("idempotent") {
        const ModelWeights f = fold_norm_weights(testing::toy_model(c, 4));
        CHECK(fold_norm_weights(f) == f);
    }
}

TEST_CASE("compute_rotation") {
    SUBCASE("axis-aligned activations with descending variance give the identity") {
        const auto c = ModelConfig::make(4, 8, 2, 2, 1, 1, 4, 8);
        ModelWeights m = init_model(c, 1);
        m.blocks[0].w_o = DenseMatrix(4, 4);
        m.blocks[0].w_down = DenseMatrix(8, 4);
        m.embedding = DenseMatrix(4, 4);
        for (std::size_t i = 0; i < 4; ++i) m.embedding(i, i) = 4.0 - static_cast<double>(i);
        const std::vector<TokenSeq> cal{{0, 1, 2, 3, 0, 1, 2, 3}};
        for (RotationMode mode : {RotationMode::global, RotationMode::per_block}) {
            const RotationPlan plan = compute_rotation(m, c, cal, mode);
            for (const auto& q : plan.rotations) {
                for (std::size_t i = 0; i < 4; ++i)
                    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(q(i, j)) == (i == j ? 1.0 : 0.0));
            }
        }
    }
    SUBCASE("isotropic activations give a flat spectrum") {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            const auto c = ModelConfig::make(8, 8, 2, 4, 1, 1, 10000, 100);
            ModelWeights m = init_model(c, seed);
            m.blocks[0].w_o = DenseMatrix(8, 8);
            m.blocks[0].w_down = DenseMatrix(8, 8);
            m.embedding = gaussian(10000, 8, seed);
            std::vector<TokenSeq> cal;
            for (TokenId start = 0; start < 10000; start += 100) {
                TokenSeq s(100);
                std::iota(s.begin(), s.end(), start);
                cal.push_back(s);
            }
            const RotationPlan plan = compute_rotation(m, c, cal, RotationMode::global);
            const auto& ev = plan.spectra.front();
            CHECK(ev.front() / ev.back() < 1.5);
        }
    }
    SUBCASE("rotations are orthogonal and spectra descending") {
        const auto c = ModelConfig::make(8, 16, 2, 4, 2, 2, 11, 6);
        const ModelWeights m = fold_norm_weights(testing::toy_model(c, 5));
        for (RotationMode mode : {RotationMode::global, RotationMode::per_block}) {
            const RotationPlan plan = compute_rotation(m, c, random_sequences(4, 6, 11, 6), mode);
            CHECK(plan.rotations.size() == (mode == RotationMode::global ? 1u : 3u));
            for (const auto& q : plan.rotations) CHECK(max_abs_diff(matmul_transposed(q, q), DenseMatrix::identity(8)) <= 1e-10);
            for (const auto& s : plan.spectra) CHECK(std::is_sorted(s.rbegin(), s.rend()));
        }
    }
    SUBCASE("rejections") {
        const auto c = ModelConfig::make(8, 16, 2, 4, 2, 1, 11, 6);
        CHECK_THROWS_AS(compute_rotation(init_model(c, 1), c, {}, RotationMode::global), ValidationError);
        CHECK_THROWS_AS(compute_rotation(testing::toy_model(c, 1), c, random_sequences(1, 4, 11, 1), RotationMode::global),
                        ValidationError);
    }
}

TEST_CASE("apply_rotation") {
    const auto c = ModelConfig::make(16, 24, 4, 4, 2, 2, 13, 5);
    const ModelWeights m = fold_norm_weights(testing::toy_model(c, 7));
    const auto seqs = random_sequences(6, 5, 13, 8);

    SUBCASE("identity rotation changes nothing") {
        CHECK(apply_rotation(m, c, make_plan(RotationMode::global, {DenseMatrix::identity(16)})) == m);
    }
    SUBCASE("random orthogonal rotation preserves logits") {
        const ModelWeights g = apply_rotation(m, c, make_plan(RotationMode::global, random_rotations(1, 16, 9)));
        CHECK(max_logit_relative_diff(m, c, g, c, seqs) < 1e-8);
        const ModelWeights p = apply_rotation(m, c, make_plan(RotationMode::per_block, random_rotations(3, 16, 10)));
        CHECK(max_logit_relative_diff(m, c, p, c, seqs) < 1e-8);
    }
    SUBCASE("rotating back restores the weights") {
        const RotationPlan plan = make_plan(RotationMode::global, random_rotations(1, 16, 11));
        const ModelWeights back = apply_rotation(apply_rotation(m, c, plan), c, invert_plan(plan));
        const auto a = tensor_views(m), b = tensor_views(back);
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a[i].values.size(); ++j) worst = std::max(worst, std::abs(a[i].values[j] - b[i].values[j]));
        CHECK(worst <= 1e-10);
    }
    SUBCASE("shape mismatches are rejected") {
        CHECK_THROWS_AS(apply_rotation(m, c, make_plan(RotationMode::global, {DenseMatrix::identity(8)})), ValidationError);
        CHECK_THROWS_AS(apply_rotation(m, c, make_plan(RotationMode::per_block, random_rotations(2, 16, 1))), ValidationError);
        CHECK_THROWS_AS(apply_rotation(testing::toy_model(c, 1), c, make_plan(RotationMode::global, {DenseMatrix::identity(16)})),
                        ValidationError);
    }
}

TEST_CASE("slice_model") {
    const auto c = ModelConfig::make(16, 24, 4, 4, 2, 2, 13, 8);
    const ModelWeights m = fold_norm_weights(testing::toy_model(c, 12));
    const RotationPlan plan = compute_rotation(m, c, random_sequences(4, 8, 13, 13), RotationMode::global);

    SUBCASE("s = 0 is the identity") {
        const SlicedModel s = slice_model(m, c, plan, validate_sparsity(16, 0.0));
        CHECK(s.weights == m);
        CHECK(s.config == c);
    }
    SUBCASE("d=16, s=0.25 trims exactly four rows or columns") {
        const ModelWeights r = apply_rotation(m, c, plan);
        const SlicedModel s = slice_model(r, c, plan, validate_sparsity(16, 0.25));
        CHECK(s.config.d == 12);
        CHECK(s.config.norm_dim == 16);
        CHECK(s.weights.embedding.cols() == 12);
        CHECK(s.weights.unembedding.rows() == 12);
        for (const auto& b : s.weights.blocks) {
            CHECK(b.w_q.rows() == 12);
            CHECK(b.w_q.cols() == 16);
            CHECK(b.w_k.rows() == 12);
            CHECK(b.w_v.rows() == 12);
            CHECK(b.w_o.cols() == 12);
            CHECK(b.w_o.rows() == 16);
            CHECK(b.w_gate.rows() == 12);
            CHECK(b.w_up.rows() == 12);
            CHECK(b.w_down.cols() == 12);
            CHECK(b.w_gate.cols() == 24);
        }
    }
    SUBCASE("activations confined to a subspace survive slicing") {
        for (RotationMode mode : {RotationMode::global, RotationMode::per_block}) {
            const ModelWeights low = fold_norm_weights(low_rank_model(c, 8, 21));
            const auto cal = random_sequences(6, 8, 13, 22);
            const RotationPlan p = compute_rotation(low, c, cal, mode);
            const ModelWeights r = apply_rotation(low, c, p);
            const SlicedModel s = slice_model(r, c, p, validate_sparsity(16, 0.5));
            double worst = 0.0;
            for (const auto& seq : cal) worst = std::max(worst, max_abs_diff(model_forward(s.weights, seq, s.config), model_forward(low, seq, c)));
            CHECK(worst < 1e-6);
        }
    }
    SUBCASE("mismatched level is rejected") {
        CHECK_THROWS_AS(slice_model(m, c, plan, validate_sparsity(8, 0.5)), ValidationError);
        CHECK_THROWS_AS(slice_model(m, c, plan, SparsityLevel{0.3, 16, 11}), ValidationError);
    }
}

TEST_CASE("fold, rotate and slice at s = 0 is invariant for any orthogonal plan") {
    const auto c = ModelConfig::make(32, 48, 4, 8, 2, 2, 17, 12);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const ModelWeights m = testing::toy_model(c, 30 + seed);
        const ModelWeights f = fold_norm_weights(m);
        const auto seqs = random_sequences(4, 12, 17, 40 + seed);
        for (RotationMode mode : {RotationMode::global, RotationMode::per_block}) {
            const RotationPlan plan = make_plan(mode, random_rotations(mode == RotationMode::global ? 1 : 3, 32, seed));
            const SlicedModel s = slice_model(apply_rotation(f, c, plan), c, plan, validate_sparsity(32, 0.0));
            CHECK(max_logit_relative_diff(m, c, s.weights, s.config, seqs) < 1e-8);
        }
    }
}

TEST_CASE("retained spectrum mass grows with the kept width") {
    const std::vector<double> spectrum{5, 3, 2, 1, 0.5, 0.1};
    double prev = 0.0;
    for (std::size_t k = 0; k <= spectrum.size(); ++k) {
        const double f = retained_spectrum_fraction(spectrum, k);
        CHECK(f >= prev);
        prev = f;
    }
    CHECK(prev == 1.0);
    CHECK_THROWS_AS(retained_spectrum_fraction(spectrum, 7), ValidationError);
}

TEST_CASE("slicing commutes with relabeling the vocabulary") {
    const auto c = ModelConfig::make(8, 12, 2, 4, 1, 1, 9, 6);
    const ModelWeights m = fold_norm_weights(testing::toy_model(c, 50));
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0u);
    std::reverse(perm.begin(), perm.end());
    auto relabel = [&](const ModelWeights& w) {
        ModelWeights p = w;
        for (std::size_t v = 0; v < 9; ++v) {
            for (std::size_t j = 0; j < w.embedding.cols(); ++j) {
                p.embedding(perm[v], j) = w.embedding(v, j);
                p.unembedding(j, perm[v]) = w.unembedding(j, v);
            }
        }
        return p;
    };
    const RotationPlan plan = make_plan(RotationMode::global, random_rotations(1, 8, 51));
    const SparsityLevel level = validate_sparsity(8, 0.25);
    const SlicedModel a = slice_model(apply_rotation(relabel(m), c, plan), c, plan, level);
    const SlicedModel b = slice_model(apply_rotation(m, c, plan), c, plan, level);
    CHECK(a.weights == relabel(b.weights));
}

TEST_CASE("sample_calibration") {
    TokenSeq corpus(200);
    std::iota(corpus.begin(), corpus.end(), 0u);
    const auto a = sample_calibration(corpus, 8, 64, 3);
    CHECK(a == sample_calibration(corpus, 8, 64, 3));
    CHECK(a.size() == 8);
    for (const auto& s : a) {
        CHECK(s.size() == 64);
        for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] == s[i - 1] + 1);
    }
    CHECK_THROWS_AS(sample_calibration(corpus, 1, 201, 3), ValidationError);
    CHECK_THROWS_AS(sample_calibration(corpus, 0, 10, 3), ValidationError);
}

TEST_CASE("rotation mode names") {
    CHECK(parse_rotation_mode("global") == RotationMode::global);
    CHECK(parse_rotation_mode("per-block") == RotationMode::per_block);
    CHECK(to_string(RotationMode::per_block) == "per-block");
    CHECK_THROWS_AS(parse_rotation_mode("layerwise"), ValidationError);
}
