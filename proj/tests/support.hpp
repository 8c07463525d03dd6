// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests: seeded generators, brute-force oracles
// and scratch directories.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slicelab/linalg.hpp"
#include "slicelab/transformer.hpp"

namespace testing {

using namespace slicelab;

inline DenseMatrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
    SeededRng rng(seed);
    return random_gaussian(rows, cols, stddev, rng);
}

inline DenseMatrix symmetric(std::size_t n, std::uint64_t seed) {
    const DenseMatrix a = gaussian(n, n, seed);
    return add(a, transpose(a));
}

inline TokenSeq random_tokens(std::size_t n, std::size_t vocab, SeededRng& rng) {
    TokenSeq t(n);
    for (auto& tok : t) tok = static_cast<TokenId>(rng.uniform_index(vocab));
    return t;
}

inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

// Laplace expansion along the first row.
inline double cofactor_det(const DenseMatrix& a) {
    const std::size_t n = a.rows();
    if (n == 1) return a(0, 0);
    double det = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        DenseMatrix minor(n - 1, n - 1);
        for (std::size_t r = 1; r < n; ++r)
            for (std::size_t c = 0, k = 0; c < n; ++c)
                if (c != j) minor(r - 1, k++) = a(r, c);
        det += ((j % 2 == 0) ? 1.0 : -1.0) * a(0, j) * cofactor_det(minor);
    }
    return det;
}

/// Model with non-trivial norm weights so folding has something to do.
inline ModelWeights toy_model(const ModelConfig& c, std::uint64_t seed, double init_std = 0.3) {
    ModelWeights w = init_model(c, seed, init_std);
    SeededRng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto jitter = [&](std::vector<double>& v) {
        for (double& x : v) x = 0.5 + rng.uniform();
    };
    for (auto& b : w.blocks) {
        jitter(b.w_norm1);
        jitter(b.w_norm2);
    }
    jitter(w.w_norm_final);
    return w;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("slicelab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace testing
