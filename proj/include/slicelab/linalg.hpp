// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision linear algebra used across the lab: products,
// softmax, elementwise maps, second moments, a Jacobi eigensolver and a
// portable seeded random source.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace slicelab {

/// Row-major real matrix with at least one row and one column.
class DenseMatrix {
public:
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    /// 1 x n matrix holding `v`.
    static DenseMatrix row_vector(std::span<const double> v);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    std::string shape() const;

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Deterministic generator: SplitMix64-seeded xoshiro256**, with uniform and
/// Gaussian draws built from raw bits so streams match on every platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Standard normal (Box-Muller, spare value cached).
    double gaussian() noexcept;
    /// Uniform integer in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n) noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct SymmetricEigen {
    std::vector<double> eigenvalues;  // descending
    DenseMatrix eigenvectors;         // column j pairs with eigenvalues[j]
    int sweeps = 0;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T without materializing the transpose.
DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b);
/// a^T * b without materializing the transpose.
DenseMatrix transposed_matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double c);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);

double sigmoid(double x) noexcept;
double silu(double x) noexcept;
DenseMatrix silu(const DenseMatrix& a);

DenseMatrix row_softmax(const DenseMatrix& a);
/// Row softmax where entry (i, j) with j > i is masked out (probability 0).
DenseMatrix causal_row_softmax(const DenseMatrix& a);

/// X^T X.
DenseMatrix second_moment(const DenseMatrix& x);

/// Cyclic Jacobi. Eigenvector columns are sign-normalized so that the
/// largest-magnitude entry of each column is positive.
SymmetricEigen symmetric_eig(const DenseMatrix& c);

/// Orthonormalized seeded Gaussian matrix.
DenseMatrix random_orthogonal(std::size_t n, SeededRng& rng);
DenseMatrix random_gaussian(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng);

DenseMatrix slice_cols(const DenseMatrix& a, std::size_t first, std::size_t count);
DenseMatrix slice_rows(const DenseMatrix& a, std::size_t first, std::size_t count);
DenseMatrix concat_cols(std::span<const DenseMatrix> parts);
/// diag(w) * a: row r scaled by w[r].
DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> w);

double frobenius_norm(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);
/// max |a - b| / max(|b|_max, tiny); shapes must match.
double max_relative_diff(const DenseMatrix& a, const DenseMatrix& b);
bool all_finite(std::span<const double> values) noexcept;
/// Throws NumericalError naming `context` if any entry is NaN or infinite.
void require_finite(const DenseMatrix& a, const char* context);

}  // namespace slicelab
