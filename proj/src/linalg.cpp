// SPDX-License-Identifier: Apache-2.0
#include "slicelab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "slicelab/error.hpp"

namespace slicelab {
namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
    }
}

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

double off_diagonal_norm(const DenseMatrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (i != j) acc += a(i, j) * a(i, j);
        }
    }
    return std::sqrt(acc);
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
        throw ValidationError("DenseMatrix: empty shape " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
        throw ValidationError("DenseMatrix: empty shape " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (data_.size() != rows * cols) {
        throw ValidationError("DenseMatrix: " + std::to_string(data_.size()) + " values for shape " + shape());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ValidationError("DenseMatrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::row_vector(std::span<const double> v) {
    return DenseMatrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

std::string DenseMatrix::shape() const {
    std::ostringstream os;
    os << '[' << rows_ << " x " << cols_ << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// SeededRng

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t SeededRng::next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double SeededRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::gaussian() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(two_pi * u2);
    has_spare_ = true;
    return radius * std::cos(two_pi * u2);
}

std::size_t SeededRng::uniform_index(std::size_t n) noexcept {
    // Rejection sampling over the largest multiple of n below 2^64.
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x >= threshold) return static_cast<std::size_t>(x % bound);
    }
}

// ---------------------------------------------------------------------------
// Products

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ValidationError("matmul: inner dimensions differ, " + a.shape() + " * " + b.shape());
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    DenseMatrix out(n, m);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols()) {
        throw ValidationError("matmul_transposed: inner dimensions differ, " + a.shape() + " * " + b.shape() + "^T");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    DenseMatrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const auto arow = a.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const auto brow = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out(i, j) = acc;
        }
    }
    require_finite(out, "matmul_transposed");
    return out;
}

DenseMatrix transposed_matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows()) {
        throw ValidationError("transposed_matmul: inner dimensions differ, " + a.shape() + "^T * " + b.shape());
    }
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    DenseMatrix out(n, m);
    double* po = out.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const auto arow = a.row(p);
        const auto brow = b.row(p);
        for (std::size_t i = 0; i < n; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    require_finite(out, "transposed_matmul");
    return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "add");
    DenseMatrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    require_finite(out, "add");
    return out;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "subtract");
    DenseMatrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    require_finite(out, "subtract");
    return out;
}

DenseMatrix scale(const DenseMatrix& a, double c) {
    DenseMatrix out = a;
    for (double& x : out.data()) x *= c;
    require_finite(out, "scale");
    return out;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "hadamard");
    DenseMatrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    require_finite(out, "hadamard");
    return out;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double silu(double x) noexcept { return x * sigmoid(x); }

DenseMatrix silu(const DenseMatrix& a) {
    DenseMatrix out = a;
    for (double& x : out.data()) x = silu(x);
    return out;
}

DenseMatrix row_softmax(const DenseMatrix& a) {
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto in = a.row(i);
        auto o = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& x : o) x /= sum;
    }
    return out;
}

DenseMatrix causal_row_softmax(const DenseMatrix& a) {
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto in = a.row(i);
        auto o = out.row(i);
        const std::size_t visible = std::min(i + 1, a.cols());
        const double mx = *std::max_element(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(visible));
        double sum = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < visible; ++j) o[j] /= sum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Statistics and decompositions

DenseMatrix second_moment(const DenseMatrix& x) {
    const std::size_t n = x.cols();
    DenseMatrix out(n, n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = row[i];
            if (xi == 0.0) continue;
            for (std::size_t j = i; j < n; ++j) out(i, j) += xi * row[j];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
    }
    require_finite(out, "second_moment");
    return out;
}

SymmetricEigen symmetric_eig(const DenseMatrix& c) {
    if (c.rows() != c.cols()) {
        throw ValidationError("symmetric_eig: matrix is not square " + c.shape());
    }
    const std::size_t n = c.rows();
    const double scale_ref = std::max(1.0, frobenius_norm(c));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(c(i, j) - c(j, i)) > 1e-10 * scale_ref) {
                throw ValidationError("symmetric_eig: matrix is not symmetric at (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ")");
            }
        }
    }

    DenseMatrix a = c;
    DenseMatrix v = DenseMatrix::identity(n);
    // Off-diagonal threshold relative to ||C||_F; absolute for ||C||_F <= 1.
    const double tolerance = 1e-12 * scale_ref;
    constexpr int max_sweeps = 100;
    int sweep = 0;
    while (off_diagonal_norm(a) >= tolerance) {
        if (sweep == max_sweeps) {
            std::ostringstream os;
            os << "symmetric_eig: no convergence after " << max_sweeps
               << " sweeps, off-diagonal norm " << off_diagonal_norm(a);
            throw NumericalError(os.str());
        }
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double cs = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * cs;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = cs * akp - sn * akq;
                    a(k, q) = sn * akp + cs * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = cs * apk - sn * aqk;
                    a(q, k) = sn * apk + cs * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = cs * vkp - sn * vkq;
                    v(k, q) = sn * vkp + cs * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymmetricEigen result{std::vector<double>(n), DenseMatrix(n, n), sweep};
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        result.eigenvalues[j] = a(src, src);
        std::size_t pivot = 0;
        for (std::size_t k = 1; k < n; ++k) {
            if (std::abs(v(k, src)) > std::abs(v(pivot, src))) pivot = k;
        }
        const double sign = v(pivot, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) result.eigenvectors(k, j) = sign * v(k, src);
    }
    return result;
}

DenseMatrix random_gaussian(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
    DenseMatrix out(rows, cols);
    for (double& x : out.data()) x = stddev * rng.gaussian();
    return out;
}

DenseMatrix random_orthogonal(std::size_t n, SeededRng& rng) {
    if (n == 0) throw ValidationError("random_orthogonal: n must be >= 1");
    DenseMatrix q = random_gaussian(n, n, 1.0, rng);
    // Modified Gram-Schmidt over columns, two passes.
    for (std::size_t j = 0; j < n; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += q(i, k) * q(i, j);
                for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw NumericalError("random_orthogonal: degenerate Gaussian draw");
        for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
    }
    return q;
}

// ---------------------------------------------------------------------------
// Reshaping helpers

DenseMatrix slice_cols(const DenseMatrix& a, std::size_t first, std::size_t count) {
    if (count == 0 || first + count > a.cols()) {
        throw ValidationError("slice_cols: columns [" + std::to_string(first) + ", " + std::to_string(first + count) +
                              ") out of range for " + a.shape());
    }
    DenseMatrix out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto src = a.row(i).subspan(first, count);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

DenseMatrix slice_rows(const DenseMatrix& a, std::size_t first, std::size_t count) {
    if (count == 0 || first + count > a.rows()) {
        throw ValidationError("slice_rows: rows [" + std::to_string(first) + ", " + std::to_string(first + count) +
                              ") out of range for " + a.shape());
    }
    const auto src = a.data().subspan(first * a.cols(), count * a.cols());
    return DenseMatrix(count, a.cols(), std::vector<double>(src.begin(), src.end()));
}

DenseMatrix concat_cols(std::span<const DenseMatrix> parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no parts");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ValidationError("concat_cols: row count mismatch " + p.shape());
        cols += p.cols();
    }
    DenseMatrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row(i).begin();
        for (const auto& p : parts) dst = std::copy(p.row(i).begin(), p.row(i).end(), dst);
    }
    return out;
}

DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> w) {
    if (w.size() != a.rows()) {
        throw ValidationError("scale_rows: " + std::to_string(w.size()) + " scales for " + a.shape());
    }
    DenseMatrix out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (double& x : out.row(i)) x *= w[i];
    }
    return out;
}

double frobenius_norm(const DenseMatrix& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x * x;
    return std::sqrt(acc);
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double max_relative_diff(const DenseMatrix& a, const DenseMatrix& b) {
    double ref = 0.0;
    for (double x : b.data()) ref = std::max(ref, std::abs(x));
    return max_abs_diff(a, b) / std::max(ref, std::numeric_limits<double>::min());
}

bool all_finite(std::span<const double> values) noexcept {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const DenseMatrix& a, const char* context) {
    if (!all_finite(a.data())) {
        throw NumericalError(std::string(context) + ": non-finite value in " + a.shape() + " result");
    }
}

}  // namespace slicelab
