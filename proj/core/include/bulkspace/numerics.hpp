#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "bulkspace/errors.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

// Row-major dense matrix. Construction from data validates finiteness;
// elementwise mutation afterwards is the caller's responsibility.
class DenseMatrix {
public:
    DenseMatrix() : rows_(0), cols_(0) {}
    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    DenseMatrix(std::size_t rows, std::size_t cols, Vec data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const Vec& data() const { return data_; }
    Vec& data() { return data_; }

    Vec col(std::size_t j) const;
    void set_col(std::size_t j, const Vec& v);

    Vec matvec(const Vec& x) const;            // A x
    Vec transpose_matvec(const Vec& x) const;  // A^T x

    bool all_finite() const { return bulkspace::all_finite(data_); }

private:
    std::size_t rows_, cols_;
    Vec data_;
};

struct SvdResult {
    DenseMatrix left_vectors;  // rows x k, orthonormal columns
    Vec singular_values;       // length k, nonincreasing, nonnegative
};

// Thin SVD of M keeping the k leading left singular vectors. Works through
// the Gram matrix on the smaller side, so cost is O(rows*cols*min(rows,cols))
// and no rows x rows matrix is ever formed. Columns are sign-canonicalized:
// the largest-magnitude entry of each left vector is positive.
SvdResult thin_svd(const DenseMatrix& m, std::size_t k);

// Symmetric tridiagonal matrix given by its diagonal and subdiagonal.
struct TridiagonalSpectrum {
    Vec alphas;  // diagonal, length n
    Vec betas;   // subdiagonal, length n-1
};

struct EighResult {
    Vec eigenvalues;      // nonincreasing
    DenseMatrix vectors;  // n x n, eigenvector per column, sign-canonicalized
};

EighResult tridiag_eigh(const TridiagonalSpectrum& t);

// Projects v against the orthonormal columns of basis and normalizes what is
// left. Returns nullopt when v is numerically dependent on the basis
// (residual norm < 1e-12 * |v|).
std::optional<Vec> orthonormalize(const DenseMatrix& basis, const Vec& v);

// sin of the largest principal angle between the column spans of U and W.
// Both must be p x k with orthonormal columns. Result is clamped to [0, 1].
double sin_theta_distance(const DenseMatrix& u, const DenseMatrix& w);

} // namespace bulkspace
