#include "bulkspace/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bulkspace {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, Vec data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw DimensionError("DenseMatrix: data size does not match rows*cols");
    if (!bulkspace::all_finite(data_))
        throw ValidationError("DenseMatrix: non-finite entry");
}

Vec DenseMatrix::col(std::size_t j) const {
    if (j >= cols_) throw DimensionError("DenseMatrix::col: index out of range");
    Vec v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = data_[i * cols_ + j];
    return v;
}

void DenseMatrix::set_col(std::size_t j, const Vec& v) {
    if (j >= cols_) throw DimensionError("DenseMatrix::set_col: index out of range");
    if (v.size() != rows_) throw DimensionError("DenseMatrix::set_col: length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) data_[i * cols_ + j] = v[i];
}

Vec DenseMatrix::matvec(const Vec& x) const {
    if (x.size() != cols_) throw DimensionError("matvec: length mismatch");
    Vec y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        double s = 0.0;
        const double* row = data_.data() + i * cols_;
        for (std::size_t j = 0; j < cols_; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

Vec DenseMatrix::transpose_matvec(const Vec& x) const {
    if (x.size() != rows_) throw DimensionError("transpose_matvec: length mismatch");
    Vec y(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        const double* row = data_.data() + i * cols_;
        for (std::size_t j = 0; j < cols_; ++j) y[j] += row[j] * x[i];
    }
    return y;
}

namespace {

// Flip each column so its largest-magnitude entry is positive. Ties resolve
// to the first occurrence.
void canonicalize_signs(DenseMatrix& m) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double a = std::fabs(m(i, j));
            if (a > best) { best = a; arg = i; }
        }
        if (m(arg, j) < 0.0)
            for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) = -m(i, j);
    }
}

// Two rounds of modified Gram-Schmidt against the already-stored columns
// [0, count) of basis. Returns the residual norm; v is left normalized when
// the norm is meaningful.
double mgs_orthogonalize(const DenseMatrix& basis, std::size_t count, Vec& v) {
    for (int round = 0; round < 2; ++round) {
        for (std::size_t j = 0; j < count; ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) c += basis(i, j) * v[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * basis(i, j);
        }
    }
    double n = norm2(v);
    if (n > 0.0) for (double& x : v) x /= n;
    return n;
}

// Fill column `slot` of u with any unit vector orthogonal to the previous
// columns. Used when a singular direction is numerically degenerate.
void complete_column(DenseMatrix& u, std::size_t slot) {
    for (std::size_t c = 0; c < u.rows(); ++c) {
        Vec e(u.rows(), 0.0);
        e[c] = 1.0;
        double n = mgs_orthogonalize(u, slot, e);
        if (n > 0.5) { // coordinate vector survived projection
            u.set_col(slot, e);
            return;
        }
    }
    throw NumericError("thin_svd: could not complete orthonormal basis");
}

} // namespace

SvdResult thin_svd(const DenseMatrix& m, std::size_t k) {
    const std::size_t rows = m.rows(), cols = m.cols();
    if (rows == 0 || cols == 0) throw DimensionError("thin_svd: empty matrix");
    if (k < 1 || k > std::min(rows, cols))
        throw DimensionError("thin_svd: k out of range");
    if (!m.all_finite()) throw ValidationError("thin_svd: non-finite entry");

    using EMat = Eigen::MatrixXd;
    EMat a(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) a(i, j) = m(i, j);

    SvdResult out;
    out.left_vectors = DenseMatrix(rows, k);
    out.singular_values.assign(k, 0.0);

    if (rows >= cols) {
        // Gram on the small side, then map eigenvectors back through M.
        // Normalizing by |M v| rather than sqrt(lambda) keeps directions
        // whose singular value sits below the Gram matrix floor usable.
        EMat gram = a.transpose() * a;
        Eigen::SelfAdjointEigenSolver<EMat> es(gram);
        if (es.info() != Eigen::Success) throw NumericError("thin_svd: eigensolver failed");

        std::vector<std::pair<double, Eigen::VectorXd>> cand;
        cand.reserve(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            Eigen::VectorXd v = es.eigenvectors().col(cols - 1 - j); // descending
            Eigen::VectorXd mv = a * v;
            cand.emplace_back(mv.norm(), std::move(mv));
        }
        std::stable_sort(cand.begin(), cand.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });

        const double tiny = 1e-300;
        for (std::size_t j = 0; j < k; ++j) {
            out.singular_values[j] = cand[j].first;
            if (cand[j].first > tiny) {
                Vec u(rows);
                for (std::size_t i = 0; i < rows; ++i) u[i] = cand[j].second(i);
                double n = mgs_orthogonalize(out.left_vectors, j, u);
                if (n > 0.0 && std::isfinite(n))
                    out.left_vectors.set_col(j, u);
                else
                    complete_column(out.left_vectors, j);
            } else {
                complete_column(out.left_vectors, j);
            }
        }
    } else {
        // Wide matrix: eigenvectors of M M^T are the left vectors directly.
        EMat gram = a * a.transpose();
        Eigen::SelfAdjointEigenSolver<EMat> es(gram);
        if (es.info() != Eigen::Success) throw NumericError("thin_svd: eigensolver failed");
        for (std::size_t j = 0; j < k; ++j) {
            double lam = es.eigenvalues()(rows - 1 - j);
            out.singular_values[j] = std::sqrt(std::max(lam, 0.0));
            Vec u(rows);
            for (std::size_t i = 0; i < rows; ++i) u[i] = es.eigenvectors()(i, rows - 1 - j);
            double n = mgs_orthogonalize(out.left_vectors, j, u);
            if (n > 0.0 && std::isfinite(n))
                out.left_vectors.set_col(j, u);
            else
                complete_column(out.left_vectors, j);
        }
    }

    canonicalize_signs(out.left_vectors);
    return out;
}

EighResult tridiag_eigh(const TridiagonalSpectrum& t) {
    const std::size_t n = t.alphas.size();
    if (n == 0) throw DimensionError("tridiag_eigh: empty diagonal");
    if (t.betas.size() + 1 != n)
        throw DimensionError("tridiag_eigh: subdiagonal must have length n-1");
    if (!all_finite(t.alphas) || !all_finite(t.betas))
        throw ValidationError("tridiag_eigh: non-finite entry");

    Eigen::VectorXd d(n), e(n > 1 ? n - 1 : 1);
    for (std::size_t i = 0; i < n; ++i) d(i) = t.alphas[i];
    for (std::size_t i = 0; i + 1 < n; ++i) e(i) = t.betas[i];
    if (n == 1) e(0) = 0.0;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e.head(n > 1 ? n - 1 : 0));
    if (es.info() != Eigen::Success) throw NumericError("tridiag_eigh: did not converge");

    EighResult out;
    out.eigenvalues.assign(n, 0.0);
    out.vectors = DenseMatrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = es.eigenvalues()(n - 1 - j);
        for (std::size_t i = 0; i < n; ++i)
            out.vectors(i, j) = es.eigenvectors()(i, n - 1 - j);
    }
    canonicalize_signs(out.vectors);
    return out;
}

std::optional<Vec> orthonormalize(const DenseMatrix& basis, const Vec& v) {
    if (basis.cols() > 0 && basis.rows() != v.size())
        throw DimensionError("orthonormalize: length mismatch");
    if (!all_finite(v)) throw ValidationError("orthonormalize: non-finite entry");

    double vnorm = norm2(v);
    if (vnorm == 0.0) return std::nullopt;

    Vec w = v;
    double resid = mgs_orthogonalize(basis, basis.cols(), w);
    if (resid < 1e-12 * vnorm) return std::nullopt;
    return w;
}

double sin_theta_distance(const DenseMatrix& u, const DenseMatrix& w) {
    if (u.rows() != w.rows() || u.cols() != w.cols())
        throw DimensionError("sin_theta_distance: shape mismatch");
    if (u.cols() == 0) throw DimensionError("sin_theta_distance: empty basis");

    // Sine form: the largest singular value of (I - U U^T) W. The cosine
    // form sqrt(1 - smin(U^T W)^2) saturates to zero once the angle drops
    // below sqrt(machine eps); the residual route keeps full precision for
    // small angles, which the window-decay diagnostics rely on.
    const std::size_t p = u.rows();
    const std::size_t k = u.cols();
    DenseMatrix resid(p, k);
    for (std::size_t j = 0; j < k; ++j) {
        Vec wj = w.col(j);
        const Vec coeff = u.transpose_matvec(wj);
        const Vec back = u.matvec(coeff);
        for (std::size_t r = 0; r < p; ++r) resid(r, j) = wj[r] - back[r];
    }
    Eigen::MatrixXd gram(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < p; ++r) s += resid(r, i) * resid(r, j);
            gram(i, j) = s;
            gram(j, i) = s;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    double s2 = es.eigenvalues()(k - 1);
    if (s2 < 0.0) s2 = 0.0;
    if (s2 > 1.0) s2 = 1.0;
    return std::sqrt(s2);
}

} // namespace bulkspace
