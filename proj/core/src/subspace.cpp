#include "bulkspace/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bulkspace {

Vec apply_projector(const Projector& p, const Vec& v) {
    if (v.size() != p.partition.total())
        throw DimensionError("apply_projector: length mismatch");
    if (p.bases.size() != p.partition.num_blocks())
        throw DimensionError("apply_projector: basis count mismatch");
    if (!all_finite(v)) throw NumericError("apply_projector: non-finite input");

    if (p.alpha == 1.0 && p.gamma == 1.0) return v; // exact identity

    Vec out = v;
    for (std::size_t b = 0; b < p.partition.num_blocks(); ++b) {
        if (!p.bases[b]) continue; // pass-through block
        const Block& blk = p.partition.block(b);
        const DenseMatrix& u = *p.bases[b];
        if (u.rows() != blk.size())
            throw DimensionError("apply_projector: basis rows != block size");

        const std::size_t k = u.cols();
        Vec coeff(k, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i < blk.size(); ++i) c += u(i, j) * v[blk.begin + i];
            coeff[j] = c;
        }
        for (std::size_t i = 0; i < blk.size(); ++i) {
            double proj = 0.0;
            for (std::size_t j = 0; j < k; ++j) proj += u(i, j) * coeff[j];
            double x = v[blk.begin + i];
            out[blk.begin + i] = p.alpha * proj + p.gamma * (x - proj);
        }
    }
    return out;
}

UpdateHistory::UpdateHistory(BlockPartition part, std::size_t capacity, bool quantized,
                             uint32_t group_size)
    : part_(std::move(part)), cap_(capacity), quantized_(quantized), group_size_(group_size) {
    if (cap_ < 2) throw ValidationError("UpdateHistory: capacity must be >= 2");
    if (part_.total() == 0) throw ValidationError("UpdateHistory: empty partition");
    if (quantized_ && group_size_ < 1)
        throw ValidationError("UpdateHistory: bad group size");
    if (quantized_)
        q_.assign(part_.num_blocks(), {});
    else
        raw_.assign(part_.num_blocks(), {});
}

void UpdateHistory::push(const Vec& update) {
    if (update.size() != part_.total())
        throw DimensionError("UpdateHistory::push: length mismatch");
    if (!all_finite(update)) throw NumericError("UpdateHistory::push: non-finite update");

    const std::size_t slot = count_ % cap_;
    for (std::size_t b = 0; b < part_.num_blocks(); ++b) {
        const Block& blk = part_.block(b);
        Vec piece(update.begin() + blk.begin, update.begin() + blk.end);
        if (quantized_) {
            QuantBlock qb = quantize4(piece, group_size_);
            if (q_[b].size() <= slot) q_[b].resize(slot + 1);
            q_[b][slot] = std::move(qb);
        } else {
            if (raw_[b].size() <= slot) raw_[b].resize(slot + 1);
            raw_[b][slot] = std::move(piece);
        }
    }
    ++count_;
}

DenseMatrix UpdateHistory::block_matrix(std::size_t block) const {
    if (block >= part_.num_blocks())
        throw DimensionError("UpdateHistory::block_matrix: block index out of range");
    const std::size_t f = filled();
    if (f == 0) throw ValidationError("UpdateHistory::block_matrix: empty history");

    const Block& blk = part_.block(block);
    DenseMatrix m(blk.size(), f);
    for (std::size_t j = 0; j < f; ++j) {
        // column j is the j-th oldest stored update
        std::size_t slot = (count_ <= cap_) ? j : (count_ + j) % cap_;
        Vec col = quantized_ ? dequantize4(q_[block][slot]) : raw_[block][slot];
        for (std::size_t i = 0; i < blk.size(); ++i) m(i, j) = col[i];
    }
    return m;
}

std::size_t UpdateHistory::byte_size() const {
    std::size_t bytes = 0;
    if (quantized_) {
        for (const auto& blockslots : q_)
            for (const QuantBlock& qb : blockslots) bytes += qb.byte_size();
    } else {
        for (const auto& blockslots : raw_)
            for (const Vec& v : blockslots) bytes += v.size() * sizeof(double);
    }
    return bytes;
}

LpeResult lpe_estimate(const HvpOracle& oracle, const Vec& theta, std::size_t k,
                       std::size_t iters, uint64_t seed) {
    const std::size_t p = oracle.dim();
    if (theta.size() != p) throw DimensionError("lpe_estimate: theta length mismatch");
    if (k < 1) throw ValidationError("lpe_estimate: k must be >= 1");
    if (iters < k) throw ValidationError("lpe_estimate: iters must be >= k");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec q(p);
    for (double& x : q) x = gauss(rng);
    double n0 = norm2(q);
    if (n0 == 0.0) throw NumericError("lpe_estimate: degenerate start vector");
    for (double& x : q) x /= n0;

    std::vector<Vec> basis; // q_1 .. q_m
    basis.push_back(q);
    Vec alphas, betas;
    bool breakdown = false;
    const std::size_t max_m = std::min(iters, p);

    for (std::size_t j = 0; j < max_m; ++j) {
        Vec w = oracle.hvp_at(theta, basis[j]);
        if (!all_finite(w)) throw NumericError("lpe_estimate: non-finite Hessian product");

        double alpha = dot(basis[j], w);
        axpy(-alpha, basis[j], w);
        if (j > 0) axpy(-betas[j - 1], basis[j - 1], w);
        // full reorthogonalization, two sweeps
        for (int pass = 0; pass < 2; ++pass)
            for (const Vec& qi : basis) axpy(-dot(qi, w), qi, w);

        alphas.push_back(alpha);
        double beta = norm2(w);
        if (beta < 1e-12 || j + 1 == max_m) {
            breakdown = beta < 1e-12;
            break;
        }
        betas.push_back(beta);
        for (double& x : w) x /= beta;
        basis.push_back(std::move(w));
    }
    if (max_m < iters) breakdown = true; // Krylov space is all of R^p

    const std::size_t m = alphas.size();
    TridiagonalSpectrum tri{alphas, betas};
    EighResult eig = tridiag_eigh(tri);

    const std::size_t keep = std::min(k, m);
    LpeResult out;
    out.breakdown = breakdown;
    out.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + keep);
    out.basis = DenseMatrix(p, keep);
    for (std::size_t col = 0; col < keep; ++col) {
        for (std::size_t i = 0; i < p; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += basis[j][i] * eig.vectors(j, col);
            out.basis(i, col) = s;
        }
    }
    // Ritz vectors inherit orthonormality from Q and Z; canonicalize signs
    for (std::size_t col = 0; col < keep; ++col) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < p; ++i) {
            double a = std::fabs(out.basis(i, col));
            if (a > best) { best = a; arg = i; }
        }
        if (out.basis(arg, col) < 0.0)
            for (std::size_t i = 0; i < p; ++i) out.basis(i, col) = -out.basis(i, col);
    }
    return out;
}

std::optional<DenseMatrix> ppe_estimate(const UpdateHistory& history, std::size_t block,
                                        std::size_t k) {
    if (k < 1) throw ValidationError("ppe_estimate: k must be >= 1");
    if (block >= history.partition().num_blocks())
        throw DimensionError("ppe_estimate: block index out of range");

    const std::size_t pb = history.partition().block(block).size();
    const std::size_t f = history.filled();
    if (pb < k || f < k || f < 2) return std::nullopt;

    DenseMatrix m = history.block_matrix(block);

    // normalize columns; drop exact-zero updates
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double n = norm2(m.col(j));
        if (n > 0.0 && std::isfinite(n)) keep.push_back(j);
    }
    if (keep.size() < k || keep.size() < 2) return std::nullopt;

    DenseMatrix v(pb, keep.size());
    for (std::size_t jj = 0; jj < keep.size(); ++jj) {
        Vec col = m.col(keep[jj]);
        double n = norm2(col);
        for (std::size_t i = 0; i < pb; ++i) v(i, jj) = col[i] / n;
    }

    SvdResult svd = thin_svd(v, k);
    return svd.left_vectors;
}

Projector bppe_estimate(const UpdateHistory& history, std::size_t k, double alpha,
                        double gamma, const std::set<BlockRole>& exclude) {
    if (!(alpha >= 0.0) || !(gamma >= 0.0) || !std::isfinite(alpha) || !std::isfinite(gamma))
        throw ValidationError("bppe_estimate: alpha and gamma must be finite and >= 0");

    Projector p = Projector::identity(history.partition(), alpha, gamma);
    for (std::size_t b = 0; b < p.partition.num_blocks(); ++b) {
        if (exclude.count(p.partition.block(b).role)) continue; // stays pass-through
        p.bases[b] = ppe_estimate(history, b, k);
    }
    return p;
}

VarianceSplit projection_variance(const UpdateHistory& history, const DenseMatrix& basis) {
    if (history.partition().num_blocks() != 1)
        throw ValidationError("projection_variance: history must be single-block");
    const std::size_t f = history.filled();
    if (f < 2) throw ValidationError("projection_variance: need at least 2 stored updates");
    if (basis.rows() != history.partition().total())
        throw DimensionError("projection_variance: basis rows != parameter count");

    const std::size_t k = basis.cols();
    DenseMatrix m = history.block_matrix(0);

    DenseMatrix coeffs(f, k); // signed projections, one row per window entry
    Vec resid_norm(f, 0.0);
    for (std::size_t j = 0; j < f; ++j) {
        Vec w = m.col(j);
        Vec c(k, 0.0);
        for (std::size_t d = 0; d < k; ++d) {
            double s = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) s += basis(i, d) * w[i];
            c[d] = s;
        }
        Vec r = w;
        for (std::size_t d = 0; d < k; ++d)
            for (std::size_t i = 0; i < r.size(); ++i) r[i] -= basis(i, d) * c[d];
        for (std::size_t d = 0; d < k; ++d) coeffs(j, d) = c[d];
        resid_norm[j] = norm2(r);
    }

    auto pop_var = [f](auto getter) {
        double mean = 0.0;
        for (std::size_t j = 0; j < f; ++j) mean += getter(j);
        mean /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t j = 0; j < f; ++j) {
            double d = getter(j) - mean;
            var += d * d;
        }
        return var / static_cast<double>(f);
    };

    VarianceSplit out;
    for (std::size_t d = 0; d < k; ++d)
        out.dom_var += pop_var([&](std::size_t j) { return coeffs(j, d); });
    out.bulk_var = pop_var([&](std::size_t j) { return resid_norm[j]; });
    return out;
}

} // namespace bulkspace
