#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "bulkspace/blocks.hpp"
#include "bulkspace/numerics.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/quant.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

// Block-diagonal two-scale projector: on each block with a basis U the map
// is alpha * U U^T + gamma * (I - U U^T); blocks without a basis pass
// through unchanged. alpha = gamma = 1 short-circuits to the exact identity.
struct Projector {
    BlockPartition partition;
    double alpha = 1.0;
    double gamma = 1.0;
    std::vector<std::optional<DenseMatrix>> bases; // one entry per block

    static Projector identity(BlockPartition part, double alpha = 1.0, double gamma = 1.0) {
        Projector p;
        p.bases.assign(part.num_blocks(), std::nullopt);
        p.partition = std::move(part);
        p.alpha = alpha;
        p.gamma = gamma;
        return p;
    }
};

// Applies the projector blockwise without ever forming a p x p matrix.
Vec apply_projector(const Projector& p, const Vec& v);

// Ring buffer of the last `capacity` update vectors, stored per block.
// With quantized storage each pushed block slice is kept as 4-bit codes and
// dequantized on read.
class UpdateHistory {
public:
    UpdateHistory(BlockPartition part, std::size_t capacity, bool quantized = false,
                  uint32_t group_size = 64);

    void push(const Vec& update);
    std::size_t filled() const { return std::min(count_, cap_); }
    std::size_t capacity() const { return cap_; }
    const BlockPartition& partition() const { return part_; }

    // Stored vectors for one block, oldest to newest, one per column.
    DenseMatrix block_matrix(std::size_t block) const;

    // At-rest bytes of the stored history.
    std::size_t byte_size() const;

private:
    BlockPartition part_;
    std::size_t cap_;
    bool quantized_;
    uint32_t group_size_;
    std::size_t count_ = 0;
    std::vector<std::vector<Vec>> raw_;        // [block][slot]
    std::vector<std::vector<QuantBlock>> q_;   // [block][slot]
};

struct LpeResult {
    Vec eigenvalues;   // Ritz values, nonincreasing, at most k
    DenseMatrix basis; // p x m Ritz vectors, orthonormal columns
    bool breakdown = false;
};

// Lanczos probe of the Hessian at theta: top-k Ritz pairs after `iters`
// matrix-vector products, with full reorthogonalization every iteration.
// Early breakdown (beta < 1e-12) returns the pairs found so far and sets
// the flag; the Krylov space was exhausted, so those pairs are exact.
LpeResult lpe_estimate(const HvpOracle& oracle, const Vec& theta, std::size_t k,
                       std::size_t iters, uint64_t seed);

// Dominant directions of one block's history: normalize each stored column
// to unit norm, then keep the k leading left singular vectors. Returns
// nullopt when the block cannot support the request (fewer than k stored
// columns, fewer than 2 columns, or block dimension below k).
std::optional<DenseMatrix> ppe_estimate(const UpdateHistory& history, std::size_t block,
                                        std::size_t k);

// Per-block PPE assembled into one projector. Blocks whose role is in
// `exclude` and blocks that are not ready pass through.
Projector bppe_estimate(const UpdateHistory& history, std::size_t k, double alpha,
                        double gamma, const std::set<BlockRole>& exclude = {});

struct VarianceSplit {
    double dom_var = 0.0;
    double bulk_var = 0.0;
};

// Population variance of the stored window split against a basis: signed
// per-direction projections summed on the dominant side, residual norms on
// the bulk side. History must be single-block with at least 2 entries.
VarianceSplit projection_variance(const UpdateHistory& history, const DenseMatrix& basis);

struct DiagnosticsSink {
    std::vector<std::pair<std::size_t, double>> sin_theta; // (t, value)
};

inline void track_sin_theta(const DenseMatrix& estimate, const DenseMatrix& reference,
                            std::size_t t, DiagnosticsSink& sink) {
    sink.sin_theta.emplace_back(t, sin_theta_distance(estimate, reference));
}

} // namespace bulkspace
