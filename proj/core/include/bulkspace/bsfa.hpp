#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "bulkspace/blocks.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/subspace.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

enum class EstimatorKind { lpe, ppe, bppe };

struct BsfaConfig {
    double alpha = 1.0;
    double gamma = 1.0;
    std::size_t k = 0;          // dominant subspace dimension, required
    std::size_t interval = 10;  // refresh period T
    std::size_t history = 0;    // window length l; 0 resolves to k + 10
    EstimatorKind estimator = EstimatorKind::ppe;
    std::set<BlockRole> exclude = {BlockRole::embedding, BlockRole::output};
    bool quantized = false;     // store history and basis as 4-bit groups
    uint32_t group_size = 64;
    std::size_t lpe_iters = 0;  // 0 resolves to k + 20
    bool store_gradients = false; // history from raw gradients, not updates
    uint64_t seed = 0;          // for the Lanczos start vectors
};

// Extra inputs a refresh may need. LPE requires the oracle and current
// theta; history in gradient mode requires the raw gradient each step.
struct BsfaStepContext {
    const HvpOracle* oracle = nullptr;
    const Vec* theta = nullptr;
    const Vec* raw_grad = nullptr;
};

// Wraps a base optimizer: intercepts each update v_t, rescales its dominant
// and bulk components against the most recent subspace estimate, and
// refreshes that estimate every `interval` steps (never at t = 0; the
// initial projector is the identity). The estimate at a refresh uses only
// history up to t-1: the incoming update enters the window after filtering.
class Bsfa {
public:
    Bsfa(BsfaConfig cfg, BlockPartition problem_partition);

    Vec step(const Vec& v, const BsfaStepContext& ctx = {});

    const BsfaConfig& config() const { return cfg_; }
    const Projector& projector() const { return proj_; }
    const UpdateHistory& history() const { return hist_; }
    std::size_t t() const { return t_; }
    std::size_t refresh_count() const { return refreshes_; }
    bool last_refresh_skipped() const { return last_refresh_skipped_; }

    // At-rest bytes of auxiliary state (history window plus stored basis).
    std::size_t aux_bytes() const;

private:
    void refresh(const BsfaStepContext& ctx);
    void store_projector_basis();

    BsfaConfig cfg_;
    BlockPartition problem_part_;
    BlockPartition proj_part_; // single block for lpe/ppe, problem blocks for bppe
    UpdateHistory hist_;
    Projector proj_;
    std::vector<std::vector<QuantBlock>> qbasis_; // [block][column], quantized mode
    std::size_t t_ = 0;
    std::size_t refreshes_ = 0;
    bool last_refresh_skipped_ = false;
};

enum class DichotomyMode { full, dom_only, bulk_only };

// One plain gradient step restricted to a subspace: the full step, its
// projection onto span(U), or the complement. U needs orthonormal columns.
Vec dichotomy_step(const Vec& theta, const Vec& grad, DichotomyMode mode,
                   const DenseMatrix& u, double lr);

} // namespace bulkspace
