#pragma once

#include <cstddef>
#include <optional>

#include "bulkspace/blocks.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

enum class OptimKind { sgd, sgdm, adamw, adam_blockscalar };

struct OptimHyper {
    double momentum = 0.9;     // sgdm
    double beta1 = 0.9;        // adamw / adam_blockscalar
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled, adamw / adam_blockscalar
};

// First-order optimizer state. compute_update returns the full signed step
// v_t (learning rate folded in), so theta_next = theta + v_t. A non-finite
// gradient throws NumericError and the state must be discarded.
class OptimizerState {
public:
    OptimizerState(OptimKind kind, std::size_t dim, OptimHyper hp = {},
                   std::optional<BlockPartition> partition = std::nullopt);

    OptimKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    std::size_t steps_taken() const { return t_; }

    Vec compute_update(const Vec& grad, const Vec& theta, double lr);

private:
    OptimKind kind_;
    std::size_t dim_;
    OptimHyper hp_;
    BlockPartition part_;
    Vec m_;        // momentum / first moment
    Vec v_;        // second moment (adamw)
    Vec v_block_;  // one second-moment scalar per block (adam_blockscalar)
    std::size_t t_ = 0;
};

// Linear warmup to lr_max over warmup_steps, then cosine decay to lr_min at
// total_steps. The ramp endpoint equals the cosine start, so the schedule is
// continuous at t = warmup_steps.
struct LrSchedule {
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 0;
    double lr_max = 0.0;
    double lr_min = 0.0;

    LrSchedule() = default;
    LrSchedule(std::size_t warmup, std::size_t total, double max_v, double min_v);

    double lr_at(std::size_t t) const;
};

// Scales grad in place when its l2 norm exceeds max_norm; max_norm <= 0
// disables clipping. Returns the pre-clip norm.
double clip_global_norm(Vec& grad, double max_norm);

} // namespace bulkspace
