#include "bulkspace/optim.hpp"

#include <cmath>
#include <string>

namespace bulkspace {

OptimizerState::OptimizerState(OptimKind kind, std::size_t dim, OptimHyper hp,
                               std::optional<BlockPartition> partition)
    : kind_(kind), dim_(dim), hp_(hp) {
    if (dim == 0) throw ValidationError("OptimizerState: zero dimension");
    if (hp_.momentum < 0.0 || hp_.momentum >= 1.0)
        throw ValidationError("OptimizerState: momentum must be in [0, 1)");
    if (hp_.beta1 < 0.0 || hp_.beta1 >= 1.0 || hp_.beta2 < 0.0 || hp_.beta2 >= 1.0)
        throw ValidationError("OptimizerState: betas must be in [0, 1)");
    if (hp_.eps <= 0.0) throw ValidationError("OptimizerState: eps must be positive");
    if (hp_.weight_decay < 0.0) throw ValidationError("OptimizerState: negative weight decay");

    part_ = partition ? std::move(*partition) : BlockPartition::single(dim);
    if (part_.total() != dim)
        throw DimensionError("OptimizerState: partition does not cover dim");

    switch (kind_) {
        case OptimKind::sgd:
            break;
        case OptimKind::sgdm:
            m_.assign(dim, 0.0);
            break;
        case OptimKind::adamw:
            m_.assign(dim, 0.0);
            v_.assign(dim, 0.0);
            break;
        case OptimKind::adam_blockscalar:
            m_.assign(dim, 0.0);
            v_block_.assign(part_.num_blocks(), 0.0);
            break;
    }
}

Vec OptimizerState::compute_update(const Vec& grad, const Vec& theta, double lr) {
    if (grad.size() != dim_ || theta.size() != dim_)
        throw DimensionError("compute_update: length mismatch");
    if (!std::isfinite(lr) || lr < 0.0)
        throw ValidationError("compute_update: bad learning rate");
    if (!all_finite(grad))
        throw NumericError("compute_update: non-finite gradient at step " + std::to_string(t_));

    Vec out(dim_, 0.0);
    t_ += 1;

    switch (kind_) {
        case OptimKind::sgd: {
            for (std::size_t i = 0; i < dim_; ++i) out[i] = -lr * grad[i];
            break;
        }
        case OptimKind::sgdm: {
            for (std::size_t i = 0; i < dim_; ++i) {
                m_[i] = hp_.momentum * m_[i] + grad[i];
                out[i] = -lr * m_[i];
            }
            break;
        }
        case OptimKind::adamw: {
            const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
            for (std::size_t i = 0; i < dim_; ++i) {
                m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
                v_[i] = hp_.beta2 * v_[i] + (1.0 - hp_.beta2) * grad[i] * grad[i];
                double mhat = m_[i] / bc1;
                double vhat = v_[i] / bc2;
                out[i] = -lr * mhat / (std::sqrt(vhat) + hp_.eps) - lr * hp_.weight_decay * theta[i];
            }
            break;
        }
        case OptimKind::adam_blockscalar: {
            const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
            for (std::size_t b = 0; b < part_.num_blocks(); ++b) {
                const Block& blk = part_.block(b);
                double msq = 0.0;
                for (std::size_t i = blk.begin; i < blk.end; ++i) msq += grad[i] * grad[i];
                msq /= static_cast<double>(blk.size());
                v_block_[b] = hp_.beta2 * v_block_[b] + (1.0 - hp_.beta2) * msq;
                double denom = std::sqrt(v_block_[b] / bc2) + hp_.eps;
                for (std::size_t i = blk.begin; i < blk.end; ++i) {
                    m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
                    out[i] = -lr * (m_[i] / bc1) / denom - lr * hp_.weight_decay * theta[i];
                }
            }
            break;
        }
    }
    return out;
}

LrSchedule::LrSchedule(std::size_t warmup, std::size_t total, double max_v, double min_v)
    : warmup_steps(warmup), total_steps(total), lr_max(max_v), lr_min(min_v) {
    if (total == 0) throw ValidationError("LrSchedule: total_steps must be positive");
    if (warmup > total) throw ValidationError("LrSchedule: warmup exceeds total steps");
    if (!(lr_max > 0.0) || !std::isfinite(lr_max))
        throw ValidationError("LrSchedule: lr_max must be positive");
    if (lr_min < 0.0 || lr_min > lr_max)
        throw ValidationError("LrSchedule: need 0 <= lr_min <= lr_max");
}

double LrSchedule::lr_at(std::size_t t) const {
    if (t > total_steps)
        throw ValidationError("LrSchedule::lr_at: t beyond total_steps");
    if (t < warmup_steps)
        return lr_max * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
    if (t == total_steps) return lr_min;
    const double pi = 3.14159265358979323846;
    double frac = static_cast<double>(t - warmup_steps) /
                  static_cast<double>(total_steps - warmup_steps);
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(pi * frac));
}

double clip_global_norm(Vec& grad, double max_norm) {
    if (!all_finite(grad)) throw NumericError("clip_global_norm: non-finite gradient");
    double n = norm2(grad);
    if (max_norm > 0.0 && n > max_norm) {
        double s = max_norm / n;
        for (double& g : grad) g *= s;
    }
    return n;
}

} // namespace bulkspace
