#include "bulkspace/bsfa.hpp"

#include <cmath>
#include <string>

namespace bulkspace {

namespace {

uint64_t mix_refresh_seed(uint64_t seed, uint64_t refresh_index) {
    uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (refresh_index + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

Bsfa::Bsfa(BsfaConfig cfg, BlockPartition problem_partition)
    : cfg_(cfg), problem_part_(std::move(problem_partition)),
      proj_part_(cfg.estimator == EstimatorKind::bppe
                     ? problem_part_
                     : BlockPartition::single(problem_part_.total())),
      hist_(proj_part_,
            cfg.history ? cfg.history : cfg.k + 10,
            cfg.quantized, cfg.group_size),
      proj_(Projector::identity(proj_part_)) {
    if (cfg_.k < 1) throw ValidationError("Bsfa: k must be >= 1");
    if (cfg_.interval < 1) throw ValidationError("Bsfa: interval must be >= 1");
    if (cfg_.history == 0) cfg_.history = cfg_.k + 10;
    if (cfg_.history < cfg_.k)
        throw ValidationError("Bsfa: history window must be >= k");
    if (cfg_.lpe_iters == 0) cfg_.lpe_iters = cfg_.k + 20;
    if (cfg_.lpe_iters < cfg_.k)
        throw ValidationError("Bsfa: lpe_iters must be >= k");
    if (!(cfg_.alpha >= 0.0) || !(cfg_.gamma >= 0.0) ||
        !std::isfinite(cfg_.alpha) || !std::isfinite(cfg_.gamma))
        throw ValidationError("Bsfa: alpha and gamma must be finite and >= 0");
    if (cfg_.quantized && cfg_.group_size < 1)
        throw ValidationError("Bsfa: bad group size");
}

void Bsfa::store_projector_basis() {
    qbasis_.assign(proj_.bases.size(), {});
    if (!cfg_.quantized) return;
    // Round-trip every basis column through 4-bit storage; the dequantized
    // values are what the projector applies from now on. Renormalize after
    // the trip: the grid only preserves direction, and a shrunken column
    // would leak part of the dominant component through the filter.
    for (std::size_t b = 0; b < proj_.bases.size(); ++b) {
        if (!proj_.bases[b]) continue;
        DenseMatrix& u = *proj_.bases[b];
        for (std::size_t j = 0; j < u.cols(); ++j) {
            QuantBlock qb = quantize4(u.col(j), cfg_.group_size);
            Vec back = dequantize4(qb);
            const double nrm = std::sqrt(dot(back, back));
            if (nrm > 0.0) scale(back, 1.0 / nrm);
            u.set_col(j, back);
            qbasis_[b].push_back(std::move(qb));
        }
    }
}

void Bsfa::refresh(const BsfaStepContext& ctx) {
    last_refresh_skipped_ = true;
    if (cfg_.estimator == EstimatorKind::lpe && (!ctx.oracle || !ctx.theta))
        throw ValidationError("Bsfa: LPE refresh needs oracle and theta");

    Projector fresh = Projector::identity(proj_part_, cfg_.alpha, cfg_.gamma);
    try {
        switch (cfg_.estimator) {
            case EstimatorKind::ppe: {
                auto basis = ppe_estimate(hist_, 0, cfg_.k);
                if (!basis) return; // not enough history yet, keep current projector
                fresh.bases[0] = std::move(*basis);
                break;
            }
            case EstimatorKind::bppe: {
                fresh = bppe_estimate(hist_, cfg_.k, cfg_.alpha, cfg_.gamma, cfg_.exclude);
                bool any = false;
                for (const auto& b : fresh.bases) any = any || b.has_value();
                if (!any) return;
                break;
            }
            case EstimatorKind::lpe: {
                LpeResult r = lpe_estimate(*ctx.oracle, *ctx.theta, cfg_.k, cfg_.lpe_iters,
                                           mix_refresh_seed(cfg_.seed, refreshes_));
                if (r.basis.cols() == 0) return;
                fresh.bases[0] = std::move(r.basis);
                break;
            }
        }
    } catch (const NumericError&) {
        // A failed estimate keeps the run alive on the previous projector.
        // Genuinely poisoned state still halts: the next update is checked
        // in step() before anything else happens.
        return;
    }

    proj_ = std::move(fresh);
    store_projector_basis();
    last_refresh_skipped_ = false;
    ++refreshes_;
}

Vec Bsfa::step(const Vec& v, const BsfaStepContext& ctx) {
    if (v.size() != problem_part_.total())
        throw DimensionError("Bsfa::step: update length mismatch");
    if (!all_finite(v))
        throw NumericError("Bsfa::step: non-finite update at step " + std::to_string(t_));

    if (t_ > 0 && t_ % cfg_.interval == 0) refresh(ctx);

    Vec out = apply_projector(proj_, v);

    if (cfg_.store_gradients) {
        if (!ctx.raw_grad)
            throw ValidationError("Bsfa: gradient-mode history needs the raw gradient");
        hist_.push(*ctx.raw_grad);
    } else {
        hist_.push(v);
    }
    ++t_;
    return out;
}

std::size_t Bsfa::aux_bytes() const {
    std::size_t bytes = hist_.byte_size();
    if (cfg_.quantized) {
        for (const auto& cols : qbasis_)
            for (const QuantBlock& qb : cols) bytes += qb.byte_size();
    } else {
        for (const auto& basis : proj_.bases)
            if (basis) bytes += basis->rows() * basis->cols() * sizeof(double);
    }
    return bytes;
}

Vec dichotomy_step(const Vec& theta, const Vec& grad, DichotomyMode mode,
                   const DenseMatrix& u, double lr) {
    if (theta.size() != grad.size()) throw DimensionError("dichotomy_step: length mismatch");
    if (!all_finite(grad)) throw NumericError("dichotomy_step: non-finite gradient");
    if (!std::isfinite(lr)) throw ValidationError("dichotomy_step: bad learning rate");

    Vec out = theta;
    if (mode == DichotomyMode::full) {
        axpy(-lr, grad, out);
        return out;
    }

    if (u.rows() != theta.size()) throw DimensionError("dichotomy_step: basis rows mismatch");
    const std::size_t k = u.cols();
    Vec coeff(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        double c = 0.0;
        for (std::size_t i = 0; i < grad.size(); ++i) c += u(i, j) * grad[i];
        coeff[j] = c;
    }
    Vec proj(theta.size(), 0.0);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < proj.size(); ++i) proj[i] += u(i, j) * coeff[j];

    if (mode == DichotomyMode::dom_only) {
        axpy(-lr, proj, out);
    } else {
        Vec bulk = grad;
        for (std::size_t i = 0; i < bulk.size(); ++i) bulk[i] -= proj[i];
        axpy(-lr, bulk, out);
    }
    return out;
}

} // namespace bulkspace
