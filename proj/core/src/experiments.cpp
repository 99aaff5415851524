#include "bulkspace/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <string>

#include "bulkspace/bsfa.hpp"
#include "bulkspace/metrics.hpp"
#include "bulkspace/optim.hpp"
#include "bulkspace/plots.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/subspace.hpp"

namespace bulkspace {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t mix(uint64_t seed, uint64_t salt) {
    return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
}

class WallTimer {
public:
    WallTimer() : t0_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

// Least-squares slope of y against x.
double ls_slope(const std::vector<std::pair<double, double>>& pts) {
    if (pts.size() < 2) throw ValidationError("slope fit needs at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (const auto& [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw ValidationError("slope fit: degenerate abscissae");
    return (n * sxy - sx * sy) / denom;
}

std::vector<double> logspace_desc(double lo, double hi, size_t n) {
    if (lo <= 0.0 || hi <= 0.0 || hi < lo) {
        throw ConfigError("spectrum: need 0 < lambda_min <= lambda_max");
    }
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = hi;
        return out;
    }
    const double lh = std::log(hi);
    const double ll = std::log(lo);
    for (size_t i = 0; i < n; ++i) {
        out[i] = std::exp(lh + (ll - lh) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return out;
}

std::vector<double> build_spectrum(const Config& cfg) {
    if (cfg.has("problem.eigenvalues")) {
        std::vector<double> ev = cfg.get_double_list("problem.eigenvalues");
        for (double v : ev) {
            if (!std::isfinite(v) || v < 0.0) {
                throw ConfigError("problem.eigenvalues: entries must be finite and nonnegative");
            }
        }
        for (size_t i = 1; i < ev.size(); ++i) {
            if (ev[i] > ev[i - 1]) {
                throw ConfigError("problem.eigenvalues: must be nonincreasing");
            }
        }
        return ev;
    }
    const size_t dim = static_cast<size_t>(cfg.get_int("problem.dim"));
    if (dim == 0) throw ConfigError("problem.dim: must be positive");
    const std::string kind = cfg.get_str("problem.spectrum", "logspace");
    const double lmax = cfg.get_double("problem.lambda_max", 10.0);
    const double lmin = cfg.get_double("problem.lambda_min", 1e-3);
    if (kind == "logspace") {
        return logspace_desc(lmin, lmax, dim);
    }
    if (kind == "outlier") {
        const size_t m = cfg.get_uint("problem.outliers", 10);
        if (m == 0 || m >= dim) {
            throw ConfigError("problem.outliers: need 0 < outliers < dim");
        }
        const double omin = cfg.get_double("problem.outlier_min", lmax / 2.0);
        const double bmax = cfg.get_double("problem.bulk_max", 1.0);
        if (omin <= bmax) {
            throw ConfigError("spectrum outlier: need outlier_min > bulk_max for a gap");
        }
        std::vector<double> ev = logspace_desc(omin, lmax, m);
        const std::vector<double> bulk = logspace_desc(lmin, bmax, dim - m);
        ev.insert(ev.end(), bulk.begin(), bulk.end());
        return ev;
    }
    throw ConfigError("problem.spectrum: unknown kind '" + kind + "'");
}

// Everything a recipe needs about the objective under optimization.
struct BuiltProblem {
    std::unique_ptr<QuadraticProblem> quad;
    std::unique_ptr<MlpProblem> mlp;
    std::unique_ptr<HvpOracle> oracle;
    std::optional<BatchSampler> sampler;
    BlockPartition partition;
    Vec theta0;

    size_t dim() const { return theta0.size(); }
    bool is_mlp() const { return mlp != nullptr; }

    std::vector<size_t> batch_at(size_t step) const {
        return sampler ? sampler->batch_at(step) : std::vector<size_t>{};
    }

    double loss_grad(const Vec& theta, size_t step, Vec& grad) const {
        if (quad) {
            grad = quad->grad(theta);
            return quad->loss(theta);
        }
        return mlp->loss_grad(theta, grad, batch_at(step));
    }

    double full_loss(const Vec& theta) const {
        return quad ? quad->loss(theta) : mlp->loss(theta);
    }

    std::optional<double> full_accuracy(const Vec& theta) const {
        if (mlp) return mlp->accuracy(theta);
        return std::nullopt;
    }
};

std::vector<size_t> parse_widths(const Config& cfg) {
    std::vector<size_t> widths;
    for (const std::string& tok : cfg.get_str_list("problem.widths")) {
        size_t used = 0;
        long v = 0;
        try {
            v = std::stol(tok, &used);
        } catch (const std::exception&) {
            throw ConfigError("problem.widths: not an integer: '" + tok + "'");
        }
        if (used != tok.size() || v <= 0) {
            throw ConfigError("problem.widths: bad layer width '" + tok + "'");
        }
        widths.push_back(static_cast<size_t>(v));
    }
    return widths;
}

BuiltProblem build_problem(const Config& cfg) {
    BuiltProblem bp;
    const uint64_t seed = cfg.get_uint("seed", 0);
    const std::string kind = cfg.get_str("problem.kind");
    if (kind == "quadratic") {
        std::vector<double> lambdas = build_spectrum(cfg);
        const uint64_t rot = cfg.get_uint("problem.rotation_seed", 0);
        if (rot == 0) {
            bp.quad = std::make_unique<QuadraticProblem>(std::move(lambdas));
        } else {
            bp.quad = std::make_unique<QuadraticProblem>(
                QuadraticProblem::with_random_rotation(std::move(lambdas), rot));
        }
        bp.oracle = std::make_unique<QuadraticOracle>(*bp.quad);
        bp.partition = BlockPartition::single(bp.quad->dim());
        const uint64_t iseed = cfg.get_uint("problem.init_seed", mix(seed, 101));
        const double iscale = cfg.get_double("problem.init_scale", 1.0);
        std::mt19937_64 rng(iseed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        bp.theta0.resize(bp.quad->dim());
        for (double& x : bp.theta0) x = iscale * gauss(rng);
    } else if (kind == "mlp") {
        const std::string source = cfg.get_str("problem.dataset", "two_moons");
        Dataset data;
        if (source == "two_moons") {
            const size_t n = cfg.get_uint("problem.n", 200);
            const double noise = cfg.get_double("problem.noise", 0.1);
            data = make_two_moons(n, noise, cfg.get_uint("problem.data_seed", mix(seed, 202)));
        } else {
            data = load_csv_dataset(source);
        }
        std::vector<size_t> widths =
            cfg.has("problem.widths") ? parse_widths(cfg) : std::vector<size_t>{2, 32, 32, 2};
        const std::string act_s = cfg.get_str("problem.activation", "tanh");
        Activation act;
        if (act_s == "tanh") {
            act = Activation::tanh;
        } else if (act_s == "relu") {
            act = Activation::relu;
        } else {
            throw ConfigError("problem.activation: unknown '" + act_s + "'");
        }
        const std::string loss_s = cfg.get_str("problem.loss", "cross_entropy");
        LossKind lk;
        if (loss_s == "cross_entropy") {
            lk = LossKind::cross_entropy;
        } else if (loss_s == "squared") {
            lk = LossKind::squared;
        } else {
            throw ConfigError("problem.loss: unknown '" + loss_s + "'");
        }
        const bool bias = cfg.get_bool("problem.bias", true);
        bp.mlp = std::make_unique<MlpProblem>(std::move(widths), act, lk, std::move(data), bias);
        bp.oracle = std::make_unique<MlpOracle>(*bp.mlp, cfg.get_uint("seed", 0) + 404);
        bp.partition = bp.mlp->partition();
        bp.theta0 = bp.mlp->init_params(cfg.get_uint("problem.init_seed", mix(seed, 303)),
                                        cfg.get_double("problem.init_scale", 1.0));
        const size_t batch = cfg.get_uint("problem.batch", 0);
        bp.sampler.emplace(bp.mlp->data().size(), batch, mix(seed, 505));
    } else {
        throw ConfigError("problem.kind: unknown '" + kind + "'");
    }
    if (bp.dim() == 0) throw ConfigError("problem has no parameters");
    return bp;
}

OptimKind parse_optim_kind(const std::string& s) {
    if (s == "sgd") return OptimKind::sgd;
    if (s == "sgdm") return OptimKind::sgdm;
    if (s == "adamw") return OptimKind::adamw;
    if (s == "adam_blockscalar") return OptimKind::adam_blockscalar;
    throw ConfigError("optim.kind: unknown '" + s + "'");
}

OptimizerState make_optimizer(const Config& cfg, const BuiltProblem& bp) {
    OptimHyper hp;
    hp.momentum = cfg.get_double("optim.momentum", 0.9);
    hp.beta1 = cfg.get_double("optim.beta1", 0.9);
    hp.beta2 = cfg.get_double("optim.beta2", 0.95);
    hp.eps = cfg.get_double("optim.eps", 1e-8);
    hp.weight_decay = cfg.get_double("optim.weight_decay", 0.0);
    const OptimKind kind = parse_optim_kind(cfg.get_str("optim.kind", "sgd"));
    return OptimizerState(kind, bp.dim(), hp, bp.partition);
}

EstimatorKind parse_estimator(const std::string& s) {
    if (s == "lpe") return EstimatorKind::lpe;
    if (s == "ppe") return EstimatorKind::ppe;
    if (s == "bppe") return EstimatorKind::bppe;
    throw ConfigError("bsfa.estimator: unknown '" + s + "'");
}

BsfaConfig make_bsfa_config(const Config& cfg) {
    BsfaConfig bc;
    bc.alpha = cfg.get_double("bsfa.alpha", 1.0);
    bc.gamma = cfg.get_double("bsfa.gamma", 1.0);
    bc.k = cfg.get_uint("bsfa.k", 0);
    if (bc.k == 0) throw ConfigError("bsfa.k: required and must be positive");
    bc.interval = cfg.get_uint("bsfa.interval", 10);
    bc.history = cfg.get_uint("bsfa.history", 0);
    bc.estimator = parse_estimator(cfg.get_str("bsfa.estimator", "ppe"));
    bc.quantized = cfg.get_bool("bsfa.quantized", false);
    bc.group_size = static_cast<uint32_t>(cfg.get_uint("bsfa.group_size", 64));
    bc.lpe_iters = cfg.get_uint("bsfa.lpe_iters", 0);
    bc.seed = cfg.get_uint("seed", 0);
    if (cfg.has("bsfa.store")) {
        const std::string s = cfg.get_str("bsfa.store");
        if (s == "updates") {
            bc.store_gradients = false;
        } else if (s == "gradients") {
            bc.store_gradients = true;
        } else {
            throw ConfigError("bsfa.store: expected 'updates' or 'gradients'");
        }
    }
    if (cfg.has("bsfa.exclude")) {
        bc.exclude.clear();
        for (const std::string& name : cfg.get_str_list("bsfa.exclude")) {
            if (name == "none") continue;
            bc.exclude.insert(role_from_name(name));
        }
    }
    return bc;
}

DenseMatrix leading_cols(const DenseMatrix& m, size_t k) {
    if (k >= m.cols()) return m;
    DenseMatrix out(m.rows(), k);
    for (size_t j = 0; j < k; ++j) out.set_col(j, m.col(j));
    return out;
}

struct LoopOptions {
    size_t steps = 0;
    size_t eval_every = 1;
    bool record_full_loss = false;
    std::optional<double> divergence_ref;  // stop when loss exceeds 10x this
    std::vector<std::pair<std::string, json>> tags;
    bool force_bsfa = false;  // run the wrapper even without bsfa.enabled
    std::optional<EstimatorKind> estimator_override;
    std::optional<bool> quantized_override;
    double lr_scale = 1.0;
    size_t step_offset = 0;
};

struct LoopResult {
    Vec theta;
    double final_full_loss = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    size_t steps_run = 0;
    size_t aux_bytes = 0;
    size_t refreshes = 0;
    bool wrote_sin_theta = false;
};

// The shared optimizer-driven loop behind train, agreement and the
// quantization comparison. Returns after `steps` steps or at divergence.
LoopResult train_loop(const Config& cfg, const BuiltProblem& bp, const LoopOptions& lo,
                      MetricsWriter* mw, WallTimer& timer) {
    const double lr_max = cfg.get_double("optim.lr_max") * lo.lr_scale;
    const double lr_min = cfg.get_double("optim.lr_min", cfg.get_double("optim.lr_max")) * lo.lr_scale;
    const size_t warmup = cfg.get_uint("schedule.warmup", 0);
    const double clip = cfg.get_double("optim.clip", 0.0);
    const LrSchedule sched(warmup, lo.steps, lr_max, lr_min);

    OptimizerState opt = make_optimizer(cfg, bp);
    std::unique_ptr<Bsfa> bsfa;
    if (lo.force_bsfa || cfg.get_bool("bsfa.enabled", false)) {
        BsfaConfig bc = make_bsfa_config(cfg);
        if (lo.estimator_override) bc.estimator = *lo.estimator_override;
        if (lo.quantized_override) bc.quantized = *lo.quantized_override;
        bsfa = std::make_unique<Bsfa>(bc, bp.partition);
    }

    LoopResult res;
    res.theta = bp.theta0;
    Vec grad;
    double last_finite_loss = bp.full_loss(bp.theta0);
    std::optional<double> pending_sin;
    size_t prev_refreshes = 0;

    auto write_record = [&](size_t t, double loss_value, double lr_value) {
        if (!mw) return;
        MetricsRecord rec;
        rec.step = lo.step_offset + t;
        rec.wall_ms = timer.ms();
        rec.loss = loss_value;
        rec.lr = lr_value;
        if (bp.is_mlp()) rec.accuracy = bp.full_accuracy(res.theta);
        if (pending_sin) {
            rec.sin_theta = *pending_sin;
            res.wrote_sin_theta = true;
        }
        for (const auto& tag : lo.tags) rec.extras.push_back(tag);
        mw->write(rec);
    };

    for (size_t t = 0; t < lo.steps; ++t) {
        const double batch_loss = bp.loss_grad(res.theta, lo.step_offset + t, grad);
        const double rec_loss = lo.record_full_loss ? bp.full_loss(res.theta) : batch_loss;
        if (lo.divergence_ref) {
            if (!std::isfinite(rec_loss) || rec_loss > 10.0 * (*lo.divergence_ref)) {
                res.diverged = true;
                if (mw) {
                    MetricsRecord rec;
                    rec.step = lo.step_offset + t;
                    rec.wall_ms = timer.ms();
                    rec.loss = last_finite_loss;
                    rec.lr = sched.lr_at(t);
                    for (const auto& tag : lo.tags) rec.extras.push_back(tag);
                    rec.add_extra("diverged", true);
                    mw->write(rec);
                }
                break;
            }
        }
        if (std::isfinite(rec_loss)) last_finite_loss = rec_loss;

        if (clip > 0.0) clip_global_norm(grad, clip);
        const double lr = sched.lr_at(t);
        Vec v;
        try {
            v = opt.compute_update(grad, res.theta, lr);
            if (bsfa) {
                BsfaStepContext ctx;
                ctx.oracle = bp.oracle.get();
                ctx.theta = &res.theta;
                ctx.raw_grad = &grad;
                v = bsfa->step(v, ctx);
            }
        } catch (const NumericError& e) {
            if (mw) {
                MetricsRecord rec;
                rec.step = lo.step_offset + t;
                rec.wall_ms = timer.ms();
                rec.loss = last_finite_loss;
                rec.lr = lr;
                for (const auto& tag : lo.tags) rec.extras.push_back(tag);
                rec.add_extra("error", std::string(e.what()));
                rec.add_extra("at_step", lo.step_offset + t);
                mw->write(rec);
            }
            throw;
        }
        axpy(1.0, v, res.theta);
        res.steps_run = t + 1;

        if (bsfa && bsfa->refresh_count() != prev_refreshes) {
            prev_refreshes = bsfa->refresh_count();
            if (bp.quad) {
                const auto& basis0 = bsfa->projector().bases.at(0);
                if (basis0) {
                    const size_t kk = std::min<size_t>(basis0->cols(), bp.quad->dim());
                    pending_sin = sin_theta_distance(leading_cols(*basis0, kk),
                                                     bp.quad->dominant_basis(kk));
                }
            }
        }

        if (t % lo.eval_every == 0 || t + 1 == lo.steps) {
            write_record(t, rec_loss, lr);
        }
    }

    res.final_full_loss = bp.full_loss(res.theta);
    if (bsfa) {
        res.aux_bytes = bsfa->aux_bytes();
        res.refreshes = bsfa->refresh_count();
    }
    return res;
}

// Five-point grid around optim.lr_max, scored by final full loss.
// Candidates that diverge or poison the optimizer score infinity.
double tune_lr_factor(const Config& cfg, const BuiltProblem& bp, size_t steps, WallTimer& timer,
                      bool force_bsfa) {
    const double factors[] = {0.25, 0.5, 1.0, 2.0, 4.0};
    const double ref = bp.full_loss(bp.theta0);
    double best_score = kInf;
    double best_factor = 1.0;
    for (double f : factors) {
        LoopOptions lo;
        lo.steps = steps;
        lo.eval_every = steps;  // no recording anyway
        lo.divergence_ref = ref;
        lo.lr_scale = f;
        lo.force_bsfa = force_bsfa;
        double score = kInf;
        try {
            const LoopResult r = train_loop(cfg, bp, lo, nullptr, timer);
            if (!r.diverged && std::isfinite(r.final_full_loss)) score = r.final_full_loss;
        } catch (const NumericError&) {
            score = kInf;
        }
        if (score < best_score) {
            best_score = score;
            best_factor = f;
        }
    }
    if (!std::isfinite(best_score)) {
        throw NumericError("lr tuning: every candidate in the grid diverged");
    }
    return best_factor;
}

void maybe_emit(const RunPaths& paths, const std::string& kind,
                const std::vector<PlotSpec>& specs) {
    if (!paths.plots) return;
    emit_plots_from_file(paths.metrics, kind, specs, *paths.plots);
}

size_t require_steps(const Config& cfg) {
    const int64_t s = cfg.get_int("steps");
    if (s <= 0) throw ConfigError("steps: must be positive");
    return static_cast<size_t>(s);
}

size_t eval_cadence(const Config& cfg) {
    const uint64_t e = cfg.get_uint("eval.every", 10);
    if (e == 0) throw ConfigError("eval.every: must be positive");
    return static_cast<size_t>(e);
}

// Shared validation for the oscillating-quadratic recipes. Returns the
// per-mode contraction factors mu (signed) for the expected-rate summary.
struct OscillationCheck {
    double mu_k_abs = 0.0;
    double mu_tail = 0.0;
};

OscillationCheck check_oscillation_regime(const QuadraticProblem& quad, size_t k, double eta) {
    const Vec& lam = quad.lambdas();
    const size_t p = lam.size();
    if (k == 0 || k >= p) throw ConfigError("oscillation regime: need 0 < k < dim");
    for (size_t j = 0; j + 1 < k; ++j) {
        if (!(lam[j] > lam[j + 1])) {
            throw ConfigError("oscillation regime: top eigenvalues must be strictly decreasing");
        }
    }
    if (!(lam[k - 1] > lam[k])) {
        throw ConfigError("oscillation regime: need a gap between lambda_k and the tail");
    }
    const double tail = lam[k];
    for (size_t j = k; j < p; ++j) {
        if (std::abs(lam[j] - tail) > 1e-9 * std::max(1.0, std::abs(tail))) {
            throw ConfigError("oscillation regime: tail eigenvalues must be equal");
        }
    }
    if (!(eta * lam[k - 1] > 1.0)) {
        throw ConfigError("oscillation regime: need eta * lambda_k > 1 so the top block oscillates");
    }
    if (!(eta * tail > 0.0 && eta * tail < 1.0)) {
        throw ConfigError("oscillation regime: need 0 < eta * lambda_tail < 1 so the bulk contracts");
    }
    if (!(eta * (lam[k - 1] + tail) > 2.0)) {
        throw ConfigError(
            "oscillation regime: need eta * (lambda_k + lambda_tail) > 2 so the top block dominates");
    }
    OscillationCheck oc;
    oc.mu_k_abs = eta * lam[k - 1] - 1.0;
    oc.mu_tail = 1.0 - eta * tail;
    return oc;
}

void check_generic_start(const QuadraticProblem& quad, const Vec& x0, size_t k) {
    const DenseMatrix u = quad.dominant_basis(k);
    const Vec c = u.transpose_matvec(x0);
    const double floor = 1e-12 * std::max(1.0, norm2(x0));
    for (size_t j = 0; j < k; ++j) {
        if (std::abs(c[j]) < floor) {
            throw ConfigError("oscillation regime: initial point has no weight on dominant direction " +
                              std::to_string(j + 1));
        }
    }
}

// Runs the plain gradient recursion on an oscillating quadratic, handing
// each completed sliding window to `probe`. Windows are indexed by their
// start step t; the window ending at step s starts at t = s + 1 - l.
void run_windowed_recursion(const BuiltProblem& bp, double eta, size_t steps, size_t l,
                            const std::function<void(size_t t, const UpdateHistory& hist,
                                                     const Vec& theta, double loss)>& probe) {
    UpdateHistory hist(BlockPartition::single(bp.dim()), l);
    Vec theta = bp.theta0;
    for (size_t s = 0; s < steps; ++s) {
        const Vec g = bp.quad->grad(theta);
        const double loss = bp.quad->loss(theta);
        hist.push(g);
        if (s + 1 >= l) probe(s + 1 - l, hist, theta, loss);
        axpy(-eta, g, theta);
    }
}

} // namespace

void run_prop1(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    const BuiltProblem bp = build_problem(cfg);
    if (!bp.quad) throw ConfigError("prop1: problem.kind must be quadratic");
    const size_t steps = require_steps(cfg);
    const size_t k = cfg.get_uint("bsfa.k", 0);
    if (k == 0) throw ConfigError("prop1: bsfa.k required");
    const size_t l = cfg.get_uint("bsfa.history", 0);
    if (l < std::max<size_t>(k, 2)) throw ConfigError("prop1: bsfa.history must be at least max(k, 2)");
    const double eta = cfg.get_double("optim.lr_max");
    const OscillationCheck oc = check_oscillation_regime(*bp.quad, k, eta);
    check_generic_start(*bp.quad, bp.theta0, k);
    if (steps < l) throw ConfigError("prop1: steps must cover at least one history window");

    const size_t last_window = steps - l;
    const size_t fit_from = cfg.get_uint("prop1.fit_from", 10);
    const size_t fit_to = cfg.get_uint("prop1.fit_to", std::min<uint64_t>(40, last_window));
    if (fit_from >= fit_to || fit_to > last_window) {
        throw ConfigError("prop1: fit range must satisfy fit_from < fit_to <= steps - history");
    }

    WallTimer timer;
    MetricsWriter mw(paths.metrics);
    const DenseMatrix truth = bp.quad->dominant_basis(k);
    std::vector<std::pair<double, double>> fit_pts;
    std::vector<std::pair<size_t, double>> series;
    double last_loss = bp.quad->loss(bp.theta0);

    run_windowed_recursion(bp, eta, steps, l,
                           [&](size_t t, const UpdateHistory& hist, const Vec&, double loss) {
        last_loss = loss;
        const std::optional<DenseMatrix> u = ppe_estimate(hist, 0, k);
        if (!u) throw NumericError("prop1: window estimate unavailable at t=" + std::to_string(t));
        const double st = sin_theta_distance(*u, truth);
        series.emplace_back(t, st);
        if (t >= fit_from && t <= fit_to) {
            fit_pts.emplace_back(static_cast<double>(t),
                                 std::log(std::max(st, 1e-300)));
        }
        MetricsRecord rec;
        rec.step = t;
        rec.wall_ms = timer.ms();
        rec.loss = loss;
        rec.lr = eta;
        rec.sin_theta = st;
        mw.write(rec);
    });

    const double slope = ls_slope(fit_pts);
    const double expected = std::log(oc.mu_tail / oc.mu_k_abs);
    size_t decreases = 0, pairs = 0;
    double final_in_fit = 0.0;
    for (size_t i = 1; i < series.size(); ++i) {
        const auto& [t0, v0] = series[i - 1];
        const auto& [t1, v1] = series[i];
        if (t0 >= fit_from && t1 <= fit_to) {
            ++pairs;
            if (v1 < v0) ++decreases;
        }
        if (t1 == fit_to) final_in_fit = v1;
    }
    MetricsRecord sum;
    sum.step = last_window + 1;
    sum.wall_ms = timer.ms();
    sum.loss = last_loss;
    sum.lr = eta;
    sum.add_extra("summary", true);
    sum.add_extra("slope", slope);
    sum.add_extra("expected_slope", expected);
    sum.add_extra("sin_theta_at_fit_end", final_in_fit);
    sum.add_extra("monotone_fraction",
                  pairs == 0 ? 1.0 : static_cast<double>(decreases) / static_cast<double>(pairs));
    mw.write(sum);
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"sin_theta", "", true, std::make_pair(fit_from, fit_to)});
    specs.push_back({"loss", "", true, std::nullopt});
    maybe_emit(paths, "prop1", specs);
}

void run_variance(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    const BuiltProblem bp = build_problem(cfg);
    if (!bp.quad) throw ConfigError("variance: problem.kind must be quadratic");
    const size_t steps = require_steps(cfg);
    const size_t k = cfg.get_uint("bsfa.k", 0);
    if (k == 0) throw ConfigError("variance: bsfa.k required");
    const size_t l = cfg.get_uint("bsfa.history", 0);
    if (l < std::max<size_t>(k, 2)) {
        throw ConfigError("variance: bsfa.history must be at least max(k, 2)");
    }
    const double eta = cfg.get_double("optim.lr_max");
    check_oscillation_regime(*bp.quad, k, eta);
    check_generic_start(*bp.quad, bp.theta0, k);
    if (steps < l) throw ConfigError("variance: steps must cover at least one history window");

    WallTimer timer;
    MetricsWriter mw(paths.metrics);
    const DenseMatrix truth = bp.quad->dominant_basis(k);

    run_windowed_recursion(bp, eta, steps, l,
                           [&](size_t t, const UpdateHistory& hist, const Vec&, double loss) {
        const std::optional<DenseMatrix> u = ppe_estimate(hist, 0, k);
        if (!u) throw NumericError("variance: window estimate unavailable at t=" + std::to_string(t));
        const VarianceSplit vs = projection_variance(hist, *u);
        MetricsRecord rec;
        rec.step = t;
        rec.wall_ms = timer.ms();
        rec.loss = loss;
        rec.lr = eta;
        rec.sin_theta = sin_theta_distance(*u, truth);
        rec.dom_var = vs.dom_var;
        rec.bulk_var = vs.bulk_var;
        rec.add_extra("var_ratio", vs.dom_var / std::max(vs.bulk_var, 1e-300));
        mw.write(rec);
    });
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"dom_var", "", true, std::nullopt});
    specs.push_back({"bulk_var", "", true, std::nullopt});
    specs.push_back({"sin_theta", "", true, std::nullopt});
    maybe_emit(paths, "variance", specs);
}

void run_train(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    const BuiltProblem bp = build_problem(cfg);
    const size_t steps = require_steps(cfg);
    WallTimer timer;

    double factor = 1.0;
    const bool tuned = cfg.get_bool("optim.tune", false);
    if (tuned) factor = tune_lr_factor(cfg, bp, steps, timer, false);

    MetricsWriter mw(paths.metrics);
    LoopOptions lo;
    lo.steps = steps;
    lo.eval_every = eval_cadence(cfg);
    lo.lr_scale = factor;
    const LoopResult res = train_loop(cfg, bp, lo, &mw, timer);

    MetricsRecord sum;
    sum.step = steps;
    sum.wall_ms = timer.ms();
    sum.loss = res.final_full_loss;
    sum.lr = 0.0;
    if (bp.is_mlp()) sum.accuracy = bp.full_accuracy(res.theta);
    sum.add_extra("summary", true);
    sum.add_extra("final_loss", res.final_full_loss);
    sum.add_extra("steps_run", res.steps_run);
    if (cfg.get_bool("bsfa.enabled", false)) {
        sum.add_extra("aux_bytes", res.aux_bytes);
        sum.add_extra("refreshes", res.refreshes);
    }
    if (tuned) sum.add_extra("tuned_lr_max", cfg.get_double("optim.lr_max") * factor);
    mw.write(sum);
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"loss", "", true, std::nullopt});
    if (bp.is_mlp()) specs.push_back({"accuracy", "", false, std::nullopt});
    if (res.wrote_sin_theta) specs.push_back({"sin_theta", "", true, std::nullopt});
    maybe_emit(paths, "train", specs);
}

namespace {

// Shared checkpoint-and-branch machinery for the dichotomy and sweep
// recipes: pretrain to a switch point with the configured optimizer, then
// replay short branches from the frozen state with per-branch update rules.
struct BranchSetup {
    BuiltProblem bp;
    Vec theta_star;
    double loss_ref = 0.0;  // full loss at the switch point
    size_t switch_step = 0;
    size_t horizon = 0;
    size_t k = 0;
    size_t refresh = 1;
    size_t lpe_iters = 0;
    double lr = 0.0;
    uint64_t seed = 0;
};

BranchSetup branch_pretrain(const Config& cfg, MetricsWriter& mw, WallTimer& timer) {
    BranchSetup bs{build_problem(cfg), {}, 0.0, 0, 0, 0, 1, 0, 0.0, 0};
    bs.switch_step = cfg.get_uint("dichotomy.switch_step", 0);
    const int64_t horizon = cfg.get_int("dichotomy.horizon");
    if (horizon <= 0) throw ConfigError("dichotomy.horizon: must be positive");
    bs.horizon = static_cast<size_t>(horizon);
    bs.k = cfg.get_uint("dichotomy.k", 2);
    if (bs.k == 0) throw ConfigError("dichotomy.k: must be positive");
    bs.refresh = cfg.get_uint("dichotomy.refresh", 1);
    if (bs.refresh == 0) throw ConfigError("dichotomy.refresh: must be positive");
    bs.lpe_iters = cfg.get_uint("bsfa.lpe_iters", bs.k + 20);
    bs.lr = cfg.get_double("optim.lr_max");
    bs.seed = cfg.get_uint("seed", 0);

    if (bs.switch_step > 0) {
        LoopOptions lo;
        lo.steps = bs.switch_step;
        lo.eval_every = eval_cadence(cfg);
        lo.record_full_loss = true;
        lo.force_bsfa = false;
        lo.tags.emplace_back("branch", "pretrain");
        // the schedule inside train_loop spans only the pretrain phase; with
        // the default constant schedule this matches the branch lr exactly
        const LoopResult pre = train_loop(cfg, bs.bp, lo, &mw, timer);
        if (pre.diverged) throw NumericError("branch pretrain diverged before the switch point");
        bs.theta_star = pre.theta;
    } else {
        bs.theta_star = bs.bp.theta0;
    }
    bs.loss_ref = bs.bp.full_loss(bs.theta_star);
    if (!std::isfinite(bs.loss_ref)) {
        throw NumericError("branch pretrain reached a non-finite loss");
    }
    return bs;
}

struct BranchOutcome {
    double final_loss = 0.0;
    double delta_loss = 0.0;
    size_t spikes = 0;
    bool diverged = false;
    size_t steps_run = 0;
};

// One branch from the switch point. `update` maps (theta, grad, U) to the
// next iterate. Records full loss every step under the given label.
BranchOutcome run_branch(const BranchSetup& bs, const std::string& label,
                         const std::vector<std::pair<std::string, json>>& tags,
                         const std::function<Vec(const Vec&, const Vec&, const DenseMatrix&)>& update,
                         MetricsWriter& mw, WallTimer& timer) {
    const BuiltProblem& bp = bs.bp;
    Vec theta = bs.theta_star;
    Vec grad;
    DenseMatrix u;
    BranchOutcome out;
    double prev_full = bs.loss_ref;
    double last_finite = bs.loss_ref;

    for (size_t s = 0; s < bs.horizon; ++s) {
        const size_t global = bs.switch_step + s;
        const double batch_loss = bp.loss_grad(theta, global, grad);
        (void)batch_loss;
        const double full = bp.full_loss(theta);
        if (!std::isfinite(full) || full > 10.0 * bs.loss_ref) {
            out.diverged = true;
            break;
        }
        if (s > 0 && full > 1.2 * prev_full) ++out.spikes;
        prev_full = full;
        last_finite = full;

        if (s % bs.refresh == 0) {
            if (bp.quad) {
                u = bp.quad->dominant_basis(bs.k);
            } else {
                const LpeResult lp =
                    lpe_estimate(*bp.oracle, theta, bs.k, bs.lpe_iters, mix(bs.seed, 7000 + global));
                u = lp.basis;
            }
        }

        MetricsRecord rec;
        rec.step = global;
        rec.wall_ms = timer.ms();
        rec.loss = full;
        rec.lr = bs.lr;
        rec.add_extra("branch", label);
        for (const auto& tag : tags) rec.extras.push_back(tag);
        mw.write(rec);

        theta = update(theta, grad, u);
        out.steps_run = s + 1;
    }

    const double end_loss = bp.full_loss(theta);
    out.final_loss = std::isfinite(end_loss) && !out.diverged ? end_loss : last_finite;
    out.delta_loss = bs.loss_ref - out.final_loss;

    MetricsRecord fin;
    fin.step = bs.switch_step + out.steps_run;
    fin.wall_ms = timer.ms();
    fin.loss = out.final_loss;
    fin.lr = bs.lr;
    fin.add_extra("branch", label);
    for (const auto& tag : tags) fin.extras.push_back(tag);
    fin.add_extra("final", true);
    fin.add_extra("delta_loss", out.delta_loss);
    fin.add_extra("spikes", out.spikes);
    fin.add_extra("diverged", out.diverged);
    mw.write(fin);
    return out;
}

} // namespace

void run_dichotomy(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    WallTimer timer;
    MetricsWriter mw(paths.metrics);
    const BranchSetup bs = branch_pretrain(cfg, mw, timer);

    const std::vector<std::pair<std::string, DichotomyMode>> modes = {
        {"full", DichotomyMode::full},
        {"dom_only", DichotomyMode::dom_only},
        {"bulk_only", DichotomyMode::bulk_only},
    };
    for (const auto& [label, mode] : modes) {
        run_branch(bs, label, {},
                   [&, mode](const Vec& theta, const Vec& grad, const DenseMatrix& u) {
                       return dichotomy_step(theta, grad, mode, u, bs.lr);
                   },
                   mw, timer);
    }
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"loss", "branch", true, std::nullopt});
    maybe_emit(paths, "dichotomy", specs);
}

void run_sweep(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    WallTimer timer;
    MetricsWriter mw(paths.metrics);
    const BranchSetup bs = branch_pretrain(cfg, mw, timer);

    const std::vector<std::string> alpha_raw =
        cfg.has("sweep.alphas") ? cfg.get_str_list("sweep.alphas")
                                : std::vector<std::string>{"0.1", "0.5", "1", "2", "3"};
    const std::vector<std::string> gamma_raw =
        cfg.has("sweep.gammas") ? cfg.get_str_list("sweep.gammas")
                                : std::vector<std::string>{"0.1", "0.5", "1", "2", "3"};
    const std::vector<double> alphas = cfg.has("sweep.alphas")
                                           ? cfg.get_double_list("sweep.alphas")
                                           : std::vector<double>{0.1, 0.5, 1.0, 2.0, 3.0};
    const std::vector<double> gammas = cfg.has("sweep.gammas")
                                           ? cfg.get_double_list("sweep.gammas")
                                           : std::vector<double>{0.1, 0.5, 1.0, 2.0, 3.0};

    const BlockPartition single = BlockPartition::single(bs.bp.dim());
    for (size_t gi = 0; gi < gammas.size(); ++gi) {
        for (size_t ai = 0; ai < alphas.size(); ++ai) {
            const double alpha = alphas[ai];
            const double gamma = gammas[gi];
            if (!(std::isfinite(alpha) && alpha >= 0.0 && std::isfinite(gamma) && gamma >= 0.0)) {
                throw ConfigError("sweep: alpha and gamma values must be finite and nonnegative");
            }
            const std::string label = "a" + alpha_raw[ai] + "_g" + gamma_raw[gi];
            std::vector<std::pair<std::string, json>> tags;
            tags.emplace_back("alpha", alpha);
            tags.emplace_back("gamma", gamma);
            run_branch(bs, label, tags,
                       [&, alpha, gamma](const Vec& theta, const Vec& grad, const DenseMatrix& u) {
                           Projector pr = Projector::identity(single, alpha, gamma);
                           pr.bases[0] = u;
                           Vec v(grad.size());
                           for (size_t i = 0; i < grad.size(); ++i) v[i] = -bs.lr * grad[i];
                           const Vec filtered = apply_projector(pr, v);
                           Vec next = theta;
                           axpy(1.0, filtered, next);
                           return next;
                       },
                       mw, timer);
        }
    }
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"loss", "branch", true, std::nullopt});
    maybe_emit(paths, "sweep", specs);
}

void run_agreement(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    const BuiltProblem bp = build_problem(cfg);
    const size_t steps = require_steps(cfg);
    const size_t every = eval_cadence(cfg);
    const size_t k = cfg.get_uint("bsfa.k", 0);
    if (k == 0) throw ConfigError("agreement: bsfa.k required");
    size_t l = cfg.get_uint("bsfa.history", 0);
    if (l == 0) l = k + 10;
    if (l < std::max<size_t>(k, 2)) {
        throw ConfigError("agreement: bsfa.history must be at least max(k, 2)");
    }
    size_t iters = cfg.get_uint("bsfa.lpe_iters", 0);
    if (iters == 0) iters = k + 20;
    const bool store_gradients = cfg.get_str("bsfa.store", "updates") == "gradients";
    const uint64_t seed = cfg.get_uint("seed", 0);

    const double lr_max = cfg.get_double("optim.lr_max");
    const double lr_min = cfg.get_double("optim.lr_min", lr_max);
    const LrSchedule sched(cfg.get_uint("schedule.warmup", 0), steps, lr_max, lr_min);
    const double clip = cfg.get_double("optim.clip", 0.0);

    WallTimer timer;
    MetricsWriter mw(paths.metrics);

    // Probe phase: plain training, with both estimators evaluated side by
    // side on the live trajectory.
    {
        OptimizerState opt = make_optimizer(cfg, bp);
        UpdateHistory hist(BlockPartition::single(bp.dim()), l);
        Vec theta = bp.theta0;
        Vec grad;
        for (size_t t = 0; t < steps; ++t) {
            const double loss = bp.loss_grad(theta, t, grad);
            if (clip > 0.0) clip_global_norm(grad, clip);
            const double lr = sched.lr_at(t);
            const Vec v = opt.compute_update(grad, theta, lr);
            hist.push(store_gradients ? grad : v);
            axpy(1.0, v, theta);

            if (t % every == 0 || t + 1 == steps) {
                MetricsRecord rec;
                rec.step = t;
                rec.wall_ms = timer.ms();
                rec.loss = loss;
                rec.lr = lr;
                if (bp.is_mlp()) rec.accuracy = bp.full_accuracy(theta);
                rec.add_extra("curve", "plain");
                const std::optional<DenseMatrix> up = ppe_estimate(hist, 0, k);
                if (up) {
                    const LpeResult lp = lpe_estimate(*bp.oracle, theta, k, iters, mix(seed, 9000 + t));
                    const size_t m = std::min(up->cols(), lp.basis.cols());
                    if (m > 0) {
                        rec.sin_theta =
                            sin_theta_distance(leading_cols(*up, m), leading_cols(lp.basis, m));
                        json proj_sq = json::array();
                        for (size_t j = 0; j < lp.basis.cols(); ++j) {
                            const Vec coeff = up->transpose_matvec(lp.basis.col(j));
                            proj_sq.push_back(dot(coeff, coeff));
                        }
                        rec.add_extra("proj_sq", proj_sq);
                        if (lp.breakdown) rec.add_extra("lpe_breakdown", true);
                    }
                }
                mw.write(rec);
            }
        }
    }

    // Comparison phase: the filtration wrapper end to end, once per
    // estimator, from the same start and batch sequence.
    const std::vector<std::pair<std::string, EstimatorKind>> arms = {
        {"bsfa_ppe", EstimatorKind::ppe},
        {"bsfa_lpe", EstimatorKind::lpe},
    };
    for (const auto& [label, est] : arms) {
        LoopOptions lo;
        lo.steps = steps;
        lo.eval_every = every;
        lo.force_bsfa = true;
        lo.estimator_override = est;
        lo.tags.emplace_back("curve", label);
        const LoopResult r = train_loop(cfg, bp, lo, &mw, timer);
        MetricsRecord fin;
        fin.step = steps;
        fin.wall_ms = timer.ms();
        fin.loss = r.final_full_loss;
        fin.lr = sched.lr_at(steps);
        fin.add_extra("curve", label);
        fin.add_extra("final", true);
        fin.add_extra("final_loss", r.final_full_loss);
        fin.add_extra("refreshes", r.refreshes);
        mw.write(fin);
    }
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"loss", "curve", true, std::nullopt});
    specs.push_back({"sin_theta", "", true, std::nullopt});
    maybe_emit(paths, "agreement", specs);
}

void run_quant_compare(const Config& cfg, const RunPaths& paths) {
    cfg.check_known_keys();
    const BuiltProblem bp = build_problem(cfg);
    const size_t steps = require_steps(cfg);
    const size_t every = eval_cadence(cfg);
    if (cfg.get_uint("bsfa.k", 0) == 0) throw ConfigError("quant_compare: bsfa.k required");

    WallTimer timer;
    MetricsWriter mw(paths.metrics);
    struct Arm {
        std::string label;
        bool quantized;
        double final_loss = 0.0;
        size_t aux_bytes = 0;
    };
    std::vector<Arm> arms = {{"fp64", false, 0.0, 0}, {"q4", true, 0.0, 0}};
    for (Arm& arm : arms) {
        LoopOptions lo;
        lo.steps = steps;
        lo.eval_every = every;
        lo.force_bsfa = true;
        lo.quantized_override = arm.quantized;
        lo.tags.emplace_back("curve", arm.label);
        const LoopResult r = train_loop(cfg, bp, lo, &mw, timer);
        arm.final_loss = r.final_full_loss;
        arm.aux_bytes = r.aux_bytes;

        MetricsRecord fin;
        fin.step = steps;
        fin.wall_ms = timer.ms();
        fin.loss = r.final_full_loss;
        fin.lr = 0.0;
        fin.add_extra("curve", arm.label);
        fin.add_extra("final", true);
        fin.add_extra("final_loss", r.final_full_loss);
        fin.add_extra("aux_bytes", r.aux_bytes);
        mw.write(fin);
    }

    MetricsRecord sum;
    sum.step = steps;
    sum.wall_ms = timer.ms();
    sum.loss = arms[1].final_loss;
    sum.lr = 0.0;
    sum.add_extra("summary", true);
    sum.add_extra("final_loss_fp64", arms[0].final_loss);
    sum.add_extra("final_loss_q4", arms[1].final_loss);
    const double denom = std::max(std::abs(arms[0].final_loss), 1e-30);
    sum.add_extra("rel_gap", std::abs(arms[1].final_loss - arms[0].final_loss) / denom);
    sum.add_extra("aux_bytes_fp64", arms[0].aux_bytes);
    sum.add_extra("aux_bytes_q4", arms[1].aux_bytes);
    sum.add_extra("aux_ratio", arms[0].aux_bytes == 0
                                   ? 0.0
                                   : static_cast<double>(arms[1].aux_bytes) /
                                         static_cast<double>(arms[0].aux_bytes));
    mw.write(sum);
    mw.close();

    std::vector<PlotSpec> specs;
    specs.push_back({"loss", "curve", true, std::nullopt});
    maybe_emit(paths, "quant_compare", specs);
}

const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds = {
        "prop1", "dichotomy", "sweep", "train", "agreement", "variance", "quant_compare",
    };
    return kinds;
}

void run_experiment(const std::string& kind, const Config& cfg, const RunPaths& paths) {
    if (kind == "prop1") return run_prop1(cfg, paths);
    if (kind == "dichotomy") return run_dichotomy(cfg, paths);
    if (kind == "sweep") return run_sweep(cfg, paths);
    if (kind == "train") return run_train(cfg, paths);
    if (kind == "agreement") return run_agreement(cfg, paths);
    if (kind == "variance") return run_variance(cfg, paths);
    if (kind == "quant_compare") return run_quant_compare(cfg, paths);
    throw ConfigError("unknown experiment kind '" + kind + "'");
}

} // namespace bulkspace
