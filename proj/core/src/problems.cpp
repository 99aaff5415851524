#include "bulkspace/problems.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace bulkspace {

namespace {

// splitmix64, used to derive independent stream seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

int Dataset::num_classes() const {
    int mx = -1;
    for (int y : labels) mx = std::max(mx, y);
    return mx + 1;
}

Dataset make_two_moons(std::size_t n, double noise, uint64_t seed) {
    if (n < 2) throw ValidationError("make_two_moons: need at least 2 points");
    if (noise < 0.0 || !std::isfinite(noise))
        throw ValidationError("make_two_moons: noise must be finite and >= 0");

    const std::size_t n_outer = (n + 1) / 2;
    const std::size_t n_inner = n - n_outer;
    const double pi = 3.14159265358979323846;

    Dataset d;
    d.features = DenseMatrix(n, 2);
    d.labels.resize(n);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::size_t row = 0;
    for (std::size_t i = 0; i < n_outer; ++i, ++row) {
        double t = n_outer > 1 ? pi * double(i) / double(n_outer - 1) : 0.0;
        d.features(row, 0) = std::cos(t);
        d.features(row, 1) = std::sin(t);
        d.labels[row] = 0;
    }
    for (std::size_t i = 0; i < n_inner; ++i, ++row) {
        double t = n_inner > 1 ? pi * double(i) / double(n_inner - 1) : 0.0;
        d.features(row, 0) = 1.0 - std::cos(t);
        d.features(row, 1) = 0.5 - std::sin(t);
        d.labels[row] = 1;
    }
    if (noise > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            d.features(i, 0) += noise * gauss(rng);
            d.features(i, 1) += noise * gauss(rng);
        }
    }
    return d;
}

Dataset load_csv_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv_dataset: cannot open " + path);

    std::vector<Vec> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                fields.push_back(v);
            } catch (const std::exception&) {
                throw ParseError("load_csv_dataset: line " + std::to_string(lineno) +
                                 ": bad number '" + cell + "'");
            }
        }
        if (fields.size() < 2)
            throw ParseError("load_csv_dataset: line " + std::to_string(lineno) +
                             ": need at least one feature and a label");
        if (width == 0) width = fields.size();
        if (fields.size() != width)
            throw ParseError("load_csv_dataset: line " + std::to_string(lineno) + ": expected " +
                             std::to_string(width) + " fields, got " +
                             std::to_string(fields.size()));
        double labf = fields.back();
        fields.pop_back();
        if (labf != std::floor(labf) || labf < 0)
            throw ParseError("load_csv_dataset: line " + std::to_string(lineno) +
                             ": label must be a nonnegative integer");
        labels.push_back(static_cast<int>(labf));
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw ParseError("load_csv_dataset: empty file " + path);

    Dataset d;
    d.features = DenseMatrix(rows.size(), width - 1);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j + 1 < width; ++j) d.features(i, j) = rows[i][j];
    d.labels = std::move(labels);
    return d;
}

void save_csv_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_csv_dataset: cannot open " + path);
    out.precision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.features.cols(); ++j)
            out << data.features(i, j) << ',';
        out << data.labels[i] << '\n';
    }
    if (!out) throw IoError("save_csv_dataset: write failed for " + path);
}

QuadraticProblem::QuadraticProblem(Vec lambdas) : lambdas_(std::move(lambdas)) {
    if (lambdas_.empty()) throw ValidationError("QuadraticProblem: empty spectrum");
    for (std::size_t i = 0; i < lambdas_.size(); ++i) {
        if (!std::isfinite(lambdas_[i]) || lambdas_[i] < 0.0)
            throw ValidationError("QuadraticProblem: eigenvalues must be finite and >= 0");
        if (i > 0 && lambdas_[i] > lambdas_[i - 1])
            throw ValidationError("QuadraticProblem: eigenvalues must be nonincreasing");
    }
}

QuadraticProblem::QuadraticProblem(Vec lambdas, DenseMatrix rotation)
    : QuadraticProblem(std::move(lambdas)) {
    if (rotation.rows() != dim() || rotation.cols() != dim())
        throw DimensionError("QuadraticProblem: rotation shape mismatch");
    // orthogonality check, Q^T Q = I
    for (std::size_t i = 0; i < dim(); ++i) {
        Vec ci = rotation.col(i);
        for (std::size_t j = i; j < dim(); ++j) {
            double d = dot(ci, rotation.col(j));
            double want = (i == j) ? 1.0 : 0.0;
            if (std::fabs(d - want) > 1e-10)
                throw ValidationError("QuadraticProblem: rotation is not orthogonal");
        }
    }
    rotation_ = std::move(rotation);
}

QuadraticProblem QuadraticProblem::with_random_rotation(Vec lambdas, uint64_t seed) {
    const std::size_t p = lambdas.size();
    std::mt19937_64 rng(mix_seed(seed, 0xA0));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(p, p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) g(i, j) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (std::size_t j = 0; j < p; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j); // fix the QR sign ambiguity

    DenseMatrix rot(p, p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) rot(i, j) = q(i, j);
    return QuadraticProblem(std::move(lambdas), std::move(rot));
}

Vec QuadraticProblem::hvp(const Vec& v) const {
    if (v.size() != dim()) throw DimensionError("QuadraticProblem::hvp: length mismatch");
    if (rotation_.empty()) {
        Vec out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = lambdas_[i] * v[i];
        return out;
    }
    Vec c = rotation_.transpose_matvec(v);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= lambdas_[i];
    return rotation_.matvec(c);
}

Vec QuadraticProblem::grad(const Vec& x) const { return hvp(x); }

double QuadraticProblem::loss(const Vec& x) const { return 0.5 * dot(x, grad(x)); }

DenseMatrix QuadraticProblem::dominant_basis(std::size_t k) const {
    if (k < 1 || k > dim()) throw DimensionError("dominant_basis: k out of range");
    DenseMatrix u(dim(), k);
    for (std::size_t j = 0; j < k; ++j) {
        if (rotation_.empty()) {
            u(j, j) = 1.0;
        } else {
            for (std::size_t i = 0; i < dim(); ++i) u(i, j) = rotation_(i, j);
        }
    }
    return u;
}

MlpProblem::MlpProblem(std::vector<std::size_t> widths, Activation act, LossKind loss,
                       Dataset data, bool use_bias)
    : widths_(std::move(widths)), act_(act), loss_(loss), data_(std::move(data)),
      use_bias_(use_bias) {
    if (widths_.size() < 2) throw ValidationError("MlpProblem: need input and output widths");
    for (std::size_t w : widths_)
        if (w == 0) throw ValidationError("MlpProblem: zero layer width");
    if (data_.size() == 0) throw ValidationError("MlpProblem: empty dataset");
    if (data_.features.cols() != widths_.front())
        throw DimensionError("MlpProblem: dataset feature width != input width");
    if (loss_ == LossKind::cross_entropy && widths_.back() < 2)
        throw ValidationError("MlpProblem: cross entropy needs >= 2 outputs");
    for (int y : data_.labels) {
        std::size_t limit = widths_.back() >= 2 ? widths_.back() : 2;
        if (y < 0 || static_cast<std::size_t>(y) >= limit)
            throw ValidationError("MlpProblem: label out of range for output width");
    }

    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        Layout lay;
        lay.in = widths_[l];
        lay.out = widths_[l + 1];
        lay.w_off = off;
        off += lay.in * lay.out;
        lay.b_off = off;
        if (use_bias_) off += lay.out;
        layout_.push_back(lay);
    }
    dim_ = off;
}

Vec MlpProblem::init_params(uint64_t seed, double weight_scale) const {
    std::mt19937_64 rng(mix_seed(seed, 0xB0));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec theta(dim_, 0.0);
    for (const Layout& lay : layout_) {
        double s = weight_scale / std::sqrt(static_cast<double>(lay.in));
        for (std::size_t i = 0; i < lay.in * lay.out; ++i)
            theta[lay.w_off + i] = s * gauss(rng);
        // biases start at zero
    }
    return theta;
}

namespace {

inline double act_f(Activation a, double z) {
    return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}
inline double act_d(Activation a, double z, double fz) {
    return a == Activation::tanh ? 1.0 - fz * fz : (z > 0.0 ? 1.0 : 0.0);
}
inline double act_dd(Activation a, double z, double fz) {
    return a == Activation::tanh ? -2.0 * fz * (1.0 - fz * fz) : 0.0;
}

void softmax_inplace(Vec& z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) { v = std::exp(v - mx); sum += v; }
    for (double& v : z) v /= sum;
}

double log_sum_exp(const Vec& z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

} // namespace

double MlpProblem::loss(const Vec& theta, const std::vector<std::size_t>& batch) const {
    if (theta.size() != dim_) throw DimensionError("MlpProblem::loss: theta length mismatch");
    if (!bulkspace::all_finite(theta)) throw NumericError("MlpProblem::loss: non-finite theta");

    std::vector<std::size_t> full;
    const std::vector<std::size_t>* idx = &batch;
    if (batch.empty()) {
        full.resize(data_.size());
        std::iota(full.begin(), full.end(), 0);
        idx = &full;
    }

    double total = 0.0;
    Vec a, z;
    for (std::size_t ex : *idx) {
        a.resize(widths_.front());
        for (std::size_t j = 0; j < widths_.front(); ++j) a[j] = data_.features(ex, j);
        for (std::size_t l = 0; l < layout_.size(); ++l) {
            const Layout& lay = layout_[l];
            z.assign(lay.out, 0.0);
            for (std::size_t o = 0; o < lay.out; ++o) {
                double s = use_bias_ ? theta[lay.b_off + o] : 0.0;
                const double* wrow = theta.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i) s += wrow[i] * a[i];
                z[o] = s;
            }
            if (l + 1 < layout_.size())
                for (std::size_t o = 0; o < lay.out; ++o) z[o] = act_f(act_, z[o]);
            a = z;
        }
        int y = data_.labels[ex];
        if (loss_ == LossKind::cross_entropy) {
            total += log_sum_exp(a) - a[static_cast<std::size_t>(y)];
        } else {
            if (widths_.back() == 1) {
                double diff = a[0] - static_cast<double>(y);
                total += 0.5 * diff * diff;
            } else {
                for (std::size_t o = 0; o < widths_.back(); ++o) {
                    double t = (static_cast<int>(o) == y) ? 1.0 : 0.0;
                    double diff = a[o] - t;
                    total += 0.5 * diff * diff;
                }
            }
        }
    }
    return total / static_cast<double>(idx->size());
}

double MlpProblem::loss_grad(const Vec& theta, Vec& grad_out,
                             const std::vector<std::size_t>& batch) const {
    if (theta.size() != dim_) throw DimensionError("MlpProblem::loss_grad: theta length mismatch");
    if (!bulkspace::all_finite(theta)) throw NumericError("MlpProblem::loss_grad: non-finite theta");

    std::vector<std::size_t> full;
    const std::vector<std::size_t>* idx = &batch;
    if (batch.empty()) {
        full.resize(data_.size());
        std::iota(full.begin(), full.end(), 0);
        idx = &full;
    }
    const double inv_b = 1.0 / static_cast<double>(idx->size());

    grad_out.assign(dim_, 0.0);
    double total = 0.0;
    const std::size_t L = layout_.size();
    std::vector<Vec> acts(L + 1), zs(L);

    for (std::size_t ex : *idx) {
        acts[0].resize(widths_.front());
        for (std::size_t j = 0; j < widths_.front(); ++j) acts[0][j] = data_.features(ex, j);

        for (std::size_t l = 0; l < L; ++l) {
            const Layout& lay = layout_[l];
            zs[l].assign(lay.out, 0.0);
            for (std::size_t o = 0; o < lay.out; ++o) {
                double s = use_bias_ ? theta[lay.b_off + o] : 0.0;
                const double* wrow = theta.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i) s += wrow[i] * acts[l][i];
                zs[l][o] = s;
            }
            acts[l + 1].resize(lay.out);
            if (l + 1 < L)
                for (std::size_t o = 0; o < lay.out; ++o) acts[l + 1][o] = act_f(act_, zs[l][o]);
            else
                acts[l + 1] = zs[l];
        }

        int y = data_.labels[ex];
        Vec delta; // d loss / d z_last, scaled by 1/B
        const Vec& logits = acts[L];
        if (loss_ == LossKind::cross_entropy) {
            total += (log_sum_exp(logits) - logits[static_cast<std::size_t>(y)]) * inv_b;
            delta = logits;
            softmax_inplace(delta);
            delta[static_cast<std::size_t>(y)] -= 1.0;
            for (double& v : delta) v *= inv_b;
        } else {
            delta.assign(widths_.back(), 0.0);
            if (widths_.back() == 1) {
                double diff = logits[0] - static_cast<double>(y);
                total += 0.5 * diff * diff * inv_b;
                delta[0] = diff * inv_b;
            } else {
                for (std::size_t o = 0; o < widths_.back(); ++o) {
                    double t = (static_cast<int>(o) == y) ? 1.0 : 0.0;
                    double diff = logits[o] - t;
                    total += 0.5 * diff * diff * inv_b;
                    delta[o] = diff * inv_b;
                }
            }
        }

        for (std::size_t li = L; li-- > 0;) {
            const Layout& lay = layout_[li];
            for (std::size_t o = 0; o < lay.out; ++o) {
                double d = delta[o];
                double* gw = grad_out.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i) gw[i] += d * acts[li][i];
                if (use_bias_) grad_out[lay.b_off + o] += d;
            }
            if (li > 0) {
                Vec prev(lay.in, 0.0);
                for (std::size_t o = 0; o < lay.out; ++o) {
                    const double* wrow = theta.data() + lay.w_off + o * lay.in;
                    double d = delta[o];
                    for (std::size_t i = 0; i < lay.in; ++i) prev[i] += wrow[i] * d;
                }
                for (std::size_t i = 0; i < lay.in; ++i)
                    prev[i] *= act_d(act_, zs[li - 1][i], acts[li][i]);
                delta = std::move(prev);
            }
        }
    }
    return total;
}

Vec MlpProblem::hvp(const Vec& theta, const Vec& v,
                    const std::vector<std::size_t>& batch) const {
    if (theta.size() != dim_ || v.size() != dim_)
        throw DimensionError("MlpProblem::hvp: length mismatch");
    if (!bulkspace::all_finite(theta) || !bulkspace::all_finite(v))
        throw NumericError("MlpProblem::hvp: non-finite input");

    std::vector<std::size_t> full;
    const std::vector<std::size_t>* idx = &batch;
    if (batch.empty()) {
        full.resize(data_.size());
        std::iota(full.begin(), full.end(), 0);
        idx = &full;
    }
    const double inv_b = 1.0 / static_cast<double>(idx->size());

    Vec hv(dim_, 0.0);
    const std::size_t L = layout_.size();
    std::vector<Vec> acts(L + 1), r_acts(L + 1), zs(L), r_zs(L);

    for (std::size_t ex : *idx) {
        acts[0].resize(widths_.front());
        r_acts[0].assign(widths_.front(), 0.0);
        for (std::size_t j = 0; j < widths_.front(); ++j) acts[0][j] = data_.features(ex, j);

        // forward pass carrying directional derivatives (R-operator)
        for (std::size_t l = 0; l < L; ++l) {
            const Layout& lay = layout_[l];
            zs[l].assign(lay.out, 0.0);
            r_zs[l].assign(lay.out, 0.0);
            for (std::size_t o = 0; o < lay.out; ++o) {
                double s = use_bias_ ? theta[lay.b_off + o] : 0.0;
                double rs = use_bias_ ? v[lay.b_off + o] : 0.0;
                const double* wrow = theta.data() + lay.w_off + o * lay.in;
                const double* vrow = v.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i) {
                    s += wrow[i] * acts[l][i];
                    rs += vrow[i] * acts[l][i] + wrow[i] * r_acts[l][i];
                }
                zs[l][o] = s;
                r_zs[l][o] = rs;
            }
            acts[l + 1].resize(lay.out);
            r_acts[l + 1].resize(lay.out);
            if (l + 1 < L) {
                for (std::size_t o = 0; o < lay.out; ++o) {
                    double fz = act_f(act_, zs[l][o]);
                    acts[l + 1][o] = fz;
                    r_acts[l + 1][o] = act_d(act_, zs[l][o], fz) * r_zs[l][o];
                }
            } else {
                acts[l + 1] = zs[l];
                r_acts[l + 1] = r_zs[l];
            }
        }

        int y = data_.labels[ex];
        const Vec& logits = acts[L];
        const Vec& r_logits = r_acts[L];
        Vec delta(widths_.back(), 0.0), r_delta(widths_.back(), 0.0);
        if (loss_ == LossKind::cross_entropy) {
            Vec p = logits;
            softmax_inplace(p);
            double pr = 0.0;
            for (std::size_t o = 0; o < p.size(); ++o) pr += p[o] * r_logits[o];
            for (std::size_t o = 0; o < p.size(); ++o) {
                delta[o] = p[o] * inv_b;
                r_delta[o] = p[o] * (r_logits[o] - pr) * inv_b;
            }
            delta[static_cast<std::size_t>(y)] -= inv_b;
        } else {
            if (widths_.back() == 1) {
                delta[0] = (logits[0] - static_cast<double>(y)) * inv_b;
                r_delta[0] = r_logits[0] * inv_b;
            } else {
                for (std::size_t o = 0; o < widths_.back(); ++o) {
                    double t = (static_cast<int>(o) == y) ? 1.0 : 0.0;
                    delta[o] = (logits[o] - t) * inv_b;
                    r_delta[o] = r_logits[o] * inv_b;
                }
            }
        }

        for (std::size_t li = L; li-- > 0;) {
            const Layout& lay = layout_[li];
            for (std::size_t o = 0; o < lay.out; ++o) {
                double rd = r_delta[o];
                double d = delta[o];
                double* hw = hv.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i)
                    hw[i] += rd * acts[li][i] + d * r_acts[li][i];
                if (use_bias_) hv[lay.b_off + o] += rd;
            }
            if (li > 0) {
                Vec s(lay.in, 0.0), rs(lay.in, 0.0);
                for (std::size_t o = 0; o < lay.out; ++o) {
                    const double* wrow = theta.data() + lay.w_off + o * lay.in;
                    const double* vrow = v.data() + lay.w_off + o * lay.in;
                    double d = delta[o], rd = r_delta[o];
                    for (std::size_t i = 0; i < lay.in; ++i) {
                        s[i] += wrow[i] * d;
                        rs[i] += vrow[i] * d + wrow[i] * rd;
                    }
                }
                Vec nd(lay.in), nrd(lay.in);
                for (std::size_t i = 0; i < lay.in; ++i) {
                    double z = zs[li - 1][i];
                    double fz = acts[li][i];
                    double d1 = act_d(act_, z, fz);
                    double d2 = act_dd(act_, z, fz);
                    nd[i] = d1 * s[i];
                    nrd[i] = d2 * r_zs[li - 1][i] * s[i] + d1 * rs[i];
                }
                delta = std::move(nd);
                r_delta = std::move(nrd);
            }
        }
    }
    return hv;
}

double MlpProblem::accuracy(const Vec& theta) const {
    if (theta.size() != dim_) throw DimensionError("MlpProblem::accuracy: theta length mismatch");
    std::size_t correct = 0;
    Vec a, z;
    for (std::size_t ex = 0; ex < data_.size(); ++ex) {
        a.resize(widths_.front());
        for (std::size_t j = 0; j < widths_.front(); ++j) a[j] = data_.features(ex, j);
        for (std::size_t l = 0; l < layout_.size(); ++l) {
            const Layout& lay = layout_[l];
            z.assign(lay.out, 0.0);
            for (std::size_t o = 0; o < lay.out; ++o) {
                double s = use_bias_ ? theta[lay.b_off + o] : 0.0;
                const double* wrow = theta.data() + lay.w_off + o * lay.in;
                for (std::size_t i = 0; i < lay.in; ++i) s += wrow[i] * a[i];
                z[o] = s;
            }
            if (l + 1 < layout_.size())
                for (std::size_t o = 0; o < lay.out; ++o) z[o] = act_f(act_, z[o]);
            a = z;
        }
        int pred;
        if (widths_.back() == 1)
            pred = a[0] > 0.5 ? 1 : 0;
        else
            pred = static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin());
        if (pred == data_.labels[ex]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data_.size());
}

BlockPartition MlpProblem::partition() const {
    std::vector<Block> blocks;
    std::size_t id = 0;
    for (std::size_t l = 0; l < layout_.size(); ++l) {
        const Layout& lay = layout_[l];
        Block w;
        w.id = id++;
        w.name = "layer" + std::to_string(l) + ".weight";
        w.begin = lay.w_off;
        w.end = lay.w_off + lay.in * lay.out;
        w.role = BlockRole::mlp_like;
        blocks.push_back(w);
        if (use_bias_) {
            Block b;
            b.id = id++;
            b.name = "layer" + std::to_string(l) + ".bias";
            b.begin = lay.b_off;
            b.end = lay.b_off + lay.out;
            b.role = BlockRole::other;
            blocks.push_back(b);
        }
    }
    return BlockPartition(std::move(blocks));
}

MlpOracle::MlpOracle(const MlpProblem& p, uint64_t seed) : p_(p) {
    const std::size_t n = p.data().size();
    const std::size_t m = std::min<std::size_t>(512, n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (m < n) {
        std::mt19937_64 rng(mix_seed(seed, 0xC0));
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(m);
        std::sort(all.begin(), all.end());
    }
    subset_ = std::move(all);
}

Vec MlpOracle::grad_at(const Vec& theta) const {
    Vec g;
    p_.loss_grad(theta, g, subset_);
    return g;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch, uint64_t seed)
    : n_(n), batch_(batch == 0 || batch >= n ? 0 : batch), seed_(seed) {
    if (n == 0) throw ValidationError("BatchSampler: empty dataset");
    bpe_ = batch_ == 0 ? 1 : (n_ + batch_ - 1) / batch_;
}

std::vector<std::size_t> BatchSampler::batch_at(std::size_t step) const {
    std::vector<std::size_t> idx(n_);
    std::iota(idx.begin(), idx.end(), 0);
    if (batch_ == 0) return idx;

    const std::size_t epoch = step / bpe_;
    const std::size_t slot = step % bpe_;
    std::mt19937_64 rng(mix_seed(seed_, epoch));
    std::shuffle(idx.begin(), idx.end(), rng);

    const std::size_t lo = slot * batch_;
    const std::size_t hi = std::min(lo + batch_, n_);
    return std::vector<std::size_t>(idx.begin() + lo, idx.begin() + hi);
}

} // namespace bulkspace
