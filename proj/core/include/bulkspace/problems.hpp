#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bulkspace/blocks.hpp"
#include "bulkspace/numerics.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

struct Dataset {
    DenseMatrix features;    // n x d
    std::vector<int> labels; // length n, values in [0, num_classes)

    std::size_t size() const { return labels.size(); }
    std::size_t num_features() const { return features.cols(); }
    int num_classes() const;
};

// Two interleaving half-circles, the usual synthetic binary benchmark.
// Class 0 sits on the upper unit half-circle, class 1 on the shifted lower
// arc. Labels are balanced to within one point; Gaussian noise of the given
// standard deviation is added per coordinate.
Dataset make_two_moons(std::size_t n, double noise, uint64_t seed);

// CSV rows are feature columns followed by an integer label. No header.
Dataset load_csv_dataset(const std::string& path);
void save_csv_dataset(const Dataset& data, const std::string& path);

// Loss, gradient and exact Hessian-vector products for one objective.
// Implementations bind whatever data subset they evaluate on, so repeated
// calls at the same theta are deterministic.
class HvpOracle {
public:
    virtual ~HvpOracle() = default;
    virtual std::size_t dim() const = 0;
    virtual double loss_at(const Vec& theta) const = 0;
    virtual Vec grad_at(const Vec& theta) const = 0;
    virtual Vec hvp_at(const Vec& theta, const Vec& v) const = 0;
};

// f(x) = 1/2 x^T A x with A = Q diag(lambda) Q^T. The rotation is stored
// explicitly; a default-constructed problem uses Q = I.
class QuadraticProblem {
public:
    explicit QuadraticProblem(Vec lambdas);
    QuadraticProblem(Vec lambdas, DenseMatrix rotation);

    static QuadraticProblem with_random_rotation(Vec lambdas, uint64_t seed);

    std::size_t dim() const { return lambdas_.size(); }
    const Vec& lambdas() const { return lambdas_; }
    bool rotated() const { return !rotation_.empty(); }

    double loss(const Vec& x) const;
    Vec grad(const Vec& x) const;
    Vec hvp(const Vec& v) const; // A v, independent of x

    // Leading k eigenvectors of A as columns.
    DenseMatrix dominant_basis(std::size_t k) const;

private:
    Vec lambdas_;
    DenseMatrix rotation_; // empty means identity
};

class QuadraticOracle : public HvpOracle {
public:
    explicit QuadraticOracle(const QuadraticProblem& p) : p_(p) {}
    std::size_t dim() const override { return p_.dim(); }
    double loss_at(const Vec& theta) const override { return p_.loss(theta); }
    Vec grad_at(const Vec& theta) const override { return p_.grad(theta); }
    Vec hvp_at(const Vec&, const Vec& v) const override { return p_.hvp(v); }

private:
    const QuadraticProblem& p_;
};

enum class Activation { tanh, relu };
enum class LossKind { cross_entropy, squared };

// Fully connected network; hidden layers use the chosen activation, the
// last layer is linear. Parameters are flattened layer by layer, weights
// before biases.
class MlpProblem {
public:
    MlpProblem(std::vector<std::size_t> widths, Activation act, LossKind loss,
               Dataset data, bool use_bias = true);

    std::size_t dim() const { return dim_; }
    const Dataset& data() const { return data_; }
    std::size_t num_layers() const { return widths_.size() - 1; }

    Vec init_params(uint64_t seed, double weight_scale) const;

    // Empty batch means the full dataset.
    double loss(const Vec& theta, const std::vector<std::size_t>& batch = {}) const;
    double loss_grad(const Vec& theta, Vec& grad_out,
                     const std::vector<std::size_t>& batch = {}) const;
    // Exact H v via forward-over-reverse differentiation.
    Vec hvp(const Vec& theta, const Vec& v,
            const std::vector<std::size_t>& batch = {}) const;

    double accuracy(const Vec& theta) const;

    // One block per weight matrix and per bias vector.
    BlockPartition partition() const;

private:
    struct Layout {
        std::size_t w_off, b_off, in, out;
    };
    std::vector<std::size_t> widths_;
    Activation act_;
    LossKind loss_;
    Dataset data_;
    bool use_bias_;
    std::size_t dim_;
    std::vector<Layout> layout_;

    friend class MlpOracle;
};

// Binds an MLP to a fixed, seeded subset of at most 512 examples so that
// repeated curvature probes see the same objective.
class MlpOracle : public HvpOracle {
public:
    MlpOracle(const MlpProblem& p, uint64_t seed);
    std::size_t dim() const override { return p_.dim(); }
    double loss_at(const Vec& theta) const override { return p_.loss(theta, subset_); }
    Vec grad_at(const Vec& theta) const override;
    Vec hvp_at(const Vec& theta, const Vec& v) const override {
        return p_.hvp(theta, v, subset_);
    }
    const std::vector<std::size_t>& subset() const { return subset_; }

private:
    const MlpProblem& p_;
    std::vector<std::size_t> subset_;
};

// Deterministic minibatch schedule: a fresh seeded shuffle per epoch,
// consecutive chunks without replacement inside an epoch. batch == 0 (or
// batch >= n) yields the full dataset every step.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, uint64_t seed);
    std::vector<std::size_t> batch_at(std::size_t step) const;
    std::size_t batches_per_epoch() const { return bpe_; }

private:
    std::size_t n_, batch_, bpe_;
    uint64_t seed_;
};

} // namespace bulkspace
