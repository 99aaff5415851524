#pragma once

// Reference implementations the tests check the library against. Everything
// here is written the slow, obvious way and shares no code with the library's
// numerical paths, so the two sides can genuinely disagree.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bulkspace/numerics.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/vec.hpp"

namespace oracles {

struct Eig {
    bulkspace::Vec values;          // nonincreasing
    bulkspace::DenseMatrix vectors; // column j pairs with values[j]
};

// Cyclic Jacobi on a dense symmetric matrix. Good to ~1e-13 relative.
Eig jacobi_eigh(const bulkspace::DenseMatrix& a);

// Central finite differences.
bulkspace::Vec fd_grad(const std::function<double(const bulkspace::Vec&)>& f,
                       const bulkspace::Vec& x, double h);
bulkspace::Vec fd_hvp(const std::function<bulkspace::Vec(const bulkspace::Vec&)>& grad,
                      const bulkspace::Vec& x, const bulkspace::Vec& v, double h);

// Gradient of 1/2 x^T diag(lambda) x after s exact GD steps
// x_{s+1} = (I - eta diag(lambda)) x_s from x0, in closed form.
bulkspace::Vec gd_gradient_at(const bulkspace::Vec& lambdas, const bulkspace::Vec& x0,
                              double eta, std::size_t s);

// (alpha U U^T + gamma (I - U U^T)) v through an explicit dense matrix.
bulkspace::Vec dense_projector_apply(const bulkspace::DenseMatrix& u, double alpha,
                                     double gamma, const bulkspace::Vec& v);

// E4M3 value of a byte, straight from the format definition.
double e4m3_value(uint8_t b);
// Nearest E4M3 byte by searching the whole grid; ties to even mantissa.
uint8_t e4m3_nearest(double x);

// Scalar reference for the group quantizer.
struct RefQuant {
    std::vector<int> codes;
    std::vector<double> scales; // decoded, one per group
    std::vector<double> zps;    // decoded, one per group
    std::vector<double> recon;
};
RefQuant ref_quantize(const std::vector<double>& v, uint32_t group_size);

// Seeded dense helpers.
bulkspace::Vec random_vec(std::size_t n, uint64_t seed);
bulkspace::DenseMatrix random_matrix(std::size_t rows, std::size_t cols, uint64_t seed);
bulkspace::DenseMatrix random_orthogonal(std::size_t n, uint64_t seed);
// n x k with orthonormal columns.
bulkspace::DenseMatrix random_basis(std::size_t n, std::size_t k, uint64_t seed);
// Generic symmetric positive definite matrix.
bulkspace::DenseMatrix random_spd(std::size_t n, uint64_t seed);

// Hessian assembled column by column from hvp(e_i), then symmetrized.
bulkspace::DenseMatrix assemble_hessian(const bulkspace::HvpOracle& oracle,
                                        const bulkspace::Vec& theta);

// Fixed symmetric matrix behind the HvpOracle interface.
class MatrixOracle : public bulkspace::HvpOracle {
public:
    explicit MatrixOracle(bulkspace::DenseMatrix a);
    std::size_t dim() const override { return a_.rows(); }
    double loss_at(const bulkspace::Vec& theta) const override;
    bulkspace::Vec grad_at(const bulkspace::Vec& theta) const override;
    bulkspace::Vec hvp_at(const bulkspace::Vec&, const bulkspace::Vec& v) const override;

private:
    bulkspace::DenseMatrix a_;
};

// Largest |a_ij - b_ij|.
double max_abs_diff(const bulkspace::Vec& a, const bulkspace::Vec& b);
// Largest |(U^T U - I)_ij|.
double ortho_defect(const bulkspace::DenseMatrix& u);

// Fresh scratch directory under the working directory; wiped if present.
std::string fresh_dir(const std::string& tag);

} // namespace oracles
