#include <doctest.h>

#include <cmath>
#include <set>

#include "bulkspace/errors.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/quant.hpp"
#include "bulkspace/subspace.hpp"
#include "oracles.hpp"

using bulkspace::Block;
using bulkspace::BlockPartition;
using bulkspace::BlockRole;
using bulkspace::DenseMatrix;
using bulkspace::LpeResult;
using bulkspace::Projector;
using bulkspace::UpdateHistory;
using bulkspace::Vec;

namespace {

BlockPartition two_blocks(std::size_t a, std::size_t b, BlockRole role_a = BlockRole::mlp_like,
                          BlockRole role_b = BlockRole::other) {
    std::vector<Block> blocks(2);
    blocks[0].id = 0; blocks[0].name = "a"; blocks[0].begin = 0; blocks[0].end = a;
    blocks[0].role = role_a;
    blocks[1].id = 1; blocks[1].name = "b"; blocks[1].begin = a; blocks[1].end = a + b;
    blocks[1].role = role_b;
    return BlockPartition(std::move(blocks));
}

DenseMatrix coords_basis(std::size_t p, std::initializer_list<std::size_t> axes) {
    DenseMatrix u(p, axes.size());
    std::size_t j = 0;
    for (std::size_t ax : axes) u(ax, j++) = 1.0;
    return u;
}

Vec unit(std::size_t p, std::size_t axis, double s = 1.0) {
    Vec v(p, 0.0);
    v[axis] = s;
    return v;
}

} // namespace

TEST_SUITE("subspace") {

TEST_CASE("projector with alpha = gamma = 1 is the exact identity") {
    Projector p = Projector::identity(BlockPartition::single(4));
    p.bases[0] = oracles::random_basis(4, 2, 1);
    const Vec v = oracles::random_vec(4, 2);
    const Vec out = bulkspace::apply_projector(p, v);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == v[i]);
}

TEST_CASE("projector matches the dense two-scale matrix") {
    const std::size_t p_dim = 9;
    Projector p = Projector::identity(BlockPartition::single(p_dim), 0.25, 3.0);
    const DenseMatrix u = oracles::random_basis(p_dim, 3, 5);
    p.bases[0] = u;
    const Vec v = oracles::random_vec(p_dim, 6);
    const Vec got = bulkspace::apply_projector(p, v);
    const Vec want = oracles::dense_projector_apply(u, 0.25, 3.0, v);
    for (std::size_t i = 0; i < p_dim; ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("projector treats blocks independently") {
    const BlockPartition part = two_blocks(5, 7);
    Projector p = Projector::identity(part, 0.5, 2.0);
    const DenseMatrix u0 = oracles::random_basis(5, 2, 7);
    p.bases[0] = u0; // block 1 stays pass-through
    Vec v = oracles::random_vec(12, 8);
    const Vec got = bulkspace::apply_projector(p, v);

    const Vec v0(v.begin(), v.begin() + 5);
    const Vec want0 = oracles::dense_projector_apply(u0, 0.5, 2.0, v0);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(got[i] == doctest::Approx(want0[i]).epsilon(1e-12));
    for (std::size_t i = 5; i < 12; ++i) CHECK(got[i] == v[i]); // untouched slice
}

TEST_CASE("alpha = 0 annihilates the dominant side") {
    Projector p = Projector::identity(BlockPartition::single(6), 0.0, 1.0);
    const DenseMatrix u = oracles::random_basis(6, 2, 9);
    p.bases[0] = u;
    const Vec out = bulkspace::apply_projector(p, oracles::random_vec(6, 10));
    for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::fabs(bulkspace::dot(out, u.col(j))) < 1e-12);
}

TEST_CASE("projector application is linear") {
    Projector p = Projector::identity(BlockPartition::single(7), 0.3, 1.7);
    p.bases[0] = oracles::random_basis(7, 3, 11);
    const Vec x = oracles::random_vec(7, 12);
    const Vec y = oracles::random_vec(7, 13);
    Vec combo(7);
    for (std::size_t i = 0; i < 7; ++i) combo[i] = 2.0 * x[i] - 0.5 * y[i];
    const Vec px = bulkspace::apply_projector(p, x);
    const Vec py = bulkspace::apply_projector(p, y);
    const Vec pc = bulkspace::apply_projector(p, combo);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(pc[i] == doctest::Approx(2.0 * px[i] - 0.5 * py[i]).epsilon(1e-12));
}

TEST_CASE("projector validates its inputs") {
    Projector p = Projector::identity(BlockPartition::single(4), 0.5, 1.0);
    CHECK_THROWS_AS(bulkspace::apply_projector(p, Vec(3, 0.0)), bulkspace::DimensionError);
    CHECK_THROWS_AS(bulkspace::apply_projector(p, Vec{1.0, 2.0, std::nan(""), 0.0}),
                    bulkspace::NumericError);
    p.bases[0] = oracles::random_basis(3, 1, 14); // wrong row count
    CHECK_THROWS_AS(bulkspace::apply_projector(p, Vec(4, 0.0)), bulkspace::DimensionError);
    Projector mangled = Projector::identity(BlockPartition::single(4), 0.5, 1.0);
    mangled.bases.clear();
    CHECK_THROWS_AS(bulkspace::apply_projector(mangled, Vec(4, 0.0)),
                    bulkspace::DimensionError);
}

TEST_CASE("history is a ring that drops the oldest entry") {
    UpdateHistory h(BlockPartition::single(3), 3);
    CHECK(h.filled() == 0);
    for (double s = 1.0; s <= 5.0; s += 1.0) h.push(Vec{s, 10.0 * s, 100.0 * s});
    CHECK(h.filled() == 3);
    const DenseMatrix m = h.block_matrix(0);
    REQUIRE(m.cols() == 3);
    // pushes 3, 4, 5 survive, oldest first
    CHECK(m(0, 0) == 3.0);
    CHECK(m(0, 1) == 4.0);
    CHECK(m(0, 2) == 5.0);
    CHECK(m(2, 2) == 500.0);
}

TEST_CASE("history keeps insertion order before wrapping") {
    UpdateHistory h(BlockPartition::single(2), 4);
    h.push(Vec{1.0, 0.0});
    h.push(Vec{2.0, 0.0});
    h.push(Vec{3.0, 0.0});
    const DenseMatrix m = h.block_matrix(0);
    REQUIRE(m.cols() == 3);
    CHECK(m(0, 0) == 1.0);
    CHECK(m(0, 1) == 2.0);
    CHECK(m(0, 2) == 3.0);
}

TEST_CASE("history validates construction and pushes") {
    CHECK_THROWS_AS(UpdateHistory(BlockPartition::single(3), 1), bulkspace::ValidationError);
    UpdateHistory h(BlockPartition::single(3), 2);
    CHECK_THROWS_AS(h.push(Vec(2, 0.0)), bulkspace::DimensionError);
    CHECK_THROWS_AS(h.push(Vec{1.0, 2.0, std::nan("")}), bulkspace::NumericError);
    CHECK_THROWS_AS(h.block_matrix(0), bulkspace::ValidationError); // still empty
    CHECK_THROWS_AS(h.block_matrix(1), bulkspace::DimensionError);
}

TEST_CASE("quantized history stores 4-bit codes") {
    const std::size_t p_dim = 128;
    UpdateHistory h(BlockPartition::single(p_dim), 4, true, 64);
    UpdateHistory raw(BlockPartition::single(p_dim), 4, false);
    for (uint64_t s = 0; s < 3; ++s) {
        const Vec v = oracles::random_vec(p_dim, 100 + s);
        h.push(v);
        raw.push(v);
        // stored column equals an explicit quantize/dequantize round trip
        const Vec expect = bulkspace::dequantize4(bulkspace::quantize4(v, 64));
        const DenseMatrix m = h.block_matrix(0);
        for (std::size_t i = 0; i < p_dim; ++i)
            CHECK(m(i, m.cols() - 1) == expect[i]);
    }
    // 64 packed + 2 scale + 2 zero-point bytes per stored vector
    CHECK(h.byte_size() == 3 * (64 + 2 + 2));
    CHECK(raw.byte_size() == 3 * p_dim * sizeof(double));
}

TEST_CASE("ppe returns nothing until the window can support it") {
    UpdateHistory h(BlockPartition::single(4), 6);
    CHECK(bulkspace::ppe_estimate(h, 0, 2) == std::nullopt);
    h.push(unit(4, 0));
    CHECK(bulkspace::ppe_estimate(h, 0, 1) == std::nullopt); // only one column
    h.push(unit(4, 1));
    CHECK(bulkspace::ppe_estimate(h, 0, 3) == std::nullopt); // fewer columns than k
    CHECK(bulkspace::ppe_estimate(h, 0, 2).has_value());
    UpdateHistory narrow(BlockPartition::single(2), 6);
    narrow.push(unit(2, 0));
    narrow.push(unit(2, 1));
    narrow.push(unit(2, 0));
    CHECK(bulkspace::ppe_estimate(narrow, 0, 3) == std::nullopt); // block thinner than k
    CHECK_THROWS_AS(bulkspace::ppe_estimate(h, 0, 0), bulkspace::ValidationError);
    CHECK_THROWS_AS(bulkspace::ppe_estimate(h, 2, 1), bulkspace::DimensionError);
}

TEST_CASE("ppe recovers a repeated direction exactly") {
    UpdateHistory h(BlockPartition::single(5), 4);
    h.push(unit(5, 2, 3.0));
    h.push(unit(5, 2, -7.0)); // sign flips must not matter
    const auto u = bulkspace::ppe_estimate(h, 0, 1);
    REQUIRE(u.has_value());
    CHECK(u->rows() == 5);
    CHECK(u->cols() == 1);
    CHECK(std::fabs((*u)(2, 0)) == doctest::Approx(1.0));
    for (std::size_t i = 0; i < 5; ++i)
        if (i != 2) CHECK(std::fabs((*u)(i, 0)) < 1e-14);
}

TEST_CASE("ppe spans alternating axes with zero principal angle") {
    UpdateHistory h(BlockPartition::single(6), 10);
    for (int t = 0; t < 10; ++t) h.push(unit(6, t % 2 == 0 ? 0 : 1, 2.0));
    const auto u = bulkspace::ppe_estimate(h, 0, 2);
    REQUIRE(u.has_value());
    CHECK(bulkspace::sin_theta_distance(*u, coords_basis(6, {0, 1})) < 1e-12);
}

TEST_CASE("ppe ignores zero updates in the window") {
    UpdateHistory h(BlockPartition::single(4), 6);
    h.push(unit(4, 1));
    h.push(Vec(4, 0.0));
    h.push(unit(4, 1, -2.0));
    const auto u = bulkspace::ppe_estimate(h, 0, 1);
    REQUIRE(u.has_value());
    CHECK(std::fabs((*u)(1, 0)) == doctest::Approx(1.0));
    // a window of only zero vectors cannot be estimated
    UpdateHistory z(BlockPartition::single(4), 4);
    z.push(Vec(4, 0.0));
    z.push(Vec(4, 0.0));
    CHECK(bulkspace::ppe_estimate(z, 0, 1) == std::nullopt);
}

TEST_CASE("ppe is invariant to the magnitude of stored updates") {
    UpdateHistory a(BlockPartition::single(5), 4);
    UpdateHistory b(BlockPartition::single(5), 4);
    for (uint64_t s = 0; s < 4; ++s) {
        Vec v = oracles::random_vec(5, 300 + s);
        Vec w = v;
        bulkspace::scale(w, std::pow(10.0, double(s) - 2.0));
        a.push(v);
        b.push(w);
    }
    const auto ua = bulkspace::ppe_estimate(a, 0, 2);
    const auto ub = bulkspace::ppe_estimate(b, 0, 2);
    REQUIRE(ua.has_value());
    REQUIRE(ub.has_value());
    CHECK(bulkspace::sin_theta_distance(*ua, *ub) < 1e-10);
}

TEST_CASE("ppe finds the oscillating descent modes of a quadratic") {
    // gradient descent on diag(5, 4, 1, 1) with eta = 0.45: the two leading
    // modes flip sign each step and decay slowest, so a late window of
    // updates concentrates on span{e1, e2}
    const Vec lambdas{5.0, 4.0, 1.0, 1.0};
    const Vec x0(4, 1.0);
    const double eta = 0.45;
    UpdateHistory h(BlockPartition::single(4), 8);
    for (std::size_t s = 0; s < 30; ++s) {
        Vec g = oracles::gd_gradient_at(lambdas, x0, eta, s);
        bulkspace::scale(g, -eta);
        h.push(g);
    }
    const auto u2 = bulkspace::ppe_estimate(h, 0, 2);
    REQUIRE(u2.has_value());
    CHECK(bulkspace::sin_theta_distance(*u2, coords_basis(4, {0, 1})) < 1e-3);
    const auto u1 = bulkspace::ppe_estimate(h, 0, 1);
    REQUIRE(u1.has_value());
    CHECK(bulkspace::sin_theta_distance(*u1, coords_basis(4, {0})) < 1e-4);
}

TEST_CASE("lpe solves a small quadratic exactly") {
    const bulkspace::QuadraticProblem prob(Vec{3.0, 2.0, 1.0});
    const bulkspace::QuadraticOracle oracle(prob);
    const LpeResult r = bulkspace::lpe_estimate(oracle, Vec(3, 0.0), 2, 10, 1);
    REQUIRE(r.eigenvalues.size() == 2);
    CHECK(r.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(r.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r.breakdown); // three iterations exhaust R^3
    CHECK(std::fabs(r.basis(0, 0)) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::fabs(r.basis(1, 1)) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(oracles::ortho_defect(r.basis) < 1e-10);
}

TEST_CASE("lpe on a one-dimensional problem returns the single eigenpair") {
    const bulkspace::QuadraticProblem prob(Vec{2.0});
    const bulkspace::QuadraticOracle oracle(prob);
    const LpeResult r = bulkspace::lpe_estimate(oracle, Vec(1, 0.0), 1, 3, 5);
    REQUIRE(r.eigenvalues.size() == 1);
    CHECK(r.eigenvalues[0] == doctest::Approx(2.0));
    CHECK(std::fabs(r.basis(0, 0)) == doctest::Approx(1.0));
    CHECK(r.breakdown);
}

TEST_CASE("lpe breaks down immediately on an isotropic Hessian") {
    DenseMatrix a(3, 3);
    for (std::size_t i = 0; i < 3; ++i) a(i, i) = 2.0;
    const oracles::MatrixOracle oracle(a);
    const LpeResult r = bulkspace::lpe_estimate(oracle, Vec(3, 0.0), 2, 3, 7);
    CHECK(r.breakdown);
    REQUIRE(r.eigenvalues.size() == 1); // Krylov space collapsed after one vector
    CHECK(r.eigenvalues[0] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("lpe matches a dense eigensolve on a random SPD matrix") {
    const DenseMatrix a = oracles::random_spd(12, 21);
    const oracles::MatrixOracle oracle(a);
    const oracles::Eig dense = oracles::jacobi_eigh(a);
    const LpeResult r = bulkspace::lpe_estimate(oracle, Vec(12, 0.0), 3, 12, 3);
    REQUIRE(r.eigenvalues.size() == 3);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(r.eigenvalues[j] ==
              doctest::Approx(dense.values[j]).epsilon(1e-8));
    // residual check: A u = lambda u
    for (std::size_t j = 0; j < 3; ++j) {
        const Vec u = r.basis.col(j);
        const Vec au = a.matvec(u);
        for (std::size_t i = 0; i < 12; ++i)
            CHECK(au[i] == doctest::Approx(r.eigenvalues[j] * u[i]).epsilon(1e-7));
    }
}

TEST_CASE("lpe probes a small network against the assembled Hessian") {
    const bulkspace::Dataset d = bulkspace::make_two_moons(8, 0.1, 2);
    const bulkspace::MlpProblem p({2, 3, 2}, bulkspace::Activation::tanh,
                                  bulkspace::LossKind::cross_entropy, d);
    const bulkspace::MlpOracle oracle(p, 4);
    const Vec theta = p.init_params(3, 0.9);

    const DenseMatrix h = oracles::assemble_hessian(oracle, theta);
    const oracles::Eig dense = oracles::jacobi_eigh(h);
    const LpeResult r = bulkspace::lpe_estimate(oracle, theta, 1, p.dim(), 9);
    CHECK(r.eigenvalues[0] ==
          doctest::Approx(dense.values[0]).epsilon(1e-6));
}

TEST_CASE("lpe is deterministic in the seed") {
    const bulkspace::QuadraticProblem prob =
        bulkspace::QuadraticProblem::with_random_rotation(Vec{4.0, 2.0, 1.0, 0.5, 0.1}, 31);
    const bulkspace::QuadraticOracle oracle(prob);
    const Vec theta = oracles::random_vec(5, 32);
    const LpeResult a = bulkspace::lpe_estimate(oracle, theta, 2, 5, 11);
    const LpeResult b = bulkspace::lpe_estimate(oracle, theta, 2, 5, 11);
    CHECK(a.eigenvalues == b.eigenvalues);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(a.basis(i, j) == b.basis(i, j));
}

TEST_CASE("lpe validates its arguments") {
    const bulkspace::QuadraticProblem prob(Vec{2.0, 1.0});
    const bulkspace::QuadraticOracle oracle(prob);
    CHECK_THROWS_AS(bulkspace::lpe_estimate(oracle, Vec(2, 0.0), 0, 5, 1),
                    bulkspace::ValidationError);
    CHECK_THROWS_AS(bulkspace::lpe_estimate(oracle, Vec(2, 0.0), 3, 2, 1),
                    bulkspace::ValidationError);
    CHECK_THROWS_AS(bulkspace::lpe_estimate(oracle, Vec(3, 0.0), 1, 5, 1),
                    bulkspace::DimensionError);

    struct BadOracle : bulkspace::HvpOracle {
        std::size_t dim() const override { return 2; }
        double loss_at(const Vec&) const override { return 0.0; }
        Vec grad_at(const Vec&) const override { return Vec(2, 0.0); }
        Vec hvp_at(const Vec&, const Vec&) const override {
            return Vec{std::nan(""), 0.0};
        }
    } bad;
    CHECK_THROWS_AS(bulkspace::lpe_estimate(bad, Vec(2, 0.0), 1, 2, 1),
                    bulkspace::NumericError);
}

TEST_CASE("bppe on a single block equals the plain estimator") {
    UpdateHistory h(BlockPartition::single(5), 6);
    for (uint64_t s = 0; s < 6; ++s) h.push(oracles::random_vec(5, 400 + s));
    const auto direct = bulkspace::ppe_estimate(h, 0, 2);
    const Projector p = bulkspace::bppe_estimate(h, 2, 0.5, 2.0);
    REQUIRE(direct.has_value());
    REQUIRE(p.bases[0].has_value());
    CHECK(p.alpha == 0.5);
    CHECK(p.gamma == 2.0);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK((*p.bases[0])(i, j) == (*direct)(i, j));
}

TEST_CASE("bppe skips excluded roles and unready blocks") {
    UpdateHistory h(two_blocks(4, 3, BlockRole::mlp_like, BlockRole::output), 6);
    for (uint64_t s = 0; s < 6; ++s) h.push(oracles::random_vec(7, 500 + s));
    const Projector p = bulkspace::bppe_estimate(h, 2, 0.5, 1.0, {BlockRole::output});
    CHECK(p.bases[0].has_value());
    CHECK_FALSE(p.bases[1].has_value());

    // with k above the narrow block's width only the wide block gets a basis
    const Projector q = bulkspace::bppe_estimate(h, 4, 0.5, 1.0);
    CHECK(q.bases[0].has_value());
    CHECK_FALSE(q.bases[1].has_value());

    CHECK_THROWS_AS(bulkspace::bppe_estimate(h, 2, -0.1, 1.0), bulkspace::ValidationError);
    CHECK_THROWS_AS(bulkspace::bppe_estimate(h, 2, 0.5, std::nan("")),
                    bulkspace::ValidationError);
}

TEST_CASE("projection variance on hand-built windows") {
    // identical updates carry no variance on either side
    UpdateHistory same(BlockPartition::single(3), 4);
    same.push(Vec{1.0, 2.0, 0.0});
    same.push(Vec{1.0, 2.0, 0.0});
    const auto s = bulkspace::projection_variance(same, coords_basis(3, {0}));
    CHECK(s.dom_var == doctest::Approx(0.0));
    CHECK(s.bulk_var == doctest::Approx(0.0));

    // alternating +-e1 against basis e1: all variance is dominant
    UpdateHistory flip(BlockPartition::single(3), 4);
    flip.push(unit(3, 0, 1.0));
    flip.push(unit(3, 0, -1.0));
    flip.push(unit(3, 0, 1.0));
    flip.push(unit(3, 0, -1.0));
    const auto f = bulkspace::projection_variance(flip, coords_basis(3, {0}));
    CHECK(f.dom_var == doctest::Approx(1.0));
    CHECK(f.bulk_var == doctest::Approx(0.0));

    // half e1, half e2 against basis e1: 0.25 on each side
    UpdateHistory mix(BlockPartition::single(3), 4);
    mix.push(unit(3, 0));
    mix.push(unit(3, 1));
    const auto m = bulkspace::projection_variance(mix, coords_basis(3, {0}));
    CHECK(m.dom_var == doctest::Approx(0.25));
    CHECK(m.bulk_var == doctest::Approx(0.25));
}

TEST_CASE("projection variance validates its inputs") {
    UpdateHistory multi(two_blocks(2, 2), 4);
    multi.push(Vec(4, 1.0));
    multi.push(Vec(4, 2.0));
    CHECK_THROWS_AS(bulkspace::projection_variance(multi, coords_basis(4, {0})),
                    bulkspace::ValidationError);

    UpdateHistory thin(BlockPartition::single(3), 4);
    thin.push(Vec(3, 1.0));
    CHECK_THROWS_AS(bulkspace::projection_variance(thin, coords_basis(3, {0})),
                    bulkspace::ValidationError);
    thin.push(Vec(3, 2.0));
    CHECK_THROWS_AS(bulkspace::projection_variance(thin, coords_basis(2, {0})),
                    bulkspace::DimensionError);
}

} // TEST_SUITE
