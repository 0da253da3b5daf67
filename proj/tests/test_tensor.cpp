// SPDX-License-Identifier: Apache-2.0
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

namespace {

/// Brute-force expansion oracle: direct triple summation, no shared code with
/// kt::expand's flat-index walk.
double expand_entry_oracle(const kt::CPDecomposition& cp, const std::vector<int>& idx) {
    double e = 0.0;
    for (int r = 0; r < cp.rank(); ++r) {
        double p = 1.0;
        for (int j = 0; j < cp.order(); ++j) p *= cp.factors[static_cast<size_t>(j)](idx[static_cast<size_t>(j)], r);
        e += p;
    }
    return e;
}

kt::CPDecomposition random_cp(kt::Rng& rng, const std::vector<int>& shape, int rank) {
    std::vector<Eigen::MatrixXd> f;
    for (int n : shape) {
        Eigen::MatrixXd m(n, rank);
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < rank; ++r) m(i, r) = rng.uniform(-1.0, 1.0);
        f.push_back(std::move(m));
    }
    return kt::CPDecomposition(std::move(f));
}

}  // namespace

TEST_CASE("expand: rank-1 all-ones factors give the all-ones tensor") {
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(2, 1);
    kt::DenseTensor t = kt::expand(kt::CPDecomposition({ones, ones, ones}));
    REQUIRE(t.shape() == std::vector<int>{2, 2, 2});
    for (double v : t.values()) REQUIRE(v == 1.0);
}

TEST_CASE("expand: orthogonal diagonal rank-2 case") {
    Eigen::MatrixXd e12 = Eigen::MatrixXd::Identity(2, 2);
    kt::DenseTensor t = kt::expand(kt::CPDecomposition({e12, e12, e12}));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
                const double want = (i == j && j == k) ? 1.0 : 0.0;
                REQUIRE(t.at({i, j, k}) == want);
            }
}

TEST_CASE("expand: random rank-2 instance matches direct summation oracle") {
    kt::Rng rng(7);
    kt::CPDecomposition cp = random_cp(rng, {3, 3, 3}, 2);
    kt::DenseTensor t = kt::expand(cp);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                REQUIRE(t.at({i, j, k}) == Catch::Approx(expand_entry_oracle(cp, {i, j, k})).margin(1e-14));
}

TEST_CASE("expand: multilinear in each factor column") {
    kt::Rng rng(11);
    kt::CPDecomposition cp = random_cp(rng, {2, 3, 2}, 2);
    kt::DenseTensor base = kt::expand(cp);
    const double lambda = 2.5;
    kt::CPDecomposition scaled = cp;
    scaled.factors[1].col(0) *= lambda;
    kt::DenseTensor t = kt::expand(scaled);
    // difference equals (lambda - 1) times the first rank-1 term
    kt::CPDecomposition term1({cp.factors[0].col(0), cp.factors[1].col(0), cp.factors[2].col(0)});
    kt::DenseTensor t1 = kt::expand(term1);
    std::vector<int> idx(3, 0);
    do {
        REQUIRE(t.at(idx) - base.at(idx) ==
                Catch::Approx((lambda - 1.0) * t1.at(idx)).margin(1e-12));
    } while (kt::next_index(idx, base.shape()));
}

TEST_CASE("frobenius_distance: invariant under a common column permutation") {
    kt::Rng rng(13);
    kt::CPDecomposition a = random_cp(rng, {3, 2, 3}, 3);
    kt::CPDecomposition b = random_cp(rng, {3, 2, 3}, 3);
    auto permute = [](const kt::CPDecomposition& cp) {
        kt::CPDecomposition out = cp;
        for (auto& f : out.factors) {
            Eigen::MatrixXd g = f;
            f.col(0) = g.col(2);
            f.col(1) = g.col(0);
            f.col(2) = g.col(1);
        }
        return out;
    };
    const double d1 = kt::frobenius_distance(kt::expand(a), kt::expand(b));
    const double d2 = kt::frobenius_distance(kt::expand(permute(a)), kt::expand(permute(b)));
    REQUIRE(d1 == Catch::Approx(d2).margin(1e-12));
}

TEST_CASE("symmetric_cp: single ones column at order 3 gives the all-ones tensor") {
    Eigen::MatrixXd u = Eigen::MatrixXd::Ones(2, 1);
    kt::DenseTensor t = kt::expand(kt::symmetric_cp(u, 3));
    for (double v : t.values()) REQUIRE(v == 1.0);
}

TEST_CASE("symmetric_cp: matches the explicit copy list and is mode-symmetric") {
    kt::Rng rng(17);
    Eigen::MatrixXd u(3, 2);
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 2; ++r) u(i, r) = rng.uniform(-1.0, 1.0);
    kt::DenseTensor t = kt::expand(kt::symmetric_cp(u, 3));
    kt::DenseTensor t2 = kt::expand(kt::CPDecomposition({u, u, u}));
    REQUIRE(kt::frobenius_distance(t, t2) == 0.0);
    // symmetry: entry invariant under permuting indices
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) {
                REQUIRE(t.at({i, j, k}) == Catch::Approx(t.at({j, i, k})).margin(1e-14));
                REQUIRE(t.at({i, j, k}) == Catch::Approx(t.at({k, j, i})).margin(1e-14));
            }
}

TEST_CASE("frobenius_distance: basic oracles") {
    kt::Rng rng(19);
    std::vector<double> v(8);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    kt::DenseTensor a({2, 2, 2}, v);
    REQUIRE(kt::frobenius_distance(a, a) == 0.0);

    std::vector<double> w = v;
    for (auto& x : w) x += 1.0;
    kt::DenseTensor b({2, 2, 2}, w);
    REQUIRE(kt::frobenius_distance(a, b) == Catch::Approx(std::sqrt(8.0)).margin(1e-12));

    std::vector<double> u(8);
    for (auto& x : u) x = rng.uniform(-1.0, 1.0);
    kt::DenseTensor c({2, 2, 2}, u);
    double s = 0.0;
    for (int i = 0; i < 8; ++i) s += (v[static_cast<size_t>(i)] - u[static_cast<size_t>(i)]) * (v[static_cast<size_t>(i)] - u[static_cast<size_t>(i)]);
    REQUIRE(kt::frobenius_distance(a, c) == Catch::Approx(std::sqrt(s)).margin(1e-12));

    REQUIRE_THROWS_AS(kt::frobenius_distance(a, kt::DenseTensor::zeros({2, 2})), kt::TensorError);
}

TEST_CASE("unfold: 2x2x2 with values 1..8 matches the index formula") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
    kt::DenseTensor t({2, 2, 2}, v);
    Eigen::MatrixXd m = kt::unfold(t, 0);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) REQUIRE(m(i, 2 * j + k) == t.at({i, j, k}));
}

TEST_CASE("unfold: rank-1 tensor unfolds to columns proportional to the mode vector") {
    kt::Rng rng(23);
    Eigen::VectorXd a = rng.normal_vector(3), b = rng.normal_vector(2), c = rng.normal_vector(4);
    kt::DenseTensor t = kt::expand(kt::CPDecomposition({a, b, c}));
    Eigen::MatrixXd m = kt::unfold(t, 0);
    for (Eigen::Index col = 0; col < m.cols(); ++col) {
        // column is a scalar multiple of a
        Eigen::MatrixXd two(3, 2);
        two.col(0) = a;
        two.col(1) = m.col(col);
        Eigen::JacobiSVD<Eigen::MatrixXd> dec(two);
        REQUIRE(dec.singularValues()(1) == Catch::Approx(0.0).margin(1e-10));
    }
}

TEST_CASE("unfold then refold is the identity on every mode") {
    kt::Rng rng(29);
    std::vector<double> v(24);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    kt::DenseTensor t({2, 3, 4}, v);
    for (int mode = 0; mode < 3; ++mode) {
        kt::DenseTensor back = kt::refold(kt::unfold(t, mode), t.shape(), mode);
        REQUIRE(kt::frobenius_distance(t, back) == 0.0);
    }
}

TEST_CASE("khatri_rao: identity columns") {
    Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd m = kt::khatri_rao(i2, i2);
    REQUIRE(m.rows() == 4);
    // column r is vec(e_r e_r^T) in row-major order
    Eigen::MatrixXd want = Eigen::MatrixXd::Zero(4, 2);
    want(0, 0) = 1.0;
    want(3, 1) = 1.0;
    REQUIRE((m - want).norm() == 0.0);
}

TEST_CASE("khatri_rao: consistent with unfolding of an expansion") {
    kt::Rng rng(31);
    kt::CPDecomposition cp = random_cp(rng, {3, 4, 2}, 3);
    Eigen::MatrixXd lhs = kt::unfold(kt::expand(cp), 2);
    Eigen::MatrixXd rhs = cp.factors[2] * kt::khatri_rao(cp.factors[0], cp.factors[1]).transpose();
    REQUIRE((lhs - rhs).norm() < 1e-12);
}

TEST_CASE("khatri_rao: entries match direct enumeration") {
    kt::Rng rng(37);
    Eigen::MatrixXd a = rng.normal_matrix(3, 4), b = rng.normal_matrix(3, 4);
    Eigen::MatrixXd m = kt::khatri_rao(a, b);
    for (int r = 0; r < 4; ++r)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) REQUIRE(m(3 * i + j, r) == a(i, r) * b(j, r));
    REQUIRE_THROWS_AS(kt::khatri_rao(a, rng.normal_matrix(3, 2)), kt::TensorError);
}

TEST_CASE("mode_contract: indicator picks a slice, zero gives zero") {
    kt::Rng rng(41);
    std::vector<double> v(27);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    kt::DenseTensor t({3, 3, 3}, v);
    for (int i = 0; i < 3; ++i) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
        e(i) = 1.0;
        Eigen::MatrixXd slice = kt::mode_contract(t, 2, e);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) REQUIRE(slice(a, b) == t.at({a, b, i}));
    }
    REQUIRE(kt::mode_contract(t, 1, Eigen::VectorXd::Zero(3)).norm() == 0.0);
}

TEST_CASE("mode_contract: algebraic identity and linearity") {
    kt::Rng rng(43);
    kt::CPDecomposition cp = random_cp(rng, {3, 3, 3}, 2);
    kt::DenseTensor t = kt::expand(cp);
    Eigen::VectorXd x = rng.normal_vector(3), y = rng.normal_vector(3);

    Eigen::MatrixXd got = kt::mode_contract(t, 2, x);
    Eigen::MatrixXd want = cp.factors[0] *
                           (cp.factors[2].transpose() * x).asDiagonal() *
                           cp.factors[1].transpose();
    REQUIRE((got - want).norm() < 1e-10);

    const double alpha = 0.7, beta = -1.3;
    Eigen::MatrixXd lin = kt::mode_contract(t, 2, alpha * x + beta * y);
    Eigen::MatrixXd sum = alpha * kt::mode_contract(t, 2, x) + beta * kt::mode_contract(t, 2, y);
    REQUIRE((lin - sum).norm() < 1e-12);
}

TEST_CASE("construction guards: shape checks, order cap, overflow") {
    REQUIRE_THROWS_AS(kt::DenseTensor({2, 2}, {1.0, 2.0, 3.0}), kt::TensorError);
    REQUIRE_THROWS_AS(kt::DenseTensor::zeros({2, 0}), kt::TensorError);
    REQUIRE_THROWS_AS(kt::DenseTensor::zeros({2, 2, 2, 2, 2, 2, 2, 2, 2}), kt::TensorError);
    REQUIRE_NOTHROW(kt::DenseTensor::zeros({2, 2, 2, 2, 2, 2, 2, 2, 2}, 9));
    REQUIRE_THROWS_AS(kt::DenseTensor::zeros({1000000, 1000000, 1000000}), kt::TensorError);
    REQUIRE_THROWS_AS(kt::BoundsSpec::uniform(0.0, 3), kt::TensorError);
    REQUIRE_THROWS_AS((kt::BoundsSpec{{1.0, -1.0}}.validate()), kt::TensorError);
    Eigen::MatrixXd a(2, 2), b(2, 3);
    a.setOnes();
    b.setOnes();
    REQUIRE_THROWS_AS(kt::CPDecomposition({a, b}), kt::TensorError);
}
