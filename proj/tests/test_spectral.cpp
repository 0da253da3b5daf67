// SPDX-License-Identifier: Apache-2.0
#include "kt/rng.hpp"
#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace {

/// Eigenvalues of a symmetric 3x3 matrix by the trigonometric closed form of
/// the characteristic polynomial (independent of any SVD routine).
std::vector<double> symmetric3_eigenvalues(const Eigen::Matrix3d& a) {
    const double q = a.trace() / 3.0;
    Eigen::Matrix3d b = a - q * Eigen::Matrix3d::Identity();
    const double p2 = (b * b).trace() / 6.0;
    const double p = std::sqrt(std::max(p2, 0.0));
    if (p < 1e-14) return {q, q, q};
    const double det = (b / p).determinant() / 2.0;
    const double phi = std::acos(std::clamp(det, -1.0, 1.0)) / 3.0;
    std::vector<double> ev{q + 2.0 * p * std::cos(phi),
                           q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0),
                           q + 2.0 * p * std::cos(phi + 4.0 * M_PI / 3.0)};
    std::sort(ev.begin(), ev.end(), std::greater<double>());
    return ev;
}

/// Brute-force robust Kruskal rank: checks every subset size exhaustively.
int krank_oracle(const Eigen::MatrixXd& a, double tau) {
    const int R = static_cast<int>(a.cols());
    const int n = static_cast<int>(a.rows());
    int best = 0;
    for (int k = 1; k <= R; ++k) {
        if (k > n) return best;
        bool all_ok = true;
        std::vector<int> pick(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) pick[static_cast<size_t>(i)] = i;
        while (true) {
            Eigen::MatrixXd sub(n, k);
            for (int i = 0; i < k; ++i) sub.col(i) = a.col(pick[static_cast<size_t>(i)]);
            Eigen::JacobiSVD<Eigen::MatrixXd> dec(sub);
            if (dec.singularValues()(k - 1) < 1.0 / tau) {
                all_ok = false;
                break;
            }
            int i = k - 1;
            while (i >= 0 && pick[static_cast<size_t>(i)] == R - k + i) --i;
            if (i < 0) break;
            ++pick[static_cast<size_t>(i)];
            for (int j = i + 1; j < k; ++j) pick[static_cast<size_t>(j)] = pick[static_cast<size_t>(j - 1)] + 1;
        }
        if (!all_ok) return best;
        best = k;
    }
    return best;
}

}  // namespace

TEST_CASE("svd: identity and diagonal oracles") {
    kt::SvdResult r = kt::svd(Eigen::MatrixXd::Identity(3, 3));
    for (int i = 0; i < 3; ++i) REQUIRE(r.singular_values(i) == Catch::Approx(1.0).margin(1e-12));

    Eigen::MatrixXd d = Eigen::Vector3d(3.0, 2.0, 1.0).asDiagonal();
    r = kt::svd(d);
    REQUIRE(r.singular_values(0) == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(r.singular_values(1) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(r.singular_values(2) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("svd: reconstruction, descending order, sign convention, eigenvalue oracle") {
    kt::Rng rng(101);
    Eigen::MatrixXd m = rng.normal_matrix(5, 3);
    kt::SvdResult r = kt::svd(m);
    Eigen::MatrixXd rec = r.left * r.singular_values.asDiagonal() * r.right.transpose();
    REQUIRE((m - rec).norm() <= 1e-9 * m.norm());
    for (int i = 0; i + 1 < r.singular_values.size(); ++i)
        REQUIRE(r.singular_values(i) >= r.singular_values(i + 1));
    for (Eigen::Index c = 0; c < r.left.cols(); ++c) {
        Eigen::Index imax;
        r.left.col(c).cwiseAbs().maxCoeff(&imax);
        REQUIRE(r.left(imax, c) > 0.0);
    }
    // sigma_i^2 are the eigenvalues of m^T m, via the characteristic
    // polynomial of the 3x3 Gram matrix
    Eigen::Matrix3d gram = (m.transpose() * m).eval();
    std::vector<double> ev = symmetric3_eigenvalues(gram);
    for (int i = 0; i < 3; ++i)
        REQUIRE(r.singular_values(i) * r.singular_values(i) == Catch::Approx(ev[static_cast<size_t>(i)]).margin(1e-9));

    Eigen::MatrixXd bad = m;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(kt::svd(bad), kt::NumericalFailure);
}

TEST_CASE("top_r_subspace: rank-1 and diagonal residual oracles") {
    kt::Rng rng(103);
    Eigen::VectorXd a = rng.normal_vector(4), b = rng.normal_vector(3);
    Eigen::MatrixXd rank1 = a * b.transpose();
    kt::SubspaceProjector p = kt::top_r_subspace(rank1, 1);
    REQUIRE((rank1 - p.project(rank1)).norm() < 1e-10);
    REQUIRE((p.basis.transpose() * p.basis - Eigen::MatrixXd::Identity(1, 1)).norm() < 1e-10);

    Eigen::MatrixXd d = Eigen::Vector3d(3.0, 2.0, 1.0).asDiagonal();
    p = kt::top_r_subspace(d, 2);
    REQUIRE((d - p.project(d)).norm() == Catch::Approx(1.0).margin(1e-10));

    REQUIRE_THROWS_AS(kt::top_r_subspace(d, 4), kt::TensorError);
}

TEST_CASE("top_r_subspace: beats random rank-r projectors (Eckart-Young)") {
    kt::Rng rng(107);
    Eigen::MatrixXd m = rng.normal_matrix(5, 5);
    kt::SubspaceProjector best = kt::top_r_subspace(m, 2);
    const double opt = (m - best.project(m)).norm();
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd q = rng.normal_matrix(5, 2);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
        Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(5, 2);
        const double res = (m - basis * (basis.transpose() * m)).norm();
        REQUIRE(opt <= res + 1e-10);
    }
}

TEST_CASE("top_r_subspace: residual bounded by planted noise") {
    kt::Rng rng(109);
    Eigen::MatrixXd a = rng.normal_matrix(5, 2), x = rng.normal_matrix(2, 7);
    Eigen::MatrixXd noise = rng.normal_matrix(5, 7);
    noise *= 0.01 / noise.norm();
    Eigen::MatrixXd m = a * x + noise;
    kt::SubspaceProjector p = kt::top_r_subspace(m, 2);
    REQUIRE((m - p.project(m)).norm() <= 0.01 + 1e-12);
}

TEST_CASE("robust_krank: identity, duplicate column, zero matrix") {
    REQUIRE(kt::robust_krank(Eigen::MatrixXd::Identity(3, 3), 1.0).krank == 3);

    Eigen::MatrixXd dup(3, 3);
    dup.col(0) = Eigen::Vector3d(1, 0, 0);
    dup.col(1) = Eigen::Vector3d(0, 1, 0);
    dup.col(2) = Eigen::Vector3d(1, 0, 0);
    kt::KrankCertificate c = kt::robust_krank(dup, 1000.0);
    REQUIRE(c.krank == 1);
    REQUIRE(c.witness_columns == std::vector<int>{0, 2});
    REQUIRE(c.witness_sigma < 1e-3);

    kt::KrankCertificate z = kt::robust_krank(Eigen::MatrixXd::Zero(3, 2), 10.0);
    REQUIRE(z.krank == 0);
    REQUIRE(z.witness_columns.size() == 1);
}

TEST_CASE("robust_krank: matches the exhaustive oracle on random matrices") {
    kt::Rng rng(113);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(4));
        const int R = 2 + static_cast<int>(rng.uniform_index(5));
        Eigen::MatrixXd a = rng.normal_matrix(n, R);
        for (int r = 0; r < R; ++r) a.col(r).normalize();
        for (double tau : {1.0, 10.0, 100.0}) {
            kt::KrankCertificate c = kt::robust_krank(a, tau);
            REQUIRE(c.krank == krank_oracle(a, tau));
            if (c.krank < R) {
                REQUIRE(static_cast<int>(c.witness_columns.size()) == std::min(c.krank + 1, n + 1));
                REQUIRE(c.witness_sigma < 1.0 / tau);
            }
        }
    }
}

TEST_CASE("robust_krank: monotone in tau, budget is a checked refusal") {
    kt::Rng rng(127);
    Eigen::MatrixXd a = rng.normal_matrix(4, 6);
    int prev = -1;
    for (double tau : {1.0, 2.0, 5.0, 20.0, 1000.0}) {
        const int k = kt::robust_krank(a, tau).krank;
        if (prev >= 0) REQUIRE(k >= prev);
        prev = k;
    }
    REQUIRE_THROWS_AS(kt::robust_krank(rng.normal_matrix(4, 30), 10.0, 100), kt::BudgetExceeded);
}

TEST_CASE("check_kruskal_condition: identity factors pass with margin n-2") {
    for (int n : {2, 3, 4}) {
        Eigen::MatrixXd i = Eigen::MatrixXd::Identity(n, n);
        kt::KruskalReport rep =
            kt::check_kruskal_condition(kt::CPDecomposition({i, i, i}), {1.0, 1.0, 1.0});
        REQUIRE(rep.krank_sum == 3 * n);
        REQUIRE(rep.margin == n - 2);
        REQUIRE(rep.pass);
    }
}

TEST_CASE("check_kruskal_condition: parallel columns drop a mode to krank 1") {
    Eigen::MatrixXd good(3, 2);
    good << 1, 0, 0, 1, 0, 0;
    Eigen::MatrixXd par(3, 2);
    par.col(0) = Eigen::Vector3d(1, 0, 0);
    par.col(1) = Eigen::Vector3d(1, 0, 0);
    // R = 2, l = 3 needs sum >= 6; kranks are 2 + 2 + 1 = 5 -> fail
    kt::KruskalReport rep =
        kt::check_kruskal_condition(kt::CPDecomposition({good, good, par}), {10.0, 10.0, 10.0});
    REQUIRE(rep.per_mode[2].krank == 1);
    REQUIRE(rep.krank_sum == 5);
    REQUIRE_FALSE(rep.pass);
}

TEST_CASE("check_kruskal_condition: margin matches per-mode oracle kranks") {
    kt::Rng rng(131);
    Eigen::MatrixXd a = rng.normal_matrix(5, 3), b = rng.normal_matrix(5, 3),
                    c = rng.normal_matrix(5, 3);
    kt::KruskalReport rep =
        kt::check_kruskal_condition(kt::CPDecomposition({a, b, c}), {50.0, 50.0, 50.0});
    const int sum = krank_oracle(a, 50.0) + krank_oracle(b, 50.0) + krank_oracle(c, 50.0);
    REQUIRE(rep.krank_sum == sum);
    REQUIRE(rep.margin == sum - (2 * 3 + 3 - 1));
    REQUIRE(rep.pass == (rep.margin >= 0));
}

TEST_CASE("find_separating_vector: oracle examples and direct verification") {
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3);
    e1(0) = 1.0;
    kt::SeparatingVector s = kt::find_separating_vector({e1}, 1.0);
    REQUIRE(std::abs(s.w.norm() - 1.0) < 1e-12);
    REQUIRE(std::abs(s.w.dot(e1)) > 1.0 / (20.0 * 3.0));

    kt::SeparatingVector s2 = kt::find_separating_vector({e1, -e1}, 1.0);
    REQUIRE(std::abs(s2.w.dot(e1)) > s2.threshold);

    kt::Rng rng(137);
    std::vector<Eigen::VectorXd> vs;
    for (int i = 0; i < 10; ++i) {
        Eigen::VectorXd v = rng.normal_vector(5);
        v.normalize();
        vs.push_back(v);
    }
    kt::SeparatingVector s3 = kt::find_separating_vector(vs, 0.5, 7);
    REQUIRE(s3.threshold == Catch::Approx(0.5 / (20.0 * 5.0 * 10.0)).margin(1e-15));
    for (const auto& v : vs) REQUIRE(std::abs(s3.w.dot(v)) > s3.threshold);

    REQUIRE_THROWS_AS(kt::find_separating_vector({0.1 * e1}, 1.0), kt::TensorError);
}

TEST_CASE("nz_count: oracle examples") {
    Eigen::VectorXd v(3);
    v << 1.0, 0.0, -0.5;
    REQUIRE(kt::nz_count(v, 0.6) == 1);
    REQUIRE(kt::nz_count(Eigen::VectorXd::Zero(4), 0.1) == 0);

    kt::Rng rng(139);
    Eigen::VectorXd w = rng.normal_vector(20);
    const double eps = 0.5;
    int direct = 0;
    for (int i = 0; i < 20; ++i)
        if (std::abs(w(i)) >= eps) ++direct;
    REQUIRE(kt::nz_count(w, eps) == direct);
    REQUIRE(kt::nz_count(w, 0.0) == 20);
}

TEST_CASE("singular values of products: sigma_l(PQ) >= sigma_(l+m-i)(P) sigma_i(Q)") {
    kt::Rng rng(149);
    for (int trial = 0; trial < 25; ++trial) {
        const int p = 2 + static_cast<int>(rng.uniform_index(4));
        const int m = 2 + static_cast<int>(rng.uniform_index(4));
        const int q = 2 + static_cast<int>(rng.uniform_index(4));
        Eigen::MatrixXd P = rng.normal_matrix(p, m), Q = rng.normal_matrix(m, q);
        Eigen::JacobiSVD<Eigen::MatrixXd> sp(P), sq(Q), spq(P * Q);
        auto sv = [](const Eigen::JacobiSVD<Eigen::MatrixXd>& s, int one_based) {
            if (one_based < 1 || one_based > s.singularValues().size()) return 0.0;
            return s.singularValues()(one_based - 1);
        };
        for (int l = 1; l <= spq.singularValues().size(); ++l)
            for (int i = 1; i <= m; ++i) {
                if (l + m - i < 1) continue;
                REQUIRE(sv(spq, l) >= sv(sp, l + m - i) * sv(sq, i) - 1e-9);
            }
    }
}

TEST_CASE("near-null combinations of well-conditioned columns have small weights") {
    // if sigma_k(X) >= 1/tau and ||sum alpha_i X_i|| < eps then ||alpha|| <= tau eps
    kt::Rng rng(151);
    for (int trial = 0; trial < 25; ++trial) {
        Eigen::MatrixXd x = rng.normal_matrix(6, 4);
        const double smin = kt::sigma_min(x);
        if (smin < 1e-3) continue;
        const double tau = 1.0 / smin;
        Eigen::VectorXd alpha = rng.normal_vector(4);
        const double eps = (x * alpha).norm();
        REQUIRE(alpha.norm() <= tau * eps + 1e-9);
    }
}

TEST_CASE("Khatri-Rao K-rank lower bound on random pairs") {
    kt::Rng rng(157);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_index(2));
        const int R = 3 + static_cast<int>(rng.uniform_index(3));
        Eigen::MatrixXd a = rng.normal_matrix(n, R), b = rng.normal_matrix(n, R);
        for (int r = 0; r < R; ++r) {
            a.col(r).normalize();
            b.col(r).normalize();
        }
        const double tau = 100.0;
        const int ka = kt::robust_krank(a, tau).krank;
        const int kb = kt::robust_krank(b, tau).krank;
        if (ka + kb == 0) continue;
        const double tau_kr = tau * tau * std::sqrt(static_cast<double>(ka + kb));
        const int k_kr = kt::robust_krank(kt::khatri_rao(a, b), tau_kr).krank;
        REQUIRE(k_kr >= std::min(ka + kb - 1, R));
    }
}

TEST_CASE("Khatri-Rao K-rank tightness: [I | Q] squared caps at 2n-1") {
    kt::Rng rng(163);
    const int n = 3;
    Eigen::MatrixXd q = rng.normal_matrix(n, n);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    Eigen::MatrixXd orth = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd a(n, 2 * n);
    a << Eigen::MatrixXd::Identity(n, n), orth;
    // the first n and last n columns of a (kr) a sum to the same vector, so
    // 2n columns are dependent at every tau
    for (double tau : {10.0, 1000.0, 1e6}) {
        REQUIRE(kt::robust_krank(kt::khatri_rao(a, a), tau).krank <= 2 * n - 1);
    }
}

TEST_CASE("columns close to a low-dimensional subspace are few") {
    // for well-conditioned A and an l-dim subspace, at most l columns are
    // 1/(tau sqrt(l))-close to it
    kt::Rng rng(167);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 6, R = 4, l = 2;
        Eigen::MatrixXd a = rng.normal_matrix(n, R);
        for (int r = 0; r < R; ++r) a.col(r).normalize();
        const double smin = kt::sigma_min(a);
        if (smin < 0.2) continue;
        const double tau = 1.0 / smin;
        Eigen::MatrixXd s = rng.normal_matrix(n, l);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(s);
        Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(n, l);
        int close = 0;
        for (int r = 0; r < R; ++r) {
            Eigen::VectorXd res = a.col(r) - basis * (basis.transpose() * a.col(r));
            if (res.norm() < 1.0 / (tau * std::sqrt(static_cast<double>(l)))) ++close;
        }
        REQUIRE(close <= l);
    }
}
