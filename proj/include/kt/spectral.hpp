// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kt/rng.hpp"
#include "kt/tensor.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace kt {

class BudgetExceeded : public TensorError {
public:
    using TensorError::TensorError;
};

class NumericalFailure : public TensorError {
public:
    using TensorError::TensorError;
};

struct SvdResult {
    Eigen::VectorXd singular_values;  // descending, nonnegative
    Eigen::MatrixXd left;             // thin U
    Eigen::MatrixXd right;            // thin V
};

/// Thin SVD with a deterministic sign convention: the largest-magnitude entry
/// of each left singular vector is made positive.
inline SvdResult svd(const Eigen::MatrixXd& m) {
    if (!m.allFinite()) throw NumericalFailure("svd: non-finite input");
    Eigen::JacobiSVD<Eigen::MatrixXd> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdResult r{dec.singularValues(), dec.matrixU(), dec.matrixV()};
    for (Eigen::Index c = 0; c < r.left.cols(); ++c) {
        Eigen::Index imax;
        r.left.col(c).cwiseAbs().maxCoeff(&imax);
        if (r.left(imax, c) < 0.0) {
            r.left.col(c) *= -1.0;
            r.right.col(c) *= -1.0;
        }
    }
    return r;
}

inline double sigma_min(const Eigen::MatrixXd& m) {
    if (m.cols() == 0 || m.rows() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> dec(m);
    const auto& s = dec.singularValues();
    if (m.cols() > m.rows()) return 0.0;  // rank-deficient by shape
    return s(s.size() - 1);
}

/// Orthonormal basis of a d-dimensional subspace of R^n.
struct SubspaceProjector {
    Eigen::MatrixXd basis;  // n x d, orthonormal columns

    int dim() const { return static_cast<int>(basis.cols()); }

    Eigen::VectorXd project(const Eigen::VectorXd& v) const { return basis * (basis.transpose() * v); }
    Eigen::MatrixXd project(const Eigen::MatrixXd& m) const { return basis * (basis.transpose() * m); }
    /// Coordinates of v in the basis.
    Eigen::VectorXd coords(const Eigen::VectorXd& v) const { return basis.transpose() * v; }
    Eigen::VectorXd from_coords(const Eigen::VectorXd& c) const { return basis * c; }
};

/// Span of the top-r left singular vectors (best rank-r column space).
inline SubspaceProjector top_r_subspace(const Eigen::MatrixXd& m, int r) {
    if (r < 1 || r > std::min(m.rows(), m.cols()))
        throw TensorError("top_r_subspace: r out of range");
    SvdResult s = svd(m);
    return SubspaceProjector{s.left.leftCols(r)};
}

struct KrankCertificate {
    double tau = 0.0;
    int krank = 0;
    std::vector<int> witness_columns;  // size krank+1 when krank < R, else empty
    double witness_sigma = 0.0;
};

namespace detail {

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::uint64_t c = 1;
    for (int i = 0; i < k; ++i) c = c * static_cast<std::uint64_t>(n - i) / (i + 1);
    return c;
}

/// Lexicographic enumeration of k-subsets of [0, n).
template <typename Fn>
void for_each_subset(int n, int k, Fn&& fn) {
    std::vector<int> s(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) s[i] = i;
    while (true) {
        fn(s);
        int i = k - 1;
        while (i >= 0 && s[i] == n - k + i) --i;
        if (i < 0) break;
        ++s[i];
        for (int j = i + 1; j < k; ++j) s[j] = s[j - 1] + 1;
    }
}

}  // namespace detail

/// Robust Kruskal rank: the largest k for which every n x k column submatrix
/// has smallest singular value >= 1/tau. Enumerates subset sizes in
/// increasing order and stops at the first failing size; the certificate
/// carries the tightest failing submatrix.
inline KrankCertificate robust_krank(const Eigen::MatrixXd& a, double tau,
                                     std::uint64_t budget = 1000000) {
    if (!(tau > 0.0)) throw TensorError("robust_krank: tau must be positive");
    const int R = static_cast<int>(a.cols());
    const int n = static_cast<int>(a.rows());
    const double threshold = 1.0 / tau;
    KrankCertificate cert;
    cert.tau = tau;

    for (int k = 1; k <= R; ++k) {
        if (k > n) {
            // sigma_k of any n x k submatrix with k > n is 0
            cert.witness_columns.resize(static_cast<size_t>(k));
            for (int i = 0; i < k; ++i) cert.witness_columns[i] = i;
            cert.witness_sigma = 0.0;
            return cert;
        }
        if (detail::binomial(R, k) > budget)
            throw BudgetExceeded("robust_krank: C(" + std::to_string(R) + "," +
                                 std::to_string(k) + ") exceeds enumeration budget");
        double worst = std::numeric_limits<double>::infinity();
        std::vector<int> worst_cols;
        Eigen::MatrixXd sub(n, k);
        detail::for_each_subset(R, k, [&](const std::vector<int>& s) {
            for (int i = 0; i < k; ++i) sub.col(i) = a.col(s[i]);
            const double sig = sigma_min(sub);
            if (sig < worst) {  // strict: lexicographically smallest witness on ties
                worst = sig;
                worst_cols = s;
            }
        });
        if (worst < threshold) {
            cert.witness_columns = worst_cols;
            cert.witness_sigma = worst;
            return cert;
        }
        cert.krank = k;
    }
    return cert;  // krank == R, empty witness
}

struct KruskalReport {
    std::vector<KrankCertificate> per_mode;
    int krank_sum = 0;
    int margin = 0;  // sum k_j - (2R + l - 1)
    bool pass = false;
};

/// Checks sum_j k_j >= 2R + l - 1 (for l = 3 this is k_A+k_B+k_C >= 2R+2).
inline KruskalReport check_kruskal_condition(const CPDecomposition& cp,
                                             const std::vector<double>& taus,
                                             std::uint64_t budget = 1000000) {
    cp.validate();
    const int l = cp.order();
    if (static_cast<int>(taus.size()) != l)
        throw TensorError("check_kruskal_condition: one tau per mode required");
    KruskalReport rep;
    for (int j = 0; j < l; ++j) {
        rep.per_mode.push_back(robust_krank(cp.factors[j], taus[j], budget));
        rep.krank_sum += rep.per_mode.back().krank;
    }
    rep.margin = rep.krank_sum - (2 * cp.rank() + l - 1);
    rep.pass = rep.margin >= 0;
    return rep;
}

struct SeparatingVector {
    Eigen::VectorXd w;  // unit vector
    int attempts = 0;
    double threshold = 0.0;  // eps / (20 d t)
};

/// Finds a unit w with |<u_i, w>| > eps/(20 d t) for all i, by sampling
/// Gaussian directions.
inline SeparatingVector find_separating_vector(const std::vector<Eigen::VectorXd>& vectors,
                                               double eps, std::uint64_t seed = 0,
                                               int max_retries = 64) {
    if (vectors.empty()) throw TensorError("find_separating_vector: no input vectors");
    const int d = static_cast<int>(vectors[0].size());
    const int t = static_cast<int>(vectors.size());
    for (const auto& u : vectors)
        if (u.norm() < eps) throw TensorError("find_separating_vector: input norm below eps");
    const double threshold = eps / (20.0 * d * t);
    Rng rng(seed);
    for (int attempt = 1; attempt <= max_retries; ++attempt) {
        Eigen::VectorXd w = rng.normal_vector(d);
        const double nw = w.norm();
        if (nw == 0.0) continue;
        w /= nw;
        bool ok = true;
        for (const auto& u : vectors) {
            if (std::abs(u.dot(w)) <= threshold) {
                ok = false;
                break;
            }
        }
        if (ok) return SeparatingVector{w, attempt, threshold};
    }
    throw NumericalFailure("find_separating_vector: retry budget exhausted after " +
                           std::to_string(max_retries) + " attempts");
}

/// Number of entries of magnitude >= eps (eps = 0 counts all nonzeros).
inline int nz_count(const Eigen::VectorXd& v, double eps) {
    if (eps < 0.0) throw TensorError("nz_count: eps must be nonnegative");
    int c = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (eps == 0.0 ? v(i) != 0.0 : std::abs(v(i)) >= eps) ++c;
    return c;
}

}  // namespace kt
