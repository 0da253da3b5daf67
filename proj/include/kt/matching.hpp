// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace kt {

namespace detail {

/// Exact minimum-cost assignment on a square cost matrix (Hungarian method,
/// shortest-augmenting-path variant). Returns row -> column.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw TensorError("hungarian: square cost matrix required");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[static_cast<size_t>(p[j] - 1)] = j - 1;
    return row_to_col;
}

/// Squared chordal distance between directions: min over sign of ||x - y||^2
/// for unit vectors.
inline double chordal2(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double a = (x - y).squaredNorm();
    const double b = (x + y).squaredNorm();
    return std::min(a, b);
}

}  // namespace detail

struct AlignmentResult {
    std::vector<int> permutation;              // candidate column r matches reference column permutation[r]
    std::vector<Eigen::VectorXd> scalings;     // per mode, length R
    double scaling_product_deviation = 0.0;    // ||prod_j Lambda_j - I||_F
    std::vector<double> per_mode_residuals;    // ||V_j - U_j Pi Lambda_j||_F
    bool has_zero_columns = false;
};

/// Matches candidate columns to reference columns up to permutation and
/// per-mode scaling. The permutation minimizes summed squared chordal
/// distances of normalized columns (exact assignment); scalings are the
/// least-squares coefficients of candidate columns on matched reference
/// columns. Zero columns are matched last with scaling 0 and flagged.
inline AlignmentResult align(const CPDecomposition& reference, const CPDecomposition& candidate) {
    reference.validate();
    candidate.validate();
    if (reference.shape() != candidate.shape())
        throw TensorError("align: shape mismatch");
    if (reference.rank() != candidate.rank()) throw TensorError("align: rank mismatch");
    const int l = reference.order();
    const int R = reference.rank();

    AlignmentResult out;
    if (R == 0) {
        out.scalings.assign(static_cast<size_t>(l), Eigen::VectorXd(0));
        out.per_mode_residuals.assign(static_cast<size_t>(l), 0.0);
        return out;
    }

    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(R, R);
    for (int r = 0; r < R; ++r) {
        for (int p = 0; p < R; ++p) {
            double c = 0.0;
            for (int j = 0; j < l; ++j) {
                const Eigen::VectorXd& vc = candidate.factors[j].col(r);
                const Eigen::VectorXd& uc = reference.factors[j].col(p);
                const double nv = vc.norm(), nu = uc.norm();
                if (nv == 0.0 && nu == 0.0) {
                    out.has_zero_columns = true;
                } else if (nv == 0.0 || nu == 0.0) {
                    out.has_zero_columns = true;
                    c += 4.0;  // above the chordal maximum, so zero columns pair up last
                } else {
                    c += detail::chordal2(vc / nv, uc / nu);
                }
            }
            cost(r, p) = c;
        }
    }
    out.permutation = detail::hungarian(cost);

    out.scalings.assign(static_cast<size_t>(l), Eigen::VectorXd::Zero(R));
    for (int j = 0; j < l; ++j) {
        Eigen::MatrixXd matched(reference.factors[j].rows(), R);
        for (int r = 0; r < R; ++r) {
            const Eigen::VectorXd u = reference.factors[j].col(out.permutation[r]);
            const double n2 = u.squaredNorm();
            const double lam = n2 > 0.0 ? candidate.factors[j].col(r).dot(u) / n2 : 0.0;
            out.scalings[j](r) = lam;
            matched.col(r) = lam * u;
        }
        out.per_mode_residuals.push_back((candidate.factors[j] - matched).norm());
    }

    double dev2 = 0.0;
    for (int r = 0; r < R; ++r) {
        double prod = 1.0;
        for (int j = 0; j < l; ++j) prod *= out.scalings[j](r);
        dev2 += (prod - 1.0) * (prod - 1.0);
    }
    out.scaling_product_deviation = std::sqrt(dev2);
    return out;
}

struct SymmetricAlignment {
    std::vector<int> permutation;  // candidate column r matches reference column permutation[r]
    double residual = 0.0;         // ||V S - U Pi||_F (S: per-column sign, even order only)
    std::vector<double> signs;     // +1/-1 per candidate column
};

/// Permutation-only alignment for symmetric decompositions. Odd orders fix
/// the column signs; even orders leave a per-column sign ambiguity which is
/// resolved to minimize the residual.
inline SymmetricAlignment align_symmetric(const Eigen::MatrixXd& reference,
                                          const Eigen::MatrixXd& candidate, int order) {
    if (reference.rows() != candidate.rows() || reference.cols() != candidate.cols())
        throw TensorError("align_symmetric: shape mismatch");
    if (order < 2) throw TensorError("align_symmetric: order must be >= 2");
    const int R = static_cast<int>(reference.cols());
    SymmetricAlignment out;
    if (R == 0) return out;
    const bool even = order % 2 == 0;

    Eigen::MatrixXd cost(R, R);
    for (int r = 0; r < R; ++r)
        for (int p = 0; p < R; ++p) {
            const double plus = (candidate.col(r) - reference.col(p)).squaredNorm();
            const double minus = (candidate.col(r) + reference.col(p)).squaredNorm();
            cost(r, p) = even ? std::min(plus, minus) : plus;
        }
    out.permutation = detail::hungarian(cost);
    out.signs.assign(static_cast<size_t>(R), 1.0);
    double total = 0.0;
    for (int r = 0; r < R; ++r) {
        const int p = out.permutation[r];
        const double plus = (candidate.col(r) - reference.col(p)).squaredNorm();
        const double minus = (candidate.col(r) + reference.col(p)).squaredNorm();
        if (even && minus < plus) {
            out.signs[static_cast<size_t>(r)] = -1.0;
            total += minus;
        } else {
            total += plus;
        }
    }
    out.residual = std::sqrt(total);
    return out;
}

struct RankOneSplit {
    Eigen::VectorXd u;
    Eigen::VectorXd v;
    double residual = 0.0;  // sqrt(sum of squared trailing singular values)
};

/// Factor a vector of length n1*n2 (row-major) as u (x) v via the top
/// singular triple of its n1 x n2 reshaping. Exact when the reshaping is
/// rank-1.
inline RankOneSplit split_rank_one(const Eigen::VectorXd& w, int n1, int n2) {
    if (n1 < 1 || n2 < 1 || w.size() != static_cast<Eigen::Index>(n1) * n2)
        throw TensorError("split_rank_one: dimension mismatch");
    Eigen::MatrixXd m(n1, n2);
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) m(i, j) = w(static_cast<Eigen::Index>(i) * n2 + j);
    SvdResult s = svd(m);
    const double s1 = s.singular_values(0);
    RankOneSplit out;
    out.u = std::sqrt(s1) * s.left.col(0);
    out.v = std::sqrt(s1) * s.right.col(0);
    double rest = 0.0;
    for (Eigen::Index i = 1; i < s.singular_values.size(); ++i)
        rest += s.singular_values(i) * s.singular_values(i);
    out.residual = std::sqrt(rest);
    return out;
}

/// Weight from two rescaled copies of the same mean direction,
/// u ~ w^{1/(l-1)} mu and v ~ w^{1/l} mu: returns (<u,v>/||u||^2)^{-l(l-1)}.
inline double recover_weight(const Eigen::VectorXd& u, const Eigen::VectorXd& v, int order) {
    if (order < 2) throw TensorError("recover_weight: order must be >= 2");
    const double n2 = u.squaredNorm();
    if (n2 == 0.0) throw TensorError("recover_weight: zero u");
    const double beta = u.dot(v) / n2;
    return std::pow(beta, -static_cast<double>(order) * (order - 1));
}

struct SignFixResult {
    std::vector<Eigen::VectorXd> scalings;  // adjusted, all entries nonnegative on success
    std::vector<Eigen::VectorXd> flips;     // per mode, +1/-1 to apply to factor columns
    bool ok = false;
};

/// Flips column signs across modes so every scaling entry becomes
/// nonnegative while the per-column product of scalings is unchanged.
/// Requires each column's product of scalings to be positive.
inline SignFixResult sign_fix(const std::vector<Eigen::VectorXd>& scalings) {
    if (scalings.empty()) throw TensorError("sign_fix: no scalings");
    const int l = static_cast<int>(scalings.size());
    const int R = static_cast<int>(scalings[0].size());
    for (const auto& s : scalings)
        if (s.size() != R) throw TensorError("sign_fix: scaling lengths differ");
    SignFixResult out;
    out.scalings = scalings;
    out.flips.assign(static_cast<size_t>(l), Eigen::VectorXd::Ones(R));
    for (int r = 0; r < R; ++r) {
        double prod = 1.0;
        for (int j = 0; j < l; ++j) prod *= scalings[j](r);
        if (!(prod > 0.0)) return out;  // ok stays false
    }
    for (int r = 0; r < R; ++r)
        for (int j = 0; j < l; ++j)
            if (out.scalings[j](r) < 0.0) {
                out.scalings[j](r) = -out.scalings[j](r);
                out.flips[j](r) = -1.0;
            }
    out.ok = true;
    return out;
}

struct NecessaryConditionDiagnostic {
    double sigma_min = 0.0;
    bool unique_compatible = false;
    Eigen::VectorXd null_vector;  // set when not unique-compatible
    double tolerance = 0.0;
};

/// Uniqueness pre-check: sigma_min of khatri_rao(a, b). A (near-)null vector
/// alpha gives sum_r alpha_r a_r (x) b_r ~ 0, which permits an alternative
/// decomposition of any tensor built on these factors.
inline NecessaryConditionDiagnostic necessary_condition_check(const Eigen::MatrixXd& a,
                                                              const Eigen::MatrixXd& b,
                                                              double tolerance = 1e-8) {
    if (a.cols() != b.cols()) throw TensorError("necessary_condition_check: column counts differ");
    NecessaryConditionDiagnostic out;
    out.tolerance = tolerance;
    const Eigen::MatrixXd k = khatri_rao(a, b);
    if (k.cols() == 0) {
        out.unique_compatible = true;
        return out;
    }
    SvdResult s = svd(k);
    const double smin = k.cols() > k.rows() ? 0.0 : s.singular_values(s.singular_values.size() - 1);
    out.sigma_min = smin;
    out.unique_compatible = smin > tolerance;
    if (!out.unique_compatible) {
        if (k.cols() > k.rows()) {
            // null space of a wide matrix via full SVD of the transpose kernel
            Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
            out.null_vector = lu.kernel().col(0);
            out.null_vector.normalize();
        } else {
            out.null_vector = s.right.col(s.right.cols() - 1);
        }
    }
    return out;
}

/// Alternative decomposition from a Khatri-Rao null vector: adds alpha_r * z
/// to the last-mode column r, leaving the expanded tensor unchanged when
/// sum_r alpha_r a_r (x) b_r = 0.
inline CPDecomposition alternative_decomposition(const CPDecomposition& cp,
                                                 const Eigen::VectorXd& alpha,
                                                 const Eigen::VectorXd& z) {
    cp.validate();
    if (cp.order() < 3) throw TensorError("alternative_decomposition: order must be >= 3");
    if (alpha.size() != cp.rank()) throw TensorError("alternative_decomposition: alpha length");
    const int last = cp.order() - 1;
    if (z.size() != cp.factors[last].rows())
        throw TensorError("alternative_decomposition: z length mismatch");
    CPDecomposition out = cp;
    for (int r = 0; r < cp.rank(); ++r) out.factors[last].col(r) += alpha(r) * z;
    return out;
}

}  // namespace kt
