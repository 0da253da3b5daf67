// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace kt {

struct NetSearchConfig {
    int rank = 1;
    BoundsSpec rho;                 // per-mode column bounds
    double target_eps = 1e-3;
    double net_resolution = 0.0;    // <= 0: use theoretical_resolution()
    std::uint64_t seed = 0;
    int parallelism = 1;
    std::uint64_t budget = 50000000;  // max candidate evaluations

    enum class Strategy { Auto, Exhaustive, Progressive };
    Strategy strategy = Strategy::Auto;

    // Progressive-search knobs. The coarse stage enumerates a subsampled grid
    // (joint enumeration when it fits coarse_joint_budget, greedy rank-1
    // deflation otherwise); refinement then halves the grid spacing down to
    // net_resolution, locally re-optimizing one factor column at a time.
    std::uint64_t coarse_joint_budget = 500000;
    std::uint64_t coarse_rank1_budget = 2000000;
    int max_sweeps_per_level = 24;
    int refine_radius = 1;  // offsets per coordinate in [-r, r] at each level
    // per-column search scans the whole level net when it has at most this
    // many points; otherwise only the local offset box
    std::uint64_t column_net_cap = 20000;
    int multistart = 8;  // number of coarse candidates kept for refinement

    // Opt-in accelerator: exact least-squares solve for the last-mode factor
    // with post-hoc rho clamping. Heuristic, not part of the net search;
    // acceptance runs keep it off.
    bool last_mode_ls_accelerator = false;

    bool symmetric = false;  // all modes share one factor matrix

    double rho_max() const {
        double m = 0.0;
        for (double r : rho.rho) m = std::max(m, r);
        return m;
    }

    /// Net resolution sufficient for the error guarantee at order l:
    /// eps / (2 l R rho^(l-1)), which is eps/(6 R rho^2) at l = 3.
    double theoretical_resolution(int order) const {
        return target_eps /
               (2.0 * order * rank * std::pow(rho_max(), order - 1));
    }

    double effective_resolution(int order) const {
        return net_resolution > 0.0 ? net_resolution : theoretical_resolution(order);
    }
};

struct ApproximationResult {
    CPDecomposition decomposition;
    double achieved_error = 0.0;
    std::uint64_t candidates_evaluated = 0;
    std::vector<double> subspace_residuals;
    bool partial = false;          // candidate budget hit, best-so-far returned
    bool exhaustive = false;       // full tuple enumeration was performed
    bool resolution_met = false;   // grid spacing reached the requested resolution
};

struct ModeSubspaces {
    std::vector<SubspaceProjector> projectors;
    std::vector<double> residuals;  // ||M_j - Pi_j M_j||_F per mode
};

/// Per-mode projectors onto the span of the top-r left singular vectors of
/// each unfolding (dimension capped by the unfolding's size).
inline ModeSubspaces compute_mode_subspaces(const DenseTensor& t, int r) {
    if (r < 1) throw TensorError("compute_mode_subspaces: rank must be >= 1");
    ModeSubspaces out;
    for (int j = 0; j < t.order(); ++j) {
        Eigen::MatrixXd m = unfold(t, j);
        const int d = std::min<int>(r, std::min(m.rows(), m.cols()));
        SubspaceProjector p = top_r_subspace(m, d);
        out.residuals.push_back((m - p.project(m)).norm());
        out.projectors.push_back(std::move(p));
    }
    return out;
}

/// Axis-aligned grid net for the Euclidean ball: every point of the
/// radius-ball is within `resolution` of a net point, and all net points lie
/// within radius + resolution.
inline std::vector<Eigen::VectorXd> build_eps_net(int dim, double radius, double resolution,
                                                  std::uint64_t max_points = 50000000) {
    if (dim < 1) throw TensorError("build_eps_net: dim must be >= 1");
    if (!(radius > 0.0) || !(resolution > 0.0))
        throw TensorError("build_eps_net: radius and resolution must be positive");
    const double s = 2.0 * resolution / std::sqrt(static_cast<double>(dim));
    const int K = static_cast<int>(std::floor((radius + resolution) / s));
    const double per_axis = 2.0 * K + 1.0;
    if (std::pow(per_axis, dim) > static_cast<double>(max_points) * 8.0)
        throw BudgetExceeded("build_eps_net: grid of ~" +
                             std::to_string(std::pow(per_axis, dim)) +
                             " candidate points exceeds budget");
    std::vector<Eigen::VectorXd> net;
    std::vector<int> c(static_cast<size_t>(dim), -K);
    const double keep = radius + resolution;
    while (true) {
        Eigen::VectorXd p(dim);
        for (int i = 0; i < dim; ++i) p(i) = c[i] * s;
        if (p.norm() <= keep) {
            if (net.size() >= max_points)
                throw BudgetExceeded("build_eps_net: net size exceeds budget");
            net.push_back(std::move(p));
        }
        int i = dim - 1;
        while (i >= 0 && c[i] == K) c[i--] = -K;
        if (i < 0) break;
        ++c[i];
    }
    return net;
}

namespace detail {

/// Search state: columns are integer coordinates on the finest grid of each
/// mode's subspace. Column j,r in ambient space is basis_j * (step_j .* coords).
struct NetSearchState {
    const DenseTensor* t;
    int order;
    int rank;
    bool symmetric;
    std::vector<const SubspaceProjector*> proj;  // per mode (shared if symmetric)
    std::vector<double> step;                    // finest grid spacing per mode
    std::vector<double> keep_radius;             // rho_j + resolution
    // coords[j][r]: integer grid coords of column r in mode j's subspace.
    std::vector<std::vector<Eigen::VectorXi>> coords;
    std::uint64_t evals = 0;
    std::uint64_t budget = 0;
    bool budget_hit = false;

    int effective_modes() const { return symmetric ? 1 : order; }

    Eigen::VectorXd column(int j, int r) const {
        const Eigen::VectorXi& c = coords[symmetric ? 0 : j][r];
        Eigen::VectorXd x(c.size());
        for (int i = 0; i < c.size(); ++i) x(i) = c(i) * step[symmetric ? 0 : j];
        return proj[symmetric ? 0 : j]->from_coords(x);
    }

    CPDecomposition decomposition() const {
        std::vector<Eigen::MatrixXd> factors;
        for (int j = 0; j < order; ++j) {
            Eigen::MatrixXd f(proj[symmetric ? 0 : j]->basis.rows(), rank);
            for (int r = 0; r < rank; ++r) f.col(r) = column(j, r);
            factors.push_back(std::move(f));
        }
        return CPDecomposition(std::move(factors));
    }

    bool charge_eval() {
        if (budget_hit) return false;
        if (evals >= budget) {
            budget_hit = true;
            return false;
        }
        ++evals;
        return true;
    }
};

inline double tensor_error(const DenseTensor& t, const CPDecomposition& cp) {
    return frobenius_distance(t, expand(cp));
}

/// ||G - outer(cols)||_F where G is the residual with one rank-1 term removed.
inline double rank1_residual_error(const std::vector<double>& g, const std::vector<int>& shape,
                                   const std::vector<Eigen::VectorXd>& cols) {
    const int l = static_cast<int>(shape.size());
    double s = 0.0;
    std::vector<int> idx(static_cast<size_t>(l), 0);
    std::int64_t f = 0;
    do {
        double p = 1.0;
        for (int j = 0; j < l; ++j) p *= cols[j](idx[j]);
        const double d = g[f++] - p;
        s += d * d;
    } while (next_index(idx, shape));
    return std::sqrt(s);
}

/// Residual tensor with rank-1 term `skip` removed (all terms when skip < 0).
inline std::vector<double> residual_without_term(const NetSearchState& st, int skip) {
    const auto& shape = st.t->shape();
    std::vector<double> g(st.t->values());
    std::vector<std::vector<Eigen::VectorXd>> cols(st.rank);
    for (int r = 0; r < st.rank; ++r)
        if (r != skip)
            for (int j = 0; j < st.order; ++j) cols[r].push_back(st.column(j, r));
    std::vector<int> idx(shape.size(), 0);
    std::int64_t f = 0;
    do {
        double e = 0.0;
        for (int r = 0; r < st.rank; ++r) {
            if (r == skip) continue;
            double p = 1.0;
            for (int j = 0; j < st.order; ++j) p *= cols[r][j](idx[j]);
            e += p;
        }
        g[f++] -= e;
    } while (next_index(idx, shape));
    return g;
}

/// Grid coordinates within the keep-radius ball at spacing step*2^level,
/// enumerated lexicographically.
inline std::vector<Eigen::VectorXi> grid_coords(int dim, double step, int level,
                                                double keep_radius) {
    const std::int64_t stride = std::int64_t{1} << level;
    const double s = step * static_cast<double>(stride);
    const int K = static_cast<int>(std::floor(keep_radius / s));
    std::vector<Eigen::VectorXi> pts;
    std::vector<int> c(static_cast<size_t>(dim), -K);
    while (true) {
        double norm2 = 0.0;
        for (int i = 0; i < dim; ++i) norm2 += (c[i] * s) * (c[i] * s);
        if (norm2 <= keep_radius * keep_radius) {
            Eigen::VectorXi p(dim);
            for (int i = 0; i < dim; ++i) p(i) = c[i] * static_cast<int>(stride);
            pts.push_back(std::move(p));
        }
        int i = dim - 1;
        while (i >= 0 && c[i] == K) c[i--] = -K;
        if (i < 0) break;
        ++c[i];
    }
    return pts;
}

inline double count_grid(int dim, double step, int level, double keep_radius) {
    const double s = step * static_cast<double>(std::int64_t{1} << level);
    const double K = std::floor(keep_radius / s);
    return std::pow(2.0 * K + 1.0, dim);
}

/// One improvement pass over a single column at the given level. Searches the
/// whole level net when it is small enough, otherwise a local offset box of
/// the given radius around the current coordinates. Candidates are visited in
/// a fixed lexicographic order and only strict improvements are accepted.
/// Returns true if the column moved.
inline bool refine_column(NetSearchState& st, int mode_slot, int r, int level, int radius,
                          std::uint64_t column_net_cap, double& best_err) {
    const int dim = static_cast<int>(st.coords[mode_slot][r].size());
    const std::int64_t stride = std::int64_t{1} << level;
    const double keep = st.keep_radius[mode_slot];
    const Eigen::VectorXi base = st.coords[mode_slot][r];

    // residual with term r removed (for symmetric search the column appears
    // in every mode, so fall back to full evaluation there)
    const bool incremental = !st.symmetric;
    std::vector<double> g;
    std::vector<Eigen::VectorXd> other_cols(st.order);
    if (incremental) {
        g = residual_without_term(st, r);
        for (int j = 0; j < st.order; ++j) other_cols[j] = st.column(j, r);
    }

    Eigen::VectorXi best = base;
    bool moved = false;
    auto consider = [&](const Eigen::VectorXi& cand) {
        if (cand == base) return;
        double norm2 = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double x = cand(i) * st.step[mode_slot];
            norm2 += x * x;
        }
        if (norm2 > keep * keep || !st.charge_eval()) return;
        double err;
        st.coords[mode_slot][r] = cand;
        if (incremental) {
            other_cols[mode_slot] = st.column(mode_slot, r);
            err = rank1_residual_error(g, st.t->shape(), other_cols);
        } else {
            err = tensor_error(*st.t, st.decomposition());
        }
        if (err < best_err - 1e-15) {
            best_err = err;
            best = cand;
            moved = true;
        }
    };

    const double level_net = count_grid(dim, st.step[mode_slot], level, keep);
    if (level_net <= static_cast<double>(column_net_cap)) {
        for (const Eigen::VectorXi& p : grid_coords(dim, st.step[mode_slot], level, keep))
            consider(p);
    } else {
        std::vector<int> off(static_cast<size_t>(dim), -radius);
        while (true) {
            Eigen::VectorXi cand = base;
            for (int i = 0; i < dim; ++i) cand(i) += off[i] * static_cast<int>(stride);
            consider(cand);
            int i = dim - 1;
            while (i >= 0 && off[i] == radius) off[i--] = -radius;
            if (i < 0) break;
            ++off[i];
        }
    }
    st.coords[mode_slot][r] = best;
    return moved;
}

/// Exact least-squares update of the last mode's factor given the others,
/// columns clamped back to the rho ball. Heuristic accelerator.
inline void last_mode_ls_step(NetSearchState& st, double rho_last) {
    const int l = st.order;
    Eigen::MatrixXd kr;  // khatri-rao of modes 0..l-2
    for (int j = 0; j < l - 1; ++j) {
        Eigen::MatrixXd f(st.proj[st.symmetric ? 0 : j]->basis.rows(), st.rank);
        for (int r = 0; r < st.rank; ++r) f.col(r) = st.column(j, r);
        kr = (j == 0) ? f : khatri_rao(kr, f);
    }
    Eigen::MatrixXd m = unfold(*st.t, l - 1);  // n_last x prod(others)
    // columns of m indexed by multi-index over the *other* modes in order
    Eigen::MatrixXd sol =
        kr.colPivHouseholderQr().solve(m.transpose());  // R x n_last
    Eigen::MatrixXd f = sol.transpose();
    const int slot = st.symmetric ? 0 : l - 1;
    for (int r = 0; r < st.rank; ++r) {
        Eigen::VectorXd col = f.col(r);
        if (col.norm() > rho_last) col *= rho_last / col.norm();
        // snap back onto the finest grid
        Eigen::VectorXd c = st.proj[slot]->coords(col) / st.step[slot];
        Eigen::VectorXi ci(c.size());
        for (int i = 0; i < c.size(); ++i) ci(i) = static_cast<int>(std::llround(c(i)));
        double norm2 = 0.0;
        for (int i = 0; i < c.size(); ++i) {
            const double x = ci(i) * st.step[slot];
            norm2 += x * x;
        }
        if (norm2 <= st.keep_radius[slot] * st.keep_radius[slot]) st.coords[slot][r] = ci;
    }
}

/// Snap an ambient-space column onto the finest grid of its subspace,
/// scaling down if the snapped point leaves the keep-radius ball.
inline Eigen::VectorXi snap_to_grid(const NetSearchState& st, int slot,
                                    const Eigen::VectorXd& col) {
    Eigen::VectorXd c = st.proj[slot]->coords(col) / st.step[slot];
    const double keep2 = st.keep_radius[slot] * st.keep_radius[slot];
    for (int attempt = 0; attempt < 200; ++attempt) {
        Eigen::VectorXi ci(c.size());
        double norm2 = 0.0;
        for (Eigen::Index i = 0; i < c.size(); ++i) {
            ci(i) = static_cast<int>(std::llround(c(i)));
            const double x = ci(i) * st.step[slot];
            norm2 += x * x;
        }
        if (norm2 <= keep2) return ci;
        c *= 0.98;
    }
    return Eigen::VectorXi::Zero(c.size());
}

/// Order-3 spectral initialization: contract the tensor along the last mode
/// with two seeded directions, recover the mode-0 factor from the
/// eigenvectors of the quotient, then the remaining factors by least squares
/// and rank-1 splitting. Works when the factors are well conditioned;
/// returns false otherwise.
inline bool spectral_start(NetSearchState& st, const DenseTensor& t, const NetSearchConfig& cfg,
                           int contract_mode,
                           std::vector<std::vector<Eigen::VectorXi>>& coords_out) {
    if (st.order != 3) return false;
    const auto& shape = t.shape();
    const int R = st.rank;
    // remaining modes in increasing order: eigenvectors give the factor of
    // the first, rank-1 splitting the other two
    int ja = contract_mode == 0 ? 1 : 0;
    int jb = contract_mode == 2 ? 1 : 2;
    if (R > shape[ja] || R > shape[jb]) return false;
    Rng rng(cfg.seed);
    Eigen::VectorXd x = rng.normal_vector(shape[contract_mode]);
    Eigen::VectorXd y = rng.normal_vector(shape[contract_mode]);
    if (x.norm() == 0.0 || y.norm() == 0.0) return false;
    x.normalize();
    y.normalize();
    Eigen::MatrixXd m1 = mode_contract(t, contract_mode, x);
    Eigen::MatrixXd m2 = mode_contract(t, contract_mode, y);
    Eigen::MatrixXd e =
        m1 * m2.completeOrthogonalDecomposition().pseudoInverse();
    Eigen::EigenSolver<Eigen::MatrixXd> es(e);
    if (es.info() != Eigen::Success) return false;

    // R eigenvectors of largest |eigenvalue|, requiring near-real vectors
    std::vector<int> order(static_cast<size_t>(e.rows()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(es.eigenvalues()(a)) > std::abs(es.eigenvalues()(b));
    });
    Eigen::MatrixXd a(shape[ja], R);
    for (int r = 0; r < R; ++r) {
        Eigen::VectorXcd v = es.eigenvectors().col(order[static_cast<size_t>(r)]);
        if (v.imag().norm() > 1e-6 * v.real().norm()) return false;
        Eigen::VectorXd vr = v.real();
        if (vr.norm() == 0.0) return false;
        a.col(r) = vr / vr.norm();
    }

    // rows of pinv(F_ja) * unfold_ja are vec over the other two modes in
    // increasing order
    int jc = 3 - contract_mode - ja;  // second split mode relative to ja
    int split0 = std::min(jc, contract_mode), split1 = std::max(jc, contract_mode);
    Eigen::MatrixXd w =
        a.completeOrthogonalDecomposition().pseudoInverse() * unfold(t, ja);
    std::vector<Eigen::MatrixXd> factors(3);
    factors[static_cast<size_t>(ja)] = Eigen::MatrixXd(shape[ja], R);
    factors[static_cast<size_t>(split0)] = Eigen::MatrixXd(shape[split0], R);
    factors[static_cast<size_t>(split1)] = Eigen::MatrixXd(shape[split1], R);
    for (int r = 0; r < R; ++r) {
        Eigen::MatrixXd m(shape[split0], shape[split1]);
        for (int i = 0; i < shape[split0]; ++i)
            for (int j = 0; j < shape[split1]; ++j)
                m(i, j) = w(r, static_cast<Eigen::Index>(i) * shape[split1] + j);
        SvdResult s = svd(m);
        if (s.singular_values.size() == 0) return false;
        const double sigma = s.singular_values(0);
        const double scale = std::cbrt(sigma);
        factors[static_cast<size_t>(ja)].col(r) = scale * a.col(r);
        factors[static_cast<size_t>(split0)].col(r) = scale * s.left.col(0);
        factors[static_cast<size_t>(split1)].col(r) = scale * s.right.col(0);
    }

    coords_out.assign(static_cast<size_t>(st.effective_modes()),
                      std::vector<Eigen::VectorXi>(static_cast<size_t>(R)));
    if (st.symmetric) {
        // shared-factor variant: keep the directions, refit coefficients
        Eigen::MatrixXd design(static_cast<Eigen::Index>(shape[0]) * shape[0] * shape[0], R);
        for (int r = 0; r < R; ++r) {
            const Eigen::VectorXd& u = a.col(r);
            Eigen::Index f = 0;
            for (int i = 0; i < shape[0]; ++i)
                for (int j = 0; j < shape[0]; ++j)
                    for (int k = 0; k < shape[0]; ++k) design(f++, r) = u(i) * u(j) * u(k);
        }
        Eigen::Map<const Eigen::VectorXd> tv(t.values().data(),
                                             static_cast<Eigen::Index>(t.size()));
        Eigen::VectorXd coef = design.colPivHouseholderQr().solve(tv);
        for (int r = 0; r < R; ++r) {
            const double s = std::cbrt(coef(r));
            coords_out[0][static_cast<size_t>(r)] = snap_to_grid(st, 0, s * a.col(r));
        }
    } else {
        for (int j = 0; j < 3; ++j)
            for (int r = 0; r < R; ++r)
                coords_out[static_cast<size_t>(j)][static_cast<size_t>(r)] =
                    snap_to_grid(st, j, factors[static_cast<size_t>(j)].col(r));
    }
    return true;
}

}  // namespace detail

inline ApproximationResult bounded_low_rank_general(const DenseTensor& t,
                                                    const NetSearchConfig& cfg);

/// rho-bounded rank-R approximation of an order-3 tensor by per-mode top-R
/// subspaces and grid search. Deterministic given the config.
inline ApproximationResult bounded_low_rank_3(const DenseTensor& t, const NetSearchConfig& cfg) {
    if (t.order() != 3) throw TensorError("bounded_low_rank_3: order-3 tensor required");
    return bounded_low_rank_general(t, cfg);
}

/// Diagnostic: replace every factor column of `cp` by its projection onto the
/// subspaces computed from `t`, and return the resulting approximation error.
inline double project_candidate_guarantee_check(const DenseTensor& t, const CPDecomposition& cp) {
    if (cp.shape() != t.shape())
        throw TensorError("project_candidate_guarantee_check: shape mismatch");
    ModeSubspaces sub = compute_mode_subspaces(t, cp.rank());
    std::vector<Eigen::MatrixXd> projected;
    for (int j = 0; j < t.order(); ++j)
        projected.push_back(sub.projectors[j].project(cp.factors[j]));
    return frobenius_distance(t, expand(CPDecomposition(std::move(projected))));
}

inline ApproximationResult bounded_low_rank_general(const DenseTensor& t,
                                                    const NetSearchConfig& cfg) {
    const int l = t.order();
    if (l < 3) throw TensorError("bounded_low_rank: order must be >= 3");
    cfg.rho.validate();
    if (!cfg.symmetric && static_cast<int>(cfg.rho.rho.size()) != l)
        throw TensorError("bounded_low_rank: one rho per mode required");
    if (cfg.symmetric) {
        for (int j = 1; j < l; ++j)
            if (t.shape()[j] != t.shape()[0])
                throw TensorError("bounded_low_rank: symmetric search needs equal mode sizes");
    }

    ApproximationResult out;
    if (cfg.rank == 0) {
        std::vector<Eigen::MatrixXd> factors;
        for (int j = 0; j < l; ++j) factors.push_back(Eigen::MatrixXd::Zero(t.shape()[j], 0));
        out.decomposition.factors = std::move(factors);
        out.achieved_error = t.frobenius_norm();
        out.exhaustive = true;
        out.resolution_met = true;
        return out;
    }
    if (cfg.rank < 0) throw TensorError("bounded_low_rank: negative rank");

    const double res = cfg.effective_resolution(l);
    ModeSubspaces sub = compute_mode_subspaces(t, cfg.rank);
    out.subspace_residuals = sub.residuals;

    detail::NetSearchState st;
    st.t = &t;
    st.order = l;
    st.rank = cfg.rank;
    st.symmetric = cfg.symmetric;
    st.budget = cfg.budget;
    const int slots = st.effective_modes();
    for (int j = 0; j < slots; ++j) {
        st.proj.push_back(&sub.projectors[j]);
        const int d = sub.projectors[j].dim();
        st.step.push_back(2.0 * res / std::sqrt(static_cast<double>(d)));
        const double rho_j = cfg.symmetric ? cfg.rho.rho[0] : cfg.rho.rho[j];
        st.keep_radius.push_back(rho_j + res);
    }
    st.coords.assign(static_cast<size_t>(slots),
                     std::vector<Eigen::VectorXi>(static_cast<size_t>(cfg.rank)));
    for (int j = 0; j < slots; ++j)
        for (int r = 0; r < cfg.rank; ++r)
            st.coords[j][r] = Eigen::VectorXi::Zero(sub.projectors[j].dim());

    // Full tuple count of the finest net, for strategy selection.
    double full_count = 1.0;
    {
        const int column_slots = st.symmetric ? cfg.rank : l * cfg.rank;
        for (int j = 0; j < slots; ++j) {
            const double per = detail::count_grid(sub.projectors[j].dim(), st.step[j], 0,
                                                  st.keep_radius[j]);
            const int cols_here = st.symmetric ? cfg.rank : cfg.rank;
            for (int c = 0; c < cols_here; ++c) full_count = std::min(full_count * per, 1e300);
        }
        (void)column_slots;
    }

    const bool exhaustive =
        cfg.strategy == NetSearchConfig::Strategy::Exhaustive ||
        (cfg.strategy == NetSearchConfig::Strategy::Auto &&
         full_count <= static_cast<double>(cfg.budget));

    double best_err = std::numeric_limits<double>::infinity();
    std::vector<std::vector<Eigen::VectorXi>> best_coords = st.coords;

    auto remember_if_better = [&](double err) {
        if (err < best_err) {
            best_err = err;
            best_coords = st.coords;
        }
    };

    if (exhaustive) {
        // full enumeration over net tuples; mode-0 columns in non-decreasing
        // net order (rank-1 terms commute)
        std::vector<std::vector<Eigen::VectorXi>> nets(static_cast<size_t>(slots));
        for (int j = 0; j < slots; ++j)
            nets[j] = detail::grid_coords(sub.projectors[j].dim(), st.step[j], 0,
                                          st.keep_radius[j]);
        const int total_cols = slots * cfg.rank;
        std::vector<std::int64_t> pick(static_cast<size_t>(total_cols), 0);
        auto slot_of = [&](int c) { return c / cfg.rank; };
        auto rank_of = [&](int c) { return c % cfg.rank; };
        bool done = false;
        while (!done) {
            bool admissible = true;
            // commutation constraint within slot 0
            for (int r = 1; r < cfg.rank && admissible; ++r)
                if (pick[r] < pick[r - 1]) admissible = false;
            if (admissible) {
                for (int c = 0; c < total_cols; ++c)
                    st.coords[slot_of(c)][rank_of(c)] = nets[slot_of(c)][pick[c]];
                if (!st.charge_eval()) break;
                remember_if_better(detail::tensor_error(t, st.decomposition()));
            }
            int c = total_cols - 1;
            while (c >= 0 &&
                   pick[c] == static_cast<std::int64_t>(nets[slot_of(c)].size()) - 1)
                pick[c--] = 0;
            if (c < 0)
                done = true;
            else
                ++pick[c];
        }
        st.coords = best_coords;
        out.exhaustive = !st.budget_hit;
    } else {
        // Progressive: coarse init, then level-by-level local refinement.
        // pick the coarsest level whose joint enumeration fits the budget
        int max_level = 0;
        for (int j = 0; j < slots; ++j) {
            int L = 0;
            while (st.step[j] * static_cast<double>(std::int64_t{1} << (L + 1)) <=
                   st.keep_radius[j])
                ++L;
            max_level = std::max(max_level, L);
        }
        auto joint_count_at = [&](int L) {
            double c = 1.0;
            for (int j = 0; j < slots; ++j) {
                const double per =
                    detail::count_grid(sub.projectors[j].dim(), st.step[j], L,
                                       st.keep_radius[j]);
                for (int r = 0; r < cfg.rank; ++r) c = std::min(c * per, 1e300);
            }
            return c;
        };
        int init_level = max_level;
        while (init_level > 0 &&
               joint_count_at(init_level - 1) <=
                   static_cast<double>(cfg.coarse_joint_budget))
            --init_level;

        // deterministic multi-start: refine the best coarse candidates
        std::vector<std::pair<double, std::vector<std::vector<Eigen::VectorXi>>>> starts;
        auto offer_start = [&](double err) {
            if (static_cast<int>(starts.size()) < cfg.multistart) {
                starts.emplace_back(err, st.coords);
                std::sort(starts.begin(), starts.end(),
                          [](const auto& a, const auto& b) { return a.first < b.first; });
            } else if (err < starts.back().first) {
                starts.back() = {err, st.coords};
                std::sort(starts.begin(), starts.end(),
                          [](const auto& a, const auto& b) { return a.first < b.first; });
            }
        };

        if (joint_count_at(init_level) <= static_cast<double>(cfg.coarse_joint_budget)) {
            // joint exhaustive enumeration at the coarse level
            std::vector<std::vector<Eigen::VectorXi>> nets(static_cast<size_t>(slots));
            for (int j = 0; j < slots; ++j)
                nets[j] = detail::grid_coords(sub.projectors[j].dim(), st.step[j], init_level,
                                              st.keep_radius[j]);
            const int total_cols = slots * cfg.rank;
            std::vector<std::int64_t> pick(static_cast<size_t>(total_cols), 0);
            auto slot_of = [&](int c) { return c / cfg.rank; };
            auto rank_of = [&](int c) { return c % cfg.rank; };
            bool done = false;
            while (!done) {
                bool admissible = true;
                for (int r = 1; r < cfg.rank && admissible; ++r)
                    if (pick[r] < pick[r - 1]) admissible = false;
                if (admissible) {
                    for (int c = 0; c < total_cols; ++c)
                        st.coords[slot_of(c)][rank_of(c)] = nets[slot_of(c)][pick[c]];
                    if (!st.charge_eval()) break;
                    const double e = detail::tensor_error(t, st.decomposition());
                    remember_if_better(e);
                    offer_start(e);
                }
                int c = total_cols - 1;
                while (c >= 0 &&
                       pick[c] == static_cast<std::int64_t>(nets[slot_of(c)].size()) - 1)
                    pick[c--] = 0;
                if (c < 0)
                    done = true;
                else
                    ++pick[c];
            }
        } else {
            // greedy rank-1 deflation at a finer coarse level
            int g_level = max_level;
            auto rank1_count_at = [&](int L) {
                double c = 1.0;
                for (int j = 0; j < (st.symmetric ? 1 : l); ++j) {
                    const int jj = st.symmetric ? 0 : j;
                    c = std::min(c * detail::count_grid(sub.projectors[jj].dim(), st.step[jj],
                                                        L, st.keep_radius[jj]),
                                 1e300);
                }
                return c;
            };
            while (g_level > 0 && rank1_count_at(g_level - 1) <=
                                      static_cast<double>(cfg.coarse_rank1_budget))
                --g_level;
            std::vector<std::vector<Eigen::VectorXi>> nets(static_cast<size_t>(slots));
            for (int j = 0; j < slots; ++j)
                nets[j] = detail::grid_coords(sub.projectors[j].dim(), st.step[j], g_level,
                                              st.keep_radius[j]);
            std::vector<double> residual(t.values());
            const auto& shape = t.shape();
            for (int r = 0; r < cfg.rank; ++r) {
                double best1 = std::numeric_limits<double>::infinity();
                std::vector<Eigen::VectorXi> best_pick(static_cast<size_t>(slots));
                for (int j = 0; j < slots; ++j)
                    best_pick[static_cast<size_t>(j)] =
                        Eigen::VectorXi::Zero(sub.projectors[j].dim());
                std::vector<std::int64_t> pick(static_cast<size_t>(st.symmetric ? 1 : l), 0);
                const int nslots = st.symmetric ? 1 : l;
                bool done = false;
                std::vector<Eigen::VectorXd> cols(static_cast<size_t>(l));
                while (!done) {
                    for (int j = 0; j < l; ++j) {
                        const int jj = st.symmetric ? 0 : j;
                        const Eigen::VectorXi& c = nets[jj][pick[st.symmetric ? 0 : j]];
                        Eigen::VectorXd x(c.size());
                        for (int i = 0; i < c.size(); ++i) x(i) = c(i) * st.step[jj];
                        cols[j] = sub.projectors[jj].from_coords(x);
                    }
                    if (!st.charge_eval()) break;
                    const double e = detail::rank1_residual_error(residual, shape, cols);
                    if (e < best1) {
                        best1 = e;
                        for (int j = 0; j < nslots; ++j) best_pick[j] = nets[j][pick[j]];
                    }
                    int c = nslots - 1;
                    while (c >= 0 && pick[c] == static_cast<std::int64_t>(
                                                    nets[st.symmetric ? 0 : c].size()) -
                                                    1)
                        pick[c--] = 0;
                    if (c < 0)
                        done = true;
                    else
                        ++pick[c];
                }
                for (int j = 0; j < slots; ++j) st.coords[j][r] = best_pick[j];
                // subtract the accepted rank-1 term from the working residual
                std::vector<Eigen::VectorXd> acc(static_cast<size_t>(l));
                for (int j = 0; j < l; ++j) acc[j] = st.column(j, r);
                std::vector<int> idx(shape.size(), 0);
                std::int64_t f = 0;
                do {
                    double p = 1.0;
                    for (int j = 0; j < l; ++j) p *= acc[j](idx[j]);
                    residual[f++] -= p;
                } while (next_index(idx, shape));
            }
            init_level = g_level;
            const double e = detail::tensor_error(t, st.decomposition());
            remember_if_better(e);
            offer_start(e);
            // all-zero columns as a second start: coordinate descent then
            // builds the terms one by one at each level
            for (int j = 0; j < slots; ++j)
                for (int r = 0; r < cfg.rank; ++r) st.coords[j][r].setZero();
            offer_start(t.frobenius_norm());
        }

        for (int contract_mode : {1, 0, 2}) {
            std::vector<std::vector<Eigen::VectorXi>> sc;
            if (detail::spectral_start(st, t, cfg, contract_mode, sc)) {
                st.coords = sc;
                const double e = detail::tensor_error(t, st.decomposition());
                remember_if_better(e);
                starts.insert(starts.begin(), {e, std::move(sc)});
            }
            if (st.symmetric) break;
        }

        // refine each start, halving the stride down to the finest grid
        for (const auto& start : starts) {
            if (st.budget_hit) break;
            st.coords = start.second;
            double cur_err = detail::tensor_error(t, st.decomposition());
            for (int level = init_level; level >= 0 && !st.budget_hit; --level) {
                for (int sweep = 0; sweep < cfg.max_sweeps_per_level; ++sweep) {
                    bool any = false;
                    for (int j = 0; j < slots && !st.budget_hit; ++j)
                        for (int r = 0; r < cfg.rank && !st.budget_hit; ++r)
                            if (detail::refine_column(st, j, r, level, cfg.refine_radius,
                                                      cfg.column_net_cap, cur_err))
                                any = true;
                    if (!any) break;
                }
            }
            remember_if_better(cur_err);
        }

        if (cfg.last_mode_ls_accelerator && !st.budget_hit) {
            st.coords = best_coords;
            detail::last_mode_ls_step(st, cfg.symmetric ? cfg.rho.rho[0] : cfg.rho.rho[l - 1]);
            remember_if_better(detail::tensor_error(t, st.decomposition()));
        }
        st.coords = best_coords;
    }

    out.decomposition = st.decomposition();
    out.achieved_error = detail::tensor_error(t, out.decomposition);
    out.candidates_evaluated = st.evals;
    out.partial = st.budget_hit;
    out.resolution_met = !st.budget_hit;
    return out;
}

}  // namespace kt
