// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kt/decompose.hpp"
#include "kt/matching.hpp"
#include "kt/rng.hpp"
#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kt {

/// Mixture with hidden label h and l conditionally independent views.
/// Column r of means[j] is E[x^(j) | h = r].
struct MultiViewParams {
    Eigen::VectorXd weights;
    std::vector<Eigen::MatrixXd> means;
    bool probability_columns = true;  // columns are distributions over categories
    double c_max = 1.0;               // entrywise bound in the general case

    int order() const { return static_cast<int>(means.size()); }
    int rank() const { return static_cast<int>(weights.size()); }

    void validate() const {
        if (means.empty()) throw TensorError("MultiViewParams: no view matrices");
        const int R = rank();
        if (R < 1) throw TensorError("MultiViewParams: empty weights");
        double sum = 0.0;
        for (int r = 0; r < R; ++r) {
            if (!(weights(r) > 0.0)) throw TensorError("MultiViewParams: weights must be positive");
            sum += weights(r);
        }
        if (std::abs(sum - 1.0) > 1e-12) throw TensorError("MultiViewParams: weights must sum to 1");
        for (const auto& m : means) {
            if (m.cols() != R) throw TensorError("MultiViewParams: mean column count mismatch");
            if (probability_columns) {
                for (int r = 0; r < R; ++r) {
                    double cs = 0.0;
                    for (Eigen::Index i = 0; i < m.rows(); ++i) {
                        if (m(i, r) < 0.0)
                            throw TensorError("MultiViewParams: negative probability entry");
                        cs += m(i, r);
                    }
                    if (std::abs(cs - 1.0) > 1e-10)
                        throw TensorError("MultiViewParams: mean columns must sum to 1");
                }
            } else if (m.cwiseAbs().maxCoeff() > c_max + 1e-12) {
                throw TensorError("MultiViewParams: entry exceeds c_max");
            }
        }
    }

    std::vector<int> view_dims() const {
        std::vector<int> d;
        for (const auto& m : means) d.push_back(static_cast<int>(m.rows()));
        return d;
    }
};

/// One categorical draw per view.
using MultiViewSample = std::vector<int>;

inline std::vector<MultiViewSample> sample_multiview(const MultiViewParams& params,
                                                     std::int64_t n_samples, std::uint64_t seed) {
    params.validate();
    if (!params.probability_columns)
        throw TensorError("sample_multiview: indicator sampling needs probability columns");
    Rng rng(seed);
    std::vector<MultiViewSample> out;
    out.reserve(static_cast<size_t>(n_samples));
    const int l = params.order();
    for (std::int64_t s = 0; s < n_samples; ++s) {
        const int h = rng.categorical(params.weights);
        MultiViewSample x(static_cast<size_t>(l));
        for (int j = 0; j < l; ++j) x[static_cast<size_t>(j)] = rng.categorical(params.means[j].col(h));
        out.push_back(std::move(x));
    }
    return out;
}

/// Empirical average of the indicator outer products x^(1) (x) ... (x) x^(l).
inline DenseTensor estimate_moment_tensor(const std::vector<MultiViewSample>& samples,
                                          const std::vector<int>& view_dims) {
    if (samples.empty()) throw TensorError("estimate_moment_tensor: empty sample set");
    const int l = static_cast<int>(view_dims.size());
    DenseTensor t = DenseTensor::zeros(view_dims);
    auto& v = t.mutable_values();
    std::vector<int> idx(static_cast<size_t>(l));
    for (const auto& s : samples) {
        if (static_cast<int>(s.size()) != l)
            throw TensorError("estimate_moment_tensor: sample arity mismatch");
        for (int j = 0; j < l; ++j) {
            if (s[static_cast<size_t>(j)] < 0 || s[static_cast<size_t>(j)] >= view_dims[static_cast<size_t>(j)])
                throw TensorError("estimate_moment_tensor: category index out of range");
            idx[static_cast<size_t>(j)] = s[static_cast<size_t>(j)];
        }
        v[static_cast<size_t>(t.flat_index(idx))] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (double& x : v) x *= inv;
    return t;
}

/// Analytic moment tensor: weights absorbed into the last view's factor.
inline DenseTensor population_moment_tensor(const MultiViewParams& params) {
    params.validate();
    std::vector<Eigen::MatrixXd> f = params.means;
    f.back() = f.back() * params.weights.asDiagonal();
    return expand(CPDecomposition(std::move(f)));
}

/// Sample-size bound for entrywise moment accuracy eps:
/// constant * eps^-2 * (c_max n)^l * sqrt(l log n), scaled by
/// log(1/(1-confidence)) normalized to 1 at confidence 0.9.
inline std::int64_t required_samples_multiview(double eps, int l, int n, double c_max,
                                               double confidence = 0.9, double constant = 8.0) {
    if (!(eps > 0.0)) throw TensorError("required_samples_multiview: eps must be positive");
    if (l < 1 || n < 1) throw TensorError("required_samples_multiview: bad l or n");
    if (!(confidence > 0.0 && confidence < 1.0))
        throw TensorError("required_samples_multiview: confidence in (0,1) required");
    const double logn = std::max(std::log(static_cast<double>(n)), 1.0);
    const double conf_factor = std::log(1.0 / (1.0 - confidence)) / std::log(10.0);
    const double nd = constant * conf_factor / (eps * eps) *
                      std::pow(c_max * static_cast<double>(n), l) *
                      std::sqrt(static_cast<double>(l) * logn);
    if (!(nd < 9e15)) throw TensorError("required_samples_multiview: sample count overflows");
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(nd)));
}

struct MultiViewDiagnostics {
    double decomposition_error = 0.0;
    double weight_sum_raw = 0.0;   // before renormalization
    double min_weight_raw = 0.0;
    bool partial = false;
    bool normalization_failed = false;  // some column's signed mass was ~0 or negative weight
};

struct MultiViewEstimate {
    MultiViewParams params;
    MultiViewDiagnostics diagnostics;
};

/// Recovery from the l-th order moment tensor: CP-decompose, rescale the
/// first l-1 factors' columns to unit signed l1 mass, read weights off the
/// last factor's column masses.
inline MultiViewEstimate learn_multiview_from_tensor(const DenseTensor& t, int R,
                                                     NetSearchConfig cfg) {
    const int l = t.order();
    if (l < 3) throw TensorError("learn_multiview_from_tensor: order must be >= 3");
    if (R < 1) throw TensorError("learn_multiview_from_tensor: rank must be >= 1");
    cfg.rank = R;
    cfg.symmetric = false;
    if (static_cast<int>(cfg.rho.rho.size()) != l) cfg.rho = BoundsSpec::uniform(1.0, l);

    ApproximationResult res = bounded_low_rank_general(t, cfg);
    std::vector<Eigen::MatrixXd> factors = res.decomposition.factors;

    MultiViewEstimate out;
    out.diagnostics.decomposition_error = res.achieved_error;
    out.diagnostics.partial = res.partial;

    // move each leading column's signed mass into the last factor
    for (int j = 0; j < l - 1; ++j) {
        for (int r = 0; r < R; ++r) {
            const double mass = factors[j].col(r).sum();
            if (std::abs(mass) < 1e-12) {
                out.diagnostics.normalization_failed = true;
                continue;
            }
            factors[j].col(r) /= mass;
            factors[static_cast<size_t>(l - 1)].col(r) *= mass;
        }
    }
    Eigen::VectorXd w(R);
    for (int r = 0; r < R; ++r) {
        const double mass = factors[static_cast<size_t>(l - 1)].col(r).sum();
        w(r) = mass;
        if (mass > 1e-12) factors[static_cast<size_t>(l - 1)].col(r) /= mass;
    }
    out.diagnostics.weight_sum_raw = w.sum();
    out.diagnostics.min_weight_raw = w.minCoeff();
    if (w.minCoeff() <= 0.0) out.diagnostics.normalization_failed = true;
    if (w.sum() > 0.0) w /= w.sum();

    out.params.weights = w;
    out.params.means = std::move(factors);
    out.params.probability_columns = false;  // estimates may have small negatives
    out.params.c_max = 0.0;
    for (const auto& m : out.params.means)
        out.params.c_max = std::max(out.params.c_max, m.cwiseAbs().maxCoeff());
    return out;
}

inline MultiViewEstimate learn_multiview(const std::vector<MultiViewSample>& samples,
                                         const std::vector<int>& view_dims, int R,
                                         const NetSearchConfig& cfg) {
    return learn_multiview_from_tensor(estimate_moment_tensor(samples, view_dims), R, cfg);
}

/// Hidden Markov model with stationary initial distribution.
struct HMMParams {
    Eigen::MatrixXd transition;   // R x R, column-stochastic: P(z' = i | z = j) = P(i,j)
    Eigen::MatrixXd observation;  // n x R, column-stochastic
    Eigen::VectorXd stationary;

    int states() const { return static_cast<int>(transition.cols()); }
    int alphabet() const { return static_cast<int>(observation.rows()); }

    void validate(double tol = 1e-10) const {
        const int R = states();
        if (transition.rows() != R) throw TensorError("HMMParams: transition must be square");
        if (observation.cols() != R) throw TensorError("HMMParams: observation column mismatch");
        if (stationary.size() != R) throw TensorError("HMMParams: stationary length mismatch");
        for (int r = 0; r < R; ++r) {
            if (std::abs(transition.col(r).sum() - 1.0) > tol ||
                std::abs(observation.col(r).sum() - 1.0) > tol)
                throw TensorError("HMMParams: columns must sum to 1");
            if (transition.col(r).minCoeff() < -tol || observation.col(r).minCoeff() < -tol)
                throw TensorError("HMMParams: negative probability");
            if (!(stationary(r) > 0.0)) throw TensorError("HMMParams: stationary must be positive");
        }
        if ((transition * stationary - stationary).norm() > tol)
            throw TensorError("HMMParams: distribution is not stationary");
    }
};

/// Stationary distribution of a column-stochastic matrix (least-squares
/// solve of (P - I)w = 0 with sum(w) = 1).
inline Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& p) {
    const int R = static_cast<int>(p.cols());
    if (p.rows() != R) throw TensorError("stationary_distribution: square matrix required");
    Eigen::MatrixXd a(R + 1, R);
    a.topRows(R) = p - Eigen::MatrixXd::Identity(R, R);
    a.bottomRows(1).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(R + 1);
    b(R) = 1.0;
    return a.colPivHouseholderQr().solve(b);
}

/// Reverse-time transition kernel diag(w) P^T diag(w)^-1.
inline Eigen::MatrixXd reverse_transition(const Eigen::MatrixXd& p, const Eigen::VectorXd& w) {
    const int R = static_cast<int>(p.cols());
    if (p.rows() != R || w.size() != R) throw TensorError("reverse_transition: shape mismatch");
    for (int r = 0; r < R; ++r)
        if (!(w(r) > 0.0)) throw TensorError("reverse_transition: stationary entries must be positive");
    return w.asDiagonal() * p.transpose() * w.cwiseInverse().asDiagonal();
}

/// Number of window codes n^q, overflow-checked.
inline std::int64_t hmm_window_count(int n, int q, std::int64_t budget = (1LL << 20)) {
    if (n < 1 || q < 0) throw TensorError("hmm_window_count: bad arguments");
    std::int64_t c = 1;
    for (int i = 0; i < q; ++i) {
        c *= n;
        if (c > budget)
            throw BudgetExceeded("hmm_window_count: n^q = " + std::to_string(n) + "^" +
                                 std::to_string(q) + " exceeds budget");
    }
    return c;
}

/// Code of the window before the middle observation, chronological symbols
/// (X_1..X_q): the most recent symbol is the least significant digit.
inline std::int64_t hmm_encode_before(const std::vector<int>& window, int n) {
    std::int64_t code = 0;
    for (int x : window) {
        if (x < 0 || x >= n) throw TensorError("hmm_encode_before: symbol out of range");
        code = code * n + x;
    }
    return code;
}

/// Code of the window after the middle observation, chronological symbols
/// (X_{q+2}..X_{2q+1}): the earliest symbol is the least significant digit.
inline std::int64_t hmm_encode_after(const std::vector<int>& window, int n) {
    std::int64_t code = 0;
    for (auto it = window.rbegin(); it != window.rend(); ++it) {
        if (*it < 0 || *it >= n) throw TensorError("hmm_encode_after: symbol out of range");
        code = code * n + *it;
    }
    return code;
}

inline std::vector<int> hmm_decode_before(std::int64_t code, int n, int q) {
    std::vector<int> w(static_cast<size_t>(q));
    for (int t = q - 1; t >= 0; --t) {
        w[static_cast<size_t>(t)] = static_cast<int>(code % n);
        code /= n;
    }
    return w;
}

inline std::vector<int> hmm_decode_after(std::int64_t code, int n, int q) {
    std::vector<int> w(static_cast<size_t>(q));
    for (int t = 0; t < q; ++t) {
        w[static_cast<size_t>(t)] = static_cast<int>(code % n);
        code /= n;
    }
    return w;
}

/// Population view matrices for windows of length q around a middle
/// observation, conditioned on the middle hidden state:
/// before = (...((M Pr) (kr) M) Pr ...) Pr,  middle = M,
/// after = (...((M P) (kr) M) P ...) P, with Pr the reverse kernel.
struct HMMViewMatrices {
    Eigen::MatrixXd before;  // n^q x R
    Eigen::MatrixXd middle;  // n x R
    Eigen::MatrixXd after;   // n^q x R
};

inline HMMViewMatrices hmm_view_matrices(const HMMParams& params, int q) {
    params.validate();
    hmm_window_count(params.alphabet(), q);
    const Eigen::MatrixXd pr = reverse_transition(params.transition, params.stationary);
    Eigen::MatrixXd before = params.observation * pr;
    Eigen::MatrixXd after = params.observation * params.transition;
    for (int k = 2; k <= q; ++k) {
        before = khatri_rao(before, params.observation) * pr;
        after = khatri_rao(after, params.observation) * params.transition;
    }
    return HMMViewMatrices{before, params.observation, after};
}

/// Analytic 3-view moment tensor of the windowed chain (weights on the
/// middle state's stationary distribution, absorbed into the last mode).
inline DenseTensor hmm_population_tensor(const HMMParams& params, int q) {
    HMMViewMatrices v = hmm_view_matrices(params, q);
    MultiViewParams mv;
    mv.weights = params.stationary;
    mv.means = {v.before, v.middle, v.after};
    mv.probability_columns = true;
    return population_moment_tensor(mv);
}

inline std::vector<std::vector<int>> sample_hmm(const HMMParams& params, int length,
                                                std::int64_t n_samples, std::uint64_t seed) {
    params.validate();
    if (length < 1) throw TensorError("sample_hmm: length must be >= 1");
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(n_samples));
    for (std::int64_t s = 0; s < n_samples; ++s) {
        std::vector<int> seq(static_cast<size_t>(length));
        int z = rng.categorical(params.stationary);
        for (int t = 0; t < length; ++t) {
            seq[static_cast<size_t>(t)] = rng.categorical(params.observation.col(z));
            if (t + 1 < length) z = rng.categorical(params.transition.col(z));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

/// Converts sequences of 2q+1 consecutive observations into 3-view samples
/// (encoded before-window, middle symbol, encoded after-window). Longer
/// sequences use their centered window.
inline std::vector<MultiViewSample> hmm_embed(const std::vector<std::vector<int>>& sequences,
                                              int q, int n) {
    hmm_window_count(n, q);
    std::vector<MultiViewSample> out;
    out.reserve(sequences.size());
    for (const auto& seq : sequences) {
        const int m = static_cast<int>(seq.size());
        if (m < 2 * q + 1) throw TensorError("hmm_embed: sequence shorter than 2q+1");
        const int start = (m - (2 * q + 1)) / 2;
        std::vector<int> before(seq.begin() + start, seq.begin() + start + q);
        std::vector<int> after(seq.begin() + start + q + 1, seq.begin() + start + 2 * q + 1);
        out.push_back({static_cast<int>(hmm_encode_before(before, n)), seq[static_cast<size_t>(start + q)],
                       static_cast<int>(hmm_encode_after(after, n))});
    }
    return out;
}

struct HMMDiagnostics {
    double sigma_min_d = 0.0;      // conditioning of the window matrix used to solve for P
    double decomposition_error = 0.0;
    bool partial = false;
    bool normalization_failed = false;
};

struct HMMEstimate {
    HMMParams params;
    HMMDiagnostics diagnostics;
};

namespace detail {

/// Column permutation matching two estimates of the same observation matrix.
inline std::vector<int> match_columns(const Eigen::MatrixXd& from, const Eigen::MatrixXd& to) {
    const int R = static_cast<int>(from.cols());
    Eigen::MatrixXd cost(R, R);
    for (int r = 0; r < R; ++r)
        for (int p = 0; p < R; ++p) cost(r, p) = (from.col(r) - to.col(p)).squaredNorm();
    return hungarian(cost);
}

}  // namespace detail

/// Recovery from the windowed 3-view moment tensors. `t_q` is the window-q
/// tensor; for q >= 2, `t_qm1` is the window-(q-1) tensor from the same
/// source (used to recover the D factor of the row-sum identity D P).
inline HMMEstimate learn_hmm_from_tensors(const DenseTensor& t_q, const DenseTensor* t_qm1,
                                          int n, int R, int q, NetSearchConfig cfg,
                                          double d_tolerance = 1e-8) {
    if (q < 1) throw TensorError("learn_hmm_from_tensors: q must be >= 1");
    if (q >= 2 && t_qm1 == nullptr)
        throw TensorError("learn_hmm_from_tensors: window q-1 tensor required for q >= 2");
    MultiViewEstimate mv = learn_multiview_from_tensor(t_q, R, cfg);

    HMMEstimate out;
    out.diagnostics.decomposition_error = mv.diagnostics.decomposition_error;
    out.diagnostics.partial = mv.diagnostics.partial;
    out.diagnostics.normalization_failed = mv.diagnostics.normalization_failed;

    Eigen::MatrixXd m_est = mv.params.means[1];
    const Eigen::MatrixXd& c_est = mv.params.means[2];

    Eigen::MatrixXd dp;  // D * P in the estimate's state labeling
    Eigen::MatrixXd d;
    if (q == 1) {
        dp = c_est;  // C = M P
        d = m_est;
    } else {
        // sum rows of the after-window factor over the most recent symbol
        // (the fastest index): collapses (D (kr) M) P to D P
        const std::int64_t rows_d = hmm_window_count(n, q - 1);
        dp = Eigen::MatrixXd::Zero(rows_d, R);
        for (std::int64_t b = 0; b < rows_d; ++b)
            for (int i = 0; i < n; ++i) dp.row(b) += c_est.row(b * n + i);
        // D is the after-window factor of an independent run at window q-1;
        // relabel its states to this run's labeling via the observation factor
        MultiViewEstimate mv_inner = learn_multiview_from_tensor(*t_qm1, R, cfg);
        std::vector<int> perm = detail::match_columns(m_est, mv_inner.params.means[1]);
        d = Eigen::MatrixXd(rows_d, R);
        for (int r = 0; r < R; ++r) d.col(r) = mv_inner.params.means[2].col(perm[static_cast<size_t>(r)]);
    }

    out.diagnostics.sigma_min_d = sigma_min(d);
    if (out.diagnostics.sigma_min_d < d_tolerance)
        throw NumericalFailure("learn_hmm_from_tensors: window matrix is ill-conditioned (sigma_min " +
                               std::to_string(out.diagnostics.sigma_min_d) + ")");
    Eigen::MatrixXd p_est = d.colPivHouseholderQr().solve(dp);

    // project the estimates back to stochastic matrices
    auto clean_stochastic = [](Eigen::MatrixXd& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, c) = std::max(m(i, c), 0.0);
            const double s = m.col(c).sum();
            if (s > 0.0) m.col(c) /= s;
        }
    };
    clean_stochastic(p_est);
    clean_stochastic(m_est);

    out.params.transition = p_est;
    out.params.observation = m_est;
    out.params.stationary = stationary_distribution(p_est);
    return out;
}

inline HMMEstimate learn_hmm(const std::vector<std::vector<int>>& sequences, int n, int R, int q,
                             const NetSearchConfig& cfg, double d_tolerance = 1e-8) {
    const std::int64_t wq = hmm_window_count(n, q);
    std::vector<int> dims{static_cast<int>(wq), n, static_cast<int>(wq)};
    DenseTensor t_q = estimate_moment_tensor(hmm_embed(sequences, q, n), dims);
    if (q == 1) return learn_hmm_from_tensors(t_q, nullptr, n, R, q, cfg, d_tolerance);
    const std::int64_t wqm1 = hmm_window_count(n, q - 1);
    std::vector<int> dims1{static_cast<int>(wqm1), n, static_cast<int>(wqm1)};
    DenseTensor t_qm1 = estimate_moment_tensor(hmm_embed(sequences, q - 1, n), dims1);
    return learn_hmm_from_tensors(t_q, &t_qm1, n, R, q, cfg, d_tolerance);
}

/// Spherical Gaussian mixture with a shared standard deviation.
struct GaussianMixtureParams {
    Eigen::VectorXd weights;
    Eigen::MatrixXd means;  // n x R
    double sigma = 1.0;

    int dim() const { return static_cast<int>(means.rows()); }
    int rank() const { return static_cast<int>(means.cols()); }

    void validate() const {
        if (rank() < 1) throw TensorError("GaussianMixtureParams: empty mixture");
        if (weights.size() != rank()) throw TensorError("GaussianMixtureParams: weight count mismatch");
        double s = 0.0;
        for (int r = 0; r < rank(); ++r) {
            if (!(weights(r) > 0.0)) throw TensorError("GaussianMixtureParams: weights must be positive");
            s += weights(r);
        }
        if (std::abs(s - 1.0) > 1e-12) throw TensorError("GaussianMixtureParams: weights must sum to 1");
        if (!(sigma > 0.0)) throw TensorError("GaussianMixtureParams: sigma must be positive");
    }
};

inline Eigen::MatrixXd sample_gaussian_mixture(const GaussianMixtureParams& params,
                                               std::int64_t n_samples, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    Eigen::MatrixXd out(n_samples, params.dim());
    for (std::int64_t s = 0; s < n_samples; ++s) {
        const int h = rng.categorical(params.weights);
        for (int i = 0; i < params.dim(); ++i)
            out(s, i) = params.means(i, h) + params.sigma * rng.normal();
    }
    return out;
}

/// s-th moment of the univariate N(0, sigma^2): 0 for odd s, sigma^s (s-1)!!
/// for even s.
inline double gaussian_univariate_moment(int s, double sigma) {
    if (s < 0) throw TensorError("gaussian_univariate_moment: negative order");
    if (s % 2 == 1) return 0.0;
    double dfact = 1.0;
    for (int k = s - 1; k >= 2; k -= 2) dfact *= k;
    return std::pow(sigma, s) * dfact;
}

/// E[eps^(x) order] for eps ~ N(0, sigma^2 I_n): entry (j_1..j_order) is the
/// product over groups of equal coordinates of the group-size moment.
inline DenseTensor gaussian_noise_tensor(int order, double sigma, int n) {
    if (order < 0) throw TensorError("gaussian_noise_tensor: negative order");
    if (order == 0) return DenseTensor({1}, {1.0});
    std::vector<int> shape(static_cast<size_t>(order), n);
    DenseTensor t = DenseTensor::zeros(shape);
    if (order % 2 == 1) return t;
    auto& v = t.mutable_values();
    std::vector<int> idx(static_cast<size_t>(order), 0);
    std::vector<int> count(static_cast<size_t>(n));
    std::int64_t f = 0;
    do {
        std::fill(count.begin(), count.end(), 0);
        for (int j : idx) ++count[static_cast<size_t>(j)];
        double p = 1.0;
        for (int c : count)
            if (c > 0) p *= gaussian_univariate_moment(c, sigma);
        v[static_cast<size_t>(f++)] = p;
    } while (next_index(idx, shape));
    return t;
}

/// Empirical average of x^(x) order over sample rows.
inline DenseTensor empirical_power_tensor(const Eigen::MatrixXd& samples, int order) {
    if (samples.rows() == 0) throw TensorError("empirical_power_tensor: empty sample set");
    if (order < 1) throw TensorError("empirical_power_tensor: order must be >= 1");
    const int n = static_cast<int>(samples.cols());
    std::vector<int> shape(static_cast<size_t>(order), n);
    DenseTensor t = DenseTensor::zeros(shape);
    auto& v = t.mutable_values();
    std::vector<int> idx(static_cast<size_t>(order), 0);
    for (Eigen::Index s = 0; s < samples.rows(); ++s) {
        std::fill(idx.begin(), idx.end(), 0);
        std::int64_t f = 0;
        do {
            double p = 1.0;
            for (int j : idx) p *= samples(s, j);
            v[static_cast<size_t>(f++)] += p;
        } while (next_index(idx, shape));
    }
    const double inv = 1.0 / static_cast<double>(samples.rows());
    for (double& x : v) x *= inv;
    return t;
}

namespace detail {

/// Subtracts from `raw` every mixed term Mom_|S| (x) noise over the
/// complementary positions, leaving Mom_order.
inline DenseTensor mom_from_raw(const std::vector<DenseTensor>& mom_lower,
                                const DenseTensor& raw, double sigma) {
    const int order = raw.order();
    const int n = raw.shape()[0];
    DenseTensor out = raw;
    auto& v = out.mutable_values();
    std::vector<DenseTensor> noise;
    for (int s = 0; s <= order; ++s) noise.push_back(gaussian_noise_tensor(s, sigma, n));
    for (unsigned mask = 0; mask + 1 < (1u << order); ++mask) {
        std::vector<int> in_pos, out_pos;
        for (int j = 0; j < order; ++j)
            ((mask >> j) & 1u ? in_pos : out_pos).push_back(j);
        const int r = static_cast<int>(in_pos.size());
        if ((order - r) % 2 == 1) continue;  // odd noise factor vanishes
        const DenseTensor& momr = mom_lower[static_cast<size_t>(r)];
        const DenseTensor& nz = noise[static_cast<size_t>(order - r)];
        std::vector<int> idx(static_cast<size_t>(order), 0);
        std::vector<int> mi(static_cast<size_t>(r)), ni(out_pos.size());
        std::int64_t f = 0;
        do {
            for (size_t k = 0; k < in_pos.size(); ++k) mi[k] = idx[static_cast<size_t>(in_pos[k])];
            for (size_t k = 0; k < out_pos.size(); ++k) ni[k] = idx[static_cast<size_t>(out_pos[k])];
            double term = r == 0 ? 1.0 : momr.at(mi);
            term *= (order == r) ? 1.0 : nz.at(ni);
            v[static_cast<size_t>(f++)] -= term;
        } while (next_index(idx, raw.shape()));
    }
    return out;
}

}  // namespace detail

/// Noise-corrected mean-power tensors Mom_1..Mom_l = sum_r w_r mu_r^(x)s,
/// computed inductively from empirical raw moments.
inline std::vector<DenseTensor> mom_tensors(const Eigen::MatrixXd& samples, int l, double sigma) {
    if (l < 1) throw TensorError("mom_tensors: order must be >= 1");
    std::vector<DenseTensor> mom;
    mom.push_back(DenseTensor({1}, {1.0}));  // Mom_0
    for (int s = 1; s <= l; ++s)
        mom.push_back(detail::mom_from_raw(mom, empirical_power_tensor(samples, s), sigma));
    return mom;
}

inline DenseTensor mom_tensor(const Eigen::MatrixXd& samples, int l, double sigma) {
    return mom_tensors(samples, l, sigma).back();
}

/// Analytic Mom_l for known parameters (oracle for tests and exact runs).
inline DenseTensor analytic_mom_tensor(const GaussianMixtureParams& params, int l) {
    params.validate();
    if (l < 1) throw TensorError("analytic_mom_tensor: order must be >= 1");
    if (l == 1) {
        Eigen::VectorXd v = params.means * params.weights;
        return DenseTensor({params.dim()}, std::vector<double>(v.data(), v.data() + v.size()));
    }
    std::vector<Eigen::MatrixXd> f(static_cast<size_t>(l), params.means);
    f.back() = params.means * params.weights.asDiagonal();
    return expand(CPDecomposition(std::move(f)));
}

/// sqrt of the smallest eigenvalue of the centered empirical covariance;
/// consistent for sigma when the means span at most n-1 dimensions.
inline double estimate_sigma(const Eigen::MatrixXd& samples) {
    const Eigen::Index N = samples.rows();
    const int n = static_cast<int>(samples.cols());
    if (N < n || N < 2) throw TensorError("estimate_sigma: not enough samples");
    Eigen::RowVectorXd mean = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalFailure("estimate_sigma: eigensolver failed");
    return std::sqrt(std::max(es.eigenvalues()(0), 0.0));
}

struct GaussianDiagnostics {
    double mom_l_error = 0.0;      // decomposition residual on Mom_l
    double weight_sum_raw = 0.0;
    bool partial = false;
    bool coefficient_fit_failed = false;  // some Mom_{l-1} coefficient came out nonpositive
    KrankCertificate mean_krank;          // post-hoc conditioning certificate
};

struct GaussianEstimate {
    GaussianMixtureParams params;
    GaussianDiagnostics diagnostics;
};

/// Recovery from exact or estimated Mom tensors. `mom_l` has order l >= 3;
/// `mom_lm1` has order l-1. Directions come from the symmetric decomposition
/// of Mom_l; the Mom_{l-1} copies of the means are fit on those directions
/// (for l-1 = 2 the symmetric decomposition alone is not unique);
/// weights via the projection-coefficient power formula.
inline GaussianEstimate learn_gaussian_mixture_from_moments(const DenseTensor& mom_l,
                                                            const DenseTensor& mom_lm1,
                                                            const DenseTensor& mom_1, int R,
                                                            double sigma, NetSearchConfig cfg,
                                                            double krank_tau = 100.0) {
    const int l = mom_l.order();
    if (l < 3) throw TensorError("learn_gaussian_mixture_from_moments: order must be >= 3");
    if (mom_lm1.order() != l - 1)
        throw TensorError("learn_gaussian_mixture_from_moments: Mom_{l-1} order mismatch");
    const int n = mom_l.shape()[0];

    GaussianEstimate out;
    out.params.sigma = sigma;
    if (R == 1) {
        out.params.weights = Eigen::VectorXd::Ones(1);
        out.params.means = Eigen::MatrixXd(n, 1);
        for (int i = 0; i < n; ++i) out.params.means(i, 0) = mom_1.at({i});
        out.diagnostics.weight_sum_raw = 1.0;
        out.diagnostics.mean_krank = robust_krank(out.params.means, krank_tau);
        return out;
    }

    cfg.rank = R;
    cfg.symmetric = true;
    if (cfg.rho.rho.size() != 1 && static_cast<int>(cfg.rho.rho.size()) != l)
        cfg.rho = BoundsSpec{{cfg.rho.rho.empty() ? 2.0 : cfg.rho.rho[0]}};
    if (cfg.rho.rho.empty()) cfg.rho = BoundsSpec{{2.0}};

    ApproximationResult res = bounded_low_rank_general(mom_l, cfg);
    out.diagnostics.mom_l_error = res.achieved_error;
    out.diagnostics.partial = res.partial;
    Eigen::MatrixXd u = res.decomposition.factors[0];  // columns ~ w^{1/l} mu

    // fit Mom_{l-1} coefficients on the recovered directions
    Eigen::MatrixXd dirs(n, R);
    for (int r = 0; r < R; ++r) {
        const double nu = u.col(r).norm();
        if (nu == 0.0) {
            out.diagnostics.coefficient_fit_failed = true;
            dirs.col(r).setZero();
        } else {
            dirs.col(r) = u.col(r) / nu;
        }
    }
    const std::int64_t cells = mom_lm1.size();
    Eigen::MatrixXd design(cells, R);
    const auto& shape1 = mom_lm1.shape();
    for (int r = 0; r < R; ++r) {
        std::vector<int> idx(static_cast<size_t>(l - 1), 0);
        std::int64_t f = 0;
        do {
            double p = 1.0;
            for (int j : idx) p *= dirs(j, r);
            design(f++, r) = p;
        } while (next_index(idx, shape1));
    }
    Eigen::Map<const Eigen::VectorXd> target(mom_lm1.values().data(), cells);
    Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);

    Eigen::VectorXd w(R);
    Eigen::MatrixXd means(n, R);
    const double expo = 1.0 / static_cast<double>(l - 1);
    for (int r = 0; r < R; ++r) {
        if (!(coef(r) > 0.0)) {
            // columns ~ w^{1/(l-1)} ||mu||... a nonpositive coefficient means
            // the direction sign flipped; for odd l-1 absorb it
            if ((l - 1) % 2 == 1 && coef(r) < 0.0) {
                dirs.col(r) = -dirs.col(r);
                coef(r) = -coef(r);
            } else {
                out.diagnostics.coefficient_fit_failed = true;
                coef(r) = std::abs(coef(r));
            }
        }
        Eigen::VectorXd v = std::pow(coef(r), expo) * dirs.col(r);  // ~ w^{1/(l-1)} mu
        // orient u_r along the fitted direction before the weight formula
        Eigen::VectorXd ur = u.col(r);
        if (ur.dot(v) < 0.0) ur = -ur;
        const double wr = recover_weight(v, ur, l);
        w(r) = wr;
        means.col(r) = ur / std::pow(wr, 1.0 / static_cast<double>(l));
    }
    out.diagnostics.weight_sum_raw = w.sum();
    if (w.minCoeff() <= 0.0 || !(w.sum() > 0.0)) {
        out.diagnostics.coefficient_fit_failed = true;
        w = w.cwiseMax(1e-12);
    }
    w /= w.sum();
    out.params.weights = w;
    out.params.means = means;
    out.diagnostics.mean_krank = robust_krank(means, krank_tau);
    return out;
}

/// End-to-end learner from samples. `sigma` empty means estimate it from the
/// centered covariance; `sigma_grid` non-empty tries each value and keeps the
/// one whose Mom_l decomposition residual is smallest.
inline GaussianEstimate learn_gaussian_mixture(const Eigen::MatrixXd& samples, int R, int l,
                                               std::optional<double> sigma,
                                               const NetSearchConfig& cfg,
                                               const std::vector<double>& sigma_grid = {},
                                               double krank_tau = 100.0) {
    std::vector<double> candidates = sigma_grid;
    if (candidates.empty()) candidates.push_back(sigma ? *sigma : estimate_sigma(samples));
    GaussianEstimate best;
    bool have = false;
    for (double s : candidates) {
        std::vector<DenseTensor> mom = mom_tensors(samples, l, s);
        GaussianEstimate est = learn_gaussian_mixture_from_moments(
            mom[static_cast<size_t>(l)], mom[static_cast<size_t>(l - 1)], mom[1], R, s, cfg,
            krank_tau);
        if (!have || est.diagnostics.mom_l_error < best.diagnostics.mom_l_error) {
            best = est;
            have = true;
        }
    }
    return best;
}

}  // namespace kt
