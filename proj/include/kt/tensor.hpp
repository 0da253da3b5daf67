// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kt {

/// Maximum tensor order accepted by default. Shapes longer than this are
/// rejected at construction unless a larger limit is passed explicitly.
inline constexpr int kDefaultMaxOrder = 8;

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-mode column-length bounds (rho_1..rho_l) for bounded decompositions.
struct BoundsSpec {
    std::vector<double> rho;

    static BoundsSpec uniform(double r, int order) {
        if (r <= 0.0) throw TensorError("BoundsSpec: rho must be positive");
        return BoundsSpec{std::vector<double>(static_cast<size_t>(order), r)};
    }

    void validate() const {
        if (rho.empty()) throw TensorError("BoundsSpec: empty");
        for (double r : rho)
            if (!(r > 0.0)) throw TensorError("BoundsSpec: rho entries must be positive");
    }
};

namespace detail {

inline std::int64_t checked_element_count(const std::vector<int>& shape, int max_order) {
    if (shape.empty()) throw TensorError("tensor order must be >= 1");
    if (static_cast<int>(shape.size()) > max_order)
        throw TensorError("tensor order " + std::to_string(shape.size()) +
                          " exceeds limit " + std::to_string(max_order));
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw TensorError("tensor dimensions must be positive");
        if (__builtin_mul_overflow(n, static_cast<std::int64_t>(d), &n) || n > (1LL << 40))
            throw TensorError("tensor element count overflows limit");
    }
    return n;
}

}  // namespace detail

/// Dense real tensor, row-major flat storage (last index fastest).
/// Immutable after construction.
class DenseTensor {
public:
    DenseTensor(std::vector<int> shape, std::vector<double> values,
                int max_order = kDefaultMaxOrder)
        : shape_(std::move(shape)), values_(std::move(values)) {
        const std::int64_t n = detail::checked_element_count(shape_, max_order);
        if (static_cast<std::int64_t>(values_.size()) != n)
            throw TensorError("value count does not match shape");
    }

    static DenseTensor zeros(std::vector<int> shape, int max_order = kDefaultMaxOrder) {
        const std::int64_t n = detail::checked_element_count(shape, max_order);
        return DenseTensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                           max_order);
    }

    int order() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    const std::vector<double>& values() const { return values_; }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }

    std::int64_t flat_index(const std::vector<int>& idx) const {
        std::int64_t f = 0;
        for (size_t j = 0; j < shape_.size(); ++j) f = f * shape_[j] + idx[j];
        return f;
    }

    double at(const std::vector<int>& idx) const { return values_[flat_index(idx)]; }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : values_) s += v * v;
        return std::sqrt(s);
    }

    /// Mutable access for builders inside this library. External code should
    /// treat tensors as immutable.
    std::vector<double>& mutable_values() { return values_; }

private:
    std::vector<int> shape_;
    std::vector<double> values_;
};

/// Advance a row-major multi-index; returns false after the last index.
inline bool next_index(std::vector<int>& idx, const std::vector<int>& shape) {
    for (int j = static_cast<int>(shape.size()) - 1; j >= 0; --j) {
        if (++idx[j] < shape[j]) return true;
        idx[j] = 0;
    }
    return false;
}

/// A sum of R rank-1 terms, one factor matrix (n_j x R) per mode.
struct CPDecomposition {
    std::vector<Eigen::MatrixXd> factors;

    CPDecomposition() = default;
    explicit CPDecomposition(std::vector<Eigen::MatrixXd> f) : factors(std::move(f)) {
        validate();
    }

    int order() const { return static_cast<int>(factors.size()); }
    int rank() const { return factors.empty() ? 0 : static_cast<int>(factors[0].cols()); }

    std::vector<int> shape() const {
        std::vector<int> s;
        s.reserve(factors.size());
        for (const auto& f : factors) s.push_back(static_cast<int>(f.rows()));
        return s;
    }

    void validate() const {
        if (factors.empty()) throw TensorError("CPDecomposition: no factors");
        const auto r = factors[0].cols();
        for (const auto& f : factors)
            if (f.cols() != r) throw TensorError("CPDecomposition: factor column counts differ");
    }

    /// Largest column 2-norm per mode.
    std::vector<double> column_bounds() const {
        std::vector<double> b;
        b.reserve(factors.size());
        for (const auto& f : factors) {
            double m = 0.0;
            for (Eigen::Index c = 0; c < f.cols(); ++c) m = std::max(m, f.col(c).norm());
            b.push_back(m);
        }
        return b;
    }
};

/// Symmetric decomposition: l copies of the same factor.
inline CPDecomposition symmetric_cp(const Eigen::MatrixXd& u, int order) {
    if (order < 2) throw TensorError("symmetric_cp: order must be >= 2");
    std::vector<Eigen::MatrixXd> f(static_cast<size_t>(order), u);
    return CPDecomposition(std::move(f));
}

/// Evaluate sum_r factor1_r (x) ... (x) factorl_r entrywise.
inline DenseTensor expand(const CPDecomposition& cp) {
    cp.validate();
    const auto shape = cp.shape();
    DenseTensor out = DenseTensor::zeros(shape);
    const int R = cp.rank();
    const int l = cp.order();
    std::vector<int> idx(shape.size(), 0);
    std::int64_t f = 0;
    auto& vals = out.mutable_values();
    do {
        double e = 0.0;
        for (int r = 0; r < R; ++r) {
            double p = 1.0;
            for (int j = 0; j < l; ++j) p *= cp.factors[j](idx[j], r);
            e += p;
        }
        vals[f++] = e;
    } while (next_index(idx, shape));
    return out;
}

inline double frobenius_distance(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw TensorError("frobenius_distance: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Mode-j matricization: n_j rows, one column per row-major multi-index of the
/// remaining modes. refold() is the exact inverse. Mode is 0-based.
inline Eigen::MatrixXd unfold(const DenseTensor& t, int mode) {
    const auto& shape = t.shape();
    const int l = t.order();
    if (mode < 0 || mode >= l) throw TensorError("unfold: mode out of range");
    std::int64_t cols = 1;
    for (int j = 0; j < l; ++j)
        if (j != mode) cols *= shape[j];
    Eigen::MatrixXd m(shape[mode], cols);
    std::vector<int> idx(static_cast<size_t>(l), 0);
    std::int64_t f = 0;
    do {
        std::int64_t col = 0;
        for (int j = 0; j < l; ++j)
            if (j != mode) col = col * shape[j] + idx[j];
        m(idx[mode], col) = t.values()[f++];
    } while (next_index(idx, shape));
    return m;
}

inline DenseTensor refold(const Eigen::MatrixXd& m, const std::vector<int>& shape, int mode) {
    DenseTensor out = DenseTensor::zeros(shape);
    const int l = static_cast<int>(shape.size());
    if (mode < 0 || mode >= l) throw TensorError("refold: mode out of range");
    std::vector<int> idx(shape.size(), 0);
    std::int64_t f = 0;
    auto& vals = out.mutable_values();
    do {
        std::int64_t col = 0;
        for (int j = 0; j < l; ++j)
            if (j != mode) col = col * shape[j] + idx[j];
        vals[f++] = m(idx[mode], col);
    } while (next_index(idx, shape));
    return out;
}

/// Columnwise Kronecker product: column r is vec(a_r b_r^T) in row-major
/// order, so that unfold(expand([A,B,C]), 2) == C * khatri_rao(A,B)^T.
inline Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw TensorError("khatri_rao: column counts differ");
    Eigen::MatrixXd m(a.rows() * b.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.cols(); ++r)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < b.rows(); ++j)
                m(i * b.rows() + j, r) = a(i, r) * b(j, r);
    return m;
}

/// Weighted sum of slices of an order-3 tensor along `mode`. For an exact CP
/// input [A,B,C] and mode 2, equals A diag(x^T C) B^T.
inline Eigen::MatrixXd mode_contract(const DenseTensor& t, int mode, const Eigen::VectorXd& x) {
    if (t.order() != 3) throw TensorError("mode_contract: order-3 tensors only");
    const auto& shape = t.shape();
    if (mode < 0 || mode >= 3) throw TensorError("mode_contract: mode out of range");
    if (x.size() != shape[mode]) throw TensorError("mode_contract: vector length mismatch");
    int r0 = -1, r1 = -1;
    for (int j = 0; j < 3; ++j)
        if (j != mode) (r0 < 0 ? r0 : r1) = j;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(shape[r0], shape[r1]);
    std::vector<int> idx(3, 0);
    std::int64_t f = 0;
    do {
        m(idx[r0], idx[r1]) += x(idx[mode]) * t.values()[f++];
    } while (next_index(idx, t.shape()));
    return m;
}

}  // namespace kt
