#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pulse/rng.hpp"
#include "pulse/tensor.hpp"

namespace pulse::linalg {

/// LU factorization with partial pivoting of a square matrix, for solves and
/// condition estimates. Throws on (numerically) singular input.
class LuFactors {
public:
    explicit LuFactors(const Tensor& a) : n_(a.dims[0]), lu_(a), piv_(n_) {
        if (a.rank() != 2 || a.dims[0] != a.dims[1])
            throw std::invalid_argument("LuFactors: matrix must be square");
        for (std::size_t i = 0; i < n_; ++i) piv_[i] = i;
        for (std::size_t col = 0; col < n_; ++col) {
            std::size_t p = col;
            double best = std::abs(lu_.at2(col, col));
            for (std::size_t r = col + 1; r < n_; ++r) {
                const double v = std::abs(lu_.at2(r, col));
                if (v > best) { best = v; p = r; }
            }
            if (best == 0.0) throw std::runtime_error("LuFactors: singular matrix");
            if (p != col) {
                for (std::size_t j = 0; j < n_; ++j)
                    std::swap(lu_.at2(p, j), lu_.at2(col, j));
                std::swap(piv_[p], piv_[col]);
            }
            const double d = lu_.at2(col, col);
            for (std::size_t r = col + 1; r < n_; ++r) {
                const double f = lu_.at2(r, col) / d;
                lu_.at2(r, col) = f;
                for (std::size_t j = col + 1; j < n_; ++j)
                    lu_.at2(r, j) -= f * lu_.at2(col, j);
            }
        }
    }

    std::vector<double> solve(const std::vector<double>& b) const {
        std::vector<double> x(n_);
        for (std::size_t i = 0; i < n_; ++i) x[i] = b[piv_[i]];
        for (std::size_t i = 1; i < n_; ++i)
            for (std::size_t j = 0; j < i; ++j) x[i] -= lu_.at2(i, j) * x[j];
        for (std::size_t ii = n_; ii-- > 0;) {
            for (std::size_t j = ii + 1; j < n_; ++j) x[ii] -= lu_.at2(ii, j) * x[j];
            x[ii] /= lu_.at2(ii, ii);
        }
        return x;
    }

    // Solves A' x = b using the same factorization (A = P'LU => A' = U'L'P).
    std::vector<double> solve_transposed(const std::vector<double>& b) const {
        std::vector<double> y(b);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < i; ++j) y[i] -= lu_.at2(j, i) * y[j];
            y[i] /= lu_.at2(i, i);
        }
        for (std::size_t ii = n_; ii-- > 0;)
            for (std::size_t j = ii + 1; j < n_; ++j) y[ii] -= lu_.at2(j, ii) * y[j];
        std::vector<double> x(n_);
        for (std::size_t i = 0; i < n_; ++i) x[piv_[i]] = y[i];
        return x;
    }

private:
    std::size_t n_;
    Tensor lu_;
    std::vector<std::size_t> piv_;
};

inline std::vector<double> matvec(const Tensor& a, const std::vector<double>& x) {
    const std::size_t m = a.dims[0], n = a.dims[1];
    std::vector<double> y(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.at2(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline std::vector<double> matvec_t(const Tensor& a, const std::vector<double>& x) {
    const std::size_t m = a.dims[0], n = a.dims[1];
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[j] += a.at2(i, j) * x[i];
    return y;
}

/// 2-norm condition number estimate via power iteration on A'A (largest
/// singular value) and inverse iteration through an LU solve (smallest).
inline double condition_estimate(const Tensor& a, std::uint64_t probe_seed = 12345,
                                 int iters = 60) {
    const std::size_t n = a.dims[0];
    Rng rng(probe_seed);
    auto normalize = [](std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        if (s > 0)
            for (double& x : v) x /= s;
        return s;
    };

    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    normalize(v);
    double smax = 0.0;
    for (int it = 0; it < iters; ++it) {
        auto w = matvec_t(a, matvec(a, v));
        smax = std::sqrt(normalize(w));
        v = std::move(w);
    }

    // Power iteration on A^-1 A^-T (symmetric PSD) converges to 1/smin^2.
    LuFactors lu(a);
    for (double& x : v) x = rng.normal();
    normalize(v);
    double inv_smin_sq = 0.0;
    for (int it = 0; it < iters; ++it) {
        auto w = lu.solve(lu.solve_transposed(v));
        inv_smin_sq = normalize(w);
        v = std::move(w);
    }
    return smax * std::sqrt(inv_smin_sq);
}

/// Random matrix with orthonormal rows/columns, via Householder QR of a
/// Gaussian matrix. Signs are fixed so the result is unique given the seed.
/// rows <= cols: returns (rows x cols) with orthonormal rows.
inline Tensor random_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
    const bool transpose = rows > cols;
    const std::size_t m = transpose ? rows : cols;  // long side
    const std::size_t k = transpose ? cols : rows;  // short side
    // Gaussian m x k, then QR -> Q (m x k) with orthonormal columns.
    Tensor g({m, k});
    for (double& v : g.data) v = rng.normal();

    std::vector<std::vector<double>> hh;  // Householder vectors
    std::vector<double> rdiag(k);
    for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t r = c; r < m; ++r) s += g.at2(r, c) * g.at2(r, c);
        double alpha = std::sqrt(s);
        if (g.at2(c, c) > 0) alpha = -alpha;
        std::vector<double> v(m, 0.0);
        for (std::size_t r = c; r < m; ++r) v[r] = g.at2(r, c);
        v[c] -= alpha;
        double vn = 0.0;
        for (double x : v) vn += x * x;
        vn = std::sqrt(vn);
        if (vn < 1e-300) vn = 1.0;
        for (double& x : v) x /= vn;
        for (std::size_t j = c; j < k; ++j) {
            double d = 0.0;
            for (std::size_t r = c; r < m; ++r) d += v[r] * g.at2(r, j);
            for (std::size_t r = c; r < m; ++r) g.at2(r, j) -= 2.0 * d * v[r];
        }
        rdiag[c] = g.at2(c, c);
        hh.push_back(std::move(v));
    }
    // Q = H_0 ... H_{k-1} applied to the first k columns of the identity,
    // then column signs flipped so diag(R) > 0.
    Tensor q({m, k}, 0.0);
    for (std::size_t c = 0; c < k; ++c) q.at2(c, c) = 1.0;
    for (std::size_t h = k; h-- > 0;) {
        const auto& v = hh[h];
        for (std::size_t j = 0; j < k; ++j) {
            double d = 0.0;
            for (std::size_t r = h; r < m; ++r) d += v[r] * q.at2(r, j);
            for (std::size_t r = h; r < m; ++r) q.at2(r, j) -= 2.0 * d * v[r];
        }
    }
    for (std::size_t c = 0; c < k; ++c)
        if (rdiag[c] < 0)
            for (std::size_t r = 0; r < m; ++r) q.at2(r, c) = -q.at2(r, c);

    Tensor out({rows, cols});
    if (transpose) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out.at2(r, c) = q.at2(r, c);
    } else {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out.at2(r, c) = q.at2(c, r);
    }
    return out;
}

}  // namespace pulse::linalg
