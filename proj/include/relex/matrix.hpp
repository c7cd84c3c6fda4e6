#pragma once

// Dense row-major matrices plus the small numerical kernels the toolkit
// needs: cache-friendly matmul, SPD Cholesky solve, and a one-sided Jacobi
// SVD for the Procrustes fit. Everything is deterministic: fixed loop
// orders, fixed summation orders.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "relex/common.hpp"

namespace relex {

template <class Real>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<Real> v;

    Mat() = default;
    Mat(int r, int c, Real fill = Real(0)) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    Real* row(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }
    const Real* row(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }
    Real& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    Real at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
    std::size_t size() const { return v.size(); }

    template <class Other>
    Mat<Other> cast() const {
        Mat<Other> out(rows, cols);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<Other>(v[i]);
        return out;
    }
};

// c[0..n) += a * b[0..n). The innermost loop of everything below; written so
// the compiler can vectorize it without reassociating any sums.
template <class Real>
inline void axpy(Real a, const Real* b, Real* c, int n) {
    for (int j = 0; j < n; ++j) c[j] += a * b[j];
}

// Fixed-order dot product, 4 independent accumulators.
template <class Real>
inline Real dot(const Real* a, const Real* b, int n) {
    Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) s0 += a[j] * b[j];
    return ((s0 + s1) + (s2 + s3));
}

// c = a*b with c pre-zeroed, row-major, ikj order so the inner loop streams
template <class Real>
inline void mm(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        Real* ci = c + static_cast<std::size_t>(i) * n;
        const Real* ai = a + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) axpy(ai[kk], b + static_cast<std::size_t>(kk) * n, ci, n);
    }
}

template <class Real>
Mat<Real> matmul(const Mat<Real>& a, const Mat<Real>& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions disagree");
    Mat<Real> c(a.rows, b.cols);
    mm(a.v.data(), b.v.data(), c.v.data(), a.rows, a.cols, b.cols);
    return c;
}

template <class Real>
Mat<Real> transpose(const Mat<Real>& a) {
    Mat<Real> t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

template <class Real>
Real frobenius_max_abs_diff(const Mat<Real>& a, const Mat<Real>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("matrix shape mismatch");
    Real m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

template <class Real>
Real row_norm(const Mat<Real>& a, int i) {
    return std::sqrt(dot(a.row(i), a.row(i), a.cols));
}

// Cosine distance between a vector and a matrix row; throws on zero norms.
template <class Real>
Real cosine_distance(const Real* x, const Real* y, int n) {
    Real nx = std::sqrt(dot(x, x, n));
    Real ny = std::sqrt(dot(y, y, n));
    if (nx == Real(0) || ny == Real(0)) throw NumericError("cosine distance undefined for zero-norm vector");
    return Real(1) - dot(x, y, n) / (nx * ny);
}

// Solves (A) X = B for SPD A via Cholesky, B may have many columns.
// Throws NumericError when A is not positive definite.
template <class Real>
Mat<Real> cholesky_solve(Mat<Real> a, const Mat<Real>& b) {
    const int n = a.rows;
    if (a.cols != n || b.rows != n) throw ShapeError("cholesky_solve: bad shapes");
    // in-place lower factor
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            Real s = a.at(i, j) - dot(a.row(i), a.row(j), j);
            if (i == j) {
                if (s <= Real(0) || !std::isfinite(static_cast<double>(s)))
                    throw NumericError("cholesky: matrix is singular or not positive definite");
                a.at(i, i) = std::sqrt(s);
            } else {
                a.at(i, j) = s / a.at(j, j);
            }
        }
    }
    Mat<Real> x = b;
    // forward substitution L y = b
    for (int c = 0; c < b.cols; ++c) {
        for (int i = 0; i < n; ++i) {
            Real s = x.at(i, c);
            for (int k = 0; k < i; ++k) s -= a.at(i, k) * x.at(k, c);
            x.at(i, c) = s / a.at(i, i);
        }
        // back substitution L^T x = y
        for (int i = n - 1; i >= 0; --i) {
            Real s = x.at(i, c);
            for (int k = i + 1; k < n; ++k) s -= a.at(k, i) * x.at(k, c);
            x.at(i, c) = s / a.at(i, i);
        }
    }
    return x;
}

struct Svd {
    Mat<double> u;               // m x r, orthonormal columns
    Mat<double> vt;              // r x n
    std::vector<double> sigma;   // r, descending
};

namespace detail {

// Deterministic orthonormal completion for columns whose singular value
// vanished: replace them with coordinate directions projected against the
// reliable columns.
inline void complete_basis(Mat<double>& u, const std::vector<int>& degenerate) {
    const int m = u.rows;
    const int r = u.cols;
    for (int idx : degenerate) {
        for (int attempt = 0; attempt < m; ++attempt) {
            std::vector<double> cand(m, 0.0);
            cand[attempt] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (int j = 0; j < r; ++j) {
                    if (j == idx) continue;
                    bool j_deg = false;
                    for (int d : degenerate)
                        if (d == j && d > idx) j_deg = true;  // not yet rebuilt
                    if (j_deg) continue;
                    double proj = 0;
                    for (int i = 0; i < m; ++i) proj += cand[i] * u.at(i, j);
                    for (int i = 0; i < m; ++i) cand[i] -= proj * u.at(i, j);
                }
            }
            double norm = 0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (int i = 0; i < m; ++i) u.at(i, idx) = cand[i] / norm;
                break;
            }
        }
    }
}

}  // namespace detail

// Thin SVD of an m x n matrix with m >= n, via one-sided Jacobi rotations
// on the columns. Adequate and exact enough for the small cross-covariance
// matrices the transforms produce.
inline Svd jacobi_svd(const Mat<double>& input) {
    const int m = input.rows;
    const int n = input.cols;
    if (m < n) throw ShapeError("jacobi_svd expects rows >= cols");
    Mat<double> a = input;
    Mat<double> v(n, n, 0.0);
    for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double max_col = 0.0;
    for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int i = 0; i < m; ++i) s += a.at(i, j) * a.at(i, j);
        max_col = std::max(max_col, s);
    }
    const double tol = 1e-28 * std::max(max_col, 1e-300);

    for (int sweep = 0; sweep < 64; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0, aqq = 0, apq = 0;
                for (int i = 0; i < m; ++i) {
                    app += a.at(i, p) * a.at(i, p);
                    aqq += a.at(i, q) * a.at(i, q);
                    apq += a.at(i, p) * a.at(i, q);
                }
                if (apq * apq <= tol * std::max(app * aqq, 1e-300)) continue;
                rotated = true;
                double zeta = (aqq - app) / (2.0 * apq);
                double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double cs = 1.0 / std::sqrt(1.0 + t * t);
                double sn = cs * t;
                for (int i = 0; i < m; ++i) {
                    double ap = a.at(i, p), aq = a.at(i, q);
                    a.at(i, p) = cs * ap - sn * aq;
                    a.at(i, q) = sn * ap + cs * aq;
                }
                for (int i = 0; i < n; ++i) {
                    double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = cs * vp - sn * vq;
                    v.at(i, q) = sn * vp + cs * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(n);
    for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int i = 0; i < m; ++i) s += a.at(i, j) * a.at(i, j);
        sigma[j] = std::sqrt(s);
    }
    // sort descending, stable on ties
    std::vector<int> order(n);
    for (int j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sigma[x] > sigma[y]; });

    Svd out;
    out.u = Mat<double>(m, n);
    out.vt = Mat<double>(n, n);
    out.sigma.resize(n);
    const double sigma_floor = 1e-12 * std::max(std::sqrt(max_col), 1e-300);
    std::vector<int> degenerate;
    for (int j = 0; j < n; ++j) {
        int src = order[j];
        out.sigma[j] = sigma[src];
        if (sigma[src] > sigma_floor) {
            for (int i = 0; i < m; ++i) out.u.at(i, j) = a.at(i, src) / sigma[src];
        } else {
            degenerate.push_back(j);
        }
        for (int i = 0; i < n; ++i) out.vt.at(j, i) = v.at(i, src);
    }
    if (!degenerate.empty()) detail::complete_basis(out.u, degenerate);
    return out;
}

}  // namespace relex
