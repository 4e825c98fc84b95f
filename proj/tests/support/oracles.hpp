#pragma once

// Independent reference solutions used by the test suites. Everything here is
// deliberately brute force and shares no code path with the library solvers.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dyntomo::oracles {

/// Dense Gaussian elimination with partial pivoting for the tiny systems the
/// oracles need.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> A, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        if (std::abs(A[piv][c]) < 1e-14) throw std::runtime_error("solve_dense: singular");
        std::swap(A[c], A[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A[r][c] / A[c][c];
            for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t ri = n; ri-- > 0;) {
        double s = b[ri];
        for (std::size_t k = ri + 1; k < n; ++k) s -= A[ri][k] * x[k];
        x[ri] = s / A[ri][ri];
    }
    return x;
}

/// Exact 1D total-variation denoising by exhaustive active-set enumeration of
/// the box-constrained dual QP:
///   min_p (1/2)||D^T p||^2 - <p, D y>  s.t. |p_i| <= alpha,
/// with (D x)_i = x_{i+1} - x_i, then x = y - D^T p.
inline std::vector<double> tv1d_denoise_qp(const std::vector<double>& y, double alpha) {
    const int n = static_cast<int>(y.size());
    const int m = n - 1;
    if (m <= 0) return y;
    if (m > 12) throw std::runtime_error("tv1d_denoise_qp: enumeration too large");

    // Q = D D^T (tridiagonal: 2 on diag, -1 off), c = D y
    std::vector<std::vector<double>> Q(m, std::vector<double>(m, 0.0));
    for (int i = 0; i < m; ++i) {
        Q[i][i] = 2.0;
        if (i > 0) Q[i][i - 1] = -1.0;
        if (i + 1 < m) Q[i][i + 1] = -1.0;
    }
    std::vector<double> c(m);
    for (int i = 0; i < m; ++i) c[i] = y[i + 1] - y[i];

    std::vector<int> state(m, 0);  // 0 free, +1 clamped at +alpha, -1 at -alpha
    std::vector<double> best;
    double best_val = std::numeric_limits<double>::infinity();

    long total = 1;
    for (int i = 0; i < m; ++i) total *= 3;
    for (long code = 0; code < total; ++code) {
        long t = code;
        for (int i = 0; i < m; ++i) {
            state[i] = static_cast<int>(t % 3) - 1;
            t /= 3;
        }
        std::vector<int> free_idx;
        std::vector<double> p(m);
        for (int i = 0; i < m; ++i) {
            if (state[i] == 0) free_idx.push_back(i);
            else p[i] = state[i] * alpha;
        }
        // solve Q_FF p_F = c_F - Q_FC p_C
        if (!free_idx.empty()) {
            const std::size_t nf = free_idx.size();
            std::vector<std::vector<double>> A(nf, std::vector<double>(nf));
            std::vector<double> b(nf);
            for (std::size_t r = 0; r < nf; ++r) {
                b[r] = c[free_idx[r]];
                for (int j = 0; j < m; ++j)
                    if (state[j] != 0) b[r] -= Q[free_idx[r]][j] * p[j];
                for (std::size_t cc = 0; cc < nf; ++cc) A[r][cc] = Q[free_idx[r]][free_idx[cc]];
            }
            std::vector<double> pf;
            try {
                pf = solve_dense(std::move(A), std::move(b));
            } catch (const std::runtime_error&) {
                continue;
            }
            bool ok = true;
            for (std::size_t r = 0; r < nf; ++r) {
                if (std::abs(pf[r]) > alpha + 1e-10) { ok = false; break; }
                p[free_idx[r]] = pf[r];
            }
            if (!ok) continue;
        }
        // KKT sign conditions on the clamped set
        bool kkt = true;
        for (int i = 0; i < m && kkt; ++i) {
            double g = -c[i];
            for (int j = 0; j < m; ++j) g += Q[i][j] * p[j];
            if (state[i] == +1 && g > 1e-10) kkt = false;
            if (state[i] == -1 && g < -1e-10) kkt = false;
        }
        if (!kkt) continue;
        double val = 0.0;
        for (int i = 0; i < m; ++i) {
            val -= p[i] * c[i];
            for (int j = 0; j < m; ++j) val += 0.5 * p[i] * Q[i][j] * p[j];
        }
        if (val < best_val) {
            best_val = val;
            best = p;
        }
    }
    if (best.empty()) throw std::runtime_error("tv1d_denoise_qp: no KKT point found");
    std::vector<double> x = y;
    // x = y - D^T p
    for (int i = 0; i < m; ++i) {
        x[i] += best[i];
        x[i + 1] -= best[i];
    }
    return x;
}

/// Analytic parallel-beam chord length of a centered disc of radius r:
/// profile(s) = 2 sqrt(r^2 - s^2).
inline double disc_chord(double r, double s) {
    const double d = r * r - s * s;
    return d > 0.0 ? 2.0 * std::sqrt(d) : 0.0;
}

}  // namespace dyntomo::oracles
