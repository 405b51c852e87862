#pragma once

#include <limits>

#include "stabcert/common.hpp"

namespace stabcert {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    Vec x;
    double objective = 0.0;
};

/// min c.x subject to lo <= x <= hi and G x <= h. Dense two-phase tableau
/// simplex with Bland's rule; sized for a few dozen rows and columns.
inline LpResult solve_box_lp(const Vec& c, const Vec& lo, const Vec& hi, const Mat& G,
                             const Vec& h) {
    const int d = static_cast<int>(c.size());
    require(lo.size() == d && hi.size() == d, "lp: box dimension mismatch");
    require(G.cols() == d || G.rows() == 0, "lp: constraint dimension mismatch");
    require((lo.array() <= hi.array() + 1e-12).all(), "lp: empty box");

    // Shift to y = x - lo >= 0; upper bounds become ordinary rows.
    const int mg = static_cast<int>(G.rows());
    const int m = mg + d;
    Mat A(m, d);
    Vec b(m);
    if (mg > 0) {
        A.topRows(mg) = G;
        b.head(mg) = h - G * lo;
    }
    A.bottomRows(d) = Mat::Identity(d, d);
    b.tail(d) = hi - lo;

    // Row scaling keeps pivots well conditioned for MW-scale data.
    for (int i = 0; i < m; ++i) {
        const double s = std::max(1.0, A.row(i).cwiseAbs().maxCoeff());
        A.row(i) /= s;
        b(i) /= s;
    }

    // Columns: y (d), slacks (m), artificials (for rows with b < 0).
    std::vector<int> art_of_row(static_cast<std::size_t>(m), -1);
    int n_art = 0;
    for (int i = 0; i < m; ++i)
        if (b(i) < 0.0) art_of_row[static_cast<std::size_t>(i)] = n_art++;
    const int n_cols = d + m + n_art;

    Mat T = Mat::Zero(m + 1, n_cols + 1);
    std::vector<int> basis(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double sign = 1.0;
        if (b(i) < 0.0) sign = -1.0;
        T.block(i, 0, 1, d) = sign * A.row(i);
        T(i, d + i) = sign;  // slack
        T(i, n_cols) = sign * b(i);
        if (art_of_row[static_cast<std::size_t>(i)] >= 0) {
            const int col = d + m + art_of_row[static_cast<std::size_t>(i)];
            T(i, col) = 1.0;
            basis[static_cast<std::size_t>(i)] = col;
        } else {
            basis[static_cast<std::size_t>(i)] = d + i;
        }
    }

    const double tol = 1e-10;
    auto run_simplex = [&](bool phase1) -> bool {
        // true = optimal reached, false = unbounded
        for (;;) {
            int enter = -1;
            for (int j = 0; j < n_cols; ++j) {
                if (!phase1 && j >= d + m) continue;  // artificials barred in phase 2
                if (T(m, j) < -tol) {
                    enter = j;
                    break;  // Bland: smallest index
                }
            }
            if (enter < 0) return true;
            int leave = -1;
            double best_ratio = 0.0;
            for (int i = 0; i < m; ++i) {
                if (T(i, enter) > tol) {
                    const double ratio = T(i, n_cols) / T(i, enter);
                    if (leave < 0 || ratio < best_ratio - 1e-15 ||
                        (std::abs(ratio - best_ratio) <= 1e-15 &&
                         basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                        leave = i;
                        best_ratio = ratio;
                    }
                }
            }
            if (leave < 0) return false;
            const double piv = T(leave, enter);
            T.row(leave) /= piv;
            for (int i = 0; i <= m; ++i) {
                if (i == leave) continue;
                const double f = T(i, enter);
                if (f != 0.0) T.row(i) -= f * T.row(leave);
            }
            basis[static_cast<std::size_t>(leave)] = enter;
        }
    };

    LpResult res;
    if (n_art > 0) {
        // Phase 1: minimize the artificial sum.
        T.row(m).setZero();
        for (int j = d + m; j < n_cols; ++j) T(m, j) = 1.0;
        for (int i = 0; i < m; ++i)
            if (basis[static_cast<std::size_t>(i)] >= d + m) T.row(m) -= T.row(i);
        run_simplex(true);
        if (-T(m, n_cols) > 1e-8) {
            res.status = LpStatus::Infeasible;
            return res;
        }
        // Pivot any basic artificial (at zero) out where possible.
        for (int i = 0; i < m; ++i) {
            if (basis[static_cast<std::size_t>(i)] < d + m) continue;
            int enter = -1;
            for (int j = 0; j < d + m; ++j)
                if (std::abs(T(i, j)) > tol) {
                    enter = j;
                    break;
                }
            if (enter < 0) continue;  // redundant row
            const double piv = T(i, enter);
            T.row(i) /= piv;
            for (int r = 0; r <= m; ++r) {
                if (r == i) continue;
                const double f = T(r, enter);
                if (f != 0.0) T.row(r) -= f * T.row(i);
            }
            basis[static_cast<std::size_t>(i)] = enter;
        }
    }

    // Phase 2 objective.
    T.row(m).setZero();
    for (int j = 0; j < d; ++j) T(m, j) = c(j);
    for (int i = 0; i < m; ++i) {
        const int bj = basis[static_cast<std::size_t>(i)];
        if (bj < d && c(bj) != 0.0) T.row(m) -= c(bj) * T.row(i);
    }
    if (!run_simplex(false)) {
        res.status = LpStatus::Unbounded;
        return res;
    }

    Vec y = Vec::Zero(d);
    for (int i = 0; i < m; ++i)
        if (basis[static_cast<std::size_t>(i)] < d) y(basis[static_cast<std::size_t>(i)]) = T(i, n_cols);
    res.status = LpStatus::Optimal;
    res.x = lo + y;
    res.x = res.x.cwiseMax(lo).cwiseMin(hi);
    res.objective = c.dot(res.x);
    return res;
}

}  // namespace stabcert
