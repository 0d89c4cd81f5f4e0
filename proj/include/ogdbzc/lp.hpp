#pragma once

// Dense two-phase simplex for the tiny linear programs that appear in the
// polytope routines: maximize <c, x> subject to A x <= b with x free.

#include "ogdbzc/linalg.hpp"

#include <limits>
#include <vector>

namespace ogdbzc::lp {

enum class Status { Optimal, Unbounded, Infeasible };

struct Result {
    Status status = Status::Infeasible;
    double value = -std::numeric_limits<double>::infinity();
    Vec x;
};

namespace detail {

class Tableau {
public:
    Tableau(Eigen::Index rows, Eigen::Index cols) : t_(Mat::Zero(rows, cols + 1)), basis_(rows, -1) {}

    double& at(Eigen::Index r, Eigen::Index c) { return t_(r, c); }
    double& rhs(Eigen::Index r) { return t_(r, t_.cols() - 1); }
    Eigen::Index rows() const { return t_.rows(); }
    Eigen::Index cols() const { return t_.cols() - 1; }
    std::vector<Eigen::Index>& basis() { return basis_; }

    void pivot(Eigen::Index r, Eigen::Index c) {
        t_.row(r) /= t_(r, c);
        for (Eigen::Index i = 0; i < t_.rows(); ++i) {
            if (i != r && t_(i, c) != 0.0) t_.row(i) -= t_(i, c) * t_.row(r);
        }
        basis_[static_cast<std::size_t>(r)] = c;
    }

    // Reduced costs of `cost` with respect to the current basis.
    Vec reduced_costs(const Vec& cost) const {
        Vec r = cost;
        for (Eigen::Index i = 0; i < t_.rows(); ++i) {
            const double cb = cost(basis_[static_cast<std::size_t>(i)]);
            if (cb != 0.0) r -= cb * t_.row(i).head(cols()).transpose();
        }
        return r;
    }

    double objective(const Vec& cost) const {
        double v = 0.0;
        for (Eigen::Index i = 0; i < t_.rows(); ++i) v += cost(basis_[static_cast<std::size_t>(i)]) * t_(i, t_.cols() - 1);
        return v;
    }

    // Bland's rule keeps the method finite on degenerate vertices.
    Status optimize(const Vec& cost, const std::vector<bool>& allowed, double tol) {
        for (int iter = 0; iter < 10000; ++iter) {
            const Vec r = reduced_costs(cost);
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < cols(); ++j) {
                if (allowed[static_cast<std::size_t>(j)] && r(j) > tol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) return Status::Optimal;
            Eigen::Index leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < rows(); ++i) {
                const double a = t_(i, enter);
                if (a > tol) {
                    const double ratio = t_(i, t_.cols() - 1) / a;
                    if (ratio < best - tol ||
                        (ratio <= best + tol && leave >= 0 &&
                         basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
                        best = ratio;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return Status::Unbounded;
            pivot(leave, enter);
        }
        throw std::runtime_error("simplex: iteration limit reached");
    }

private:
    Mat t_;
    std::vector<Eigen::Index> basis_;
};

}  // namespace detail

/// Maximizes <c, x> over {x : A x <= b}. Intended for a handful of variables
/// and constraints; the tableau is dense.
inline Result maximize(const Mat& A, const Vec& b, const Vec& c, double tol = 1e-11) {
    require_dim(b.size(), A.rows(), "lp::maximize rhs");
    require_dim(c.size(), A.cols(), "lp::maximize objective");
    const Eigen::Index m = A.rows();
    const Eigen::Index n = A.cols();

    Eigen::Index n_art = 0;
    for (Eigen::Index i = 0; i < m; ++i) n_art += b(i) < 0.0 ? 1 : 0;

    // Columns: x+ (n), x- (n), slacks (m), artificials (n_art).
    const Eigen::Index cols = 2 * n + m + n_art;
    detail::Tableau tab(m, cols);
    Eigen::Index art = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double sign = b(i) < 0.0 ? -1.0 : 1.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            tab.at(i, j) = sign * A(i, j);
            tab.at(i, n + j) = -sign * A(i, j);
        }
        tab.at(i, 2 * n + i) = sign;
        tab.rhs(i) = sign * b(i);
        if (sign < 0.0) {
            const Eigen::Index col = 2 * n + m + art++;
            tab.at(i, col) = 1.0;
            tab.basis()[static_cast<std::size_t>(i)] = col;
        } else {
            tab.basis()[static_cast<std::size_t>(i)] = 2 * n + i;
        }
    }

    std::vector<bool> allowed(static_cast<std::size_t>(cols), true);
    if (n_art > 0) {
        Vec phase1 = Vec::Zero(cols);
        phase1.tail(n_art).setConstant(-1.0);
        tab.optimize(phase1, allowed, tol);
        const double scale = 1.0 + b.cwiseAbs().maxCoeff();
        if (tab.objective(phase1) < -1e-9 * scale) return Result{Status::Infeasible, -std::numeric_limits<double>::infinity(), Vec()};
        // Drive zero-valued artificials out of the basis where possible.
        for (Eigen::Index i = 0; i < m; ++i) {
            if (tab.basis()[static_cast<std::size_t>(i)] >= 2 * n + m) {
                for (Eigen::Index j = 0; j < 2 * n + m; ++j) {
                    if (std::abs(tab.at(i, j)) > 1e-9) {
                        tab.pivot(i, j);
                        break;
                    }
                }
            }
        }
        for (Eigen::Index j = 2 * n + m; j < cols; ++j) allowed[static_cast<std::size_t>(j)] = false;
    }

    Vec cost = Vec::Zero(cols);
    cost.head(n) = c;
    cost.segment(n, n) = -c;
    if (tab.optimize(cost, allowed, tol) == Status::Unbounded) {
        return Result{Status::Unbounded, std::numeric_limits<double>::infinity(), Vec()};
    }
    Vec x = Vec::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index j = tab.basis()[static_cast<std::size_t>(i)];
        if (j < n) x(j) += tab.rhs(i);
        else if (j < 2 * n) x(j - n) -= tab.rhs(i);
    }
    return Result{Status::Optimal, c.dot(x), x};
}

/// True when {x : A x <= b} has a point.
inline bool feasible(const Mat& A, const Vec& b) {
    return maximize(A, b, Vec::Zero(A.cols())).status != Status::Infeasible;
}

}  // namespace ogdbzc::lp
