#include "ogdbzc/lp.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace ogdbzc;

namespace {

// Brute force: every vertex of {Ax <= b} in R^n is the solution of n tight rows.
double brute_max(const Mat& A, const Vec& b, const Vec& c, bool& any) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    double best = -1e300;
    any = false;
    std::vector<int> idx(n);
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == n) {
            Mat M(n, n);
            Vec r(n);
            for (int k = 0; k < n; ++k) {
                M.row(k) = A.row(idx[k]);
                r(k) = b(idx[k]);
            }
            Eigen::FullPivLU<Mat> lu(M);
            if (lu.rank() < n) return;
            const Vec x = lu.solve(r);
            if (((A * x - b).array() <= 1e-9).all()) {
                any = true;
                best = std::max(best, c.dot(x));
            }
            return;
        }
        for (int i = start; i < m; ++i) {
            idx[depth] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

}  // namespace

TEST(Lp, MatchesVertexEnumerationOnRandomBoundedPrograms) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + trial % 3;
        const int extra = 1 + trial % 5;
        Mat A(2 * n + extra, n);
        Vec b(2 * n + extra);
        A.topRows(n) = Mat::Identity(n, n);
        A.middleRows(n, n) = -Mat::Identity(n, n);
        b.head(2 * n).setConstant(3.0);
        for (int i = 2 * n; i < A.rows(); ++i) {
            for (int j = 0; j < n; ++j) A(i, j) = g(rng);
            b(i) = g(rng);
        }
        Vec c(n);
        for (int j = 0; j < n; ++j) c(j) = g(rng);
        bool any = false;
        const double want = brute_max(A, b, c, any);
        const lp::Result r = lp::maximize(A, b, c);
        if (!any) {
            EXPECT_EQ(r.status, lp::Status::Infeasible) << "trial " << trial;
            continue;
        }
        ASSERT_EQ(r.status, lp::Status::Optimal) << "trial " << trial;
        EXPECT_NEAR(r.value, want, 1e-7) << "trial " << trial;
        EXPECT_LE((A * r.x - b).maxCoeff(), 1e-8);
    }
}

TEST(Lp, DetectsUnboundedAndInfeasible) {
    Mat A(1, 2);
    A << 1.0, 0.0;
    Vec b(1);
    b << 1.0;
    Vec c(2);
    c << 0.0, 1.0;
    EXPECT_EQ(lp::maximize(A, b, c).status, lp::Status::Unbounded);

    Mat B(2, 1);
    B << 1.0, -1.0;
    Vec d(2);
    d << -1.0, -1.0;  // x <= -1 and x >= 1
    EXPECT_FALSE(lp::feasible(B, d));
}

TEST(Lp, RejectsMismatchedDimensions) {
    EXPECT_THROW(lp::maximize(Mat::Zero(2, 2), Vec::Zero(3), Vec::Zero(2)), DimensionError);
}
