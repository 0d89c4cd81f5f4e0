#include "ogdbzc/safe_set.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ogdbzc;

namespace {

LtiSystem toy() {
    Mat A(2, 2), B(2, 1);
    A << 1.0, 1.0, 0.0, 0.5;
    B << 1.0, 1.0;
    return LtiSystem(A, B, 0.3);
}

Mat row(double a, double b) {
    Mat k(1, 2);
    k << a, b;
    return k;
}

SafetySpec unit_balls() { return {ConvexSet::l2_ball(Vec::Zero(2), 1.0), ConvexSet::l2_ball(Vec::Zero(1), 1.0)}; }

SafePolicySet toy_set(int H, double eps) {
    const LtiSystem sys = toy();
    return SafePolicySet(DacModel(sys, certify_strong_stability(sys, row(0.66, 0.84)), H), unit_balls(), eps, sys.w_bar);
}

DacWeights random_weights(const DacModel& model, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> g;
    DacWeights w = model.zeros();
    for (int i = 1; i <= w.H(); ++i) {
        for (Eigen::Index k = 0; k < w[i].size(); ++k) w[i](k) = scale * g(rng) * std::pow(0.5, i - 1);
    }
    return w;
}

}  // namespace

TEST(SafeSet, ZeroWeightsInHugeSets) {
    const LtiSystem sys = toy();
    const SafetySpec huge{ConvexSet::l2_ball(Vec::Zero(2), 1e6), ConvexSet::l2_ball(Vec::Zero(1), 1e6)};
    const SafePolicySet omega(DacModel(sys, certify_strong_stability(sys, row(0.5, 0.0)), 3), huge, 0.0, sys.w_bar);
    EXPECT_TRUE(omega.member(omega.model().zeros()));
}

TEST(SafeSet, EmptyShrinkageIsAConstructionError) {
    EXPECT_THROW(toy_set(3, 0.8), EmptyWindowError);
    EXPECT_NO_THROW(toy_set(3, 0.7));
}

TEST(SafeSet, ZeroWeightsDecidedByVertexEnumeration) {
    const SafePolicySet omega = toy_set(3, 0.1);
    const DacWeights z = omega.model().zeros();
    EXPECT_TRUE(omega.member_exact(z));
    EXPECT_EQ(omega.member(z), omega.member_exact(z));
    // Random disturbance samples never contradict the exact answer.
    const ResponseMatrices r = response_matrices(omega.model(), z);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int k = 0; k < 10000; ++k) {
        Vec w(12);
        for (Eigen::Index i = 0; i < 12; ++i) w(i) = u(rng);
        ASSERT_TRUE(contains(omega.shrunk_state(), r.h_x() * w, 1e-12));
        ASSERT_TRUE(contains(omega.shrunk_input(), r.h_u() * w, 1e-12));
    }
}

TEST(SafeSet, OutsideDecaySetIsNeverAMember) {
    const SafePolicySet omega = toy_set(2, 0.0);
    DacWeights w = omega.model().zeros();
    w[2] = Mat::Constant(1, 2, 1e3);
    EXPECT_FALSE(omega.member(w));
    EXPECT_FALSE(omega.member_exact(w));
}

TEST(SafeSet, MemberNeverOverclaims) {
    std::mt19937_64 rng(2);
    int members = 0;
    int exact_only = 0;
    for (int H : {1, 2, 3}) {
        const SafePolicySet omega = toy_set(H, 0.05);
        for (int k = 0; k < 3000; ++k) {
            const DacWeights w = random_weights(omega.model(), rng, 0.4);
            const bool m = omega.member(w);
            const bool e = omega.member_exact(w);
            if (m) {
                ASSERT_TRUE(e) << "H=" << H;
                ++members;
            } else if (e) {
                ++exact_only;
            }
        }
    }
    EXPECT_GT(members, 100);
    EXPECT_GT(exact_only, 0);  // the certificate is conservative for the disc
}

TEST(SafeSet, CertifiedPredicateIsConvexAndMonotoneInEpsilon) {
    std::mt19937_64 rng(3);
    const SafePolicySet omega = toy_set(3, 0.05);
    const SafePolicySet looser = toy_set(3, 0.02);
    std::vector<DacWeights> members;
    while (members.size() < 60) {
        const DacWeights w = random_weights(omega.model(), rng, 0.4);
        if (omega.member(w)) members.push_back(w);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < members.size(); ++i) {
        const double a = u(rng);
        EXPECT_TRUE(omega.member(a * members[i] + (1.0 - a) * members[i + 1]));
        EXPECT_TRUE(looser.member(members[i]));
    }
}

TEST(SafeSet, ProjectionIsAlwaysAMember) {
    std::mt19937_64 rng(4);
    const SafePolicySet omega = toy_set(3, 0.09);
    const DacWeights anchor = omega.model().zeros();
    int unchanged = 0;
    for (int k = 0; k < 500; ++k) {
        const DacWeights c = random_weights(omega.model(), rng, k % 3 == 0 ? 5.0 : (k % 3 == 1 ? 0.5 : 0.05));
        ProjectionStats st;
        const DacWeights p = omega.project(c, anchor, {}, &st);
        ASSERT_TRUE(omega.member(p)) << "k=" << k;
        if (omega.member(c)) {
            EXPECT_EQ(p.flatten(), c.flatten());
            ++unchanged;
        }
    }
    EXPECT_GT(unchanged, 0);
}

TEST(SafeSet, ProjectionFarAlongARayLandsOnTheSegment) {
    const SafePolicySet omega = toy_set(2, 0.05);
    const DacWeights anchor = omega.model().zeros();
    DacWeights dir = omega.model().zeros();
    dir[1] << 1.0, -0.5;
    const DacWeights p = omega.project(anchor + 1e3 * dir, anchor);
    EXPECT_TRUE(omega.member(p));
}

TEST(SafeSet, ProjectionMatchesGridSearchForOneBlock) {
    // H = 1 makes the weights a point in the plane, so brute force is possible.
    const SafePolicySet omega = toy_set(1, 0.05);
    const DacWeights anchor = omega.model().zeros();
    const double step = 0.002;
    std::vector<Vec> grid;
    for (double a = -1.5; a <= 1.5; a += step) {
        for (double b = -1.5; b <= 1.5; b += step) {
            DacWeights w = omega.model().zeros();
            w[1] << a, b;
            if (omega.member(w)) grid.push_back(Eigen::Vector2d(a, b));
        }
    }
    ASSERT_FALSE(grid.empty());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (int k = 0; k < 30; ++k) {
        DacWeights c = omega.model().zeros();
        c[1] << u(rng), u(rng);
        const Vec cv = Eigen::Vector2d(c[1](0), c[1](1));
        double best = 1e300;
        for (const Vec& g : grid) best = std::min(best, (g - cv).norm());
        const DacWeights p = omega.project(c, anchor);
        const double got = (Eigen::Vector2d(p[1](0), p[1](1)) - cv).norm();
        EXPECT_LE(got, best + 1e-3) << "k=" << k;
        EXPECT_GE(got, best - 2.0 * step) << "k=" << k;
    }
}

TEST(SafeSet, FeasibleSeed) {
    const LtiSystem sys = toy();
    const StabilityCertificate kss = certify_strong_stability(sys, row(0.66, 0.84));
    const SafePolicySet omega(DacModel(sys, kss, 4), unit_balls(), 0.1, sys.w_bar);
    const DacWeights seed = feasible_seed(omega, kss);
    EXPECT_EQ(seed.norm(), 0.0);
    const SafePolicySet tight(DacModel(sys, kss, 4), unit_balls(), 0.3, sys.w_bar);
    EXPECT_THROW(feasible_seed(tight, kss), SeedInfeasibleError);
}
