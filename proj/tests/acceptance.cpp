// Acceptance checks for the library. Prints one PASS/FAIL line per criterion
// and exits nonzero if any criterion fails.

#include "ogdbzc/harness.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>

using namespace ogdbzc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

const RunConfig& preset() {
    static const RunConfig c = section6_config();
    return c;
}

const ResolvedSetup& preset_setup() {
    static const ResolvedSetup s = resolve(preset());
    return s;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Vec uniform_vec(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

Vec unit_direction(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> g;
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
    return v / v.norm();
}

// Random weights inside the decay set, each block at a random fraction of its radius.
DacWeights random_decay_member(const DacModel& model, std::mt19937_64& rng, double fill) {
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DacWeights w = model.zeros();
    for (int i = 1; i <= w.H(); ++i) {
        for (Eigen::Index k = 0; k < w[i].size(); ++k) w[i](k) = g(rng);
        w[i] *= fill * u(rng) * model.cls().radius(i) / spectral_norm(w[i]);
    }
    return w;
}

// Gaussian weights with geometric block decay; may leave every set.
DacWeights random_weights(const DacModel& model, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> g;
    DacWeights w = model.zeros();
    for (int i = 1; i <= w.H(); ++i) {
        for (Eigen::Index k = 0; k < w[i].size(); ++k) w[i](k) = scale * g(rng) * std::pow(0.5, i - 1);
    }
    return w;
}

DisturbanceHistory random_history(int H, Eigen::Index n, double w_bar, std::mt19937_64& rng) {
    DisturbanceHistory h(H, n, w_bar);
    for (int k = 0; k < 2 * H; ++k) h.push(uniform_vec(rng, n, -w_bar, w_bar));
    return h;
}

// 1. Zero violations over the four disturbance families.
FuzzSummary g_fuzz;

Outcome criterion1() {
    const auto t0 = Clock::now();
    g_fuzz = safety_fuzz(preset(), preset_setup(), 100, 200);
    const double secs = seconds_since(t0);
    const FuzzSummary& f = g_fuzz;
    Outcome o;
    o.pass = f.runs == 400 && f.state_violations == 0 && f.input_violations == 0 && f.member_failures == 0 && f.clean() && secs < 120.0;
    o.detail = fmt("%d runs, %d steps, violations state %d input %d membership %d diagnostic %d, min margin %.4f/%.4f, %.1f s", f.runs,
                   f.steps, f.state_violations, f.input_violations, f.member_failures, f.diagnostic_failures, f.min_margin_x, f.min_margin_u,
                   secs);
    return o;
}

// 2. Trajectories under a constant disturbance stay in the unit balls and closer
// to the origin than the baseline gain.
Outcome criterion2() {
    const RunConfig& c = preset();
    DisturbanceStream dist(ConstantDisturbance{Vec::Constant(2, 0.3)}, c.sys.w_bar);
    const FigureRun f = figure_trajectories(c, preset_setup(), dist, 30);
    double ogd_x = 0.0;
    double ogd_u = 0.0;
    double lin_x = 0.0;
    int steps = 0;
    for (const auto& r : f.rows) {
        if (r.controller == "ogd_bzc") {
            ogd_x = std::max(ogd_x, r.x.norm());
            ogd_u = std::max(ogd_u, r.u.norm());
            ++steps;
        } else {
            lin_x = std::max(lin_x, r.x.norm());
        }
    }
    Outcome o;
    o.pass = steps == 31 && ogd_x <= 1.0 && ogd_u <= 1.0 && ogd_x <= lin_x;
    o.detail = fmt("max |x| %.4f, max |u| %.4f, baseline max |x| %.4f", ogd_x, ogd_u, lin_x);
    return o;
}

// 3. Regret per step against the best safe grid gain.
Outcome criterion3() {
    const auto t0 = Clock::now();
    const RegretReport rep = regret_curve(preset(), preset_setup(), figure2_horizons());
    const double secs = seconds_since(t0);
    std::string curve;
    bool negative = false;
    bool benchmarks_safe = true;
    for (const auto& e : rep.entries) {
        curve += fmt("T=%d %+.5f ", e.T, e.regret_per_T);
        negative = e.regret_per_T < 0.0;
        benchmarks_safe = benchmarks_safe && e.benchmark_safe;
    }
    const double last = rep.entries.back().regret_per_T;
    Outcome o;
    o.pass = rep.non_increasing() && last <= 0.05 && benchmarks_safe && secs < 300.0;
    o.detail = curve + (negative ? "(negative at T=1000), " : "(not negative at T=1000), ") + fmt("%.1f s", secs);
    return o;
}

// 4. Shrink/expand identities on random sets.
ConvexSet random_set(int variant, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Eigen::Index n = variant == 2 ? 2 : 2 + static_cast<Eigen::Index>(rng() % 2);
    if (variant == 0) {
        return ConvexSet::box(uniform_vec(rng, n, -2.0, -0.1), uniform_vec(rng, n, 0.1, 2.0));
    }
    if (variant == 1) {
        const Vec c = uniform_vec(rng, n, -0.5, 0.5);
        return ConvexSet::l2_ball(c, c.norm() + 0.1 + 1.5 * u(rng));
    }
    const int k = 3 + static_cast<int>(rng() % 6);
    Mat A(k, 2);
    Vec b(k);
    const double phase = 2.0 * M_PI * u(rng);
    for (int i = 0; i < k; ++i) {
        const double th = phase + 2.0 * M_PI * (i + 0.4 * (u(rng) - 0.5)) / k;
        A(i, 0) = std::cos(th);
        A(i, 1) = std::sin(th);
        b(i) = 0.2 + 1.5 * u(rng);
    }
    return ConvexSet::polytope(A, b);
}

// Counterexamples to lhs ⊆ rhs (and rhs ⊆ lhs when `equal`), by sampling and support dominance.
int counterexamples(const ConvexSet& lhs, const ConvexSet& rhs, bool equal, std::mt19937_64& rng) {
    const Eigen::Index n = lhs.dimension();
    int bad = 0;
    for (int k = 0; k < 64; ++k) {
        const Vec x = uniform_vec(rng, n, -3.0, 3.0);
        if (contains(lhs, x, 0.0) && !contains(rhs, x, 1e-9)) ++bad;
        if (equal && contains(rhs, x, 0.0) && !contains(lhs, x, 1e-9)) ++bad;
    }
    for (int k = 0; k < 64; ++k) {
        const Vec y = unit_direction(rng, n);
        const double hl = support(lhs, y);
        const double hr = support(rhs, y);
        const double tol = 1e-9 * (1.0 + std::abs(std::isfinite(hr) ? hr : 0.0));
        if (hl > hr + tol) ++bad;
        if (equal && hr > hl + tol) ++bad;
    }
    return bad;
}

Outcome criterion4() {
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> d(0.0, 0.4);
    int bad = 0;
    int instances = 0;
    for (int variant = 0; variant < 3; ++variant) {
        for (int k = 0; k < 200; ++k) {
            const ConvexSet D = random_set(variant, rng);
            const double d1 = d(rng);
            const double d2 = d(rng);
            const NormTag norm = k % 2 == 0 ? NormTag::LInf : NormTag::L2;
            auto resize = [&](double delta) { return delta >= 0.0 ? shrink(D, delta, norm) : expand(D, -delta, norm); };
            bad += counterexamples(shrink(shrink(D, d1, norm), d2, norm), shrink(D, d1 + d2, norm), true, rng);
            bad += counterexamples(expand(expand(D, d1, norm), d2, norm), expand(D, d1 + d2, norm), true, rng);
            bad += counterexamples(shrink(expand(D, d1, norm), d2, norm), resize(d2 - d1), true, rng);
            bad += counterexamples(expand(shrink(D, d2, norm), d1, norm), resize(d2 - d1), false, rng);
            ++instances;
        }
    }
    Outcome o;
    o.pass = bad == 0 && instances == 600;
    o.detail = fmt("%d instances over box, l2 ball and polytope, %d counterexamples", instances, bad);
    return o;
}

// 5. Truncated state plus surrogate reproduces the simulated state.
Outcome criterion5() {
    const LtiSystem& sys = preset().sys;
    const StabilityCertificate& cert = preset_setup().cert;
    std::mt19937_64 rng(505);
    double worst = 0.0;
    int checks = 0;
    for (int run = 0; run < 50; ++run) {
        const int H = 1 + run % 6;
        const DacModel model(sys, cert, H);
        const DacWeights M = random_decay_member(model, rng, 1.0);
        const ResponseMatrices r = response_matrices(model, M);
        DisturbanceHistory hist(H, sys.n(), sys.w_bar);
        std::vector<Vec> xs{Vec::Zero(sys.n())};
        for (int t = 0; t <= 100; ++t) {
            const Vec& x = xs.back();
            if (t >= H) {
                const Vec xt = surrogate(r, hist).first;
                // Independent power of A_K, not the cached one.
                Mat P = Mat::Identity(sys.n(), sys.n());
                for (int k = 0; k < H; ++k) P = (sys.A - sys.B * cert.K) * P;
                worst = std::max(worst, (x - (P * xs[static_cast<std::size_t>(t - H)] + xt)).cwiseAbs().maxCoeff());
                ++checks;
            }
            const Vec u = control_input(model, M, x, hist);
            const Vec w = uniform_vec(rng, sys.n(), -sys.w_bar, sys.w_bar);
            xs.push_back(step(sys, x, u, w));
            hist.push(w);
        }
    }
    Outcome o;
    o.pass = worst <= 1e-10;
    o.detail = fmt("50 runs, %d steps, max deviation %.2e", checks, worst);
    return o;
}

// 6. Analytic gradient of the approximate cost against central differences.
Outcome criterion6() {
    const LtiSystem& sys = preset().sys;
    const StabilityCertificate& cert = preset_setup().cert;
    std::mt19937_64 rng(606);
    const CostModel costs[] = {CostModel::quadratic(1.0, 0.5), CostModel::softplus_hinge(4.0, 0.1, 2, 1)};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int H = 1 + trial % 6;
        const DacModel model(sys, cert, H);
        const DacWeights M = random_weights(model, rng, 0.4);
        const DisturbanceHistory hist = random_history(H, sys.n(), sys.w_bar, rng);
        const CostModel& cost = costs[trial % 2];
        auto f = [&](const DacWeights& v) {
            const auto [x, u] = surrogate(response_matrices_unchecked(model, v), hist);
            return cost.evaluate(x, u);
        };
        DacWeights fd = model.zeros();
        const double h = 1e-6;
        for (int i = 1; i <= H; ++i) {
            for (Eigen::Index k = 0; k < M[i].size(); ++k) {
                DacWeights p = M, m = M;
                p[i](k) += h;
                m[i](k) -= h;
                fd[i](k) = (f(p) - f(m)) / (2.0 * h);
            }
        }
        const DacWeights g = approx_cost_gradient(cost, model, M, hist);
        worst = std::max(worst, (g - fd).norm() / std::max(g.norm(), 1e-300));
    }
    Outcome o;
    o.pass = worst <= 1e-5;
    o.detail = fmt("100 instances, max relative error %.2e", worst);
    return o;
}

// 7. The certified membership never overclaims, and projection always lands inside.
Outcome criterion7() {
    const LtiSystem& sys = preset().sys;
    const StabilityCertificate& cert = preset_setup().cert;
    const double eps = 0.05;
    std::mt19937_64 rng(707);
    int overclaims = 0;
    int members = 0;
    int proj_fail = 0;
    for (int H = 1; H <= 3; ++H) {
        const SafePolicySet omega(DacModel(sys, cert, H), preset().spec, eps, sys.w_bar);
        const int count = H == 1 ? 3334 : 3333;
        for (int k = 0; k < count; ++k) {
            const DacWeights w = random_weights(omega.model(), rng, 0.5);
            if (omega.member(w)) {
                ++members;
                if (!omega.member_exact(w)) ++overclaims;
            }
        }
        const DacWeights anchor = feasible_seed(omega, cert);
        CutPool pool;
        for (int k = 0; k < count; ++k) {
            const double scale = k % 3 == 0 ? 5.0 : (k % 3 == 1 ? 0.5 : 0.05);
            const DacWeights p = omega.project(random_weights(omega.model(), rng, scale), anchor, {}, nullptr, &pool);
            if (!omega.member(p)) ++proj_fail;
        }
    }
    Outcome o;
    o.pass = overclaims == 0 && proj_fail == 0 && members > 0;
    o.detail = fmt("10000 weights (%d members, %d overclaims), 10000 projections (%d outside)", members, overclaims, proj_fail);
    return o;
}

// 8. The lifted linear policy matches the linear policy exactly for t <= H and
// within eps3 afterwards.
Outcome criterion8() {
    const LtiSystem& sys = preset().sys;
    const SafeGrid& grid = *preset_setup().grid;
    Mat K0(1, 2);
    K0 << 0.5, 0.0;
    const StabilityCertificate base = certify_strong_stability(sys, K0);
    const int H = 6;
    std::mt19937_64 rng(808);
    double early = 0.0;
    double worst_ratio = 0.0;
    for (int k = 0; k < 20; ++k) {
        const LinearCandidate& cand = grid.safe[rng() % grid.safe.size()];
        const DacModel model(sys, base, H, common_class(base, cand.cert));
        const DacWeights M = dac_from_linear(model, cand.cert);
        const double kappa = model.cls().kappa;
        const double eps3 = 2.0 * sys.w_bar * std::pow(kappa, 5) * std::sqrt(double(sys.n())) * std::pow(1.0 - model.cls().gamma, H);
        Vec xd = Vec::Zero(2);
        Vec xl = Vec::Zero(2);
        DisturbanceHistory hist(H, 2, sys.w_bar);
        for (int t = 1; t <= 200; ++t) {
            const Vec w = uniform_vec(rng, 2, -sys.w_bar, sys.w_bar);
            xd = step(sys, xd, control_input(model, M, xd, hist), w);
            xl = step(sys, xl, -cand.K * xl, w);
            hist.push(w);
            const double gap = (xd - xl).cwiseAbs().maxCoeff();
            if (t <= H) early = std::max(early, gap);
            worst_ratio = std::max(worst_ratio, gap / eps3);
        }
    }
    Outcome o;
    o.pass = early <= 1e-12 && worst_ratio <= 1.0;
    o.detail = fmt("20 safe gains, max gap for t <= H %.2e, max gap / eps3 %.3e", early, worst_ratio);
    return o;
}

// 9. The fuzz maxima stay under the diagnostic bounds.
Outcome criterion9() {
    const FuzzSummary& f = g_fuzz;
    Outcome o;
    if (!f.bounds) {
        o.detail = "bounds undefined for the scheduled parameters";
        return o;
    }
    const DiagnosticBounds& b = *f.bounds;
    o.pass = f.runs > 0 && f.max_x <= b.b_x && f.max_u <= b.b_u && f.max_grad <= b.G_f && f.max_step <= f.params.eta * b.G_f;
    o.detail = fmt("max |x| %.3f <= %.4g, max |u| %.3f <= %.4g, max |grad| %.3f <= %.4g", f.max_x, b.b_x, f.max_u, b.b_u, f.max_grad, b.G_f);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
        {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9},
    };
    int failed = 0;
    for (const auto& [id, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
