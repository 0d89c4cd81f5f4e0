#pragma once

// The safe policy set: DAC weights in the decay set whose worst-case
// disturbance images of the surrogate state and input stay inside the
// epsilon-shrunk safety sets.

#include "ogdbzc/dac.hpp"

#include <bit>
#include <cstdint>
#include <sstream>

namespace ogdbzc {

/// Shrinking the safety sets by epsilon leaves nothing.
class EmptyWindowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The seed policy does not certify as a member.
class SeedInfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ProjectionOptions {
    double tol = 1e-6;
    int max_iters = 500;
};

struct ProjectionStats {
    int cuts = 0;
    bool used_bisection = false;
    double theta = 1.0;  // position of the result on [anchor, last cutting-plane point]
};

/// Worst constraint values at a point; a value > 0 means violated.
struct MembershipReport {
    bool in_decay_set = false;
    double state_violation = 0.0;
    double input_violation = 0.0;

    bool ok() const { return in_decay_set && state_violation <= 0.0 && input_violation <= 0.0; }
};

/// Halfspaces that contain the safe set, in the flattened weight space. They
/// stay valid for as long as the set is unchanged, so a run can reuse them
/// across projections. Oldest cuts are dropped past the capacity.
class CutPool {
public:
    explicit CutPool(std::size_t capacity = 400) : capacity_(capacity) {}

    void add(const Vec& normal, double offset) {
        if (normals_.size() == capacity_) {
            normals_.erase(normals_.begin());
            offsets_.erase(offsets_.begin());
        }
        normals_.push_back(normal);
        offsets_.push_back(offset);
    }

    bool empty() const { return normals_.empty(); }
    std::size_t size() const { return normals_.size(); }

    Mat normals() const {
        Mat C(static_cast<Eigen::Index>(normals_.size()), normals_.empty() ? 0 : normals_.front().size());
        for (std::size_t i = 0; i < normals_.size(); ++i) C.row(static_cast<Eigen::Index>(i)) = normals_[i].transpose();
        return C;
    }
    Vec offsets() const { return Eigen::Map<const Vec>(offsets_.data(), static_cast<Eigen::Index>(offsets_.size())); }

private:
    std::size_t capacity_;
    std::vector<Vec> normals_;
    std::vector<double> offsets_;
};

class SafePolicySet {
public:
    SafePolicySet(DacModel model, const SafetySpec& spec, double epsilon, double w_bar)
        : model_(std::move(model)),
          spec_(spec),
          epsilon_(epsilon),
          w_bar_(w_bar),
          shrunk_state_(shrink(spec.state_set, epsilon)),
          shrunk_input_(shrink(spec.input_set, epsilon)) {
        if (!(epsilon >= 0.0)) throw std::invalid_argument("safe set: epsilon must be >= 0");
        require_dim(spec.state_set.dimension(), model_.n(), "state set");
        require_dim(spec.input_set.dimension(), model_.m(), "input set");
        if (shrunk_state_.empty() || shrunk_input_.empty()) {
            std::ostringstream os;
            os << "empty window: shrinking the " << (shrunk_state_.empty() ? "state" : "input") << " set by epsilon = " << epsilon
               << " leaves no point";
            throw EmptyWindowError(os.str());
        }
        state_constraints_ = radius_constraints(shrunk_state_);
        input_constraints_ = radius_constraints(shrunk_input_);
    }

    const DacModel& model() const { return model_; }
    double epsilon() const { return epsilon_; }
    double w_bar() const { return w_bar_; }
    const ConvexSet& shrunk_state() const { return shrunk_state_; }
    const ConvexSet& shrunk_input() const { return shrunk_input_; }

    /// Worst-case per-coordinate reach of the surrogate state and input.
    std::pair<Vec, Vec> radii(const ResponseMatrices& r) const {
        return {w_bar_ * row_l1_norms(r.h_x()), w_bar_ * row_l1_norms(r.h_u())};
    }

    MembershipReport report(const DacWeights& w) const {
        MembershipReport rep;
        rep.in_decay_set = in_decay_set(w, model_.cls());
        const auto [rx, ru] = radii(response_matrices_unchecked(model_, w));
        rep.state_violation = worst(state_constraints_, rx);
        rep.input_violation = worst(input_constraints_, ru);
        return rep;
    }

    bool member(const DacWeights& w) const {
        model_.check_shape(w);
        if (!in_decay_set(w, model_.cls())) return false;
        const auto [rx, ru] = radii(response_matrices_unchecked(model_, w));
        return worst(state_constraints_, rx) <= 0.0 && worst(input_constraints_, ru) <= 0.0;
    }

    /// Ground truth by enumerating every vertex of the disturbance box. Needs 2Hn <= 22.
    bool member_exact(const DacWeights& w, double tol = 1e-12) const {
        model_.check_shape(w);
        const Eigen::Index dim = 2 * model_.H() * model_.n();
        if (dim > 22) throw std::invalid_argument("member_exact: 2Hn = " + std::to_string(dim) + " exceeds 22");
        if (!in_decay_set(w, model_.cls())) return false;
        const ResponseMatrices r = response_matrices_unchecked(model_, w);
        const Mat hx = r.h_x();
        const Mat hu = r.h_u();
        // Gray-code walk: each step flips one coordinate of w.
        Vec signs = Vec::Constant(dim, -1.0);
        Vec x = -w_bar_ * row_sums(hx);
        Vec u = -w_bar_ * row_sums(hu);
        const std::uint64_t count = std::uint64_t{1} << dim;
        for (std::uint64_t g = 0;; ++g) {
            if (!contains(shrunk_state_, x, tol) || !contains(shrunk_input_, u, tol)) return false;
            if (g + 1 == count) break;
            const int bit = std::countr_zero(g + 1);
            signs(bit) = -signs(bit);
            x += 2.0 * w_bar_ * signs(bit) * hx.col(bit);
            u += 2.0 * w_bar_ * signs(bit) * hu.col(bit);
        }
        return true;
    }

    /// A member near `candidate`. The result always passes member(); `anchor` must be a member.
    DacWeights project(const DacWeights& candidate, const DacWeights& anchor, const ProjectionOptions& opt = {},
                       ProjectionStats* stats = nullptr, CutPool* pool = nullptr) const;

private:
    static Vec row_sums(const Mat& m) { return m.rowwise().sum(); }

    static double worst(const std::vector<RadiusConstraint>& cs, const Vec& radii) {
        double v = -std::numeric_limits<double>::infinity();
        for (const auto& c : cs) v = std::max(v, c.value(radii));
        return v;
    }

    DacModel model_;
    SafetySpec spec_;
    double epsilon_;
    double w_bar_;
    ConvexSet shrunk_state_;
    ConvexSet shrunk_input_;
    std::vector<RadiusConstraint> state_constraints_;
    std::vector<RadiusConstraint> input_constraints_;
};

namespace detail {

inline Vec to_vec(const DacWeights& w) {
    const std::vector<double> f = w.flatten();
    return Eigen::Map<const Vec>(f.data(), static_cast<Eigen::Index>(f.size()));
}

inline DacWeights from_vec(const Vec& v, const DacModel& model) {
    return DacWeights::from_flat(std::vector<double>(v.data(), v.data() + v.size()), model.H(), model.m(), model.n());
}

inline Mat weighted_signs(const Mat& psi, const Vec& lambda, double w_bar) {
    Mat s = psi.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return w_bar * (lambda.asDiagonal() * s);
}

// Primal active-set method for argmin ||x - c|| over {x : C x <= b}, started
// from a point x that satisfies every row.
inline Vec qp_project(const Vec& c, const Mat& C, const Vec& b, Vec x) {
    const Eigen::Index k = C.rows();
    std::vector<Eigen::Index> W;
    std::vector<bool> in_w(static_cast<std::size_t>(k), false);
    bool at_subspace_min = false;
    const int limit = 100 + 20 * static_cast<int>(k + x.size());
    for (int it = 0; it < limit; ++it) {
        const Vec r = c - x;
        Vec p = r;
        Vec lam;
        if (!W.empty()) {
            Mat CWt(x.size(), static_cast<Eigen::Index>(W.size()));
            for (std::size_t j = 0; j < W.size(); ++j) CWt.col(static_cast<Eigen::Index>(j)) = C.row(W[j]).transpose();
            lam = CWt.colPivHouseholderQr().solve(r);
            p = r - CWt * lam;
        }
        if (at_subspace_min || p.norm() <= 1e-13 * (1.0 + r.norm())) {
            at_subspace_min = false;
            if (W.empty()) return x;
            Eigen::Index worst = 0;
            if (lam.minCoeff(&worst) >= -1e-12) return x;
            in_w[static_cast<std::size_t>(W[static_cast<std::size_t>(worst)])] = false;
            W.erase(W.begin() + worst);
            continue;
        }
        double alpha = 1.0;
        Eigen::Index block = -1;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (in_w[static_cast<std::size_t>(i)]) continue;
            const double cp = C.row(i).dot(p);
            if (cp <= 1e-14 * p.norm()) continue;
            const double a = std::max(0.0, (b(i) - C.row(i).dot(x)) / cp);
            if (a < alpha) {
                alpha = a;
                block = i;
            }
        }
        x += alpha * p;
        if (block >= 0) {
            W.push_back(block);
            in_w[static_cast<std::size_t>(block)] = true;
        } else {
            at_subspace_min = true;
        }
    }
    return x;
}

}  // namespace detail

inline DacWeights SafePolicySet::project(const DacWeights& candidate, const DacWeights& anchor, const ProjectionOptions& opt,
                                         ProjectionStats* stats, CutPool* pool) const {
    model_.check_shape(candidate);
    model_.check_shape(anchor);
    ProjectionStats local;
    ProjectionStats& st = stats ? *stats : local;
    st = ProjectionStats{};
    if (member(candidate)) return candidate;
    if (!member(anchor)) throw std::logic_error("project: anchor is not a member of the safe set");

    CutPool scratch;
    CutPool& cuts = pool ? *pool : scratch;
    const Vec c = detail::to_vec(candidate);
    const Vec a = detail::to_vec(anchor);
    const int H2 = 2 * model_.H();

    // Adds a cut for every constraint violated at w; returns how many.
    auto cut_at = [&](const DacWeights& w) {
        const Vec wv = detail::to_vec(w);
        int added = 0;
        auto push_cut = [&](const DacWeights& s, double g) {
            const double ns = s.norm();
            if (ns <= 0.0) return;
            // g(w) + <s, M - w> <= 0 holds on the whole safe set.
            const Vec sv = detail::to_vec(s) / ns;
            cuts.add(sv, sv.dot(wv) - g / ns);
            ++added;
        };
        for (int i = 1; i <= model_.H(); ++i) {
            const double rad = model_.cls().radius(i);
            if (spectral_norm(w[i]) <= rad) continue;
            Eigen::JacobiSVD<Mat> svd(w[i], Eigen::ComputeThinU | Eigen::ComputeThinV);
            DacWeights s = model_.zeros();
            s[i] = svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
            push_cut(s, svd.singularValues()(0) - rad);
        }
        const ResponseMatrices r = response_matrices_unchecked(model_, w);
        const auto [rx, ru] = radii(r);
        auto constraint_cuts = [&](const std::vector<RadiusConstraint>& cs, const Vec& rad, bool is_state) {
            for (const auto& con : cs) {
                const double g = con.value(rad);
                if (g <= 0.0) continue;
                const Vec lambda = con.gradient(rad);
                std::vector<Mat> Sx(static_cast<std::size_t>(H2), Mat::Zero(model_.n(), model_.n()));
                std::vector<Mat> Su(static_cast<std::size_t>(H2), Mat::Zero(model_.m(), model_.n()));
                for (int k = 1; k <= H2; ++k) {
                    const std::size_t kk = static_cast<std::size_t>(k - 1);
                    if (is_state) Sx[kk] = detail::weighted_signs(r.x(k), lambda, w_bar_);
                    else Su[kk] = detail::weighted_signs(r.u(k), lambda, w_bar_);
                }
                push_cut(adjoint(model_, Sx, Su), g);
            }
        };
        constraint_cuts(state_constraints_, rx, true);
        constraint_cuts(input_constraints_, ru, false);
        st.cuts += added;
        return added;
    };

    // Last member on [anchor, z] and the first non-member just past it.
    auto boundary = [&](const DacWeights& z) {
        const DacWeights dir = z - anchor;
        double lo = 0.0;
        double hi = 1.0;
        while ((hi - lo) * dir.norm() > opt.tol * 1e-3 && hi - lo > 1e-16) {
            const double mid = 0.5 * (lo + hi);
            (member(anchor + mid * dir) ? lo : hi) = mid;
        }
        return std::tuple{anchor + lo * dir, anchor + hi * dir, lo};
    };

    DacWeights best = anchor;
    double best_dist = (c - a).norm();
    st.theta = 0.0;
    DacWeights z = project_into_M(candidate, model_.cls());
    if (!cuts.empty()) z = detail::from_vec(detail::qp_project(c, cuts.normals(), cuts.offsets(), a), model_);
    for (int it = 0; it < opt.max_iters; ++it) {
        if (member(z)) {
            st.theta = 1.0;
            return z;
        }
        // z minimizes the distance over a superset, so it bounds the true distance from below.
        const double lower = (c - detail::to_vec(z)).norm();
        auto [inside, outside, theta] = boundary(z);
        const double d = (c - detail::to_vec(inside)).norm();
        if (d < best_dist) {
            best = inside;
            best_dist = d;
            st.theta = theta;
        }
        if (best_dist - lower <= opt.tol) break;
        const int added = cut_at(z) + cut_at(outside);
        if (added == 0) break;
        z = detail::from_vec(detail::qp_project(c, cuts.normals(), cuts.offsets(), a), model_);
    }
    st.used_bisection = true;
    return best;
}

/// Lifts the strictly safe linear policy into the set and certifies it.
inline DacWeights feasible_seed(const SafePolicySet& omega, const StabilityCertificate& k_ss) {
    const DacWeights seed = dac_from_linear(omega.model(), k_ss);
    const MembershipReport rep = omega.report(seed);
    if (!rep.ok()) {
        std::ostringstream os;
        os << "seed policy is not certified safe at epsilon = " << omega.epsilon() << ":";
        if (!rep.in_decay_set) os << " weights leave the decay set;";
        if (rep.state_violation > 0.0) os << " state containment violated by " << rep.state_violation << ";";
        if (rep.input_violation > 0.0) os << " input containment violated by " << rep.input_violation << ";";
        throw SeedInfeasibleError(os.str());
    }
    return seed;
}

}  // namespace ogdbzc
