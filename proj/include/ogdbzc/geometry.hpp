#pragma once

// Closed convex sets used as state/input constraints, together with the
// Minkowski shrink/expand operations that build the buffer zone around them.
//
// Supported representations:
//   Box            {x : lower <= x <= upper}
//   L2Ball         {x : ||x - c||_2 <= r}
//   Polytope       {x : A x <= b}
//   ShrunkL2Ball   {x : sum_i (|x_i - c_i| + d)^2 <= r^2}, an L2 ball eroded by an L-inf ball
//   Expanded       base (+) delta * unit ball, kept implicit via its support function
//
// All values are immutable once built.

#include "ogdbzc/linalg.hpp"
#include "ogdbzc/lp.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ogdbzc {

inline constexpr double kMembershipTol = 1e-9;
inline constexpr double kProjectionTol = 1e-8;

class EmptySetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvexSet;

struct Box {
    Vec lower;
    Vec upper;
};

struct L2Ball {
    Vec center;
    double radius = 0.0;
};

struct Polytope {
    Mat rows;
    Vec offsets;
};

struct ShrunkL2Ball {
    Vec center;
    double radius = 0.0;
    double delta = 0.0;
};

struct Expanded {
    std::shared_ptr<const ConvexSet> base;
    double delta = 0.0;
    NormTag norm = NormTag::LInf;
};

class ConvexSet {
public:
    using Variant = std::variant<Box, L2Ball, Polytope, ShrunkL2Ball, Expanded>;

    /// Checked constructors for user-facing sets. Each one must contain the origin.
    static ConvexSet box(Vec lower, Vec upper) {
        if (lower.size() == 0) throw std::invalid_argument("box: dimension must be positive");
        require_dim(upper.size(), lower.size(), "box upper bound");
        if ((lower.array() > upper.array()).any()) throw std::invalid_argument("box: lower > upper");
        ConvexSet s(Box{std::move(lower), std::move(upper)});
        s.require_origin("box");
        return s;
    }

    static ConvexSet l2_ball(Vec center, double radius) {
        if (center.size() == 0) throw std::invalid_argument("l2ball: dimension must be positive");
        if (!(radius >= 0.0)) throw std::invalid_argument("l2ball: radius must be >= 0");
        ConvexSet s(L2Ball{std::move(center), radius});
        s.require_origin("l2ball");
        return s;
    }

    static ConvexSet polytope(Mat rows, Vec offsets) {
        if (rows.cols() == 0 || rows.rows() == 0) throw std::invalid_argument("polytope: empty description");
        require_dim(offsets.size(), rows.rows(), "polytope offsets");
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            if (rows.row(i).cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("polytope: zero row");
        }
        ConvexSet s(Polytope{std::move(rows), std::move(offsets)});
        s.require_origin("polytope");
        return s;
    }

    /// Unchecked constructor used by set algebra; results may be empty or exclude 0.
    explicit ConvexSet(Variant v) : v_(std::move(v)) { empty_ = compute_empty(); }

    const Variant& variant() const { return v_; }
    bool empty() const { return empty_; }

    Eigen::Index dimension() const {
        return std::visit(
            [](const auto& s) -> Eigen::Index {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, Box>) return s.lower.size();
                else if constexpr (std::is_same_v<T, L2Ball> || std::is_same_v<T, ShrunkL2Ball>) return s.center.size();
                else if constexpr (std::is_same_v<T, Polytope>) return s.rows.cols();
                else return s.base->dimension();
            },
            v_);
    }

    template <class T>
    const T* as() const { return std::get_if<T>(&v_); }

    std::string kind() const {
        static const char* names[] = {"box", "l2ball", "polytope", "shrunk_l2ball", "expanded"};
        return names[v_.index()];
    }

private:
    void require_origin(const char* what) const;
    bool compute_empty() const;

    Variant v_;
    bool empty_ = false;
};

// ---------------------------------------------------------------------------
// support function

namespace detail {

inline double shrunk_ball_support(const ShrunkL2Ball& s, const Vec& y) {
    const double base = y.dot(s.center);
    const Vec a = y.cwiseAbs();
    const Eigen::Index n = a.size();
    if (a.maxCoeff() == 0.0) return base;
    // Maximizer has v_i = max(delta, t * |y_i|) with ||v||_2 = r; walk the
    // sorted breakpoints to find the active set exactly.
    std::vector<double> sorted(a.data(), a.data() + n);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double r2 = s.radius * s.radius;
    const double d2 = s.delta * s.delta;
    double sum_sq = 0.0;
    double t = 0.0;
    for (Eigen::Index k = 1; k <= n; ++k) {
        const double yk = sorted[static_cast<std::size_t>(k - 1)];
        if (yk == 0.0) break;
        sum_sq += yk * yk;
        const double rest = r2 - static_cast<double>(n - k) * d2;
        if (rest < 0.0) continue;
        t = std::sqrt(rest / sum_sq);
        const double next = k < n ? sorted[static_cast<std::size_t>(k)] : 0.0;
        if (t * yk >= s.delta && t * next <= s.delta) break;
    }
    double value = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) value += a(i) * (std::max(s.delta, t * a(i)) - s.delta);
    return base + value;
}

// Support of a 2-D polytope by vertex enumeration. Returns nullopt when the
// polyhedron has no vertex (lines or strips), in which case the caller falls back to LP.
inline std::optional<double> polytope_support_2d(const Polytope& p, const Vec& y) {
    const Mat& A = p.rows;
    const Vec& b = p.offsets;
    const double scale = 1.0 + b.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (double sgn : {1.0, -1.0}) {
            Vec d(2);
            d << -sgn * A(i, 1), sgn * A(i, 0);
            if ((A * d).maxCoeff() <= 1e-12 * d.norm() * (1.0 + A.cwiseAbs().maxCoeff()) && y.dot(d) > 1e-12 * d.norm() * y.norm()) {
                return std::numeric_limits<double>::infinity();
            }
        }
    }
    double best = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < A.rows(); ++j) {
            Eigen::Matrix2d M;
            M << A(i, 0), A(i, 1), A(j, 0), A(j, 1);
            const double det = M.determinant();
            if (std::abs(det) <= 1e-12 * M.norm() * M.norm()) continue;
            const Eigen::Vector2d v = M.inverse() * Eigen::Vector2d(b(i), b(j));
            if (((A * v - b).array() <= 1e-9 * scale).all()) {
                best = std::max(best, y.dot(v));
                found = true;
            }
        }
    }
    if (!found) return std::nullopt;
    return best;
}

}  // namespace detail

/// h_D(y) = sup { <y, x> : x in D }. Returns -inf for an empty set and +inf
/// when D is unbounded in direction y.
inline double support(const ConvexSet& set, const Vec& y) {
    require_dim(y.size(), set.dimension(), "support direction");
    if (set.empty()) return -std::numeric_limits<double>::infinity();
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return (y.array() * s.lower.array()).max(y.array() * s.upper.array()).sum();
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                return y.dot(s.center) + s.radius * y.norm();
            } else if constexpr (std::is_same_v<T, Polytope>) {
                if (y.size() == 2) {
                    if (auto v = detail::polytope_support_2d(s, y)) return *v;
                }
                const lp::Result r = lp::maximize(s.rows, s.offsets, y);
                return r.value;
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                return detail::shrunk_ball_support(s, y);
            } else {
                return support(*s.base, y) + s.delta * dual_norm(y, s.norm);
            }
        },
        set.variant());
}

// ---------------------------------------------------------------------------
// membership

inline bool contains(const ConvexSet& set, const Vec& x, double tol = kMembershipTol);

namespace detail {

// Does the axis-aligned box [lo, hi] meet the set?
inline bool intersects_box(const ConvexSet& set, const Vec& lo, const Vec& hi, double tol) {
    if (set.empty()) return false;
    return std::visit(
        [&](const auto& s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return ((s.lower.array() <= hi.array() + tol) && (lo.array() <= s.upper.array() + tol)).all();
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                const Vec z = s.center.cwiseMax(lo).cwiseMin(hi);
                return (z - s.center).norm() <= s.radius + tol;
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                const Vec z = s.center.cwiseMax(lo).cwiseMin(hi);
                return ((z - s.center).cwiseAbs().array() + s.delta).matrix().norm() <= s.radius + tol;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                const Eigen::Index n = lo.size();
                Mat A(s.rows.rows() + 2 * n, n);
                Vec b(s.rows.rows() + 2 * n);
                A << s.rows, Mat::Identity(n, n), -Mat::Identity(n, n);
                b << s.offsets.array() + tol, hi, -lo;
                return lp::feasible(A, b);
            } else {
                if (s.norm != NormTag::LInf) {
                    throw std::invalid_argument("box intersection with an L2-expanded set is not supported");
                }
                return intersects_box(*s.base, lo.array() - s.delta, hi.array() + s.delta, tol);
            }
        },
        set.variant());
}

}  // namespace detail

/// Euclidean projection onto the set. Exact closed forms for Box, L2Ball,
/// ShrunkL2Ball and L2-expanded sets; Dykstra's method for polytopes.
inline Vec project_point(const ConvexSet& set, const Vec& p, double tol = kProjectionTol);

inline bool contains(const ConvexSet& set, const Vec& x, double tol) {
    require_dim(x.size(), set.dimension(), "contains point");
    if (tol < 0.0) throw std::invalid_argument("contains: tol must be >= 0");
    if (set.empty()) return false;
    return std::visit(
        [&](const auto& s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return ((x.array() >= s.lower.array() - tol) && (x.array() <= s.upper.array() + tol)).all();
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                return (x - s.center).norm() <= s.radius + tol;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                return ((s.rows * x - s.offsets).array() <= tol).all();
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                return ((x - s.center).cwiseAbs().array() + s.delta).matrix().norm() <= s.radius + tol;
            } else {
                if (s.norm == NormTag::LInf) {
                    const double r = s.delta + tol;
                    return detail::intersects_box(*s.base, x.array() - r, x.array() + r, 0.0);
                }
                return (project_point(*s.base, x) - x).norm() <= s.delta + tol;
            }
        },
        set.variant());
}

inline void ConvexSet::require_origin(const char* what) const {
    if (!contains(*this, Vec::Zero(dimension()), 0.0)) {
        throw std::invalid_argument(std::string(what) + ": set must contain the origin");
    }
}

inline bool ConvexSet::compute_empty() const {
    return std::visit(
        [](const auto& s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return (s.lower.array() > s.upper.array()).any();
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                return s.radius < 0.0;
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                const double n = static_cast<double>(s.center.size());
                return s.radius < 0.0 || n * s.delta * s.delta > s.radius * s.radius;
            } else if constexpr (std::is_same_v<T, Polytope>) {
                return !lp::feasible(s.rows, s.offsets);
            } else {
                return s.base->empty();
            }
        },
        v_);
}

// ---------------------------------------------------------------------------
// shrink / expand

/// Delta-shrinkage {x : x + y in D for all ||y|| <= delta}.
inline ConvexSet shrink(const ConvexSet& set, double delta, NormTag norm = NormTag::LInf) {
    if (!(delta >= 0.0)) throw std::invalid_argument("shrink: delta must be >= 0");
    if (delta == 0.0) return set;
    return std::visit(
        [&](const auto& s) -> ConvexSet {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return ConvexSet(Box{s.lower.array() + delta, s.upper.array() - delta});
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                if (norm == NormTag::L2) return ConvexSet(L2Ball{s.center, s.radius - delta});
                return ConvexSet(ShrunkL2Ball{s.center, s.radius, delta});
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                if (norm == NormTag::L2) return ConvexSet(ShrunkL2Ball{s.center, s.radius - delta, s.delta});
                return ConvexSet(ShrunkL2Ball{s.center, s.radius, s.delta + delta});
            } else if constexpr (std::is_same_v<T, Polytope>) {
                Vec b = s.offsets;
                for (Eigen::Index i = 0; i < s.rows.rows(); ++i) {
                    b(i) -= delta * dual_norm(s.rows.row(i).transpose(), norm);
                }
                return ConvexSet(Polytope{s.rows, std::move(b)});
            } else {
                if (s.norm != norm) {
                    throw std::invalid_argument("shrink: mixed-norm shrink of an expanded set is not supported");
                }
                if (delta >= s.delta) return shrink(*s.base, delta - s.delta, norm);
                return ConvexSet(Expanded{s.base, s.delta - delta, norm});
            }
        },
        set.variant());
}

/// Delta-expansion D (+) {y : ||y|| <= delta}.
inline ConvexSet expand(const ConvexSet& set, double delta, NormTag norm = NormTag::LInf) {
    if (!(delta >= 0.0)) throw std::invalid_argument("expand: delta must be >= 0");
    if (delta == 0.0) return set;
    if (const auto* b = set.as<Box>(); b && norm == NormTag::LInf) {
        return ConvexSet(Box{b->lower.array() - delta, b->upper.array() + delta});
    }
    if (const auto* b = set.as<L2Ball>(); b && norm == NormTag::L2) {
        return ConvexSet(L2Ball{b->center, b->radius + delta});
    }
    if (const auto* e = set.as<Expanded>(); e && e->norm == norm) {
        return ConvexSet(Expanded{e->base, e->delta + delta, norm});
    }
    return ConvexSet(Expanded{std::make_shared<const ConvexSet>(set), delta, norm});
}

// ---------------------------------------------------------------------------
// projection

namespace detail {

inline Vec project_shrunk_ball(const ShrunkL2Ball& s, const Vec& p) {
    const Vec diff = p - s.center;
    const Vec q = diff.cwiseAbs();
    const Vec a = q.array() + s.delta;
    if (a.norm() <= s.radius) return p;
    // v_i = max(delta, a_i / (1 + lambda)) with ||v|| = r.
    auto v_of = [&](double lambda) { return a.unaryExpr([&](double ai) { return std::max(s.delta, ai / (1.0 + lambda)); }).eval(); };
    double lo = 0.0;
    double hi = 1.0;
    while (v_of(hi).norm() > s.radius) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * (1.0 + hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (v_of(mid).norm() > s.radius ? lo : hi) = mid;
    }
    const Vec v = v_of(hi);
    Vec x(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double z = v(i) - s.delta;
        x(i) = s.center(i) + (diff(i) < 0.0 ? -z : z);
    }
    return x;
}

inline Vec project_polytope(const Polytope& s, const Vec& p, double tol) {
    const Eigen::Index m = s.rows.rows();
    if (((s.rows * p - s.offsets).array() <= 0.0).all()) return p;
    Vec x = p;
    Mat corr = Mat::Zero(p.size(), m);
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double change = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Vec a = s.rows.row(i).transpose();
            const Vec y = x + corr.col(i);
            const double viol = a.dot(y) - s.offsets(i);
            const Vec nx = viol > 0.0 ? Vec(y - (viol / a.squaredNorm()) * a) : y;
            corr.col(i) = y - nx;
            change += (nx - x).squaredNorm();
            x = nx;
        }
        if (std::sqrt(change) <= tol * 1e-3 && ((s.rows * x - s.offsets).array() <= tol).all()) break;
    }
    return x;
}

}  // namespace detail

inline Vec project_point(const ConvexSet& set, const Vec& p, double tol) {
    require_dim(p.size(), set.dimension(), "project_point");
    if (set.empty()) throw EmptySetError("project_point: set is empty");
    return std::visit(
        [&](const auto& s) -> Vec {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return p.cwiseMax(s.lower).cwiseMin(s.upper);
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                const Vec d = p - s.center;
                const double r = d.norm();
                return r <= s.radius ? p : Vec(s.center + (s.radius / r) * d);
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                return detail::project_shrunk_ball(s, p);
            } else if constexpr (std::is_same_v<T, Polytope>) {
                return detail::project_polytope(s, p, tol);
            } else {
                if (s.norm != NormTag::L2) {
                    throw std::invalid_argument("project_point: L-inf expanded sets are not supported");
                }
                const Vec q = project_point(*s.base, p, tol);
                const double d = (p - q).norm();
                return d <= s.delta ? p : Vec(q + (s.delta / d) * (p - q));
            }
        },
        set.variant());
}

// ---------------------------------------------------------------------------
// containment of a centered box {x : |x_i| <= radii_i}

/// A scalar condition g(radii) <= 0 that is convex and nondecreasing in the
/// radii. Either linear, g = <w, r'> - bound, or euclidean,
/// g = ||r' + offset||_2 - bound, where r' = max(radii - shift, 0).
struct RadiusConstraint {
    enum class Kind { Linear, Euclidean };
    Kind kind = Kind::Linear;
    Vec weights;  // Linear
    Vec offset;   // Euclidean
    double bound = 0.0;
    double shift = 0.0;

    double value(const Vec& radii) const {
        const Vec r = (radii.array() - shift).cwiseMax(0.0);
        if (kind == Kind::Linear) return weights.dot(r) - bound;
        return (r + offset).norm() - bound;
    }

    /// A subgradient with respect to the radii.
    Vec gradient(const Vec& radii) const {
        const Vec r = (radii.array() - shift).cwiseMax(0.0);
        Vec g;
        if (kind == Kind::Linear) {
            g = weights;
        } else {
            const Vec v = r + offset;
            const double nv = v.norm();
            g = nv > 0.0 ? Vec(v / nv) : Vec::Zero(v.size());
        }
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            if (radii(i) < shift) g(i) = 0.0;
        }
        return g;
    }
};

/// Conditions under which a centered box lies inside the set. Exact for Box,
/// Polytope, L2Ball and ShrunkL2Ball; sound but conservative for Expanded sets.
inline std::vector<RadiusConstraint> radius_constraints(const ConvexSet& set) {
    using K = RadiusConstraint::Kind;
    const Eigen::Index n = set.dimension();
    std::vector<RadiusConstraint> out;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    Vec w = Vec::Zero(n);
                    w(i) = 1.0;
                    out.push_back({K::Linear, w, Vec(), std::min(s.upper(i), -s.lower(i)), 0.0});
                }
            } else if constexpr (std::is_same_v<T, Polytope>) {
                for (Eigen::Index i = 0; i < s.rows.rows(); ++i) {
                    out.push_back({K::Linear, s.rows.row(i).transpose().cwiseAbs(), Vec(), s.offsets(i), 0.0});
                }
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                out.push_back({K::Euclidean, Vec(), s.center.cwiseAbs(), s.radius, 0.0});
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                out.push_back({K::Euclidean, Vec(), s.center.cwiseAbs().array() + s.delta, s.radius, 0.0});
            } else {
                // box(r) = box(r - d) (+) box(d), and box(d / sqrt(n)) fits in the L2 ball of radius d.
                const double d = s.norm == NormTag::LInf ? s.delta : s.delta / std::sqrt(static_cast<double>(n));
                out = radius_constraints(*s.base);
                for (auto& c : out) c.shift += d;
            }
        },
        set.variant());
    return out;
}

/// Certifies {x : |x_i| <= radii_i} is a subset of the set.
inline bool box_image_contained(const Vec& radii, const ConvexSet& set) {
    require_dim(radii.size(), set.dimension(), "box_image_contained radii");
    if ((radii.array() < 0.0).any()) throw std::invalid_argument("box_image_contained: radii must be >= 0");
    if (set.empty()) return false;
    for (const auto& c : radius_constraints(set)) {
        if (c.value(radii) > 0.0) return false;
    }
    return true;
}

/// Signed slack of a point with respect to the set boundary (positive inside).
/// Euclidean distance for Box, L2Ball and Polytope.
inline double boundary_margin(const ConvexSet& set, const Vec& x) {
    require_dim(x.size(), set.dimension(), "boundary_margin point");
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                return std::min((x - s.lower).minCoeff(), (s.upper - x).minCoeff());
            } else if constexpr (std::is_same_v<T, L2Ball>) {
                return s.radius - (x - s.center).norm();
            } else if constexpr (std::is_same_v<T, Polytope>) {
                return ((s.offsets - s.rows * x).array() / s.rows.rowwise().norm().array()).minCoeff();
            } else if constexpr (std::is_same_v<T, ShrunkL2Ball>) {
                return s.radius - ((x - s.center).cwiseAbs().array() + s.delta).matrix().norm();
            } else {
                throw std::invalid_argument("boundary_margin: unsupported for expanded sets");
            }
        },
        set.variant());
}

}  // namespace ogdbzc
