#pragma once

// Linear time-invariant plant x' = A x + B u + w with ||w||_inf <= w_bar,
// strong-stability certificates for a feedback gain, and a certified safety
// margin for a pure linear policy u = -K x.

#include "ogdbzc/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <complex>
#include <optional>
#include <vector>

namespace ogdbzc {

/// Disturbance outside the admissible box.
class DisturbanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An observed transition that the model cannot explain with an admissible disturbance.
class ModelMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A gain whose closed loop is not asymptotically stable.
class StabilityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct LtiSystem {
    Mat A;
    Mat B;
    double w_bar = 0.0;

    LtiSystem() = default;
    LtiSystem(Mat a, Mat b, double wbar) : A(std::move(a)), B(std::move(b)), w_bar(wbar) {
        if (A.rows() == 0 || A.rows() != A.cols()) throw DimensionError("system: A must be square and nonempty");
        require_dim(B.rows(), A.rows(), "system: rows of B");
        if (B.cols() == 0) throw DimensionError("system: B must have at least one column");
        if (!(w_bar >= 0.0)) throw std::invalid_argument("system: w_bar must be >= 0");
    }

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
};

struct SafetySpec {
    ConvexSet state_set;
    ConvexSet input_set;
};

inline Vec step(const LtiSystem& sys, const Vec& x, const Vec& u, const Vec& w) {
    require_dim(x.size(), sys.n(), "step state");
    require_dim(u.size(), sys.m(), "step input");
    require_dim(w.size(), sys.n(), "step disturbance");
    if (inf_norm(w) > sys.w_bar + 1e-12) {
        throw DisturbanceError("step: ||w||_inf = " + std::to_string(inf_norm(w)) + " exceeds w_bar = " + std::to_string(sys.w_bar));
    }
    return sys.A * x + sys.B * u + w;
}

inline Vec recover_disturbance(const LtiSystem& sys, const Vec& x, const Vec& u, const Vec& x_next) {
    require_dim(x_next.size(), sys.n(), "recover_disturbance next state");
    Vec w = x_next - sys.A * x - sys.B * u;
    if (inf_norm(w) > sys.w_bar + 1e-9) {
        throw ModelMismatchError("recovered disturbance has ||w||_inf = " + std::to_string(inf_norm(w)) +
                                 " > w_bar = " + std::to_string(sys.w_bar));
    }
    return w;
}

/// Witness that A - B K = H L H^{-1} with ||L|| <= 1 - gamma and
/// ||K||, ||H||, ||H^{-1}|| <= kappa.
struct StabilityCertificate {
    Mat K;
    Mat A_K;
    double kappa = 1.0;
    double gamma = 1.0;
    Mat H_mat;
    Mat H_inv;
    Mat L_mat;
    double kappa_B = 1.0;
};

/// A^0, A^1, ..., A^{count-1}.
inline std::vector<Mat> matrix_powers(const Mat& A, std::size_t count) {
    std::vector<Mat> p;
    p.reserve(count);
    if (count == 0) return p;
    p.push_back(Mat::Identity(A.rows(), A.cols()));
    for (std::size_t k = 1; k < count; ++k) p.push_back(A * p.back());
    return p;
}

namespace detail {

// Real block-diagonalizing basis: one column per real eigenvalue, two columns
// (Re v, Im v) per complex pair, each block rescaled to unit norm.
inline std::optional<Mat> real_eigenbasis(const Mat& A) {
    const Eigen::Index n = A.rows();
    Eigen::EigenSolver<Mat> es(A, true);
    if (es.info() != Eigen::Success) return std::nullopt;
    const auto& vals = es.eigenvalues();
    const auto& vecs = es.eigenvectors();
    Mat V(n, n);
    const double scale = 1.0 + A.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < n;) {
        if (std::abs(vals(j).imag()) <= 1e-14 * scale) {
            Vec v = vecs.col(j).real();
            V.col(j) = v / v.norm();
            ++j;
            continue;
        }
        if (j + 1 >= n) return std::nullopt;
        Vec p = vecs.col(j).real();
        Vec q = vecs.col(j).imag();
        // Rotate the phase so that Re and Im parts are orthogonal.
        const double th = 0.5 * std::atan2(-2.0 * p.dot(q), p.squaredNorm() - q.squaredNorm());
        const Vec p2 = std::cos(th) * p - std::sin(th) * q;
        const Vec q2 = std::sin(th) * p + std::cos(th) * q;
        const double s = std::sqrt(p2.squaredNorm() + q2.squaredNorm());
        V.col(j) = p2 / s;
        V.col(j + 1) = q2 / s;
        j += 2;
    }
    return V;
}

// H = P^{-1/2} with P the solution of P - At' P At = I, At = A / r, r in (rho, 1).
inline Mat lyapunov_basis(const Mat& A, double rho) {
    const Eigen::Index n = A.rows();
    const double r = 0.5 * (1.0 + rho);
    const Mat At = A / r;
    // vec(At' P At) = kron(At', At') vec(P) in column-major order.
    Mat kron = Mat::Identity(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) kron.block(i * n, j * n, n, n) -= At(j, i) * At.transpose();
    }
    const Mat eye = Mat::Identity(n, n);
    const Vec rhs = Eigen::Map<const Vec>(eye.data(), n * n);
    const Vec sol = kron.colPivHouseholderQr().solve(rhs);
    Mat P = Eigen::Map<const Mat>(sol.data(), n, n);
    P = 0.5 * (P + P.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    return es.operatorInverseSqrt();
}

}  // namespace detail

inline StabilityCertificate certify_strong_stability(const LtiSystem& sys, const Mat& K) {
    require_dim(K.rows(), sys.m(), "gain rows");
    require_dim(K.cols(), sys.n(), "gain cols");
    const Mat A_K = sys.A - sys.B * K;
    const double rho = spectral_radius(A_K);
    if (!(rho < 1.0)) {
        throw StabilityError("closed loop A - BK has spectral radius " + std::to_string(rho) + " >= 1");
    }

    auto finish = [&](Mat H) -> std::optional<StabilityCertificate> {
        Eigen::FullPivLU<Mat> lu(H);
        if (!lu.isInvertible()) return std::nullopt;
        Mat Hinv = lu.inverse();
        const double nh = spectral_norm(H);
        const double nhi = spectral_norm(Hinv);
        if (!std::isfinite(nh * nhi) || nh * nhi > 1e8) return std::nullopt;
        const double s = std::sqrt(nhi / nh);
        H *= s;
        Hinv /= s;
        const Mat L = Hinv * A_K * H;
        const double nl = spectral_norm(L);
        if (!(nl < 1.0)) return std::nullopt;
        if (spectral_norm(A_K - H * L * Hinv) > 1e-10 * std::max(1.0, spectral_norm(A_K))) return std::nullopt;
        StabilityCertificate c;
        c.K = K;
        c.A_K = A_K;
        c.H_mat = H;
        c.H_inv = Hinv;
        c.L_mat = L;
        c.gamma = 1.0 - nl;
        c.kappa = std::max({1.0, spectral_norm(K), spectral_norm(H), spectral_norm(Hinv)});
        c.kappa_B = std::max(spectral_norm(sys.B), 1.0);
        return c;
    };

    if (auto V = detail::real_eigenbasis(A_K)) {
        if (auto c = finish(*V)) return *c;
    }
    if (auto c = finish(detail::lyapunov_basis(A_K, rho))) return *c;
    throw StabilityError("could not construct a strong-stability certificate (spectral radius " + std::to_string(rho) + ")");
}

/// Worst-case reach radii of a linear policy from x0 = 0 and the margin by
/// which they fit inside the safety sets.
struct LinearSafety {
    double margin = 0.0;
    Vec radii_x;
    Vec radii_u;
};

/// Per-coordinate bounds on |x_t| and |u_t| for all t under u = -K' x,
/// truncated at `horizon_cap` with a geometric tail bound.
inline std::pair<Vec, Vec> linear_reach_radii(const LtiSystem& sys, const StabilityCertificate& cert,
                                              int horizon_cap = 200) {
    const Eigen::Index n = sys.n();
    Vec rx = Vec::Zero(n);
    Vec ru = Vec::Zero(sys.m());
    Mat P = Mat::Identity(n, n);
    for (int s = 1; s <= horizon_cap; ++s) {
        rx += row_l1_norms(P);
        ru += row_l1_norms(cert.K * P);
        P = cert.A_K * P;
    }
    const double q = std::pow(1.0 - cert.gamma, horizon_cap);
    const double tail = std::sqrt(static_cast<double>(n)) * cert.kappa * cert.kappa * q / cert.gamma;
    rx = sys.w_bar * (rx.array() + tail).matrix();
    ru = sys.w_bar * (ru.array() + cert.kappa * tail).matrix();
    return {rx, ru};
}

/// Largest eps0 (to 1e-12 relative) such that the reach boxes fit in the
/// eps0-shrunk safety sets, or nullopt if they do not fit even at eps0 = 0.
inline std::optional<LinearSafety> certify_linear_policy_safety(const LtiSystem& sys, const StabilityCertificate& cert,
                                                                const SafetySpec& spec, int horizon_cap = 200) {
    auto [rx, ru] = linear_reach_radii(sys, cert, horizon_cap);
    auto fits = [&](double eps) {
        return box_image_contained(rx, shrink(spec.state_set, eps)) && box_image_contained(ru, shrink(spec.input_set, eps));
    };
    if (!fits(0.0)) return std::nullopt;
    double lo = 0.0;
    double hi = 1.0;
    while (fits(hi)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e15) return LinearSafety{lo, rx, ru};
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (fits(mid) ? lo : hi) = mid;
    }
    return LinearSafety{lo, rx, ru};
}

}  // namespace ogdbzc
