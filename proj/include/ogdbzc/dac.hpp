#pragma once

// Disturbance-action controllers u = -K x + sum_{i=1..H} M[i] w_{t-i}.

#include "ogdbzc/lti.hpp"

#include <deque>
#include <vector>

namespace ogdbzc {

/// The blocks M[1..H], stored at indices 0..H-1, each m x n.
struct DacWeights {
    std::vector<Mat> blocks;

    static DacWeights zeros(int H, Eigen::Index m, Eigen::Index n) {
        if (H < 1) throw std::invalid_argument("DAC memory H must be >= 1");
        return DacWeights{std::vector<Mat>(static_cast<std::size_t>(H), Mat::Zero(m, n))};
    }

    int H() const { return static_cast<int>(blocks.size()); }
    Eigen::Index m() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    Eigen::Index n() const { return blocks.empty() ? 0 : blocks.front().cols(); }

    /// M[i] for i = 1..H.
    const Mat& operator[](int i) const { return blocks.at(static_cast<std::size_t>(i - 1)); }
    Mat& operator[](int i) { return blocks.at(static_cast<std::size_t>(i - 1)); }

    double squared_norm() const {
        double s = 0.0;
        for (const Mat& b : blocks) s += b.squaredNorm();
        return s;
    }
    double norm() const { return std::sqrt(squared_norm()); }

    double dot(const DacWeights& o) const {
        check_same_shape(o);
        double s = 0.0;
        for (std::size_t i = 0; i < blocks.size(); ++i) s += blocks[i].cwiseProduct(o.blocks[i]).sum();
        return s;
    }

    DacWeights& operator+=(const DacWeights& o) {
        check_same_shape(o);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] += o.blocks[i];
        return *this;
    }
    DacWeights& operator-=(const DacWeights& o) {
        check_same_shape(o);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] -= o.blocks[i];
        return *this;
    }
    DacWeights& operator*=(double s) {
        for (Mat& b : blocks) b *= s;
        return *this;
    }
    friend DacWeights operator+(DacWeights a, const DacWeights& b) { return a += b; }
    friend DacWeights operator-(DacWeights a, const DacWeights& b) { return a -= b; }
    friend DacWeights operator*(double s, DacWeights a) { return a *= s; }

    /// Row-major flattening of M[1], ..., M[H].
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(blocks.size() * static_cast<std::size_t>(m() * n()));
        for (const Mat& b : blocks) {
            for (Eigen::Index r = 0; r < b.rows(); ++r) {
                for (Eigen::Index c = 0; c < b.cols(); ++c) out.push_back(b(r, c));
            }
        }
        return out;
    }

    static DacWeights from_flat(const std::vector<double>& flat, int H, Eigen::Index m, Eigen::Index n) {
        if (flat.size() != static_cast<std::size_t>(H * m * n)) throw DimensionError("DacWeights::from_flat: size mismatch");
        DacWeights w = zeros(H, m, n);
        std::size_t k = 0;
        for (Mat& b : w.blocks) {
            for (Eigen::Index r = 0; r < m; ++r) {
                for (Eigen::Index c = 0; c < n; ++c) b(r, c) = flat[k++];
            }
        }
        return w;
    }

    void check_same_shape(const DacWeights& o) const {
        if (o.H() != H() || o.m() != m() || o.n() != n()) throw DimensionError("DacWeights: shape mismatch");
    }
};

/// Parameters of the decay set {||M[i]||_2 <= a (1-gamma)^{i-1}}.
struct DacClass {
    double kappa = 1.0;
    double gamma = 1.0;
    double a = 2.0;

    double radius(int i) const { return a * std::pow(1.0 - gamma, i - 1); }
};

inline DacClass default_class(const StabilityCertificate& cert) {
    return {cert.kappa, cert.gamma, 2.0 * std::pow(cert.kappa, 3)};
}

/// A (kappa, gamma) pair valid for both certificates.
inline DacClass common_class(const StabilityCertificate& c1, const StabilityCertificate& c2) {
    const double kappa = std::max(c1.kappa, c2.kappa);
    return {kappa, std::min(c1.gamma, c2.gamma), 2.0 * std::pow(kappa, 3)};
}

inline constexpr double kDecayTol = 1e-9;

inline bool in_decay_set(const DacWeights& w, const DacClass& cls) {
    for (int i = 1; i <= w.H(); ++i) {
        if (spectral_norm(w[i]) > cls.radius(i) * (1.0 + kDecayTol)) return false;
    }
    return true;
}

/// Projection onto the spectral ball of the given radius by singular-value clipping.
inline Mat project_spectral_ball(const Mat& block, double radius) {
    if (block.size() == 0) return block;
    if (block.rows() == 1 || block.cols() == 1) {
        const double nb = block.norm();
        return nb <= radius ? block : Mat(block * (radius / nb));
    }
    Eigen::JacobiSVD<Mat> svd(block, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& s = svd.singularValues();
    if (s(0) <= radius) return block;
    return svd.matrixU() * s.cwiseMin(radius).asDiagonal() * svd.matrixV().transpose();
}

/// Blockwise projection onto the decay set; blocks already inside are returned unchanged.
inline DacWeights project_into_M(const DacWeights& w, const DacClass& cls) {
    DacWeights out = w;
    for (int i = 1; i <= w.H(); ++i) {
        if (spectral_norm(w[i]) > cls.radius(i)) out[i] = project_spectral_ball(w[i], cls.radius(i));
    }
    return out;
}

/// The last 2H disturbances, zero-padded before time 0.
class DisturbanceHistory {
public:
    DisturbanceHistory(int H, Eigen::Index n, double w_bar = std::numeric_limits<double>::infinity())
        : capacity_(static_cast<std::size_t>(2 * H)), n_(n), w_bar_(w_bar) {
        if (H < 1) throw std::invalid_argument("history: H must be >= 1");
    }

    void push(const Vec& w) {
        require_dim(w.size(), n_, "history disturbance");
        if (inf_norm(w) > w_bar_ + 1e-9) throw DisturbanceError("history: disturbance outside the admissible box");
        buf_.push_front(w);
        if (buf_.size() > capacity_) buf_.pop_back();
    }

    /// w_{t-k} for k = 1..2H.
    Vec lag(int k) const {
        if (k < 1 || static_cast<std::size_t>(k) > capacity_) throw std::out_of_range("history lag out of range");
        const std::size_t idx = static_cast<std::size_t>(k - 1);
        return idx < buf_.size() ? buf_[idx] : Vec::Zero(n_);
    }

    /// [w_{t-1}; w_{t-2}; ...; w_{t-2H}].
    Vec stacked() const {
        Vec out(static_cast<Eigen::Index>(capacity_) * n_);
        for (std::size_t k = 0; k < capacity_; ++k) out.segment(static_cast<Eigen::Index>(k) * n_, n_) = lag(static_cast<int>(k + 1));
        return out;
    }

    int H() const { return static_cast<int>(capacity_ / 2); }
    Eigen::Index n() const { return n_; }

private:
    std::size_t capacity_;
    Eigen::Index n_;
    double w_bar_;
    std::deque<Vec> buf_;
};

/// Cached quantities for a certificate and memory size: powers of A_K and
/// the input-to-state maps A_K^{i-1} B.
class DacModel {
public:
    DacModel(const LtiSystem& sys, StabilityCertificate cert, int H)
        : DacModel(sys, std::move(cert), H, DacClass{}) {
        cls_ = default_class(cert_);
    }

    DacModel(const LtiSystem& sys, StabilityCertificate cert, int H, DacClass cls)
        : cert_(std::move(cert)), cls_(cls), H_(H), B_(sys.B) {
        if (H < 1) throw std::invalid_argument("DAC memory H must be >= 1");
        require_dim(cert_.A_K.rows(), sys.n(), "certificate dimension");
        powers_ = matrix_powers(cert_.A_K, static_cast<std::size_t>(2 * H + 1));
        for (int i = 1; i <= 2 * H; ++i) AkB_.push_back(powers_[static_cast<std::size_t>(i - 1)] * B_);
    }

    const StabilityCertificate& cert() const { return cert_; }
    const DacClass& cls() const { return cls_; }
    int H() const { return H_; }
    Eigen::Index n() const { return B_.rows(); }
    Eigen::Index m() const { return B_.cols(); }
    const Mat& K() const { return cert_.K; }

    /// A_K^k for k = 0..2H.
    const Mat& power(int k) const { return powers_.at(static_cast<std::size_t>(k)); }
    /// A_K^{i-1} B for i = 1..2H.
    const Mat& AkB(int i) const { return AkB_.at(static_cast<std::size_t>(i - 1)); }

    DacWeights zeros() const { return DacWeights::zeros(H_, m(), n()); }

    void check_shape(const DacWeights& w) const {
        if (w.H() != H_ || w.m() != m() || w.n() != n()) throw DimensionError("DacWeights do not match the model shape");
    }

private:
    StabilityCertificate cert_;
    DacClass cls_;
    int H_;
    Mat B_;
    std::vector<Mat> powers_;
    std::vector<Mat> AkB_;
};

/// Disturbance-to-state and disturbance-to-input maps for lags k = 1..2H.
struct ResponseMatrices {
    std::vector<Mat> psi_x;
    std::vector<Mat> psi_u;

    int lags() const { return static_cast<int>(psi_x.size()); }
    const Mat& x(int k) const { return psi_x.at(static_cast<std::size_t>(k - 1)); }
    const Mat& u(int k) const { return psi_u.at(static_cast<std::size_t>(k - 1)); }

    Mat h_x() const { return concat(psi_x); }
    Mat h_u() const { return concat(psi_u); }

private:
    static Mat concat(const std::vector<Mat>& ps) {
        Mat h(ps.front().rows(), ps.front().cols() * static_cast<Eigen::Index>(ps.size()));
        for (std::size_t k = 0; k < ps.size(); ++k) h.middleCols(static_cast<Eigen::Index>(k) * ps[k].cols(), ps[k].cols()) = ps[k];
        return h;
    }
};

class DecaySetError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Response matrices without the decay-set precondition.
inline ResponseMatrices response_matrices_unchecked(const DacModel& model, const DacWeights& w) {
    model.check_shape(w);
    const int H = model.H();
    ResponseMatrices r;
    for (int k = 1; k <= 2 * H; ++k) {
        Mat px = k <= H ? model.power(k - 1) : Mat::Zero(model.n(), model.n());
        for (int i = std::max(1, k - H); i <= std::min(H, k - 1); ++i) px += model.AkB(i) * w[k - i];
        Mat pu = -model.K() * px;
        if (k <= H) pu += w[k];
        r.psi_x.push_back(std::move(px));
        r.psi_u.push_back(std::move(pu));
    }
    return r;
}

inline ResponseMatrices response_matrices(const DacModel& model, const DacWeights& w) {
    if (!in_decay_set(w, model.cls())) throw DecaySetError("response_matrices: weights outside the decay set");
    return response_matrices_unchecked(model, w);
}

/// (x_tilde, u_tilde) = sum_k (psi_x_k, psi_u_k) w_{t-k}.
inline std::pair<Vec, Vec> surrogate(const ResponseMatrices& r, const DisturbanceHistory& hist) {
    if (hist.H() * 2 != r.lags()) throw DimensionError("surrogate: history length differs from 2H");
    Vec x = Vec::Zero(r.x(1).rows());
    Vec u = Vec::Zero(r.u(1).rows());
    for (int k = 1; k <= r.lags(); ++k) {
        const Vec w = hist.lag(k);
        x += r.x(k) * w;
        u += r.u(k) * w;
    }
    return {x, u};
}

inline Vec control_input(const DacModel& model, const DacWeights& w, const Vec& x, const DisturbanceHistory& hist) {
    model.check_shape(w);
    require_dim(x.size(), model.n(), "control_input state");
    Vec u = -model.K() * x;
    for (int i = 1; i <= w.H(); ++i) u += w[i] * hist.lag(i);
    return u;
}

/// Gradient of sum_k <Sx_k, psi_x_k(M)> + <Su_k, psi_u_k(M)> with respect to M.
/// Sx_k is n x n and Su_k is m x n, k = 1..2H.
inline DacWeights adjoint(const DacModel& model, const std::vector<Mat>& Sx, const std::vector<Mat>& Su) {
    const int H = model.H();
    if (Sx.size() != static_cast<std::size_t>(2 * H) || Su.size() != Sx.size()) throw DimensionError("adjoint: expected 2H sensitivities");
    DacWeights g = model.zeros();
    for (int j = 1; j <= H; ++j) {
        Mat gj = Su[static_cast<std::size_t>(j - 1)];
        for (int k = j + 1; k <= j + H; ++k) {
            const std::size_t kk = static_cast<std::size_t>(k - 1);
            gj += model.AkB(k - j).transpose() * (Sx[kk] - model.K().transpose() * Su[kk]);
        }
        g[j] = std::move(gj);
    }
    return g;
}

/// Lifts u = -K' x into weights M[i] = (K - K') (A - B K')^{i-1}.
inline DacWeights dac_from_linear(const DacModel& model, const StabilityCertificate& prime) {
    require_dim(prime.K.rows(), model.m(), "lifted gain rows");
    require_dim(prime.K.cols(), model.n(), "lifted gain cols");
    DacWeights w = model.zeros();
    const Mat D = model.K() - prime.K;
    Mat P = Mat::Identity(model.n(), model.n());
    for (int i = 1; i <= model.H(); ++i) {
        w[i] = D * P;
        P = prime.A_K * P;
    }
    if (!in_decay_set(w, model.cls())) {
        throw DecaySetError("dac_from_linear: lifted weights leave the decay set; the certificates are inconsistent");
    }
    return w;
}

}  // namespace ogdbzc
