#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace ogdbzc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when operands disagree on dimension.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

inline double spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    if (m.rows() == 1 || m.cols() == 1) return m.norm();
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

inline double spectral_radius(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Mat> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Row-wise L1 norms, i.e. the worst-case |(h w)_i| over the unit L-infinity ball.
inline Vec row_l1_norms(const Mat& m) { return m.cwiseAbs().rowwise().sum(); }

/// Dual norm of the L-infinity norm is the L1 norm, and L2 is self-dual.
enum class NormTag { LInf, L2 };

inline double dual_norm(const Vec& y, NormTag norm) {
    return norm == NormTag::LInf ? y.lpNorm<1>() : y.norm();
}

inline const char* to_string(NormTag norm) { return norm == NormTag::LInf ? "linf" : "l2"; }

}  // namespace ogdbzc
