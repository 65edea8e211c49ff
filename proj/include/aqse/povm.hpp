#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aqse/error.hpp"
#include "aqse/model.hpp"

namespace aqse {

/// Outcome vectors as rows; each row is a_i in frame coordinates.
using OutcomeMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

inline constexpr int kFrameDim = 4;
inline constexpr int kMinOutcomes = 4;
inline constexpr int kMaxOutcomes = 16;

/// Bumped whenever the angle-to-plane assignment below changes; stored in
/// measurement-cache files.
inline constexpr int kPlaneOrderingVersion = 1;

inline int givens_angle_count(int n, int q = kFrameDim) { return n * q - q * (q + 1) / 2; }

struct GivensAngles {
    int n = kMinOutcomes;
    int q = kFrameDim;
    std::vector<double> angles;

    GivensAngles() = default;
    GivensAngles(int outcomes, std::vector<double> values) : n(outcomes), angles(std::move(values)) {}

    static GivensAngles zeros(int outcomes) {
        return GivensAngles(outcomes, std::vector<double>(givens_angle_count(outcomes), 0.0));
    }
};

/// Rotation planes in elimination order: column by column, and within a
/// column the rows below the diagonal in ascending order.
inline std::vector<std::pair<int, int>> givens_planes(int n, int q = kFrameDim) {
    std::vector<std::pair<int, int>> planes;
    planes.reserve(givens_angle_count(n, q));
    for (int col = 0; col < q; ++col) {
        for (int row = col + 1; row < n; ++row) planes.emplace_back(col, row);
    }
    return planes;
}

/// n-valued real rank-one POVM on the support frame anchored at `anchor`.
/// Outcome i is |a_i><a_i|; the implicit complement outcome is the projector
/// onto the orthogonal complement of the support subspace.
struct RankOnePovm {
    Theta anchor;
    OutcomeMatrix vectors;
    std::vector<double> angles;  // empty when built directly from vectors

    int n() const { return static_cast<int>(vectors.rows()); }
};

namespace detail {

/// Writes V = G(p_1, phi_1) ... G(p_m, phi_m) [I_q; 0] into `v` (n x 4).
inline void fill_isometry(std::span<const double> angles, std::span<const std::pair<int, int>> planes,
                          OutcomeMatrix& v) {
    v.setZero();
    for (int i = 0; i < kFrameDim; ++i) v(i, i) = 1.0;
    for (std::size_t k = planes.size(); k-- > 0;) {
        const auto [i, j] = planes[k];
        const double c = std::cos(angles[k]);
        const double s = std::sin(angles[k]);
        for (int col = 0; col < kFrameDim; ++col) {
            const double vi = v(i, col);
            const double vj = v(j, col);
            v(i, col) = c * vi - s * vj;
            v(j, col) = s * vi + c * vj;
        }
    }
}

}  // namespace detail

inline RankOnePovm povm_from_angles(const GivensAngles& p, const Theta& anchor = {}) {
    if (p.q != kFrameDim) {
        throw Error(ErrorKind::BadArity, "frame dimension must be 4, got " + std::to_string(p.q));
    }
    if (p.n < kMinOutcomes || p.n > kMaxOutcomes) {
        throw Error(ErrorKind::BadArity, "outcome count must be in [4, 16], got " + std::to_string(p.n));
    }
    const int m = givens_angle_count(p.n, p.q);
    if (static_cast<int>(p.angles.size()) != m) {
        throw Error(ErrorKind::BadArity, "expected " + std::to_string(m) + " angles for n=" + std::to_string(p.n) +
                                             ", got " + std::to_string(p.angles.size()));
    }
    OutcomeMatrix v(p.n, kFrameDim);
    const auto planes = givens_planes(p.n, p.q);
    detail::fill_isometry(p.angles, planes, v);
    return RankOnePovm{anchor, std::move(v), p.angles};
}

/// Frobenius norm of  sum_i a_i a_i^T - I.
inline double validate(const RankOnePovm& povm) {
    const Mat4 sum = povm.vectors.transpose() * povm.vectors;
    return (sum - Mat4::Identity()).norm();
}

/// Moves the measurement along the image axis.  The frame depends only on
/// the separation, so the frame coordinates are unchanged.
inline RankOnePovm translate(const RankOnePovm& povm, double new_centroid) {
    RankOnePovm out = povm;
    out.anchor.centroid = new_centroid;
    return out;
}

}  // namespace aqse
