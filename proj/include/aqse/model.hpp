#pragma once

// Single-photon model of two incoherent point sources imaged through a
// Gaussian point-spread function.  The state and its two parameter
// derivatives live in the four-dimensional span of the shifted PSFs and
// their first derivatives; everything here is expressed in an orthonormal
// frame of that span built from closed-form overlap integrals.

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "aqse/error.hpp"

namespace aqse {

using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;

/// Gaussian PSF  psi(x) = (2 pi sigma^2)^(-1/4) exp(-x^2 / (4 sigma^2)).
struct PsfModel {
    double sigma = 1.0;

    explicit PsfModel(double width = 1.0) : sigma(width) {
        if (!(width > 0.0) || !std::isfinite(width)) {
            throw Error(ErrorKind::InvalidArgument, "PSF width must be positive, got " + std::to_string(width));
        }
    }

    double amplitude(double x) const {
        return std::pow(2.0 * M_PI * sigma * sigma, -0.25) * std::exp(-x * x / (4.0 * sigma * sigma));
    }
    double amplitude_derivative(double x) const { return -x / (2.0 * sigma * sigma) * amplitude(x); }
};

/// Centroid and separation of the two sources.
struct Theta {
    double centroid = 0.0;
    double separation = 1.0;

    double x1() const { return centroid - 0.5 * separation; }
    double x2() const { return centroid + 0.5 * separation; }

    void validate() const {
        if (!(separation > 0.0) || !std::isfinite(separation) || !std::isfinite(centroid)) {
            throw Error(ErrorKind::InvalidArgument,
                        "separation must be positive and finite, got " + std::to_string(separation));
        }
    }

    friend bool operator==(const Theta&, const Theta&) = default;
};

/// One of the four spanning functions: psi^(order)(x - center).
struct Primitive {
    double center;
    int order;  // 0 or 1
};

inline std::array<Primitive, 4> primitives(const Theta& theta) {
    return {{{theta.x1(), 0}, {theta.x2(), 0}, {theta.x1(), 1}, {theta.x2(), 1}}};
}

/// Closed-form  int psi^(oa)(x - a) psi^(ob)(x - b) dx  for orders 0/1, as a
/// function of the centre offset d = b - a.
template <typename Real>
Real primitive_overlap_offset(Real sigma, Real d, int order_a, int order_b) {
    using std::exp;
    const Real s2 = sigma * sigma;
    const Real base = exp(-d * d / (8 * s2));
    if (order_a == 0 && order_b == 0) return base;
    if (order_a == 0 && order_b == 1) return d / (4 * s2) * base;
    if (order_a == 1 && order_b == 0) return -d / (4 * s2) * base;
    return (Real(1) / (4 * s2) - d * d / (16 * s2 * s2)) * base;
}

inline double primitive_overlap(const PsfModel& model, Primitive a, Primitive b) {
    return primitive_overlap_offset(model.sigma, b.center - a.center, a.order, b.order);
}

struct GramMatrix {
    Mat4 m;
};

namespace detail {

using Quad = boost::multiprecision::cpp_bin_float_quad;
using QuadMat4 = std::array<std::array<Quad, 4>, 4>;

inline QuadMat4 quad_product(const QuadMat4& a, const QuadMat4& b, bool transpose_b = false) {
    QuadMat4 out{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            Quad acc = 0;
            for (int k = 0; k < 4; ++k) acc += a[i][k] * (transpose_b ? b[j][k] : b[k][j]);
            out[i][j] = acc;
        }
    }
    return out;
}

inline Mat4 to_double(const QuadMat4& q) {
    Mat4 out;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out(i, j) = static_cast<double>(q[i][j]);
    return out;
}

/// Primitive Gram from centre offsets only (centres at -s/2, +s/2), so the
/// result is exactly translation invariant.
template <typename Real>
std::array<std::array<Real, 4>, 4> relative_gram(Real sigma, Real separation) {
    const Real centers[4] = {-separation / 2, separation / 2, -separation / 2, separation / 2};
    const int orders[4] = {0, 0, 1, 1};
    std::array<std::array<Real, 4>, 4> g{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            g[i][j] = primitive_overlap_offset<Real>(sigma, centers[j] - centers[i], orders[i], orders[j]);
    return g;
}

/// Confluent divided differences of c -> psi(x - c) on the nodes
/// (x1, x1, x2, x2), written over the primitives.  Unlike the primitives they
/// stay linearly independent as the separation shrinks.
template <typename Real>
std::array<std::array<Real, 4>, 4> confluent_transform(Real s) {
    const Real s2 = s * s;
    const Real s3 = s2 * s;
    return {{{1, 0, 0, 0},
             {0, 0, -1, 0},
             {-1 / s2, 1 / s2, 1 / s, 0},
             {2 / s3, -2 / s3, -1 / s2, -1 / s2}}};
}

}  // namespace detail

inline GramMatrix gram_matrix(const PsfModel& model, const Theta& theta) {
    theta.validate();
    const auto g = primitives(theta);
    GramMatrix gram;
    for (int i = 0; i < 4; ++i) {
        for (int j = i; j < 4; ++j) {
            gram.m(i, j) = primitive_overlap(model, g[i], g[j]);
            gram.m(j, i) = gram.m(i, j);
        }
    }
    return gram;
}

/// Orthonormal frame of the support subspace.
///
/// The frame is built over a conditioned spanning set: the confluent divided
/// differences of the primitives, each normalised to unit length.  `basis`
/// holds that set over the primitives, `gram` its Gram matrix and `coeffs`
/// the orthonormal vectors over it, so coeffs * gram * coeffs^T = I.  Both
/// `gram` and `projection` (the overlaps <b_i|g_k>) are evaluated in quad
/// precision and rounded, which keeps them accurate down to tiny separations.
struct SubspaceFrame {
    Theta theta;
    Mat4 basis;
    Mat4 gram;
    Mat4 projection;
    Mat4 coeffs;

    int dimension() const { return 4; }

    /// Orthonormal vectors written directly over the primitives.  Badly
    /// conditioned for small separations; for reference only.
    Mat4 primitive_coeffs() const { return coeffs * basis; }

    /// <e_a|g_k>
    Mat4 primitive_overlaps() const { return coeffs * projection; }
};

inline constexpr double kGramFloor = 1e-12;

/// Below this separation (in units of sigma) the divided differences lose
/// all significance even in quad precision.
inline constexpr double kMinRelativeSeparation = 1e-5;

inline SubspaceFrame subspace_frame(const PsfModel& model, const Theta& theta) {
    theta.validate();
    if (theta.separation < kMinRelativeSeparation * model.sigma) {
        throw Error(ErrorKind::DegenerateSubspace,
                    "separation " + std::to_string(theta.separation) + " too small to resolve the support subspace");
    }
    using detail::Quad;
    const Quad sigma = model.sigma;
    const Quad sep = theta.separation;
    const auto g = detail::relative_gram<Quad>(sigma, sep);
    auto t = detail::confluent_transform<Quad>(sep);

    // Unit-normalise each conditioned vector.
    const auto raw = detail::quad_product(detail::quad_product(t, g), t, true);
    for (int i = 0; i < 4; ++i) {
        const Quad scale = 1 / boost::multiprecision::sqrt(raw[i][i]);
        for (int k = 0; k < 4; ++k) t[i][k] *= scale;
    }
    const auto proj = detail::quad_product(t, g);
    const auto gram_b = detail::quad_product(proj, t, true);

    SubspaceFrame frame{theta, detail::to_double(t), detail::to_double(gram_b), detail::to_double(proj), Mat4::Zero()};
    frame.gram = 0.5 * (frame.gram + frame.gram.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Mat4> eig(frame.gram);
    const Vec4 lambda = eig.eigenvalues();
    if (!(lambda.minCoeff() >= kGramFloor)) {
        throw Error(ErrorKind::DegenerateSubspace,
                    "smallest conditioned Gram eigenvalue " + std::to_string(lambda.minCoeff()) +
                        " at separation " + std::to_string(theta.separation));
    }
    const Mat4& u = eig.eigenvectors();
    frame.coeffs = u * lambda.cwiseInverse().cwiseSqrt().asDiagonal() * u.transpose();
    return frame;
}

/// rho and d rho / d theta^j in frame coordinates.
struct DensityRep {
    SubspaceFrame frame;
    Mat4 rho;
    std::array<Mat4, 2> drho;
};

inline DensityRep density_rep(const PsfModel& model, const Theta& theta) {
    SubspaceFrame frame = subspace_frame(model, theta);

    // Operators as coefficient matrices over the primitives (|g_k><g_l|).
    Mat4 r = Mat4::Zero();
    r(0, 0) = 0.5;
    r(1, 1) = 0.5;
    // d|psi_j>/dx_j = -|psi_j'>, so d rho/dx_1 = -(|g3><g1| + |g1><g3|)/2.
    Mat4 dx1 = Mat4::Zero();
    dx1(2, 0) = dx1(0, 2) = -0.5;
    Mat4 dx2 = Mat4::Zero();
    dx2(3, 1) = dx2(1, 3) = -0.5;
    const Mat4 dcentroid = dx1 + dx2;
    const Mat4 dseparation = 0.5 * (dx2 - dx1);

    const Mat4 proj = frame.primitive_overlaps();
    auto to_frame = [&](const Mat4& op) -> Mat4 {
        Mat4 out = proj * op * proj.transpose();
        return 0.5 * (out + out.transpose());
    };
    DensityRep rep{frame, to_frame(r), {to_frame(dcentroid), to_frame(dseparation)}};
    return rep;
}

struct SldPair {
    std::array<Mat4, 2> sld;
    Mat2 qfi;
};

/// SLDs solved in the eigenbasis of rho; the kernel-kernel block is set to 0.
inline SldPair sld_and_qfi(const DensityRep& rep) {
    Eigen::SelfAdjointEigenSolver<Mat4> eig(rep.rho);
    const Vec4 lambda = eig.eigenvalues();
    const Mat4& u = eig.eigenvectors();
    if (lambda.maxCoeff() <= 1e-10) {
        throw Error(ErrorKind::SingularState, "density matrix has no support");
    }

    SldPair out;
    for (int j = 0; j < 2; ++j) {
        const Mat4 d = u.transpose() * rep.drho[j] * u;
        Mat4 l = Mat4::Zero();
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) {
                const double denom = lambda(a) + lambda(b);
                if (denom > 1e-10) {
                    l(a, b) = 2.0 * d(a, b) / denom;
                } else if (std::abs(d(a, b)) > 1e-8) {
                    throw Error(ErrorKind::SingularState, "derivative has weight outside the support of rho");
                }
            }
        }
        out.sld[j] = u * l * u.transpose();
    }
    for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 2; ++k) {
            const Mat4 sym = out.sld[j] * out.sld[k] + out.sld[k] * out.sld[j];
            out.qfi(j, k) = 0.5 * (rep.rho * sym).trace();
        }
    }
    out.qfi = 0.5 * (out.qfi + out.qfi.transpose()).eval();
    return out;
}

/// K = diag(1/sigma^2 - s^2/(4 sigma^4) exp(-s^2/(4 sigma^2)), 1/(4 sigma^2)).
inline Mat2 qfi_analytic(const PsfModel& model, const Theta& theta) {
    theta.validate();
    const double s2 = model.sigma * model.sigma;
    const double sep2 = theta.separation * theta.separation;
    Mat2 k = Mat2::Zero();
    k(0, 0) = 1.0 / s2 - sep2 / (4.0 * s2 * s2) * std::exp(-sep2 / (4.0 * s2));
    k(1, 1) = 1.0 / (4.0 * s2);
    return k;
}

}  // namespace aqse
