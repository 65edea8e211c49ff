#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "aqse/error.hpp"
#include "aqse/model.hpp"
#include "aqse/povm.hpp"

namespace aqse {

struct FisherMatrix {
    Mat2 j = Mat2::Zero();
    int skipped = 0;  // outcomes dropped for vanishing probability and derivative
};

inline constexpr double kOutcomeProbabilityFloor = 1e-12;
inline constexpr double kOutcomeDerivativeFloor = 1e-9;

enum class FisherStatus { Ok, SingularOutcome };

namespace detail {

/// Accumulates one outcome; returns false for a near-zero probability that
/// still carries a derivative (unbounded information).
inline bool accumulate_outcome(double p, double d1, double d2, FisherMatrix& out) {
    if (p < kOutcomeProbabilityFloor) {
        if (std::abs(d1) < kOutcomeDerivativeFloor && std::abs(d2) < kOutcomeDerivativeFloor) {
            ++out.skipped;
            return true;
        }
        return false;
    }
    out.j(0, 0) += d1 * d1 / p;
    out.j(0, 1) += d1 * d2 / p;
    out.j(1, 1) += d2 * d2 / p;
    return true;
}

inline void check_same_frame(const DensityRep& rep, const RankOnePovm& povm) {
    const double s = rep.frame.theta.separation;
    if (std::abs(povm.anchor.separation - s) > 1e-12 * std::max(1.0, s)) {
        throw Error(ErrorKind::InvalidArgument, "POVM anchored at separation " +
                                                    std::to_string(povm.anchor.separation) +
                                                    " used with state at separation " + std::to_string(s));
    }
}

}  // namespace detail

/// Non-throwing core used by the optimizer's objective.
inline FisherStatus try_fisher_info(const DensityRep& rep, const OutcomeMatrix& vectors, FisherMatrix& out) {
    out = FisherMatrix{};
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
        const Vec4 a = vectors.row(i).transpose();
        const double p = a.dot(rep.rho * a);
        const double d1 = a.dot(rep.drho[0] * a);
        const double d2 = a.dot(rep.drho[1] * a);
        if (!detail::accumulate_outcome(p, d1, d2, out)) return FisherStatus::SingularOutcome;
    }
    out.j(1, 0) = out.j(0, 1);
    return FisherStatus::Ok;
}

/// Classical Fisher information of a rank-one POVM anchored at the state's
/// own parameter.  The complement outcome carries neither probability nor
/// derivative there and contributes nothing.
inline FisherMatrix fisher_info(const DensityRep& rep, const RankOnePovm& povm) {
    detail::check_same_frame(rep, povm);
    FisherMatrix out;
    if (try_fisher_info(rep, povm.vectors, out) == FisherStatus::SingularOutcome) {
        throw Error(ErrorKind::SingularOutcome, "outcome with vanishing probability but non-zero derivative");
    }
    return out;
}

/// General POVM elements given as frame-coordinate matrices.
inline FisherMatrix fisher_from_elements(const DensityRep& rep, std::span<const Mat4> elements) {
    FisherMatrix out;
    for (const Mat4& e : elements) {
        const double p = (rep.rho * e).trace();
        const double d1 = (rep.drho[0] * e).trace();
        const double d2 = (rep.drho[1] * e).trace();
        if (!detail::accumulate_outcome(p, d1, d2, out)) {
            throw Error(ErrorKind::SingularOutcome, "outcome with vanishing probability but non-zero derivative");
        }
    }
    out.j(1, 0) = out.j(0, 1);
    return out;
}

inline constexpr double kMaxFisherCondition = 1e12;

inline bool invertible(const Mat2& j) {
    Eigen::SelfAdjointEigenSolver<Mat2> eig(j);
    const double lo = eig.eigenvalues()(0);
    const double hi = eig.eigenvalues()(1);
    return lo > 0.0 && std::isfinite(hi) && hi / lo < kMaxFisherCondition;
}

/// tr(G J^{-1})
inline double weighted_trace_inv(const FisherMatrix& fisher, const Mat2& weight) {
    if (!invertible(fisher.j)) {
        throw Error(ErrorKind::SingularInformation, "Fisher information matrix is not invertible");
    }
    return (weight * fisher.j.inverse()).trace();
}

/// Direct imaging: the photon position x is recorded, with density
/// p(x) = (phi(x - x1) + phi(x - x2)) / 2 and phi the N(0, sigma^2) density.
inline FisherMatrix direct_imaging_fisher(const PsfModel& model, const Theta& theta) {
    theta.validate();
    const double s2 = model.sigma * model.sigma;
    const double norm = 1.0 / std::sqrt(2.0 * M_PI * s2);
    const double x1 = theta.x1();
    const double x2 = theta.x2();

    // d p / d x_k = (x - x_k) / sigma^2 * phi(x - x_k) / 2
    auto scores = [&](double x, double& p, double& dc, double& ds) {
        const double u1 = x - x1;
        const double u2 = x - x2;
        const double f1 = norm * std::exp(-u1 * u1 / (2.0 * s2));
        const double f2 = norm * std::exp(-u2 * u2 / (2.0 * s2));
        const double dx1 = 0.5 * u1 / s2 * f1;
        const double dx2 = 0.5 * u2 / s2 * f2;
        p = 0.5 * (f1 + f2);
        dc = dx1 + dx2;
        ds = 0.5 * (dx2 - dx1);
    };

    const double lo = theta.centroid - 10.0 * model.sigma - theta.separation;
    const double hi = theta.centroid + 10.0 * model.sigma + theta.separation;
    using Integrator = boost::math::quadrature::gauss_kronrod<double, 31>;

    auto integrate = [&](int a, int b) {
        auto f = [&](double x) {
            double p, dc, ds;
            scores(x, p, dc, ds);
            if (p <= 0.0) return 0.0;
            const double da = a == 0 ? dc : ds;
            const double db = b == 0 ? dc : ds;
            return da * db / p;
        };
        double error = 0.0;
        const double value = Integrator::integrate(f, lo, hi, 20, 1e-13, &error);
        if (!std::isfinite(value) || error > 1e-10) {
            throw Error(ErrorKind::QuadratureFailure,
                        "direct-imaging Fisher quadrature error estimate " + std::to_string(error));
        }
        return value;
    };

    FisherMatrix out;
    out.j(0, 0) = integrate(0, 0);
    out.j(0, 1) = out.j(1, 0) = integrate(0, 1);
    out.j(1, 1) = integrate(1, 1);
    return out;
}

/// Hermite-Gauss mode counting with the mode origin at `centroid_ref`.
struct SpadeDistribution {
    std::vector<double> pmf;  // q = 0 .. q_max
    double tail = 0.0;        // 1 - sum(pmf)
};

inline constexpr int kDefaultSpadeQmax = 64;
inline constexpr double kSpadeTailTolerance = 1e-12;

namespace detail {

struct SpadeTerms {
    double q1, q2;
    Vec2 dq1, dq2;  // d Q_k / d theta
};

inline SpadeTerms spade_terms(const PsfModel& model, const Theta& theta, double centroid_ref) {
    const double s2 = model.sigma * model.sigma;
    const double u1 = centroid_ref - theta.centroid + 0.5 * theta.separation;
    const double u2 = centroid_ref - theta.centroid - 0.5 * theta.separation;
    SpadeTerms t;
    t.q1 = u1 * u1 / (4.0 * s2);
    t.q2 = u2 * u2 / (4.0 * s2);
    t.dq1 = Vec2(-2.0 * u1, u1) / (4.0 * s2);
    t.dq2 = Vec2(-2.0 * u2, -u2) / (4.0 * s2);
    return t;
}

inline std::vector<double> poisson_pmf(double mean, int q_max) {
    std::vector<double> out(q_max + 1);
    out[0] = std::exp(-mean);
    for (int q = 1; q <= q_max; ++q) out[q] = out[q - 1] * mean / q;
    return out;
}

}  // namespace detail

inline SpadeDistribution hg_spade_probs(const PsfModel& model, const Theta& theta, double centroid_ref,
                                        int q_max = kDefaultSpadeQmax) {
    theta.validate();
    if (q_max < 1) throw Error(ErrorKind::InvalidArgument, "q_max must be at least 1");
    const auto t = detail::spade_terms(model, theta, centroid_ref);
    const auto p1 = detail::poisson_pmf(t.q1, q_max);
    const auto p2 = detail::poisson_pmf(t.q2, q_max);
    SpadeDistribution out;
    out.pmf.resize(q_max + 1);
    double total = 0.0;
    for (int q = 0; q <= q_max; ++q) {
        out.pmf[q] = 0.5 * (p1[q] + p2[q]);
        total += out.pmf[q];
    }
    out.tail = std::max(0.0, 1.0 - total);
    return out;
}

/// Full 2x2 Fisher information of the truncated SPADE distribution.
inline FisherMatrix hg_spade_fisher(const PsfModel& model, const Theta& theta, double centroid_ref,
                                    int q_max = kDefaultSpadeQmax) {
    const SpadeDistribution dist = hg_spade_probs(model, theta, centroid_ref, q_max);
    if (dist.tail > kSpadeTailTolerance) {
        throw Error(ErrorKind::TruncationTooCoarse,
                    "tail mass " + std::to_string(dist.tail) + " beyond q_max=" + std::to_string(q_max));
    }
    const auto t = detail::spade_terms(model, theta, centroid_ref);
    const auto p1 = detail::poisson_pmf(t.q1, q_max);
    const auto p2 = detail::poisson_pmf(t.q2, q_max);
    FisherMatrix out;
    for (int q = 0; q <= q_max; ++q) {
        const double p = dist.pmf[q];
        if (p <= 1e-300) continue;
        // d pi(q; Q) / dQ = pi(q-1; Q) - pi(q; Q)
        const double g1 = (q > 0 ? p1[q - 1] : 0.0) - p1[q];
        const double g2 = (q > 0 ? p2[q - 1] : 0.0) - p2[q];
        const Vec2 dp = 0.5 * (g1 * t.dq1 + g2 * t.dq2);
        out.j += dp * dp.transpose() / p;
    }
    return out;
}

inline double hg_spade_fisher_sep(const PsfModel& model, const Theta& theta, double centroid_ref,
                                  int q_max = kDefaultSpadeQmax) {
    return hg_spade_fisher(model, theta, centroid_ref, q_max).j(1, 1);
}

}  // namespace aqse
