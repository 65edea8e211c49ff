#pragma once

// Post-processing of ensemble records.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aqse/adaptive.hpp"
#include "aqse/error.hpp"
#include "aqse/model.hpp"
#include "aqse/optimizer.hpp"

namespace aqse {

/// Unbiased sample covariance (1 / (m - 1)), two-pass.
inline Mat2 sample_covariance(std::span<const Theta> estimates) {
    const std::size_t m = estimates.size();
    if (m < 2) throw Error(ErrorKind::TooFewSamples, "sample covariance needs at least 2 samples");
    Vec2 mean = Vec2::Zero();
    for (const Theta& t : estimates) mean += Vec2(t.centroid, t.separation);
    mean /= static_cast<double>(m);
    Mat2 cov = Mat2::Zero();
    for (const Theta& t : estimates) {
        const Vec2 d = Vec2(t.centroid, t.separation) - mean;
        cov += d * d.transpose();
    }
    return cov / static_cast<double>(m - 1);
}

inline Theta sample_mean(std::span<const Theta> estimates) {
    if (estimates.empty()) throw Error(ErrorKind::TooFewSamples, "mean of an empty sample");
    double c = 0.0, s = 0.0;
    for (const Theta& t : estimates) {
        c += t.centroid;
        s += t.separation;
    }
    const auto m = static_cast<double>(estimates.size());
    return {c / m, s / m};
}

struct CovariancePoint {
    long n = 0;
    Theta mean;
    Mat2 cov = Mat2::Zero();
    double weighted_trace = 0.0;  // n tr(K(mean) cov)
    double limit = 0.0;
};

/// Optimised value of the cache entry nearest theta2.
inline double theoretical_limit(const MeasurementCache& cache, double theta2) {
    return cache.entries[cache.nearest(theta2)].result.value;
}

/// Estimates of every run at checkpoint slot k.
inline std::vector<Theta> checkpoint_sample(const EnsembleRecord& ensemble, std::size_t k) {
    std::vector<Theta> out;
    out.reserve(ensemble.runs.size());
    for (const RunRecord& r : ensemble.runs) out.push_back(r.estimates.at(k));
    return out;
}

inline std::vector<CovariancePoint> weighted_trace_series(const EnsembleRecord& ensemble, const PsfModel& model,
                                                          double limit) {
    if (ensemble.runs.size() < 2) throw Error(ErrorKind::TooFewSamples, "ensemble needs at least 2 runs");
    const std::vector<long>& checkpoints = ensemble.runs.front().checkpoints;
    for (const RunRecord& r : ensemble.runs) {
        if (r.checkpoints != checkpoints || r.estimates.size() != checkpoints.size()) {
            throw Error(ErrorKind::InvalidArgument, "runs have inconsistent checkpoints");
        }
    }
    std::vector<CovariancePoint> out;
    out.reserve(checkpoints.size());
    for (std::size_t k = 0; k < checkpoints.size(); ++k) {
        const std::vector<Theta> sample = checkpoint_sample(ensemble, k);
        CovariancePoint p;
        p.n = checkpoints[k];
        p.mean = sample_mean(sample);
        p.cov = sample_covariance(sample);
        p.weighted_trace = static_cast<double>(p.n) * (qfi_analytic(model, p.mean) * p.cov).trace();
        p.limit = limit;
        out.push_back(p);
    }
    return out;
}

/// First checkpoint with w_n <= (1 + band) limit, or |w_n - limit| <= band
/// limit when two_sided.
inline long convergence_time(std::span<const CovariancePoint> series, double limit, double band = 0.05,
                             bool two_sided = false) {
    if (series.empty()) throw Error(ErrorKind::InvalidArgument, "empty covariance series");
    for (const CovariancePoint& p : series) {
        const bool inside = two_sided ? std::abs(p.weighted_trace - limit) <= band * limit
                                      : p.weighted_trace <= (1.0 + band) * limit;
        if (inside) return p.n;
    }
    throw Error(ErrorKind::NotReached, "weighted trace never came within " + std::to_string(band) + " of the limit");
}

// ---------------------------------------------------------------------------
// Scaling fit  T = c / x^e + t0

struct ScalingPoint {
    double theta2;
    double time;
};

struct ScalingFit {
    std::vector<ScalingPoint> points;
    double c = 0.0;
    double e = 0.0;
    double t0 = 0.0;
    double residual = 0.0;  // Euclidean norm of T - fit

    double operator()(double theta2) const { return c / std::pow(theta2, e) + t0; }
};

inline ScalingFit fit_scaling(std::span<const ScalingPoint> points) {
    if (points.size() < 4) throw Error(ErrorKind::InvalidArgument, "scaling fit needs at least 4 points");
    double t_max = 0.0;
    for (const ScalingPoint& p : points) {
        if (!(p.theta2 > 0.0) || !std::isfinite(p.time)) {
            throw Error(ErrorKind::InvalidArgument, "scaling points need positive separation and finite time");
        }
        t_max = std::max(t_max, std::abs(p.time));
    }
    // Residuals are measured in units of the largest time so the search
    // tolerance does not depend on the data scale.
    const double unit = t_max > 0.0 ? t_max : 1.0;
    auto sse = [&](std::span<const double> x) {
        const double e = x[1];
        const double t0 = x[2] * unit;
        if (!(e > 0.0) || t0 < 0.0) return kObjectivePenalty;
        const double c = std::exp(x[0]) * unit;
        double s = 0.0;
        for (const ScalingPoint& p : points) {
            const double r = (c / std::pow(p.theta2, e) + t0 - p.time) / unit;
            s += r * r;
        }
        return std::isfinite(s) ? s : kObjectivePenalty;
    };

    OptimizeConfig cfg;
    cfg.local_tol = 1e-15;
    cfg.max_evals = 100000;
    SearchResult best;
    for (double log_c : {-8.0, -4.0, 0.0}) {
        for (double e : {0.5, 1.0, 2.0, 3.0}) {
            for (double t0 : {0.0, 0.1, 0.5}) {
                SearchResult r = local_search(sse, {log_c, e, t0}, cfg);
                // Polish: restart from the optimum with fresh directions.
                for (int k = 0; k < 3; ++k) r = local_search(sse, r.x, cfg);
                if (r.value < best.value) best = std::move(r);
            }
        }
    }
    if (!std::isfinite(best.value) || best.value >= kObjectivePenalty) {
        throw Error(ErrorKind::DegenerateFit, "no finite least-squares residual");
    }
    ScalingFit fit;
    fit.points.assign(points.begin(), points.end());
    fit.c = std::exp(best.x[0]) * unit;
    fit.e = best.x[1];
    fit.t0 = best.x[2] * unit;
    double s = 0.0;
    for (const ScalingPoint& p : points) {
        const double r = fit(p.theta2) - p.time;
        s += r * r;
    }
    fit.residual = std::sqrt(s);
    if (!std::isfinite(fit.residual)) throw Error(ErrorKind::DegenerateFit, "non-finite residual");
    return fit;
}

// ---------------------------------------------------------------------------
// Normality

/// Mardia's multivariate skewness and kurtosis for bivariate samples.
/// skewness_stat = m b1 / 6 against chi-square with 4 degrees of freedom;
/// kurtosis_stat = (b2 - 8) / sqrt(64 / m) against a standard normal.
struct NormalityDiagnostic {
    std::size_t samples = 0;
    double b1 = 0.0;
    double b2 = 0.0;
    double skewness_stat = 0.0;
    double skewness_p = 1.0;
    double kurtosis_stat = 0.0;
    double kurtosis_p = 1.0;
    const char* method = "mardia";
};

inline constexpr std::size_t kMinNormalitySamples = 50;

inline NormalityDiagnostic normality_diagnostic(std::span<const Theta> estimates) {
    const std::size_t m = estimates.size();
    if (m < kMinNormalitySamples) {
        throw Error(ErrorKind::TooFewSamples, "normality diagnostic needs at least 50 samples");
    }
    const Theta mean = sample_mean(estimates);
    std::vector<Vec2> z(m);
    Mat2 s = Mat2::Zero();
    for (std::size_t i = 0; i < m; ++i) {
        z[i] = Vec2(estimates[i].centroid - mean.centroid, estimates[i].separation - mean.separation);
        s += z[i] * z[i].transpose();
    }
    s /= static_cast<double>(m);
    if (!(s.determinant() > 0.0)) throw Error(ErrorKind::InvalidArgument, "sample covariance is singular");
    const Mat2 s_inv = s.inverse();
    std::vector<Vec2> w(m);
    for (std::size_t i = 0; i < m; ++i) w[i] = s_inv * z[i];

    double b1 = 0.0, b2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double dii = z[i].dot(w[i]);
        b2 += dii * dii;
        b1 += dii * dii * dii;
        for (std::size_t j = i + 1; j < m; ++j) {
            const double dij = z[i].dot(w[j]);
            b1 += 2.0 * dij * dij * dij;
        }
    }
    const auto md = static_cast<double>(m);
    NormalityDiagnostic out;
    out.samples = m;
    out.b1 = b1 / (md * md);
    out.b2 = b2 / md;
    out.skewness_stat = md * out.b1 / 6.0;
    out.skewness_p = std::exp(-0.5 * out.skewness_stat) * (1.0 + 0.5 * out.skewness_stat);
    out.kurtosis_stat = (out.b2 - 8.0) / std::sqrt(64.0 / md);
    out.kurtosis_p = std::erfc(std::abs(out.kurtosis_stat) / std::sqrt(2.0));
    return out;
}

// ---------------------------------------------------------------------------
// Histograms

struct BinSpec {
    double x_lo = -1.5, x_hi = 1.5;
    int nx = 60;
    double y_lo = 0.0, y_hi = 3.0;
    int ny = 60;

    void validate() const {
        if (nx < 1 || ny < 1 || !(x_hi > x_lo) || !(y_hi > y_lo)) {
            throw Error(ErrorKind::InvalidArgument, "histogram bins need positive counts and ordered bounds");
        }
    }
};

struct Histogram2d {
    BinSpec bins;
    std::vector<long> counts;  // row-major: counts[iy * nx + ix]

    long at(int ix, int iy) const { return counts[static_cast<std::size_t>(iy) * bins.nx + ix]; }
    long total() const {
        long t = 0;
        for (long c : counts) t += c;
        return t;
    }
};

/// x is the centroid and y the separation.  Samples outside the range land
/// in the edge bins.
inline Histogram2d histogram2d(std::span<const Theta> estimates, const BinSpec& bins) {
    bins.validate();
    Histogram2d h{bins, std::vector<long>(static_cast<std::size_t>(bins.nx) * bins.ny, 0)};
    auto index = [](double v, double lo, double hi, int n) {
        const int i = static_cast<int>(std::floor((v - lo) / (hi - lo) * n));
        return std::clamp(i, 0, n - 1);
    };
    for (const Theta& t : estimates) {
        const int ix = index(t.centroid, bins.x_lo, bins.x_hi, bins.nx);
        const int iy = index(t.separation, bins.y_lo, bins.y_hi, bins.ny);
        ++h.counts[static_cast<std::size_t>(iy) * bins.nx + ix];
    }
    return h;
}

}  // namespace aqse
