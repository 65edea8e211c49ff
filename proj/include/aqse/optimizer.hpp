#pragma once

// Search for the measurement minimising tr(G J^{-1}) over Givens-parametrised
// rank-one POVMs: Powell's direction-set descent with Brent line
// minimisation, wrapped in zero-temperature basin hopping and seeded random
// restarts.  Optimal measurements are cached on a separation grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aqse/error.hpp"
#include "aqse/fisher.hpp"
#include "aqse/model.hpp"
#include "aqse/parallel.hpp"
#include "aqse/povm.hpp"
#include "aqse/random.hpp"

namespace aqse {

struct OptimizeConfig {
    int n_outcomes = 4;
    int restarts = 8;
    int hop_count = 20;
    double hop_scale = 0.3;  // radians
    double local_tol = 1e-10;
    long max_evals = 200000;  // per local search
    std::uint64_t seed = 0;

    void validate() const {
        if (n_outcomes < kMinOutcomes || n_outcomes > kMaxOutcomes)
            throw Error(ErrorKind::InvalidArgument, "n_outcomes must be in [4, 16]");
        if (restarts < 1) throw Error(ErrorKind::InvalidArgument, "restarts must be >= 1");
        if (hop_count < 0) throw Error(ErrorKind::InvalidArgument, "hop_count must be >= 0");
        if (!(local_tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "local_tol must be positive");
        if (max_evals < 1) throw Error(ErrorKind::InvalidArgument, "max_evals must be positive");
    }
};

struct SearchResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    long evals = 0;
    bool converged = false;
};

struct OptResult {
    GivensAngles angles;
    double value = std::numeric_limits<double>::infinity();
    long evals = 0;
    bool converged = false;
};

inline constexpr double kObjectivePenalty = 1e6;

// ---------------------------------------------------------------------------
// Local search

namespace detail {

inline constexpr double kGolden = 1.618033988749895;
inline constexpr double kBrentTol = 2e-8;

struct LineResult {
    double t;
    double value;
};

/// Brent's minimiser on the bracket (a, b, c) with phi(b) = fb known.
template <typename Phi>
LineResult brent(Phi& phi, double ax, double bx, double cx, double fb) {
    constexpr double kCGold = 0.3819660112501051;
    constexpr double kZeps = 1e-18;
    double a = std::min(ax, cx), b = std::max(ax, cx);
    double x = bx, w = bx, v = bx;
    double fx = fb, fw = fb, fv = fb;
    double d = 0.0, e = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        const double xm = 0.5 * (a + b);
        const double tol1 = kBrentTol * std::abs(x) + kZeps;
        const double tol2 = 2.0 * tol1;
        if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
        if (std::abs(e) > tol1) {
            double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::abs(q);
            const double etemp = e;
            e = d;
            if (std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (a - x) || p >= q * (b - x)) {
                e = x >= xm ? a - x : b - x;
                d = kCGold * e;
            } else {
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = std::copysign(tol1, xm - x);
            }
        } else {
            e = x >= xm ? a - x : b - x;
            d = kCGold * e;
        }
        const double u = std::abs(d) >= tol1 ? x + d : x + std::copysign(tol1, d);
        const double fu = phi(u);
        if (fu <= fx) {
            (u >= x ? a : b) = x;
            v = w; w = x; x = u;
            fv = fw; fw = fx; fx = fu;
        } else {
            (u < x ? a : b) = u;
            if (fu <= fw || w == x) {
                v = w; w = u;
                fv = fw; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u;
                fv = fu;
            }
        }
    }
    return {x, fx};
}

/// Minimises phi along t starting from phi(0) = f0 with unit initial step.
template <typename Phi>
LineResult line_minimize(Phi& phi, double f0) {
    double a = 0.0, fa = f0;
    double b = 1.0, fb = phi(b);
    if (fb > fa) {
        std::swap(a, b);
        std::swap(fa, fb);
    }
    double c = b + kGolden * (b - a);
    double fc = phi(c);
    for (int k = 0; fb > fc && k < 60; ++k) {
        a = b; fa = fb;
        b = c; fb = fc;
        c = b + kGolden * (b - a);
        fc = phi(c);
    }
    if (fb > fc) return {c, fc};
    LineResult r = brent(phi, a, b, c, fb);
    if (f0 <= r.value) return {0.0, f0};
    return r;
}

}  // namespace detail

/// Powell's direction-set method.  Stops when a full sweep improves the value
/// by less than local_tol (relative) or after cfg.max_evals evaluations.
template <typename F>
SearchResult local_search(F&& f, std::vector<double> start, const OptimizeConfig& cfg) {
    const std::size_t n = start.size();
    SearchResult out;
    out.x = std::move(start);
    long evals = 0;
    auto eval = [&](std::span<const double> x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : kObjectivePenalty;
    };
    double fx = eval(out.x);
    if (n == 0) {
        out.value = fx;
        out.evals = evals;
        out.converged = true;
        return out;
    }

    std::vector<std::vector<double>> dirs(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) dirs[i][i] = 1.0;
    std::vector<double> trial(n), sweep_start(n), extrapolated(n), dnew(n);

    auto minimize_along = [&](const std::vector<double>& d) {
        auto phi = [&](double t) {
            for (std::size_t k = 0; k < n; ++k) trial[k] = out.x[k] + t * d[k];
            return eval(trial);
        };
        const detail::LineResult r = detail::line_minimize(phi, fx);
        if (r.t != 0.0 && r.value < fx) {
            for (std::size_t k = 0; k < n; ++k) out.x[k] += r.t * d[k];
            fx = r.value;
        }
    };

    while (true) {
        const double f_start = fx;
        sweep_start = out.x;
        double biggest = 0.0;
        std::size_t ibig = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double before = fx;
            minimize_along(dirs[i]);
            if (before - fx > biggest) {
                biggest = before - fx;
                ibig = i;
            }
        }
        if (2.0 * (f_start - fx) <= cfg.local_tol * (std::abs(f_start) + std::abs(fx)) + 1e-300) {
            out.converged = true;
            break;
        }
        if (evals >= cfg.max_evals) break;

        for (std::size_t k = 0; k < n; ++k) {
            extrapolated[k] = 2.0 * out.x[k] - sweep_start[k];
            dnew[k] = out.x[k] - sweep_start[k];
        }
        const double fe = eval(extrapolated);
        if (fe < f_start) {
            const double t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - biggest) * (f_start - fx - biggest) -
                             biggest * (f_start - fe) * (f_start - fe);
            if (t < 0.0) {
                minimize_along(dnew);
                dirs[ibig] = dirs.back();
                dirs.back() = dnew;
            }
        }
    }
    out.value = fx;
    out.evals = evals;
    return out;
}

// ---------------------------------------------------------------------------
// Objective

/// Weight matrix policy; only the quantum Fisher information is shipped.
using WeightPolicy = std::function<Mat2(const PsfModel&, const Theta&)>;

inline Mat2 qfi_weight(const PsfModel& model, const Theta& theta) { return qfi_analytic(model, theta); }

/// tr(G J^{-1}) of the POVM induced by a set of angles, with the penalty
/// kObjectivePenalty for singular information or singular outcomes.  Owns
/// scratch storage, so one instance per thread.
class MeasurementObjective {
public:
    MeasurementObjective(DensityRep rep, const Mat2& weight, int outcomes)
        : rep_(std::move(rep)), weight_(weight), planes_(givens_planes(outcomes)), scratch_(outcomes, kFrameDim) {}

    std::size_t arity() const { return planes_.size(); }
    int outcomes() const { return static_cast<int>(scratch_.rows()); }
    const DensityRep& rep() const { return rep_; }

    double operator()(std::span<const double> angles) const {
        detail::fill_isometry(angles, planes_, scratch_);
        return evaluate(scratch_);
    }

    double evaluate(const OutcomeMatrix& vectors) const {
        FisherMatrix fisher;
        if (try_fisher_info(rep_, vectors, fisher) != FisherStatus::Ok) return kObjectivePenalty;
        if (!invertible(fisher.j)) return kObjectivePenalty;
        const double value = (weight_ * fisher.j.inverse()).trace();
        return std::isfinite(value) ? value : kObjectivePenalty;
    }

private:
    DensityRep rep_;
    Mat2 weight_;
    std::vector<std::pair<int, int>> planes_;
    mutable OutcomeMatrix scratch_;
};

inline double objective(const GivensAngles& angles, const DensityRep& rep, const Mat2& weight) {
    if (static_cast<int>(angles.angles.size()) != givens_angle_count(angles.n)) {
        throw Error(ErrorKind::BadArity, "angle count does not match outcome count");
    }
    return MeasurementObjective(rep, weight, angles.n)(angles.angles);
}

// ---------------------------------------------------------------------------
// Global search

/// Zero-temperature basin hopping from `start`.
template <typename F>
SearchResult basin_hop(F& f, std::vector<double> start, const OptimizeConfig& cfg, Rng& rng) {
    SearchResult best = local_search(f, std::move(start), cfg);
    long evals = best.evals;
    bool converged = best.converged;
    std::normal_distribution<double> kick(0.0, cfg.hop_scale);
    for (int h = 0; h < cfg.hop_count; ++h) {
        std::vector<double> x = best.x;
        for (double& v : x) v += kick(rng);
        SearchResult r = local_search(f, std::move(x), cfg);
        evals += r.evals;
        converged = converged || r.converged;
        if (r.value < best.value) best = std::move(r);
    }
    best.evals = evals;
    best.converged = converged;
    return best;
}

/// Optimal measurement at (centroid, theta2): best of cfg.restarts uniform
/// random starts plus any warm starts, each refined by basin hopping.
inline OptResult optimize_measurement(const PsfModel& model, double theta2, const OptimizeConfig& cfg,
                                      const WeightPolicy& weight = qfi_weight,
                                      const std::vector<std::vector<double>>& warm_starts = {},
                                      double centroid = 0.0, std::uint64_t stream = 0) {
    cfg.validate();
    const Theta theta{centroid, theta2};
    theta.validate();
    MeasurementObjective f(density_rep(model, theta), weight(model, theta), cfg.n_outcomes);
    const std::size_t m = f.arity();

    Rng rng = make_stream(cfg.seed, stream);
    std::vector<std::vector<double>> starts;
    for (const auto& w : warm_starts) {
        if (w.size() == m) starts.push_back(w);
    }
    for (int r = 0; r < cfg.restarts; ++r) {
        std::vector<double> x(m);
        for (double& v : x) v = M_PI * (2.0 * uniform01(rng) - 1.0);
        starts.push_back(std::move(x));
    }

    SearchResult best;
    long evals = 0;
    bool any_converged = false;
    for (auto& s : starts) {
        SearchResult r = basin_hop(f, std::move(s), cfg, rng);
        evals += r.evals;
        any_converged = any_converged || r.converged;
        if (r.value < best.value) best = std::move(r);
    }
    if (!any_converged) {
        throw Error(ErrorKind::NoConvergence, "no start converged at separation " + std::to_string(theta2));
    }
    OptResult out;
    out.angles = GivensAngles(cfg.n_outcomes, std::move(best.x));
    out.value = best.value;
    out.evals = evals;
    out.converged = best.converged;
    return out;
}

// ---------------------------------------------------------------------------
// Measurement cache

struct CacheEntry {
    double theta2 = 0.0;
    OptResult result;
    RankOnePovm povm;  // anchored at (0, theta2)
};

struct MeasurementCache {
    double sigma = 1.0;
    int plane_ordering_version = kPlaneOrderingVersion;
    int n_outcomes = 4;
    std::uint64_t seed = 0;
    std::string config_hash;  // of the command that built it; may be empty
    std::vector<CacheEntry> entries;

    /// Nearest grid separation; ties go to the smaller one.
    std::size_t nearest(double theta2) const {
        if (entries.empty()) throw Error(ErrorKind::InvalidArgument, "measurement cache is empty");
        auto it = std::lower_bound(entries.begin(), entries.end(), theta2,
                                   [](const CacheEntry& e, double s) { return e.theta2 < s; });
        if (it == entries.begin()) return 0;
        if (it == entries.end()) return entries.size() - 1;
        const auto hi = static_cast<std::size_t>(it - entries.begin());
        return theta2 - entries[hi - 1].theta2 <= entries[hi].theta2 - theta2 ? hi - 1 : hi;
    }
};

/// {0.05 .. 0.5 step 0.05} u {0.6 .. 2 step 0.2} u {2.5 .. 8 step 0.5}
inline std::vector<double> default_cache_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 10; ++k) g.push_back(0.05 * k);
    for (int k = 3; k <= 10; ++k) g.push_back(0.2 * k);
    for (int k = 5; k <= 16; ++k) g.push_back(0.5 * k);
    return g;
}

struct CacheBuildOptions {
    bool warm_start = true;
    unsigned workers = 1;
};

/// One optimisation per grid separation, seeded from (cfg.seed, grid index).
/// Warm-started builds also start each point from its predecessor's optimum
/// and therefore run as a single sequential chain.
inline MeasurementCache build_cache(const PsfModel& model, const std::vector<double>& grid, const OptimizeConfig& cfg,
                                    const CacheBuildOptions& options = {}) {
    cfg.validate();
    if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "cache grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw Error(ErrorKind::InvalidArgument, "cache grid separations must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1]))
            throw Error(ErrorKind::InvalidArgument, "cache grid must be strictly increasing");
    }

    MeasurementCache cache;
    cache.sigma = model.sigma;
    cache.n_outcomes = cfg.n_outcomes;
    cache.seed = cfg.seed;
    cache.entries.resize(grid.size());

    auto solve = [&](std::size_t i, const std::vector<std::vector<double>>& warm) {
        try {
            OptResult r = optimize_measurement(model, grid[i], cfg, qfi_weight, warm, 0.0, i);
            CacheEntry& e = cache.entries[i];
            e.theta2 = grid[i];
            e.povm = povm_from_angles(r.angles, Theta{0.0, grid[i]});
            e.result = std::move(r);
        } catch (const Error& err) {
            throw Error(err.kind(), "cache point " + std::to_string(i) + " (theta2=" + std::to_string(grid[i]) +
                                        "): " + err.what());
        }
    };

    if (options.warm_start) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            std::vector<std::vector<double>> warm;
            if (i > 0) warm.push_back(cache.entries[i - 1].result.angles.angles);
            solve(i, warm);
        }
    } else {
        parallel_for(grid.size(), options.workers, [&](std::size_t i) { solve(i, {}); });
    }
    return cache;
}

/// Cached optimal measurement for the estimate, translated to its centroid.
inline RankOnePovm cache_lookup(const MeasurementCache& cache, const Theta& estimate) {
    return translate(cache.entries[cache.nearest(estimate.separation)].povm, estimate.centroid);
}

}  // namespace aqse
