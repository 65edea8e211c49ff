#pragma once

// Adaptive estimation loop over a grid maximum-likelihood estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aqse/error.hpp"
#include "aqse/model.hpp"
#include "aqse/optimizer.hpp"
#include "aqse/outcomes.hpp"
#include "aqse/parallel.hpp"
#include "aqse/povm.hpp"
#include "aqse/random.hpp"

namespace aqse {

// ---------------------------------------------------------------------------
// Estimation grid

/// Outer coarse lattice plus an optional finer box.  All points sit on one
/// fine lattice: theta1 = k * fine_step and theta2 = wall + k * fine_step.
struct GridSpec {
    double theta1_lo = -1.5;
    double theta1_hi = 1.5;
    double wall = 0.02;
    double theta2_hi = 3.0;
    double coarse_step = 0.05;
    double fine_step = 0.005;
    std::optional<Theta> refine_center;
    double refine_half_width = 0.15;

    static GridSpec around(const Theta& center) {
        GridSpec spec;
        spec.refine_center = center;
        return spec;
    }
};

struct EstimationGrid {
    double step = 0.005;
    double wall = 0.02;
    std::vector<long> key1;      // lattice keys of the distinct theta1 values
    std::vector<double> theta1;  // sorted distinct theta1 values
    std::vector<double> theta2;  // sorted distinct theta2 values
    std::vector<int> index1;     // per point, sorted by (theta2, theta1)
    std::vector<int> index2;

    std::size_t size() const { return index1.size(); }
    Theta point(std::size_t p) const { return {theta1[index1[p]], theta2[index2[p]]}; }

    std::optional<std::size_t> find(const Theta& t, double tol = 1e-9) const {
        for (std::size_t p = 0; p < size(); ++p) {
            const Theta q = point(p);
            if (std::abs(q.centroid - t.centroid) <= tol && std::abs(q.separation - t.separation) <= tol) return p;
        }
        return std::nullopt;
    }
};

namespace detail {

inline long lattice_key(double value, double step, const char* what) {
    const double k = value / step;
    const long key = std::lround(k);
    if (std::abs(k - static_cast<double>(key)) > 1e-6) {
        throw Error(ErrorKind::BadSpec, std::string(what) + " is not a multiple of the fine step");
    }
    return key;
}

}  // namespace detail

inline EstimationGrid make_grid(const GridSpec& spec) {
    if (!(spec.fine_step > 0.0) || !(spec.coarse_step > 0.0))
        throw Error(ErrorKind::BadSpec, "grid steps must be positive");
    if (!(spec.wall > 0.0)) throw Error(ErrorKind::BadSpec, "the smallest separation must be positive");
    if (spec.theta1_hi < spec.theta1_lo || spec.theta2_hi < spec.wall)
        throw Error(ErrorKind::BadSpec, "grid bounds are not ordered");
    if (spec.refine_half_width < 0.0) throw Error(ErrorKind::BadSpec, "refine half-width must be non-negative");

    const double h = spec.fine_step;
    const long ratio = detail::lattice_key(spec.coarse_step, h, "coarse step");
    if (ratio < 1) throw Error(ErrorKind::BadSpec, "coarse step smaller than fine step");
    const long lo1 = detail::lattice_key(spec.theta1_lo, h, "theta1 lower bound");
    const long hi1 = lo1 + static_cast<long>(std::floor((spec.theta1_hi - spec.theta1_lo) / h + 1e-6));
    const long hi2 = static_cast<long>(std::floor((spec.theta2_hi - spec.wall) / h + 1e-6));

    std::vector<std::pair<long, long>> keys;  // (k2, k1)
    for (long k2 = 0; k2 <= hi2; k2 += ratio)
        for (long k1 = lo1; k1 <= hi1; k1 += ratio) keys.emplace_back(k2, k1);

    if (spec.refine_center) {
        const long half = std::lround(spec.refine_half_width / h);
        const long c1 = std::lround(spec.refine_center->centroid / h);
        const long c2 = std::lround((spec.refine_center->separation - spec.wall) / h);
        for (long k2 = std::max(0L, c2 - half); k2 <= std::min(hi2, c2 + half); ++k2)
            for (long k1 = std::max(lo1, c1 - half); k1 <= std::min(hi1, c1 + half); ++k1) keys.emplace_back(k2, k1);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

    std::vector<long> k1s, k2s;
    for (const auto& [k2, k1] : keys) {
        k1s.push_back(k1);
        k2s.push_back(k2);
    }
    std::sort(k1s.begin(), k1s.end());
    k1s.erase(std::unique(k1s.begin(), k1s.end()), k1s.end());
    std::sort(k2s.begin(), k2s.end());
    k2s.erase(std::unique(k2s.begin(), k2s.end()), k2s.end());

    EstimationGrid grid;
    grid.step = h;
    grid.wall = spec.wall;
    grid.key1 = k1s;
    for (long k : k1s) grid.theta1.push_back(static_cast<double>(k) * h);
    for (long k : k2s) grid.theta2.push_back(spec.wall + static_cast<double>(k) * h);
    grid.index1.reserve(keys.size());
    grid.index2.reserve(keys.size());
    for (const auto& [k2, k1] : keys) {
        grid.index1.push_back(static_cast<int>(std::lower_bound(k1s.begin(), k1s.end(), k1) - k1s.begin()));
        grid.index2.push_back(static_cast<int>(std::lower_bound(k2s.begin(), k2s.end(), k2) - k2s.begin()));
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Sampling

inline int sample_outcome(Rng& rng, std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::BadDistribution, "negative or non-finite probability");
        total += p;
    }
    if (probs.empty() || std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorKind::BadDistribution, "probabilities sum to " + std::to_string(total));
    }
    const double u = uniform01(rng) * total;
    double cumulative = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        cumulative += probs[i];
        last_positive = static_cast<int>(i);
        if (u < cumulative) return last_positive;
    }
    return last_positive;
}

// ---------------------------------------------------------------------------
// Likelihood tables

inline constexpr double kLikelihoodFloor = 1e-15;

/// Which bank measurement to apply, and where to centre it.
struct MeasurementChoice {
    std::size_t entry = 0;
    double centroid = 0.0;
};

/// Log-probabilities of a bank of measurements (anchored at centroid 0) over
/// the grid separations, for every lattice offset between a grid centroid
/// and the measurement centroid.  Translation covariance makes one row per
/// (measurement, offset) enough.  Rows are filled on first use and shared
/// between threads.
class LikelihoodTable {
public:
    LikelihoodTable(const PsfModel& model, const std::vector<RankOnePovm>& bank, const EstimationGrid& grid)
        : step_(grid.step), theta2_(grid.theta2) {
        models_.reserve(bank.size());
        for (const auto& povm : bank) {
            if (povm.anchor.centroid != 0.0) {
                throw Error(ErrorKind::InvalidArgument, "bank measurements must be anchored at centroid 0");
            }
            models_.emplace_back(model, povm);
        }
    }

    std::size_t bank_size() const { return models_.size(); }
    int outcomes(std::size_t entry) const { return models_[entry].outcomes(); }
    const OutcomeModel& outcome_model(std::size_t entry) const { return models_[entry]; }

    /// Row pointers for every key in `key1`, relative to `anchor_key`.
    /// Row layout: outcome-major, log p[outcome * n_theta2 + theta2 index].
    void rows(std::size_t entry, long anchor_key, std::span<const long> key1, std::vector<const double*>& out) {
        out.resize(key1.size());
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < key1.size(); ++i) out[i] = row_locked(entry, key1[i] - anchor_key);
    }

    /// Log-probability vector (floored) of one state under a bank entry
    /// centred at `centroid`; computed directly without the table.
    void log_probabilities(std::size_t entry, double centroid, const Theta& state, std::span<double> out) const {
        models_[entry].probabilities(Theta{state.centroid - centroid, state.separation}, out);
        for (double& v : out) v = std::log(std::max(v, kLikelihoodFloor));
    }

private:
    const double* row_locked(std::size_t entry, long offset) {
        const std::uint64_t key = (static_cast<std::uint64_t>(entry) << 32) ^ static_cast<std::uint32_t>(offset);
        auto it = rows_.find(key);
        if (it != rows_.end()) return it->second->data();
        const int k = models_[entry].outcomes();
        const std::size_t n2 = theta2_.size();
        auto row = std::make_unique<std::vector<double>>(static_cast<std::size_t>(k) * n2);
        std::vector<double> probs(k);
        for (std::size_t j = 0; j < n2; ++j) {
            models_[entry].probabilities(Theta{static_cast<double>(offset) * step_, theta2_[j]}, probs);
            for (int w = 0; w < k; ++w) (*row)[w * n2 + j] = std::log(std::max(probs[w], kLikelihoodFloor));
        }
        const double* data = row->data();
        rows_.emplace(key, std::move(row));
        return data;
    }

    double step_;
    std::vector<double> theta2_;
    std::vector<OutcomeModel> models_;
    std::mutex mutex_;
    std::unordered_map<std::uint64_t, std::unique_ptr<std::vector<double>>> rows_;
};

// ---------------------------------------------------------------------------
// Estimator

struct StepRecord {
    int outcome;
    std::size_t entry;
    double centroid;
};

struct AqseState {
    long step = 0;
    std::vector<double> loglik;
    Theta estimate;
    std::optional<std::size_t> estimate_index;
    std::vector<StepRecord> history;
};

using MeasurementPolicy = std::function<MeasurementChoice(const Theta& estimate)>;

/// Nearest cached separation, translated to the estimate's centroid.
inline MeasurementPolicy adaptive_policy(const MeasurementCache& cache) {
    return [&cache](const Theta& estimate) {
        return MeasurementChoice{cache.nearest(estimate.separation), estimate.centroid};
    };
}

/// Non-adaptive control: one measurement, never moved.
inline MeasurementPolicy fixed_policy(std::size_t entry, double centroid) {
    return [entry, centroid](const Theta&) { return MeasurementChoice{entry, centroid}; };
}

inline std::vector<RankOnePovm> cache_bank(const MeasurementCache& cache) {
    std::vector<RankOnePovm> bank;
    for (const auto& e : cache.entries) bank.push_back(translate(e.povm, 0.0));
    return bank;
}

class AdaptiveEstimator {
public:
    AdaptiveEstimator(const PsfModel& model, const EstimationGrid& grid, LikelihoodTable& table,
                      MeasurementPolicy policy)
        : model_(model), grid_(grid), table_(table), policy_(std::move(policy)) {}

    const EstimationGrid& grid() const { return grid_; }

    AqseState initial_state(const Theta& initial) const {
        AqseState s;
        s.loglik.assign(grid_.size(), 0.0);
        s.estimate = initial;
        return s;
    }

    MeasurementChoice choose(const AqseState& state) const { return policy_(state.estimate); }

    /// Outcome distribution (n + 1 entries) of `choice` at the true state.
    std::vector<double> outcome_probabilities(const MeasurementChoice& choice, const Theta& truth) const {
        return table_.outcome_model(choice.entry).probabilities(
            Theta{truth.centroid - choice.centroid, truth.separation});
    }

    /// Adds log p(outcome | grid point, measurement) to every grid point and
    /// moves the estimate to the arg-max.  Ties go to the point listed first,
    /// i.e. the smallest separation and then the smallest centroid.
    void apply(AqseState& state, const MeasurementChoice& choice, int outcome) const {
        const std::size_t n2 = grid_.theta2.size();
        const double kf = choice.centroid / grid_.step;
        const long anchor_key = std::lround(kf);
        const std::size_t np = grid_.size();
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_p = 0;

        if (std::abs(kf - static_cast<double>(anchor_key)) < 1e-9) {
            table_.rows(choice.entry, anchor_key, grid_.key1, row_cache_);
            const std::size_t base = static_cast<std::size_t>(outcome) * n2;
            for (std::size_t p = 0; p < np; ++p) {
                const double v = state.loglik[p] + row_cache_[grid_.index1[p]][base + grid_.index2[p]];
                state.loglik[p] = v;
                if (v > best) {
                    best = v;
                    best_p = p;
                }
            }
        } else {
            std::vector<double> logp(table_.outcomes(choice.entry));
            for (std::size_t p = 0; p < np; ++p) {
                table_.log_probabilities(choice.entry, choice.centroid, grid_.point(p), logp);
                const double v = state.loglik[p] + logp[outcome];
                state.loglik[p] = v;
                if (v > best) {
                    best = v;
                    best_p = p;
                }
            }
        }
        ++state.step;
        state.estimate_index = best_p;
        state.estimate = grid_.point(best_p);
        state.history.push_back({outcome, choice.entry, choice.centroid});
    }

private:
    const PsfModel& model_;
    const EstimationGrid& grid_;
    LikelihoodTable& table_;
    MeasurementPolicy policy_;
    mutable std::vector<const double*> row_cache_;
};

/// One protocol step.  The measurement is chosen from the previous estimate
/// and the outcome is drawn at the truth.
inline void aqse_step(AqseState& state, const AdaptiveEstimator& estimator, const Theta& truth, Rng& rng) {
    const MeasurementChoice choice = estimator.choose(state);
    const std::vector<double> probs = estimator.outcome_probabilities(choice, truth);
    const int outcome = sample_outcome(rng, probs);
    estimator.apply(state, choice, outcome);
}

// ---------------------------------------------------------------------------
// Runs and ensembles

struct RunRecord {
    std::size_t run_index = 0;
    std::uint64_t seed = 0;
    Theta theta_star;
    std::vector<long> checkpoints;
    std::vector<Theta> estimates;   // at the checkpoints
    std::vector<Theta> trajectory;  // every step, when requested
    std::vector<long> outcome_counts;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct RunOptions {
    Theta initial{1.0, 1.0};
    std::vector<long> checkpoints;
    bool keep_trajectory = false;
};

/// Every `every` steps up to and including `steps`.
inline std::vector<long> regular_checkpoints(long steps, long every) {
    if (every < 1) throw Error(ErrorKind::InvalidArgument, "checkpoint spacing must be positive");
    std::vector<long> out;
    for (long n = every; n <= steps; n += every) out.push_back(n);
    if (out.empty() || out.back() != steps) out.push_back(steps);
    return out;
}

inline void validate_checkpoints(std::span<const long> checkpoints, long steps) {
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i] < 1 || checkpoints[i] > steps || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
            throw Error(ErrorKind::InvalidArgument, "checkpoints must be increasing and within [1, steps]");
        }
    }
}

inline RunRecord run_aqse(const AdaptiveEstimator& estimator, const Theta& theta_star, long steps, std::uint64_t seed,
                          const RunOptions& options, std::size_t run_index = 0) {
    if (steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be >= 1");
    theta_star.validate();
    validate_checkpoints(options.checkpoints, steps);

    RunRecord rec;
    rec.run_index = run_index;
    rec.seed = seed;
    rec.theta_star = theta_star;
    rec.checkpoints = options.checkpoints;

    Rng rng(seed);
    AqseState state = estimator.initial_state(options.initial);
    state.history.reserve(static_cast<std::size_t>(steps));
    std::size_t next_checkpoint = 0;
    for (long n = 1; n <= steps; ++n) {
        aqse_step(state, estimator, theta_star, rng);
        const int outcome = state.history.back().outcome;
        if (static_cast<std::size_t>(outcome) >= rec.outcome_counts.size()) rec.outcome_counts.resize(outcome + 1, 0);
        ++rec.outcome_counts[outcome];
        if (options.keep_trajectory) rec.trajectory.push_back(state.estimate);
        if (next_checkpoint < rec.checkpoints.size() && rec.checkpoints[next_checkpoint] == n) {
            rec.estimates.push_back(state.estimate);
            ++next_checkpoint;
        }
    }
    return rec;
}

/// Convenience overload that builds its own table from the cache.
inline RunRecord run_aqse(const PsfModel& model, const Theta& theta_star, const MeasurementCache& cache,
                          const EstimationGrid& grid, long steps, std::uint64_t seed, const RunOptions& options = {}) {
    LikelihoodTable table(model, cache_bank(cache), grid);
    AdaptiveEstimator estimator(model, grid, table, adaptive_policy(cache));
    return run_aqse(estimator, theta_star, steps, seed, options);
}

struct EnsembleConfig {
    double sigma = 1.0;
    Theta theta_star{0.0, 0.3};
    Theta initial{1.0, 1.0};
    long steps = 8000;
    int runs = 1000;
    std::uint64_t master_seed = 0;
    std::vector<long> checkpoints;
    bool keep_trajectory = false;
    unsigned workers = 1;
};

struct EnsembleRecord {
    EnsembleConfig config;
    std::vector<RunRecord> runs;  // ordered by run index
};

inline std::uint64_t run_seed(std::uint64_t master, std::size_t run_index) { return stream_seed(master, run_index); }

/// Orders runs by index; rejects duplicates and gaps.
inline EnsembleRecord merge_runs(const EnsembleConfig& config, std::vector<RunRecord> runs) {
    std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) { return a.run_index < b.run_index; });
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].run_index != i) {
            throw Error(ErrorKind::InvalidArgument, "run indices must be 0..runs-1 without duplicates");
        }
    }
    return EnsembleRecord{config, std::move(runs)};
}

inline EnsembleRecord run_ensemble(const EnsembleConfig& config, const MeasurementCache& cache,
                                   const EstimationGrid& grid) {
    if (config.runs < 2) throw Error(ErrorKind::InvalidArgument, "an ensemble needs at least 2 runs");
    const PsfModel model(config.sigma);
    LikelihoodTable table(model, cache_bank(cache), grid);
    RunOptions options{config.initial, config.checkpoints, config.keep_trajectory};

    std::vector<RunRecord> runs(static_cast<std::size_t>(config.runs));
    parallel_for(runs.size(), config.workers, [&](std::size_t i) {
        // Each worker needs its own estimator: it holds per-call scratch.
        AdaptiveEstimator estimator(model, grid, table, adaptive_policy(cache));
        try {
            runs[i] = run_aqse(estimator, config.theta_star, config.steps, run_seed(config.master_seed, i), options, i);
        } catch (const Error& e) {
            throw Error(e.kind(), "run " + std::to_string(i) + ": " + e.what());
        }
    });
    return merge_runs(config, std::move(runs));
}

}  // namespace aqse
