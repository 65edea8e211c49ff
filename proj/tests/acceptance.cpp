// Acceptance suite.  Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.  Tolerances are fixed below.
//
//   acceptance --cache-dir DIR [--only N] [--workers W] [--long]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aqse/adaptive.hpp"
#include "aqse/analysis.hpp"
#include "aqse/fisher.hpp"
#include "aqse/io.hpp"
#include "aqse/model.hpp"
#include "aqse/optimizer.hpp"
#include "aqse/outcomes.hpp"
#include "aqse/povm.hpp"
#include "cli.hpp"

using namespace aqse;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances and constants ---------------------------------------

constexpr double kQfiTol = 1e-8;
constexpr double kQfiSeconds = 1.0;
constexpr double kBoundTol = 1e-3;
constexpr double kLargeSepCeiling = 2.04;
constexpr double kOptimizeSeconds = 300.0;
constexpr double kFourVsSixteenTol = 1e-3;
constexpr double kDominanceTol = 1e-6;
constexpr double kCurseFraction = 0.01;
constexpr double kSpadeTol = 1e-8;
constexpr double kFloorFraction = 0.20;
// Regression values at theta2 = 0.05 (sigma = 1); a 16-outcome optimisation
// reproduced the value to 6e-9.
constexpr double kFrozenValueAt005 = 3.863418222;
constexpr double kFrozenJ22At005 = 0.129419;
constexpr double kFrozenTol = 1e-3;
constexpr double kConvergenceBand = 0.10;
constexpr long kConvergenceFrom = 800;
constexpr double kSlowdownFactor = 3.0;
constexpr double kPovmResidual = 1e-10;
constexpr double kDominationSlack = 1e-6;
constexpr std::uint64_t kCacheSeed = 7;
constexpr std::uint64_t kEnsembleSeed = 1;

// Budget used for the 16-outcome optimisations.
constexpr int kSixteenRestarts = 4;
constexpr int kSixteenHops = 10;

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path dir;
    unsigned workers = 1;
    MeasurementCache cache;
    std::string cache_text;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

int cli_run(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "aqse");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str() + e.str();
    return code;
}

std::vector<std::string> cache_build_args(const fs::path& out) {
    return {"cache", "build", "--seed", std::to_string(kCacheSeed), "--out", out.string()};
}

EnsembleRecord ensemble(const Context& ctx, const Theta& truth, int runs, long steps) {
    EnsembleConfig cfg;
    cfg.theta_star = truth;
    cfg.runs = runs;
    cfg.steps = steps;
    cfg.master_seed = kEnsembleSeed;
    cfg.checkpoints = regular_checkpoints(steps, 10);
    cfg.workers = ctx.workers;
    return run_ensemble(cfg, ctx.cache, make_grid(GridSpec::around(truth)));
}

// --- criteria --------------------------------------------------------------

Verdict qfi_exactness(Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (double sigma : {0.5, 1.0, 2.0}) {
        const PsfModel m(sigma);
        for (int k = 0; k < 20; ++k) {
            const Theta t{0.0, sigma * (0.05 + 0.3 * k)};
            const Mat2 numeric = sld_and_qfi(density_rep(m, t)).qfi;
            worst = std::max(worst, (numeric - qfi_analytic(m, t)).cwiseAbs().maxCoeff());
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= kQfiTol && secs < kQfiSeconds,
            "max |K_sld - K_closed| = " + num(worst, 3) + " (tol " + num(kQfiTol) + "), " + num(secs, 3) + " s"};
}

Verdict sld_bound(Context&) {
    OptimizeConfig cfg;
    cfg.seed = kCacheSeed;
    const PsfModel m(1.0);
    auto t0 = std::chrono::steady_clock::now();
    const double at2 = optimize_measurement(m, 2.0, cfg).value;
    const double s2 = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const double at6 = optimize_measurement(m, 6.0, cfg).value;
    const double s6 = seconds_since(t0);
    const bool ok = std::abs(at2 - 2.0) <= kBoundTol && at6 <= kLargeSepCeiling && s2 < kOptimizeSeconds &&
                    s6 < kOptimizeSeconds;
    return {ok, "value(2) = " + num(at2, 10) + ", value(6) = " + num(at6, 8) + ", " + num(s2, 3) + " s / " +
                    num(s6, 3) + " s"};
}

Verdict four_vs_sixteen(Context&) {
    const PsfModel m(1.0);
    OptimizeConfig four;
    four.seed = kCacheSeed;
    OptimizeConfig sixteen = four;
    sixteen.n_outcomes = 16;
    sixteen.restarts = kSixteenRestarts;
    sixteen.hop_count = kSixteenHops;
    double worst = 0.0;
    std::string detail;
    for (double s : {0.3, 1.0, 2.0, 4.0}) {
        const double v4 = optimize_measurement(m, s, four).value;
        const double v16 = optimize_measurement(m, s, sixteen).value;
        worst = std::max(worst, std::abs(v4 - v16));
        detail += num(s, 2) + ": " + num(v4, 10) + " vs " + num(v16, 10) + "; ";
    }
    return {worst <= kFourVsSixteenTol, detail + "max diff " + num(worst, 3) + " (tol " + num(kFourVsSixteenTol) + ")"};
}

Verdict bound_dominance(Context& ctx) {
    double lowest = std::numeric_limits<double>::infinity();
    double where = 0.0;
    for (const CacheEntry& e : ctx.cache.entries) {
        if (e.result.value < lowest) {
            lowest = e.result.value;
            where = e.theta2;
        }
    }
    return {lowest >= 2.0 - kDominanceTol && ctx.cache.entries.size() == default_cache_grid().size(),
            std::to_string(ctx.cache.entries.size()) + " entries, min value " + num(lowest, 10) + " at theta2 = " +
                num(where, 3)};
}

Verdict rayleigh_curse(Context&) {
    const PsfModel m(1.0);
    const double j22 = direct_imaging_fisher(m, {0.0, 0.05}).j(1, 1);
    bool monotone = true;
    double prev = 0.0;
    for (int k = 1; k <= 40; ++k) {
        const double v = direct_imaging_fisher(m, {0.0, 0.05 * k}).j(1, 1);
        monotone = monotone && v > prev;
        prev = v;
    }
    return {j22 < kCurseFraction * 0.25 && monotone,
            "J22(0.05) = " + num(j22, 4) + " (< " + num(kCurseFraction * 0.25) + "), monotone on 40 points: " +
                (monotone ? "yes" : "no")};
}

Verdict spade_optimality(Context&) {
    double worst = 0.0;
    for (double sigma : {0.5, 1.0, 2.0}) {
        const PsfModel m(sigma);
        for (double s : {0.02, 0.1, 0.5, 1.0, 3.0}) {
            const double j = hg_spade_fisher_sep(m, {0.0, s * sigma}, 0.0);
            worst = std::max(worst, std::abs(j - 1.0 / (4.0 * sigma * sigma)));
        }
    }
    return {worst <= kSpadeTol, "max |J22 - 1/(4 sigma^2)| = " + num(worst, 3) + " (tol " + num(kSpadeTol) + ")"};
}

Verdict curse_free(Context& ctx) {
    const PsfModel m(1.0);
    const CacheEntry& e = ctx.cache.entries[ctx.cache.nearest(0.05)];
    const Theta t{0.0, e.theta2};
    const double j22 = fisher_info(density_rep(m, t), e.povm).j(1, 1);
    const bool ok = e.theta2 == 0.05 && j22 >= kFloorFraction * 0.25 &&
                    std::abs(j22 - kFrozenJ22At005) <= kFrozenTol &&
                    std::abs(e.result.value - kFrozenValueAt005) <= kFrozenTol;
    return {ok, "J22(0.05) = " + num(j22, 6) + " = " + num(100 * j22 / 0.25, 4) + "% of 1/4 (floor " +
                    num(100 * kFloorFraction) + "%), frozen " + num(kFrozenJ22At005) + "; value " +
                    num(e.result.value, 10) + " vs frozen " + num(kFrozenValueAt005, 10)};
}

Verdict aqse_convergence(Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const Theta truth{0.0, 1.0};
    const EnsembleRecord ens = ensemble(ctx, truth, 200, 2000);
    const double limit = theoretical_limit(ctx.cache, truth.separation);
    const auto series = weighted_trace_series(ens, PsfModel(1.0), limit);
    double worst = 0.0;
    long worst_n = 0;
    for (const auto& p : series) {
        if (p.n < kConvergenceFrom) continue;
        const double dev = std::abs(p.weighted_trace / limit - 1.0);
        if (dev > worst) {
            worst = dev;
            worst_n = p.n;
        }
    }
    const double final_ratio = series.back().weighted_trace / limit;
    return {worst <= kConvergenceBand,
            "limit " + num(limit, 8) + ", max |w_n/limit - 1| for n >= 800 = " + num(worst, 4) + " at n = " +
                std::to_string(worst_n) + " (tol " + num(kConvergenceBand) + "), w_2000/limit = " +
                num(final_ratio, 4) + ", " + num(seconds_since(t0), 3) + " s"};
}

Verdict trapping_slowdown(Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    std::map<double, long> times;
    std::string detail;
    for (double s : {0.3, 1.0}) {
        const EnsembleRecord ens = ensemble(ctx, {0.0, s}, 200, 4000);
        const double limit = theoretical_limit(ctx.cache, s);
        const auto series = weighted_trace_series(ens, PsfModel(1.0), limit);
        try {
            times[s] = convergence_time(series, limit);
            detail += "T(" + num(s, 2) + ") = " + std::to_string(times[s]) + "; ";
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NotReached) throw;
            detail += "T(" + num(s, 2) + ") not reached; ";
        }
    }
    const bool ok = times.count(0.3) && times.count(1.0) &&
                    static_cast<double>(times[0.3]) > kSlowdownFactor * static_cast<double>(times[1.0]);
    return {ok, detail + "need T(0.3) > " + num(kSlowdownFactor) + " T(1.0), " + num(seconds_since(t0), 3) + " s"};
}

Verdict scaling_fit(Context&) {
    const std::vector<ScalingPoint> reference = {{0.1, 14372}, {0.2, 3816}, {0.3, 1744},
                                                 {0.5, 990},   {0.7, 653},  {1.0, 376}};
    const ScalingFit f = fit_scaling(reference);
    const bool ok = f.e >= 1.92 && f.e <= 2.12 && f.c >= 126 && f.c <= 140 && f.t0 >= 316 && f.t0 <= 350;
    return {ok, "e = " + num(f.e, 7) + " in [1.92, 2.12], c = " + num(f.c, 9) + " in [126, 140], t0 = " +
                    num(f.t0, 9) + " in [316, 350]"};
}

Verdict determinism(Context& ctx) {
    const fs::path again = ctx.dir / "cache_again.json";
    if (cli_run(cache_build_args(again)) != 0) return {false, "cache rebuild failed"};
    const bool cache_same = read_file(again.string()) == ctx.cache_text;

    const fs::path cache_path = ctx.dir / "cache.json";
    auto sim = [&](const std::string& name, unsigned workers) {
        const fs::path out = ctx.dir / name;
        const int code = cli_run({"simulate", "--cache", cache_path.string(), "--seed", "11", "--theta2", "1.0",
                                  "--runs", "20", "--steps", "500", "--workers", std::to_string(workers), "--out",
                                  out.string()});
        return code == 0 ? read_file(out.string()) : std::string();
    };
    const std::string a = sim("runs_a.jsonl", 1);
    const std::string b = sim("runs_b.jsonl", 1);
    const std::string c = sim("runs_c.jsonl", std::max(2u, ctx.workers));
    const bool sim_same = !a.empty() && a == b && a == c;
    return {cache_same && sim_same, std::string("cache rebuild identical: ") + (cache_same ? "yes" : "no") +
                                        ", simulate identical (same and different worker counts): " +
                                        (sim_same ? "yes" : "no") + ", " + std::to_string(a.size()) + " bytes"};
}

Verdict property_suites(Context& ctx) {
    // POVM completeness.
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    std::uniform_int_distribution<int> outcomes(kMinOutcomes, kMaxOutcomes);
    double residual = 0.0;
    for (int draw = 0; draw < 1000; ++draw) {
        GivensAngles a = GivensAngles::zeros(outcomes(rng));
        for (double& x : a.angles) x = angle(rng);
        residual = std::max(residual, validate(povm_from_angles(a)));
    }

    // Quantum Cramer-Rao domination.
    const PsfModel m(1.0);
    std::uniform_real_distribution<double> sep(0.05, 6.0);
    double lowest = std::numeric_limits<double>::infinity();
    int evaluated = 0;
    for (int draw = 0; draw < 1000; ++draw) {
        const Theta t{0.0, sep(rng)};
        GivensAngles a = GivensAngles::zeros(outcomes(rng));
        for (double& x : a.angles) x = angle(rng);
        FisherMatrix j;
        if (try_fisher_info(density_rep(m, t), povm_from_angles(a, t).vectors, j) != FisherStatus::Ok) continue;
        ++evaluated;
        const Mat2 gap = qfi_analytic(m, t) - j.j;
        lowest = std::min(lowest, Eigen::SelfAdjointEigenSolver<Mat2>(gap).eigenvalues().minCoeff());
    }

    // Fixed-measurement control against an i.i.d. multinomial MLE.
    int agree = 0;
    const int streams = 5;
    const Theta truth{0.0, 1.0};
    GridSpec spec = GridSpec::around(truth);
    spec.theta1_lo = -0.5;
    spec.theta1_hi = 0.5;
    spec.theta2_hi = 2.0;
    const EstimationGrid grid = make_grid(spec);
    LikelihoodTable table(m, cache_bank(ctx.cache), grid);
    const std::size_t entry = ctx.cache.nearest(truth.separation);
    const OutcomeModel om(m, ctx.cache.entries[entry].povm);
    for (int stream = 0; stream < streams; ++stream) {
        AdaptiveEstimator est(m, grid, table, fixed_policy(entry, 0.0));
        Rng r(stream_seed(99, stream));
        AqseState state = est.initial_state({1.0, 1.0});
        for (int n = 0; n < 500; ++n) aqse_step(state, est, truth, r);
        std::map<int, long> counts;
        for (const StepRecord& h : state.history) ++counts[h.outcome];
        double best = -std::numeric_limits<double>::infinity();
        Theta argmax;
        for (std::size_t p = 0; p < grid.size(); ++p) {
            const auto probs = om.probabilities(grid.point(p));
            double ll = 0.0;
            for (const auto& [w, k] : counts) ll += static_cast<double>(k) * std::log(std::max(probs[w], 1e-15));
            if (ll > best + 1e-9) {
                best = ll;
                argmax = grid.point(p);
            }
        }
        if (argmax == state.estimate) ++agree;
    }

    const bool ok = residual < kPovmResidual && lowest >= -kDominationSlack && evaluated >= 990 && agree == streams;
    return {ok, "completeness residual " + num(residual, 3) + " (tol " + num(kPovmResidual) + "); min eig(K - J) " +
                    num(lowest, 3) + " over " + std::to_string(evaluated) + " POVMs; control MLE matches " +
                    std::to_string(agree) + "/" + std::to_string(streams) + " streams"};
}

// Optional: regenerate convergence times at desk-scale separations and fit
// the power law to them.
Verdict long_scaling(Context& ctx) {
    std::vector<ScalingPoint> pts;
    std::string detail;
    for (double s : {0.3, 0.5, 0.7, 1.0}) {
        EnsembleConfig cfg;
        cfg.theta_star = {0.0, s};
        cfg.runs = 1000;
        cfg.steps = 6000;
        cfg.master_seed = kEnsembleSeed;
        cfg.checkpoints = regular_checkpoints(cfg.steps, 10);
        cfg.workers = ctx.workers;
        const EnsembleRecord ens = run_ensemble(cfg, ctx.cache, make_grid(GridSpec::around(cfg.theta_star)));
        const double limit = theoretical_limit(ctx.cache, s);
        const long t = convergence_time(weighted_trace_series(ens, PsfModel(1.0), limit), limit);
        pts.push_back({s, static_cast<double>(t)});
        detail += "T(" + num(s, 2) + ") = " + std::to_string(t) + "; ";
    }
    const ScalingFit f = fit_scaling(pts);
    return {f.e >= 1.5 && f.e <= 2.5, detail + "e = " + num(f.e, 5) + " in [1.5, 2.5], c = " + num(f.c, 6) +
                                          ", t0 = " + num(f.t0, 6)};
}

}  // namespace

int main(int argc, char** argv) {
    Context ctx;
    ctx.dir = fs::temp_directory_path() / "aqse_acceptance";
    ctx.workers = std::max(1u, std::thread::hardware_concurrency());
    int only = 0;
    bool long_mode = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--cache-dir" && i + 1 < argc) {
            ctx.dir = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            only = std::stoi(argv[++i]);
        } else if (a == "--workers" && i + 1 < argc) {
            ctx.workers = static_cast<unsigned>(std::stoul(argv[++i]));
        } else if (a == "--long") {
            long_mode = true;
        } else {
            std::fprintf(stderr, "usage: acceptance --cache-dir DIR [--only N] [--workers W] [--long]\n");
            return 1;
        }
    }
    fs::create_directories(ctx.dir);

    const auto setup = std::chrono::steady_clock::now();
    const fs::path cache_path = ctx.dir / "cache.json";
    std::string log;
    if (cli_run(cache_build_args(cache_path), &log) != 0) {
        std::fprintf(stderr, "cache build failed: %s\n", log.c_str());
        return 1;
    }
    ctx.cache_text = read_file(cache_path.string());
    ctx.cache = load_cache(cache_path.string());
    std::printf("setup: built %zu-entry cache in %.1f s\n", ctx.cache.entries.size(), seconds_since(setup));

    const std::vector<std::pair<std::string, std::function<Verdict(Context&)>>> criteria = {
        {"QFI exactness", qfi_exactness},
        {"SLD bound attainment", sld_bound},
        {"four-vs-sixteen equivalence", four_vs_sixteen},
        {"bound dominance", bound_dominance},
        {"Rayleigh curse in direct imaging", rayleigh_curse},
        {"HG SPADE optimality", spade_optimality},
        {"curse-free simultaneous estimation", curse_free},
        {"scaled-down AQSE convergence", aqse_convergence},
        {"trapping-slowdown ordering", trapping_slowdown},
        {"scaling-law fit", scaling_fit},
        {"determinism", determinism},
        {"property suites", property_suites},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (only && only != id) continue;
        Verdict v;
        try {
            v = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
        std::fflush(stdout);
    }
    if (long_mode) {
        Verdict v;
        try {
            v = long_scaling(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::printf("[%s] long regenerated scaling fit: %s\n", v.pass ? "PASS" : "FAIL", v.detail.c_str());
    }
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
