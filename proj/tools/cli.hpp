#pragma once

// Command-line front end.  dispatch() is kept separate from main() so tests
// can drive it in-process.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aqse/adaptive.hpp"
#include "aqse/analysis.hpp"
#include "aqse/error.hpp"
#include "aqse/fisher.hpp"
#include "aqse/io.hpp"
#include "aqse/model.hpp"
#include "aqse/optimizer.hpp"

namespace aqse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

inline constexpr const char* kOutputDirEnv = "AQSE_OUTPUT_DIR";

inline std::string default_output_dir() {
    const char* env = std::getenv(kOutputDirEnv);
    return env && *env ? env : ".";
}

/// Shortest round-trip formatting, same as the JSON writer.
inline std::string fmt(double v) { return Json(v).dump(); }

class CsvWriter {
public:
    CsvWriter(const std::string& config_hash, const std::string& cache_sum, const std::vector<std::string>& header) {
        out_ << "# config_hash=" << config_hash << ",cache_checksum=" << cache_sum << "\n";
        row_strings(header);
    }
    template <typename... T>
    void row(const T&... values) {
        bool first = true;
        ((out_ << (first ? "" : ",") << cell(values), first = false), ...);
        out_ << "\n";
    }
    std::string str() const { return out_.str(); }

private:
    void row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
    }
    static std::string cell(double v) { return fmt(v); }
    static std::string cell(long v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(const std::string& v) { return v; }
    std::ostringstream out_;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

/// Primary output plus a sidecar holding everything that legitimately varies
/// between identical invocations.
inline void write_output(const std::string& path, const std::string& content, const std::string& config_hash,
                         const Json& volatile_fields = Json::object()) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_file(path, content);
    Json meta = volatile_fields;
    meta["timestamp"] = utc_timestamp();
    meta["config_hash"] = config_hash;
    meta["output"] = p.filename().string();
    write_file(path + ".meta.json", meta.dump(2) + "\n");
}

inline std::string resolve(const std::string& out, const std::string& dir, const std::string& fallback) {
    if (!out.empty()) return out;
    return (std::filesystem::path(dir) / fallback).string();
}

inline std::vector<double> linspace(double lo, double hi, int points) {
    if (points < 1) throw Error(ErrorKind::InvalidArgument, "--points must be >= 1");
    if (points == 1) return {lo};
    std::vector<double> out(points);
    for (int i = 0; i < points; ++i) out[i] = lo + (hi - lo) * i / (points - 1);
    return out;
}

struct GridOptions {
    GridSpec spec;
    bool no_refine = false;

    void add(CLI::App* app) {
        app->add_option("--theta1-lo", spec.theta1_lo, "Grid centroid lower bound")->capture_default_str();
        app->add_option("--theta1-hi", spec.theta1_hi, "Grid centroid upper bound")->capture_default_str();
        app->add_option("--wall", spec.wall, "Smallest grid separation")->capture_default_str();
        app->add_option("--theta2-hi", spec.theta2_hi, "Grid separation upper bound")->capture_default_str();
        app->add_option("--coarse-step", spec.coarse_step, "Outer lattice step")->capture_default_str();
        app->add_option("--fine-step", spec.fine_step, "Refined lattice step")->capture_default_str();
        app->add_option("--refine-half-width", spec.refine_half_width, "Half-width of the refined box")
            ->capture_default_str();
        app->add_flag("--no-refine", no_refine, "Disable the refined box around the true value");
    }

    Json to_json() const {
        return Json{{"theta1_lo", spec.theta1_lo},     {"theta1_hi", spec.theta1_hi},
                    {"wall", spec.wall},               {"theta2_hi", spec.theta2_hi},
                    {"coarse_step", spec.coarse_step}, {"fine_step", spec.fine_step},
                    {"refine_half_width", spec.refine_half_width}, {"refine", !no_refine}};
    }
};

struct OptimizerOptions {
    OptimizeConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--outcomes", cfg.n_outcomes, "Number of rank-one outcomes (4..16)")->capture_default_str();
        app->add_option("--restarts", cfg.restarts, "Random restarts")->capture_default_str();
        app->add_option("--hops", cfg.hop_count, "Basin hops per restart")->capture_default_str();
        app->add_option("--hop-scale", cfg.hop_scale, "Hop kick scale in radians")->capture_default_str();
        app->add_option("--tol", cfg.local_tol, "Relative local-search tolerance")->capture_default_str();
        app->add_option("--max-evals", cfg.max_evals, "Evaluation budget per local search")->capture_default_str();
    }

    Json to_json() const {
        return Json{{"n_outcomes", cfg.n_outcomes}, {"restarts", cfg.restarts},   {"hop_count", cfg.hop_count},
                    {"hop_scale", cfg.hop_scale},   {"local_tol", cfg.local_tol}, {"max_evals", cfg.max_evals},
                    {"seed", cfg.seed}};
    }
};

inline Json fisher_json(const Mat2& j) { return Json{{"J11", j(0, 0)}, {"J12", j(0, 1)}, {"J22", j(1, 1)}}; }

/// Parses and runs one command.  Returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Adaptive estimation of two-point-source parameters", "aqse"};
    app.set_config("--config", "", "TOML/INI config file; flags take precedence");
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    double sigma = 1.0;
    std::string output_dir = default_output_dir();
    std::string out_path;
    app.add_option("--sigma", sigma, "PSF width")->capture_default_str();
    app.add_option("--output-dir", output_dir, std::string("Output directory (default $") + kOutputDirEnv + " or .)");

    // qfi
    auto* qfi = app.add_subcommand("qfi", "Quantum Fisher information matrix");
    double q_theta1 = 0.0, q_theta2 = 0.0;
    bool q_numeric = false;
    qfi->add_option("--theta1", q_theta1, "Centroid")->capture_default_str();
    qfi->add_option("--theta2", q_theta2, "Separation")->required();
    qfi->add_flag("--numeric", q_numeric, "Compute through the SLDs instead of the closed form");

    // fisher
    auto* fisher = app.add_subcommand("fisher", "Classical Fisher information curves");
    fisher->require_subcommand(1);
    std::vector<double> f_theta2;
    double f_lo = 0.05, f_hi = 2.0, f_ref = 0.0;
    int f_points = 40, f_qmax = kDefaultSpadeQmax;
    std::string f_cache;
    auto add_sweep = [&](CLI::App* c) {
        c->add_option("--theta2", f_theta2, "Explicit separations");
        c->add_option("--theta2-min", f_lo, "Sweep start")->capture_default_str();
        c->add_option("--theta2-max", f_hi, "Sweep end")->capture_default_str();
        c->add_option("--points", f_points, "Sweep points")->capture_default_str();
        c->add_option("--out", out_path, "Output CSV path");
    };
    auto* f_direct = fisher->add_subcommand("direct", "Direct imaging");
    add_sweep(f_direct);
    auto* f_spade = fisher->add_subcommand("spade", "Hermite-Gauss mode counting");
    add_sweep(f_spade);
    f_spade->add_option("--centroid-ref", f_ref, "Mode origin relative to the true centroid")->capture_default_str();
    f_spade->add_option("--qmax", f_qmax, "Largest mode index")->capture_default_str();
    auto* f_optimal = fisher->add_subcommand("optimal", "Cached optimal measurements");
    f_optimal->add_option("--cache", f_cache, "Measurement cache JSON")->required();
    f_optimal->add_option("--out", out_path, "Output CSV path");

    // optimize
    auto* optimize = app.add_subcommand("optimize", "Optimal measurement at one separation");
    OptimizerOptions o_opts;
    double o_theta2 = 0.0;
    optimize->add_option("--theta2", o_theta2, "Separation")->required();
    optimize->add_option("--seed", o_opts.cfg.seed, "Optimizer seed")->capture_default_str();
    o_opts.add(optimize);

    // cache build
    auto* cache = app.add_subcommand("cache", "Measurement cache");
    cache->require_subcommand(1);
    auto* c_build = cache->add_subcommand("build", "Optimize on a separation grid");
    OptimizerOptions c_opts;
    std::vector<double> c_grid;
    bool c_cold = false;
    unsigned c_workers = 1;
    c_build->add_option("--seed", c_opts.cfg.seed, "Optimizer seed")->capture_default_str();
    c_opts.add(c_build);
    c_build->add_option("--grid", c_grid, "Separations (default built-in grid)");
    c_build->add_flag("--no-warm-start", c_cold, "Independent cold starts (parallel across grid points)");
    c_build->add_option("--workers", c_workers, "Worker threads")->capture_default_str();
    c_build->add_option("--out", out_path, "Output cache path");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run an adaptive estimation ensemble");
    EnsembleConfig s_cfg;
    std::string s_cache;
    long s_every = 10;
    GridOptions s_grid;
    simulate->add_option("--cache", s_cache, "Measurement cache JSON")->required();
    simulate->add_option("--seed", s_cfg.master_seed, "Master seed")->required();
    simulate->add_option("--theta1", s_cfg.theta_star.centroid, "True centroid")->capture_default_str();
    simulate->add_option("--theta2", s_cfg.theta_star.separation, "True separation")->capture_default_str();
    simulate->add_option("--initial-theta1", s_cfg.initial.centroid, "Initial estimate centroid")
        ->capture_default_str();
    simulate->add_option("--initial-theta2", s_cfg.initial.separation, "Initial estimate separation")
        ->capture_default_str();
    simulate->add_option("--steps", s_cfg.steps, "Steps per run")->capture_default_str();
    simulate->add_option("--runs", s_cfg.runs, "Runs")->capture_default_str();
    simulate->add_option("--checkpoint-every", s_every, "Checkpoint spacing")->capture_default_str();
    simulate->add_option("--checkpoints", s_cfg.checkpoints, "Explicit checkpoint steps");
    simulate->add_flag("--trajectory", s_cfg.keep_trajectory, "Record every estimate");
    simulate->add_option("--workers", s_cfg.workers, "Worker threads")->capture_default_str();
    simulate->add_option("--out", out_path, "Output JSON-lines path");
    s_grid.add(simulate);

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Post-process run records");
    analyze->require_subcommand(1);
    std::string a_runs, a_cache, a_points;
    std::vector<std::string> a_run_list;
    double a_band = 0.05;
    bool a_two_sided = false;
    long a_step = 0;
    BinSpec a_bins;
    auto* a_cov = analyze->add_subcommand("covariance", "Weighted trace of the sample covariance");
    a_cov->add_option("--runs", a_runs, "Run records")->required();
    a_cov->add_option("--cache", a_cache, "Measurement cache for the limit")->required();
    a_cov->add_option("--band", a_band, "Convergence band")->capture_default_str();
    a_cov->add_flag("--two-sided", a_two_sided, "Require |w - limit| <= band limit");
    a_cov->add_option("--out", out_path, "Output CSV path");
    auto* a_scaling = analyze->add_subcommand("scaling", "Fit T = c / theta2^e + t0");
    a_scaling->add_option("--points", a_points, "CSV of theta2,T pairs");
    a_scaling->add_option("--runs", a_run_list, "Run record files (convergence times computed)");
    a_scaling->add_option("--cache", a_cache, "Measurement cache (needed with --runs)");
    a_scaling->add_option("--band", a_band, "Convergence band")->capture_default_str();
    a_scaling->add_option("--out", out_path, "Output CSV path");
    auto* a_norm = analyze->add_subcommand("normality", "Mardia skewness/kurtosis at one checkpoint");
    a_norm->add_option("--runs", a_runs, "Run records")->required();
    a_norm->add_option("--step", a_step, "Checkpoint step (default last)");
    a_norm->add_option("--out", out_path, "Output JSON path");
    auto* a_heat = analyze->add_subcommand("heatmap", "2-D histogram of estimates at one checkpoint");
    a_heat->add_option("--runs", a_runs, "Run records")->required();
    a_heat->add_option("--step", a_step, "Checkpoint step (default last)");
    a_heat->add_option("--x-lo", a_bins.x_lo)->capture_default_str();
    a_heat->add_option("--x-hi", a_bins.x_hi)->capture_default_str();
    a_heat->add_option("--nx", a_bins.nx)->capture_default_str();
    a_heat->add_option("--y-lo", a_bins.y_lo)->capture_default_str();
    a_heat->add_option("--y-hi", a_bins.y_hi)->capture_default_str();
    a_heat->add_option("--ny", a_bins.ny)->capture_default_str();
    a_heat->add_option("--out", out_path, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const PsfModel model(sigma);

        auto checkpoint_index = [](const EnsembleRecord& ens, long step) -> std::size_t {
            const auto& cps = ens.runs.front().checkpoints;
            if (cps.empty()) throw Error(ErrorKind::InvalidArgument, "run records have no checkpoints");
            if (step == 0) return cps.size() - 1;
            for (std::size_t k = 0; k < cps.size(); ++k)
                if (cps[k] == step) return k;
            throw Error(ErrorKind::InvalidArgument, "step " + std::to_string(step) + " is not a checkpoint");
        };

        if (qfi->parsed()) {
            const Theta theta{q_theta1, q_theta2};
            theta.validate();
            const Mat2 k = q_numeric ? sld_and_qfi(density_rep(model, theta)).qfi : qfi_analytic(model, theta);
            Json cfg{{"command", "qfi"}, {"sigma", sigma}, {"theta", pair_json(theta)}, {"numeric", q_numeric}};
            Json res{{"K11", k(0, 0)}, {"K12", k(0, 1)}, {"K22", k(1, 1)}, {"config_hash", json_hash(cfg)},
                     {"cache_checksum", ""}, {"config", cfg}};
            out << res.dump(2) << "\n";
            return kExitOk;
        }

        if (fisher->parsed()) {
            if (f_optimal->parsed()) {
                const MeasurementCache mc = load_cache(f_cache);
                const std::string sum = cache_checksum(mc);
                Json cfg{{"command", "fisher optimal"}, {"cache_checksum", sum}};
                const std::string hash = json_hash(cfg);
                CsvWriter csv(hash, sum, {"theta2", "J11", "J12", "J22", "value", "K11", "K22"});
                const PsfModel cm(mc.sigma);
                for (const CacheEntry& e : mc.entries) {
                    const Theta t{0.0, e.theta2};
                    const FisherMatrix j = fisher_info(density_rep(cm, t), e.povm);
                    const Mat2 k = qfi_analytic(cm, t);
                    csv.row(e.theta2, j.j(0, 0), j.j(0, 1), j.j(1, 1), e.result.value, k(0, 0), k(1, 1));
                }
                write_output(resolve(out_path, output_dir, "fisher_optimal.csv"), csv.str(), hash);
                return kExitOk;
            }
            const std::vector<double> sweep = f_theta2.empty() ? linspace(f_lo, f_hi, f_points) : f_theta2;
            const bool spade = f_spade->parsed();
            Json cfg{{"command", spade ? "fisher spade" : "fisher direct"}, {"sigma", sigma}, {"theta2", sweep}};
            if (spade) {
                cfg["centroid_ref"] = f_ref;
                cfg["qmax"] = f_qmax;
            }
            const std::string hash = json_hash(cfg);
            CsvWriter csv(hash, "", {"theta2", "J11", "J12", "J22", "K11", "K22"});
            for (double s : sweep) {
                const Theta t{0.0, s};
                const FisherMatrix j =
                    spade ? hg_spade_fisher(model, t, f_ref, f_qmax) : direct_imaging_fisher(model, t);
                const Mat2 k = qfi_analytic(model, t);
                csv.row(s, j.j(0, 0), j.j(0, 1), j.j(1, 1), k(0, 0), k(1, 1));
            }
            write_output(resolve(out_path, output_dir, spade ? "fisher_spade.csv" : "fisher_direct.csv"), csv.str(),
                         hash);
            return kExitOk;
        }

        if (optimize->parsed()) {
            Json cfg{{"command", "optimize"}, {"sigma", sigma}, {"theta2", o_theta2}, {"optimizer", o_opts.to_json()}};
            const OptResult r = optimize_measurement(model, o_theta2, o_opts.cfg);
            const Theta t{0.0, o_theta2};
            const RankOnePovm povm = povm_from_angles(r.angles, t);
            const FisherMatrix j = fisher_info(density_rep(model, t), povm);
            Json res{{"value", r.value},
                     {"evals", r.evals},
                     {"converged", r.converged},
                     {"fisher", fisher_json(j.j)},
                     {"povm", to_json(povm, sigma)},
                     {"config_hash", json_hash(cfg)},
                     {"cache_checksum", ""},
                     {"config", cfg}};
            out << res.dump(2) << "\n";
            return kExitOk;
        }

        if (c_build->parsed()) {
            const std::vector<double> grid = c_grid.empty() ? default_cache_grid() : c_grid;
            Json cfg{{"command", "cache build"},
                     {"sigma", sigma},
                     {"grid", grid},
                     {"warm_start", !c_cold},
                     {"optimizer", c_opts.to_json()}};
            const std::string hash = json_hash(cfg);
            MeasurementCache mc = build_cache(model, grid, c_opts.cfg, CacheBuildOptions{!c_cold, c_workers});
            mc.config_hash = hash;
            const std::string path = resolve(out_path, output_dir, "cache.json");
            write_output(path, dump_cache(mc), hash, Json{{"workers", c_workers}});
            out << Json{{"path", path}, {"entries", mc.entries.size()}, {"cache_checksum", cache_checksum(mc)},
                        {"config_hash", hash}}
                       .dump()
                << "\n";
            return kExitOk;
        }

        if (simulate->parsed()) {
            const MeasurementCache mc = load_cache(s_cache);
            const std::string sum = cache_checksum(mc);
            if (mc.sigma != sigma) {
                throw Error(ErrorKind::InvalidArgument, "cache sigma " + fmt(mc.sigma) + " differs from --sigma " +
                                                            fmt(sigma));
            }
            s_cfg.sigma = sigma;
            if (s_cfg.steps < 1 || s_cfg.runs < 1) throw Error(ErrorKind::InvalidArgument, "steps and runs must be >= 1");
            if (s_cfg.checkpoints.empty()) s_cfg.checkpoints = regular_checkpoints(s_cfg.steps, s_every);
            GridSpec spec = s_grid.spec;
            if (!s_grid.no_refine) spec.refine_center = s_cfg.theta_star;
            const EstimationGrid grid = make_grid(spec);

            Json ens = to_json(s_cfg);
            Json cfg{{"command", "simulate"}, {"ensemble", ens}, {"grid", s_grid.to_json()}, {"cache_checksum", sum}};
            const std::string hash = json_hash(cfg);
            const EnsembleRecord record = run_ensemble(s_cfg, mc, grid);
            const std::string path = resolve(out_path, output_dir, "runs.jsonl");
            write_output(path, dump_runs(record, hash, sum, Json{{"grid", s_grid.to_json()}}), hash,
                         Json{{"workers", s_cfg.workers}});
            out << Json{{"path", path}, {"runs", record.runs.size()}, {"config_hash", hash}, {"cache_checksum", sum}}
                       .dump()
                << "\n";
            return kExitOk;
        }

        if (a_cov->parsed()) {
            const RunFile rf = load_runs(a_runs);
            const MeasurementCache mc = load_cache(a_cache);
            const std::string sum = cache_checksum(mc);
            const PsfModel m(rf.ensemble.config.sigma);
            const double limit = theoretical_limit(mc, rf.ensemble.config.theta_star.separation);
            const auto series = weighted_trace_series(rf.ensemble, m, limit);
            Json cfg{{"command", "analyze covariance"},
                     {"runs_hash", rf.header.at("config_hash")},
                     {"cache_checksum", sum},
                     {"band", a_band},
                     {"two_sided", a_two_sided}};
            const std::string hash = json_hash(cfg);
            CsvWriter csv(hash, sum, {"n", "w_n", "limit", "mean_theta1", "mean_theta2", "V11", "V12", "V22"});
            for (const auto& p : series) {
                csv.row(p.n, p.weighted_trace, p.limit, p.mean.centroid, p.mean.separation, p.cov(0, 0), p.cov(0, 1),
                        p.cov(1, 1));
            }
            const std::string path = resolve(out_path, output_dir, "covariance.csv");
            write_output(path, csv.str(), hash);
            Json summary{{"limit", limit}, {"config_hash", hash}, {"cache_checksum", sum}};
            try {
                summary["convergence_time"] = convergence_time(series, limit, a_band, a_two_sided);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NotReached) throw;
                summary["convergence_time"] = nullptr;
            }
            write_output(path + ".summary.json", summary.dump(2) + "\n", hash);
            out << summary.dump() << "\n";
            return kExitOk;
        }

        if (a_scaling->parsed()) {
            std::vector<ScalingPoint> pts;
            std::string sum;
            if (!a_points.empty()) {
                std::istringstream in(read_file(a_points));
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty() || line[0] == '#' || !(std::isdigit(line[0]) || line[0] == '.')) continue;
                    const auto comma = line.find(',');
                    if (comma == std::string::npos) throw Error(ErrorKind::Io, "bad scaling row: " + line);
                    pts.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
                }
            }
            Json run_hashes = Json::array();
            if (!a_run_list.empty()) {
                if (a_cache.empty()) throw Error(ErrorKind::InvalidArgument, "--runs requires --cache");
                const MeasurementCache mc = load_cache(a_cache);
                sum = cache_checksum(mc);
                for (const std::string& f : a_run_list) {
                    const RunFile rf = load_runs(f);
                    const double s = rf.ensemble.config.theta_star.separation;
                    const double limit = theoretical_limit(mc, s);
                    const auto series = weighted_trace_series(rf.ensemble, PsfModel(rf.ensemble.config.sigma), limit);
                    pts.push_back({s, static_cast<double>(convergence_time(series, limit, a_band))});
                    run_hashes.push_back(rf.header.at("config_hash"));
                }
            }
            Json pts_json = Json::array();
            for (const auto& p : pts) pts_json.push_back({p.theta2, p.time});
            Json cfg{{"command", "analyze scaling"}, {"points", pts_json}, {"runs", run_hashes}, {"band", a_band}};
            const std::string hash = json_hash(cfg);
            const ScalingFit fit = fit_scaling(pts);
            CsvWriter csv(hash, sum, {"theta2", "T", "fit"});
            for (const auto& p : pts) csv.row(p.theta2, p.time, fit(p.theta2));
            const std::string path = resolve(out_path, output_dir, "scaling.csv");
            write_output(path, csv.str(), hash);
            Json summary{{"c", fit.c}, {"e", fit.e}, {"t0", fit.t0}, {"residual", fit.residual},
                         {"config_hash", hash}, {"cache_checksum", sum}};
            write_output(path + ".summary.json", summary.dump(2) + "\n", hash);
            out << summary.dump() << "\n";
            return kExitOk;
        }

        if (a_norm->parsed()) {
            const RunFile rf = load_runs(a_runs);
            const std::size_t k = checkpoint_index(rf.ensemble, a_step);
            const auto sample = checkpoint_sample(rf.ensemble, k);
            const NormalityDiagnostic d = normality_diagnostic(sample);
            const std::string sum = rf.header.value("cache_checksum", std::string());
            Json cfg{{"command", "analyze normality"},
                     {"runs_hash", rf.header.at("config_hash")},
                     {"step", rf.ensemble.runs.front().checkpoints[k]}};
            const std::string hash = json_hash(cfg);
            Json res{{"method", d.method},
                     {"note", "Mardia multivariate skewness and kurtosis substitute for EDF-based tests"},
                     {"samples", d.samples},
                     {"step", rf.ensemble.runs.front().checkpoints[k]},
                     {"b1", d.b1},
                     {"b2", d.b2},
                     {"skewness_stat", d.skewness_stat},
                     {"skewness_p", d.skewness_p},
                     {"kurtosis_stat", d.kurtosis_stat},
                     {"kurtosis_p", d.kurtosis_p},
                     {"config_hash", hash},
                     {"cache_checksum", sum}};
            write_output(resolve(out_path, output_dir, "normality.json"), res.dump(2) + "\n", hash);
            out << res.dump() << "\n";
            return kExitOk;
        }

        if (a_heat->parsed()) {
            const RunFile rf = load_runs(a_runs);
            const std::size_t k = checkpoint_index(rf.ensemble, a_step);
            const Histogram2d h = histogram2d(checkpoint_sample(rf.ensemble, k), a_bins);
            const std::string sum = rf.header.value("cache_checksum", std::string());
            Json cfg{{"command", "analyze heatmap"},
                     {"runs_hash", rf.header.at("config_hash")},
                     {"step", rf.ensemble.runs.front().checkpoints[k]},
                     {"bins", {a_bins.x_lo, a_bins.x_hi, a_bins.nx, a_bins.y_lo, a_bins.y_hi, a_bins.ny}}};
            const std::string hash = json_hash(cfg);
            CsvWriter csv(hash, sum, {"bin_x", "bin_y", "count"});
            const double dx = (a_bins.x_hi - a_bins.x_lo) / a_bins.nx;
            const double dy = (a_bins.y_hi - a_bins.y_lo) / a_bins.ny;
            for (int iy = 0; iy < a_bins.ny; ++iy)
                for (int ix = 0; ix < a_bins.nx; ++ix)
                    csv.row(a_bins.x_lo + (ix + 0.5) * dx, a_bins.y_lo + (iy + 0.5) * dy, h.at(ix, iy));
            write_output(resolve(out_path, output_dir, "heatmap.csv"), csv.str(), hash);
            return kExitOk;
        }
    } catch (const Error& e) {
        err << e.what() << "\n";
        return e.numerical() ? kExitNumerical : kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        err << e.what() << "\n";
        return kExitUsage;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace aqse::cli
