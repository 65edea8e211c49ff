#pragma once

// JSON persistence for measurement caches and run records, plus the FNV-1a
// hashes that tie output files to the config and cache that produced them.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aqse/adaptive.hpp"
#include "aqse/error.hpp"
#include "aqse/optimizer.hpp"
#include "aqse/povm.hpp"

namespace aqse {

using Json = nlohmann::json;

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of the compact serialisation; object keys are sorted by nlohmann.
inline std::string json_hash(const Json& j) { return hex64(fnv1a64(j.dump())); }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Measurement cache

inline Json to_json(const Theta& t) { return Json{{"centroid", t.centroid}, {"separation", t.separation}}; }

inline Theta theta_from_json(const Json& j) {
    return {j.at("centroid").get<double>(), j.at("separation").get<double>()};
}

inline Json to_json(const RankOnePovm& povm, double sigma) {
    Json vectors = Json::array();
    for (Eigen::Index i = 0; i < povm.vectors.rows(); ++i) {
        vectors.push_back({povm.vectors(i, 0), povm.vectors(i, 1), povm.vectors(i, 2), povm.vectors(i, 3)});
    }
    return Json{{"anchor", to_json(povm.anchor)}, {"sigma", sigma},     {"n", povm.n()},
                {"vectors", vectors},            {"angles", povm.angles}};
}

inline RankOnePovm povm_from_json(const Json& j) {
    RankOnePovm p;
    p.anchor = theta_from_json(j.at("anchor"));
    const auto& rows = j.at("vectors");
    const int n = j.at("n").get<int>();
    if (static_cast<int>(rows.size()) != n) throw Error(ErrorKind::Io, "POVM vector count does not match n");
    p.vectors.resize(n, kFrameDim);
    for (int i = 0; i < n; ++i) {
        if (rows[i].size() != kFrameDim) throw Error(ErrorKind::Io, "POVM vectors must have 4 components");
        for (int k = 0; k < kFrameDim; ++k) p.vectors(i, k) = rows[i][k].get<double>();
    }
    p.angles = j.at("angles").get<std::vector<double>>();
    return p;
}

inline Json cache_to_json(const MeasurementCache& cache) {
    Json entries = Json::array();
    for (const CacheEntry& e : cache.entries) {
        entries.push_back({{"theta2", e.theta2},
                           {"value", e.result.value},
                           {"evals", e.result.evals},
                           {"converged", e.result.converged},
                           {"povm", to_json(e.povm, cache.sigma)}});
    }
    return Json{{"header",
                 {{"sigma", cache.sigma},
                  {"plane_ordering_version", cache.plane_ordering_version},
                  {"n_outcomes", cache.n_outcomes},
                  {"seed", cache.seed},
                  {"config_hash", cache.config_hash}}},
                {"entries", entries}};
}

inline MeasurementCache cache_from_json(const Json& j) {
    try {
        MeasurementCache cache;
        const Json& h = j.at("header");
        cache.sigma = h.at("sigma").get<double>();
        cache.plane_ordering_version = h.at("plane_ordering_version").get<int>();
        cache.n_outcomes = h.at("n_outcomes").get<int>();
        cache.seed = h.at("seed").get<std::uint64_t>();
        cache.config_hash = h.value("config_hash", std::string());
        if (cache.plane_ordering_version != kPlaneOrderingVersion) {
            throw Error(ErrorKind::Io, "cache uses plane ordering version " +
                                           std::to_string(cache.plane_ordering_version) + ", expected " +
                                           std::to_string(kPlaneOrderingVersion));
        }
        for (const Json& e : j.at("entries")) {
            CacheEntry entry;
            entry.theta2 = e.at("theta2").get<double>();
            entry.povm = povm_from_json(e.at("povm"));
            entry.result.value = e.at("value").get<double>();
            entry.result.evals = e.at("evals").get<long>();
            entry.result.converged = e.at("converged").get<bool>();
            entry.result.angles = GivensAngles(entry.povm.n(), entry.povm.angles);
            if (entry.povm.n() != cache.n_outcomes) throw Error(ErrorKind::Io, "entry outcome count mismatch");
            if (!cache.entries.empty() && !(entry.theta2 > cache.entries.back().theta2)) {
                throw Error(ErrorKind::Io, "cache entries must be sorted by separation");
            }
            cache.entries.push_back(std::move(entry));
        }
        if (cache.entries.empty()) throw Error(ErrorKind::Io, "cache has no entries");
        return cache;
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("malformed cache: ") + e.what());
    }
}

inline std::string dump_cache(const MeasurementCache& cache) { return cache_to_json(cache).dump(1) + "\n"; }

inline std::string cache_checksum(const MeasurementCache& cache) { return hex64(fnv1a64(dump_cache(cache))); }

inline void save_cache(const MeasurementCache& cache, const std::string& path) { write_file(path, dump_cache(cache)); }

inline MeasurementCache load_cache(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, path + ": " + e.what());
    }
    return cache_from_json(j);
}

// ---------------------------------------------------------------------------
// Run records (JSON lines: one header, then one line per run)

inline Json pair_json(const Theta& t) { return Json::array({t.centroid, t.separation}); }

inline Theta pair_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline Json to_json(const RunRecord& r) {
    Json estimates = Json::array();
    for (const Theta& t : r.estimates) estimates.push_back(pair_json(t));
    Json j{{"type", "run"},
           {"run_index", r.run_index},
           {"seed", r.seed},
           {"theta_star", pair_json(r.theta_star)},
           {"checkpoints", r.checkpoints},
           {"estimates", estimates},
           {"outcome_counts", r.outcome_counts}};
    if (!r.trajectory.empty()) {
        Json traj = Json::array();
        for (const Theta& t : r.trajectory) traj.push_back(pair_json(t));
        j["trajectory"] = traj;
    }
    return j;
}

inline RunRecord run_from_json(const Json& j) {
    RunRecord r;
    r.run_index = j.at("run_index").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.theta_star = pair_from_json(j.at("theta_star"));
    r.checkpoints = j.at("checkpoints").get<std::vector<long>>();
    for (const Json& e : j.at("estimates")) r.estimates.push_back(pair_from_json(e));
    r.outcome_counts = j.at("outcome_counts").get<std::vector<long>>();
    if (j.contains("trajectory")) {
        for (const Json& e : j.at("trajectory")) r.trajectory.push_back(pair_from_json(e));
    }
    return r;
}

inline Json to_json(const EnsembleConfig& c) {
    return Json{{"sigma", c.sigma},
                {"theta_star", pair_json(c.theta_star)},
                {"initial", pair_json(c.initial)},
                {"steps", c.steps},
                {"runs", c.runs},
                {"master_seed", c.master_seed},
                {"checkpoints", c.checkpoints},
                {"keep_trajectory", c.keep_trajectory}};
}

inline EnsembleConfig ensemble_config_from_json(const Json& j) {
    EnsembleConfig c;
    c.sigma = j.at("sigma").get<double>();
    c.theta_star = pair_from_json(j.at("theta_star"));
    c.initial = pair_from_json(j.at("initial"));
    c.steps = j.at("steps").get<long>();
    c.runs = j.at("runs").get<int>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.checkpoints = j.at("checkpoints").get<std::vector<long>>();
    c.keep_trajectory = j.at("keep_trajectory").get<bool>();
    return c;
}

struct RunFile {
    Json header;  // {"type":"header", "config", "config_hash", "cache_checksum", ...}
    EnsembleRecord ensemble;
};

/// `extra` is merged into the header (for the full effective config).
inline std::string dump_runs(const EnsembleRecord& ensemble, const std::string& config_hash,
                             const std::string& cache_sum, const Json& extra = Json::object()) {
    Json header = extra;
    header["type"] = "header";
    header["ensemble"] = to_json(ensemble.config);
    header["config_hash"] = config_hash;
    header["cache_checksum"] = cache_sum;
    std::string out = header.dump() + "\n";
    for (const RunRecord& r : ensemble.runs) out += to_json(r).dump() + "\n";
    return out;
}

inline RunFile parse_runs(const std::string& text) {
    RunFile file;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    std::vector<RunRecord> runs;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            Json j = Json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (have_header) throw Error(ErrorKind::Io, "duplicate header record");
                file.header = std::move(j);
                have_header = true;
            } else if (type == "run") {
                runs.push_back(run_from_json(j));
            } else {
                throw Error(ErrorKind::Io, "unknown record type " + type);
            }
        }
        if (!have_header) throw Error(ErrorKind::Io, "run file has no header record");
        file.ensemble = merge_runs(ensemble_config_from_json(file.header.at("ensemble")), std::move(runs));
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("malformed run record: ") + e.what());
    }
    return file;
}

inline RunFile load_runs(const std::string& path) { return parse_runs(read_file(path)); }

}  // namespace aqse
